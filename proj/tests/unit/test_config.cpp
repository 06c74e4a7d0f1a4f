#include <gtest/gtest.h>

#include "ensemblenet/config.hpp"
#include "ensemblenet/error.hpp"
#include "test_support.hpp"

using namespace enet;

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = RunConfig::desk();
  c.model.num_branches = 4;
  c.model.pooling = Pooling::kGapOnly;
  c.model.descriptor_tap = DescriptorTap::kPostRelu;
  c.train.decay_epochs = {3, 5, 7};
  c.train.loss_reduction = LossReduction::kSum;
  c.augment.erase_area_range = {0.1, 0.2};
  c.rerank = {15, 4, 0.5};
  c.data.synthetic.seed = 99;
  c.landscape.radius = 0.5;
  c.ranks = {1, 3};
  c.seed = 12345678901234ULL;
  const RunConfig back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.model.pooling, Pooling::kGapOnly);
  EXPECT_EQ(back.train.decay_epochs, c.train.decay_epochs);
  EXPECT_EQ(back.seed, c.seed);

  enet::testing::TempDir dir;
  c.save(dir / "sub" / "c.json");
  EXPECT_EQ(RunConfig::load(dir / "sub" / "c.json").to_json(), c.to_json());
  EXPECT_THROW(RunConfig::load(dir / "none.json"), IoError);
}

TEST(RunConfig, PartialJsonKeepsDeskDefaults) {
  const RunConfig c = RunConfig::from_json(R"({"model": {"num_branches": 2}, "train": {"epochs": 3}})");
  const RunConfig desk = RunConfig::desk();
  EXPECT_EQ(c.model.num_branches, 2);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.model.input_height, desk.model.input_height);
  EXPECT_EQ(c.train.batch_size, desk.train.batch_size);
  EXPECT_EQ(c.out, desk.out);
}

TEST(RunConfig, BadJson) {
  EXPECT_THROW(RunConfig::from_json("{not json"), ParseError);
  EXPECT_THROW(RunConfig::from_json("[1, 2]"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"train": {"epochs": "many"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"model": {"pooling": "median"}})"), Error);
}

TEST(RunConfig, Overrides) {
  RunConfig c = RunConfig::desk();
  c.apply_overrides({"model.num_branches=5", "train.decay_epochs=[2,4]", "out=runs/x",
                     "data.root=123", "rerank.lambda=0.25", "model.pooling=GAP_only"});
  EXPECT_EQ(c.model.num_branches, 5);
  EXPECT_EQ(c.train.decay_epochs, (std::vector<int>{2, 4}));
  EXPECT_EQ(c.out, "runs/x");
  EXPECT_EQ(c.data.root, "123");
  EXPECT_DOUBLE_EQ(c.rerank.lambda, 0.25);
  EXPECT_EQ(c.model.pooling, Pooling::kGapOnly);

  EXPECT_THROW(c.apply_overrides({"model.nope=1"}), ConfigError);
  EXPECT_THROW(c.apply_overrides({"model.num_branches.x=1"}), ConfigError);
  EXPECT_THROW(c.apply_overrides({"no_equals_sign"}), ConfigError);
  EXPECT_THROW(c.apply_overrides({"train.epochs=abc"}), ConfigError);
}

TEST(RunConfig, Validation) {
  RunConfig c = RunConfig::desk();
  EXPECT_NO_THROW(c.validate());
  c.augment.target_height = 65;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::desk();
  c.ranks = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::desk();
  c.landscape.grid = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::desk();
  c.train.epochs = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ModelConfigJson, RoundTrip) {
  ModelConfig m = ModelConfig::desk(7);
  m.last_stride = 2;
  m.pixel_std = {0.5f, 0.25f, 0.125f};
  const ModelConfig back = model_config_from_json(model_config_to_json(m));
  EXPECT_EQ(back.num_classes, 7);
  EXPECT_EQ(back.last_stride, 2);
  EXPECT_EQ(back.backbone, BackboneKind::kDeskScale);
  EXPECT_EQ(back.pixel_std, m.pixel_std);
}
