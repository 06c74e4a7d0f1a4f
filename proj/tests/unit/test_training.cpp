#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ensemblenet/checkpoint.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/model.hpp"
#include "ensemblenet/training.hpp"
#include "test_support.hpp"

using namespace enet;

namespace {

struct Toy {
  Dataset data = make_synthetic_dataset(6, 4, 2, {64, 32}, 3);
  ModelConfig model = [] {
    ModelConfig m = ModelConfig::desk(6);
    m.num_branches = 2;
    return m;
  }();
  TrainConfig train = [] {
    TrainConfig t = TrainConfig::desk();
    t.epochs = 3;
    t.batch_size = 4;
    t.decay_epochs = {2};
    t.seed = 5;
    return t;
  }();
  TrainOptions options = [] {
    TrainOptions o;
    o.augment.target_height = 64;
    o.augment.target_width = 32;
    o.augment.pad_pixels = 4;
    return o;
  }();
};

Parameter scalar_param(const std::string& name, double v) {
  Parameter p;
  p.name = name;
  p.value = Tensor({1, 1, 1, 1}, v);
  return p;
}

}  // namespace

TEST(LrSchedule, DefaultSchedule) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_schedule(0, cfg).pretrained, 0.01);
  EXPECT_NEAR(lr_schedule(0, cfg).new_params, 0.1, 1e-15);
  EXPECT_NEAR(lr_schedule(39, cfg).pretrained, 0.01, 1e-15);
  EXPECT_NEAR(lr_schedule(40, cfg).pretrained, 0.001, 1e-15);
  EXPECT_NEAR(lr_schedule(60, cfg).pretrained, 0.0001, 1e-15);
  EXPECT_NEAR(lr_schedule(79, cfg).new_params, 0.001, 1e-15);
  EXPECT_THROW(lr_schedule(80, cfg), ValidationError);
  EXPECT_THROW(lr_schedule(-1, cfg), ValidationError);
}

TEST(LrSchedule, NonIncreasingWithDecayCountPlusOneValues) {
  for (const std::vector<int>& decays : {std::vector<int>{}, {5}, {3, 7}, {2, 4, 8}}) {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.decay_epochs = decays;
    std::set<double> distinct;
    double prev = 1e9;
    for (int e = 0; e < cfg.epochs; ++e) {
      const double lr = lr_schedule(e, cfg).pretrained;
      EXPECT_LE(lr, prev);
      prev = lr;
      distinct.insert(lr);
    }
    EXPECT_EQ(distinct.size(), decays.size() + 1);
  }
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.decay_epochs = {60, 40};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.decay_epochs = {40, 80};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.base_lr = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(TotalLoss, SumAndLength) {
  EXPECT_DOUBLE_EQ(total_loss(std::vector<double>{0.5}, 1), 0.5);
  EXPECT_DOUBLE_EQ(total_loss(std::vector<double>(6, 1.0), 6), 6.0);
  std::vector<double> v{0.25, 1.5, 3.0, 0.125};
  const double t = total_loss(v, 4);
  std::reverse(v.begin(), v.end());
  EXPECT_EQ(total_loss(v, 4), t);
  EXPECT_THROW(total_loss(v, 3), ValidationError);
}

TEST(Sgd, PlainStepIsMinusLrTimesGradient) {
  // f(a, b) = (a - 3)^2 + 2 b^2
  Parameter a = scalar_param("a", 0.7);
  Parameter b = scalar_param("b", -1.3);
  b.group = ParamGroup::kNew;
  Sgd opt({&a, &b}, 0.0, 0.0);
  a.ensure_grad()[0] = 2.0 * (a.value[0] - 3.0);
  b.ensure_grad()[0] = 4.0 * b.value[0];
  const double a0 = a.value[0];
  const double b0 = b.value[0];
  opt.step({0.05, 0.5});
  EXPECT_NEAR(a.value[0] - a0, -0.05 * 2.0 * (a0 - 3.0), 1e-10);
  EXPECT_NEAR(b.value[0] - b0, -0.5 * 4.0 * b0, 1e-10);
}

TEST(Sgd, MomentumAndWeightDecay) {
  Parameter w = scalar_param("w", 2.0);
  Parameter s = scalar_param("bn.weight", 2.0);
  s.role = ParamRole::kNormScale;
  Sgd opt({&w, &s}, 0.9, 0.1);
  EXPECT_TRUE(opt.decays(w));
  EXPECT_FALSE(opt.decays(s));
  double v = 0.0;
  double x = 2.0;
  double vs = 0.0;
  double xs = 2.0;
  for (int step = 0; step < 3; ++step) {
    w.ensure_grad()[0] = 1.0;
    s.ensure_grad()[0] = 1.0;
    opt.step({0.1, 1.0});
    v = 0.9 * v + (1.0 + 0.1 * x);
    x -= 0.1 * v;
    vs = 0.9 * vs + 1.0;
    xs -= 0.1 * vs;
    EXPECT_NEAR(w.value[0], x, 1e-12);
    EXPECT_NEAR(s.value[0], xs, 1e-12);
  }
}

TEST(Sgd, WeightDecayOnlyOnWeights) {
  Model m(ModelConfig::desk(5));
  init_model(m, 1);
  Sgd opt(m.parameters(), 0.9, 5e-4);
  int weights = 0;
  for (Parameter* p : m.parameters()) {
    const bool want = p->role == ParamRole::kWeight;
    EXPECT_EQ(opt.decays(*p), want) << p->name;
    weights += want;
    if (p->role == ParamRole::kBias || p->role == ParamRole::kNormScale ||
        p->role == ParamRole::kNormShift) {
      EXPECT_TRUE(p->name.ends_with(".bias") || p->name.ends_with(".weight")) << p->name;
    }
  }
  EXPECT_GT(weights, 0);
}

TEST(Sgd, LearningRateGroups) {
  Model m(ModelConfig::desk(5));
  for (Parameter* p : m.trunk_parameters()) EXPECT_EQ(p->group, ParamGroup::kBackbone) << p->name;
  for (Parameter* p : m.branch_parameters(0)) EXPECT_EQ(p->group, ParamGroup::kBackbone) << p->name;
  for (int j = 0; j < m.num_parts(); ++j) {
    for (Parameter* p : m.head_parameters(j)) EXPECT_EQ(p->group, ParamGroup::kNew) << p->name;
  }
}

TEST(TrainLogTest, CsvRoundTrip) {
  TrainLog log;
  log.records.push_back({1, 0.01, 12.345678901234567, {4.1, 4.2, 4.045678901234567}, 1.25});
  log.records.push_back({2, 0.001, 1.0 / 3.0, {0.1, 0.2, 1.0 / 30.0}, 0.5});
  std::stringstream ss;
  log.write_csv(ss);
  const TrainLog back = TrainLog::read_csv(ss);
  ASSERT_EQ(back.records.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.records[i].epoch, log.records[i].epoch);
    EXPECT_EQ(back.records[i].lr, log.records[i].lr);
    EXPECT_EQ(back.records[i].mean_total_loss, log.records[i].mean_total_loss);
    EXPECT_EQ(back.records[i].objective_losses, log.records[i].objective_losses);
    EXPECT_EQ(back.records[i].wall_seconds, log.records[i].wall_seconds);
  }
  std::stringstream no_time;
  log.write_csv(no_time, false);
  EXPECT_EQ(no_time.str().find("wall_seconds"), std::string::npos);
  EXPECT_EQ(TrainLog::read_csv(no_time).records[1].mean_total_loss, 1.0 / 3.0);
}

TEST(Train, DeterministicLogsCheckpointsAndBranchDivergence) {
  Toy toy;
  enet::testing::TempDir dir;
  toy.options.checkpoint_dir = dir.path();

  Model a(toy.model);
  init_model(a, 2);
  ASSERT_TRUE(a.branch_parameters(0)[0]->value == a.branch_parameters(1)[0]->value);
  const TrainResult ra = train(a, toy.data, toy.train, toy.options);

  Model b(toy.model);
  init_model(b, 2);
  toy.options.checkpoint_dir.clear();
  const TrainResult rb = train(b, toy.data, toy.train, toy.options);

  ASSERT_EQ(ra.log.records.size(), 3u);
  std::stringstream sa;
  std::stringstream sb;
  ra.log.write_csv(sa, false);
  rb.log.write_csv(sb, false);
  EXPECT_EQ(sa.str(), sb.str());
  for (const auto& r : ra.log.records) {
    EXPECT_EQ(r.objective_losses.size(), 3u);
    EXPECT_TRUE(std::isfinite(r.mean_total_loss));
  }
  EXPECT_DOUBLE_EQ(ra.log.records[0].lr, 0.01);
  EXPECT_DOUBLE_EQ(ra.log.records[2].lr, 0.001);

  ASSERT_EQ(ra.checkpoints.size(), 2u);
  EXPECT_EQ(ra.checkpoints[0].filename(), "checkpoint_epoch_2.ensc");
  EXPECT_EQ(ra.checkpoints[1].filename(), "checkpoint_final.ensc");
  Model restored = load_model(ra.checkpoints[1]);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_TRUE(restored.parameters()[i]->value == a.parameters()[i]->value);
  }

  bool differs = false;
  const auto p0 = a.branch_parameters(0);
  const auto p1 = a.branch_parameters(1);
  for (std::size_t i = 0; i < p0.size(); ++i) differs |= !(p0[i]->value == p1[i]->value);
  EXPECT_TRUE(differs);
}

TEST(Train, EpochCountMatchesConfig) {
  Toy toy;
  toy.train.epochs = 5;
  toy.train.decay_epochs = {};
  toy.data.train.resize(6);
  toy.data.num_train_classes = 6;
  for (std::size_t i = 0; i < 6; ++i) toy.data.train[i].label = static_cast<int>(i);
  Model m(toy.model);
  init_model(m, 1);
  int callbacks = 0;
  toy.options.on_epoch = [&](const EpochRecord& r) { EXPECT_EQ(r.epoch, ++callbacks); };
  EXPECT_EQ(train(m, toy.data, toy.train, toy.options).log.records.size(), 5u);
  EXPECT_EQ(callbacks, 5);
}

TEST(Train, ClassCountMismatchIsConfigError) {
  Toy toy;
  toy.model.num_classes = 7;
  Model m(toy.model);
  init_model(m, 1);
  EXPECT_THROW(train(m, toy.data, toy.train, toy.options), ConfigError);
}

TEST(Train, NonFiniteLossNamesObjective) {
  Toy toy;
  Model m(toy.model);
  init_model(m, 1);
  m.classifier(2).bias().value[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(m, toy.data, toy.train, toy.options);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("objective 2"), std::string::npos) << e.what();
  }
}
