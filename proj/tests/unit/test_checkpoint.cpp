#include <gtest/gtest.h>

#include <fstream>

#include "ensemblenet/checkpoint.hpp"
#include "ensemblenet/config.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/model.hpp"
#include "test_support.hpp"

using namespace enet;

namespace {

ModelConfig tiny() {
  ModelConfig cfg = ModelConfig::desk(5);
  cfg.num_branches = 2;
  cfg.reduce_dim = 16;
  return cfg;
}

}  // namespace

TEST(Checkpoint, SaveLoadRestoresEverything) {
  enet::testing::TempDir dir;
  Model a(tiny());
  init_model(a, 1);
  a.buffers().front()->value.fill(0.25);
  make_checkpoint(a).save(dir / "a.ensc");

  Model b = load_model(dir / "a.ensc");
  EXPECT_EQ(b.config().num_branches, 2);
  EXPECT_EQ(b.config().reduce_dim, 16);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
  }
  EXPECT_EQ(b.buffers().front()->value, a.buffers().front()->value);
}

TEST(Checkpoint, EntriesAndMetadata) {
  Model m(tiny());
  init_model(m, 2);
  const Checkpoint c = make_checkpoint(m);
  EXPECT_EQ(c.entries.size(), m.parameters().size() + m.buffers().size());
  const CheckpointEntry* e = c.find("head0.reduce.conv.weight");
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->kind, EntryKind::kParameter);
  EXPECT_EQ(e->dims.front(), 16u);
  EXPECT_EQ(c.find("nonexistent"), nullptr);
  EXPECT_EQ(model_config_from_json(c.metadata).num_classes, 5);
}

TEST(Checkpoint, MismatchListsEveryProblem) {
  Model m(tiny());
  Checkpoint c = make_checkpoint(m);
  c.entries.erase(c.entries.begin());
  c.entries.back().dims.push_back(2);
  c.entries.push_back({"extra.weight", EntryKind::kParameter, {1}, {0.0}});
  try {
    apply_checkpoint(m, c);
    FAIL();
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing from checkpoint"), std::string::npos);
    EXPECT_NE(msg.find("shape mismatch"), std::string::npos);
    EXPECT_NE(msg.find("extra.weight (not in model)"), std::string::npos);
  }
}

TEST(Checkpoint, DifferentBranchCountDoesNotLoad) {
  Model two(tiny());
  ModelConfig cfg3 = tiny();
  cfg3.num_branches = 3;
  Model three(cfg3);
  EXPECT_THROW(apply_checkpoint(three, make_checkpoint(two)), LoadError);
}

TEST(Checkpoint, CorruptFiles) {
  enet::testing::TempDir dir;
  Model m(tiny());
  make_checkpoint(m).save(dir / "m.ensc");
  std::ifstream is(dir / "m.ensc", std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(is), {}};

  auto write = [&](const std::string& name, const std::vector<char>& b) {
    std::ofstream os(dir / name, std::ios::binary);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
    return dir / name;
  };
  auto magic = bytes;
  magic[1] = 'Z';
  EXPECT_THROW(Checkpoint::load(write("magic.ensc", magic)), FormatError);
  auto cut = bytes;
  cut.resize(bytes.size() / 2);
  EXPECT_THROW(Checkpoint::load(write("cut.ensc", cut)), FormatError);
  EXPECT_THROW(Checkpoint::load(dir / "absent.ensc"), IoError);

  Checkpoint bare = make_checkpoint(m);
  bare.metadata.clear();
  bare.save(dir / "bare.ensc");
  EXPECT_THROW(load_model(dir / "bare.ensc"), LoadError);
}
