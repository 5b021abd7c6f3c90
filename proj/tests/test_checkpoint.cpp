#include <gtest/gtest.h>

#include <fstream>

#include "uacanet/checkpoint.hpp"

using namespace uacanet;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.width = 8;
  c.side = 32;
  c.backbone_widths = {8, 8, 16, 16};
  return c;
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / "uacanet_test_checkpoint";
  fs::create_directories(d);
  return d / name;
}

struct Trained {
  UACANet<float> model{tiny(), 1};
  AdamState<float> adam;
  Trained() {
    const auto batch = make_batch<float>(synth_blobs(2, 32, 1), 32);
    for (int it = 0; it < 2; ++it) train_step(model, batch, adam, PolySchedule{1e-3, 10}, it);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  Trained t;
  const auto path = scratch("roundtrip.uack");
  save_checkpoint(path, t.model, t.adam, 2);
  UACANet<float> other(tiny(), 77);
  AdamState<float> adam;
  EXPECT_EQ(load_checkpoint(path, other, &adam), 2u);
  EXPECT_EQ(adam.step, 2);
  const auto a = t.model.named_parameters(), b = other.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second.values(), b[i].second.values()) << a[i].first;
  EXPECT_EQ(adam.first_moment, t.adam.first_moment);
  EXPECT_EQ(adam.second_moment, t.adam.second_moment);
}

TEST(Checkpoint, DoubleModelRoundTrip) {
  UACANet<double> m(tiny(), 2), other(tiny(), 3);
  AdamState<double> adam;
  const auto path = scratch("double.uack");
  save_checkpoint(path, m, adam, 0);
  load_checkpoint(path, other);
  for (std::size_t i = 0; i < m.named_parameters().size(); ++i)
    EXPECT_EQ(m.named_parameters()[i].second.values(), other.named_parameters()[i].second.values());
}

TEST(Checkpoint, TruncatedFileLeavesModelUntouched) {
  Trained t;
  const auto path = scratch("truncated.uack");
  save_checkpoint(path, t.model, t.adam, 2);
  const auto bytes = slurp(path);
  UACANet<float> other(tiny(), 5);
  const auto before = other.named_parameters()[0].second.values();
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
    spit(path, bytes.substr(0, cut));
    EXPECT_THROW(load_checkpoint(path, other), CheckpointError) << cut;
    EXPECT_EQ(other.named_parameters()[0].second.values(), before);
  }
}

TEST(Checkpoint, BadMagicRejected) {
  const auto path = scratch("magic.uack");
  spit(path, "NOPE0000");
  try {
    read_checkpoint(path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Checkpoint, ConfigMismatchNamesField) {
  Trained t;
  const auto path = scratch("mismatch.uack");
  save_checkpoint(path, t.model, t.adam, 2);
  ModelConfig c = tiny();
  c.width = 16;
  UACANet<float> other(c, 1);
  try {
    load_checkpoint(path, other);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("model.width"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, UnknownTensorRejected) {
  Trained t;
  const auto path = scratch("unknown.uack");
  save_checkpoint(path, t.model, t.adam, 2);
  auto data = read_checkpoint(path);
  data.tensors.push_back({"bogus.weight", 0, {1}, {0.0}});
  UACANet<float> other(tiny(), 1);
  EXPECT_THROW(apply_checkpoint<float>(data, other, nullptr), CheckpointError);
  data.tensors.pop_back();
  data.tensors.erase(data.tensors.begin());
  EXPECT_THROW(apply_checkpoint<float>(data, other, nullptr), CheckpointError);
}

TEST(Checkpoint, TrailingBytesRejected) {
  Trained t;
  const auto path = scratch("trailing.uack");
  save_checkpoint(path, t.model, t.adam, 2);
  spit(path, slurp(path) + "x");
  EXPECT_THROW(read_checkpoint(path), CheckpointError);
}
