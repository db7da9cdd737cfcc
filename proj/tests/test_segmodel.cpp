#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "axiseg/ops.hpp"
#include "axiseg/segmodel.hpp"
#include "axiseg/training.hpp"

using namespace axiseg;
namespace fs = std::filesystem;

namespace {

SegModelConfig desk_config() {
  SegModelConfig cfg;
  cfg.in_channels = 1;
  cfg.input_size = 32;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.num_blocks = 2;
  cfg.downsample_factor = 2;
  cfg.variant = AttentionVariant::GatedAxial;
  cfg.seed = 7;
  return cfg;
}

// Architecture arithmetic, written out independently of parameters().
long long expected_param_count(const SegModelConfig& c) {
  const long long d = c.d_model;
  auto conv = [](long long cin, long long cout, long long k) { return cout * cin * k * k + cout; };
  int halvings = 0;
  while ((1 << halvings) < c.downsample_factor) ++halvings;
  long long total = conv(c.in_channels, d, 3);
  total += (halvings == 0 ? 1 : halvings) * conv(d, d, 3);
  const long long att_extent = c.input_size / c.downsample_factor;
  const long long table = 3 * c.heads * (2 * att_extent - 1) * (d / c.heads);
  for (int b = 0; b < c.num_blocks; ++b) {
    total += 2 * d;  // ln1
    if (c.variant == AttentionVariant::Full2D) {
      total += 4 * d * d;
    } else {
      total += 4 * d * d + table + (c.variant == AttentionVariant::GatedAxial ? 3 : 0);  // attn_h
      total += 2 * d;                                                                    // ln2
      total += 4 * d * d + table + (c.variant == AttentionVariant::GatedAxial ? 3 : 0);  // attn_w
    }
    total += 2 * conv(d, d, 1);  // ffn
  }
  total += halvings * conv(d, d, 3);
  total += conv(d, 1, 1);
  return total;
}

fs::path temp_file(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("segmodel");

TEST_CASE("build is deterministic and validates the config") {
  SegModel a = SegModel::build(desk_config());
  SegModel b = SegModel::build(desk_config());
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    REQUIRE(pa[i].tensor->numel() == pb[i].tensor->numel());
    for (int j = 0; j < pa[i].tensor->numel(); ++j) {
      CHECK(pa[i].tensor->values()[static_cast<size_t>(j)] ==
            pb[i].tensor->values()[static_cast<size_t>(j)]);
    }
  }

  SegModelConfig bad = desk_config();
  bad.d_model = 8;
  bad.heads = 3;
  CHECK_THROWS_AS(SegModel::build(bad), std::invalid_argument);

  bad = desk_config();
  bad.input_size = 31;  // not divisible by downsample_factor
  CHECK_THROWS_AS(SegModel::build(bad), std::invalid_argument);

  bad = desk_config();
  bad.downsample_factor = 3;
  CHECK_THROWS_AS(SegModel::build(bad), std::invalid_argument);
}

TEST_CASE("parameter names are unique and the count matches the closed form") {
  SegModel m = SegModel::build(desk_config());
  auto params = m.parameters();
  std::set<std::string> names;
  long long total = 0;
  for (auto& p : params) {
    CHECK(names.insert(p.name).second);
    total += p.tensor->numel();
  }
  CHECK(total == expected_param_count(desk_config()));
  CHECK(total == 16093);  // frozen hand computation for the desk config

  SegModelConfig full = desk_config();
  full.variant = AttentionVariant::Full2D;
  SegModel mf = SegModel::build(full);
  long long tf = 0;
  for (auto& p : mf.parameters()) tf += p.tensor->numel();
  CHECK(tf == expected_param_count(full));
}

TEST_CASE("forward preserves shape and stays strictly inside (0,1)") {
  SegModel m = SegModel::build(desk_config());
  Rng rng(13);
  Tensor img = Tensor::uniform(Shape{1, 32, 32}, 0.0, 1.0, rng);
  Tensor out = m.forward(img);
  CHECK(out.shape() == img.shape());
  for (double v : out.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(m.forward(Tensor::zeros(Shape{1, 16, 16})), std::invalid_argument);
}

TEST_CASE("gated model with unit gates equals the axial model bit-for-bit") {
  SegModelConfig gated_cfg = desk_config();  // gates initialize to 1.0
  SegModelConfig axial_cfg = desk_config();
  axial_cfg.variant = AttentionVariant::Axial;
  SegModel gated = SegModel::build(gated_cfg);
  SegModel axial = SegModel::build(axial_cfg);
  Rng rng(17);
  Tensor img = Tensor::uniform(Shape{1, 32, 32}, 0.0, 1.0, rng);
  Tensor yg = gated.forward(img);
  Tensor ya = axial.forward(img);
  for (size_t i = 0; i < yg.values().size(); ++i) CHECK(yg.values()[i] == ya.values()[i]);
}

TEST_CASE("checkpoint round-trip is lossless") {
  SegModel m = SegModel::build(desk_config());
  auto path = temp_file("axiseg_ckpt_roundtrip.json");
  m.save_checkpoint(path.string());
  SegModel loaded = SegModel::load_checkpoint(path.string());
  CHECK(loaded.config() == m.config());

  auto pm = m.parameters(), pl = loaded.parameters();
  REQUIRE(pm.size() == pl.size());
  for (size_t i = 0; i < pm.size(); ++i) {
    for (int j = 0; j < pm[i].tensor->numel(); ++j) {
      CHECK(pm[i].tensor->values()[static_cast<size_t>(j)] ==
            pl[i].tensor->values()[static_cast<size_t>(j)]);
    }
  }
  Rng rng(23);
  Tensor img = Tensor::uniform(Shape{1, 32, 32}, 0.0, 1.0, rng);
  Tensor ya = m.forward(img), yb = loaded.forward(img);
  for (size_t i = 0; i < ya.values().size(); ++i) CHECK(ya.values()[i] == yb.values()[i]);
}

TEST_CASE("checkpoint loader rejects damaged files") {
  SegModel m = SegModel::build(desk_config());
  auto path = temp_file("axiseg_ckpt_damage.json");
  m.save_checkpoint(path.string());

  SUBCASE("truncated file") {
    std::string raw;
    {
      std::ifstream in(path, std::ios::binary);
      raw.assign(std::istreambuf_iterator<char>(in), {});
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << raw.substr(0, raw.size() / 2);
    out.close();
    CHECK_THROWS_WITH_AS(SegModel::load_checkpoint(path.string()), doctest::Contains("malformed"),
                         std::runtime_error);
  }

  SUBCASE("edited shape names the parameter") {
    nlohmann::json j;
    {
      std::ifstream in(path);
      in >> j;
    }
    j["params"][0]["shape"] = {2, 1, 3, 3};
    std::ofstream out(path, std::ios::trunc);
    out << j.dump();
    out.close();
    CHECK_THROWS_WITH_AS(SegModel::load_checkpoint(path.string()),
                         doctest::Contains("stem.conv0.weight"), std::runtime_error);
  }

  SUBCASE("unknown version is rejected") {
    nlohmann::json j;
    {
      std::ifstream in(path);
      in >> j;
    }
    j["version"] = 2;
    std::ofstream out(path, std::ios::trunc);
    out << j.dump();
    out.close();
    CHECK_THROWS_WITH_AS(SegModel::load_checkpoint(path.string()), doctest::Contains("version"),
                         std::runtime_error);
  }
}

TEST_CASE("tiny end-to-end model passes gradcheck") {
  SegModelConfig cfg;
  cfg.in_channels = 1;
  cfg.input_size = 8;
  cfg.d_model = 4;
  cfg.heads = 2;
  cfg.num_blocks = 1;
  cfg.downsample_factor = 2;
  cfg.variant = AttentionVariant::GatedAxial;
  cfg.seed = 11;
  SegModel m = SegModel::build(cfg);

  Rng rng(29);
  Tensor img = Tensor::uniform(Shape{1, 8, 8}, 0.05, 0.95, rng);
  std::vector<double> mv(64, 0.0);
  for (int i = 3; i <= 4; ++i)
    for (int j = 3; j <= 4; ++j) mv[static_cast<size_t>(i) * 8 + j] = 1.0;
  Tensor mask = Tensor::from_values(Shape{1, 8, 8}, std::move(mv));

  auto params = m.parameters();
  GradcheckReport rep = gradcheck(
      [&](Graph&) { return bce_dice_loss(m.forward(img), mask, 0.5); }, params, {1e-5, 12, 31});
  INFO("worst parameter: ", rep.worst_param, " err ", rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_SUITE_END();
