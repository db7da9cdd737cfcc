// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.
//
// usage: axiseg_acceptance <path-to-axiseg-cli>

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "axiseg/attention.hpp"
#include "axiseg/data.hpp"
#include "axiseg/flops.hpp"
#include "axiseg/graph.hpp"
#include "axiseg/metrics.hpp"
#include "axiseg/ops.hpp"
#include "axiseg/segmodel.hpp"
#include "axiseg/training.hpp"

using namespace axiseg;
namespace fs = std::filesystem;

namespace {

std::string g_cli;

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor zero_like(const Tensor& t) { return Tensor::zeros(t.shape()); }

struct CliResult {
  int exit_code;
  std::string out;
};

CliResult run_cli(const fs::path& cwd, const std::string& args) {
  std::string cmd = "cd " + cwd.string() + " && " + g_cli + " " + args + " 2>&1";
  std::array<char, 4096> chunk{};
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  while (fgets(chunk.data(), chunk.size(), pipe) != nullptr) output += chunk.data();
  int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, output};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// --- criterion 1: gradcheck over every attention variant --------------------

bool gradcheck_suite(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kD = 4, kH = 4, kW = 6, kHeads = 2;
  GradcheckOptions opts;
  opts.max_coords_per_tensor = 1 << 20;  // every coordinate

  double worst = 0.0;
  std::string worst_tag;
  auto consider = [&](const char* tag, const GradcheckReport& rep) {
    if (rep.max_rel_err >= worst) {
      worst = rep.max_rel_err;
      worst_tag = std::string(tag) + "/" + rep.worst_param;
    }
  };

  Rng rng(90210);
  Tensor x = Tensor::uniform(Shape{kD, kH, kW}, -1, 1, rng);
  {
    Full2DAttentionLayer plain(kD, kHeads, kH, kW, false, rng);
    auto params = plain.parameters("l");
    params.push_back({"x", &x});
    consider("full2d", gradcheck([&](Graph&) { return sum(full_attention_2d(x, plain)); }, params, opts));
  }
  {
    Full2DAttentionLayer relpos(kD, kHeads, kH, kW, true, rng);
    auto params = relpos.parameters("l");
    params.push_back({"x", &x});
    consider("relpos2d",
             gradcheck([&](Graph&) { return sum(full_attention_2d_relpos(x, relpos)); }, params, opts));
  }
  for (bool gated : {false, true}) {
    AxialAttentionLayer height(Axis::Height, kD, kHeads, kH, gated, rng);
    AxialAttentionLayer width(Axis::Width, kD, kHeads, kW, gated, rng);
    for (AxialAttentionLayer* layer : {&height, &width}) {
      auto params = layer->parameters("l");
      params.push_back({"x", &x});
      const char* tag = gated ? "gated_axial" : "axial";
      consider(tag, gradcheck(
                        [&x, layer, gated](Graph&) {
                          return sum(gated ? gated_axial_attention(x, *layer)
                                           : axial_attention(x, *layer));
                        },
                        params, opts));
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max_rel_err %.3e (%s), %.1fs", worst, worst_tag.c_str(), seconds);
  detail = buf;
  return worst < 1e-4 && seconds < 60.0;
}

// --- criterion 2: reduction identities --------------------------------------

bool reduction_identities(std::string& detail) {
  Rng rng(1001);
  double worst = 0.0;
  for (int iter = 0; iter < 20; ++iter) {
    int heads = (iter % 2) ? 2 : 1;
    int d = heads * 2, h = 2 + iter % 4, w = 2 + (iter + 1) % 4;
    Tensor x = Tensor::uniform(Shape{d, h, w}, -1, 1, rng);

    // gated with unit gates vs ungated axial (gates initialize to 1)
    AxialAttentionLayer gated_layer(Axis::Height, d, heads, h, true, rng);
    worst = std::max(worst, max_abs_diff(gated_axial_attention(x, gated_layer).values(),
                                         axial_attention(x, gated_layer).values()));

    // relpos with all-zero tables vs the position-free computation
    Full2DAttentionLayer f(d, heads, h, w, true, rng);
    f.relpos.height.r_q = zero_like(f.relpos.height.r_q);
    f.relpos.height.r_k = zero_like(f.relpos.height.r_k);
    f.relpos.height.r_v = zero_like(f.relpos.height.r_v);
    f.relpos.width.r_q = zero_like(f.relpos.width.r_q);
    f.relpos.width.r_k = zero_like(f.relpos.width.r_k);
    f.relpos.width.r_v = zero_like(f.relpos.width.r_v);
    worst = std::max(worst, max_abs_diff(full_attention_2d_relpos(x, f).values(),
                                         full_attention_2d(x, f).values()));

    // axial with zeroed tables vs the plain axial core (no positional terms)
    AxialAttentionLayer ax(Axis::Width, d, heads, w, false, rng);
    ax.relpos.r_q = zero_like(ax.relpos.r_q);
    ax.relpos.r_k = zero_like(ax.relpos.r_k);
    ax.relpos.r_v = zero_like(ax.relpos.r_v);
    Tensor q = reshape(matmul(ax.w_q, reshape(x, Shape{d, h * w})), Shape{d, h, w});
    Tensor k = reshape(matmul(ax.w_k, reshape(x, Shape{d, h * w})), Shape{d, h, w});
    Tensor v = reshape(matmul(ax.w_v, reshape(x, Shape{d, h * w})), Shape{d, h, w});
    Tensor plain_core = axial_attention_core(q, k, v, Axis::Width, heads, nullptr, nullptr);
    Tensor plain = reshape(matmul(ax.w_out, reshape(plain_core, Shape{d, h * w})), Shape{d, h, w});
    worst = std::max(worst, max_abs_diff(axial_attention(x, ax).values(), plain.values()));
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max elementwise diff %.3e over 20 instances", worst);
  detail = buf;
  return worst < 1e-12;
}

// --- criterion 3: axial vs 2D relpos oracle on single-row inputs ------------

bool axial_2d_equivalence(std::string& detail) {
  Rng rng(3003);
  double worst = 0.0;
  for (int iter = 0; iter < 20; ++iter) {
    int w = 2 + iter % 7;  // W in {2..8}
    int heads = (iter % 2) ? 2 : 1;
    int d = heads * 2;
    AxialAttentionLayer ax(Axis::Width, d, heads, w, false, rng);
    Full2DAttentionLayer f2(d, heads, 1, w, true, rng);
    f2.w_q = ax.w_q;
    f2.w_k = ax.w_k;
    f2.w_v = ax.w_v;
    f2.w_out = ax.w_out;
    f2.relpos.width = ax.relpos;
    f2.relpos.height.r_q = zero_like(f2.relpos.height.r_q);
    f2.relpos.height.r_k = zero_like(f2.relpos.height.r_k);
    f2.relpos.height.r_v = zero_like(f2.relpos.height.r_v);
    Tensor x = Tensor::uniform(Shape{d, 1, w}, -1, 1, rng);
    worst = std::max(worst, max_abs_diff(axial_attention(x, ax).values(),
                                         full_attention_2d_relpos(x, f2).values()));
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max diff %.3e over 20 instances, W in 2..8", worst);
  detail = buf;
  return worst < 1e-12;
}

// --- criterion 4: receptive-field locality and two-pass globality -----------

bool receptive_field(std::string& detail) {
  Rng rng(4004);
  const int d = 4, h = 4, w = 5;
  AxialAttentionLayer lh(Axis::Height, d, 2, h, true, rng);
  AxialAttentionLayer lw(Axis::Width, d, 2, w, true, rng);
  Tensor x = Tensor::uniform(Shape{d, h, w}, -1, 1, rng);

  std::vector<std::function<Tensor(const Tensor&)>> single = {
      [&](const Tensor& t) { return gated_axial_attention(t, lh); }};
  int cross_column_pairs = 0;
  for (int si = 0; si < h; ++si)
    for (int sj = 0; sj < w; ++sj)
      for (int ti = 0; ti < h; ++ti)
        for (int tj = 0; tj < w; ++tj) {
          if (sj == tj) continue;
          ++cross_column_pairs;
          if (receptive_field_probe(single, x, {si, sj}, {ti, tj}) != 0.0) {
            detail = "nonzero cross-column Jacobian entry";
            return false;
          }
        }

  std::vector<std::function<Tensor(const Tensor&)>> pair = {
      [&](const Tensor& t) { return gated_axial_attention(t, lh); },
      [&](const Tensor& t) { return gated_axial_attention(t, lw); }};
  double min_mag = 1e300;
  for (int iter = 0; iter < 50; ++iter) {
    Coord src{rng.uniform_int(0, h - 1), rng.uniform_int(0, w - 1)};
    Coord snk{rng.uniform_int(0, h - 1), rng.uniform_int(0, w - 1)};
    double mag = receptive_field_probe(pair, x, src, snk);
    min_mag = std::min(min_mag, mag);
    if (mag <= 0.0) {
      detail = "zero gradient through a height+width pair";
      return false;
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%d cross-column probes exactly 0; min two-pass magnitude %.3e",
                cross_column_pairs, min_mag);
  detail = buf;
  return true;
}

// --- criterion 5: complexity counters ---------------------------------------

bool complexity_counters(std::string& detail) {
  const int d = 4, heads = 2;
  std::uint64_t prev_full = 0, prev_axial = 0;
  for (int n : {8, 16, 32, 64}) {
    for (BenchVariant v : {BenchVariant::Full2D, BenchVariant::AxialPair}) {
      StageFlops expected = count_flops(v, n, n, d, heads);
      StageFlops measured = instrumented_forward(v, n, n, d, heads, 11, nullptr);
      if (measured.attention != expected.attention || measured.projection != expected.projection) {
        detail = "measured counters diverge from closed form at N=" + std::to_string(n);
        return false;
      }
    }
    std::uint64_t full = count_flops(BenchVariant::Full2D, n, n, d, heads).attention;
    std::uint64_t axial = count_flops(BenchVariant::AxialPair, n, n, d, heads).attention;
    if (prev_full != 0 && (full != 16 * prev_full || axial != 8 * prev_axial)) {
      detail = "doubling ratio violated at N=" + std::to_string(n);
      return false;
    }
    prev_full = full;
    prev_axial = axial;
  }
  detail = "counters exact for N in {8,16,32,64}; doubling ratios 16x (full) and 8x (axial)";
  return true;
}

// --- criterion 6: CLI overfit run -------------------------------------------

bool overfit_run(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  fs::path dir = fs::temp_directory_path() / "axiseg_acceptance_overfit";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto gen = run_cli(dir, "gen-data --out data --count 8 --size 32 --seed 7");
  if (gen.exit_code != 0) {
    detail = "gen-data failed: " + gen.out;
    return false;
  }
  auto train1 = run_cli(dir, "train --data data --steps 500 --seed 7 --variant gated --out run1.json");
  if (train1.exit_code != 0) {
    detail = "train failed: " + train1.out;
    return false;
  }
  auto eval = run_cli(dir, "eval --data data --ckpt run1.json");
  if (eval.exit_code != 0) {
    detail = "eval failed: " + eval.out;
    return false;
  }
  // second line of the CSV: iou,precision,recall,f1,dice
  double dice = -1.0;
  {
    std::istringstream in(eval.out);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    std::istringstream r(row);
    double iou, p, rec, f1;
    char c;
    r >> iou >> c >> p >> c >> rec >> c >> f1 >> c >> dice;
  }
  auto train2 = run_cli(dir, "train --data data --steps 500 --seed 7 --variant gated --out run2.json");
  if (train2.exit_code != 0) {
    detail = "second train failed: " + train2.out;
    return false;
  }
  bool identical = slurp(dir / "run1.json") == slurp(dir / "run2.json");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[128];
  std::snprintf(buf, sizeof(buf), "training-set dice %.4f, rerun byte-identical: %s, %.0fs",
                dice, identical ? "yes" : "NO", seconds);
  detail = buf;
  return dice >= 0.95 && identical;
}

// --- criterion 7: metrics oracle --------------------------------------------

bool metrics_oracle(std::string& detail) {
  Rng rng(7007);
  for (int iter = 0; iter < 1000; ++iter) {
    std::vector<double> pv(64), tv(64);
    double density = rng.uniform(0.0, 1.0);
    for (size_t i = 0; i < 64; ++i) {
      pv[i] = rng.uniform() < density ? 1.0 : 0.0;
      tv[i] = rng.uniform() < density ? 1.0 : 0.0;
    }
    Tensor pred = Tensor::from_values(Shape{1, 8, 8}, std::move(pv));
    Tensor truth = Tensor::from_values(Shape{1, 8, 8}, std::move(tv));

    // independent pixel loop
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < 64; ++i) {
      bool p = pred.values()[i] == 1.0, t = truth.values()[i] == 1.0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
      tn += !p && !t;
    }
    ConfusionCounts c = confusion(pred, truth);
    if (c.tp != tp || c.fp != fp || c.fn != fn || c.tn != tn) {
      detail = "count mismatch at iteration " + std::to_string(iter);
      return false;
    }
    MetricsReport r = report(c);
    double o_iou, o_p, o_r, o_f1;
    if (tp + fp + fn == 0) {
      o_iou = o_p = o_r = o_f1 = 1.0;
    } else {
      o_iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      o_p = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      o_r = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      o_f1 = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    }
    if (std::abs(r.iou - o_iou) > 1e-12 || std::abs(r.precision - o_p) > 1e-12 ||
        std::abs(r.recall - o_r) > 1e-12 || std::abs(r.f1 - o_f1) > 1e-12 ||
        std::abs(r.f1 - r.dice) > 1e-12) {
      detail = "ratio mismatch at iteration " + std::to_string(iter);
      return false;
    }
  }
  detail = "1000 random 8x8 pairs: counts exact, ratios within 1e-12, F1 == Dice";
  return true;
}

// --- criterion 8: comparative sanity ----------------------------------------

bool comparative_sanity(std::string& detail) {
  SynthConfig dcfg;
  dcfg.count = 64;
  dcfg.size = 32;
  dcfg.seed = 424242;
  auto samples = generate(dcfg);
  auto [train_set, val_set] = split(std::move(samples), 0.75, 77);

  auto run_variant = [&](AttentionVariant v) {
    SegModelConfig mcfg;
    mcfg.variant = v;
    mcfg.input_size = 32;
    mcfg.seed = 7;
    SegModel model = SegModel::build(mcfg);
    TrainConfig tcfg;
    tcfg.steps = 500;
    tcfg.seed = 7;
    train(model, train_set, nullptr, tcfg);
    return dataset_report(val_set, model).f1;
  };

  double gated_f1 = run_variant(AttentionVariant::GatedAxial);
  double axial_f1 = run_variant(AttentionVariant::Axial);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "validation F1: gated %.4f vs axial %.4f (margin -0.02 allowed)",
                gated_f1, axial_f1);
  detail = buf;
  return gated_f1 >= axial_f1 - 0.02;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: axiseg_acceptance <path-to-axiseg-cli>\n");
    return 2;
  }
  g_cli = fs::absolute(argv[1]).string();  // criteria run the CLI from temp dirs

  struct Criterion {
    const char* name;
    bool (*fn)(std::string&);
  };
  const Criterion criteria[] = {
      {"gradcheck-suite", gradcheck_suite},
      {"reduction-identities", reduction_identities},
      {"axial-2d-oracle-equivalence", axial_2d_equivalence},
      {"receptive-field-property", receptive_field},
      {"complexity-counters", complexity_counters},
      {"overfit-run", overfit_run},
      {"metrics-oracle", metrics_oracle},
      {"comparative-sanity", comparative_sanity},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", c.name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
