#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "axiseg/attention.hpp"
#include "axiseg/data.hpp"
#include "axiseg/flops.hpp"
#include "axiseg/metrics.hpp"
#include "axiseg/pgm.hpp"
#include "axiseg/segmodel.hpp"
#include "axiseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Run manifest written beside each subcommand's artifacts, on success and
/// failure alike, so any run can be reproduced from its flags.
struct Manifest {
  json doc;
  std::string path;

  Manifest(const std::string& subcommand, json flags, std::uint64_t seed, std::string out_path)
      : path(std::move(out_path)) {
    doc["subcommand"] = subcommand;
    doc["flags"] = std::move(flags);
    doc["seed"] = seed;
    doc["started_at"] = iso_timestamp();
    doc["artifacts"] = json::array();
  }

  void add_artifact(const std::string& p) { doc["artifacts"].push_back(p); }

  void finish(const std::string& status, const std::string& error = "") {
    doc["ended_at"] = iso_timestamp();
    doc["status"] = status;
    if (!error.empty()) doc["error"] = error;
    std::ofstream out(path, std::ios::trunc);
    if (out) out << doc.dump(2) << "\n";
  }
};

int run_guarded(Manifest& manifest, const std::function<void()>& body) {
  try {
    body();
    manifest.finish("ok");
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    manifest.finish("error", e.what());
    return 1;
  }
}

struct GenDataArgs {
  std::string out;
  int count = 8;
  int size = 32;
  std::uint64_t seed = 0;
  double noise = 0.03;
  int occluders = 2;
};

int run_gen_data(const GenDataArgs& a) {
  axiseg::SynthConfig cfg;
  cfg.count = a.count;
  cfg.size = a.size;
  cfg.noise_sigma = a.noise;
  cfg.occluder_count = a.occluders;
  cfg.seed = a.seed;
  // radius range scales with the image, staying under the size/4 invariant
  cfg.lesion_radius_min = 2.5;
  cfg.lesion_radius_max = std::max(3.0, a.size / 8.0);
  cfg.lesion_count_max = 2;

  json flags = {{"out", a.out},       {"count", a.count},        {"size", a.size},
                {"seed", a.seed},     {"noise", a.noise},        {"occluders", a.occluders},
                {"lesion_radius_min", cfg.lesion_radius_min},
                {"lesion_radius_max", cfg.lesion_radius_max},
                {"lesion_count_max", cfg.lesion_count_max}};
  fs::create_directories(a.out);
  Manifest manifest("gen-data", flags, a.seed, (fs::path(a.out) / "manifest.json").string());
  return run_guarded(manifest, [&] {
    auto samples = axiseg::generate(cfg);
    for (const axiseg::Sample& s : samples) {
      std::string img_path = (fs::path(a.out) / (s.id + ".pgm")).string();
      std::string mask_path = (fs::path(a.out) / (s.id + "_mask.pgm")).string();
      axiseg::write_pgm(s.image, img_path);
      axiseg::write_pgm(s.mask, mask_path);
      manifest.add_artifact(img_path);
      manifest.add_artifact(mask_path);
    }
    std::cout << "wrote " << 2 * samples.size() << " PGM files to " << a.out << "\n";
  });
}

struct TrainArgs {
  std::string data;
  std::string out;
  int steps = 500;
  std::uint64_t seed = 0;
  std::string variant = "gated";
  double lr = 2e-3;
  int batch = 4;
  double lambda = 0.5;
};

int run_train(const TrainArgs& a) {
  json flags = {{"data", a.data}, {"steps", a.steps},   {"seed", a.seed}, {"variant", a.variant},
                {"out", a.out},   {"lr", a.lr},         {"batch", a.batch}, {"lambda", a.lambda}};
  Manifest manifest("train", flags, a.seed, a.out + ".manifest.json");
  return run_guarded(manifest, [&] {
    auto variant = axiseg::attention_variant_from_string(a.variant);
    if (!variant) throw std::invalid_argument("unknown variant '" + a.variant + "' (full2d, axial, gated)");
    auto samples = axiseg::load_dataset(a.data);
    if (samples.empty()) throw std::runtime_error("train: no samples in " + a.data);
    for (const axiseg::Sample& s : samples) {
      if (!(s.image.shape() == samples[0].image.shape())) {
        throw std::runtime_error("train: sample " + s.id + " has shape " + s.image.shape().str() +
                                 " but " + samples[0].id + " has " +
                                 samples[0].image.shape().str());
      }
    }

    axiseg::SegModelConfig mcfg;  // desk defaults
    mcfg.variant = *variant;
    mcfg.seed = a.seed;
    mcfg.input_size = samples[0].image.shape().dim(1);
    axiseg::SegModel model = axiseg::SegModel::build(mcfg);

    axiseg::TrainConfig tcfg;
    tcfg.steps = a.steps;
    tcfg.batch_size = a.batch;
    tcfg.learning_rate = a.lr;
    tcfg.loss_mix = a.lambda;
    tcfg.seed = a.seed;

    axiseg::TrainLog log = axiseg::train(model, samples, nullptr, tcfg);
    model.save_checkpoint(a.out);
    manifest.add_artifact(a.out);
    std::string log_path = a.out + ".trainlog.csv";
    std::ofstream log_out(log_path, std::ios::trunc);
    log_out << log.to_csv();
    manifest.add_artifact(log_path);
    std::printf("trained %d steps: first loss %.6g, final loss %.6g\n", a.steps,
                log.steps.front().loss, log.steps.back().loss);
  });
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  double threshold = 0.5;
};

int run_eval(const EvalArgs& a) {
  json flags = {{"data", a.data}, {"ckpt", a.ckpt}, {"threshold", a.threshold}};
  Manifest manifest("eval", flags, 0, a.ckpt + ".eval.manifest.json");
  return run_guarded(manifest, [&] {
    axiseg::SegModel model = axiseg::SegModel::load_checkpoint(a.ckpt);
    auto samples = axiseg::load_dataset(a.data);
    if (samples.empty()) throw std::runtime_error("eval: no samples in " + a.data);
    int size = samples[0].image.shape().dim(1);
    if (size != model.config().input_size) {
      throw std::runtime_error("eval: checkpoint expects " +
                               std::to_string(model.config().input_size) + "x" +
                               std::to_string(model.config().input_size) + " images but " +
                               a.data + " holds " + std::to_string(size) + "x" +
                               std::to_string(size));
    }
    axiseg::MetricsReport rep = axiseg::dataset_report(samples, model, a.threshold);
    std::cout << "iou,precision,recall,f1,dice\n" << rep.csv_row() << "\n";
  });
}

struct BenchArgs {
  std::vector<int> sizes = {8, 16, 32, 64};
  std::vector<std::string> variants = {"full2d", "axial"};
  std::string out;
  int trials = 5;
  int d_model = 16;
  int heads = 2;
};

int run_bench(const BenchArgs& a) {
  json flags = {{"sizes", a.sizes}, {"variants", a.variants}, {"out", a.out},
                {"trials", a.trials}, {"d_model", a.d_model}, {"heads", a.heads}};
  Manifest manifest("bench", flags, 0, a.out + ".manifest.json");
  return run_guarded(manifest, [&] {
    std::vector<axiseg::BenchVariant> variants;
    for (const std::string& v : a.variants) {
      auto parsed = axiseg::bench_variant_from_string(v);
      if (!parsed) throw std::invalid_argument("unknown variant '" + v + "' (full2d, axial)");
      variants.push_back(*parsed);
    }
    auto records = axiseg::run_sweep(a.sizes, variants, a.trials, a.d_model, a.heads);
    std::string csv = axiseg::bench_csv(records);
    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw std::runtime_error("bench: cannot open " + a.out);
    out << csv;
    manifest.add_artifact(a.out);
    std::cout << csv;
  });
}

struct GradcheckArgs {
  std::string variant = "gated";
  double eps = 1e-5;
};

int run_gradcheck(const GradcheckArgs& a) {
  json flags = {{"variant", a.variant}, {"eps", a.eps}};
  Manifest manifest("gradcheck", flags, 0, "gradcheck.manifest.json");
  int exit_code = 1;
  int rc = run_guarded(manifest, [&] {
    using namespace axiseg;
    // random 4-channel 4x6 instance, all parameters and the input checked
    constexpr int kD = 4, kH = 4, kW = 6, kHeads = 2;
    Rng rng(2718);
    Tensor x = Tensor::uniform(Shape{kD, kH, kW}, -1, 1, rng);
    GradcheckOptions opts;
    opts.eps = a.eps;
    opts.max_coords_per_tensor = 1 << 20;  // every coordinate at this scale

    std::vector<GradcheckReport> reports;
    if (a.variant == "full2d" || a.variant == "relpos2d") {
      bool relpos = a.variant == "relpos2d";
      Full2DAttentionLayer layer(kD, kHeads, kH, kW, relpos, rng);
      auto params = layer.parameters("layer");
      params.push_back({"x", &x});
      reports.push_back(gradcheck(
          [&](Graph&) {
            return sum(relpos ? full_attention_2d_relpos(x, layer) : full_attention_2d(x, layer));
          },
          params, opts));
    } else if (a.variant == "axial" || a.variant == "gated") {
      bool gated = a.variant == "gated";
      AxialAttentionLayer height(Axis::Height, kD, kHeads, kH, gated, rng);
      AxialAttentionLayer width(Axis::Width, kD, kHeads, kW, gated, rng);
      for (AxialAttentionLayer* layer : {&height, &width}) {
        auto params = layer->parameters("layer");
        params.push_back({"x", &x});
        reports.push_back(gradcheck(
            [&x, layer, gated](Graph&) {
              return sum(gated ? gated_axial_attention(x, *layer) : axial_attention(x, *layer));
            },
            params, opts));
      }
    } else {
      throw std::invalid_argument("unknown variant '" + a.variant +
                                  "' (full2d, relpos2d, axial, gated)");
    }

    double worst = 0.0;
    std::string worst_param;
    for (const GradcheckReport& r : reports) {
      if (r.max_rel_err >= worst) {
        worst = r.max_rel_err;
        worst_param = r.worst_param;
      }
    }
    std::printf("gradcheck %s: max_rel_err %.3e at %s\n", a.variant.c_str(), worst,
                worst_param.c_str());
    exit_code = worst < 1e-4 ? 0 : 1;
  });
  return rc != 0 ? rc : exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"axiseg: gated axial-attention segmentation engine"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic lesion dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples")->required();
  gen_cmd->add_option("--size", gen.size, "Square image size");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
  gen_cmd->add_option("--noise", gen.noise, "Speckle noise sigma");
  gen_cmd->add_option("--occluders", gen.occluders, "Occluder band count");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a segmentation model");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps")->required();
  train_cmd->add_option("--seed", tr.seed, "Run seed")->required();
  train_cmd->add_option("--variant", tr.variant, "Attention variant")
      ->check(CLI::IsMember({"full2d", "axial", "gated"}));
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--lr", tr.lr, "Learning rate");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--lambda", tr.lambda, "BCE weight in the BCE/Dice mix");

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--threshold", ev.threshold, "Binarization threshold")
      ->check(CLI::Range(0.0, 1.0));

  BenchArgs be;
  CLI::App* bench_cmd = app.add_subcommand("bench", "FLOP-counted attention benchmark");
  bench_cmd->add_option("--sizes", be.sizes, "Square sizes to sweep")->delimiter(',');
  bench_cmd->add_option("--variants", be.variants, "Attention variants")
      ->delimiter(',')
      ->check(CLI::IsMember({"full2d", "axial"}));
  bench_cmd->add_option("--out", be.out, "CSV output path")->required();
  bench_cmd->add_option("--trials", be.trials, "Timing trials per cell")->check(CLI::Range(1, 1000));
  bench_cmd->add_option("--d-model", be.d_model, "Channel count");
  bench_cmd->add_option("--heads", be.heads, "Attention heads");

  GradcheckArgs gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference certification");
  gc_cmd->add_option("--variant", gc.variant, "Attention variant")
      ->check(CLI::IsMember({"full2d", "relpos2d", "axial", "gated"}));
  gc_cmd->add_option("--eps", gc.eps, "Finite-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2; --help exits 0
  }

  if (gen_cmd->parsed()) return run_gen_data(gen);
  if (train_cmd->parsed()) return run_train(tr);
  if (eval_cmd->parsed()) return run_eval(ev);
  if (bench_cmd->parsed()) return run_bench(be);
  if (gc_cmd->parsed()) return run_gradcheck(gc);
  return 2;
}
