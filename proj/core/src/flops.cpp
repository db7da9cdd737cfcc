#include "axiseg/flops.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "axiseg/tensor.hpp"

namespace axiseg {

const char* to_string(BenchVariant v) {
  return v == BenchVariant::Full2D ? "full2d" : "axial";
}

std::optional<BenchVariant> bench_variant_from_string(const std::string& s) {
  if (s == "full2d") return BenchVariant::Full2D;
  if (s == "axial") return BenchVariant::AxialPair;
  return std::nullopt;
}

StageFlops count_flops(BenchVariant v, int h, int w, int d_model, int heads) {
  if (h < 1 || w < 1 || d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("count_flops: invalid shape");
  }
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  const std::uint64_t d = static_cast<std::uint64_t>(d_model);
  StageFlops f;
  if (v == BenchVariant::Full2D) {
    f.projection = 4 * hw * d * d;       // q, k, v, out
    f.attention = 2 * hw * hw * d;       // score + aggregate over all H*W keys
  } else {
    f.projection = 8 * hw * d * d;       // q, k, v, out per pass, two passes
    f.attention = 2 * hw * static_cast<std::uint64_t>(h + w) * d;
  }
  return f;
}

namespace {

// y[d x n] = w[d x d] * x[d x n], counting d multiply-adds per output element.
void project(const std::vector<double>& w, const std::vector<double>& x, std::vector<double>& y,
             int d, int n, FlopCounter& counter) {
  for (int co = 0; co < d; ++co) {
    for (int p = 0; p < n; ++p) {
      double acc = 0.0;
      for (int ci = 0; ci < d; ++ci) acc += w[static_cast<size_t>(co) * d + ci] * x[static_cast<size_t>(ci) * n + p];
      y[static_cast<size_t>(co) * n + p] = acc;
      counter.multiply_adds += static_cast<std::uint64_t>(d);
    }
  }
}

void softmax_inplace(std::vector<double>& row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double denom = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : row) v /= denom;
}

// Dense attention over all n = h*w positions, per head.
void attend_full(const std::vector<double>& q, const std::vector<double>& k,
                 const std::vector<double>& v, std::vector<double>& y, int d, int heads, int n,
                 FlopCounter& counter) {
  const int dh = d / heads;
  std::vector<double> row(static_cast<size_t>(n));
  for (int hd = 0; hd < heads; ++hd) {
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        double acc = 0.0;
        for (int t = 0; t < dh; ++t) {
          acc += q[static_cast<size_t>(hd * dh + t) * n + a] * k[static_cast<size_t>(hd * dh + t) * n + b];
        }
        row[static_cast<size_t>(b)] = acc;
        counter.multiply_adds += static_cast<std::uint64_t>(dh);
      }
      softmax_inplace(row);
      for (int t = 0; t < dh; ++t) {
        double acc = 0.0;
        for (int b = 0; b < n; ++b) acc += row[static_cast<size_t>(b)] * v[static_cast<size_t>(hd * dh + t) * n + b];
        y[static_cast<size_t>(hd * dh + t) * n + a] = acc;
        counter.multiply_adds += static_cast<std::uint64_t>(n);
      }
    }
  }
}

// One axial pass: attention over the `len` positions sharing a row or column.
void attend_axial(const std::vector<double>& q, const std::vector<double>& k,
                  const std::vector<double>& v, std::vector<double>& y, int d, int heads, int h,
                  int w, bool along_height, FlopCounter& counter) {
  const int dh = d / heads;
  const int len = along_height ? h : w;
  const int fixed = along_height ? w : h;
  const int n = h * w;
  auto sp = [along_height, w](int along, int f) {
    return along_height ? along * w + f : f * w + along;
  };
  std::vector<double> row(static_cast<size_t>(len));
  for (int hd = 0; hd < heads; ++hd) {
    for (int f = 0; f < fixed; ++f) {
      for (int a = 0; a < len; ++a) {
        for (int b = 0; b < len; ++b) {
          double acc = 0.0;
          for (int t = 0; t < dh; ++t) {
            acc += q[static_cast<size_t>(hd * dh + t) * n + sp(a, f)] *
                   k[static_cast<size_t>(hd * dh + t) * n + sp(b, f)];
          }
          row[static_cast<size_t>(b)] = acc;
          counter.multiply_adds += static_cast<std::uint64_t>(dh);
        }
        softmax_inplace(row);
        for (int t = 0; t < dh; ++t) {
          double acc = 0.0;
          for (int b = 0; b < len; ++b) {
            acc += row[static_cast<size_t>(b)] * v[static_cast<size_t>(hd * dh + t) * n + sp(b, f)];
          }
          y[static_cast<size_t>(hd * dh + t) * n + sp(a, f)] = acc;
          counter.multiply_adds += static_cast<std::uint64_t>(len);
        }
      }
    }
  }
}

std::vector<double> random_buffer(size_t n, double bound, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace

StageFlops instrumented_forward(BenchVariant variant, int h, int w, int d_model, int heads,
                                std::uint64_t seed, double* checksum) {
  if (h < 1 || w < 1 || d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("instrumented_forward: invalid shape");
  }
  const int n = h * w;
  Rng rng(seed);
  const double wb = 1.0 / std::sqrt(static_cast<double>(d_model));
  auto x = random_buffer(static_cast<size_t>(d_model) * n, 1.0, rng);

  FlopCounter proj, attn;
  std::vector<double> q(x.size()), k(x.size()), v(x.size()), core(x.size()), out(x.size());

  auto one_pass = [&](const std::vector<double>& input, bool along_height, bool dense) {
    auto wq = random_buffer(static_cast<size_t>(d_model) * d_model, wb, rng);
    auto wk = random_buffer(static_cast<size_t>(d_model) * d_model, wb, rng);
    auto wv = random_buffer(static_cast<size_t>(d_model) * d_model, wb, rng);
    auto wo = random_buffer(static_cast<size_t>(d_model) * d_model, wb, rng);
    project(wq, input, q, d_model, n, proj);
    project(wk, input, k, d_model, n, proj);
    project(wv, input, v, d_model, n, proj);
    if (dense) {
      attend_full(q, k, v, core, d_model, heads, n, attn);
    } else {
      attend_axial(q, k, v, core, d_model, heads, h, w, along_height, attn);
    }
    project(wo, core, out, d_model, n, proj);
    return out;
  };

  std::vector<double> result;
  if (variant == BenchVariant::Full2D) {
    result = one_pass(x, false, true);
  } else {
    std::vector<double> mid = one_pass(x, true, false);
    result = one_pass(mid, false, false);
  }
  if (checksum != nullptr) {
    double s = 0.0;
    for (double val : result) s += val;
    *checksum = s;
  }
  return {proj.multiply_adds, attn.multiply_adds};
}

std::vector<BenchRecord> run_sweep(std::span<const int> sizes,
                                   std::span<const BenchVariant> variants, int trials, int d_model,
                                   int heads, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("run_sweep: trials must be >= 1");
  for (int s : sizes) {
    if (s < 4) throw std::invalid_argument("run_sweep: sizes must be >= 4");
  }
  std::vector<BenchRecord> records;
  for (int size : sizes) {
    for (BenchVariant variant : variants) {
      StageFlops expected = count_flops(variant, size, size, d_model, heads);
      double checksum = 0.0;
      StageFlops measured = instrumented_forward(variant, size, size, d_model, heads, seed, &checksum);
      if (measured.projection != expected.projection || measured.attention != expected.attention) {
        throw std::logic_error("run_sweep: measured counters diverge from the closed form for " +
                               std::string(to_string(variant)) + " at size " +
                               std::to_string(size));
      }
      std::vector<std::uint64_t> times;
      times.reserve(static_cast<size_t>(trials));
      for (int t = 0; t < trials; ++t) {
        auto start = std::chrono::steady_clock::now();
        instrumented_forward(variant, size, size, d_model, heads, seed + static_cast<std::uint64_t>(t), &checksum);
        auto stop = std::chrono::steady_clock::now();
        times.push_back(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count()));
      }
      std::sort(times.begin(), times.end());
      std::uint64_t median = (times.size() % 2 == 1)
                                 ? times[times.size() / 2]
                                 : (times[times.size() / 2 - 1] + times[times.size() / 2]) / 2;
      records.push_back({variant, size, size, d_model, heads, measured.total(), median});
    }
  }
  return records;
}

std::string bench_csv(std::span<const BenchRecord> records) {
  std::string out = "variant,H,W,d_model,heads,flops,wall_ns_median\n";
  for (const BenchRecord& r : records) {
    out += std::string(to_string(r.variant)) + "," + std::to_string(r.h) + "," +
           std::to_string(r.w) + "," + std::to_string(r.d_model) + "," + std::to_string(r.heads) +
           "," + std::to_string(r.flops) + "," + std::to_string(r.wall_ns_median) + "\n";
  }
  return out;
}

}  // namespace axiseg
