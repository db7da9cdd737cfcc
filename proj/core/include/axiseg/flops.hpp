#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace axiseg {

enum class BenchVariant { Full2D, AxialPair };

const char* to_string(BenchVariant v);
std::optional<BenchVariant> bench_variant_from_string(const std::string& s);  // "full2d" | "axial"

/// Multiply-add counter incremented by the instrumented kernels. Counts are
/// deterministic for fixed shapes and independent of data values.
struct FlopCounter {
  std::uint64_t multiply_adds = 0;
};

struct StageFlops {
  std::uint64_t projection = 0;  // pointwise q/k/v/out projections, per applied projection
  std::uint64_t attention = 0;   // score + value-aggregation stages
  std::uint64_t total() const { return projection + attention; }
};

/// Closed-form multiply-add counts. Attention stage: full 2D costs
/// 2*(H*W)^2*d_model; the height+width axial pair costs 2*H*W*(H+W)*d_model.
/// Projections cost H*W*d_model^2 per applied projection under the same
/// counting rule for both variants (4 for full 2D, 8 for the axial pair).
StageFlops count_flops(BenchVariant v, int h, int w, int d_model, int heads);

/// Forward pass on seeded random data with instrumented kernels; returns the
/// measured counters. `checksum` (if non-null) receives the output sum so the
/// computation is observable.
StageFlops instrumented_forward(BenchVariant v, int h, int w, int d_model, int heads,
                                std::uint64_t seed, double* checksum);

struct BenchRecord {
  BenchVariant variant;
  int h, w, d_model, heads;
  std::uint64_t flops;           // measured total multiply-adds
  std::uint64_t wall_ns_median;  // median of the timed trials
};

/// Runs every (size, variant) cell: verifies the measured counters against
/// the closed forms (mismatch is a hard error) and times `trials` repeats.
std::vector<BenchRecord> run_sweep(std::span<const int> sizes,
                                   std::span<const BenchVariant> variants, int trials, int d_model,
                                   int heads, std::uint64_t seed = 1);

/// `variant,H,W,d_model,heads,flops,wall_ns_median` CSV with a header row.
std::string bench_csv(std::span<const BenchRecord> records);

}  // namespace axiseg
