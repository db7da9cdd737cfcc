#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "axiseg/ops.hpp"
#include "axiseg/tensor.hpp"

namespace axiseg {

/// Attended axis of a one-dimensional axial pass.
enum class Axis { Height, Width };

/// Learnable relative-position encodings for one attended axis: one d_head
/// vector per signed offset and component, per head. Tables are
/// [heads x (2L-1) x d_head], indexed by (key_position - query_position) + (L-1).
struct RelPosTable {
  Tensor r_q, r_k, r_v;

  static RelPosTable init(int heads, int axis_extent, int d_head, Rng& rng);
  int offsets() const { return r_q.shape().dim(1); }
};

/// Height- and width-offset tables of the 2D relative-position attention;
/// the two lookups are combined additively.
struct RelPos2D {
  RelPosTable height, width;

  static RelPos2D init(int heads, int h, int w, int d_head, Rng& rng);
};

/// Learnable scalar gate units multiplying the relative-position terms.
struct Gates {
  Tensor g_q, g_k, g_v;

  static Gates init_unit();  // all gates start at 1.0
};

// Attention cores: q, k, v are already-projected [C x H x W] tensors with
// C = heads * d_head. Gates require relpos. Both record a single fused node
// with an analytic gradient rule for every tracked operand.
Tensor axial_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, Axis axis,
                            int heads, const RelPosTable* relpos, const Gates* gates);
Tensor full2d_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                             const RelPos2D* relpos);

/// One axial attention pass: pointwise q/k/v projections, the axial core
/// along `axis`, and an output projection. Output shape equals input shape.
struct AxialAttentionLayer {
  Axis axis = Axis::Height;
  int heads = 1;
  int d_model = 0;
  int d_head = 0;
  bool gated = false;
  Tensor w_q, w_k, w_v, w_out;
  RelPosTable relpos;
  Gates gates;  // present only when gated

  AxialAttentionLayer() = default;
  AxialAttentionLayer(Axis axis, int d_model, int heads, int axis_extent, bool gated, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::vector<NamedParam> parameters(const std::string& prefix);
};

/// Traditional 2D self-attention over all H*W positions, optionally with
/// factorized relative-position tables.
struct Full2DAttentionLayer {
  int heads = 1;
  int d_model = 0;
  int d_head = 0;
  bool use_relpos = false;
  Tensor w_q, w_k, w_v, w_out;
  RelPos2D relpos;  // present only when use_relpos

  Full2DAttentionLayer() = default;
  Full2DAttentionLayer(int d_model, int heads, int h, int w, bool use_relpos, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::vector<NamedParam> parameters(const std::string& prefix);
};

// The attention operations, from plain dense attention to the gated axial form.
Tensor full_attention_2d(const Tensor& x, const Full2DAttentionLayer& layer);
Tensor full_attention_2d_relpos(const Tensor& x, const Full2DAttentionLayer& layer);
Tensor axial_attention(const Tensor& x, const AxialAttentionLayer& layer);
Tensor gated_axial_attention(const Tensor& x, const AxialAttentionLayer& layer);

/// Partitions channels into `heads` contiguous groups; merge inverts split.
std::vector<Tensor> multi_head_split(const Tensor& x, int heads);
Tensor multi_head_merge(std::span<const Tensor> parts);

struct Coord {
  int row;
  int col;
};

/// |d y_sink / d x_source| summed over channels after applying `blocks` in
/// order, computed with one backward pass.
double receptive_field_probe(std::span<const std::function<Tensor(const Tensor&)>> blocks,
                             const Tensor& x, Coord source, Coord sink);

}  // namespace axiseg
