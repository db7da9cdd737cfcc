#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "axiseg/attention.hpp"
#include "axiseg/tensor.hpp"

namespace axiseg {

enum class AttentionVariant { Full2D, Axial, GatedAxial };

const char* to_string(AttentionVariant v);
std::optional<AttentionVariant> attention_variant_from_string(const std::string& s);

struct SegModelConfig {
  int in_channels = 1;
  int input_size = 32;  // square inputs; fixes the relative-position table extents
  int d_model = 16;
  int heads = 2;
  int num_blocks = 2;
  int downsample_factor = 2;  // power of two
  AttentionVariant variant = AttentionVariant::GatedAxial;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SegModelConfig&) const = default;
};

/// The segmentation network: convolutional stem (second conv strided), a
/// stack of transformer blocks (height-axis then width-axis attention for the
/// axial variants, one dense attention for Full2D), a nearest-2x decoder back
/// to input resolution and a sigmoid head.
class SegModel {
 public:
  static SegModel build(const SegModelConfig& config);

  /// [1 x H x W] image -> [1 x H x W] lesion probabilities in (0, 1).
  Tensor forward(const Tensor& image) const;

  /// Stable, unique parameter names; order is deterministic given the config.
  std::vector<NamedParam> parameters();

  void attach(Graph& g);
  void detach();

  const SegModelConfig& config() const { return config_; }

  void save_checkpoint(const std::string& path);
  static SegModel load_checkpoint(const std::string& path);

 private:
  struct Conv {
    Tensor w, b;
    int stride = 1;
  };
  struct LayerNorm {
    Tensor gain, bias;
  };
  struct Block {
    LayerNorm ln1, ln2;
    AxialAttentionLayer attn_h, attn_w;  // axial variants
    Full2DAttentionLayer attn_full;      // Full2D variant
    Conv ffn1, ffn2;
  };

  SegModelConfig config_;
  std::vector<Conv> stem_;
  std::vector<Block> blocks_;
  std::vector<Conv> decoder_;  // each stage upsamples 2x first
  Conv head_;
};

}  // namespace axiseg
