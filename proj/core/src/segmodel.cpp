#include "axiseg/segmodel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "axiseg/ops.hpp"

namespace axiseg {

const char* to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::Full2D: return "full2d";
    case AttentionVariant::Axial: return "axial";
    case AttentionVariant::GatedAxial: return "gated";
  }
  return "?";
}

std::optional<AttentionVariant> attention_variant_from_string(const std::string& s) {
  if (s == "full2d") return AttentionVariant::Full2D;
  if (s == "axial") return AttentionVariant::Axial;
  if (s == "gated") return AttentionVariant::GatedAxial;
  return std::nullopt;
}

void SegModelConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("SegModelConfig: in_channels must be >= 1");
  if (d_model < 1 || heads < 1) throw std::invalid_argument("SegModelConfig: d_model/heads must be >= 1");
  if (d_model % heads != 0) {
    throw std::invalid_argument("SegModelConfig: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  }
  if (num_blocks < 1) throw std::invalid_argument("SegModelConfig: num_blocks must be >= 1");
  if (downsample_factor < 1 || (downsample_factor & (downsample_factor - 1)) != 0) {
    throw std::invalid_argument("SegModelConfig: downsample_factor must be a power of two");
  }
  if (input_size < 4) throw std::invalid_argument("SegModelConfig: input_size must be >= 4");
  if (input_size % downsample_factor != 0) {
    throw std::invalid_argument("SegModelConfig: input_size " + std::to_string(input_size) +
                                " not divisible by downsample_factor " +
                                std::to_string(downsample_factor));
  }
}

namespace {

int halvings_of(int downsample_factor) {
  int n = 0;
  while ((1 << n) < downsample_factor) ++n;
  return n;
}

}  // namespace

SegModel SegModel::build(const SegModelConfig& config) {
  config.validate();
  SegModel m;
  m.config_ = config;
  Rng rng(config.seed);

  auto make_conv = [&rng](int c_in, int c_out, int k, int stride) {
    double bound = 1.0 / std::sqrt(static_cast<double>(c_in * k * k));
    Conv c;
    c.w = Tensor::uniform(Shape{c_out, c_in, k, k}, -bound, bound, rng);
    c.b = Tensor::zeros(Shape{c_out});
    c.stride = stride;
    return c;
  };
  auto make_ln = [&config] {
    return LayerNorm{Tensor::full(Shape{config.d_model}, 1.0), Tensor::zeros(Shape{config.d_model})};
  };

  const int d = config.d_model;
  const int halvings = halvings_of(config.downsample_factor);
  m.stem_.push_back(make_conv(config.in_channels, d, 3, 1));
  if (halvings == 0) {
    m.stem_.push_back(make_conv(d, d, 3, 1));
  } else {
    for (int i = 0; i < halvings; ++i) m.stem_.push_back(make_conv(d, d, 3, 2));
  }

  const int att_extent = config.input_size / config.downsample_factor;
  for (int b = 0; b < config.num_blocks; ++b) {
    Block blk;
    blk.ln1 = make_ln();
    if (config.variant == AttentionVariant::Full2D) {
      blk.attn_full = Full2DAttentionLayer(d, config.heads, att_extent, att_extent, false, rng);
    } else {
      bool gated = config.variant == AttentionVariant::GatedAxial;
      blk.attn_h = AxialAttentionLayer(Axis::Height, d, config.heads, att_extent, gated, rng);
      blk.ln2 = make_ln();
      blk.attn_w = AxialAttentionLayer(Axis::Width, d, config.heads, att_extent, gated, rng);
    }
    blk.ffn1 = make_conv(d, d, 1, 1);
    blk.ffn2 = make_conv(d, d, 1, 1);
    m.blocks_.push_back(std::move(blk));
  }

  for (int i = 0; i < halvings; ++i) m.decoder_.push_back(make_conv(d, d, 3, 1));
  m.head_ = make_conv(d, 1, 1, 1);
  return m;
}

Tensor SegModel::forward(const Tensor& image) const {
  Shape want{config_.in_channels, config_.input_size, config_.input_size};
  if (!(image.shape() == want)) {
    throw std::invalid_argument("SegModel::forward: input " + image.shape().str() +
                                " does not match the model's expected " + want.str());
  }
  Tensor t = image;
  for (const Conv& c : stem_) t = relu(conv2d(t, c.w, c.b, c.stride));
  for (const Block& blk : blocks_) {
    Tensor a;
    if (config_.variant == AttentionVariant::Full2D) {
      a = blk.attn_full.forward(layer_norm_channels(t, blk.ln1.gain, blk.ln1.bias));
    } else {
      Tensor h = blk.attn_h.forward(layer_norm_channels(t, blk.ln1.gain, blk.ln1.bias));
      a = blk.attn_w.forward(layer_norm_channels(h, blk.ln2.gain, blk.ln2.bias));
    }
    t = add(t, a);
    Tensor f = conv2d(relu(conv2d(t, blk.ffn1.w, blk.ffn1.b, 1)), blk.ffn2.w, blk.ffn2.b, 1);
    t = add(t, f);
  }
  for (const Conv& c : decoder_) t = relu(conv2d(upsample_nearest2x(t), c.w, c.b, c.stride));
  return sigmoid(conv2d(t, head_.w, head_.b, 1));
}

std::vector<NamedParam> SegModel::parameters() {
  std::vector<NamedParam> out;
  for (size_t i = 0; i < stem_.size(); ++i) {
    std::string p = "stem.conv" + std::to_string(i);
    out.push_back({p + ".weight", &stem_[i].w});
    out.push_back({p + ".bias", &stem_[i].b});
  }
  for (size_t b = 0; b < blocks_.size(); ++b) {
    std::string p = "block" + std::to_string(b);
    Block& blk = blocks_[b];
    out.push_back({p + ".ln1.gain", &blk.ln1.gain});
    out.push_back({p + ".ln1.bias", &blk.ln1.bias});
    if (config_.variant == AttentionVariant::Full2D) {
      for (auto& np : blk.attn_full.parameters(p + ".attn")) out.push_back(np);
    } else {
      for (auto& np : blk.attn_h.parameters(p + ".attn_h")) out.push_back(np);
      out.push_back({p + ".ln2.gain", &blk.ln2.gain});
      out.push_back({p + ".ln2.bias", &blk.ln2.bias});
      for (auto& np : blk.attn_w.parameters(p + ".attn_w")) out.push_back(np);
    }
    out.push_back({p + ".ffn.conv1.weight", &blk.ffn1.w});
    out.push_back({p + ".ffn.conv1.bias", &blk.ffn1.b});
    out.push_back({p + ".ffn.conv2.weight", &blk.ffn2.w});
    out.push_back({p + ".ffn.conv2.bias", &blk.ffn2.b});
  }
  for (size_t i = 0; i < decoder_.size(); ++i) {
    std::string p = "decoder.conv" + std::to_string(i);
    out.push_back({p + ".weight", &decoder_[i].w});
    out.push_back({p + ".bias", &decoder_[i].b});
  }
  out.push_back({"head.conv.weight", &head_.w});
  out.push_back({"head.conv.bias", &head_.b});
  return out;
}

void SegModel::attach(Graph& g) {
  auto params = parameters();
  attach_all(g, params);
}

void SegModel::detach() {
  auto params = parameters();
  detach_all(params);
}

void SegModel::save_checkpoint(const std::string& path) {
  nlohmann::json cfg = {
      {"in_channels", config_.in_channels},
      {"input_size", config_.input_size},
      {"d_model", config_.d_model},
      {"heads", config_.heads},
      {"num_blocks", config_.num_blocks},
      {"downsample_factor", config_.downsample_factor},
      {"variant", to_string(config_.variant)},
      {"seed", config_.seed},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << "{\"version\":1,\"config\":" << cfg.dump() << ",\"params\":[";
  char buf[40];
  bool first = true;
  for (const NamedParam& p : parameters()) {
    if (!first) out << ",";
    first = false;
    out << "{\"name\":\"" << p.name << "\",\"shape\":[";
    const auto& dims = p.tensor->shape().dims();
    for (size_t i = 0; i < dims.size(); ++i) out << (i ? "," : "") << dims[i];
    out << "],\"data\":[";
    auto vals = p.tensor->values();
    for (size_t i = 0; i < vals.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", vals[i]);
      out << (i ? "," : "") << buf;
    }
    out << "]}";
  }
  out << "]}\n";
  if (!out) throw std::runtime_error("save_checkpoint: short write to " + path);
}

SegModel SegModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: malformed file " + path + ": " + e.what());
  }
  try {
    if (!j.contains("version") || !j["version"].is_number_integer()) {
      throw std::runtime_error("missing version");
    }
    if (j["version"].get<int>() != 1) {
      throw std::runtime_error("unsupported checkpoint version " + j["version"].dump());
    }
    const auto& cj = j.at("config");
    SegModelConfig cfg;
    cfg.in_channels = cj.at("in_channels").get<int>();
    cfg.input_size = cj.at("input_size").get<int>();
    cfg.d_model = cj.at("d_model").get<int>();
    cfg.heads = cj.at("heads").get<int>();
    cfg.num_blocks = cj.at("num_blocks").get<int>();
    cfg.downsample_factor = cj.at("downsample_factor").get<int>();
    auto variant = attention_variant_from_string(cj.at("variant").get<std::string>());
    if (!variant) {
      throw std::runtime_error("unknown attention variant " + cj.at("variant").dump());
    }
    cfg.variant = *variant;
    cfg.seed = cj.at("seed").get<std::uint64_t>();

    SegModel m = build(cfg);
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& pj : j.at("params")) {
      by_name[pj.at("name").get<std::string>()] = &pj;
    }
    auto params = m.parameters();
    if (by_name.size() != params.size()) {
      throw std::runtime_error("parameter count " + std::to_string(by_name.size()) +
                               " does not match the architecture's " +
                               std::to_string(params.size()));
    }
    for (NamedParam& p : params) {
      auto it = by_name.find(p.name);
      if (it == by_name.end()) throw std::runtime_error("missing parameter " + p.name);
      const nlohmann::json& pj = *it->second;
      std::vector<int> dims = pj.at("shape").get<std::vector<int>>();
      if (!(Shape(dims) == p.tensor->shape())) {
        throw std::runtime_error("shape mismatch for parameter " + p.name + ": checkpoint " +
                                 Shape(dims).str() + " vs model " + p.tensor->shape().str());
      }
      std::vector<double> data = pj.at("data").get<std::vector<double>>();
      if (static_cast<int>(data.size()) != p.tensor->numel()) {
        throw std::runtime_error("data length mismatch for parameter " + p.name);
      }
      for (double v : data) {
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in parameter " + p.name);
      }
      p.tensor->set_values(std::move(data));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: malformed file " + path + ": " + e.what());
  }
}

}  // namespace axiseg
