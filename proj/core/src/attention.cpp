#include "axiseg/attention.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "axiseg/graph.hpp"
#include "node_record.hpp"

namespace axiseg {

using detail::make_result;

namespace {

void check_qkv(const char* op, const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  if (q.shape().rank() != 3 || !(q.shape() == k.shape()) || !(q.shape() == v.shape())) {
    throw std::invalid_argument(std::string(op) + ": q/k/v must share one CxHxW shape");
  }
  if (heads < 1 || q.shape().dim(0) % heads != 0) {
    throw std::invalid_argument(std::string(op) + ": channel count " +
                                std::to_string(q.shape().dim(0)) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

void check_table(const char* op, const Tensor& table, int heads, int extent, int d_head) {
  Shape want{heads, 2 * extent - 1, d_head};
  if (!(table.shape() == want)) {
    throw std::invalid_argument(std::string(op) + ": relative-position table " +
                                table.shape().str() + " does not match expected " + want.str());
  }
}

Tensor project_pointwise(const Tensor& x, const Tensor& w) {
  int c = x.shape().dim(0), h = x.shape().dim(1), wd = x.shape().dim(2);
  return reshape(matmul(w, reshape(x, Shape{c, h * wd})), Shape{w.shape().dim(0), h, wd});
}

double gate_value(const Gates* gates, const Tensor Gates::* member) {
  return gates ? (gates->*member).scalar_value() : 1.0;
}

}  // namespace

RelPosTable RelPosTable::init(int heads, int axis_extent, int d_head, Rng& rng) {
  Shape s{heads, 2 * axis_extent - 1, d_head};
  RelPosTable t;
  t.r_q = Tensor::uniform(s, -0.1, 0.1, rng);
  t.r_k = Tensor::uniform(s, -0.1, 0.1, rng);
  t.r_v = Tensor::uniform(s, -0.1, 0.1, rng);
  return t;
}

RelPos2D RelPos2D::init(int heads, int h, int w, int d_head, Rng& rng) {
  RelPos2D t;
  t.height = RelPosTable::init(heads, h, d_head, rng);
  t.width = RelPosTable::init(heads, w, d_head, rng);
  return t;
}

Gates Gates::init_unit() {
  Gates g;
  g.g_q = Tensor::scalar(1.0);
  g.g_k = Tensor::scalar(1.0);
  g.g_v = Tensor::scalar(1.0);
  return g;
}

Tensor axial_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, Axis axis,
                            int heads, const RelPosTable* relpos, const Gates* gates) {
  check_qkv("axial_attention", q, k, v, heads);
  if (gates != nullptr && relpos == nullptr) {
    throw std::invalid_argument("axial_attention: gates require relative-position tables");
  }
  const int c = q.shape().dim(0), h = q.shape().dim(1), w = q.shape().dim(2);
  const int dh = c / heads, hw = h * w;
  const int len = (axis == Axis::Height) ? h : w;  // attended extent
  const int fixed = (axis == Axis::Height) ? w : h;
  const int noff = 2 * len - 1;
  if (relpos != nullptr) {
    check_table("axial_attention", relpos->r_q, heads, len, dh);
    check_table("axial_attention", relpos->r_k, heads, len, dh);
    check_table("axial_attention", relpos->r_v, heads, len, dh);
  }
  const double gq = gate_value(gates, &Gates::g_q);
  const double gk = gate_value(gates, &Gates::g_k);
  const double gv = gate_value(gates, &Gates::g_v);

  // spatial index of (along, fixed) on the attended axis
  auto sp = [axis, w](int along, int f) { return axis == Axis::Height ? along * w + f : f * w + along; };

  auto attn = std::make_shared<std::vector<double>>(
      static_cast<size_t>(heads) * fixed * len * len);
  std::vector<double> out(static_cast<size_t>(c) * hw, 0.0);
  std::vector<double> logits(static_cast<size_t>(len) * len);

  for (int hd = 0; hd < heads; ++hd) {
    const double* rq = relpos ? relpos->r_q.data() + static_cast<size_t>(hd) * noff * dh : nullptr;
    const double* rk = relpos ? relpos->r_k.data() + static_cast<size_t>(hd) * noff * dh : nullptr;
    const double* rv = relpos ? relpos->r_v.data() + static_cast<size_t>(hd) * noff * dh : nullptr;
    for (int f = 0; f < fixed; ++f) {
      for (int a = 0; a < len; ++a) {
        for (int b = 0; b < len; ++b) {
          double logit = 0.0;
          const size_t pa = static_cast<size_t>(sp(a, f)), pb = static_cast<size_t>(sp(b, f));
          for (int t = 0; t < dh; ++t) {
            logit += q.data()[(static_cast<size_t>(hd * dh + t)) * hw + pa] *
                     k.data()[(static_cast<size_t>(hd * dh + t)) * hw + pb];
          }
          if (relpos != nullptr) {
            const int off = b - a + len - 1;
            double lq = 0.0, lk = 0.0;
            for (int t = 0; t < dh; ++t) {
              lq += q.data()[(static_cast<size_t>(hd * dh + t)) * hw + pa] * rq[off * dh + t];
              lk += k.data()[(static_cast<size_t>(hd * dh + t)) * hw + pb] * rk[off * dh + t];
            }
            logit += gq * lq + gk * lk;
          }
          logits[static_cast<size_t>(a) * len + b] = logit;
        }
      }
      double* am = attn->data() + (static_cast<size_t>(hd) * fixed + f) * len * len;
      for (int a = 0; a < len; ++a) {
        double mx = logits[static_cast<size_t>(a) * len];
        for (int b = 1; b < len; ++b) mx = std::max(mx, logits[static_cast<size_t>(a) * len + b]);
        double denom = 0.0;
        for (int b = 0; b < len; ++b) {
          double e = std::exp(logits[static_cast<size_t>(a) * len + b] - mx);
          am[static_cast<size_t>(a) * len + b] = e;
          denom += e;
        }
        for (int b = 0; b < len; ++b) am[static_cast<size_t>(a) * len + b] /= denom;
      }
      for (int a = 0; a < len; ++a) {
        const size_t pa = static_cast<size_t>(sp(a, f));
        for (int t = 0; t < dh; ++t) {
          double acc = 0.0;
          for (int b = 0; b < len; ++b) {
            double val = v.data()[(static_cast<size_t>(hd * dh + t)) * hw + sp(b, f)];
            if (relpos != nullptr) val += gv * rv[(b - a + len - 1) * dh + t];
            acc += am[static_cast<size_t>(a) * len + b] * val;
          }
          out[(static_cast<size_t>(hd * dh + t)) * hw + pa] = acc;
        }
      }
    }
  }

  // Capture forward state for the fused gradient rule.
  Tensor qv = q, kv = k, vv = v;
  Tensor rqv, rkv, rvv;
  if (relpos != nullptr) {
    rqv = relpos->r_q;
    rkv = relpos->r_k;
    rvv = relpos->r_v;
  }
  const Tensor* operands[] = {&q,
                              &k,
                              &v,
                              relpos ? &relpos->r_q : nullptr,
                              relpos ? &relpos->r_k : nullptr,
                              relpos ? &relpos->r_v : nullptr,
                              gates ? &gates->g_q : nullptr,
                              gates ? &gates->g_k : nullptr,
                              gates ? &gates->g_v : nullptr};

  auto backward = [qv, kv, vv, rqv, rkv, rvv, attn, axis, heads, dh, h, w, hw, len, fixed, noff,
                   gq, gk, gv, sp](std::span<const double> dy, std::span<std::span<double>> din) {
    const bool has_rel = !rqv.empty();
    std::vector<double> s(static_cast<size_t>(len));
    for (int hd = 0; hd < heads; ++hd) {
      const double* rq = has_rel ? rqv.data() + static_cast<size_t>(hd) * noff * dh : nullptr;
      const double* rk = has_rel ? rkv.data() + static_cast<size_t>(hd) * noff * dh : nullptr;
      const double* rv = has_rel ? rvv.data() + static_cast<size_t>(hd) * noff * dh : nullptr;
      const size_t roff = static_cast<size_t>(hd) * noff * dh;
      for (int f = 0; f < fixed; ++f) {
        const double* am = attn->data() + (static_cast<size_t>(hd) * fixed + f) * len * len;
        for (int a = 0; a < len; ++a) {
          const size_t pa = static_cast<size_t>(sp(a, f));
          // value stage
          for (int b = 0; b < len; ++b) {
            const size_t pb = static_cast<size_t>(sp(b, f));
            const double wab = am[static_cast<size_t>(a) * len + b];
            const int off = b - a + len - 1;
            double s_ab = 0.0;
            for (int t = 0; t < dh; ++t) {
              const size_t ch = static_cast<size_t>(hd * dh + t);
              const double g = dy[ch * hw + pa];
              double val = vv.data()[ch * hw + pb];
              if (has_rel) val += gv * rv[off * dh + t];
              s_ab += g * val;
              if (!din[2].empty()) din[2][ch * hw + pb] += wab * g;
              if (!din[5].empty()) din[5][roff + static_cast<size_t>(off) * dh + t] += gv * wab * g;
              if (!din[8].empty()) din[8][0] += wab * g * rv[off * dh + t];
            }
            s[static_cast<size_t>(b)] = s_ab;
          }
          double rowdot = 0.0;
          for (int b = 0; b < len; ++b) rowdot += am[static_cast<size_t>(a) * len + b] * s[static_cast<size_t>(b)];
          // logit stage
          for (int b = 0; b < len; ++b) {
            const size_t pb = static_cast<size_t>(sp(b, f));
            const double e = am[static_cast<size_t>(a) * len + b] * (s[static_cast<size_t>(b)] - rowdot);
            const int off = b - a + len - 1;
            for (int t = 0; t < dh; ++t) {
              const size_t ch = static_cast<size_t>(hd * dh + t);
              const double qval = qv.data()[ch * hw + pa];
              const double kval = kv.data()[ch * hw + pb];
              if (!din[0].empty()) {
                double dq = kval;
                if (has_rel) dq += gq * rq[off * dh + t];
                din[0][ch * hw + pa] += e * dq;
              }
              if (!din[1].empty()) {
                double dk = qval;
                if (has_rel) dk += gk * rk[off * dh + t];
                din[1][ch * hw + pb] += e * dk;
              }
              if (!din[3].empty()) din[3][roff + static_cast<size_t>(off) * dh + t] += gq * e * qval;
              if (!din[4].empty()) din[4][roff + static_cast<size_t>(off) * dh + t] += gk * e * kval;
              if (!din[6].empty()) din[6][0] += e * qval * rq[off * dh + t];
              if (!din[7].empty()) din[7][0] += e * kval * rk[off * dh + t];
            }
          }
        }
      }
    }
  };

  return make_result("axial_attention", Shape{c, h, w}, std::move(out), operands,
                     std::move(backward));
}

Tensor full2d_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                             const RelPos2D* relpos) {
  check_qkv("full_attention_2d", q, k, v, heads);
  const int c = q.shape().dim(0), h = q.shape().dim(1), w = q.shape().dim(2);
  const int dh = c / heads, n = h * w;
  const int noff_h = 2 * h - 1, noff_w = 2 * w - 1;
  if (relpos != nullptr) {
    check_table("full_attention_2d_relpos (height)", relpos->height.r_q, heads, h, dh);
    check_table("full_attention_2d_relpos (height)", relpos->height.r_k, heads, h, dh);
    check_table("full_attention_2d_relpos (height)", relpos->height.r_v, heads, h, dh);
    check_table("full_attention_2d_relpos (width)", relpos->width.r_q, heads, w, dh);
    check_table("full_attention_2d_relpos (width)", relpos->width.r_k, heads, w, dh);
    check_table("full_attention_2d_relpos (width)", relpos->width.r_v, heads, w, dh);
  }

  auto attn = std::make_shared<std::vector<double>>(static_cast<size_t>(heads) * n * n);
  std::vector<double> out(static_cast<size_t>(c) * n, 0.0);
  std::vector<double> logits(static_cast<size_t>(n));

  for (int hd = 0; hd < heads; ++hd) {
    const double* rqh = relpos ? relpos->height.r_q.data() + static_cast<size_t>(hd) * noff_h * dh : nullptr;
    const double* rkh = relpos ? relpos->height.r_k.data() + static_cast<size_t>(hd) * noff_h * dh : nullptr;
    const double* rvh = relpos ? relpos->height.r_v.data() + static_cast<size_t>(hd) * noff_h * dh : nullptr;
    const double* rqw = relpos ? relpos->width.r_q.data() + static_cast<size_t>(hd) * noff_w * dh : nullptr;
    const double* rkw = relpos ? relpos->width.r_k.data() + static_cast<size_t>(hd) * noff_w * dh : nullptr;
    const double* rvw = relpos ? relpos->width.r_v.data() + static_cast<size_t>(hd) * noff_w * dh : nullptr;
    for (int a = 0; a < n; ++a) {
      const int ai = a / w, aj = a % w;
      for (int b = 0; b < n; ++b) {
        const int bi = b / w, bj = b % w;
        double logit = 0.0;
        for (int t = 0; t < dh; ++t) {
          logit += q.data()[(static_cast<size_t>(hd * dh + t)) * n + a] *
                   k.data()[(static_cast<size_t>(hd * dh + t)) * n + b];
        }
        if (relpos != nullptr) {
          const int oh = bi - ai + h - 1, ow = bj - aj + w - 1;
          double lq = 0.0, lk = 0.0;
          for (int t = 0; t < dh; ++t) {
            lq += q.data()[(static_cast<size_t>(hd * dh + t)) * n + a] *
                  (rqh[oh * dh + t] + rqw[ow * dh + t]);
            lk += k.data()[(static_cast<size_t>(hd * dh + t)) * n + b] *
                  (rkh[oh * dh + t] + rkw[ow * dh + t]);
          }
          logit += lq + lk;
        }
        logits[static_cast<size_t>(b)] = logit;
      }
      double* am = attn->data() + (static_cast<size_t>(hd) * n + a) * n;
      double mx = logits[0];
      for (int b = 1; b < n; ++b) mx = std::max(mx, logits[static_cast<size_t>(b)]);
      double denom = 0.0;
      for (int b = 0; b < n; ++b) {
        double e = std::exp(logits[static_cast<size_t>(b)] - mx);
        am[b] = e;
        denom += e;
      }
      for (int b = 0; b < n; ++b) am[b] /= denom;
      for (int t = 0; t < dh; ++t) {
        double acc = 0.0;
        for (int b = 0; b < n; ++b) {
          double val = v.data()[(static_cast<size_t>(hd * dh + t)) * n + b];
          if (relpos != nullptr) {
            const int bi = b / w, bj = b % w;
            acc += am[b] * (val + rvh[(bi - ai + h - 1) * dh + t] + rvw[(bj - aj + w - 1) * dh + t]);
          } else {
            acc += am[b] * val;
          }
        }
        out[(static_cast<size_t>(hd * dh + t)) * n + a] = acc;
      }
    }
  }

  Tensor qv = q, kv = k, vv = v;
  Tensor rqhv, rkhv, rvhv, rqwv, rkwv, rvwv;
  if (relpos != nullptr) {
    rqhv = relpos->height.r_q;
    rkhv = relpos->height.r_k;
    rvhv = relpos->height.r_v;
    rqwv = relpos->width.r_q;
    rkwv = relpos->width.r_k;
    rvwv = relpos->width.r_v;
  }
  const Tensor* operands[] = {&q,
                              &k,
                              &v,
                              relpos ? &relpos->height.r_q : nullptr,
                              relpos ? &relpos->width.r_q : nullptr,
                              relpos ? &relpos->height.r_k : nullptr,
                              relpos ? &relpos->width.r_k : nullptr,
                              relpos ? &relpos->height.r_v : nullptr,
                              relpos ? &relpos->width.r_v : nullptr};

  auto backward = [qv, kv, vv, rqhv, rkhv, rvhv, rqwv, rkwv, rvwv, attn, heads, dh, h, w, n,
                   noff_h, noff_w](std::span<const double> dy, std::span<std::span<double>> din) {
    const bool has_rel = !rqhv.empty();
    std::vector<double> s(static_cast<size_t>(n));
    for (int hd = 0; hd < heads; ++hd) {
      const size_t roff_h = static_cast<size_t>(hd) * noff_h * dh;
      const size_t roff_w = static_cast<size_t>(hd) * noff_w * dh;
      const double* rqh = has_rel ? rqhv.data() + roff_h : nullptr;
      const double* rkh = has_rel ? rkhv.data() + roff_h : nullptr;
      const double* rvh = has_rel ? rvhv.data() + roff_h : nullptr;
      const double* rqw = has_rel ? rqwv.data() + roff_w : nullptr;
      const double* rkw = has_rel ? rkwv.data() + roff_w : nullptr;
      const double* rvw = has_rel ? rvwv.data() + roff_w : nullptr;
      for (int a = 0; a < n; ++a) {
        const int ai = a / w, aj = a % w;
        const double* am = attn->data() + (static_cast<size_t>(hd) * n + a) * n;
        for (int b = 0; b < n; ++b) {
          const int bi = b / w, bj = b % w;
          const int oh = bi - ai + h - 1, ow = bj - aj + w - 1;
          const double wab = am[b];
          double s_ab = 0.0;
          for (int t = 0; t < dh; ++t) {
            const size_t ch = static_cast<size_t>(hd * dh + t);
            const double g = dy[ch * n + a];
            double val = vv.data()[ch * n + b];
            if (has_rel) val += rvh[oh * dh + t] + rvw[ow * dh + t];
            s_ab += g * val;
            if (!din[2].empty()) din[2][ch * n + b] += wab * g;
            if (!din[7].empty()) din[7][roff_h + static_cast<size_t>(oh) * dh + t] += wab * g;
            if (!din[8].empty()) din[8][roff_w + static_cast<size_t>(ow) * dh + t] += wab * g;
          }
          s[static_cast<size_t>(b)] = s_ab;
        }
        double rowdot = 0.0;
        for (int b = 0; b < n; ++b) rowdot += am[b] * s[static_cast<size_t>(b)];
        for (int b = 0; b < n; ++b) {
          const int bi = b / w, bj = b % w;
          const int oh = bi - ai + h - 1, ow = bj - aj + w - 1;
          const double e = am[b] * (s[static_cast<size_t>(b)] - rowdot);
          for (int t = 0; t < dh; ++t) {
            const size_t ch = static_cast<size_t>(hd * dh + t);
            const double qval = qv.data()[ch * n + a];
            const double kval = kv.data()[ch * n + b];
            if (!din[0].empty()) {
              double dq = kval;
              if (has_rel) dq += rqh[oh * dh + t] + rqw[ow * dh + t];
              din[0][ch * n + a] += e * dq;
            }
            if (!din[1].empty()) {
              double dk = qval;
              if (has_rel) dk += rkh[oh * dh + t] + rkw[ow * dh + t];
              din[1][ch * n + b] += e * dk;
            }
            if (!din[3].empty()) din[3][roff_h + static_cast<size_t>(oh) * dh + t] += e * qval;
            if (!din[4].empty()) din[4][roff_w + static_cast<size_t>(ow) * dh + t] += e * qval;
            if (!din[5].empty()) din[5][roff_h + static_cast<size_t>(oh) * dh + t] += e * kval;
            if (!din[6].empty()) din[6][roff_w + static_cast<size_t>(ow) * dh + t] += e * kval;
          }
        }
      }
    }
  };

  return make_result("full_attention_2d", Shape{c, h, w}, std::move(out), operands,
                     std::move(backward));
}

AxialAttentionLayer::AxialAttentionLayer(Axis axis_, int d_model_, int heads_, int axis_extent,
                                         bool gated_, Rng& rng)
    : axis(axis_), heads(heads_), d_model(d_model_), gated(gated_) {
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("AxialAttentionLayer: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  }
  d_head = d_model / heads;
  double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  w_q = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  w_k = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  w_v = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  w_out = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  relpos = RelPosTable::init(heads, axis_extent, d_head, rng);
  if (gated) gates = Gates::init_unit();
}

Tensor AxialAttentionLayer::forward(const Tensor& x) const {
  if (x.shape().rank() != 3 || x.shape().dim(0) != d_model) {
    throw std::invalid_argument("AxialAttentionLayer: input " + x.shape().str() +
                                " does not carry d_model=" + std::to_string(d_model) + " channels");
  }
  Tensor q = project_pointwise(x, w_q);
  Tensor k = project_pointwise(x, w_k);
  Tensor v = project_pointwise(x, w_v);
  Tensor y = axial_attention_core(q, k, v, axis, heads, &relpos, gated ? &gates : nullptr);
  return project_pointwise(y, w_out);
}

std::vector<NamedParam> AxialAttentionLayer::parameters(const std::string& prefix) {
  std::vector<NamedParam> out{{prefix + ".w_q", &w_q},
                              {prefix + ".w_k", &w_k},
                              {prefix + ".w_v", &w_v},
                              {prefix + ".w_out", &w_out},
                              {prefix + ".relpos.r_q", &relpos.r_q},
                              {prefix + ".relpos.r_k", &relpos.r_k},
                              {prefix + ".relpos.r_v", &relpos.r_v}};
  if (gated) {
    out.push_back({prefix + ".gates.g_q", &gates.g_q});
    out.push_back({prefix + ".gates.g_k", &gates.g_k});
    out.push_back({prefix + ".gates.g_v", &gates.g_v});
  }
  return out;
}

Full2DAttentionLayer::Full2DAttentionLayer(int d_model_, int heads_, int h, int w,
                                           bool use_relpos_, Rng& rng)
    : heads(heads_), d_model(d_model_), use_relpos(use_relpos_) {
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("Full2DAttentionLayer: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  }
  d_head = d_model / heads;
  double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  w_q = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  w_k = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  w_v = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  w_out = Tensor::uniform(Shape{d_model, d_model}, -bound, bound, rng);
  if (use_relpos) relpos = RelPos2D::init(heads, h, w, d_head, rng);
}

Tensor Full2DAttentionLayer::forward(const Tensor& x) const {
  return use_relpos ? full_attention_2d_relpos(x, *this) : full_attention_2d(x, *this);
}

std::vector<NamedParam> Full2DAttentionLayer::parameters(const std::string& prefix) {
  std::vector<NamedParam> out{{prefix + ".w_q", &w_q},
                              {prefix + ".w_k", &w_k},
                              {prefix + ".w_v", &w_v},
                              {prefix + ".w_out", &w_out}};
  if (use_relpos) {
    out.push_back({prefix + ".relpos_h.r_q", &relpos.height.r_q});
    out.push_back({prefix + ".relpos_h.r_k", &relpos.height.r_k});
    out.push_back({prefix + ".relpos_h.r_v", &relpos.height.r_v});
    out.push_back({prefix + ".relpos_w.r_q", &relpos.width.r_q});
    out.push_back({prefix + ".relpos_w.r_k", &relpos.width.r_k});
    out.push_back({prefix + ".relpos_w.r_v", &relpos.width.r_v});
  }
  return out;
}

namespace {

void check_layer_input(const char* op, const Tensor& x, int d_model) {
  if (x.shape().rank() != 3 || x.shape().dim(0) != d_model) {
    throw std::invalid_argument(std::string(op) + ": input " + x.shape().str() +
                                " does not carry d_model=" + std::to_string(d_model) + " channels");
  }
}

}  // namespace

Tensor full_attention_2d(const Tensor& x, const Full2DAttentionLayer& layer) {
  check_layer_input("full_attention_2d", x, layer.d_model);
  Tensor q = project_pointwise(x, layer.w_q);
  Tensor k = project_pointwise(x, layer.w_k);
  Tensor v = project_pointwise(x, layer.w_v);
  Tensor y = full2d_attention_core(q, k, v, layer.heads, nullptr);
  return project_pointwise(y, layer.w_out);
}

Tensor full_attention_2d_relpos(const Tensor& x, const Full2DAttentionLayer& layer) {
  check_layer_input("full_attention_2d_relpos", x, layer.d_model);
  if (!layer.use_relpos) {
    throw std::invalid_argument("full_attention_2d_relpos: layer has no relative-position tables");
  }
  Tensor q = project_pointwise(x, layer.w_q);
  Tensor k = project_pointwise(x, layer.w_k);
  Tensor v = project_pointwise(x, layer.w_v);
  Tensor y = full2d_attention_core(q, k, v, layer.heads, &layer.relpos);
  return project_pointwise(y, layer.w_out);
}

Tensor axial_attention(const Tensor& x, const AxialAttentionLayer& layer) {
  check_layer_input("axial_attention", x, layer.d_model);
  Tensor q = project_pointwise(x, layer.w_q);
  Tensor k = project_pointwise(x, layer.w_k);
  Tensor v = project_pointwise(x, layer.w_v);
  Tensor y = axial_attention_core(q, k, v, layer.axis, layer.heads, &layer.relpos, nullptr);
  return project_pointwise(y, layer.w_out);
}

Tensor gated_axial_attention(const Tensor& x, const AxialAttentionLayer& layer) {
  if (!layer.gated) throw std::invalid_argument("gated_axial_attention: layer is not gated");
  return layer.forward(x);
}

std::vector<Tensor> multi_head_split(const Tensor& x, int heads) {
  if (x.shape().rank() != 3) throw std::invalid_argument("multi_head_split: input must be CxHxW");
  int c = x.shape().dim(0);
  if (heads < 1 || c % heads != 0) {
    throw std::invalid_argument("multi_head_split: " + std::to_string(c) +
                                " channels not divisible by " + std::to_string(heads) + " heads");
  }
  int dh = c / heads;
  std::vector<Tensor> parts;
  parts.reserve(static_cast<size_t>(heads));
  for (int hd = 0; hd < heads; ++hd) parts.push_back(slice_channels(x, hd * dh, (hd + 1) * dh));
  return parts;
}

Tensor multi_head_merge(std::span<const Tensor> parts) { return concat_channels(parts); }

double receptive_field_probe(std::span<const std::function<Tensor(const Tensor&)>> blocks,
                             const Tensor& x, Coord source, Coord sink) {
  if (x.shape().rank() != 3) throw std::invalid_argument("receptive_field_probe: input must be CxHxW");
  int c = x.shape().dim(0), h = x.shape().dim(1), w = x.shape().dim(2);
  auto in_range = [h, w](Coord p) { return p.row >= 0 && p.row < h && p.col >= 0 && p.col < w; };
  if (!in_range(source) || !in_range(sink)) {
    throw std::invalid_argument("receptive_field_probe: coordinates outside " + x.shape().str());
  }
  Graph g;
  Tensor xin = x;
  xin.attach(g);
  Tensor y = xin;
  for (const auto& block : blocks) y = block(y);
  Tensor s = sum(spatial_pick(y, sink.row, sink.col));
  g.backward(s);
  auto grad = g.grad(xin);
  double total = 0.0;
  for (int ci = 0; ci < c; ++ci) total += std::abs(grad[(static_cast<size_t>(ci) * h + source.row) * w + source.col]);
  return total;
}

}  // namespace axiseg
