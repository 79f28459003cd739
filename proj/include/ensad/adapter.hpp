#pragma once

// Ensemble adapter: additive attention over translation embeddings, fused
// back into the source embedding through an alpha-weighted residual.
//
//   q = h0,  K = (h1..hm),  V_i = normalize(h_i - h0)      (or V = K)
//   A = Wq q 1^T + Wk K + Wv V + b 1^T
//   s = softmax(Wp tanh(A) + bp)
//   Vo = (1 - alpha) V + alpha colnormalize(tanh(Wo V))
//   c = normalize(Vo s)
//   h~ = normalize((1 - alpha) q + alpha c)

#include <algorithm>
#include <cmath>
#include <optional>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "ensad/numkit.hpp"

namespace ensad {

struct EnsAdConfig {
  std::size_t d = 512;
  std::size_t d_hid = 256;
  std::size_t m = 12;
  double alpha = 0.2;
  bool variant_v_equals_k = false;

  void validate() const {
    if (d == 0 || d_hid == 0 || m == 0) throw ValidationError("ensad config: d, d_hid, m must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("ensad config: alpha must lie in [0, 1]");
  }
  bool operator==(const EnsAdConfig&) const = default;
};

struct EnsAdParams {
  Mat wq, wk, wv;  // d_hid x d
  Vec b;           // d_hid
  Mat wp;          // 1 x d_hid
  double bp = 0.0;
  Mat wo;          // d x d

  static EnsAdParams zeros(const EnsAdConfig& cfg) {
    return {Mat(cfg.d_hid, cfg.d), Mat(cfg.d_hid, cfg.d), Mat(cfg.d_hid, cfg.d), Vec(cfg.d_hid),
            Mat(1, cfg.d_hid),     0.0,                   Mat(cfg.d, cfg.d)};
  }

  // Flat views of every tensor in a fixed order; the optimizer and the
  // checkpoint writer both rely on this order.
  std::vector<std::span<double>> tensors() {
    return {wq.span(), wk.span(), wv.span(), b.span(), wp.span(), std::span<double>(&bp, 1), wo.span()};
  }
  std::vector<std::span<const double>> tensors() const {
    return {wq.span(), wk.span(), wv.span(), b.span(), wp.span(), std::span<const double>(&bp, 1), wo.span()};
  }
  static constexpr const char* kTensorNames[] = {"wq", "wk", "wv", "b", "wp", "bp", "wo"};

  bool operator==(const EnsAdParams&) const = default;
};

inline std::size_t param_count(const EnsAdConfig& cfg) {
  return 3 * cfg.d_hid * cfg.d + 2 * cfg.d_hid + 1 + cfg.d * cfg.d;
}

// Weights N(0, 1/fan_in), biases zero. Draw order: wq, wk, wv, wp, wo.
inline EnsAdParams init_params(const EnsAdConfig& cfg, SeededRng& rng) {
  cfg.validate();
  EnsAdParams p = EnsAdParams::zeros(cfg);
  const double s_in = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  p.wq = gaussian_mat(rng, cfg.d_hid, cfg.d, s_in);
  p.wk = gaussian_mat(rng, cfg.d_hid, cfg.d, s_in);
  p.wv = gaussian_mat(rng, cfg.d_hid, cfg.d, s_in);
  p.wp = gaussian_mat(rng, 1, cfg.d_hid, 1.0 / std::sqrt(static_cast<double>(cfg.d_hid)));
  p.wo = gaussian_mat(rng, cfg.d, cfg.d, s_in);
  return p;
}

// Everything the backward pass needs, column vectors stored per translation.
struct ForwardTrace {
  Vec q;
  std::vector<Vec> keys;        // h1..hm
  std::vector<Vec> values_raw;  // h_i - h0 (or h_i for V = K)
  std::vector<Vec> values;      // normalized differences (or h_i)
  std::vector<Vec> act;         // tanh(A) columns, d_hid each
  Vec logits;                   // m
  Vec scores;                   // softmax(logits), m
  std::vector<Vec> out_raw;     // tanh(Wo V_i)
  std::vector<Vec> out_norm;    // normalize(tanh(Wo V_i))
  std::vector<Vec> values_out;  // V°_i
  Vec context_raw, context;     // V° s and its normalization
  Vec fused_raw, fused;         // (1-a) q + a c and h~
};

inline void check_input_matrix(const EnsAdConfig& cfg, const Mat& h) {
  if (h.rows() != cfg.d || h.cols() != cfg.m + 1)
    throw ValidationError("ensad forward: H must be d x (m+1) = " + std::to_string(cfg.d) + " x " +
                          std::to_string(cfg.m + 1));
  require_finite(h.span(), "ensad forward input");
}

inline ForwardTrace forward(const EnsAdParams& p, const EnsAdConfig& cfg, const Mat& h) {
  check_input_matrix(cfg, h);
  const std::size_t m = cfg.m;
  const double a = cfg.alpha;
  ForwardTrace t;
  t.q = h.col(0);

  const Vec q_proj = matvec(p.wq, t.q.span()) + p.b;
  t.logits = Vec(m);
  for (std::size_t i = 0; i < m; ++i) {
    Vec k = h.col(i + 1);
    Vec v_raw = cfg.variant_v_equals_k ? k : k - t.q;
    Vec v = cfg.variant_v_equals_k ? v_raw : l2_normalize(v_raw);

    Vec pre = q_proj + matvec(p.wk, k.span()) + matvec(p.wv, v.span());
    for (auto& x : pre) x = std::tanh(x);
    t.logits[i] = dot(p.wp.row(0), pre.span()) + p.bp;

    Vec u = matvec(p.wo, v.span());
    for (auto& x : u) x = std::tanh(x);
    Vec un = l2_normalize(u);
    t.values_out.push_back((1.0 - a) * v + a * un);

    t.keys.push_back(std::move(k));
    t.values_raw.push_back(std::move(v_raw));
    t.values.push_back(std::move(v));
    t.act.push_back(std::move(pre));
    t.out_raw.push_back(std::move(u));
    t.out_norm.push_back(std::move(un));
  }
  t.scores = softmax(t.logits);

  t.context_raw = Vec(cfg.d);
  for (std::size_t i = 0; i < m; ++i) axpy(t.scores[i], t.values_out[i].span(), t.context_raw.span());
  t.context = l2_normalize(t.context_raw);
  t.fused_raw = (1.0 - a) * t.q + a * t.context;
  t.fused = l2_normalize(t.fused_raw);
  require_finite(t.fused.span(), "ensad forward output");
  return t;
}

inline Vec attention_scores(const ForwardTrace& t) { return t.scores; }

struct EnsAdGrads {
  EnsAdParams params;  // same shapes as the parameters
  Mat h;               // d x (m+1)
};

// Reverse-mode gradient of <grad_out, h~> with respect to every parameter and
// every column of H.
inline EnsAdGrads backward(const EnsAdParams& p, const EnsAdConfig& cfg, const ForwardTrace& t,
                           const Vec& grad_out) {
  if (grad_out.size() != cfg.d) throw ValidationError("ensad backward: gradient has wrong length");
  require_finite(grad_out.span(), "ensad backward gradient");
  const std::size_t m = cfg.m;
  const double a = cfg.alpha;

  EnsAdGrads g{EnsAdParams::zeros(cfg), Mat(cfg.d, m + 1)};
  auto& gp = g.params;

  const Vec g_fused_raw = l2_normalize_backward(t.fused_raw, t.fused, grad_out);
  Vec g_q = (1.0 - a) * g_fused_raw;
  const Vec g_ctx_raw = l2_normalize_backward(t.context_raw, t.context, a * g_fused_raw);

  // Through c_raw = sum_i s_i Vo_i, then softmax.
  Vec g_scores(m);
  for (std::size_t i = 0; i < m; ++i) g_scores[i] = dot(t.values_out[i].span(), g_ctx_raw.span());
  const double mean_gs = dot(t.scores.span(), g_scores.span());
  Vec g_logits(m);
  for (std::size_t i = 0; i < m; ++i) g_logits[i] = t.scores[i] * (g_scores[i] - mean_gs);

  Vec g_qproj(cfg.d_hid);  // sum over columns of dL/dA_i
  for (std::size_t i = 0; i < m; ++i) {
    gp.bp += g_logits[i];
    axpy(g_logits[i], t.act[i].span(), gp.wp.row(0));

    Vec g_pre(cfg.d_hid);
    for (std::size_t r = 0; r < cfg.d_hid; ++r)
      g_pre[r] = g_logits[i] * p.wp(0, r) * (1.0 - t.act[i][r] * t.act[i][r]);
    axpy(1.0, g_pre.span(), g_qproj.span());
    add_outer(gp.wk, 1.0, g_pre.span(), t.keys[i].span());
    add_outer(gp.wv, 1.0, g_pre.span(), t.values[i].span());
    Vec g_key = matvec_t(p.wk, g_pre.span());
    Vec g_val = matvec_t(p.wv, g_pre.span());

    // Through Vo_i = (1-a) V_i + a normalize(tanh(Wo V_i)).
    const Vec g_vo = t.scores[i] * g_ctx_raw;
    axpy(1.0 - a, g_vo.span(), g_val.span());
    Vec g_u = l2_normalize_backward(t.out_raw[i], t.out_norm[i], a * g_vo);
    for (std::size_t r = 0; r < cfg.d; ++r) g_u[r] *= 1.0 - t.out_raw[i][r] * t.out_raw[i][r];
    add_outer(gp.wo, 1.0, g_u.span(), t.values[i].span());
    axpy(1.0, matvec_t(p.wo, g_u.span()).span(), g_val.span());

    if (cfg.variant_v_equals_k) {
      axpy(1.0, g_val.span(), g_key.span());
    } else {
      const Vec g_vraw = l2_normalize_backward(t.values_raw[i], t.values[i], g_val);
      axpy(1.0, g_vraw.span(), g_key.span());
      axpy(-1.0, g_vraw.span(), g_q.span());
    }
    g.h.set_col(i + 1, g_key);
  }
  gp.b = g_qproj;
  add_outer(gp.wq, 1.0, g_qproj.span(), t.q.span());
  axpy(1.0, matvec_t(p.wq, g_qproj.span()).span(), g_q.span());
  g.h.set_col(0, g_q);

  for (auto s : gp.tensors()) require_finite(s, "ensad backward");
  return g;
}

// ---------------------------------------------------------------------------
// Non-learned fusion baselines

inline Vec fuse_mean_pool(const Mat& h) {
  Vec mean(h.rows());
  for (std::size_t r = 0; r < h.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < h.cols(); ++c) s += h(r, c);
    mean[r] = s / static_cast<double>(h.cols());
  }
  return l2_normalize(mean);
}

// Column `index` of H: 0 is zero-shot transfer, 1 is translate-test.
inline Vec fuse_select(const Mat& h, std::size_t index) {
  if (index >= h.cols())
    throw ValidationError("fuse_select: index " + std::to_string(index) + " out of range [0, " +
                          std::to_string(h.cols() - 1) + "]");
  return h.col(index);
}

// ---------------------------------------------------------------------------
// Attention-score export

// One record per item, scores sorted descending; translation texts follow
// their scores when present.
inline nlohmann::json attention_record(const std::string& id, const Vec& scores,
                                       const std::optional<std::vector<std::string>>& texts) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
  nlohmann::json j;
  j["id"] = id;
  auto& s = j["scores"] = nlohmann::json::array();
  for (auto i : order) s.push_back(scores[i]);
  if (texts) {
    auto& tt = j["translation_texts"] = nlohmann::json::array();
    for (auto i : order) tt.push_back((*texts)[i]);
  }
  return j;
}

}  // namespace ensad
