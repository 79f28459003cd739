#pragma once

// Toy conditional GAN around the ensemble adapter: an MLP generator, a
// two-branch MLP discriminator D(I, h) = D_s(I) + h^T f_D(I), the adversarial
// and contrastive losses with hand-written gradients, Adam, and the
// alternating adapter/discriminator training loop.

#include <array>
#include <cstdio>
#include <limits>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ensad/adapter.hpp"
#include "ensad/data.hpp"
#include "ensad/numkit.hpp"

namespace ensad {

// ---------------------------------------------------------------------------
// Dense layers

struct Dense {
  Mat w;  // out x in
  Vec b;  // out

  std::size_t in() const { return w.cols(); }
  std::size_t out() const { return w.rows(); }
  Vec apply(std::span<const double> x) const { return matvec(w, x) + b; }
  bool operator==(const Dense&) const = default;
};

inline Dense init_dense(SeededRng& rng, std::size_t out, std::size_t in) {
  return {gaussian_mat(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in))), Vec(out)};
}

inline Dense zeros_like(const Dense& l) { return {Mat(l.out(), l.in()), Vec(l.out())}; }

// Stack of tanh layers. acts[0] is the input, acts[k+1] = tanh(W_k acts[k] + b_k).
struct MlpTrace {
  std::vector<Vec> acts;
  const Vec& output() const { return acts.back(); }
};

inline MlpTrace mlp_forward(const std::vector<Dense>& layers, Vec x) {
  MlpTrace t;
  t.acts.push_back(std::move(x));
  for (const auto& l : layers) {
    Vec y = l.apply(t.acts.back().span());
    for (auto& v : y) v = std::tanh(v);
    t.acts.push_back(std::move(y));
  }
  return t;
}

// Accumulates parameter gradients into `grads` and returns d/d input.
inline Vec mlp_backward(const std::vector<Dense>& layers, const MlpTrace& t, Vec g, std::vector<Dense>& grads) {
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Vec& y = t.acts[k + 1];
    for (std::size_t r = 0; r < g.size(); ++r) g[r] *= 1.0 - y[r] * y[r];
    add_outer(grads[k].w, 1.0, g.span(), t.acts[k].span());
    axpy(1.0, g.span(), grads[k].b.span());
    g = matvec_t(layers[k].w, g.span());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Strategy { ensad, zero_shot, translate_test, mean_pool };

inline constexpr std::array<Strategy, 4> kAllStrategies = {Strategy::ensad, Strategy::zero_shot,
                                                           Strategy::translate_test, Strategy::mean_pool};

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::ensad: return "ensad";
    case Strategy::zero_shot: return "zero_shot";
    case Strategy::translate_test: return "translate_test";
    case Strategy::mean_pool: return "mean_pool";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  for (auto x : kAllStrategies)
    if (s == to_string(x)) return x;
  throw ValidationError("unknown strategy: " + s);
}

// Conditioning vector for one ensemble under the given fusion strategy.
inline Vec fuse(Strategy s, const Mat& h, const EnsAdParams& p, const EnsAdConfig& cfg) {
  switch (s) {
    case Strategy::ensad: return forward(p, cfg, h).fused;
    case Strategy::zero_shot: return fuse_select(h, 0);
    case Strategy::translate_test: return fuse_select(h, 1);
    case Strategy::mean_pool: return fuse_mean_pool(h);
  }
  throw ValidationError("bad strategy");
}

struct Trainable {
  bool ensad = true;
  bool generator = false;
  bool discriminator = true;
  bool operator==(const Trainable&) const = default;
};

struct GanConfig {
  std::size_t d = 512;  // condition dim, equals the adapter's d
  std::size_t d_z = 16;
  std::size_t d_img = 48;
  std::vector<std::size_t> gen_hidden{64, 64};
  std::vector<std::size_t> disc_hidden{64, 64};
  double tau = 0.5;
  double lambda1 = 4.0;
  double lambda2 = 2.0;
  double lr = 5e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::size_t batch = 16;
  std::size_t steps = 1000;
  std::size_t finetune_steps = 1000;  // phase-1 budget of the two-phase recipe
  Trainable trainable{};
  Strategy conditioning = Strategy::ensad;
  bool enable_clg = false;
  NoiseMix noise{};

  void validate() const {
    if (d == 0 || d_z == 0 || d_img == 0 || batch == 0) throw ValidationError("gan config: dims must be positive");
    if (disc_hidden.empty()) throw ValidationError("gan config: discriminator needs at least one hidden layer");
    for (auto w : gen_hidden)
      if (w == 0) throw ValidationError("gan config: zero-width generator layer");
    for (auto w : disc_hidden)
      if (w == 0) throw ValidationError("gan config: zero-width discriminator layer");
    if (!(tau > 0.0)) throw ValidationError("gan config: tau must be > 0");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ValidationError("gan config: lambdas must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("gan config: betas must lie in [0, 1)");
    if (!(lr > 0.0) || !(eps > 0.0)) throw ValidationError("gan config: lr and eps must be > 0");
    if (trainable.ensad && conditioning != Strategy::ensad)
      throw ValidationError("gan config: the adapter can only be trained with ensad conditioning");
    if (!(noise.source >= 0.0 && noise.source <= 1.0) || !(noise.translation >= 0.0 && noise.translation <= 1.0))
      throw ValidationError("gan config: noise weights must lie in [0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Generator and discriminator

struct ToyGanParams {
  std::vector<Dense> generator;      // (d + d_z) -> ... -> d_img
  std::vector<Dense> disc_backbone;  // d_img -> ... -> hidden
  Dense head_fd;                     // hidden -> d
  Dense head_ds;                     // hidden -> 1

  std::vector<std::span<double>> generator_tensors() {
    std::vector<std::span<double>> out;
    for (auto& l : generator) out.insert(out.end(), {l.w.span(), l.b.span()});
    return out;
  }
  std::vector<std::span<double>> discriminator_tensors() {
    std::vector<std::span<double>> out;
    for (auto& l : disc_backbone) out.insert(out.end(), {l.w.span(), l.b.span()});
    out.insert(out.end(), {head_fd.w.span(), head_fd.b.span(), head_ds.w.span(), head_ds.b.span()});
    return out;
  }
  bool operator==(const ToyGanParams&) const = default;
};

inline ToyGanParams zeros_like(const ToyGanParams& p) {
  ToyGanParams z;
  for (const auto& l : p.generator) z.generator.push_back(zeros_like(l));
  for (const auto& l : p.disc_backbone) z.disc_backbone.push_back(zeros_like(l));
  z.head_fd = zeros_like(p.head_fd);
  z.head_ds = zeros_like(p.head_ds);
  return z;
}

inline ToyGanParams init_gan(const GanConfig& cfg, SeededRng& rng) {
  cfg.validate();
  ToyGanParams p;
  std::size_t in = cfg.d + cfg.d_z;
  for (auto w : cfg.gen_hidden) {
    p.generator.push_back(init_dense(rng, w, in));
    in = w;
  }
  p.generator.push_back(init_dense(rng, cfg.d_img, in));
  in = cfg.d_img;
  for (auto w : cfg.disc_hidden) {
    p.disc_backbone.push_back(init_dense(rng, w, in));
    in = w;
  }
  p.head_fd = init_dense(rng, cfg.d, in);
  p.head_ds = init_dense(rng, 1, in);
  return p;
}

inline Vec concat(const Vec& a, const Vec& b) {
  Vec r(a.size() + b.size());
  std::copy(a.begin(), a.end(), r.begin());
  std::copy(b.begin(), b.end(), r.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return r;
}

inline MlpTrace generator_forward(const ToyGanParams& g, const Vec& cond, const Vec& z) {
  const std::size_t in = g.generator.front().in();
  if (cond.size() + z.size() != in) throw ValidationError("generate: condition/noise length mismatch");
  require_finite(cond.span(), "generate condition");
  require_finite(z.span(), "generate noise");
  return mlp_forward(g.generator, concat(cond, z));
}

// I_fake = G(h, z); the final tanh keeps entries in (-1, 1).
inline ImageVec generate(const ToyGanParams& g, const Vec& cond, const Vec& z) {
  return {generator_forward(g, cond, z).output()};
}

struct DiscEval {
  MlpTrace backbone;
  Vec fd;          // f_D(I)
  double ds = 0;   // D_s(I)
  double logit = 0;
};

inline DiscEval disc_eval(const ToyGanParams& p, const Vec& img, const Vec& cond) {
  if (img.size() != p.disc_backbone.front().in()) throw ValidationError("disc: image length mismatch");
  if (cond.size() != p.head_fd.out()) throw ValidationError("disc: condition length mismatch");
  DiscEval e;
  e.backbone = mlp_forward(p.disc_backbone, img);
  e.fd = p.head_fd.apply(e.backbone.output().span());
  e.ds = p.head_ds.apply(e.backbone.output().span())[0];
  e.logit = e.ds + dot(cond.span(), e.fd.span());
  return e;
}

struct DiscOutput {
  double logit;
  Vec fd;
};

// One backbone pass yields both the conditional logit and f_D(I).
inline DiscOutput disc_logit(const ToyGanParams& p, const ImageVec& img, const Vec& cond) {
  auto e = disc_eval(p, img.data, cond);
  return {e.logit, std::move(e.fd)};
}

inline Vec disc_features(const ToyGanParams& p, const Vec& img) {
  if (img.size() != p.disc_backbone.front().in()) throw ValidationError("disc: image length mismatch");
  return p.head_fd.apply(mlp_forward(p.disc_backbone, img).output().span());
}

// Backprop (d logit-side gradients) through the heads and backbone. Adds into
// `grads` when non-null and returns d/d image.
inline Vec disc_backward(const ToyGanParams& p, const DiscEval& e, const Vec& g_fd, double g_ds, ToyGanParams* grads) {
  const Vec& hid = e.backbone.output();
  Vec g_hid = matvec_t(p.head_fd.w, g_fd.span());
  axpy(g_ds, p.head_ds.w.row(0), g_hid.span());
  if (grads) {
    add_outer(grads->head_fd.w, 1.0, g_fd.span(), hid.span());
    axpy(1.0, g_fd.span(), grads->head_fd.b.span());
    axpy(g_ds, hid.span(), grads->head_ds.w.row(0));
    grads->head_ds.b[0] += g_ds;
    return mlp_backward(p.disc_backbone, e.backbone, std::move(g_hid), grads->disc_backbone);
  }
  std::vector<Dense> scratch;
  for (const auto& l : p.disc_backbone) scratch.push_back(zeros_like(l));
  return mlp_backward(p.disc_backbone, e.backbone, std::move(g_hid), scratch);
}

// ---------------------------------------------------------------------------
// Losses

// -(1/n) sum log sigmoid(fake), as mean softplus(-fake).
inline double loss_adv_ensad(std::span<const double> logits_fake) {
  if (logits_fake.empty()) throw ValidationError("loss_adv_ensad: empty batch");
  double s = 0.0;
  for (double x : logits_fake) s += softplus(-x);
  return s / static_cast<double>(logits_fake.size());
}

// -(1/n) sum log sigmoid(real) - (1/n) sum log(1 - sigmoid(fake)).
inline double loss_adv_disc(std::span<const double> logits_real, std::span<const double> logits_fake) {
  if (logits_real.empty() || logits_real.size() != logits_fake.size())
    throw ValidationError("loss_adv_disc: batch size mismatch");
  double s = 0.0;
  for (double x : logits_real) s += softplus(-x);
  for (double x : logits_fake) s += softplus(x);
  return s / static_cast<double>(logits_real.size());
}

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<Vec> grad_anchors;
  std::vector<Vec> grad_positives;
};

// With S[j][i] = cos(anchor_j, positive_i):
//   L = -(1/n) sum_i log( exp(S[i][i]/tau) / sum_j exp(S[j][i]/tau) )
// i.e. each positive column is normalized over all anchors.
inline ContrastiveResult contrastive_with_grad(const std::vector<Vec>& anchors, const std::vector<Vec>& positives,
                                               double tau) {
  const std::size_t n = anchors.size();
  if (n == 0 || positives.size() != n) throw ValidationError("contrastive: list lengths must match and be >= 1");
  if (!(tau > 0.0)) throw ValidationError("contrastive: tau must be > 0");

  std::vector<double> an(n), pn(n);
  std::vector<Vec> ah(n), ph(n);
  for (std::size_t k = 0; k < n; ++k) {
    an[k] = norm(anchors[k].span());
    pn[k] = norm(positives[k].span());
    ah[k] = an[k] < kZeroNorm ? Vec(anchors[k].size()) : (1.0 / an[k]) * anchors[k];
    ph[k] = pn[k] < kZeroNorm ? Vec(positives[k].size()) : (1.0 / pn[k]) * positives[k];
  }
  Mat sim(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) sim(j, i) = dot(ah[j].span(), ph[i].span());

  ContrastiveResult r;
  Mat g_sim(n, n);  // dL/dS
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, sim(j, i) / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(sim(j, i) / tau - mx);
    const double lse = mx + std::log(z);
    r.loss -= inv_n * (sim(i, i) / tau - lse);
    for (std::size_t j = 0; j < n; ++j) {
      const double pji = std::exp(sim(j, i) / tau - lse);
      g_sim(j, i) = inv_n * (pji - (i == j ? 1.0 : 0.0)) / tau;
    }
  }

  // dcos(a, p)/da = (p^ - cos a^) / |a|; zero at the zero vector.
  r.grad_anchors.assign(n, Vec(anchors[0].size()));
  r.grad_positives.assign(n, Vec(positives[0].size()));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = g_sim(j, i);
      if (g == 0.0) continue;
      if (an[j] >= kZeroNorm) {
        axpy(g / an[j], ph[i].span(), r.grad_anchors[j].span());
        axpy(-g * sim(j, i) / an[j], ah[j].span(), r.grad_anchors[j].span());
      }
      if (pn[i] >= kZeroNorm) {
        axpy(g / pn[i], ah[j].span(), r.grad_positives[i].span());
        axpy(-g * sim(j, i) / pn[i], ph[i].span(), r.grad_positives[i].span());
      }
    }
  }
  return r;
}

inline double loss_contrastive(const std::vector<Vec>& anchors, const std::vector<Vec>& positives, double tau) {
  return contrastive_with_grad(anchors, positives, tau).loss;
}

// Component losses of one step. cl_d is evaluated on fake features for the
// adapter objective and on real features for the discriminator objective.
struct LossParts {
  double ad_ensad = 0.0;
  double ad_disc = 0.0;
  double cl = 0.0;
  double cl_d_fake = 0.0;
  double cl_d_real = 0.0;
  double cl_g = 0.0;
};

struct LossTotals {
  double ensad = 0.0;
  double disc = 0.0;
};

// L_EnsAd = L_AD + l1 L_CL + l2 L_CL^D and L_D likewise. With enable_clg the
// L_CL slot is taken by L_CL^G.
inline LossTotals total_losses(const LossParts& p, double lambda1, double lambda2, bool enable_clg) {
  const double cl = enable_clg ? p.cl_g : p.cl;
  return {p.ad_ensad + lambda1 * cl + lambda2 * p.cl_d_fake, p.ad_disc + lambda1 * cl + lambda2 * p.cl_d_real};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;

  template <class Span>
  static AdamState like(const std::vector<Span>& tensors) {
    AdamState s;
    for (const auto& x : tensors) {
      s.m.emplace_back(x.size(), 0.0);
      s.v.emplace_back(x.size(), 0.0);
    }
    return s;
  }
  bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam update in place.
inline void adam_step(const std::vector<std::span<double>>& params, const std::vector<std::span<double>>& grads,
                      AdamState& st, const AdamHyper& h) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw ValidationError("adam_step: tensor count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].size() != grads[k].size() || params[k].size() != st.m[k].size())
      throw ValidationError("adam_step: tensor shape mismatch");

  ++st.t;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = st.m[k];
    auto& v = st.v[k];
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k][i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[k][i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// One training batch: losses and gradients

// Stand-in for the CLIP image encoder in the L_CL^G variant: a fixed linear
// map from image space to condition space, independent of the training seed.
inline Mat proxy_visual_encoder(std::size_t d, std::size_t d_img) {
  SeededRng rng(0xC1F0'5EEDULL);
  return gaussian_mat(rng, d, d_img, 1.0 / std::sqrt(static_cast<double>(d_img)));
}

struct BatchInputs {
  std::vector<Mat> ensembles;  // H per item
  std::vector<Vec> noise;      // z per item
  std::vector<Vec> real;       // real image per item
};

struct BatchEval {
  LossParts parts;
  LossTotals totals;
  std::optional<EnsAdParams> grad_ensad;     // d L_EnsAd / d adapter
  std::optional<ToyGanParams> grad_gen;      // d L_EnsAd / d generator (generator fields only)
  std::optional<ToyGanParams> grad_disc;     // d L_D / d discriminator (disc fields only)
};

struct GradRequest {
  bool ensad = false;
  bool generator = false;
  bool discriminator = false;
};

inline BatchEval evaluate_batch(const EnsAdParams& ep, const EnsAdConfig& ecfg, const ToyGanParams& gp,
                                const GanConfig& gcfg, const BatchInputs& in, GradRequest want) {
  const std::size_t n = in.ensembles.size();
  if (n == 0 || in.noise.size() != n || in.real.size() != n) throw ValidationError("evaluate_batch: ragged batch");
  const bool use_adapter = gcfg.conditioning == Strategy::ensad;
  if (want.ensad && !use_adapter) throw ValidationError("evaluate_batch: adapter gradient needs ensad conditioning");

  std::vector<ForwardTrace> traces;
  std::vector<Vec> cond(n);
  std::vector<MlpTrace> gen(n);
  std::vector<DiscEval> dfake(n), dreal(n);
  std::vector<Vec> fake(n), fd_fake(n), fd_real(n);
  std::vector<double> lf(n), lr(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (use_adapter) {
      traces.push_back(forward(ep, ecfg, in.ensembles[i]));
      cond[i] = traces.back().fused;
    } else {
      cond[i] = fuse(gcfg.conditioning, in.ensembles[i], ep, ecfg);
    }
    gen[i] = generator_forward(gp, cond[i], in.noise[i]);
    fake[i] = gen[i].output();
    dfake[i] = disc_eval(gp, fake[i], cond[i]);
    dreal[i] = disc_eval(gp, in.real[i], cond[i]);
    fd_fake[i] = dfake[i].fd;
    fd_real[i] = dreal[i].fd;
    lf[i] = dfake[i].logit;
    lr[i] = dreal[i].logit;
  }

  BatchEval out;
  auto& parts = out.parts;
  parts.ad_ensad = loss_adv_ensad(lf);
  parts.ad_disc = loss_adv_disc(lr, lf);

  // Terms with zero weight are skipped and reported as exactly zero.
  std::optional<ContrastiveResult> cl, cl_g, cld_fake, cld_real;
  std::vector<Vec> proxy_feats;
  Mat proxy;
  if (gcfg.lambda1 > 0.0 && !gcfg.enable_clg) {
    cl = contrastive_with_grad(fd_real, fd_fake, gcfg.tau);
    parts.cl = cl->loss;
  }
  if (gcfg.lambda1 > 0.0 && gcfg.enable_clg) {
    proxy = proxy_visual_encoder(gcfg.d, gcfg.d_img);
    for (const auto& f : fake) proxy_feats.push_back(matvec(proxy, f.span()));
    cl_g = contrastive_with_grad(proxy_feats, cond, gcfg.tau);
    parts.cl_g = cl_g->loss;
  }
  if (gcfg.lambda2 > 0.0) {
    cld_fake = contrastive_with_grad(fd_fake, cond, gcfg.tau);
    cld_real = contrastive_with_grad(fd_real, cond, gcfg.tau);
    parts.cl_d_fake = cld_fake->loss;
    parts.cl_d_real = cld_real->loss;
  }
  out.totals = total_losses(parts, gcfg.lambda1, gcfg.lambda2, gcfg.enable_clg);
  const double inv_n = 1.0 / static_cast<double>(n);

  // Adapter / generator objective, discriminator held fixed.
  if (want.ensad || want.generator) {
    EnsAdParams g_ep = EnsAdParams::zeros(ecfg);
    ToyGanParams g_gp = zeros_like(gp);
    for (std::size_t i = 0; i < n; ++i) {
      const double g_lf = -sigmoid(-lf[i]) * inv_n;
      Vec g_cond = g_lf * fd_fake[i];
      Vec g_fd = g_lf * cond[i];
      Vec g_fake(gcfg.d_img);
      if (cl) axpy(gcfg.lambda1, cl->grad_positives[i].span(), g_fd.span());
      if (cld_fake) {
        axpy(gcfg.lambda2, cld_fake->grad_anchors[i].span(), g_fd.span());
        axpy(gcfg.lambda2, cld_fake->grad_positives[i].span(), g_cond.span());
      }
      if (cl_g) {
        axpy(gcfg.lambda1, matvec_t(proxy, cl_g->grad_anchors[i].span()).span(), g_fake.span());
        axpy(gcfg.lambda1, cl_g->grad_positives[i].span(), g_cond.span());
      }
      axpy(1.0, disc_backward(gp, dfake[i], g_fd, g_lf, nullptr).span(), g_fake.span());
      const Vec g_in = mlp_backward(gp.generator, gen[i], std::move(g_fake), g_gp.generator);
      for (std::size_t k = 0; k < gcfg.d; ++k) g_cond[k] += g_in[k];
      if (want.ensad) {
        const auto g = backward(ep, ecfg, traces[i], g_cond);
        auto dst = g_ep.tensors();
        auto src = g.params.tensors();
        for (std::size_t k = 0; k < dst.size(); ++k) axpy(1.0, src[k], dst[k]);
      }
    }
    if (want.ensad) out.grad_ensad = std::move(g_ep);
    if (want.generator) out.grad_gen = std::move(g_gp);
  }

  // Discriminator objective; conditions and fakes are constants here.
  if (want.discriminator) {
    ToyGanParams g_dp = zeros_like(gp);
    for (std::size_t i = 0; i < n; ++i) {
      const double g_lr = -sigmoid(-lr[i]) * inv_n;
      Vec g_fdr = g_lr * cond[i];
      if (cl) axpy(gcfg.lambda1, cl->grad_anchors[i].span(), g_fdr.span());
      if (cld_real) axpy(gcfg.lambda2, cld_real->grad_anchors[i].span(), g_fdr.span());
      disc_backward(gp, dreal[i], g_fdr, g_lr, &g_dp);

      const double g_lf = sigmoid(lf[i]) * inv_n;
      Vec g_fdf = g_lf * cond[i];
      if (cl) axpy(gcfg.lambda1, cl->grad_positives[i].span(), g_fdf.span());
      disc_backward(gp, dfake[i], g_fdf, g_lf, &g_dp);
    }
    out.grad_disc = std::move(g_dp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training state and loop

struct TrainState {
  EnsAdConfig ensad_cfg;
  GanConfig gan_cfg;
  EnsAdParams ensad;
  ToyGanParams gan;
  AdamState adam_ensad, adam_gen, adam_disc;
  SeededRng rng;
  std::uint64_t step = 0;

  bool operator==(const TrainState& o) const {
    return ensad == o.ensad && gan == o.gan && adam_ensad == o.adam_ensad && adam_gen == o.adam_gen &&
           adam_disc == o.adam_disc && rng.seed() == o.rng.seed() && rng.position() == o.rng.position() &&
           step == o.step;
  }
};

using Checkpoint = TrainState;

inline void reset_optimizers(TrainState& s) {
  s.adam_ensad = AdamState::like(s.ensad.tensors());
  s.adam_gen = AdamState::like(s.gan.generator_tensors());
  s.adam_disc = AdamState::like(s.gan.discriminator_tensors());
}

inline void check_compatible(const Dataset& ds, const EnsAdConfig& ecfg, const GanConfig& gcfg) {
  validate_dataset(ds);
  if (ds.d != ecfg.d || ds.m != ecfg.m || ds.d_img != gcfg.d_img || gcfg.d != ecfg.d)
    throw ValidationError("dataset dims (d=" + std::to_string(ds.d) + ", m=" + std::to_string(ds.m) +
                          ", d_img=" + std::to_string(ds.d_img) + ") do not match the model config (d=" +
                          std::to_string(ecfg.d) + ", m=" + std::to_string(ecfg.m) +
                          ", d_img=" + std::to_string(gcfg.d_img) + ")");
}

// Fresh state; the adapter and GAN weights are the first draws of the seed.
inline TrainState init_state(const EnsAdConfig& ecfg, const GanConfig& gcfg, std::uint64_t seed) {
  ecfg.validate();
  gcfg.validate();
  if (gcfg.d != ecfg.d) throw ValidationError("gan config d must equal adapter d");
  TrainState s{ecfg, gcfg, {}, {}, {}, {}, {}, SeededRng(seed), 0};
  s.ensad = init_params(ecfg, s.rng);
  s.gan = init_gan(gcfg, s.rng);
  reset_optimizers(s);
  return s;
}

struct LossRecord {
  std::uint64_t step = 0;
  LossTotals totals;
  LossParts parts;
};

inline void write_loss_csv_header(std::ostream& os) {
  os << "step,loss_ensad,loss_disc,l_ad_ensad,l_ad_d,l_cl,l_cl_d,l_cl_g\n";
}

// l_cl_d is the adapter-side (fake-feature) value.
inline void write_loss_csv_row(std::ostream& os, const LossRecord& r) {
  auto f = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  os << r.step << ',' << f(r.totals.ensad) << ',' << f(r.totals.disc) << ',' << f(r.parts.ad_ensad) << ','
     << f(r.parts.ad_disc) << ',' << f(r.parts.cl) << ',' << f(r.parts.cl_d_fake) << ',' << f(r.parts.cl_g) << '\n';
}

// Thrown when a loss goes non-finite; carries the state before the failing
// update so it can be written out for diagnosis.
struct TrainingAborted : NumericalError {
  TrainingAborted(const std::string& msg, TrainState s) : NumericalError(msg), state(std::move(s)) {}
  TrainState state;
};

inline BatchInputs draw_batch(TrainState& s, const Dataset& ds) {
  const BatchSampler sampler(ds.size(), s.gan_cfg.batch);
  BatchInputs in;
  for (auto idx : sampler.next(s.rng)) {
    const auto& item = ds.items[idx];
    in.ensembles.push_back(augment_noise(item.text, s.gan_cfg.noise, s.rng).matrix());
    in.noise.push_back(gaussian(s.rng, s.gan_cfg.d_z));
    in.real.push_back(item.image.data);
  }
  return in;
}

// One iteration: sample, forward, then update the adapter/generator side and
// the discriminator side from the same forward pass.
inline LossRecord train_step(TrainState& s, const Dataset& ds) {
  const auto& g = s.gan_cfg;
  const TrainState before = s;
  const BatchInputs in = draw_batch(s, ds);
  const GradRequest want{g.trainable.ensad, g.trainable.generator, g.trainable.discriminator};
  BatchEval ev;
  try {
    ev = evaluate_batch(s.ensad, s.ensad_cfg, s.gan, g, in, want);
  } catch (const NumericalError& e) {
    throw TrainingAborted("step " + std::to_string(s.step + 1) + ": " + e.what(), before);
  }

  const LossRecord rec{s.step + 1, ev.totals, ev.parts};
  const auto& p = ev.parts;
  if (!std::isfinite(ev.totals.ensad) || !std::isfinite(ev.totals.disc) ||
      !all_finite(std::array{p.ad_ensad, p.ad_disc, p.cl, p.cl_d_fake, p.cl_d_real, p.cl_g}))
    throw TrainingAborted("non-finite loss at step " + std::to_string(rec.step), before);

  const AdamHyper h{g.lr, g.beta1, g.beta2, g.eps};
  if (ev.grad_ensad) adam_step(s.ensad.tensors(), ev.grad_ensad->tensors(), s.adam_ensad, h);
  if (ev.grad_gen) adam_step(s.gan.generator_tensors(), ev.grad_gen->generator_tensors(), s.adam_gen, h);
  if (ev.grad_disc) adam_step(s.gan.discriminator_tensors(), ev.grad_disc->discriminator_tensors(), s.adam_disc, h);
  s.step = rec.step;
  return rec;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> log;
};

// Runs `steps` iterations starting from `state`.
inline TrainResult continue_training(TrainState state, const Dataset& ds, std::size_t steps) {
  check_compatible(ds, state.ensad_cfg, state.gan_cfg);
  TrainResult r{std::move(state), {}};
  r.log.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) r.log.push_back(train_step(r.checkpoint, ds));
  return r;
}

inline TrainResult train(const Dataset& ds, const EnsAdConfig& ecfg, const GanConfig& gcfg, std::uint64_t seed) {
  check_compatible(ds, ecfg, gcfg);
  return continue_training(init_state(ecfg, gcfg, seed), ds, gcfg.steps);
}

// Starts a new run from trained weights: fresh optimizers, a new RNG stream
// and step 0, under a possibly different trainable set or conditioning.
inline TrainState warm_start(const TrainState& from, const GanConfig& gcfg, std::uint64_t seed) {
  gcfg.validate();
  const auto& a = from.gan_cfg;
  if (gcfg.d != a.d || gcfg.d_z != a.d_z || gcfg.d_img != a.d_img || gcfg.gen_hidden != a.gen_hidden ||
      gcfg.disc_hidden != a.disc_hidden)
    throw ValidationError("warm start: GAN architecture differs from the initial checkpoint");
  TrainState s = from;
  s.gan_cfg = gcfg;
  s.rng = SeededRng(seed);
  s.step = 0;
  reset_optimizers(s);
  return s;
}

// Two-phase recipe: fine-tune G (and D) on source-embedding conditioning, then
// train the adapter against the fine-tuned G while the discriminator restarts
// from its pre-fine-tuning weights.
inline TrainState phase_two_start(const TrainState& phase1_end, const ToyGanParams& disc_snapshot,
                                  const GanConfig& gcfg) {
  TrainState s = phase1_end;
  s.gan.disc_backbone = disc_snapshot.disc_backbone;
  s.gan.head_fd = disc_snapshot.head_fd;
  s.gan.head_ds = disc_snapshot.head_ds;
  s.gan_cfg = gcfg;
  s.gan_cfg.conditioning = Strategy::ensad;
  s.gan_cfg.trainable = {true, false, true};
  reset_optimizers(s);
  return s;
}

inline TrainResult finetune_pipeline(const Dataset& ds, const EnsAdConfig& ecfg, const GanConfig& gcfg,
                                     std::uint64_t seed, std::optional<TrainState> start = std::nullopt) {
  check_compatible(ds, ecfg, gcfg);
  GanConfig phase1 = gcfg;
  phase1.conditioning = Strategy::zero_shot;
  phase1.trainable = {false, true, true};
  TrainState s = start ? *start : init_state(ecfg, phase1, seed);
  s.gan_cfg = phase1;
  if (start) reset_optimizers(s);
  const ToyGanParams snapshot = s.gan;

  TrainResult r1 = continue_training(std::move(s), ds, gcfg.finetune_steps);
  TrainResult r2 = continue_training(phase_two_start(r1.checkpoint, snapshot, gcfg), ds, gcfg.steps);
  r1.log.insert(r1.log.end(), r2.log.begin(), r2.log.end());
  return {std::move(r2.checkpoint), std::move(r1.log)};
}

}  // namespace ensad
