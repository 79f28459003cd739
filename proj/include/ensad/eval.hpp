#pragma once

// Frechet distance between Gaussians fitted to feature sets, and the
// strategy comparison that scores each fusion method against real images in
// the discriminator's f_D feature space.

#include <algorithm>
#include <cstdint>
#include <future>
#include <string>
#include <vector>

#include "json.hpp"

#include "ensad/gan.hpp"
#include "ensad/numkit.hpp"

namespace ensad {

struct FrechetStats {
  Vec mu;
  Mat sigma;
  std::size_t n = 0;
};

// Sample mean and unbiased (n - 1) covariance.
inline FrechetStats fit_gaussian(const std::vector<Vec>& features) {
  const std::size_t n = features.size();
  if (n < 2) throw ValidationError("fit_gaussian: need at least 2 samples");
  const std::size_t k = features[0].size();
  if (k == 0) throw ValidationError("fit_gaussian: empty feature vectors");
  FrechetStats st{Vec(k), Mat(k, k), n};
  for (const auto& f : features) {
    if (f.size() != k) throw ValidationError("fit_gaussian: ragged features");
    axpy(1.0, f.span(), st.mu.span());
  }
  for (auto& x : st.mu) x /= static_cast<double>(n);
  for (const auto& f : features) {
    const Vec c = f - st.mu;
    add_outer(st.sigma, 1.0 / static_cast<double>(n - 1), c.span(), c.span());
  }
  // Exact symmetry.
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) st.sigma(j, i) = st.sigma(i, j);
  return st;
}

struct FrechetResult {
  double value = 0.0;  // clamped at zero
  double raw = 0.0;
};

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the cross term
// computed as Tr sqrt(S_a^{1/2} S_b S_a^{1/2}). Results in [-1e-6, 0) clamp
// to zero; anything more negative is a numerical failure.
inline FrechetResult frechet_distance_detail(const FrechetStats& a, const FrechetStats& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != b.sigma.rows())
    throw ValidationError("frechet_distance: dimension mismatch");
  const Vec dmu = a.mu - b.mu;
  const Mat ra = sym_sqrt_psd(a.sigma);
  const Mat cross = sym_sqrt_psd(matmul(matmul(ra, b.sigma), ra));
  const double raw = dot(dmu.span(), dmu.span()) + trace(a.sigma) + trace(b.sigma) - 2.0 * trace(cross);
  if (!std::isfinite(raw)) throw NumericalError("frechet_distance: non-finite result");
  if (raw < -1e-6) throw NumericalError("frechet_distance: negative distance " + std::to_string(raw));
  return {std::max(raw, 0.0), raw};
}

inline double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  return frechet_distance_detail(a, b).value;
}

// ---------------------------------------------------------------------------
// Strategy evaluation

inline constexpr const char* kFeatureSpace = "disc_fd";

inline std::vector<Vec> real_features(const Checkpoint& ckpt, const Dataset& ds) {
  std::vector<Vec> out;
  out.reserve(ds.size());
  for (const auto& it : ds.items) out.push_back(disc_features(ckpt.gan, it.image.data));
  return out;
}

// Fake features for n_gen conditioning texts drawn with replacement. Every
// strategy given the same seed sees the same items and the same noise.
inline std::vector<Vec> fake_features(const Checkpoint& ckpt, const Dataset& ds, std::size_t n_gen, Strategy strategy,
                                      std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Vec> out;
  out.reserve(n_gen);
  for (std::size_t k = 0; k < n_gen; ++k) {
    const auto& item = ds.items[rng.uniform_index(ds.size())];
    const Vec z = gaussian(rng, ckpt.gan_cfg.d_z);
    const Vec cond = fuse(strategy, item.text.matrix(), ckpt.ensad, ckpt.ensad_cfg);
    out.push_back(disc_features(ckpt.gan, generate(ckpt.gan, cond, z).data));
  }
  return out;
}

inline void check_eval_inputs(const Checkpoint& ckpt, const Dataset& ds, std::size_t n_gen) {
  if (n_gen < 2) throw ValidationError("n_gen must be >= 2");
  check_compatible(ds, ckpt.ensad_cfg, ckpt.gan_cfg);
  if (ds.size() < 2) throw ValidationError("evaluation needs at least 2 real items");
}

inline FrechetResult evaluate_detail(const Checkpoint& ckpt, const Dataset& ds, std::size_t n_gen, Strategy strategy,
                                     std::uint64_t seed, const FrechetStats* real = nullptr) {
  check_eval_inputs(ckpt, ds, n_gen);
  const FrechetStats fake = fit_gaussian(fake_features(ckpt, ds, n_gen, strategy, seed));
  if (real) return frechet_distance_detail(fake, *real);
  return frechet_distance_detail(fake, fit_gaussian(real_features(ckpt, ds)));
}

inline double evaluate(const Checkpoint& ckpt, const Dataset& ds, std::size_t n_gen, Strategy strategy,
                       std::uint64_t seed) {
  return evaluate_detail(ckpt, ds, n_gen, strategy, seed).value;
}

struct EvalRow {
  Strategy strategy;
  double fd = 0.0;
  double fd_raw = 0.0;
};

struct EvalReport {
  std::string feature_space = kFeatureSpace;
  std::size_t n_gen = 0;
  std::uint64_t seed = 0;
  std::vector<EvalRow> results;  // one per strategy, in kAllStrategies order

  double fd(Strategy s) const {
    for (const auto& r : results)
      if (r.strategy == s) return r.fd;
    throw ValidationError(std::string("report has no row for ") + to_string(s));
  }
};

// Evaluates all four strategies. `threads` caps the number of strategies run
// concurrently; results do not depend on it.
inline EvalReport compare_strategies(const Checkpoint& ckpt, const Dataset& ds, std::size_t n_gen, std::uint64_t seed,
                                     unsigned threads = 1) {
  check_eval_inputs(ckpt, ds, n_gen);
  const FrechetStats real = fit_gaussian(real_features(ckpt, ds));
  EvalReport rep{kFeatureSpace, n_gen, seed, {}};
  rep.results.resize(kAllStrategies.size());
  const std::size_t width = std::max(1u, threads);
  for (std::size_t start = 0; start < kAllStrategies.size(); start += width) {
    std::vector<std::future<FrechetResult>> jobs;
    const std::size_t end = std::min(start + width, kAllStrategies.size());
    for (std::size_t k = start; k < end; ++k) {
      const auto policy = width > 1 ? std::launch::async : std::launch::deferred;
      jobs.push_back(std::async(policy, [&, k] { return evaluate_detail(ckpt, ds, n_gen, kAllStrategies[k], seed, &real); }));
    }
    for (std::size_t k = start; k < end; ++k) {
      const auto r = jobs[k - start].get();
      rep.results[k] = {kAllStrategies[k], r.value, r.raw};
    }
  }
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["feature_space"] = r.feature_space;
  j["n_gen"] = r.n_gen;
  j["seed"] = r.seed;
  j["sampling"] = "with_replacement";
  auto& rows = j["results"] = nlohmann::json::array();
  for (const auto& row : r.results)
    rows.push_back({{"strategy", to_string(row.strategy)}, {"fd", row.fd}, {"fd_raw", row.fd_raw}});
  return j;
}

}  // namespace ensad
