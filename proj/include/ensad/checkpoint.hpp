#pragma once

// Checkpoint file: one JSON document holding configs, all weights, optimizer
// moments, the RNG stream position and the step counter. Doubles are written
// in shortest round-trip form so a reload resumes bit-identically.

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "ensad/config.hpp"
#include "ensad/gan.hpp"

namespace ensad {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline Mat mat_from_json(const json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw ValidationError("checkpoint: " + what + " has wrong row count");
  Mat m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto v = j[r].get<std::vector<double>>();
    if (v.size() != cols) throw ValidationError("checkpoint: " + what + " has wrong column count");
    std::copy(v.begin(), v.end(), m.row(r).begin());
  }
  return m;
}

inline Vec vec_from_json(const json& j, std::size_t n, const std::string& what) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != n) throw ValidationError("checkpoint: " + what + " has wrong length");
  return Vec(std::move(v));
}

inline json dense_to_json(const Dense& l) { return {{"w", mat_to_json(l.w)}, {"b", l.b.values()}}; }

inline Dense dense_from_json(const json& j, std::size_t out, std::size_t in, const std::string& what) {
  return {mat_from_json(j.at("w"), out, in, what + ".w"), vec_from_json(j.at("b"), out, what + ".b")};
}

inline json adam_to_json(const AdamState& s) { return {{"t", s.t}, {"m", s.m}, {"v", s.v}}; }

inline AdamState adam_from_json(const json& j, const AdamState& shape, const std::string& what) {
  AdamState s;
  s.t = j.at("t").get<std::uint64_t>();
  s.m = j.at("m").get<std::vector<std::vector<double>>>();
  s.v = j.at("v").get<std::vector<std::vector<double>>>();
  if (s.m.size() != shape.m.size() || s.v.size() != shape.v.size())
    throw ValidationError("checkpoint: adam." + what + " tensor count mismatch");
  for (std::size_t k = 0; k < s.m.size(); ++k)
    if (s.m[k].size() != shape.m[k].size() || s.v[k].size() != shape.v[k].size())
      throw ValidationError("checkpoint: adam." + what + " tensor shape mismatch");
  return s;
}

}  // namespace detail

inline json checkpoint_to_json(const Checkpoint& c) {
  json params;
  json& e = params["ensad"];
  e["wq"] = detail::mat_to_json(c.ensad.wq);
  e["wk"] = detail::mat_to_json(c.ensad.wk);
  e["wv"] = detail::mat_to_json(c.ensad.wv);
  e["b"] = c.ensad.b.values();
  e["wp"] = detail::mat_to_json(c.ensad.wp);
  e["bp"] = c.ensad.bp;
  e["wo"] = detail::mat_to_json(c.ensad.wo);
  for (const auto& l : c.gan.generator) params["generator"].push_back(detail::dense_to_json(l));
  for (const auto& l : c.gan.disc_backbone) params["disc_backbone"].push_back(detail::dense_to_json(l));
  params["head_fd"] = detail::dense_to_json(c.gan.head_fd);
  params["head_ds"] = detail::dense_to_json(c.gan.head_ds);

  return {{"version", kCheckpointVersion},
          {"configs", {{"ensad", to_json(c.ensad_cfg)}, {"gan", to_json(c.gan_cfg)}}},
          {"params", params},
          {"adam",
           {{"ensad", detail::adam_to_json(c.adam_ensad)},
            {"generator", detail::adam_to_json(c.adam_gen)},
            {"discriminator", detail::adam_to_json(c.adam_disc)}}},
          {"rng", {{"algorithm", SeededRng::kAlgorithm}, {"seed", c.rng.seed()}, {"position", c.rng.position()}}},
          {"step", c.step}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) throw ValidationError("checkpoint: unsupported version");
    const auto& rng = j.at("rng");
    if (rng.at("algorithm").get<std::string>() != SeededRng::kAlgorithm)
      throw ValidationError("checkpoint: unsupported rng algorithm");

    const EnsAdConfig ecfg = ensad_config_from_json(j.at("configs").at("ensad"));
    const GanConfig gcfg = gan_config_from_json(j.at("configs").at("gan"), GanConfig{}, true);
    if (gcfg.d != ecfg.d) throw ValidationError("checkpoint: gan.d differs from ensad.d");

    Checkpoint c;
    c.ensad_cfg = ecfg;
    c.gan_cfg = gcfg;
    const auto& p = j.at("params");
    const auto& e = p.at("ensad");
    c.ensad.wq = detail::mat_from_json(e.at("wq"), ecfg.d_hid, ecfg.d, "wq");
    c.ensad.wk = detail::mat_from_json(e.at("wk"), ecfg.d_hid, ecfg.d, "wk");
    c.ensad.wv = detail::mat_from_json(e.at("wv"), ecfg.d_hid, ecfg.d, "wv");
    c.ensad.b = detail::vec_from_json(e.at("b"), ecfg.d_hid, "b");
    c.ensad.wp = detail::mat_from_json(e.at("wp"), 1, ecfg.d_hid, "wp");
    c.ensad.bp = e.at("bp").get<double>();
    c.ensad.wo = detail::mat_from_json(e.at("wo"), ecfg.d, ecfg.d, "wo");

    const auto& gen = p.at("generator");
    if (gen.size() != gcfg.gen_hidden.size() + 1) throw ValidationError("checkpoint: generator depth mismatch");
    std::size_t in = gcfg.d + gcfg.d_z;
    for (std::size_t k = 0; k < gen.size(); ++k) {
      const std::size_t out = k < gcfg.gen_hidden.size() ? gcfg.gen_hidden[k] : gcfg.d_img;
      c.gan.generator.push_back(detail::dense_from_json(gen[k], out, in, "generator"));
      in = out;
    }
    const auto& bb = p.at("disc_backbone");
    if (bb.size() != gcfg.disc_hidden.size()) throw ValidationError("checkpoint: discriminator depth mismatch");
    in = gcfg.d_img;
    for (std::size_t k = 0; k < bb.size(); ++k) {
      c.gan.disc_backbone.push_back(detail::dense_from_json(bb[k], gcfg.disc_hidden[k], in, "disc_backbone"));
      in = gcfg.disc_hidden[k];
    }
    c.gan.head_fd = detail::dense_from_json(p.at("head_fd"), gcfg.d, in, "head_fd");
    c.gan.head_ds = detail::dense_from_json(p.at("head_ds"), 1, in, "head_ds");

    for (auto s : c.ensad.tensors()) require_finite(s, "checkpoint ensad params");
    for (auto s : c.gan.generator_tensors()) require_finite(s, "checkpoint generator params");
    for (auto s : c.gan.discriminator_tensors()) require_finite(s, "checkpoint discriminator params");

    const auto& adam = j.at("adam");
    c.adam_ensad = detail::adam_from_json(adam.at("ensad"), AdamState::like(c.ensad.tensors()), "ensad");
    c.adam_gen = detail::adam_from_json(adam.at("generator"), AdamState::like(c.gan.generator_tensors()), "generator");
    c.adam_disc = detail::adam_from_json(adam.at("discriminator"), AdamState::like(c.gan.discriminator_tensors()),
                                         "discriminator");
    c.rng = SeededRng(rng.at("seed").get<std::uint64_t>(), rng.at("position").get<std::uint64_t>());
    c.step = j.at("step").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

inline std::string checkpoint_dump(const Checkpoint& c) { return checkpoint_to_json(c).dump(); }

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace ensad
