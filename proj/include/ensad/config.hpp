#pragma once

// JSON run configuration and training presets. Every section is optional and
// defaults to the reference hyperparameters; unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ensad/adapter.hpp"
#include "ensad/data.hpp"
#include "ensad/gan.hpp"

namespace ensad {

using nlohmann::json;

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ValidationError(section + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw ValidationError(section + ": unknown key '" + key + "'");
}

template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(section + "." + key + ": wrong type");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config <-> JSON

inline json to_json(const EnsAdConfig& c) {
  return {{"d", c.d}, {"d_hid", c.d_hid}, {"m", c.m}, {"alpha", c.alpha}, {"variant_v_equals_k", c.variant_v_equals_k}};
}

inline EnsAdConfig ensad_config_from_json(const json& j, EnsAdConfig c = {}) {
  const std::string sec = "ensad";
  detail::reject_unknown(j, {"d", "d_hid", "m", "alpha", "variant_v_equals_k"}, sec);
  detail::read_opt(j, "d", c.d, sec);
  detail::read_opt(j, "d_hid", c.d_hid, sec);
  detail::read_opt(j, "m", c.m, sec);
  detail::read_opt(j, "alpha", c.alpha, sec);
  detail::read_opt(j, "variant_v_equals_k", c.variant_v_equals_k, sec);
  c.validate();
  return c;
}

inline json trainable_to_json(const Trainable& t) {
  json a = json::array();
  if (t.ensad) a.push_back("ensad");
  if (t.generator) a.push_back("generator");
  if (t.discriminator) a.push_back("discriminator");
  return a;
}

inline Trainable trainable_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("gan.trainable: expected an array");
  Trainable t{false, false, false};
  for (const auto& x : j) {
    const auto s = x.is_string() ? x.get<std::string>() : std::string{};
    if (s == "ensad") t.ensad = true;
    else if (s == "generator") t.generator = true;
    else if (s == "discriminator") t.discriminator = true;
    else throw ValidationError("gan.trainable: unknown component '" + x.dump() + "'");
  }
  return t;
}

inline json to_json(const GanConfig& c) {
  return {{"d", c.d},
          {"d_z", c.d_z},
          {"d_img", c.d_img},
          {"gen_hidden", c.gen_hidden},
          {"disc_hidden", c.disc_hidden},
          {"tau", c.tau},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"batch", c.batch},
          {"steps", c.steps},
          {"finetune_steps", c.finetune_steps},
          {"trainable", trainable_to_json(c.trainable)},
          {"conditioning", to_string(c.conditioning)},
          {"enable_clg", c.enable_clg},
          {"noise_source", c.noise.source},
          {"noise_translation", c.noise.translation}};
}

// `d` is only accepted when allow_d is set (checkpoints); run configs take it
// from the adapter section.
inline GanConfig gan_config_from_json(const json& j, GanConfig c, bool allow_d) {
  const std::string sec = "gan";
  std::set<std::string> keys{"d_z",   "d_img", "gen_hidden", "disc_hidden",    "tau",       "lambda1",
                             "lambda2", "lr",  "beta1",      "beta2",          "eps",       "batch",
                             "steps", "finetune_steps", "trainable", "conditioning", "enable_clg",
                             "noise_source", "noise_translation"};
  if (allow_d) keys.insert("d");
  detail::reject_unknown(j, keys, sec);
  detail::read_opt(j, "d", c.d, sec);
  detail::read_opt(j, "d_z", c.d_z, sec);
  detail::read_opt(j, "d_img", c.d_img, sec);
  detail::read_opt(j, "gen_hidden", c.gen_hidden, sec);
  detail::read_opt(j, "disc_hidden", c.disc_hidden, sec);
  detail::read_opt(j, "tau", c.tau, sec);
  detail::read_opt(j, "lambda1", c.lambda1, sec);
  detail::read_opt(j, "lambda2", c.lambda2, sec);
  detail::read_opt(j, "lr", c.lr, sec);
  detail::read_opt(j, "beta1", c.beta1, sec);
  detail::read_opt(j, "beta2", c.beta2, sec);
  detail::read_opt(j, "eps", c.eps, sec);
  detail::read_opt(j, "batch", c.batch, sec);
  detail::read_opt(j, "steps", c.steps, sec);
  detail::read_opt(j, "finetune_steps", c.finetune_steps, sec);
  if (j.contains("trainable")) c.trainable = trainable_from_json(j["trainable"]);
  if (j.contains("conditioning")) {
    if (!j["conditioning"].is_string()) throw ValidationError("gan.conditioning: expected a string");
    c.conditioning = strategy_from_string(j["conditioning"].get<std::string>());
  }
  detail::read_opt(j, "enable_clg", c.enable_clg, sec);
  detail::read_opt(j, "noise_source", c.noise.source, sec);
  detail::read_opt(j, "noise_translation", c.noise.translation, sec);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Run configuration

struct EvalOptions {
  std::size_t n_gen = 1000;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticSpec synthetic;
  EnsAdConfig ensad;
  GanConfig gan;
  EvalOptions eval;
  json gan_explicit = json::object();  // keys the user set in the gan section
};

inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown(j, {"seed", "synthetic", "ensad", "gan", "eval"}, "config");
  RunConfig rc;
  detail::read_opt(j, "seed", rc.seed, "config");
  rc.ensad = ensad_config_from_json(j.value("ensad", json::object()));

  GanConfig g;
  g.d = rc.ensad.d;
  rc.gan_explicit = j.value("gan", json::object());
  rc.gan = gan_config_from_json(rc.gan_explicit, g, false);

  const json syn = j.value("synthetic", json::object());
  detail::reject_unknown(syn, {"n_items", "d", "m", "d_img", "sigma_source", "sigma_trans"}, "synthetic");
  rc.synthetic.d = rc.ensad.d;
  rc.synthetic.m = rc.ensad.m;
  rc.synthetic.d_img = rc.gan.d_img;
  detail::read_opt(syn, "n_items", rc.synthetic.n_items, "synthetic");
  detail::read_opt(syn, "sigma_source", rc.synthetic.sigma_source, "synthetic");
  detail::read_opt(syn, "sigma_trans", rc.synthetic.sigma_trans, "synthetic");
  for (auto [key, expected] : {std::pair{"d", rc.ensad.d}, {"m", rc.ensad.m}, {"d_img", rc.gan.d_img}}) {
    if (syn.contains(key) && syn[key] != expected)
      throw ValidationError(std::string("synthetic.") + key + " disagrees with the model config");
  }
  rc.synthetic.seed = rc.seed;
  rc.synthetic.validate();

  const json ev = j.value("eval", json::object());
  detail::reject_unknown(ev, {"n_gen"}, "eval");
  detail::read_opt(ev, "n_gen", rc.eval.n_gen, "eval");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: malformed JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Presets named after the experiment rows they reproduce

struct Preset {
  std::string name;
  json gan_patch;
  bool two_phase = false;
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = [] {
    const json adapter = {{"trainable", {"ensad", "discriminator"}}, {"conditioning", "ensad"}};
    auto with = [&adapter](json extra) {
      json p = adapter;
      p.update(extra);
      return p;
    };
    return std::vector<Preset>{
        {"ensad_frozen_g", adapter, false},
        {"finetune_g_text", {{"trainable", {"generator", "discriminator"}}, {"conditioning", "zero_shot"}}, false},
        {"finetune_g_meanpool", {{"trainable", {"generator", "discriminator"}}, {"conditioning", "mean_pool"}}, false},
        {"ensad_plus_finetune_g", adapter, true},
        {"ablate_no_cl", with({{"lambda1", 0.0}}), false},
        {"ablate_no_cld", with({{"lambda2", 0.0}}), false},
        {"ablate_none", with({{"lambda1", 0.0}, {"lambda2", 0.0}}), false},
        {"lafite_setup", with({{"enable_clg", true}}), false},
    };
  }();
  return all;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw ValidationError("unknown preset: " + name);
}

// Applies a preset on top of the config. A key the user set explicitly to a
// different value is a conflict.
inline void apply_preset(RunConfig& rc, const Preset& p) {
  for (const auto& [key, value] : p.gan_patch.items()) {
    if (!rc.gan_explicit.contains(key)) continue;
    json mine = rc.gan_explicit[key];
    if (key == "trainable") mine = trainable_to_json(trainable_from_json(mine));
    if (mine != value)
      throw ValidationError("preset " + p.name + " conflicts with config gan." + key + " = " +
                            rc.gan_explicit[key].dump());
  }
  json merged = to_json(rc.gan);
  merged.update(p.gan_patch);
  rc.gan = gan_config_from_json(merged, rc.gan, true);
}

}  // namespace ensad
