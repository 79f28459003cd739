// ensad: synthesize data, train the adapter and toy GAN, evaluate fusion
// strategies, inspect attention and count parameters.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "ensad/ensad.hpp"

namespace fs = std::filesystem;
using namespace ensad;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// Writes next to the target and renames into place so a failed command never
// leaves a partial file behind.
void write_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
  }
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

RunConfig load_config(const Globals& g) {
  RunConfig rc = g.config.empty() ? run_config_from_json(nlohmann::json::object()) : load_run_config(g.config);
  if (g.seed) {
    rc.seed = *g.seed;
    rc.synthetic.seed = *g.seed;
  }
  return rc;
}

std::string csv_log(const std::vector<LossRecord>& log) {
  std::ostringstream os;
  write_loss_csv_header(os);
  for (const auto& r : log) write_loss_csv_row(os, r);
  return os.str();
}

int cmd_synth(const Globals& g, const std::string& out) {
  const RunConfig rc = load_config(g);
  write_atomic(out, to_jsonl(generate_synthetic(rc.synthetic)));
  return 0;
}

int cmd_train(const Globals& g, const std::string& data, const std::string& out, std::string log_path,
              const std::string& preset_name, const std::string& init_path) {
  RunConfig rc = load_config(g);
  std::optional<Preset> preset;
  if (!preset_name.empty()) {
    preset = find_preset(preset_name);
    apply_preset(rc, *preset);
  }
  const Dataset ds = load_jsonl(data);
  check_compatible(ds, rc.ensad, rc.gan);
  std::optional<Checkpoint> init;
  if (!init_path.empty()) {
    init = load_checkpoint(init_path);
    if (!(init->ensad_cfg == rc.ensad)) throw ValidationError("--init: adapter config differs from the run config");
  }
  if (log_path.empty()) log_path = out + ".csv";

  TrainResult r;
  try {
    if (preset && preset->two_phase)
      r = finetune_pipeline(ds, rc.ensad, rc.gan, rc.seed, init);
    else if (init)
      r = continue_training(warm_start(*init, rc.gan, rc.seed), ds, rc.gan.steps);
    else
      r = train(ds, rc.ensad, rc.gan, rc.seed);
  } catch (const TrainingAborted& e) {
    const std::string diag = out + ".aborted.json";
    write_atomic(diag, checkpoint_dump(e.state));
    std::cerr << "error: " << e.what() << "; state before the failing step written to " << diag << "\n";
    return kExitRuntime;
  }
  write_atomic(log_path, csv_log(r.log));
  write_atomic(out, checkpoint_dump(r.checkpoint));
  return 0;
}

int cmd_eval(const Globals& g, const std::string& ckpt_path, const std::string& data, const std::string& out,
             std::optional<std::size_t> n_gen, std::optional<std::uint64_t> seed) {
  const RunConfig rc = load_config(g);
  const std::size_t n = n_gen.value_or(rc.eval.n_gen);
  if (n < 2) throw ValidationError("--n-gen must be >= 2");
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset ds = load_jsonl(data);
  const EvalReport rep = compare_strategies(ck, ds, n, seed.value_or(rc.seed), g.threads);
  write_atomic(out, to_json(rep).dump(2) + "\n");

  auto rows = rep.results;
  std::stable_sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) { return a.fd < b.fd; });
  std::printf("%-16s %14s\n", "strategy", "frechet");
  for (const auto& row : rows) std::printf("%-16s %14.6f\n", to_string(row.strategy), row.fd);
  return 0;
}

int cmd_inspect_attn(const std::string& ckpt_path, const std::string& data, const std::string& out,
                     std::optional<std::size_t> limit) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset ds = load_jsonl(data);
  check_compatible(ds, ck.ensad_cfg, ck.gan_cfg);
  const std::size_t n = std::min(limit.value_or(ds.size()), ds.size());
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = ds.items[i].text;
    const auto trace = forward(ck.ensad, ck.ensad_cfg, t.matrix());
    os << attention_record(t.id, attention_scores(trace), t.translation_texts).dump() << "\n";
  }
  if (out.empty())
    std::cout << os.str();
  else
    write_atomic(out, os.str());
  return 0;
}

int cmd_param_count(std::size_t d, std::size_t d_hid) {
  const EnsAdConfig c{d, d_hid, 1, 0.2, false};
  c.validate();
  std::cout << param_count(c) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble adapter training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON run config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "seed (overrides the config)");
  app.add_option("--threads", g.threads, "worker cap")->check(CLI::PositiveNumber);

  std::string out, data, ckpt, log_path, preset, init;
  std::size_t n_gen = 0, limit = 0, d = 0, d_hid = 0;
  std::uint64_t eval_seed = 0;

  auto* synth = app.add_subcommand("synth", "write a synthetic JSONL dataset");
  synth->add_option("--out", out, "output path")->required();

  auto* tr = app.add_subcommand("train", "train and write a checkpoint plus loss CSV");
  tr->add_option("--data", data, "JSONL dataset")->required();
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--log", log_path, "loss CSV path (default: <out>.csv)");
  tr->add_option("--preset", preset, "named preset");
  tr->add_option("--init", init, "start from this checkpoint's weights");

  auto* ev = app.add_subcommand("eval", "compare fusion strategies");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data, "JSONL dataset")->required();
  ev->add_option("--out", out, "report path")->required();
  auto* n_gen_opt = ev->add_option("--n-gen", n_gen, "generated samples per strategy");
  auto* eval_seed_opt = ev->add_option("--seed", eval_seed, "evaluation seed");

  auto* ia = app.add_subcommand("inspect-attn", "export per-item attention scores");
  ia->add_option("--ckpt", ckpt, "checkpoint")->required();
  ia->add_option("--data", data, "JSONL dataset")->required();
  ia->add_option("--out", out, "JSONL output (default: stdout)");
  auto* limit_opt = ia->add_option("--limit", limit, "max records");

  auto* pc = app.add_subcommand("param-count", "print the adapter parameter count");
  pc->add_option("--d", d, "embedding dim")->required();
  pc->add_option("--d-hid", d_hid, "hidden dim")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*synth) return cmd_synth(g, out);
    if (*tr) return cmd_train(g, data, out, log_path, preset, init);
    if (*ev)
      return cmd_eval(g, ckpt, data, out, *n_gen_opt ? std::optional(n_gen) : std::nullopt,
                      *eval_seed_opt ? std::optional(eval_seed) : std::nullopt);
    if (*ia) return cmd_inspect_attn(ckpt, data, out, *limit_opt ? std::optional(limit) : std::nullopt);
    if (*pc) return cmd_param_count(d, d_hid);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
