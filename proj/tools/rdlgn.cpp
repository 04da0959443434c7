// rdlgn: train, evaluate, collapse and run recurrent logic gate networks.
//
// Exit codes: 0 ok, 1 runtime failure, 2 config or data error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "rdlgn/checkpoint.hpp"
#include "rdlgn/collapsed.hpp"
#include "rdlgn/config.hpp"
#include "rdlgn/error.hpp"
#include "rdlgn/run.hpp"

namespace fs = std::filesystem;
using namespace rdlgn;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config;
  std::string checkpoint;
  std::string mode = "soft";
  std::int64_t steps = -1;
  std::int64_t seed_override = -1;
};

RunConfig load_config(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_run_config(c.config);
  if (c.steps >= 0) cfg.train.steps = c.steps;
  if (c.seed_override >= 0) override_seeds(cfg.model, static_cast<std::uint64_t>(c.seed_override));
  cfg.validate();
  return cfg;
}

fs::path output_dir(const RunConfig& cfg) {
  fs::path dir = cfg.output_dir;
  if (const char* root = std::getenv("RDLGN_OUTPUT_ROOT"); root && *root && dir.is_relative()) dir = fs::path(root) / dir;
  return dir;
}

CollapsedModel load_any_as_collapsed(const fs::path& path) {
  if (checkpoint_kind(path) == CheckpointKind::kCollapsed) return load_collapsed(path);
  std::cerr << "warning: " << path.string() << " is a soft checkpoint; collapsing it for hard-mode evaluation\n";
  return collapse_model(load_model(path));
}

void print_accounting(const ModelConfig& m) {
  const Accounting a = accounting(m);
  std::cout << "gates " << a.collapsed_gates << "\n"
            << "embedding_bits " << a.embedding_bits << " (" << m.emb_dim << " x " << m.vocab_size << ")\n";
  for (Group g : kAllGroups)
    std::cout << "logits_" << group_name(g) << " " << a.group_logits[static_cast<int>(g)] << "\n";
  std::cout << "trainable_params " << a.trainable_params << "\n";
}

int cmd_train(const Common& c) {
  const RunConfig cfg = load_config(c);
  const PreparedData prepared = build_dataset(cfg);
  RunPaths paths{output_dir(cfg)};
  fs::create_directories(paths.dir);
  std::ofstream(paths.config()) << run_config_to_json(cfg) << "\n";
  prepared.vocab.save(paths.vocab());
  std::cout << "train pairs " << prepared.data.train.size() << ", validation pairs " << prepared.data.val.size()
            << ", output " << paths.dir.string() << "\n";
  TrainOutcome out = run_training(cfg, prepared, paths, &std::cout);
  const EvalReport rep = evaluate_soft_report(out.model, prepared.data.val, cfg.loss.label_smoothing,
                                              cfg.train.eval_lanes);
  std::cout << "final step=" << (out.last_row ? out.last_row->step : 0) << " " << format_report(rep) << " acc="
            << rep.accuracy << "\n";
  return 0;
}

int cmd_eval(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const RunConfig cfg = load_config(c);
  const PreparedData prepared = build_dataset(cfg);
  if (prepared.data.val.empty()) throw DataError("evaluation set is empty");
  EvalReport rep;
  if (c.mode == "hard") {
    rep = evaluate_hard_report(load_any_as_collapsed(c.checkpoint), prepared.data.val, cfg.train.eval_lanes);
  } else {
    if (checkpoint_kind(c.checkpoint) == CheckpointKind::kCollapsed)
      throw ConfigError("soft evaluation needs a soft checkpoint; use --mode hard for " + c.checkpoint);
    rep = evaluate_soft_report(load_model(c.checkpoint), prepared.data.val, cfg.loss.label_smoothing,
                               cfg.train.eval_lanes);
  }
  std::cout << format_report(rep) << "\n";
  return 0;
}

int cmd_collapse(const Common& c, const std::string& out_path, bool accounting_only) {
  if (accounting_only) {
    const ModelConfig m = c.config.empty() ? ModelConfig::base_preset() : load_config(c).model;
    m.validate();
    print_accounting(m);
    return 0;
  }
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (out_path.empty()) throw ConfigError("--out is required");
  const CollapsedModel cm = collapse_model(load_model(c.checkpoint));
  save_collapsed(cm, out_path);
  print_accounting(cm.config);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_infer(const Common& c, std::string vocab_path, const std::vector<std::string>& texts) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (vocab_path.empty()) vocab_path = (fs::path(c.checkpoint).parent_path() / "vocab.txt").string();
  if (!fs::exists(vocab_path)) throw DataError("vocabulary file not found: " + vocab_path);
  const Vocab vocab = Vocab::load(vocab_path);
  std::vector<std::string> lines = texts;
  if (lines.empty())
    for (std::string line; std::getline(std::cin, line);) lines.push_back(line);
  if (lines.empty()) return 0;

  const bool hard = c.mode == "hard" || checkpoint_kind(c.checkpoint) == CheckpointKind::kCollapsed;
  std::optional<CollapsedModel> cm;
  std::optional<Seq2SeqModel> sm;
  if (hard) cm = load_any_as_collapsed(c.checkpoint);
  else sm = load_model(c.checkpoint);
  const ModelConfig& mc = hard ? cm->config : sm->config();
  TokenRows src;
  for (const auto& line : lines) {
    auto toks = tokenize(line);
    auto p = prepare_pair(toks.empty() ? std::vector<std::string>{"<unk>"} : toks, {"<unk>"}, vocab, mc.seq_len);
    src.push_back(p->src);
  }
  Rng noise(derive_seed(mc.seeds.hidden_noise, 0x1F));
  const TokenRows out = hard ? hard_forward_seq(*cm, src, mc.seq_len) : sm->generate(src, mc.seq_len, noise);
  for (const auto& row : out) {
    const auto words = vocab.decode(row);
    for (std::size_t i = 0; i < words.size(); ++i) std::cout << (i ? " " : "") << words[i];
    std::cout << "\n";
  }
  return 0;
}

int cmd_gradcheck(const Common& c, const std::string& dims, bool corrupt) {
  if (dims != "tiny") throw ConfigError("--dims must be tiny");
  ModelConfig m = c.config.empty() ? tiny_gradcheck_config() : load_config(c).model;
  if (c.seed_override >= 0) override_seeds(m, static_cast<std::uint64_t>(c.seed_override));
  const std::size_t params = accounting(m).trainable_params;
  if (params > 5000)
    throw ConfigError("gradcheck needs a tiny model (<= 5000 parameters), config has " + std::to_string(params));
  GradcheckOptions opts;
  if (corrupt) opts.tamper = [](Gradients& g) { g.logits[static_cast<int>(Group::kK)][0][3] += 1e-2; };
  const GradcheckReport rep = gradcheck(m, opts);
  std::cout << format_gradcheck(rep);
  return rep.passed ? 0 : kExitRuntime;
}

std::vector<std::size_t> parse_shifts(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("--shifts: not a nonnegative integer: \"" + item + "\"");
    }
  }
  return out;
}

int cmd_shift_bench(const Common& c, const std::string& shifts) {
  const RunConfig cfg = load_config(c);
  const auto points = shift_bench(cfg, parse_shifts(shifts), &std::cerr);
  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir);
  std::ofstream csv(dir / "shift_bench.csv");
  csv << "shift,accuracy\n";
  std::cout << "shift,accuracy\n";
  for (const auto& p : points) {
    csv << p.shift << ',' << p.accuracy << "\n";
    std::cout << p.shift << ',' << p.accuracy << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent differentiable logic gate networks: train, evaluate, collapse, infer"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("--config", common.config, "Run config (JSON)");
    sub->add_option("--steps", common.steps, "Override train.steps");
    sub->add_option("--seed-override", common.seed_override, "Derive every seed stream from this base seed");
    if (with_checkpoint) sub->add_option("--checkpoint", common.checkpoint, "Checkpoint file");
  };

  auto* train = app.add_subcommand("train", "Train a model from a config");
  add_common(train, false);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the config's validation data");
  add_common(eval, true);
  eval->add_option("--mode", common.mode, "soft or hard")->check(CLI::IsMember({"soft", "hard"}));

  std::string collapse_out;
  bool accounting_only = false;
  auto* collapse = app.add_subcommand("collapse", "Collapse a soft checkpoint into a Boolean circuit");
  add_common(collapse, true);
  collapse->add_option("--out", collapse_out, "Collapsed checkpoint to write");
  collapse->add_flag("--accounting-only", accounting_only,
                     "Print size accounting for --config (or the base preset) without a checkpoint");

  std::string vocab_path;
  std::vector<std::string> texts;
  auto* infer = app.add_subcommand("infer", "Greedy decoding of sentences (arguments or stdin)");
  add_common(infer, true);
  infer->add_option("--mode", common.mode, "soft or hard")->check(CLI::IsMember({"soft", "hard"}));
  infer->add_option("--vocab", vocab_path, "Vocabulary file (default: vocab.txt next to the checkpoint)");
  infer->add_option("text", texts, "Input sentences");

  std::string dims = "tiny";
  bool corrupt = false;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  add_common(grad, false);
  grad->add_option("--dims", dims, "Model size preset (tiny)");
  grad->add_flag("--corrupt-backward", corrupt, "Perturb one analytic gradient (negative control)");

  std::string shifts = "0,2,4,6";
  auto* bench = app.add_subcommand("shift-bench", "Accuracy versus shift factor on synthetic streams");
  add_common(bench, false);
  bench->add_option("--shifts", shifts, "Comma-separated shift factors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common);
    if (*collapse) return cmd_collapse(common, collapse_out, accounting_only);
    if (*infer) return cmd_infer(common, vocab_path, texts);
    if (*grad) return cmd_gradcheck(common, dims, corrupt);
    if (*bench) return cmd_shift_bench(common, shifts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
