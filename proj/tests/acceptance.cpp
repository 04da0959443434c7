// Acceptance checks: one PASS/FAIL line per criterion, exit 1 if any fails.
//
// Usage: rdlgn_acceptance [config_dir] [--quick]
// --quick skips the training-based criteria (5, 6, 7) and reports them as SKIP.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "rdlgn/collapsed.hpp"
#include "rdlgn/config.hpp"
#include "rdlgn/run.hpp"

#ifndef RDLGN_CONFIG_DIR
#define RDLGN_CONFIG_DIR "configs"
#endif

using namespace rdlgn;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Verdict gate_algebra() {
  const auto t0 = Clock::now();
  bool ok = true;
  for (int g = 0; g < 16; ++g)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const GateKind k(static_cast<std::uint8_t>(g));
        ok = ok && relaxed_eval(k, a, b) == static_cast<double>(discrete_eval(k, a, b));
      }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    worst = std::max(worst, std::abs(relaxed_eval(gates::kAnd, a, b) - a * b));
    worst = std::max(worst, std::abs(relaxed_eval(gates::kOr, a, b) - (a + b - a * b)));
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "corners " << (ok ? "exact" : "MISMATCH") << ", AND/OR max abs err " << worst << ", " << secs << " s";
  return {ok && worst == 0.0 && secs < 1.0, d.str()};
}

Verdict gradient_oracle() {
  const auto t0 = Clock::now();
  const ModelConfig tiny = tiny_gradcheck_config();
  const GradcheckReport r = gradcheck(tiny);
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << r.params << " params, max rel err " << r.max_rel << " (tol 1e-4), closed-form max abs "
    << r.closed_form_max_abs << " (tol 1e-10), " << secs << " s";
  const bool size_ok = r.params >= 3000 && r.params <= 5000 && tiny.vocab_size == 8 && tiny.emb_dim == 8 &&
                       tiny.seq_len == 3;
  return {r.passed && size_ok && secs < 120.0, d.str()};
}

Verdict collapse_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3);
  std::size_t mismatches = 0, checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t in_dim = 2 + rng() % 64, width = 16 + rng() % 112, lanes = 200;
    std::vector<std::uint32_t> ca(width), cb(width);
    std::vector<GateKind> gk(width);
    std::vector<double> z(width * 16, -800.0);
    for (std::size_t j = 0; j < width; ++j) {
      ca[j] = static_cast<std::uint32_t>(rng() % in_dim);
      do cb[j] = static_cast<std::uint32_t>(rng() % in_dim);
      while (cb[j] == ca[j]);
      gk[j] = GateKind(static_cast<std::uint8_t>(rng() % 16));
      z[j * 16 + gk[j].index()] = 0.0;
    }
    const CollapsedLogicLayer hard(in_dim, ca, cb, gk);
    const SoftLogicLayer soft(in_dim, ca, cb, z);
    BitLanes x(in_dim, lanes);
    for (std::size_t r = 0; r < in_dim; ++r)
      for (std::size_t l = 0; l < lanes; ++l) x.set(r, l, rng() & 1);
    const BitLanes packed = eval_bitpacked(hard, x);
    LayerTape tape;
    const Matrix relaxed = soft.forward_soft(x.to_matrix(), tape);
    std::vector<std::uint8_t> col(in_dim);
    for (std::size_t l = 0; l < lanes; ++l) {
      for (std::size_t r = 0; r < in_dim; ++r) col[r] = x.get(r, l);
      const auto scalar = hard.forward_hard(col);
      for (std::size_t j = 0; j < width; ++j) {
        ++checked;
        if (packed.get(j, l) != static_cast<bool>(scalar[j]) || relaxed(j, l) != static_cast<double>(scalar[j]))
          ++mismatches;
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << mismatches << " mismatches over " << checked << " neuron-lane outputs, " << secs << " s";
  return {mismatches == 0 && secs < 30.0, d.str()};
}

Verdict tau_invariance() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t disagreements = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> v(30 * 8);
    for (double& e : v) e = u(rng);
    std::size_t ref = 0;
    bool first = true;
    for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      const auto s = group_sum(v, 8, tau);
      const std::size_t arg = std::max_element(s.begin(), s.end()) - s.begin();
      if (first) ref = arg;
      else if (arg != ref) ++disagreements;
      first = false;
    }
  }
  return {disagreements == 0, std::to_string(trials) + " score vectors, " + std::to_string(disagreements) +
                                  " argmax disagreements across tau in {0.25,...,8}"};
}

struct CopyOutcome {
  Verdict learn, gap;
};

CopyOutcome copy_task(const fs::path& config_dir) {
  const auto t0 = Clock::now();
  const RunConfig cfg = load_run_config(config_dir / "toy-copy.json");
  const PreparedData data = build_dataset(cfg);
  const TrainOutcome t = train_in_memory(cfg, data);
  const EvalReport soft = evaluate_soft_report(t.model, data.data.val, cfg.loss.label_smoothing, cfg.train.eval_lanes);
  const EvalReport hard = evaluate_hard_report(collapse_model(t.model), data.data.val, cfg.train.eval_lanes);
  const double secs = seconds_since(t0);
  const std::size_t max_width = [&] {
    std::size_t w = 0;
    for (Group g : kAllGroups)
      for (std::size_t x : cfg.model.group_sizes(g)) w = std::max(w, x);
    return w;
  }();
  const bool preset_ok = cfg.model.seq_len == 8 && max_width <= 2000 && cfg.model.group_factor >= 8 &&
                         cfg.train.steps <= 20000;
  std::ostringstream l, g;
  l << "soft accuracy " << soft.accuracy << " after " << t.steps_done << " steps (V=" << cfg.model.vocab_size
    << ", S=" << cfg.model.seq_len << ", k=" << cfg.model.group_factor << "), " << secs << " s";
  const double gap = std::abs(soft.accuracy - hard.accuracy) * 100.0;
  g << "hard accuracy " << hard.accuracy << " vs soft " << soft.accuracy << ", gap " << gap << " points";
  return {{preset_ok && soft.accuracy >= 0.95 && secs < 3600.0, l.str()}, {gap <= 15.0, g.str()}};
}

Verdict shift_trend(const fs::path& config_dir) {
  const auto t0 = Clock::now();
  const RunConfig cfg = load_run_config(config_dir / "toy-shift.json");
  const auto pts = shift_bench(cfg, {0, 2, 4, 6}, nullptr);
  std::ostringstream d;
  bool monotone = true;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    d << (i ? ", " : "") << "shift " << pts[i].shift << ": " << pts[i].accuracy;
    // "Nonincreasing with noise": a later shift may beat an earlier one by at most 5 points.
    if (i > 0 && pts[i].accuracy > pts[i - 1].accuracy + 0.05) monotone = false;
  }
  const double drop = (pts.front().accuracy - pts.back().accuracy) * 100.0;
  d << "; shift0 - shift6 = " << drop << " points, " << seconds_since(t0) << " s";
  return {monotone && drop >= 10.0, d.str()};
}

Verdict schedules() {
  const AuxTerm term;
  const bool aux = aux_weight(1000, term) == 0.0 && std::abs(aux_weight(100000, term) - 0.1) < 1e-15 &&
                   std::abs(aux_weight(50500, term) - 0.05) < 1e-15;

  PlateauConfig pc;
  pc.patience = 10000;
  PlateauScheduler sched(pc);
  double lr = sched.update(1.0, 0.05, 500);
  std::vector<double> lrs = {lr};
  for (int window = 0; window < 2; ++window) {
    lr = sched.update(1.0, lr, 10000);
    lrs.push_back(lr);
  }
  const bool plateau = std::abs(lrs[0] - 0.05) < 1e-15 && std::abs(lrs[1] - 0.04) < 1e-15 &&
                       std::abs(lrs[2] - 0.032) < 1e-15;

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t V = 7;
    Matrix p(V, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < V; ++i) s += (p(i, 0) = u(rng));
    for (std::size_t i = 0; i < V; ++i) p(i, 0) /= s;
    const TokenId y = static_cast<TokenId>(1 + rng() % (V - 1));
    const double ce = -std::log(p(y, 0));
    worst = std::max(worst, std::abs(smoothed_cross_entropy({p}, TokenRows{{y}}, 0.0).loss - ce));
  }
  std::ostringstream d;
  d << "aux anchors " << (aux ? "ok" : "WRONG") << ", lr " << lrs[0] << " -> " << lrs[1] << " -> " << lrs[2]
    << ", alpha=0 vs plain CE max diff " << worst;
  return {aux && plateau && worst <= 1e-12, d.str()};
}

Verdict gradient_health(const fs::path& config_dir) {
  RunConfig cfg = load_run_config(config_dir / "toy-copy.json");
  cfg.train.steps = 100;
  cfg.train.gradstats_every = 100;
  cfg.train.eval_every = 100;
  const PreparedData data = build_dataset(cfg);
  Seq2SeqModel model(cfg.model);
  TrainState state(model, cfg.optimizer, cfg.scheduler);
  std::vector<GroupGradStats> last;
  TrainSinks sinks;
  sinks.gradstats = [&](std::int64_t, const std::vector<GroupGradStats>& s) { last = s; };
  train_loop(model, state, data.data, cfg.loss, cfg.train, sinks);
  if (last.size() < 5) return {false, "no gradient statistics emitted"};
  bool ok = true;
  std::ostringstream d;
  for (std::size_t i = 0; i < 5; ++i) {
    ok = ok && last[i].mean > 0.0 && std::isfinite(last[i].ratio);
    d << (i ? ", " : "") << last[i].name << " mean " << last[i].mean << " std/mean " << last[i].ratio;
  }
  return {ok, "after 100 steps: " + d.str()};
}

Verdict accounting_checks() {
  const ModelConfig c = ModelConfig::base_preset();
  const Accounting a = accounting(c);
  bool per_group = true;
  for (Group g : kAllGroups) {
    std::size_t widths = 0;
    for (std::size_t w : c.group_sizes(g)) widths += w;
    per_group = per_group && a.group_logits[static_cast<int>(g)] == 16 * widths;
  }
  const std::size_t k = a.group_logits[static_cast<int>(Group::kK)];
  std::ostringstream d;
  d << "K logits " << k << ", embedding " << a.embedding_params << ", gates " << a.collapsed_gates;
  return {per_group && k == 1376000 && a.embedding_params == 16384000 && a.collapsed_gates == 1526000, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config_dir = RDLGN_CONFIG_DIR;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--quick") quick = true;
    else config_dir = arg;
  }

  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Verdict()>& run) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << v.detail << std::endl;
  };
  auto skip = [](int id, const std::string& name) {
    std::cout << "SKIP criterion " << id << " " << name << ": --quick" << std::endl;
  };

  report(1, "gate algebra", gate_algebra);
  report(2, "gradient oracle", gradient_oracle);
  report(3, "collapse equivalence", collapse_equivalence);
  report(4, "groupsum tau invariance", tau_invariance);
  if (quick) {
    skip(5, "copy-task learning");
    skip(6, "collapse gap");
    skip(7, "shift trend");
  } else {
    CopyOutcome copy;
    try {
      copy = copy_task(config_dir);
    } catch (const std::exception& e) {
      copy.learn = copy.gap = {false, std::string("exception: ") + e.what()};
    }
    report(5, "copy-task learning", [&] { return copy.learn; });
    report(6, "collapse gap", [&] { return copy.gap; });
    report(7, "shift trend", [&] { return shift_trend(config_dir); });
  }
  report(8, "schedules", schedules);
  report(9, "gradient health", [&] { return gradient_health(config_dir); });
  report(10, "accounting", accounting_checks);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
