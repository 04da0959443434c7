#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <unistd.h>

#include "rdlgn/checkpoint.hpp"
#include "rdlgn/config.hpp"
#include "rdlgn/error.hpp"
#include "rdlgn/run.hpp"

using namespace rdlgn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("rdlgn_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelConfig io_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.emb_dim = 10;
  c.seq_len = 4;
  c.group_factor = 2;
  c.sizes = {std::vector<std::size_t>{16, 16}, {20}, {12}, {20}, {32, 24}};
  c.node_init = NodeInit::gaussian(1.0);
  c.dropout.group[3] = 0.1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// step -> "val_loss,lr,aux_w,acc,ppl"
std::map<std::string, std::string> eval_columns(const fs::path& csv) {
  std::map<std::string, std::string> out;
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    out[line.substr(0, c1)] = line.substr(c2 + 1);
  }
  return out;
}

const char* kSmallRun = R"({
  "model": {"vocab_size": 12, "emb_dim": 10, "seq_len": 4, "group_factor": 2, "groupsum_tau": 1.0,
            "sizes": {"N": [16], "K": [24], "L": [12], "P": [24], "M": [32, 24]},
            "node_init": {"kind": "residual", "sigma": 1.0, "beta": 3.0},
            "dropout": {"embedding": 0.1, "N": 0.0, "K": 0.0, "L": 0.0, "P": 0.1, "M": 0.0},
            "gumbel": {"enabled": true, "tau": 1.0}},
  "data": {"task": "copy", "train_sequences": 24, "val_sequences": 8},
  "train": {"steps": 12, "eval_every": 4, "checkpoint_every": 6, "gradstats_every": 4, "batch_tokens": 32,
            "eval_lanes": 64},
  "scheduler": {"patience": 4},
  "output_dir": "unused"
})";

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("soft checkpoints round-trip bit-exactly") {
    TempDir dir("soft");
    const Seq2SeqModel m(io_config());
    save_model(m, dir.path / "m.rdlg");
    CHECK(checkpoint_kind(dir.path / "m.rdlg") == CheckpointKind::kSoft);
    const Seq2SeqModel back = load_model(dir.path / "m.rdlg");
    CHECK(back.embedding() == m.embedding());
    for (Group g : kAllGroups)
      for (std::size_t i = 0; i < m.layers(g).size(); ++i) {
        const auto& a = m.layers(g)[i];
        const auto& b = back.layers(g)[i];
        CHECK(std::equal(a.logits().begin(), a.logits().end(), b.logits().begin(), b.logits().end()));
        CHECK(std::equal(a.conn_a().begin(), a.conn_a().end(), b.conn_a().begin(), b.conn_a().end()));
        CHECK(std::equal(a.conn_b().begin(), a.conn_b().end(), b.conn_b().begin(), b.conn_b().end()));
      }
    CHECK(model_config_to_json(back.config()) == model_config_to_json(m.config()));
    save_model(back, dir.path / "again.rdlg");
    CHECK(slurp(dir.path / "again.rdlg") == slurp(dir.path / "m.rdlg"));
  }

  TEST_CASE("collapsed checkpoints round-trip") {
    TempDir dir("collapsed");
    const CollapsedModel cm = collapse_model(Seq2SeqModel(io_config()));
    save_collapsed(cm, dir.path / "c.rdlg");
    CHECK(checkpoint_kind(dir.path / "c.rdlg") == CheckpointKind::kCollapsed);
    CHECK(load_collapsed(dir.path / "c.rdlg") == cm);
    CHECK_THROWS_AS(load_model(dir.path / "c.rdlg"), DataError);
  }

  TEST_CASE("a flipped byte is detected") {
    TempDir dir("corrupt");
    save_model(Seq2SeqModel(io_config()), dir.path / "m.rdlg");
    std::string bytes = slurp(dir.path / "m.rdlg");
    for (std::size_t pos : {bytes.size() / 2, bytes.size() - 3, std::size_t{7}}) {
      std::string bad = bytes;
      bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
      std::ofstream(dir.path / "bad.rdlg", std::ios::binary) << bad;
      CHECK_THROWS_WITH_AS(load_model(dir.path / "bad.rdlg"), doctest::Contains("corrupt"), DataError);
    }
    std::ofstream(dir.path / "short.rdlg", std::ios::binary) << bytes.substr(0, 40);
    CHECK_THROWS_AS(load_model(dir.path / "short.rdlg"), DataError);
    CHECK_THROWS_AS(checkpoint_kind(dir.path / "missing.rdlg"), DataError);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  }

  TEST_CASE("config parsing is strict and names the field") {
    CHECK_NOTHROW(parse_run_config(kSmallRun).validate());
    const std::string base = kSmallRun;
    auto with = [&](const std::string& from, const std::string& to) {
      std::string s = base;
      s.replace(s.find(from), from.size(), to);
      return s;
    };
    CHECK_THROWS_WITH_AS(parse_run_config(with("\"seq_len\": 4", "\"seq_len\": 4, \"bogus\": 1")),
                         doctest::Contains("model.bogus"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(with("\"emb_dim\": 10", "\"emb_dim\": \"ten\"")),
                         doctest::Contains("model.emb_dim"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(with("\"M\": [32, 24]", "\"M\": [32, 25]")).validate(),
                         doctest::Contains("sizes.M"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(with("\"copy\"", "\"reverse\"")), doctest::Contains("data.task"),
                         ConfigError);

    const RunConfig cfg = parse_run_config(kSmallRun);
    const RunConfig again = parse_run_config(run_config_to_json(cfg));
    CHECK(run_config_to_json(again) == run_config_to_json(cfg));
    CHECK(again.model.gumbel.enabled);
    CHECK(again.model.dropout.group[3] == 0.1);
  }

  TEST_CASE("seed override derives distinct streams") {
    ModelConfig c = io_config();
    override_seeds(c, 42);
    CHECK(c.seeds.connectivity == derive_seed(42, 1));
    CHECK(c.seeds.dropout == derive_seed(42, 6));
    CHECK(c.seeds.init != c.seeds.hidden_noise);
  }

  TEST_CASE("train state round-trips and resuming equals a straight run") {
    RunConfig cfg = parse_run_config(kSmallRun);
    const PreparedData data = build_dataset(cfg);
    CHECK(data.data.train.size() == 24);
    CHECK(data.data.val.size() == 8);

    TempDir straight("straight"), split("split");
    const TrainOutcome a = run_training(cfg, data, RunPaths{straight.path}, nullptr);
    CHECK(a.steps_done == 12);

    RunConfig half = cfg;
    half.train.steps = 5;
    run_training(half, data, RunPaths{split.path}, nullptr);
    half.train.steps = 7;
    const TrainOutcome b = run_training(half, data, RunPaths{split.path}, nullptr);
    CHECK(b.steps_done == 7);

    CHECK(slurp(straight.path / "model.rdlg") == slurp(split.path / "model.rdlg"));
    CHECK(slurp(straight.path / "train_state.bin") == slurp(split.path / "train_state.bin"));
    // The split run logs an extra row where it stopped; evaluation columns at
    // shared steps must agree.
    const auto straight_rows = eval_columns(straight.path / "metrics.csv");
    const auto split_rows = eval_columns(split.path / "metrics.csv");
    CHECK(straight_rows.size() == 3);
    for (const auto& [step, cols] : straight_rows) {
      REQUIRE(split_rows.count(step));
      CHECK(split_rows.at(step) == cols);
    }
    CHECK(slurp(straight.path / "gradstats.csv") == slurp(split.path / "gradstats.csv"));

    // Fixed seeds reproduce the metric log.
    TempDir twice("twice");
    run_training(cfg, data, RunPaths{twice.path}, nullptr);
    CHECK(slurp(twice.path / "metrics.csv") == slurp(straight.path / "metrics.csv"));
  }

  TEST_CASE("zero steps writes the initial checkpoint") {
    RunConfig cfg = parse_run_config(kSmallRun);
    cfg.train.steps = 0;
    TempDir dir("zero");
    const TrainOutcome out = run_training(cfg, build_dataset(cfg), RunPaths{dir.path}, nullptr);
    CHECK(out.steps_done == 0);
    REQUIRE(fs::exists(dir.path / "model.rdlg"));
    const Seq2SeqModel fresh(cfg.model);
    CHECK(load_model(dir.path / "model.rdlg").embedding() == fresh.embedding());
  }

  TEST_CASE("missing corpus files are reported by path") {
    RunConfig cfg = parse_run_config(kSmallRun);
    cfg.data.task = DataConfig::Task::kParallel;
    cfg.data.train_tsv = "/nonexistent/corpus.tsv";
    CHECK_THROWS_WITH_AS(build_dataset(cfg), doctest::Contains("/nonexistent/corpus.tsv"), DataError);
  }
}
