#include "rdlgn/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

using nlohmann::json;

// Object view that rejects keys outside the allowed set and names every
// field by its dotted path.
class Reader {
 public:
  Reader(const json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
    for (const auto& [key, _] : j_.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) throw ConfigError("unknown key " + where(key));
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  template <class T>
  void get(const char* key, T& out) const {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  void get_size(const char* key, std::size_t& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw ConfigError(where(key) + " must be a nonnegative integer");
    out = v.get<std::size_t>();
  }

  void get_i64(const char* key, std::int64_t& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
    out = v.get<std::int64_t>();
  }

  void get_u64(const char* key, std::uint64_t& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(where(key) + " must be a nonnegative integer");
    out = v.get<std::uint64_t>();
  }

  void get_real(const char* key, double& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_number()) throw ConfigError(where(key) + " must be a number");
    out = j_.at(key).get<double>();
  }

  template <class E>
  void get_enum(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> names) const {
    if (!has(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(where(key) + " must be a string");
    const std::string s = j_.at(key).get<std::string>();
    for (const auto& [n, v] : names) {
      if (s == n) {
        out = v;
        return;
      }
    }
    std::string allowed;
    for (const auto& [n, v] : names) allowed += std::string(allowed.empty() ? "" : ", ") + n;
    throw ConfigError(where(key) + ": unknown value \"" + s + "\" (expected one of " + allowed + ")");
  }

 private:
  const json& j_;
  std::string path_;
};

constexpr std::initializer_list<std::pair<const char*, HiddenInit::Kind>> kHiddenKinds = {
    {"gaussian", HiddenInit::Kind::kGaussian},
    {"zero", HiddenInit::Kind::kZero},
    {"one", HiddenInit::Kind::kOne},
    {"uniform", HiddenInit::Kind::kUniform}};

constexpr std::initializer_list<std::pair<const char*, NodeInit::Kind>> kNodeKinds = {
    {"gaussian", NodeInit::Kind::kGaussian}, {"residual", NodeInit::Kind::kResidual}};

constexpr std::initializer_list<std::pair<const char*, DataConfig::Task>> kTasks = {
    {"copy", DataConfig::Task::kCopy}, {"shift", DataConfig::Task::kShift}, {"parallel", DataConfig::Task::kParallel}};

constexpr std::initializer_list<std::pair<const char*, DataConfig::DecoderInput>> kDecoderInputs = {
    {"shifted_target", DataConfig::DecoderInput::kShiftedTarget}, {"source", DataConfig::DecoderInput::kSource}};

template <class E>
const char* enum_name(E v, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, e] : names)
    if (e == v) return n;
  return "?";
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

void read_seeds(const Reader& r, Seeds& s) {
  r.get_u64("connectivity", s.connectivity);
  r.get_u64("init", s.init);
  r.get_u64("hidden_noise", s.hidden_noise);
  r.get_u64("gumbel", s.gumbel);
  r.get_u64("data", s.data);
  r.get_u64("dropout", s.dropout);
}

void read_model(const json& j, const std::string& path, ModelConfig& m) {
  Reader r(j, path,
           {"vocab_size", "emb_dim", "seq_len", "sizes", "group_factor", "groupsum_tau", "node_init", "hidden_init",
            "dropout", "gumbel", "embedding_init_std", "seeds"});
  r.get_size("vocab_size", m.vocab_size);
  r.get_size("emb_dim", m.emb_dim);
  r.get_size("seq_len", m.seq_len);
  r.get_size("group_factor", m.group_factor);
  r.get_real("groupsum_tau", m.groupsum_tau);
  r.get_real("embedding_init_std", m.embedding_init_std);
  if (r.has("sizes")) {
    Reader s(r.raw("sizes"), r.where("sizes"), {"N", "K", "L", "P", "M"});
    for (Group g : kAllGroups) {
      const std::string name(group_name(g));
      if (!s.has(name.c_str())) continue;
      const json& arr = s.raw(name.c_str());
      if (!arr.is_array()) throw ConfigError(s.where(name) + " must be a list of widths");
      auto& out = m.sizes[static_cast<int>(g)];
      out.clear();
      for (const json& w : arr) {
        if (!w.is_number_integer() || w.get<std::int64_t>() < 0)
          throw ConfigError(s.where(name) + " must hold nonnegative integers");
        out.push_back(w.get<std::size_t>());
      }
    }
  }
  if (r.has("node_init")) {
    Reader n(r.raw("node_init"), r.where("node_init"), {"kind", "sigma", "beta"});
    n.get_enum("kind", m.node_init.kind, kNodeKinds);
    n.get_real("sigma", m.node_init.sigma);
    n.get_real("beta", m.node_init.beta);
  }
  if (r.has("hidden_init")) {
    Reader h(r.raw("hidden_init"), r.where("hidden_init"), {"kind", "mean", "stddev"});
    h.get_enum("kind", m.hidden_init.kind, kHiddenKinds);
    h.get_real("mean", m.hidden_init.mean);
    h.get_real("stddev", m.hidden_init.stddev);
  }
  if (r.has("dropout")) {
    Reader d(r.raw("dropout"), r.where("dropout"), {"embedding", "N", "K", "L", "P", "M"});
    d.get_real("embedding", m.dropout.embedding);
    for (Group g : kAllGroups) d.get_real(std::string(group_name(g)).c_str(), m.dropout.group[static_cast<int>(g)]);
  }
  if (r.has("gumbel")) {
    Reader g(r.raw("gumbel"), r.where("gumbel"), {"enabled", "tau"});
    g.get("enabled", m.gumbel.enabled);
    g.get_real("tau", m.gumbel.tau);
  }
  if (r.has("seeds")) {
    Reader s(r.raw("seeds"), r.where("seeds"),
             {"connectivity", "init", "hidden_noise", "gumbel", "data", "dropout"});
    read_seeds(s, m.seeds);
  }
}

json model_to_json(const ModelConfig& m) {
  json sizes = json::object();
  for (Group g : kAllGroups) sizes[std::string(group_name(g))] = m.group_sizes(g);
  json dropout = {{"embedding", m.dropout.embedding}};
  for (Group g : kAllGroups) dropout[std::string(group_name(g))] = m.dropout.group[static_cast<int>(g)];
  return {
      {"vocab_size", m.vocab_size},
      {"emb_dim", m.emb_dim},
      {"seq_len", m.seq_len},
      {"sizes", sizes},
      {"group_factor", m.group_factor},
      {"groupsum_tau", m.groupsum_tau},
      {"node_init",
       {{"kind", enum_name(m.node_init.kind, kNodeKinds)}, {"sigma", m.node_init.sigma}, {"beta", m.node_init.beta}}},
      {"hidden_init",
       {{"kind", enum_name(m.hidden_init.kind, kHiddenKinds)},
        {"mean", m.hidden_init.mean},
        {"stddev", m.hidden_init.stddev}}},
      {"dropout", dropout},
      {"gumbel", {{"enabled", m.gumbel.enabled}, {"tau", m.gumbel.tau}}},
      {"embedding_init_std", m.embedding_init_std},
      {"seeds",
       {{"connectivity", m.seeds.connectivity},
        {"init", m.seeds.init},
        {"hidden_noise", m.seeds.hidden_noise},
        {"gumbel", m.seeds.gumbel},
        {"data", m.seeds.data},
        {"dropout", m.seeds.dropout}}},
  };
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  scheduler.validate();
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be > 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("optimizer.beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("optimizer.beta2 must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (train.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (train.eval_every <= 0) throw ConfigError("train.eval_every must be > 0");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (train.gradstats_every < 0) throw ConfigError("train.gradstats_every must be >= 0");
  if (train.batch_tokens < model.seq_len)
    throw ConfigError("train.batch_tokens must be >= model.seq_len (" + std::to_string(model.seq_len) + ")");
  if (train.eval_lanes < 1) throw ConfigError("train.eval_lanes must be >= 1");
  if (data.task != DataConfig::Task::kParallel) {
    if (data.shift >= model.seq_len)
      throw ConfigError("data.shift must be < model.seq_len (" + std::to_string(model.seq_len) + ")");
    if (data.task == DataConfig::Task::kCopy && data.shift != 0) throw ConfigError("data.shift must be 0 for task copy");
    if (data.train_sequences < 1) throw ConfigError("data.train_sequences must be >= 1");
  } else {
    const bool files = !data.train_src.empty() || !data.train_tgt.empty();
    if (files == !data.train_tsv.empty())
      throw ConfigError("data: give either train_src + train_tgt or train_tsv for task parallel");
    if (files && (data.train_src.empty() || data.train_tgt.empty()))
      throw ConfigError("data.train_src and data.train_tgt must both be set");
    if (data.val_src.empty() != data.val_tgt.empty())
      throw ConfigError("data.val_src and data.val_tgt must both be set");
    if (data.decoder_input != DataConfig::DecoderInput::kShiftedTarget)
      throw ConfigError("data.decoder_input must be shifted_target for task parallel");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

RunConfig parse_run_config(std::string_view json_text) {
  const json j = parse_text(json_text);
  RunConfig c;
  Reader top(j, "", {"model", "loss", "optimizer", "scheduler", "data", "train", "output_dir", "seeds"});
  if (top.has("model")) read_model(top.raw("model"), "model", c.model);
  if (top.has("seeds")) {
    Reader s(top.raw("seeds"), "seeds", {"connectivity", "init", "hidden_noise", "gumbel", "data", "dropout"});
    read_seeds(s, c.model.seeds);
  }
  if (top.has("loss")) {
    Reader l(top.raw("loss"), "loss", {"label_smoothing", "aux_terms"});
    l.get_real("label_smoothing", c.loss.label_smoothing);
    if (l.has("aux_terms")) {
      const json& arr = l.raw("aux_terms");
      if (!arr.is_array()) throw ConfigError("loss.aux_terms must be a list");
      c.loss.aux_terms.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Reader t(arr[i], "loss.aux_terms[" + std::to_string(i) + "]", {"loss_id", "ramp_start", "ramp_end", "w_max"});
        AuxTerm term;
        t.get("loss_id", term.loss_id);
        t.get_i64("ramp_start", term.ramp_start);
        t.get_i64("ramp_end", term.ramp_end);
        t.get_real("w_max", term.w_max);
        c.loss.aux_terms.push_back(term);
      }
    }
  }
  if (top.has("optimizer")) {
    Reader o(top.raw("optimizer"), "optimizer", {"lr", "beta1", "beta2", "eps", "weight_decay"});
    o.get_real("lr", c.optimizer.lr);
    o.get_real("beta1", c.optimizer.beta1);
    o.get_real("beta2", c.optimizer.beta2);
    o.get_real("eps", c.optimizer.eps);
    o.get_real("weight_decay", c.optimizer.weight_decay);
  }
  if (top.has("scheduler")) {
    Reader s(top.raw("scheduler"), "scheduler", {"gamma", "patience", "min_delta"});
    s.get_real("gamma", c.scheduler.gamma);
    s.get_i64("patience", c.scheduler.patience);
    s.get_real("min_delta", c.scheduler.min_delta);
  }
  if (top.has("data")) {
    Reader d(top.raw("data"), "data",
             {"task", "shift", "decoder_input", "train_sequences", "val_sequences", "train_src", "train_tgt",
              "train_tsv", "val_src", "val_tgt", "val_tsv"});
    d.get_enum("task", c.data.task, kTasks);
    d.get_size("shift", c.data.shift);
    d.get_enum("decoder_input", c.data.decoder_input, kDecoderInputs);
    d.get_size("train_sequences", c.data.train_sequences);
    d.get_size("val_sequences", c.data.val_sequences);
    d.get("train_src", c.data.train_src);
    d.get("train_tgt", c.data.train_tgt);
    d.get("train_tsv", c.data.train_tsv);
    d.get("val_src", c.data.val_src);
    d.get("val_tgt", c.data.val_tgt);
    d.get("val_tsv", c.data.val_tsv);
  }
  if (top.has("train")) {
    Reader t(top.raw("train"), "train",
             {"steps", "eval_every", "checkpoint_every", "gradstats_every", "batch_tokens", "eval_lanes"});
    t.get_i64("steps", c.train.steps);
    t.get_i64("eval_every", c.train.eval_every);
    t.get_i64("checkpoint_every", c.train.checkpoint_every);
    t.get_i64("gradstats_every", c.train.gradstats_every);
    t.get_size("batch_tokens", c.train.batch_tokens);
    t.get_size("eval_lanes", c.train.eval_lanes);
  }
  top.get("output_dir", c.output_dir);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = parse_run_config(ss.str());
  // Data paths are relative to the config file.
  const auto base = path.parent_path();
  for (std::string* p : {&c.data.train_src, &c.data.train_tgt, &c.data.train_tsv, &c.data.val_src, &c.data.val_tgt,
                         &c.data.val_tsv}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json aux = json::array();
  for (const auto& t : c.loss.aux_terms)
    aux.push_back({{"loss_id", t.loss_id}, {"ramp_start", t.ramp_start}, {"ramp_end", t.ramp_end}, {"w_max", t.w_max}});
  json j = {
      {"model", model_to_json(c.model)},
      {"loss", {{"label_smoothing", c.loss.label_smoothing}, {"aux_terms", aux}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"scheduler",
       {{"gamma", c.scheduler.gamma}, {"patience", c.scheduler.patience}, {"min_delta", c.scheduler.min_delta}}},
      {"data",
       {{"task", enum_name(c.data.task, kTasks)},
        {"shift", c.data.shift},
        {"decoder_input", enum_name(c.data.decoder_input, kDecoderInputs)},
        {"train_sequences", c.data.train_sequences},
        {"val_sequences", c.data.val_sequences},
        {"train_src", c.data.train_src},
        {"train_tgt", c.data.train_tgt},
        {"train_tsv", c.data.train_tsv},
        {"val_src", c.data.val_src},
        {"val_tgt", c.data.val_tgt},
        {"val_tsv", c.data.val_tsv}}},
      {"train",
       {{"steps", c.train.steps},
        {"eval_every", c.train.eval_every},
        {"checkpoint_every", c.train.checkpoint_every},
        {"gradstats_every", c.train.gradstats_every},
        {"batch_tokens", c.train.batch_tokens},
        {"eval_lanes", c.train.eval_lanes}}},
      {"output_dir", c.output_dir},
  };
  return j.dump(2);
}

std::string model_config_to_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

ModelConfig model_config_from_json(std::string_view json_text) {
  ModelConfig m;
  read_model(parse_text(json_text), "model", m);
  m.validate();
  return m;
}

void override_seeds(ModelConfig& cfg, std::uint64_t base) {
  cfg.seeds.connectivity = derive_seed(base, 1);
  cfg.seeds.init = derive_seed(base, 2);
  cfg.seeds.hidden_noise = derive_seed(base, 3);
  cfg.seeds.gumbel = derive_seed(base, 4);
  cfg.seeds.data = derive_seed(base, 5);
  cfg.seeds.dropout = derive_seed(base, 6);
}

}  // namespace rdlgn
