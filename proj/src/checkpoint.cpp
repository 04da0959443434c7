#include "rdlgn/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rdlgn/config.hpp"
#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

constexpr std::string_view kStateMagic = "RDLGS1";

class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void header(std::string_view magic, const std::string& json_text) {
    raw(magic);
    u64(json_text.size());
    raw(json_text);
  }
  void finish_to(const std::filesystem::path& path) {
    u64(fnv1a64(buf_));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write-then-rename so an interrupted save never leaves a torn file.
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + tmp);
      out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw DataError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string name) : buf_(std::move(bytes)), name_(std::move(name)) {}

  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw DataError(name_ + ": truncated or malformed container");
  }
  std::string_view raw(std::size_t n) {
    need(n);
    std::string_view s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64s(std::span<double> out) {
    need(out.size() * 8);
    for (double& x : out) x = f64();
  }
  std::size_t size_at_most(std::size_t limit, const char* what) {
    const std::uint64_t v = u64();
    if (v > limit) throw DataError(name_ + ": " + what + " out of range");
    return static_cast<std::size_t>(v);
  }

  /// Checks the trailing checksum and the magic, returns the JSON block.
  std::string open(std::string_view magic) {
    if (buf_.size() < magic.size() + 16) throw DataError(name_ + ": file too short to be a checkpoint");
    end_ = buf_.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[end_ + i])) << (8 * i);
    if (raw(magic.size()) != magic) throw DataError(name_ + ": bad magic (expected " + std::string(magic) + ")");
    if (fnv1a64(std::string_view(buf_.data(), end_)) != stored)
      throw DataError(name_ + ": checksum mismatch, the file is corrupt");
    const std::size_t len = size_at_most(end_, "config length");
    return std::string(raw(len));
  }

  void expect_end() const {
    if (pos_ != end_) throw DataError(name_ + ": trailing bytes after payload");
  }

 private:
  std::string buf_;
  std::string name_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw DataError("train state: malformed RNG state");
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_model(const Seq2SeqModel& model, const std::filesystem::path& path) {
  ByteWriter w;
  w.header(kSoftMagic, model_config_to_json(model.config()));
  w.f64s(model.embedding().values());
  for (Group g : kAllGroups) {
    for (const auto& layer : model.layers(g)) {
      w.u64(layer.in_dim());
      w.u64(layer.width());
      for (auto v : layer.conn_a()) w.u32(v);
      for (auto v : layer.conn_b()) w.u32(v);
      w.f64s(layer.logits());
    }
  }
  w.finish_to(path);
}

Seq2SeqModel load_model(const std::filesystem::path& path) {
  ByteReader r(read_file(path), path.string());
  ModelConfig cfg = model_config_from_json(r.open(kSoftMagic));
  Matrix emb(cfg.vocab_size, cfg.emb_dim);
  r.f64s(emb.values());
  std::array<std::vector<SoftLogicLayer>, 5> groups;
  for (Group g : kAllGroups) {
    for (std::size_t i = 0; i < cfg.group_sizes(g).size(); ++i) {
      const std::size_t in_dim = r.size_at_most(std::size_t{1} << 32, "layer in_dim");
      const std::size_t width = r.size_at_most(std::size_t{1} << 32, "layer width");
      r.need(width * (8 + 16 * 8));
      std::vector<std::uint32_t> a(width), b(width);
      for (auto& v : a) v = r.u32();
      for (auto& v : b) v = r.u32();
      std::vector<double> logits(width * 16);
      r.f64s(logits);
      groups[static_cast<int>(g)].emplace_back(in_dim, std::move(a), std::move(b), std::move(logits));
    }
  }
  r.expect_end();
  return Seq2SeqModel(std::move(cfg), std::move(emb), std::move(groups));
}

void save_collapsed(const CollapsedModel& cm, const std::filesystem::path& path) {
  cm.validate();
  ByteWriter w;
  w.header(kCollapsedMagic, model_config_to_json(cm.config));
  std::uint8_t acc = 0;
  int nbits = 0;
  for (std::uint8_t bit : cm.embedding) {
    acc |= static_cast<std::uint8_t>((bit & 1U) << nbits);
    if (++nbits == 8) {
      w.u8(acc);
      acc = 0;
      nbits = 0;
    }
  }
  if (nbits > 0) w.u8(acc);
  for (Group g : kAllGroups) {
    for (const auto& layer : cm.layers(g)) {
      w.u64(layer.in_dim());
      w.u64(layer.width());
      for (GateKind k : layer.gates()) w.u8(k.index());
      for (auto v : layer.conn_a()) w.u32(v);
      for (auto v : layer.conn_b()) w.u32(v);
    }
  }
  w.finish_to(path);
}

CollapsedModel load_collapsed(const std::filesystem::path& path) {
  ByteReader r(read_file(path), path.string());
  CollapsedModel cm;
  cm.config = model_config_from_json(r.open(kCollapsedMagic));
  const std::size_t nbits = cm.config.vocab_size * cm.config.emb_dim;
  r.need((nbits + 7) / 8);
  cm.embedding.resize(nbits);
  for (std::size_t i = 0; i < nbits; i += 8) {
    const std::uint8_t byte = r.u8();
    for (std::size_t b = 0; b < 8 && i + b < nbits; ++b) cm.embedding[i + b] = (byte >> b) & 1U;
  }
  for (Group g : kAllGroups) {
    for (std::size_t i = 0; i < cm.config.group_sizes(g).size(); ++i) {
      const std::size_t in_dim = r.size_at_most(std::size_t{1} << 32, "layer in_dim");
      const std::size_t width = r.size_at_most(std::size_t{1} << 32, "layer width");
      r.need(width * 9);
      std::vector<GateKind> gates(width);
      for (auto& k : gates) {
        const std::uint8_t idx = r.u8();
        if (idx >= 16) throw DataError(path.string() + ": gate index out of range");
        k = GateKind(idx);
      }
      std::vector<std::uint32_t> a(width), b(width);
      for (auto& v : a) v = r.u32();
      for (auto& v : b) v = r.u32();
      cm.groups[static_cast<int>(g)].emplace_back(in_dim, std::move(a), std::move(b), std::move(gates));
    }
  }
  r.expect_end();
  cm.validate();
  return cm;
}

CheckpointKind checkpoint_kind(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  char head[6] = {};
  in.read(head, 6);
  const std::string_view s(head, static_cast<std::size_t>(in.gcount()));
  if (s.starts_with(kCollapsedMagic)) return CheckpointKind::kCollapsed;
  if (s.starts_with(kSoftMagic)) return CheckpointKind::kSoft;
  throw DataError(path.string() + ": not a checkpoint (unknown magic)");
}

void save_train_state(const TrainState& st, const std::filesystem::path& path) {
  nlohmann::json epoch = nlohmann::json::array();
  for (const auto& b : st.epoch) epoch.push_back({{"pairs", b.pairs}, {"tokens", b.tokens}});
  const AdamW& opt = st.optimizer;
  std::vector<std::size_t> shapes;
  for (const auto& m : opt.first_moments()) shapes.push_back(m.size());
  const nlohmann::json j = {
      {"step", st.step},
      {"adam_steps", st.optimizer.steps()},
      {"lr", st.optimizer.lr()},
      {"scheduler_best", st.scheduler.best()},
      {"scheduler_since", st.scheduler.since_improvement()},
      {"last_eval_step", st.last_eval_step},
      {"epoch", epoch},
      {"epoch_pos", st.epoch_pos},
      {"shapes", shapes},
      {"rng",
       {{"data", rng_state(st.data_rng)},
        {"hidden", rng_state(st.hidden_rng)},
        {"dropout", rng_state(st.dropout_rng)},
        {"gumbel", rng_state(st.gumbel_rng)}}},
  };
  ByteWriter w;
  w.header(kStateMagic, j.dump());
  for (const auto& m : opt.first_moments()) w.f64s(m);
  for (const auto& v : opt.second_moments()) w.f64s(v);
  w.finish_to(path);
}

void load_train_state(TrainState& st, const std::filesystem::path& path) {
  ByteReader r(read_file(path), path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.open(kStateMagic));
    auto& m = st.optimizer.first_moments();
    auto& v = st.optimizer.second_moments();
    const auto shapes = j.at("shapes").get<std::vector<std::size_t>>();
    if (shapes.size() != m.size()) throw DataError(path.string() + ": optimizer state does not match the model");
    for (std::size_t i = 0; i < shapes.size(); ++i)
      if (shapes[i] != m[i].size()) throw DataError(path.string() + ": optimizer state does not match the model");
    for (auto& t : m) r.f64s(t);
    for (auto& t : v) r.f64s(t);
    r.expect_end();
    st.step = j.at("step").get<std::int64_t>();
    st.optimizer.set_steps(j.at("adam_steps").get<std::int64_t>());
    st.optimizer.set_lr(j.at("lr").get<double>());
    st.scheduler.restore(j.at("scheduler_best").is_null() ? INFINITY : j.at("scheduler_best").get<double>(),
                         j.at("scheduler_since").get<std::int64_t>());
    st.last_eval_step = j.at("last_eval_step").get<std::int64_t>();
    st.epoch.clear();
    for (const auto& b : j.at("epoch"))
      st.epoch.push_back({b.at("pairs").get<std::vector<std::size_t>>(), b.at("tokens").get<std::size_t>()});
    st.epoch_pos = j.at("epoch_pos").get<std::size_t>();
    set_rng_state(st.data_rng, j.at("rng").at("data").get<std::string>());
    set_rng_state(st.hidden_rng, j.at("rng").at("hidden").get<std::string>());
    set_rng_state(st.dropout_rng, j.at("rng").at("dropout").get<std::string>());
    set_rng_state(st.gumbel_rng, j.at("rng").at("gumbel").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed train state (" + e.what() + ")");
  }
}

}  // namespace rdlgn
