// Python bindings for the core operations. Token batches are lists of lists
// of ints; probabilities come back as numpy arrays of shape (steps, V, lanes).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rdlgn/checkpoint.hpp"
#include "rdlgn/collapsed.hpp"
#include "rdlgn/config.hpp"
#include "rdlgn/data.hpp"
#include "rdlgn/error.hpp"
#include "rdlgn/run.hpp"

namespace py = pybind11;
using namespace rdlgn;

namespace {

py::dict accounting_dict(const ModelConfig& cfg) {
  const Accounting a = accounting(cfg);
  py::dict d;
  py::dict logits;
  for (Group g : kAllGroups) logits[py::str(std::string(group_name(g)))] = a.group_logits[static_cast<int>(g)];
  d["group_logits"] = logits;
  d["embedding_params"] = a.embedding_params;
  d["trainable_params"] = a.trainable_params;
  d["collapsed_gates"] = a.collapsed_gates;
  d["embedding_bits"] = a.embedding_bits;
  return d;
}

py::array_t<double> stack_probs(const std::vector<Matrix>& steps) {
  const std::size_t S = steps.size(), V = S ? steps[0].rows() : 0, L = S ? steps[0].cols() : 0;
  py::array_t<double> out({S, V, L});
  auto w = out.mutable_unchecked<3>();
  for (std::size_t t = 0; t < S; ++t)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t l = 0; l < L; ++l) w(t, v, l) = steps[t](v, l);
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["mode"] = r.mode;
  d["accuracy"] = r.accuracy;
  d["bleu"] = r.bleu;
  d["perplexity"] = r.perplexity ? py::object(py::float_(*r.perplexity)) : py::object(py::none());
  d["tokens"] = r.tokens;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Recurrent differentiable logic gate networks";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("relaxed_eval", [](int gate, double a, double b) {
    if (gate < 0 || gate > 15) throw py::value_error("gate index must be in [0, 15]");
    if (!(a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0)) throw py::value_error("inputs must lie in [0, 1]");
    return relaxed_eval(GateKind(static_cast<std::uint8_t>(gate)), a, b);
  }, py::arg("gate"), py::arg("a"), py::arg("b"));
  m.def("discrete_eval", [](int gate, bool a, bool b) {
    if (gate < 0 || gate > 15) throw py::value_error("gate index must be in [0, 15]");
    return discrete_eval(GateKind(static_cast<std::uint8_t>(gate)), a, b);
  }, py::arg("gate"), py::arg("a"), py::arg("b"));
  m.def("gate_name", [](int gate) { return std::string(GateKind(static_cast<std::uint8_t>(gate & 15)).name()); });

  m.def("group_sum", [](const std::vector<double>& v, std::size_t k, double tau) { return group_sum(v, k, tau); },
        py::arg("values"), py::arg("k"), py::arg("tau") = 1.0);
  m.def("hard_group_scores", [](const std::vector<std::uint8_t>& bits, std::size_t k) {
    return hard_group_scores(bits, k);
  });

  m.def("tokenize", &tokenize);
  m.def("corpus_bleu", &corpus_bleu, py::arg("hypotheses"), py::arg("references"));
  m.def("make_shift_sample", [](const std::vector<TokenId>& t, std::size_t f) { return make_shift_sample(t, f); });

  m.def("base_preset", [] { return model_config_to_json(ModelConfig::base_preset()); },
        "Reference-size model config as JSON");
  m.def("tiny_config", [] { return model_config_to_json(tiny_gradcheck_config()); },
        "Gradient-check model config as JSON");
  m.def("accounting", [](const std::string& model_json) { return accounting_dict(model_config_from_json(model_json)); },
        py::arg("model_json"));

  m.def("gradcheck", [](const std::string& model_json) {
    const GradcheckReport r = gradcheck(model_config_from_json(model_json));
    py::dict d;
    d["passed"] = r.passed;
    d["max_rel"] = r.max_rel;
    d["closed_form_max_abs"] = r.closed_form_max_abs;
    d["params"] = r.params;
    d["report"] = format_gradcheck(r);
    return d;
  }, py::arg("model_json"));

  py::class_<Seq2SeqModel>(m, "Model")
      .def(py::init([](const std::string& model_json) {
             ModelConfig c = model_config_from_json(model_json);
             c.validate();
             return Seq2SeqModel(c);
           }), py::arg("model_json"))
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
      .def("save", [](const Seq2SeqModel& s, const std::filesystem::path& p) { save_model(s, p); })
      .def_property_readonly("config_json", [](const Seq2SeqModel& s) { return model_config_to_json(s.config()); })
      .def_property_readonly("parameter_count", &Seq2SeqModel::parameter_count)
      .def("forward", [](const Seq2SeqModel& s, const TokenRows& src, const TokenRows& tgt_in, std::uint64_t seed) {
             Rng noise(seed);
             ForwardOptions o;
             o.hidden_rng = &noise;
             return stack_probs(s.forward(src, tgt_in, o).probs);
           }, py::arg("src"), py::arg("tgt_in"), py::arg("noise_seed") = 0,
           "Teacher-forced probabilities, shape (steps, V, lanes)")
      .def("generate", [](const Seq2SeqModel& s, const TokenRows& src, std::size_t max_len, std::uint64_t seed) {
             Rng noise(seed);
             return s.generate(src, max_len, noise);
           }, py::arg("src"), py::arg("max_len"), py::arg("noise_seed") = 0)
      .def("collapse", [](const Seq2SeqModel& s) { return collapse_model(s); });

  py::class_<CollapsedModel>(m, "CollapsedModel")
      .def_static("load", [](const std::filesystem::path& p) { return load_collapsed(p); })
      .def("save", [](const CollapsedModel& c, const std::filesystem::path& p) { save_collapsed(c, p); })
      .def_property_readonly("config_json", [](const CollapsedModel& c) { return model_config_to_json(c.config); })
      .def("generate", [](const CollapsedModel& c, const TokenRows& src, std::size_t max_len) {
             return hard_forward_seq(c, src, max_len);
           }, py::arg("src"), py::arg("max_len"))
      .def("teacher_forced", &hard_teacher_forced, py::arg("src"), py::arg("tgt_in"))
      .def("layer_gates", [](const CollapsedModel& c, const std::string& group, std::size_t index) {
             for (Group g : kAllGroups)
               if (group_name(g) == group) {
                 const auto& ls = c.layers(g);
                 if (index >= ls.size()) throw py::index_error("layer index out of range");
                 std::vector<int> out;
                 for (GateKind k : ls[index].gates()) out.push_back(k.index());
                 return out;
               }
             throw py::value_error("group must be one of N, K, L, P, M");
           })
      .def("__eq__", [](const CollapsedModel& a, const CollapsedModel& b) { return a == b; });

  m.def("eval_layer", [](std::size_t in_dim, std::vector<std::uint32_t> conn_a, std::vector<std::uint32_t> conn_b,
                         const std::vector<int>& gate_ids, py::array_t<std::uint8_t, py::array::c_style> bits) {
    if (bits.ndim() != 2 || static_cast<std::size_t>(bits.shape(0)) != in_dim)
      throw py::value_error("bits must have shape (in_dim, lanes)");
    std::vector<GateKind> kinds;
    for (int g : gate_ids) {
      if (g < 0 || g > 15) throw py::value_error("gate index must be in [0, 15]");
      kinds.emplace_back(static_cast<std::uint8_t>(g));
    }
    const CollapsedLogicLayer layer(in_dim, std::move(conn_a), std::move(conn_b), std::move(kinds));
    const std::size_t lanes = bits.shape(1);
    BitLanes x(in_dim, lanes);
    auto r = bits.unchecked<2>();
    for (std::size_t i = 0; i < in_dim; ++i)
      for (std::size_t l = 0; l < lanes; ++l) x.set(i, l, r(i, l) != 0);
    const BitLanes y = eval_bitpacked(layer, x);
    py::array_t<std::uint8_t> out({layer.width(), lanes});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t j = 0; j < layer.width(); ++j)
      for (std::size_t l = 0; l < lanes; ++l) w(j, l) = y.get(j, l);
    return out;
  }, py::arg("in_dim"), py::arg("conn_a"), py::arg("conn_b"), py::arg("gates"), py::arg("bits"),
     "Bit-packed evaluation of one collapsed layer; bits has shape (in_dim, lanes)");

  m.def("train", [](const std::filesystem::path& config_path, std::int64_t steps, const std::string& output_dir) {
    RunConfig cfg = load_run_config(config_path);
    if (steps >= 0) cfg.train.steps = steps;
    cfg.validate();
    const PreparedData data = build_dataset(cfg);
    py::gil_scoped_release release;
    TrainOutcome out = output_dir.empty() ? train_in_memory(cfg, data)
                                          : run_training(cfg, data, RunPaths{output_dir}, nullptr);
    const EvalReport soft = evaluate_soft_report(out.model, data.data.val, cfg.loss.label_smoothing,
                                                 cfg.train.eval_lanes);
    const EvalReport hard = evaluate_hard_report(collapse_model(out.model), data.data.val, cfg.train.eval_lanes);
    py::gil_scoped_acquire acquire;
    py::dict d;
    d["model"] = py::cast(std::move(out.model));
    d["steps"] = out.steps_done;
    d["soft"] = report_dict(soft);
    d["hard"] = report_dict(hard);
    return d;
  }, py::arg("config_path"), py::arg("steps") = -1, py::arg("output_dir") = "",
     "Train from a JSON run config; returns the model and soft/hard evaluation reports");
}
