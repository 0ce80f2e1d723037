#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "nrdfer/attention.hpp"
#include "nrdfer/checkpoint.hpp"
#include "nrdfer/decision.hpp"
#include "nrdfer/metrics.hpp"
#include "nrdfer/ops.hpp"
#include "nrdfer/synthetic.hpp"

namespace py = pybind11;
using namespace nrdfer;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
T from_json_text(const std::string& text) {
  return nlohmann::json::parse(text).get<T>();
}

template <typename T>
std::string to_json_text(const T& value) {
  return nlohmann::json(value).dump();
}

FloatArray frames_array(const FrameStack& f) {
  FloatArray out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(f.count), 3, static_cast<py::ssize_t>(f.height),
                                          static_cast<py::ssize_t>(f.width)});
  std::copy(f.pixels.begin(), f.pixels.end(), out.mutable_data());
  return out;
}

ConfusionMatrix confusion_from(py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast> counts) {
  if (counts.ndim() != 2 || counts.shape(0) != 7 || counts.shape(1) != 7)
    throw std::invalid_argument("confusion counts must be 7x7");
  ConfusionMatrix cm;
  auto c = counts.unchecked<2>();
  for (int t = 0; t < 7; ++t)
    for (int p = 0; p < 7; ++p) cm.add(t, p, c(t, p));
  return cm;
}

/// Float model wrapper; frames are numpy arrays [B, n, 3, H, W].
class Model {
 public:
  explicit Model(const ModelConfig& config) : net_(std::make_unique<NrDferNet<float>>(config)) {}
  explicit Model(std::unique_ptr<NrDferNet<float>> net) : net_(std::move(net)) {}

  py::dict forward(FloatArray frames) {
    if (frames.ndim() != 5) throw std::invalid_argument("frames must be [B, n, 3, H, W]");
    Shape shape(frames.shape(), frames.shape() + 5);
    std::vector<float> data(frames.data(), frames.data() + frames.size());
    NoGradGuard guard;
    const auto out = net_->forward(Tensor<float>(shape, data), false);
    py::dict result;
    result["logits"] = to_array(out.logits);
    result["class_token"] = to_array(out.temporal.class_token);
    py::list attention;
    for (const auto& a : out.temporal.attention) attention.append(to_array(a));
    result["attention"] = attention;
    return result;
  }

  void save(const std::string& path) const { write_checkpoint(path, capture(*net_)); }
  std::string config_json() const { return to_json_text(net_->config()); }
  std::size_t parameter_count() const { return net_->parameters().parameter_count(); }
  void set_use_dct(bool enabled) { net_->set_use_dct(enabled); }
  void set_use_dsf(bool enabled) { net_->set_use_dsf(enabled); }

 private:
  static FloatArray to_array(const Tensor<float>& t) {
    FloatArray out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
  }

  std::unique_ptr<NrDferNet<float>> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "NR-DFERNet core bindings";
  m.attr("CLASS_NAMES") = py::cast(std::vector<std::string>(kClassNames.begin(), kClassNames.end()));
  m.attr("NEUTRAL") = kNeutralClass;

  m.def("default_config_json", [](const std::string& which) {
    if (which == "full") return to_json_text(ModelConfig::full_scale());
    if (which == "micro") return to_json_text(ModelConfig::micro());
    if (which == "gradient_check") return to_json_text(ModelConfig::gradient_check());
    throw std::invalid_argument("unknown config: " + which);
  });

  m.def(
      "plan_snippets",
      [](std::size_t frames, std::size_t width, std::size_t stride) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& r : plan_snippets(frames, width, stride).ranges) out.emplace_back(r.start, r.length);
        return out;
      },
      py::arg("frames"), py::arg("width"), py::arg("stride"));

  m.def(
      "apply_filter",
      [](const std::vector<double>& sequence_logits, const std::vector<std::vector<double>>& snippet_logits,
         double mu1, double mu2) {
        const auto d = apply_filter(sequence_logits, snippet_logits, mu1, mu2);
        py::dict out;
        out["triggered"] = d.triggered;
        out["trigger_index"] = d.trigger_index ? py::cast(*d.trigger_index) : py::none();
        out["predicted"] = d.predicted_class();
        out["sequence_class"] = d.sequence_class();
        out["probabilities"] = d.final_probabilities();
        return out;
      },
      py::arg("sequence_logits"), py::arg("snippet_logits"), py::arg("mu1") = 0.7, py::arg("mu2") = 0.05);

  m.def("uar", [](py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast> c) {
    return uar(confusion_from(c));
  });
  m.def("war", [](py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast> c) {
    return war(confusion_from(c));
  });

  m.def("attention_rollout", [](const std::vector<DoubleArray>& layers) {
    std::vector<AttentionMap> maps;
    for (const auto& a : layers) {
      if (a.ndim() != 3 || a.shape(1) != a.shape(2)) throw std::invalid_argument("layers must be [heads, n, n]");
      maps.push_back({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                      std::vector<double>(a.data(), a.data() + a.size())});
    }
    const auto p = attention_rollout(maps);
    return py::make_tuple(p.weights, p.degenerate);
  });

  m.def(
      "generate",
      [](const std::string& spec_json, std::size_t count) {
        auto spec = from_json_text<SynthSpec>(spec_json);
        spec.validate();
        py::list out;
        for (const auto& s : generate(spec, count)) {
          py::dict d;
          d["frames"] = frames_array(s.sequence.frames);
          d["label"] = s.sequence.label;
          d["source_id"] = s.sequence.source_id;
          d["mask"] = mask_to_string(s.mask);
          d["fold"] = s.fold;
          out.append(d);
        }
        return out;
      },
      py::arg("spec_json"), py::arg("count"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& config_json) {
             auto c = from_json_text<ModelConfig>(config_json);
             c.validate();
             return Model(c);
           }),
           py::arg("config_json"))
      .def_static("load", [](const std::string& path) { return Model(load_model(path)); })
      .def("forward", &Model::forward, py::arg("frames"))
      .def("save", &Model::save)
      .def("config_json", &Model::config_json)
      .def("parameter_count", &Model::parameter_count)
      .def("set_use_dct", &Model::set_use_dct)
      .def("set_use_dsf", &Model::set_use_dsf);

  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
}
