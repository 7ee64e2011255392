#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fpb/checkpoint.hpp"
#include "fpb/cli.hpp"
#include "fpb/config.hpp"
#include "fpb/evaluation.hpp"

namespace py = pybind11;
using namespace fpb;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
  return a;
}

RunConfig parse_config(const std::string& text) {
  nlohmann::json cfg = to_json(RunConfig{});
  if (!text.empty()) merge_config(cfg, nlohmann::json::parse(text));
  RunConfig rc = run_config_from_json(cfg);
  rc.validate();
  return rc;
}

class PyModel {
 public:
  explicit PyModel(const std::string& config) : cfg_(parse_config(config)) {
    cfg_.model.backbone.pretrained_weights_path.clear();
    model_ = std::make_unique<FpbModel>(cfg_.model);
  }

  Array features(const Array& images) {
    py::gil_scoped_release release;
    Tensor f = model_->inference_features(to_tensor(images));
    py::gil_scoped_acquire acquire;
    return to_array(f);
  }

  void load_checkpoint(const std::string& path) { restore(model_->param_table(), fpb::load_checkpoint(path)); }

  std::string param_counts() {
    nlohmann::json modules = nlohmann::json::array();
    for (const auto& g : model_->param_groups())
      modules.push_back({{"module", g.name}, {"parameters", g.count}, {"counted", g.counted_in_total}});
    const auto total = model_->total_param_count(), backbone = model_->backbone_param_count();
    return nlohmann::json{{"modules", modules}, {"backbone", backbone}, {"total", total}, {"delta", total - backbone}}
        .dump();
  }

  std::int64_t inference_dim() const { return model_->inference_dim(); }

 private:
  RunConfig cfg_;
  std::unique_ptr<FpbModel> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Feature pyramid branch person re-identification";
  m.attr("__version__") = FPB_VERSION;

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def(
      "load_config",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return to_json(load_run_config(path, overrides)).dump();
      },
      py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("lr_at", [](int epoch, const std::string& config) { return lr_at(epoch, parse_config(config).train); },
        py::arg("epoch"), py::arg("config") = "");
  m.def(
      "generate_toy",
      [](const std::string& out_dir, const std::string& config) {
        return generate_toy(parse_config(config).toy, out_dir).to_json().dump();
      },
      py::arg("out_dir"), py::arg("config") = "");
  m.def(
      "evaluate",
      [](const Array& dist, const std::vector<int>& q_pids, const std::vector<int>& q_camids,
         const std::vector<int>& g_pids, const std::vector<int>& g_camids, int max_rank) {
        if (dist.ndim() != 2) throw std::invalid_argument("dist must be 2-D");
        const auto r = evaluate(to_tensor(dist), q_pids, q_camids, g_pids, g_camids, max_rank);
        return py::make_tuple(r.map, r.cmc, r.evaluated_queries);
      },
      py::arg("dist"), py::arg("q_pids"), py::arg("q_camids"), py::arg("g_pids"), py::arg("g_camids"),
      py::arg("max_rank") = 50);
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("config") = "")
      .def("features", &PyModel::features, py::arg("images"))
      .def("load_checkpoint", &PyModel::load_checkpoint, py::arg("path"))
      .def("param_counts", &PyModel::param_counts)
      .def_property_readonly("inference_dim", &PyModel::inference_dim);
}
