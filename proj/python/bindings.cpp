#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "deca/dataset.hpp"
#include "deca/experiment.hpp"
#include "deca/losses.hpp"
#include "deca/metrics.hpp"
#include "deca/model.hpp"
#include "deca/train.hpp"

namespace py = pybind11;
using namespace deca;

namespace {

nlohmann::json parse_json(const std::string& text) {
  return nlohmann::json::parse(text);
}

Input pair_input(int user, int item) {
  Input in;
  in.user = user;
  in.item = item;
  return in;
}

Input checked_pair(const DifferentiableModel& model, int user, int item) {
  const ModelSpec& spec = model.spec();
  if (user < 0 || user >= spec.num_users || item < 0 || item >= spec.num_items) {
    throw DataError("pair (" + std::to_string(user) + ", " + std::to_string(item) +
                    ") outside the model's user/item range");
  }
  return pair_input(user, item);
}

}  // namespace

PYBIND11_MODULE(_deca, m) {
  m.doc() = "Denoising with cross-model agreement: C++ core bindings";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");

  py::class_<Interaction>(m, "Interaction")
      .def_readonly("user", &Interaction::user)
      .def_readonly("item", &Interaction::item)
      .def_readonly("rating", &Interaction::rating)
      .def_readonly("timestamp", &Interaction::timestamp);

  py::class_<ImplicitDataset>(m, "ImplicitDataset")
      .def_readonly("num_users", &ImplicitDataset::num_users)
      .def_readonly("num_items", &ImplicitDataset::num_items)
      .def_readonly("interactions", &ImplicitDataset::interactions)
      .def("observed", &ImplicitDataset::observed)
      .def("true_positive", &ImplicitDataset::true_positive)
      .def("item_popularity", &ImplicitDataset::item_popularity)
      .def("to_json", [](const ImplicitDataset& d) { return d.to_json().dump(); })
      .def_static("from_json",
                  [](const std::string& text) { return ImplicitDataset::from_json(parse_json(text)); });

  py::class_<MultiClassDataset>(m, "MultiClassDataset")
      .def_readonly("num_classes", &MultiClassDataset::num_classes)
      .def_readonly("feature_dim", &MultiClassDataset::feature_dim)
      .def_readonly("noisy_labels", &MultiClassDataset::noisy_labels)
      .def_readonly("true_labels", &MultiClassDataset::true_labels)
      .def("__len__", &MultiClassDataset::size)
      .def("row",
           [](const MultiClassDataset& d, int i) {
             const auto r = d.row(i);
             return std::vector<double>(r.begin(), r.end());
           })
      .def("to_json", [](const MultiClassDataset& d) { return d.to_json().dump(); })
      .def_static("from_json", [](const std::string& text) {
        return MultiClassDataset::from_json(parse_json(text));
      });

  m.def("gen_planted_implicit", &gen_planted_implicit, py::arg("num_users"),
        py::arg("num_items"), py::arg("latent_dim"), py::arg("noise_pos"),
        py::arg("noise_neg"), py::arg("seed"));
  m.def("gen_multiclass_blobs", &gen_multiclass_blobs, py::arg("num_classes"),
        py::arg("per_class"), py::arg("dim"), py::arg("spread"), py::arg("noise_ratio"),
        py::arg("seed"));
  m.def("load_movielens_100k", &load_movielens_100k, py::arg("path"));

  m.def("kl_bernoulli", &kl_bernoulli, py::arg("p"), py::arg("q"),
        py::arg("eps") = kProbClamp);
  m.def(
      "kl_categorical",
      [](const std::vector<double>& p, const std::vector<double>& q, double eps) {
        return kl_categorical(p, q, eps);
      },
      py::arg("p"), py::arg("q"), py::arg("eps") = kProbClamp);

  py::class_<DifferentiableModel>(m, "Model")
      .def("output_dim", &DifferentiableModel::output_dim)
      .def("num_params", &DifferentiableModel::num_params)
      .def("params",
           [](const DifferentiableModel& model) {
             return std::vector<double>(model.params().begin(), model.params().end());
           })
      .def("forward_pair",
           [](const DifferentiableModel& model, int user, int item) {
             return model.forward_vec(checked_pair(model, user, item));
           })
      .def("forward_features",
           [](const DifferentiableModel& model, const std::vector<double>& x) {
             Input in;
             in.features = x;
             return model.forward_vec(in);
           })
      .def("forward_channel",
           [](const DifferentiableModel& model, const std::vector<double>& x, int code) {
             Input in;
             in.features = x;
             in.class_code = code;
             return model.forward_vec(in);
           })
      .def("embedding",
           [](const DifferentiableModel& model, const std::vector<double>& x) {
             Input in;
             in.features = x;
             return model.embedding(in);
           })
      .def("checkpoint_json",
           [](const DifferentiableModel& model) { return checkpoint_to_json(model).dump(); });

  m.def("build_model", [](const std::string& spec_json) {
    return build_model(ModelSpec::from_json(parse_json(spec_json)));
  });
  m.def("model_from_checkpoint", [](const std::string& text) {
    return model_from_checkpoint(parse_json(text));
  });

  m.def(
      "grad_check_pairs",
      [](const DifferentiableModel& model, const std::vector<std::pair<int, int>>& pairs,
         double tolerance) {
        std::vector<Input> probes;
        for (const auto& [u, i] : pairs) probes.push_back(checked_pair(model, u, i));
        const auto report = grad_check(model, probes, tolerance);
        return py::make_tuple(report.passed, report.max_rel_error);
      },
      py::arg("model"), py::arg("pairs"), py::arg("tolerance") = 1e-3);

  m.def(
      "real_positive_probability",
      [](const DifferentiableModel& f, const DifferentiableModel* h,
         const DifferentiableModel* h_prime, const ImplicitDataset& data, int user, int item,
         const std::string& mode) {
        return real_positive_probability(f, h, h_prime, data, user, item,
                                         mode == "deca" ? DenoiseMode::kDeca
                                                        : DenoiseMode::kDecaP);
      },
      py::arg("f"), py::arg("h"), py::arg("h_prime"), py::arg("data"), py::arg("user"),
      py::arg("item"), py::arg("mode") = "deca_p");

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& out_dir) {
        const auto config = ExperimentConfig::parse(parse_json(config_json));
        return run_experiment(config, out_dir).report_paths;
      },
      py::arg("config_json"), py::arg("out_dir"));

  m.def(
      "run_experiment_file",
      [](const std::string& config_path, const std::string& out_dir) {
        return run_experiment(ExperimentConfig::load(config_path), out_dir).report_paths;
      },
      py::arg("config_path"), py::arg("out_dir"));
}
