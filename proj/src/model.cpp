#include "deca/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deca {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kMF: return "mf";
    case ModelKind::kGMF: return "gmf";
    case ModelKind::kMlpBinary: return "mlp-binary";
    case ModelKind::kMlpClassifier: return "mlp-classifier";
    case ModelKind::kHPairwise: return "h-pairwise";
    case ModelKind::kHMulticlass: return "h-multiclass";
  }
  throw ConfigError("unknown model kind");
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "mf") return ModelKind::kMF;
  if (name == "gmf") return ModelKind::kGMF;
  if (name == "mlp-binary") return ModelKind::kMlpBinary;
  if (name == "mlp-classifier") return ModelKind::kMlpClassifier;
  if (name == "h-pairwise") return ModelKind::kHPairwise;
  if (name == "h-multiclass") return ModelKind::kHMulticlass;
  throw ConfigError("unknown model kind '" + name + "'");
}

void ModelSpec::validate() const {
  if (init_scale <= 0) throw ConfigError("init_scale must be positive");
  switch (kind) {
    case ModelKind::kMF:
    case ModelKind::kGMF:
    case ModelKind::kHPairwise:
      if (num_users < 1 || num_items < 1) throw ConfigError("pair model needs users and items");
      if (latent_dim < 1) throw ConfigError("latent_dim must be at least 1");
      break;
    case ModelKind::kMlpBinary:
    case ModelKind::kMlpClassifier:
      if (input_dim < 1) throw ConfigError("feature model needs input_dim");
      if (hidden.empty()) throw ConfigError("MLP kinds need at least one hidden width");
      for (int w : hidden) {
        if (w < 1) throw ConfigError("hidden widths must be positive");
      }
      if (kind == ModelKind::kMlpClassifier && num_classes < 2) {
        throw ConfigError("classifier needs num_classes >= 2");
      }
      break;
    case ModelKind::kHMulticlass:
      if (input_dim < 1) throw ConfigError("channel model needs input_dim");
      if (num_classes < 2) throw ConfigError("channel model needs num_classes >= 2");
      break;
  }
}

nlohmann::json ModelSpec::to_json() const {
  return {{"kind", to_string(kind)},     {"num_users", num_users},
          {"num_items", num_items},      {"latent_dim", latent_dim},
          {"input_dim", input_dim},      {"hidden", hidden},
          {"num_classes", num_classes},  {"init_scale", init_scale},
          {"seed", seed}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.kind = model_kind_from_string(j.at("kind").get<std::string>());
  s.num_users = j.value("num_users", 0);
  s.num_items = j.value("num_items", 0);
  s.latent_dim = j.value("latent_dim", 32);
  s.input_dim = j.value("input_dim", 0);
  s.hidden = j.value("hidden", std::vector<int>{});
  s.num_classes = j.value("num_classes", 0);
  s.init_scale = j.value("init_scale", 0.01);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

void DifferentiableModel::init_params(std::size_t total,
                                      const std::vector<ParamSegment>& segments) {
  segments_ = segments;
  params_.resize(total);
  Rng rng(spec_.seed);
  std::normal_distribution<double> gauss(0.0, spec_.init_scale);
  for (double& v : params_) v = gauss(rng);
}

std::vector<double> DifferentiableModel::embedding(const Input&) const {
  throw ConfigError("model kind " + to_string(spec_.kind) + " has no embedding tap");
}

int DifferentiableModel::embedding_dim() const {
  throw ConfigError("model kind " + to_string(spec_.kind) + " has no embedding tap");
}

std::vector<double> DifferentiableModel::input_gradient(const Input&,
                                                        std::span<const double>) const {
  throw ConfigError("model kind " + to_string(spec_.kind) + " has no feature input");
}

void DifferentiableModel::backward_embedding(const Input&, std::span<const double>,
                                             std::span<double>) const {
  throw ConfigError("model kind " + to_string(spec_.kind) + " has no embedding tap");
}

namespace {

// --- Matrix factorization (also the pairwise channel model) -----------------

class MfModel final : public DifferentiableModel {
 public:
  explicit MfModel(ModelSpec spec) : DifferentiableModel(std::move(spec)) {
    const auto d = static_cast<std::size_t>(spec_.latent_dim);
    const std::size_t nu = static_cast<std::size_t>(spec_.num_users) * d;
    const std::size_t ni = static_cast<std::size_t>(spec_.num_items) * d;
    init_params(nu + ni, {{"user_embed", 0, nu}, {"item_embed", nu, ni}});
  }

  int output_dim() const override { return 1; }

  void forward(const Input& in, std::span<double> out) const override {
    out[0] = sigmoid(logit(in));
  }

  void backward(const Input& in, std::span<const double> upstream,
                std::span<double> grad) const override {
    const double p = sigmoid(logit(in));
    const double dz = upstream[0] * p * (1.0 - p);
    const int d = spec_.latent_dim;
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_offset() + static_cast<std::size_t>(in.item) * d;
    for (int k = 0; k < d; ++k) {
      grad[uo + k] += dz * params_[io + k];
      grad[io + k] += dz * params_[uo + k];
    }
  }

  std::vector<double> embedding(const Input& in) const override {
    const int d = spec_.latent_dim;
    std::vector<double> e(static_cast<std::size_t>(2 * d));
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_offset() + static_cast<std::size_t>(in.item) * d;
    for (int k = 0; k < d; ++k) {
      e[k] = params_[uo + k];
      e[d + k] = params_[io + k];
    }
    return e;
  }

  int embedding_dim() const override { return 2 * spec_.latent_dim; }

  void backward_embedding(const Input& in, std::span<const double> d_embedding,
                          std::span<double> grad) const override {
    const int d = spec_.latent_dim;
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_offset() + static_cast<std::size_t>(in.item) * d;
    for (int k = 0; k < d; ++k) {
      grad[uo + k] += d_embedding[k];
      grad[io + k] += d_embedding[d + k];
    }
  }

 private:
  std::size_t item_offset() const {
    return static_cast<std::size_t>(spec_.num_users) * spec_.latent_dim;
  }
  double logit(const Input& in) const {
    const int d = spec_.latent_dim;
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_offset() + static_cast<std::size_t>(in.item) * d;
    double z = 0.0;
    for (int k = 0; k < d; ++k) z += params_[uo + k] * params_[io + k];
    return z;
  }
};

// --- GMF: elementwise product followed by a learned output weight -----------

class GmfModel final : public DifferentiableModel {
 public:
  explicit GmfModel(ModelSpec spec) : DifferentiableModel(std::move(spec)) {
    const auto d = static_cast<std::size_t>(spec_.latent_dim);
    const std::size_t nu = static_cast<std::size_t>(spec_.num_users) * d;
    const std::size_t ni = static_cast<std::size_t>(spec_.num_items) * d;
    init_params(nu + ni + d, {{"user_embed", 0, nu},
                              {"item_embed", nu, ni},
                              {"output_weight", nu + ni, d}});
  }

  int output_dim() const override { return 1; }

  void forward(const Input& in, std::span<double> out) const override {
    out[0] = sigmoid(logit(in));
  }

  void backward(const Input& in, std::span<const double> upstream,
                std::span<double> grad) const override {
    const double p = sigmoid(logit(in));
    const double dz = upstream[0] * p * (1.0 - p);
    const int d = spec_.latent_dim;
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_off() + static_cast<std::size_t>(in.item) * d;
    const std::size_t wo = weight_off();
    for (int k = 0; k < d; ++k) {
      const double u = params_[uo + k], v = params_[io + k], w = params_[wo + k];
      grad[uo + k] += dz * w * v;
      grad[io + k] += dz * w * u;
      grad[wo + k] += dz * u * v;
    }
  }

  std::vector<double> embedding(const Input& in) const override {
    const int d = spec_.latent_dim;
    std::vector<double> e(static_cast<std::size_t>(2 * d));
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_off() + static_cast<std::size_t>(in.item) * d;
    for (int k = 0; k < d; ++k) {
      e[k] = params_[uo + k];
      e[d + k] = params_[io + k];
    }
    return e;
  }

  int embedding_dim() const override { return 2 * spec_.latent_dim; }

  void backward_embedding(const Input& in, std::span<const double> d_embedding,
                          std::span<double> grad) const override {
    const int d = spec_.latent_dim;
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_off() + static_cast<std::size_t>(in.item) * d;
    for (int k = 0; k < d; ++k) {
      grad[uo + k] += d_embedding[k];
      grad[io + k] += d_embedding[d + k];
    }
  }

 private:
  std::size_t item_off() const {
    return static_cast<std::size_t>(spec_.num_users) * spec_.latent_dim;
  }
  std::size_t weight_off() const {
    return item_off() + static_cast<std::size_t>(spec_.num_items) * spec_.latent_dim;
  }
  double logit(const Input& in) const {
    const int d = spec_.latent_dim;
    const std::size_t uo = static_cast<std::size_t>(in.user) * d;
    const std::size_t io = item_off() + static_cast<std::size_t>(in.item) * d;
    const std::size_t wo = weight_off();
    double z = 0.0;
    for (int k = 0; k < d; ++k) z += params_[wo + k] * params_[uo + k] * params_[io + k];
    return z;
  }
};

// --- Feedforward stack shared by the MLP kinds -------------------------------

enum class Head { kSigmoid, kSoftmax };

class MlpModel : public DifferentiableModel {
 public:
  MlpModel(ModelSpec spec, std::vector<int> dims, Head head)
      : DifferentiableModel(std::move(spec)), dims_(std::move(dims)), head_(head) {
    std::vector<ParamSegment> segs;
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const auto wsz = static_cast<std::size_t>(dims_[l]) * dims_[l + 1];
      const auto bsz = static_cast<std::size_t>(dims_[l + 1]);
      segs.push_back({"w" + std::to_string(l), total, wsz});
      total += wsz;
      segs.push_back({"b" + std::to_string(l), total, bsz});
      total += bsz;
    }
    init_params(total, segs);
  }

  int output_dim() const override { return head_ == Head::kSigmoid ? 1 : dims_.back(); }

  void forward(const Input& in, std::span<double> out) const override {
    std::vector<std::vector<double>> acts;
    run(in, acts);
    const auto& top = acts.back();
    std::copy(top.begin(), top.end(), out.begin());
  }

  void backward(const Input& in, std::span<const double> upstream,
                std::span<double> grad) const override {
    std::vector<std::vector<double>> acts;
    run(in, acts);
    backprop(acts, dims_.size() - 2, head_backward(acts.back(), upstream), &grad, false);
  }

  std::vector<double> input_gradient(const Input& in,
                                     std::span<const double> upstream) const override {
    std::vector<std::vector<double>> acts;
    run(in, acts);
    return backprop(acts, dims_.size() - 2, head_backward(acts.back(), upstream), nullptr, true);
  }

  void backward_embedding(const Input& in, std::span<const double> d_embedding,
                          std::span<double> grad) const override {
    if (dims_.size() < 3) return;  // the embedding is the raw input
    std::vector<std::vector<double>> acts;
    run(in, acts);
    // The tap is the post-ReLU activation feeding the top layer.
    const std::size_t tap_layer = dims_.size() - 3;
    const auto& tap = acts[tap_layer + 1];
    std::vector<double> dz(tap.size());
    for (std::size_t i = 0; i < tap.size(); ++i) {
      dz[i] = tap[i] > 0.0 ? d_embedding[i] : 0.0;
    }
    backprop(acts, tap_layer, std::move(dz), &grad, false);
  }

  std::vector<double> embedding(const Input& in) const override {
    std::vector<std::vector<double>> acts;
    run(in, acts);
    return acts[acts.size() - 2];
  }

  int embedding_dim() const override { return dims_[dims_.size() - 2]; }

 protected:
  virtual std::vector<double> make_input(const Input& in) const {
    if (in.features.size() != static_cast<std::size_t>(dims_.front())) {
      throw DataError("feature vector size mismatch");
    }
    return {in.features.begin(), in.features.end()};
  }

 private:
  std::size_t seg_offset(std::size_t idx) const { return segments_[idx].offset; }

  // d(loss)/d(logit) at the top layer from d(loss)/d(probability).
  std::vector<double> head_backward(const std::vector<double>& probs,
                                    std::span<const double> upstream) const {
    std::vector<double> dz(probs.size());
    if (head_ == Head::kSigmoid) {
      dz[0] = upstream[0] * probs[0] * (1.0 - probs[0]);
    } else {
      double inner = 0.0;
      for (std::size_t j = 0; j < probs.size(); ++j) inner += upstream[j] * probs[j];
      for (std::size_t c = 0; c < probs.size(); ++c) dz[c] = probs[c] * (upstream[c] - inner);
    }
    return dz;
  }

  // Backpropagates dz (sensitivity to the pre-activation output of
  // `top_layer`) down to layer 0, accumulating parameter gradients when
  // `grad` is set; returns the input sensitivity when `want_input`.
  std::vector<double> backprop(const std::vector<std::vector<double>>& acts,
                               std::size_t top_layer, std::vector<double> dz,
                               std::span<double>* grad, bool want_input) const {
    for (std::size_t l = top_layer + 1; l-- > 0;) {
      const auto& a = acts[l];  // input activation of layer l
      const std::size_t wof = seg_offset(2 * l);
      const std::size_t bof = seg_offset(2 * l + 1);
      const int in_dim = dims_[l], out_dim = dims_[l + 1];
      if (grad != nullptr) {
        for (int j = 0; j < out_dim; ++j) (*grad)[bof + j] += dz[j];
        for (int i = 0; i < in_dim; ++i) {
          const double ai = a[i];
          if (ai != 0.0) {
            for (int j = 0; j < out_dim; ++j) {
              (*grad)[wof + static_cast<std::size_t>(i) * out_dim + j] += ai * dz[j];
            }
          }
        }
      }
      if (l == 0 && !want_input) return {};
      std::vector<double> da(static_cast<std::size_t>(in_dim), 0.0);
      for (int i = 0; i < in_dim; ++i) {
        double s = 0.0;
        for (int j = 0; j < out_dim; ++j) {
          s += params_[wof + static_cast<std::size_t>(i) * out_dim + j] * dz[j];
        }
        // ReLU pass-through on hidden activations; the input layer is linear.
        da[i] = l == 0 ? s : (a[i] > 0.0 ? s : 0.0);
      }
      if (l == 0) return da;
      dz = std::move(da);
    }
    return {};
  }

  // Fills acts[0] = input, acts[l] = activation after layer l (ReLU on hidden,
  // head squashing on the top layer).
  void run(const Input& in, std::vector<std::vector<double>>& acts) const {
    acts.clear();
    acts.push_back(make_input(in));
    const std::size_t layers = dims_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& a = acts.back();
      const std::size_t wof = seg_offset(2 * l);
      const std::size_t bof = seg_offset(2 * l + 1);
      const int in_dim = dims_[l], out_dim = dims_[l + 1];
      std::vector<double> z(static_cast<std::size_t>(out_dim));
      for (int j = 0; j < out_dim; ++j) z[j] = params_[bof + j];
      for (int i = 0; i < in_dim; ++i) {
        const double ai = a[i];
        if (ai != 0.0) {
          for (int j = 0; j < out_dim; ++j) {
            z[j] += ai * params_[wof + static_cast<std::size_t>(i) * out_dim + j];
          }
        }
      }
      if (l + 1 < layers) {
        for (double& v : z) v = std::max(v, 0.0);
      } else if (head_ == Head::kSigmoid) {
        z[0] = sigmoid(z[0]);
      } else {
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) {
          v = std::exp(v - zmax);
          sum += v;
        }
        for (double& v : z) v /= sum;
      }
      acts.push_back(std::move(z));
    }
  }

  std::vector<int> dims_;
  Head head_;
};

// Multi-class channel model: consumes a feature embedding concatenated with a
// one-hot code of the conditioning true class.
class HMulticlassModel final : public MlpModel {
 public:
  explicit HMulticlassModel(ModelSpec spec)
      : MlpModel(spec,
                 {spec.input_dim + spec.num_classes,
                  spec.hidden.empty() ? 64 : spec.hidden.front(), spec.num_classes},
                 Head::kSoftmax) {}

  // Sensitivity w.r.t. the feature block only; the one-hot code is fixed.
  std::vector<double> input_gradient(const Input& in,
                                     std::span<const double> upstream) const override {
    auto full = MlpModel::input_gradient(in, upstream);
    full.resize(static_cast<std::size_t>(spec_.input_dim));
    return full;
  }

 protected:
  std::vector<double> make_input(const Input& in) const override {
    if (in.class_code < 0 || in.class_code >= spec_.num_classes) {
      throw DataError("channel model needs a class code in range");
    }
    if (in.features.size() != static_cast<std::size_t>(spec_.input_dim)) {
      throw DataError("feature vector size mismatch");
    }
    std::vector<double> x(static_cast<std::size_t>(spec_.input_dim + spec_.num_classes), 0.0);
    std::copy(in.features.begin(), in.features.end(), x.begin());
    x[static_cast<std::size_t>(spec_.input_dim) + in.class_code] = 1.0;
    return x;
  }
};

std::vector<int> mlp_dims(const ModelSpec& spec, int out_dim) {
  std::vector<int> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(out_dim);
  return dims;
}

std::unique_ptr<DifferentiableModel> build_unchecked(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::kMF:
    case ModelKind::kHPairwise:
      return std::make_unique<MfModel>(spec);
    case ModelKind::kGMF:
      return std::make_unique<GmfModel>(spec);
    case ModelKind::kMlpBinary:
      return std::make_unique<MlpModel>(spec, mlp_dims(spec, 1), Head::kSigmoid);
    case ModelKind::kMlpClassifier:
      return std::make_unique<MlpModel>(spec, mlp_dims(spec, spec.num_classes), Head::kSoftmax);
    case ModelKind::kHMulticlass:
      return std::make_unique<HMulticlassModel>(spec);
  }
  throw ConfigError("unknown model kind");
}

}  // namespace

std::unique_ptr<DifferentiableModel> DifferentiableModel::clone() const {
  auto copy = build_unchecked(spec_);
  std::copy(params_.begin(), params_.end(), copy->params().begin());
  return copy;
}

std::unique_ptr<DifferentiableModel> build_model(const ModelSpec& spec) {
  spec.validate();
  return build_unchecked(spec);
}

std::unique_ptr<DifferentiableModel> build_model_unchecked(const ModelSpec& spec) {
  return build_unchecked(spec);
}

GradCheckReport grad_check(const DifferentiableModel& model, std::span<const Input> probes,
                           double tolerance) {
  GradCheckReport report;
  const std::size_t n = model.num_params();
  std::vector<double> analytic(n, 0.0);
  std::vector<std::vector<double>> weights;

  Rng rng(0xC0FFEEull);
  std::uniform_real_distribution<double> w_dist(0.5, 1.5);
  for (const Input& in : probes) {
    std::vector<double> w(static_cast<std::size_t>(model.output_dim()));
    for (double& v : w) v = w_dist(rng);
    weights.push_back(w);
    model.backward(in, w, analytic);
  }

  auto functional = [&](const DifferentiableModel& m) {
    double s = 0.0;
    for (std::size_t p = 0; p < probes.size(); ++p) {
      const auto out = m.forward_vec(probes[p]);
      for (std::size_t j = 0; j < out.size(); ++j) s += weights[p][j] * out[j];
    }
    return s;
  };

  auto probe_model = model.clone();
  auto params = probe_model->params();
  const double step = 1e-5;
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = functional(*probe_model);
    params[i] = saved - step;
    const double down = functional(*probe_model);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double rel = std::abs(analytic[i] - numeric) /
                       std::max({1e-4, std::abs(analytic[i]), std::abs(numeric)});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = i;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

nlohmann::json checkpoint_to_json(const DifferentiableModel& model) {
  nlohmann::json segs;
  const auto params = model.params();
  for (const ParamSegment& seg : model.segments()) {
    segs[seg.name] = std::vector<double>(params.begin() + seg.offset,
                                         params.begin() + seg.offset + seg.size);
  }
  return {{"schema", "deca-checkpoint/1"},
          {"spec", model.spec().to_json()},
          {"segments", std::move(segs)}};
}

std::unique_ptr<DifferentiableModel> model_from_checkpoint(const nlohmann::json& j) {
  if (j.value("schema", "") != "deca-checkpoint/1") {
    throw DataError("unsupported checkpoint schema");
  }
  auto model = build_unchecked(ModelSpec::from_json(j.at("spec")));
  auto params = model->params();
  for (const ParamSegment& seg : model->segments()) {
    const auto values = j.at("segments").at(seg.name).get<std::vector<double>>();
    if (values.size() != seg.size) {
      throw DataError("checkpoint segment '" + seg.name + "' has wrong size");
    }
    std::copy(values.begin(), values.end(), params.begin() + seg.offset);
  }
  return model;
}

}  // namespace deca
