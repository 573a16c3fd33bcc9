#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deca/common.hpp"
#include "json.hpp"

namespace deca {

enum class ModelKind { kMF, kGMF, kMlpBinary, kMlpClassifier, kHPairwise, kHMulticlass };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ModelSpec {
  ModelKind kind = ModelKind::kMF;
  int num_users = 0;       // pair models
  int num_items = 0;       // pair models
  int latent_dim = 32;     // MF / GMF / H-pairwise
  int input_dim = 0;       // feature models
  std::vector<int> hidden; // MLP hidden widths; H-multiclass uses hidden[0] (default 64)
  int num_classes = 0;     // classifier / H-multiclass
  double init_scale = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

// Input record shared by all model kinds; each kind reads the parts it needs.
// Pair models use (user, item); feature models use `features`; the multi-class
// channel model additionally consumes `class_code` as a one-hot block.
struct Input {
  int user = -1;
  int item = -1;
  std::span<const double> features{};
  int class_code = -1;
};

struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// A probability model with exact hand-derived parameter gradients.
// `forward` writes output_dim() probabilities (a single Bernoulli probability
// for binary kinds, a simplex for classifier kinds). `backward` accumulates
// d(upstream . output)/d(params) into `grad`, which must be params-sized.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;

  const ModelSpec& spec() const { return spec_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }
  std::size_t num_params() const { return params_.size(); }

  virtual int output_dim() const = 0;
  virtual void forward(const Input& in, std::span<double> out) const = 0;
  virtual void backward(const Input& in, std::span<const double> upstream,
                        std::span<double> grad) const = 0;

  // Penultimate representation (the exact vector the multi-class channel model
  // consumes). Throws for kinds without one.
  virtual std::vector<double> embedding(const Input& in) const;
  virtual int embedding_dim() const;

  // d(upstream . output) / d(feature input); lets a consumer of this model's
  // output pass sensitivities back to whatever produced the features.
  virtual std::vector<double> input_gradient(const Input& in,
                                             std::span<const double> upstream) const;

  // Accumulates d(loss)/d(params) given the loss sensitivity to the embedding
  // tap, so gradients can flow into the producer of the embedding.
  virtual void backward_embedding(const Input& in, std::span<const double> d_embedding,
                                  std::span<double> grad) const;

  double forward_scalar(const Input& in) const {
    double p = 0.0;
    forward(in, {&p, 1});
    return p;
  }
  std::vector<double> forward_vec(const Input& in) const {
    std::vector<double> out(static_cast<std::size_t>(output_dim()));
    forward(in, out);
    return out;
  }

  virtual std::unique_ptr<DifferentiableModel> clone() const;

 protected:
  explicit DifferentiableModel(ModelSpec spec) : spec_(std::move(spec)) {}
  void init_params(std::size_t total, const std::vector<ParamSegment>& segments);

  ModelSpec spec_;
  std::vector<double> params_;
  std::vector<ParamSegment> segments_;
};

std::unique_ptr<DifferentiableModel> build_model(const ModelSpec& spec);

// Skips spec validation. Lets internal roles use degenerate shapes (a
// logistic-linear auxiliary is an MLP with no hidden layer).
std::unique_ptr<DifferentiableModel> build_model_unchecked(const ModelSpec& spec);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  bool passed = false;
};

// Central finite differences (step 1e-5) on a fixed random linear functional
// of the outputs, over every parameter and probe input.
GradCheckReport grad_check(const DifferentiableModel& model, std::span<const Input> probes,
                           double tolerance);

nlohmann::json checkpoint_to_json(const DifferentiableModel& model);
std::unique_ptr<DifferentiableModel> model_from_checkpoint(const nlohmann::json& j);

}  // namespace deca
