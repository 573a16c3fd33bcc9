#include "deca/model.hpp"

#include <algorithm>
#include <numeric>

#include "doctest.h"

using namespace deca;

namespace {

ModelSpec mf_spec(int users = 6, int items = 5, int dim = 3, std::uint64_t seed = 1) {
  ModelSpec spec;
  spec.kind = ModelKind::kMF;
  spec.num_users = users;
  spec.num_items = items;
  spec.latent_dim = dim;
  spec.init_scale = 0.3;
  spec.seed = seed;
  return spec;
}

ModelSpec classifier_spec(int input_dim = 3, int classes = 4, std::uint64_t seed = 2) {
  ModelSpec spec;
  spec.kind = ModelKind::kMlpClassifier;
  spec.input_dim = input_dim;
  spec.hidden = {8};
  spec.num_classes = classes;
  spec.init_scale = 0.4;
  spec.seed = seed;
  return spec;
}

std::vector<Input> pair_probes(int users, int items, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> u(0, users - 1), i(0, items - 1);
  std::vector<Input> probes(count);
  for (Input& in : probes) {
    in.user = u(rng);
    in.item = i(rng);
  }
  return probes;
}

}  // namespace

TEST_CASE("MF with zero parameters scores one half everywhere") {
  auto model = build_model(mf_spec());
  std::fill(model->params().begin(), model->params().end(), 0.0);
  for (const Input& in : pair_probes(6, 5, 10, 3)) {
    CHECK(model->forward_scalar(in) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("classifier outputs form a simplex") {
  auto model = build_model(classifier_spec());
  Rng rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(3);
    for (double& v : x) v = gauss(rng);
    Input in;
    in.features = x;
    const auto out = model->forward_vec(in);
    double sum = 0.0;
    for (const double p : out) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("identical specs and seeds give identical parameters") {
  const auto a = build_model(mf_spec());
  const auto b = build_model(mf_spec());
  CHECK(std::equal(a->params().begin(), a->params().end(), b->params().begin()));
  ModelSpec other = mf_spec();
  other.seed = 99;
  const auto c = build_model(other);
  CHECK_FALSE(std::equal(a->params().begin(), a->params().end(), c->params().begin()));
}

TEST_CASE("squashing is monotone in the latent dot product") {
  auto model = build_model(mf_spec(2, 1, 2, 5));
  auto params = model->params();
  // user 0 aligned with the item, user 1 anti-aligned
  params[0] = 1.0; params[1] = 0.0;   // user 0
  params[2] = -1.0; params[3] = 0.0;  // user 1
  params[4] = 2.0; params[5] = 0.0;   // item 0
  Input lo{1, 0, {}, -1}, hi{0, 0, {}, -1};
  CHECK(model->forward_scalar(hi) > model->forward_scalar(lo));
}

TEST_CASE("gradient check passes for every model kind") {
  SUBCASE("mf") {
    const auto model = build_model(mf_spec());
    const auto probes = pair_probes(6, 5, 20, 11);
    const auto report = grad_check(*model, probes, 1e-3);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-3);
  }
  SUBCASE("gmf") {
    ModelSpec spec = mf_spec();
    spec.kind = ModelKind::kGMF;
    const auto model = build_model(spec);
    const auto probes = pair_probes(6, 5, 20, 13);
    CHECK(grad_check(*model, probes, 1e-3).passed);
  }
  SUBCASE("h-pairwise") {
    ModelSpec spec = mf_spec();
    spec.kind = ModelKind::kHPairwise;
    const auto model = build_model(spec);
    const auto probes = pair_probes(6, 5, 20, 17);
    CHECK(grad_check(*model, probes, 1e-3).passed);
  }
  SUBCASE("feature models") {
    Rng rng(19);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> storage(20, std::vector<double>(3));
    std::vector<Input> probes;
    for (auto& x : storage) {
      for (double& v : x) v = gauss(rng);
      Input in;
      in.features = x;
      probes.push_back(in);
    }

    ModelSpec binary;
    binary.kind = ModelKind::kMlpBinary;
    binary.input_dim = 3;
    binary.hidden = {6, 4};
    binary.init_scale = 0.4;
    binary.seed = 21;
    CHECK(grad_check(*build_model(binary), probes, 1e-3).passed);

    CHECK(grad_check(*build_model(classifier_spec()), probes, 1e-3).passed);

    ModelSpec logistic;
    logistic.kind = ModelKind::kMlpBinary;
    logistic.input_dim = 3;
    logistic.init_scale = 0.4;
    logistic.seed = 23;
    CHECK(grad_check(*build_model_unchecked(logistic), probes, 1e-3).passed);

    ModelSpec channel;
    channel.kind = ModelKind::kHMulticlass;
    channel.input_dim = 3;
    channel.num_classes = 4;
    channel.init_scale = 0.4;
    channel.seed = 25;
    const auto h = build_model(channel);
    std::vector<Input> channel_probes = probes;
    for (std::size_t i = 0; i < channel_probes.size(); ++i) {
      channel_probes[i].class_code = static_cast<int>(i % 4);
    }
    CHECK(grad_check(*h, channel_probes, 1e-3).passed);
  }
}

namespace {

// Negative control: analytic gradient deliberately corrupted in one entry.
class CorruptedModel final : public DifferentiableModel {
 public:
  CorruptedModel() : DifferentiableModel(ModelSpec{}) {
    init_params(2, {{"w", 0, 2}});
    params_[0] = 0.4;
    params_[1] = -0.2;
  }
  int output_dim() const override { return 1; }
  void forward(const Input&, std::span<double> out) const override {
    out[0] = sigmoid(params_[0] + params_[1]);
  }
  void backward(const Input& in, std::span<const double> upstream,
                std::span<double> grad) const override {
    double p = 0.0;
    forward(in, {&p, 1});
    const double dz = upstream[0] * p * (1.0 - p);
    grad[0] += dz;
    grad[1] -= dz;  // wrong sign on purpose
  }
  std::unique_ptr<DifferentiableModel> clone() const override {
    return std::make_unique<CorruptedModel>(*this);
  }
};

}  // namespace

TEST_CASE("grad check flags a corrupted gradient") {
  CorruptedModel model;
  const std::vector<Input> probes(3);
  const auto report = grad_check(model, probes, 1e-3);
  CHECK_FALSE(report.passed);
  CHECK(report.worst_param == 1);
}

TEST_CASE("grad check accepts a constant model") {
  auto model = build_model(classifier_spec());
  // Zero output layer: downstream gradients of the last layer inputs vanish.
  const auto& segs = model->segments();
  auto params = model->params();
  for (const auto& seg : segs) {
    if (seg.name == "w1" || seg.name == "b1") {
      std::fill(params.begin() + seg.offset, params.begin() + seg.offset + seg.size, 0.0);
    }
  }
  std::vector<double> x{0.3, -0.2, 0.9};
  Input in;
  in.features = x;
  const std::vector<Input> probes{in};
  CHECK(grad_check(*model, probes, 1e-3).passed);
}

TEST_CASE("embedding taps") {
  const auto mf = build_model(mf_spec());
  Input pair{2, 3, {}, -1};
  const auto e = mf->embedding(pair);
  REQUIRE(static_cast<int>(e.size()) == mf->embedding_dim());
  const auto params = mf->params();
  for (int k = 0; k < 3; ++k) {
    CHECK(e[k] == params[2 * 3 + k]);                  // user row
    CHECK(e[3 + k] == params[6 * 3 + 3 * 3 + k]);      // item row
  }

  const auto clf = build_model(classifier_spec());
  CHECK(clf->embedding_dim() == 8);
  std::vector<double> x{0.1, 0.2, 0.3};
  Input fin;
  fin.features = x;
  CHECK(clf->embedding(fin).size() == 8);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  const auto model = build_model(classifier_spec(5, 3, 77));
  const auto doc = checkpoint_to_json(*model);
  const auto restored = model_from_checkpoint(doc);
  REQUIRE(restored->num_params() == model->num_params());
  CHECK(std::equal(model->params().begin(), model->params().end(),
                   restored->params().begin()));
  CHECK(checkpoint_to_json(*restored).dump() == doc.dump());
}

TEST_CASE("spec validation rejects bad shapes") {
  ModelSpec spec;
  spec.kind = ModelKind::kMF;
  CHECK_THROWS_AS(build_model(spec), ConfigError);

  spec = ModelSpec{};
  spec.kind = ModelKind::kMlpClassifier;
  spec.input_dim = 3;
  spec.num_classes = 1;
  spec.hidden = {4};
  CHECK_THROWS_AS(build_model(spec), ConfigError);

  spec = ModelSpec{};
  spec.kind = ModelKind::kMlpBinary;
  spec.input_dim = 3;
  CHECK_THROWS_AS(build_model(spec), ConfigError);  // hidden widths required

  CHECK(to_string(model_kind_from_string("gmf")) == "gmf");
  CHECK_THROWS_AS(model_kind_from_string("resnet"), ConfigError);
}
