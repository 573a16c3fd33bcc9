#include "deca/losses.hpp"

#include <algorithm>
#include <cmath>

namespace deca {

std::string to_string(Role role) {
  switch (role) {
    case Role::kTarget: return "target";
    case Role::kAuxiliary: return "auxiliary";
    case Role::kChannelNeg: return "channel_neg";
    case Role::kChannelPos: return "channel_pos";
    case Role::kChannel: return "channel";
    case Role::kPrior: return "prior";
  }
  return "?";
}

double DecaConfig::c1(int focus_class) const {
  if (c_constants.empty()) throw ConfigError("no C constants configured");
  if (c_constants.size() == 1) return c_constants.front()[0];
  return c_constants.at(static_cast<std::size_t>(focus_class))[0];
}

double DecaConfig::c2(int focus_class) const {
  if (c_constants.empty()) throw ConfigError("no C constants configured");
  if (c_constants.size() == 1) return c_constants.front()[1];
  return c_constants.at(static_cast<std::size_t>(focus_class))[1];
}

void DecaConfig::validate(int num_classes) const {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  if (c_constants.empty()) throw ConfigError("need at least one (C_k1, C_k2) pair");
  if (c_constants.size() != 1 && c_constants.size() < static_cast<std::size_t>(num_classes)) {
    throw ConfigError("per-class C constants must cover every class");
  }
  for (const auto& pair : c_constants) {
    if (pair[0] <= 0.0 || pair[1] <= 0.0) throw ConfigError("C constants must be positive");
  }
  if (learn_rate <= 0.0) throw ConfigError("learn_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (reg_weight < 0.0) throw ConfigError("reg_weight must be non-negative");
  if (seed_prior == seed_main) throw ConfigError("prior and main seeds must differ");
  if (phase1_epochs > epochs) throw ConfigError("phase-1 epochs cannot exceed total epochs");
  if (prob_clamp <= 0.0 || prob_clamp >= 0.5) throw ConfigError("prob_clamp must lie in (0, 0.5)");
}

double kl_bernoulli(double p, double q, double eps) {
  p = clamp_prob(p, eps);
  q = clamp_prob(q, eps);
  return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

double kl_categorical(std::span<const double> p, std::span<const double> q, double eps) {
  if (p.size() != q.size()) throw DataError("KL arguments have different dimensions");
  double psum = 0.0, qsum = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    psum += clamp_prob(p[c], eps);
    qsum += clamp_prob(q[c], eps);
  }
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double pc = clamp_prob(p[c], eps) / psum;
    const double qc = clamp_prob(q[c], eps) / qsum;
    kl += pc * std::log(pc / qc);
  }
  return kl;
}

namespace {

std::vector<double>& grad_slot(LossBundle& bundle, Role role, const DifferentiableModel& model) {
  auto [it, fresh] = bundle.grads.try_emplace(role);
  if (fresh) it->second.assign(model.num_params(), 0.0);
  return it->second;
}

struct Clamped {
  double v;     // clamped probability
  double pass;  // d(clamped)/d(raw): 1 inside the window, 0 where binding
};

Clamped eval_scalar(const DifferentiableModel& m, const Input& in, double eps) {
  const double raw = m.forward_scalar(in);
  return {clamp_prob(raw, eps), clamp_pass(raw, eps)};
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

LossBundle likelihood_expectation_binary(const DifferentiableModel& f,
                                         const DifferentiableModel& h,
                                         const DifferentiableModel& h_prime, BinaryBatch batch,
                                         double eps) {
  LossBundle out;
  auto& gf = grad_slot(out, Role::kTarget, f);
  auto& gh = grad_slot(out, Role::kChannelNeg, h);
  auto& ghp = grad_slot(out, Role::kChannelPos, h_prime);
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const LabeledExample& ex : batch) {
    const Clamped fp = eval_scalar(f, ex.input, eps);
    const Clamped hp = eval_scalar(h, ex.input, eps);
    const Clamped hpp = eval_scalar(h_prime, ex.input, eps);
    double df, dh, dhp;
    if (ex.label == 1) {
      out.value += (std::log(hpp.v) * fp.v + std::log(hp.v) * (1.0 - fp.v)) * inv_n;
      df = std::log(hpp.v) - std::log(hp.v);
      dh = (1.0 - fp.v) / hp.v;
      dhp = fp.v / hpp.v;
    } else {
      out.value += (std::log(1.0 - hpp.v) * fp.v + std::log(1.0 - hp.v) * (1.0 - fp.v)) * inv_n;
      df = std::log(1.0 - hpp.v) - std::log(1.0 - hp.v);
      dh = -(1.0 - fp.v) / (1.0 - hp.v);
      dhp = -fp.v / (1.0 - hpp.v);
    }
    const double uf = df * fp.pass * inv_n;
    const double uh = dh * hp.pass * inv_n;
    const double uhp = dhp * hpp.pass * inv_n;
    f.backward(ex.input, {&uf, 1}, gf);
    h.backward(ex.input, {&uh, 1}, gh);
    h_prime.backward(ex.input, {&uhp, 1}, ghp);
  }
  return out;
}

LossBundle dp_expectation(const DifferentiableModel& f, const DifferentiableModel& h,
                          BinaryBatch batch, double c1, double eps) {
  if (c1 <= 0.0) throw ConfigError("C constant must be positive");
  LossBundle out;
  auto& gf = grad_slot(out, Role::kTarget, f);
  auto& gh = grad_slot(out, Role::kChannelNeg, h);
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const LabeledExample& ex : batch) {
    const Clamped fp = eval_scalar(f, ex.input, eps);
    const Clamped hp = eval_scalar(h, ex.input, eps);
    double df, dh;
    if (ex.label == 1) {
      out.value += std::log(hp.v) * (1.0 - fp.v) * inv_n;
      df = -std::log(hp.v);
      dh = (1.0 - fp.v) / hp.v;
    } else {
      out.value += (-c1 * fp.v + std::log(1.0 - hp.v) * (1.0 - fp.v)) * inv_n;
      df = -c1 - std::log(1.0 - hp.v);
      dh = -(1.0 - fp.v) / (1.0 - hp.v);
    }
    const double uf = df * fp.pass * inv_n;
    const double uh = dh * hp.pass * inv_n;
    f.backward(ex.input, {&uf, 1}, gf);
    h.backward(ex.input, {&uh, 1}, gh);
  }
  return out;
}

LossBundle dn_expectation(const DifferentiableModel& f, const DifferentiableModel& h_prime,
                          BinaryBatch batch, double c2, double eps) {
  if (c2 <= 0.0) throw ConfigError("C constant must be positive");
  LossBundle out;
  auto& gf = grad_slot(out, Role::kTarget, f);
  auto& ghp = grad_slot(out, Role::kChannelPos, h_prime);
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const LabeledExample& ex : batch) {
    const Clamped fp = eval_scalar(f, ex.input, eps);
    const Clamped hpp = eval_scalar(h_prime, ex.input, eps);
    double df, dhp;
    if (ex.label == 1) {
      out.value += (std::log(hpp.v) * fp.v - c2 * (1.0 - fp.v)) * inv_n;
      df = std::log(hpp.v) + c2;
      dhp = fp.v / hpp.v;
    } else {
      out.value += std::log(1.0 - hpp.v) * fp.v * inv_n;
      df = std::log(1.0 - hpp.v);
      dhp = -fp.v / (1.0 - hpp.v);
    }
    const double uf = df * fp.pass * inv_n;
    const double uhp = dhp * hpp.pass * inv_n;
    f.backward(ex.input, {&uf, 1}, gf);
    h_prime.backward(ex.input, {&uhp, 1}, ghp);
  }
  return out;
}

namespace {

// Shared composite: negated phase expectation plus the two KL directions.
// `prior_frozen` suppresses the second model's gradient entry.
LossBundle binary_composite(const DifferentiableModel& f, const DifferentiableModel& other,
                            const DifferentiableModel& h, const DifferentiableModel& h_prime,
                            BinaryBatch batch, const DecaConfig& cfg, Phase phase,
                            bool prior_frozen) {
  const double eps = cfg.prob_clamp;
  LossBundle expectation =
      phase == Phase::kDenoisePositive
          ? dp_expectation(f, h, batch, cfg.c1(0), eps)
          : dn_expectation(f, h_prime, batch, cfg.c1(1), eps);

  LossBundle out;
  out.value = -expectation.value;
  auto& gf = grad_slot(out, Role::kTarget, f);
  axpy(gf, -1.0, expectation.grads.at(Role::kTarget));
  if (phase == Phase::kDenoisePositive) {
    auto& gh = grad_slot(out, Role::kChannelNeg, h);
    axpy(gh, -1.0, expectation.grads.at(Role::kChannelNeg));
  } else {
    auto& ghp = grad_slot(out, Role::kChannelPos, h_prime);
    axpy(ghp, -1.0, expectation.grads.at(Role::kChannelPos));
  }

  // DeCA weights the auxiliary-first direction by alpha: alpha KL(g||f) +
  // (1-alpha) KL(f||g). DeCA(p) weights the target-first direction instead:
  // alpha KL(f||f') + (1-alpha) KL(f'||f).
  std::vector<double>* gother =
      prior_frozen ? nullptr : &grad_slot(out, Role::kAuxiliary, other);
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double w_fo = prior_frozen ? cfg.alpha : 1.0 - cfg.alpha;  // KL(f || other)
  const double w_of = prior_frozen ? 1.0 - cfg.alpha : cfg.alpha;  // KL(other || f)
  for (const LabeledExample& ex : batch) {
    const Clamped fp = eval_scalar(f, ex.input, eps);
    const Clamped op = eval_scalar(other, ex.input, eps);
    out.value +=
        (w_of * kl_bernoulli(op.v, fp.v, eps) + w_fo * kl_bernoulli(fp.v, op.v, eps)) * inv_n;
    const double df =
        w_of * (-op.v / fp.v + (1.0 - op.v) / (1.0 - fp.v)) +
        w_fo * (std::log(fp.v / op.v) - std::log((1.0 - fp.v) / (1.0 - op.v)));
    const double uf = df * fp.pass * inv_n;
    f.backward(ex.input, {&uf, 1}, gf);
    if (gother != nullptr) {
      const double dg =
          w_of * (std::log(op.v / fp.v) - std::log((1.0 - op.v) / (1.0 - fp.v))) +
          w_fo * (-fp.v / op.v + (1.0 - fp.v) / (1.0 - op.v));
      const double ug = dg * op.pass * inv_n;
      other.backward(ex.input, {&ug, 1}, *gother);
    }
  }
  return out;
}

}  // namespace

LossBundle deca_loss(const DifferentiableModel& f, const DifferentiableModel& g,
                     const DifferentiableModel& h, const DifferentiableModel& h_prime,
                     BinaryBatch batch, const DecaConfig& cfg, Phase phase) {
  return binary_composite(f, g, h, h_prime, batch, cfg, phase, /*prior_frozen=*/false);
}

LossBundle deca_p_loss(const DifferentiableModel& f, const DifferentiableModel& f_prior,
                       const DifferentiableModel& h, const DifferentiableModel& h_prime,
                       BinaryBatch batch, const DecaConfig& cfg, Phase phase) {
  return binary_composite(f, f_prior, h, h_prime, batch, cfg, phase, /*prior_frozen=*/true);
}

namespace {

struct MultiForward {
  std::vector<double> pf;        // target simplex
  std::vector<double> embedding; // detached channel input
};

MultiForward eval_target(const DifferentiableModel& f, std::span<const double> features) {
  MultiForward mf;
  Input in;
  in.features = features;
  mf.pf = f.forward_vec(in);
  mf.embedding = f.embedding(in);
  return mf;
}

}  // namespace

LossBundle multiclass_expectation_phase1(const DifferentiableModel& f,
                                         const DifferentiableModel& h,
                                         const MultiClassBatch& batch, int focus_class, double c1,
                                         double c2, double eps) {
  const MultiClassDataset& data = *batch.data;
  if (focus_class < 0 || focus_class >= data.num_classes) {
    throw ConfigError("focus class out of range");
  }
  if (c1 <= 0.0 || c2 <= 0.0) throw ConfigError("C constants must be positive");

  LossBundle out;
  auto& gf = grad_slot(out, Role::kTarget, f);
  auto& gh = grad_slot(out, Role::kChannel, h);
  if (batch.indices.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.indices.size());
  const int k = focus_class;

  std::vector<double> uf(static_cast<std::size_t>(data.num_classes));
  std::vector<double> uh(static_cast<std::size_t>(data.num_classes));
  for (const int idx : batch.indices) {
    const MultiForward mf = eval_target(f, data.row(idx));
    Input hin;
    hin.features = mf.embedding;
    hin.class_code = k;
    const auto ph = h.forward_vec(hin);
    const int obs = data.noisy_labels[idx];

    std::fill(uf.begin(), uf.end(), 0.0);
    std::fill(uh.begin(), uh.end(), 0.0);
    if (obs == k) {
      const double hkk = clamp_prob(ph[k], eps);
      out.value += (-c1 * (1.0 - mf.pf[k]) + std::log(hkk) * mf.pf[k]) * inv_n;
      uf[k] = (c1 + std::log(hkk)) * inv_n;
      uh[k] = mf.pf[k] / hkk * clamp_pass(ph[k], eps) * inv_n;
    } else {
      const double hko = clamp_prob(ph[obs], eps);
      out.value += (-c2 * (1.0 - mf.pf[k] - mf.pf[obs]) + std::log(hko) * mf.pf[k]) * inv_n;
      uf[k] = (c2 + std::log(hko)) * inv_n;
      uf[obs] = c2 * inv_n;
      uh[obs] = mf.pf[k] / hko * clamp_pass(ph[obs], eps) * inv_n;
    }
    Input fin;
    fin.features = data.row(idx);
    f.backward(fin, uf, gf);
    h.backward(hin, uh, gh);
    // Channel input is f's embedding tap: pass the sensitivity back into f.
    const auto d_embedding = h.input_gradient(hin, uh);
    f.backward_embedding(fin, d_embedding, gf);
  }
  return out;
}

LossBundle multiclass_expectation_phase2(const DifferentiableModel& f,
                                         const DifferentiableModel& h,
                                         const MultiClassBatch& batch, int focus_class,
                                         double eps) {
  const MultiClassDataset& data = *batch.data;
  if (focus_class < 0 || focus_class >= data.num_classes) {
    throw ConfigError("focus class out of range");
  }

  LossBundle out;
  auto& gf = grad_slot(out, Role::kTarget, f);
  auto& gh = grad_slot(out, Role::kChannel, h);
  if (batch.indices.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.indices.size());
  const int k = focus_class;
  const int num_classes = data.num_classes;

  std::vector<double> uf(static_cast<std::size_t>(num_classes));
  std::vector<double> uh(static_cast<std::size_t>(num_classes));
  for (const int idx : batch.indices) {
    const MultiForward mf = eval_target(f, data.row(idx));
    const int obs = data.noisy_labels[idx];

    std::fill(uf.begin(), uf.end(), 0.0);
    std::fill(uh.begin(), uh.end(), 0.0);
    Input hin;
    hin.features = mf.embedding;

    // Stop-gradient channels: value flows through every class, the channel
    // gradient only through the focus class.
    for (int c = 0; c < num_classes; ++c) {
      if (c != k && (c == obs)) continue;  // the diagonal term carries log 1 = 0 in phase 1
      hin.class_code = c;
      const auto ph = h.forward_vec(hin);
      const double term = clamp_prob(ph[obs], eps);
      out.value += std::log(term) * mf.pf[c] * inv_n;
      uf[c] += std::log(term) * inv_n;
      if (c == k) {
        uh[obs] = mf.pf[k] / term * clamp_pass(ph[obs], eps) * inv_n;
      }
    }
    Input fin;
    fin.features = data.row(idx);
    f.backward(fin, uf, gf);
    hin.class_code = k;
    h.backward(hin, uh, gh);
    // Only the live focus-class term feeds the tap; stop-gradient blocks the
    // rest of the channel terms entirely.
    const auto d_embedding = h.input_gradient(hin, uh);
    f.backward_embedding(fin, d_embedding, gf);
  }
  return out;
}

LossBundle deca_p_multiclass_loss(const DifferentiableModel& f,
                                  const DifferentiableModel& f_prior,
                                  const DifferentiableModel& h, const MultiClassBatch& batch,
                                  const DecaConfig& cfg, int focus_class, MultiPhase phase) {
  const double eps = cfg.prob_clamp;
  LossBundle expectation =
      phase == MultiPhase::kPhase1
          ? multiclass_expectation_phase1(f, h, batch, focus_class, cfg.c1(focus_class),
                                          cfg.c2(focus_class), eps)
          : multiclass_expectation_phase2(f, h, batch, focus_class, eps);

  LossBundle out;
  out.value = -expectation.value;
  auto& gf = grad_slot(out, Role::kTarget, f);
  auto& gh = grad_slot(out, Role::kChannel, h);
  axpy(gf, -1.0, expectation.grads.at(Role::kTarget));
  axpy(gh, -1.0, expectation.grads.at(Role::kChannel));

  const MultiClassDataset& data = *batch.data;
  if (batch.indices.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.indices.size());
  std::vector<double> uf(static_cast<std::size_t>(data.num_classes));
  for (const int idx : batch.indices) {
    Input fin;
    fin.features = data.row(idx);
    const auto pf = f.forward_vec(fin);
    const auto pprior = f_prior.forward_vec(fin);
    out.value += kl_categorical(pf, pprior, eps) * inv_n;
    for (int c = 0; c < data.num_classes; ++c) {
      const double pc = clamp_prob(pf[c], eps);
      const double qc = clamp_prob(pprior[c], eps);
      uf[c] = (std::log(pc / qc) + 1.0) * clamp_pass(pf[c], eps) * inv_n;
    }
    f.backward(fin, uf, gf);
  }
  return out;
}

double real_positive_probability(const DifferentiableModel& f, const DifferentiableModel* h,
                                 const DifferentiableModel* h_prime, const ImplicitDataset& data,
                                 int user, int item, DenoiseMode mode, double eps) {
  if (!data.observed(user, item)) {
    throw std::invalid_argument("real_positive_probability needs an interacted pair");
  }
  Input in;
  in.user = user;
  in.item = item;
  const double fp = clamp_prob(f.forward_scalar(in), eps);
  if (mode == DenoiseMode::kDecaP) return fp;
  if (h == nullptr || h_prime == nullptr) {
    throw ConfigError("DeCA mode needs both channel models");
  }
  const double hp = clamp_prob(h->forward_scalar(in), eps);
  const double hpp = clamp_prob(h_prime->forward_scalar(in), eps);
  return hpp * fp / (hpp * fp + hp * (1.0 - fp));
}

}  // namespace deca
