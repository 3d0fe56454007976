#pragma once

// Loss, optimizers (MADGRAD, Adam), the epoch loop with validation-based
// best-model selection, and finite-difference gradient checking.

#include "dora/checkpoint.hpp"
#include "dora/data_model.hpp"
#include "dora/metrics.hpp"
#include "dora/model.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dora {

enum class OptimizerKind { MADGRAD, ADAM };
enum class SchedulerKind { none, reduce_on_plateau };

inline std::string to_string(OptimizerKind o) { return o == OptimizerKind::MADGRAD ? "MADGRAD" : "ADAM"; }
inline std::string to_string(SchedulerKind s) { return s == SchedulerKind::none ? "none" : "reduce_on_plateau"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "MADGRAD" || s == "madgrad") return OptimizerKind::MADGRAD;
  if (s == "ADAM" || s == "adam") return OptimizerKind::ADAM;
  throw InputError("unknown optimizer '" + std::string(s) + "' (expected MADGRAD or ADAM)");
}

inline SchedulerKind parse_scheduler(std::string_view s) {
  if (s == "none") return SchedulerKind::none;
  if (s == "reduce_on_plateau") return SchedulerKind::reduce_on_plateau;
  throw InputError("unknown scheduler '" + std::string(s) + "'");
}

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::MADGRAD;
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  bool decoupled_weight_decay = true;
  int batch_size = 4;
  int epochs = 20;
  SchedulerKind scheduler = SchedulerKind::reduce_on_plateau;
  int plateau_patience = 3;
  double plateau_factor = 0.5;
  bool class_weighting = false;
  std::uint64_t seed = 42;

  // MADGRAD
  double momentum = 0.9;
  double madgrad_eps = 1e-6;
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InputError("learning_rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw InputError("weight_decay must be >= 0");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (plateau_patience < 1 || !(plateau_factor > 0.0 && plateau_factor <= 1.0))
      throw InputError("invalid plateau scheduler settings");
  }
};

/// -ln max(p[gold], 1e-12).
template <typename T>
T cross_entropy_loss(const Vec<T>& probabilities, int gold) {
  if (gold < 0 || gold >= probabilities.size())
    throw InputError("gold class " + std::to_string(gold) + " outside [0, " + std::to_string(probabilities.size()) + ")");
  const double tol = std::max(1e-9, 1e3 * static_cast<double>(std::numeric_limits<T>::epsilon()));
  if (std::abs(static_cast<double>(probabilities.sum()) - 1.0) > tol || (probabilities.array() < T(0)).any())
    throw InputError("probabilities are not a distribution");
  return -std::log(std::max(probabilities(gold), T(1e-12)));
}

/// d(cross_entropy(softmax(z), gold))/dz. Zero where the clamp is active.
template <typename T>
Vec<T> cross_entropy_logit_grad(const Vec<T>& probabilities, int gold) {
  if (probabilities(gold) < T(1e-12)) return Vec<T>::Zero(probabilities.size());
  Vec<T> g = probabilities;
  g(gold) -= T(1);
  return g;
}

template <typename T>
int argmax(const Vec<T>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------

/// MADGRAD (dual averaging with cube-root normalisation and momentum) or Adam.
/// State is allocated on the first step and indexed by parameter position.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config) : config_(config) {}

  std::size_t steps() const { return step_; }

  void step(std::vector<NamedParam<T>>& params, const std::vector<NamedParam<T>>& grads, double lr) {
    if (params.size() != grads.size()) throw ShapeError("parameter and gradient lists differ in length");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].value->rows() != grads[i].value->rows() || params[i].value->cols() != grads[i].value->cols())
        throw ShapeError("gradient shape mismatch for '" + params[i].name + "'");
      if (params[i].trainable && !grads[i].value->allFinite())
        throw NumericError("non-finite gradient for '" + params[i].name + "'; step aborted");
    }
    if (state_a_.empty()) {
      for (const auto& p : params) {
        state_a_.push_back(Mat<T>::Zero(p.value->rows(), p.value->cols()));
        state_b_.push_back(Mat<T>::Zero(p.value->rows(), p.value->cols()));
        origin_.push_back(*p.value);
      }
    }
    if (state_a_.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].trainable) continue;
      if (config_.optimizer == OptimizerKind::MADGRAD)
        madgrad(*params[i].value, *grads[i].value, i, lr);
      else
        adam(*params[i].value, *grads[i].value, i, lr);
    }
    ++step_;
  }

 private:
  // state_a_: sum of lambda-weighted squared gradients, state_b_: s (lambda-weighted
  // gradient sum), origin_: x0.
  void madgrad(Mat<T>& p, const Mat<T>& grad_in, std::size_t i, double lr) {
    const T decay = static_cast<T>(config_.weight_decay);
    Mat<T> grad = grad_in;
    if (decay != T(0) && !config_.decoupled_weight_decay) grad += decay * p;
    const T lamb = static_cast<T>(lr * std::sqrt(static_cast<double>(step_ + 1)));
    const T ck = static_cast<T>(1.0 - config_.momentum);
    const T eps = static_cast<T>(config_.madgrad_eps);
    state_a_[i].array() += lamb * grad.array().square();
    state_b_[i] += lamb * grad;
    const Mat<T> rms = (state_a_[i].array().pow(T(1) / T(3)) + eps).matrix();
    const Mat<T> z = (origin_[i].array() - state_b_[i].array() / rms.array()).matrix();
    const Mat<T> p_old = p;
    if (config_.momentum == 0.0)
      p = z;
    else
      p += ck * (z - p);
    if (decay != T(0) && config_.decoupled_weight_decay) p -= static_cast<T>(lr) * decay * p_old;
  }

  // state_a_: first moment, state_b_: second moment.
  void adam(Mat<T>& p, const Mat<T>& grad_in, std::size_t i, double lr) {
    const T decay = static_cast<T>(config_.weight_decay);
    Mat<T> grad = grad_in;
    if (decay != T(0) && !config_.decoupled_weight_decay) grad += decay * p;
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    state_a_[i] = b1 * state_a_[i] + (T(1) - b1) * grad;
    state_b_[i] = (b2 * state_b_[i].array() + (T(1) - b2) * grad.array().square()).matrix();
    const double t = static_cast<double>(step_ + 1);
    const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
    if (decay != T(0) && config_.decoupled_weight_decay) p -= static_cast<T>(lr) * decay * p;
    p.array() -= static_cast<T>(lr) * (state_a_[i].array() / c1) /
                 ((state_b_[i].array() / c2).sqrt() + static_cast<T>(config_.adam_eps));
  }

  TrainConfig config_;
  std::size_t step_ = 0;
  std::vector<Mat<T>> state_a_, state_b_, origin_;
};

// ---------------------------------------------------------------------------

template <typename T>
struct Example {
  std::string id;
  ModelInput<T> input;
  int label = 0;
  Split split = Split::unassigned;
};

template <typename T>
struct TrainData {
  std::vector<Example<T>> train;
  std::vector<Example<T>> valid;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double valid_weighted_f1 = 0;
  double learning_rate = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;

  double best_valid_weighted_f1() const {
    return best_epoch < 0 ? 0.0 : epochs[static_cast<std::size_t>(best_epoch)].valid_weighted_f1;
  }

  bool operator==(const TrainHistory& o) const {
    if (best_epoch != o.best_epoch || epochs.size() != o.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto &a = epochs[i], &b = o.epochs[i];
      if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.valid_loss != b.valid_loss ||
          a.valid_weighted_f1 != b.valid_weighted_f1 || a.learning_rate != b.learning_rate)
        return false;
    }
    return true;
  }
};

inline nlohmann::ordered_json to_json(const TrainHistory& h) {
  nlohmann::ordered_json j;
  j["best_epoch"] = h.best_epoch;
  j["best_valid_weighted_f1"] = h.best_valid_weighted_f1();
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : h.epochs)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"valid_loss", e.valid_loss},
                           {"valid_weighted_f1", e.valid_weighted_f1},
                           {"learning_rate", e.learning_rate}});
  return j;
}

struct Evaluation {
  EvalReport report;
  double mean_loss = 0;
  std::vector<int> predictions;
};

template <typename T>
Evaluation evaluate_model(const DoraModel<T>& model, const std::vector<Example<T>>& examples,
                          std::vector<std::string> labels = {}) {
  if (examples.empty()) throw InputError("empty split: nothing to evaluate");
  Evaluation ev;
  std::vector<int> golds;
  double loss = 0;
  for (const auto& ex : examples) {
    const Vec<T> p = model.forward(ex.input);
    loss += static_cast<double>(cross_entropy_loss(p, ex.label));
    ev.predictions.push_back(argmax(p));
    golds.push_back(ex.label);
  }
  ev.mean_loss = loss / static_cast<double>(examples.size());
  ev.report = compute_report(ev.predictions, golds, model.config.class_count, std::move(labels));
  return ev;
}

/// Mean cross-entropy over `batch` and its gradient, accumulated into `grads`.
template <typename T>
T accumulate_gradients(const DoraModel<T>& model, std::span<const Example<T>* const> batch, DoraModel<T>& grads,
                       std::span<const double> class_weights = {}) {
  T total = 0;
  const T inv_n = T(1) / static_cast<T>(batch.size());
  for (const Example<T>* ex : batch) {
    ForwardCache<T> cache;
    model.forward(ex->input, &cache);
    const T w = class_weights.empty() ? T(1) : static_cast<T>(class_weights[ex->label]);
    total += w * cross_entropy_loss(cache.probabilities, ex->label);
    model.backward(cache, (w * inv_n) * cross_entropy_logit_grad(cache.probabilities, ex->label), grads);
  }
  return total * inv_n;
}

template <typename T>
struct TrainResult {
  DoraModel<T> best_model;
  TrainHistory history;
  DoraModel<T> final_model;  // parameters after the last epoch
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_path;  // best model is written here when set
  nlohmann::json checkpoint_extra = nlohmann::json::object();
  std::vector<std::string> labels;
};

template <typename T>
TrainResult<T> train(DoraModel<T> model, const TrainData<T>& data, const TrainConfig& config,
                     const TrainOptions& options = {}) {
  config.validate();
  if (data.train.empty()) throw InputError("empty split: train");
  if (data.valid.empty()) throw InputError("empty split: valid");
  for (const auto& ex : data.valid)
    if (ex.split == Split::test) throw InputError("validation data contains test-split sample '" + ex.id + "'");

  std::vector<double> class_weights;
  if (config.class_weighting) {
    std::vector<double> counts(static_cast<std::size_t>(model.config.class_count), 0.0);
    for (const auto& ex : data.train) counts[ex.label] += 1.0;
    for (double c : counts)
      class_weights.push_back(c > 0 ? static_cast<double>(data.train.size()) / (counts.size() * c) : 0.0);
  }

  Optimizer<T> optimizer(config);
  DoraModel<T> grads = model.zeros_like();
  auto params = model.parameters();
  auto grad_refs = grads.parameters();
  Rng shuffle_rng(config.seed ^ 0x5DEECE66DULL);
  double lr = config.learning_rate;
  int since_improvement = 0;

  TrainResult<T> result{model, {}};
  double best_f1 = -1.0;
  std::vector<std::size_t> order(data.train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[index_below(shuffle_rng, i + 1)]);

    double epoch_loss = 0;
    std::vector<const Example<T>*> batch;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        const auto& ex = data.train[order[k]];
        if (ex.split != Split::train)
          throw InputError("training batch contains non-train sample '" + ex.id + "' (split " + to_string(ex.split) + ")");
        batch.push_back(&ex);
      }
      grads.for_each_param([](const std::string&, Mat<T>& m) { m.setZero(); });
      const T loss = accumulate_gradients<T>(model, batch, grads, class_weights);
      if (!std::isfinite(static_cast<double>(loss)))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      optimizer.step(params, grad_refs, lr);
      epoch_loss += static_cast<double>(loss) * static_cast<double>(batch.size());
    }

    const Evaluation val = evaluate_model(model, data.valid, options.labels);
    result.history.epochs.push_back(
        {epoch, epoch_loss / static_cast<double>(data.train.size()), val.mean_loss, val.report.weighted_f1, lr});
    if (val.report.weighted_f1 > best_f1) {
      best_f1 = val.report.weighted_f1;
      result.history.best_epoch = epoch;
      result.best_model = model;
      since_improvement = 0;
      if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, model, options.checkpoint_extra);
    } else if (config.scheduler == SchedulerKind::reduce_on_plateau && ++since_improvement >= config.plateau_patience) {
      lr *= config.plateau_factor;
      since_improvement = 0;
    }
  }
  result.final_model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------

struct GradientCheckResult {
  double max_relative_error = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

/// Compares `gradient(x)` against central differences of `f`.
/// Relative error per coordinate: |a - n| / max(1, |a|, |n|). When the
/// parameter count exceeds `max_coordinates`, a seeded random subset of that
/// size is checked (at least 50).
inline GradientCheckResult gradient_check(const std::function<double(std::span<const double>)>& f,
                                          const std::function<std::vector<double>(std::span<const double>)>& gradient,
                                          std::vector<double> params, double epsilon,
                                          std::size_t max_coordinates = 4096, std::uint64_t seed = 7) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-4)) throw InputError("epsilon must lie in [1e-7, 1e-4]");
  const std::vector<double> analytic = gradient(params);
  if (analytic.size() != params.size()) throw ShapeError("gradient length differs from parameter count");

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  max_coordinates = std::max<std::size_t>(max_coordinates, 50);
  if (coords.size() > max_coordinates) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coordinates; ++i)
      std::swap(coords[i], coords[i + index_below(rng, coords.size() - i)]);
    coords.resize(max_coordinates);
  }

  GradientCheckResult r;
  for (std::size_t idx : coords) {
    const double saved = params[idx];
    params[idx] = saved + epsilon;
    const double up = f(params);
    params[idx] = saved - epsilon;
    const double down = f(params);
    params[idx] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[idx];
    if (!std::isfinite(a) || !std::isfinite(numeric))
      throw NumericError("non-finite gradient at coordinate " + std::to_string(idx));
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > r.max_relative_error) {
      r.max_relative_error = rel;
      r.worst_index = idx;
    }
    ++r.coordinates_checked;
  }
  return r;
}

/// Gradient check of the mean cross-entropy of `model` over `examples` with
/// respect to every trainable parameter (frozen encoder weights are held fixed).
inline GradientCheckResult check_model_gradients(const DoraModel<double>& model,
                                                 const std::vector<Example<double>>& examples, double epsilon = 1e-6,
                                                 std::size_t max_coordinates = 4096) {
  DoraModel<double> work = model;
  std::vector<const Example<double>*> batch;
  for (const auto& ex : examples) batch.push_back(&ex);

  std::vector<std::size_t> free_index;  // positions of trainable entries in the full flat vector
  std::size_t pos = 0;
  for (const auto& p : work.parameters()) {
    for (Eigen::Index k = 0; k < p.value->size(); ++k)
      if (p.trainable) free_index.push_back(pos + static_cast<std::size_t>(k));
    pos += static_cast<std::size_t>(p.value->size());
  }
  std::vector<double> full = flatten_params(work);
  auto load = [&](std::span<const double> sub) {
    for (std::size_t i = 0; i < free_index.size(); ++i) full[free_index[i]] = sub[i];
    assign_params<double>(work, full);
  };
  auto loss = [&](std::span<const double> sub) {
    load(sub);
    double total = 0;
    for (const auto* ex : batch) total += cross_entropy_loss(work.forward(ex->input), ex->label);
    return total / static_cast<double>(batch.size());
  };
  auto grad = [&](std::span<const double> sub) {
    load(sub);
    DoraModel<double> g = work.zeros_like();
    accumulate_gradients<double>(work, batch, g);
    const auto flat = flatten_params(g);
    std::vector<double> out;
    for (std::size_t i : free_index) out.push_back(flat[i]);
    return out;
  };
  std::vector<double> start;
  for (std::size_t i : free_index) start.push_back(full[i]);
  return gradient_check(loss, grad, start, epsilon, max_coordinates);
}

}  // namespace dora
