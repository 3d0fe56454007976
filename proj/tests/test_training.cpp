#include "support/synthetic.hpp"

#include <gtest/gtest.h>

using namespace dora;

namespace {

Vec<double> vec(std::initializer_list<double> v) {
  Vec<double> out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

/// Minimises x^2 from x0 = 1 with the library optimizer; returns the trajectory.
std::vector<double> library_trajectory(const TrainConfig& cfg, double lr, int steps) {
  Mat<double> x = Mat<double>::Constant(1, 1, 1.0), g(1, 1);
  std::vector<NamedParam<double>> params{{"x", &x, true}};
  std::vector<NamedParam<double>> grads{{"x", &g, true}};
  Optimizer<double> opt(cfg);
  std::vector<double> out;
  for (int k = 0; k < steps; ++k) {
    g(0, 0) = 2.0 * x(0, 0);
    opt.step(params, grads, lr);
    out.push_back(x(0, 0));
  }
  return out;
}

/// Scalar MADGRAD recurrence written out from the published algorithm.
std::vector<double> madgrad_oracle(double lr, double momentum, double eps, int steps) {
  const double x0 = 1.0;
  double x = x0, s = 0.0, nu = 0.0;
  std::vector<double> out;
  for (int k = 0; k < steps; ++k) {
    const double g = 2.0 * x;
    const double lamb = lr * std::sqrt(k + 1.0);
    s += lamb * g;
    nu += lamb * g * g;
    const double z = x0 - s / (std::cbrt(nu) + eps);
    x = momentum * x + (1.0 - momentum) * z;
    out.push_back(x);
  }
  return out;
}

std::vector<double> adam_oracle(double lr, double b1, double b2, double eps, int steps) {
  double x = 1.0, m = 0.0, v = 0.0;
  std::vector<double> out;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2.0 * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    out.push_back(x);
  }
  return out;
}

TrainConfig quick_config(OptimizerKind opt = OptimizerKind::ADAM, double lr = 1e-2, int epochs = 3) {
  TrainConfig c;
  c.optimizer = opt;
  c.learning_rate = lr;
  c.epochs = epochs;
  c.weight_decay = 0.0;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(CrossEntropy, HandValues) {
  EXPECT_EQ(cross_entropy_loss(vec({1.0, 0.0}), 0), 0.0);
  EXPECT_NEAR(cross_entropy_loss(vec({0.75, 0.25}), 0), 0.2876820724517809, 1e-15);
  EXPECT_NEAR(cross_entropy_loss(vec({0.5, 0.5}), 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy_loss(vec({1.0, 0.0}), 1), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, Errors) {
  EXPECT_THROW(cross_entropy_loss(vec({0.5, 0.5}), 2), InputError);
  EXPECT_THROW(cross_entropy_loss(vec({0.5, 0.5}), -1), InputError);
  EXPECT_THROW(cross_entropy_loss(vec({0.5, 0.6}), 0), InputError);
}

TEST(CrossEntropy, LogitGradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec<double> z = synth::random_matrix(rng, 4, 1, 3.0);
    const int gold = static_cast<int>(index_below(rng, 4));
    const Vec<double> g = cross_entropy_logit_grad(softmax<double>(z), gold);
    for (int i = 0; i < 4; ++i) {
      Vec<double> up = z, down = z;
      up(i) += 1e-6;
      down(i) -= 1e-6;
      const double num =
          (cross_entropy_loss(softmax<double>(up), gold) - cross_entropy_loss(softmax<double>(down), gold)) / 2e-6;
      ASSERT_NEAR(g(i), num, 1e-7);
    }
  }
}

TEST(Optimizer, ZeroGradientsNoDecayLeaveParamsUnchanged) {
  for (auto kind : {OptimizerKind::MADGRAD, OptimizerKind::ADAM}) {
    TrainConfig cfg = quick_config(kind);
    Rng rng(2);
    Mat<double> x = synth::random_matrix(rng, 3, 2), g = Mat<double>::Zero(3, 2);
    const Mat<double> before = x;
    std::vector<NamedParam<double>> params{{"x", &x, true}}, grads{{"x", &g, true}};
    Optimizer<double> opt(cfg);
    for (int k = 0; k < 10; ++k) opt.step(params, grads, 0.1);
    EXPECT_EQ(x, before) << to_string(kind);
  }
}

TEST(Optimizer, MadgradMatchesScalarRecurrenceAndConverges) {
  TrainConfig cfg = quick_config(OptimizerKind::MADGRAD);
  const auto lib = library_trajectory(cfg, 0.1, 200);
  const auto ref = madgrad_oracle(0.1, cfg.momentum, cfg.madgrad_eps, 200);
  for (std::size_t k = 0; k < lib.size(); ++k) ASSERT_NEAR(lib[k], ref[k], 1e-12) << "step " << k;
  EXPECT_LT(std::abs(lib.back()), 1e-3);
}

TEST(Optimizer, AdamMatchesScalarRecurrenceAndConverges) {
  TrainConfig cfg = quick_config(OptimizerKind::ADAM);
  const auto lib = library_trajectory(cfg, 0.1, 200);
  const auto ref = adam_oracle(0.1, cfg.beta1, cfg.beta2, cfg.adam_eps, 200);
  for (std::size_t k = 0; k < lib.size(); ++k) ASSERT_NEAR(lib[k], ref[k], 1e-12) << "step " << k;
  EXPECT_LT(std::abs(lib.back()), 1e-3);
}

TEST(Optimizer, DecoupledWeightDecayShrinksParams) {
  for (auto kind : {OptimizerKind::MADGRAD, OptimizerKind::ADAM}) {
    TrainConfig cfg = quick_config(kind);
    cfg.weight_decay = 0.5;
    Mat<double> x = Mat<double>::Constant(1, 1, 2.0), g = Mat<double>::Zero(1, 1);
    std::vector<NamedParam<double>> params{{"x", &x, true}}, grads{{"x", &g, true}};
    Optimizer<double> opt(cfg);
    opt.step(params, grads, 0.1);
    EXPECT_NEAR(x(0, 0), 2.0 * (1.0 - 0.1 * 0.5), 1e-15) << to_string(kind);
  }
}

TEST(Optimizer, DeterministicTrajectories) {
  for (auto kind : {OptimizerKind::MADGRAD, OptimizerKind::ADAM}) {
    TrainConfig cfg = quick_config(kind);
    cfg.weight_decay = 0.01;
    EXPECT_EQ(library_trajectory(cfg, 0.05, 50), library_trajectory(cfg, 0.05, 50));
  }
}

TEST(Optimizer, NonFiniteGradientAbortsStep) {
  Mat<double> x = Mat<double>::Ones(2, 2), g = Mat<double>::Ones(2, 2);
  g(1, 0) = std::nan("");
  std::vector<NamedParam<double>> params{{"w", &x, true}}, grads{{"w", &g, true}};
  Optimizer<double> opt(quick_config());
  try {
    opt.step(params, grads, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
  EXPECT_EQ(x, Mat<double>(Mat<double>::Ones(2, 2)));
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(Optimizer, FrozenParametersAreSkipped) {
  Mat<double> x = Mat<double>::Ones(1, 1), g = Mat<double>::Ones(1, 1);
  std::vector<NamedParam<double>> params{{"frozen", &x, false}}, grads{{"frozen", &g, false}};
  Optimizer<double> opt(quick_config());
  opt.step(params, grads, 0.5);
  EXPECT_EQ(x(0, 0), 1.0);
}

TEST(GradientCheck, PolynomialAndConstant) {
  auto sq = [](std::span<const double> x) { return x[0] * x[0]; };
  auto sq_grad = [](std::span<const double> x) { return std::vector<double>{2 * x[0]}; };
  auto r = gradient_check(sq, sq_grad, {3.0}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(r.coordinates_checked, 1u);

  auto c = [](std::span<const double>) { return 4.2; };
  auto c_grad = [](std::span<const double> x) { return std::vector<double>(x.size(), 0.0); };
  EXPECT_EQ(gradient_check(c, c_grad, {1.0, 2.0, 3.0}, 1e-5).max_relative_error, 0.0);
}

TEST(GradientCheck, DetectsWrongGradientAndValidatesEpsilon) {
  auto sq = [](std::span<const double> x) { return x[0] * x[0]; };
  auto wrong = [](std::span<const double> x) { return std::vector<double>{3 * x[0]}; };
  EXPECT_GT(gradient_check(sq, wrong, {3.0}, 1e-5).max_relative_error, 0.1);
  EXPECT_THROW(gradient_check(sq, wrong, {3.0}, 1e-3), InputError);
  auto nan_grad = [](std::span<const double>) { return std::vector<double>{std::nan("")}; };
  EXPECT_THROW(gradient_check(sq, nan_grad, {3.0}, 1e-5), NumericError);
}

TEST(GradientCheck, SubsamplesLargeParameterVectors) {
  auto f = [](std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v * v * v;
    return s;
  };
  auto g = [](std::span<const double> x) {
    std::vector<double> out;
    for (double v : x) out.push_back(3 * v * v);
    return out;
  };
  std::vector<double> x(500, 0.5);
  auto r = gradient_check(f, g, x, 1e-5, 10);
  EXPECT_EQ(r.coordinates_checked, 50u);
}

TEST(GradientCheck, FullModelOnTwoByTwoTokenSequences) {
  // L_v = L_t = 2 requires precomputed sequences: adapter-backed encoders.
  auto cfg = synth::small_config(4, 2, 2);
  cfg.visual.backend = EncoderBackend::adapter;
  cfg.textual.backend = EncoderBackend::adapter;
  auto model = DoraModel<double>::init(cfg, 9);
  Rng rng(10);
  std::vector<Example<double>> examples;
  for (int i = 0; i < 2; ++i)
    examples.push_back({"e" + std::to_string(i),
                        {FeatureSequence<double>{synth::random_matrix(rng, 2, 4), Modality::visual},
                         FeatureSequence<double>{synth::random_matrix(rng, 2, 4), Modality::textual}},
                        i,
                        Split::train});
  EXPECT_LT(check_model_gradients(model, examples).max_relative_error, 1e-4);
}

TEST(Train, ZeroLearningRateIsNoOp) {
  auto cfg = synth::small_config();
  auto model = DoraModel<double>::init(cfg, 1);
  TrainData<double> data{synth::separable_dataset(4, Split::train, 1), synth::separable_dataset(2, Split::valid, 2)};
  TrainConfig tc = quick_config(OptimizerKind::MADGRAD, 0.0, 1);
  tc.batch_size = 4;
  tc.weight_decay = 0.01;
  auto result = train(model, data, tc);
  EXPECT_EQ(flatten_params(result.best_model), flatten_params(model));
  ASSERT_EQ(result.history.epochs.size(), 1u);
}

TEST(Train, SameSeedSameHistory) {
  auto cfg = synth::small_config();
  TrainData<double> data{synth::separable_dataset(8, Split::train, 3), synth::separable_dataset(4, Split::valid, 4)};
  for (auto kind : {OptimizerKind::MADGRAD, OptimizerKind::ADAM}) {
    TrainConfig tc = quick_config(kind, kind == OptimizerKind::ADAM ? 1e-2 : 1e-1, 3);
    auto a = train(DoraModel<double>::init(cfg, 5), data, tc);
    auto b = train(DoraModel<double>::init(cfg, 5), data, tc);
    EXPECT_TRUE(a.history == b.history);
    EXPECT_EQ(flatten_params(a.best_model), flatten_params(b.best_model));
    ASSERT_EQ(a.history.epochs.size(), 3u);
    for (const auto& e : a.history.epochs) EXPECT_TRUE(std::isfinite(e.train_loss));
  }
}

TEST(Train, BestEpochIsEarliestMaximum) {
  auto cfg = synth::small_config();
  TrainData<double> data{synth::separable_dataset(8, Split::train, 5), synth::separable_dataset(6, Split::valid, 6)};
  auto result = train(DoraModel<double>::init(cfg, 6), data, quick_config(OptimizerKind::ADAM, 1e-2, 8));
  const auto& h = result.history;
  ASSERT_GE(h.best_epoch, 0);
  const double best = h.best_valid_weighted_f1();
  for (int e = 0; e < static_cast<int>(h.epochs.size()); ++e) {
    EXPECT_LE(h.epochs[e].valid_weighted_f1, best);
    if (e < h.best_epoch) {
      EXPECT_LT(h.epochs[e].valid_weighted_f1, best);
    }
  }
  const auto replay = evaluate_model(result.best_model, data.valid);
  EXPECT_EQ(replay.report.weighted_f1, best);
}

TEST(Train, PlateauSchedulerHalvesAfterPatience) {
  auto cfg = synth::small_config();
  TrainData<double> data{synth::separable_dataset(4, Split::train, 7), synth::separable_dataset(4, Split::valid, 8)};
  TrainConfig tc = quick_config(OptimizerKind::ADAM, 1e-3, 12);
  tc.plateau_patience = 2;
  const auto h = train(DoraModel<double>::init(cfg, 7), data, tc).history;
  // replay the schedule from the recorded validation scores
  double lr = tc.learning_rate, best = -1;
  int stale = 0;
  for (const auto& e : h.epochs) {
    EXPECT_EQ(e.learning_rate, lr) << "epoch " << e.epoch;
    if (e.valid_weighted_f1 > best) {
      best = e.valid_weighted_f1;
      stale = 0;
    } else if (++stale >= tc.plateau_patience) {
      lr *= tc.plateau_factor;
      stale = 0;
    }
  }
}

TEST(Train, RejectsEmptyAndLeakedSplits) {
  auto cfg = synth::small_config();
  auto model = DoraModel<double>::init(cfg, 1);
  auto tc = quick_config();
  auto train_set = synth::separable_dataset(4, Split::train, 1);
  auto valid_set = synth::separable_dataset(2, Split::valid, 2);
  try {
    train(model, TrainData<double>{train_set, {}}, tc);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("empty split"), std::string::npos);
  }
  EXPECT_THROW(train(model, TrainData<double>{{}, valid_set}, tc), InputError);
  EXPECT_THROW(train(model, TrainData<double>{train_set, synth::separable_dataset(2, Split::test, 3)}, tc), InputError);
  auto leaked = train_set;
  leaked[2].split = Split::test;
  try {
    train(model, TrainData<double>{leaked, valid_set}, tc);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("non-train"), std::string::npos);
  }
}

TEST(Train, NonFiniteLossAbortsWithContext) {
  auto cfg = synth::small_config();
  auto model = DoraModel<double>::init(cfg, 1);
  model.head.bias(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainData<double> data{synth::separable_dataset(4, Split::train, 1), synth::separable_dataset(2, Split::valid, 2)};
  try {
    train(model, data, quick_config());
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0, batch 0"), std::string::npos);
  }
}

TEST(Train, LearnsSeparableDataInSinglePrecision) {
  auto cfg = synth::small_config();
  std::vector<Example<float>> train_set, valid_set;
  auto cast = [](const Example<double>& e, std::vector<Example<float>>& out) {
    const auto& img = std::get<Image<double>>(e.input.visual);
    Image<float> f{img.height, img.width, img.channels, {img.pixels.begin(), img.pixels.end()}};
    out.push_back({e.id, {std::move(f), std::get<std::vector<int>>(e.input.textual)}, e.label, e.split});
  };
  for (const auto& e : synth::separable_dataset(16, Split::train, 11)) cast(e, train_set);
  for (const auto& e : synth::separable_dataset(8, Split::valid, 12)) cast(e, valid_set);
  auto result = train(DoraModel<float>::init(cfg, 3), TrainData<float>{train_set, valid_set},
                      quick_config(OptimizerKind::ADAM, 1e-2, 30));
  EXPECT_GE(evaluate_model(result.best_model, train_set).report.accuracy, 0.9);
}
