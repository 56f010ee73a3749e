#include <gtest/gtest.h>

#include <cmath>

#include "gamseg/checkpoint.hpp"
#include "gamseg/error.hpp"
#include "gamseg/gradcheck.hpp"
#include "gamseg/model.hpp"
#include "test_util.hpp"

using namespace gamseg;
using namespace gamseg::nn;

namespace {

Matrix random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (auto& v : m.data) v = rng.uniform(-2.0, 2.0);
  return m;
}

std::vector<float> sparse_targets(std::size_t n, std::uint64_t seed) {
  std::vector<float> y(n, 0.0F);
  Rng rng(seed);
  y[rng.below(n)] = 1.0F;
  y[rng.below(n)] = 1.0F;
  return y;
}

// Zero-initialised biases leave ReLU units next to the padding exactly on the
// kink; finite differences are compared at a generic point instead.
template <typename M>
M jittered(M model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : model.params()) {
    if (!p.name.ends_with("bias")) continue;
    for (auto& v : p.tensor->data) v += static_cast<float>(rng.uniform(-0.1, 0.1));
  }
  return model;
}

Architecture tiny() {
  Architecture a;
  a.conv1_filters = 2;
  a.conv2_filters = 2;
  a.hidden = 4;
  return a;
}

}  // namespace

TEST(Model, FullArchitectureShapes) {
  const Model<float> model(Architecture{}, 1);
  EXPECT_EQ(model.param("lstm.l0.fwd.w_ih")->shape, (std::vector<std::size_t>{512, 64 * 98}));
  EXPECT_EQ(model.param("fc.weight")->shape, (std::vector<std::size_t>{1, 256}));
  EXPECT_EQ(model.architecture().output_width(), 256u);
  const auto logits = model.forward(random_input(98, 44, 2));
  EXPECT_EQ(logits->shape, std::vector<std::size_t>{44});
}

TEST(Model, FirstConvOutputShape) {
  const Model<float> model(Architecture{}, 1);
  auto grid = make_tensor<float>({1, 44, 98});
  const auto y = conv2d<float>(nullptr, grid, model.param("conv1.weight"), model.param("conv1.bias"));
  EXPECT_EQ(y->shape, (std::vector<std::size_t>{32, 44, 98}));
}

TEST(Model, ZeroWeightsGiveFcBias) {
  Model<float> model(Architecture::reduced(), 4);
  for (auto& p : model.params()) std::fill(p.tensor->data.begin(), p.tensor->data.end(), 0.0F);
  model.param("fc.bias")->data[0] = 0.375F;
  const auto logits = model.forward(random_input(98, 20, 5));
  for (float v : logits->data) EXPECT_EQ(v, 0.375F);
}

TEST(Model, EvalIsDeterministicAndTrainDropoutIsSeeded) {
  const Model<float> model(Architecture::reduced(), 6);
  const auto input = random_input(98, 30, 7);
  EXPECT_EQ(model.forward(input)->data, model.forward(input)->data);
  ForwardOptions<float> train;
  train.mode = Mode::Train;
  train.dropout_seed = 11;
  const auto a = model.forward(input, train)->data;
  EXPECT_EQ(a, model.forward(input, train)->data);
  train.dropout_seed = 12;
  EXPECT_NE(a, model.forward(input, train)->data);
  EXPECT_NE(a, model.forward(input)->data);
}

TEST(Model, WrongFeatureRowsRejected) {
  const Model<float> model(Architecture::reduced(), 6);
  EXPECT_THROW(model.forward(random_input(97, 10, 1)), ShapeMismatch);
}

TEST(Model, MaxPoolHalvesTime) {
  Architecture a = Architecture::reduced();
  a.max_pool = true;
  const Model<float> model(a, 1);
  EXPECT_EQ(model.forward(random_input(98, 45, 3))->numel(), 23u);
  EXPECT_EQ(Model<float>(Architecture::reduced(), 1).forward(random_input(98, 45, 3))->numel(), 45u);
}

TEST(Model, InitializationRanges) {
  const Model<float> model(Architecture::reduced(), 9);
  const std::size_t h = 8;
  const auto bias = model.param("lstm.l0.fwd.bias");
  for (std::size_t j = 0; j < 4 * h; ++j) {
    // Forget-gate block is offset by +1.
    const double centre = (j >= h && j < 2 * h) ? 1.0 : 0.0;
    EXPECT_LE(std::abs(bias->data[j] - centre), 1.0 / std::sqrt(8.0) + 1e-6);
  }
  const auto w = model.param("conv1.weight");
  const double limit = std::sqrt(6.0 / (1 * 9 + 2 * 9));
  for (float v : w->data) EXPECT_LE(std::abs(v), limit + 1e-6);
  for (float v : model.param("conv1.bias")->data) EXPECT_EQ(v, 0.0F);
  EXPECT_NE(Model<float>(Architecture::reduced(), 10).param("conv1.weight")->data, w->data);
}

TEST(Model, BackwardLivenessFullModel) {
  Model<float> model(Architecture{}, 2);
  Tape<float> tape;
  ForwardOptions<float> opt;
  opt.mode = Mode::Train;
  opt.tape = &tape;
  const auto logits = model.forward(random_input(98, 16, 8), opt);
  const auto targets = sparse_targets(16, 1);
  tape.backward(weighted_bce_with_logits(&tape, logits, targets, 100.0));
  bool any_nonzero = false;
  for (const auto& p : model.params()) {
    ASSERT_EQ(p.tensor->grad.size(), p.tensor->data.size()) << p.name;
    for (float g : p.tensor->grad) {
      ASSERT_TRUE(std::isfinite(g)) << p.name;
      any_nonzero = any_nonzero || g != 0.0F;
    }
  }
  EXPECT_TRUE(any_nonzero);
}

TEST(GradCheck, TinyModel) {
  const auto model = jittered(Model<float>(tiny(), 21), 99);
  const auto r = grad_finite_diff_check(model, random_input(98, 8, 22), sparse_targets(8, 23));
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
  EXPECT_GT(r.checked, 50u);
}

TEST(GradCheck, FcOnlyModel) {
  Architecture a;
  a.conv1_filters = 0;
  a.conv2_filters = 0;
  a.lstm_layers = 0;
  const Model<float> model(a, 31);
  const auto r = grad_finite_diff_check(model, random_input(98, 8, 32), sparse_targets(8, 33));
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param;
}

TEST(GradCheck, MaxPoolModel) {
  Architecture a = tiny();
  a.max_pool = true;
  const auto model = jittered(Model<float>(a, 41), 98);
  const auto r = grad_finite_diff_check(model, random_input(98, 8, 42), sparse_targets(4, 43));
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

TEST(GradCheck, CorruptedConvGradientIsCaught) {
  const auto model = jittered(Model<float>(tiny(), 51), 97);
  GradCheckOptions opt;
  opt.tamper = [](Model<double>& m) {
    for (auto& g : m.param("conv1.weight")->grad) g *= 1.5;
  };
  const auto r = grad_finite_diff_check(model, random_input(98, 8, 52), sparse_targets(8, 53), opt);
  EXPECT_GT(r.max_rel_error, 1e-2);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Model<float> model(Architecture::reduced(), 1);
  const Model<float> before = model;
  model.zero_grad();
  AdamState<float> state;
  adam_step(model.params(), state);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(model.params()[i].tensor->data, before.params()[i].tensor->data);
  }
}

TEST(Adam, FirstAndSecondStepClosedForm) {
  auto p = make_tensor<double>({1}, 1.0);
  std::vector<NamedParam<double>> params{{"w", p}};
  AdamState<double> state;
  const AdamConfig cfg;
  const double g = 0.5;
  p->g()[0] = g;
  adam_step(params, state, cfg);
  // Bias-corrected first step: m̂ = g, v̂ = g².
  EXPECT_NEAR(1.0 - p->data[0], cfg.lr * g / (std::sqrt(g * g) + cfg.eps), 1e-15);
  EXPECT_NEAR(1.0 - p->data[0], 0.01, 1e-9);

  // Second step with the same gradient, unrolled by hand.
  const double m1 = (1 - cfg.beta1) * g;
  const double v1 = (1 - cfg.beta2) * g * g;
  const double m2 = cfg.beta1 * m1 + (1 - cfg.beta1) * g;
  const double v2 = cfg.beta2 * v1 + (1 - cfg.beta2) * g * g;
  const double step2 = cfg.lr * (m2 / (1 - cfg.beta1 * cfg.beta1)) /
                       (std::sqrt(v2 / (1 - cfg.beta2 * cfg.beta2)) + cfg.eps);
  const double after_first = p->data[0];
  adam_step(params, state, cfg);
  EXPECT_NEAR(after_first - p->data[0], step2, 1e-15);
}

TEST(Checkpoint, RoundTripReproducesLogitsExactly) {
  ModelCheckpoint ckpt;
  ckpt.model = Model<float>(Architecture::reduced(), 77);
  ckpt.seed = 77;
  ckpt.training = {{"epochs", 3}};
  const auto path = test::temp_dir("ckpt") / "m.ckpt";
  save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.architecture(), ckpt.architecture());
  EXPECT_EQ(loaded.seed, 77u);
  EXPECT_EQ(loaded.training["epochs"], 3);
  const auto input = random_input(98, 40, 78);
  EXPECT_EQ(loaded.model.forward(input)->data, ckpt.model.forward(input)->data);
  EXPECT_EQ(encode_checkpoint(loaded), encode_checkpoint(ckpt));
}

TEST(Checkpoint, MismatchedHiddenSizeRejected) {
  ModelCheckpoint ckpt;
  std::string bytes = encode_checkpoint(ckpt);
  // Rewrite the header so it claims hidden = 9 while tensors hold hidden = 8.
  const auto pos = bytes.find("\"hidden\":8");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 9] = '9';
  EXPECT_THROW(decode_checkpoint(bytes), ArchitectureMismatch);
}

TEST(Checkpoint, TruncatedAndForeignFilesRejected) {
  const std::string bytes = encode_checkpoint(ModelCheckpoint{});
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 20)), IoError);
  std::string foreign = bytes;
  foreign[0] = 'X';
  EXPECT_THROW(decode_checkpoint(foreign), BadMagic);
  EXPECT_THROW(load_checkpoint("/nonexistent/none.ckpt"), IoError);
}
