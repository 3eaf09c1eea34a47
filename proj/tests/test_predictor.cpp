#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "grs/predictor.hpp"

namespace grs::predictor {
namespace {

namespace fs = std::filesystem;

Image fixture_image(const ModelConfig& cfg, int frame) {
  Image img(cfg.height, cfg.width);
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        img.at(r, c, ch) = 0.5 + 0.5 * std::sin(0.31 * r + 0.17 * c + 1.3 * ch + 0.6 * frame);
      }
    }
  }
  return img;
}

Image random_image(const ModelConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(cfg.height, cfg.width);
  for (double& v : img.rgb) v = u(rng);
  return img;
}

LatentState random_state(const ModelConfig& cfg, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  LatentState s{Matrix(cfg.state_tokens, cfg.dim), 0};
  for (Eigen::Index i = 0; i < s.tokens.size(); ++i) s.tokens.data()[i] = n(rng);
  return s;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

bool bit_equal(const PointMap& a, const PointMap& b) {
  if (!a.same_shape(b) || a.valid != b.valid) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.points[i].array() == b.points[i].array()).all()) return false;
  }
  return true;
}

// Compares against a stored snapshot, or records it when GRS_UPDATE_GOLDEN is set.
void check_golden(const std::string& file, const TensorList& actual) {
  const fs::path path = fs::path(GRS_TEST_DATA_DIR) / file;
  if (std::getenv("GRS_UPDATE_GOLDEN")) {
    save_tensors(path.string(), actual);
    GTEST_SKIP() << "recorded " << path;
  }
  ASSERT_TRUE(fs::exists(path)) << "missing golden file " << path;
  const TensorList expected = load_tensors(path.string());
  ASSERT_EQ(expected.size(), actual.size());
  for (std::size_t i = 0; i < actual.size(); ++i) {
    EXPECT_EQ(expected[i].name, actual[i].name);
    ASSERT_EQ(expected[i].value.rows(), actual[i].value.rows()) << actual[i].name;
    ASSERT_EQ(expected[i].value.cols(), actual[i].value.cols()) << actual[i].name;
    EXPECT_LT((expected[i].value - actual[i].value).cwiseAbs().maxCoeff(), 1e-12) << actual[i].name;
  }
}

Matrix flatten(const PointMap& p) {
  Matrix m(static_cast<Eigen::Index>(p.size()), 3);
  for (std::size_t i = 0; i < p.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = p.points[i].transpose();
  return m;
}

Matrix flatten(const ConfidenceMap& c) {
  return Eigen::Map<const Matrix>(c.values.data(), static_cast<Eigen::Index>(c.values.size()), 1);
}

Matrix flatten(const SE3Pose& p) {
  Matrix m(1, 7);
  m << p.translation.x(), p.translation.y(), p.translation.z(), p.rotation.x(), p.rotation.y(), p.rotation.z(),
      p.rotation.w();
  return m;
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.patch = 7;
  EXPECT_THROW(cfg.validate(), InputError);
  cfg = {};
  cfg.heads = 5;
  EXPECT_THROW(cfg.validate(), InputError);
  cfg = {};
  cfg.blocks = 0;
  EXPECT_THROW(cfg.validate(), InputError);
}

TEST(Encode, ZeroImageGivesPositionalEncodingPlusBias) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  model.mutable_weights().patch_embed.bias.setLinSpaced(cfg.dim, -1.0, 1.0);
  const ImageTokens tokens = model.encode(Image(cfg.height, cfg.width, 0.0));
  Matrix expected = model.positional_encoding();
  expected.rowwise() += model.weights().patch_embed.bias;
  EXPECT_TRUE(bit_equal(tokens.tokens, expected));
}

TEST(Encode, DeterministicAndShaped) {
  ModelConfig cfg;
  cfg.dim = 16;
  GatedRecurrentModel model(cfg);
  const Image img = fixture_image(cfg, 0);
  const auto a = model.encode(img);
  const auto b = model.encode(img);
  EXPECT_EQ(a.tokens.rows(), 16);
  EXPECT_EQ(a.tokens.cols(), 16);
  EXPECT_TRUE(bit_equal(a.tokens, b.tokens));
  EXPECT_THROW(model.encode(Image(16, 32)), InputError);
}

TEST(Gates, RangeStrictlyInsideUnitInterval) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const LatentState s = random_state(cfg, rng, i % 2 ? 0.1 : 50.0);
    const ImageTokens f = model.encode(random_image(cfg, rng));
    for (const Matrix& g : {model.reset_gate(s, f), model.update_gate(s, f)}) {
      EXPECT_GT(g.minCoeff(), 0.0);
      EXPECT_LT(g.maxCoeff(), 1.0);
      EXPECT_EQ(g.rows(), cfg.state_tokens);
      EXPECT_EQ(g.cols(), cfg.dim);
    }
  }
}

TEST(Gates, SigmoidStaysOpenForExtremeInputs) {
  EXPECT_LT(sigmoid(1e6), 1.0);
  EXPECT_GT(sigmoid(-1e6), 0.0);
}

TEST(Gates, ZeroWeightsGiveOneHalf) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  zero_gate(model.mutable_weights().reset_gate);
  zero_gate(model.mutable_weights().update_gate);
  std::mt19937_64 rng(2);
  const LatentState s = random_state(cfg, rng, 1.0);
  const ImageTokens f = model.encode(random_image(cfg, rng));
  EXPECT_TRUE((model.reset_gate(s, f).array() == 0.5).all());
  EXPECT_TRUE((model.update_gate(s, f).array() == 0.5).all());
}

TEST(Gates, IndependentWeights) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  const LatentState s = model.initial_state();
  const ImageTokens f = model.encode(fixture_image(cfg, 0));
  EXPECT_FALSE(bit_equal(model.reset_gate(s, f), model.update_gate(s, f)));
}

TEST(Gates, GoldenSnapshot) {
  ModelConfig cfg;
  cfg.seed = 42;
  GatedRecurrentModel model(cfg);
  const LatentState s = model.initial_state();
  const ImageTokens f = model.encode(fixture_image(cfg, 0));
  check_golden("gates_seed42.grst", {{"reset", model.reset_gate(s, f)}, {"update", model.update_gate(s, f)}});
}

TEST(ApplyReset, Extremes) {
  std::mt19937_64 rng(8);
  const LatentState s = random_state(ModelConfig{}, rng, 1.0);
  const Matrix ones = Matrix::Ones(s.tokens.rows(), s.tokens.cols());
  EXPECT_TRUE(bit_equal(GatedRecurrentModel::apply_reset(ones, s).tokens, s.tokens));
  EXPECT_TRUE((GatedRecurrentModel::apply_reset(Matrix::Zero(s.tokens.rows(), s.tokens.cols()), s).tokens.array() == 0.0).all());
}

TEST(ApplyReset, HandMultipliedFixture) {
  Matrix r(2, 2), m(2, 2);
  r << 0.5, 0.25, 0.1, 1.0;
  m << 2.0, -4.0, 3.0, 7.0;
  Matrix expected(2, 2);
  expected << 1.0, -1.0, 0.30000000000000004, 7.0;
  EXPECT_TRUE(bit_equal(GatedRecurrentModel::apply_reset(r, {m, 0}).tokens, expected));
  EXPECT_THROW(GatedRecurrentModel::apply_reset(Matrix::Ones(3, 2), {m, 0}), InputError);
}

TEST(GatedUpdate, Extremes) {
  std::mt19937_64 rng(9);
  ModelConfig cfg;
  const LatentState prev = random_state(cfg, rng, 1.0);
  const LatentState hat = random_state(cfg, rng, 1.0);
  const Matrix zeros = Matrix::Zero(cfg.state_tokens, cfg.dim);
  const Matrix ones = Matrix::Ones(cfg.state_tokens, cfg.dim);
  EXPECT_TRUE(bit_equal(GatedRecurrentModel::gated_update(zeros, hat, prev).tokens, prev.tokens));
  EXPECT_TRUE(bit_equal(GatedRecurrentModel::gated_update(ones, hat, prev).tokens, hat.tokens));
  const Matrix half = Matrix::Constant(cfg.state_tokens, cfg.dim, 0.5);
  const Matrix mean = 0.5 * (hat.tokens + prev.tokens);
  EXPECT_LT((GatedRecurrentModel::gated_update(half, hat, prev).tokens - mean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ElementwiseOps, PermutationEquivariance) {
  std::mt19937_64 rng(10);
  ModelConfig cfg;
  const LatentState prev = random_state(cfg, rng, 1.0);
  const LatentState hat = random_state(cfg, rng, 1.0);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  Matrix gate(cfg.state_tokens, cfg.dim);
  for (Eigen::Index i = 0; i < gate.size(); ++i) gate.data()[i] = u(rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(cfg.state_tokens);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + perm.indices().size(), rng);

  const Matrix direct = GatedRecurrentModel::gated_update(gate, hat, prev).tokens;
  const Matrix permuted = GatedRecurrentModel::gated_update(perm * gate, {perm * hat.tokens, 0}, {perm * prev.tokens, 0}).tokens;
  EXPECT_TRUE(bit_equal(perm.transpose() * permuted, direct));

  const Matrix reset_direct = GatedRecurrentModel::apply_reset(gate, prev).tokens;
  const Matrix reset_perm = GatedRecurrentModel::apply_reset(perm * gate, {perm * prev.tokens, 0}).tokens;
  EXPECT_TRUE(bit_equal(perm.transpose() * reset_perm, reset_direct));
}

TEST(Decode, ShapesAndDeterminism) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  const ImageTokens f = model.encode(fixture_image(cfg, 1));
  const auto a = model.decode(model.initial_state(), model.initial_pose_token(), f);
  const auto b = model.decode(model.initial_state(), model.initial_pose_token(), f);
  EXPECT_EQ(a.memory.tokens.rows(), cfg.state_tokens);
  EXPECT_EQ(a.memory.tokens.cols(), cfg.dim);
  EXPECT_EQ(a.pose_token.value.cols(), cfg.dim);
  EXPECT_EQ(a.image_tokens.tokens.rows(), cfg.num_patches());
  EXPECT_EQ(a.image_tokens.tokens.cols(), cfg.dim);
  EXPECT_TRUE(bit_equal(a.memory.tokens, b.memory.tokens));
  EXPECT_TRUE(bit_equal(a.image_tokens.tokens, b.image_tokens.tokens));
  EXPECT_TRUE(bit_equal(a.pose_token.value, b.pose_token.value));
}

TEST(Decode, GoldenSnapshot) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  const ImageTokens f = model.encode(fixture_image(cfg, 0));
  const auto out = model.decode(model.initial_state(), model.initial_pose_token(), f);
  check_golden("decode_seed42.grst", {{"memory", out.memory.tokens},
                                      {"pose_token", out.pose_token.value},
                                      {"image_tokens", out.image_tokens.tokens}});
}

TEST(Heads, ConfidenceAboveOneAndUnitQuaternion) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  std::mt19937_64 rng(12);
  for (int i = 0; i < 10; ++i) {
    const auto res = model.step(random_state(cfg, rng, 1.0), random_image(cfg, rng));
    const auto& p = res.prediction;
    EXPECT_EQ(p.x_self.width, cfg.width);
    EXPECT_EQ(p.x_self.height, cfg.height);
    EXPECT_TRUE(consistent_shapes(p));
    for (double c : p.c_self.values) EXPECT_GT(c, 1.0);
    for (double c : p.c_world.values) EXPECT_GT(c, 1.0);
    EXPECT_NEAR(p.pose.rotation.norm(), 1.0, 1e-12);
  }
}

TEST(Heads, PatchReassemblyPlacesBlocks) {
  // Route one head output column per patch pixel and check its destination.
  ModelConfig cfg;
  cfg.height = 16;
  cfg.width = 8;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  GatedRecurrentModel model(cfg);
  auto& head = model.mutable_weights().head_self;
  head.weight.setZero();
  head.bias.setZero();
  const int p2 = cfg.patch * cfg.patch;
  for (int k = 0; k < p2; ++k) head.bias(3 * k) = k;  // x = in-patch pixel index
  ImageTokens tokens{Matrix::Zero(cfg.num_patches(), cfg.dim)};
  const auto out = model.head_self(tokens);
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      EXPECT_EQ(out.points.points[out.points.index(r, c)].x(), (r % 4) * 4 + (c % 4));
    }
  }
}

TEST(Step, DeterministicAndStateEvolves) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  const Image img = fixture_image(cfg, 2);
  const auto a = model.step(model.initial_state(), img);
  const auto b = model.step(model.initial_state(), img);
  EXPECT_TRUE(bit_equal(a.state.tokens, b.state.tokens));
  EXPECT_TRUE(bit_equal(a.prediction.x_world, b.prediction.x_world));
  EXPECT_TRUE(bit_equal(a.prediction.x_self, b.prediction.x_self));
  EXPECT_EQ(a.state.frame_count, 1);
  EXPECT_FALSE(bit_equal(a.state.tokens, model.initial_state().tokens));
}

TEST(Step, UpdateGateOverrides) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  const Image img = fixture_image(cfg, 3);
  std::mt19937_64 rng(13);
  const LatentState s = random_state(cfg, rng, 0.5);
  const auto keep = model.step(s, img, {std::nullopt, 0.0});
  EXPECT_TRUE(bit_equal(keep.state.tokens, s.tokens));
  const auto replace = model.step(s, img, {std::nullopt, 1.0});
  EXPECT_TRUE(bit_equal(replace.state.tokens, replace.decoded_memory.tokens));
}

TEST(Step, ResetGateZeroFeedsDecoderZeroMemory) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  const Image img = fixture_image(cfg, 4);
  std::mt19937_64 rng(14);
  const LatentState s = random_state(cfg, rng, 0.5);
  const auto res = model.step(s, img, {0.0, std::nullopt});
  const auto direct = model.decode({Matrix::Zero(cfg.state_tokens, cfg.dim), 0}, model.initial_pose_token(),
                                   model.encode(img));
  EXPECT_TRUE(bit_equal(res.decoded_memory.tokens, direct.memory.tokens));
}

TEST(Step, FourFrameGoldenSequence) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  LatentState state = model.initial_state();
  TensorList snapshot;
  for (int t = 0; t < 4; ++t) {
    auto res = model.step(state, fixture_image(cfg, t));
    state = res.state;
    const std::string p = "frame" + std::to_string(t) + ".";
    snapshot.push_back({p + "x_self", flatten(res.prediction.x_self)});
    snapshot.push_back({p + "c_self", flatten(res.prediction.c_self)});
    snapshot.push_back({p + "x_world", flatten(res.prediction.x_world)});
    snapshot.push_back({p + "c_world", flatten(res.prediction.c_world)});
    snapshot.push_back({p + "pose", flatten(res.prediction.pose)});
    snapshot.push_back({p + "state", state.tokens});
  }
  check_golden("sequence4_seed42.grst", snapshot);
}

TEST(Weights, SeededInitializationIsReproducible) {
  ModelConfig cfg;
  const auto a = to_tensor_list(make_weights(cfg));
  const auto b = to_tensor_list(make_weights(cfg));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i].value, b[i].value)) << a[i].name;
  cfg.seed = 43;
  const auto c = to_tensor_list(make_weights(cfg));
  EXPECT_FALSE(bit_equal(a[0].value, c[0].value));
}

TEST(Weights, InitScaleIsSmallNormal) {
  const auto list = to_tensor_list(make_weights(ModelConfig{}));
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& t : list) {
    if (t.name.ends_with(".bias")) continue;
    sum += t.value.sum();
    sq += t.value.squaredNorm();
    n += static_cast<std::size_t>(t.value.size());
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 1e-3);
  EXPECT_NEAR(sd, kInitScale, 5e-4);
}

TEST(Weights, SnapshotRoundTrip) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  const fs::path path = fs::temp_directory_path() / "grs_weights_roundtrip.grsw";
  save_tensors(path.string(), to_tensor_list(model.weights()));
  ModelWeights loaded = make_weights(ModelConfig{cfg.height, cfg.width, cfg.patch, cfg.dim, cfg.state_tokens,
                                                 cfg.heads, cfg.blocks, 777});
  load_tensor_list(loaded, load_tensors(path.string()));
  GatedRecurrentModel restored(cfg, loaded);
  const Image img = fixture_image(cfg, 0);
  EXPECT_TRUE(bit_equal(model.step(model.initial_state(), img).state.tokens,
                        restored.step(restored.initial_state(), img).state.tokens));
  // Encoded bytes are stable.
  EXPECT_EQ(encode_tensors(to_tensor_list(model.weights())), encode_tensors(load_tensors(path.string())));
  fs::remove(path);
}

TEST(Weights, SnapshotShapeMismatchIsRejected) {
  ModelConfig small;
  small.dim = 16;
  ModelWeights w = make_weights(ModelConfig{});
  EXPECT_THROW(load_tensor_list(w, to_tensor_list(make_weights(small))), InputError);
  EXPECT_THROW(decode_tensors("abc"), InputError);
}

TEST(ToyPredictor, ResetRestoresInitialStateExactly) {
  ModelConfig cfg;
  GatedRecurrentModel model(cfg);
  std::vector<Image> images{fixture_image(cfg, 0), fixture_image(cfg, 1)};
  ToyPredictor pred(model, images, {0.0, 1.0});
  pred.step(0);
  pred.step(1);
  EXPECT_FALSE(bit_equal(pred.state().tokens, model.initial_state().tokens));
  pred.reset();
  EXPECT_TRUE(bit_equal(pred.state().tokens, model.initial_state().tokens));
  EXPECT_EQ(pred.state().frame_count, 0);
  EXPECT_THROW(pred.step(2), InputError);
}

}  // namespace
}  // namespace grs::predictor
