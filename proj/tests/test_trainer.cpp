#include <doctest.h>

#include <cmath>
#include <fstream>

#include "hesscope/llac.hpp"
#include "hesscope/trainer.hpp"
#include "test_support.hpp"

using namespace hesscope;
namespace t = hesscope::testing;

namespace {

ParamVector scalar_param(float w) {
  ParamVector p;
  p.add("w", Tensor({1}, {w}), ParamKind::kernel);
  return p;
}

TrainConfig blob_config() {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.seed = 4;
  return cfg;
}

std::vector<uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

bool same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
  if (!bitwise_equal(a.params, b.params) || a.epoch != b.epoch || a.seed != b.seed) return false;
  if (std::memcmp(&a.train_loss, &b.train_loss, sizeof(double)) != 0) return false;
  if (a.adam.has_value() != b.adam.has_value()) return false;
  if (!a.adam) return true;
  const auto n = static_cast<size_t>(a.adam->m.size());
  return a.adam->step_count == b.adam->step_count &&
         std::memcmp(a.adam->m.data(), b.adam->m.data(), n * sizeof(double)) == 0 &&
         std::memcmp(a.adam->v.data(), b.adam->v.data(), n * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("first Adam step moves each coordinate by about lr against the gradient") {
  ParamVector p;
  p.add("w", Tensor({4}, {1.0f, -2.0f, 0.5f, 3.0f}), ParamKind::kernel);
  const FlatVector before = p.flatten();
  const FlatVector c = FlatVector::Constant(4, 0.37);
  AdamState s = AdamState::zeros(4, 0.01);
  adam_step(p, c, s);
  CHECK(s.step_count == 1);
  const FlatVector delta = p.flatten() - before;
  for (int i = 0; i < 4; ++i) CHECK(delta[i] == doctest::Approx(-0.01).epsilon(1e-5));
}

TEST_CASE("zero gradient with zero state leaves parameters unchanged") {
  const ParamVector p0 = build_model(ModelSpec::mlp(1, 8, 8, 2), 3);
  ParamVector p = p0;
  AdamState s = AdamState::zeros(p.total_len(), 1e-3);
  adam_step(p, FlatVector::Zero(p.total_len()), s);
  CHECK(bitwise_equal(p, p0));
}

TEST_CASE("Adam with lr 0 is bitwise inert") {
  const ParamVector p0 = build_model(ModelSpec::lenet_mini(), 8);
  ParamVector p = p0;
  AdamState s = AdamState::zeros(p.total_len(), 0.0);
  adam_step(p, t::random_unit(p.total_len(), 3), s);
  adam_step(p, t::random_unit(p.total_len(), 4), s);
  CHECK(bitwise_equal(p, p0));
}

TEST_CASE("two Adam steps on f(w) = w^2/2 follow the hand recurrence") {
  const LossFn<float> f = [](const ParamGraph<float>& g) { return ad::scale(ad::dot(g["w"], g["w"]), 0.5); };
  ParamVector p = scalar_param(1.0f);
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamState s = AdamState::zeros(1, lr, b1, b2, eps);
  for (int k = 0; k < 2; ++k) adam_step(p, grad(f, p), s);

  // Hand recurrence; weights round to f32 after every step like the parameters do.
  double w = 1.0, m = 0, v = 0;
  for (int k = 1; k <= 2; ++k) {
    const double g = w;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double m_hat = m / (1 - std::pow(b1, k)), v_hat = v / (1 - std::pow(b2, k));
    w = static_cast<float>(w - lr * m_hat / (std::sqrt(v_hat) + eps));
  }
  CHECK(p.flatten()[0] == doctest::Approx(w).epsilon(1e-7));
  CHECK(s.m[0] == doctest::Approx(m).epsilon(1e-12));
  CHECK(s.v[0] == doctest::Approx(v).epsilon(1e-12));
  // First step magnitude is lr: w1 = 0.9 (up to eps), then the second step is smaller than lr.
  CHECK(w < 0.9);
  CHECK(w > 0.8);
}

TEST_CASE("mlp separates the blob fixture") {
  const Dataset blobs = t::blob_fixture();
  const ModelSpec spec = ModelSpec::mlp(1, 8, 8, 2);
  const TrainResult r = train(spec, blobs, blob_config());
  REQUIRE(r.history.size() == 30);
  CHECK(r.history.back().accuracy == 1.0);
  CHECK(accuracy(spec, r.final.params, blobs, Mode::eval) == 1.0);
  for (int e = 1; e < 5; ++e) CHECK(r.history[e].loss < r.history[e - 1].loss);
  for (size_t e = 0; e < r.history.size(); ++e) CHECK(r.history[e].epoch == static_cast<int>(e) + 1);
}

TEST_CASE("training is deterministic") {
  const Dataset blobs = t::blob_fixture(256);
  TrainConfig cfg = blob_config();
  cfg.epochs = 4;
  const ModelSpec spec = ModelSpec::bn_cnn(1, 8, 8, 2);
  ModelSpec small = spec;
  small.conv_channels = {4};
  small.hidden = {16};
  const TrainResult a = train(small, blobs, cfg);
  const TrainResult b = train(small, blobs, cfg);
  CHECK(same_checkpoint(a.final, b.final));
}

TEST_CASE("BN running statistics follow the momentum rule") {
  ModelSpec spec = ModelSpec::bn_cnn(1, 8, 8, 2);
  spec.conv_channels = {3};
  spec.hidden = {8};
  spec.bn_momentum = 0.25;
  const Dataset blobs = t::blob_fixture(16);
  TrainConfig cfg = blob_config();
  cfg.epochs = 1;
  cfg.batch_size = 16;

  // Oracle: batch statistics of the first (and only) step, recomputed directly from the
  // conv output of the initial parameters.
  const ParamVector p0 = initial_params(spec, cfg.seed);
  const Batch batch = blobs.gather(batch_indices(16, 16, derive_seed(cfg.seed, {1, 1})).front());
  const Tensor& w = p0.at("conv1.weight").tensor;
  const Tensor& bias = p0.at("conv1.bias").tensor;
  const int64_t oh = 4, ow = 4, n = 16 * oh * ow;
  std::vector<double> sum(3), sq(3);
  for (int64_t b = 0; b < 16; ++b) {
    for (int64_t o = 0; o < 3; ++o) {
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t x = 0; x < ow; ++x) {
          double acc = bias[o];
          for (int64_t ky = 0; ky < 5; ++ky) {
            for (int64_t kx = 0; kx < 5; ++kx) acc += double(w[o * 25 + ky * 5 + kx]) * batch.images[b * 64 + (y + ky) * 8 + x + kx];
          }
          sum[o] += acc;
          sq[o] += acc * acc;
        }
      }
    }
  }
  const TrainResult r = train(spec, blobs, cfg);
  const Tensor& rm = r.final.params.at("bn1.running_mean").tensor;
  const Tensor& rv = r.final.params.at("bn1.running_var").tensor;
  for (int64_t o = 0; o < 3; ++o) {
    const double mean = sum[o] / n;
    const double var_unbiased = (sq[o] - n * mean * mean) / (n - 1);
    CHECK(rm[o] == doctest::Approx(0.25 * mean).epsilon(1e-4));
    CHECK(rv[o] == doctest::Approx(0.75 + 0.25 * var_unbiased).epsilon(1e-4));
  }
}

TEST_CASE("checkpoint round trip and resume") {
  const auto dir = t::scratch_dir("trainer_ckpt");
  ModelSpec spec = ModelSpec::bn_cnn(1, 8, 8, 2);
  spec.conv_channels = {4};
  spec.hidden = {12};
  const Dataset blobs = t::blob_fixture(128);
  TrainConfig cfg = blob_config();
  cfg.epochs = 4;
  cfg.checkpoint_every = 2;
  TrainOptions opts;
  opts.checkpoint_dir = dir;
  const TrainResult full = train(spec, blobs, cfg, opts);
  REQUIRE(full.checkpoint_files.size() == 2);
  CHECK(full.checkpoint_files[0].filename() == "epoch_0002.llac");

  SUBCASE("load(save(x)) is bitwise") {
    const Checkpoint loaded = load_checkpoint(full.checkpoint_files[1]);
    CHECK(same_checkpoint(loaded, full.final));
    CHECK(loaded.spec.conv_channels == spec.conv_channels);
    const Batch batch = blobs.gather(batch_indices(128, 64, 1).front());
    CHECK(bitwise_equal(forward(spec, loaded.params, batch, Mode::eval), forward(spec, full.final.params, batch, Mode::eval)));
  }
  SUBCASE("resuming at epoch 2 reproduces epochs 3 and 4") {
    const Checkpoint mid = load_checkpoint(full.checkpoint_files[0]);
    CHECK(mid.epoch == 2);
    TrainOptions resume;
    resume.resume = &mid;
    const TrainResult rest = train(spec, blobs, cfg, resume);
    REQUIRE(rest.history.size() == 2);
    CHECK(rest.history[0].epoch == 3);
    CHECK(rest.history[0].loss == full.history[2].loss);
    CHECK(rest.history[1].accuracy == full.history[3].accuracy);
    CHECK(same_checkpoint(rest.final, full.final));
  }
  SUBCASE("corrupted containers are rejected") {
    const auto good = slurp(full.checkpoint_files[1]);
    const auto bad = dir / "bad.llac";

    auto truncated = good;
    truncated.resize(good.size() - 10);
    dump(bad, truncated);
    CHECK_THROWS_AS(load_checkpoint(bad), TruncatedFile);

    auto version = good;
    version[4] = 2;
    dump(bad, version);
    CHECK_THROWS_AS(load_checkpoint(bad), VersionMismatch);

    auto magic = good;
    magic[0] = 'X';
    dump(bad, magic);
    CHECK_THROWS_AS(load_checkpoint(bad), BadMagic);

    auto manifest = good;
    manifest[16] = '!';
    dump(bad, manifest);
    CHECK_THROWS_AS(load_checkpoint(bad), ManifestError);
  }
}

TEST_CASE("non-finite loss carries epoch and batch context") {
  const Dataset blobs = t::blob_fixture(64);
  TrainConfig cfg = blob_config();
  cfg.lr = 1e30;
  cfg.optimizer = Optimizer::sgd;
  cfg.epochs = 3;
  try {
    train(ModelSpec::mlp(1, 8, 8, 2), blobs, cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.epochs = 1;
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(train(ModelSpec::mlp(1, 8, 8, 2), Dataset{}, TrainConfig{}), EmptyDataset);
}
