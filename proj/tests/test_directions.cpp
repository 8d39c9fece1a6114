#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "hesscope/directions.hpp"
#include "test_support.hpp"

using namespace hesscope;
namespace t = hesscope::testing;

namespace {

const std::vector<ModelSpec>& zoo() {
  static const std::vector<ModelSpec> specs{ModelSpec::mlp(), ModelSpec::lenet_mini(), ModelSpec::bn_cnn()};
  return specs;
}

}  // namespace

TEST_CASE("random directions are seeded and drawn from separate streams") {
  const ParamVector p = build_model(ModelSpec::lenet_mini(), 1);
  for (auto dist : {DirectionSource::random_gaussian, DirectionSource::random_uniform}) {
    const DirectionPair a = random_directions(p, dist, 42);
    const DirectionPair b = random_directions(p, dist, 42);
    const DirectionPair c = random_directions(p, dist, 43);
    CHECK(a.d1 == b.d1);
    CHECK(a.d2 == b.d2);
    CHECK(a.d1 != c.d1);
    CHECK(a.d1 != a.d2);
    CHECK(a.d1.size() == p.total_len());
  }
  CHECK_THROWS_AS(random_directions(p, DirectionSource::adam, 1), ConfigError);
}

TEST_CASE("random direction marginals") {
  ParamVector p;
  p.add("w", Tensor({10000}), ParamKind::kernel);
  const DirectionPair g = random_directions(p, DirectionSource::random_gaussian, 7);
  for (const FlatVector* d : {&g.d1, &g.d2}) {
    const double mean = d->mean();
    const double var = (d->array() - mean).square().sum() / (d->size() - 1);
    CHECK(std::abs(mean) < 4.0 / 100.0);
    CHECK(std::abs(var - 1.0) < 0.1);
  }
  const DirectionPair u = random_directions(p, DirectionSource::random_uniform, 7);
  CHECK(u.d1.maxCoeff() <= 1.0);
  CHECK(u.d1.minCoeff() >= -1.0);
  CHECK(std::abs(u.d1.mean()) < 4.0 * std::sqrt(1.0 / 3.0) / 100.0);
  const double var = (u.d1.array() - u.d1.mean()).square().sum() / (u.d1.size() - 1);
  CHECK(std::abs(var - 1.0 / 3.0) < 0.1 / 3.0);
}

TEST_CASE("freeze_bn zeroes exactly the BN affine coordinates") {
  const ParamVector p = build_model(ModelSpec::bn_cnn(), 2);
  DirectionPair d = random_directions(p, DirectionSource::random_gaussian, 3);
  freeze_bn(d, p);
  CHECK(d.freeze_bn);
  const auto offsets = p.flat_offsets();
  int64_t zeroed = 0;
  for (size_t e = 0; e < p.size(); ++e) {
    if (!offsets[e]) continue;
    const auto& entry = p.entries()[e];
    const auto seg1 = d.d1.segment(*offsets[e], entry.tensor.numel());
    const auto seg2 = d.d2.segment(*offsets[e], entry.tensor.numel());
    if (is_bn_affine(entry.kind)) {
      CHECK(seg1.cwiseAbs().maxCoeff() == 0.0);
      CHECK(seg2.cwiseAbs().maxCoeff() == 0.0);
      zeroed += entry.tensor.numel();
    } else {
      CHECK(seg1.cwiseAbs().minCoeff() > 0.0);
    }
  }
  CHECK(zeroed == 2 * (6 + 16));
  // Normalization keeps them at zero.
  const DirectionPair n = normalize(d, p, NormScheme::filter_l2);
  CHECK(n.d1.cwiseProduct(p.coordinate_mask(is_bn_affine)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Hessian axes of a diagonal quadratic") {
  std::vector<float> diag{10.0f, 1.0f};
  for (int i = 0; i < 48; ++i) diag.push_back(0.1f);
  ParamVector p;
  p.add("w", Tensor({50}, 0.3f), ParamKind::kernel);
  const LossFn<float> f = [diag](const ParamGraph<float>& g) {
    const auto d = ad::Var<float>::constant(Tensor({50}, diag));
    return ad::scale(ad::dot(g["w"], ad::mul(d, g["w"])), 0.5);
  };
  const HvpOracle op = [&](const FlatVector& v) { return hvp(f, p, v); };
  const DirectionPair axes = hessian_axes(op, p, {});
  CHECK(axes.source == DirectionSource::hessian);
  CHECK(std::abs(axes.d1[0]) > 0.99);
  CHECK(std::abs(axes.d2[1]) > 0.99);
  CHECK(axes.eigenvalues[0] == doctest::Approx(10.0).epsilon(0.02));
  CHECK(axes.eigenvalues[0] >= axes.eigenvalues[1]);
  CHECK(std::abs(axes.d1.norm() - 1.0) < 1e-6);
  CHECK(std::abs(axes.d2.norm() - 1.0) < 1e-6);
  CHECK(std::abs(axes.d1.dot(axes.d2)) < 1e-6);
  CHECK(axes.d1.dot(op(axes.d1)) == doctest::Approx(axes.eigenvalues[0]).epsilon(1e-6));
}

TEST_CASE("Hessian axes match a dense eigendecomposition on a small network") {
  // 1×4×4 inputs, 16 hidden units, 3 classes: 323 parameters.
  const ModelSpec spec = ModelSpec::mlp(1, 4, 4, 3);
  ModelSpec tiny = spec;
  tiny.hidden = {16};
  const ParamVector p = build_model(tiny, 6);
  REQUIRE(p.total_len() == 323);
  Batch batch{Tensor({48, 1, 4, 4}), {}};
  Rng rng(10);
  for (float& x : batch.images.data()) x = static_cast<float>(uniform01(rng));
  for (int i = 0; i < 48; ++i) batch.labels.push_back(i % 3);

  const auto pd = p.cast<double>();
  const LossFn<double> fd = make_loss<double>(tiny, batch, Mode::train);
  const int64_t n = p.total_len();
  Eigen::MatrixXd h(n, n);
  for (int64_t i = 0; i < n; ++i) h.col(i) = hvp(fd, pd, FlatVector::Unit(n, i));
  const Eigen::MatrixXd sym = 0.5 * (h + h.transpose());
  CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(sym);

  const HvpOracle op = [&](const FlatVector& v) { return hvp(fd, pd, v); };
  CAPTURE(oracle.eigenvalues()[n - 1]);
  CAPTURE(oracle.eigenvalues()[n - 2]);
  CAPTURE(oracle.eigenvalues()[n - 3]);
  const Eigen::MatrixXd top = oracle.eigenvectors().rightCols(2);

  // The top two eigenvalues sit close together here, so the default tolerance pins the
  // plane they span before it separates the individual vectors.
  PowerConfig cfg;
  cfg.seed = 3;
  const DirectionPair axes = hessian_axes(op, p, cfg);
  CHECK(axes.converged);
  CHECK((top.transpose() * axes.d1).norm() > 0.99);
  CHECK((top.transpose() * axes.d2).norm() > 0.99);
  CHECK(axes.eigenvalues[0] == doctest::Approx(oracle.eigenvalues()[n - 1]).epsilon(0.02));
  CHECK(axes.eigenvalues[1] == doctest::Approx(oracle.eigenvalues()[n - 2]).epsilon(0.02));

  cfg.tol = 1e-9;
  cfg.max_iters = 3000;
  const DirectionPair tight = hessian_axes(op, p, cfg);
  CHECK(tight.converged);
  CHECK(std::abs(tight.d1.dot(oracle.eigenvectors().col(n - 1))) > 0.99);
  CHECK(std::abs(tight.d2.dot(oracle.eigenvectors().col(n - 2))) > 0.99);
}

TEST_CASE("Adam axes") {
  ParamVector p;
  p.add("w", Tensor({3}, {1.0f, 2.0f, 3.0f}), ParamKind::kernel);
  AdamState s = AdamState::zeros(3, 1e-3);
  CHECK_THROWS_AS(adam_axes(s), ColdOptimizer);
  FlatVector g(3);
  g << 0.5, -1.5, 2.0;
  adam_step(p, g, s);
  const DirectionPair axes = adam_axes(s);
  for (int i = 0; i < 3; ++i) {
    CHECK(axes.d1[i] == (1.0 - s.beta1) * g[i]);
    CHECK(axes.d2[i] >= 0.0);
  }
}

TEST_CASE("normalization contracts on every zoo model") {
  for (const ModelSpec& spec : zoo()) {
    CAPTURE(to_string(spec.architecture));
    const ParamVector p = build_model(spec, 9);
    const FlatVector w = p.flatten();
    const FlatVector d = random_directions(p, DirectionSource::random_gaussian, 4).d1;
    CHECK(t::worst_slice_ratio(normalize(d, p, NormScheme::filter_l2), w, filter_slices(p), false) < 1e-6);
    CHECK(t::worst_slice_ratio(normalize(d, p, NormScheme::filter_l1), w, filter_slices(p), true) < 1e-6);
    CHECK(t::worst_slice_ratio(normalize(d, p, NormScheme::layer), w, layer_slices(p), false) < 1e-6);
    const FlatVector m = normalize(d, p, NormScheme::model);
    CHECK(std::abs(m.norm() - w.norm()) < 1e-6 * w.norm());
    CHECK(normalize(d, p, NormScheme::none) == d);
  }
}

TEST_CASE("filters are output-channel slices") {
  const ParamVector p = build_model(ModelSpec::lenet_mini(), 1);
  const auto slices = filter_slices(p);
  // conv1: 6 filters of 25, bias; conv2: 16 of 150, bias; fc1..fc3 rows plus biases.
  CHECK(slices.size() == 6 + 1 + 16 + 1 + 120 + 1 + 84 + 1 + 10 + 1);
  CHECK(slices[0].len == 25);
  CHECK(slices[6].len == 6);
  CHECK(slices[7].len == 150);
  CHECK(slices.back().offset + slices.back().len == p.total_len());
}

TEST_CASE("weight normalization is elementwise") {
  ParamVector p;
  p.add("w", Tensor({3}, {2.0f, 0.0f, -1.0f}), ParamKind::kernel);
  const FlatVector out = normalize(FlatVector::Ones(3), p, NormScheme::weight);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == -1.0);
  CHECK_THROWS_AS(normalize(FlatVector::Ones(4), p, NormScheme::weight), DimensionMismatch);
}

TEST_CASE("positive homogeneity") {
  const ParamVector p = build_model(ModelSpec::bn_cnn(), 5);
  const FlatVector d = random_directions(p, DirectionSource::random_uniform, 8).d1;
  const double alpha = 3.7;
  for (auto s : {NormScheme::filter_l1, NormScheme::filter_l2, NormScheme::layer, NormScheme::model}) {
    CAPTURE(to_string(s));
    const FlatVector a = normalize(d, p, s), b = normalize(alpha * d, p, s);
    CHECK((a - b).norm() <= 1e-9 * a.norm());
  }
  for (auto s : {NormScheme::none, NormScheme::weight}) {
    const FlatVector a = normalize(d, p, s), b = normalize(alpha * d, p, s);
    CHECK((alpha * a - b).norm() <= 1e-12 * b.norm());
  }
}

TEST_CASE("filter normalization follows ReLU rescaling of the weights") {
  // Scaling conv1 by c and conv2's kernel by 1/c leaves the network function unchanged.
  // Filter-normalized perturbations scale the same way, so the perturbed networks agree too.
  const ModelSpec spec = ModelSpec::lenet_mini();
  const ParamVector p = build_model(spec, 12);
  const double c = 4.0;
  ParamVector q = p;
  for (float& x : q.at("conv1.weight").tensor.data()) x = static_cast<float>(x * c);
  for (float& x : q.at("conv1.bias").tensor.data()) x = static_cast<float>(x * c);
  for (float& x : q.at("conv2.weight").tensor.data()) x = static_cast<float>(x / c);

  const Batch batch = t::mnist_batch(32, 6);
  const Tensor lp = forward(spec, p, batch, Mode::eval), lq = forward(spec, q, batch, Mode::eval);
  double dev = 0;
  for (int64_t i = 0; i < lp.numel(); ++i) dev = std::max(dev, double(std::abs(lp[i] - lq[i])));
  CHECK(dev < 1e-4);

  const FlatVector d = random_directions(p, DirectionSource::random_gaussian, 2).d1;
  const ParamVector pp = p.unflatten(p.flatten() + 0.5 * normalize(d, p, NormScheme::filter_l2));
  const ParamVector qq = q.unflatten(q.flatten() + 0.5 * normalize(d, q, NormScheme::filter_l2));
  const Tensor a = forward(spec, pp, batch, Mode::eval), b = forward(spec, qq, batch, Mode::eval);
  double dev2 = 0;
  for (int64_t i = 0; i < a.numel(); ++i) dev2 = std::max(dev2, double(std::abs(a[i] - b[i])));
  CHECK(dev2 < 1e-4);

  // Model normalization is not invariant under the same rescaling.
  const ParamVector pm = p.unflatten(p.flatten() + 0.5 * normalize(d, p, NormScheme::model));
  const ParamVector qm = q.unflatten(q.flatten() + 0.5 * normalize(d, q, NormScheme::model));
  const Tensor am = forward(spec, pm, batch, Mode::eval), bm = forward(spec, qm, batch, Mode::eval);
  double dev3 = 0;
  for (int64_t i = 0; i < am.numel(); ++i) dev3 = std::max(dev3, double(std::abs(am[i] - bm[i])));
  CHECK(dev3 > 1e-2);
}

TEST_CASE("direction pairs round-trip through LLAC") {
  const auto dir = t::scratch_dir("directions");
  const ParamVector p = build_model(ModelSpec::mlp(), 1);
  DirectionPair d = normalize(random_directions(p, DirectionSource::random_gaussian, 5), p, NormScheme::filter_l2);
  d.eigenvalues = {3.5, 1.25};
  save_directions(d, dir / "dirs.llac");
  const DirectionPair back = load_directions(dir / "dirs.llac");
  CHECK(back.d1 == d.d1);
  CHECK(back.d2 == d.d2);
  CHECK(back.source == d.source);
  CHECK(back.normalization == NormScheme::filter_l2);
  CHECK(back.eigenvalues == d.eigenvalues);
}
