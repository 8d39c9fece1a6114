#include <doctest.h>

#include <cmath>

#include "hesscope/autodiff.hpp"
#include "hesscope/kernels.hpp"
#include "hesscope/models.hpp"
#include "hesscope/params.hpp"
#include "test_support.hpp"

using namespace hesscope;
namespace t = hesscope::testing;

namespace {

ParamVector single(std::vector<float> values) {
  ParamVector p;
  const auto n = static_cast<int64_t>(values.size());
  p.add("w", Tensor({n}, std::move(values)), ParamKind::kernel);
  return p;
}

LossFn<float> quadratic(std::vector<float> diag) {
  return [diag](const ParamGraph<float>& g) {
    const auto& w = g["w"];
    const auto d = ad::Var<float>::constant(Tensor({static_cast<int64_t>(diag.size())}, diag));
    return ad::scale(ad::dot(w, ad::mul(d, w)), 0.5);
  };
}

}  // namespace

TEST_CASE("grad of a linear function is its coefficient vector") {
  const ParamVector p = single({0.5f, -2.0f, 7.0f});
  const LossFn<float> f = [](const ParamGraph<float>& g) {
    return ad::dot(g["w"], ad::Var<float>::constant(Tensor({3}, {1, 2, 3})));
  };
  const FlatVector gr = grad(f, p);
  CHECK(gr[0] == 1.0);
  CHECK(gr[1] == 2.0);
  CHECK(gr[2] == 3.0);
}

TEST_CASE("cross-entropy gradient at uniform logits is softmax minus one-hot") {
  ParamVector p;
  p.add("logits", Tensor({1, 10}, 0.0f), ParamKind::kernel);
  const int label = 3;
  const LossFn<float> f = [&](const ParamGraph<float>& g) { return cross_entropy(g["logits"], {label}); };
  const FlatVector gr = grad(f, p);
  for (int k = 0; k < 10; ++k) CHECK(gr[k] == doctest::Approx(k == label ? -0.9 : 0.1).epsilon(1e-6));
}

TEST_CASE("hvp of simple quadratics") {
  SUBCASE("identity Hessian") {
    const ParamVector p = single({0.3f, -1.0f, 2.0f, 4.0f});
    const FlatVector v = t::random_unit(4, 9) * 3.0;
    const FlatVector hv = hvp(quadratic({1, 1, 1, 1}), p, v);
    CHECK((hv - v).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("diagonal Hessian") {
    const ParamVector p = single({1.0f, 1.0f, 1.0f});
    const FlatVector hv = hvp(quadratic({1, 2, 3}), p, FlatVector::Ones(3));
    CHECK(hv[0] == doctest::Approx(1.0));
    CHECK(hv[1] == doctest::Approx(2.0));
    CHECK(hv[2] == doctest::Approx(3.0));
  }
}

TEST_CASE("errors") {
  const ParamVector p = single({1.0f, 2.0f});
  CHECK_THROWS_AS(hvp(quadratic({1, 1}), p, FlatVector::Ones(3)), DimensionMismatch);
  const LossFn<float> bad = [](const ParamGraph<float>& g) {
    return ad::log(ad::scale(ad::sum(g["w"]), 0.0));
  };
  CHECK_THROWS_AS(grad(bad, p), NonFiniteLoss);
  CHECK_THROWS_AS(hvp(bad, p, FlatVector::Ones(2)), NonFiniteLoss);
  try {
    grad(bad, p);
  } catch (const NonFiniteLoss& e) {
    CHECK(std::isinf(e.value()));
  }
}

TEST_CASE("flatten and unflatten") {
  ParamVector p;
  p.add("a", Tensor({2, 2}, {1, 2, 3, 4}), ParamKind::kernel);
  p.add("b", Tensor({3}, {-1, -0.0f, 5}), ParamKind::bias);
  p.add("rm", Tensor({3}, {9, 9, 9}), ParamKind::bn_running_mean);
  const FlatVector flat = flatten(p);
  CHECK(flat.size() == 7);
  CHECK(p.total_len() == 7);
  CHECK(bitwise_equal(unflatten(flat, p), p));
  CHECK_THROWS_AS(unflatten(FlatVector::Zero(6), p), DimensionMismatch);

  // Running statistics pass through unflatten untouched.
  const ParamVector zeroed = unflatten(FlatVector::Zero(7), p);
  CHECK(bitwise_equal(zeroed.at("rm").tensor, p.at("rm").tensor));
  CHECK(zeroed.at("a").tensor[3] == 0.0f);
}

TEST_CASE("flatten round trip is bitwise on random models") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const ParamVector p = build_model(ModelSpec::bn_cnn(), seed);
    CHECK(bitwise_equal(unflatten(flatten(p), p), p));
  }
}

TEST_CASE("OpenMP kernels match the serial reference bitwise") {
  Rng rng(3);
  auto fill = [&](std::vector<float>& v) {
    for (float& x : v) x = static_cast<float>(uniform(rng, -1, 1));
  };
  const int64_t m = 37, n = 1100, k = 45;
  std::vector<float> a(m * k), b(k * n), c1(m * n), c2(m * n);
  fill(a);
  fill(b);
  kernels::serial::gemm(m, n, k, a.data(), b.data(), c1.data());
  kernels::omp::gemm(m, n, k, a.data(), b.data(), c2.data());
  CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);

  const kernels::ConvGeometry g{3, 2, 12, 11, 5};
  std::vector<float> x(3 * 2 * 12 * 11), cols1(g.patch() * g.positions()), cols2(cols1.size());
  fill(x);
  kernels::serial::im2col(g, x.data(), cols1.data());
  kernels::omp::im2col(g, x.data(), cols2.data());
  CHECK(cols1 == cols2);

  std::vector<float> y1(x.size()), y2(x.size());
  fill(cols1);
  kernels::serial::col2im(g, cols1.data(), y1.data());
  kernels::omp::col2im(g, cols1.data(), y2.data());
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);

  // col2im is the adjoint of im2col: ⟨im2col(x), c⟩ == ⟨x, col2im(c)⟩.
  kernels::serial::im2col(g, x.data(), cols2.data());
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < cols1.size(); ++i) lhs += double(cols2[i]) * cols1[i];
  for (size_t i = 0; i < x.size(); ++i) rhs += double(x[i]) * y1[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("hvp is linear and symmetric on zoo models") {
  const Batch batch = t::mnist_batch(32, 4);
  for (const ModelSpec& spec : {ModelSpec::mlp(), ModelSpec::lenet_mini(), ModelSpec::bn_cnn()}) {
    CAPTURE(to_string(spec.architecture));
    const ParamVector p = build_model(spec, 11);
    for (Mode mode : {Mode::train, Mode::eval}) {
      const LossFn<float> f = make_loss<float>(spec, batch, mode);
      const int64_t n = p.total_len();
      const FlatVector u = t::random_unit(n, 1), v = t::random_unit(n, 2);
      const FlatVector hu = hvp(f, p, u), hv = hvp(f, p, v);
      const double alpha = 0.7, beta = -1.3;
      const FlatVector combo = hvp(f, p, alpha * u + beta * v);
      const FlatVector lin = alpha * hu + beta * hv;
      CHECK((combo - lin).norm() <= 1e-4 * std::max(lin.norm(), 1e-12) + 1e-7);
      const double uhv = u.dot(hv), vhu = v.dot(hu);
      CHECK(std::abs(uhv - vhu) <= 1e-4 * std::max({std::abs(uhv), std::abs(vhu), hu.norm()}));
    }
  }
}

TEST_CASE("lenet_mini gradient matches central finite differences") {
  const ModelSpec spec = ModelSpec::lenet_mini();
  const Batch batch = t::mnist_batch(64, 2);
  const ParamVector p = build_model(spec, 3);
  const FlatVector g = grad(make_loss<float>(spec, batch, Mode::train), p);

  // Oracle: float64 forward passes, 24 coordinates drawn from every tensor. Steps much
  // above 1e-6 cross ReLU and max-pool kinks on bias coordinates.
  const auto pd = p.cast<double>();
  const LossFn<double> fd_loss = make_loss<double>(spec, batch, Mode::train);
  const FlatVector w = pd.flatten();
  Rng rng(17);
  std::vector<int64_t> coords;
  const auto offsets = p.flat_offsets();
  for (size_t e = 0; e < p.size(); ++e) {
    const int64_t len = p.entries()[e].tensor.numel();
    for (int i = 0; i < 24; ++i) coords.push_back(*offsets[e] + static_cast<int64_t>(rng() % static_cast<uint64_t>(len)));
  }
  FlatVector got(coords.size()), want(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    got[i] = g[coords[i]];
    want[i] = t::fd_partial(fd_loss, pd, w, coords[i], 1e-6);
  }
  CHECK(t::relative_error(got, want) < 1e-3);
}

TEST_CASE("hvp matches finite differences of the gradient") {
  const Batch batch = t::mnist_batch(64, 2);
  for (const ModelSpec& spec : {ModelSpec::mlp(), ModelSpec::lenet_mini(), ModelSpec::bn_cnn()}) {
    CAPTURE(to_string(spec.architecture));
    const ParamVector p = build_model(spec, 5);
    const FlatVector v = t::random_unit(p.total_len(), 8);
    const FlatVector hv = hvp(make_loss<float>(spec, batch, Mode::train), p, v);
    const FlatVector fd = t::fd_hvp(make_loss<double>(spec, batch, Mode::train), p.cast<double>(), v, 1e-5);
    CHECK(t::relative_error(hv, fd) < 1e-3);
  }
}
