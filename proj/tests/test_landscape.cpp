#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "hesscope/landscape.hpp"
#include "test_support.hpp"

using namespace hesscope;
namespace t = hesscope::testing;

namespace {

LandscapeGrid toy_grid(std::vector<double> losses, double center) {
  LandscapeGrid g;
  g.spec.steps = 2;
  g.spec.range = 1;
  g.losses = std::move(losses);
  g.center_loss = center;
  for (double x : g.losses) g.finite.push_back(std::isfinite(x));
  return g;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("grid geometry") {
  GridSpec spec;
  CHECK(spec.range == 20.0);
  CHECK(spec.steps == 40);
  CHECK(spec.side() * spec.side() == 1681);
  CHECK(spec.coefficient(0) == -20.0);
  CHECK(spec.coefficient(20) == 0.0);
  CHECK(spec.coefficient(40) == 20.0);
  CHECK(spec.coefficient(21) == 1.0);
  for (int i = 0; i <= 40; ++i) CHECK(spec.coefficient(40 - i) == -spec.coefficient(i));
  spec.steps = 7;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.steps = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.steps = 4;
  spec.range = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("quadratic bowl along orthonormal axes") {
  const int64_t n = 30;
  DirectionPair dirs;
  dirs.d1 = t::random_unit(n, 1);
  dirs.d2 = t::random_unit(n, 2);
  dirs.d2 -= dirs.d2.dot(dirs.d1) * dirs.d1;
  dirs.d2.normalize();
  const FlatLoss half_norm = [](const FlatVector& x) { return 0.5 * x.squaredNorm(); };
  GridSpec spec;
  spec.range = 3;
  spec.steps = 12;
  const LandscapeGrid g = evaluate_grid(half_norm, FlatVector::Zero(n), dirs, spec);
  REQUIRE(g.losses.size() == 169u);
  double worst = 0;
  for (int i = 0; i <= 12; ++i) {
    for (int j = 0; j <= 12; ++j) {
      const double a = spec.coefficient(i), b = spec.coefficient(j);
      worst = std::max(worst, std::abs(g.at(i, j) - 0.5 * (a * a + b * b)));
    }
  }
  CHECK(worst < 1e-12);
  CHECK(g.center_loss == 0.0);
}

TEST_CASE("model grids: center, scheduling, reflection and purity") {
  for (const ModelSpec& model : {ModelSpec::lenet_mini(), ModelSpec::bn_cnn()}) {
    CAPTURE(to_string(model.architecture));
    const ParamVector p = build_model(model, 3);
    const ParamVector before = p;
    const Batch batch = t::mnist_batch(32, 4);
    const DirectionPair dirs =
        normalize(random_directions(p, DirectionSource::random_gaussian, 9), p, NormScheme::filter_l2);
    GridSpec spec;
    spec.range = 2;
    spec.steps = 6;
    for (Mode mode : {Mode::eval, Mode::train}) {
      CAPTURE(to_string(mode));
      spec.mode = mode;
      const LandscapeGrid par = evaluate_grid(model, p, batch, dirs, spec, Schedule::parallel);
      const LandscapeGrid ser = evaluate_grid(model, p, batch, dirs, spec, Schedule::serial);
      CHECK(same_bits(par.center_loss, loss(model, p, batch, mode)));
      CHECK(same_bits(par.at(3, 3), par.center_loss));
      bool identical = true;
      for (size_t k = 0; k < par.losses.size(); ++k) identical &= same_bits(par.losses[k], ser.losses[k]);
      CHECK(identical);

      DirectionPair neg = dirs;
      neg.d1 = -dirs.d1;
      neg.d2 = -dirs.d2;
      const LandscapeGrid flipped = evaluate_grid(model, p, batch, neg, spec);
      bool reflected = true;
      for (int i = 0; i <= 6; ++i) {
        for (int j = 0; j <= 6; ++j) reflected &= same_bits(flipped.at(i, j), par.at(6 - i, 6 - j));
      }
      CHECK(reflected);
      CHECK(bitwise_equal(p, before));
    }
  }
}

TEST_CASE("without BN the center is the same in both modes") {
  const ModelSpec model = ModelSpec::lenet_mini();
  const ParamVector p = build_model(model, 1);
  const Batch batch = t::mnist_batch(16, 2);
  const DirectionPair dirs = random_directions(p, DirectionSource::random_uniform, 1);
  GridSpec spec;
  spec.steps = 2;
  spec.mode = Mode::train;
  const double train = evaluate_grid(model, p, batch, dirs, spec).center_loss;
  spec.mode = Mode::eval;
  CHECK(same_bits(train, evaluate_grid(model, p, batch, dirs, spec).center_loss));
}

TEST_CASE("grid evaluation rejects mismatched directions") {
  DirectionPair dirs;
  dirs.d1 = FlatVector::Zero(3);
  dirs.d2 = FlatVector::Zero(4);
  const FlatLoss f = [](const FlatVector& x) { return x.sum(); };
  CHECK_THROWS_AS(evaluate_grid(f, FlatVector::Zero(3), dirs, GridSpec{}), DimensionMismatch);
}

TEST_CASE("non-finite losses are recorded") {
  DirectionPair dirs;
  dirs.d1 = FlatVector::Ones(1);
  dirs.d2 = FlatVector::Zero(1);
  const FlatLoss f = [](const FlatVector& x) { return x[0] > 1.5 ? std::numeric_limits<double>::infinity() : 1.0; };
  GridSpec spec;
  spec.range = 2;
  spec.steps = 4;
  const LandscapeGrid g = evaluate_grid(f, FlatVector::Zero(1), dirs, spec);
  for (int j = 0; j <= 4; ++j) {
    CHECK_FALSE(g.finite[static_cast<size_t>(4 * 5 + j)]);
    CHECK(g.finite[static_cast<size_t>(3 * 5 + j)]);
  }
  const ExplosionReport r = detect_explosion(g);
  CHECK(r.exploded);
  CHECK(r.nonfinite_count == 5);
  CHECK(r.max_finite_ratio == 1.0);
}

TEST_CASE("explosion detection") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ExplosionReport r = detect_explosion(toy_grid({1, 2, 3, 4, 1, 5, 6, 7, nan}, 1.0));
  CHECK(r.exploded);
  CHECK(r.nonfinite_count == 1);
  CHECK(r.max_finite_ratio == 7.0);

  r = detect_explosion(toy_grid({1, 2, 3, 4, 1, 5, 6, 7, 9.5}, 1.0));
  CHECK_FALSE(r.exploded);
  CHECK(r.threshold == 1e3);

  r = detect_explosion(toy_grid({1, 2, 3, 4, 1, 5, 6, 7, 1001}, 1.0));
  CHECK(r.exploded);
  CHECK(r.nonfinite_count == 0);
  CHECK_FALSE(detect_explosion(toy_grid({1, 2, 3, 4, 1, 5, 6, 7, 1001}, 1.0), 2e3).exploded);

  CHECK_THROWS_AS(detect_explosion(toy_grid({1, 1, 1, 1, 0, 1, 1, 1, 1}, 0.0)), DegenerateCenter);
  CHECK_THROWS_AS(detect_explosion(toy_grid({1, 1, 1, 1, nan, 1, 1, 1, 1}, nan)), DegenerateCenter);
}

TEST_CASE("loss capping") {
  const double inf = std::numeric_limits<double>::infinity();
  LandscapeGrid g = toy_grid({1, 150, inf, 2, 3, 4, 5, 6, 7}, 3);
  const LandscapeGrid c = cap(g, 100);
  CHECK(c.losses[0] == 1);
  CHECK(c.losses[1] == 100);
  CHECK(c.losses[2] == 100);
  CHECK(c.finite[0]);
  CHECK(c.finite[1]);
  CHECK_FALSE(c.finite[2]);

  const LandscapeGrid twice = cap(c, 100);
  CHECK(twice.losses == c.losses);
  CHECK(twice.finite == c.finite);

  const LandscapeGrid calm = toy_grid({1, 2, 3, 4, 5, 6, 7, 8, 9}, 5);
  const LandscapeGrid same = cap(calm, 10);
  CHECK(same.losses == calm.losses);
  CHECK(same.finite == calm.finite);
}

TEST_CASE("CSV export") {
  DirectionPair dirs;
  dirs.d1 = FlatVector::Ones(1);
  dirs.d2 = FlatVector::Ones(1);
  const FlatLoss f = [](const FlatVector& x) { return x[0] == 0 ? 1.0 / 3.0 : std::nan(""); };
  GridSpec spec;
  spec.steps = 2;
  spec.range = 1;
  const LandscapeGrid g = evaluate_grid(f, FlatVector::Zero(1), dirs, spec);
  const auto path = t::scratch_dir("landscape") / "grid.csv";
  write_grid_csv(g, path);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 10u);
  CHECK(lines[0] == "i,j,a,b,loss,finite");
  CHECK(lines[1] == "0,0,-1,-1,nan,0");
  CHECK(lines[3] == "0,2,-1,1,0.333333333,1");
}
