#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "rgbdprior/patch.hpp"
#include "rgbdprior/rendering.hpp"

using namespace rgbdprior;
using testutil::oracle_composite;
using testutil::random_batch;

TEST_CASE("stratified sampling returns bin centers without jitter") {
  Rng rng(1);
  const ArrX<double> t = render::sample_ray(1.0, 2.0, 4, false, rng);
  REQUIRE(t.size() == 4);
  CHECK(t[0] == doctest::Approx(1.125).epsilon(1e-15));
  CHECK(t[1] == doctest::Approx(1.375).epsilon(1e-15));
  CHECK(t[2] == doctest::Approx(1.625).epsilon(1e-15));
  CHECK(t[3] == doctest::Approx(1.875).epsilon(1e-15));
}

TEST_CASE("stratified sampling with jitter is reproducible and in range") {
  Rng a(42), b(42);
  const ArrX<double> ta = render::sample_ray(0.3, 5.0, 16, true, a);
  const ArrX<double> tb = render::sample_ray(0.3, 5.0, 16, true, b);
  CHECK((ta == tb).all());
  Rng sweep(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const double tn = 0.01 + sweep.uniform() * 2.0;
    const double tf = tn + 0.1 + sweep.uniform() * 5.0;
    const int n = 2 + int(sweep.uniform_int(30));
    Rng jr = sweep.fork(11, uint64_t(trial));
    const ArrX<double> t = render::sample_ray(tn, tf, n, true, jr);
    CHECK(t.minCoeff() >= tn);
    CHECK(t.maxCoeff() <= tf);
    for (int i = 1; i < n; ++i) CHECK(t[i] > t[i - 1]);
  }
  CHECK_THROWS_AS(render::sample_ray(1.0, 2.0, 1, false, a),
                  std::invalid_argument);
}

TEST_CASE("transparent ray composites to background") {
  render::RaySampleBatch<double> b;
  b.t_near = 1.0;
  b.t_far = 2.0;
  b.t = ArrX<double>::LinSpaced(8, 1.0, 1.9);
  b.sigma = ArrX<double>::Zero(8);
  b.color = MatX<double>::Constant(3, 8, 0.3);
  const Vec3<double> bg(0.9, 0.5, 0.1);
  const auto res = render::composite(b, bg);
  CHECK(res.weight_sum == 0.0);
  CHECK(res.C == bg);
  CHECK(res.D == b.t_far);  // empty-space depth guard
}

TEST_CASE("two-sample hand-computed compositing") {
  // alpha_1 = alpha_2 = 0.5 gives w = (0.5, 0.25).
  render::RaySampleBatch<double> b;
  b.t_near = 1.0;
  b.t_far = 3.0;
  b.t.resize(2);
  b.t << 1.0, 2.0;
  const double sigma = -std::log(0.5);  // alpha = 1 - exp(-sigma * 1) = 0.5
  b.sigma = ArrX<double>::Constant(2, sigma);
  b.color.resize(3, 2);
  b.color.col(0) = Vec3<double>(1.0, 0.0, 0.2);
  b.color.col(1) = Vec3<double>(0.0, 1.0, 0.4);
  const Vec3<double> bg(1.0, 1.0, 1.0);
  const auto res = render::composite(b, bg);
  CHECK(res.weight_sum == doctest::Approx(0.75).epsilon(1e-12));
  const Vec3<double> expect =
      0.5 * b.color.col(0) + 0.25 * b.color.col(1) + 0.25 * bg;
  CHECK((res.C - expect).norm() < 1e-12);
  CHECK(res.D == doctest::Approx((0.5 * 1.0 + 0.25 * 2.0) / 0.75).epsilon(1e-12));
}

TEST_CASE("opaque sample absorbs the ray") {
  render::RaySampleBatch<double> b;
  b.t_near = 1.0;
  b.t_far = 2.0;
  b.t = ArrX<double>::Constant(1, 1.0);
  b.sigma = ArrX<double>::Constant(1, 20.0);  // sigma * delta = 20
  b.color = MatX<double>::Constant(3, 1, 0.7);
  const auto res = render::composite(b, Vec3<double>(0, 0, 0));
  CHECK(res.weight_sum == doctest::Approx(1.0).epsilon(1e-8));
  CHECK((res.C - Vec3<double>::Constant(0.7 * res.weight_sum)).norm() < 1e-12);
  CHECK(res.D == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("compositing matches the independent oracle bit for bit") {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + int(rng.uniform_int(40));
    auto b = random_batch(rng, n);
    const Vec3<double> bg(rng.uniform(), rng.uniform(), rng.uniform());
    const auto res = render::composite(b, bg);
    const auto oracle = oracle_composite(b, bg);
    CHECK(res.C[0] == oracle.C[0]);
    CHECK(res.C[1] == oracle.C[1]);
    CHECK(res.C[2] == oracle.C[2]);
    CHECK(res.D == oracle.D);
    CHECK(res.weight_sum == oracle.weight_sum);
    CHECK((b.weight == oracle.weight).all());
    CHECK((b.trans == oracle.trans).all());
  }
}

TEST_CASE("transmittance equals the analytic exponential for binned density") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + int(rng.uniform_int(30));
    auto b = random_batch(rng, n);
    render::composite(b, Vec3<double>(0, 0, 0));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      CHECK(b.trans[i] == doctest::Approx(std::exp(-acc)).epsilon(1e-12));
      acc += b.sigma[i] * b.delta[i];
    }
  }
}

TEST_CASE("ray batch invariants hold on random inputs") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    auto b = random_batch(rng, 2 + int(rng.uniform_int(30)));
    const auto res = render::composite(b, Vec3<double>(1, 1, 1));
    CHECK(res.weight_sum <= 1.0 + 1e-12);
    CHECK(b.trans[0] == 1.0);
    for (int i = 0; i < b.t.size(); ++i) {
      CHECK(b.alpha[i] >= 0.0);
      CHECK(b.alpha[i] < 1.0);
      CHECK(b.trans[i] > 0.0);
      CHECK(b.trans[i] <= 1.0);
      if (i > 0) CHECK(b.trans[i] <= b.trans[i - 1]);
      CHECK(b.weight[i] == b.trans[i] * b.alpha[i]);
    }
    // C is a convex combination of sample colors and background.
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < b.t.size(); ++i) {
      lo = std::min(lo, b.color.row(0).minCoeff());
      hi = std::max(hi, b.color.row(0).maxCoeff());
    }
    lo = std::min(lo, 1.0);
    hi = std::max(hi, 1.0);
    CHECK(res.C[0] >= lo - 1e-12);
    CHECK(res.C[0] <= hi + 1e-12);
  }
}

TEST_CASE("compositing gradients match finite differences") {
  Rng rng(31);
  const Vec3<double> bg(0.8, 0.7, 0.6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + int(rng.uniform_int(10));
    auto b = random_batch(rng, n);
    auto res = render::composite(b, bg);

    // Scalar functional: L = u . C + v * D with random coefficients.
    const Vec3<double> u(rng.uniform() - 0.5, rng.uniform() - 0.5,
                         rng.uniform() - 0.5);
    const double v = rng.uniform() - 0.5;
    const auto g = render::composite_backward(b, res, bg, u, v);

    auto eval = [&](render::RaySampleBatch<double> copy) {
      const auto r = render::composite(copy, bg);
      return u.dot(r.C) + v * r.D;
    };
    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
      auto f = [&](double s) {
        auto copy = b;
        copy.sigma[i] = s;
        return eval(copy);
      };
      const double fd = testutil::central_diff(f, b.sigma[i], h);
      CHECK(testutil::rel_err(g.dsigma[i], fd) < 1e-4);
      for (int c = 0; c < 3; ++c) {
        auto fc = [&](double val) {
          auto copy = b;
          copy.color(c, i) = val;
          return eval(copy);
        };
        const double fd_c = testutil::central_diff(fc, b.color(c, i), h);
        CHECK(testutil::rel_err(g.dcolor(c, i), fd_c) < 1e-4);
      }
    }
  }
}

TEST_CASE("direct per-sample weight gradients match finite differences") {
  Rng rng(33);
  const Vec3<double> bg(1.0, 1.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + int(rng.uniform_int(8));
    auto b = random_batch(rng, n);
    auto res = render::composite(b, bg);
    ArrX<double> dw(n);
    for (int i = 0; i < n; ++i) dw[i] = rng.uniform() - 0.5;
    const auto g = render::composite_backward(b, res, bg,
                                              Vec3<double>(0, 0, 0), 0.0, &dw);
    auto eval = [&](render::RaySampleBatch<double> copy) {
      render::composite(copy, bg);
      return double((copy.weight * dw).sum());
    };
    for (int i = 0; i < n; ++i) {
      auto f = [&](double s) {
        auto copy = b;
        copy.sigma[i] = s;
        return eval(copy);
      };
      const double fd = testutil::central_diff(f, b.sigma[i], 1e-6);
      CHECK(testutil::rel_err(g.dsigma[i], fd) < 1e-4);
    }
  }
}

TEST_CASE("patch render equals independent per-pixel renders") {
  auto cfg = testutil::tiny_field_config();
  fields::RadianceField<double> field(cfg, Aabb<double>{}, Rng(5));
  CameraPose<double> cam;
  cam.width = 16;
  cam.height = 16;
  cam.fx = cam.fy = 12.0;
  cam.cx = 8.0;
  cam.cy = 8.0;
  cam.near = 0.4;
  cam.far = 3.0;
  const Rng patch_rng(77);
  const auto pr = render::render_patch(field, cam, 3, 5, 6, 12, 1.0, true,
                                       patch_rng);
  for (int py = 0; py < 6; ++py)
    for (int px = 0; px < 6; ++px) {
      const int x = 3 + px, y = 5 + py;
      const auto res = render::render_pixel(
          field, cam, x, y, 12, true,
          patch_rng.fork(render::pixel_stream_key<double>(x, y)));
      const auto& got = pr.results[size_t(py) * 6 + px];
      CHECK(got.C == res.C);
      CHECK(got.D == res.D);
    }
}

TEST_CASE("transparent field renders background color and far-plane depth") {
  auto cfg = testutil::tiny_field_config();
  fields::RadianceField<double> field(cfg, Aabb<double>{}, Rng(5));
  // Push the raw density bias far down: sigma ~ 0 everywhere.
  field.density_net().b.back()[0] = -40.0;
  CameraPose<double> cam;
  cam.width = 8;
  cam.height = 8;
  cam.fx = cam.fy = 6.0;
  cam.cx = cam.cy = 4.0;
  cam.near = 0.5;
  cam.far = 2.0;
  const auto pr =
      render::render_patch(field, cam, 0, 0, 8, 8, 1.0, false, Rng(1));
  const double far_code = ddm::encode_depth(2.0, 1.0);
  for (int py = 0; py < 8; ++py)
    for (int px = 0; px < 8; ++px) {
      const Vec3<double> c = pr.patch.rgb01(py, px);
      CHECK((c - field.background()).norm() < 1e-9);
      CHECK(pr.patch.values.at(3, py, px) == doctest::Approx(far_code));
    }
}

TEST_CASE("patch gradients reach field parameters via finite differences") {
  auto cfg = testutil::tiny_field_config();
  fields::RadianceField<double> field(cfg, Aabb<double>{}, Rng(6));
  testutil::jitter_params(field.param_views(), Rng(23));
  CameraPose<double> cam;
  cam.width = 8;
  cam.height = 8;
  cam.fx = cam.fy = 6.0;
  cam.cx = cam.cy = 4.0;
  cam.near = 0.4;
  cam.far = 2.5;
  const int P = 4, spr = 6;
  const double scale = 1.0;
  const Rng prng(3);

  // Loss: dot product of the patch values with fixed random coefficients.
  Tensor3<double> coef(4, P, P);
  Rng crng(9);
  for (auto& v : coef.data) v = crng.uniform() - 0.5;
  auto loss = [&]() {
    const auto pr =
        render::render_patch(field, cam, 1, 2, P, spr, scale, false, prng);
    return double((pr.patch.values.data * coef.data).sum());
  };

  zero_grads(field.param_views());
  const auto pr =
      render::render_patch(field, cam, 1, 2, P, spr, scale, false, prng);
  render::patch_backward(field, pr, coef, scale);

  Rng pick(17);
  auto views = field.param_views();
  int checked = 0;
  for (const auto& view : views) {
    for (int rep = 0; rep < 4; ++rep) {
      const Eigen::Index i = Eigen::Index(pick.uniform_int(uint64_t(view.size)));
      const double h = 1e-5;
      const double orig = view.value[i];
      view.value[i] = orig + h;
      const double up = loss();
      view.value[i] = orig - h;
      const double dn = loss();
      view.value[i] = orig;
      const double fd = (up - dn) / (2 * h);
      if (std::abs(fd) < 1e-12 && std::abs(view.grad[i]) < 1e-12) continue;
      CAPTURE(view.grad[i]);
      CAPTURE(fd);
      CHECK(testutil::rel_err(view.grad[i], fd) < 2e-3);
      ++checked;
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("doubling samples changes a smooth render only slightly") {
  auto cfg = testutil::tiny_field_config();
  fields::RadianceField<double> field(cfg, Aabb<double>{}, Rng(8));
  CameraPose<double> cam;
  cam.width = 8;
  cam.height = 8;
  cam.fx = cam.fy = 6.0;
  cam.cx = cam.cy = 4.0;
  cam.near = 0.4;
  cam.far = 3.0;
  Rng rng(0);
  const auto lo = render::render_pixel(field, cam, 4, 4, 64, false, rng);
  const auto hi = render::render_pixel(field, cam, 4, 4, 128, false, rng);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(lo.C[c] - hi.C[c]) < 1e-2);
}

TEST_CASE("degenerate camera intrinsics are rejected") {
  auto cfg = testutil::tiny_field_config();
  fields::RadianceField<double> field(cfg, Aabb<double>{}, Rng(5));
  CameraPose<double> cam;
  cam.width = 8;
  cam.height = 8;
  cam.fx = 0.0;
  CHECK_THROWS_AS(
      render::render_patch(field, cam, 0, 0, 4, 4, 1.0, false, Rng(1)),
      std::invalid_argument);
}
