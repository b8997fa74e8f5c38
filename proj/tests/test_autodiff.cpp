#include <memory>

#include "doctest.h"

#include "d2h/gradcheck.hpp"
#include "test_util.hpp"

using namespace d2h;

namespace {

TensorD weights_like(Rng& rng, const TensorD& t) {
  TensorD w(t.n, t.c, t.h, t.w);
  for (auto& v : w.data) v = rng.uniform(0.5, 1.5);
  return w;
}

// Wraps an op into a scalar graph via a fixed random projection.
template <typename OpFn>
auto projected(OpFn op, Rng& rng) {
  auto shared = std::make_shared<Rng>(rng);
  return [op, shared](TapeD& t, const std::vector<TapeD::Id>& ids) {
    TapeD::Id y = op(t, ids);
    Rng local = *shared;
    return t.weighted_sum(y, weights_like(local, t.value(y)));
  };
}

}  // namespace

TEST_CASE("gradient_check conv2d") {
  Rng rng(101);
  std::vector<TensorD> inputs = {
      random_tensor(rng, 1, 2, 6, 6),
      random_tensor(rng, 3, 2, 3, 3),
      random_tensor(rng, 1, 3, 1, 1),
  };
  auto rep = gradient_check(
      projected([](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.conv2d(ids[0], ids[1], ids[2], {1, 1, 1});
      }, rng),
      inputs);
  CHECK(rep.worst < 1e-4);
}

TEST_CASE("gradient_check strided conv2d") {
  Rng rng(103);
  std::vector<TensorD> inputs = {
      random_tensor(rng, 1, 2, 6, 6),
      random_tensor(rng, 2, 2, 3, 3),
      random_tensor(rng, 1, 2, 1, 1),
  };
  auto rep = gradient_check(
      projected([](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.conv2d(ids[0], ids[1], ids[2], {2, 1, 1});
      }, rng),
      inputs);
  CHECK(rep.worst < 1e-4);
}

TEST_CASE("gradient_check deform_conv2d including offsets and mask") {
  Rng rng(105);
  TensorD off(1, 18, 5, 5);
  // Sampled away from integer-offset kinks of the bilinear interpolation.
  for (auto& v : off.data) v = rng.uniform(0.15, 0.85) * (rng.uniform() < 0.5 ? -1 : 1);
  TensorD mask(1, 9, 5, 5);
  for (auto& v : mask.data) v = rng.uniform(0.2, 0.8);
  std::vector<TensorD> inputs = {
      random_tensor(rng, 1, 2, 5, 5),
      random_tensor(rng, 2, 2, 3, 3),
      random_tensor(rng, 1, 2, 1, 1),
      off,
      mask,
  };
  auto rep = gradient_check(
      projected([](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.deform_conv2d(ids[0], ids[1], ids[2], ids[3], ids[4]);
      }, rng),
      inputs);
  CHECK(rep.max_rel_err[0] < 1e-4);  // input
  CHECK(rep.max_rel_err[1] < 1e-4);  // weight
  CHECK(rep.max_rel_err[2] < 1e-4);  // bias
  CHECK(rep.max_rel_err[3] < 1e-3);  // offsets (piecewise-linear sampling)
  CHECK(rep.max_rel_err[4] < 1e-4);  // mask
}

TEST_CASE("gradient_check dwt2/idwt2") {
  Rng rng(107);
  std::vector<TensorD> in1 = {random_tensor(rng, 1, 2, 6, 6)};
  auto rep1 = gradient_check(
      projected([](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.dwt2(ids[0]);
      }, rng),
      in1);
  CHECK(rep1.worst < 1e-4);
  std::vector<TensorD> in2 = {random_tensor(rng, 1, 4, 3, 3)};
  auto rep2 = gradient_check(
      projected([](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.idwt2(ids[0]);
      }, rng),
      in2);
  CHECK(rep2.worst < 1e-4);
}

TEST_CASE("gradient_check bilinear_resize") {
  Rng rng(109);
  std::vector<TensorD> in = {random_tensor(rng, 1, 2, 4, 4)};
  auto rep = gradient_check(
      projected([](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.bilinear_resize(ids[0], 7, 9);
      }, rng),
      in);
  CHECK(rep.worst < 1e-4);
}

TEST_CASE("gradient_check activations, concat, slice, scale, add") {
  Rng rng(111);
  std::vector<TensorD> in = {random_tensor(rng, 1, 2, 3, 3),
                             random_tensor(rng, 1, 2, 3, 3)};
  // Shift inputs away from the leaky_relu kink at 0.
  for (auto& t : in)
    for (auto& v : t.data) v += (v >= 0 ? 0.1 : -0.1);
  auto rep = gradient_check(
      projected([](TapeD& t, const std::vector<TapeD::Id>& ids) {
        auto c = t.concat_channels({t.leaky_relu(ids[0], 0.2), t.sigmoid(ids[1])});
        auto s = t.slice_channels(c, 1, 3);
        return t.add(t.scale(s, 1.7), s);
      }, rng),
      in);
  CHECK(rep.worst < 1e-4);
}

TEST_CASE("gradient_check l1_loss away from zero-difference points") {
  Rng rng(113);
  TensorD pred = random_tensor(rng, 1, 2, 4, 4);
  TensorD target = random_tensor(rng, 1, 2, 4, 4);
  for (size_t i = 0; i < pred.size(); ++i)
    if (std::abs(pred.data[i] - target.data[i]) < 0.05)
      pred.data[i] += 0.1;  // keep away from the |.| kink
  auto rep = gradient_check(
      [&](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.l1_loss(ids[0], target);
      },
      {pred});
  CHECK(rep.worst < 1e-6);
}

TEST_CASE("gradient_check flags a kink when sitting on one") {
  // Within h of the |.| kink: the symmetric difference straddles it, so the
  // analytic sign disagrees with the finite difference and the second
  // difference blows up.
  TensorD pred = TensorD::full(1, 1, 1, 1, 1e-7);
  TensorD target(1, 1, 1, 1);
  auto rep = gradient_check(
      [&](TapeD& t, const std::vector<TapeD::Id>& ids) {
        return t.l1_loss(ids[0], target);
      },
      {pred});
  CHECK(rep.kink_suspected);
}

TEST_CASE("backward visits nodes once (diamond graph gradient)") {
  // y = x + x: dy/dx must be exactly 2.
  TapeD t;
  auto x = t.leaf(TensorD::full(1, 1, 1, 1, 1.5), true);
  auto y = t.add(x, x);
  auto s = t.weighted_sum(y, TensorD::full(1, 1, 1, 1, 1.0));
  t.backward(s);
  CHECK(t.grad(x).data[0] == doctest::Approx(2.0));
}
