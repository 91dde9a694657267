#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <flame/fusion.hpp>
#include <flame/gradcheck.hpp>

using namespace flame;

namespace {

Tensor4<double> random_tensor(Index n, Index h, Index w, Index c, Rng& rng) {
  Tensor4<double> t(n, h, w, c);
  for (Index i = 0; i < t.mat().size(); ++i) t.mat()(i) = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("mmtm joint dimension rule") {
  Rng rng(1);
  CHECK(Mmtm<double>("m", 256, 256, rng).z_dim() == 128);
  CHECK(Mmtm<double>("m", 32, 32, rng).z_dim() == 16);
  CHECK(Mmtm<double>("m", 5, 6, rng).z_dim() == 2);  // floor of 11/4
}

TEST_CASE("mmtm zero-initialized excitation is a bit-exact identity") {
  Rng rng(2);
  Mmtm<double> mmtm("m", 8, 8, rng);
  mmtm.zero_excitation();
  auto r = random_tensor(3, 4, 5, 8, rng);
  auto h = random_tensor(3, 4, 5, 8, rng);
  auto [r2, h2] = mmtm.forward(r, h);
  CHECK(r2.mat() == r.mat());
  CHECK(h2.mat() == h.mat());
}

TEST_CASE("mmtm gains lie strictly in (0, 2) and shapes are preserved") {
  Rng rng(3);
  Mmtm<double> mmtm("m", 6, 10, rng);
  auto r = random_tensor(2, 3, 3, 6, rng);
  auto h = random_tensor(2, 3, 3, 10, rng);
  auto [r2, h2] = mmtm.forward(r, h);
  CHECK(r2.same_shape(r));
  CHECK(h2.same_shape(h));

  // Recover per-channel gains from a nonzero entry of each channel.
  for (Index n = 0; n < 2; ++n) {
    for (Index c = 0; c < 6; ++c) {
      const Index row = n * 9 + 4;
      if (r(n, 1, 1, c) != 0.0) {
        const double gain = r2.mat()(row, c) / r.mat()(row, c);
        CHECK(gain > 0.0);
        CHECK(gain < 2.0);
      }
    }
  }
}

TEST_CASE("mmtm rejects mismatched inputs") {
  Rng rng(4);
  Mmtm<double> mmtm("m", 4, 4, rng);
  auto r = random_tensor(2, 3, 3, 4, rng);
  auto h_badc = random_tensor(2, 3, 3, 6, rng);
  auto h_badn = random_tensor(3, 3, 3, 4, rng);
  CHECK_THROWS_AS(mmtm.forward(r, h_badc), std::invalid_argument);
  CHECK_THROWS_AS(mmtm.forward(r, h_badn), std::invalid_argument);
}

TEST_CASE("gradient: mmtm") {
  Rng rng(5);
  Mmtm<double> mmtm("m", 5, 7, rng);
  auto r = random_tensor(2, 3, 4, 5, rng);
  auto h = random_tensor(2, 3, 4, 7, rng);

  Rng prng(6);
  auto [pr, ph] = mmtm.forward(r, h);
  MatX<double> rr(pr.mat().rows(), pr.mat().cols());
  MatX<double> rh(ph.mat().rows(), ph.mat().cols());
  for (Index i = 0; i < rr.size(); ++i) rr(i) = prng.uniform(-1.0, 1.0);
  for (Index i = 0; i < rh.size(); ++i) rh(i) = prng.uniform(-1.0, 1.0);

  ParamRefs<double> params;
  mmtm.collect_params(params);
  Tensor4<double> gr_store(2, 3, 4, 5), gh_store(2, 3, 4, 7);

  std::vector<GradCheckArray> arrays;
  collect_arrays(params, arrays);
  arrays.push_back({"r", r.mat().data(), gr_store.mat().data(), r.mat().size()});
  arrays.push_back({"h", h.mat().data(), gh_store.mat().data(), h.mat().size()});

  auto forward = [&]() {
    auto [a, b] = mmtm.forward(r, h);
    return (a.mat().array() * rr.array()).sum() + (b.mat().array() * rh.array()).sum();
  };
  auto backward = [&]() {
    for (auto* p : params) p->zero_grad();
    mmtm.forward(r, h);
    auto [ga, gb] = mmtm.backward(Tensor4<double>::from_matrix(2, 3, 4, rr),
                                  Tensor4<double>::from_matrix(2, 3, 4, rh));
    gr_store.mat() = ga.mat();
    gh_store.mat() = gb.mat();
  };
  const auto rep = finite_difference_check(arrays, forward, backward, 77);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("concat-residual aggregation") {
  Rng rng(7);
  SUBCASE("zero inputs and zero block give zero output") {
    ConcatResidualAggregation<double> agg("a", 4, 4, 6, rng);
    agg.block().conv1().kernel().value.setZero();
    agg.block().conv1().bias().value.setZero();
    agg.block().conv2().kernel().value.setZero();
    agg.block().conv2().bias().value.setZero();
    agg.block().proj()->kernel().value.setZero();
    agg.block().proj()->bias().value.setZero();
    Tensor4<double> r(2, 3, 3, 4), h(2, 3, 3, 4);
    auto y = agg.forward(r, h, Mode::kTrain);
    CHECK(y.mat().cwiseAbs().maxCoeff() == 0.0);
    CHECK(y.channels() == 6);
  }

  SUBCASE("concat order: RGB channels first") {
    // Use an identity-ish setup: inspect the concat through the block's
    // projection-free view by checking the gradient split instead.
    ConcatResidualAggregation<double> agg("a", 3, 5, 4, rng);
    auto r = random_tensor(2, 3, 3, 3, rng);
    auto h = random_tensor(2, 3, 3, 5, rng);
    auto y = agg.forward(r, h, Mode::kTrain);
    CHECK(y.channels() == 4);
    auto [gr, gh] = agg.backward(y);
    CHECK(gr.channels() == 3);
    CHECK(gh.channels() == 5);
  }

  SUBCASE("output depends on both inputs") {
    ConcatResidualAggregation<double> agg("a", 3, 3, 3, rng);
    auto r = random_tensor(2, 4, 4, 3, rng);
    auto h = random_tensor(2, 4, 4, 3, rng);
    auto y0 = agg.forward(r, h, Mode::kEval);
    Tensor4<double> r2 = r;
    r2(0, 1, 1, 1) += 0.5;
    auto y1 = agg.forward(r2, h, Mode::kEval);
    CHECK((y1.mat() - y0.mat()).cwiseAbs().maxCoeff() > 0.0);
    Tensor4<double> h2 = h;
    h2(1, 2, 2, 0) += 0.5;
    auto y2 = agg.forward(r, h2, Mode::kEval);
    CHECK((y2.mat() - y0.mat()).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("gradient: aggregation block") {
  Rng rng(8);
  ConcatResidualAggregation<double> agg("a", 3, 4, 5, rng);
  auto r = random_tensor(2, 3, 3, 3, rng);
  auto h = random_tensor(2, 3, 3, 4, rng);

  Rng prng(9);
  auto probe = agg.forward(r, h, Mode::kTrain);
  MatX<double> proj(probe.mat().rows(), probe.mat().cols());
  for (Index i = 0; i < proj.size(); ++i) proj(i) = prng.uniform(-1.0, 1.0);

  ParamRefs<double> params;
  agg.collect_params(params);
  Tensor4<double> gr_store(2, 3, 3, 3), gh_store(2, 3, 3, 4);

  std::vector<GradCheckArray> arrays;
  collect_arrays(params, arrays);
  arrays.push_back({"r", r.mat().data(), gr_store.mat().data(), r.mat().size()});
  arrays.push_back({"h", h.mat().data(), gh_store.mat().data(), h.mat().size()});

  auto forward = [&]() {
    return (agg.forward(r, h, Mode::kTrain).mat().array() * proj.array()).sum();
  };
  auto backward = [&]() {
    for (auto* p : params) p->zero_grad();
    agg.forward(r, h, Mode::kTrain);
    auto [ga, gb] = agg.backward(
        Tensor4<double>::from_matrix(probe.batch(), probe.height(), probe.width(), proj));
    gr_store.mat() = ga.mat();
    gh_store.mat() = gb.mat();
  };
  CHECK(finite_difference_check(arrays, forward, backward, 88).max_rel_error < 1e-4);
}

TEST_CASE("additive aggregation") {
  Rng rng(10);
  auto r = random_tensor(2, 3, 3, 4, rng);
  auto h = random_tensor(2, 3, 3, 4, rng);
  Tensor4<double> zero(2, 3, 3, 4);

  CHECK(aggregate_additive(r, zero).mat() == r.mat());

  Tensor4<double> neg = r;
  neg.mat() = -neg.mat();
  CHECK(aggregate_additive(r, neg).mat().cwiseAbs().maxCoeff() == 0.0);

  CHECK(aggregate_additive(r, h).mat() == aggregate_additive(h, r).mat());

  auto bad = random_tensor(2, 3, 3, 5, rng);
  CHECK_THROWS_AS(aggregate_additive(r, bad), std::invalid_argument);
}
