#pragma once

#include "flame/gradcheck.hpp"
#include "flame/model.hpp"

namespace flame {

struct GradSuiteItem {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return max_rel_error < tolerance; }
};

namespace gradsuite_detail {

inline Tensor4<double> rand_tensor(Index n, Index h, Index w, Index c, Rng& rng) {
  Tensor4<double> t(n, h, w, c);
  for (Index i = 0; i < t.mat().size(); ++i) t.mat()(i) = rng.uniform(-1.0, 1.0);
  return t;
}

inline MatX<double> rand_mat(Index r, Index c, Rng& rng) {
  MatX<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-1.0, 1.0);
  return m;
}

// Generic check of a Tensor4 -> Tensor4 layer under a fixed projection loss.
template <typename Fwd, typename Bwd>
double check_t4(Tensor4<double>& x, ParamRefs<double> params, Fwd fwd, Bwd bwd,
                std::uint64_t seed, int coords) {
  Rng rng(seed);
  Tensor4<double> probe = fwd(x);
  MatX<double> r = rand_mat(probe.mat().rows(), probe.mat().cols(), rng);
  Tensor4<double> gin(x.batch(), x.height(), x.width(), x.channels());

  std::vector<GradCheckArray> arrays;
  collect_arrays(params, arrays);
  arrays.push_back({"input", x.mat().data(), gin.mat().data(), x.mat().size()});

  auto forward = [&]() { return (fwd(x).mat().array() * r.array()).sum(); };
  auto backward = [&]() {
    for (auto* p : params) p->zero_grad();
    fwd(x);
    gin.mat() =
        bwd(Tensor4<double>::from_matrix(probe.batch(), probe.height(), probe.width(), r))
            .mat();
  };
  return finite_difference_check(arrays, forward, backward, seed, coords).max_rel_error;
}

}  // namespace gradsuite_detail

// Central-difference verification of every differentiable primitive, the
// composite blocks, and the full FLAME-tiny graph with the vector loss.
// 64-bit throughout.
inline std::vector<GradSuiteItem> run_gradient_suite(std::uint64_t seed = 1234,
                                                     int coords = 12) {
  using namespace gradsuite_detail;
  std::vector<GradSuiteItem> items;
  Rng init(splitmix64(seed));

  auto push = [&](const std::string& name, double err, double tol) {
    items.push_back({name, err, tol});
  };

  {  // dense
    Dense<double> dense("dense", 7, 5, init);
    Rng rng(seed + 1);
    MatX<double> x = rand_mat(3, 7, rng);
    MatX<double> r = rand_mat(3, 5, rng);
    MatX<double> gin(3, 7);
    ParamRefs<double> params;
    dense.collect_params(params);
    std::vector<GradCheckArray> arrays;
    collect_arrays(params, arrays);
    arrays.push_back({"input", x.data(), gin.data(), x.size()});
    auto fwd = [&]() { return (dense.forward(x).array() * r.array()).sum(); };
    auto bwd = [&]() {
      for (auto* p : params) p->zero_grad();
      dense.forward(x);
      gin = dense.backward(r);
    };
    push("dense", finite_difference_check(arrays, fwd, bwd, seed + 1, coords).max_rel_error,
         1e-6);
  }

  {  // conv2d 3x3 pad 1
    Conv2d<double> conv("conv3", 3, 4, 3, 1, 1, init);
    Rng rng(seed + 2);
    auto x = rand_tensor(2, 5, 5, 3, rng);
    ParamRefs<double> params;
    conv.collect_params(params);
    push("conv2d_3x3",
         check_t4(
             x, params, [&](Tensor4<double>& t) { return conv.forward(t); },
             [&](const Tensor4<double>& g) { return conv.backward(g); }, seed + 2, coords),
         1e-5);
  }

  {  // conv2d 3x3 stride 2
    Conv2d<double> conv("conv_s2", 2, 3, 3, 2, 1, init);
    Rng rng(seed + 3);
    auto x = rand_tensor(2, 7, 6, 2, rng);
    ParamRefs<double> params;
    conv.collect_params(params);
    push("conv2d_stride2",
         check_t4(
             x, params, [&](Tensor4<double>& t) { return conv.forward(t); },
             [&](const Tensor4<double>& g) { return conv.backward(g); }, seed + 3, coords),
         1e-5);
  }

  {  // conv2d 1x1 projection
    Conv2d<double> conv("conv1", 5, 3, 1, 1, 0, init);
    Rng rng(seed + 4);
    auto x = rand_tensor(2, 4, 4, 5, rng);
    ParamRefs<double> params;
    conv.collect_params(params);
    push("conv2d_1x1",
         check_t4(
             x, params, [&](Tensor4<double>& t) { return conv.forward(t); },
             [&](const Tensor4<double>& g) { return conv.backward(g); }, seed + 4, coords),
         1e-5);
  }

  {  // batch norm, train mode
    BatchNorm2d<double> bn("bn", 3);
    Rng rng(seed + 5);
    for (Index c = 0; c < 3; ++c) {
      bn.gamma().value(0, c) = rng.uniform(0.5, 1.5);
      bn.beta().value(0, c) = rng.uniform(-0.5, 0.5);
    }
    auto x = rand_tensor(2, 4, 4, 3, rng);
    ParamRefs<double> params;
    bn.collect_params(params);
    push("batch_norm_train",
         check_t4(
             x, params, [&](Tensor4<double>& t) { return bn.forward(t, Mode::kTrain); },
             [&](const Tensor4<double>& g) { return bn.backward(g); }, seed + 5, coords),
         1e-4);
  }

  {  // relu
    Relu<double> relu;
    Rng rng(seed + 6);
    auto x = rand_tensor(2, 4, 4, 3, rng);
    push("relu",
         check_t4(
             x, {}, [&](Tensor4<double>& t) { return relu.forward(t); },
             [&](const Tensor4<double>& g) { return relu.backward(g); }, seed + 6, coords),
         1e-4);
  }

  {  // sigmoid (checked through its analytic derivative)
    Rng rng(seed + 7);
    MatX<double> x = rand_mat(3, 6, rng);
    MatX<double> r = rand_mat(3, 6, rng);
    MatX<double> gin(3, 6);
    std::vector<GradCheckArray> arrays{{"input", x.data(), gin.data(), x.size()}};
    auto fwd = [&]() { return (sigmoid(x).array() * r.array()).sum(); };
    auto bwd = [&]() {
      const MatX<double> s = sigmoid(x);
      gin = (r.array() * s.array() * (1.0 - s.array())).matrix();
    };
    push("sigmoid", finite_difference_check(arrays, fwd, bwd, seed + 7, coords).max_rel_error,
         1e-6);
  }

  {  // max pool
    MaxPool2x2<double> pool;
    Rng rng(seed + 8);
    auto x = rand_tensor(2, 6, 6, 3, rng);
    push("max_pool_2x2",
         check_t4(
             x, {}, [&](Tensor4<double>& t) { return pool.forward(t); },
             [&](const Tensor4<double>& g) { return pool.backward(g); }, seed + 8, coords),
         1e-4);
  }

  {  // dropout with a frozen mask
    Dropout<double> drop(0.2, 99);
    Rng rng(seed + 9);
    MatX<double> x = rand_mat(3, 8, rng);
    MatX<double> r = rand_mat(3, 8, rng);
    MatX<double> gin(3, 8);
    std::vector<GradCheckArray> arrays{{"input", x.data(), gin.data(), x.size()}};
    auto fwd = [&]() {
      drop.reseed(4242);
      return (drop.forward(x, Mode::kTrain).array() * r.array()).sum();
    };
    auto bwd = [&]() {
      drop.reseed(4242);
      drop.forward(x, Mode::kTrain);
      gin = drop.backward(r);
    };
    push("dropout_train",
         finite_difference_check(arrays, fwd, bwd, seed + 9, coords).max_rel_error, 1e-6);
  }

  {  // global average pooling
    GlobalAvgPool<double> gap;
    Rng rng(seed + 10);
    auto x = rand_tensor(2, 4, 5, 3, rng);
    MatX<double> r = rand_mat(2, 3, rng);
    Tensor4<double> gin(2, 4, 5, 3);
    std::vector<GradCheckArray> arrays{
        {"input", x.mat().data(), gin.mat().data(), x.mat().size()}};
    auto fwd = [&]() { return (gap.forward(x).array() * r.array()).sum(); };
    auto bwd = [&]() {
      gap.forward(x);
      gin.mat() = gap.backward(r).mat();
    };
    push("global_average_pool",
         finite_difference_check(arrays, fwd, bwd, seed + 10, coords).max_rel_error, 1e-6);
  }

  {  // residual blocks
    ResidualBlock<double> beq("rb_eq", 3, 3, init);
    Rng rng(seed + 11);
    auto x = rand_tensor(2, 5, 5, 3, rng);
    ParamRefs<double> params;
    beq.collect_params(params);
    push("residual_block",
         check_t4(
             x, params, [&](Tensor4<double>& t) { return beq.forward(t, Mode::kTrain); },
             [&](const Tensor4<double>& g) { return beq.backward(g); }, seed + 11, coords),
         1e-4);

    ResidualBlock<double> bpr("rb_proj", 2, 5, init);
    auto x2 = rand_tensor(2, 4, 4, 2, rng);
    ParamRefs<double> params2;
    bpr.collect_params(params2);
    push("residual_block_projection",
         check_t4(
             x2, params2, [&](Tensor4<double>& t) { return bpr.forward(t, Mode::kTrain); },
             [&](const Tensor4<double>& g) { return bpr.backward(g); }, seed + 12, coords),
         1e-4);
  }

  // MMTMs at the channel widths where the tiny transfer function places
  // them, plus the aggregation block.
  for (const auto& [name, c, sd] :
       {std::tuple<const char*, Index, std::uint64_t>{"mmtm_stage2", 16, 13},
        std::tuple<const char*, Index, std::uint64_t>{"mmtm_stage3", 32, 14}}) {
    Mmtm<double> mmtm(name, c, c, init);
    Rng rng(seed + sd);
    auto r_in = rand_tensor(2, 3, 3, c, rng);
    auto h_in = rand_tensor(2, 3, 3, c, rng);
    auto probe = mmtm.forward(r_in, h_in);
    MatX<double> pr = rand_mat(probe.first.mat().rows(), c, rng);
    MatX<double> ph = rand_mat(probe.second.mat().rows(), c, rng);
    Tensor4<double> gr(2, 3, 3, c), gh(2, 3, 3, c);
    ParamRefs<double> params;
    mmtm.collect_params(params);
    std::vector<GradCheckArray> arrays;
    collect_arrays(params, arrays);
    arrays.push_back({"r", r_in.mat().data(), gr.mat().data(), r_in.mat().size()});
    arrays.push_back({"h", h_in.mat().data(), gh.mat().data(), h_in.mat().size()});
    auto fwd = [&]() {
      auto [a, b] = mmtm.forward(r_in, h_in);
      return (a.mat().array() * pr.array()).sum() + (b.mat().array() * ph.array()).sum();
    };
    auto bwd = [&]() {
      for (auto* p : params) p->zero_grad();
      mmtm.forward(r_in, h_in);
      auto [ga, gb] = mmtm.backward(Tensor4<double>::from_matrix(2, 3, 3, pr),
                                    Tensor4<double>::from_matrix(2, 3, 3, ph));
      gr.mat() = ga.mat();
      gh.mat() = gb.mat();
    };
    push(name, finite_difference_check(arrays, fwd, bwd, seed + sd, coords).max_rel_error,
         1e-4);
  }

  {  // aggregation block
    ConcatResidualAggregation<double> agg("agg", 4, 4, 4, init);
    Rng rng(seed + 15);
    auto r_in = rand_tensor(2, 3, 3, 4, rng);
    auto h_in = rand_tensor(2, 3, 3, 4, rng);
    auto probe = agg.forward(r_in, h_in, Mode::kTrain);
    MatX<double> pr = rand_mat(probe.mat().rows(), probe.mat().cols(), rng);
    Tensor4<double> gr(2, 3, 3, 4), gh(2, 3, 3, 4);
    ParamRefs<double> params;
    agg.collect_params(params);
    std::vector<GradCheckArray> arrays;
    collect_arrays(params, arrays);
    arrays.push_back({"r", r_in.mat().data(), gr.mat().data(), r_in.mat().size()});
    arrays.push_back({"h", h_in.mat().data(), gh.mat().data(), h_in.mat().size()});
    auto fwd = [&]() {
      return (agg.forward(r_in, h_in, Mode::kTrain).mat().array() * pr.array()).sum();
    };
    auto bwd = [&]() {
      for (auto* p : params) p->zero_grad();
      agg.forward(r_in, h_in, Mode::kTrain);
      auto [ga, gb] = agg.backward(
          Tensor4<double>::from_matrix(probe.batch(), probe.height(), probe.width(), pr));
      gr.mat() = ga.mat();
      gh.mat() = gb.mat();
    };
    push("aggregation_block",
         finite_difference_check(arrays, fwd, bwd, seed + 15, coords).max_rel_error, 1e-4);
  }

  {  // dense-fusion coordinate branch
    CoordBranch<double> branch("coord", {12, 8, 6}, init);
    Rng rng(seed + 16);
    MatX<double> coords_in = rand_mat(2, 56, rng);
    MatX<double> r = rand_mat(2, 6, rng);
    MatX<double> gin(2, 56);
    ParamRefs<double> params;
    branch.collect_params(params);
    std::vector<GradCheckArray> arrays;
    collect_arrays(params, arrays);
    arrays.push_back({"coords", coords_in.data(), gin.data(), coords_in.size()});
    auto fwd = [&]() {
      return (branch.forward(coords_in, Mode::kTrain).array() * r.array()).sum();
    };
    auto bwd = [&]() {
      for (auto* p : params) p->zero_grad();
      branch.forward(coords_in, Mode::kTrain);
      gin = branch.backward(r);
    };
    push("dense_fusion_branch",
         finite_difference_check(arrays, fwd, bwd, seed + 16, coords).max_rel_error, 1e-4);
  }

  {  // full FLAME-tiny forward + vector-difference loss
    ModelSpec spec = ModelSpec::make(Variant::kFlame, 30, Preset::kTiny);
    FlameNet<double> net(spec, seed + 17);
    Rng rng(seed + 18);
    Batch<double> batch;
    batch.rgb = rand_tensor(2, 30, 30, 3, rng);
    batch.hm = rand_tensor(2, 30, 30, 28, rng);
    batch.pose = rand_mat(2, 2, rng) * 0.2;
    MatX<double> tgt(2, 3);
    for (Index i = 0; i < 2; ++i) {
      tgt.row(i) =
          angles_to_vector({rng.uniform(-0.4, 0.4), rng.uniform(-0.5, 0.5)}).transpose();
    }
    ParamRefs<double> params;
    net.collect_params(params);
    Tensor4<double> g_rgb(2, 30, 30, 3), g_hm(2, 30, 30, 28);
    MatX<double> g_pose(2, 2);
    std::vector<GradCheckArray> arrays;
    collect_arrays(params, arrays);
    arrays.push_back(
        {"input.rgb", batch.rgb.mat().data(), g_rgb.mat().data(), batch.rgb.mat().size()});
    arrays.push_back(
        {"input.hm", batch.hm.mat().data(), g_hm.mat().data(), batch.hm.mat().size()});
    arrays.push_back({"input.pose", batch.pose.data(), g_pose.data(), batch.pose.size()});
    auto fwd = [&]() {
      net.reseed_dropout(999);
      return vector_loss_batch<double>(net.forward(batch, Mode::kTrain), tgt);
    };
    auto bwd = [&]() {
      net.zero_grad();
      net.reseed_dropout(999);
      MatX<double> g_angles;
      vector_loss_batch<double>(net.forward(batch, Mode::kTrain), tgt, &g_angles);
      auto grads = net.backward(g_angles);
      g_rgb.mat() = grads.rgb.mat();
      g_hm.mat() = grads.hm.mat();
      g_pose = grads.pose;
    };
    push("flame_tiny_full_loss",
         finite_difference_check(arrays, fwd, bwd, seed + 18, 4).max_rel_error, 1e-4);
  }

  return items;
}

}  // namespace flame
