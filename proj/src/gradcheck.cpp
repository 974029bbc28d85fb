#include "pmf/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "pmf/losses.hpp"
#include "pmf/network.hpp"
#include "pmf/rng.hpp"
#include "pmf/tensor.hpp"

namespace pmf::gradcheck {

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Max relative error between tape gradients and central finite differences
// of `forward` with respect to every element of `params`.
double fd_check(const std::function<Tensor()>& forward, std::vector<Tensor> params,
                double h = kFdStep) {
  Tape::current().clear();
  Tensor loss = forward();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
  }
  for (Tensor& p : params) p.zero_grad();

  double worst = 0.0;
  NoGradGuard guard;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = forward().value();
      data[i] = saved - h;
      const double down = forward().value();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[pi][i];
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

Tensor weighted_sum(const Tensor& x, const Tensor& weights) { return sum(mul(x, weights)); }

struct MiniPipeline {
  net::TSNet model;
  Tensor image;        // [1,3,8,8]
  Tensor lidar_input;  // [1,5,8,8]
  LabelImage labels;
  loss::LossConfig loss_cfg;

  explicit MiniPipeline(Rng& rng)
      : model(mini_config(), rng.next()),
        image(random_tensor(rng, {1, 3, 8, 8}, 0.0, 1.0, false)),
        lidar_input(random_tensor(rng, {1, 5, 8, 8}, -1.0, 1.0, false)),
        labels(8, 8) {
    const int s = model.config().num_classes;
    for (size_t i = 0; i < labels.ids.size(); ++i) {
      const int draw = rng.uniform_int(-1, s - 1);
      labels.ids[i] = draw < 0 ? kIgnoreLabel : draw;
    }
    loss_cfg.validate();
  }

  static net::NetworkConfig mini_config() {
    net::NetworkConfig cfg;
    cfg.num_classes = 3;
    cfg.camera_widths = {2, 3, 4};
    cfg.lidar_widths = {2, 3, 4};
    cfg.aspp_dilations = {1, 2};
    return cfg;
  }

  std::vector<Tensor> all_params() const {
    std::vector<Tensor> out;
    for (const auto& p : model.camera_parameters()) out.push_back(p.tensor);
    for (const auto& p : model.lidar_parameters()) out.push_back(p.tensor);
    return out;
  }

  Tensor camera_probs3() const {
    auto cam = model.camera_forward(image);
    const int s = model.config().num_classes;
    return reshape(cam.probs, {s, 8, 8});
  }

  Tensor lidar_probs3() const {
    auto cam = model.camera_forward(image);
    Tensor probs = model.lidar_forward(lidar_input, &cam.features, true);
    const int s = model.config().num_classes;
    return reshape(probs, {s, 8, 8});
  }
};

}  // namespace

std::vector<OpReport> run_all(uint64_t seed) {
  Rng rng(seed);
  std::vector<OpReport> reports;
  auto report = [&reports](const std::string& name, double err) {
    reports.push_back({name, err, err < kTolerance});
  };

  {
    Rng r = rng.fork(1);
    Tensor x = random_tensor(r, {2, 3, 6, 6});
    Tensor w = random_tensor(r, {4, 3, 3, 3});
    Tensor b = random_tensor(r, {4});
    Tensor probe_a = random_tensor(r, {2, 4, 3, 3}, -1, 1, false);
    Tensor probe_b = random_tensor(r, {2, 4, 2, 2}, -1, 1, false);
    const double e1 = fd_check(
        [&] { return weighted_sum(conv2d(x, w, b, 2, 1, 1), probe_a); }, {x, w, b});
    const double e2 = fd_check(
        [&] { return weighted_sum(conv2d(x, w, b, 1, 0, 2), probe_b); }, {x, w, b});
    report("conv2d", std::max(e1, e2));
  }
  {
    Rng r = rng.fork(2);
    Tensor x = random_tensor(r, {1, 4, 3, 3}, -2.0, 2.0);
    Tensor probe = random_tensor(r, {1, 4, 3, 3}, -1, 1, false);
    report("softmax_channel",
           fd_check([&] { return weighted_sum(softmax_channel(x), probe); }, {x}));
  }
  {
    Rng r = rng.fork(3);
    Tensor x = random_tensor(r, {2, 2, 2, 2}, -3.0, 3.0);
    Tensor probe = random_tensor(r, {2, 2, 2, 2}, -1, 1, false);
    report("sigmoid", fd_check([&] { return weighted_sum(sigmoid(x), probe); }, {x}));
    report("leaky_relu",
           fd_check([&] { return weighted_sum(leaky_relu(x, 0.1), probe); }, {x}));
  }
  {
    Rng r = rng.fork(4);
    Tensor a = random_tensor(r, {1, 2, 3, 3});
    Tensor b = random_tensor(r, {1, 3, 3, 3});
    Tensor probe = random_tensor(r, {1, 5, 3, 3}, -1, 1, false);
    report("concat_channel",
           fd_check([&] { return weighted_sum(concat_channel(a, b), probe); }, {a, b}));
    Tensor probe_slice = random_tensor(r, {1, 2, 3, 3}, -1, 1, false);
    report("slice_channel",
           fd_check([&] { return weighted_sum(slice_channel(b, 1, 2), probe_slice); }, {b}));
  }
  {
    Rng r = rng.fork(5);
    Tensor a = random_tensor(r, {2, 3, 4, 4});
    Tensor b = random_tensor(r, {2, 3, 4, 4});
    Tensor probe = random_tensor(r, {2, 3, 4, 4}, -1, 1, false);
    report("add", fd_check([&] { return weighted_sum(add(a, b), probe); }, {a, b}));
    report("sub", fd_check([&] { return weighted_sum(sub(a, b), probe); }, {a, b}));
    report("mul", fd_check([&] { return weighted_sum(mul(a, b), probe); }, {a, b}));
    report("affine",
           fd_check([&] { return weighted_sum(affine(a, -1.7, 0.3), probe); }, {a}));
  }
  {
    Rng r = rng.fork(6);
    Tensor x = random_tensor(r, {1, 2, 4, 4});
    Tensor probe_pool = random_tensor(r, {1, 2, 2, 2}, -1, 1, false);
    Tensor probe_up = random_tensor(r, {1, 2, 8, 8}, -1, 1, false);
    report("maxpool2", fd_check([&] { return weighted_sum(maxpool2(x), probe_pool); }, {x}));
    report("upsample_nearest2",
           fd_check([&] { return weighted_sum(upsample_nearest2(x), probe_up); }, {x}));
  }
  {
    Rng r = rng.fork(7);
    Tensor x = random_tensor(r, {1, 2, 3, 3}, 0.05, 0.95);
    Tensor probe = random_tensor(r, {1, 2, 3, 3}, -1, 1, false);
    report("clamp",
           fd_check([&] { return weighted_sum(clamp(x, 0.01, 0.99), probe); }, {x}));
    report("log", fd_check([&] { return weighted_sum(log(x), probe); }, {x}));
    report("pow_const",
           fd_check([&] { return weighted_sum(pow_const(x, 2.0), probe); }, {x}));
  }
  {
    Rng r = rng.fork(8);
    Tensor x = random_tensor(r, {1, 3, 2, 2});
    Tensor probe = random_tensor(r, {1, 1, 2, 2}, -1, 1, false);
    report("sum", fd_check([&] { return sum(x); }, {x}));
    report("sum_channel",
           fd_check([&] { return weighted_sum(sum_channel(x), probe); }, {x}));
    Tensor probe_r = random_tensor(r, {12}, -1, 1, false);
    report("reshape",
           fd_check([&] { return weighted_sum(reshape(x, {12}), probe_r); }, {x}));
  }
  {
    // detach is not finite-differenceable; verify the frozen-factor rule
    // sum(x * detach(x)) -> grad exactly x.
    Rng r = rng.fork(9);
    Tensor x = random_tensor(r, {2, 3}, -2.0, 2.0);
    Tape::current().clear();
    Tensor l = sum(mul(x, detach(x)));
    backward(l);
    double err = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) {
      err = std::max(err, std::abs(x.grad()[i] - x.data()[i]));
    }
    report("detach", err);
  }
  {
    Rng r = rng.fork(10);
    net::RFModule rf;
    Tensor lidar_f = random_tensor(r, {1, 3, 4, 4});
    Tensor cam_f = random_tensor(r, {1, 2, 4, 4});
    rf.reduce.weight = random_tensor(r, {3, 5, 1, 1});
    rf.reduce.bias = random_tensor(r, {3});
    rf.attention.weight = random_tensor(r, {3, 3, 1, 1});
    rf.attention.bias = random_tensor(r, {3});
    Tensor probe = random_tensor(r, {1, 3, 4, 4}, -1, 1, false);
    report("rf_fuse",
           fd_check([&] { return weighted_sum(net::rf_fuse(lidar_f, cam_f, rf), probe); },
                    {lidar_f, cam_f, rf.reduce.weight, rf.reduce.bias, rf.attention.weight,
                     rf.attention.bias}));
  }
  {
    Rng r = rng.fork(11);
    net::AsppBlock block;
    block.dilations = {1, 2};
    Tensor x = random_tensor(r, {1, 3, 6, 6});
    std::vector<Tensor> params{x};
    for (int d : block.dilations) {
      net::ConvLayer layer;
      layer.weight = random_tensor(r, {2, 3, 3, 3});
      layer.bias = random_tensor(r, {2});
      layer.padding = d;
      layer.dilation = d;
      params.push_back(layer.weight);
      params.push_back(layer.bias);
      block.branches.push_back(layer);
    }
    block.project.weight = random_tensor(r, {3, 2, 1, 1});
    block.project.bias = random_tensor(r, {3});
    params.push_back(block.project.weight);
    params.push_back(block.project.bias);
    Tensor probe = random_tensor(r, {1, 3, 6, 6}, -1, 1, false);
    report("aspp_forward",
           fd_check([&] { return weighted_sum(net::aspp_forward(x, block), probe); }, params));
  }
  {
    Rng r = rng.fork(12);
    MiniPipeline pipe(r);
    Tensor probe = random_tensor(r, {3, 8, 8}, -1, 1, false);
    report("camera_forward",
           fd_check([&] { return weighted_sum(pipe.camera_probs3(), probe); },
                    pipe.all_params()));
  }
  {
    Rng r = rng.fork(13);
    MiniPipeline pipe(r);
    Tensor probe = random_tensor(r, {3, 8, 8}, -1, 1, false);
    report("lidar_forward",
           fd_check([&] { return weighted_sum(pipe.lidar_probs3(), probe); },
                    pipe.all_params()));
  }
  {
    Rng r = rng.fork(14);
    MiniPipeline pipe(r);
    report("focal_loss",
           fd_check(
               [&] {
                 return loss::focal_loss(pipe.lidar_probs3(), pipe.labels, 2.0, 1e-8).value;
               },
               pipe.all_params()));
    report("lovasz_softmax",
           fd_check([&] { return loss::lovasz_softmax(pipe.lidar_probs3(), pipe.labels).value; },
                    pipe.all_params()));
  }
  {
    Rng r = rng.fork(15);
    MiniPipeline pipe(r);
    // Teacher values and importance weights are constants of the loss
    // definition; freeze them at the base point before differencing.
    Map2D omega;
    Tensor teacher;
    {
      NoGradGuard guard;
      teacher = detach(pipe.camera_probs3());
      const Map2D conf_cam = loss::confidence_map(teacher);
      const Map2D conf_lid = loss::confidence_map(detach(pipe.lidar_probs3()));
      omega = loss::importance_lidar(conf_lid, conf_cam, 0.0);
    }
    report("perception_loss",
           fd_check([&] { return loss::perception_loss(pipe.lidar_probs3(), teacher, omega,
                                                       1e-8); },
                    pipe.all_params()));
  }
  {
    Rng r = rng.fork(16);
    MiniPipeline pipe(r);
    Map2D omega_lid, omega_cam;
    Tensor teacher_cam, teacher_lid;
    {
      NoGradGuard guard;
      teacher_cam = detach(pipe.camera_probs3());
      teacher_lid = detach(pipe.lidar_probs3());
      const Map2D conf_cam = loss::confidence_map(teacher_cam);
      const Map2D conf_lid = loss::confidence_map(teacher_lid);
      omega_lid = loss::importance_lidar(conf_lid, conf_cam, 0.0);
      omega_cam = loss::importance_camera(conf_cam, conf_lid, 0.0);
    }
    auto lidar_objective = [&](bool with_perception) {
      Tensor probs = pipe.lidar_probs3();
      auto focal = loss::focal_loss(probs, pipe.labels, pipe.loss_cfg.focal_gamma,
                                    pipe.loss_cfg.epsilon);
      auto lovasz = loss::lovasz_softmax(probs, pipe.labels);
      Tensor percept = with_perception
                           ? loss::perception_loss(probs, teacher_cam, omega_lid,
                                                   pipe.loss_cfg.epsilon)
                           : Tensor::scalar(0.0);
      return loss::stream_objective(focal, lovasz, percept, pipe.loss_cfg).total;
    };
    auto camera_objective = [&](bool with_perception) {
      Tensor probs = pipe.camera_probs3();
      auto focal = loss::focal_loss(probs, pipe.labels, pipe.loss_cfg.focal_gamma,
                                    pipe.loss_cfg.epsilon);
      auto lovasz = loss::lovasz_softmax(probs, pipe.labels);
      Tensor percept = with_perception
                           ? loss::perception_loss(probs, teacher_lid, omega_cam,
                                                   pipe.loss_cfg.epsilon)
                           : Tensor::scalar(0.0);
      return loss::stream_objective(focal, lovasz, percept, pipe.loss_cfg).total;
    };
    report("objective_lidar",
           fd_check([&] { return lidar_objective(true); }, pipe.all_params()));
    report("objective_camera",
           fd_check([&] { return camera_objective(true); }, pipe.all_params()));
    report("objective_no_perception",
           std::max(fd_check([&] { return lidar_objective(false); }, pipe.all_params()),
                    fd_check([&] { return camera_objective(false); }, pipe.all_params())));
  }

  return reports;
}

bool all_pass(const std::vector<OpReport>& reports) {
  for (const auto& r : reports) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace pmf::gradcheck
