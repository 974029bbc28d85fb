#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmf/common.hpp"
#include "pmf/dataio.hpp"
#include "pmf/geometry.hpp"
#include "pmf/losses.hpp"
#include "pmf/network.hpp"

namespace pmf::train {

struct OptimizerConfig {
  double momentum = 0.9;   // SGD with Nesterov
  double beta1 = 0.9;      // Adam
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

using GradList = std::vector<std::vector<double>>;

// v <- mu*v + g ; p <- p - lr*(g + mu*v). mu = 0 reduces to vanilla SGD.
class SgdNesterov {
 public:
  explicit SgdNesterov(double momentum = 0.9) : momentum_(momentum) {}
  void step(std::vector<net::NamedParam>& params, const GradList& grads, double lr);

 private:
  double momentum_;
  GradList velocity_;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::vector<net::NamedParam>& params, const GradList& grads, double lr);
  int64_t step_count() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  GradList m_, v_;
};

// 0.5 * base_lr * (1 + cos(pi * step / total_steps))
double cosine_lr(int64_t step, int64_t total_steps, double base_lr);

struct TrainConfig {
  net::NetworkConfig network;
  loss::LossConfig loss;
  OptimizerConfig optimizer;
  double base_lr = 0.001;
  int total_steps = 500;
  int batch_size = 2;
  uint64_t seed = 1;
  bool fusion = true;       // residual fusion modules on
  bool perception = true;   // perception-aware loss terms on
  bool freeze_camera = false;
  geom::ProjectionMode projection = geom::ProjectionMode::kPerspective;
  double fov_up_deg = 16.0;
  double fov_down_deg = -16.0;

  void validate() const;
  std::string canonical_string() const;
  static TrainConfig from_string(const std::string& text);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

struct TrainSample {
  io::ScanRecord scan;
  geom::ProjectedScan proj;
};

TrainSample prepare_sample(const io::ScanRecord& record, const TrainConfig& cfg);
std::vector<TrainSample> prepare_dataset(const std::vector<io::ScanRecord>& records,
                                         const TrainConfig& cfg);

struct StepLog {
  int64_t step = 0;
  double lr = 0.0;
  loss::LossBreakdown camera;
  loss::LossBreakdown lidar;
};

// One hybrid update per batch: a shared forward pass, the two stream
// objectives, then Adam on the LiDAR-stream parameters against the LiDAR
// objective and Nesterov SGD on the camera-stream parameters against the
// camera objective.
class Trainer {
 public:
  Trainer(net::TSNet& model, const TrainConfig& cfg);

  StepLog train_step(const std::vector<const TrainSample*>& batch);

  // Deterministic cyclic batching over the dataset for cfg.total_steps.
  std::vector<StepLog> run(const std::vector<TrainSample>& data);

  int64_t step() const { return step_; }

 private:
  net::TSNet& model_;
  TrainConfig cfg_;
  SgdNesterov sgd_;
  Adam adam_;
  int64_t step_ = 0;

  void zero_param_grads();
};

}  // namespace pmf::train
