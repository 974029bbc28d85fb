#pragma once

#include "pmf/common.hpp"
#include "pmf/tensor.hpp"

namespace pmf::loss {

struct LossConfig {
  double tau = 0.7;              // confidence threshold
  double lambda_lovasz = 1.0;    // weight of the Lovasz-softmax term
  double gamma_perception = 0.5; // weight of the perception term
  double focal_gamma = 2.0;      // focusing exponent
  double epsilon = 1e-8;         // probability clamp before any log
  // Perception losses run on every pixel by default; set false to restrict
  // them to labeled pixels.
  bool perception_dense = true;

  void validate() const;
};

// Normalized per-pixel entropy of a [S,H,W] probability tensor:
// E = -(1/log S) * sum_s O_s log O_s, with 0 log 0 := 0. Values in [0,1].
Map2D entropy_map(const Tensor& probs);

// C = 1 - E.
Map2D confidence_map(const Tensor& probs);

// Threshold-gated rectified confidence difference. The gating confidence is
// the first argument: the map is max(gate - other, 0) where gate > tau,
// zero elsewhere.
Map2D importance_map(const Map2D& gate_conf, const Map2D& other_conf, double tau);
inline Map2D importance_lidar(const Map2D& lidar_conf, const Map2D& camera_conf, double tau) {
  return importance_map(lidar_conf, camera_conf, tau);
}
inline Map2D importance_camera(const Map2D& camera_conf, const Map2D& lidar_conf, double tau) {
  return importance_map(camera_conf, lidar_conf, tau);
}

// Pixelwise KL divergence sum_s P_s log(P_s / Q_s) with both operands
// clamped into [epsilon, 1] before the logs.
Map2D kl_map(const Tensor& p, const Tensor& q, double epsilon);

// (1 / (H*W)) * sum_hw weights * KL(student || teacher). The teacher is
// detached internally; gradients flow only through the student. An optional
// label mask drops ignored pixels from the sum.
Tensor perception_loss(const Tensor& student, const Tensor& teacher, const Map2D& weights,
                       double epsilon, const LabelImage* mask = nullptr);

struct MaskedLoss {
  Tensor value;
  bool empty = false;  // no supervised pixels
};

// Mean over labeled pixels of -(1 - p_t)^gamma * log p_t.
MaskedLoss focal_loss(const Tensor& probs, const LabelImage& labels, double focal_gamma,
                      double epsilon);

// Lovasz-softmax over classes present in the labels.
MaskedLoss lovasz_softmax(const Tensor& probs, const LabelImage& labels);

struct LossBreakdown {
  double focal = 0.0;
  double lovasz = 0.0;
  double perception = 0.0;
  double total = 0.0;
};

struct StreamObjective {
  Tensor total;  // focal + lambda * lovasz + gamma * perception
  LossBreakdown values;
};

StreamObjective stream_objective(const MaskedLoss& focal, const MaskedLoss& lovasz,
                                 const Tensor& perception, const LossConfig& cfg);

}  // namespace pmf::loss
