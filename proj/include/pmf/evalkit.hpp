#pragma once

#include <cstdint>
#include <vector>

#include "pmf/common.hpp"
#include "pmf/geometry.hpp"
#include "pmf/tensor.hpp"

namespace pmf::eval {

// Rows index ground truth, columns predictions. Additive under merging.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int s)
      : num_classes(s), counts(static_cast<size_t>(s) * s, 0) {}

  uint64_t& at(int truth, int pred) {
    return counts[static_cast<size_t>(truth) * num_classes + pred];
  }
  uint64_t at(int truth, int pred) const {
    return counts[static_cast<size_t>(truth) * num_classes + pred];
  }
  void merge(const ConfusionMatrix& other);
  uint64_t total() const;
};

// Pairs where either id is kIgnoreLabel contribute nothing.
void accumulate_confusion(ConfusionMatrix& cm, const std::vector<int32_t>& pred,
                          const std::vector<int32_t>& truth);

struct IouReport {
  std::vector<double> iou;       // per class; 0 where excluded
  std::vector<bool> included;    // class participates in the mean
  double miou = 0.0;
  bool empty = false;            // no class had any support
};

// IoU_c = TP / (TP + FP + FN); zero-denominator classes are excluded.
IouReport iou_report(const ConfusionMatrix& cm);

struct DistanceBinsReport {
  std::vector<double> edges;  // ascending, first must be 0; last bin is open
  std::vector<ConfusionMatrix> bins;
  std::vector<IouReport> reports;
};

// Points are binned by range d = |(x,y,z)|; bin k covers [edges[k],
// edges[k+1]) and the final bin [edges.back(), infinity).
DistanceBinsReport distance_binned_miou(const std::vector<int32_t>& pred,
                                        const std::vector<int32_t>& truth,
                                        const geom::PointCloud& cloud,
                                        const std::vector<double>& edges);

std::vector<double> default_distance_edges();

// Per-pixel argmax of a [S,H,W] probability tensor; ties break low.
LabelImage argmax_image(const Tensor& probs);

// Fraction of non-ignored truth pixels where pred matches.
double pixel_accuracy(const LabelImage& pred, const LabelImage& truth);

}  // namespace pmf::eval
