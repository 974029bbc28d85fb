#include "pmf/evalkit.hpp"

#include <algorithm>
#include <cmath>

namespace pmf::eval {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) {
    throw ShapeError("ConfusionMatrix::merge: class count mismatch");
  }
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

uint64_t ConfusionMatrix::total() const {
  uint64_t n = 0;
  for (uint64_t c : counts) n += c;
  return n;
}

void accumulate_confusion(ConfusionMatrix& cm, const std::vector<int32_t>& pred,
                          const std::vector<int32_t>& truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("accumulate_confusion: prediction/truth length mismatch");
  }
  for (size_t i = 0; i < pred.size(); ++i) {
    const int32_t t = truth[i];
    const int32_t p = pred[i];
    if (t == kIgnoreLabel || p == kIgnoreLabel) continue;
    if (t < 0 || t >= cm.num_classes || p < 0 || p >= cm.num_classes) {
      throw ShapeError("accumulate_confusion: class id out of range");
    }
    ++cm.at(t, p);
  }
}

IouReport iou_report(const ConfusionMatrix& cm) {
  if (cm.num_classes < 2) throw ConfigError("iou_report: need at least 2 classes");
  IouReport rep;
  rep.iou.assign(static_cast<size_t>(cm.num_classes), 0.0);
  rep.included.assign(static_cast<size_t>(cm.num_classes), false);
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    const uint64_t tp = cm.at(c, c);
    uint64_t fp = 0, fn = 0;
    for (int o = 0; o < cm.num_classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    rep.iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
    rep.included[static_cast<size_t>(c)] = true;
    sum += rep.iou[static_cast<size_t>(c)];
    ++n;
  }
  if (n == 0) {
    rep.empty = true;
  } else {
    rep.miou = sum / n;
  }
  return rep;
}

std::vector<double> default_distance_edges() { return {0.0, 10.0, 20.0, 30.0, 40.0, 50.0}; }

DistanceBinsReport distance_binned_miou(const std::vector<int32_t>& pred,
                                        const std::vector<int32_t>& truth,
                                        const geom::PointCloud& cloud,
                                        const std::vector<double>& edges) {
  if (pred.size() != truth.size() || pred.size() != cloud.size()) {
    throw ShapeError("distance_binned_miou: input length mismatch");
  }
  if (edges.empty() || edges.front() != 0.0) {
    throw ConfigError("distance_binned_miou: first bin edge must be 0");
  }
  for (size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw ConfigError("distance_binned_miou: edges must be strictly ascending");
    }
  }
  int num_classes = 0;
  for (int32_t t : truth) num_classes = std::max(num_classes, t + 1);
  for (int32_t p : pred) num_classes = std::max(num_classes, p + 1);
  num_classes = std::max(num_classes, 2);

  DistanceBinsReport rep;
  rep.edges = edges;
  rep.bins.assign(edges.size(), ConfusionMatrix(num_classes));
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = cloud.points[i].range();
    size_t bin = edges.size() - 1;
    for (size_t k = 0; k + 1 < edges.size(); ++k) {
      if (d >= edges[k] && d < edges[k + 1]) {
        bin = k;
        break;
      }
    }
    const int32_t t = truth[i];
    const int32_t p = pred[i];
    if (t == kIgnoreLabel || p == kIgnoreLabel) continue;
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw ShapeError("distance_binned_miou: class id out of range");
    }
    ++rep.bins[bin].at(t, p);
  }
  rep.reports.reserve(rep.bins.size());
  for (const auto& cm : rep.bins) rep.reports.push_back(iou_report(cm));
  return rep;
}

LabelImage argmax_image(const Tensor& probs) {
  if (probs.rank() != 3) throw ShapeError("argmax_image: expected [S,H,W]");
  const int s = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  const auto& d = probs.data();
  LabelImage out(h, w);
  for (size_t p = 0; p < plane; ++p) {
    int best = 0;
    double bv = d[p];
    for (int c = 1; c < s; ++c) {
      if (d[static_cast<size_t>(c) * plane + p] > bv) {
        bv = d[static_cast<size_t>(c) * plane + p];
        best = c;
      }
    }
    out.ids[p] = best;
  }
  return out;
}

double pixel_accuracy(const LabelImage& pred, const LabelImage& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("pixel_accuracy: size mismatch");
  }
  size_t total = 0, hit = 0;
  for (size_t i = 0; i < truth.ids.size(); ++i) {
    if (truth.ids[i] == kIgnoreLabel) continue;
    ++total;
    hit += (pred.ids[i] == truth.ids[i]);
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace pmf::eval
