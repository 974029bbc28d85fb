#include "pmf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace pmf::loss {

namespace {

void require_probs_3d(const Tensor& t, const char* who) {
  if (t.rank() != 3 || t.dim(0) < 2) {
    throw ShapeError(std::string(who) + ": expected [S,H,W] with S >= 2");
  }
}

void require_label_match(const Tensor& probs, const LabelImage& labels, const char* who) {
  if (labels.height != probs.dim(1) || labels.width != probs.dim(2)) {
    throw ShapeError(std::string(who) + ": label image size mismatch");
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("LossConfig: tau must be in [0,1)");
  if (lambda_lovasz < 0.0 || gamma_perception < 0.0) {
    throw ConfigError("LossConfig: loss weights must be non-negative");
  }
  if (focal_gamma < 0.0) throw ConfigError("LossConfig: focal_gamma must be non-negative");
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw ConfigError("LossConfig: epsilon must be in (0, 1e-3]");
  }
}

Map2D entropy_map(const Tensor& probs) {
  require_probs_3d(probs, "entropy_map");
  const int s = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  const auto& d = probs.data();
  const double log_s = std::log(static_cast<double>(s));
  Map2D out(h, w);
  for (size_t p = 0; p < plane; ++p) {
    long double acc = 0.0L;
    double total = 0.0;
    for (int c = 0; c < s; ++c) {
      const double v = d[c * plane + p];
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw Error("entropy_map: input is not a distribution (negative or non-finite)");
      }
      total += v;
      if (v > 0.0) acc += static_cast<long double>(v) * std::log(v);
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw Error("entropy_map: channel sums deviate from 1 beyond 1e-6");
    }
    const double e = static_cast<double>(-acc / log_s);
    out.v[p] = std::clamp(e, 0.0, 1.0);
  }
  return out;
}

Map2D confidence_map(const Tensor& probs) {
  Map2D c = entropy_map(probs);
  for (double& v : c.v) v = 1.0 - v;
  return c;
}

Map2D importance_map(const Map2D& gate_conf, const Map2D& other_conf, double tau) {
  if (gate_conf.height != other_conf.height || gate_conf.width != other_conf.width) {
    throw ShapeError("importance_map: confidence map size mismatch");
  }
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("importance_map: tau must be in [0,1)");
  Map2D out(gate_conf.height, gate_conf.width);
  for (size_t i = 0; i < out.v.size(); ++i) {
    out.v[i] = gate_conf.v[i] > tau ? std::max(gate_conf.v[i] - other_conf.v[i], 0.0) : 0.0;
  }
  return out;
}

namespace {

// Tape-recorded KL map [1,1,H,W]; the student is the first argument.
Tensor kl_map_tensor(const Tensor& student, const Tensor& teacher, double epsilon) {
  require_probs_3d(student, "kl_map");
  require_probs_3d(teacher, "kl_map");
  if (student.shape() != teacher.shape()) throw ShapeError("kl_map: shape mismatch");
  const int s = student.dim(0), h = student.dim(1), w = student.dim(2);
  Tensor p = clamp(reshape(student, {1, s, h, w}), epsilon, 1.0);
  Tensor q = clamp(detach(reshape(teacher, {1, s, h, w})), epsilon, 1.0);
  return sum_channel(mul(p, sub(log(p), log(q))));
}

}  // namespace

Map2D kl_map(const Tensor& p, const Tensor& q, double epsilon) {
  NoGradGuard guard;
  const Tensor t = kl_map_tensor(p, q, epsilon);
  Map2D out(p.dim(1), p.dim(2));
  out.v = t.data();
  return out;
}

Tensor perception_loss(const Tensor& student, const Tensor& teacher, const Map2D& weights,
                       double epsilon, const LabelImage* mask) {
  const Tensor klm = kl_map_tensor(student, teacher, epsilon);
  const int h = student.dim(1), w = student.dim(2);
  if (weights.height != h || weights.width != w) {
    throw ShapeError("perception_loss: weight map size mismatch");
  }
  std::vector<double> wdata = weights.v;
  if (mask) {
    if (mask->height != h || mask->width != w) {
      throw ShapeError("perception_loss: label mask size mismatch");
    }
    for (size_t i = 0; i < wdata.size(); ++i) {
      if (mask->ids[i] == kIgnoreLabel) wdata[i] = 0.0;
    }
  }
  Tensor wt = Tensor::from_data({1, 1, h, w}, std::move(wdata));
  return affine(sum(mul(klm, wt)), 1.0 / (static_cast<double>(h) * w), 0.0);
}

MaskedLoss focal_loss(const Tensor& probs, const LabelImage& labels, double focal_gamma,
                      double epsilon) {
  require_probs_3d(probs, "focal_loss");
  require_label_match(probs, labels, "focal_loss");
  if (focal_gamma < 0.0) throw ConfigError("focal_loss: negative focusing exponent");
  const int s = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;

  size_t supervised = 0;
  std::vector<double> onehot(static_cast<size_t>(s) * plane, 0.0);
  std::vector<double> valid(plane, 0.0);
  for (size_t p = 0; p < plane; ++p) {
    const int32_t lab = labels.ids[p];
    if (lab == kIgnoreLabel) continue;
    if (lab < 0 || lab >= s) throw ShapeError("focal_loss: label id out of range");
    onehot[static_cast<size_t>(lab) * plane + p] = 1.0;
    valid[p] = 1.0;
    ++supervised;
  }
  if (supervised == 0) return {Tensor::scalar(0.0), true};

  Tensor one_hot = Tensor::from_data({1, s, h, w}, std::move(onehot));
  Tensor valid_mask = Tensor::from_data({1, 1, h, w}, std::move(valid));
  Tensor p4 = reshape(probs, {1, s, h, w});
  Tensor pt = clamp(sum_channel(mul(p4, one_hot)), epsilon, 1.0);
  Tensor term = mul(pow_const(affine(pt, -1.0, 1.0), focal_gamma), affine(log(pt), -1.0, 0.0));
  Tensor total = sum(mul(term, valid_mask));
  return {affine(total, 1.0 / static_cast<double>(supervised), 0.0), false};
}

MaskedLoss lovasz_softmax(const Tensor& probs, const LabelImage& labels) {
  require_probs_3d(probs, "lovasz_softmax");
  require_label_match(probs, labels, "lovasz_softmax");
  const int s = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  const auto& d = probs.data();

  std::vector<size_t> valid;
  std::set<int32_t> present;
  for (size_t p = 0; p < plane; ++p) {
    const int32_t lab = labels.ids[p];
    if (lab == kIgnoreLabel) continue;
    if (lab < 0 || lab >= s) throw ShapeError("lovasz_softmax: label id out of range");
    valid.push_back(p);
    present.insert(lab);
  }
  if (valid.empty()) return {Tensor::scalar(0.0), true};

  const double inv_classes = 1.0 / static_cast<double>(present.size());
  const bool rec = Tape::current().recording() && probs.requires_grad();
  std::vector<double> dprobs;
  if (rec) dprobs.assign(d.size(), 0.0);

  double total = 0.0;
  std::vector<double> errors(valid.size());
  std::vector<int> fg(valid.size());
  std::vector<size_t> order(valid.size());
  for (int32_t c : present) {
    for (size_t k = 0; k < valid.size(); ++k) {
      const size_t p = valid[k];
      fg[k] = labels.ids[p] == c ? 1 : 0;
      const double prob = d[static_cast<size_t>(c) * plane + p];
      errors[k] = fg[k] ? 1.0 - prob : prob;
    }
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return errors[a] > errors[b]; });

    // Gradient of the Jaccard-loss Lovasz extension along the sorted errors.
    double gts = 0.0;
    for (int f : fg) gts += f;
    double cum_fg = 0.0, cum_bg = 0.0, prev_jacc = 0.0, loss_c = 0.0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
      const size_t k = order[rank];
      cum_fg += fg[k];
      cum_bg += 1 - fg[k];
      const double inter = gts - cum_fg;
      const double uni = gts + cum_bg;
      const double jacc = 1.0 - inter / uni;
      const double g = jacc - prev_jacc;
      prev_jacc = jacc;
      loss_c += errors[k] * g;
      if (rec) {
        const size_t p = valid[k];
        dprobs[static_cast<size_t>(c) * plane + p] += (fg[k] ? -1.0 : 1.0) * g * inv_classes;
      }
    }
    total += loss_c;
  }
  total *= inv_classes;

  Tensor out = Tensor::from_data({1}, {total}, rec);
  if (rec) {
    auto pi = probs.impl();
    auto oi = out.impl();
    Tape::current().record(oi, [pi, oi, dprobs = std::move(dprobs)]() {
      if (!oi->has_grad()) return;
      pi->ensure_grad();
      const double g = oi->grad[0];
      for (size_t i = 0; i < dprobs.size(); ++i) pi->grad[i] += g * dprobs[i];
    });
  }
  return {out, false};
}

StreamObjective stream_objective(const MaskedLoss& focal, const MaskedLoss& lovasz,
                                 const Tensor& perception, const LossConfig& cfg) {
  cfg.validate();
  if (!perception.defined() || perception.numel() != 1) {
    throw ShapeError("stream_objective: perception term must be a scalar tensor");
  }
  Tensor total = add(add(focal.value, affine(lovasz.value, cfg.lambda_lovasz, 0.0)),
                     affine(perception, cfg.gamma_perception, 0.0));
  StreamObjective obj;
  obj.total = total;
  obj.values.focal = focal.value.value();
  obj.values.lovasz = lovasz.value.value();
  obj.values.perception = perception.value();
  obj.values.total = total.value();
  return obj;
}

}  // namespace pmf::loss
