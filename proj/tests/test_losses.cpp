#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pmf/evalkit.hpp"
#include "pmf/losses.hpp"
#include "pmf/rng.hpp"
#include "test_support.hpp"

using namespace pmf;
using namespace pmf::loss;
using pmf::testing::max_grad_error;
using pmf::testing::random_tensor;

namespace {

Tensor random_distribution(Rng& rng, int s, int h, int w, bool requires_grad = false) {
  Tensor logits = random_tensor(rng, {1, s, h, w}, -2.0, 2.0, requires_grad);
  return reshape(softmax_channel(logits), {s, h, w});
}

// Confusion-matrix Jaccard oracle for hard predictions.
double lovasz_hard_oracle(const LabelImage& pred, const LabelImage& truth, int s) {
  std::vector<uint64_t> cm(static_cast<size_t>(s) * s, 0);
  std::set<int32_t> present;
  for (size_t i = 0; i < truth.ids.size(); ++i) {
    if (truth.ids[i] == kIgnoreLabel) continue;
    present.insert(truth.ids[i]);
    cm[static_cast<size_t>(truth.ids[i]) * s + pred.ids[i]]++;
  }
  double total = 0;
  for (int32_t c : present) {
    uint64_t tp = cm[static_cast<size_t>(c) * s + c];
    uint64_t fp = 0, fn = 0;
    for (int o = 0; o < s; ++o) {
      if (o == c) continue;
      fp += cm[static_cast<size_t>(o) * s + c];
      fn += cm[static_cast<size_t>(c) * s + o];
    }
    total += 1.0 - static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  }
  return total / static_cast<double>(present.size());
}

}  // namespace

TEST_CASE("entropy_map anchors are exact") {
  Tensor uniform = Tensor::from_data({4, 1, 1}, {0.25, 0.25, 0.25, 0.25});
  CHECK(entropy_map(uniform).v[0] == 1.0);

  Tensor onehot = Tensor::from_data({4, 1, 1}, {1.0, 0.0, 0.0, 0.0});
  CHECK(entropy_map(onehot).v[0] == 0.0);

  Tensor half = Tensor::from_data({4, 1, 1}, {0.5, 0.5, 0.0, 0.0});
  CHECK(entropy_map(half).v[0] == 0.5);

  Tensor pair = Tensor::from_data({2, 1, 1}, {0.5, 0.5});
  CHECK(entropy_map(pair).v[0] == 1.0);
}

TEST_CASE("entropy is permutation invariant and bounded") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor probs = random_distribution(rng, 5, 2, 2);
    Map2D e = entropy_map(probs);
    for (double v : e.v) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // rotate the class channels
    std::vector<double> rotated(probs.numel());
    const size_t plane = 4;
    for (int c = 0; c < 5; ++c) {
      for (size_t p = 0; p < plane; ++p) {
        rotated[static_cast<size_t>((c + 1) % 5) * plane + p] =
            probs.data()[static_cast<size_t>(c) * plane + p];
      }
    }
    Map2D e2 = entropy_map(Tensor::from_data({5, 2, 2}, rotated));
    for (size_t p = 0; p < plane; ++p) CHECK(e2.v[p] == doctest::Approx(e.v[p]).epsilon(1e-12));
  }
}

TEST_CASE("entropy rejects non-distribution inputs") {
  CHECK_THROWS_AS(entropy_map(Tensor::from_data({2, 1, 1}, {0.9, 0.3})), Error);
  CHECK_THROWS_AS(entropy_map(Tensor::from_data({2, 1, 1}, {-0.1, 1.1})), Error);
}

TEST_CASE("confidence is one minus entropy") {
  Rng rng(5);
  Tensor probs = random_distribution(rng, 4, 3, 3);
  Map2D e = entropy_map(probs);
  Map2D c = confidence_map(probs);
  for (size_t i = 0; i < e.v.size(); ++i) {
    CHECK(c.v[i] == 1.0 - e.v[i]);
    CHECK(c.v[i] >= 0.0);
    CHECK(c.v[i] <= 1.0);
  }
}

TEST_CASE("importance map anchors") {
  Map2D gate(1, 1), other(1, 1);
  gate.v[0] = 0.9;
  other.v[0] = 0.6;
  CHECK(importance_lidar(gate, other, 0.7).v[0] == doctest::Approx(0.3).epsilon(1e-15));

  gate.v[0] = 0.65;
  CHECK(importance_lidar(gate, other, 0.7).v[0] == 0.0);

  gate.v[0] = 0.9;
  other.v[0] = 0.95;
  CHECK(importance_lidar(gate, other, 0.7).v[0] == 0.0);
}

TEST_CASE("importance maps vanish at or below tau and stay within [0,1]") {
  Rng rng(7);
  const double tau = 0.7;
  for (int trial = 0; trial < 200; ++trial) {
    Map2D gate(1, 1), other(1, 1);
    gate.v[0] = rng.uniform(0, 1);
    other.v[0] = rng.uniform(0, 1);
    const double w = importance_map(gate, other, tau).v[0];
    if (gate.v[0] <= tau) CHECK(w == 0.0);
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
  }
}

TEST_CASE("kl_map zero at equality, log2 anchor, clamp-slack bound") {
  Rng rng(9);
  Tensor p = random_distribution(rng, 3, 2, 2);
  Map2D zero = kl_map(p, p, 1e-8);
  for (double v : zero.v) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));

  Tensor point = Tensor::from_data({2, 1, 1}, {1.0, 0.0});
  Tensor half = Tensor::from_data({2, 1, 1}, {0.5, 0.5});
  const double slack = 2 * 1e-8 * std::abs(std::log(1e-8));
  CHECK(std::abs(kl_map(point, half, 1e-8).v[0] - std::log(2.0)) <= slack);

  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_distribution(rng, 4, 10, 10);
    Tensor b = random_distribution(rng, 4, 10, 10);
    Map2D m = kl_map(a, b, 1e-8);
    const double bound = -4 * 1e-8 * std::abs(std::log(1e-8));
    for (double v : m.v) CHECK(v >= bound);
  }
}

TEST_CASE("perception_loss: zero weights, equal streams, hand evaluation") {
  Rng rng(11);
  Tensor logits = random_tensor(rng, {1, 3, 2, 2}, -1, 1, true);
  auto student = [&] { return reshape(softmax_channel(logits), {3, 2, 2}); };

  Map2D zeros(2, 2, 0.0);
  Tape::current().clear();
  Tensor loss = perception_loss(student(), detach(student()), zeros, 1e-8);
  CHECK(loss.value() == 0.0);
  backward(loss);
  bool any = false;
  if (logits.has_grad()) {
    for (double g : logits.grad()) any |= (g != 0.0);
  }
  CHECK_FALSE(any);
  logits.zero_grad();

  Map2D ones(2, 2, 1.0);
  Tape::current().clear();
  Tensor self = perception_loss(student(), detach(student()), ones, 1e-8);
  CHECK(self.value() == doctest::Approx(0.0).epsilon(1e-15));
  Tape::current().clear();

  // 2x2, S = 2 spreadsheet evaluation
  Tensor p = Tensor::from_data({2, 2, 2}, {0.7, 0.4, 0.9, 0.5, 0.3, 0.6, 0.1, 0.5});
  Tensor q = Tensor::from_data({2, 2, 2}, {0.6, 0.3, 0.9, 0.2, 0.4, 0.7, 0.1, 0.8});
  Map2D w(2, 2);
  w.v = {1.0, 0.5, 0.25, 0.0};
  const double kl1 = 0.7 * std::log(0.7 / 0.6) + 0.3 * std::log(0.3 / 0.4);
  const double kl2 = 0.4 * std::log(0.4 / 0.3) + 0.6 * std::log(0.6 / 0.7);
  const double kl4 = 0.5 * std::log(0.5 / 0.2) + 0.5 * std::log(0.5 / 0.8);
  const double expect = (1.0 * kl1 + 0.5 * kl2 + 0.25 * 0.0 + 0.0 * kl4) / 4.0;
  CHECK(perception_loss(p, q, w, 1e-8).value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("perception_loss detaches the teacher") {
  Rng rng(13);
  Tensor a_logits = random_tensor(rng, {1, 3, 2, 2}, -1, 1, true);
  Tensor b_logits = random_tensor(rng, {1, 3, 2, 2}, -1, 1, true);
  Map2D w(2, 2, 0.8);

  Tape::current().clear();
  Tensor student = reshape(softmax_channel(a_logits), {3, 2, 2});
  Tensor teacher = reshape(softmax_channel(b_logits), {3, 2, 2});
  Tensor loss = perception_loss(student, teacher, w, 1e-8);
  CHECK(loss.value() > 0.0);
  backward(loss);
  REQUIRE(a_logits.has_grad());
  double a_norm = 0, b_norm = 0;
  for (double g : a_logits.grad()) a_norm += g * g;
  if (b_logits.has_grad()) {
    for (double g : b_logits.grad()) b_norm += g * g;
  }
  CHECK(a_norm > 0.0);
  CHECK(b_norm == 0.0);
  a_logits.zero_grad();
  b_logits.zero_grad();
}

TEST_CASE("focal_loss reduces to cross-entropy at gamma 0") {
  // single pixel with p_t = 0.5 -> ln 2
  Tensor probs = Tensor::from_data({2, 1, 1}, {0.5, 0.5});
  LabelImage labels(1, 1, 0);
  auto res = focal_loss(probs, labels, 0.0, 1e-8);
  CHECK_FALSE(res.empty);
  CHECK(res.value.value() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const int s = rng.uniform_int(2, 5);
    const int h = rng.uniform_int(1, 4);
    const int w = rng.uniform_int(1, 4);
    Tensor dist = random_distribution(rng, s, h, w);
    LabelImage lab(h, w);
    for (auto& v : lab.ids) {
      const int draw = rng.uniform_int(-1, s - 1);
      v = draw < 0 ? kIgnoreLabel : draw;
    }
    // independent mean cross-entropy oracle
    double acc = 0;
    size_t m = 0;
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t p = 0; p < plane; ++p) {
      if (lab.ids[p] == kIgnoreLabel) continue;
      const double pt =
          std::min(std::max(dist.data()[static_cast<size_t>(lab.ids[p]) * plane + p], 1e-8), 1.0);
      acc += -std::log(pt);
      ++m;
    }
    auto got = focal_loss(dist, lab, 0.0, 1e-8);
    if (m == 0) {
      CHECK(got.empty);
      continue;
    }
    CHECK(got.value.value() == doctest::Approx(acc * (1.0 / static_cast<double>(m))).epsilon(1e-12));
  }
}

TEST_CASE("focal_loss anchors at p_t = 1 and p_t = 0.9") {
  Tensor perfect = Tensor::from_data({2, 1, 1}, {1.0, 0.0});
  LabelImage labels(1, 1, 0);
  CHECK(focal_loss(perfect, labels, 2.0, 1e-8).value.value() == 0.0);
  CHECK(focal_loss(perfect, labels, 0.5, 1e-8).value.value() == 0.0);

  Tensor nearly = Tensor::from_data({2, 1, 1}, {0.9, 0.1});
  const double expect = 0.01 * (-std::log(0.9));  // ~1.0536e-3
  CHECK(focal_loss(nearly, labels, 2.0, 1e-8).value.value() ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(1.0536e-3).epsilon(1e-3));
}

TEST_CASE("focal_loss flags the all-ignored case") {
  Tensor probs = Tensor::from_data({2, 1, 2}, {0.5, 0.5, 0.5, 0.5});
  LabelImage labels(1, 2, kIgnoreLabel);
  auto res = focal_loss(probs, labels, 2.0, 1e-8);
  CHECK(res.empty);
  CHECK(res.value.value() == 0.0);
  auto lres = lovasz_softmax(probs, labels);
  CHECK(lres.empty);
  CHECK(lres.value.value() == 0.0);
}

TEST_CASE("lovasz_softmax is zero for perfect one-hot predictions") {
  LabelImage labels(2, 2);
  labels.ids = {0, 1, 2, 1};
  std::vector<double> data(3 * 4, 0.0);
  for (size_t p = 0; p < 4; ++p) data[static_cast<size_t>(labels.ids[p]) * 4 + p] = 1.0;
  Tensor probs = Tensor::from_data({3, 2, 2}, data);
  CHECK(lovasz_softmax(probs, labels).value.value() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("lovasz_softmax on hard predictions equals the Jaccard oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int s = rng.uniform_int(2, 5);
    const int h = 4, w = 5;
    LabelImage truth(h, w), pred(h, w);
    for (size_t i = 0; i < truth.ids.size(); ++i) {
      const int draw = rng.uniform_int(-1, s - 1);
      truth.ids[i] = draw < 0 ? kIgnoreLabel : draw;
      pred.ids[i] = rng.uniform_int(0, s - 1);
    }
    bool any = false;
    for (int32_t v : truth.ids) any |= (v != kIgnoreLabel);
    if (!any) continue;
    std::vector<double> data(static_cast<size_t>(s) * h * w, 0.0);
    for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) {
      data[static_cast<size_t>(pred.ids[p]) * h * w + p] = 1.0;
    }
    Tensor probs = Tensor::from_data({s, h, w}, data);
    const double expect = lovasz_hard_oracle(pred, truth, s);
    CHECK(lovasz_softmax(probs, truth).value.value() ==
          doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("lovasz_softmax of a fully mispredicted class is 1") {
  LabelImage labels(1, 3, 0);
  Tensor probs = Tensor::from_data({2, 1, 3}, {0, 0, 0, 1, 1, 1});
  CHECK(lovasz_softmax(probs, labels).value.value() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("lovasz gradient matches finite differences") {
  Rng rng(19);
  Tensor logits = random_tensor(rng, {1, 3, 3, 3}, -1, 1, true);
  LabelImage labels(3, 3);
  for (auto& v : labels.ids) v = rng.uniform_int(0, 2);
  labels.ids[4] = kIgnoreLabel;
  const double err = max_grad_error(
      [&] {
        return lovasz_softmax(reshape(softmax_channel(logits), {3, 3, 3}), labels).value;
      },
      {logits});
  CHECK(err < 1e-4);
}

TEST_CASE("stream_objective composes exactly") {
  LossConfig cfg;
  cfg.lambda_lovasz = 1.0;
  cfg.gamma_perception = 0.5;
  MaskedLoss focal{Tensor::scalar(1.0), false};
  MaskedLoss lovasz{Tensor::scalar(2.0), false};
  Tensor percept = Tensor::scalar(4.0);
  StreamObjective obj = stream_objective(focal, lovasz, percept, cfg);
  CHECK(obj.values.total == 5.0);
  CHECK(obj.total.value() == 5.0);
  CHECK(obj.values.total ==
        obj.values.focal + cfg.lambda_lovasz * obj.values.lovasz +
            cfg.gamma_perception * obj.values.perception);

  LossConfig plain;
  plain.lambda_lovasz = 0.0;
  plain.gamma_perception = 0.0;
  StreamObjective only_focal = stream_objective(focal, lovasz, percept, plain);
  CHECK(only_focal.values.total == 1.0);

  LossConfig no_pl;
  no_pl.gamma_perception = 0.0;
  StreamObjective ablated = stream_objective(focal, lovasz, Tensor::scalar(0.0), no_pl);
  CHECK(ablated.values.total == 3.0);
  CHECK(ablated.values.perception == 0.0);
}

TEST_CASE("full objective gradient with and without the perception term") {
  Rng rng(23);
  Tensor logits = random_tensor(rng, {1, 3, 2, 2}, -1, 1, true);
  LabelImage labels(2, 2);
  labels.ids = {0, 1, 2, 0};
  LossConfig cfg;

  Tensor teacher;
  Map2D omega;
  {
    NoGradGuard guard;
    teacher = detach(reshape(softmax_channel(logits), {3, 2, 2}));
    Map2D conf = confidence_map(teacher);
    Map2D other(2, 2, 0.1);
    omega = importance_map(conf, other, 0.0);
  }
  auto objective = [&](bool with_pl) {
    Tensor probs = reshape(softmax_channel(logits), {3, 2, 2});
    auto focal = focal_loss(probs, labels, cfg.focal_gamma, cfg.epsilon);
    auto lovasz = lovasz_softmax(probs, labels);
    Tensor percept = with_pl ? perception_loss(probs, teacher, omega, cfg.epsilon)
                             : Tensor::scalar(0.0);
    return stream_objective(focal, lovasz, percept, cfg).total;
  };
  CHECK(max_grad_error([&] { return objective(true); }, {logits}) < 1e-4);
  CHECK(max_grad_error([&] { return objective(false); }, {logits}) < 1e-4);
}

TEST_CASE("loss config validation") {
  LossConfig bad;
  bad.tau = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossConfig{};
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossConfig{};
  bad.gamma_perception = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
