#include "pmf/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace pmf::train {

namespace {

void check_grads(const std::vector<net::NamedParam>& params, const GradList& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: grad list size mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.numel() != grads[i].size()) {
      throw ShapeError("optimizer: grad shape mismatch for " + params[i].name);
    }
  }
}

GradList zeros_like(const std::vector<net::NamedParam>& params) {
  GradList out(params.size());
  for (size_t i = 0; i < params.size(); ++i) out[i].assign(params[i].tensor.numel(), 0.0);
  return out;
}

GradList collect_grads(const std::vector<net::NamedParam>& params) {
  GradList out(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    out[i] = t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);
  }
  return out;
}

}  // namespace

void SgdNesterov::step(std::vector<net::NamedParam>& params, const GradList& grads, double lr) {
  check_grads(params, grads);
  if (velocity_.empty()) velocity_ = zeros_like(params);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor.data();
    auto& v = velocity_[i];
    const auto& g = grads[i];
    for (size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      p[j] -= lr * (g[j] + momentum_ * v[j]);
    }
  }
}

void Adam::step(std::vector<net::NamedParam>& params, const GradList& grads, double lr) {
  check_grads(params, grads);
  if (m_.empty()) {
    m_ = zeros_like(params);
    v_ = zeros_like(params);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor.data();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw ConfigError("cosine_lr: step out of range");
  return 0.5 * base_lr *
         (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                         static_cast<double>(total_steps)));
}

void TrainConfig::validate() const {
  network.validate();
  loss.validate();
  if (base_lr <= 0.0) throw ConfigError("TrainConfig: base_lr must be positive");
  if (total_steps < 1) throw ConfigError("TrainConfig: total_steps must be positive");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be positive");
  if (!(fov_up_deg > fov_down_deg)) throw ConfigError("TrainConfig: fov_up must exceed fov_down");
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

}  // namespace

std::string TrainConfig::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "num_classes " << network.num_classes << "\n";
  os << "camera_widths " << join_ints(network.camera_widths) << "\n";
  os << "lidar_widths " << join_ints(network.lidar_widths) << "\n";
  os << "aspp_dilations " << join_ints(network.aspp_dilations) << "\n";
  os << "tau " << loss.tau << "\n";
  os << "lambda " << loss.lambda_lovasz << "\n";
  os << "gamma " << loss.gamma_perception << "\n";
  os << "focal_gamma " << loss.focal_gamma << "\n";
  os << "epsilon " << loss.epsilon << "\n";
  os << "perception_dense " << (loss.perception_dense ? 1 : 0) << "\n";
  os << "momentum " << optimizer.momentum << "\n";
  os << "beta1 " << optimizer.beta1 << "\n";
  os << "beta2 " << optimizer.beta2 << "\n";
  os << "adam_eps " << optimizer.adam_eps << "\n";
  os << "base_lr " << base_lr << "\n";
  os << "steps " << total_steps << "\n";
  os << "batch_size " << batch_size << "\n";
  os << "seed " << seed << "\n";
  os << "fusion " << (fusion ? 1 : 0) << "\n";
  os << "perception " << (perception ? 1 : 0) << "\n";
  os << "freeze_camera " << (freeze_camera ? 1 : 0) << "\n";
  os << "projection "
     << (projection == geom::ProjectionMode::kPerspective ? "perspective" : "spherical") << "\n";
  os << "fov_up " << fov_up_deg << "\n";
  os << "fov_down " << fov_down_deg << "\n";
  return os.str();
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write config: " + path);
  f << canonical_string();
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

TrainConfig TrainConfig::from_string(const std::string& text) {
  std::istringstream f(text);
  TrainConfig cfg;
  std::string line;
  while (std::getline(f, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    std::string key, value;
    if (!(is >> key)) continue;
    if (!(is >> value)) throw DataError("config key without value: " + key);
    if (value == "=") {
      if (!(is >> value)) throw DataError("config key without value: " + key);
    }
    try {
      if (key == "num_classes") cfg.network.num_classes = std::stoi(value);
      else if (key == "camera_widths") cfg.network.camera_widths = split_ints(value);
      else if (key == "lidar_widths") cfg.network.lidar_widths = split_ints(value);
      else if (key == "aspp_dilations") cfg.network.aspp_dilations = split_ints(value);
      else if (key == "tau") cfg.loss.tau = std::stod(value);
      else if (key == "lambda") cfg.loss.lambda_lovasz = std::stod(value);
      else if (key == "gamma") cfg.loss.gamma_perception = std::stod(value);
      else if (key == "focal_gamma") cfg.loss.focal_gamma = std::stod(value);
      else if (key == "epsilon") cfg.loss.epsilon = std::stod(value);
      else if (key == "perception_dense") cfg.loss.perception_dense = std::stoi(value) != 0;
      else if (key == "momentum") cfg.optimizer.momentum = std::stod(value);
      else if (key == "beta1") cfg.optimizer.beta1 = std::stod(value);
      else if (key == "beta2") cfg.optimizer.beta2 = std::stod(value);
      else if (key == "adam_eps") cfg.optimizer.adam_eps = std::stod(value);
      else if (key == "base_lr") cfg.base_lr = std::stod(value);
      else if (key == "steps") cfg.total_steps = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "fusion") cfg.fusion = std::stoi(value) != 0;
      else if (key == "perception") cfg.perception = std::stoi(value) != 0;
      else if (key == "freeze_camera") cfg.freeze_camera = std::stoi(value) != 0;
      else if (key == "fov_up") cfg.fov_up_deg = std::stod(value);
      else if (key == "fov_down") cfg.fov_down_deg = std::stod(value);
      else if (key == "projection") {
        if (value == "perspective") cfg.projection = geom::ProjectionMode::kPerspective;
        else if (value == "spherical") cfg.projection = geom::ProjectionMode::kSpherical;
        else throw DataError("unknown projection mode: " + value);
      } else {
        throw DataError("unknown config key: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw DataError("bad value for config key " + key + ": " + value);
    }
  }
  cfg.validate();
  return cfg;
}

TrainSample prepare_sample(const io::ScanRecord& record, const TrainConfig& cfg) {
  TrainSample sample;
  sample.scan = record;
  if (cfg.projection == geom::ProjectionMode::kPerspective) {
    sample.proj = geom::perspective_project_cloud(record.cloud, record.labels, record.calib);
  } else {
    sample.proj = geom::spherical_project_cloud(record.cloud, record.labels, cfg.fov_up_deg,
                                                cfg.fov_down_deg, record.calib.image_height,
                                                record.calib.image_width);
  }
  return sample;
}

std::vector<TrainSample> prepare_dataset(const std::vector<io::ScanRecord>& records,
                                         const TrainConfig& cfg) {
  std::vector<TrainSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(prepare_sample(r, cfg));
  return out;
}

Trainer::Trainer(net::TSNet& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      sgd_(cfg.optimizer.momentum),
      adam_(cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.adam_eps) {
  cfg_.validate();
}

void Trainer::zero_param_grads() {
  for (auto& p : model_.camera_parameters()) p.tensor.zero_grad();
  for (auto& p : model_.lidar_parameters()) p.tensor.zero_grad();
}

StepLog Trainer::train_step(const std::vector<const TrainSample*>& batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  Tape::current().clear();

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Tensor camera_total, lidar_total;
  loss::LossBreakdown cam_sum, lid_sum;

  for (const TrainSample* sample : batch) {
    const Tensor& image = sample->scan.image;
    const Tensor& feats = sample->proj.features;
    const int h = image.dim(1), w = image.dim(2);
    const int s = cfg_.network.num_classes;

    const Tensor image4 = reshape(image, {1, 3, h, w});
    const Tensor lidar4 = reshape(feats, {1, 5, h, w});

    net::CameraOutput cam = model_.camera_forward(image4);
    Tensor lidar_probs =
        model_.lidar_forward(lidar4, cfg_.fusion ? &cam.features : nullptr, cfg_.fusion);

    const Tensor cam3 = reshape(cam.probs, {s, h, w});
    const Tensor lid3 = reshape(lidar_probs, {s, h, w});
    const LabelImage& labels = sample->proj.label_image;

    loss::MaskedLoss cam_focal = loss::focal_loss(cam3, labels, cfg_.loss.focal_gamma, cfg_.loss.epsilon);
    loss::MaskedLoss cam_lovasz = loss::lovasz_softmax(cam3, labels);
    loss::MaskedLoss lid_focal = loss::focal_loss(lid3, labels, cfg_.loss.focal_gamma, cfg_.loss.epsilon);
    loss::MaskedLoss lid_lovasz = loss::lovasz_softmax(lid3, labels);

    Tensor cam_percept = Tensor::scalar(0.0);
    Tensor lid_percept = Tensor::scalar(0.0);
    if (cfg_.perception) {
      const Map2D conf_cam = loss::confidence_map(detach(cam3));
      const Map2D conf_lid = loss::confidence_map(detach(lid3));
      const Map2D omega_lid = loss::importance_lidar(conf_lid, conf_cam, cfg_.loss.tau);
      const Map2D omega_cam = loss::importance_camera(conf_cam, conf_lid, cfg_.loss.tau);
      const LabelImage* mask = cfg_.loss.perception_dense ? nullptr : &labels;
      lid_percept = loss::perception_loss(lid3, cam3, omega_lid, cfg_.loss.epsilon, mask);
      cam_percept = loss::perception_loss(cam3, lid3, omega_cam, cfg_.loss.epsilon, mask);
    }

    loss::StreamObjective cam_obj = loss::stream_objective(cam_focal, cam_lovasz, cam_percept, cfg_.loss);
    loss::StreamObjective lid_obj = loss::stream_objective(lid_focal, lid_lovasz, lid_percept, cfg_.loss);

    camera_total = camera_total.defined() ? add(camera_total, cam_obj.total) : cam_obj.total;
    lidar_total = lidar_total.defined() ? add(lidar_total, lid_obj.total) : lid_obj.total;

    cam_sum.focal += cam_obj.values.focal;
    cam_sum.lovasz += cam_obj.values.lovasz;
    cam_sum.perception += cam_obj.values.perception;
    lid_sum.focal += lid_obj.values.focal;
    lid_sum.lovasz += lid_obj.values.lovasz;
    lid_sum.perception += lid_obj.values.perception;
  }

  camera_total = affine(camera_total, inv_b, 0.0);
  lidar_total = affine(lidar_total, inv_b, 0.0);

  // Both gradients come from the same forward pass: backward the LiDAR
  // objective with the tape retained, snapshot its gradients, re-zero and
  // backward the camera objective, then apply both optimizers.
  zero_param_grads();
  backward(lidar_total, /*retain_tape=*/true);
  GradList lidar_grads = collect_grads(model_.lidar_parameters());

  Tape::current().zero_recorded_grads();
  zero_param_grads();
  backward(camera_total, /*retain_tape=*/false);
  GradList camera_grads = collect_grads(model_.camera_parameters());

  const double lr = cosine_lr(step_, cfg_.total_steps, cfg_.base_lr);
  adam_.step(model_.lidar_parameters(), lidar_grads, lr);
  if (!cfg_.freeze_camera) sgd_.step(model_.camera_parameters(), camera_grads, lr);
  ++step_;

  StepLog log;
  log.step = step_;
  log.lr = lr;
  log.camera.focal = cam_sum.focal * inv_b;
  log.camera.lovasz = cam_sum.lovasz * inv_b;
  log.camera.perception = cam_sum.perception * inv_b;
  log.camera.total = log.camera.focal + cfg_.loss.lambda_lovasz * log.camera.lovasz +
                     cfg_.loss.gamma_perception * log.camera.perception;
  log.lidar.focal = lid_sum.focal * inv_b;
  log.lidar.lovasz = lid_sum.lovasz * inv_b;
  log.lidar.perception = lid_sum.perception * inv_b;
  log.lidar.total = log.lidar.focal + cfg_.loss.lambda_lovasz * log.lidar.lovasz +
                    cfg_.loss.gamma_perception * log.lidar.perception;
  return log;
}

std::vector<StepLog> Trainer::run(const std::vector<TrainSample>& data) {
  if (data.empty()) throw ConfigError("Trainer::run: no training samples");
  std::vector<StepLog> logs;
  logs.reserve(static_cast<size_t>(cfg_.total_steps));
  size_t cursor = 0;
  for (int64_t s = 0; s < cfg_.total_steps; ++s) {
    std::vector<const TrainSample*> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int b = 0; b < cfg_.batch_size; ++b) {
      batch.push_back(&data[cursor]);
      cursor = (cursor + 1) % data.size();
    }
    logs.push_back(train_step(batch));
  }
  return logs;
}

}  // namespace pmf::train
