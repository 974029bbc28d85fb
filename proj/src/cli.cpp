#include "pmf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <thread>

#include <json.hpp>

#include "pmf/dataio.hpp"
#include "pmf/evalkit.hpp"
#include "pmf/gradcheck.hpp"
#include "pmf/losses.hpp"
#include "pmf/network.hpp"

namespace fs = std::filesystem;

namespace pmf::cli {

namespace {

// Fixed-slot parallel map: results land by index, so output order never
// depends on scheduling.
void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const int workers = std::min<size_t>(worker_count(), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t]() {
      NoGradGuard guard;
      for (size_t i = static_cast<size_t>(t); i < n; i += static_cast<size_t>(workers)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("output directory is required");
  fs::create_directories(out_dir);
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& canonical_config,
                    const std::vector<std::string>& artifacts) {
  nlohmann::json m;
  m["command"] = command;
  m["config_hash"] = config_hash(canonical_config);
  m["artifacts"] = artifacts;
  std::ofstream f(fs::path(out_dir) / "manifest.json", std::ios::trunc);
  if (!f) throw DataError("cannot write manifest in " + out_dir);
  f << m.dump(2) << "\n";
}

Map2D channel_map(const geom::ProjectedScan& scan, int channel) {
  Map2D out(scan.height, scan.width);
  const auto& d = scan.features.data();
  const size_t plane = out.v.size();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (size_t p = 0; p < plane; ++p) {
    if (!scan.valid_mask[p]) continue;
    lo = std::min(lo, d[channel * plane + p]);
    hi = std::max(hi, d[channel * plane + p]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  for (size_t p = 0; p < plane; ++p) {
    out.v[p] = scan.valid_mask[p] ? (d[channel * plane + p] - lo) / span : 0.0;
  }
  return out;
}

void write_label_ppm(const std::string& path, const LabelImage& labels) {
  Tensor img = Tensor::zeros({3, labels.height, labels.width});
  auto& d = img.data();
  const size_t plane = labels.ids.size();
  static const int palette[][3] = {
      {45, 45, 45},   {230, 70, 60},  {70, 200, 80},  {65, 90, 235},
      {240, 200, 50}, {180, 60, 200}, {60, 210, 210}, {245, 140, 40},
  };
  for (size_t p = 0; p < plane; ++p) {
    const int32_t id = labels.ids[p];
    if (id == kIgnoreLabel) continue;
    const int* c = palette[id % 8];
    d[0 * plane + p] = c[0] / 255.0;
    d[1 * plane + p] = c[1] / 255.0;
    d[2 * plane + p] = c[2] / 255.0;
  }
  io::write_ppm_image(path, img);
}

std::vector<io::ScanRecord> load_records(bool synthetic, const SynthDataOptions& synth,
                                         uint64_t seed, const std::string& data_dir,
                                         io::LabelMap* label_map_out) {
  if (synthetic) {
    if (label_map_out) *label_map_out = io::LabelMap::identity(synth.classes);
    return io::synth_dataset_generate(seed, synth.scenes, synth.points, synth.height,
                                      synth.width, synth.classes);
  }
  if (data_dir.empty()) throw ConfigError("either --synthetic or a data directory is required");
  return io::load_dataset(data_dir, label_map_out);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string config_hash(const std::string& canonical) {
  // FNV-1a, stable across runs and platforms.
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void cmd_project(const ProjectOptions& opts) {
  ensure_out_dir(opts.out_dir);

  io::ScanRecord record;
  if (opts.synthetic) {
    record = io::synth_scene_generate(opts.seed, opts.synth.points, opts.synth.height,
                                      opts.synth.width, opts.synth.classes);
  } else {
    if (opts.scan_path.empty() || opts.calib_path.empty()) {
      throw ConfigError("project: --scan and --calib are required without --synthetic");
    }
    record.cloud = io::read_velodyne_bin(opts.scan_path);
    record.calib = io::read_calibration(opts.calib_path);
    if (record.calib.image_height <= 0) {
      throw DataError("project: calibration has no SIZE entry");
    }
    if (!opts.labels_path.empty()) {
      const auto raw = io::read_labels(opts.labels_path);
      if (raw.size() != record.cloud.size()) {
        throw DataError("project: label count does not match point count");
      }
      record.labels.assign(raw.begin(), raw.end());
    }
  }

  geom::ProjectedScan scan;
  if (opts.mode == geom::ProjectionMode::kPerspective) {
    scan = geom::perspective_project_cloud(record.cloud, record.labels, record.calib);
  } else {
    scan = geom::spherical_project_cloud(record.cloud, record.labels, opts.fov_up_deg,
                                         opts.fov_down_deg, record.calib.image_height,
                                         record.calib.image_width);
  }

  static const char* kChannels[5] = {"d", "x", "y", "z", "r"};
  std::vector<std::string> artifacts;
  for (int c = 0; c < 5; ++c) {
    const std::string name = std::string("feature_") + kChannels[c] + ".ppm";
    io::write_ppm_gray((fs::path(opts.out_dir) / name).string(), channel_map(scan, c));
    artifacts.push_back(name);
  }
  write_label_ppm((fs::path(opts.out_dir) / "labels.ppm").string(), scan.label_image);
  artifacts.push_back("labels.ppm");

  std::ostringstream canon;
  canon << "project mode=" << (opts.mode == geom::ProjectionMode::kPerspective ? "perspective" : "spherical")
        << " synthetic=" << opts.synthetic << " seed=" << opts.seed
        << " scan=" << opts.scan_path << " valid=" << scan.valid_count();
  write_manifest(opts.out_dir, "project", canon.str(), artifacts);
}

train::TrainConfig resolve_train_config(const TrainOptions& opts) {
  train::TrainConfig cfg;
  if (!opts.config_path.empty()) cfg = train::TrainConfig::load(opts.config_path);
  if (opts.tau) cfg.loss.tau = *opts.tau;
  if (opts.gamma) cfg.loss.gamma_perception = *opts.gamma;
  if (opts.lambda) cfg.loss.lambda_lovasz = *opts.lambda;
  if (opts.steps) cfg.total_steps = *opts.steps;
  if (opts.batch_size) cfg.batch_size = *opts.batch_size;
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.no_fusion) cfg.fusion = false;
  if (opts.no_perception) cfg.perception = false;
  if (opts.spherical) cfg.projection = geom::ProjectionMode::kSpherical;
  if (opts.synthetic) cfg.network.num_classes = opts.synth.classes;
  cfg.validate();
  return cfg;
}

void cmd_train(const TrainOptions& opts) {
  ensure_out_dir(opts.out_dir);
  train::TrainConfig cfg = resolve_train_config(opts);

  io::LabelMap label_map;
  std::vector<io::ScanRecord> records =
      load_records(opts.synthetic, opts.synth, cfg.seed, opts.data_dir, &label_map);
  if (!opts.synthetic) cfg.network.num_classes = label_map.num_classes();
  cfg.validate();

  const std::vector<train::TrainSample> samples = train::prepare_dataset(records, cfg);
  net::TSNet model(cfg.network, cfg.seed);
  train::Trainer trainer(model, cfg);
  const std::vector<train::StepLog> logs = trainer.run(samples);

  const fs::path csv_path = fs::path(opts.out_dir) / "train_log.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw DataError("cannot write training log: " + csv_path.string());
  csv << "step,lr,camera_focal,camera_lovasz,camera_perception,camera_total,"
         "lidar_focal,lidar_lovasz,lidar_perception,lidar_total\n";
  for (const auto& log : logs) {
    csv << log.step << "," << format_double(log.lr) << "," << format_double(log.camera.focal)
        << "," << format_double(log.camera.lovasz) << ","
        << format_double(log.camera.perception) << "," << format_double(log.camera.total)
        << "," << format_double(log.lidar.focal) << "," << format_double(log.lidar.lovasz)
        << "," << format_double(log.lidar.perception) << "," << format_double(log.lidar.total)
        << "\n";
  }
  csv.close();

  std::map<std::string, std::string> extra;
  extra["train_config"] = cfg.canonical_string();
  model.save_checkpoint((fs::path(opts.out_dir) / "checkpoint.pmf").string(), extra);
  cfg.save((fs::path(opts.out_dir) / "config.txt").string());

  write_manifest(opts.out_dir, "train", cfg.canonical_string(),
                 {"train_log.csv", "checkpoint.pmf", "config.txt"});
}

void cmd_eval(const EvalOptions& opts) {
  ensure_out_dir(opts.out_dir);
  std::map<std::string, std::string> extra;
  net::TSNet model = net::TSNet::load_checkpoint(opts.checkpoint_path, &extra);
  auto it = extra.find("train_config");
  if (it == extra.end()) throw DataError("checkpoint carries no training configuration");
  train::TrainConfig cfg = train::TrainConfig::from_string(it->second);

  io::LabelMap label_map;
  std::vector<io::ScanRecord> records =
      load_records(opts.synthetic, opts.synth, opts.seed, opts.data_dir, &label_map);
  if (label_map.num_classes() != cfg.network.num_classes) {
    throw DataError("checkpoint/config mismatch: dataset classes differ from checkpoint");
  }
  const std::vector<train::TrainSample> samples = train::prepare_dataset(records, cfg);

  const int s = cfg.network.num_classes;
  struct ScanResult {
    std::vector<int32_t> pred;
    Map2D conf_cam, conf_lid;
  };
  std::vector<ScanResult> results(samples.size());
  parallel_for(samples.size(), [&](size_t i) {
    NoGradGuard guard;
    const train::TrainSample& sample = samples[i];
    const int h = sample.scan.image.dim(1), w = sample.scan.image.dim(2);
    const Tensor image4 = reshape(sample.scan.image, {1, 3, h, w});
    const Tensor lidar4 = reshape(sample.proj.features, {1, 5, h, w});
    net::CameraOutput cam = model.camera_forward(image4);
    Tensor lid = model.lidar_forward(lidar4, cfg.fusion ? &cam.features : nullptr, cfg.fusion);
    const Tensor cam3 = reshape(cam.probs, {s, h, w});
    const Tensor lid3 = reshape(lid, {s, h, w});
    results[i].pred = geom::gather_point_predictions(eval::argmax_image(lid3), sample.proj);
    results[i].conf_cam = loss::confidence_map(cam3);
    results[i].conf_lid = loss::confidence_map(lid3);
  });

  eval::ConfusionMatrix global(s);
  std::vector<int32_t> all_pred, all_truth;
  geom::PointCloud all_points;
  std::vector<std::string> artifacts;
  for (size_t i = 0; i < samples.size(); ++i) {
    accumulate_confusion(global, results[i].pred, samples[i].scan.labels);
    all_pred.insert(all_pred.end(), results[i].pred.begin(), results[i].pred.end());
    all_truth.insert(all_truth.end(), samples[i].scan.labels.begin(), samples[i].scan.labels.end());
    all_points.points.insert(all_points.points.end(), samples[i].scan.cloud.points.begin(),
                             samples[i].scan.cloud.points.end());
    const std::string cam_name = "confidence_camera_" + samples[i].scan.scan_id + ".ppm";
    const std::string lid_name = "confidence_lidar_" + samples[i].scan.scan_id + ".ppm";
    io::write_ppm_gray((fs::path(opts.out_dir) / cam_name).string(), results[i].conf_cam);
    io::write_ppm_gray((fs::path(opts.out_dir) / lid_name).string(), results[i].conf_lid);
    artifacts.push_back(cam_name);
    artifacts.push_back(lid_name);
  }

  const eval::IouReport report = eval::iou_report(global);
  {
    std::ofstream f(fs::path(opts.out_dir) / "iou.csv", std::ios::trunc);
    if (!f) throw DataError("cannot write iou.csv");
    f << "class,name,iou\n";
    for (int c = 0; c < s; ++c) {
      f << c << "," << label_map.class_names[static_cast<size_t>(c)] << ",";
      if (report.included[static_cast<size_t>(c)]) f << format_double(report.iou[static_cast<size_t>(c)]);
      f << "\n";
    }
    f << "miou,," << format_double(report.miou) << "\n";
  }
  artifacts.push_back("iou.csv");

  const std::vector<double> edges =
      opts.bin_edges.empty() ? eval::default_distance_edges() : opts.bin_edges;
  const eval::DistanceBinsReport bins =
      eval::distance_binned_miou(all_pred, all_truth, all_points, edges);
  {
    std::ofstream f(fs::path(opts.out_dir) / "distance_miou.csv", std::ios::trunc);
    if (!f) throw DataError("cannot write distance_miou.csv");
    f << "bin_low,bin_high,miou\n";
    for (size_t k = 0; k < bins.bins.size(); ++k) {
      f << format_double(bins.edges[k]) << ",";
      if (k + 1 < bins.edges.size()) f << format_double(bins.edges[k + 1]);
      else f << "inf";
      f << "," << format_double(bins.reports[k].empty ? 0.0 : bins.reports[k].miou) << "\n";
    }
  }
  artifacts.push_back("distance_miou.csv");

  std::ostringstream canon;
  canon << "eval checkpoint=" << opts.checkpoint_path << " synthetic=" << opts.synthetic
        << " seed=" << opts.seed << "\n" << cfg.canonical_string();
  write_manifest(opts.out_dir, "eval", canon.str(), artifacts);
}

void cmd_gradcheck(const GradcheckOptions& opts) {
  testhook::set_corrupt_sigmoid_backward(opts.corrupt_sigmoid);
  std::vector<gradcheck::OpReport> reports;
  try {
    reports = gradcheck::run_all(opts.seed);
  } catch (...) {
    testhook::set_corrupt_sigmoid_backward(false);
    throw;
  }
  testhook::set_corrupt_sigmoid_backward(false);

  std::printf("%-28s %-14s %s\n", "op", "max_rel_err", "status");
  for (const auto& r : reports) {
    std::printf("%-28s %-14.3e %s\n", r.op.c_str(), r.max_rel_err, r.pass ? "ok" : "FAIL");
  }
  if (!gradcheck::all_pass(reports)) {
    throw CheckError("gradient check failed");
  }
}

void cmd_synth(const SynthOptions& opts) {
  ensure_out_dir(opts.out_dir);
  const auto records = io::synth_dataset_generate(opts.seed, opts.synth.scenes, opts.synth.points,
                                                  opts.synth.height, opts.synth.width,
                                                  opts.synth.classes);
  io::save_dataset(opts.out_dir, records, io::LabelMap::identity(opts.synth.classes));
  std::ostringstream canon;
  canon << "synth seed=" << opts.seed << " scenes=" << opts.synth.scenes
        << " points=" << opts.synth.points << " size=" << opts.synth.height << "x"
        << opts.synth.width << " classes=" << opts.synth.classes;
  std::vector<std::string> artifacts = {"calib.txt", "labelmap.txt"};
  for (const auto& r : records) {
    artifacts.push_back("velodyne/" + r.scan_id + ".bin");
    artifacts.push_back("labels/" + r.scan_id + ".label");
    artifacts.push_back("image/" + r.scan_id + ".ppm");
  }
  write_manifest(opts.out_dir, "synth", canon.str(), artifacts);
}

}  // namespace pmf::cli
