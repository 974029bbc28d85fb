#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pmf/cli.hpp"
#include "pmf/dataio.hpp"
#include "pmf/evalkit.hpp"
#include "pmf/geometry.hpp"
#include "pmf/gradcheck.hpp"

using namespace pmf;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "pmf_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PMF_CLI_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

cli::SynthDataOptions tiny_synth() {
  cli::SynthDataOptions s;
  s.scenes = 2;
  s.points = 500;
  s.height = 32;
  s.width = 32;
  s.classes = 4;
  return s;
}

}  // namespace

TEST_CASE("cmd_project writes the channel and label images deterministically") {
  const fs::path out1 = tmp_dir("project1");
  cli::ProjectOptions opts;
  opts.synthetic = true;
  opts.seed = 5;
  opts.synth = tiny_synth();
  opts.out_dir = out1.string();
  cli::cmd_project(opts);

  for (const char* name : {"feature_d.ppm", "feature_x.ppm", "feature_y.ppm",
                           "feature_z.ppm", "feature_r.ppm", "labels.ppm",
                           "manifest.json"}) {
    CHECK(fs::exists(out1 / name));
  }

  // valid-pixel count equals the z-buffered winners of the same scene
  io::ScanRecord rec = io::synth_scene_generate(5, 500, 32, 32, 4);
  geom::ProjectedScan scan =
      geom::perspective_project_cloud(rec.cloud, rec.labels, rec.calib);
  Tensor labels_img = io::read_ppm_image((out1 / "labels.ppm").string());
  size_t nonblack = 0;
  const size_t plane = 32 * 32;
  for (size_t p = 0; p < plane; ++p) {
    double mag = 0;
    for (int c = 0; c < 3; ++c) mag += labels_img.data()[c * plane + p];
    nonblack += (mag > 0);
  }
  CHECK(nonblack == scan.valid_count());

  const fs::path out2 = tmp_dir("project2");
  opts.out_dir = out2.string();
  cli::cmd_project(opts);
  for (const char* name : {"feature_d.ppm", "labels.ppm", "manifest.json"}) {
    CHECK(slurp(out1 / name) == slurp(out2 / name));
  }
}

TEST_CASE("cmd_project spherical mode keeps the point budget") {
  io::ScanRecord rec = io::synth_scene_generate(6, 400, 32, 32, 4);
  geom::ProjectedScan persp =
      geom::perspective_project_cloud(rec.cloud, rec.labels, rec.calib);
  geom::ProjectedScan sph =
      geom::spherical_project_cloud(rec.cloud, rec.labels, 60.0, -60.0, 32, 32);
  CHECK(persp.valid_count() > 0);
  CHECK(sph.valid_count() > 0);
  CHECK(sph.valid_mask != persp.valid_mask);
  std::set<int32_t> persp_points, sph_points;
  for (int32_t p : persp.pixel_to_point)
    if (p != kEmptyPixel) persp_points.insert(p);
  for (int32_t p : sph.pixel_to_point)
    if (p != kEmptyPixel) sph_points.insert(p);
  CHECK(persp_points.size() == persp.valid_count());
  CHECK(sph_points.size() == sph.valid_count());
  for (int32_t p : persp_points) CHECK(p < static_cast<int32_t>(rec.cloud.size()));
  for (int32_t p : sph_points) CHECK(p < static_cast<int32_t>(rec.cloud.size()));

  const fs::path out = tmp_dir("project_sph");
  cli::ProjectOptions opts;
  opts.synthetic = true;
  opts.seed = 6;
  opts.synth = tiny_synth();
  opts.mode = geom::ProjectionMode::kSpherical;
  opts.fov_up_deg = 60.0;
  opts.fov_down_deg = -60.0;
  opts.out_dir = out.string();
  cli::cmd_project(opts);
  CHECK(fs::exists(out / "feature_d.ppm"));
}

TEST_CASE("cmd_train learns, logs, and honors --no-pl") {
  const fs::path out = tmp_dir("train_basic");
  cli::TrainOptions opts;
  opts.synthetic = true;
  opts.synth = tiny_synth();
  opts.steps = 200;
  opts.seed = 3;
  opts.out_dir = out.string();
  cli::cmd_train(opts);

  CHECK(fs::exists(out / "checkpoint.pmf"));
  CHECK(fs::exists(out / "manifest.json"));
  std::ifstream csv(out / "train_log.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "step,lr,camera_focal,camera_lovasz,camera_perception,camera_total,"
        "lidar_focal,lidar_lovasz,lidar_perception,lidar_total");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(csv, line)) {
    std::vector<double> row;
    std::istringstream is(line);
    std::string cell;
    while (std::getline(is, cell, ',')) row.push_back(std::stod(cell));
    REQUIRE(row.size() == 10);
    rows.push_back(row);
  }
  REQUIRE(rows.size() == 200);
  CHECK(rows.back()[5] < rows.front()[5]);  // camera total decreased
  CHECK(rows.back()[9] < rows.front()[9]);  // lidar total decreased

  const fs::path out_nopl = tmp_dir("train_nopl");
  opts.no_perception = true;
  opts.steps = 25;
  opts.out_dir = out_nopl.string();
  cli::cmd_train(opts);
  std::ifstream csv2(out_nopl / "train_log.csv");
  std::getline(csv2, header);
  while (std::getline(csv2, line)) {
    std::vector<std::string> cells;
    std::istringstream is(line);
    std::string cell;
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    CHECK(cells[4] == "0");  // camera perception column
    CHECK(cells[8] == "0");  // lidar perception column
  }
}

TEST_CASE("cmd_train is byte-deterministic for a fixed seed") {
  cli::TrainOptions opts;
  opts.synthetic = true;
  opts.synth = tiny_synth();
  opts.steps = 30;
  opts.seed = 12;

  const fs::path a = tmp_dir("train_det_a");
  opts.out_dir = a.string();
  cli::cmd_train(opts);
  const fs::path b = tmp_dir("train_det_b");
  opts.out_dir = b.string();
  cli::cmd_train(opts);

  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
  CHECK(slurp(a / "checkpoint.pmf") == slurp(b / "checkpoint.pmf"));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
}

TEST_CASE("cmd_eval reports coherent metrics and confidence maps") {
  const fs::path train_out = tmp_dir("eval_train");
  cli::TrainOptions topts;
  topts.synthetic = true;
  topts.synth = tiny_synth();
  topts.steps = 60;
  topts.seed = 4;
  topts.out_dir = train_out.string();
  cli::cmd_train(topts);

  const fs::path eval_out = tmp_dir("eval_out");
  cli::EvalOptions eopts;
  eopts.checkpoint_path = (train_out / "checkpoint.pmf").string();
  eopts.synthetic = true;
  eopts.synth = tiny_synth();
  eopts.seed = 4;
  eopts.out_dir = eval_out.string();
  cli::cmd_eval(eopts);

  CHECK(fs::exists(eval_out / "iou.csv"));
  CHECK(fs::exists(eval_out / "distance_miou.csv"));
  CHECK(fs::exists(eval_out / "confidence_camera_000000.ppm"));
  CHECK(fs::exists(eval_out / "confidence_lidar_000001.ppm"));

  // miou line parses and lies in [0, 1]
  std::ifstream f(eval_out / "iou.csv");
  std::string line, last;
  while (std::getline(f, line)) {
    if (!line.empty()) last = line;
  }
  REQUIRE(last.rfind("miou,,", 0) == 0);
  const double miou = std::stod(last.substr(6));
  CHECK(miou >= 0.0);
  CHECK(miou <= 1.0);
}

TEST_CASE("evaluating the ground truth as prediction gives miou 1") {
  auto records = io::synth_dataset_generate(8, 2, 600, 32, 32, 4);
  eval::ConfusionMatrix cm(4);
  for (const auto& rec : records) {
    geom::ProjectedScan scan =
        geom::perspective_project_cloud(rec.cloud, rec.labels, rec.calib);
    auto gathered = geom::gather_point_predictions(scan.label_image, scan);
    // winners recover their own label; occluded points stay ignored
    std::vector<int32_t> truth = rec.labels;
    for (size_t i = 0; i < gathered.size(); ++i) {
      if (gathered[i] == kIgnoreLabel) truth[i] = kIgnoreLabel;
      else if (gathered[i] != rec.labels[i]) truth[i] = gathered[i];  // z-buffer loser
    }
    accumulate_confusion(cm, gathered, truth);
  }
  eval::IouReport rep = iou_report(cm);
  CHECK_FALSE(rep.empty);
  CHECK(rep.miou == 1.0);
}

TEST_CASE("confidence rendering contract: byte = round(255 * value)") {
  Map2D m(1, 3);
  m.v = {0.0, 0.5012, 1.0};
  const fs::path out = tmp_dir("conf_render");
  io::write_ppm_gray((out / "c.ppm").string(), m);
  Tensor back = io::read_ppm_image((out / "c.ppm").string());
  CHECK(back.data()[0] == 0.0);
  CHECK(back.data()[1] == doctest::Approx(std::lround(0.5012 * 255.0) / 255.0).epsilon(1e-12));
  CHECK(back.data()[2] == 1.0);
}

TEST_CASE("cli binary exit codes") {
  CHECK(run_cli("--definitely-not-a-flag") == cli::kExitUsage);
  CHECK(run_cli("project --out /tmp/pmf_cli_tests/exit_data --scan /nope.bin --calib /nope.txt") ==
        cli::kExitData);
  CHECK(run_cli("train --out /tmp/pmf_cli_tests/exit_usage") == cli::kExitUsage);
  CHECK(run_cli("project --synthetic --seed 2 --points 200 --out /tmp/pmf_cli_tests/exit_ok") ==
        cli::kExitOk);
}

TEST_CASE("gradcheck passes clean and fails when sigmoid backward is corrupted") {
  cli::GradcheckOptions opts;
  opts.seed = 2;
  CHECK_NOTHROW(cli::cmd_gradcheck(opts));
  opts.corrupt_sigmoid = true;
  CHECK_THROWS_AS(cli::cmd_gradcheck(opts), CheckError);
}

TEST_CASE("gradcheck covers every op exactly once") {
  const auto reports = gradcheck::run_all(3);
  std::set<std::string> names;
  for (const auto& r : reports) names.insert(r.op);
  CHECK(names.size() == reports.size());
  for (const char* required :
       {"conv2d", "softmax_channel", "sigmoid", "concat_channel", "mul", "maxpool2",
        "upsample_nearest2", "detach", "rf_fuse", "aspp_forward", "camera_forward",
        "lidar_forward", "focal_loss", "lovasz_softmax", "perception_loss",
        "objective_lidar", "objective_camera", "objective_no_perception"}) {
    CHECK(names.count(required) == 1);
  }
}

TEST_CASE("worker count honors PMF_NUM_THREADS") {
  setenv("PMF_NUM_THREADS", "1", 1);
  CHECK(worker_count() == 1);
  unsetenv("PMF_NUM_THREADS");
  CHECK(worker_count() >= 1);
}

TEST_CASE("cmd_synth materializes a loadable dataset") {
  const fs::path out = tmp_dir("synth_ds");
  cli::SynthOptions opts;
  opts.seed = 10;
  opts.synth = tiny_synth();
  opts.out_dir = out.string();
  cli::cmd_synth(opts);
  io::LabelMap map;
  auto records = io::load_dataset(out.string(), &map);
  CHECK(records.size() == 2);
  CHECK(map.num_classes() == 4);

  // the saved dataset drives file-mode training
  const fs::path train_out = tmp_dir("synth_train");
  cli::TrainOptions topts;
  topts.data_dir = out.string();
  topts.steps = 5;
  topts.seed = 2;
  topts.out_dir = train_out.string();
  cli::cmd_train(topts);
  CHECK(fs::exists(train_out / "checkpoint.pmf"));
}

TEST_CASE("project command reads file fixtures") {
  const fs::path ds = tmp_dir("proj_files");
  cli::SynthOptions sopts;
  sopts.seed = 14;
  sopts.synth = tiny_synth();
  sopts.out_dir = ds.string();
  cli::cmd_synth(sopts);

  const fs::path out = tmp_dir("proj_from_files");
  cli::ProjectOptions popts;
  popts.scan_path = (ds / "velodyne" / "000000.bin").string();
  popts.labels_path = (ds / "labels" / "000000.label").string();
  popts.calib_path = (ds / "calib.txt").string();
  popts.out_dir = out.string();
  cli::cmd_project(popts);
  CHECK(fs::exists(out / "labels.ppm"));
}
