#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmf/geometry.hpp"
#include "pmf/train.hpp"

namespace pmf::cli {

struct SynthDataOptions {
  int scenes = 8;
  int points = 1800;
  int height = 32;
  int width = 32;
  int classes = 4;
};

struct ProjectOptions {
  std::string scan_path;
  std::string calib_path;
  std::string labels_path;
  bool synthetic = false;
  uint64_t seed = 1;
  SynthDataOptions synth;
  geom::ProjectionMode mode = geom::ProjectionMode::kPerspective;
  double fov_up_deg = 16.0;
  double fov_down_deg = -16.0;
  std::string out_dir;
};

struct TrainOptions {
  std::string config_path;  // optional key/value file
  std::string data_dir;     // KITTI-style dataset directory
  bool synthetic = false;
  SynthDataOptions synth;
  std::string out_dir;

  // Ablation / hyperparameter overrides (Table-style axes as flags).
  std::optional<double> tau, gamma, lambda;
  std::optional<int> steps, batch_size;
  std::optional<uint64_t> seed;
  bool no_fusion = false;
  bool no_perception = false;
  bool spherical = false;
};

struct EvalOptions {
  std::string checkpoint_path;
  std::string data_dir;
  bool synthetic = false;
  SynthDataOptions synth;
  uint64_t seed = 1;
  std::vector<double> bin_edges;  // empty -> defaults
  std::string out_dir;
};

struct GradcheckOptions {
  uint64_t seed = 1;
  bool corrupt_sigmoid = false;  // failure-path hook
};

struct SynthOptions {
  uint64_t seed = 1;
  SynthDataOptions synth;
  std::string out_dir;
};

void cmd_project(const ProjectOptions& opts);
void cmd_train(const TrainOptions& opts);
void cmd_eval(const EvalOptions& opts);
// Throws CheckError when any op fails its tolerance.
void cmd_gradcheck(const GradcheckOptions& opts);
void cmd_synth(const SynthOptions& opts);

// Resolved training configuration after file + override application.
train::TrainConfig resolve_train_config(const TrainOptions& opts);

std::string config_hash(const std::string& canonical);

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCheck = 3;

}  // namespace pmf::cli
