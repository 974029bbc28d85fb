#include <CLI11.hpp>

#include <iostream>

#include "pmf/cli.hpp"
#include "pmf/common.hpp"

namespace {

void add_synth_options(CLI::App* cmd, pmf::cli::SynthDataOptions& synth) {
  cmd->add_option("--scenes", synth.scenes, "Number of synthetic scenes");
  cmd->add_option("--points", synth.points, "Points per synthetic scene");
  cmd->add_option("--height", synth.height, "Synthetic image height");
  cmd->add_option("--width", synth.width, "Synthetic image width");
  cmd->add_option("--classes", synth.classes, "Number of classes");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera-LiDAR fusion segmentation pipeline"};
  app.require_subcommand(1);

  pmf::cli::ProjectOptions project;
  std::string project_mode = "perspective";
  CLI::App* cmd_project = app.add_subcommand("project", "Project a scan to image space");
  cmd_project->add_option("--scan", project.scan_path, "Velodyne .bin scan");
  cmd_project->add_option("--calib", project.calib_path, "Calibration file");
  cmd_project->add_option("--labels", project.labels_path, "Per-point .label file");
  cmd_project->add_flag("--synthetic", project.synthetic, "Use a generated scene");
  cmd_project->add_option("--seed", project.seed, "Random seed");
  cmd_project->add_option("--mode", project_mode, "perspective|spherical")
      ->check(CLI::IsMember({"perspective", "spherical"}));
  cmd_project->add_flag_callback("--spherical",
                                 [&project_mode]() { project_mode = "spherical"; },
                                 "Shortcut for --mode spherical");
  cmd_project->add_option("--fov-up", project.fov_up_deg, "Spherical FOV up (degrees)");
  cmd_project->add_option("--fov-down", project.fov_down_deg, "Spherical FOV down (degrees)");
  cmd_project->add_option("--out", project.out_dir, "Output directory")->required();
  add_synth_options(cmd_project, project.synth);

  pmf::cli::TrainOptions train;
  double train_tau = 0, train_gamma = 0, train_lambda = 0;
  int train_steps = 0, train_batch = 0;
  uint64_t train_seed = 0;
  CLI::App* cmd_train = app.add_subcommand("train", "Train the two-stream network");
  cmd_train->add_option("--config", train.config_path, "Key/value config file");
  cmd_train->add_option("--data", train.data_dir, "Dataset directory");
  cmd_train->add_flag("--synthetic", train.synthetic, "Train on generated scenes");
  auto* tau_opt = cmd_train->add_option("--tau", train_tau, "Confidence threshold");
  auto* gamma_opt = cmd_train->add_option("--gamma", train_gamma, "Perception loss weight");
  auto* lambda_opt = cmd_train->add_option("--lambda", train_lambda, "Lovasz loss weight");
  auto* steps_opt = cmd_train->add_option("--steps", train_steps, "Training steps");
  auto* batch_opt = cmd_train->add_option("--batch", train_batch, "Batch size");
  auto* seed_opt = cmd_train->add_option("--seed", train_seed, "Random seed");
  cmd_train->add_flag("--no-fusion", train.no_fusion, "Disable residual fusion modules");
  cmd_train->add_flag("--no-pl", train.no_perception, "Disable perception-aware losses");
  cmd_train->add_flag("--spherical", train.spherical, "Use spherical projection");
  cmd_train->add_option("--out", train.out_dir, "Output directory")->required();
  add_synth_options(cmd_train, train.synth);

  pmf::cli::EvalOptions eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  cmd_eval->add_option("--checkpoint", eval.checkpoint_path, "Checkpoint file")->required();
  cmd_eval->add_option("--data", eval.data_dir, "Dataset directory");
  cmd_eval->add_flag("--synthetic", eval.synthetic, "Evaluate on generated scenes");
  cmd_eval->add_option("--seed", eval.seed, "Random seed for synthetic data");
  cmd_eval->add_option("--bins", eval.bin_edges, "Distance bin edges (meters)");
  cmd_eval->add_option("--out", eval.out_dir, "Output directory")->required();
  add_synth_options(cmd_eval, eval.synth);

  pmf::cli::GradcheckOptions gradcheck;
  CLI::App* cmd_gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  cmd_gradcheck->add_option("--seed", gradcheck.seed, "Random seed");
  cmd_gradcheck->add_flag("--corrupt-sigmoid", gradcheck.corrupt_sigmoid,
                          "Corrupt the sigmoid backward rule (failure-path hook)");

  pmf::cli::SynthOptions synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "Write a synthetic dataset to disk");
  cmd_synth->add_option("--seed", synth.seed, "Random seed");
  cmd_synth->add_option("--out", synth.out_dir, "Output directory")->required();
  add_synth_options(cmd_synth, synth.synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? pmf::cli::kExitOk : pmf::cli::kExitUsage;
  }

  try {
    if (cmd_project->parsed()) {
      project.mode = project_mode == "spherical" ? pmf::geom::ProjectionMode::kSpherical
                                                 : pmf::geom::ProjectionMode::kPerspective;
      pmf::cli::cmd_project(project);
    } else if (cmd_train->parsed()) {
      if (tau_opt->count()) train.tau = train_tau;
      if (gamma_opt->count()) train.gamma = train_gamma;
      if (lambda_opt->count()) train.lambda = train_lambda;
      if (steps_opt->count()) train.steps = train_steps;
      if (batch_opt->count()) train.batch_size = train_batch;
      if (seed_opt->count()) train.seed = train_seed;
      pmf::cli::cmd_train(train);
    } else if (cmd_eval->parsed()) {
      pmf::cli::cmd_eval(eval);
    } else if (cmd_gradcheck->parsed()) {
      pmf::cli::cmd_gradcheck(gradcheck);
    } else if (cmd_synth->parsed()) {
      pmf::cli::cmd_synth(synth);
    }
  } catch (const pmf::CheckError& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return pmf::cli::kExitCheck;
  } catch (const pmf::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return pmf::cli::kExitUsage;
  } catch (const pmf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pmf::cli::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pmf::cli::kExitData;
  }
  return pmf::cli::kExitOk;
}
