#pragma once

#include <map>
#include <string>
#include <vector>

#include "pmf/common.hpp"
#include "pmf/tensor.hpp"

namespace pmf::net {

struct NetworkConfig {
  int num_classes = 4;
  int camera_channels = 3;
  int lidar_channels = 5;
  std::vector<int> camera_widths = {8, 16, 32};
  std::vector<int> lidar_widths = {8, 16, 32};
  std::vector<int> aspp_dilations = {1, 2, 4};

  int levels() const { return static_cast<int>(camera_widths.size()); }
  void validate() const;

  std::map<std::string, std::string> to_entries() const;
  static NetworkConfig from_entries(const std::map<std::string, std::string>& entries);
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ConvLayer {
  Tensor weight;  // [Cout,Cin,k,k]
  Tensor bias;    // [Cout]
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  Tensor forward(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, padding, dilation);
  }
};

// Residual fusion: F_fuse = reduce([lidar; camera]),
// out = lidar + sigmoid(attention(F_fuse)) * F_fuse.
struct RFModule {
  ConvLayer reduce;     // (C_lidar + C_camera) -> C_lidar, 1x1
  ConvLayer attention;  // C_lidar -> C_lidar, 1x1
};

Tensor rf_fuse(const Tensor& lidar_feat, const Tensor& camera_feat, const RFModule& module);

// Parallel dilated 3x3 branches (padding = dilation keeps the extent),
// summed and projected back by 1x1.
struct AsppBlock {
  std::vector<ConvLayer> branches;
  ConvLayer project;
  std::vector<int> dilations;
};

Tensor aspp_forward(const Tensor& x, const AsppBlock& block);

struct CameraOutput {
  Tensor probs;                  // [B,S,H,W]
  std::vector<Tensor> features;  // encoder outputs, finest level first
};

// Two-stream segmentation network: tiny mirrored encoder-decoders with a
// residual fusion module per encoder level feeding the LiDAR stream.
class TSNet {
 public:
  TSNet(NetworkConfig cfg, uint64_t seed);

  CameraOutput camera_forward(const Tensor& image) const;
  Tensor lidar_forward(const Tensor& lidar_input, const std::vector<Tensor>* camera_features,
                       bool fusion_enabled) const;

  std::vector<NamedParam>& camera_parameters() { return camera_params_; }
  std::vector<NamedParam>& lidar_parameters() { return lidar_params_; }
  const std::vector<NamedParam>& camera_parameters() const { return camera_params_; }
  const std::vector<NamedParam>& lidar_parameters() const { return lidar_params_; }
  size_t parameter_count() const;

  const NetworkConfig& config() const { return cfg_; }

  void save_checkpoint(const std::string& path,
                       const std::map<std::string, std::string>& extra = {}) const;
  static TSNet load_checkpoint(const std::string& path,
                               std::map<std::string, std::string>* extra_out = nullptr);

 private:
  NetworkConfig cfg_;
  std::vector<ConvLayer> camera_enc_, camera_dec_;
  ConvLayer camera_head_;
  std::vector<ConvLayer> lidar_enc_, lidar_dec_;
  ConvLayer lidar_head_;
  std::vector<RFModule> rf_modules_;
  AsppBlock aspp_;
  std::vector<NamedParam> camera_params_;
  std::vector<NamedParam> lidar_params_;

  void register_params();
};

}  // namespace pmf::net
