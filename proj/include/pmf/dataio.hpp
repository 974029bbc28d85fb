#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pmf/common.hpp"
#include "pmf/geometry.hpp"
#include "pmf/tensor.hpp"

namespace pmf::io {

// One training sample: raw points, per-point train-id labels, RGB image,
// and the calibration tying them together.
struct ScanRecord {
  geom::PointCloud cloud;
  std::vector<int32_t> labels;
  Tensor image;  // [3,H,W], values in [0,1]
  geom::Calibration calib;
  std::string scan_id;
};

// Raw dataset label id -> contiguous train id (or kIgnoreLabel).
struct LabelMap {
  std::unordered_map<uint32_t, int32_t> raw_to_train;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int32_t map(uint32_t raw) const {
    auto it = raw_to_train.find(raw);
    return it == raw_to_train.end() ? kIgnoreLabel : it->second;
  }

  static LabelMap identity(int num_classes);
  static LabelMap load(const std::string& path);
  void save(const std::string& path) const;
};

// --- Binary scan files: 16-byte records of 4 little-endian float32 -------
geom::PointCloud read_velodyne_bin(const std::string& path);
void write_velodyne_bin(const std::string& path, const geom::PointCloud& cloud);

// --- Label files: 4-byte little-endian records, class id in low 16 bits --
std::vector<uint32_t> read_labels(const std::string& path);
void write_labels(const std::string& path, const std::vector<uint32_t>& raw_labels);

// --- Calibration: ASCII "KEY: v1 v2 ..." lines ---------------------------
// Requires a projection-matrix key (T / Tr / Tr_velo_to_cam, 12 values) and
// a rectifying-rotation key (R0 / R0_rect / R_rect, 9 values). An optional
// SIZE key (H W) carries the image extent.
geom::Calibration read_calibration(const std::string& path);
void write_calibration(const std::string& path, const geom::Calibration& calib);

// --- Images: binary PPM (P6), maxval 255 ---------------------------------
Tensor read_ppm_image(const std::string& path);
void write_ppm_image(const std::string& path, const Tensor& image);
// Grayscale [0,1] map rendered as round(255 * v) on all three channels.
void write_ppm_gray(const std::string& path, const Map2D& map);

// --- Synthetic scenes -----------------------------------------------------
// Deterministic desk-scale scene: colored blobs in the image with matching
// 3-D points, so appearance and labels genuinely agree.
ScanRecord synth_scene_generate(uint64_t seed, int num_points, int image_height,
                                int image_width, int num_classes);

// Fixed synthetic dataset. Scenes come in geometry-identical pairs whose
// two highest class ids are swapped and share one reflectance band, so
// those classes can only be told apart by image color; class 1 keeps a
// distinctive reflectance and stays learnable from LiDAR alone.
std::vector<ScanRecord> synth_dataset_generate(uint64_t seed, int num_scenes,
                                               int num_points, int image_height,
                                               int image_width, int num_classes);

// --- Dataset directories ---------------------------------------------------
// Layout: <dir>/velodyne/<id>.bin, <dir>/labels/<id>.label,
// <dir>/image/<id>.ppm, <dir>/calib.txt, <dir>/labelmap.txt.
void save_dataset(const std::string& dir, const std::vector<ScanRecord>& records,
                  const LabelMap& label_map);
std::vector<ScanRecord> load_dataset(const std::string& dir, LabelMap* label_map_out = nullptr);

}  // namespace pmf::io
