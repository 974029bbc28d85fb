#include "pmf/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pmf/rng.hpp"

namespace fs = std::filesystem;

namespace pmf::io {

namespace {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff size = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw DataError("failed reading file: " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open file for writing: " + path);
  if (!bytes.empty()) f.write(reinterpret_cast<const char*>(bytes.data()),
                              static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing file: " + path);
}

uint32_t decode_u32_le(const unsigned char* b) {
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void encode_u32_le(uint32_t v, unsigned char* b) {
  b[0] = static_cast<unsigned char>(v & 0xFF);
  b[1] = static_cast<unsigned char>((v >> 8) & 0xFF);
  b[2] = static_cast<unsigned char>((v >> 16) & 0xFF);
  b[3] = static_cast<unsigned char>((v >> 24) & 0xFF);
}

float decode_f32_le(const unsigned char* b) {
  return std::bit_cast<float>(decode_u32_le(b));
}

void encode_f32_le(float v, unsigned char* b) {
  encode_u32_le(std::bit_cast<uint32_t>(v), b);
}

}  // namespace

LabelMap LabelMap::identity(int num_classes) {
  if (num_classes < 1) throw ConfigError("LabelMap: need at least one class");
  LabelMap m;
  for (int i = 0; i < num_classes; ++i) {
    m.raw_to_train[static_cast<uint32_t>(i)] = i;
    m.class_names.push_back("class" + std::to_string(i));
  }
  return m;
}

LabelMap LabelMap::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open label map: " + path);
  LabelMap m;
  std::vector<std::pair<int32_t, std::string>> train_entries;
  std::string line;
  int32_t max_train = -1;
  while (std::getline(f, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    uint32_t raw;
    int32_t train;
    if (!(is >> raw >> train)) continue;
    std::string name;
    is >> name;
    m.raw_to_train[raw] = train;
    if (train >= 0) {
      train_entries.emplace_back(train, name);
      max_train = std::max(max_train, train);
    }
  }
  if (max_train < 0) throw DataError("label map has no trainable classes: " + path);
  m.class_names.assign(static_cast<size_t>(max_train) + 1, "");
  std::set<int32_t> seen;
  for (auto& [train, name] : train_entries) {
    seen.insert(train);
    if (!name.empty()) m.class_names[static_cast<size_t>(train)] = name;
  }
  if (static_cast<int32_t>(seen.size()) != max_train + 1) {
    throw DataError("label map train ids are not contiguous: " + path);
  }
  for (size_t i = 0; i < m.class_names.size(); ++i) {
    if (m.class_names[i].empty()) m.class_names[i] = "class" + std::to_string(i);
  }
  return m;
}

void LabelMap::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write label map: " + path);
  std::vector<std::pair<uint32_t, int32_t>> entries(raw_to_train.begin(), raw_to_train.end());
  std::sort(entries.begin(), entries.end());
  for (auto& [raw, train] : entries) {
    f << raw << " " << train;
    if (train >= 0 && train < num_classes()) f << " " << class_names[static_cast<size_t>(train)];
    f << "\n";
  }
}

geom::PointCloud read_velodyne_bin(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 16 != 0) {
    throw DataError("truncated scan (size not a multiple of 16 bytes): " + path);
  }
  geom::PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const unsigned char* rec = bytes.data() + i * 16;
    cloud.points[i].x = decode_f32_le(rec + 0);
    cloud.points[i].y = decode_f32_le(rec + 4);
    cloud.points[i].z = decode_f32_le(rec + 8);
    cloud.points[i].r = decode_f32_le(rec + 12);
  }
  return cloud;
}

void write_velodyne_bin(const std::string& path, const geom::PointCloud& cloud) {
  std::vector<unsigned char> bytes(cloud.points.size() * 16);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    unsigned char* rec = bytes.data() + i * 16;
    encode_f32_le(static_cast<float>(cloud.points[i].x), rec + 0);
    encode_f32_le(static_cast<float>(cloud.points[i].y), rec + 4);
    encode_f32_le(static_cast<float>(cloud.points[i].z), rec + 8);
    encode_f32_le(static_cast<float>(cloud.points[i].r), rec + 12);
  }
  write_file_bytes(path, bytes);
}

std::vector<uint32_t> read_labels(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0) {
    throw DataError("truncated label file (size not a multiple of 4 bytes): " + path);
  }
  std::vector<uint32_t> out(bytes.size() / 4);
  for (size_t i = 0; i < out.size(); ++i) {
    // Upper 16 bits carry instance ids; the semantic class is the low half.
    out[i] = decode_u32_le(bytes.data() + i * 4) & 0xFFFFu;
  }
  return out;
}

void write_labels(const std::string& path, const std::vector<uint32_t>& raw_labels) {
  std::vector<unsigned char> bytes(raw_labels.size() * 4);
  for (size_t i = 0; i < raw_labels.size(); ++i) {
    encode_u32_le(raw_labels[i], bytes.data() + i * 4);
  }
  write_file_bytes(path, bytes);
}

namespace {

bool parse_values(const std::string& rest, std::vector<double>& out) {
  std::istringstream is(rest);
  double v;
  out.clear();
  while (is >> v) out.push_back(v);
  is.clear();
  std::string trailing;
  if (is >> trailing) return false;
  return true;
}

bool is_projection_key(const std::string& key) {
  return key == "T" || key == "Tr" || key == "Tr_velo_to_cam";
}

bool is_rotation_key(const std::string& key) {
  return key == "R0" || key == "R0_rect" || key == "R_rect";
}

}  // namespace

geom::Calibration read_calibration(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open calibration file: " + path);
  geom::Calibration calib;
  bool have_t = false, have_r = false;
  std::string line;
  while (std::getline(f, line)) {
    const size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    key.erase(std::remove_if(key.begin(), key.end(), [](unsigned char c) { return std::isspace(c); }),
              key.end());
    std::vector<double> vals;
    if (!parse_values(line.substr(colon + 1), vals)) {
      throw DataError("calibration key " + key + " has non-numeric values: " + path);
    }
    if (is_projection_key(key)) {
      if (vals.size() != 12) {
        throw DataError("calibration projection matrix needs 12 values, got " +
                        std::to_string(vals.size()) + ": " + path);
      }
      std::copy(vals.begin(), vals.end(), calib.T.m.begin());
      have_t = true;
    } else if (is_rotation_key(key)) {
      if (vals.size() != 9) {
        throw DataError("calibration rotation needs 9 values, got " +
                        std::to_string(vals.size()) + ": " + path);
      }
      std::copy(vals.begin(), vals.end(), calib.R0.m.begin());
      have_r = true;
    } else if (key == "SIZE") {
      if (vals.size() != 2) {
        throw DataError("calibration SIZE needs 2 values: " + path);
      }
      calib.image_height = static_cast<int>(vals[0]);
      calib.image_width = static_cast<int>(vals[1]);
    }
  }
  if (!have_t) throw DataError("calibration missing projection matrix key (T): " + path);
  if (!have_r) throw DataError("calibration missing rotation key (R0): " + path);
  return calib;
}

void write_calibration(const std::string& path, const geom::Calibration& calib) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write calibration file: " + path);
  f.precision(17);
  f << "T:";
  for (double v : calib.T.m) f << " " << v;
  f << "\nR0:";
  for (double v : calib.R0.m) f << " " << v;
  f << "\n";
  if (calib.image_height > 0 && calib.image_width > 0) {
    f << "SIZE: " << calib.image_height << " " << calib.image_width << "\n";
  }
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_ppm_token(const std::vector<unsigned char>& bytes, size_t& pos) {
  while (pos < bytes.size()) {
    if (std::isspace(bytes[pos])) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) {
    token.push_back(static_cast<char>(bytes[pos++]));
  }
  return token;
}

}  // namespace

Tensor read_ppm_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  size_t pos = 0;
  if (next_ppm_token(bytes, pos) != "P6") {
    throw DataError("not a binary PPM (P6) file: " + path);
  }
  const std::string ws = next_ppm_token(bytes, pos);
  const std::string hs = next_ppm_token(bytes, pos);
  const std::string ms = next_ppm_token(bytes, pos);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxval = std::stoi(ms);
  } catch (const std::exception&) {
    throw DataError("malformed PPM header: " + path);
  }
  if (w <= 0 || h <= 0) throw DataError("invalid PPM dimensions: " + path);
  if (maxval != 255) throw DataError("PPM maxval must be 255: " + path);
  ++pos;  // single whitespace after maxval
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (bytes.size() < pos + need) throw DataError("truncated PPM payload: " + path);

  Tensor img = Tensor::zeros({3, h, w});
  auto& d = img.data();
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      d[c * plane + p] = bytes[pos + p * 3 + c] / 255.0;
    }
  }
  return img;
}

void write_ppm_image(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm_image: expected [3,H,W] tensor");
  }
  const int h = image.dim(1), w = image.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  std::ostringstream header;
  header << "P6\n" << w << " " << h << "\n255\n";
  const std::string hs = header.str();
  std::vector<unsigned char> bytes(hs.begin(), hs.end());
  bytes.resize(hs.size() + plane * 3);
  const auto& d = image.data();
  for (size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(d[c * plane + p], 0.0, 1.0);
      bytes[hs.size() + p * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  write_file_bytes(path, bytes);
}

void write_ppm_gray(const std::string& path, const Map2D& map) {
  Tensor img = Tensor::zeros({3, map.height, map.width});
  auto& d = img.data();
  const size_t plane = map.v.size();
  for (size_t p = 0; p < plane; ++p) {
    const double v = std::clamp(map.v[p], 0.0, 1.0);
    d[0 * plane + p] = d[1 * plane + p] = d[2 * plane + p] = v;
  }
  write_ppm_image(path, img);
}

// --- Synthetic scenes -----------------------------------------------------

namespace {

struct Blob {
  int class_id = 0;
  double center_h = 0.0;
  double center_w = 0.0;
  double radius = 0.0;
  double depth = 0.0;
};

struct SceneLayout {
  std::vector<Blob> blobs;
  double bg_depth = 18.0;
  double bg_reflectance = 0.12;
};

std::array<int, 3> class_palette(int class_id) {
  static const std::array<int, 3> table[] = {
      {45, 45, 45},   {230, 70, 60},  {70, 200, 80},  {65, 90, 235},
      {240, 200, 50}, {180, 60, 200}, {60, 210, 210}, {245, 140, 40},
  };
  if (class_id >= 0 && class_id < 8) return table[class_id];
  // Golden-angle hue wheel for any further classes.
  const double hue = std::fmod(0.618033988749895 * class_id, 1.0) * 6.0;
  const int i = static_cast<int>(hue);
  const double f = hue - i;
  const int q = static_cast<int>(255 * (1 - f));
  const int t = static_cast<int>(255 * f);
  switch (i % 6) {
    case 0: return {255, t, 40};
    case 1: return {q, 255, 40};
    case 2: return {40, 255, t};
    case 3: return {40, q, 255};
    case 4: return {t, 40, 255};
    default: return {255, 40, q};
  }
}

geom::Calibration synth_calibration(int height, int width) {
  geom::Calibration calib;
  calib.R0 = geom::Mat3x3::identity();
  const double f = height;
  calib.T.at(0, 0) = f;
  calib.T.at(0, 2) = height / 2.0;
  calib.T.at(1, 1) = f;
  calib.T.at(1, 2) = width / 2.0;
  calib.T.at(2, 2) = 1.0;
  calib.image_height = height;
  calib.image_width = width;
  return calib;
}

// Non-overlapping blob placement; shrinks radii if the layout is tight.
SceneLayout make_layout(Rng& rng, int height, int width, int num_classes) {
  SceneLayout layout;
  const double dim = std::min(height, width);
  double r_lo = 0.15 * dim, r_hi = 0.20 * dim;
  const int blobs = num_classes - 1;
  for (int attempt = 0; attempt < 64; ++attempt) {
    layout.blobs.clear();
    bool ok = true;
    for (int c = 1; c <= blobs && ok; ++c) {
      Blob b;
      b.class_id = c;
      b.radius = rng.uniform(r_lo, r_hi);
      bool placed = false;
      for (int tries = 0; tries < 64 && !placed; ++tries) {
        b.center_h = rng.uniform(0.22 * height, 0.78 * height);
        b.center_w = rng.uniform(0.22 * width, 0.78 * width);
        placed = true;
        for (const Blob& other : layout.blobs) {
          const double dh = b.center_h - other.center_h;
          const double dw = b.center_w - other.center_w;
          if (std::sqrt(dh * dh + dw * dw) < b.radius + other.radius + 1.0) {
            placed = false;
            break;
          }
        }
      }
      if (!placed) ok = false;
      b.depth = rng.uniform(6.0, 12.0);
      if (ok) layout.blobs.push_back(b);
    }
    if (ok) return layout;
    r_lo *= 0.9;
    r_hi *= 0.9;
  }
  throw Error("synth scene: could not place blobs");
}

// Nearest covering blob index, or -1 for background.
int owner_blob(const SceneLayout& layout, double h, double w, double* depth_out) {
  int idx = -1;
  double depth = layout.bg_depth;
  double best = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < layout.blobs.size(); ++j) {
    const Blob& b = layout.blobs[j];
    const double dh = h - b.center_h;
    const double dw = w - b.center_w;
    if (dh * dh + dw * dw <= b.radius * b.radius && b.depth < best) {
      best = b.depth;
      idx = static_cast<int>(j);
      depth = b.depth;
    }
  }
  if (depth_out) *depth_out = depth;
  return idx;
}

// Point geometry is a function of blob index only; class ids enter through
// labels, image colors and the per-blob reflectance band. Two layouts that
// differ only in class assignments therefore yield bit-identical clouds
// whenever the reassigned classes share a reflectance band.
ScanRecord synthesize_scene(Rng rng, const SceneLayout& layout, int num_points,
                            int height, int width,
                            const std::vector<double>& reflectance_bands,
                            const std::string& scan_id) {
  ScanRecord rec;
  rec.scan_id = scan_id;
  rec.calib = synth_calibration(height, width);
  const double f = rec.calib.T.at(0, 0);
  const double ch = rec.calib.T.at(0, 2);
  const double cw = rec.calib.T.at(1, 2);

  // Image: owner-class palette color with +-10 byte jitter, quantized so a
  // PPM round trip is exact.
  rec.image = Tensor::zeros({3, height, width});
  auto& img = rec.image.data();
  const size_t plane = static_cast<size_t>(height) * width;
  std::vector<int> owner(plane);
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      const int blob = owner_blob(layout, h + 0.5, w + 0.5, nullptr);
      owner[static_cast<size_t>(h) * width + w] = blob;
      const int cls = blob < 0 ? 0 : layout.blobs[static_cast<size_t>(blob)].class_id;
      const auto color = class_palette(cls);
      for (int c = 0; c < 3; ++c) {
        const int jitter = rng.uniform_int(-10, 10);
        const int byte = std::clamp(color[static_cast<size_t>(c)] + jitter, 0, 255);
        img[c * plane + static_cast<size_t>(h) * width + w] = byte / 255.0;
      }
    }
  }

  // Pixel pools per blob (index 0 = background) for point sampling.
  std::vector<std::vector<int>> pool(layout.blobs.size() + 1);
  for (size_t p = 0; p < plane; ++p) {
    pool[static_cast<size_t>(owner[p] + 1)].push_back(static_cast<int>(p));
  }

  auto sample_point = [&](int blob) {
    const auto& pixels = pool[static_cast<size_t>(blob + 1)];
    const int px = pixels[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pixels.size()) - 1))];
    const int ph = px / width;
    const int pw = px % width;
    const double hh = ph + rng.uniform(0.15, 0.85);
    const double ww = pw + rng.uniform(0.15, 0.85);
    // Depth comes from the owning surface itself, so the point's features
    // stay consistent with its label and the pixel's rendered color.
    double depth = blob < 0 ? layout.bg_depth : layout.blobs[static_cast<size_t>(blob)].depth;
    depth += (blob < 0) ? rng.uniform(-0.3, 0.3) : rng.uniform(-0.15, 0.15);
    const double band = blob < 0 ? layout.bg_reflectance
                                 : reflectance_bands[static_cast<size_t>(
                                       layout.blobs[static_cast<size_t>(blob)].class_id)];
    geom::LidarPoint pt;
    pt.z = depth;
    pt.x = (hh - ch) / f * depth;
    pt.y = (ww - cw) / f * depth;
    pt.r = std::clamp(band + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    return pt;
  };

  const int num_blobs = static_cast<int>(layout.blobs.size());
  const int fg_points = static_cast<int>(0.62 * num_points);
  for (int i = 0; i < fg_points; ++i) {
    const int blob = i % num_blobs;
    if (pool[static_cast<size_t>(blob + 1)].empty()) continue;
    rec.cloud.points.push_back(sample_point(blob));
    rec.labels.push_back(layout.blobs[static_cast<size_t>(blob)].class_id);
  }
  for (int i = fg_points; i < num_points; ++i) {
    if (pool[0].empty()) break;
    rec.cloud.points.push_back(sample_point(-1));
    rec.labels.push_back(0);
  }
  return rec;
}

std::vector<double> distinct_bands(int num_classes) {
  std::vector<double> bands(static_cast<size_t>(num_classes));
  bands[0] = 0.12;
  for (int c = 1; c < num_classes; ++c) {
    bands[static_cast<size_t>(c)] = 0.15 + 0.7 * (c - 1) / std::max(1, num_classes - 2);
  }
  return bands;
}

}  // namespace

ScanRecord synth_scene_generate(uint64_t seed, int num_points, int image_height,
                                int image_width, int num_classes) {
  if (num_classes < 2) throw ConfigError("synth_scene_generate: need at least 2 classes");
  if (num_points < 0 || image_height < 8 || image_width < 8) {
    throw ConfigError("synth_scene_generate: invalid scene dimensions");
  }
  Rng rng(seed);
  const auto bands = distinct_bands(num_classes);
  Rng layout_rng = rng.fork(0);
  const SceneLayout layout = make_layout(layout_rng, image_height, image_width, num_classes);
  return synthesize_scene(rng.fork(1), layout, num_points, image_height, image_width,
                          bands, "synth-" + std::to_string(seed));
}

std::vector<ScanRecord> synth_dataset_generate(uint64_t seed, int num_scenes,
                                               int num_points, int image_height,
                                               int image_width, int num_classes) {
  if (num_classes < 2) throw ConfigError("synth_dataset_generate: need at least 2 classes");
  if (num_scenes < 1) throw ConfigError("synth_dataset_generate: need at least one scene");

  // The two highest classes share a reflectance band; their point geometry
  // is duplicated across each scene pair with labels swapped, so LiDAR
  // features alone cannot separate them and image color carries the signal.
  std::vector<double> bands(static_cast<size_t>(num_classes), 0.45);
  bands[0] = 0.12;
  const int amb_a = num_classes >= 3 ? num_classes - 2 : -1;
  const int amb_b = num_classes - 1;
  {
    int others = 0;
    for (int c = 1; c < num_classes; ++c) {
      if (c != amb_a && c != amb_b) {
        bands[static_cast<size_t>(c)] =
            0.62 + 0.28 * (others++) / std::max(1, num_classes - 3);
      }
    }
  }

  std::vector<ScanRecord> records;
  records.reserve(static_cast<size_t>(num_scenes));
  for (int i = 0; i < num_scenes; ++i) {
    const int pair = i / 2;
    Rng pair_rng = Rng(seed).fork(static_cast<uint64_t>(pair) + 100);
    Rng layout_rng = pair_rng.fork(0);
    SceneLayout layout = make_layout(layout_rng, image_height, image_width, num_classes);
    if (i % 2 == 1 && amb_a >= 1) {
      for (Blob& b : layout.blobs) {
        if (b.class_id == amb_a) b.class_id = amb_b;
        else if (b.class_id == amb_b) b.class_id = amb_a;
      }
    }
    char idx[16];
    std::snprintf(idx, sizeof(idx), "%06d", i);
    records.push_back(synthesize_scene(pair_rng.fork(1), layout, num_points, image_height,
                                       image_width, bands, idx));
  }
  return records;
}

void save_dataset(const std::string& dir, const std::vector<ScanRecord>& records,
                  const LabelMap& label_map) {
  if (records.empty()) throw DataError("save_dataset: no records");
  fs::create_directories(fs::path(dir) / "velodyne");
  fs::create_directories(fs::path(dir) / "labels");
  fs::create_directories(fs::path(dir) / "image");
  write_calibration((fs::path(dir) / "calib.txt").string(), records.front().calib);
  label_map.save((fs::path(dir) / "labelmap.txt").string());
  for (const ScanRecord& rec : records) {
    write_velodyne_bin((fs::path(dir) / "velodyne" / (rec.scan_id + ".bin")).string(), rec.cloud);
    std::vector<uint32_t> raw(rec.labels.size());
    for (size_t i = 0; i < raw.size(); ++i) {
      raw[i] = rec.labels[i] == kIgnoreLabel ? 0xFFFFu : static_cast<uint32_t>(rec.labels[i]);
    }
    write_labels((fs::path(dir) / "labels" / (rec.scan_id + ".label")).string(), raw);
    write_ppm_image((fs::path(dir) / "image" / (rec.scan_id + ".ppm")).string(), rec.image);
  }
}

std::vector<ScanRecord> load_dataset(const std::string& dir, LabelMap* label_map_out) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + dir);
  if (!fs::exists(root / "labelmap.txt")) {
    throw DataError("dataset is missing labelmap.txt: " + dir);
  }
  const LabelMap label_map = LabelMap::load((root / "labelmap.txt").string());
  if (label_map_out) *label_map_out = label_map;
  geom::Calibration calib = read_calibration((root / "calib.txt").string());

  std::vector<std::string> ids;
  if (!fs::is_directory(root / "velodyne")) {
    throw DataError("dataset is missing velodyne/ directory: " + dir);
  }
  for (const auto& entry : fs::directory_iterator(root / "velodyne")) {
    if (entry.path().extension() == ".bin") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("dataset has no scans: " + dir);

  std::vector<ScanRecord> records;
  records.reserve(ids.size());
  for (const std::string& id : ids) {
    ScanRecord rec;
    rec.scan_id = id;
    rec.cloud = read_velodyne_bin((root / "velodyne" / (id + ".bin")).string());
    const auto raw = read_labels((root / "labels" / (id + ".label")).string());
    if (raw.size() != rec.cloud.size()) {
      throw DataError("label count does not match point count for scan " + id);
    }
    rec.labels.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) rec.labels[i] = label_map.map(raw[i]);
    rec.image = read_ppm_image((root / "image" / (id + ".ppm")).string());
    rec.calib = calib;
    if (rec.calib.image_height <= 0) {
      rec.calib.image_height = rec.image.dim(1);
      rec.calib.image_width = rec.image.dim(2);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace pmf::io
