#include "pmf/network.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pmf/rng.hpp"

namespace pmf::net {

namespace {

constexpr double kLeakySlope = 0.1;

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string join_int_list(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

ConvLayer make_conv(Rng& rng, int cin, int cout, int k, int padding, int dilation) {
  ConvLayer layer;
  const int fan_in = cin * k * k;
  const double bound = std::sqrt(1.0 / fan_in);
  std::vector<double> w(static_cast<size_t>(cout) * cin * k * k);
  for (double& v : w) v = rng.uniform(-bound, bound);
  std::vector<double> b(static_cast<size_t>(cout));
  for (double& v : b) v = rng.uniform(-bound, bound);
  layer.weight = Tensor::from_data({cout, cin, k, k}, std::move(w), true);
  layer.bias = Tensor::from_data({cout}, std::move(b), true);
  layer.padding = padding;
  layer.dilation = dilation;
  return layer;
}

}  // namespace

void NetworkConfig::validate() const {
  if (num_classes < 2) throw ConfigError("NetworkConfig: need at least 2 classes");
  if (camera_widths.empty() || camera_widths.size() != lidar_widths.size()) {
    throw ConfigError("NetworkConfig: camera/lidar widths must be non-empty and same length");
  }
  for (int w : camera_widths)
    if (w < 1) throw ConfigError("NetworkConfig: camera width must be positive");
  for (int w : lidar_widths)
    if (w < 1) throw ConfigError("NetworkConfig: lidar width must be positive");
  if (aspp_dilations.empty()) throw ConfigError("NetworkConfig: aspp_dilations must be non-empty");
  for (int d : aspp_dilations)
    if (d < 1) throw ConfigError("NetworkConfig: dilation must be positive");
}

std::map<std::string, std::string> NetworkConfig::to_entries() const {
  return {
      {"net.num_classes", std::to_string(num_classes)},
      {"net.camera_channels", std::to_string(camera_channels)},
      {"net.lidar_channels", std::to_string(lidar_channels)},
      {"net.camera_widths", join_int_list(camera_widths)},
      {"net.lidar_widths", join_int_list(lidar_widths)},
      {"net.aspp_dilations", join_int_list(aspp_dilations)},
  };
}

NetworkConfig NetworkConfig::from_entries(const std::map<std::string, std::string>& entries) {
  NetworkConfig cfg;
  auto get = [&](const char* key) -> const std::string& {
    auto it = entries.find(key);
    if (it == entries.end()) throw DataError(std::string("checkpoint missing config key ") + key);
    return it->second;
  };
  cfg.num_classes = std::stoi(get("net.num_classes"));
  cfg.camera_channels = std::stoi(get("net.camera_channels"));
  cfg.lidar_channels = std::stoi(get("net.lidar_channels"));
  cfg.camera_widths = parse_int_list(get("net.camera_widths"));
  cfg.lidar_widths = parse_int_list(get("net.lidar_widths"));
  cfg.aspp_dilations = parse_int_list(get("net.aspp_dilations"));
  cfg.validate();
  return cfg;
}

Tensor rf_fuse(const Tensor& lidar_feat, const Tensor& camera_feat, const RFModule& module) {
  if (lidar_feat.rank() != 4 || camera_feat.rank() != 4) {
    throw ShapeError("rf_fuse: features must be rank 4");
  }
  if (lidar_feat.dim(0) != camera_feat.dim(0) || lidar_feat.dim(2) != camera_feat.dim(2) ||
      lidar_feat.dim(3) != camera_feat.dim(3)) {
    throw ShapeError("rf_fuse: spatial/batch shape mismatch");
  }
  const Tensor fused = module.reduce.forward(concat_channel(lidar_feat, camera_feat));
  const Tensor gate = sigmoid(module.attention.forward(fused));
  return add(lidar_feat, mul(gate, fused));
}

Tensor aspp_forward(const Tensor& x, const AsppBlock& block) {
  if (block.branches.empty()) throw ConfigError("aspp_forward: no branches");
  Tensor acc;
  for (const ConvLayer& branch : block.branches) {
    Tensor y = branch.forward(x);
    if (y.dim(2) != x.dim(2) || y.dim(3) != x.dim(3)) {
      throw ShapeError("aspp_forward: branch changed the spatial extent");
    }
    acc = acc.defined() ? add(acc, y) : y;
  }
  return block.project.forward(acc);
}

TSNet::TSNet(NetworkConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int levels = cfg_.levels();
  const auto& cw = cfg_.camera_widths;
  const auto& lw = cfg_.lidar_widths;

  for (int l = 0; l < levels; ++l) {
    const int cin = l == 0 ? cfg_.camera_channels : cw[static_cast<size_t>(l - 1)];
    camera_enc_.push_back(make_conv(rng, cin, cw[static_cast<size_t>(l)], 3, 1, 1));
  }
  for (int l = levels - 2; l >= 0; --l) {
    camera_dec_.push_back(make_conv(rng, cw[static_cast<size_t>(l + 1)] + cw[static_cast<size_t>(l)],
                                    cw[static_cast<size_t>(l)], 3, 1, 1));
  }
  camera_head_ = make_conv(rng, cw.front(), cfg_.num_classes, 1, 0, 1);

  for (int l = 0; l < levels; ++l) {
    const int cin = l == 0 ? cfg_.lidar_channels : lw[static_cast<size_t>(l - 1)];
    lidar_enc_.push_back(make_conv(rng, cin, lw[static_cast<size_t>(l)], 3, 1, 1));
    RFModule rf;
    rf.reduce = make_conv(rng, lw[static_cast<size_t>(l)] + cw[static_cast<size_t>(l)],
                          lw[static_cast<size_t>(l)], 1, 0, 1);
    rf.attention = make_conv(rng, lw[static_cast<size_t>(l)], lw[static_cast<size_t>(l)], 1, 0, 1);
    rf_modules_.push_back(std::move(rf));
  }
  const int bottleneck = lw.back();
  const int branch_w = std::max(bottleneck / 2, 2);
  for (int d : cfg_.aspp_dilations) {
    aspp_.branches.push_back(make_conv(rng, bottleneck, branch_w, 3, d, d));
    aspp_.dilations.push_back(d);
  }
  aspp_.project = make_conv(rng, branch_w, bottleneck, 1, 0, 1);
  for (int l = levels - 2; l >= 0; --l) {
    lidar_dec_.push_back(make_conv(rng, lw[static_cast<size_t>(l + 1)] + lw[static_cast<size_t>(l)],
                                   lw[static_cast<size_t>(l)], 3, 1, 1));
  }
  lidar_head_ = make_conv(rng, lw.front(), cfg_.num_classes, 1, 0, 1);

  register_params();
}

void TSNet::register_params() {
  auto reg = [](std::vector<NamedParam>& out, const std::string& name, const ConvLayer& layer) {
    out.push_back({name + ".weight", layer.weight});
    out.push_back({name + ".bias", layer.bias});
  };
  for (size_t l = 0; l < camera_enc_.size(); ++l) {
    reg(camera_params_, "camera.enc" + std::to_string(l + 1), camera_enc_[l]);
  }
  for (size_t l = 0; l < camera_dec_.size(); ++l) {
    reg(camera_params_, "camera.dec" + std::to_string(camera_dec_.size() - l), camera_dec_[l]);
  }
  reg(camera_params_, "camera.head", camera_head_);

  for (size_t l = 0; l < lidar_enc_.size(); ++l) {
    reg(lidar_params_, "lidar.enc" + std::to_string(l + 1), lidar_enc_[l]);
    reg(lidar_params_, "lidar.rf" + std::to_string(l + 1) + ".reduce", rf_modules_[l].reduce);
    reg(lidar_params_, "lidar.rf" + std::to_string(l + 1) + ".attention", rf_modules_[l].attention);
  }
  for (size_t b = 0; b < aspp_.branches.size(); ++b) {
    reg(lidar_params_, "lidar.aspp.branch" + std::to_string(b), aspp_.branches[b]);
  }
  reg(lidar_params_, "lidar.aspp.project", aspp_.project);
  for (size_t l = 0; l < lidar_dec_.size(); ++l) {
    reg(lidar_params_, "lidar.dec" + std::to_string(lidar_dec_.size() - l), lidar_dec_[l]);
  }
  reg(lidar_params_, "lidar.head", lidar_head_);
}

size_t TSNet::parameter_count() const {
  size_t n = 0;
  for (const auto& p : camera_params_) n += p.tensor.numel();
  for (const auto& p : lidar_params_) n += p.tensor.numel();
  return n;
}

namespace {

void check_input(const Tensor& x, int channels, int levels, const char* stream) {
  if (x.rank() != 4) throw ShapeError(std::string(stream) + ": input must be [B,C,H,W]");
  if (x.dim(1) != channels) {
    throw ShapeError(std::string(stream) + ": expected " + std::to_string(channels) +
                     " input channels, got " + std::to_string(x.dim(1)));
  }
  const int div = 1 << (levels - 1);
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
    throw ShapeError(std::string(stream) + ": spatial size must be divisible by " +
                     std::to_string(div));
  }
}

}  // namespace

CameraOutput TSNet::camera_forward(const Tensor& image) const {
  check_input(image, cfg_.camera_channels, cfg_.levels(), "camera_forward");
  CameraOutput out;
  // Pixel intensities arrive in [0,1]; the encoder consumes them centered.
  Tensor x = affine(image, 2.0, -1.0);
  for (size_t l = 0; l < camera_enc_.size(); ++l) {
    if (l > 0) x = maxpool2(x);
    x = leaky_relu(camera_enc_[l].forward(x), kLeakySlope);
    out.features.push_back(x);
  }
  Tensor d = out.features.back();
  for (size_t i = 0; i < camera_dec_.size(); ++i) {
    const Tensor& skip = out.features[out.features.size() - 2 - i];
    d = leaky_relu(camera_dec_[i].forward(concat_channel(upsample_nearest2(d), skip)), kLeakySlope);
  }
  out.probs = softmax_channel(camera_head_.forward(d));
  return out;
}

Tensor TSNet::lidar_forward(const Tensor& lidar_input,
                            const std::vector<Tensor>* camera_features,
                            bool fusion_enabled) const {
  check_input(lidar_input, cfg_.lidar_channels, cfg_.levels(), "lidar_forward");
  if (fusion_enabled) {
    if (camera_features == nullptr ||
        camera_features->size() != static_cast<size_t>(cfg_.levels())) {
      throw ShapeError("lidar_forward: fusion enabled but camera features missing");
    }
  }
  std::vector<Tensor> feats;
  Tensor x = lidar_input;
  for (size_t l = 0; l < lidar_enc_.size(); ++l) {
    if (l > 0) x = maxpool2(x);
    x = leaky_relu(lidar_enc_[l].forward(x), kLeakySlope);
    if (fusion_enabled) x = rf_fuse(x, (*camera_features)[l], rf_modules_[l]);
    feats.push_back(x);
  }
  Tensor d = aspp_forward(feats.back(), aspp_);
  for (size_t i = 0; i < lidar_dec_.size(); ++i) {
    const Tensor& skip = feats[feats.size() - 2 - i];
    d = leaky_relu(lidar_dec_[i].forward(concat_channel(upsample_nearest2(d), skip)), kLeakySlope);
  }
  return softmax_channel(lidar_head_.forward(d));
}

// --- Checkpoint io ---------------------------------------------------------
// Layout (all integers little-endian):
//   magic "PMFCKPT1" | u32 version | u32 n_entries | { u32 klen, key,
//   u32 vlen, value } | u32 n_params | { u32 nlen, name, u32 rank,
//   i32 dims[rank], f64 data[numel] }

namespace {

constexpr char kMagic[8] = {'P', 'M', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const uint64_t v = std::bit_cast<uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw DataError("truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void TSNet::save_checkpoint(const std::string& path,
                            const std::map<std::string, std::string>& extra) const {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);

  std::map<std::string, std::string> entries = cfg_.to_entries();
  for (const auto& [k, v] : extra) entries[k] = v;
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& [k, v] : entries) {
    put_u32(out, static_cast<uint32_t>(k.size()));
    out += k;
    put_u32(out, static_cast<uint32_t>(v.size()));
    out += v;
  }

  std::vector<const NamedParam*> all;
  for (const auto& p : camera_params_) all.push_back(&p);
  for (const auto& p : lidar_params_) all.push_back(&p);
  put_u32(out, static_cast<uint32_t>(all.size()));
  for (const NamedParam* p : all) {
    put_u32(out, static_cast<uint32_t>(p->name.size()));
    out += p->name;
    put_u32(out, static_cast<uint32_t>(p->tensor.rank()));
    for (int d : p->tensor.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (double v : p->tensor.data()) put_f64(out, v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing checkpoint: " + path);
}

TSNet TSNet::load_checkpoint(const std::string& path,
                             std::map<std::string, std::string>* extra_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  Reader r(buf);
  if (r.str(8) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("not a checkpoint file: " + path);
  }
  if (r.u32() != kVersion) throw DataError("unsupported checkpoint version: " + path);

  std::map<std::string, std::string> entries;
  const uint32_t n_entries = r.u32();
  for (uint32_t i = 0; i < n_entries; ++i) {
    const std::string k = r.str(r.u32());
    entries[k] = r.str(r.u32());
  }
  NetworkConfig cfg = NetworkConfig::from_entries(entries);
  TSNet net(cfg, 0);

  std::map<std::string, Tensor> by_name;
  for (auto& p : net.camera_params_) by_name.emplace(p.name, p.tensor);
  for (auto& p : net.lidar_params_) by_name.emplace(p.name, p.tensor);

  const uint32_t n_params = r.u32();
  if (n_params != by_name.size()) {
    throw DataError("checkpoint/config mismatch: parameter count differs");
  }
  for (uint32_t i = 0; i < n_params; ++i) {
    const std::string name = r.str(r.u32());
    const uint32_t rank = r.u32();
    std::vector<int> dims(rank);
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      dims[d] = static_cast<int>(r.u32());
      numel *= static_cast<size_t>(dims[d]);
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint/config mismatch: unknown parameter " + name);
    if (it->second.shape() != dims) {
      throw DataError("checkpoint/config mismatch: shape differs for " + name);
    }
    auto& dst = it->second.data();
    for (size_t j = 0; j < numel; ++j) dst[j] = r.f64();
  }
  if (extra_out) *extra_out = entries;
  return net;
}

}  // namespace pmf::net
