#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "palm/adam.hpp"
#include "palm/image.hpp"
#include "palm/ops.hpp"
#include "palm/tps.hpp"
#include "palm/weights_io.hpp"

namespace palm {

// Three conv stages (two 3x3 layers each) with 2x2 pooling after each stage:
// total spatial downsampling 8. Desk widths by default, paper widths optional.
struct BackboneConfig {
  std::array<int, 3> widths{16, 32, 64};

  static BackboneConfig desk() { return {}; }
  static BackboneConfig paper() { return {{64, 128, 256}}; }
  bool operator==(const BackboneConfig&) const = default;
};

namespace detail {

template <typename T>
void init_conv(Tensor<T>& w, RngState& rng) {
  // He fan-in for the from-scratch backbone
  int fan_in = w.dim(1) * w.dim(2) * w.dim(3);
  T std = static_cast<T>(std::sqrt(2.0 / fan_in));
  for (auto& v : w.values()) v = static_cast<T>(rng.next_gaussian()) * std;
}

template <typename T>
void init_fc(Tensor<T>& t, RngState& rng) {
  // fc1-fc5 weights and biases: Gaussian, zero mean, 0.001 variance
  const T std = static_cast<T>(std::sqrt(0.001));
  for (auto& v : t.values()) v = static_cast<T>(rng.next_gaussian()) * std;
}

// Registers conv1..conv6 for one backbone under `prefix` with block tag.
template <typename T>
void add_backbone_params(ParamStore<T>& ps, const std::string& prefix, char block, const BackboneConfig& cfg,
                         RngState& rng) {
  int in_ch = 3;
  int layer = 1;
  for (int stage = 0; stage < 3; ++stage) {
    int out_ch = cfg.widths[static_cast<size_t>(stage)];
    for (int rep = 0; rep < 2; ++rep, ++layer) {
      Tensor<T> w({out_ch, in_ch, 3, 3});
      init_conv(w, rng);
      ps.add(prefix + "conv" + std::to_string(layer) + ".weight", block, std::move(w));
      ps.add(prefix + "conv" + std::to_string(layer) + ".bias", block, Tensor<T>({out_ch}));
      in_ch = out_ch;
    }
  }
}

template <typename T>
Tensor<T> backbone_forward(const ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x) {
  Tensor<T> h = x;
  int layer = 1;
  for (int stage = 0; stage < 3; ++stage) {
    for (int rep = 0; rep < 2; ++rep, ++layer) {
      const auto& w = ps.at(prefix + "conv" + std::to_string(layer) + ".weight").tensor;
      const auto& b = ps.at(prefix + "conv" + std::to_string(layer) + ".bias").tensor;
      h = relu(conv2d(h, w, b, 1, 1));
    }
    h = maxpool2(h);
  }
  return channel_l2_normalize(h, static_cast<T>(1e-8));
}

}  // namespace detail

// Dropout rates from the reference configuration.
inline constexpr double kDrop1 = 0.2, kDrop2 = 0.1, kDrop3 = 0.5, kDrop4 = 0.5;

// Localization-and-alignment net: backbone (block B) -> L2-normalized feature
// map f_h -> fc1/fc2/fc3 regression head (block A) -> tanh-squashed 18
// normalized landmark coordinates. Drop1/Drop2 double as the in-network ROI
// augmentation switch.
template <typename T>
class RoiLaNet {
 public:
  RoiLaNet(const BackboneConfig& cfg, RngState rng) : cfg_(cfg) {
    detail::add_backbone_params(params_, "loc.", 'B', cfg, rng);
    flat_dim_ = cfg.widths[2] * 7 * 7;
    auto add_fc = [&](const std::string& name, int in, int out) {
      Tensor<T> w({in, out});
      detail::init_fc(w, rng);
      params_.add("loc." + name + ".weight", 'A', std::move(w));
      Tensor<T> b({out});
      detail::init_fc(b, rng);
      params_.add("loc." + name + ".bias", 'A', std::move(b));
    };
    add_fc("fc1", flat_dim_, 512);
    add_fc("fc2", 512, 128);
    add_fc("fc3", 128, 18);
  }

  // images56: [N,3,56,56], mean-subtracted. Returns [N,18] in (-1,1).
  Tensor<T> localize(const Tensor<T>& images56, Mode mode, RngState& rng, bool drop12_on) const {
    if (images56.ndim() != 4 || images56.dim(1) != 3 || images56.dim(2) != 56 || images56.dim(3) != 56)
      throw DimensionError("localize: expected [N,3,56,56], got " + shape_str(images56.shape()));
    Tensor<T> f = detail::backbone_forward(params_, "loc.", images56);
    Tensor<T> h = reshape(f, {images56.dim(0), flat_dim_});
    h = leaky_relu(fully_connected(h, p("loc.fc1.weight"), p("loc.fc1.bias")), static_cast<T>(0.1));
    h = dropout(h, drop12_on ? kDrop1 : 0.0, mode, rng);
    h = leaky_relu(fully_connected(h, p("loc.fc2.weight"), p("loc.fc2.bias")), static_cast<T>(0.1));
    h = dropout(h, drop12_on ? kDrop2 : 0.0, mode, rng);
    return tanh_op(fully_connected(h, p("loc.fc3.weight"), p("loc.fc3.bias")));
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const BackboneConfig& config() const { return cfg_; }
  int regression_flat_dim() const { return flat_dim_; }

 private:
  const Tensor<T>& p(const std::string& n) const { return params_.at(n).tensor; }
  BackboneConfig cfg_;
  ParamStore<T> params_;
  int flat_dim_ = 0;
};

// Feature extraction and recognition net: independent backbone, flattened
// f_sROI -> Drop3 -> fc4 embedding (512-dim descriptor) -> Drop4 -> fc5
// class logits. Everything here carries block tag C.
template <typename T>
class FerNet {
 public:
  FerNet(const BackboneConfig& cfg, int n_class, RngState rng) : cfg_(cfg), n_class_(n_class) {
    if (n_class < 1) throw ParameterError("FerNet: n_class must be >= 1");
    detail::add_backbone_params(params_, "fer.", 'C', cfg, rng);
    flat_dim_ = cfg.widths[2] * 14 * 14;
    auto add_fc = [&](const std::string& name, int in, int out) {
      Tensor<T> w({in, out});
      detail::init_fc(w, rng);
      params_.add("fer." + name + ".weight", 'C', std::move(w));
      Tensor<T> b({out});
      detail::init_fc(b, rng);
      params_.add("fer." + name + ".bias", 'C', std::move(b));
    };
    add_fc("fc4", flat_dim_, 512);
    add_fc("fc5", 512, n_class);
  }

  struct Out {
    Tensor<T> descriptor;  // [N,512] f_PD
    Tensor<T> logits;      // [N,n_class]
  };

  // rois: [N,3,112,112], mean-subtracted.
  Out forward(const Tensor<T>& rois, Mode mode, RngState& rng) const {
    if (rois.ndim() != 4 || rois.dim(1) != 3 || rois.dim(2) != 112 || rois.dim(3) != 112)
      throw DimensionError("forward_fernet: expected [N,3,112,112], got " + shape_str(rois.shape()));
    Tensor<T> f = detail::backbone_forward(params_, "fer.", rois);
    Tensor<T> h = reshape(f, {rois.dim(0), flat_dim_});
    h = dropout(h, kDrop3, mode, rng);
    Tensor<T> descriptor = fully_connected(h, p("fer.fc4.weight"), p("fer.fc4.bias"));
    Tensor<T> d = dropout(descriptor, kDrop4, mode, rng);
    Tensor<T> logits = fully_connected(d, p("fer.fc5.weight"), p("fer.fc5.bias"));
    return {descriptor, logits};
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const BackboneConfig& config() const { return cfg_; }
  int n_class() const { return n_class_; }

 private:
  const Tensor<T>& p(const std::string& n) const { return params_.at(n).tensor; }
  BackboneConfig cfg_;
  ParamStore<T> params_;
  int n_class_ = 0;
  int flat_dim_ = 0;
};

// End-to-end composition; no parameter sharing between the subnets. Block
// names: A = regression head, B = localization backbone, C = all of FerNet.
// "D" is the Stage-III alias for the regression head (the same fc1-fc3
// parameters the Stage-I schedule calls A).
template <typename T>
class EePrNet {
 public:
  EePrNet(const BackboneConfig& cfg, int n_class, RngState rng)
      : loc_(cfg, RngState::derive(rng.seed, {1})), fer_(cfg, n_class, RngState::derive(rng.seed, {2})) {}

  struct Out {
    Tensor<T> landmarks;   // [N,18]
    Tensor<T> rois;        // [N,3,112,112] raw-intensity ROI
    Tensor<T> descriptor;  // [N,512]
    Tensor<T> logits;      // [N,n_class]
  };

  // fulls: raw [0,1] full-resolution images (any sizes); images56: resized,
  // mean-subtracted copies. Gradients reach blocks A/B through the sampler.
  Out forward_end_to_end(const std::vector<Tensor<T>>& fulls, const Tensor<T>& images56, Mode mode, RngState& rng,
                         bool drop12_on) const {
    if (static_cast<int>(fulls.size()) != images56.dim(0))
      throw DimensionError("forward_end_to_end: one full image per resized row required");
    Tensor<T> theta = loc_.localize(images56, mode, rng, drop12_on);
    std::vector<Tensor<T>> rois;
    rois.reserve(fulls.size());
    for (size_t n = 0; n < fulls.size(); ++n)
      rois.push_back(extract_roi_op(fulls[n], select_row(theta, static_cast<int>(n)), 112, 112));
    Tensor<T> batch = concat_batch(rois);
    Tensor<T> batch_ms = sub_channel_mean(batch, {mean_rgb_[0], mean_rgb_[1], mean_rgb_[2]});
    auto fer_out = fer_.forward(batch_ms, mode, rng);
    return {theta, batch, fer_out.descriptor, fer_out.logits};
  }

  void set_block_trainable(char block, bool flag) {
    if (block == 'D') block = 'A';  // Stage-III name for the regression head
    if (block != 'A' && block != 'B' && block != 'C')
      throw ParameterError(std::string("unknown block: ") + block);
    loc_.params().set_block_trainable(block, flag);
    fer_.params().set_block_trainable(block, flag);
  }

  RoiLaNet<T>& localizer() { return loc_; }
  const RoiLaNet<T>& localizer() const { return loc_; }
  FerNet<T>& fernet() { return fer_; }
  const FerNet<T>& fernet() const { return fer_; }

  std::array<T, 3>& mean() { return mean_rgb_; }
  const std::array<T, 3>& mean() const { return mean_rgb_; }

 private:
  RoiLaNet<T> loc_;
  FerNet<T> fer_;
  std::array<T, 3> mean_rgb_{};
};

// ---- Input preparation -------------------------------------------------------

template <typename T>
Tensor<T> batch_images(const std::vector<FloatImage>& imgs) {
  std::vector<Tensor<T>> items;
  items.reserve(imgs.size());
  for (const auto& im : imgs) items.push_back(image_to_tensor<T>(im));
  return concat_batch(items);
}

// Resize to 56x56 and subtract the stored channel means.
template <typename T>
Tensor<T> prepare_input56(const FloatImage& img, const std::array<T, 3>& mean) {
  FloatImage r = resize_bilinear(img, 56, 56);
  Tensor<T> t = image_to_tensor<T>(r);
  for (int c = 0; c < 3; ++c)
    for (size_t p = 0; p < r.plane(); ++p) t.values()[c * r.plane() + p] -= mean[static_cast<size_t>(c)];
  return t;
}

template <typename T>
Tensor<T> prepare_input112(const FloatImage& img, const std::array<T, 3>& mean) {
  FloatImage r = (img.width == 112 && img.height == 112) ? img : resize_bilinear(img, 112, 112);
  Tensor<T> t = image_to_tensor<T>(r);
  for (int c = 0; c < 3; ++c)
    for (size_t p = 0; p < r.plane(); ++p) t.values()[c * r.plane() + p] -= mean[static_cast<size_t>(c)];
  return t;
}

// ---- Persistence -------------------------------------------------------------

// Self-describing model container: PALMW1 tensors plus an `arch` record with
// kind ("localizer" | "eeprnet" | "fernet_hands"), widths, class list, mean
// RGB, and the training strategy tag.
template <typename T>
struct PalmModel {
  std::string kind;
  std::string strategy;
  BackboneConfig widths;
  std::array<T, 3> mean_rgb{};
  std::vector<int> classes;  // palm id per fc5 column
  std::unique_ptr<RoiLaNet<T>> localizer;  // kind == localizer
  std::unique_ptr<EePrNet<T>> eeprnet;     // kind == eeprnet
  std::unique_ptr<FerNet<T>> fernet;       // kind == fernet_hands
};

template <typename T>
nlohmann::json model_arch_json(const PalmModel<T>& m) {
  nlohmann::json arch;
  arch["kind"] = m.kind;
  arch["strategy"] = m.strategy;
  arch["widths"] = {m.widths.widths[0], m.widths.widths[1], m.widths.widths[2]};
  arch["mean_rgb"] = {m.mean_rgb[0], m.mean_rgb[1], m.mean_rgb[2]};
  arch["classes"] = m.classes;
  return arch;
}

template <typename T>
void save_model(const std::filesystem::path& path, const PalmModel<T>& m) {
  WeightsFile wf;
  wf.arch = model_arch_json(m);
  if (m.kind == "localizer")
    append_store(wf, m.localizer->params());
  else if (m.kind == "eeprnet") {
    append_store(wf, m.eeprnet->localizer().params());
    append_store(wf, m.eeprnet->fernet().params());
  } else if (m.kind == "fernet_hands")
    append_store(wf, m.fernet->params());
  else
    throw ParameterError("save_model: unknown kind " + m.kind);
  save_weights(path, wf);
}

template <typename T>
PalmModel<T> load_model(const std::filesystem::path& path) {
  WeightsFile wf = load_weights(path);
  PalmModel<T> m;
  m.kind = wf.arch.value("kind", "");
  m.strategy = wf.arch.value("strategy", "");
  auto w = wf.arch.value("widths", std::vector<int>{16, 32, 64});
  m.widths.widths = {w.at(0), w.at(1), w.at(2)};
  auto mean = wf.arch.value("mean_rgb", std::vector<double>{0, 0, 0});
  for (int c = 0; c < 3; ++c) m.mean_rgb[static_cast<size_t>(c)] = static_cast<T>(mean.at(static_cast<size_t>(c)));
  m.classes = wf.arch.value("classes", std::vector<int>{});
  int n_class = std::max<size_t>(m.classes.size(), 1);

  RngState init(0);
  if (m.kind == "localizer") {
    m.localizer = std::make_unique<RoiLaNet<T>>(m.widths, init);
    load_into_store(wf, m.localizer->params());
  } else if (m.kind == "eeprnet") {
    m.eeprnet = std::make_unique<EePrNet<T>>(m.widths, n_class, init);
    load_into_store(wf, m.eeprnet->localizer().params());
    load_into_store(wf, m.eeprnet->fernet().params());
    m.eeprnet->mean() = m.mean_rgb;
  } else if (m.kind == "fernet_hands") {
    m.fernet = std::make_unique<FerNet<T>>(m.widths, n_class, init);
    load_into_store(wf, m.fernet->params());
  } else {
    throw DataError("model file has unknown kind '" + m.kind + "': " + path.string());
  }
  return m;
}

}  // namespace palm
