#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "palm/image.hpp"
#include "palm/landmarks.hpp"
#include "palm/parallel.hpp"
#include "palm/rng.hpp"
#include "palm/tps.hpp"

namespace palm {

// Canonical geometry, normalized canvas coordinates: the palm quad is the
// square of half-side kPalmRho centered at kPalmCenter; landmarks sit on the
// 3x3 lattice over that quad, fingers extend above the top edge (L1..L3 side).
inline constexpr double kPalmRho = 0.5;
inline constexpr Vec2 kPalmCenter{0.0, 0.25};

inline LandmarkSet canonical_landmarks() {
  LandmarkSet s;
  for (int i = 0; i < 9; ++i) {
    Vec2 t = TemplateGrid::points()[static_cast<size_t>(i)];
    s[i] = {kPalmCenter.x + kPalmRho * t.x, kPalmCenter.y + kPalmRho * t.y};
  }
  return s;
}

// ---- Identity texture -------------------------------------------------------

// Principal creases as curved Gaussian valleys plus oriented sinusoidal
// ridge texture; everything is a pure function of the palm id.
struct PalmTexture {
  struct Crease {
    Vec2 center;
    double nx, ny;      // valley normal
    double curvature;   // bends the level set into a parabola
    double sigma;
    double strength;
  };
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Crease> creases;
  std::vector<Wave> waves;
  std::array<float, 3> base_rgb{};

  static PalmTexture for_id(int palm_id) {
    RngState rng = RngState::derive(0x70616C6D, {static_cast<uint64_t>(palm_id)});
    PalmTexture t;
    int n_creases = 3 + rng.next_int(3);
    for (int k = 0; k < n_creases; ++k) {
      Crease c;
      c.center = {rng.uniform(-0.55, 0.55), rng.uniform(-0.55, 0.55)};
      double ang = rng.uniform(0, 2 * M_PI);
      c.nx = std::cos(ang);
      c.ny = std::sin(ang);
      c.curvature = rng.uniform(-0.9, 0.9);
      c.sigma = rng.uniform(0.035, 0.08);
      c.strength = rng.uniform(0.35, 0.55);
      t.creases.push_back(c);
    }
    for (int band = 0; band < 2; ++band) {
      for (int j = 0; j < 4; ++j) {
        Wave w;
        double ang = rng.uniform(0, M_PI);
        double freq = band == 0 ? rng.uniform(5.0, 11.0) : rng.uniform(14.0, 26.0);
        w.kx = freq * std::cos(ang);
        w.ky = freq * std::sin(ang);
        w.phase = rng.uniform(0, 2 * M_PI);
        w.amp = band == 0 ? rng.uniform(0.04, 0.09) : rng.uniform(0.02, 0.05);
        t.waves.push_back(w);
      }
    }
    t.base_rgb = {static_cast<float>(rng.uniform(0.72, 0.88)), static_cast<float>(rng.uniform(0.55, 0.68)),
                  static_cast<float>(rng.uniform(0.45, 0.58))};
    return t;
  }

  // Multiplicative shading at ROI coordinates (u,v) in [-1,1]^2.
  double shade(double u, double v) const {
    double s = 1.0 - 0.06 * (u * u + v * v);
    for (const auto& c : creases) {
      double dx = u - c.center.x, dy = v - c.center.y;
      double t = -c.ny * dx + c.nx * dy;
      double d = c.nx * dx + c.ny * dy + c.curvature * t * t;
      double z = d / c.sigma;
      s -= c.strength * std::exp(-z * z);
    }
    for (const auto& w : waves) s += w.amp * std::cos(w.kx * u + w.ky * v + w.phase);
    return std::clamp(s, 0.05, 1.3);
  }
};

// Rasterizes the undeformed palm texture; the reference for ROI recovery.
inline FloatImage canonical_texture_image(const PalmTexture& tex, int h, int w) {
  FloatImage img = FloatImage::make(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Vec2 uv = roi_lattice_point(y, x, h, w);
      double s = tex.shade(uv.x, uv.y);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(std::clamp(tex.base_rgb[static_cast<size_t>(c)] * s, 0.0, 1.0));
    }
  return img;
}

// ---- Nuisance ---------------------------------------------------------------

struct NuisanceRanges {
  double tps_mag = 0.055;    // per-landmark jitter radius, canonical frame
  double rot_deg = 25.0;     // global rotation, +- range
  double scale_lo = 0.85, scale_hi = 1.12;
  double trans = 0.12;       // +- translation, normalized units
  double illum_lo = 0.75, illum_hi = 1.2;
  double noise_sigma = 0.012;
  int n_backgrounds = 12;
};

struct Nuisance {
  std::array<Vec2, 9> jitter{};  // elastic part, canonical frame
  double rot_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0, ty = 0.0;
  double illum = 1.0;
  double noise_sigma = 0.0;
  int background_id = 0;

  static Nuisance zero() { return Nuisance{}; }
};

inline Nuisance draw_nuisance(const NuisanceRanges& r, RngState& rng) {
  Nuisance n;
  for (auto& j : n.jitter) {
    double ang = rng.uniform(0, 2 * M_PI);
    double rad = r.tps_mag * std::sqrt(rng.next_uniform());
    j = {rad * std::cos(ang), rad * std::sin(ang)};
  }
  n.rot_deg = rng.uniform(-r.rot_deg, r.rot_deg);
  n.scale = rng.uniform(r.scale_lo, r.scale_hi);
  n.tx = rng.uniform(-r.trans, r.trans);
  n.ty = rng.uniform(-r.trans, r.trans);
  n.illum = rng.uniform(r.illum_lo, r.illum_hi);
  n.noise_sigma = r.noise_sigma > 0 ? rng.uniform(0.25 * r.noise_sigma, r.noise_sigma) : 0.0;
  n.background_id = rng.next_int(std::max(1, r.n_backgrounds));
  return n;
}

// Ground-truth landmarks: elastic jitter in the canonical frame, then the
// global similarity about the canvas center.
inline LandmarkSet nuisance_landmarks(const Nuisance& n) {
  LandmarkSet canon = canonical_landmarks();
  double r = n.rot_deg * M_PI / 180.0;
  double cs = std::cos(r), sn = std::sin(r);
  LandmarkSet out;
  for (int i = 0; i < 9; ++i) {
    Vec2 p = canon[i] + n.jitter[static_cast<size_t>(i)];
    out[i] = {n.scale * (cs * p.x + sn * p.y) + n.tx, n.scale * (-sn * p.x + cs * p.y) + n.ty};
  }
  return out;
}

namespace detail {

inline double capsule_distance(const Vec2& p, const Vec2& a, const Vec2& b, double radius) {
  Vec2 ab = b - a, ap = p - a;
  double t = std::clamp(ap.dot(ab) / std::max(1e-12, ab.dot(ab)), 0.0, 1.0);
  Vec2 closest = a + ab * t;
  return (p - closest).norm() - radius;
}

// Signed distance to the stylized hand silhouette in the canonical frame.
// The flesh box is wider than the landmark quad (side margins, wrist pad
// below) so the ROI border itself is interior to the hand.
inline double hand_silhouette_distance(const Vec2& q) {
  // top margin 0.05 above the quad, wrist pad 0.16 below
  double dx = std::abs(q.x - kPalmCenter.x) - (kPalmRho + 0.07);
  double dy = std::abs(q.y - (kPalmCenter.y + 0.055)) - (kPalmRho + 0.105);
  double d = std::max(dx, dy);  // palm box

  const double top = kPalmCenter.y - kPalmRho;
  static const struct {
    double bx, drift, len, rad;
  } fingers[4] = {{-0.78, -0.06, 0.68, 0.105}, {-0.28, -0.02, 0.92, 0.115}, {0.22, 0.02, 1.0, 0.11}, {0.68, 0.08, 0.78, 0.1}};
  for (const auto& f : fingers) {
    Vec2 base{kPalmCenter.x + kPalmRho * f.bx, top + 0.02};
    Vec2 tip{base.x + kPalmRho * f.drift, top - kPalmRho * f.len};
    d = std::min(d, capsule_distance(q, base, tip, kPalmRho * f.rad));
  }
  Vec2 tbase{kPalmCenter.x - kPalmRho + 0.03, kPalmCenter.y + 0.05};
  Vec2 ttip{kPalmCenter.x - 1.45 * kPalmRho, kPalmCenter.y - 0.3};
  d = std::min(d, capsule_distance(q, tbase, ttip, kPalmRho * 0.13));
  return d;
}

inline std::array<float, 3> background_color(int background_id, double px, double py) {
  RngState rng = RngState::derive(0xB6, {static_cast<uint64_t>(background_id)});
  double hue = rng.next_uniform();
  std::array<double, 3> c1, c2;
  for (int c = 0; c < 3; ++c) {
    c1[static_cast<size_t>(c)] = rng.uniform(0.1, 0.5);
    c2[static_cast<size_t>(c)] = rng.uniform(0.3, 0.9);
  }
  // keep backgrounds away from skin tones: damp the red channel
  c1[0] *= 0.5 + 0.4 * hue;
  double k1 = rng.uniform(1.5, 5.0), k2 = rng.uniform(1.5, 5.0), ph = rng.uniform(0, 6.28);
  double mix = 0.5 + 0.5 * std::sin(k1 * px + k2 * py + ph);
  double bx = rng.uniform(-0.8, 0.8), by = rng.uniform(-0.8, 0.8), br = rng.uniform(0.2, 0.6);
  double blob = std::exp(-((px - bx) * (px - bx) + (py - by) * (py - by)) / (br * br));
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) {
    double v = c1[static_cast<size_t>(c)] * (1 - mix) + c2[static_cast<size_t>(c)] * mix;
    v = v * (1 - 0.5 * blob) + 0.5 * blob * (c == 2 ? 0.8 : 0.35);
    out[static_cast<size_t>(c)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

}  // namespace detail

struct RenderResult {
  FloatImage image;   // 3xSxS in [0,1]
  FloatImage mask;    // 1xSxS silhouette
  LandmarkSet lm;     // normalized ground truth
};

// Rasterizes one sample: the inverse warp (ground-truth landmarks back to the
// canonical frame) is a TPS interpolating the nine correspondences, so
// extract_roi at the ground-truth landmarks recovers the canonical texture.
inline RenderResult render_palm_sample(const PalmTexture& tex, int side, const Nuisance& nuisance,
                                       uint64_t noise_seed) {
  if (side < 8) throw ParameterError("render_palm_sample: side too small");
  LandmarkSet gt = nuisance_landmarks(nuisance);
  LandmarkSet canon = canonical_landmarks();

  bool identity_warp = true;
  for (int i = 0; i < 9 && identity_warp; ++i)
    identity_warp = (gt[i] - canon[i]).norm() < 1e-15;
  TpsTransform warp;  // canvas -> canonical frame
  if (!identity_warp) warp = solve_tps_direct(gt.p, canon.p);

  RenderResult out;
  out.image = FloatImage::make(3, side, side);
  out.mask = FloatImage::make(1, side, side);
  out.lm = gt;

  RngState noise_rng = RngState::derive(noise_seed, {0xA0});
  const double aa = 1.5 * 2.0 / side;  // ~1.5px edge feather
  for (int y = 0; y < side; ++y) {
    double pyn = normalize_coord(y, side);
    for (int x = 0; x < side; ++x) {
      double pxn = normalize_coord(x, side);
      Vec2 p{pxn, pyn};
      Vec2 q = identity_warp ? p : warp.apply(p);
      double dist = detail::hand_silhouette_distance(q);
      double alpha = std::clamp(0.5 - dist / aa, 0.0, 1.0);

      std::array<float, 3> bg = detail::background_color(nuisance.background_id, pxn, pyn);
      std::array<double, 3> color{bg[0], bg[1], bg[2]};
      if (alpha > 0.0) {
        std::array<double, 3> hand{};
        double in_palm_x = std::abs(q.x - kPalmCenter.x), in_palm_y = std::abs(q.y - kPalmCenter.y);
        if (in_palm_x <= kPalmRho && in_palm_y <= kPalmRho) {
          double u = (q.x - kPalmCenter.x) / kPalmRho, v = (q.y - kPalmCenter.y) / kPalmRho;
          double s = tex.shade(u, v);
          for (int c = 0; c < 3; ++c) hand[static_cast<size_t>(c)] = tex.base_rgb[static_cast<size_t>(c)] * s;
        } else {
          // fingers and thumb: base skin with a mild lengthwise gradient
          double g = 0.92 - 0.1 * (kPalmCenter.y - q.y);
          for (int c = 0; c < 3; ++c) hand[static_cast<size_t>(c)] = tex.base_rgb[static_cast<size_t>(c)] * g;
        }
        for (int c = 0; c < 3; ++c) color[static_cast<size_t>(c)] = alpha * hand[static_cast<size_t>(c)] + (1 - alpha) * color[static_cast<size_t>(c)];
      }
      for (int c = 0; c < 3; ++c) {
        double v = color[static_cast<size_t>(c)] * nuisance.illum;
        if (nuisance.noise_sigma > 0) v += nuisance.noise_sigma * noise_rng.next_gaussian();
        out.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      out.mask.at(0, y, x) = static_cast<float>(alpha > 0.5 ? 1.0 : 0.0);
    }
  }
  return out;
}

// ---- Dataset generation and manifests ----------------------------------------

struct ManifestRow {
  std::string path;
  int palm_id = 0;
  int subject_id = 0;
  char hand = 'R';
  int width = 0, height = 0;
  int n_samples_of_palm = 0;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;
};

struct DatasetConfig {
  int n_palms = 20;
  int fixed_samples = 0;  // 0 draws from the mixture below (mean ~2.9, range 1-8)
  int side_lo = 40, side_hi = 256;
  double fraction_left = 0.25;
  bool grayscale = false;
  NuisanceRanges nuisance;
  uint64_t seed = 1;
};

inline int draw_samples_per_palm(RngState& rng) {
  static const double probs[8] = {0.22, 0.25, 0.24, 0.12, 0.08, 0.05, 0.03, 0.01};
  double u = rng.next_uniform(), acc = 0.0;
  for (int k = 0; k < 8; ++k) {
    acc += probs[k];
    if (u < acc) return k + 1;
  }
  return 8;
}

inline void write_manifest_csv(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "path,palm_id,subject_id,hand,width,height,n_samples_of_palm\n";
  for (const auto& r : m.rows)
    out << r.path << "," << r.palm_id << "," << r.subject_id << "," << r.hand << "," << r.width << "," << r.height
        << "," << r.n_samples_of_palm << "\n";
}

inline DatasetManifest read_manifest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 7)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields, got " +
                      std::to_string(f.size()));
    ManifestRow r;
    r.path = f[0];
    try {
      r.palm_id = std::stoi(f[1]);
      r.subject_id = std::stoi(f[2]);
      r.hand = f[3].empty() ? 'R' : f[3][0];
      r.width = std::stoi(f[4]);
      r.height = std::stoi(f[5]);
      r.n_samples_of_palm = std::stoi(f[6]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

// Draws nuisances until all nine landmarks stay inside the frame.
inline Nuisance draw_nuisance_in_frame(const NuisanceRanges& ranges, RngState& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Nuisance n = draw_nuisance(ranges, rng);
    LandmarkSet lm = nuisance_landmarks(n);
    bool ok = true;
    for (int i = 0; i < 9 && ok; ++i) ok = std::abs(lm[i].x) <= 0.93 && std::abs(lm[i].y) <= 0.93;
    if (ok) return n;
  }
  throw DataError("nuisance ranges keep pushing landmarks out of frame (100 attempts)");
}

inline DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_palms <= 0) throw ParameterError("generate_dataset: n_palms must be positive");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (!fs::exists(out_dir / "images")) throw DataError("cannot create output directory " + out_dir.string());

  struct Job {
    int palm_id, sample_idx, side, n_of_palm;
    char hand;
    Nuisance nuisance;
  };
  std::vector<Job> jobs;
  for (int palm = 0; palm < cfg.n_palms; ++palm) {
    RngState palm_rng = RngState::derive(cfg.seed, {0xDA, static_cast<uint64_t>(palm)});
    int count = cfg.fixed_samples > 0 ? cfg.fixed_samples : draw_samples_per_palm(palm_rng);
    char hand = palm_rng.next_uniform() < cfg.fraction_left ? 'L' : 'R';
    for (int s = 0; s < count; ++s) {
      RngState srng = RngState::derive(cfg.seed, {0x5A, static_cast<uint64_t>(palm), static_cast<uint64_t>(s)});
      Job j;
      j.palm_id = palm;
      j.sample_idx = s;
      j.n_of_palm = count;
      j.hand = hand;
      j.side = cfg.side_lo >= cfg.side_hi
                   ? cfg.side_lo
                   : static_cast<int>(std::lround(std::exp(srng.uniform(std::log(cfg.side_lo), std::log(cfg.side_hi)))));
      j.nuisance = draw_nuisance_in_frame(cfg.nuisance, srng);
      jobs.push_back(j);
    }
  }

  std::vector<ManifestRow> rows(jobs.size());
  std::vector<LandmarkRow> lm_rows(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), [&](int k) {
    const Job& j = jobs[static_cast<size_t>(k)];
    PalmTexture tex = PalmTexture::for_id(j.palm_id);
    uint64_t noise_seed =
        RngState::derive(cfg.seed, {0x11, static_cast<uint64_t>(j.palm_id), static_cast<uint64_t>(j.sample_idx)}).seed;
    RenderResult r = render_palm_sample(tex, j.side, j.nuisance, noise_seed);
    if (j.hand == 'L') {
      r.image = flip_horizontal(r.image);
      r.mask = flip_horizontal(r.mask);
      r.lm = flip_landmarks(r.lm);
    }
    char name[64];
    std::snprintf(name, sizeof(name), "p%04d_s%02d", j.palm_id, j.sample_idx);
    std::string img_rel;
    if (cfg.grayscale) {
      img_rel = std::string("images/") + name + ".pgm";
      FloatImage gray = FloatImage::make(1, r.image.height, r.image.width);
      for (size_t p = 0; p < gray.plane(); ++p)
        gray.data[p] = 0.299f * r.image.data[p] + 0.587f * r.image.data[gray.plane() + p] +
                       0.114f * r.image.data[2 * gray.plane() + p];
      write_pgm(out_dir / img_rel, quantize(gray));
    } else {
      img_rel = std::string("images/") + name + ".png";
      write_png(out_dir / img_rel, quantize(r.image));
    }
    write_png(out_dir / ("masks/" + std::string(name) + ".png"), quantize(r.mask));

    rows[static_cast<size_t>(k)] = ManifestRow{img_rel,  j.palm_id, j.palm_id / 2, j.hand,
                                               j.side,   j.side,    j.n_of_palm};
    lm_rows[static_cast<size_t>(k)] = LandmarkRow{img_rel, r.lm, "norm"};
  });

  DatasetManifest manifest;
  manifest.rows = std::move(rows);
  write_manifest_csv(out_dir / "manifest.csv", manifest);
  write_landmark_csv(out_dir / "landmarks.csv", lm_rows);
  return manifest;
}

// ---- Loading ----------------------------------------------------------------

struct Sample {
  std::string rel_path;
  FloatImage image;
  FloatImage mask;
  bool has_mask = false;
  LandmarkSet lm;
  bool has_landmarks = false;
  int palm_id = 0;
  int subject_id = 0;
  char hand = 'R';
  int n_samples_of_palm = 0;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<Sample> samples;
};

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.root = manifest_path.parent_path();
  DatasetManifest manifest = read_manifest_csv(manifest_path);

  std::vector<LandmarkRow> lm_rows;
  if (fs::exists(ds.root / "landmarks.csv")) lm_rows = read_landmark_csv(ds.root / "landmarks.csv");

  ds.samples.resize(manifest.rows.size());
  for (size_t k = 0; k < manifest.rows.size(); ++k) {
    const auto& row = manifest.rows[k];
    Sample& s = ds.samples[k];
    s.rel_path = row.path;
    s.palm_id = row.palm_id;
    s.subject_id = row.subject_id;
    s.hand = row.hand;
    s.n_samples_of_palm = row.n_samples_of_palm;
    s.image = read_image_3ch(ds.root / row.path);
    if (s.image.width != row.width || s.image.height != row.height)
      throw DataError("manifest size disagrees with image " + row.path);

    fs::path mask_path = ds.root / "masks" / (fs::path(row.path).stem().string() + ".png");
    if (fs::exists(mask_path)) {
      ImageU8 m = read_png(mask_path);
      FloatImage mf = dequantize(m);
      s.mask = FloatImage::make(1, mf.height, mf.width);
      std::copy(mf.data.begin(), mf.data.begin() + static_cast<long>(s.mask.plane()), s.mask.data.begin());
      s.has_mask = true;
    }
    for (const auto& lr : lm_rows) {
      if (lr.path == row.path) {
        s.lm = lr.lm;
        s.has_landmarks = true;
        for (int i = 0; i < 9; ++i)
          if (std::abs(s.lm[i].x) > 1.0 + 1e-9 || std::abs(s.lm[i].y) > 1.0 + 1e-9)
            throw DataError("landmark outside [-1,1] for " + row.path);
        break;
      }
    }
  }
  return ds;
}

// Left hands are mirrored into right-hand configuration and kept as their own
// palm ids, enlarging the identity set without mixing hands.
inline void canonicalize_hands(Dataset& ds) {
  for (auto& s : ds.samples) {
    if (s.hand != 'L') continue;
    s.image = flip_horizontal(s.image);
    if (s.has_mask) s.mask = flip_horizontal(s.mask);
    if (s.has_landmarks) s.lm = flip_landmarks(s.lm);
    s.hand = 'R';
  }
}

}  // namespace palm
