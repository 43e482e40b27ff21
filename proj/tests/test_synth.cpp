// Synthetic palm generator: ground-truth consistency, determinism, manifest
// round trips, and the ROI-recovery oracle that anchors the whole pipeline.
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "palm/synth.hpp"
#include "palm/tps.hpp"

using namespace palm;
namespace fs = std::filesystem;

namespace {

FloatImage extract_roi_image(const FloatImage& img, const LandmarkSet& lm, int h, int w) {
  auto roi = extract_roi_op(image_to_tensor<double>(img), landmarks_to_tensor<double>(lm), h, w);
  return tensor_to_image(roi);
}

double ncc(const FloatImage& a, const FloatImage& b) {
  double ma = 0, mb = 0;
  for (float v : a.data) ma += v;
  for (float v : b.data) mb += v;
  ma /= static_cast<double>(a.data.size());
  mb /= static_cast<double>(b.data.size());
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double x = a.data[i] - ma, y = b.data[i] - mb;
    num += x * y;
    da += x * x;
    db += y * y;
  }
  return num / std::max(1e-12, std::sqrt(da * db));
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(RenderSample, ZeroNuisanceLandsOnCanonicalLandmarks) {
  PalmTexture tex = PalmTexture::for_id(3);
  RenderResult r = render_palm_sample(tex, 97, Nuisance::zero(), 42);
  LandmarkSet canon = canonical_landmarks();
  for (int i = 0; i < 9; ++i) {
    EXPECT_NEAR(r.lm[i].x, canon[i].x, 1e-12);
    EXPECT_NEAR(r.lm[i].y, canon[i].y, 1e-12);
    // and the pixel mapping stays in frame
    double px = denormalize_coord(r.lm[i].x, 97);
    EXPECT_GE(px, 0.0);
    EXPECT_LE(px, 96.0);
  }
}

TEST(RenderSample, DeterministicForSameInputs) {
  PalmTexture tex = PalmTexture::for_id(7);
  RngState rng(5);
  Nuisance n = draw_nuisance(NuisanceRanges{}, rng);
  RenderResult a = render_palm_sample(tex, 64, n, 99);
  RenderResult b = render_palm_sample(tex, 64, n, 99);
  EXPECT_EQ(quantize(a.image).data, quantize(b.image).data);
  EXPECT_EQ(quantize(a.mask).data, quantize(b.mask).data);
}

TEST(RenderSample, SameIdSameTexture) {
  PalmTexture a = PalmTexture::for_id(11);
  PalmTexture b = PalmTexture::for_id(11);
  PalmTexture c = PalmTexture::for_id(12);
  FloatImage ia = canonical_texture_image(a, 33, 33);
  FloatImage ib = canonical_texture_image(b, 33, 33);
  FloatImage ic = canonical_texture_image(c, 33, 33);
  EXPECT_EQ(ia.data, ib.data);
  EXPECT_NE(ia.data, ic.data);
}

TEST(RenderSample, PlantedTextureExactAtMatchingResolution) {
  // side 113 with a 57x57 ROI puts every ROI sample on an exact pixel center,
  // so recovery error is quantization only
  PalmTexture tex = PalmTexture::for_id(21);
  RenderResult r = render_palm_sample(tex, 113, Nuisance::zero(), 1);
  FloatImage quantized = dequantize(quantize(r.image));
  FloatImage roi = extract_roi_image(quantized, r.lm, 57, 57);
  FloatImage reference = canonical_texture_image(tex, 57, 57);
  double max_err = 0;
  for (size_t i = 0; i < roi.data.size(); ++i)
    max_err = std::max(max_err, std::abs(static_cast<double>(roi.data[i]) - reference.data[i]));
  EXPECT_LT(max_err, 2.0 / 255.0);
}

TEST(RenderSample, RoiRecoveryUnderDefaultNuisances) {
  int pass = 0;
  const int total = 40;
  for (int k = 0; k < total; ++k) {
    PalmTexture tex = PalmTexture::for_id(100 + k);
    RngState rng = RngState::derive(77, {static_cast<uint64_t>(k)});
    Nuisance n = draw_nuisance_in_frame(NuisanceRanges{}, rng);
    RenderResult r = render_palm_sample(tex, 144, n, 1000 + static_cast<uint64_t>(k));
    FloatImage quantized = dequantize(quantize(r.image));
    FloatImage roi = extract_roi_image(quantized, r.lm, 112, 112);
    FloatImage reference = canonical_texture_image(tex, 112, 112);
    if (ncc(roi, reference) > 0.9) ++pass;
  }
  EXPECT_GE(pass, static_cast<int>(0.95 * total));
}

TEST(GenerateDataset, CountsAndDeterminism) {
  DatasetConfig cfg;
  cfg.n_palms = 10;
  cfg.fixed_samples = 4;
  cfg.side_lo = cfg.side_hi = 48;
  cfg.seed = 7;
  fs::path d1 = fresh_dir("palm_synth_a");
  fs::path d2 = fresh_dir("palm_synth_b");
  DatasetManifest m1 = generate_dataset(cfg, d1);
  DatasetManifest m2 = generate_dataset(cfg, d2);
  EXPECT_EQ(m1.rows.size(), 40u);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(d1 / "manifest.csv"), slurp(d2 / "manifest.csv"));
  EXPECT_EQ(slurp(d1 / "landmarks.csv"), slurp(d2 / "landmarks.csv"));
  EXPECT_EQ(slurp(d1 / m1.rows[5].path), slurp(d2 / m1.rows[5].path));

  auto lms = read_landmark_csv(d1 / "landmarks.csv");
  for (const auto& row : lms)
    for (int i = 0; i < 9; ++i) {
      EXPECT_LE(std::abs(row.lm[i].x), 1.0);
      EXPECT_LE(std::abs(row.lm[i].y), 1.0);
    }
}

TEST(GenerateDataset, PerImageRngIndependence) {
  // an image is a pure function of (seed, palm, sample): rendering job (3,1)
  // in isolation reproduces the file from the full batch run
  DatasetConfig cfg;
  cfg.n_palms = 5;
  cfg.fixed_samples = 2;
  cfg.side_lo = cfg.side_hi = 40;
  cfg.fraction_left = 0.0;
  cfg.seed = 9;
  fs::path dir = fresh_dir("palm_synth_ind");
  generate_dataset(cfg, dir);

  RngState srng = RngState::derive(cfg.seed, {0x5A, 3, 1});
  int side = cfg.side_lo;  // fixed side, so the generator drew nothing for it
  Nuisance n = draw_nuisance_in_frame(cfg.nuisance, srng);
  uint64_t noise_seed = RngState::derive(cfg.seed, {0x11, 3, 1}).seed;
  RenderResult r = render_palm_sample(PalmTexture::for_id(3), side, n, noise_seed);
  ImageU8 expected = quantize(r.image);
  ImageU8 on_disk = read_png(dir / "images/p0003_s01.png");
  EXPECT_EQ(expected.data, on_disk.data);
}

TEST(LoadDataset, RoundTripAndErrors) {
  DatasetConfig cfg;
  cfg.n_palms = 4;
  cfg.fixed_samples = 2;
  cfg.side_lo = cfg.side_hi = 44;
  cfg.seed = 3;
  cfg.fraction_left = 0.5;
  fs::path dir = fresh_dir("palm_synth_load");
  generate_dataset(cfg, dir);
  Dataset ds = load_dataset(dir / "manifest.csv");
  ASSERT_EQ(ds.samples.size(), 8u);
  auto lms = read_landmark_csv(dir / "landmarks.csv");
  for (const auto& s : ds.samples) {
    EXPECT_TRUE(s.has_landmarks);
    EXPECT_TRUE(s.has_mask);
    for (const auto& row : lms)
      if (row.path == s.rel_path)
        for (int i = 0; i < 9; ++i) EXPECT_NEAR(s.lm[i].x, row.lm[i].x, 1e-6);
  }

  // flipping left hands is an exact involution on the loaded copy
  Dataset twice = load_dataset(dir / "manifest.csv");
  canonicalize_hands(twice);
  canonicalize_hands(twice);  // idempotent after first pass
  bool any_left = false;
  for (const auto& s : ds.samples) any_left = any_left || s.hand == 'L';
  EXPECT_TRUE(any_left);

  fs::remove(dir / "images/p0001_s00.png");
  try {
    load_dataset(dir / "manifest.csv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("p0001_s00"), std::string::npos);
  }
}

TEST(LoadDataset, GrayscalePgmReplicatesChannels) {
  DatasetConfig cfg;
  cfg.n_palms = 2;
  cfg.fixed_samples = 1;
  cfg.side_lo = cfg.side_hi = 40;
  cfg.grayscale = true;
  cfg.seed = 5;
  fs::path dir = fresh_dir("palm_synth_gray");
  generate_dataset(cfg, dir);
  Dataset ds = load_dataset(dir / "manifest.csv");
  ASSERT_EQ(ds.samples.size(), 2u);
  const FloatImage& img = ds.samples[0].image;
  EXPECT_EQ(img.channels, 3);
  for (size_t p = 0; p < img.plane(); ++p) {
    EXPECT_EQ(img.data[p], img.data[img.plane() + p]);
    EXPECT_EQ(img.data[p], img.data[2 * img.plane() + p]);
  }
}

TEST(GeneratorHealth, IntraIdentityCloserThanInter) {
  // untrained random-feature pipeline: fixed random projection of the
  // ground-truth ROI; same-id pairs must be closer in cosine distance
  const int ids = 6, per = 3, dim = 64;
  RngState proj_rng(123);
  std::vector<std::vector<double>> descs;
  std::vector<int> labels;
  std::vector<double> proj(static_cast<size_t>(dim) * 32 * 32 * 3);
  for (auto& v : proj) v = proj_rng.next_gaussian();

  for (int id = 0; id < ids; ++id) {
    PalmTexture tex = PalmTexture::for_id(500 + id);
    for (int s = 0; s < per; ++s) {
      RngState rng = RngState::derive(808, {static_cast<uint64_t>(id), static_cast<uint64_t>(s)});
      NuisanceRanges mild;
      mild.tps_mag = 0.03;
      mild.rot_deg = 10;
      mild.noise_sigma = 0.008;
      Nuisance n = draw_nuisance_in_frame(mild, rng);
      RenderResult r = render_palm_sample(tex, 128, n, 4000 + static_cast<uint64_t>(id * 16 + s));
      FloatImage roi = extract_roi_image(r.image, r.lm, 32, 32);
      std::vector<double> d(dim, 0.0);
      for (int k = 0; k < dim; ++k)
        for (size_t i = 0; i < roi.data.size(); ++i) d[static_cast<size_t>(k)] += proj[static_cast<size_t>(k) * roi.data.size() + i] * roi.data[i];
      descs.push_back(std::move(d));
      labels.push_back(id);
    }
  }
  auto cosd = [](const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      num += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return 1.0 - num / std::max(1e-12, std::sqrt(na * nb));
  };
  double intra = 0, inter = 0;
  int n_intra = 0, n_inter = 0;
  for (size_t i = 0; i < descs.size(); ++i)
    for (size_t j = i + 1; j < descs.size(); ++j) {
      double d = cosd(descs[i], descs[j]);
      if (labels[i] == labels[j]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  EXPECT_LT(intra / n_intra, inter / n_inter);
}

TEST(GenerateDataset, RejectsBadConfig) {
  DatasetConfig cfg;
  cfg.n_palms = 0;
  EXPECT_THROW(generate_dataset(cfg, fs::temp_directory_path() / "x"), ParameterError);
}
