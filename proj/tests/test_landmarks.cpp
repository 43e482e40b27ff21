// Nine-landmark scheme: midpoint derivation, coordinate normalization,
// left-right flipping, NME, and the CSV formats.
#include <gtest/gtest.h>

#include <filesystem>

#include "palm/landmarks.hpp"
#include "palm/rng.hpp"

using namespace palm;

TEST(DeriveFullSet, MidpointExamples) {
  auto s = derive_full_set({0, 0}, {0, -1}, {1, 0}, {0, 1}, {1, 1});
  EXPECT_DOUBLE_EQ(s[3].x, 0.0);  // L4 = mid(L1,L7)
  EXPECT_DOUBLE_EQ(s[3].y, 0.5);

  auto t = derive_full_set({-1, 0}, {0, -1}, {1, 0}, {-1, 1}, {1, 1});
  EXPECT_DOUBLE_EQ(t[7].x, 0.0);  // L8 = mid(L7,L9)
  EXPECT_DOUBLE_EQ(t[7].y, 1.0);
  EXPECT_DOUBLE_EQ(t[4].x, 0.0);  // L5 = mid(L8,L2)
  EXPECT_DOUBLE_EQ(t[4].y, 0.0);
}

TEST(DeriveFullSet, DegenerateCollapse) {
  Vec2 p{0.3, -0.4};
  auto s = derive_full_set(p, p, p, p, p);
  for (int i = 0; i < 9; ++i) {
    EXPECT_DOUBLE_EQ(s[i].x, p.x);
    EXPECT_DOUBLE_EQ(s[i].y, p.y);
  }
}

TEST(DeriveFullSet, IdempotentOnPrimaryPoints) {
  RngState rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto rnd = [&]() { return Vec2{rng.uniform(-1, 1), rng.uniform(-1, 1)}; };
    auto s = derive_full_set(rnd(), rnd(), rnd(), rnd(), rnd());
    auto again = derive_full_set(s[0], s[1], s[2], s[6], s[8]);
    for (int i = 0; i < 9; ++i) {
      EXPECT_EQ(again[i].x, s[i].x);
      EXPECT_EQ(again[i].y, s[i].y);
    }
    // midpoint identities within 1e-12
    EXPECT_NEAR(s[3].x, (s[0].x + s[6].x) / 2, 1e-12);
    EXPECT_NEAR(s[4].x, (s[7].x + s[1].x) / 2, 1e-12);
    EXPECT_NEAR(s[5].y, (s[2].y + s[8].y) / 2, 1e-12);
  }
}

TEST(Normalize, PixelEndpointsAndCenter) {
  EXPECT_DOUBLE_EQ(normalize_coord(0, 100), -1.0);
  EXPECT_DOUBLE_EQ(normalize_coord(99, 100), 1.0);
  EXPECT_DOUBLE_EQ(normalize_coord(49.5, 100), 0.0);
  EXPECT_THROW(normalize_coord(0, 1), DimensionError);

  RngState rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    double px = rng.uniform(0, 63);
    EXPECT_NEAR(denormalize_coord(normalize_coord(px, 64), 64), px, 1e-12);
  }
}

TEST(Flip, InvolutionIsExact) {
  RngState rng(3);
  LandmarkSet s;
  for (int i = 0; i < 9; ++i) s[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  auto twice = flip_landmarks(flip_landmarks(s));
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(twice[i].x, s[i].x);
    EXPECT_EQ(twice[i].y, s[i].y);
  }
}

TEST(Flip, SymmetricSetUnchanged) {
  // mirror-symmetric about x=0: L1/L3, L4/L6, L7/L9 mirrored pairs, middle column on axis
  LandmarkSet s = derive_full_set({-0.5, -0.4}, {0.0, -0.4}, {0.5, -0.4}, {-0.5, 0.6}, {0.5, 0.6});
  auto f = flip_landmarks(s);
  for (int i = 0; i < 9; ++i) {
    EXPECT_NEAR(f[i].x, s[i].x, 1e-12);
    EXPECT_NEAR(f[i].y, s[i].y, 1e-12);
  }
}

TEST(Flip, PreservesNme) {
  RngState rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    LandmarkSet a, b;
    for (int i = 0; i < 9; ++i) {
      a[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      b[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    }
    EXPECT_NEAR(nme_percent(flip_landmarks(a), flip_landmarks(b)), nme_percent(a, b), 1e-12);
  }
}

TEST(Nme, Examples) {
  LandmarkSet g;
  RngState rng(5);
  for (int i = 0; i < 9; ++i) g[i] = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
  EXPECT_DOUBLE_EQ(nme_percent(g, g), 0.0);

  LandmarkSet shifted = g;
  for (int i = 0; i < 9; ++i) shifted[i].x += 0.02;
  EXPECT_NEAR(nme_percent(shifted, g), 1.0, 1e-12);

  LandmarkSet one_off = g;
  one_off[4].y += 0.18;
  EXPECT_NEAR(nme_percent(one_off, g), 1.0, 1e-12);
}

TEST(LandmarkCsv, RoundTrip) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "palm_lmcsv";
  fs::create_directories(dir);
  RngState rng(6);
  std::vector<LandmarkRow> rows;
  for (int k = 0; k < 3; ++k) {
    LandmarkRow r;
    r.path = "images/img" + std::to_string(k) + ".png";
    for (int i = 0; i < 9; ++i) r.lm[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    rows.push_back(r);
  }
  write_landmark_csv(dir / "landmarks.csv", rows);
  auto back = read_landmark_csv(dir / "landmarks.csv");
  ASSERT_EQ(back.size(), rows.size());
  for (size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(back[k].path, rows[k].path);
    EXPECT_EQ(back[k].space, "norm");
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(back[k].lm[i].x, rows[k].lm[i].x, 1e-9);
  }

  std::ofstream bad(dir / "bad.csv");
  bad << "path,x1,y1,x2,y2,x3,y3,x4,y4,x5,y5,x6,y6,x7,y7,x8,y8,x9,y9,space\n";
  bad << "img.png,0.1,oops\n";
  bad.close();
  try {
    read_landmark_csv(dir / "bad.csv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);  // line number reported
  }
}

TEST(AnnotationCsv, RoundTrip) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "palm_anncsv";
  fs::create_directories(dir);
  AnnotationRecord r;
  r.path = "hand.png";
  r.primary = {Vec2{10, 12}, Vec2{50, 8}, Vec2{90, 14}, Vec2{15, 110}, Vec2{85, 112}};
  write_annotation_csv(dir / "ann.csv", {r});
  auto back = read_annotation_csv(dir / "ann.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].path, "hand.png");
  for (int i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(back[0].primary[static_cast<size_t>(i)].x, r.primary[static_cast<size_t>(i)].x);
    EXPECT_DOUBLE_EQ(back[0].primary[static_cast<size_t>(i)].y, r.primary[static_cast<size_t>(i)].y);
  }
}
