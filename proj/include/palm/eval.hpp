#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "palm/classifiers.hpp"
#include "palm/rng.hpp"
#include "palm/synth.hpp"

namespace palm {

// Image-level split: every probe palm keeps at least one training image;
// palms with a single image become train-only distractors.
struct SplitPlan {
  std::vector<int> train_idx, test_idx;
  std::map<int, int> train_count_of_palm;

  bool is_distractor(int palm_id) const {
    return train_count_of_palm.count(palm_id) && !probe_palms.count(palm_id);
  }
  std::set<int> probe_palms;
};

// Random 50/50 per palm; odd counts send the extra image to training.
inline SplitPlan make_split_internetstyle(const Dataset& ds, RngState& rng) {
  if (ds.samples.empty()) throw DataError("make_split: empty dataset");
  std::map<int, std::vector<int>> by_palm;
  for (size_t i = 0; i < ds.samples.size(); ++i) by_palm[ds.samples[i].palm_id].push_back(static_cast<int>(i));
  SplitPlan plan;
  for (auto& [palm, idxs] : by_palm) {
    std::vector<int> order = rng.permutation(static_cast<int>(idxs.size()));
    int n = static_cast<int>(idxs.size());
    int n_train = (n + 1) / 2;
    for (int k = 0; k < n; ++k) {
      int idx = idxs[static_cast<size_t>(order[static_cast<size_t>(k)])];
      if (k < n_train)
        plan.train_idx.push_back(idx);
      else
        plan.test_idx.push_back(idx);
    }
    plan.train_count_of_palm[palm] = n_train;
    if (n - n_train > 0) plan.probe_palms.insert(palm);
  }
  std::sort(plan.train_idx.begin(), plan.train_idx.end());
  std::sort(plan.test_idx.begin(), plan.test_idx.end());
  return plan;
}

// First k images (manifest order) to training, the rest to probe.
inline SplitPlan make_split_firstk(const Dataset& ds, int k = 4) {
  if (ds.samples.empty()) throw DataError("make_split: empty dataset");
  if (k < 1) throw ParameterError("make_split_firstk: k must be >= 1 (no gallery otherwise)");
  std::map<int, int> seen;
  SplitPlan plan;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    int palm = ds.samples[i].palm_id;
    if (seen[palm] < k) {
      plan.train_idx.push_back(static_cast<int>(i));
      seen[palm]++;
      plan.train_count_of_palm[palm] = seen[palm];
    } else {
      plan.test_idx.push_back(static_cast<int>(i));
      plan.probe_palms.insert(palm);
    }
  }
  return plan;
}

// ---- CMC -------------------------------------------------------------------------

struct CmcCurve {
  std::vector<double> acc;  // acc[r-1] = fraction of probes ranked <= r
};

// Rank of the true class per probe, ties broken by ascending class id.
inline std::vector<int> cmc_ranks(const ScoreMatrix& sm, const std::vector<int>& truth) {
  if (truth.size() != static_cast<size_t>(sm.scores.rows())) throw DimensionError("cmc: one truth label per probe");
  std::vector<int> ranks(truth.size());
  for (size_t p = 0; p < truth.size(); ++p) {
    auto it = std::lower_bound(sm.class_ids.begin(), sm.class_ids.end(), truth[p]);
    if (it == sm.class_ids.end() || *it != truth[p])
      throw DataError("cmc: truth class " + std::to_string(truth[p]) + " absent from gallery");
    Eigen::Index tc = it - sm.class_ids.begin();
    double ts = sm.scores(static_cast<Eigen::Index>(p), tc);
    int rank = 1;
    for (Eigen::Index c = 0; c < sm.scores.cols(); ++c) {
      if (c == tc) continue;
      double s = sm.scores(static_cast<Eigen::Index>(p), c);
      if (s > ts || (s == ts && c < tc)) ++rank;
    }
    ranks[p] = rank;
  }
  return ranks;
}

inline CmcCurve cmc(const ScoreMatrix& sm, const std::vector<int>& truth) {
  std::vector<int> ranks = cmc_ranks(sm, truth);
  CmcCurve curve;
  curve.acc.assign(static_cast<size_t>(sm.scores.cols()), 0.0);
  for (int r : ranks) curve.acc[static_cast<size_t>(r - 1)] += 1.0;
  double cum = 0.0;
  for (auto& a : curve.acc) {
    cum += a;
    a = cum / static_cast<double>(ranks.size());
  }
  return curve;
}

// ---- EER -------------------------------------------------------------------------

// FAR(t) = frac(impostor >= t), FRR(t) = frac(genuine < t), swept over the
// union of scores with sentinels; the crossing of the piecewise-linear curves
// is interpolated. Returns percent.
inline double eer_percent(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty()) throw ParameterError("eer: genuine and impostor sets must be non-empty");
  std::vector<double> ts;
  ts.reserve(genuine.size() + impostor.size() + 2);
  ts.insert(ts.end(), genuine.begin(), genuine.end());
  ts.insert(ts.end(), impostor.begin(), impostor.end());
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  ts.insert(ts.begin(), ts.front() - 1.0);
  ts.push_back(ts.back() + 1.0);

  auto far = [&](double t) {
    size_t n = 0;
    for (double s : impostor) n += (s >= t);
    return static_cast<double>(n) / static_cast<double>(impostor.size());
  };
  auto frr = [&](double t) {
    size_t n = 0;
    for (double s : genuine) n += (s < t);
    return static_cast<double>(n) / static_cast<double>(genuine.size());
  };

  double prev_t = ts[0], prev_d = far(prev_t) - frr(prev_t), prev_far = far(prev_t), prev_frr = frr(prev_t);
  for (size_t i = 1; i < ts.size(); ++i) {
    double t = ts[i];
    double f = far(t), r = frr(t), d = f - r;
    if (d == 0.0) return 100.0 * f;
    if (prev_d > 0.0 && d < 0.0) {
      double alpha = prev_d / (prev_d - d);
      double value = prev_far + alpha * (f - prev_far);
      double value2 = prev_frr + alpha * (r - prev_frr);
      return 100.0 * 0.5 * (value + value2);
    }
    prev_t = t;
    prev_d = d;
    prev_far = f;
    prev_frr = r;
  }
  return prev_d >= 0.0 ? 100.0 * prev_far : 0.0;
}

// Verification pairing over an identification run: genuine = score of the
// probe's own class, impostor = all other classes.
inline void collect_score_pairs(const ScoreMatrix& sm, const std::vector<int>& truth, std::vector<double>& genuine,
                                std::vector<double>& impostor) {
  for (size_t p = 0; p < truth.size(); ++p) {
    auto it = std::lower_bound(sm.class_ids.begin(), sm.class_ids.end(), truth[p]);
    Eigen::Index tc = it - sm.class_ids.begin();
    for (Eigen::Index c = 0; c < sm.scores.cols(); ++c) {
      double s = sm.scores(static_cast<Eigen::Index>(p), c);
      if (c == tc)
        genuine.push_back(s);
      else
        impostor.push_back(s);
    }
  }
}

// ---- Conditional accuracy ----------------------------------------------------------

enum class AccAxis { TrainSamples, ImageSide };
enum class AccMode { Exactly, AtLeast };

struct ProbeMeta {
  int rank = 0;           // CMC rank of the true class
  int n_train_samples = 0;
  int image_side = 0;
};

// Rank-1 accuracy over the probe subset matching the predicate; the gallery
// is untouched. Empty subsets report as absent.
inline std::optional<double> acc_conditional(const std::vector<ProbeMeta>& probes, AccAxis axis, int X, AccMode mode) {
  int hit = 0, total = 0;
  for (const auto& p : probes) {
    int v = axis == AccAxis::TrainSamples ? p.n_train_samples : p.image_side;
    bool in = mode == AccMode::Exactly ? (v == X) : (v >= X);
    if (!in) continue;
    ++total;
    hit += (p.rank == 1);
  }
  if (total == 0) return std::nullopt;
  return 100.0 * hit / total;
}

// ---- Report -----------------------------------------------------------------------

struct EvaluationReport {
  std::string classifier;
  double rank1 = 0.0, rank30 = 0.0, eer = 0.0;
  CmcCurve curve;
  std::vector<ProbeMeta> probes;
  uint64_t seed = 0;
  std::string config_hash;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["classifier"] = classifier;
    j["rank1"] = rank1;
    j["rank30"] = rank30;
    j["eer_percent"] = eer;
    j["cmc"] = curve.acc;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    nlohmann::json accn = nlohmann::json::object(), accl = nlohmann::json::object();
    for (int x = 1; x <= 8; ++x) {
      if (auto v = acc_conditional(probes, AccAxis::TrainSamples, x, AccMode::Exactly))
        accn["exactly_" + std::to_string(x)] = *v;
      if (auto v = acc_conditional(probes, AccAxis::TrainSamples, x, AccMode::AtLeast))
        accn["at_least_" + std::to_string(x)] = *v;
    }
    for (int side : {40, 80, 115, 160, 200, 256})
      if (auto v = acc_conditional(probes, AccAxis::ImageSide, side, AccMode::AtLeast))
        accl["at_least_" + std::to_string(side)] = *v;
    j["acc_at_n"] = accn;
    j["acc_at_l"] = accl;
    nlohmann::json ranks = nlohmann::json::array();
    for (const auto& p : probes)
      ranks.push_back({{"rank", p.rank}, {"n_train", p.n_train_samples}, {"side", p.image_side}});
    j["probe_ranks"] = ranks;
    return j;
  }
};

// Fills rank metrics from a score matrix. rank30 reads CMC at min(30, C).
inline EvaluationReport evaluate_scores(const ScoreMatrix& sm, const std::vector<int>& truth) {
  EvaluationReport rep;
  rep.classifier = sm.tag;
  rep.curve = cmc(sm, truth);
  std::vector<int> ranks = cmc_ranks(sm, truth);
  rep.probes.resize(ranks.size());
  for (size_t i = 0; i < ranks.size(); ++i) rep.probes[i].rank = ranks[i];
  rep.rank1 = 100.0 * rep.curve.acc[0];
  rep.rank30 = 100.0 * rep.curve.acc[static_cast<size_t>(std::min<Eigen::Index>(30, sm.scores.cols()) - 1)];
  std::vector<double> genuine, impostor;
  collect_score_pairs(sm, truth, genuine, impostor);
  rep.eer = eer_percent(genuine, impostor);
  return rep;
}

inline void write_cmc_csv(const std::filesystem::path& path, const CmcCurve& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "rank,accuracy\n";
  char buf[32];
  for (size_t r = 0; r < curve.acc.size(); ++r) {
    std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", r + 1, curve.acc[r]);
    out << buf;
  }
}

// Minimal static polyline plot of the CMC.
inline void write_cmc_svg(const std::filesystem::path& path, const CmcCurve& curve) {
  const int W = 640, H = 420, ml = 60, mb = 50, mt = 20, mr = 20;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  auto px = [&](double r) {
    double n = std::max<size_t>(curve.acc.size() - 1, 1);
    return ml + (W - ml - mr) * (r / n);
  };
  auto py = [&](double a) { return H - mb - (H - mb - mt) * a; };
  out << "<line x1='" << ml << "' y1='" << py(0) << "' x2='" << W - mr << "' y2='" << py(0)
      << "' stroke='black'/>\n";
  out << "<line x1='" << ml << "' y1='" << py(0) << "' x2='" << ml << "' y2='" << mt << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 5; ++tick) {
    double a = tick / 5.0;
    out << "<text x='" << ml - 38 << "' y='" << py(a) + 4 << "' font-size='12'>" << a << "</text>\n";
  }
  out << "<text x='" << (W - ml) / 2 << "' y='" << H - 12 << "' font-size='13'>rank</text>\n";
  out << "<text x='12' y='" << (H - mb) / 2 << "' font-size='13' transform='rotate(-90 12 " << (H - mb) / 2
      << ")'>accuracy</text>\n";
  out << "<polyline fill='none' stroke='#1f6fb2' stroke-width='2' points='";
  for (size_t r = 0; r < curve.acc.size(); ++r) out << px(static_cast<double>(r)) << "," << py(curve.acc[r]) << " ";
  out << "'/>\n</svg>\n";
}

}  // namespace palm
