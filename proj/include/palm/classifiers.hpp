#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "palm/errors.hpp"
#include "palm/parallel.hpp"

namespace palm {

// Rows are probes, columns follow class_ids (ascending palm id); higher score
// means more similar. All four back-ends emit this shape so CMC computations
// are comparable.
struct ScoreMatrix {
  std::vector<int> class_ids;
  std::vector<int> probe_ids;
  Eigen::MatrixXd scores;
  std::string tag;
};

inline void write_score_csv(const std::filesystem::path& path, const ScoreMatrix& sm) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "probe_id";
  for (int c : sm.class_ids) out << "," << c;
  out << "\n";
  for (Eigen::Index r = 0; r < sm.scores.rows(); ++r) {
    out << sm.probe_ids[static_cast<size_t>(r)];
    char buf[32];
    for (Eigen::Index c = 0; c < sm.scores.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), ",%.10g", sm.scores(r, c));
      out << buf;
    }
    out << "\n";
  }
}

// ---- z-score standardization --------------------------------------------------

struct ZScoreStats {
  Eigen::VectorXd mean, std;
  std::vector<uint8_t> clamped;  // dims whose variance vanished (std forced to 1)
};

inline ZScoreStats zscore_fit(const Eigen::MatrixXd& train) {
  if (train.rows() < 2) throw ParameterError("zscore_fit: need at least 2 samples");
  ZScoreStats s;
  s.mean = train.colwise().mean();
  Eigen::MatrixXd centered = train.rowwise() - s.mean.transpose();
  s.std = (centered.array().square().colwise().sum() / static_cast<double>(train.rows() - 1)).sqrt();
  s.clamped.assign(static_cast<size_t>(train.cols()), 0);
  for (Eigen::Index d = 0; d < s.std.size(); ++d)
    if (s.std(d) < 1e-12) {
      s.std(d) = 1.0;
      s.clamped[static_cast<size_t>(d)] = 1;
    }
  return s;
}

inline Eigen::MatrixXd zscore_apply(const ZScoreStats& s, const Eigen::MatrixXd& x) {
  if (x.cols() != s.mean.size()) throw DimensionError("zscore_apply: dimension mismatch");
  return (x.rowwise() - s.mean.transpose()).array().rowwise() / s.std.transpose().array();
}

// ---- Partial least squares -----------------------------------------------------

// PLS1 sequence on centered data; components are kept so a K'-component model
// is literally the first K' iterations of the K-component run.
struct PlsComponents {
  Eigen::MatrixXd W, P;  // d x k
  Eigen::VectorXd q;     // k
  Eigen::VectorXd x_mean;
  double y_mean = 0.0;
  int k_effective = 0;
};

inline PlsComponents pls1_fit(const Eigen::MatrixXd& X0, const Eigen::VectorXd& y0, int K) {
  const Eigen::Index n = X0.rows(), d = X0.cols();
  if (K < 1 || K > std::min<Eigen::Index>(n - 1, d))
    throw ParameterError("pls1_fit: K must be in [1, min(n-1, d)], got " + std::to_string(K));
  PlsComponents c;
  c.x_mean = X0.colwise().mean();
  c.y_mean = y0.mean();
  Eigen::MatrixXd X = X0.rowwise() - c.x_mean.transpose();
  Eigen::VectorXd y = y0.array() - c.y_mean;
  c.W.resize(d, K);
  c.P.resize(d, K);
  c.q.resize(K);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd w = X.transpose() * y;
    double wn = w.norm();
    if (wn < 1e-12) break;  // nothing left to extract
    w /= wn;
    Eigen::VectorXd t = X * w;
    double tt = t.squaredNorm();
    if (tt < 1e-24) break;
    Eigen::VectorXd p = X.transpose() * t / tt;
    double q = y.dot(t) / tt;
    X -= t * p.transpose();
    y -= q * t;
    c.W.col(k) = w;
    c.P.col(k) = p;
    c.q(k) = q;
    c.k_effective = k + 1;
  }
  if (c.k_effective == 0) throw NumericError("pls1_fit: response carries no signal");
  c.W.conservativeResize(d, c.k_effective);
  c.P.conservativeResize(d, c.k_effective);
  c.q.conservativeResize(c.k_effective);
  return c;
}

struct PlsLinear {
  Eigen::VectorXd beta;
  double intercept = 0.0;
};

// Collapses the first k components into a single linear predictor.
inline PlsLinear pls_compose(const PlsComponents& c, int k = 0) {
  int use = k > 0 ? std::min(k, c.k_effective) : c.k_effective;
  Eigen::MatrixXd W = c.W.leftCols(use), P = c.P.leftCols(use);
  Eigen::VectorXd q = c.q.head(use);
  PlsLinear lin;
  lin.beta = W * (P.transpose() * W).lu().solve(q);
  lin.intercept = c.y_mean - c.x_mean.dot(lin.beta);
  return lin;
}

// One-against-all PLS: a +-1 regression per gallery class.
struct PlsModel {
  std::vector<int> class_ids;
  std::vector<PlsComponents> components;
  std::vector<PlsLinear> predictors;
  int K = 0;
};

inline std::vector<int> sorted_unique_labels(const std::vector<int>& labels) {
  std::set<int> s(labels.begin(), labels.end());
  return std::vector<int>(s.begin(), s.end());
}

inline PlsModel pls_train(const Eigen::MatrixXd& X, const std::vector<int>& labels, int K) {
  if (static_cast<Eigen::Index>(labels.size()) != X.rows()) throw DimensionError("pls_train: one label per row");
  PlsModel m;
  m.class_ids = sorted_unique_labels(labels);
  if (m.class_ids.size() < 2) throw ParameterError("pls_train: need at least two classes");
  m.K = K;
  m.components.resize(m.class_ids.size());
  m.predictors.resize(m.class_ids.size());
  parallel_for(static_cast<int>(m.class_ids.size()), [&](int ci) {
    Eigen::VectorXd y(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      y(r) = labels[static_cast<size_t>(r)] == m.class_ids[static_cast<size_t>(ci)] ? 1.0 : -1.0;
    m.components[static_cast<size_t>(ci)] = pls1_fit(X, y, K);
    m.predictors[static_cast<size_t>(ci)] = pls_compose(m.components[static_cast<size_t>(ci)]);
  });
  return m;
}

inline ScoreMatrix pls_score(const PlsModel& m, const Eigen::MatrixXd& probes) {
  if (!m.predictors.empty() && probes.cols() != m.predictors[0].beta.size())
    throw DimensionError("pls_score: probe dimension mismatch");
  ScoreMatrix sm;
  sm.tag = "pls";
  sm.class_ids = m.class_ids;
  sm.scores.resize(probes.rows(), static_cast<Eigen::Index>(m.class_ids.size()));
  for (size_t ci = 0; ci < m.predictors.size(); ++ci)
    sm.scores.col(static_cast<Eigen::Index>(ci)) =
        (probes * m.predictors[ci].beta).array() + m.predictors[ci].intercept;
  sm.probe_ids.resize(static_cast<size_t>(probes.rows()));
  for (size_t i = 0; i < sm.probe_ids.size(); ++i) sm.probe_ids[i] = static_cast<int>(i);
  return sm;
}

// ---- Linear SVM -----------------------------------------------------------------

struct SvmModel {
  std::vector<int> class_ids;
  Eigen::MatrixXd W;  // d x n_class
  Eigen::VectorXd b;
};

// One-against-all hinge loss, full-batch subgradient descent in a fixed
// sample order with a 1/(1 + lr*reg*t) step decay.
inline SvmModel svm_train(const Eigen::MatrixXd& X, const std::vector<int>& labels, int epochs = 200,
                          double lr = 0.01, double reg = 1e-4) {
  if (static_cast<Eigen::Index>(labels.size()) != X.rows()) throw DimensionError("svm_train: one label per row");
  SvmModel m;
  m.class_ids = sorted_unique_labels(labels);
  if (m.class_ids.size() < 2) throw ParameterError("svm_train: need at least two classes");
  const Eigen::Index n = X.rows(), d = X.cols();
  m.W = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(m.class_ids.size()));
  m.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.class_ids.size()));
  parallel_for(static_cast<int>(m.class_ids.size()), [&](int ci) {
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r)
      y(r) = labels[static_cast<size_t>(r)] == m.class_ids[static_cast<size_t>(ci)] ? 1.0 : -1.0;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    double b = 0.0;
    for (int t = 1; t <= epochs; ++t) {
      double eta = lr / (1.0 + lr * reg * t);
      Eigen::VectorXd margins = (X * w).array() + b;
      Eigen::VectorXd gw = reg * w;
      double gb = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) {
        if (y(r) * margins(r) < 1.0) {
          gw -= y(r) / static_cast<double>(n) * X.row(r).transpose();
          gb -= y(r) / static_cast<double>(n);
        }
      }
      w -= eta * gw;
      b -= eta * gb;
    }
    m.W.col(ci) = w;
    m.b(ci) = b;
  });
  return m;
}

inline ScoreMatrix svm_score(const SvmModel& m, const Eigen::MatrixXd& probes) {
  if (probes.cols() != m.W.rows()) throw DimensionError("svm_score: probe dimension mismatch");
  ScoreMatrix sm;
  sm.tag = "svm";
  sm.class_ids = m.class_ids;
  sm.scores = (probes * m.W).rowwise() + m.b.transpose();
  sm.probe_ids.resize(static_cast<size_t>(probes.rows()));
  for (size_t i = 0; i < sm.probe_ids.size(); ++i) sm.probe_ids[i] = static_cast<int>(i);
  return sm;
}

// ---- 1-NN with cosine distance ----------------------------------------------------

inline double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double na = a.norm(), nb = b.norm();
  if (na < 1e-300 || nb < 1e-300) return 1.0;  // zero vectors by convention
  return 1.0 - a.dot(b) / (na * nb);
}

// Class score = -min cosine distance over that class's gallery samples (k=1).
inline ScoreMatrix knn_score(const Eigen::MatrixXd& gallery, const std::vector<int>& gallery_labels,
                             const Eigen::MatrixXd& probes) {
  if (gallery.rows() == 0) throw ParameterError("knn_score: empty gallery");
  if (static_cast<Eigen::Index>(gallery_labels.size()) != gallery.rows())
    throw DimensionError("knn_score: one label per gallery row");
  if (probes.cols() != gallery.cols()) throw DimensionError("knn_score: probe dimension mismatch");
  ScoreMatrix sm;
  sm.tag = "knn";
  sm.class_ids = sorted_unique_labels(gallery_labels);
  sm.scores.resize(probes.rows(), static_cast<Eigen::Index>(sm.class_ids.size()));
  std::vector<int> col_of;
  {
    col_of.resize(gallery_labels.size());
    for (size_t r = 0; r < gallery_labels.size(); ++r)
      col_of[r] = static_cast<int>(std::lower_bound(sm.class_ids.begin(), sm.class_ids.end(), gallery_labels[r]) -
                                   sm.class_ids.begin());
  }
  for (Eigen::Index p = 0; p < probes.rows(); ++p) {
    Eigen::VectorXd best = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(sm.class_ids.size()), 2.0);
    for (Eigen::Index g = 0; g < gallery.rows(); ++g) {
      double d = cosine_distance(probes.row(p).transpose(), gallery.row(g).transpose());
      auto c = static_cast<Eigen::Index>(col_of[static_cast<size_t>(g)]);
      best(c) = std::min(best(c), d);
    }
    sm.scores.row(p) = -best.transpose();
  }
  sm.probe_ids.resize(static_cast<size_t>(probes.rows()));
  for (size_t i = 0; i < sm.probe_ids.size(); ++i) sm.probe_ids[i] = static_cast<int>(i);
  return sm;
}

// ---- Softmax scores ----------------------------------------------------------------

// Row-wise softmax over precomputed fc5 logits.
inline ScoreMatrix softmax_score_from_logits(const Eigen::MatrixXd& logits, const std::vector<int>& class_ids) {
  if (logits.cols() != static_cast<Eigen::Index>(class_ids.size()))
    throw DimensionError("softmax_score: logit width must equal the gallery class count");
  ScoreMatrix sm;
  sm.tag = "softmax";
  sm.class_ids = class_ids;
  sm.scores.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = logits.row(r).maxCoeff();
    Eigen::ArrayXd e = (logits.row(r).array() - mx).exp();
    sm.scores.row(r) = (e / e.sum()).matrix();
  }
  sm.probe_ids.resize(static_cast<size_t>(logits.rows()));
  for (size_t i = 0; i < sm.probe_ids.size(); ++i) sm.probe_ids[i] = static_cast<int>(i);
  return sm;
}

}  // namespace palm
