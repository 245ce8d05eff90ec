#include "mld/eval/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numeric>

#include "mld/error.hpp"

namespace mld {

namespace {

using MatX = Eigen::MatrixXd;
using Mat3 = Eigen::Matrix3d;

MatX to_eigen(const Tensor& t) {
  MatX m(t.rows(), t.cols());
  for (size_t r = 0; r < t.rows(); ++r)
    for (size_t c = 0; c < t.cols(); ++c) m(long(r), long(c)) = t.at(r, c);
  return m;
}

Eigen::MatrixX3d frame_joints(const Tensor& pos, size_t frame) {
  const size_t P = pos.cols() / 3;
  Eigen::MatrixX3d m(P, 3);
  for (size_t j = 0; j < P; ++j)
    for (size_t k = 0; k < 3; ++k) m(long(j), long(k)) = pos.at(frame, 3 * j + k);
  return m;
}

Eigen::MatrixX3d align(const Eigen::MatrixX3d& gt, const Eigen::MatrixX3d& pred) {
  const Eigen::RowVector3d mg = gt.colwise().mean(), mp = pred.colwise().mean();
  const Eigen::MatrixX3d g = gt.rowwise() - mg, p = pred.rowwise() - mp;
  const double var = p.squaredNorm();
  if (var == 0) return mg.replicate(gt.rows(), 1);
  Eigen::JacobiSVD<Mat3> svd(p.transpose() * g, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1;
  const Mat3 R = svd.matrixV() * d * svd.matrixU().transpose();
  const double s = (svd.singularValues().asDiagonal() * d).trace() / var;
  return ((s * (R * p.transpose())).transpose()).rowwise() + mg;
}

double mean_joint_distance(const Eigen::MatrixX3d& a, const Eigen::MatrixX3d& b) { return (a - b).rowwise().norm().mean(); }

void fit_gaussian(const Tensor& x, Eigen::VectorXd& mu, MatX& cov) {
  const MatX m = to_eigen(x);
  mu = m.colwise().mean().transpose();
  const MatX c = m.rowwise() - mu.transpose();
  cov = (c.transpose() * c) / double(m.rows() - 1);
  if (m.rows() < m.cols() + 1) cov += 1e-6 * MatX::Identity(m.cols(), m.cols());
}

double row_distance(const Tensor& x, size_t i, const Tensor& y, size_t j) {
  double s = 0;
  for (size_t c = 0; c < x.cols(); ++c) s += std::pow(double(x.at(i, c)) - double(y.at(j, c)), 2);
  return std::sqrt(s);
}

double paired_subset_distance(const Tensor& f, size_t x, Rng& rng) {
  std::vector<size_t> idx(f.rows());
  std::iota(idx.begin(), idx.end(), size_t(0));
  rng.shuffle(std::span<size_t>(idx));
  double acc = 0;
  for (size_t i = 0; i < x; ++i) acc += row_distance(f, idx[i], f, idx[x + i]);
  return acc / double(x);
}

}  // namespace

Tensor procrustes_align(const Tensor& gt, const Tensor& pred) {
  if (gt.dims() != pred.dims() || gt.cols() != 3) throw ShapeError("procrustes: expected matching P x 3 inputs");
  const Eigen::MatrixX3d a = align(to_eigen(gt), to_eigen(pred));
  Tensor out(gt.dims());
  for (size_t j = 0; j < gt.rows(); ++j)
    for (size_t k = 0; k < 3; ++k) out.at(j, k) = real(a(long(j), long(k)));
  return out;
}

JointErrors joint_errors(const Tensor& gt_pos, const Tensor& pred_pos) {
  if (gt_pos.dims() != pred_pos.dims())
    throw ShapeError("joint_errors: " + shape_str(gt_pos.dims()) + " vs " + shape_str(pred_pos.dims()));
  if (gt_pos.cols() == 0 || gt_pos.cols() % 3 != 0) throw ShapeError("joint_errors: width must be 3 x joints");
  const size_t L = gt_pos.rows();
  if (L < 3) throw ConfigError("joint_errors: acceleration error needs at least 3 frames, got " + std::to_string(L));
  JointErrors e;
  std::vector<Eigen::MatrixX3d> g, p;
  for (size_t f = 0; f < L; ++f) {
    g.push_back(frame_joints(gt_pos, f));
    p.push_back(frame_joints(pred_pos, f));
    e.mpjpe += mean_joint_distance(g.back(), p.back());
    e.pampjpe += mean_joint_distance(g.back(), align(g.back(), p.back()));
  }
  e.mpjpe /= double(L);
  e.pampjpe /= double(L);
  for (size_t f = 1; f + 1 < L; ++f)
    e.accl += mean_joint_distance(g[f + 1] - 2 * g[f] + g[f - 1], p[f + 1] - 2 * p[f] + p[f - 1]);
  e.accl /= double(L - 2);
  return e;
}

JointErrors joint_errors(const MotionSequence& gt, const MotionSequence& pred) {
  if (!(gt.layout == pred.layout)) throw ShapeError("joint_errors: motions use different layouts");
  if (gt.frames() != pred.frames())
    throw ShapeError("joint_errors: " + std::to_string(gt.frames()) + " vs " + std::to_string(pred.frames()) + " frames");
  return joint_errors(joint_positions(gt), joint_positions(pred));
}

double fid(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw ShapeError("fid: feature dims " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  if (a.rows() < 2 || b.rows() < 2) throw ConfigError("fid: each feature set needs at least 2 rows");
  Eigen::VectorXd ma, mb;
  MatX ca, cb;
  fit_gaussian(a, ma, ca);
  fit_gaussian(b, mb, cb);
  // tr((Ca Cb)^1/2) = tr((Ca^1/2 Cb Ca^1/2)^1/2), a symmetric PSD product.
  Eigen::SelfAdjointEigenSolver<MatX> ea(ca);
  const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatX sa = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  MatX m = sa * cb * sa;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatX> em(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2 * tr_sqrt;
}

double diversity(const Tensor& feats, size_t x_d, Rng& rng) {
  if (x_d == 0) throw ConfigError("diversity: subset size must be positive");
  if (feats.rows() < 2 * x_d)
    throw ConfigError("diversity: subset size " + std::to_string(x_d) + " needs " + std::to_string(2 * x_d) +
                      " rows, have " + std::to_string(feats.rows()));
  return paired_subset_distance(feats, x_d, rng);
}

double multimodality(std::span<const Tensor> feats_by_condition, size_t j_m, size_t x_m, Rng& rng) {
  if (j_m == 0 || x_m == 0) throw ConfigError("multimodality: j_m and x_m must be positive");
  std::vector<size_t> eligible;
  for (size_t i = 0; i < feats_by_condition.size(); ++i)
    if (feats_by_condition[i].rows() >= 2 * x_m) eligible.push_back(i);
  if (eligible.size() < j_m)
    throw ConfigError("multimodality: need " + std::to_string(j_m) + " conditions with " + std::to_string(2 * x_m) +
                      " motions each, have " + std::to_string(eligible.size()));
  rng.shuffle(std::span<size_t>(eligible));
  double acc = 0;
  for (size_t j = 0; j < j_m; ++j) acc += paired_subset_distance(feats_by_condition[eligible[j]], x_m, rng);
  return acc / double(j_m);
}

RetrievalScores retrieval_metrics(const Tensor& text_feats, const Tensor& motion_feats, size_t pool, Rng& rng) {
  if (text_feats.dims() != motion_feats.dims())
    throw ShapeError("retrieval: " + shape_str(text_feats.dims()) + " vs " + shape_str(motion_feats.dims()));
  if (pool < 2) throw ConfigError("retrieval: pool must be at least 2");
  const size_t N = text_feats.rows();
  if (N < pool) throw ConfigError("retrieval: " + std::to_string(N) + " pairs is fewer than the pool of " + std::to_string(pool));
  std::vector<size_t> idx(N);
  std::iota(idx.begin(), idx.end(), size_t(0));
  rng.shuffle(std::span<size_t>(idx));
  RetrievalScores s;
  const size_t groups = N / pool;
  for (size_t g = 0; g < groups; ++g) {
    for (size_t q = 0; q < pool; ++q) {
      const size_t tq = idx[g * pool + q];
      const double d_true = row_distance(text_feats, tq, motion_feats, tq);
      size_t rank = 0;
      for (size_t o = 0; o < pool; ++o)
        if (o != q && row_distance(text_feats, tq, motion_feats, idx[g * pool + o]) <= d_true) ++rank;
      s.r1 += rank < 1;
      s.r2 += rank < 2;
      s.r3 += rank < 3;
      s.mm_dist += d_true;
    }
  }
  const double n = double(groups * pool);
  s.r1 /= n;
  s.r2 /= n;
  s.r3 /= n;
  s.mm_dist /= n;
  return s;
}

double action_accuracy(std::span<const size_t> predicted, std::span<const size_t> labels, size_t n_classes) {
  if (labels.empty()) throw Error("action_accuracy: no motions");
  if (predicted.size() != labels.size()) throw ShapeError("action_accuracy: predictions and labels differ in count");
  size_t hit = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw Error("action_accuracy: label " + std::to_string(labels[i]) + " out of range");
    hit += predicted[i] == labels[i];
  }
  return double(hit) / double(labels.size());
}

MetricValue summarize(const std::string& metric, std::span<const double> values) {
  if (values.empty()) throw Error("summarize: no values for " + metric);
  MetricValue v{metric, 0, 0, values.size()};
  for (double x : values) v.value += x;
  v.value /= double(values.size());
  double var = 0;
  for (double x : values) var += (x - v.value) * (x - v.value);
  var /= double(values.size());
  v.ci95 = 1.96 * std::sqrt(var) / std::sqrt(double(values.size()));
  return v;
}

}  // namespace mld
