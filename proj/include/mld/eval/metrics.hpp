#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mld/motion/data.hpp"
#include "mld/numerics/rng.hpp"

namespace mld {

struct JointErrors {
  double mpjpe = 0;
  double pampjpe = 0;
  double accl = 0;
};

/// Errors between L x 3P joint position tracks. PAMPJPE aligns every frame with a similarity
/// transform first. Needs L >= 3 for the acceleration term.
JointErrors joint_errors(const Tensor& gt_pos, const Tensor& pred_pos);
JointErrors joint_errors(const MotionSequence& gt, const MotionSequence& pred);

/// Similarity transform (scale, rotation, translation) of `pred` (P x 3) that best matches `gt`.
Tensor procrustes_align(const Tensor& gt, const Tensor& pred);

/// Frechet distance between Gaussian fits of two count x dim feature sets.
double fid(const Tensor& a, const Tensor& b);

/// Mean distance between two disjoint random subsets of `x_d` rows each.
double diversity(const Tensor& feats, size_t x_d, Rng& rng);

/// Within-condition analogue of diversity over `j_m` random conditions with `x_m` pairs each.
double multimodality(std::span<const Tensor> feats_by_condition, size_t j_m, size_t x_m, Rng& rng);

struct RetrievalScores {
  double r1 = 0, r2 = 0, r3 = 0;
  double mm_dist = 0;
};

/// R-precision among `pool`-sized shuffled groups (each text against its motion and pool - 1
/// others), Euclidean. Ties count against the true match. Rows beyond a whole number of
/// groups are dropped.
RetrievalScores retrieval_metrics(const Tensor& text_feats, const Tensor& motion_feats, size_t pool, Rng& rng);

/// Fraction of predictions equal to their label.
double action_accuracy(std::span<const size_t> predicted, std::span<const size_t> labels, size_t n_classes);

struct MetricValue {
  std::string metric;
  double value = 0;
  double ci95 = 0;
  size_t reps = 1;
};

/// Mean and 1.96 sd / sqrt(n) half-width (population sd).
MetricValue summarize(const std::string& metric, std::span<const double> values);

}  // namespace mld
