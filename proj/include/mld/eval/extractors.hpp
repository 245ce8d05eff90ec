#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mld/models/conditioning.hpp"
#include "mld/models/vae.hpp"
#include "mld/motion/data.hpp"
#include "mld/nn/layers.hpp"
#include "mld/numerics/optim.hpp"

namespace mld {

/// Small evaluators trained on the corpus itself. Their scores are only comparable between
/// runs that share an extractor checkpoint.
struct ExtractorConfig {
  PoseLayout layout = pose_layout(22, false);
  size_t dim = 64;
  size_t layers = 2;
  size_t heads = 4;
  size_t ff_dim = 128;
  size_t embed_dim = 32;
  size_t max_len = 196;
  /// Hash text features (dual encoder only).
  size_t text_dim = 64;
  uint64_t text_seed = 0;
  /// Classes (action classifier only).
  size_t n_actions = 0;

  void validate() const;
};

/// Frame projection, transformer, mean pooling, output projection. Inputs are normalized.
class MotionEncoder {
 public:
  MotionEncoder() = default;
  MotionEncoder(ParamStore& store, const std::string& name, const ExtractorConfig& cfg, Rng& rng);
  Var forward(std::span<const Tensor> xs) const;

 private:
  nn::Linear in_, out_;
  nn::SkipTransformer stack_;
  Tensor pe_;
  size_t max_len_ = 0;
};

/// Holds its normalization statistics as frozen entries of its parameter store.
class Extractor {
 public:
  const ExtractorConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  NormStats stats() const;
  void set_stats(const NormStats& s);
  /// Pooled motion features for raw (unnormalized) motions, no gradient tracking.
  Tensor motion_features(std::span<const Tensor> raw) const;
  virtual Var motion_embed(std::span<const Tensor> normalized) const { return motion_.forward(normalized); }
  virtual ~Extractor() = default;

 protected:
  Extractor(const ExtractorConfig& cfg, uint64_t seed, uint64_t stream);
  ExtractorConfig cfg_;
  ParamStore store_;
  Rng init_;
  MotionEncoder motion_;
};

/// Motion and text encoders into one space; rows are zero-mean with unit norm.
class DualEncoder : public Extractor {
 public:
  DualEncoder(const ExtractorConfig& cfg, uint64_t seed);
  Var motion_embed(std::span<const Tensor> normalized) const override;
  Tensor text_features(std::span<const std::string> texts) const;
  Var text_embed(std::span<const std::string> texts) const;
  Var unit_rows(const Var& x) const;
  const HashTextEmbedder& provider() const { return provider_; }

 private:
  HashTextEmbedder provider_;
  nn::Linear text_1_, text_2_;
  Var unit_gamma_, unit_beta_;
};

class ActionClassifier : public Extractor {
 public:
  ActionClassifier(const ExtractorConfig& cfg, uint64_t seed);
  Var logits(std::span<const Tensor> normalized) const;
  std::vector<size_t> predict(std::span<const Tensor> raw) const;

 private:
  nn::Linear head_;
};

struct ExtractorTrainOptions {
  size_t epochs = 30;
  size_t batch_size = 32;
  AdamWConfig optim{.lr = 1e-3};
  double holdout = 0.2;
  double temperature = 0.1;
  uint64_t seed = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

struct ExtractorTrainResult {
  std::vector<EpochLog> logs;
  size_t train_count = 0, heldout_count = 0;
  /// Classifier: held-out accuracy.
  double heldout_accuracy = 0;
  /// Dual encoder: mean held-out distance of matched and of mismatched pairs.
  double matched_distance = 0, mismatched_distance = 0;
};

/// Contrastive training on (text, motion) pairs; items sharing a text are all positives.
ExtractorTrainResult train_dual_encoder(DualEncoder& enc, std::span<const MotionItem> items, const ExtractorTrainOptions& opts);
/// Cross-entropy training on (motion, action) pairs.
ExtractorTrainResult train_action_classifier(ActionClassifier& clf, std::span<const MotionItem> items,
                                             const ExtractorTrainOptions& opts);

}  // namespace mld
