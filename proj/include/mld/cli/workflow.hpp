#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mld/cli/bundle.hpp"
#include "mld/eval/bench.hpp"
#include "mld/eval/metrics.hpp"

namespace mld {

using EpochFn = std::function<void(const EpochLog&)>;

/// Condition of each item under the run's conditioning kind. Missing labels are a ConfigError.
std::vector<Condition> conditions_for(const RunConfig& cfg, std::span<const MotionItem> items);
/// Map key used to group motions sharing a condition.
std::string condition_key(const Condition& c);

/// Fits normalization statistics on `items` and trains a fresh VAE.
VaeBundle run_train_vae(const RunConfig& cfg, std::span<const MotionItem> items, const EpochFn& on_epoch = {});

/// Trains a fresh denoiser and condition embedder on the frozen encoder of `vae`.
DiffusionBundle run_train_diffusion(const RunConfig& cfg, const VaeBundle& vae, std::span<const MotionItem> items,
                                    const EpochFn& on_epoch = {});

/// Dual encoder always; action classifier when every item has an action label.
ExtractorBundle run_train_extractors(const RunConfig& cfg, std::span<const MotionItem> items, const EpochFn& on_epoch = {});

/// Clamps contact features into [0, 1] so the motion passes validation.
void clamp_contacts(MotionSequence& m);

/// Latent pipeline bound to a pair of checkpoints.
class Sampler {
 public:
  Sampler(const DiffusionBundle& dm, const VaeBundle& vae);
  MotionSequence generate(const Condition& c, size_t length, uint64_t seed, StageTimes* times = nullptr) const;
  /// Overrides of the checkpoint's sampler settings.
  RunConfig::Sampler settings;

 private:
  const DiffusionBundle& dm_;
  const VaeBundle& vae_;
  LatentGenerator gen_;
};

/// Seed of the `index`-th sample of repetition `rep`.
uint64_t sample_seed(uint64_t seed, size_t rep, size_t index);

struct MetricRequest {
  /// Any of fid, div, mm, r1, r2, r3, mm_dist, acc.
  std::vector<std::string> metrics;
  size_t threads = 1;
};

struct EvalReport {
  std::vector<MetricValue> values;
  /// Subset sizes actually used after fitting to the available data.
  std::map<std::string, size_t> params;
};

/// Expands "rprecision" and "all"; rejects unknown names.
std::vector<std::string> expand_metrics(const std::string& csv);

/// Scores each repetition of generated motions against the real set; values are summarized
/// across repetitions. Per-metric randomness depends only on cfg.seed, so the thread count
/// does not change the result.
EvalReport evaluate_sets(const RunConfig& cfg, const ExtractorBundle& ext, std::span<const MotionItem> real,
                         std::span<const std::vector<MotionItem>> reps, const MetricRequest& req);

}  // namespace mld
