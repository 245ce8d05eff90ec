#pragma once

#include <functional>
#include <span>
#include <string>

#include "mld/models/pipeline.hpp"

namespace mld {

struct AitsReport {
  size_t prompts = 0;
  size_t warmup = 0;
  size_t reps = 0;
  /// Mean wall-clock seconds per prompt over the timed repetitions.
  double seconds = 0;
  /// Mean per-prompt stage split.
  StageTimes stages;
};

/// Generates one motion for `prompt`, filling in its stage times.
using GenerateFn = std::function<void(const std::string& prompt, uint64_t seed, StageTimes& times)>;

/// Batch size one. Everything loaded before the call is excluded from the timing; the first
/// `warmup` passes over the prompts are discarded.
AitsReport aits_bench(const GenerateFn& generate, std::span<const std::string> prompts, size_t warmup, size_t reps);

}  // namespace mld
