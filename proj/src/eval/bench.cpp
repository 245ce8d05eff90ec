#include "mld/eval/bench.hpp"

#include <chrono>

#include "mld/error.hpp"

namespace mld {

AitsReport aits_bench(const GenerateFn& generate, std::span<const std::string> prompts, size_t warmup, size_t reps) {
  if (prompts.empty()) throw ConfigError("aits: no prompts");
  if (reps < 1) throw ConfigError("aits: reps must be at least 1");
  AitsReport r{prompts.size(), warmup, reps, 0, {}};
  StageTimes scratch;
  for (size_t w = 0; w < warmup; ++w)
    for (size_t i = 0; i < prompts.size(); ++i) generate(prompts[i], i, scratch);
  for (size_t k = 0; k < reps; ++k) {
    for (size_t i = 0; i < prompts.size(); ++i) {
      StageTimes st;
      const auto t0 = std::chrono::steady_clock::now();
      generate(prompts[i], i, st);
      r.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.stages += st;
    }
  }
  const double n = double(reps * prompts.size());
  r.seconds /= n;
  r.stages.condition /= n;
  r.stages.denoise /= n;
  r.stages.decode /= n;
  return r;
}

}  // namespace mld
