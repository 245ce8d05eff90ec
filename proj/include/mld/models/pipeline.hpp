#pragma once

#include <optional>

#include "mld/models/diffusion.hpp"

namespace mld {

/// Wall-clock seconds spent in each generation stage.
struct StageTimes {
  double condition = 0;
  double denoise = 0;
  double decode = 0;

  double total() const { return condition + denoise + decode; }
  StageTimes& operator+=(const StageTimes& o);
};

struct GenerateRequest {
  Condition condition;
  size_t length = 0;
  SamplerSpec sampler;
  GuidanceParams guidance;
  uint64_t seed = 0;
};

/// Condition embedding, latent reverse process and a single decoder pass. References must
/// outlive the generator.
class LatentGenerator {
 public:
  LatentGenerator(const MotionVae& vae, const Denoiser& dn, const ConditionEmbedder& emb, const TextEmbedProvider* provider,
                  NoiseSchedule schedule, std::optional<NormStats> stats, PoseLayout layout, double fps);
  MotionSequence generate(const GenerateRequest& req, StageTimes* times = nullptr) const;
  /// The final latent without decoding.
  Tensor latent(const GenerateRequest& req) const;

 private:
  const MotionVae& vae_;
  const Denoiser& dn_;
  const ConditionEmbedder& emb_;
  const TextEmbedProvider* provider_;
  NoiseSchedule schedule_;
  std::optional<NormStats> stats_;
  PoseLayout layout_;
  double fps_;
};

/// Baseline that runs the reverse process on the L x F frames themselves.
class RawGenerator {
 public:
  RawGenerator(const Denoiser& dn, const ConditionEmbedder& emb, const TextEmbedProvider* provider, NoiseSchedule schedule,
               std::optional<NormStats> stats, PoseLayout layout, double fps);
  MotionSequence generate(const GenerateRequest& req, StageTimes* times = nullptr) const;

 private:
  const Denoiser& dn_;
  const ConditionEmbedder& emb_;
  const TextEmbedProvider* provider_;
  NoiseSchedule schedule_;
  std::optional<NormStats> stats_;
  PoseLayout layout_;
  double fps_;
};

}  // namespace mld
