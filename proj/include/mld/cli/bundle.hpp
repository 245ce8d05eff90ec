#pragma once

#include <memory>
#include <string>

#include "mld/cli/checkpoint.hpp"
#include "mld/cli/config.hpp"

namespace mld {

/// Checkpoint config blob: {"kind": ..., "run": resolved config, "provider_fingerprint": ...}.
std::string checkpoint_kind(const Checkpoint& ck);
RunConfig checkpoint_config(const Checkpoint& ck);

struct VaeBundle {
  RunConfig config;
  std::unique_ptr<MotionVae> vae;
  NormStats stats;
};

Checkpoint pack_vae(const RunConfig& cfg, const MotionVae& vae, const NormStats& stats);
VaeBundle unpack_vae(const Checkpoint& ck);

/// Null unless the run is text-conditioned.
std::unique_ptr<TextEmbedProvider> make_provider(const RunConfig& cfg);

/// Denoiser and condition embedder sharing one parameter store.
struct DiffusionBundle {
  RunConfig config;
  std::unique_ptr<ParamStore> store;
  std::unique_ptr<Denoiser> dn;
  std::unique_ptr<ConditionEmbedder> emb;
  std::unique_ptr<TextEmbedProvider> provider;
  NoiseSchedule schedule;
};

/// Fresh initialization from cfg.seed. The defaults size the denoiser for the VAE latents;
/// a raw-sequence model passes the feature width and maximum length instead.
DiffusionBundle make_diffusion(const RunConfig& cfg);
DiffusionBundle make_raw_diffusion(const RunConfig& cfg);
Checkpoint pack_diffusion(const DiffusionBundle& b);
DiffusionBundle unpack_diffusion(const Checkpoint& ck);

/// Throws IncompatibleError naming both latent shapes when the two were not trained together.
void check_compatible(const DiffusionBundle& dm, const VaeBundle& vae);

struct ExtractorBundle {
  RunConfig config;
  /// Present when the training corpus had texts.
  std::unique_ptr<DualEncoder> dual;
  /// Present when it had action labels.
  std::unique_ptr<ActionClassifier> clf;

  /// Feature space for FID, diversity and multimodality: the dual encoder when present.
  const Extractor& features() const;
};

Checkpoint pack_extractors(const ExtractorBundle& b);
ExtractorBundle unpack_extractors(const Checkpoint& ck);

}  // namespace mld
