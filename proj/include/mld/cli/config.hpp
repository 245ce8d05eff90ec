#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mld/eval/extractors.hpp"
#include "mld/models/diffusion.hpp"

namespace mld {

/// Latent token counts accepted without --allow-any-n.
inline constexpr size_t kLatentTokenOptions[] = {1, 2, 5, 7, 10};

struct TrainSection {
  size_t epochs = 0;
  size_t batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.01;
};

/// Every knob of a run. JSON keys mirror the field names; see defaults_json().
struct RunConfig {
  uint64_t seed = 0;
  bool allow_any_n = false;

  struct Data {
    size_t n_joints = 7;
    bool include_root = true;
    double fps = 20;
    // synth-data only
    size_t n_sequences = 200;
    size_t n_actions = 4;
    size_t min_len = 16;
    size_t max_len = 196;
  } data;

  struct Vae {
    size_t n_latent = 1;
    size_t dim = 256;
    size_t layers = 9;
    size_t heads = 4;
    size_t ff_dim = 1024;
    bool use_skip = true;
    bool regularize = true;
    double lambda_reg = 1e-4;
    TrainSection train{6000, 128, 1e-4, 0.01};
  } vae;

  struct Diffusion {
    size_t dim = 256;
    size_t layers = 9;
    size_t heads = 4;
    size_t ff_dim = 1024;
    bool use_skip = true;
    std::string injection = "concat";
    size_t T = 1000;
    std::string schedule = "scaled_linear";
    double beta_start = 8.5e-4;
    double beta_end = 0.012;
    double cond_dropout = 0.1;
    TrainSection train{3000, 64, 1e-4, 0.01};
  } diffusion;

  struct Cond {
    std::string kind = "text";  // text | action | none
    std::string provider = "hash";  // hash | table
    size_t provider_dim = 64;
    uint64_t provider_seed = 0;
    std::string table;
    bool word_wise = false;
  } condition;

  struct Sampler {
    std::string method = "ddim";
    size_t steps = 50;
    double eta = 0;
    double guidance_scale = 7.5;
  } sampler;

  struct Extractor {
    size_t dim = 64;
    size_t layers = 2;
    size_t heads = 4;
    size_t ff_dim = 128;
    size_t embed_dim = 32;
    size_t text_dim = 64;
    double temperature = 0.1;
    double holdout = 0.2;
    TrainSection train{30, 32, 1e-3, 0.01};
  } extractor;

  struct Eval {
    size_t diversity_subset = 300;
    size_t mm_conditions = 32;
    size_t mm_pairs = 10;
    size_t retrieval_pool = 32;
  } eval;

  PoseLayout layout() const { return pose_layout(data.n_joints, data.include_root); }
  VaeConfig vae_config() const;
  DenoiserConfig denoiser_config() const;
  CondConfig cond_config() const;
  NoiseSchedule schedule() const;
  SamplerSpec sampler_spec() const;
  GuidanceParams guidance() const;
  ExtractorConfig extractor_config() const;
  Condition::Kind cond_kind() const;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Defaults overlaid with `j`. Unknown keys and type mismatches throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json defaults_json();

/// Applies "a.b=value" to `j` in place. The value parses as JSON when it can, otherwise it
/// is taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Stable serialization: sorted keys, two-space indent, trailing newline.
std::string canonical_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace mld
