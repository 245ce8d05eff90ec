#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mld/numerics/rng.hpp"
#include "mld/numerics/tensor.hpp"

namespace mld {

/// Per-frame feature layout: root angular velocity, root xz velocity, root height, joint
/// positions, joint velocities, 6D joint rotations, four foot contacts.
struct PoseLayout {
  size_t n_joints = 0;
  bool include_root = false;

  /// Joints carried by the position and rotation blocks.
  size_t pos_joints() const { return include_root ? n_joints : n_joints - 1; }
  size_t root_ang_vel() const { return 0; }
  size_t root_lin_vel() const { return 1; }
  size_t root_height() const { return 3; }
  size_t positions() const { return 4; }
  size_t velocities() const { return positions() + 3 * pos_joints(); }
  size_t rotations() const { return velocities() + 3 * n_joints; }
  size_t contacts() const { return rotations() + 6 * pos_joints(); }
  size_t feature_dim() const { return contacts() + 4; }

  friend bool operator==(const PoseLayout&, const PoseLayout&) = default;
};

PoseLayout pose_layout(size_t n_joints, bool include_root);

struct MotionSequence {
  PoseLayout layout;
  Tensor data;  // L x F
  double fps = 20;

  size_t frames() const { return data.rows(); }
  /// Throws if dims disagree with the layout, any value is non-finite, or a contact is
  /// outside [0, 1].
  void validate() const;
};

/// L x (3 P) joint positions copied out of the feature rows.
Tensor joint_positions(const MotionSequence& m);

/// Raw ".mot" tensors: "MOTN", u32 version, u32 L, u32 F, then L*F little-endian f32.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_motion(const std::filesystem::path& path, const MotionSequence& m);
MotionSequence load_motion(const std::filesystem::path& path, const PoseLayout& layout, double fps = 20);

struct NormStats {
  Tensor mean;  // 1 x F
  Tensor std;   // 1 x F, >= 1e-8
};

/// Column statistics over every frame of `seqs`. With `bypass_contacts`, contact columns
/// get mean 0 and std 1 so normalization leaves the binary bits untouched.
NormStats fit_stats(std::span<const Tensor> seqs, const PoseLayout& layout, bool bypass_contacts = true);
Tensor normalize(const Tensor& x, const NormStats& stats);
Tensor denormalize(const Tensor& z, const NormStats& stats);
void save_stats(const std::filesystem::path& dir, const NormStats& stats);
NormStats load_stats(const std::filesystem::path& dir);

struct SmplMotion {
  Tensor trans;  // L x 3
  Tensor pose;   // L x 72
  Tensor shape;  // 1 x 10
  void validate() const;
};

struct CorpusEntry {
  std::string path;  // relative to the manifest directory
  std::optional<std::string> text;
  std::optional<size_t> action_id;
  size_t length = 0;
  double fps = 20;
};

/// A motion with its annotations, in memory.
struct MotionItem {
  MotionSequence motion;
  std::optional<size_t> action;
  std::optional<std::string> text;
};

std::vector<CorpusEntry> load_manifest(const std::filesystem::path& manifest);
/// Loads every manifest entry; a frame count disagreeing with "length" is a FormatError.
std::vector<MotionItem> load_corpus(const std::filesystem::path& manifest, const PoseLayout& layout);
void save_manifest(const std::filesystem::path& manifest, std::span<const CorpusEntry> entries);

/// Synthetic corpus generator.
struct SynthSpec {
  size_t n_sequences = 200;
  size_t n_actions = 4;
  size_t min_len = 16;
  size_t max_len = 196;
  double fps = 20;
  uint64_t seed = 0;
};

/// 7-joint skeleton: root, left heel, left toe, right heel, right toe, left hand, right hand.
PoseLayout synth_layout();
inline constexpr size_t kSynthFootJoints[4] = {1, 2, 3, 4};
inline constexpr double kContactSpeed = 0.25;  // m/s

enum class Tempo { slowly = 0, normally = 1, quickly = 2 };
std::string synth_text(size_t action, Tempo tempo);

/// One motion of action family `action`; the phase and heading offsets come from `rng`.
MotionSequence synth_motion(size_t action, Tempo tempo, size_t length, double fps, Rng& rng);

std::vector<MotionItem> synth_items(const SynthSpec& spec);

/// Writes motions/NNNNNN.mot and manifest.jsonl under `dir`; returns the manifest entries.
std::vector<CorpusEntry> synth_corpus(const SynthSpec& spec, const std::filesystem::path& dir);

/// Contact bit for a foot joint moving at `speed` (units per second).
inline real contact_bit(double speed) { return speed < kContactSpeed ? real(1) : real(0); }

}  // namespace mld
