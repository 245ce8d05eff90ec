#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mld/nn/layers.hpp"

namespace mld {

struct Condition {
  enum class Kind { none, text, action };
  Kind kind = Kind::none;
  std::string text;
  size_t action = 0;

  static Condition none() { return {}; }
  static Condition from_text(std::string t) { return {Kind::text, std::move(t), 0}; }
  static Condition from_action(size_t id) { return {Kind::action, {}, id}; }
};

/// Trimmed, lowercased text with runs of whitespace collapsed to one space.
std::string normalize_text(const std::string& text);

/// Frozen text encoder. Implementations hold no trainable state.
class TextEmbedProvider {
 public:
  virtual ~TextEmbedProvider() = default;
  virtual size_t dim() const = 0;
  /// 1 x dim pooled embedding.
  virtual Tensor embed(const std::string& text) const = 0;
  /// One row per word (at most `max_words`); used by the word-wise token mode.
  virtual Tensor embed_words(const std::string& text, size_t max_words) const = 0;
  /// Digest of everything that determines the embeddings.
  virtual uint64_t fingerprint() const = 0;
};

/// Random projection of word unigram and character trigram counts, L2-normalized.
class HashTextEmbedder final : public TextEmbedProvider {
 public:
  HashTextEmbedder(size_t dim, uint64_t seed);
  size_t dim() const override { return dim_; }
  Tensor embed(const std::string& text) const override;
  Tensor embed_words(const std::string& text, size_t max_words) const override;
  uint64_t fingerprint() const override;
  uint64_t seed() const { return seed_; }

 private:
  void accumulate(const std::string& feature, std::span<double> acc) const;
  size_t dim_;
  uint64_t seed_;
};

/// Exact-match lookup of precomputed vectors keyed by normalized text.
class FileTableEmbedder final : public TextEmbedProvider {
 public:
  /// ".jsonl": {"text": ..., "vector": [...]} per line. ".mot": one vector per row, with
  /// texts in a sidecar file of the same name plus ".txt", one per line.
  static FileTableEmbedder load(const std::filesystem::path& path);
  explicit FileTableEmbedder(std::map<std::string, Tensor> table);

  size_t dim() const override { return dim_; }
  Tensor embed(const std::string& text) const override;
  Tensor embed_words(const std::string& text, size_t max_words) const override;
  uint64_t fingerprint() const override;
  size_t size() const { return table_.size(); }

 private:
  std::map<std::string, Tensor> table_;
  size_t dim_ = 0;
};

/// Writes `texts` and their embeddings as a JSONL table.
void export_table(const TextEmbedProvider& provider, std::span<const std::string> texts,
                  const std::filesystem::path& path);

struct CondConfig {
  size_t provider_dim = 64;
  size_t dim = 256;
  size_t n_actions = 0;
  /// Word-wise text tokens (m = 77) instead of a single pooled token.
  bool word_wise = false;
};

inline constexpr size_t kWordTokens = 77;

/// Trainable condition embedder: text projection, action table and the shared null token.
class ConditionEmbedder {
 public:
  ConditionEmbedder() = default;
  ConditionEmbedder(ParamStore& store, const std::string& name, const CondConfig& cfg, Rng& rng);

  const CondConfig& config() const { return cfg_; }
  /// m x dim tokens. Text conditions need `provider`; its width must match.
  Var embed(const Condition& c, const TextEmbedProvider* provider) const;
  Var null_tokens() const { return null_; }

 private:
  CondConfig cfg_;
  nn::Linear text_proj_;
  Var action_table_;
  Var null_;
};

}  // namespace mld
