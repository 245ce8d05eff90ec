#pragma once

#include <map>
#include <string>
#include <vector>

#include "mld/numerics/autograd.hpp"

namespace mld {

/// Ordered registry of named parameter leaves. Frozen entries never require grad.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool trainable;
  };

  Var add(const std::string& name, Tensor init, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var& get(const std::string& name) const;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Var> trainable_vars() const;
  std::vector<std::string> trainable_names() const;

  /// Freezes or unfreezes every entry whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool on);

  size_t scalar_count(bool trainable_only = false) const;

  std::vector<std::pair<std::string, Tensor>> snapshot() const;
  /// Loads values by name; every stored entry must be present with matching dims.
  void load(const std::vector<std::pair<std::string, Tensor>>& named, const std::string& prefix = "");
  /// Order-independent digest of names and values.
  uint64_t fingerprint() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

}  // namespace mld
