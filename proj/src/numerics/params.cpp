#include "mld/numerics/params.hpp"

#include <cstring>

#include "mld/error.hpp"

namespace mld {

Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (contains(name)) throw Error("duplicate parameter name " + name);
  Var v = parameter(std::move(init));
  v.set_requires_grad(trainable);
  index_[name] = entries_.size();
  entries_.push_back({name, v, trainable});
  return v;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return entries_[it->second].var;
}

std::vector<Var> ParamStore::trainable_vars() const {
  std::vector<Var> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.var);
  return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.name);
  return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool on) {
  for (auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) == 0) {
      e.trainable = on;
      e.var.set_requires_grad(on);
    }
  }
}

size_t ParamStore::scalar_count(bool trainable_only) const {
  size_t n = 0;
  for (const auto& e : entries_)
    if (!trainable_only || e.trainable) n += e.var.value().size();
  return n;
}

std::vector<std::pair<std::string, Tensor>> ParamStore::snapshot() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.name, e.var.value());
  return out;
}

void ParamStore::load(const std::vector<std::pair<std::string, Tensor>>& named, const std::string& prefix) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : named)
    if (n.compare(0, prefix.size(), prefix) == 0) by_name[n.substr(prefix.size())] = &t;
  for (auto& e : entries_) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw IncompatibleError("missing tensor " + prefix + e.name);
    if (it->second->dims() != e.var.dims())
      throw IncompatibleError("tensor " + prefix + e.name + " has dims " + shape_str(it->second->dims()) +
                              ", model expects " + shape_str(e.var.dims()));
    e.var.assign(*it->second);
  }
}

uint64_t ParamStore::fingerprint() const {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
  };
  for (const auto& [name, idx] : index_) {
    feed(name.data(), name.size());
    const auto& v = entries_[idx].var.value();
    feed(v.ptr(), v.size() * sizeof(real));
  }
  return h;
}

}  // namespace mld
