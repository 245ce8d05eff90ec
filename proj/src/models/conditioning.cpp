#include "mld/models/conditioning.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mld/error.hpp"
#include "mld/motion/data.hpp"

namespace mld {

namespace {

uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

uint64_t fnv_bytes(const void* p, size_t n, uint64_t h) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
  return h;
}

std::vector<std::string> words_of(const std::string& norm) {
  std::vector<std::string> out;
  std::istringstream in(norm);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Tensor unit_row(std::span<const double> acc) {
  double n = 0;
  for (double v : acc) n += v * v;
  n = std::sqrt(n);
  Tensor t({1, acc.size()});
  for (size_t i = 0; i < acc.size(); ++i) t[i] = real(n > 0 ? acc[i] / n : 0.0);
  return t;
}

}  // namespace

std::string normalize_text(const std::string& text) {
  std::string out;
  bool space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(char(std::tolower(c)));
  }
  return out;
}

HashTextEmbedder::HashTextEmbedder(size_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw ConfigError("hash embedder dim must be positive");
}

void HashTextEmbedder::accumulate(const std::string& feature, std::span<double> acc) const {
  Rng r(fnv1a(feature) ^ seed_, 0x68617368);
  for (double& a : acc) a += r.normal();
}

Tensor HashTextEmbedder::embed(const std::string& text) const {
  const std::string norm = normalize_text(text);
  std::vector<double> acc(dim_, 0.0);
  for (const auto& w : words_of(norm)) accumulate("w:" + w, acc);
  const std::string padded = " " + norm + " ";
  for (size_t i = 0; i + 3 <= padded.size(); ++i) accumulate("c:" + padded.substr(i, 3), acc);
  return unit_row(acc);
}

Tensor HashTextEmbedder::embed_words(const std::string& text, size_t max_words) const {
  const auto words = words_of(normalize_text(text));
  if (words.empty()) throw Error("cannot embed empty text");
  const size_t n = std::min(words.size(), max_words);
  std::vector<Tensor> rows;
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> acc(dim_, 0.0);
    accumulate("w:" + words[i], acc);
    rows.push_back(unit_row(acc));
  }
  return concat_rows(rows);
}

uint64_t HashTextEmbedder::fingerprint() const {
  uint64_t h = fnv1a("hash");
  h = fnv_bytes(&dim_, sizeof dim_, h);
  return fnv_bytes(&seed_, sizeof seed_, h);
}

FileTableEmbedder::FileTableEmbedder(std::map<std::string, Tensor> table) {
  for (auto& [k, v] : table) {
    if (v.rows() != 1) throw FormatError("embedding for '" + k + "' must be a single row");
    if (dim_ == 0) dim_ = v.cols();
    if (v.cols() != dim_) throw FormatError("embedding table has mixed widths");
    table_[normalize_text(k)] = std::move(v);
  }
  if (table_.empty()) throw FormatError("embedding table is empty");
}

FileTableEmbedder FileTableEmbedder::load(const std::filesystem::path& path) {
  std::map<std::string, Tensor> table;
  if (path.extension() == ".jsonl") {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto vec = j.at("vector").get<std::vector<real>>();
        if (vec.empty()) throw FormatError(path.string() + ": empty vector");
        table.emplace(j.at("text").get<std::string>(), Tensor({1, vec.size()}, vec));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
      }
    }
  } else if (path.extension() == ".mot") {
    const Tensor vectors = load_tensor(path);
    std::ifstream in(path.string() + ".txt");
    if (!in) throw FormatError("missing sidecar text index " + path.string() + ".txt");
    std::string line;
    size_t r = 0;
    while (std::getline(in, line)) {
      if (r >= vectors.rows()) throw FormatError("sidecar index has more texts than " + path.string() + " has rows");
      table.emplace(line, slice_rows(vectors, r++, 1));
    }
    if (r != vectors.rows()) throw FormatError("sidecar index has fewer texts than " + path.string() + " has rows");
  } else {
    throw ConfigError("unknown embedding table extension: " + path.string());
  }
  return FileTableEmbedder(std::move(table));
}

Tensor FileTableEmbedder::embed(const std::string& text) const {
  const auto it = table_.find(normalize_text(text));
  if (it == table_.end()) throw Error("text not in embedding table: '" + text + "'");
  return it->second;
}

Tensor FileTableEmbedder::embed_words(const std::string&, size_t) const {
  throw ConfigError("word-wise tokens need the hash provider; file tables hold pooled vectors only");
}

uint64_t FileTableEmbedder::fingerprint() const {
  uint64_t h = fnv1a("table");
  for (const auto& [k, v] : table_) {
    h = fnv1a(k, h);
    h = fnv_bytes(v.ptr(), v.size() * sizeof(real), h);
  }
  return h;
}

void export_table(const TextEmbedProvider& provider, std::span<const std::string> texts,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : texts) {
    const Tensor v = provider.embed(t);
    nlohmann::json j{{"text", t}, {"vector", std::vector<real>(v.data().begin(), v.data().end())}};
    out << j.dump() << "\n";
  }
}

ConditionEmbedder::ConditionEmbedder(ParamStore& store, const std::string& name, const CondConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.dim == 0 || cfg.provider_dim == 0) throw ConfigError("condition embedder widths must be positive");
  text_proj_ = nn::Linear(store, name + ".text_proj", cfg.provider_dim, cfg.dim, rng);
  if (cfg.n_actions > 0) {
    Tensor table = rng.normal_tensor({cfg.n_actions, cfg.dim});
    action_table_ = store.add(name + ".action_table", std::move(table));
  }
  null_ = store.add(name + ".null", rng.normal_tensor({1, cfg.dim}));
}

Var ConditionEmbedder::embed(const Condition& c, const TextEmbedProvider* provider) const {
  switch (c.kind) {
    case Condition::Kind::none:
      return null_;
    case Condition::Kind::action: {
      if (c.action >= cfg_.n_actions)
        throw Error("action id " + std::to_string(c.action) + " out of range [0, " + std::to_string(cfg_.n_actions) + ")");
      const size_t idx[] = {c.action};
      return gather_rows(action_table_, idx);
    }
    case Condition::Kind::text: {
      if (provider == nullptr) throw ConfigError("text condition needs a text embedding provider");
      if (provider->dim() != cfg_.provider_dim)
        throw IncompatibleError("text provider width " + std::to_string(provider->dim()) + " != embedder input width " +
                                std::to_string(cfg_.provider_dim));
      const Tensor raw = cfg_.word_wise ? provider->embed_words(c.text, kWordTokens) : provider->embed(c.text);
      Var tokens = text_proj_(constant(raw));
      if (cfg_.word_wise && raw.rows() < kWordTokens) {
        const std::vector<Var> parts{tokens, constant(Tensor({kWordTokens - raw.rows(), cfg_.dim}))};
        tokens = concat_rows(parts);
      }
      return tokens;
    }
  }
  throw Error("unknown condition kind");
}

}  // namespace mld
