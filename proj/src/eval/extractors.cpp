#include "mld/eval/extractors.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "mld/error.hpp"
#include "mld/eval/metrics.hpp"

namespace mld {

namespace {

struct Split {
  std::vector<size_t> train, held;
};

Split split_items(size_t n, double holdout, uint64_t seed) {
  if (holdout < 0 || holdout >= 1) throw ConfigError("holdout fraction must be in [0, 1)");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  Rng(seed, 0x73706c6974).shuffle(std::span<size_t>(idx));
  size_t held = size_t(std::floor(holdout * double(n)));
  if (holdout > 0 && held == 0 && n >= 2) held = 1;
  Split s;
  s.train.assign(idx.begin(), idx.end() - long(held));
  s.held.assign(idx.end() - long(held), idx.end());
  return s;
}

std::vector<Tensor> gather(std::span<const Tensor> xs, std::span<const size_t> idx) {
  std::vector<Tensor> out;
  for (size_t i : idx) out.push_back(xs[i]);
  return out;
}

template <class StepFn>
std::vector<EpochLog> run_epochs(ParamStore& store, std::span<const size_t> train, const ExtractorTrainOptions& opts, StepFn step) {
  if (opts.batch_size == 0) throw ConfigError("extractor training: batch_size must be positive");
  std::vector<EpochLog> logs;
  if (opts.epochs == 0 || train.empty()) return logs;
  AdamW optim(store, opts.optim);
  const Rng root(opts.seed, 0x6578747261);
  std::vector<size_t> order(train.begin(), train.end());
  for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng er = root.fork(epoch);
    std::copy(train.begin(), train.end(), order.begin());
    er.shuffle(std::span<size_t>(order));
    EpochLog log{.epoch = epoch + 1};
    size_t seen = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += opts.batch_size) {
      const std::span<const size_t> batch(order.data() + b0, std::min(opts.batch_size, order.size() - b0));
      const double v = optim.step(step(batch));
      if (!std::isfinite(v)) throw NonFiniteError("extractor loss is not finite");
      log.loss += v * double(batch.size());
      seen += batch.size();
    }
    log.loss /= double(seen);
    log.l_data = log.loss;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    logs.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
  }
  return logs;
}

double row_dist(const Tensor& a, size_t i, const Tensor& b, size_t j) {
  double s = 0;
  for (size_t c = 0; c < a.cols(); ++c) s += std::pow(double(a.at(i, c)) - double(b.at(j, c)), 2);
  return std::sqrt(s);
}

}  // namespace

void ExtractorConfig::validate() const {
  if (max_len == 0 || embed_dim == 0) throw ConfigError("extractor: max_len and embed_dim must be positive");
  nn::validate({.layers = layers, .dim = dim, .heads = heads, .ff_dim = ff_dim, .use_skip = false}, "extractor");
}

MotionEncoder::MotionEncoder(ParamStore& store, const std::string& name, const ExtractorConfig& cfg, Rng& rng)
    : max_len_(cfg.max_len) {
  in_ = nn::Linear(store, name + ".in", cfg.layout.feature_dim(), cfg.dim, rng);
  stack_ = nn::SkipTransformer(store, name + ".tf",
                               {.layers = cfg.layers, .dim = cfg.dim, .heads = cfg.heads, .ff_dim = cfg.ff_dim, .use_skip = false},
                               rng);
  out_ = nn::Linear(store, name + ".out", cfg.dim, cfg.embed_dim, rng);
  pe_ = nn::sinusoidal_table(cfg.max_len, cfg.dim);
}

Var MotionEncoder::forward(std::span<const Tensor> xs) const {
  if (xs.empty()) throw Error("motion encoder: empty batch");
  std::vector<Tensor> pe;
  std::vector<AttnSegment> segs;
  std::vector<std::pair<size_t, size_t>> pools;
  size_t off = 0;
  for (const auto& x : xs) {
    if (x.cols() != in_.in()) throw ShapeError("motion encoder: width " + std::to_string(x.cols()) + " != " + std::to_string(in_.in()));
    if (x.rows() < 1 || x.rows() > max_len_)
      throw ConfigError("motion encoder: length " + std::to_string(x.rows()) + " outside [1, " + std::to_string(max_len_) + "]");
    pe.push_back(slice_rows(pe_, 0, x.rows()));
    segs.push_back({off, off + x.rows(), off, off + x.rows()});
    pools.emplace_back(off, off + x.rows());
    off += x.rows();
  }
  const Var h = add(in_(constant(concat_rows(xs))), constant(concat_rows(pe)));
  return out_(segment_mean(stack_.forward(h, segs), pools));
}

Extractor::Extractor(const ExtractorConfig& cfg, uint64_t seed, uint64_t stream) : cfg_(cfg), init_(seed, stream) {
  cfg_.validate();
  const size_t F = cfg.layout.feature_dim();
  store_.add("stats.mean", Tensor({1, F}), false);
  store_.add("stats.std", Tensor::filled({1, F}, 1), false);
  motion_ = MotionEncoder(store_, "motion", cfg_, init_);
}

NormStats Extractor::stats() const { return {store_.get("stats.mean").value(), store_.get("stats.std").value()}; }

void Extractor::set_stats(const NormStats& s) {
  store_.get("stats.mean").assign(s.mean);
  store_.get("stats.std").assign(s.std);
}

Tensor Extractor::motion_features(std::span<const Tensor> raw) const {
  NoGradGuard ng;
  const NormStats st = stats();
  std::vector<Tensor> parts;
  for (size_t b0 = 0; b0 < raw.size(); b0 += 64) {
    std::vector<Tensor> batch;
    for (size_t i = b0; i < std::min(raw.size(), b0 + 64); ++i) batch.push_back(normalize(raw[i], st));
    parts.push_back(motion_embed(batch).value());
  }
  if (parts.empty()) throw Error("motion_features: no motions");
  return concat_rows(parts);
}

DualEncoder::DualEncoder(const ExtractorConfig& cfg, uint64_t seed)
    : Extractor(cfg, seed, 0x6475616c), provider_(cfg.text_dim, cfg.text_seed) {
  text_1_ = nn::Linear(store_, "text.1", cfg.text_dim, cfg.dim, init_);
  text_2_ = nn::Linear(store_, "text.2", cfg.dim, cfg.embed_dim, init_);
  unit_gamma_ = constant(Tensor::filled({1, cfg.embed_dim}, real(1 / std::sqrt(double(cfg.embed_dim)))));
  unit_beta_ = constant(Tensor({1, cfg.embed_dim}));
}

Var DualEncoder::unit_rows(const Var& x) const { return layer_norm(x, unit_gamma_, unit_beta_); }

Var DualEncoder::motion_embed(std::span<const Tensor> normalized) const { return unit_rows(motion_.forward(normalized)); }

Var DualEncoder::text_embed(std::span<const std::string> texts) const {
  if (texts.empty()) throw Error("text encoder: empty batch");
  std::vector<Tensor> rows;
  for (const auto& t : texts) rows.push_back(provider_.embed(t));
  return unit_rows(text_2_(gelu(text_1_(constant(concat_rows(rows))))));
}

Tensor DualEncoder::text_features(std::span<const std::string> texts) const {
  NoGradGuard ng;
  return text_embed(texts).value();
}

ActionClassifier::ActionClassifier(const ExtractorConfig& cfg, uint64_t seed) : Extractor(cfg, seed, 0x636c6173) {
  if (cfg.n_actions < 2) throw ConfigError("action classifier needs at least 2 classes");
  head_ = nn::Linear(store_, "head", cfg.embed_dim, cfg.n_actions, init_);
}

Var ActionClassifier::logits(std::span<const Tensor> normalized) const { return head_(gelu(motion_embed(normalized))); }

std::vector<size_t> ActionClassifier::predict(std::span<const Tensor> raw) const {
  NoGradGuard ng;
  const NormStats st = stats();
  std::vector<size_t> out;
  for (size_t b0 = 0; b0 < raw.size(); b0 += 64) {
    std::vector<Tensor> batch;
    for (size_t i = b0; i < std::min(raw.size(), b0 + 64); ++i) batch.push_back(normalize(raw[i], st));
    const Tensor l = logits(batch).value();
    for (size_t r = 0; r < l.rows(); ++r) {
      const auto row = l.row(r);
      out.push_back(size_t(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

ExtractorTrainResult train_dual_encoder(DualEncoder& enc, std::span<const MotionItem> items, const ExtractorTrainOptions& opts) {
  if (items.empty()) throw Error("dual encoder: empty corpus");
  std::vector<Tensor> raw;
  std::vector<std::string> texts;
  for (const auto& it : items) {
    if (!it.text) throw ConfigError("dual encoder training needs a text annotation on every item");
    raw.push_back(it.motion.data);
    texts.push_back(normalize_text(*it.text));
  }
  const Split sp = split_items(items.size(), opts.holdout, opts.seed);
  enc.set_stats(fit_stats(gather(raw, sp.train), enc.config().layout));
  std::vector<Tensor> norm;
  for (const auto& x : raw) norm.push_back(normalize(x, enc.stats()));

  ExtractorTrainResult res;
  res.train_count = sp.train.size();
  res.heldout_count = sp.held.size();
  const double inv_tau = 1 / opts.temperature;
  res.logs = run_epochs(enc.params(), sp.train, opts, [&](std::span<const size_t> batch) {
    const size_t B = batch.size();
    std::vector<Tensor> xs;
    std::vector<std::string> ts;
    for (size_t i : batch) {
      xs.push_back(norm[i]);
      ts.push_back(texts[i]);
    }
    // Soft targets: every item with the same text is a positive.
    Tensor target({B, B});
    for (size_t i = 0; i < B; ++i) {
      size_t same = 0;
      for (size_t j = 0; j < B; ++j) same += ts[i] == ts[j];
      for (size_t j = 0; j < B; ++j) target.at(i, j) = ts[i] == ts[j] ? real(1.0 / double(same)) : real(0);
    }
    const Var t = enc.text_embed(ts), m = enc.motion_embed(xs), y = constant(target);
    const Var t2m = log_softmax_rows(scale(matmul_nt(t, m), inv_tau));
    const Var m2t = log_softmax_rows(scale(matmul_nt(m, t), inv_tau));
    return scale(add(sum(mul(y, t2m)), sum(mul(y, m2t))), -0.5 / double(B));
  });

  if (!sp.held.empty()) {
    std::vector<std::string> ht;
    for (size_t i : sp.held) ht.push_back(texts[i]);
    const Tensor tf = enc.text_features(ht), mf = enc.motion_features(gather(raw, sp.held));
    double matched = 0, mismatched = 0;
    size_t n_mis = 0;
    for (size_t i = 0; i < ht.size(); ++i) {
      matched += row_dist(tf, i, mf, i);
      for (size_t j = 0; j < ht.size(); ++j)
        if (ht[i] != ht[j]) {
          mismatched += row_dist(tf, i, mf, j);
          ++n_mis;
        }
    }
    res.matched_distance = matched / double(ht.size());
    res.mismatched_distance = n_mis ? mismatched / double(n_mis) : 0;
  }
  return res;
}

ExtractorTrainResult train_action_classifier(ActionClassifier& clf, std::span<const MotionItem> items,
                                             const ExtractorTrainOptions& opts) {
  if (items.empty()) throw Error("action classifier: empty corpus");
  std::vector<Tensor> raw;
  std::vector<size_t> labels;
  for (const auto& it : items) {
    if (!it.action) throw ConfigError("action classifier training needs an action label on every item");
    if (*it.action >= clf.config().n_actions)
      throw ConfigError("action label " + std::to_string(*it.action) + " outside [0, " + std::to_string(clf.config().n_actions) + ")");
    raw.push_back(it.motion.data);
    labels.push_back(*it.action);
  }
  const Split sp = split_items(items.size(), opts.holdout, opts.seed);
  clf.set_stats(fit_stats(gather(raw, sp.train), clf.config().layout));
  std::vector<Tensor> norm;
  for (const auto& x : raw) norm.push_back(normalize(x, clf.stats()));

  ExtractorTrainResult res;
  res.train_count = sp.train.size();
  res.heldout_count = sp.held.size();
  res.logs = run_epochs(clf.params(), sp.train, opts, [&](std::span<const size_t> batch) {
    std::vector<Tensor> xs;
    std::vector<size_t> ys;
    for (size_t i : batch) {
      xs.push_back(norm[i]);
      ys.push_back(labels[i]);
    }
    return cross_entropy(clf.logits(xs), ys);
  });
  if (!sp.held.empty()) {
    std::vector<size_t> hl;
    for (size_t i : sp.held) hl.push_back(labels[i]);
    res.heldout_accuracy = action_accuracy(clf.predict(gather(raw, sp.held)), hl, clf.config().n_actions);
  }
  return res;
}

}  // namespace mld
