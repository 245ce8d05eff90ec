#include "mld/cli/workflow.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mld/error.hpp"

namespace mld {

namespace {

std::vector<Tensor> normalized(std::span<const MotionItem> items, const NormStats& st, const PoseLayout& layout) {
  std::vector<Tensor> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    if (!(it.motion.layout == layout))
      throw IncompatibleError("motion has " + std::to_string(it.motion.data.cols()) + " features, run expects " +
                              std::to_string(layout.feature_dim()));
    out.push_back(normalize(it.motion.data, st));
  }
  return out;
}

AdamWConfig optim(const TrainSection& t) { return {.lr = t.lr, .weight_decay = t.weight_decay}; }

uint64_t name_tag(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

const std::vector<std::string> kMetricNames = {"fid", "div", "mm", "r1", "r2", "r3", "mm_dist", "acc"};

}  // namespace

std::vector<Condition> conditions_for(const RunConfig& cfg, std::span<const MotionItem> items) {
  std::vector<Condition> out;
  out.reserve(items.size());
  const auto kind = cfg.cond_kind();
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (kind == Condition::Kind::text) {
      if (!it.text) throw ConfigError("text conditioning needs a text on every item; item " + std::to_string(i) + " has none");
      out.push_back(Condition::from_text(*it.text));
    } else if (kind == Condition::Kind::action) {
      if (!it.action) throw ConfigError("action conditioning needs an action on every item; item " + std::to_string(i) + " has none");
      if (*it.action >= cfg.data.n_actions)
        throw ConfigError("action " + std::to_string(*it.action) + " outside [0, data.n_actions = " +
                          std::to_string(cfg.data.n_actions) + ")");
      out.push_back(Condition::from_action(*it.action));
    } else {
      out.push_back(Condition::none());
    }
  }
  return out;
}

std::string condition_key(const Condition& c) {
  switch (c.kind) {
    case Condition::Kind::text: return "text:" + normalize_text(c.text);
    case Condition::Kind::action: return "action:" + std::to_string(c.action);
    default: return "none";
  }
}

VaeBundle run_train_vae(const RunConfig& cfg, std::span<const MotionItem> items, const EpochFn& on_epoch) {
  cfg.validate();
  if (items.empty()) throw Error("train-vae: empty corpus");
  const PoseLayout layout = cfg.layout();
  std::vector<Tensor> raw;
  for (const auto& it : items) raw.push_back(it.motion.data);
  VaeBundle b;
  b.config = cfg;
  b.stats = fit_stats(raw, layout);
  b.vae = std::make_unique<MotionVae>(cfg.vae_config(), cfg.seed);
  const auto data = normalized(items, b.stats, layout);
  train_vae(*b.vae, data,
            {.epochs = cfg.vae.train.epochs,
             .batch_size = cfg.vae.train.batch_size,
             .optim = optim(cfg.vae.train),
             .seed = cfg.seed,
             .on_epoch = on_epoch});
  return b;
}

DiffusionBundle run_train_diffusion(const RunConfig& cfg_in, const VaeBundle& vae, std::span<const MotionItem> items,
                                    const EpochFn& on_epoch) {
  // The latent shape and pose layout belong to the VAE.
  RunConfig cfg = cfg_in;
  cfg.vae = vae.config.vae;
  cfg.data.n_joints = vae.config.data.n_joints;
  cfg.data.include_root = vae.config.data.include_root;
  cfg.data.max_len = vae.config.data.max_len;
  cfg.validate();
  if (items.empty()) throw Error("train-diffusion: empty corpus");
  const auto conds = conditions_for(cfg, items);
  const auto latents = encode_corpus(*vae.vae, normalized(items, vae.stats, cfg.layout()));
  DiffusionBundle b = make_diffusion(cfg);
  train_diffusion(*b.dn, *b.emb, *b.store, latents, conds, b.provider.get(), b.schedule,
                  {.epochs = cfg.diffusion.train.epochs,
                   .batch_size = cfg.diffusion.train.batch_size,
                   .optim = optim(cfg.diffusion.train),
                   .cond_dropout = cfg.diffusion.cond_dropout,
                   .seed = cfg.seed,
                   .on_epoch = on_epoch});
  return b;
}

ExtractorBundle run_train_extractors(const RunConfig& cfg, std::span<const MotionItem> items, const EpochFn& on_epoch) {
  cfg.validate();
  if (items.empty()) throw Error("extractor training: empty corpus");
  const bool texts = std::ranges::all_of(items, [](const MotionItem& it) { return it.text.has_value(); });
  const bool actions = cfg.data.n_actions > 0 && std::ranges::all_of(items, [](const MotionItem& it) { return it.action.has_value(); });
  if (!texts && !actions) throw ConfigError("extractor training needs texts or action labels on every item");
  const ExtractorTrainOptions opts{.epochs = cfg.extractor.train.epochs,
                                   .batch_size = cfg.extractor.train.batch_size,
                                   .optim = optim(cfg.extractor.train),
                                   .holdout = cfg.extractor.holdout,
                                   .temperature = cfg.extractor.temperature,
                                   .seed = cfg.seed,
                                   .on_epoch = on_epoch};
  std::vector<Tensor> raw;
  for (const auto& it : items) raw.push_back(it.motion.data);
  const NormStats st = fit_stats(raw, cfg.layout());
  ExtractorBundle b;
  b.config = cfg;
  const ExtractorConfig ec = cfg.extractor_config();
  if (texts) {
    b.dual = std::make_unique<DualEncoder>(ec, cfg.seed);
    b.dual->set_stats(st);
    train_dual_encoder(*b.dual, items, opts);
  }
  if (actions) {
    b.clf = std::make_unique<ActionClassifier>(ec, cfg.seed);
    b.clf->set_stats(st);
    train_action_classifier(*b.clf, items, opts);
  }
  return b;
}

void clamp_contacts(MotionSequence& m) {
  const size_t c0 = m.layout.contacts();
  for (size_t r = 0; r < m.frames(); ++r)
    for (size_t c = c0; c < c0 + 4; ++c) m.data.at(r, c) = std::clamp(m.data.at(r, c), real(0), real(1));
}

Sampler::Sampler(const DiffusionBundle& dm, const VaeBundle& vae)
    : settings(dm.config.sampler),
      dm_(dm),
      vae_(vae),
      gen_((check_compatible(dm, vae), *vae.vae), *dm.dn, *dm.emb, dm.provider.get(), dm.schedule, vae.stats,
           vae.config.layout(), vae.config.data.fps) {}

MotionSequence Sampler::generate(const Condition& c, size_t length, uint64_t seed, StageTimes* times) const {
  RunConfig tmp = dm_.config;
  tmp.sampler = settings;
  tmp.validate();
  GenerateRequest req{.condition = c, .length = length, .sampler = tmp.sampler_spec(), .guidance = tmp.guidance(), .seed = seed};
  MotionSequence m = gen_.generate(req, times);
  clamp_contacts(m);
  return m;
}

uint64_t sample_seed(uint64_t seed, size_t rep, size_t index) {
  return Rng(seed, 0x73616d70).fork(rep).fork(index).next_u64();
}

std::vector<std::string> expand_metrics(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string m;
  auto add = [&out](const std::string& name) {
    if (std::ranges::find(out, name) == out.end()) out.push_back(name);
  };
  while (std::getline(ss, m, ',')) {
    m.erase(0, m.find_first_not_of(' '));
    m.erase(m.find_last_not_of(' ') + 1);
    if (m.empty()) continue;
    if (m == "all") {
      for (const auto& n : kMetricNames) add(n);
    } else if (m == "rprecision") {
      for (const char* n : {"r1", "r2", "r3", "mm_dist"}) add(n);
    } else if (std::ranges::find(kMetricNames, m) != kMetricNames.end()) {
      add(m);
    } else {
      throw ConfigError("unknown metric '" + m + "'; expected fid, div, mm, rprecision, r1, r2, r3, mm_dist, acc or all");
    }
  }
  if (out.empty()) throw ConfigError("no metrics requested");
  return out;
}

EvalReport evaluate_sets(const RunConfig& cfg, const ExtractorBundle& ext, std::span<const MotionItem> real,
                         std::span<const std::vector<MotionItem>> reps, const MetricRequest& req) {
  if (reps.empty()) throw ConfigError("evaluate: no generated motions");
  const std::set<std::string> want(req.metrics.begin(), req.metrics.end());
  const bool retrieval = want.contains("r1") || want.contains("r2") || want.contains("r3") || want.contains("mm_dist");
  if (retrieval && !ext.dual) throw ConfigError("retrieval metrics need a dual encoder (extractor trained on texts)");
  if (want.contains("acc") && !ext.clf) throw ConfigError("acc needs an action classifier (extractor trained on actions)");

  auto raw_of = [](std::span<const MotionItem> items) {
    std::vector<Tensor> raw;
    for (const auto& it : items) raw.push_back(it.motion.data);
    return raw;
  };
  const Extractor& fx = ext.features();
  Tensor real_feats;
  if (want.contains("fid")) {
    if (real.empty()) throw ConfigError("fid needs real motions");
    real_feats = fx.motion_features(raw_of(real));
  }

  // Features are computed serially; only the metric arithmetic fans out.
  struct RepData {
    Tensor feats, text_feats;
    std::vector<Tensor> groups;
    std::vector<size_t> predicted, labels;
  };
  std::vector<RepData> data(reps.size());
  EvalReport report;
  for (size_t r = 0; r < reps.size(); ++r) {
    const auto& items = reps[r];
    if (items.empty()) throw ConfigError("evaluate: repetition " + std::to_string(r) + " is empty");
    const auto raw = raw_of(items);
    data[r].feats = fx.motion_features(raw);
    if (want.contains("mm")) {
      std::map<std::string, std::vector<size_t>> by;
      for (size_t i = 0; i < items.size(); ++i) {
        if (items[i].text) by["t:" + normalize_text(*items[i].text)].push_back(i);
        else if (items[i].action) by["a:" + std::to_string(*items[i].action)].push_back(i);
        else throw ConfigError("mm needs a text or action on every generated motion");
      }
      for (const auto& [k, idx] : by) {
        std::vector<Tensor> rows;
        for (size_t i : idx) rows.push_back(slice_rows(data[r].feats, i, 1));
        data[r].groups.push_back(concat_rows(rows));
      }
    }
    if (retrieval) {
      std::vector<std::string> texts;
      for (const auto& it : items) {
        if (!it.text) throw ConfigError("retrieval metrics need a text on every generated motion");
        texts.push_back(*it.text);
      }
      NoGradGuard ng;
      data[r].text_feats = ext.dual->text_embed(texts).value();
    }
    if (want.contains("acc")) {
      for (const auto& it : items) {
        if (!it.action) throw ConfigError("acc needs an action label on every generated motion");
        data[r].labels.push_back(*it.action);
      }
      data[r].predicted = ext.clf->predict(raw);
    }
  }

  size_t min_rows = data[0].feats.rows();
  for (const auto& d : data) min_rows = std::min(min_rows, d.feats.rows());
  const size_t x_d = std::min(cfg.eval.diversity_subset, min_rows / 2);
  if (want.contains("div")) {
    if (x_d == 0) throw ConfigError("div needs at least 2 generated motions per repetition");
    report.params["diversity_subset"] = x_d;
  }
  size_t x_m = 0, j_m = 0;
  if (want.contains("mm")) {
    size_t largest = SIZE_MAX;
    for (const auto& d : data) {
      size_t l = 0;
      for (const auto& g : d.groups) l = std::max(l, g.rows());
      largest = std::min(largest, l);
    }
    x_m = std::min(cfg.eval.mm_pairs, largest / 2);
    if (x_m == 0) throw ConfigError("mm needs at least 2 generated motions for some condition (sample with --count 2 or more)");
    j_m = cfg.eval.mm_conditions;
    for (const auto& d : data) {
      size_t ok = 0;
      for (const auto& g : d.groups) ok += g.rows() >= 2 * x_m;
      j_m = std::min(j_m, ok);
    }
    report.params["mm_pairs"] = x_m;
    report.params["mm_conditions"] = j_m;
  }
  if (retrieval) report.params["retrieval_pool"] = cfg.eval.retrieval_pool;

  struct Job {
    std::string metric;
    size_t rep;
  };
  std::vector<Job> jobs;
  for (const auto& m : req.metrics) {
    if (m == "r2" || m == "r3" || m == "mm_dist") continue;  // computed with r1
    for (size_t r = 0; r < reps.size(); ++r) jobs.push_back({m == "r1" ? "retrieval" : m, r});
  }
  if (retrieval && !want.contains("r1"))
    for (size_t r = 0; r < reps.size(); ++r) jobs.push_back({"retrieval", r});

  std::map<std::string, std::vector<double>> values;
  std::vector<std::map<std::string, double>> results(jobs.size());
  auto run_job = [&](size_t k) {
    const Job& job = jobs[k];
    const RepData& d = data[job.rep];
    Rng rng = Rng(cfg.seed, name_tag(job.metric)).fork(job.rep);
    auto& out = results[k];
    if (job.metric == "fid") out["fid"] = fid(real_feats, d.feats);
    else if (job.metric == "div") out["div"] = diversity(d.feats, x_d, rng);
    else if (job.metric == "mm") out["mm"] = multimodality(d.groups, j_m, x_m, rng);
    else if (job.metric == "acc") out["acc"] = action_accuracy(d.predicted, d.labels, cfg.data.n_actions);
    else if (job.metric == "retrieval") {
      const auto s = retrieval_metrics(d.text_feats, d.feats, cfg.eval.retrieval_pool, rng);
      out = {{"r1", s.r1}, {"r2", s.r2}, {"r3", s.r3}, {"mm_dist", s.mm_dist}};
    }
  };
  const size_t workers = std::max<size_t>(1, std::min(req.threads, jobs.size()));
  if (workers == 1) {
    for (size_t k = 0; k < jobs.size(); ++k) run_job(k);
  } else {
    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t k; (k = next.fetch_add(1)) < jobs.size();) {
          try {
            run_job(k);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  for (const auto& r : results)
    for (const auto& [name, v] : r) values[name].push_back(v);
  for (const auto& m : req.metrics) report.values.push_back(summarize(m, values.at(m)));
  return report;
}

}  // namespace mld
