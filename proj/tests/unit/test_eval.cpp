#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mld/error.hpp"
#include "mld/eval/bench.hpp"
#include "mld/eval/extractors.hpp"
#include "mld/eval/metrics.hpp"

using namespace mld;

namespace {

using Vec3 = std::array<long double, 3>;

/// Horn's closed-form absolute orientation: the rotation is the top eigenvector of a 4x4
/// quaternion matrix, found here by power iteration on a shifted copy.
std::vector<Vec3> horn_align(const std::vector<Vec3>& gt, const std::vector<Vec3>& pred) {
  const size_t P = gt.size();
  Vec3 mg{}, mp{};
  for (size_t j = 0; j < P; ++j)
    for (int k = 0; k < 3; ++k) {
      mg[k] += gt[j][k] / P;
      mp[k] += pred[j][k] / P;
    }
  long double S[3][3] = {};
  long double var = 0;
  for (size_t j = 0; j < P; ++j)
    for (int a = 0; a < 3; ++a) {
      var += std::pow(pred[j][a] - mp[a], 2);
      for (int b = 0; b < 3; ++b) S[a][b] += (pred[j][a] - mp[a]) * (gt[j][b] - mg[b]);
    }
  const long double N[4][4] = {
      {S[0][0] + S[1][1] + S[2][2], S[1][2] - S[2][1], S[2][0] - S[0][2], S[0][1] - S[1][0]},
      {S[1][2] - S[2][1], S[0][0] - S[1][1] - S[2][2], S[0][1] + S[1][0], S[2][0] + S[0][2]},
      {S[2][0] - S[0][2], S[0][1] + S[1][0], -S[0][0] + S[1][1] - S[2][2], S[1][2] + S[2][1]},
      {S[0][1] - S[1][0], S[2][0] + S[0][2], S[1][2] + S[2][1], -S[0][0] - S[1][1] + S[2][2]}};
  long double shift = 0;
  for (auto& r : N)
    for (long double v : r) shift += std::abs(v);
  std::array<long double, 4> q{1, 0.3L, 0.2L, 0.1L};
  for (int it = 0; it < 20000; ++it) {
    std::array<long double, 4> n{};
    for (int a = 0; a < 4; ++a) {
      n[a] = shift * q[a];
      for (int b = 0; b < 4; ++b) n[a] += N[a][b] * q[b];
    }
    long double norm = 0;
    for (long double v : n) norm += v * v;
    norm = std::sqrt(norm);
    for (int a = 0; a < 4; ++a) q[a] = n[a] / norm;
  }
  const long double w = q[0], x = q[1], y = q[2], z = q[3];
  const long double R[3][3] = {{w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)},
                               {2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)},
                               {2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z}};
  long double num = 0;
  for (size_t j = 0; j < P; ++j)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) num += (gt[j][a] - mg[a]) * R[a][b] * (pred[j][b] - mp[b]);
  const long double s = num / var;
  std::vector<Vec3> out(P);
  for (size_t j = 0; j < P; ++j)
    for (int a = 0; a < 3; ++a) {
      out[j][a] = mg[a];
      for (int b = 0; b < 3; ++b) out[j][a] += s * R[a][b] * (pred[j][b] - mp[b]);
    }
  return out;
}

std::vector<Vec3> frame(const Tensor& pos, size_t f) {
  std::vector<Vec3> out(pos.cols() / 3);
  for (size_t j = 0; j < out.size(); ++j)
    for (size_t k = 0; k < 3; ++k) out[j][k] = pos.at(f, 3 * j + k);
  return out;
}

long double mean_dist(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  long double acc = 0;
  for (size_t j = 0; j < a.size(); ++j)
    acc += std::sqrt(std::pow(a[j][0] - b[j][0], 2) + std::pow(a[j][1] - b[j][1], 2) + std::pow(a[j][2] - b[j][2], 2));
  return acc / a.size();
}

Tensor rotate_track(const Tensor& pos, double angle, double scale, std::array<double, 3> shift) {
  const double c = std::cos(angle), s = std::sin(angle);
  Tensor out = pos;
  for (size_t f = 0; f < pos.rows(); ++f)
    for (size_t j = 0; j < pos.cols() / 3; ++j) {
      const double x = pos.at(f, 3 * j), y = pos.at(f, 3 * j + 1), z = pos.at(f, 3 * j + 2);
      out.at(f, 3 * j) = real(scale * (c * x + s * z) + shift[0]);
      out.at(f, 3 * j + 1) = real(scale * y + shift[1]);
      out.at(f, 3 * j + 2) = real(scale * (-s * x + c * z) + shift[2]);
    }
  return out;
}

using MatL = std::vector<std::vector<long double>>;

MatL matmul(const MatL& a, const MatL& b) {
  const size_t n = a.size();
  MatL c(n, std::vector<long double>(n, 0));
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < n; ++k)
      for (size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

MatL inverse(MatL a) {
  const size_t n = a.size();
  MatL inv(n, std::vector<long double>(n, 0));
  for (size_t i = 0; i < n; ++i) inv[i][i] = 1;
  for (size_t c = 0; c < n; ++c) {
    size_t p = c;
    for (size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(inv[c], inv[p]);
    const long double d = a[c][c];
    for (size_t j = 0; j < n; ++j) {
      a[c][j] /= d;
      inv[c][j] /= d;
    }
    for (size_t r = 0; r < n; ++r)
      if (r != c) {
        const long double f = a[r][c];
        for (size_t j = 0; j < n; ++j) {
          a[r][j] -= f * a[c][j];
          inv[r][j] -= f * inv[c][j];
        }
      }
  }
  return inv;
}

/// Frechet distance with the matrix square root of Ca Cb by Denman-Beavers iteration.
long double fid_oracle(const Tensor& a, const Tensor& b) {
  const size_t d = a.cols();
  auto fit = [d](const Tensor& x, std::vector<long double>& mu, MatL& cov) {
    mu.assign(d, 0);
    cov.assign(d, std::vector<long double>(d, 0));
    for (size_t r = 0; r < x.rows(); ++r)
      for (size_t i = 0; i < d; ++i) mu[i] += x.at(r, i) / (long double)x.rows();
    for (size_t r = 0; r < x.rows(); ++r)
      for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) cov[i][j] += (x.at(r, i) - mu[i]) * (x.at(r, j) - mu[j]) / (long double)(x.rows() - 1);
  };
  std::vector<long double> ma, mb;
  MatL ca, cb;
  fit(a, ma, ca);
  fit(b, mb, cb);
  MatL y = matmul(ca, cb), z(d, std::vector<long double>(d, 0));
  for (size_t i = 0; i < d; ++i) z[i][i] = 1;
  for (int it = 0; it < 60; ++it) {
    const MatL yi = inverse(y), zi = inverse(z);
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j) {
        const long double ny = 0.5L * (y[i][j] + zi[i][j]), nz = 0.5L * (z[i][j] + yi[i][j]);
        y[i][j] = ny;
        z[i][j] = nz;
      }
  }
  long double f = 0;
  for (size_t i = 0; i < d; ++i) f += std::pow(ma[i] - mb[i], 2) + ca[i][i] + cb[i][i] - 2 * y[i][i];
  return f;
}

Tensor points(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t({rows.size(), rows.begin()->size()});
  size_t r = 0;
  for (const auto& row : rows) {
    size_t c = 0;
    for (double v : row) t.at(r, c++) = real(v);
    ++r;
  }
  return t;
}

double dist(const Tensor& t, size_t i, size_t j) {
  double s = 0;
  for (size_t c = 0; c < t.cols(); ++c) s += std::pow(double(t.at(i, c)) - t.at(j, c), 2);
  return std::sqrt(s);
}

/// Exact expectation of the paired-subset distance over every ordering of the rows.
double exhaustive_pairing(const Tensor& t, size_t x) {
  std::vector<size_t> p(t.rows());
  std::iota(p.begin(), p.end(), size_t(0));
  double acc = 0;
  size_t n = 0;
  do {
    double s = 0;
    for (size_t i = 0; i < x; ++i) s += dist(t, p[i], p[x + i]);
    acc += s / double(x);
    ++n;
  } while (std::next_permutation(p.begin(), p.end()));
  return acc / double(n);
}

std::vector<MotionItem> corpus(size_t n, uint64_t seed) {
  return synth_items({.n_sequences = n, .n_actions = 4, .min_len = 16, .max_len = 32, .fps = 20, .seed = seed});
}

ExtractorConfig small_extractor() {
  return {.layout = synth_layout(), .dim = 32, .layers = 1, .heads = 2, .ff_dim = 64, .embed_dim = 16, .max_len = 64, .text_dim = 32, .n_actions = 4};
}

}  // namespace

TEST_CASE("joint errors: identity and rigid motion") {
  Rng rng(1);
  const Tensor gt = rng.normal_tensor({6, 15});
  const JointErrors same = joint_errors(gt, gt);
  CHECK(same.mpjpe == 0);
  CHECK(same.pampjpe == doctest::Approx(0).scale(1).epsilon(1e-6));
  CHECK(same.accl == 0);
  const Tensor moved = rotate_track(gt, 0.7, 1.3, {0.5, -2.0, 1.0});
  const JointErrors e = joint_errors(gt, moved);
  CHECK(e.mpjpe > 0.1);
  CHECK(e.pampjpe < 1e-4);
  // Constant-velocity drift leaves accelerations unchanged.
  Tensor drift = gt;
  for (size_t f = 0; f < 6; ++f)
    for (size_t c = 0; c < 15; ++c) drift.at(f, c) += real(0.1 * double(f));
  const JointErrors d = joint_errors(gt, drift);
  CHECK(d.mpjpe > 0);
  CHECK(d.accl == doctest::Approx(0).scale(1).epsilon(1e-5));
  CHECK_THROWS_AS(joint_errors(Tensor({2, 15}), Tensor({2, 15})), ConfigError);
  CHECK_THROWS_AS(joint_errors(gt, Tensor({6, 12})), ShapeError);
}

TEST_CASE("joint errors match an independent alignment oracle") {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor gt = rng.normal_tensor({4, 15}), pred = rng.normal_tensor({4, 15});
    const JointErrors e = joint_errors(gt, pred);
    long double mp = 0, pa = 0, acc = 0;
    for (size_t f = 0; f < 4; ++f) {
      const auto g = frame(gt, f), p = frame(pred, f);
      mp += mean_dist(g, p) / 4;
      pa += mean_dist(g, horn_align(g, p)) / 4;
    }
    for (size_t f = 1; f < 3; ++f) {
      std::vector<Vec3> ag(5), ap(5);
      const auto g0 = frame(gt, f - 1), g1 = frame(gt, f), g2 = frame(gt, f + 1);
      const auto p0 = frame(pred, f - 1), p1 = frame(pred, f), p2 = frame(pred, f + 1);
      for (size_t j = 0; j < 5; ++j)
        for (int k = 0; k < 3; ++k) {
          ag[j][k] = g2[j][k] - 2 * g1[j][k] + g0[j][k];
          ap[j][k] = p2[j][k] - 2 * p1[j][k] + p0[j][k];
        }
      acc += mean_dist(ag, ap) / 2;
    }
    CHECK(e.mpjpe == doctest::Approx(double(mp)).epsilon(1e-5));
    CHECK(e.pampjpe == doctest::Approx(double(pa)).epsilon(1e-5));
    CHECK(e.accl == doctest::Approx(double(acc)).epsilon(1e-5));
    CHECK(e.pampjpe <= e.mpjpe + 1e-12);
  }
}

TEST_CASE("joint errors on motion sequences") {
  const auto items = corpus(4, 3);
  const auto& a = items[0].motion;
  MotionSequence b = a;
  CHECK(joint_errors(a, b).mpjpe == 0);
  b.data = Tensor({a.frames() + 1, a.data.cols()});
  CHECK_THROWS_AS(joint_errors(a, b), ShapeError);
}

TEST_CASE("fid") {
  Rng rng(4);
  const Tensor a = rng.normal_tensor({300, 6});
  CHECK(std::abs(fid(a, a)) < 1e-6);

  const size_t N = 20000;
  const std::vector<double> v{1.0, -0.5, 0.25, 2.0};
  Tensor x = rng.normal_tensor({N, 4}), y = rng.normal_tensor({N, 4});
  for (size_t r = 0; r < N; ++r)
    for (size_t c = 0; c < 4; ++c) y.at(r, c) += real(v[c]);
  // Sampling error of the mean term is about 2 |v| sqrt(2 / N); covariance terms are O(d / N).
  CHECK(fid(x, y) == doctest::Approx(1.0 + 0.25 + 0.0625 + 4.0).epsilon(0.02));

  for (int rep = 0; rep < 10; ++rep) {
    const size_t d = 5;
    Tensor mix_a = rng.normal_tensor({d, d}), mix_b = rng.normal_tensor({d, d});
    const Tensor za = rng.normal_tensor({400, d}), zb = rng.normal_tensor({300, d});
    Tensor fa({400, d}), fb({300, d});
    for (size_t r = 0; r < 400; ++r)
      for (size_t c = 0; c < d; ++c)
        for (size_t k = 0; k < d; ++k) fa.at(r, c) += za.at(r, k) * mix_a.at(k, c);
    for (size_t r = 0; r < 300; ++r)
      for (size_t c = 0; c < d; ++c) {
        fb.at(r, c) = real(0.3 * c);
        for (size_t k = 0; k < d; ++k) fb.at(r, c) += zb.at(r, k) * mix_b.at(k, c);
      }
    const double want = double(fid_oracle(fa, fb));
    CHECK(fid(fa, fb) == doctest::Approx(want).epsilon(1e-4));
  }
  CHECK_THROWS_AS(fid(a, Tensor({10, 5})), ShapeError);
  CHECK_THROWS_AS(fid(Tensor({1, 6}), a), ConfigError);
}

TEST_CASE("diversity") {
  Rng rng(5);
  CHECK(diversity(Tensor::filled({10, 3}, 2), 5, rng) == 0);
  CHECK(diversity(points({{0, 0}, {3, 4}}), 1, rng) == doctest::Approx(5.0));
  CHECK_THROWS_AS(diversity(points({{0, 0}, {3, 4}}), 2, rng), ConfigError);

  const Tensor four = points({{0, 0}, {1, 0}, {0, 3}, {5, 5}});
  const double exact = exhaustive_pairing(four, 2);
  std::vector<double> reps;
  Rng r2(6);
  for (int i = 0; i < 20; ++i) reps.push_back(diversity(four, 2, r2));
  const MetricValue m = summarize("diversity", reps);
  CHECK(m.reps == 20);
  CHECK(m.value >= 0);
  CHECK(std::abs(m.value - exact) <= m.ci95);
}

TEST_CASE("multimodality") {
  Rng rng(7);
  const std::vector<Tensor> same{Tensor::filled({4, 3}, 1), Tensor::filled({6, 3}, -1)};
  CHECK(multimodality(same, 2, 2, rng) == 0);
  const std::vector<Tensor> one{points({{0, 0, 0}, {0, 3, 0}})};
  CHECK(multimodality(one, 1, 1, rng) == doctest::Approx(3.0));
  CHECK_THROWS_AS(multimodality(one, 1, 2, rng), ConfigError);
  CHECK_THROWS_AS(multimodality(one, 2, 1, rng), ConfigError);

  const std::vector<Tensor> groups{points({{0, 0}, {1, 0}, {0, 3}, {5, 5}}), points({{1, 1}, {2, 2}, {-1, 0}, {0, 0.5}}),
                                   points({{0, 0}, {0, 0}, {4, 0}, {0, 9}})};
  // Conditions are chosen uniformly, so the exact value is the mean of the per-condition values.
  double exact = 0;
  for (const auto& g : groups) exact += exhaustive_pairing(g, 2) / 3;
  std::vector<double> reps;
  for (int i = 0; i < 20; ++i) reps.push_back(multimodality(groups, 2, 2, rng));
  const MetricValue m = summarize("multimodality", reps);
  CHECK(std::abs(m.value - exact) <= m.ci95);
}

TEST_CASE("retrieval metrics") {
  Rng rng(8);
  const Tensor f = rng.normal_tensor({96, 8});
  const RetrievalScores perfect = retrieval_metrics(f, f, 32, rng);
  CHECK(perfect.r1 == 1.0);
  CHECK(perfect.mm_dist == 0);

  const size_t N = 32 * 200;
  const RetrievalScores chance = retrieval_metrics(rng.normal_tensor({N, 8}), rng.normal_tensor({N, 8}), 32, rng);
  const double p = 1.0 / 32;
  CHECK(std::abs(chance.r1 - p) < 3 * std::sqrt(p * (1 - p) / double(N)));
  CHECK(chance.r1 <= chance.r2);
  CHECK(chance.r2 <= chance.r3);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor t = rng.normal_tensor({70, 3});
    Tensor m = t;
    for (real& v : m.data()) v += real(rng.normal());
    const RetrievalScores s = retrieval_metrics(t, m, 32, rng);
    CHECK(s.r1 <= s.r2);
    CHECK(s.r2 <= s.r3);
  }
  CHECK_THROWS_AS(retrieval_metrics(f, f, 97, rng), ConfigError);
  CHECK_THROWS_AS(retrieval_metrics(f, Tensor({96, 7}), 32, rng), ShapeError);
}

TEST_CASE("action accuracy") {
  const std::vector<size_t> pred{0, 1, 2, 3}, labels{0, 1, 3, 3};
  CHECK(action_accuracy(pred, labels, 4) == 0.75);
  CHECK_THROWS_AS(action_accuracy({}, {}, 4), Error);
  const std::vector<size_t> bad{0, 1, 2, 4};
  CHECK_THROWS_AS(action_accuracy(pred, bad, 4), Error);

  Rng rng(9);
  std::vector<size_t> truth(8000), shuffled;
  for (auto& t : truth) t = rng.below(4);
  shuffled = truth;
  rng.shuffle(std::span<size_t>(shuffled));
  CHECK(action_accuracy(truth, shuffled, 4) == doctest::Approx(0.25).epsilon(0.08));
}

TEST_CASE("metric summary") {
  const std::vector<double> v{1, 2, 3, 4};
  const MetricValue m = summarize("x", v);
  CHECK(m.value == 2.5);
  CHECK(m.ci95 == doctest::Approx(1.96 * std::sqrt(1.25) / 2));
  CHECK_THROWS_AS(summarize("x", {}), Error);
}

TEST_CASE("action classifier trains above chance and is deterministic") {
  const auto items = corpus(80, 10);
  auto train = [&](ExtractorTrainResult* res) {
    ActionClassifier clf(small_extractor(), 3);
    *res = train_action_classifier(clf, items, {.epochs = 15, .batch_size = 16, .seed = 4});
    return clf.params().fingerprint();
  };
  ExtractorTrainResult a, b;
  CHECK(train(&a) == train(&b));
  CHECK(a.heldout_count == 16);
  CHECK(a.logs.back().loss < a.logs.front().loss);
  CHECK(a.heldout_accuracy > 0.5);

  ActionClassifier clf(small_extractor(), 3);
  std::vector<MotionItem> unlabeled = items;
  unlabeled[3].action.reset();
  CHECK_THROWS_AS(train_action_classifier(clf, unlabeled, {}), ConfigError);
}

TEST_CASE("dual encoder separates matched from mismatched pairs") {
  const auto items = corpus(80, 11);
  DualEncoder enc(small_extractor(), 5);
  const auto res = train_dual_encoder(enc, items, {.epochs = 15, .batch_size = 16, .seed = 6});
  CHECK(res.logs.back().loss < res.logs.front().loss);
  CHECK(res.matched_distance < res.mismatched_distance);
  const std::vector<std::string> t{"a", "b"};
  const Tensor tf = enc.text_features(t);
  CHECK(tf.dims() == Shape{2, 16});
  double norm = 0;
  for (size_t c = 0; c < 16; ++c) norm += double(tf.at(0, c)) * tf.at(0, c);
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-3));
  DualEncoder again(small_extractor(), 5);
  train_dual_encoder(again, items, {.epochs = 15, .batch_size = 16, .seed = 6});
  CHECK(again.params().fingerprint() == enc.params().fingerprint());
}

TEST_CASE("generation pipelines and the inference benchmark") {
  const PoseLayout layout = synth_layout();
  const size_t F = layout.feature_dim();
  const VaeConfig vc{.feature_dim = F, .n_latent = 1, .dim = 32, .layers = 3, .heads = 2, .ff_dim = 64, .max_len = 40};
  const MotionVae vae(vc, 1);
  ParamStore store;
  Rng rng(2);
  HashTextEmbedder h(16, 0);
  const ConditionEmbedder emb(store, "cond", {.provider_dim = 16, .dim = 32, .n_actions = 4}, rng);
  const DenoiserConfig dc{.layers = 3, .heads = 2, .dim = 32, .ff_dim = 64, .token_dim = 32, .max_tokens = 1};
  const Denoiser latent_dn(dc, store, "dn", rng);
  DenoiserConfig rc = dc;
  rc.token_dim = F;
  rc.max_tokens = 40;
  const Denoiser raw_dn(rc, store, "raw", rng);
  const auto sched = make_schedule(1000, 8.5e-4, 0.012);
  const LatentGenerator latent(vae, latent_dn, emb, &h, sched, std::nullopt, layout, 20);
  const RawGenerator raw(raw_dn, emb, &h, sched, std::nullopt, layout, 20);

  GenerateRequest req{.condition = Condition::from_text("a person performs action 1 slowly"), .length = 40,
                      .sampler = {.inference_steps = 10}, .guidance = {.scale = 7.5}, .seed = 7};
  const MotionSequence m = latent.generate(req);
  CHECK(m.data.dims() == Shape{40, F});
  CHECK(latent.generate(req).data == m.data);
  CHECK(raw.generate(req).data.dims() == Shape{40, F});
  req.length = 41;
  CHECK_THROWS_AS(latent.generate(req), ConfigError);
  req.length = 40;

  DenoiserConfig wide = dc;
  wide.token_dim = 16;
  ParamStore other;
  const Denoiser mismatched(wide, other, "dn", rng);
  CHECK_THROWS_WITH_AS(LatentGenerator(vae, mismatched, emb, &h, sched, std::nullopt, layout, 20),
                       doctest::Contains("1x32"), IncompatibleError);

  const std::vector<std::string> prompts{"a person performs action 0 slowly", "a person performs action 2 quickly"};
  auto bench = [&](const auto& gen, size_t steps) {
    return aits_bench(
        [&](const std::string& p, uint64_t seed, StageTimes& st) {
          GenerateRequest r{.condition = Condition::from_text(p), .length = 40, .sampler = {.inference_steps = steps}, .guidance = {.scale = 7.5}, .seed = seed};
          gen.generate(r, &st);
        },
        prompts, 1, 3);
  };
  const AitsReport lat = bench(latent, 10), base = bench(raw, 10);
  CHECK(lat.seconds < base.seconds);
  CHECK(lat.stages.decode > 0);
  CHECK(lat.stages.denoise > 0);
  CHECK(lat.stages.total() <= lat.seconds * 1.01);
  // The reverse loop dominates, so doubling the steps roughly doubles the time.
  const double ratio = bench(raw, 50).seconds / bench(raw, 25).seconds;
  CHECK(ratio > 1.8);
  CHECK(ratio < 2.2);
  CHECK_THROWS_AS(aits_bench([](auto&, auto, auto&) {}, {}, 0, 1), ConfigError);
  CHECK_THROWS_AS(aits_bench([](auto&, auto, auto&) {}, prompts, 0, 0), ConfigError);
}
