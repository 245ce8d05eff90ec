#include <cmath>
#include <fstream>
#include <map>

#include "doctest.h"
#include "mld/error.hpp"
#include "mld/motion/data.hpp"
#include "test_util.hpp"

using namespace mld;
namespace fs = std::filesystem;

TEST_CASE("pose layout widths") {
  CHECK(pose_layout(22, false).feature_dim() == 263);
  CHECK(pose_layout(22, true).feature_dim() == 272);
  CHECK(pose_layout(2, true).feature_dim() == 32);
  CHECK_THROWS_AS(pose_layout(1, true), ConfigError);
  for (size_t nj = 2; nj < 30; ++nj)
    for (bool root : {false, true}) {
      const auto l = pose_layout(nj, root);
      const size_t P = root ? nj : nj - 1;
      CHECK(l.feature_dim() == 1 + 2 + 1 + 3 * P + 3 * nj + 6 * P + 4);
      CHECK(l.positions() == 4);
      CHECK(l.velocities() - l.positions() == 3 * P);
      CHECK(l.rotations() - l.velocities() == 3 * nj);
      CHECK(l.contacts() - l.rotations() == 6 * P);
    }
}

TEST_CASE(".mot round trip is bit exact over random shapes") {
  test::TempDir dir("mot");
  Rng rng(1);
  for (int trial = 0; trial < 25; ++trial) {
    const size_t L = 1 + rng.below(80), F = 1 + rng.below(300);
    Tensor t = rng.normal_tensor({L, F});
    for (auto& v : t.data()) v = real(float(v) * 1e3f);
    save_tensor(dir.path() / "x.mot", t);
    const Tensor back = load_tensor(dir.path() / "x.mot");
    REQUIRE(back.dims() == t.dims());
    for (size_t i = 0; i < t.size(); ++i) CHECK(float(back[i]) == float(t[i]));
  }
}

TEST_CASE("save then load of a random 60xF motion") {
  test::TempDir dir("mot60");
  Rng rng(4);
  MotionSequence m = synth_motion(1, Tempo::normally, 60, 20, rng);
  save_motion(dir.path() / "m.mot", m);
  const MotionSequence back = load_motion(dir.path() / "m.mot", m.layout);
  CHECK(back.data == m.data);
  CHECK_THROWS_AS(load_motion(dir.path() / "m.mot", pose_layout(22, false)), FormatError);
}

TEST_CASE(".mot malformed files") {
  test::TempDir dir("bad");
  save_tensor(dir.path() / "x.mot", Tensor({10, 4}));
  std::string bytes = test::slurp(dir.path() / "x.mot");
  {
    std::ofstream out(dir.path() / "short.mot", std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() - 4 * 4));  // nine frames of payload
  }
  CHECK_THROWS_AS(load_tensor(dir.path() / "short.mot"), FormatError);
  bytes.replace(0, 4, "XXXX");
  {
    std::ofstream out(dir.path() / "magic.mot", std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size()));
  }
  try {
    load_tensor(dir.path() / "magic.mot");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }
  bytes.replace(0, 4, "MOTN");
  bytes[4] = 2;
  {
    std::ofstream out(dir.path() / "ver.mot", std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS_AS(load_tensor(dir.path() / "ver.mot"), FormatError);
}

TEST_CASE("normalization") {
  const PoseLayout lay = synth_layout();
  const size_t F = lay.feature_dim();
  Rng rng(3);
  const Tensor x = rng.normal_tensor({12, F});
  NormStats id{Tensor({1, F}), Tensor::filled({1, F}, 1)};
  CHECK(normalize(x, id) == x);

  Tensor constant_col = x;
  for (size_t r = 0; r < x.rows(); ++r) constant_col.at(r, 5) = 2.5;
  const std::vector<Tensor> one{constant_col};
  const NormStats clamped = fit_stats(one, lay, false);
  CHECK(double(clamped.std[5]) == doctest::Approx(1e-8));
  CHECK(normalize(constant_col, clamped).all_finite());

  const auto items = synth_items({.n_sequences = 40, .n_actions = 4, .min_len = 16, .max_len = 40, .seed = 5});
  std::vector<Tensor> seqs;
  for (const auto& it : items) seqs.push_back(it.motion.data);
  const NormStats st = fit_stats(seqs, lay);
  std::vector<double> col_mean(F, 0.0);
  size_t n = 0;
  for (const auto& s : seqs) {
    const Tensor z = normalize(s, st);
    for (size_t r = 0; r < z.rows(); ++r)
      for (size_t c = 0; c < F; ++c) col_mean[c] += z.at(r, c);
    n += z.rows();
    const Tensor back = denormalize(z, st);
    CHECK(max_abs_diff(back, s) < 1e-5);
    for (size_t r = 0; r < z.rows(); ++r)
      for (size_t c = lay.contacts(); c < F; ++c) CHECK(z.at(r, c) == s.at(r, c));
  }
  for (size_t c = 0; c < lay.contacts(); ++c) CHECK(std::abs(col_mean[c] / double(n)) < 1e-4);
  CHECK_THROWS_AS(normalize(Tensor({2, F + 1}), st), ShapeError);

  test::TempDir dir("stats");
  save_stats(dir.path(), st);
  const NormStats back = load_stats(dir.path());
  CHECK(back.mean == st.mean);
  CHECK(back.std == st.std);
}

TEST_CASE("synthetic corpus is deterministic and balanced") {
  test::TempDir a("ca"), b("cb");
  const SynthSpec spec{.n_sequences = 100, .n_actions = 2, .min_len = 16, .max_len = 48, .seed = 9};
  const auto ea = synth_corpus(spec, a.path());
  const auto eb = synth_corpus(spec, b.path());
  REQUIRE(ea.size() == 100);
  CHECK(test::slurp(a.path() / "manifest.jsonl") == test::slurp(b.path() / "manifest.jsonl"));
  for (const auto& e : ea) CHECK(test::slurp(a.path() / e.path) == test::slurp(b.path() / e.path));
  std::map<size_t, size_t> counts;
  for (const auto& e : ea) {
    REQUIRE(e.action_id);
    REQUIRE(e.text);
    CHECK(e.length >= 16);
    CHECK(e.length <= 48);
    ++counts[*e.action_id];
  }
  for (const auto& [k, c] : counts) CHECK(std::abs(double(c) - 50.0) <= 5.0);

  const auto loaded = load_corpus(a.path() / "manifest.jsonl", synth_layout());
  CHECK(loaded.size() == 100);
  CHECK(*loaded[3].text == *ea[3].text);

  const auto other = synth_items({.n_sequences = 100, .n_actions = 2, .min_len = 16, .max_len = 48, .seed = 10});
  CHECK(!(other[0].motion.data == loaded[0].motion.data));
  CHECK_THROWS_AS(synth_items({.n_sequences = 10, .n_actions = 2, .min_len = 30, .max_len = 20}), ConfigError);
  CHECK_THROWS_AS(synth_items({.n_sequences = 10, .n_actions = 1}), ConfigError);
}

TEST_CASE("synthetic velocities and contacts follow their construction rules") {
  const auto items = synth_items({.n_sequences = 24, .n_actions = 4, .min_len = 16, .max_len = 64, .seed = 2});
  const PoseLayout lay = synth_layout();
  double worst = 0;
  size_t contacts_on = 0, contacts_total = 0;
  for (const auto& it : items) {
    const Tensor& d = it.motion.data;
    it.motion.validate();
    for (size_t t = 0; t + 1 < d.rows(); ++t)
      for (size_t k = 0; k < 3 * lay.n_joints; ++k) {
        const real diff = (d.at(t + 1, lay.positions() + k) - d.at(t, lay.positions() + k)) * real(it.motion.fps);
        worst = std::max(worst, std::abs(double(diff) - double(d.at(t, lay.velocities() + k))));
      }
    for (size_t t = 0; t < d.rows(); ++t)
      for (size_t f = 0; f < 4; ++f) {
        const size_t j = kSynthFootJoints[f];
        double sq = 0;
        for (size_t a = 0; a < 3; ++a) sq += std::pow(double(d.at(t, lay.velocities() + 3 * j + a)), 2);
        CHECK(d.at(t, lay.contacts() + f) == contact_bit(std::sqrt(sq)));
        contacts_on += d.at(t, lay.contacts() + f) > 0.5;
        ++contacts_total;
      }
  }
  CHECK(worst < 1e-5);
  // Both contact states occur, otherwise the rule is vacuous.
  CHECK(contacts_on > 0);
  CHECK(contacts_on < contacts_total);
}

TEST_CASE("smpl motion shape contract") {
  SmplMotion s{Tensor({4, 3}), Tensor({4, 72}), Tensor({1, 10})};
  CHECK_NOTHROW(s.validate());
  s.pose = Tensor({4, 69});
  CHECK_THROWS_AS(s.validate(), ShapeError);
}
