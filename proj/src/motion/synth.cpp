#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mld/error.hpp"
#include "mld/motion/data.hpp"

namespace mld {

namespace {

constexpr size_t kJoints = 7;
constexpr double kTwoPi = 2 * std::numbers::pi;

// Rest offsets in the body frame (x right, y up, z forward), relative to the root.
constexpr std::array<std::array<double, 3>, kJoints> kRest = {{
    {0.0, 0.0, 0.0},
    {-0.12, -0.92, -0.03},
    {-0.12, -0.95, 0.12},
    {0.12, -0.92, -0.03},
    {0.12, -0.95, 0.12},
    {-0.38, 0.35, 0.0},
    {0.38, 0.35, 0.0},
}};

struct Family {
  double freq;      // Hz at normal tempo
  double speed;     // forward m/s at normal tempo
  double turn;      // rad/s
  double bob;       // root height oscillation
  double lift;      // foot lift height
  std::array<std::array<double, 3>, kJoints> amp;
  std::array<double, kJoints> phase;
  std::array<double, kJoints> swing;  // rotation oscillation amplitude per joint
};

Family family(size_t action) {
  Rng r(0x6d6f74696f6e0000ull + action);
  Family f;
  f.freq = 0.5 + 1.5 * std::fmod(double(action) * 0.6180339887 + 0.1, 1.0);
  f.speed = r.uniform(0.0, 1.2);
  f.turn = r.uniform(-0.5, 0.5);
  f.bob = r.uniform(0.0, 0.08);
  f.lift = r.uniform(0.05, 0.25);
  for (size_t j = 0; j < kJoints; ++j) {
    for (size_t a = 0; a < 3; ++a) f.amp[j][a] = j == 0 ? 0.0 : r.uniform(-0.35, 0.35);
    f.phase[j] = r.uniform(0.0, kTwoPi);
    f.swing[j] = r.uniform(0.0, 0.6);
  }
  return f;
}

double tempo_scale(Tempo t) {
  switch (t) {
    case Tempo::slowly: return 0.7;
    case Tempo::normally: return 1.0;
    case Tempo::quickly: return 1.4;
  }
  return 1.0;
}

const char* tempo_word(Tempo t) {
  switch (t) {
    case Tempo::slowly: return "slowly";
    case Tempo::normally: return "normally";
    case Tempo::quickly: return "quickly";
  }
  return "normally";
}

}  // namespace

PoseLayout synth_layout() { return pose_layout(kJoints, true); }

std::string synth_text(size_t action, Tempo tempo) {
  return "a person performs action " + std::to_string(action) + " " + tempo_word(tempo);
}

MotionSequence synth_motion(size_t action, Tempo tempo, size_t length, double fps, Rng& rng) {
  if (length < 1) throw ConfigError("synthetic motion length must be positive");
  const Family fam = family(action);
  const double k = tempo_scale(tempo);
  const double omega = kTwoPi * fam.freq * k;
  const double phi0 = rng.uniform(0.0, kTwoPi);
  const double heading0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double dt = 1.0 / fps;

  // Positions and headings for L+1 frames; the extra frame closes the last velocity.
  const size_t n = length + 1;
  std::vector<std::array<std::array<real, 3>, kJoints>> pos(n);
  std::vector<double> heading(n);
  double rx = 0, rz = 0;
  for (size_t t = 0; t < n; ++t) {
    const double tau = double(t) * dt;
    const double th = heading0 + fam.turn * k * tau;
    heading[t] = th;
    const double c = std::cos(th), s = std::sin(th);
    const double root_y = 0.95 + fam.bob * std::sin(2 * omega * tau + phi0);
    for (size_t j = 0; j < kJoints; ++j) {
      std::array<double, 3> local = kRest[j];
      const double w = std::sin(omega * tau + phi0 + fam.phase[j]);
      for (size_t a = 0; a < 3; ++a) local[a] += fam.amp[j][a] * w;
      if (j >= 1 && j <= 4) {
        const double side = j <= 2 ? 0.0 : std::numbers::pi;
        local[1] = kRest[j][1] + fam.lift * std::max(0.0, std::sin(omega * tau + phi0 + side));
        local[2] = kRest[j][2] + fam.amp[j][2] * std::sin(omega * tau + phi0 + side);
      }
      // Body frame to world: rotate about y by the heading.
      const double wx = c * local[0] + s * local[2];
      const double wz = -s * local[0] + c * local[2];
      pos[t][j] = {real(rx + wx), real(root_y + local[1]), real(rz + wz)};
    }
    rx += fam.speed * k * std::sin(th) * dt;
    rz += fam.speed * k * std::cos(th) * dt;
  }

  MotionSequence m{synth_layout(), Tensor({length, synth_layout().feature_dim()}), fps};
  const PoseLayout& lay = m.layout;
  for (size_t t = 0; t < length; ++t) {
    auto row = m.data.row(t);
    row[lay.root_ang_vel()] = real((heading[t + 1] - heading[t]) * fps);
    const double vx = (double(pos[t + 1][0][0]) - double(pos[t][0][0])) * fps;
    const double vz = (double(pos[t + 1][0][2]) - double(pos[t][0][2])) * fps;
    const double c = std::cos(heading[t]), s = std::sin(heading[t]);
    row[lay.root_lin_vel()] = real(c * vx - s * vz);
    row[lay.root_lin_vel() + 1] = real(s * vx + c * vz);
    row[lay.root_height()] = pos[t][0][1];
    std::array<double, kJoints> speed{};
    for (size_t j = 0; j < kJoints; ++j) {
      double sq = 0;
      for (size_t a = 0; a < 3; ++a) {
        row[lay.positions() + 3 * j + a] = pos[t][j][a];
        const real v = real((pos[t + 1][j][a] - pos[t][j][a]) * real(fps));
        row[lay.velocities() + 3 * j + a] = v;
        sq += double(v) * double(v);
      }
      speed[j] = std::sqrt(sq);
      const double tau = double(t) * dt;
      const double ang = heading[t] + fam.swing[j] * std::sin(omega * tau + phi0 + fam.phase[j]);
      const double ca = std::cos(ang), sa = std::sin(ang);
      // First two columns of the rotation about y.
      const double six[6] = {ca, 0.0, -sa, 0.0, 1.0, 0.0};
      for (size_t a = 0; a < 6; ++a) row[lay.rotations() + 6 * j + a] = real(six[a]);
    }
    for (size_t f = 0; f < 4; ++f) row[lay.contacts() + f] = contact_bit(speed[kSynthFootJoints[f]]);
  }
  return m;
}

std::vector<MotionItem> synth_items(const SynthSpec& spec) {
  if (spec.n_actions < 2) throw ConfigError("synthetic corpus needs at least 2 actions");
  if (spec.n_sequences < spec.n_actions) throw ConfigError("synthetic corpus needs n_sequences >= n_actions");
  if (spec.min_len < 1 || spec.min_len > spec.max_len)
    throw ConfigError("empty length range [" + std::to_string(spec.min_len) + ", " + std::to_string(spec.max_len) + "]");
  std::vector<MotionItem> items;
  items.reserve(spec.n_sequences);
  const Rng root(spec.seed, 0x73796e7468ull);
  for (size_t i = 0; i < spec.n_sequences; ++i) {
    Rng r = root.fork(i);
    const size_t action = i % spec.n_actions;
    const auto tempo = Tempo(r.below(3));
    const size_t len = spec.min_len + r.below(spec.max_len - spec.min_len + 1);
    items.push_back({synth_motion(action, tempo, len, spec.fps, r), action, synth_text(action, tempo)});
  }
  return items;
}

std::vector<CorpusEntry> synth_corpus(const SynthSpec& spec, const std::filesystem::path& dir) {
  const auto items = synth_items(spec);
  std::vector<CorpusEntry> entries;
  for (size_t i = 0; i < items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "motions/%06zu.mot", i);
    save_motion(dir / name, items[i].motion);
    entries.push_back({name, items[i].text, items[i].action, items[i].motion.frames(), spec.fps});
  }
  save_manifest(dir / "manifest.jsonl", entries);
  return entries;
}

}  // namespace mld
