#include "mld/motion/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "mld/error.hpp"

namespace mld {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'O', 'T', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace

PoseLayout pose_layout(size_t n_joints, bool include_root) {
  if (n_joints < 2) throw ConfigError("pose layout needs at least 2 joints, got " + std::to_string(n_joints));
  return PoseLayout{n_joints, include_root};
}

void MotionSequence::validate() const {
  const size_t F = layout.feature_dim();
  if (data.rank() != 2 || data.rows() < 1 || data.cols() != F)
    throw ShapeError("motion of shape " + shape_str(data.dims()) + " does not match feature width " +
                     std::to_string(F));
  if (!data.all_finite()) throw NonFiniteError("motion contains non-finite values");
  for (size_t r = 0; r < data.rows(); ++r)
    for (size_t c = layout.contacts(); c < F; ++c)
      if (data.at(r, c) < 0 || data.at(r, c) > 1)
        throw ShapeError("contact feature outside [0, 1] at frame " + std::to_string(r));
}

Tensor joint_positions(const MotionSequence& m) {
  const size_t P = m.layout.pos_joints(), off = m.layout.positions();
  Tensor out({m.frames(), 3 * P});
  for (size_t r = 0; r < m.frames(); ++r)
    std::copy_n(m.data.row(r).begin() + long(off), 3 * P, out.row(r).begin());
  return out;
}

void save_tensor(const fs::path& path, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(".mot stores matrices, got " + shape_str(t.dims()));
  std::string bytes(kMagic, 4);
  put_u32(bytes, kVersion);
  put_u32(bytes, uint32_t(t.rows()));
  put_u32(bytes, uint32_t(t.cols()));
  bytes.reserve(bytes.size() + 4 * t.size());
  for (real v : t.data()) put_u32(bytes, std::bit_cast<uint32_t>(float(v)));
  write_file(path, bytes);
}

Tensor load_tensor(const fs::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16) throw FormatError(path.string() + ": truncated header");
  if (std::memcmp(p, kMagic, 4) != 0) throw FormatError(path.string() + ": bad magic");
  const uint32_t version = get_u32(p + 4);
  if (version != kVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const size_t L = get_u32(p + 8), F = get_u32(p + 12);
  if (L == 0 || F == 0) throw FormatError(path.string() + ": empty tensor");
  const size_t expected = 16 + 4 * L * F;
  if (bytes.size() != expected)
    throw FormatError(path.string() + ": payload holds " + std::to_string((bytes.size() - 16) / 4) +
                      " values, header declares " + std::to_string(L) + "x" + std::to_string(F));
  Tensor t({L, F});
  for (size_t i = 0; i < L * F; ++i) t[i] = real(std::bit_cast<float>(get_u32(p + 16 + 4 * i)));
  return t;
}

void save_motion(const fs::path& path, const MotionSequence& m) {
  m.validate();
  save_tensor(path, m.data);
}

MotionSequence load_motion(const fs::path& path, const PoseLayout& layout, double fps) {
  MotionSequence m{layout, load_tensor(path), fps};
  if (m.data.cols() != layout.feature_dim())
    throw FormatError(path.string() + ": feature width " + std::to_string(m.data.cols()) +
                      " does not match layout width " + std::to_string(layout.feature_dim()));
  m.validate();
  return m;
}

NormStats fit_stats(std::span<const Tensor> seqs, const PoseLayout& layout, bool bypass_contacts) {
  if (seqs.empty()) throw Error("fit_stats: no sequences");
  const size_t F = layout.feature_dim();
  std::vector<double> sum(F, 0.0), sq(F, 0.0);
  size_t count = 0;
  for (const auto& s : seqs) {
    if (s.cols() != F) throw ShapeError("fit_stats: sequence width " + std::to_string(s.cols()) + " != " + std::to_string(F));
    for (size_t r = 0; r < s.rows(); ++r)
      for (size_t c = 0; c < F; ++c) sum[c] += s.at(r, c);
    count += s.rows();
  }
  std::vector<double> mu(F);
  for (size_t c = 0; c < F; ++c) mu[c] = sum[c] / double(count);
  for (const auto& s : seqs)
    for (size_t r = 0; r < s.rows(); ++r)
      for (size_t c = 0; c < F; ++c) sq[c] += (s.at(r, c) - mu[c]) * (s.at(r, c) - mu[c]);
  NormStats st{Tensor({1, F}), Tensor({1, F})};
  for (size_t c = 0; c < F; ++c) {
    st.mean[c] = real(mu[c]);
    st.std[c] = real(std::max(std::sqrt(sq[c] / double(count)), 1e-8));
  }
  if (bypass_contacts)
    for (size_t c = layout.contacts(); c < F; ++c) {
      st.mean[c] = 0;
      st.std[c] = 1;
    }
  return st;
}

Tensor normalize(const Tensor& x, const NormStats& stats) {
  if (x.cols() != stats.mean.cols())
    throw ShapeError("normalize: width " + std::to_string(x.cols()) + " vs stats " + std::to_string(stats.mean.cols()));
  Tensor z = x;
  for (size_t r = 0; r < x.rows(); ++r)
    for (size_t c = 0; c < x.cols(); ++c) z.at(r, c) = (x.at(r, c) - stats.mean[c]) / stats.std[c];
  return z;
}

Tensor denormalize(const Tensor& z, const NormStats& stats) {
  if (z.cols() != stats.mean.cols())
    throw ShapeError("denormalize: width " + std::to_string(z.cols()) + " vs stats " + std::to_string(stats.mean.cols()));
  Tensor x = z;
  for (size_t r = 0; r < z.rows(); ++r)
    for (size_t c = 0; c < z.cols(); ++c) x.at(r, c) = z.at(r, c) * stats.std[c] + stats.mean[c];
  return x;
}

void save_stats(const fs::path& dir, const NormStats& stats) {
  save_tensor(dir / "mean.mot", stats.mean);
  save_tensor(dir / "std.mot", stats.std);
}

NormStats load_stats(const fs::path& dir) {
  NormStats st{load_tensor(dir / "mean.mot"), load_tensor(dir / "std.mot")};
  if (st.mean.rows() != 1 || st.std.dims() != st.mean.dims()) throw FormatError("stats files must be 1xF and agree");
  for (real& s : st.std.data()) s = std::max(s, real(1e-8));
  return st;
}

void SmplMotion::validate() const {
  if (trans.rank() != 2 || trans.cols() != 3) throw ShapeError("SMPL translation must be Lx3");
  if (pose.rank() != 2 || pose.cols() != 72) throw ShapeError("SMPL pose must be Lx72");
  if (pose.rows() != trans.rows()) throw ShapeError("SMPL pose and translation frame counts differ");
  if (shape.size() != 10) throw ShapeError("SMPL shape must hold 10 values");
}

std::vector<CorpusEntry> load_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open manifest " + manifest.string());
  std::vector<CorpusEntry> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      CorpusEntry e;
      e.path = j.at("path").get<std::string>();
      if (j.contains("text") && !j["text"].is_null()) e.text = j["text"].get<std::string>();
      if (j.contains("action_id") && !j["action_id"].is_null()) e.action_id = j["action_id"].get<size_t>();
      e.length = j.at("length").get<size_t>();
      e.fps = j.value("fps", 20.0);
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<MotionItem> load_corpus(const fs::path& manifest, const PoseLayout& layout) {
  std::vector<MotionItem> out;
  for (const auto& e : load_manifest(manifest)) {
    MotionItem item{load_motion(manifest.parent_path() / e.path, layout, e.fps), e.action_id, e.text};
    if (item.motion.frames() != e.length)
      throw FormatError(e.path + ": " + std::to_string(item.motion.frames()) + " frames, manifest says " +
                        std::to_string(e.length));
    out.push_back(std::move(item));
  }
  return out;
}

void save_manifest(const fs::path& manifest, std::span<const CorpusEntry> entries) {
  std::string text;
  for (const auto& e : entries) {
    json j{{"path", e.path}, {"length", e.length}, {"fps", e.fps}};
    j["text"] = e.text ? json(*e.text) : json(nullptr);
    j["action_id"] = e.action_id ? json(*e.action_id) : json(nullptr);
    text += j.dump() + "\n";
  }
  write_file(manifest, text);
}

}  // namespace mld
