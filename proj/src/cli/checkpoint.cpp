#include "mld/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mld/error.hpp"

namespace mld {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'M', 'L', 'D', 'C'};

void put(std::string& out, uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : b_(bytes), where_(std::move(where)) {}

  uint64_t get(int bytes) {
    need(size_t(bytes));
    uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= uint64_t(static_cast<unsigned char>(b_[pos_ + size_t(i)])) << (8 * i);
    pos_ += size_t(bytes);
    return v;
  }
  std::string take(size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(size_t n) const {
    if (b_.size() - pos_ < n)
      throw FormatError(where_ + ": corrupt table (needs " + std::to_string(n) + " more bytes at offset " +
                        std::to_string(pos_) + ", file has " + std::to_string(b_.size()) + ")");
  }
  size_t remaining() const { return b_.size() - pos_; }
  size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  std::string where_;
  size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IncompatibleError("checkpoint has no tensor " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put(out, kCheckpointVersion, 4);
  put(out, ckpt.config.size(), 4);
  out += ckpt.config;
  put(out, ckpt.tensors.size(), 4);
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.empty() || name.size() > 0xffff) throw Error("checkpoint: bad tensor name length for '" + name + "'");
    if (t.rank() == 0 || t.rank() > 0xff) throw ShapeError("checkpoint: tensor " + name + " has unsupported rank");
    put(out, name.size(), 2);
    out += name;
    put(out, t.rank(), 1);
    for (size_t d : t.dims()) {
      if (d > 0xffffffffULL) throw ShapeError("checkpoint: dim too large in " + name);
      put(out, d, 4);
    }
    for (real v : t.data()) put(out, std::bit_cast<uint32_t>(float(v)), 4);
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  const std::string where = path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(where + ": not an MLDC checkpoint");
  Reader r(bytes, where);
  r.take(4);
  const auto version = uint32_t(r.get(4));
  if (version > kCheckpointVersion)
    throw FormatError(where + ": checkpoint version " + std::to_string(version) + " is newer than supported version " +
                      std::to_string(kCheckpointVersion));
  if (version == 0) throw FormatError(where + ": invalid checkpoint version 0");

  Checkpoint ck;
  ck.config = r.take(size_t(r.get(4)));
  const size_t count = r.get(4);
  for (size_t i = 0; i < count; ++i) {
    const size_t name_len = r.get(2);
    if (name_len == 0) throw FormatError(where + ": corrupt table (empty tensor name)");
    std::string name = r.take(name_len);
    const size_t rank = r.get(1);
    if (rank == 0) throw FormatError(where + ": corrupt table (tensor " + name + " has rank 0)");
    Shape dims(rank);
    size_t numel = 1;
    for (auto& d : dims) {
      d = r.get(4);
      if (d == 0) throw FormatError(where + ": corrupt table (tensor " + name + " has a zero dim)");
      if (numel > r.remaining() / d) throw FormatError(where + ": corrupt table (tensor " + name + " larger than file)");
      numel *= d;
    }
    r.need(4 * numel);
    Tensor t(dims);
    for (size_t k = 0; k < numel; ++k) t[k] = real(std::bit_cast<float>(uint32_t(r.get(4))));
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 0)
    throw FormatError(where + ": corrupt table (" + std::to_string(r.remaining()) + " trailing bytes)");
  return ck;
}

}  // namespace mld
