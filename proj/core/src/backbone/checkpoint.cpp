#include "dcda/backbone/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {
namespace {

constexpr char kMagic[8] = {'D', 'C', 'D', 'A', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return get_bytes(get<std::uint32_t>()); }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(fmt::format("checkpoint truncated: need {} bytes", n), pos_);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.all().size()));
  for (const auto& p : ckpt.params.all()) {
    put_string(out, p.name);
    put<std::uint64_t>(out, p.value.rows());
    put<std::uint64_t>(out, p.value.cols());
    put<std::uint8_t>(out, p.frozen ? 1 : 0);
    for (double x : p.value.data()) put<double>(out, x);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& [key, value] : ckpt.sections) {
    put_string(out, key);
    put<std::uint64_t>(out, value.size());
    out += value;
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw ParseError("not a checkpoint file (bad magic)", 0);
  }
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError(fmt::format("checkpoint version {} unsupported (expected {})",
                                   version, kCheckpointVersion));
  }
  Checkpoint ckpt;
  auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string();
    auto rows = r.get<std::uint64_t>();
    auto cols = r.get<std::uint64_t>();
    bool frozen = r.get<std::uint8_t>() != 0;
    if (rows * cols > (bytes.size() - r.pos()) / sizeof(double)) {
      throw ParseError(fmt::format("checkpoint truncated in tensor '{}'", name), r.pos());
    }
    Matrix m(rows, cols);
    for (double& x : m.data()) x = r.get<double>();
    ckpt.params.add(std::move(name), std::move(m), frozen);
  }
  auto n_sections = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    std::string key = r.get_string();
    auto len = r.get<std::uint64_t>();
    ckpt.sections[key] = r.get_bytes(len);
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint", r.pos());
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("write failed for {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace dcda
