#include "maf/weights.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace maf {

namespace {

constexpr char kMagic[4] = {'M', 'A', 'F', 'W'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t offset() const noexcept { return pos_; }

  void need(std::uint64_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("weights: truncated ") + what + " (need " + std::to_string(n) +
                           " bytes, have " + std::to_string(bytes_.size() - pos_) + ")",
                       pos_);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  std::uint64_t pos_ = 0;
};

}  // namespace

std::string encode_weights(const std::vector<WeightEntry>& entries) {
  std::string out(kMagic, 4);
  put_u32(out, kWeightFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (static_cast<Index>(e.values.size()) != e.shape.numel()) {
      throw ShapeError("weights", e.name + " payload length", e.shape.numel(), static_cast<Index>(e.values.size()));
    }
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, 0);
    put_u32(out, 4);
    for (Index d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) put_u64(out, static_cast<std::uint64_t>(d));
    for (float f : e.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<WeightEntry> decode_weights(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw ParseError("weights: bad magic (expected MAFW)", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kWeightFormatVersion) {
    throw ParseError("weights: unsupported format version " + std::to_string(version) + " (reader supports " +
                         std::to_string(kWeightFormatVersion) + ")",
                     version_at);
  }
  const std::uint32_t count = r.u32("entry count");
  std::vector<WeightEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightEntry e;
    const std::uint32_t len = r.u32("name length");
    e.name = r.str(len, "name");
    const std::uint64_t dtype_at = r.offset();
    const std::uint32_t dtype = r.u32("dtype");
    if (dtype != 0) {
      throw ParseError("weights: entry '" + e.name + "' has unknown dtype code " + std::to_string(dtype) +
                           " for format version " + std::to_string(version),
                       dtype_at);
    }
    const std::uint64_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank != 4) throw ParseError("weights: entry '" + e.name + "' has rank " + std::to_string(rank) + ", expected 4", rank_at);
    std::uint64_t dims[4];
    for (auto& d : dims) d = r.u64("dims");
    for (auto d : dims) {
      if (d > (std::uint64_t{1} << 31)) throw ParseError("weights: entry '" + e.name + "' has an implausible dim", rank_at);
    }
    e.shape = {static_cast<Index>(dims[0]), static_cast<Index>(dims[1]), static_cast<Index>(dims[2]),
               static_cast<Index>(dims[3])};
    const std::uint64_t n = static_cast<std::uint64_t>(e.shape.numel());
    r.need(4 * n, "payload");
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(r.u32("payload"));
    entries.push_back(std::move(e));
  }
  if (r.offset() != bytes.size()) throw ParseError("weights: trailing bytes after last entry", r.offset());
  return entries;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

}  // namespace maf
