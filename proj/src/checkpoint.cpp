#include "dsaf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dsaf {

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> bytes;

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get_le(8)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::uint64_t n) const {
    if (n > size_ - pos_) throw DataError("checkpoint payload truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  Writer payload;
  payload.u64(data.meta.size());
  for (const auto& [k, v] : data.meta) {
    payload.str(k);
    payload.str(v);
  }
  payload.u64(data.integers.size());
  for (const auto& [k, v] : data.integers) {
    payload.str(k);
    payload.i64(v);
  }
  payload.u64(data.tensors.size());
  for (const auto& [k, t] : data.tensors) {
    payload.str(k);
    const Shape& s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) payload.u64(d);
    for (float v : t.data()) payload.f32(v);
  }

  Writer out;
  out.bytes.assign(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  out.u32(kCheckpointVersion);
  out.u64(payload.bytes.size());
  out.bytes.insert(out.bytes.end(), payload.bytes.begin(), payload.bytes.end());
  out.u64(fnv1a64(payload.bytes.data(), payload.bytes.size()));
  return out.bytes;
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t header = sizeof(kCheckpointMagic) + 4 + 8;
  if (bytes.size() < header) throw DataError("checkpoint truncated: file shorter than its header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw DataError("not a checkpoint: bad magic bytes");
  }
  Reader head(bytes.data() + sizeof(kCheckpointMagic), 12);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t length = head.u64();
  if (bytes.size() - header < 8 || length != bytes.size() - header - 8) {
    throw DataError("checkpoint truncated or padded: payload length " + std::to_string(length) + " does not match file size");
  }
  const std::uint8_t* payload = bytes.data() + header;
  Reader tail(payload + length, 8);
  if (tail.u64() != fnv1a64(payload, length)) throw DataError("checkpoint checksum mismatch");

  CheckpointData data;
  Reader r(payload, length);
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) {
    std::string k = r.str();
    data.meta[k] = r.str();
  }
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) {
    std::string k = r.str();
    data.integers[k] = r.i64();
  }
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) {
    std::string k = r.str();
    Shape s;
    s.n = r.u64();
    s.c = r.u64();
    s.h = r.u64();
    s.w = r.u64();
    if (s.numel() > length) throw DataError("checkpoint tensor '" + k + "' claims more data than the file holds");
    std::vector<float> values(s.numel());
    for (float& v : values) v = r.f32();
    data.tensors.emplace(std::move(k), Tensor<float>(s, std::move(values)));
  }
  if (!r.done()) throw DataError("checkpoint payload has trailing bytes");
  return data;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  // Write to a sibling file first so a crash never leaves a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace dsaf
