#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "d2h/tensor.hpp"

namespace d2h {

enum class IoError { open, magic, truncated, crc, range };

class io_error : public std::runtime_error {
 public:
  io_error(IoError cat, const std::string& msg)
      : std::runtime_error(msg), category(cat) {}
  IoError category;
};

namespace detail {

inline void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  buf.push_back(v & 0xff);
  buf.push_back((v >> 8) & 0xff);
  buf.push_back((v >> 16) & 0xff);
  buf.push_back((v >> 24) & 0xff);
}

inline void put_f32(std::vector<uint8_t>& buf, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(buf, v);
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  explicit Reader(const std::vector<uint8_t>& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size())
      throw io_error(IoError::truncated, "file truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = buf[pos] | (buf[pos + 1] << 8) | (buf[pos + 2] << 16) |
                 (static_cast<uint32_t>(buf[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  uint8_t u8() { need(1); return buf[pos++]; }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&buf[pos]), n);
    pos += n;
    return s;
  }
};

inline std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(IoError::open, "cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                              std::istreambuf_iterator<char>());
}

inline void dump(const std::string& path, const std::vector<uint8_t>& buf) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error(IoError::open, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), buf.size());
  if (!f) throw io_error(IoError::open, "write failed for " + path);
}

}  // namespace detail

// ---- D2T: single-tensor float32 container ------------------------------
// magic "D2T1" | H u32 | W u32 | C u32 | kind u8 (0 image, 1 feature) |
// C*H*W float32 LE, planar. Image-class payloads must stay in [0,1].

inline void write_d2t(const std::string& path, const TensorF& t, bool feature_kind = false) {
  require(t.n == 1, "write_d2t: batch must be 1");
  if (!feature_kind)
    for (float v : t.data)
      if (v < 0.f || v > 1.f)
        throw io_error(IoError::range, "write_d2t: image-kind values outside [0,1]");
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), {'D', '2', 'T', '1'});
  detail::put_u32(buf, static_cast<uint32_t>(t.h));
  detail::put_u32(buf, static_cast<uint32_t>(t.w));
  detail::put_u32(buf, static_cast<uint32_t>(t.c));
  buf.push_back(feature_kind ? 1 : 0);
  for (float v : t.data) detail::put_f32(buf, v);
  detail::dump(path, buf);
}

inline TensorF read_d2t(const std::string& path) {
  auto buf = detail::slurp(path);
  detail::Reader r(buf);
  if (r.str(4) != "D2T1") throw io_error(IoError::magic, "bad D2T magic in " + path);
  uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  uint8_t kind = r.u8();
  if (h < 1 || w < 1 || c < 1 || static_cast<uint64_t>(h) * w * c > (1ull << 31))
    throw io_error(IoError::truncated, "implausible D2T header in " + path);
  r.need(static_cast<size_t>(4) * h * w * c);
  TensorF t(1, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  for (auto& v : t.data) v = r.f32();
  if (kind == 0)
    for (float v : t.data)
      if (v < 0.f || v > 1.f)
        throw io_error(IoError::range, "image-kind D2T values outside [0,1]: " + path);
  return t;
}

// ---- Checkpoint: named float32 tensor bundle ---------------------------
// magic "D2CK" | version u32 | count u32 | entries | crc32 u32 of everything
// before it. Entry: name_len u32 | name | rank u32 | extents u32*rank | payload.

struct Checkpoint {
  std::map<std::string, TensorF> entries;
  uint32_t config_fingerprint = 0;  // stored as a reserved entry
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), {'D', '2', 'C', 'K'});
  detail::put_u32(buf, 1);  // format version
  detail::put_u32(buf, static_cast<uint32_t>(ck.entries.size() + 1));
  auto put_entry = [&](const std::string& name, const TensorF& t) {
    detail::put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    detail::put_u32(buf, 4);
    detail::put_u32(buf, static_cast<uint32_t>(t.n));
    detail::put_u32(buf, static_cast<uint32_t>(t.c));
    detail::put_u32(buf, static_cast<uint32_t>(t.h));
    detail::put_u32(buf, static_cast<uint32_t>(t.w));
    for (float v : t.data) detail::put_f32(buf, v);
  };
  TensorF fp(1, 1, 1, 1);
  std::memcpy(&fp.data[0], &ck.config_fingerprint, 4);  // raw bits, not a cast
  put_entry("__config_fingerprint__", fp);
  for (const auto& [name, t] : ck.entries) put_entry(name, t);
  uint32_t crc = static_cast<uint32_t>(::crc32(0, buf.data(), static_cast<uInt>(buf.size())));
  detail::put_u32(buf, crc);
  detail::dump(path, buf);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto buf = detail::slurp(path);
  if (buf.size() < 16) throw io_error(IoError::truncated, "checkpoint too small: " + path);
  uint32_t stored = buf[buf.size() - 4] | (buf[buf.size() - 3] << 8) |
                    (buf[buf.size() - 2] << 16) |
                    (static_cast<uint32_t>(buf[buf.size() - 1]) << 24);
  uint32_t actual = static_cast<uint32_t>(
      ::crc32(0, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (stored != actual)
    throw io_error(IoError::crc, "checkpoint CRC mismatch in " + path);
  detail::Reader r(buf);
  if (r.str(4) != "D2CK") throw io_error(IoError::magic, "bad checkpoint magic in " + path);
  uint32_t version = r.u32();
  if (version != 1) throw io_error(IoError::magic, "unsupported checkpoint version");
  uint32_t count = r.u32();
  Checkpoint ck;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = r.u32();
    if (nlen > 4096) throw io_error(IoError::truncated, "implausible name length");
    std::string name = r.str(nlen);
    uint32_t rank = r.u32();
    if (rank != 4) throw io_error(IoError::truncated, "unsupported tensor rank");
    uint32_t n = r.u32(), c = r.u32(), h = r.u32(), w = r.u32();
    uint64_t total = static_cast<uint64_t>(n) * c * h * w;
    if (total == 0 || total > (1ull << 31))
      throw io_error(IoError::truncated, "implausible tensor shape");
    r.need(total * 4);
    TensorF t(static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
              static_cast<int>(w));
    for (auto& v : t.data) v = r.f32();
    if (name == "__config_fingerprint__")
      std::memcpy(&ck.config_fingerprint, &t.data[0], 4);
    else if (!ck.entries.emplace(name, std::move(t)).second)
      throw io_error(IoError::magic, "duplicate checkpoint entry: " + name);
  }
  return ck;
}

}  // namespace d2h
