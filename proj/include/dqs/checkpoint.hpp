#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/errors.hpp"
#include "dqs/mlp.hpp"
#include "dqs/optimizer.hpp"

namespace dqs {

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

struct ByteSink {
  std::vector<unsigned char> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void array(const DenseArray& a) {
    u32(static_cast<std::uint32_t>(a.shape().size()));
    for (int d : a.shape()) u32(static_cast<std::uint32_t>(d));
    raw(a.data(), a.size() * sizeof(double));
  }
};

struct ByteSource {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;

  void raw(void* p, std::size_t n) {
    if (pos + n > bytes.size()) throw ChecksumError("checkpoint: truncated payload");
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  DenseArray array() {
    std::uint32_t rank = u32();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(u32());
    DenseArray a(shape);
    raw(a.data(), a.size() * sizeof(double));
    return a;
  }
};

}  // namespace detail

// Versioned binary container for parameters and run metadata. Round trips
// are bit-exact: doubles are stored raw. A trailing CRC32 guards against
// truncation and corruption.
class Checkpoint {
 public:
  static constexpr std::uint8_t kVersion = 1;

  void put_network(const std::string& name, const MlpNetwork& net) {
    detail::ByteSink s;
    s.u32(static_cast<std::uint32_t>(net.layer_dims.size()));
    for (int d : net.layer_dims) s.u32(static_cast<std::uint32_t>(d));
    s.u8(net.skip_connections ? 1 : 0);
    for (const auto& w : net.weights) s.array(w);
    for (const auto& b : net.biases) s.array(b);
    sections_["net:" + name] = std::move(s.bytes);
  }

  MlpNetwork get_network(const std::string& name) const {
    detail::ByteSource src{section("net:" + name)};
    std::uint32_t nd = src.u32();
    MlpNetwork net;
    net.layer_dims.resize(nd);
    for (auto& d : net.layer_dims) d = static_cast<int>(src.u32());
    net.skip_connections = src.u8() != 0;
    for (std::uint32_t l = 0; l + 1 < nd; ++l) net.weights.push_back(src.array());
    for (std::uint32_t l = 0; l + 1 < nd; ++l) net.biases.push_back(src.array());
    return net;
  }

  void put_adam(const std::string& name, const AdamState& st) {
    detail::ByteSink s;
    s.f64(st.beta1);
    s.f64(st.beta2);
    s.f64(st.epsilon);
    s.f64(st.learning_rate);
    s.i64(st.step_count);
    s.u32(static_cast<std::uint32_t>(st.first_moment.size()));
    for (const auto& m : st.first_moment) s.array(m);
    for (const auto& v : st.second_moment) s.array(v);
    sections_["adam:" + name] = std::move(s.bytes);
  }

  AdamState get_adam(const std::string& name) const {
    detail::ByteSource src{section("adam:" + name)};
    AdamState st;
    st.beta1 = src.f64();
    st.beta2 = src.f64();
    st.epsilon = src.f64();
    st.learning_rate = src.f64();
    st.step_count = src.i64();
    std::uint32_t n = src.u32();
    for (std::uint32_t i = 0; i < n; ++i) st.first_moment.push_back(src.array());
    for (std::uint32_t i = 0; i < n; ++i) st.second_moment.push_back(src.array());
    return st;
  }

  void put_scalar(const std::string& name, double v) {
    detail::ByteSink s;
    s.f64(v);
    sections_["f64:" + name] = std::move(s.bytes);
  }

  double get_scalar(const std::string& name) const {
    detail::ByteSource src{section("f64:" + name)};
    return src.f64();
  }

  void put_int(const std::string& name, std::int64_t v) {
    detail::ByteSink s;
    s.i64(v);
    sections_["i64:" + name] = std::move(s.bytes);
  }

  std::int64_t get_int(const std::string& name) const {
    detail::ByteSource src{section("i64:" + name)};
    return src.i64();
  }

  void put_string(const std::string& name, const std::string& v) {
    detail::ByteSink s;
    s.str(v);
    sections_["str:" + name] = std::move(s.bytes);
  }

  std::string get_string(const std::string& name) const {
    detail::ByteSource src{section("str:" + name)};
    return src.str();
  }

  bool has_network(const std::string& name) const { return sections_.count("net:" + name) > 0; }
  bool has_string(const std::string& name) const { return sections_.count("str:" + name) > 0; }
  bool has_scalar(const std::string& name) const { return sections_.count("f64:" + name) > 0; }

  void save(const std::string& path) const {
    detail::ByteSink body;
    body.u8(kVersion);
    body.u32(static_cast<std::uint32_t>(sections_.size()));
    for (const auto& [name, payload] : sections_) {
      body.str(name);
      body.u32(static_cast<std::uint32_t>(payload.size()));
      body.raw(payload.data(), payload.size());
    }
    std::uint32_t crc = detail::crc32(body.bytes.data(), body.bytes.size());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open for write: " + path);
    f.write("DQSC", 4);
    f.write(reinterpret_cast<const char*>(body.bytes.data()),
            static_cast<std::streamsize>(body.bytes.size()));
    f.write(reinterpret_cast<const char*>(&crc), 4);
    if (!f) throw IoError("checkpoint: write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ChecksumError("checkpoint: missing or unreadable: " + path);
    std::vector<unsigned char> all((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (all.size() < 9 || std::memcmp(all.data(), "DQSC", 4) != 0)
      throw ChecksumError("checkpoint: bad magic: " + path);
    std::uint32_t stored;
    std::memcpy(&stored, all.data() + all.size() - 4, 4);
    std::uint32_t actual = detail::crc32(all.data() + 4, all.size() - 8);
    if (stored != actual) throw ChecksumError("checkpoint: checksum mismatch: " + path);

    std::vector<unsigned char> body(all.begin() + 4, all.end() - 4);
    detail::ByteSource src{body};
    std::uint8_t version = src.u8();
    if (version != kVersion) throw ChecksumError("checkpoint: unsupported version");
    Checkpoint ck;
    std::uint32_t count = src.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = src.str();
      std::uint32_t len = src.u32();
      std::vector<unsigned char> payload(len);
      src.raw(payload.data(), len);
      ck.sections_[name] = std::move(payload);
    }
    return ck;
  }

 private:
  const std::vector<unsigned char>& section(const std::string& key) const {
    auto it = sections_.find(key);
    if (it == sections_.end()) throw ChecksumError("checkpoint: missing section " + key);
    return it->second;
  }

  std::map<std::string, std::vector<unsigned char>> sections_;
};

}  // namespace dqs
