#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>
#include <optional>
#include <string>
#include <vector>

#include "repsim/errors.hpp"
#include "repsim/numerics.hpp"

namespace repsim {

// n samples x s positions x c channels. Stored as an (n*s) x c matrix whose
// row index is sample * s + position, so "positions as samples" is the
// native layout and per-position maps are a single matrix product.
struct ActivationSet {
  Eigen::Index n = 0;
  Eigen::Index s = 1;
  Eigen::Index c = 0;
  Matrix data;
  std::vector<int> labels;  // empty or size n

  ActivationSet() = default;
  ActivationSet(Eigen::Index n_, Eigen::Index s_, Eigen::Index c_, Matrix d,
                std::vector<int> l = {})
      : n(n_), s(s_), c(c_), data(std::move(d)), labels(std::move(l)) {
    validate();
  }

  static ActivationSet from_rows(Matrix rows, std::vector<int> labels = {}) {
    const Eigen::Index n = rows.rows(), c = rows.cols();
    return ActivationSet(n, 1, c, std::move(rows), std::move(labels));
  }

  void validate() const {
    if (n < 1 || s < 1 || c < 1) throw ShapeError("ActivationSet: dims must be >= 1");
    if (data.rows() != n * s || data.cols() != c)
      throw ShapeError("ActivationSet: payload is " + std::to_string(data.rows()) + "x" +
                       std::to_string(data.cols()) + ", expected " +
                       std::to_string(n * s) + "x" + std::to_string(c));
    if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != n)
      throw ShapeError("ActivationSet: label count != n");
  }

  bool has_labels() const { return !labels.empty(); }

  // Each sample's positions concatenated into one row of length s*c.
  Matrix flattened() const {
    if (s == 1) return data;
    Matrix out(n, s * c);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index p = 0; p < s; ++p) out.block(i, p * c, 1, c) = data.row(i * s + p);
    return out;
  }

  // n x c mean over positions.
  Matrix position_mean() const {
    if (s == 1) return data;
    Matrix out = Matrix::Zero(n, c);
    for (Eigen::Index i = 0; i < n; ++i)
      out.row(i) = data.middleRows(i * s, s).colwise().mean();
    return out;
  }

  ActivationSet with_data(Matrix d) const {
    const Eigen::Index cols = d.cols();
    return ActivationSet(n, s, cols, std::move(d), labels);
  }

  ActivationSet subset(const std::vector<std::size_t>& samples) const {
    Matrix d(static_cast<Eigen::Index>(samples.size()) * s, c);
    std::vector<int> l;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(samples[k]);
      d.middleRows(static_cast<Eigen::Index>(k) * s, s) = data.middleRows(i * s, s);
      if (has_labels()) l.push_back(labels[samples[k]]);
    }
    return ActivationSet(static_cast<Eigen::Index>(samples.size()), s, c, std::move(d), std::move(l));
  }
};

// ActivationFile, little-endian throughout:
//   8 bytes  magic "RSACTV\0\0"
//   u32      version (1)
//   u64 n, u64 s, u64 c
//   u8       labels present (0/1)
//   f64[n*s*c] payload, order (sample, position, channel)
//   i64[n]   labels, if present
namespace actfile {

inline constexpr char kMagic[8] = {'R', 'S', 'A', 'C', 'T', 'V', 0, 0};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint64_t bits = 0;
  if constexpr (sizeof(T) == 8) bits = std::bit_cast<std::uint64_t>(v);
  else if constexpr (sizeof(T) == 4) bits = std::bit_cast<std::uint32_t>(v);
  else bits = static_cast<std::uint8_t>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : buf_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > buf_.size()) throw IoError("activation file truncated");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (sizeof(T) == 8) return std::bit_cast<T>(bits);
    else if constexpr (sizeof(T) == 4) return std::bit_cast<T>(static_cast<std::uint32_t>(bits));
    else return static_cast<T>(bits);
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void expect_magic(const char (&magic)[8], const char* what) {
    if (buf_.size() < 8 || std::memcmp(buf_.data(), magic, 8) != 0)
      throw IoError(std::string(what) + ": bad magic");
    pos_ = 8;
  }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_all(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

inline std::vector<unsigned char> encode(const ActivationSet& a) {
  a.validate();
  std::vector<unsigned char> out(kMagic, kMagic + 8);
  detail::put_le(out, kVersion);
  detail::put_le(out, static_cast<std::uint64_t>(a.n));
  detail::put_le(out, static_cast<std::uint64_t>(a.s));
  detail::put_le(out, static_cast<std::uint64_t>(a.c));
  detail::put_le(out, static_cast<std::uint8_t>(a.has_labels() ? 1 : 0));
  for (Eigen::Index r = 0; r < a.data.rows(); ++r)
    for (Eigen::Index k = 0; k < a.c; ++k) detail::put_le(out, a.data(r, k));
  for (int l : a.labels) detail::put_le(out, static_cast<std::int64_t>(l));
  return out;
}

inline ActivationSet decode(const std::vector<unsigned char>& bytes) {
  detail::Reader rd(bytes);
  rd.expect_magic(kMagic, "activation file");
  if (rd.get<std::uint32_t>() != kVersion) throw IoError("activation file: unsupported version");
  const auto n = rd.get<std::uint64_t>(), s = rd.get<std::uint64_t>(), c = rd.get<std::uint64_t>();
  const bool has_labels = rd.get<std::uint8_t>() != 0;
  if (n == 0 || s == 0 || c == 0) throw IoError("activation file: zero dimension");
  const std::uint64_t need = n * s * c * 8 + (has_labels ? n * 8 : 0);
  if (rd.remaining() != need) throw IoError("activation file: payload length mismatch");
  Matrix d(static_cast<Eigen::Index>(n * s), static_cast<Eigen::Index>(c));
  for (Eigen::Index r = 0; r < d.rows(); ++r)
    for (Eigen::Index k = 0; k < d.cols(); ++k) d(r, k) = rd.get<double>();
  std::vector<int> labels;
  if (has_labels)
    for (std::uint64_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(rd.get<std::int64_t>()));
  return ActivationSet(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s),
                       static_cast<Eigen::Index>(c), std::move(d), std::move(labels));
}

inline void write(const std::string& path, const ActivationSet& a) { detail::write_all(path, encode(a)); }
inline ActivationSet read(const std::string& path) { return decode(detail::read_all(path)); }

}  // namespace actfile
}  // namespace repsim
