#include "crepe/util/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>

#include "crepe/errors.hpp"

namespace crepe::io {
namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) {
    throw FormatError("unexpected end of binary stream");
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(buf[i]) << (8 * i);
  }
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
void write_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

void write_bytes(std::ostream& out, std::string_view bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_string(std::ostream& out, std::string_view s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s);
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      write_f64(out, m(r, c));
    }
  }
}

void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  write_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    write_f64(out, v(i));
  }
}

std::uint32_t read_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get_le<std::uint64_t>(in); }
float read_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

std::string read_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) {
    throw FormatError("unexpected end of binary stream");
  }
  return s;
}

std::string read_string(std::istream& in) { return read_bytes(in, read_u32(in)); }

Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto rows = static_cast<Eigen::Index>(read_u64(in));
  const auto cols = static_cast<Eigen::Index>(read_u64(in));
  if (rows < 0 || cols < 0 || rows * cols > (Eigen::Index{1} << 32)) {
    throw FormatError("implausible matrix shape in binary stream");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = read_f64(in);
    }
  }
  return m;
}

Eigen::VectorXd read_vector(std::istream& in) {
  const auto n = static_cast<Eigen::Index>(read_u64(in));
  if (n < 0 || n > (Eigen::Index{1} << 32)) {
    throw FormatError("implausible vector length in binary stream");
  }
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v(i) = read_f64(in);
  }
  return v;
}

void expect_magic(std::istream& in, std::string_view magic, std::string_view what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) {
    throw FormatError("not a " + std::string(what) + " file (bad magic)");
  }
}

}  // namespace crepe::io
