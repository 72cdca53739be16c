#include "mako/binary_io.hpp"

#include <bit>
#include <cstring>
#include <limits>

#include "mako/error.hpp"

namespace mako::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 36;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError("unexpected end of file");
  }
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void write_f64(std::ostream& out, double v) { put(out, v); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  // column-major payload
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  write_u64(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t read_u32(std::istream& in) { return get<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get<std::uint64_t>(in); }
double read_f64(std::istream& in) { return get<double>(in); }

std::string read_string(std::istream& in) {
  const auto n = read_u64(in);
  if (n > kMaxElements) throw FormatError("string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw FormatError("unexpected end of file");
  }
  return s;
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto rows = read_u64(in);
  const auto cols = read_u64(in);
  if (rows > kMaxElements || cols > kMaxElements || rows * cols > kMaxElements) {
    throw FormatError("matrix shape out of range");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const auto bytes = static_cast<std::streamsize>(m.size() * sizeof(double));
  in.read(reinterpret_cast<char*>(m.data()), bytes);
  if (in.gcount() != bytes) throw FormatError("unexpected end of file");
  return m;
}

Eigen::VectorXd read_vector(std::istream& in) {
  const auto n = read_u64(in);
  if (n > kMaxElements) throw FormatError("vector length out of range");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  const auto bytes = static_cast<std::streamsize>(v.size() * sizeof(double));
  in.read(reinterpret_cast<char*>(v.data()), bytes);
  if (in.gcount() != bytes) throw FormatError("unexpected end of file");
  return v;
}

void write_header(std::ostream& out, const Magic& magic, std::uint32_t version) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_u32(out, version);
}

void read_header(std::istream& in, const Magic& magic, std::uint32_t version,
                 const char* what) {
  Magic got{};
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (in.gcount() != static_cast<std::streamsize>(got.size()) || got != magic) {
    throw FormatError(std::string("not a ") + what + " file (bad magic)");
  }
  const auto v = read_u32(in);
  if (v != version) {
    throw FormatError(std::string(what) + " version mismatch: file has " +
                      std::to_string(v) + ", expected " + std::to_string(version));
  }
}

}  // namespace mako::io
