#pragma once

// Little-endian binary primitives shared by the dataset, checkpoint and QP
// dump formats. Readers throw FormatError on truncation.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

namespace mako::io {

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, const std::string& s);
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);
void write_vector(std::ostream& out, const Eigen::VectorXd& v);

std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
Eigen::MatrixXd read_matrix(std::istream& in);
Eigen::VectorXd read_vector(std::istream& in);

using Magic = std::array<char, 8>;

void write_header(std::ostream& out, const Magic& magic, std::uint32_t version);
/// Checks magic and version; throws FormatError with `what` in the message.
void read_header(std::istream& in, const Magic& magic, std::uint32_t version,
                 const char* what);

}  // namespace mako::io
