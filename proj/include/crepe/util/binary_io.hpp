#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace crepe::io {

// Little-endian primitive encoding shared by every binary artifact
// (embedding cache, prompt and head checkpoints, encoder weights).

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_bytes(std::ostream& out, std::string_view bytes);
void write_string(std::ostream& out, std::string_view s);  // u32 length + bytes
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);
void write_vector(std::ostream& out, const Eigen::VectorXd& v);

std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
std::string read_bytes(std::istream& in, std::size_t n);
std::string read_string(std::istream& in);
Eigen::MatrixXd read_matrix(std::istream& in);
Eigen::VectorXd read_vector(std::istream& in);

// Throws FormatError when the next bytes do not equal `magic`.
void expect_magic(std::istream& in, std::string_view magic, std::string_view what);

}  // namespace crepe::io
