#pragma once

#include <filesystem>

#include "sbp/common.hpp"

namespace sbp::io {

// Dense matrix readers/writers. Two interchangeable on-disk forms:
//  - CSV: header-free rows of comma-separated decimals, written with
//    shortest-round-trip formatting so values survive bit-for-bit.
//  - SBPM: little-endian binary container with a 16-byte header
//    (magic "SBPM", u32 version, u32 rows, u32 cols) and a row-major
//    f64 payload.
// Format is picked by extension: ".sbpm" -> binary, anything else -> CSV.

Matrix read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

Matrix read_matrix_sbpm(const std::filesystem::path& path);
void write_matrix_sbpm(const std::filesystem::path& path, const Matrix& m);

Matrix read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const Matrix& m);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

}  // namespace sbp::io
