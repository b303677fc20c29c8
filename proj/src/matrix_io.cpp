#include "sbp/matrix_io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sbp::io {

namespace {

constexpr char kMagic[4] = {'S', 'B', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "SBPM container assumes a little-endian host");

[[noreturn]] void parse_fail(const std::filesystem::path& path, const std::string& what) {
    throw_validation("ParseError", path.string() + ": " + what);
}

double parse_double(const std::filesystem::path& path, std::string_view token, int line) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        parse_fail(path, "bad numeric token '" + std::string(token) + "' on line " +
                             std::to_string(line));
    }
    return v;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) parse_fail(path, "cannot open for reading");
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        size_t start = 0;
        while (true) {
            size_t comma = line.find(',', start);
            std::string_view token(line.data() + start,
                                   (comma == std::string::npos ? line.size() : comma) - start);
            row.push_back(parse_double(path, token, lineno));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            parse_fail(path, "ragged row on line " + std::to_string(lineno));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) parse_fail(path, "empty matrix file");
    Matrix m(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return m;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_runtime("IoError", "cannot open " + path.string() + " for writing");
    std::string line;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        line.clear();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) line.push_back(',');
            line += format_double(m(i, j));
        }
        line.push_back('\n');
        out << line;
    }
    if (!out) throw_runtime("IoError", "write failed for " + path.string());
}

Matrix read_matrix_sbpm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) parse_fail(path, "cannot open for reading");
    char magic[4];
    std::uint32_t version = 0, rows = 0, cols = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) parse_fail(path, "not an SBPM file");
    if (version != kVersion) parse_fail(path, "unsupported SBPM version");
    if (rows == 0 || cols == 0) parse_fail(path, "zero-sized SBPM matrix");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::vector<double> buf(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!in) parse_fail(path, "truncated SBPM payload");
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = buf[static_cast<size_t>(i) * cols + static_cast<size_t>(j)];
    return m;
}

void write_matrix_sbpm(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw_runtime("IoError", "cannot open " + path.string() + " for writing");
    const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), 4);
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    std::vector<double> buf(static_cast<size_t>(rows) * cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            buf[static_cast<size_t>(i) * cols + static_cast<size_t>(j)] = m(i, j);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!out) throw_runtime("IoError", "write failed for " + path.string());
}

Matrix read_matrix(const std::filesystem::path& path) {
    return path.extension() == ".sbpm" ? read_matrix_sbpm(path) : read_matrix_csv(path);
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    if (path.extension() == ".sbpm")
        write_matrix_sbpm(path, m);
    else
        write_matrix_csv(path, m);
}

}  // namespace sbp::io
