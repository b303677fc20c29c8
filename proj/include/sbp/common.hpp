#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sbp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// All library errors carry a stable machine-readable code plus a kind that
// maps onto the CLI exit convention (validation -> 1, runtime -> 2).
enum class ErrorKind { Validation, Runtime };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error("[" + code + "] " + message),
          kind_(kind),
          code_(std::move(code)) {}

    ErrorKind kind() const { return kind_; }
    const std::string& code() const { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

[[noreturn]] inline void throw_validation(std::string code, const std::string& message) {
    throw Error(ErrorKind::Validation, std::move(code), message);
}

[[noreturn]] inline void throw_runtime(std::string code, const std::string& message) {
    throw Error(ErrorKind::Runtime, std::move(code), message);
}

inline void require(bool condition, std::string code, const std::string& message) {
    if (!condition) throw_validation(std::move(code), message);
}

}  // namespace sbp
