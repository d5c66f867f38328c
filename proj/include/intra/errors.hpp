#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace intra {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Base of every error thrown by the library. `kind()` is a stable
/// single-word tag used by the CLI for machine-parsable error lines.
class Error : public std::runtime_error {
   public:
    Error(std::string kind, const std::string& what) : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

   private:
    std::string kind_;
};

class ShapeError : public Error {
   public:
    ShapeError(const std::string& primitive, const Shape& a, const Shape& b)
        : Error("shape", primitive + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b)) {}
    explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

class NumericError : public Error {
   public:
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

class ValueError : public Error {
   public:
    explicit ValueError(const std::string& msg) : Error("value", msg) {}
};

class IoError : public Error {
   public:
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

/// Malformed checkpoint or report; carries the byte offset where decoding failed.
class FormatError : public Error {
   public:
    FormatError(const std::string& msg, std::size_t offset)
        : Error("format", msg + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

   private:
    std::size_t offset_;
};

class ConfigError : public Error {
   public:
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

}  // namespace intra
