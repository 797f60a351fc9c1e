#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace srdd {

// Error taxonomy. The CLI maps ValidationError (and subclasses) to exit
// code 2 and NumericError to exit code 3; everything else is a plain
// runtime_error.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : ValidationError {
    using ValidationError::ValidationError;
};
struct RangeError : ValidationError {
    using ValidationError::ValidationError;
};
struct IndexError : ValidationError {
    using ValidationError::ValidationError;
};
struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};
struct ContractError : ValidationError {
    using ValidationError::ValidationError;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace srdd
