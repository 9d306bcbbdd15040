#pragma once

#include <atomic>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace boostlmm {

/// Bad user input: missing columns, malformed files, invalid configuration.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not produce a usable result.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline std::atomic<bool>& warnings_enabled() {
    static std::atomic<bool> enabled{true};
    return enabled;
}
}  // namespace detail

inline void set_warnings_enabled(bool on) { detail::warnings_enabled().store(on); }

inline void warn(std::string_view msg) {
    if (detail::warnings_enabled().load()) {
        std::cerr << "warning: " << msg << '\n';
    }
}

}  // namespace boostlmm
