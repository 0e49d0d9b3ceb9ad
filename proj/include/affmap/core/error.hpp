#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace affmap {

// Invalid or inconsistent user-supplied configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced non-finite values and cannot proceed (CLI exit code 3).
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& t, const Rest&... rest) {
    os << t;
    format_into(os, rest...);
}
}  // namespace detail

template <class... Parts>
std::string format_msg(const Parts&... parts) {
    std::ostringstream os;
    detail::format_into(os, parts...);
    return os.str();
}

template <class E = std::runtime_error, class... Parts>
[[noreturn]] void fail(const Parts&... parts) {
    throw E(format_msg(parts...));
}

template <class E = std::runtime_error, class... Parts>
void require(bool ok, const Parts&... parts) {
    if (!ok) fail<E>(parts...);
}

}  // namespace affmap
