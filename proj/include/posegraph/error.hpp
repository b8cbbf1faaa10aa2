#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace posegraph {

// Broken preconditions inside the library: shape mismatches, bad arguments.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Bad input data: malformed files, failed validation, empty datasets.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent user configuration (batch larger than dataset, bad ranges).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class... Args>
std::string concat(const Args&... args)
{
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

} // namespace detail

template <class... Args>
inline void require(bool condition, const Args&... message)
{
    if (!condition)
        throw ContractViolation(detail::concat(message...));
}

} // namespace posegraph
