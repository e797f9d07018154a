#pragma once

#include <stdexcept>
#include <string>

namespace wsret {

/// Raised for data and contract violations (bad files, shape mismatches,
/// invalid arguments). The CLI maps it to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace wsret
