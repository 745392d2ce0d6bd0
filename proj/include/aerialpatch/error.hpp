// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace aerialpatch {

/// Runtime failure (I/O, numerical breakdown). Maps to CLI exit status 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input or configuration. Maps to CLI exit status 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace aerialpatch
