// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace meteor {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed numerical input (non-finite values, shape mismatch, bad probability vector).
struct InvalidInput : Error {
    using Error::Error;
};

/// Structurally invalid configuration (violated invariants, out-of-range knobs).
struct InvalidConfig : Error {
    using Error::Error;
};

/// Config-file parse or validation failure; message carries the offending key path.
struct ConfigError : InvalidConfig {
    using InvalidConfig::InvalidConfig;
};

/// Requested selection size exceeds the candidate count.
struct InvalidK : InvalidConfig {
    using InvalidConfig::InvalidConfig;
};

/// Non-finite values produced during a forward pass.
struct NumericalError : Error {
    using Error::Error;
};

/// All ranks at a prune point are zero; proportional allocation is undefined.
struct DegenerateRanks : Error {
    using Error::Error;
};

/// Tensor file with an unknown magic or dtype code.
struct UnsupportedFormat : Error {
    using Error::Error;
};

/// Tensor file with a truncated payload or overflowing dimensions.
struct CorruptFile : Error {
    using Error::Error;
};

/// Filesystem-level failure (open/read/write).
struct IoError : Error {
    using Error::Error;
};

/// Trace does not cover every block/layer needed by the cost model.
struct InvalidTrace : Error {
    using Error::Error;
};

/// Calibration target unreachable (clamps dominate or search did not bracket).
struct CalibrationError : Error {
    using Error::Error;
};

}  // namespace meteor
