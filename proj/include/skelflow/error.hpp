// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace skelflow {

enum class errc {
  // skeleton validation
  multiple_roots,
  cycle_detected,
  index_out_of_range,
  coordinate_out_of_bounds,
  non_finite_coordinate,
  invalid_joint_count,
  // numerics
  shape_mismatch,
  non_finite_value,
  non_finite_gradient,
  out_of_range,
  // model wiring
  config_mismatch,
  frozen_violation,
  dtype_mismatch,
  // containers / io
  bad_magic,
  version_mismatch,
  corrupt_sample,
  io_error,
  // sampling / metrics
  mask_out_of_bounds,
  empty_set,
  empty_occupancy,
  resolution_mismatch,
  degenerate_skeleton,
  usage,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::multiple_roots: return "MultipleRoots";
    case errc::cycle_detected: return "CycleDetected";
    case errc::index_out_of_range: return "IndexOutOfRange";
    case errc::coordinate_out_of_bounds: return "CoordinateOutOfBounds";
    case errc::non_finite_coordinate: return "NonFiniteCoordinate";
    case errc::invalid_joint_count: return "InvalidJointCount";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::non_finite_value: return "NonFiniteValue";
    case errc::non_finite_gradient: return "NonFiniteGradient";
    case errc::out_of_range: return "OutOfRange";
    case errc::config_mismatch: return "ConfigMismatch";
    case errc::frozen_violation: return "FrozenViolation";
    case errc::dtype_mismatch: return "DtypeMismatch";
    case errc::bad_magic: return "BadMagic";
    case errc::version_mismatch: return "VersionMismatch";
    case errc::corrupt_sample: return "CorruptSample";
    case errc::io_error: return "IOError";
    case errc::mask_out_of_bounds: return "MaskOutOfBounds";
    case errc::empty_set: return "EmptySet";
    case errc::empty_occupancy: return "EmptyOccupancy";
    case errc::resolution_mismatch: return "ResolutionMismatch";
    case errc::degenerate_skeleton: return "DegenerateSkeleton";
    case errc::usage: return "Usage";
  }
  return "Unknown";
}

/// Library-wide exception carrying a machine-checkable error code.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

inline void require(bool cond, errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace skelflow
