// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loramerge {

enum class ErrorCode {
  MalformedHeader,
  ShapeMismatch,
  OrphanTensor,
  NonFinite,
  InvalidValue,
  IoError,
  RankTooLarge,
  EmptyIntersection,
  BaseMissingLayer,
  UnknownLayer,
  NoNegatives,
  NonFiniteLoss,
  BadWeights,
  SpecInfeasible,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OrphanTensor: return "OrphanTensor";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::RankTooLarge: return "RankTooLarge";
    case ErrorCode::EmptyIntersection: return "EmptyIntersection";
    case ErrorCode::BaseMissingLayer: return "BaseMissingLayer";
    case ErrorCode::UnknownLayer: return "UnknownLayer";
    case ErrorCode::NoNegatives: return "NoNegatives";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::SpecInfeasible: return "SpecInfeasible";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message is prefixed with the code name so it reads well on a terminal.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by the optimizer; `step` is the iteration at which the loss blew up.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::size_t step, const std::string& what)
      : Error(ErrorCode::NonFiniteLoss, what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace loramerge
