// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dscc {

enum class ErrorCode {
  InvalidArgument,
  Io,
  ConfigError,
  // vocab
  EmptyIntersection,
  DimensionMismatch,
  // providers
  UnknownContext,
  Transport,
  SchemaViolation,
  VocabHashMismatch,
  // micro_lm
  EmptyContext,
  NonFiniteGradient,
  HashMismatch,
  VersionMismatch,
  // align_train
  EmptyQuestion,
  EmptyTrainSplit,
  FrozenProxy,
  FrozenProxyMissing,
  EmptyValSplit,
  ConflictingFlags,
  // steer
  NonFiniteResult,
  ProxyVocabMismatch,
  // dataaug
  MalformedClientOutput,
  ClientFailure,
  TooFewExamples,
  // evalkit
  EmptySpec,
  IdMismatch,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code; the message is module-qualified.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dscc
