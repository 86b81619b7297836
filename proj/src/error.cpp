// SPDX-License-Identifier: Apache-2.0
#include "dscc/error.hpp"

namespace dscc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::EmptyIntersection: return "EmptyIntersection";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnknownContext: return "UnknownContext";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::VocabHashMismatch: return "VocabHashMismatch";
    case ErrorCode::EmptyContext: return "EmptyContext";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::EmptyQuestion: return "EmptyQuestion";
    case ErrorCode::EmptyTrainSplit: return "EmptyTrainSplit";
    case ErrorCode::FrozenProxy: return "FrozenProxy";
    case ErrorCode::FrozenProxyMissing: return "FrozenProxyMissing";
    case ErrorCode::EmptyValSplit: return "EmptyValSplit";
    case ErrorCode::ConflictingFlags: return "ConflictingFlags";
    case ErrorCode::NonFiniteResult: return "NonFiniteResult";
    case ErrorCode::ProxyVocabMismatch: return "ProxyVocabMismatch";
    case ErrorCode::MalformedClientOutput: return "MalformedClientOutput";
    case ErrorCode::ClientFailure: return "ClientFailure";
    case ErrorCode::TooFewExamples: return "TooFewExamples";
    case ErrorCode::EmptySpec: return "EmptySpec";
    case ErrorCode::IdMismatch: return "IdMismatch";
  }
  return "Unknown";
}

}  // namespace dscc
