#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bag {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Gateway
struct GatewayError : Error {
    using Error::Error;
};
/// Retryable failure (HTTP 429/5xx, timeouts). Never escapes the gateway.
struct TransientError : GatewayError {
    using GatewayError::GatewayError;
};
struct BackendUnavailable : GatewayError {
    using GatewayError::GatewayError;
};
struct MalformedResponse : GatewayError {
    using GatewayError::GatewayError;
};
struct AuthError : GatewayError {
    using GatewayError::GatewayError;
};
struct NoScriptMatch : GatewayError {
    using GatewayError::GatewayError;
};
/// Some, but not all, samples of a fan-out request failed.
struct PartialFailure : GatewayError {
    PartialFailure(std::size_t failed_, std::size_t total_, const std::string& first_error);
    std::size_t failed;
    std::size_t total;
};
struct CacheCorrupt : Error {
    using Error::Error;
};

// Dataset
struct DatasetError : Error {
    using Error::Error;
};
struct ParseError : DatasetError {
    using DatasetError::DatasetError;
};
struct EmptyDataset : DatasetError {
    using DatasetError::DatasetError;
};

// Belief
struct PartialBelief : Error {
    PartialBelief(std::size_t failed_, std::size_t k_);
    std::size_t failed;
    std::size_t k;
};

// Prompts
struct MissingSlot : Error {
    explicit MissingSlot(const std::string& slot_);
    std::string slot;
};
struct UnknownSlot : Error {
    explicit UnknownSlot(const std::string& slot_);
    std::string slot;
};
struct UnparseableStrategy : Error {
    using Error::Error;
};
struct UnparseableVerdict : Error {
    using Error::Error;
};
struct UnparseableLabel : Error {
    using Error::Error;
};

// Analysis
struct IncompleteAssignment : Error {
    using Error::Error;
};
struct MismatchedQuestionSets : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace bag
