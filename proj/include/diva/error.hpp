#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace diva {

enum class ErrorCode {
  missing_binding,
  unknown_placeholder,
  template_checksum,
  transport,
  script_exhausted,
  protocol,
  source_disabled,
  provider,
  quota_exceeded,
  empty_corpus,
  duplicate_doc_id,
  backend,
  format,
  overflow_unavoidable,
  dimension_mismatch,
  embedding_provider,
  empty_dataset,
  non_finite_loss,
  no_valid_pair,
  review_schema,
  not_a_permutation,
  verdict_parse,
  missing_labels,
  config,
  io,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_binding: return "MissingBinding";
    case ErrorCode::unknown_placeholder: return "UnknownPlaceholder";
    case ErrorCode::template_checksum: return "TemplateChecksumMismatch";
    case ErrorCode::transport: return "Transport";
    case ErrorCode::script_exhausted: return "ScriptExhausted";
    case ErrorCode::protocol: return "ProtocolError";
    case ErrorCode::source_disabled: return "SourceDisabled";
    case ErrorCode::provider: return "ProviderError";
    case ErrorCode::quota_exceeded: return "QuotaExceeded";
    case ErrorCode::empty_corpus: return "EmptyCorpus";
    case ErrorCode::duplicate_doc_id: return "DuplicateDocId";
    case ErrorCode::backend: return "BackendError";
    case ErrorCode::format: return "FormatError";
    case ErrorCode::overflow_unavoidable: return "OverflowUnavoidable";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::embedding_provider: return "EmbeddingProviderError";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::no_valid_pair: return "NoValidPair";
    case ErrorCode::review_schema: return "ReviewSchemaError";
    case ErrorCode::not_a_permutation: return "NotAPermutation";
    case ErrorCode::verdict_parse: return "VerdictParseError";
    case ErrorCode::missing_labels: return "MissingLabels";
    case ErrorCode::config: return "ConfigError";
    case ErrorCode::io: return "IoError";
  }
  return "Error";
}

/// Base of every error raised by the library. `detail()` carries the payload
/// named by the error (the unbound placeholder, the raw model reply, the URL).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string detail = {})
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

template <ErrorCode C>
class CodedError : public Error {
 public:
  explicit CodedError(std::string message, std::string detail = {})
      : Error(C, std::move(message), std::move(detail)) {}
};

using MissingBinding = CodedError<ErrorCode::missing_binding>;
using UnknownPlaceholder = CodedError<ErrorCode::unknown_placeholder>;
using TemplateChecksumMismatch = CodedError<ErrorCode::template_checksum>;
using TransportError = CodedError<ErrorCode::transport>;
using ScriptExhausted = CodedError<ErrorCode::script_exhausted>;
using ProtocolError = CodedError<ErrorCode::protocol>;
using SourceDisabled = CodedError<ErrorCode::source_disabled>;
using ProviderError = CodedError<ErrorCode::provider>;
using QuotaExceeded = CodedError<ErrorCode::quota_exceeded>;
using EmptyCorpus = CodedError<ErrorCode::empty_corpus>;
using DuplicateDocId = CodedError<ErrorCode::duplicate_doc_id>;
using BackendError = CodedError<ErrorCode::backend>;
using FormatError = CodedError<ErrorCode::format>;
using OverflowUnavoidable = CodedError<ErrorCode::overflow_unavoidable>;
using DimensionMismatch = CodedError<ErrorCode::dimension_mismatch>;
using EmbeddingProviderError = CodedError<ErrorCode::embedding_provider>;
using EmptyDataset = CodedError<ErrorCode::empty_dataset>;
using NonFiniteLoss = CodedError<ErrorCode::non_finite_loss>;
using NoValidPair = CodedError<ErrorCode::no_valid_pair>;
using ReviewSchemaError = CodedError<ErrorCode::review_schema>;
using NotAPermutation = CodedError<ErrorCode::not_a_permutation>;
using VerdictParseError = CodedError<ErrorCode::verdict_parse>;
using MissingLabels = CodedError<ErrorCode::missing_labels>;
using IoError = CodedError<ErrorCode::io>;

struct ConfigIssue {
  std::string key;
  std::string reason;
};

/// Every configuration problem found in one pass.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues)
      : Error(ErrorCode::config, summarize(issues)), issues_(std::move(issues)) {}

  ConfigError(std::string key, std::string reason)
      : ConfigError(std::vector<ConfigIssue>{{std::move(key), std::move(reason)}}) {}

  const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

 private:
  static std::string summarize(const std::vector<ConfigIssue>& issues) {
    std::string out;
    for (const auto& i : issues) {
      if (!out.empty()) out += "; ";
      out += i.key + ": " + i.reason;
    }
    return out;
  }

  std::vector<ConfigIssue> issues_;
};

}  // namespace diva
