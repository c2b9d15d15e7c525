#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace capkit {

enum class Errc {
  Io,
  InvalidArgument,
  MalformedInput,
  DuplicateAnnotationId,
  DimensionMismatch,
  SizeMismatch,
  ZeroVector,
  EmptyIndex,
  NoCaptions,
  EmptyPool,
  EmptyReferences,
  EmptyHypothesis,
  NonFiniteLogProb,
  DegenerateCorpus,
  UnknownToken,
  NonFiniteLoss,
  NoCompleteHypothesis,
  EmptyNBest,
  SchemaMismatch,
  MissingReferences,
};

std::string_view to_string(Errc code);

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// True for failures caused by the environment or user-supplied files
// rather than by a violated invariant.
bool is_input_error(Errc code) noexcept;

}  // namespace capkit
