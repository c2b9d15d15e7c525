#include "capkit/errors.hpp"

namespace capkit {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::Io: return "Io";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::MalformedInput: return "MalformedInput";
    case Errc::DuplicateAnnotationId: return "DuplicateAnnotationId";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::NoCaptions: return "NoCaptions";
    case Errc::EmptyPool: return "EmptyPool";
    case Errc::EmptyReferences: return "EmptyReferences";
    case Errc::EmptyHypothesis: return "EmptyHypothesis";
    case Errc::NonFiniteLogProb: return "NonFiniteLogProb";
    case Errc::DegenerateCorpus: return "DegenerateCorpus";
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::NoCompleteHypothesis: return "NoCompleteHypothesis";
    case Errc::EmptyNBest: return "EmptyNBest";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::MissingReferences: return "MissingReferences";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

bool is_input_error(Errc code) noexcept {
  switch (code) {
    case Errc::Io:
    case Errc::InvalidArgument:
    case Errc::MalformedInput:
    case Errc::DuplicateAnnotationId:
      return true;
    default:
      return false;
  }
}

}  // namespace capkit
