#include "kgforge/error.hpp"

namespace kgf {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::EmptySources: return "EmptySources";
    case Errc::ArrayLengthMismatch: return "ArrayLengthMismatch";
    case Errc::DanglingCompositeField: return "DanglingCompositeField";
    case Errc::TrustOutOfRange: return "TrustOutOfRange";
    case Errc::NotComposite: return "NotComposite";
    case Errc::FormatError: return "FormatError";
    case Errc::UnknownFormat: return "UnknownFormat";
    case Errc::DuplicateEntityId: return "DuplicateEntityId";
    case Errc::MissingIdPredicate: return "MissingIdPredicate";
    case Errc::EmptyPredicateName: return "EmptyPredicateName";
    case Errc::MissingSchemaPredicate: return "MissingSchemaPredicate";
    case Errc::DuplicatePredicateName: return "DuplicatePredicateName";
    case Errc::UnmappedRequiredPredicate: return "UnmappedRequiredPredicate";
    case Errc::CombinerArityMismatch: return "CombinerArityMismatch";
    case Errc::MissingFeaturePredicate: return "MissingFeaturePredicate";
    case Errc::ThresholdOrder: return "ThresholdOrder";
    case Errc::UnlinkedSubject: return "UnlinkedSubject";
    case Errc::UnknownSource: return "UnknownSource";
    case Errc::NeverLinked: return "NeverLinked";
    case Errc::UnlinkedVolatileSubject: return "UnlinkedVolatileSubject";
    case Errc::EmptyString: return "EmptyString";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::StageMissing: return "StageMissing";
    case Errc::ApplyFailure: return "ApplyFailure";
    case Errc::EmptyAgentSet: return "EmptyAgentSet";
    case Errc::UnknownDependency: return "UnknownDependency";
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::ViewProcedureError: return "ViewProcedureError";
    case Errc::EmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::UnknownId: return "UnknownId";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::UnboundVariable: return "UnboundVariable";
    case Errc::DepthExceeded: return "DepthExceeded";
    case Errc::UnknownOperator: return "UnknownOperator";
    case Errc::RecursiveExpansion: return "RecursiveExpansion";
    case Errc::NoApplicableAlternative: return "NoApplicableAlternative";
    case Errc::UnresolvableReference: return "UnresolvableReference";
    case Errc::UnknownTarget: return "UnknownTarget";
    case Errc::UnknownEntity: return "UnknownEntity";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "UnknownError";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

void raise(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace kgf
