#pragma once

#include <stdexcept>
#include <string>

namespace kgf {

enum class Errc {
  // triples / snapshot
  EmptySources,
  ArrayLengthMismatch,
  DanglingCompositeField,
  TrustOutOfRange,
  NotComposite,
  // ingest
  FormatError,
  UnknownFormat,
  DuplicateEntityId,
  MissingIdPredicate,
  EmptyPredicateName,
  MissingSchemaPredicate,
  DuplicatePredicateName,
  UnmappedRequiredPredicate,
  CombinerArityMismatch,
  // linking
  MissingFeaturePredicate,
  ThresholdOrder,
  // fusion
  UnlinkedSubject,
  UnknownSource,
  NeverLinked,
  UnlinkedVolatileSubject,
  // string similarity
  EmptyString,
  ZeroVector,
  InsufficientData,
  NonFiniteLoss,
  // graph engine
  StageMissing,
  ApplyFailure,
  EmptyAgentSet,
  UnknownDependency,
  CycleDetected,
  ViewProcedureError,
  // embeddings
  EmptyTrainingSet,
  UnknownId,
  // live graph
  SyntaxError,
  UnboundVariable,
  DepthExceeded,
  UnknownOperator,
  RecursiveExpansion,
  NoApplicableAlternative,
  UnresolvableReference,
  UnknownTarget,
  // driver
  UnknownEntity,
  ConfigError,
  IoError,
};

const char* errc_name(Errc c);

// Single exception type for contract violations; code() identifies the
// failed contract, what() carries context.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void raise(Errc code, const std::string& message);

}  // namespace kgf
