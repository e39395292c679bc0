#pragma once

#include <stdexcept>
#include <string>

namespace mixopt {

/// Typed runtime error. The kind drives CLI exit codes: infeasibility
/// maps to exit 3, everything else to exit 2.
class Error : public std::runtime_error {
 public:
  enum class Kind {
    UnknownDomain,
    IdCollision,
    PartitionTokenMismatch,
    EmptyDomainSet,
    InvalidArgument,
    RejectionExhausted,
    DimensionMismatch,
    InfeasibleCaps,
    SchemaError,
    SimplexViolation,
    UnknownDomainColumn,
    Underdetermined,
    SingularKernel,
    ZeroVariance,
    MissingModel,
    NoFeasibleCandidate,
    AllMassRemoved,
    UnsupportedUpdateKind,
    WrongFamily,
    WrongUpdateKind,
    NonPositiveMu,
    LengthMismatch,
    Io,
  };

  Error(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

  bool is_infeasibility() const {
    return kind_ == Kind::InfeasibleCaps || kind_ == Kind::RejectionExhausted ||
           kind_ == Kind::NoFeasibleCandidate;
  }

 private:
  Kind kind_;
};

}  // namespace mixopt
