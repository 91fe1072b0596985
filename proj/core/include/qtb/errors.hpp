#pragma once

#include <stdexcept>
#include <string>

namespace qtb {

/// Error families. The CLI maps each family to its own exit code.
enum class ErrorFamily {
  Domain = 4,      // invalid numeric argument, tie at a switch surface
  Estimation = 5,  // support, empty strata, missing cells
  Inference = 6,   // density floor, degenerate subsamples, empty sets
  Input = 3,       // schema and CSV problems, bad configuration
  Solver = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorFamily family, const std::string& what)
      : std::runtime_error(what), family_(family) {}
  ErrorFamily family() const noexcept { return family_; }

 private:
  ErrorFamily family_;
};

#define QTB_DEFINE_ERROR(Name, Family)                       \
  class Name : public Error {                                \
   public:                                                   \
    explicit Name(const std::string& what)                   \
        : Error(ErrorFamily::Family, #Name ": " + what) {}   \
  };

QTB_DEFINE_ERROR(DomainError, Domain)
QTB_DEFINE_ERROR(TieError, Domain)
QTB_DEFINE_ERROR(TailError, Domain)
QTB_DEFINE_ERROR(SupportError, Estimation)
QTB_DEFINE_ERROR(EmptyArmError, Estimation)
QTB_DEFINE_ERROR(MissingCellError, Estimation)
QTB_DEFINE_ERROR(DensityFloorError, Inference)
QTB_DEFINE_ERROR(DegenerateSubsampleError, Inference)
QTB_DEFINE_ERROR(EmptySetError, Inference)
QTB_DEFINE_ERROR(SchemaError, Input)
QTB_DEFINE_ERROR(MissingFieldError, Input)
QTB_DEFINE_ERROR(ConfigError, Input)
QTB_DEFINE_ERROR(SolverError, Solver)

#undef QTB_DEFINE_ERROR

}  // namespace qtb
