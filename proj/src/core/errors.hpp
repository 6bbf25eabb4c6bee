#pragma once

#include <stdexcept>
#include <string>

namespace uniprofile {

// Stable numeric codes; mirrored one-to-one by up_status in the C API.
enum class ErrorCode : int {
  kParse = 1,
  kValidation = 2,
  kRange = 3,
  kSchema = 4,
  kShape = 5,
  kIndex = 6,
  kContract = 7,
  kNumeric = 8,
  kTraining = 9,
  kParameter = 10,
  kConfig = 11,
  kIo = 12,
  kStage = 13,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define UNIPROFILE_DEFINE_ERROR(Name, Code)                   \
  class Name : public Error {                                 \
   public:                                                    \
    explicit Name(const std::string& what) : Error(Code, what) {} \
  };

UNIPROFILE_DEFINE_ERROR(ParseError, ErrorCode::kParse)
UNIPROFILE_DEFINE_ERROR(ValidationError, ErrorCode::kValidation)
UNIPROFILE_DEFINE_ERROR(RangeError, ErrorCode::kRange)
UNIPROFILE_DEFINE_ERROR(SchemaError, ErrorCode::kSchema)
UNIPROFILE_DEFINE_ERROR(ShapeError, ErrorCode::kShape)
UNIPROFILE_DEFINE_ERROR(IndexError, ErrorCode::kIndex)
UNIPROFILE_DEFINE_ERROR(ContractError, ErrorCode::kContract)
UNIPROFILE_DEFINE_ERROR(NumericError, ErrorCode::kNumeric)
UNIPROFILE_DEFINE_ERROR(TrainingError, ErrorCode::kTraining)
UNIPROFILE_DEFINE_ERROR(ParameterError, ErrorCode::kParameter)
UNIPROFILE_DEFINE_ERROR(ConfigError, ErrorCode::kConfig)
UNIPROFILE_DEFINE_ERROR(IoError, ErrorCode::kIo)

#undef UNIPROFILE_DEFINE_ERROR

// Raised by the pipeline; carries the failing stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorCode cause, const std::string& what)
      : Error(ErrorCode::kStage, "stage '" + stage + "' failed: " + what),
        stage_(std::move(stage)),
        cause_(cause) {}
  const std::string& stage() const noexcept { return stage_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  ErrorCode cause_;
};

}  // namespace uniprofile
