#pragma once

#include <stdexcept>
#include <string>

namespace occfill {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define OCCFILL_DEFINE_ERROR(Name)                 \
  class Name : public Error {                      \
   public:                                         \
    explicit Name(const std::string& what)         \
        : Error(std::string(#Name ": ") + what) {} \
  }

OCCFILL_DEFINE_ERROR(AlignmentError);
OCCFILL_DEFINE_ERROR(EncodingError);
OCCFILL_DEFINE_ERROR(MaskError);
OCCFILL_DEFINE_ERROR(PairingError);
OCCFILL_DEFINE_ERROR(IoError);
OCCFILL_DEFINE_ERROR(SpecError);
OCCFILL_DEFINE_ERROR(ShapeError);
OCCFILL_DEFINE_ERROR(TrainingError);
OCCFILL_DEFINE_ERROR(NumericsError);
OCCFILL_DEFINE_ERROR(CheckpointError);
OCCFILL_DEFINE_ERROR(SizeError);
OCCFILL_DEFINE_ERROR(CalibrationError);
OCCFILL_DEFINE_ERROR(PoseSourceError);
OCCFILL_DEFINE_ERROR(ConfigError);
OCCFILL_DEFINE_ERROR(ImageError);

#undef OCCFILL_DEFINE_ERROR

}  // namespace occfill
