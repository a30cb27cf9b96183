#pragma once

#include <stdexcept>

namespace despeckle {

// Base of everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DESPECKLE_ERROR_TYPE(Name) \
  class Name : public Error {      \
   public:                         \
    using Error::Error;            \
  };

// image I/O
DESPECKLE_ERROR_TYPE(MalformedHeader)
DESPECKLE_ERROR_TYPE(UnsupportedFormat)
DESPECKLE_ERROR_TYPE(TruncatedData)
DESPECKLE_ERROR_TYPE(IoFailure)

// image ops
DESPECKLE_ERROR_TYPE(SizeTooSmall)
DESPECKLE_ERROR_TYPE(PatchTooLarge)
DESPECKLE_ERROR_TYPE(InvalidFloor)
DESPECKLE_ERROR_TYPE(ImageTooSmall)

// noise schedule / forward process
DESPECKLE_ERROR_TYPE(InvalidRange)
DESPECKLE_ERROR_TYPE(TooFewSteps)
DESPECKLE_ERROR_TYPE(NegativeAlpha)
DESPECKLE_ERROR_TYPE(IndexOutOfRange)

// network
DESPECKLE_ERROR_TYPE(ShapeMismatch)
DESPECKLE_ERROR_TYPE(TauLengthMismatch)
DESPECKLE_ERROR_TYPE(NetTooLarge)

// training data
DESPECKLE_ERROR_TYPE(EmptyDataset)
DESPECKLE_ERROR_TYPE(EmptyInputDir)

// baselines
DESPECKLE_ERROR_TYPE(UnstableStep)
DESPECKLE_ERROR_TYPE(NonPositivePixels)

// experiment harness
DESPECKLE_ERROR_TYPE(ConfigError)
DESPECKLE_ERROR_TYPE(MissingExternalCsv)
DESPECKLE_ERROR_TYPE(CheckpointMismatch)

#undef DESPECKLE_ERROR_TYPE

}  // namespace despeckle
