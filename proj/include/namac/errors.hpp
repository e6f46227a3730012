#pragma once

#include <stdexcept>
#include <string>

namespace namac {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define NAMAC_DECLARE_ERROR(Name)                  \
    class Name : public Error {                    \
    public:                                        \
        using Error::Error;                        \
    };

// plant
NAMAC_DECLARE_ERROR(InvalidConfig)
NAMAC_DECLARE_ERROR(NonConvergence)
NAMAC_DECLARE_ERROR(NumericalBlowup)
// scenario-gen
NAMAC_DECLARE_ERROR(InvalidBounds)
NAMAC_DECLARE_ERROR(EmptySelection)
NAMAC_DECLARE_ERROR(StoreFormatError)
// neural
NAMAC_DECLARE_ERROR(ShapeMismatch)
NAMAC_DECLARE_ERROR(LengthMismatch)
NAMAC_DECLARE_ERROR(Divergence)
NAMAC_DECLARE_ERROR(ModelFormatError)
// twins
NAMAC_DECLARE_ERROR(AllSensorsFailed)
NAMAC_DECLARE_ERROR(InsufficientHistory)
// workflow
NAMAC_DECLARE_ERROR(IncompleteLog)
// assessment
NAMAC_DECLARE_ERROR(EmptyInput)
NAMAC_DECLARE_ERROR(DegenerateBandwidth)
NAMAC_DECLARE_ERROR(GridMismatch)
NAMAC_DECLARE_ERROR(ZeroVariance)
// gateway
NAMAC_DECLARE_ERROR(BundleMismatch)

#undef NAMAC_DECLARE_ERROR

}  // namespace namac
