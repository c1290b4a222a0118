#pragma once

#include <stdexcept>
#include <string>

namespace vxls {

// Error hierarchy. Every failure mode surfaced by the library is one of
// these; callers that only care about "something went wrong" can catch
// vxls::Error.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define VXLS_ERROR_TYPE(Name)                                        \
    struct Name : Error {                                            \
        explicit Name(const std::string& msg) : Error(msg) {}        \
    }

// tensor / autodiff
VXLS_ERROR_TYPE(ShapeMismatch);
VXLS_ERROR_TYPE(InvalidStride);
VXLS_ERROR_TYPE(NonScalarRoot);
VXLS_ERROR_TYPE(NonScalarOutput);

// volume io / preprocessing
VXLS_ERROR_TYPE(IoError);
VXLS_ERROR_TYPE(MalformedHeader);
VXLS_ERROR_TYPE(SizeMismatch);
VXLS_ERROR_TYPE(InvalidSpacing);
VXLS_ERROR_TYPE(DegenerateVolume);
VXLS_ERROR_TYPE(UnalignedCase);

// phantoms / augmentation / training
VXLS_ERROR_TYPE(InvalidSpec);
VXLS_ERROR_TYPE(IndivisiblePatch);
VXLS_ERROR_TYPE(EmptyMask);
VXLS_ERROR_TYPE(TooFewCases);
VXLS_ERROR_TYPE(NonBinaryTarget);
VXLS_ERROR_TYPE(DivergedLoss);
VXLS_ERROR_TYPE(IncompatibleInit);

// network / checkpoints
VXLS_ERROR_TYPE(InvalidConfig);
VXLS_ERROR_TYPE(VersionMismatch);
VXLS_ERROR_TYPE(ShapeConflict);

// metrics
VXLS_ERROR_TYPE(DimMismatch);
VXLS_ERROR_TYPE(EmptyList);

#undef VXLS_ERROR_TYPE

}  // namespace vxls
