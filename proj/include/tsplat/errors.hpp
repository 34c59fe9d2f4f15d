// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tsplat {

/// Base of every error raised by the library. kind() is a stable class name
/// that the CLI prints next to the message.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual const char* kind() const noexcept { return "Error"; }
};

#define TSPLAT_DEFINE_ERROR(Name)                                                 \
    class Name : public Error {                                                   \
    public:                                                                       \
        using Error::Error;                                                       \
        [[nodiscard]] const char* kind() const noexcept override { return #Name; } \
    }

TSPLAT_DEFINE_ERROR(DegenerateInput);
TSPLAT_DEFINE_ERROR(NumericalDegeneracy);
TSPLAT_DEFINE_ERROR(EmptyInput);
TSPLAT_DEFINE_ERROR(ShapeMismatch);
TSPLAT_DEFINE_ERROR(NonFiniteParameters);
TSPLAT_DEFINE_ERROR(ContractViolation);
TSPLAT_DEFINE_ERROR(EmptyMask);
TSPLAT_DEFINE_ERROR(DegenerateStatistics);
TSPLAT_DEFINE_ERROR(NoValidWindow);
TSPLAT_DEFINE_ERROR(VersionMismatch);
TSPLAT_DEFINE_ERROR(TruncatedPayload);
TSPLAT_DEFINE_ERROR(DirectoryMismatch);
TSPLAT_DEFINE_ERROR(MalformedCheckpoint);
TSPLAT_DEFINE_ERROR(MissingFile);
TSPLAT_DEFINE_ERROR(DimensionMismatch);
TSPLAT_DEFINE_ERROR(MalformedManifest);
TSPLAT_DEFINE_ERROR(ImageDecodeError);
TSPLAT_DEFINE_ERROR(IoError);
TSPLAT_DEFINE_ERROR(EmptyCloud);
TSPLAT_DEFINE_ERROR(PopulationError);
TSPLAT_DEFINE_ERROR(Divergence);
TSPLAT_DEFINE_ERROR(ConfigError);
TSPLAT_DEFINE_ERROR(RenderError);

#undef TSPLAT_DEFINE_ERROR

} // namespace tsplat
