#pragma once

#include <stdexcept>
#include <string>

namespace cmc {

/// Base of every error raised by the library. `kind()` names the failure
/// class so the CLI can print a one-line diagnosis.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define CMC_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(#Name, what) {}      \
    };

CMC_DEFINE_ERROR(InvalidArgument)
CMC_DEFINE_ERROR(InvalidConfig)
CMC_DEFINE_ERROR(NotFound)
CMC_DEFINE_ERROR(MalformedScan)
CMC_DEFINE_ERROR(StratificationError)
CMC_DEFINE_ERROR(ProtocolError)
CMC_DEFINE_ERROR(CheckpointError)
CMC_DEFINE_ERROR(TrainingDiverged)
CMC_DEFINE_ERROR(UndefinedMetric)
CMC_DEFINE_ERROR(Refused)

#undef CMC_DEFINE_ERROR

}  // namespace cmc
