#pragma once
#include <stdexcept>
#include <string>

namespace dticp {

// Every failure raised by the library derives from Error. The category maps
// onto the CLI exit code (see exit_code()).
enum class ErrorKind {
    Validation,
    Domain,
    Config,
    DegenerateInput,
    InfeasibleSplit,
    Io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& w) : Error(ErrorKind::Domain, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& w) : Error(ErrorKind::DegenerateInput, w) {}
};
struct InfeasibleSplitError : Error {
    explicit InfeasibleSplitError(const std::string& w) : Error(ErrorKind::InfeasibleSplit, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};

// 0 ok, 2 validation, 3 infeasible split, 4 I/O.
inline int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InfeasibleSplit: return 3;
        case ErrorKind::Io: return 4;
        default: return 2;
    }
}

} // namespace dticp
