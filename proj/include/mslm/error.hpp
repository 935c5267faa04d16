#pragma once

#include <stdexcept>
#include <string>

namespace mslm {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class TapeReuseError : public Error { using Error::Error; };
class OracleError : public Error { using Error::Error; };
class VocabularyError : public Error { using Error::Error; };
class IngestionError : public Error { using Error::Error; };
class BoundsError : public Error { using Error::Error; };
class OrderingError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class CompatibilityError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NamingError : public Error { using Error::Error; };
class UsageError : public Error { using Error::Error; };

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t window)
        : Error(what), window_(window) {}
    std::size_t window() const noexcept { return window_; }

private:
    std::size_t window_;
};

}  // namespace mslm
