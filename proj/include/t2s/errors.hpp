#pragma once

#include <stdexcept>
#include <string>

namespace t2s {

// All library failures derive from Error so callers (the CLI in particular)
// can map them onto exit codes without enumerating every kind.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class DurationError : public Error { public: using Error::Error; };
class CodebookError : public Error { public: using Error::Error; };
class EmptyInputError : public Error { public: using Error::Error; };
class CapacityError : public Error { public: using Error::Error; };
class DegeneracyError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class DivergenceError : public Error { public: using Error::Error; };

}  // namespace t2s
