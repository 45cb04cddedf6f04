#pragma once

#include <stdexcept>
#include <string>

namespace vtt {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map categories to stable exit codes.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
   public:
    using Error::Error;
};

class ParameterError : public Error {
   public:
    using Error::Error;
};

class DegenerateInputError : public Error {
   public:
    using Error::Error;
};

class ContractError : public Error {
   public:
    using Error::Error;
};

class VocabularyError : public Error {
   public:
    using Error::Error;
};

class DataError : public Error {
   public:
    using Error::Error;
};

class FormatError : public Error {
   public:
    using Error::Error;
};

class IntegrityError : public Error {
   public:
    using Error::Error;
};

class NumericError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class CompatibilityError : public Error {
   public:
    using Error::Error;
};

}  // namespace vtt
