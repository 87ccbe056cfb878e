#pragma once

#include <stdexcept>
#include <string>

namespace nestner {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by malformed or inconsistent input data (corpora, embedding
/// files, checkpoints). The CLI maps these to exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Errors caused by invalid configuration. The CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

#define NESTNER_DEFINE_ERROR(Name, Base) \
  class Name : public Base {             \
   public:                               \
    using Base::Base;                    \
  }

// numerics
NESTNER_DEFINE_ERROR(ShapeMismatch, Error);
NESTNER_DEFINE_ERROR(NonFinite, Error);
// layers
NESTNER_DEFINE_ERROR(DimMismatch, DataError);
NESTNER_DEFINE_ERROR(InvalidRate, ConfigError);
// model checkpoints
NESTNER_DEFINE_ERROR(VersionMismatch, DataError);
NESTNER_DEFINE_ERROR(CorruptFile, DataError);
NESTNER_DEFINE_ERROR(SpecMismatch, DataError);
// spancodec
NESTNER_DEFINE_ERROR(AmbiguousGold, DataError);
NESTNER_DEFINE_ERROR(SpanOutOfRange, DataError);
NESTNER_DEFINE_ERROR(EmptyCandidate, DataError);
// training
NESTNER_DEFINE_ERROR(IndexOutOfRange, Error);
NESTNER_DEFINE_ERROR(NonFiniteGradient, Error);
NESTNER_DEFINE_ERROR(EmptyCorpus, DataError);
NESTNER_DEFINE_ERROR(SentenceExceedsBudget, ConfigError);
// evaluation
NESTNER_DEFINE_ERROR(EmptyMap, Error);
// corpus io
NESTNER_DEFINE_ERROR(UnknownLabel, DataError);

#undef NESTNER_DEFINE_ERROR

/// Parse failure in a text input; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace nestner
