#pragma once

#include <stdexcept>
#include <string>

namespace mspad {

/// Base class for every domain failure raised by the toolkit. The CLI maps
/// these to exit status 1; anything else is a bug.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed annotation document (bad XML, unreadable number).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, std::string element)
      : Error(what), line_(line), element_(std::move(element)) {}

  int line() const { return line_; }
  const std::string& element() const { return element_; }

 private:
  int line_;
  std::string element_;
};

/// Well-formed XML that lacks a required element (e.g. <size>).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// An object entry whose box violates x_min <= x_max / y_min <= y_max.
class AnnotationError : public Error {
 public:
  AnnotationError(const std::string& what, std::size_t object_index)
      : Error(what), object_index_(object_index) {}

  std::size_t object_index() const { return object_index_; }

 private:
  std::size_t object_index_;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class TilingError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class PipelineError : public Error {
 public:
  using Error::Error;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

}  // namespace mspad
