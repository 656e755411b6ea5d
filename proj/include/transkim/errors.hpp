#pragma once

#include <stdexcept>
#include <string>

namespace transkim {

// Shape disagreement at an operation boundary.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller violated an operation precondition (non-scalar backward root,
// batch size under the no-padding policy, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A softmax row whose entries are all masked out.
class DegenerateRowError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NumericFault : public std::runtime_error {
 public:
  NumericFault(const std::string& what, int layer)
      : std::runtime_error(what), layer_(layer) {}
  // 1-based encoder layer, 0 for the embedding, -1 when not layer-specific.
  int layer() const { return layer_; }

 private:
  int layer_;
};

class VocabError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace transkim
