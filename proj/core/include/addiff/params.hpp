#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "addiff/tensor.hpp"

namespace addiff {

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for serialization, optimizer state, and gradient vectors.
class ParamSet {
 public:
  std::size_t add(const std::string& name, Matrix value);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t slot(const std::string& name) const;

  Matrix& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix& operator[](std::size_t i) const { return tensors_[i]; }
  Matrix& at(const std::string& name) { return tensors_[slot(name)]; }
  const Matrix& at(const std::string& name) const { return tensors_[slot(name)]; }

  std::size_t scalar_count() const;
  bool all_finite() const;

  /// Zero tensors shaped like this set, in slot order.
  std::vector<Matrix> zeros_like() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace addiff
