#include "addiff/params.hpp"

#include <cstring>
#include <stdexcept>

namespace addiff {

std::size_t ParamSet::add(const std::string& name, Matrix value) {
  if (contains(name)) throw std::invalid_argument("duplicate tensor name '" + name + "'");
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::size_t ParamSet::slot(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no tensor named '" + name + "'");
  return it->second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Matrix& m : tensors_) n += static_cast<std::size_t>(m.size());
  return n;
}

bool ParamSet::all_finite() const {
  for (const Matrix& m : tensors_) {
    if (!m.allFinite()) return false;
  }
  return true;
}

std::vector<Matrix> ParamSet::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(tensors_.size());
  for (const Matrix& m : tensors_) out.push_back(Matrix::Zero(m.rows(), m.cols()));
  return out;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.names_ != b.names_) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    const Matrix& x = a.tensors_[i];
    const Matrix& y = b.tensors_[i];
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    // bitwise comparison: NaN payloads and signed zeros count
    if (std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) != 0) return false;
  }
  return true;
}

}  // namespace addiff
