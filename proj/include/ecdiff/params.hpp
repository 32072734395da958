#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "ecdiff/matrix.hpp"

namespace ecdiff {

enum class Precision { F32, F64 };

inline const char* to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }
inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw std::invalid_argument("unknown precision '" + s + "' (expected f32 or f64)");
}
template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::F32 : Precision::F64;
}

/// A learnable array paired with its same-shaped gradient buffer.
template <typename T>
struct ParamArray {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Ordered, named collection of learnable arrays. Insertion order is the
/// canonical order used by checkpoints and the optimizer.
template <typename T>
class ModelParams {
 public:
  ParamArray<T>& add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, arrays_.size());
    arrays_.push_back({name, Matrix<T>(rows, cols), Matrix<T>(rows, cols)});
    return arrays_.back();
  }

  ParamArray<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return arrays_[it->second];
  }
  const ParamArray<T>& at(const std::string& name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<ParamArray<T>>& arrays() { return arrays_; }
  const std::vector<ParamArray<T>>& arrays() const { return arrays_; }
  std::size_t size() const { return arrays_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& a : arrays_) a.grad.fill(T(0));
  }

  /// Name of the first array holding a non-finite value, or empty.
  std::string first_nonfinite() const {
    for (const auto& a : arrays_)
      if (!a.value.all_finite()) return a.name;
    return {};
  }

 private:
  std::vector<ParamArray<T>> arrays_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ecdiff
