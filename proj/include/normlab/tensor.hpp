#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace normlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// A default-constructed tensor is an empty placeholder (rank 0, no data);
/// every tensor built through a shape has strictly positive extents.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows/cols of a rank-2 tensor. A rank-1 tensor reads as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  bool any_nan() const;

  double norm() const;
  double sum() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Named, ordered collection of parameter tensors.
///
/// Group order is insertion order and never changes; flatten() concatenates
/// the groups in that order.
class ParameterSet {
 public:
  ParameterSet() = default;

  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::size_t group_count() const { return groups_.size(); }
  std::size_t total_dim() const;
  const std::vector<std::pair<std::string, Tensor>>& groups() const { return groups_; }
  std::vector<std::string> names() const;

  std::vector<double> flatten() const;
  /// Same group layout as *this, filled from `flat`.
  ParameterSet unflatten(std::span<const double> flat) const;

  ParameterSet zeros_like() const;
  ParameterSet scaled(double c) const;
  ParameterSet plus(const ParameterSet& other) const;
  ParameterSet minus(const ParameterSet& other) const;
  /// this + alpha * other
  ParameterSet axpy(double alpha, const ParameterSet& other) const;

  double norm() const;
  double dot(const ParameterSet& other) const;

  /// Subset of groups whose name satisfies `keep`, same relative order.
  template <typename Pred>
  ParameterSet filtered(Pred keep) const {
    ParameterSet out;
    for (const auto& [name, value] : groups_) {
      if (keep(name, value)) out.add(name, value);
    }
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.groups_ == b.groups_;
  }

 private:
  void check_conformant(const ParameterSet& other) const;

  std::vector<std::pair<std::string, Tensor>> groups_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Cosine of the angle between two vectors; 0 when either is zero.
double cosine(std::span<const double> a, std::span<const double> b);
double cosine(const ParameterSet& a, const ParameterSet& b);

}  // namespace normlab
