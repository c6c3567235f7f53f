#include "normlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "normlab/error.hpp"
#include "normlab/simd.hpp"

namespace normlab {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw StructuralError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw StructuralError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw StructuralError("tensor shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw StructuralError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() != 2) throw StructuralError("rows() on tensor of shape " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() != 2) throw StructuralError("cols() on tensor of shape " + shape_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw StructuralError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::any_nan() const {
  return std::any_of(data_.begin(), data_.end(), [](double v) { return std::isnan(v); });
}

double Tensor::norm() const {
  return std::sqrt(simd::active().sum_squares(data_.data(), data_.size()));
}

double Tensor::sum() const { return simd::active().sum(data_.data(), data_.size()); }

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw StructuralError("dot of tensors with different sizes");
  return simd::active().dot(a.data().data(), b.data().data(), a.size());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw StructuralError("max_abs_diff of " + shape_string(a.shape()) + " and " +
                          shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// ---------------------------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter group '" + name + "'");
  if (value.empty()) throw ContractError("parameter group '" + name + "' is empty");
  index_.emplace(name, groups_.size());
  groups_.emplace_back(std::move(name), std::move(value));
}

bool ParameterSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const Tensor& ParameterSet::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter group '" + std::string(name) + "'");
  return groups_[it->second].second;
}

Tensor& ParameterSet::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ParameterSet::total_dim() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.second.size();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(groups_.size());
  for (const auto& g : groups_) out.push_back(g.first);
  return out;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_dim());
  for (const auto& g : groups_) flat.insert(flat.end(), g.second.data().begin(), g.second.data().end());
  return flat;
}

ParameterSet ParameterSet::unflatten(std::span<const double> flat) const {
  if (flat.size() != total_dim()) {
    throw StructuralError("unflatten: expected " + std::to_string(total_dim()) + " values, got " +
                          std::to_string(flat.size()));
  }
  ParameterSet out;
  std::size_t offset = 0;
  for (const auto& [name, value] : groups_) {
    std::vector<double> chunk(flat.begin() + offset, flat.begin() + offset + value.size());
    offset += value.size();
    out.add(name, Tensor(value.shape(), std::move(chunk)));
  }
  return out;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, value] : groups_) out.add(name, Tensor(value.shape(), 0.0));
  return out;
}

ParameterSet ParameterSet::scaled(double c) const {
  const auto& k = simd::active();
  ParameterSet out;
  for (const auto& [name, value] : groups_) {
    Tensor t(value.shape(), 0.0);
    k.scale(value.data().data(), c, t.data().data(), value.size());
    out.add(name, std::move(t));
  }
  return out;
}

void ParameterSet::check_conformant(const ParameterSet& other) const {
  if (other.groups_.size() != groups_.size()) {
    throw StructuralError("parameter sets have different group counts");
  }
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].first != other.groups_[i].first ||
        groups_[i].second.shape() != other.groups_[i].second.shape()) {
      throw StructuralError("parameter group mismatch at '" + groups_[i].first + "'");
    }
  }
}

ParameterSet ParameterSet::plus(const ParameterSet& other) const { return axpy(1.0, other); }

ParameterSet ParameterSet::minus(const ParameterSet& other) const {
  check_conformant(other);
  const auto& k = simd::active();
  ParameterSet out;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const Tensor& a = groups_[i].second;
    Tensor t(a.shape(), 0.0);
    k.sub(a.data().data(), other.groups_[i].second.data().data(), t.data().data(), a.size());
    out.add(groups_[i].first, std::move(t));
  }
  return out;
}

ParameterSet ParameterSet::axpy(double alpha, const ParameterSet& other) const {
  check_conformant(other);
  const auto& k = simd::active();
  ParameterSet out = *this;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    Tensor& t = out.groups_[i].second;
    k.axpy(alpha, other.groups_[i].second.data().data(), t.data().data(), t.size());
  }
  return out;
}

double ParameterSet::norm() const {
  const auto& k = simd::active();
  double acc = 0.0;
  for (const auto& g : groups_) acc += k.sum_squares(g.second.data().data(), g.second.size());
  return std::sqrt(acc);
}

double ParameterSet::dot(const ParameterSet& other) const {
  check_conformant(other);
  const auto& k = simd::active();
  double acc = 0.0;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    acc += k.dot(groups_[i].second.data().data(), other.groups_[i].second.data().data(),
                 groups_[i].second.size());
  }
  return acc;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("cosine of vectors with different lengths");
  const auto& k = simd::active();
  const double na = std::sqrt(k.sum_squares(a.data(), a.size()));
  const double nb = std::sqrt(k.sum_squares(b.data(), b.size()));
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = k.dot(a.data(), b.data(), a.size()) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

double cosine(const ParameterSet& a, const ParameterSet& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace normlab
