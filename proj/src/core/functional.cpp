#include "normlab/functional.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "normlab/error.hpp"

namespace normlab {

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

namespace {

// Softmax over `count` entries spaced `stride` apart.
void softmax_strided(const double* in, double* out, std::size_t count, std::size_t stride) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) top = std::max(top, in[i * stride]);
  if (top == -std::numeric_limits<double>::infinity()) {
    throw NumericError("softmax over a fully masked slice");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double e = std::exp(in[i * stride] - top);
    out[i * stride] = e;
    total += e;
  }
  for (std::size_t i = 0; i < count; ++i) out[i * stride] /= total;
}

}  // namespace

Tensor softmax_rows(const Tensor& x) { return activate(Activation::softmax, x, x.rank() - 1); }

Tensor activate(Activation kind, const Tensor& x, std::optional<std::size_t> axis) {
  Tensor out(x.shape(), 0.0);
  auto in = x.data();
  auto dst = out.data();
  switch (kind) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) dst[i] = sigmoid(in[i]);
      return out;
    case Activation::tanh:
      for (std::size_t i = 0; i < in.size(); ++i) dst[i] = std::tanh(in[i]);
      return out;
    case Activation::relu:
      for (std::size_t i = 0; i < in.size(); ++i) dst[i] = in[i] > 0.0 ? in[i] : 0.0;
      return out;
    case Activation::softmax:
      break;
  }
  if (!axis) throw StructuralError("softmax requires an axis");
  if (*axis >= x.rank()) {
    throw StructuralError("softmax axis " + std::to_string(*axis) + " out of range for shape " +
                          shape_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < *axis; ++d) outer *= s[d];
  for (std::size_t d = *axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t count = s[*axis];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * count * inner + i;
      softmax_strided(in.data() + base, dst.data() + base, count, inner);
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Tensor out(x.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += (row[c] - mean) * (row[c] - mean);
    const double norm = std::sqrt(sq);
    if (!(norm > kLayerNormTolerance)) {
      std::ostringstream os;
      os << "layer_norm: centred row " << r << " has norm " << norm;
      throw DegenerateError(os.str());
    }
    double* dst = out.data().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] = (row[c] - mean) / norm;
  }
  return out;
}

double binary_ce_residual(double f, double y) {
  if (y == 1.0) return -sigmoid(-f);
  if (y == 0.0) return sigmoid(f);
  throw ContractError("binary cross-entropy label must be 0 or 1, got " + std::to_string(y));
}

namespace {

std::size_t one_hot_index(const Tensor& labels, std::size_t row) {
  const std::size_t v = labels.cols();
  std::size_t hot = v;
  for (std::size_t c = 0; c < v; ++c) {
    const double y = labels.at(row, c);
    if (y == 1.0) {
      if (hot != v) throw ContractError("label row " + std::to_string(row) + " has several ones");
      hot = c;
    } else if (y != 0.0) {
      throw ContractError("label row " + std::to_string(row) + " is not one-hot");
    }
  }
  if (hot == v) throw ContractError("label row " + std::to_string(row) + " has no class set");
  return hot;
}

void check_softmax_ce_shapes(const Tensor& logits, const Tensor& labels) {
  if (logits.rank() != 2 || labels.shape() != logits.shape()) {
    throw StructuralError("softmax_ce expects [batch, classes] logits and matching labels, got " +
                          shape_string(logits.shape()) + " and " + shape_string(labels.shape()));
  }
}

}  // namespace

Tensor softmax_ce_residuals(const Tensor& logits, const Tensor& labels) {
  check_softmax_ce_shapes(logits, labels);
  Tensor p = softmax_rows(logits);
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const std::size_t hot = one_hot_index(labels, r);
    double off = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      if (c != hot) off += p.at(r, c);
    }
    p.at(r, hot) = -off;
  }
  return p;
}

double loss(Loss kind, const Tensor& logits, const Tensor& labels) {
  if (kind == Loss::binary_ce) {
    if (logits.size() != labels.size()) throw StructuralError("binary_ce: logits/labels size mismatch");
    if (logits.size() == 0) throw ContractError("binary_ce: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double y = labels[i];
      if (y != 0.0 && y != 1.0) {
        throw ContractError("binary cross-entropy label must be 0 or 1, got " + std::to_string(y));
      }
      total += softplus(logits[i]) - y * logits[i];
    }
    return total / static_cast<double>(logits.size());
  }
  check_softmax_ce_shapes(logits, labels);
  const std::size_t v = logits.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const std::size_t hot = one_hot_index(labels, r);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < v; ++c) top = std::max(top, logits.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < v; ++c) s += std::exp(logits.at(r, c) - top);
    total += top + std::log(s) - logits.at(r, hot);
  }
  return total / static_cast<double>(logits.rows());
}

Tensor loss_gradient(Loss kind, const Tensor& logits, const Tensor& labels) {
  if (kind == Loss::binary_ce) {
    if (logits.size() != labels.size()) throw StructuralError("binary_ce: logits/labels size mismatch");
    if (logits.size() == 0) throw ContractError("binary_ce: empty batch");
    Tensor g(logits.shape(), 0.0);
    const double n = static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) g[i] = binary_ce_residual(logits[i], labels[i]) / n;
    return g;
  }
  Tensor g = softmax_ce_residuals(logits, labels);
  const double n = static_cast<double>(logits.rows());
  for (auto& v : g.data()) v /= n;
  return g;
}

}  // namespace normlab
