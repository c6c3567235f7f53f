#include <cmath>
#include <limits>
#include <sstream>

#include "normlab/error.hpp"
#include "normlab/functional.hpp"
#include "normlab/graph.hpp"
#include "normlab/simd.hpp"

namespace normlab {

namespace {

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape(), 0.0);
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape(), 0.0);
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

using KernelFn = void (*)(const double*, const double*, double*, std::size_t);

Tensor kernel_binary(const Tensor& a, const Tensor& b, KernelFn fn) {
  Tensor out(a.shape(), 0.0);
  fn(a.data().data(), b.data().data(), out.data().data(), a.size());
  return out;
}

double checked_label(double y, const Graph& g, NodeId id) {
  if (y != 0.0 && y != 1.0) {
    throw ContractError(g.describe(id) + ": label must be 0 or 1, got " + std::to_string(y));
  }
  return y;
}

Tensor compute(const Graph& g, NodeId id, const Evaluation& ev, const Inputs& inputs,
               const ParameterSet& params) {
  const Node& n = g.node(id);
  const auto& k = simd::active();
  auto in = [&](std::size_t slot) -> const Tensor& { return ev[n.inputs[slot]]; };

  switch (n.op) {
    case Op::input: {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw ContractError("unbound input '" + n.name + "'");
      if (it->second.shape() != n.shape) {
        throw StructuralError("input '" + n.name + "' has shape " + shape_string(it->second.shape()) +
                              ", graph expects " + shape_string(n.shape));
      }
      return it->second;
    }
    case Op::param: {
      if (!params.contains(n.name)) throw ContractError("unbound parameter '" + n.name + "'");
      const Tensor& t = params.get(n.name);
      if (t.shape() != n.shape) {
        throw StructuralError("parameter '" + n.name + "' has shape " + shape_string(t.shape()) +
                              ", graph expects " + shape_string(n.shape));
      }
      return t;
    }
    case Op::constant:
      return *n.value;
    case Op::add:
      return kernel_binary(in(0), in(1), k.add);
    case Op::sub:
      return kernel_binary(in(0), in(1), k.sub);
    case Op::mul:
      return kernel_binary(in(0), in(1), k.mul);
    case Op::div:
      return map_binary(in(0), in(1), [](double a, double b) { return a / b; });
    case Op::neg:
      return map_unary(in(0), [](double a) { return -a; });
    case Op::scale: {
      Tensor out(n.shape, 0.0);
      k.scale(in(0).data().data(), n.scalar, out.data().data(), out.size());
      return out;
    }
    case Op::add_scalar: {
      const double s = n.scalar;
      return map_unary(in(0), [s](double a) { return a + s; });
    }
    case Op::exp:
      return map_unary(in(0), [](double a) { return std::exp(a); });
    case Op::log:
      return map_unary(in(0), [](double a) { return std::log(a); });
    case Op::sqrt:
      return map_unary(in(0), [](double a) { return std::sqrt(a); });
    case Op::relu:
      return activate(Activation::relu, in(0));
    case Op::step:
      return map_unary(in(0), [](double a) { return a > 0.0 ? 1.0 : 0.0; });
    case Op::sigmoid:
      return activate(Activation::sigmoid, in(0));
    case Op::tanh:
      return activate(Activation::tanh, in(0));
    case Op::softplus:
      return map_unary(in(0), [](double a) { return softplus(a); });
    case Op::softmax:
      try {
        return activate(Activation::softmax, in(0), 1);
      } catch (const NumericError& e) {
        throw NumericError(g.describe(id) + ": " + e.what());
      }
    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor out(n.shape, 0.0);
      k.matmul(a.data().data(), b.data().data(), out.data().data(), a.shape()[0], a.shape()[1],
               b.shape()[1]);
      return out;
    }
    case Op::transpose: {
      const Tensor& a = in(0);
      const std::size_t r = a.shape()[0], c = a.shape()[1];
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
      return out;
    }
    case Op::sum_all:
      return Tensor::scalar(in(0).sum());
    case Op::row_sum: {
      const Tensor& a = in(0);
      const std::size_t r = a.shape()[0], c = a.shape()[1];
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < r; ++i) out[i] = k.sum(a.data().data() + i * c, c);
      return out;
    }
    case Op::col_sum: {
      const Tensor& a = in(0);
      const std::size_t r = a.shape()[0], c = a.shape()[1];
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.at(i, j);
      return out;
    }
    case Op::broadcast_rows: {
      const Tensor& a = in(0);
      const std::size_t r = n.shape[0], c = n.shape[1];
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = a[j];
      return out;
    }
    case Op::broadcast_cols: {
      const Tensor& a = in(0);
      const std::size_t r = n.shape[0], c = n.shape[1];
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = a[i];
      return out;
    }
    case Op::broadcast_scalar:
      return Tensor(n.shape, in(0)[0]);
    case Op::concat_cols: {
      Tensor out(n.shape, 0.0);
      const std::size_t rows = n.shape[0], cols = n.shape[1];
      std::size_t offset = 0;
      for (std::size_t s = 0; s < n.inputs.size(); ++s) {
        const Tensor& p = in(s);
        const std::size_t pc = p.shape()[1];
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < pc; ++j) out[i * cols + offset + j] = p.at(i, j);
        offset += pc;
      }
      return out;
    }
    case Op::slice_cols: {
      const Tensor& a = in(0);
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < n.shape[0]; ++i)
        for (std::size_t j = n.begin; j < n.end; ++j) out.at(i, j - n.begin) = a.at(i, j);
      return out;
    }
    case Op::pad_cols: {
      const Tensor& a = in(0);
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < n.shape[0]; ++i)
        for (std::size_t j = n.begin; j < n.end; ++j) out.at(i, j) = a.at(i, j - n.begin);
      return out;
    }
    case Op::reshape:
      return in(0).reshaped(n.shape);
    case Op::mask_fill: {
      const double fill = n.scalar;
      return map_binary(in(0), *n.value, [fill](double a, double m) { return m == 0.0 ? fill : a; });
    }
    case Op::row_norm: {
      const Tensor& a = in(0);
      const std::size_t r = a.shape()[0], c = a.shape()[1];
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        const double v = std::sqrt(k.sum_squares(a.data().data() + i * c, c));
        if (!(v > n.scalar)) {
          std::ostringstream os;
          os << g.describe(id) << ": row " << i << " has norm " << v << " (tolerance " << n.scalar << ")";
          throw DegenerateError(os.str());
        }
        out[i] = v;
      }
      return out;
    }
    case Op::bce:
      return map_binary(in(0), in(1), [&](double f, double y) {
        return softplus(f) - checked_label(y, g, id) * f;
      });
    case Op::bce_residual:
      return map_binary(in(0), in(1), [&](double f, double y) {
        return binary_ce_residual(f, checked_label(y, g, id));
      });
    case Op::softmax_ce: {
      const Tensor& f = in(0);
      const Tensor& y = in(1);
      const std::size_t r = f.shape()[0], c = f.shape()[1];
      // Per-example loss; label validity is checked by the residual kernel.
      (void)softmax_ce_residuals(f, y);
      Tensor out(n.shape, 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) top = std::max(top, f.at(i, j));
        double s = 0.0, picked = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          s += std::exp(f.at(i, j) - top);
          if (y.at(i, j) == 1.0) picked = f.at(i, j);
        }
        out[i] = top + std::log(s) - picked;
      }
      return out;
    }
    case Op::softmax_ce_residual:
      return softmax_ce_residuals(in(0), in(1));
  }
  throw StructuralError(g.describe(id) + ": unknown op");
}

}  // namespace

Evaluation evaluate(const Graph& graph, std::span<const NodeId> outputs, const Inputs& inputs,
                    const ParameterSet& params) {
  const std::size_t total = graph.size();
  std::vector<char> needed(total, 0);
  for (NodeId o : outputs) {
    if (o >= total) throw StructuralError("evaluate: unknown node " + std::to_string(o));
    needed[o] = 1;
  }
  for (NodeId i = total; i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId in : graph.node(i).inputs) needed[in] = 1;
  }

  Evaluation ev(total);
  for (NodeId i = 0; i < total; ++i) {
    if (!needed[i]) continue;
    Tensor value = compute(graph, i, ev, inputs, params);
    if (value.any_nan()) throw NumericError(graph.describe(i) + " produced NaN");
    ev.slot(i) = std::move(value);
  }
  return ev;
}

Tensor eval_graph(const Graph& graph, NodeId output, const Inputs& inputs, const ParameterSet& params) {
  const NodeId outs[] = {output};
  Evaluation ev = evaluate(graph, outs, inputs, params);
  return std::move(ev.slot(output));
}

}  // namespace normlab
