#pragma once

// Order-3 tensors, bilinear layers, column-major vectorization and the
// polynomial-to-MLP constructions used by the compilers.

#include "common.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <random>

namespace a2a {

// Dense tensor stored with the last mode varying fastest.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(Index d1, Index d2, Index d3) : dims_{d1, d2, d3}, data_(static_cast<std::size_t>(d1 * d2 * d3), 0.0) {
    if (d1 < 0 || d2 < 0 || d3 < 0) throw DimensionError("negative tensor dimension");
  }

  Index dim(int mode) const { return dims_[static_cast<std::size_t>(mode)]; }
  std::size_t size() const { return data_.size(); }

  double& operator()(Index i, Index j, Index k) { return data_[offset(i, j, k)]; }
  double operator()(Index i, Index j, Index k) const { return data_[offset(i, j, k)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const Tensor3& a, const Tensor3& b) { return a.dims_ == b.dims_ && a.data_ == b.data_; }

 private:
  std::size_t offset(Index i, Index j, Index k) const {
    return static_cast<std::size_t>((i * dims_[1] + j) * dims_[2] + k);
  }
  std::array<Index, 3> dims_{0, 0, 0};
  std::vector<double> data_;
};

// Sums the chosen mode (1, 2 or 3) against v; the remaining modes keep their
// relative order as matrix rows and columns.
inline Matrix mode_contract(const Tensor3& t, const Vector& v, int mode) {
  if (mode < 1 || mode > 3) throw ArgumentError("mode must be 1, 2 or 3");
  require_dims(v.size() == t.dim(mode - 1), "mode_contract: vector length does not match the tensor mode");
  const Index d1 = t.dim(0), d2 = t.dim(1), d3 = t.dim(2);
  Matrix out;
  switch (mode) {
    case 1:
      out = Matrix::Zero(d2, d3);
      for (Index i = 0; i < d1; ++i)
        for (Index j = 0; j < d2; ++j)
          for (Index k = 0; k < d3; ++k) out(j, k) += t(i, j, k) * v(i);
      break;
    case 2:
      out = Matrix::Zero(d1, d3);
      for (Index i = 0; i < d1; ++i)
        for (Index j = 0; j < d2; ++j)
          for (Index k = 0; k < d3; ++k) out(i, k) += t(i, j, k) * v(j);
      break;
    default:
      out = Matrix::Zero(d1, d2);
      for (Index i = 0; i < d1; ++i)
        for (Index j = 0; j < d2; ++j)
          for (Index k = 0; k < d3; ++k) out(i, j) += t(i, j, k) * v(k);
      break;
  }
  return out;
}

// out[i] = Σ_{j,k} t[i,j,k] left[j] right[k]: the tree-automaton combination
// (modes 2 and 3 against the children, result on mode 1).
inline Vector contract_children(const Tensor3& t, const Vector& left, const Vector& right) {
  require_dims(left.size() == t.dim(1) && right.size() == t.dim(2),
               "child vectors do not match the tensor dimensions");
  Vector out = Vector::Zero(t.dim(0));
  for (Index i = 0; i < t.dim(0); ++i) {
    double acc = 0.0;
    for (Index j = 0; j < t.dim(1); ++j) {
      if (left(j) == 0.0) continue;
      double inner = 0.0;
      for (Index k = 0; k < t.dim(2); ++k) inner += t(i, j, k) * right(k);
      acc += left(j) * inner;
    }
    out(i) = acc;
  }
  return out;
}

// Inputs on modes 1 and 2, output on mode 3.
struct BilinearLayer {
  Tensor3 tensor;
  Vector bias;

  Index left_dim() const { return tensor.dim(0); }
  Index right_dim() const { return tensor.dim(1); }
  Index out_dim() const { return tensor.dim(2); }

  void validate() const {
    require_dims(bias.size() == tensor.dim(2), "bilinear bias length must equal the output mode");
  }
};

inline BilinearLayer make_bilinear(Tensor3 t) {
  Vector b = Vector::Zero(t.dim(2));
  return BilinearLayer{std::move(t), std::move(b)};
}

inline Vector bilinear_apply(const BilinearLayer& layer, const Vector& x1, const Vector& x2) {
  layer.validate();
  require_dims(x1.size() == layer.left_dim() && x2.size() == layer.right_dim(),
               "bilinear_apply: input lengths do not match the tensor");
  const Tensor3& t = layer.tensor;
  const Index d3 = t.dim(2);
  Vector out = layer.bias;
  const double* data = t.data().data();
  for (Index i = 0; i < t.dim(0); ++i) {
    if (x1(i) == 0.0) continue;
    for (Index j = 0; j < t.dim(1); ++j) {
      const double w = x1(i) * x2(j);
      if (w == 0.0) continue;
      const double* slice = data + (i * t.dim(1) + j) * d3;
      for (Index k = 0; k < d3; ++k) out(k) += w * slice[k];
    }
  }
  return out;
}

inline Vector vec(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix unvec(const Vector& v, Index n) {
  require_dims(n >= 1 && v.size() == n * n, "unvec: vector length is not n squared");
  return Eigen::Map<const Matrix>(v.data(), n, n);
}

// Bilinear map (vec A, vec B) -> vec(AB) with column-major vec, so entry
// (r, c) of an n x n matrix lives at index r + c·n.
inline Tensor3 matmul_tensor(Index n) {
  if (n < 1) throw ArgumentError("matmul_tensor needs n >= 1");
  const Index n2 = n * n;
  Tensor3 t(n2, n2, n2);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < n; ++k) t(i + k * n, k + j * n, i + j * n) = 1.0;
  return t;
}

// ---------------------------------------------------------------------------
// Polynomial maps and their exact square-activation realization
// ---------------------------------------------------------------------------

// A sparse polynomial map R^inputs -> R^outputs. Each term adds
// coefficient · Π x[variables] to one output; an empty variable list is a
// constant.
struct PolynomialMap {
  struct Term {
    Index output;
    double coefficient;
    std::vector<Index> variables;
  };

  Index inputs = 0;
  Index outputs = 0;
  std::vector<Term> terms;

  void add(Index output, double coefficient, std::vector<Index> variables = {}) {
    terms.push_back({output, coefficient, std::move(variables)});
  }

  int degree() const {
    int d = 0;
    for (const auto& t : terms) d = std::max(d, static_cast<int>(t.variables.size()));
    return d;
  }

  Vector evaluate(const Vector& x) const {
    require_dims(x.size() == inputs, "polynomial input has the wrong length");
    Vector y = Vector::Zero(outputs);
    for (const auto& t : terms) {
      double v = t.coefficient;
      for (Index var : t.variables) v *= x(var);
      y(t.output) += v;
    }
    return y;
  }
};

// Bilinear map written as a polynomial on the concatenation (x1 ‖ x2).
inline PolynomialMap bilinear_polynomial(const BilinearLayer& layer) {
  PolynomialMap p;
  p.inputs = layer.left_dim() + layer.right_dim();
  p.outputs = layer.out_dim();
  for (Index i = 0; i < layer.left_dim(); ++i)
    for (Index j = 0; j < layer.right_dim(); ++j)
      for (Index k = 0; k < layer.out_dim(); ++k)
        if (layer.tensor(i, j, k) != 0.0) p.add(k, layer.tensor(i, j, k), {i, layer.left_dim() + j});
  for (Index k = 0; k < layer.out_dim(); ++k)
    if (layer.bias(k) != 0.0) p.add(k, layer.bias(k));
  return p;
}

enum class Activation { square, relu, tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::square: return "square";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "square") return Activation::square;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ArgumentError("unknown activation '" + s + "'");
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::square: return x * x;
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

// Row-vector convention: y = act(x·w1 + b1)·w2 + b2.
struct TwoLayerMlp {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Activation activation = Activation::square;

  Index width() const { return w1.cols(); }

  Vector apply(const Vector& x) const {
    require_dims(x.size() == w1.rows(), "MLP input has the wrong length");
    Vector h = (w1.transpose() * x + b1).unaryExpr([a = activation](double v) { return activate(a, v); });
    return w2.transpose() * h + b2;
  }
};

// Polarization construction: hidden units x_a², (x_a + x_b)² for a < b,
// (x_a + 1)² and the constant 1, giving width binom(m+2, 2) for m inputs.
inline TwoLayerMlp quadratic_mlp_fit(const PolynomialMap& target) {
  if (target.degree() > 2) throw ArgumentError("quadratic_mlp_fit: target degree exceeds 2");
  const Index m = target.inputs;
  const Index pairs = m * (m - 1) / 2;
  const Index width = m + pairs + m + 1;
  const Index sq0 = 0, pair0 = m, lin0 = m + pairs, const_unit = width - 1;

  TwoLayerMlp mlp;
  mlp.activation = Activation::square;
  mlp.w1 = Matrix::Zero(m, width);
  mlp.b1 = Vector::Zero(width);
  mlp.w2 = Matrix::Zero(width, target.outputs);
  mlp.b2 = Vector::Zero(target.outputs);

  auto pair_index = [m, pair0](Index a, Index b) {
    // Row-major enumeration of a < b.
    return pair0 + a * m - a * (a + 1) / 2 + (b - a - 1);
  };
  for (Index a = 0; a < m; ++a) {
    mlp.w1(a, sq0 + a) = 1.0;
    mlp.w1(a, lin0 + a) = 1.0;
    mlp.b1(lin0 + a) = 1.0;
    for (Index b = a + 1; b < m; ++b) {
      mlp.w1(a, pair_index(a, b)) = 1.0;
      mlp.w1(b, pair_index(a, b)) = 1.0;
    }
  }
  mlp.b1(const_unit) = 1.0;

  for (const auto& term : target.terms) {
    const Index k = term.output;
    const double c = term.coefficient;
    if (term.variables.empty()) {
      mlp.w2(const_unit, k) += c;
    } else if (term.variables.size() == 1) {
      // x = ((x+1)² − x² − 1) / 2
      const Index a = term.variables[0];
      mlp.w2(lin0 + a, k) += c / 2;
      mlp.w2(sq0 + a, k) -= c / 2;
      mlp.w2(const_unit, k) -= c / 2;
    } else {
      Index a = term.variables[0], b = term.variables[1];
      if (a == b) {
        mlp.w2(sq0 + a, k) += c;
      } else {
        // x_a x_b = ((x_a + x_b)² − x_a² − x_b²) / 2
        if (a > b) std::swap(a, b);
        mlp.w2(pair_index(a, b), k) += c / 2;
        mlp.w2(sq0 + a, k) -= c / 2;
        mlp.w2(sq0 + b, k) -= c / 2;
      }
    }
  }
  return mlp;
}

inline Index quadratic_mlp_width(Index inputs) { return (inputs + 2) * (inputs + 1) / 2; }

// Experimental alternative: random first layer with a generic activation and
// a least-squares second layer fitted on samples from the unit cube.
inline TwoLayerMlp least_squares_mlp_fit(const PolynomialMap& target, Activation activation, Index width,
                                         Index samples, std::uint64_t seed, double input_scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-input_scale, input_scale);
  TwoLayerMlp mlp;
  mlp.activation = activation;
  mlp.w1 = Matrix(target.inputs, width);
  mlp.b1 = Vector(width);
  for (Index i = 0; i < mlp.w1.size(); ++i) mlp.w1.data()[i] = normal(rng);
  for (Index i = 0; i < width; ++i) mlp.b1(i) = normal(rng);
  Matrix features(samples, width + 1);
  Matrix targets(samples, target.outputs);
  for (Index s = 0; s < samples; ++s) {
    Vector x(target.inputs);
    for (Index i = 0; i < x.size(); ++i) x(i) = unit(rng);
    Vector h = (mlp.w1.transpose() * x + mlp.b1).unaryExpr([activation](double v) { return activate(activation, v); });
    features.row(s).head(width) = h.transpose();
    features(s, width) = 1.0;
    targets.row(s) = target.evaluate(x).transpose();
  }
  Matrix solution = features.completeOrthogonalDecomposition().solve(targets);
  mlp.w2 = solution.topRows(width);
  mlp.b2 = solution.row(width).transpose();
  return mlp;
}

}  // namespace a2a
