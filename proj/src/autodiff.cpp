#include "prunegcrn/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "prunegcrn/errors.hpp"

namespace prunegcrn::ad {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using StridedMapR = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
using CStridedMapR = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;

[[noreturn]] void dim_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const std::string& op, const Var& a, std::size_t rank) {
  if (a->shape.size() != rank) {
    throw DimensionError(op + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a->shape));
  }
}

/// True when `b` equals a trailing suffix of `a`.
bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

template <typename Deriv>
Var unary_from(Tape& t, const Var& a, std::vector<double> out, Deriv deriv) {
  const bool g = t.any_requires_grad({&a});
  return t.emit(a->shape, std::move(out), g, [a, deriv](const Node& o) {
    for (std::size_t i = 0; i < o.size(); ++i) {
      a->grad[i] += o.grad[i] * deriv(a->value[i], o.value[i]);
    }
  });
}

template <typename Fwd, typename Deriv>
Var unary(Tape& t, const Var& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a->size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a->value[i]);
  return unary_from(t, a, std::move(out), deriv);
}

/// 1 / (1 + exp(-s·x)) with the vectorized exp; saturates cleanly at ±inf.
std::vector<double> logistic(const std::vector<double>& x, double s) {
  std::vector<double> out(x.size());
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::Map<Eigen::ArrayXd>(out.data(), n) =
      (1.0 + (-s * Eigen::Map<const Eigen::ArrayXd>(x.data(), n)).exp()).inverse();
  return out;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void Node::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Var leaf(Shape shape, std::vector<double> value, bool requires_grad, std::string name) {
  if (value.size() != numel(shape)) {
    throw DimensionError("leaf '" + name + "': " + std::to_string(value.size()) +
                         " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->grad.assign(value.size(), 0.0);
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->name = std::move(name);
  return node;
}

Var constant(Shape shape, std::vector<double> value) {
  return leaf(std::move(shape), std::move(value), false);
}

Var zeros(Shape shape, bool requires_grad, std::string name) {
  const std::size_t n = numel(shape);
  return leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad, std::move(name));
}

Var Tape::emit(Shape shape, std::vector<double> value, bool needs_grad,
               std::function<void(const Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  elements_emitted_ += node->value.size();
  if (needs_grad && grad_enabled_) {
    node->grad.assign(node->value.size(), 0.0);
    node->requires_grad = true;
    node->backward = std::move(backward);
    nodes_.push_back(node);
  }
  return node;
}

bool Tape::any_requires_grad(std::initializer_list<const Var*> inputs) const {
  if (!grad_enabled_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Var* v) { return (*v)->requires_grad; });
}

void Tape::backward(const Var& root) {
  if (root->size() != 1) {
    throw DimensionError("backward: root must be scalar, got " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;
  root->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& n = **it;
    if (n.backward) n.backward(n);
  }
}

void Tape::clear() {
  nodes_.clear();
  elements_emitted_ = 0;
}

Var matmul(Tape& t, const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t p = a->shape[0], q = a->shape[1], r = b->shape[1];
  if (b->shape[0] != q) dim_fail("matmul", a->shape, b->shape);
  std::vector<double> out(p * r);
  MapR(out.data(), p, r).noalias() = CMapR(a->value.data(), p, q) * CMapR(b->value.data(), q, r);
  const bool g = t.any_requires_grad({&a, &b});
  return t.emit({p, r}, std::move(out), g, [a, b, p, q, r](const Node& o) {
    CMapR go(o.grad.data(), p, r);
    if (a->requires_grad) {
      MapR(a->grad.data(), p, q).noalias() += go * CMapR(b->value.data(), q, r).transpose();
    }
    if (b->requires_grad) {
      MapR(b->grad.data(), q, r).noalias() += CMapR(a->value.data(), p, q).transpose() * go;
    }
  });
}

Var transpose(Tape& t, const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t p = a->shape[0], q = a->shape[1];
  std::vector<double> out(p * q);
  MapR(out.data(), q, p) = CMapR(a->value.data(), p, q).transpose();
  const bool g = t.any_requires_grad({&a});
  return t.emit({q, p}, std::move(out), g, [a, p, q](const Node& o) {
    MapR(a->grad.data(), p, q) += CMapR(o.grad.data(), q, p).transpose();
  });
}

Var batched_left_matmul(Tape& t, const Var& s, const Var& x) {
  require_rank("batched_left_matmul", s, 2);
  if (x->shape.size() < 2) dim_fail("batched_left_matmul", s->shape, x->shape);
  const std::size_t n = s->shape[0];
  const std::size_t rows = x->shape[x->shape.size() - 2];
  const std::size_t c = x->shape.back();
  if (s->shape[1] != n || rows != n) dim_fail("batched_left_matmul", s->shape, x->shape);
  const std::size_t batch = x->size() / (n * c);
  std::vector<double> out(x->size());
  CMapR sm(s->value.data(), n, n);
  for (std::size_t b = 0; b < batch; ++b) {
    MapR(out.data() + b * n * c, n, c).noalias() = sm * CMapR(x->value.data() + b * n * c, n, c);
  }
  const bool g = t.any_requires_grad({&s, &x});
  return t.emit(x->shape, std::move(out), g, [s, x, n, c, batch](const Node& o) {
    CMapR sm(s->value.data(), n, n);
    for (std::size_t b = 0; b < batch; ++b) {
      CMapR go(o.grad.data() + b * n * c, n, c);
      if (x->requires_grad) MapR(x->grad.data() + b * n * c, n, c).noalias() += sm.transpose() * go;
      if (s->requires_grad) {
        MapR(s->grad.data(), n, n).noalias() +=
            go * CMapR(x->value.data() + b * n * c, n, c).transpose();
      }
    }
  });
}

Var node_matmul(Tape& t, const Var& x, const Var& theta) {
  require_rank("node_matmul", theta, 3);
  if (x->shape.size() < 2) dim_fail("node_matmul", x->shape, theta->shape);
  const std::size_t n = theta->shape[0], c = theta->shape[1], f = theta->shape[2];
  if (x->shape.back() != c || x->shape[x->shape.size() - 2] != n) {
    dim_fail("node_matmul", x->shape, theta->shape);
  }
  const std::size_t batch = x->size() / (n * c);
  Shape out_shape = x->shape;
  out_shape.back() = f;
  std::vector<double> out(batch * n * f);
  for (std::size_t i = 0; i < n; ++i) {
    CStridedMapR xi(x->value.data() + i * c, batch, c, Eigen::OuterStride<>(n * c));
    StridedMapR oi(out.data() + i * f, batch, f, Eigen::OuterStride<>(n * f));
    oi.noalias() = xi * CMapR(theta->value.data() + i * c * f, c, f);
  }
  const bool g = t.any_requires_grad({&x, &theta});
  return t.emit(std::move(out_shape), std::move(out), g, [x, theta, n, c, f, batch](const Node& o) {
    for (std::size_t i = 0; i < n; ++i) {
      CStridedMapR gi(o.grad.data() + i * f, batch, f, Eigen::OuterStride<>(n * f));
      if (x->requires_grad) {
        StridedMapR(x->grad.data() + i * c, batch, c, Eigen::OuterStride<>(n * c)).noalias() +=
            gi * CMapR(theta->value.data() + i * c * f, c, f).transpose();
      }
      if (theta->requires_grad) {
        CStridedMapR xi(x->value.data() + i * c, batch, c, Eigen::OuterStride<>(n * c));
        MapR(theta->grad.data() + i * c * f, c, f).noalias() += xi.transpose() * gi;
      }
    }
  });
}

namespace {

enum class BinOp { kAdd, kSub, kMul };

template <typename F>
void for_blocks(std::size_t n, std::size_t m, F f) {
  for (std::size_t base = 0; base < n; base += m) f(base);
}

Var binary(Tape& t, const Var& a, const Var& b, BinOp op, const char* name) {
  if (!is_suffix(a->shape, b->shape)) dim_fail(name, a->shape, b->shape);
  const std::size_t n = a->size(), m = b->size();
  std::vector<double> out(n);
  const double* bv = b->value.data();
  for_blocks(n, m, [&](std::size_t base) {
    const double* x = a->value.data() + base;
    double* y = out.data() + base;
    switch (op) {
      case BinOp::kAdd: for (std::size_t j = 0; j < m; ++j) y[j] = x[j] + bv[j]; break;
      case BinOp::kSub: for (std::size_t j = 0; j < m; ++j) y[j] = x[j] - bv[j]; break;
      case BinOp::kMul: for (std::size_t j = 0; j < m; ++j) y[j] = x[j] * bv[j]; break;
    }
  });
  const bool g = t.any_requires_grad({&a, &b});
  return t.emit(a->shape, std::move(out), g, [a, b, op, n, m](const Node& o) {
    if (a->requires_grad) {
      if (op == BinOp::kMul) {
        for_blocks(n, m, [&](std::size_t base) {
          const double* go = o.grad.data() + base;
          double* ga = a->grad.data() + base;
          for (std::size_t j = 0; j < m; ++j) ga[j] += go[j] * b->value[j];
        });
      } else {
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += o.grad[i];
      }
    }
    if (b->requires_grad) {
      double* gb = b->grad.data();
      for_blocks(n, m, [&](std::size_t base) {
        const double* go = o.grad.data() + base;
        switch (op) {
          case BinOp::kAdd: for (std::size_t j = 0; j < m; ++j) gb[j] += go[j]; break;
          case BinOp::kSub: for (std::size_t j = 0; j < m; ++j) gb[j] -= go[j]; break;
          case BinOp::kMul: {
            const double* x = a->value.data() + base;
            for (std::size_t j = 0; j < m; ++j) gb[j] += go[j] * x[j];
            break;
          }
        }
      });
    }
  });
}

}  // namespace

Var add(Tape& t, const Var& a, const Var& b) { return binary(t, a, b, BinOp::kAdd, "add"); }
Var sub(Tape& t, const Var& a, const Var& b) { return binary(t, a, b, BinOp::kSub, "sub"); }
Var mul(Tape& t, const Var& a, const Var& b) { return binary(t, a, b, BinOp::kMul, "mul"); }

Var scale(Tape& t, const Var& a, double s) {
  return unary(t, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Tape& t, const Var& a, double s) {
  return unary(t, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sigmoid(Tape& t, const Var& a) {
  return unary_from(t, a, logistic(a->value, 1.0), [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Tape& t, const Var& a) {
  // tanh(x) = 2·sigmoid(2x) - 1
  std::vector<double> out = logistic(a->value, 2.0);
  for (double& y : out) y = 2.0 * y - 1.0;
  return unary_from(t, a, std::move(out), [](double, double y) { return 1.0 - y * y; });
}

Var relu(Tape& t, const Var& a) {
  return unary(t, a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var abs(Tape& t, const Var& a) {
  return unary(t, a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : x < 0 ? -1.0 : 0.0; });
}

Var rowsoftmax(Tape& t, const Var& a) {
  if (a->shape.empty()) dim_fail("rowsoftmax", a->shape, {});
  const std::size_t cols = a->shape.back();
  const std::size_t rows = cols ? a->size() / cols : 0;
  std::vector<double> out(a->size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = a->value.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!std::isfinite(in[j])) throw NumericError("rowsoftmax: non-finite input in row " + std::to_string(r));
      mx = std::max(mx, in[j]);
    }
    double sum = 0;
    for (std::size_t j = 0; j < cols; ++j) sum += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[j] /= sum;
  }
  const bool g = t.any_requires_grad({&a});
  return t.emit(a->shape, std::move(out), g, [a, rows, cols](const Node& o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.value.data() + r * cols;
      const double* gy = o.grad.data() + r * cols;
      double dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
      double* ga = a->grad.data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) ga[j] += y[j] * (gy[j] - dot);
    }
  });
}

Var concat_last(Tape& t, const Var& a, const Var& b) {
  if (a->shape.empty() || a->shape.size() != b->shape.size() ||
      !std::equal(a->shape.begin(), a->shape.end() - 1, b->shape.begin())) {
    dim_fail("concat_last", a->shape, b->shape);
  }
  const std::size_t p = a->shape.back(), q = b->shape.back();
  const std::size_t rows = p + q ? (a->size() + b->size()) / (p + q) : 0;
  Shape shape = a->shape;
  shape.back() = p + q;
  std::vector<double> out(rows * (p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a->value.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(b->value.data() + r * q, q, out.data() + r * (p + q) + p);
  }
  const bool g = t.any_requires_grad({&a, &b});
  return t.emit(std::move(shape), std::move(out), g, [a, b, p, q, rows](const Node& o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* go = o.grad.data() + r * (p + q);
      if (a->requires_grad) {
        for (std::size_t j = 0; j < p; ++j) a->grad[r * p + j] += go[j];
      }
      if (b->requires_grad) {
        for (std::size_t j = 0; j < q; ++j) b->grad[r * q + j] += go[p + j];
      }
    }
  });
}

Var slice_last(Tape& t, const Var& a, std::size_t begin, std::size_t length) {
  if (a->shape.empty() || begin + length > a->shape.back()) {
    throw DimensionError("slice_last: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + length) + ") out of range for " +
                         shape_str(a->shape));
  }
  const std::size_t w = a->shape.back();
  const std::size_t rows = w ? a->size() / w : 0;
  Shape shape = a->shape;
  shape.back() = length;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a->value.data() + r * w + begin, length, out.data() + r * length);
  }
  const bool g = t.any_requires_grad({&a});
  return t.emit(std::move(shape), std::move(out), g, [a, w, rows, begin, length](const Node& o) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < length; ++j) a->grad[r * w + begin + j] += o.grad[r * length + j];
    }
  });
}

Var reshape(Tape& t, const Var& a, Shape shape) {
  if (numel(shape) != a->size()) dim_fail("reshape", a->shape, shape);
  const bool g = t.any_requires_grad({&a});
  return t.emit(std::move(shape), a->value, g, [a](const Node& o) {
    for (std::size_t i = 0; i < o.size(); ++i) a->grad[i] += o.grad[i];
  });
}

Var sum_all(Tape& t, const Var& a) {
  double s = 0;
  for (double v : a->value) s += v;
  const bool g = t.any_requires_grad({&a});
  return t.emit({}, {s}, g, [a](const Node& o) {
    for (double& gi : a->grad) gi += o.grad[0];
  });
}

Var mean_all(Tape& t, const Var& a) {
  if (a->size() == 0) throw DomainError("mean_all: empty tensor");
  const double k = static_cast<double>(a->size());
  double s = 0;
  for (double v : a->value) s += v;
  const bool g = t.any_requires_grad({&a});
  return t.emit({}, {s / k}, g, [a, k](const Node& o) {
    const double d = o.grad[0] / k;
    for (double& gi : a->grad) gi += d;
  });
}

Var binary_clamp_ste(Tape& t, const Var& raw, double window) {
  std::vector<double> out(raw->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = raw->value[i] > 0.0 ? 1.0 : 0.0;
  const bool g = t.any_requires_grad({&raw});
  return t.emit(raw->shape, std::move(out), g, [raw, window](const Node& o) {
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (std::fabs(raw->value[i]) <= window) raw->grad[i] += o.grad[i];
    }
  });
}

Var masked_blend(Tape& t, const Var& x, const Var& w, const Var& fill) {
  require_rank("masked_blend", w, 1);
  require_rank("masked_blend", fill, 2);
  const std::size_t n = w->shape[0];
  const std::size_t c = fill->shape[1];
  if (fill->shape[0] != n || x->shape.size() < 2 || x->shape.back() != c ||
      x->shape[x->shape.size() - 2] != n) {
    dim_fail("masked_blend", x->shape, fill->shape);
  }
  const std::size_t batch = x->size() / (n * c);
  std::vector<double> out(x->size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w->value[i];
      const std::size_t off = (b * n + i) * c;
      for (std::size_t j = 0; j < c; ++j) {
        out[off + j] = wi * x->value[off + j] + (1.0 - wi) * fill->value[i * c + j];
      }
    }
  }
  const bool g = t.any_requires_grad({&x, &w, &fill});
  return t.emit(x->shape, std::move(out), g, [x, w, fill, n, c, batch](const Node& o) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        const double wi = w->value[i];
        const std::size_t off = (b * n + i) * c;
        for (std::size_t j = 0; j < c; ++j) {
          const double go = o.grad[off + j];
          if (x->requires_grad) x->grad[off + j] += wi * go;
          if (w->requires_grad) w->grad[i] += go * (x->value[off + j] - fill->value[i * c + j]);
          if (fill->requires_grad) fill->grad[i * c + j] += (1.0 - wi) * go;
        }
      }
    }
  });
}

GradCheckReport grad_check(const std::function<Var(Tape&)>& f, std::span<const Var> params,
                           double eps, double tol, double floor) {
  if (!(eps > 0)) throw DomainError("grad_check: eps must be positive");
  auto evaluate = [&f]() {
    Tape t(false);
    const double v = f(t)->value.at(0);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective");
    return v;
  };

  for (const Var& p : params) p->zero_grad();
  {
    Tape t;
    Var root = f(t);
    if (!std::isfinite(root->value.at(0))) throw NumericError("grad_check: non-finite objective");
    t.backward(root);
  }

  GradCheckReport report;
  for (const Var& p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = evaluate();
      p->value[i] = saved - eps;
      const double down = evaluate();
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = p->grad[i];
      const double abs_err = std::fabs(analytic - numeric);
      const double rel = abs_err / std::max({std::fabs(analytic), std::fabs(numeric), floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (report.checked == 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p->name;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace prunegcrn::ad
