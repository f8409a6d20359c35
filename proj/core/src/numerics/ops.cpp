#include "dcda/numerics/ops.hpp"

#include <cmath>
#include <memory>

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {
namespace {

using Eigen::Index;

Index idx(std::size_t n) { return static_cast<Index>(n); }

void require_same_shape(std::string_view op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(fmt::format("{}: lhs {} and rhs {} differ in shape", op,
                                     a.shape_string(), b.shape_string()));
  }
}

void require_scalar(std::string_view op, const Matrix& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw DimensionError(
        fmt::format("{}: scalar operand must be 1x1, got {}", op, s.shape_string()));
  }
}

RowMajorXd softmax_rows(const RowMajorXd& z) {
  RowMajorXd p(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    p.row(r) = (z.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// Softmax with an optional causal mask; masked entries are exactly zero.
RowMajorXd masked_softmax(const RowMajorXd& s, bool causal) {
  if (!causal) return softmax_rows(s);
  RowMajorXd p = RowMajorXd::Zero(s.rows(), s.cols());
  for (Index r = 0; r < s.rows(); ++r) {
    const Index n = std::min<Index>(r + 1, s.cols());
    const double m = s.row(r).head(n).maxCoeff();
    p.row(r).head(n) = (s.row(r).head(n).array() - m).exp();
    p.row(r).head(n) /= p.row(r).head(n).sum();
  }
  return p;
}

}  // namespace

std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::row_softmax: return "row_softmax";
    case Primitive::relu: return "relu";
    case Primitive::scale: return "scale";
    case Primitive::transpose: return "transpose";
    case Primitive::dot: return "dot";
  }
  return "unknown";
}

Var apply_primitive(Primitive kind, std::span<const Var> inputs, double factor) {
  const std::size_t want =
      (kind == Primitive::matmul || kind == Primitive::add || kind == Primitive::dot)
          ? 2
          : 1;
  if (inputs.size() != want) {
    throw DimensionError(fmt::format("{} expects {} operand(s), got {}",
                                     to_string(kind), want, inputs.size()));
  }
  switch (kind) {
    case Primitive::matmul: return matmul(inputs[0], inputs[1]);
    case Primitive::add: return add(inputs[0], inputs[1]);
    case Primitive::row_softmax: return row_softmax(inputs[0]);
    case Primitive::relu: return relu(inputs[0]);
    case Primitive::scale: return scale(inputs[0], factor);
    case Primitive::transpose: return transpose(inputs[0]);
    case Primitive::dot: return dot(inputs[0], inputs[1]);
  }
  throw Error("primitive", "unknown primitive kind");
}

Matrix apply_primitive(Primitive kind, std::span<const Matrix> inputs, double factor) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  return apply_primitive(kind, vars, factor).value();
}

Var matmul(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.cols() != B.rows()) {
    throw DimensionError(fmt::format("matmul: lhs {} cols do not match rhs {} rows",
                                     A.shape_string(), B.shape_string()));
  }
  Matrix out(RowMajorXd(A.eigen() * B.eigen()));
  return a.tape()->record("matmul", std::move(out), {a, b},
                          [a, b](Tape& t, const RowMajorXd& g) {
                            if (t.requires_grad(a))
                              t.accumulate(a, g * t.value(b).eigen().transpose());
                            if (t.requires_grad(b))
                              t.accumulate(b, t.value(a).eigen().transpose() * g);
                          });
}

Var matmul_nt(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.cols() != B.cols()) {
    throw DimensionError(fmt::format("matmul_nt: lhs {} and rhs {} differ in cols",
                                     A.shape_string(), B.shape_string()));
  }
  Matrix out(RowMajorXd(A.eigen() * B.eigen().transpose()));
  return a.tape()->record("matmul_nt", std::move(out), {a, b},
                          [a, b](Tape& t, const RowMajorXd& g) {
                            if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).eigen());
                            if (t.requires_grad(b))
                              t.accumulate(b, g.transpose() * t.value(a).eigen());
                          });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Matrix out(RowMajorXd(a.value().eigen() + b.value().eigen()));
  return a.tape()->record("add", std::move(out), {a, b},
                          [a, b](Tape& t, const RowMajorXd& g) {
                            t.accumulate(a, g);
                            t.accumulate(b, g);
                          });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Matrix out(RowMajorXd(a.value().eigen() - b.value().eigen()));
  return a.tape()->record("sub", std::move(out), {a, b},
                          [a, b](Tape& t, const RowMajorXd& g) {
                            t.accumulate(a, g);
                            t.accumulate(b, -g);
                          });
}

Var scale(Var a, double factor) {
  if (!std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  Matrix out(RowMajorXd(a.value().eigen() * factor));
  return a.tape()->record("scale", std::move(out), {a},
                          [a, factor](Tape& t, const RowMajorXd& g) {
                            t.accumulate(a, g * factor);
                          });
}

Var transpose(Var a) {
  Matrix out(RowMajorXd(a.value().eigen().transpose()));
  return a.tape()->record("transpose", std::move(out), {a},
                          [a](Tape& t, const RowMajorXd& g) {
                            t.accumulate(a, g.transpose());
                          });
}

Var row_softmax(Var a) {
  auto p = std::make_shared<RowMajorXd>(softmax_rows(a.value().eigen()));
  Matrix out(*p);
  return a.tape()->record("row_softmax", std::move(out), {a},
                          [a, p](Tape& t, const RowMajorXd& g) {
                            const RowMajorXd& P = *p;
                            Eigen::VectorXd inner = (g.array() * P.array()).rowwise().sum();
                            RowMajorXd dz = P.array() * (g.colwise() - inner).array();
                            t.accumulate(a, dz);
                          });
}

Var relu(Var a) {
  Matrix out(RowMajorXd(a.value().eigen().cwiseMax(0.0)));
  return a.tape()->record("relu", std::move(out), {a},
                          [a](Tape& t, const RowMajorXd& g) {
                            const RowMajorXd& x = t.value(a).eigen();
                            t.accumulate(a, (x.array() > 0.0).select(g, 0.0));
                          });
}

Var dot(Var a, Var b) {
  require_same_shape("dot", a.value(), b.value());
  const double s = a.value().eigen().cwiseProduct(b.value().eigen()).sum();
  return a.tape()->record("dot", Matrix(1, 1, s), {a, b},
                          [a, b](Tape& t, const RowMajorXd& g) {
                            const double u = g(0, 0);
                            if (t.requires_grad(a)) t.accumulate(a, t.value(b).eigen() * u);
                            if (t.requires_grad(b)) t.accumulate(b, t.value(a).eigen() * u);
                          });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a.value(), b.value());
  Matrix out(RowMajorXd(a.value().eigen().cwiseProduct(b.value().eigen())));
  return a.tape()->record("hadamard", std::move(out), {a, b},
                          [a, b](Tape& t, const RowMajorXd& g) {
                            if (t.requires_grad(a))
                              t.accumulate(a, g.cwiseProduct(t.value(b).eigen()));
                            if (t.requires_grad(b))
                              t.accumulate(b, g.cwiseProduct(t.value(a).eigen()));
                          });
}

Var sum(Var a) {
  const double s = a.value().eigen().sum();
  const Index r = a.value().eigen().rows();
  const Index c = a.value().eigen().cols();
  return a.tape()->record("sum", Matrix(1, 1, s), {a},
                          [a, r, c](Tape& t, const RowMajorXd& g) {
                            t.accumulate(a, RowMajorXd::Constant(r, c, g(0, 0)));
                          });
}

Var mul_scalar(Var s, Var a) {
  require_scalar("mul_scalar", s.value());
  const double k = s.value()(0, 0);
  Matrix out(RowMajorXd(a.value().eigen() * k));
  return a.tape()->record("mul_scalar", std::move(out), {s, a},
                          [s, a](Tape& t, const RowMajorXd& g) {
                            const double kk = t.value(s)(0, 0);
                            if (t.requires_grad(s)) {
                              RowMajorXd d(1, 1);
                              d(0, 0) = g.cwiseProduct(t.value(a).eigen()).sum();
                              t.accumulate(s, d);
                            }
                            if (t.requires_grad(a)) t.accumulate(a, g * kk);
                          });
}

Var add_row_broadcast(Var a, Var bias) {
  const Matrix& A = a.value();
  const Matrix& b = bias.value();
  if (b.rows() != 1 || b.cols() != A.cols()) {
    throw DimensionError(fmt::format("add_row_broadcast: bias {} does not fit {}",
                                     b.shape_string(), A.shape_string()));
  }
  Matrix out(RowMajorXd(A.eigen().rowwise() + b.eigen().row(0)));
  return a.tape()->record("add_row_broadcast", std::move(out), {a, bias},
                          [a, bias](Tape& t, const RowMajorXd& g) {
                            t.accumulate(a, g);
                            if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                          });
}

Var layer_norm_rows(Var a, double eps) {
  const RowMajorXd& x = a.value().eigen();
  const Index n = x.cols();
  auto y = std::make_shared<RowMajorXd>(x.rows(), n);
  auto inv_sigma = std::make_shared<Eigen::VectorXd>(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)(r) = is;
    y->row(r) = (x.row(r).array() - mu) * is;
  }
  Matrix out(*y);
  return a.tape()->record(
      "layer_norm_rows", std::move(out), {a},
      [a, y, inv_sigma, n](Tape& t, const RowMajorXd& g) {
        RowMajorXd dx(g.rows(), g.cols());
        for (Index r = 0; r < g.rows(); ++r) {
          const double gm = g.row(r).mean();
          const double gy = g.row(r).dot(y->row(r)) / static_cast<double>(n);
          dx.row(r) = (*inv_sigma)(r) *
                      (g.row(r).array() - gm - y->row(r).array() * gy);
        }
        t.accumulate(a, dx);
      });
}

Var l2_normalize_rows(Var a, double eps) {
  const RowMajorXd& x = a.value().eigen();
  auto y = std::make_shared<RowMajorXd>(x.rows(), x.cols());
  auto norm = std::make_shared<Eigen::VectorXd>(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double nr = std::sqrt(x.row(r).squaredNorm() + eps);
    (*norm)(r) = nr;
    y->row(r) = x.row(r) / nr;
  }
  Matrix out(*y);
  return a.tape()->record("l2_normalize_rows", std::move(out), {a},
                          [a, y, norm](Tape& t, const RowMajorXd& g) {
                            RowMajorXd dx(g.rows(), g.cols());
                            for (Index r = 0; r < g.rows(); ++r) {
                              const double proj = g.row(r).dot(y->row(r));
                              dx.row(r) = (g.row(r) - proj * y->row(r)) / (*norm)(r);
                            }
                            t.accumulate(a, dx);
                          });
}

Var gather_rows(Var a, std::vector<std::size_t> indices) {
  const Matrix& A = a.value();
  RowMajorXd out(idx(indices.size()), idx(A.cols()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= A.rows()) {
      throw DimensionError(fmt::format("gather_rows: index {} out of range for {}",
                                       indices[i], A.shape_string()));
    }
    out.row(idx(i)) = A.eigen().row(idx(indices[i]));
  }
  const Index rows = idx(A.rows());
  const Index cols = idx(A.cols());
  return a.tape()->record(
      "gather_rows", Matrix(std::move(out)), {a},
      [a, ind = std::move(indices), rows, cols](Tape& t, const RowMajorXd& g) {
        RowMajorXd d = RowMajorXd::Zero(rows, cols);
        for (std::size_t i = 0; i < ind.size(); ++i) d.row(idx(ind[i])) += g.row(idx(i));
        t.accumulate(a, d);
      });
}

Var scatter_add_rows(Var base, std::vector<std::size_t> indices, Var rows) {
  const Matrix& B = base.value();
  const Matrix& R = rows.value();
  if (R.rows() != indices.size() || R.cols() != B.cols()) {
    throw DimensionError(fmt::format(
        "scatter_add_rows: rows {} with {} indices do not fit base {}",
        R.shape_string(), indices.size(), B.shape_string()));
  }
  RowMajorXd out = B.eigen();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= B.rows()) {
      throw DimensionError(fmt::format("scatter_add_rows: index {} out of range for {}",
                                       indices[i], B.shape_string()));
    }
    out.row(idx(indices[i])) += R.eigen().row(idx(i));
  }
  return base.tape()->record(
      "scatter_add_rows", Matrix(std::move(out)), {base, rows},
      [base, rows, ind = std::move(indices)](Tape& t, const RowMajorXd& g) {
        t.accumulate(base, g);
        if (t.requires_grad(rows)) {
          RowMajorXd d(idx(ind.size()), g.cols());
          for (std::size_t i = 0; i < ind.size(); ++i) d.row(idx(i)) = g.row(idx(ind[i]));
          t.accumulate(rows, d);
        }
      });
}

Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("vstack: no operands");
  const std::size_t cols = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError(fmt::format("vstack: operand {} has {} cols, expected {}",
                                       p.value().shape_string(), p.cols(), cols));
    }
    total += p.rows();
  }
  RowMajorXd out(idx(total), idx(cols));
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(idx(at), idx(p.rows())) = p.value().eigen();
    at += p.rows();
  }
  return parts.front().tape()->record(
      "vstack", Matrix(std::move(out)), parts,
      [parts, offsets](Tape& t, const RowMajorXd& g) {
        for (std::size_t i = 0; i < parts.size(); ++i) {
          if (!t.requires_grad(parts[i])) continue;
          t.accumulate(parts[i], g.middleRows(idx(offsets[i]), idx(parts[i].rows())));
        }
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Matrix& A = a.value();
  if (begin + count > A.rows()) {
    throw DimensionError(fmt::format("slice_rows: [{}, {}) out of range for {}", begin,
                                     begin + count, A.shape_string()));
  }
  RowMajorXd out = A.eigen().middleRows(idx(begin), idx(count));
  const Index rows = idx(A.rows());
  return a.tape()->record("slice_rows", Matrix(std::move(out)), {a},
                          [a, begin, count, rows](Tape& t, const RowMajorXd& g) {
                            RowMajorXd d = RowMajorXd::Zero(rows, g.cols());
                            d.middleRows(idx(begin), idx(count)) = g;
                            t.accumulate(a, d);
                          });
}

Matrix attention_weights(const Matrix& q, const Matrix& k, bool causal, double scale) {
  if (q.cols() != k.cols()) {
    throw DimensionError(fmt::format("attention_weights: query {} and key {} differ in width",
                                     q.shape_string(), k.shape_string()));
  }
  RowMajorXd s = (q.eigen() * k.eigen().transpose()) * scale;
  return Matrix(masked_softmax(s, causal));
}

Var segmented_attention(Var q, Var k, Var v, std::vector<Segment> q_segments,
                        std::vector<Segment> kv_segments, bool causal, double scale) {
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  if (Q.cols() != K.cols()) {
    throw DimensionError(fmt::format("segmented_attention: query {} and key {} differ in width",
                                     Q.shape_string(), K.shape_string()));
  }
  if (K.rows() != V.rows()) {
    throw DimensionError(fmt::format("segmented_attention: key {} and value {} differ in rows",
                                     K.shape_string(), V.shape_string()));
  }
  if (q_segments.size() != kv_segments.size()) {
    throw DimensionError(fmt::format("segmented_attention: {} query segments vs {} key segments",
                                     q_segments.size(), kv_segments.size()));
  }
  RowMajorXd out = RowMajorXd::Zero(Q.eigen().rows(), V.eigen().cols());
  auto probs = std::make_shared<std::vector<RowMajorXd>>();
  probs->reserve(q_segments.size());
  for (std::size_t s = 0; s < q_segments.size(); ++s) {
    const Segment qs = q_segments[s];
    const Segment ks = kv_segments[s];
    if (qs.offset + qs.length > Q.rows() || ks.offset + ks.length > K.rows() ||
        ks.length == 0) {
      throw DimensionError(fmt::format("segmented_attention: segment {} out of range", s));
    }
    if (causal && qs.length != ks.length) {
      throw DimensionError("segmented_attention: causal segments must have equal lengths");
    }
    auto qb = Q.eigen().middleRows(idx(qs.offset), idx(qs.length));
    auto kb = K.eigen().middleRows(idx(ks.offset), idx(ks.length));
    auto vb = V.eigen().middleRows(idx(ks.offset), idx(ks.length));
    RowMajorXd p = masked_softmax(RowMajorXd(qb * kb.transpose() * scale), causal);
    out.middleRows(idx(qs.offset), idx(qs.length)) = p * vb;
    probs->push_back(std::move(p));
  }
  return q.tape()->record(
      "segmented_attention", Matrix(std::move(out)), {q, k, v},
      [q, k, v, probs, qsegs = std::move(q_segments), ksegs = std::move(kv_segments),
       scale](Tape& t, const RowMajorXd& g) {
        const RowMajorXd& Qe = t.value(q).eigen();
        const RowMajorXd& Ke = t.value(k).eigen();
        const RowMajorXd& Ve = t.value(v).eigen();
        const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
        RowMajorXd dq, dk, dv;
        if (gq) dq = RowMajorXd::Zero(Qe.rows(), Qe.cols());
        if (gk) dk = RowMajorXd::Zero(Ke.rows(), Ke.cols());
        if (gv) dv = RowMajorXd::Zero(Ve.rows(), Ve.cols());
        for (std::size_t s = 0; s < qsegs.size(); ++s) {
          const Index qo = idx(qsegs[s].offset), ql = idx(qsegs[s].length);
          const Index ko = idx(ksegs[s].offset), kl = idx(ksegs[s].length);
          const RowMajorXd& P = (*probs)[s];
          auto go = g.middleRows(qo, ql);
          if (gv) dv.middleRows(ko, kl) += P.transpose() * go;
          if (!gq && !gk) continue;
          RowMajorXd dp = go * Ve.middleRows(ko, kl).transpose();
          Eigen::VectorXd inner = (dp.array() * P.array()).rowwise().sum();
          RowMajorXd ds = P.array() * (dp.colwise() - inner).array();
          ds *= scale;
          if (gq) dq.middleRows(qo, ql) += ds * Ke.middleRows(ko, kl);
          if (gk) dk.middleRows(ko, kl) += ds.transpose() * Qe.middleRows(qo, ql);
        }
        if (gq) t.accumulate(q, dq);
        if (gk) t.accumulate(k, dk);
        if (gv) t.accumulate(v, dv);
      });
}

Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels) {
  const RowMajorXd& z = logits.value().eigen();
  if (labels.size() != static_cast<std::size_t>(z.rows())) {
    throw DimensionError(fmt::format("softmax_cross_entropy: {} labels for {} rows",
                                     labels.size(), z.rows()));
  }
  if (z.rows() == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  auto p = std::make_shared<RowMajorXd>(softmax_rows(z));
  double loss = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const std::size_t y = labels[static_cast<std::size_t>(r)];
    if (y >= static_cast<std::size_t>(z.cols())) {
      throw DimensionError(fmt::format("softmax_cross_entropy: label {} outside {} classes",
                                       y, z.cols()));
    }
    const double m = z.row(r).maxCoeff();
    const double lse = m + std::log((z.row(r).array() - m).exp().sum());
    loss += lse - z(r, idx(y));
  }
  const double n = static_cast<double>(z.rows());
  return logits.tape()->record(
      "softmax_cross_entropy", Matrix(1, 1, loss / n), {logits},
      [logits, p, lab = std::move(labels), n](Tape& t, const RowMajorXd& g) {
        RowMajorXd d = *p;
        for (std::size_t r = 0; r < lab.size(); ++r) d(idx(r), idx(lab[r])) -= 1.0;
        t.accumulate(logits, d * (g(0, 0) / n));
      });
}

}  // namespace dcda
