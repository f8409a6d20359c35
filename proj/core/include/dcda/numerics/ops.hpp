#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "dcda/numerics/tape.hpp"

namespace dcda {

// The named primitive set. Everything else in ops.hpp is a fused helper
// built for speed, each with its own hand-written backward.
enum class Primitive { matmul, add, row_softmax, relu, scale, transpose, dot };

std::string_view to_string(Primitive p);

// Dispatches to the op of that kind. `factor` is only read by `scale`.
Var apply_primitive(Primitive kind, std::span<const Var> inputs, double factor = 1.0);

// Forward-only convenience on plain matrices.
Matrix apply_primitive(Primitive kind, std::span<const Matrix> inputs,
                       double factor = 1.0);

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var transpose(Var a);
Var row_softmax(Var a);
Var relu(Var a);
Var dot(Var a, Var b);  // Frobenius inner product, 1x1 result
Var hadamard(Var a, Var b);
Var sum(Var a);  // 1x1
Var mul_scalar(Var s, Var a);  // s is 1x1
Var add_row_broadcast(Var a, Var bias);  // bias is 1 x a.cols()

Var layer_norm_rows(Var a, double eps = 1e-5);
Var l2_normalize_rows(Var a, double eps = 1e-12);

Var gather_rows(Var a, std::vector<std::size_t> indices);
// base + scatter(rows into `indices`); duplicate indices accumulate.
Var scatter_add_rows(Var base, std::vector<std::size_t> indices, Var rows);
Var vstack(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);

struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Per-segment scaled dot-product attention over row-stacked sequences:
// out[seg] = softmax(Q[seg] K[seg]^T * scale) V[seg]. With `causal`, query i
// only sees keys 0..i of its segment (query and key segments must then have
// equal lengths).
Var segmented_attention(Var q, Var k, Var v, std::vector<Segment> q_segments,
                        std::vector<Segment> kv_segments, bool causal, double scale);

// Attention probabilities for one segment pair, forward only.
Matrix attention_weights(const Matrix& q, const Matrix& k, bool causal, double scale);

// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels);

}  // namespace dcda
