#pragma once

#include <string>

#include "slqa/ops.hpp"
#include "slqa/tensor.hpp"

namespace slqa {

// Alignment score functions over a (passage vector, question vector) pair.
// Only the parameters of the selected kind are used.
enum class ScoreFn { kDot, kLinear, kBilinearRelu, kTrilinear };

struct ScoreFnSpec {
  ScoreFn kind = ScoreFn::kBilinearRelu;
  Tensor w_lin;    // d x k shared projection (bilinear_relu)
  Tensor v_p, v_q;  // d x 1 per-side vectors (linear)
  // Trilinear weight split into its [p; q; p*q] blocks, each d x 1.
  Tensor w_tri_p, w_tri_q, w_tri_pq;
};

ScoreFn score_fn_from_name(const std::string& name);
std::string score_fn_name(ScoreFn f);

// Gated fusion of an original representation with an aligned one.
enum class FusionKernel { kConcat, kFpu, kSfu, kVfu, kMfu };

struct FusionSpec {
  FusionKernel kernel = FusionKernel::kVfu;
  Tensor w_f;  // 4d x d projection back to the input width
  Tensor b_f;  // 1 x d
  // Gate parameters; which ones apply depends on the kernel.
  Tensor g_scalar;  // 1 x 1        (sfu)
  Tensor w_g;       // 4d x 1      (vfu)
  Tensor b_g;       // 1 x 1       (vfu)
  Tensor w_gm;      // 4d x d      (mfu)
  Tensor b_gm;      // 1 x d       (mfu)
};

FusionKernel fusion_kernel_from_name(const std::string& name);
std::string fusion_kernel_name(FusionKernel k);

// Unnormalized soft-alignment scores, passage rows x question columns.
// bilinear_relu projects each side once and takes a single matrix product,
// never materializing per-pair projections:
//   S = relu(U_P W) relu(U_Q W)^T
Tensor coattention_scores(Tape& tape, const Tensor& u_p, const Tensor& u_q,
                          const ScoreFnSpec& spec);

struct AttendResult {
  Tensor attended;
  Tensor weights;  // the normalized attention distribution
};

// Per passage row t: alpha_t = softmax over the question axis of S[t,:],
// attended_t = sum_j alpha[t,j] * U_Q[j].  `question_mask` (1 x m), when
// given, excludes padded question positions.
AttendResult p2q_attend(Tape& tape, const Tensor& scores, const Tensor& u_q,
                        const Tensor* question_mask = nullptr);

// Per question column j: beta_j = softmax over the passage axis of S[:,j],
// attended_j = sum_t beta[t,j] * U_P[t].  weights holds the column-softmaxed
// n x m matrix.
AttendResult q2p_attend(Tape& tape, const Tensor& scores, const Tensor& u_p,
                        const Tensor* passage_mask = nullptr);

// x' = g * m(x, y) + (1 - g) * x with m = tanh(W_f [x; y; x*y; x-y] + b_f).
// concat: ungated linear projection of the match features; fpu: m itself.
Tensor fuse(Tape& tape, const Tensor& x, const Tensor& y_aligned,
            const FusionSpec& spec);

struct SelfAlignResult {
  Tensor aligned;  // row-stochastic L times D
  Tensor weights;  // L, n x n
};

// Bilinear self-alignment L = softmax(D W_l D^T) rowwise; diagonal unmasked.
SelfAlignResult self_align(Tape& tape, const Tensor& d, const Tensor& w_l,
                           const Tensor* mask = nullptr);

struct SummaryResult {
  Tensor summary;  // 1 x d
  Tensor weights;  // m x 1 probability vector
};

// gamma = softmax(Q'' w_q); summary = sum_j gamma_j Q''[j].
SummaryResult question_summary(Tape& tape, const Tensor& q2, const Tensor& w_q,
                               const Tensor* mask = nullptr);

}  // namespace slqa
