#include "slqa/attention.hpp"

#include "slqa/error.hpp"

namespace slqa {
namespace {

void check_width(const Tensor& u, const Tensor& w, const char* what) {
  if (!w.defined())
    throw ConfigError(std::string("score/fusion parameter missing: ") + what);
  if (u.dim(1) != w.dim(0))
    throw ConfigError(std::string("width mismatch for ") + what + ": input " +
                      shape_str(u.shape()) + " vs weight " +
                      shape_str(w.shape()));
}

// Replicate a 1 x m (or n x 1) mask across the other axis of an n x m grid.
Tensor expand_mask(const Tensor& mask, int n, int m, bool across_rows) {
  std::vector<double> vals(static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      vals[static_cast<std::size_t>(i) * m + j] =
          across_rows ? mask.at(j) : mask.at(i);
  return Tensor::from({n, m}, std::move(vals));
}

}  // namespace

ScoreFn score_fn_from_name(const std::string& name) {
  if (name == "dot") return ScoreFn::kDot;
  if (name == "linear") return ScoreFn::kLinear;
  if (name == "bilinear_relu") return ScoreFn::kBilinearRelu;
  if (name == "trilinear") return ScoreFn::kTrilinear;
  throw ConfigError("unknown score function: " + name);
}

std::string score_fn_name(ScoreFn f) {
  switch (f) {
    case ScoreFn::kDot: return "dot";
    case ScoreFn::kLinear: return "linear";
    case ScoreFn::kBilinearRelu: return "bilinear_relu";
    case ScoreFn::kTrilinear: return "trilinear";
  }
  return "?";
}

FusionKernel fusion_kernel_from_name(const std::string& name) {
  if (name == "concat") return FusionKernel::kConcat;
  if (name == "fpu") return FusionKernel::kFpu;
  if (name == "sfu") return FusionKernel::kSfu;
  if (name == "vfu") return FusionKernel::kVfu;
  if (name == "mfu") return FusionKernel::kMfu;
  throw ConfigError("unknown fusion kernel: " + name);
}

std::string fusion_kernel_name(FusionKernel k) {
  switch (k) {
    case FusionKernel::kConcat: return "concat";
    case FusionKernel::kFpu: return "fpu";
    case FusionKernel::kSfu: return "sfu";
    case FusionKernel::kVfu: return "vfu";
    case FusionKernel::kMfu: return "mfu";
  }
  return "?";
}

Tensor coattention_scores(Tape& tape, const Tensor& u_p, const Tensor& u_q,
                          const ScoreFnSpec& spec) {
  if (u_p.rank() != 2 || u_q.rank() != 2 || u_p.dim(1) != u_q.dim(1))
    throw ConfigError("coattention_scores: sides disagree, " +
                      shape_str(u_p.shape()) + " vs " + shape_str(u_q.shape()));
  switch (spec.kind) {
    case ScoreFn::kDot:
      return matmul(tape, u_p, transpose(tape, u_q));
    case ScoreFn::kLinear: {
      check_width(u_p, spec.v_p, "linear v_p");
      check_width(u_q, spec.v_q, "linear v_q");
      return add_outer(tape, matmul(tape, u_p, spec.v_p),
                       matmul(tape, u_q, spec.v_q));
    }
    case ScoreFn::kBilinearRelu: {
      check_width(u_p, spec.w_lin, "bilinear w_lin");
      const Tensor p_proj = relu(tape, matmul(tape, u_p, spec.w_lin));
      const Tensor q_proj = relu(tape, matmul(tape, u_q, spec.w_lin));
      return matmul(tape, p_proj, transpose(tape, q_proj));
    }
    case ScoreFn::kTrilinear: {
      check_width(u_p, spec.w_tri_p, "trilinear w_p");
      check_width(u_q, spec.w_tri_q, "trilinear w_q");
      check_width(u_p, spec.w_tri_pq, "trilinear w_pq");
      const Tensor sides = add_outer(tape, matmul(tape, u_p, spec.w_tri_p),
                                     matmul(tape, u_q, spec.w_tri_q));
      const Tensor prod = matmul(tape, scale_cols(tape, u_p, spec.w_tri_pq),
                                 transpose(tape, u_q));
      return add(tape, sides, prod);
    }
  }
  throw ConfigError("coattention_scores: bad score kind");
}

AttendResult p2q_attend(Tape& tape, const Tensor& scores, const Tensor& u_q,
                        const Tensor* question_mask) {
  if (scores.dim(1) != u_q.dim(0))
    throw DimensionError("p2q_attend: scores " + shape_str(scores.shape()) +
                         " vs question " + shape_str(u_q.shape()));
  Tensor grid_mask;
  if (question_mask) {
    if (question_mask->size() != scores.dim(1))
      throw DimensionError("p2q_attend: mask length mismatch");
    grid_mask = expand_mask(*question_mask, scores.dim(0), scores.dim(1), true);
  }
  const Tensor alpha =
      softmax(tape, scores, 1, question_mask ? &grid_mask : nullptr);
  return {matmul(tape, alpha, u_q), alpha};
}

AttendResult q2p_attend(Tape& tape, const Tensor& scores, const Tensor& u_p,
                        const Tensor* passage_mask) {
  if (scores.dim(0) != u_p.dim(0))
    throw DimensionError("q2p_attend: scores " + shape_str(scores.shape()) +
                         " vs passage " + shape_str(u_p.shape()));
  Tensor grid_mask;
  if (passage_mask) {
    if (passage_mask->size() != scores.dim(0))
      throw DimensionError("q2p_attend: mask length mismatch");
    grid_mask = expand_mask(*passage_mask, scores.dim(0), scores.dim(1), false);
  }
  const Tensor beta =
      softmax(tape, scores, 0, passage_mask ? &grid_mask : nullptr);
  return {matmul(tape, transpose(tape, beta), u_p), beta};
}

Tensor fuse(Tape& tape, const Tensor& x, const Tensor& y_aligned,
            const FusionSpec& spec) {
  if (x.shape() != y_aligned.shape())
    throw DimensionError("fuse: inputs must match, " + shape_str(x.shape()) +
                         " vs " + shape_str(y_aligned.shape()));
  const Tensor z = concat(
      tape, {x, y_aligned, mul(tape, x, y_aligned), sub(tape, x, y_aligned)});
  check_width(z, spec.w_f, "fusion w_f");
  const Tensor proj = add_bias(tape, matmul(tape, z, spec.w_f), spec.b_f);
  if (spec.kernel == FusionKernel::kConcat) return proj;
  const Tensor m = tanh(tape, proj);
  if (spec.kernel == FusionKernel::kFpu) return m;
  // Gated kernels: x + g * (m - x) == g*m + (1-g)*x.
  const Tensor delta = sub(tape, m, x);
  switch (spec.kernel) {
    case FusionKernel::kSfu: {
      const Tensor gate = sigmoid(tape, spec.g_scalar);
      return add(tape, scale_all(tape, delta, gate), x);
    }
    case FusionKernel::kVfu: {
      check_width(z, spec.w_g, "vfu w_g");
      const Tensor gate = sigmoid(
          tape, add_bias(tape, matmul(tape, z, spec.w_g), spec.b_g));
      return add(tape, scale_rows(tape, delta, gate), x);
    }
    case FusionKernel::kMfu: {
      check_width(z, spec.w_gm, "mfu w_g");
      const Tensor gate = sigmoid(
          tape, add_bias(tape, matmul(tape, z, spec.w_gm), spec.b_gm));
      return add(tape, mul(tape, gate, delta), x);
    }
    default:
      throw ConfigError("fuse: bad kernel");
  }
}

SelfAlignResult self_align(Tape& tape, const Tensor& d, const Tensor& w_l,
                           const Tensor* mask) {
  if (w_l.dim(0) != d.dim(1) || w_l.dim(1) != d.dim(1))
    throw ConfigError("self_align: W_l " + shape_str(w_l.shape()) +
                      " must be square of width " + std::to_string(d.dim(1)));
  const Tensor raw =
      matmul(tape, matmul(tape, d, w_l), transpose(tape, d));
  Tensor grid_mask;
  if (mask) {
    if (mask->size() != d.dim(0))
      throw DimensionError("self_align: mask length mismatch");
    grid_mask = expand_mask(*mask, d.dim(0), d.dim(0), true);
  }
  const Tensor l = softmax(tape, raw, 1, mask ? &grid_mask : nullptr);
  return {matmul(tape, l, d), l};
}

SummaryResult question_summary(Tape& tape, const Tensor& q2, const Tensor& w_q,
                               const Tensor* mask) {
  check_width(q2, w_q, "summary w_q");
  const Tensor scores = matmul(tape, q2, w_q);  // m x 1
  Tensor col_mask;
  if (mask) {
    if (mask->size() != q2.dim(0))
      throw DimensionError("question_summary: mask length mismatch");
    std::vector<double> mv(mask->values().begin(), mask->values().end());
    col_mask = Tensor::from({q2.dim(0), 1}, std::move(mv));
  }
  const Tensor gamma = softmax(tape, scores, 0, mask ? &col_mask : nullptr);
  return {matmul(tape, transpose(tape, gamma), q2), gamma};
}

}  // namespace slqa
