#pragma once

#include <vector>

#include "slqa/rng.hpp"
#include "slqa/tensor.hpp"

namespace slqa {

// Differentiable primitives. Every op validates shapes, computes its value
// eagerly, and (when any input requires grad) records an exact backward
// rule on the tape. Inputs are never modified.

// Standard matrix product, rank-2 only.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor transpose(Tape& tape, const Tensor& x);

// Same-shape elementwise arithmetic.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

// Sum of any number of same-shape tensors.
Tensor add_n(Tape& tape, const std::vector<Tensor>& xs);

// y[t,:] = x[t,:] + b  (b is 1xd)
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& b);
// y[t,:] = x[t,:] * s[t]  (s is Tx1)
Tensor scale_rows(Tape& tape, const Tensor& x, const Tensor& s);
// y[t,k] = x[t,k] * w[k]  (w has d entries)
Tensor scale_cols(Tape& tape, const Tensor& x, const Tensor& w);
// y = x * s  (s is 1x1)
Tensor scale_all(Tape& tape, const Tensor& x, const Tensor& s);
// y = x * k for a plain constant k (not a tensor)
Tensor scale_const(Tape& tape, const Tensor& x, double k);

// S[i,j] = a[i] + b[j]  (a is nx1, b is mx1)
Tensor add_outer(Tape& tape, const Tensor& a, const Tensor& b);

Tensor tanh(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
// relu'(0) is taken as 0.
Tensor relu(Tape& tape, const Tensor& x);

// Concatenation along the last axis; all inputs agree on the other axis.
Tensor concat(Tape& tape, const std::vector<Tensor>& xs);
// Stack rank-2 blocks on top of each other (equal column counts).
Tensor vstack(Tape& tape, const std::vector<Tensor>& xs);
// One row of a rank-2 tensor, as 1xd.
Tensor row(Tape& tape, const Tensor& x, int r);
// Single entry as a 1x1 tensor.
Tensor pick(Tape& tape, const Tensor& x, int r, int c);

// Softmax along `axis` (0 = down columns, 1 = across rows; rank-1 uses 0).
// `mask`, when given, has the same shape; entries with mask==0 are excluded
// from the normalization and receive output (and gradient) exactly 0.
// A fully masked fiber is a degenerate-input error. Numerically stabilized
// by max subtraction.
Tensor softmax(Tape& tape, const Tensor& x, int axis,
               const Tensor* mask = nullptr);

// Inverted dropout: in training mode kept entries are scaled by 1/(1-rate)
// so evaluation is the identity. rate must be in [0,1).
Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training,
               Rng& rng);

// y = log(max(x, floor)); gradient is 0 wherever the floor clips.
Tensor log_floor(Tape& tape, const Tensor& x, double floor = 1e-12);

// Scalar sum of all entries.
Tensor sum(Tape& tape, const Tensor& x);

// Row gather from an embedding matrix. Gradients are scattered into rows
// of `table` only when the table is trainable, except the OOV row, which
// always trains. ids must be in [0, table rows).
Tensor embed_rows(Tape& tape, const Tensor& table, const std::vector<int>& ids,
                  int oov_id, bool table_trainable);

// One direction of an LSTM. Weight layout packs the four gates in the
// order [input, forget, candidate, output].
struct LstmParams {
  Tensor w_x;   // 4h x d
  Tensor w_h;   // 4h x h
  Tensor bias;  // 1 x 4h

  int hidden() const { return w_h.dim(1); }
  int input_dim() const { return w_x.dim(1); }
};

// Runs an LSTM over the rows of x (T x d) with zero initial state and
// returns the hidden states (T x h) at the consumed positions. With
// reverse=true the scan runs right-to-left; output row t is still the
// state after consuming row t. Backward is exact BPTT through all gates.
Tensor lstm_seq(Tape& tape, const Tensor& x, const LstmParams& p,
                bool reverse);

// Left-to-right and right-to-left passes concatenated per timestep (T x 2h).
Tensor bilstm(Tape& tape, const Tensor& x, const LstmParams& fwd,
              const LstmParams& bwd);

}  // namespace slqa
