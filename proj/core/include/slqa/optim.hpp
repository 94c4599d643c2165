#pragma once

#include <functional>
#include <string>
#include <vector>

#include "slqa/tensor.hpp"

namespace slqa {

// Per-parameter AdaMax state: first moment m and infinity-norm u.
struct AdamaxState {
  std::vector<double> m, u;
};

// One AdaMax update on a single parameter:
//   m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);
//   theta <- theta - lr/(1-b1^t) * m/u,  entries with u == 0 are skipped.
// Throws NumericError (naming `name`) on a non-finite gradient.
void adamax_step(std::span<double> theta, std::span<const double> grad,
                 AdamaxState& state, double lr, double beta1, double beta2,
                 long t, const std::string& name);

// Convenience driver over a named parameter list; reads gradients from the
// tensors' grad buffers (absent buffers count as zero gradients).
class Adamax {
 public:
  Adamax(double lr, double beta1 = 0.9, double beta2 = 0.999)
      : lr_(lr), beta1_(beta1), beta2_(beta2) {}

  void step(const std::vector<std::pair<std::string, Tensor>>& params);
  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_;
  long t_ = 0;
  std::vector<AdamaxState> state_;
};

// Central finite differences against the analytic gradients of `params`.
//
// `build` must construct the scalar loss on the given tape from the current
// parameter values, deterministically (dropout off, any rng re-seeded per
// call). Returns the worst relative error over every parameter entry, with
//   rel = |analytic - numeric| / max(|analytic| + |numeric|, 1e-3)
// (the floor keeps finite-difference noise on near-zero gradients from
// registering as large relative errors).
double gradient_check(const std::function<Tensor(Tape&)>& build,
                      const std::vector<Tensor>& params, double eps = 1e-5);

}  // namespace slqa
