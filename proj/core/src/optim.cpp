#include "slqa/optim.hpp"

#include <cmath>

#include "slqa/error.hpp"

namespace slqa {

void adamax_step(std::span<double> theta, std::span<const double> grad,
                 AdamaxState& state, double lr, double beta1, double beta2,
                 long t, const std::string& name) {
  if (t < 1) throw ContractError("adamax_step: step index must be >= 1");
  if (state.m.empty()) state.m.assign(theta.size(), 0.0);
  if (state.u.empty()) state.u.assign(theta.size(), 0.0);
  if (state.m.size() != theta.size() || state.u.size() != theta.size())
    throw ContractError("adamax_step: state size mismatch for " + name);
  const double bias_fix = 1.0 - std::pow(beta1, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    if (!std::isfinite(g))
      throw NumericError("adamax_step: non-finite gradient in parameter " +
                         name + " at entry " + std::to_string(i));
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.u[i] = std::max(beta2 * state.u[i], std::abs(g));
    if (state.u[i] == 0.0) continue;
    theta[i] -= (lr / bias_fix) * state.m[i] / state.u[i];
  }
}

void Adamax::step(const std::vector<std::pair<std::string, Tensor>>& params) {
  if (state_.empty()) state_.resize(params.size());
  if (state_.size() != params.size())
    throw ContractError("Adamax: parameter list changed size");
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    adamax_step(p.raw(), p.grad(), state_[i], lr_, beta1_, beta2_, t_,
                params[i].first);
  }
}

double gradient_check(const std::function<Tensor(Tape&)>& build,
                      const std::vector<Tensor>& params, double eps) {
  // Analytic pass.
  std::vector<Tensor> ps = params;
  for (auto& p : ps) p.zero_grad();
  {
    Tape tape;
    Tensor loss = build(tape);
    if (!std::isfinite(loss.at(0)))
      throw NumericError("gradient_check: non-finite loss");
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(ps.size());
  for (auto& p : ps) {
    std::vector<double> g(p.size());
    for (int i = 0; i < p.size(); ++i) g[i] = p.grad_at(i);
    analytic.push_back(std::move(g));
  }

  auto eval = [&]() {
    Tape tape;
    tape.set_recording(false);
    const Tensor loss = build(tape);
    const double v = loss.at(0);
    if (!std::isfinite(v))
      throw NumericError("gradient_check: non-finite loss at shifted point");
    return v;
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    Tensor p = ps[pi];
    auto theta = p.raw();
    for (int i = 0; i < p.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + eps;
      const double up = eval();
      theta[i] = saved - eps;
      const double down = eval();
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-3);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace slqa
