#include "diffcore/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace pf::diff {

AdamState::AdamState(std::vector<Tensor> params, double lr, double beta1, double beta2,
                     double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamState::step() {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    auto g = p.grad();
    if (g.empty())
      throw std::runtime_error("adam_step: missing grad for parameter '" + p.name() + "'");
    auto vals = p.mutable_values();
    double* m = m_[pi].data();
    double* v = v_[pi].data();
    int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      double gi = g[static_cast<size_t>(i)];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      vals[static_cast<size_t>(i)] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace pf::diff
