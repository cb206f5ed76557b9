#pragma once

#include <cstdint>
#include <vector>

#include "diffcore/tensor.hpp"

namespace pf::diff {

// Bias-corrected Adam over an explicit parameter list. Moment buffers are
// positional: re-create the state whenever the parameter set changes
// (e.g. after a grid upsample), which also resets the moments as required.
class AdamState {
 public:
  AdamState(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t step_count() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }

  // One update. Every parameter must carry a grad from the current backward
  // pass (materialize_grad() for parameters outside the active graph).
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
};

}  // namespace pf::diff
