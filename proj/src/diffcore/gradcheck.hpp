#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffcore/tensor.hpp"

namespace pf::diff {

struct GradCheckEntry {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> flagged;  // entries exceeding tol
  std::string summary() const;
};

// Central-difference audit of analytic gradients. `fn` must deterministically
// rebuild a scalar loss from the current values of `inputs` (it is re-run
// 2 x numel times). Entries where both analytic and numeric gradients are
// below `zero_floor` are compared absolutely instead of relatively.
GradCheckReport finite_diff_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                                  double step = 1e-4, double tol = 1e-3,
                                  double zero_floor = 1e-6);

}  // namespace pf::diff
