#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgd/graph.hpp"

namespace hgd {

/// Thrown when the loss becomes non-finite while probing a parameter.
class GradcheckAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradcheckOptions {
  double step = 1e-6;
  double tol = 1e-5;
  /// Tensors larger than this are checked on a seeded random subset.
  std::size_t max_elements = 256;
  std::uint64_t seed = 0;
  /// Gradient scales below this are treated as zero (both sides must be).
  double zero_floor = 1e-12;
  /// The floor is raised to noise_factor * eps * max(1, |loss|) / step, the
  /// rounding error of a central difference on a loss of that size.
  double noise_factor = 100;
  GraphOptions graph;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_abs_error = 0;
  double grad_scale = 0;  // max |analytic| over the checked elements
  /// max_i |analytic_i - numeric_i| / max_i max(|analytic_i|, |numeric_i|)
  double max_rel_error = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<ParamCheck> params;
  bool passed = false;

  const ParamCheck* worst() const;
  std::string to_string() const;
};

/// Builds a scalar loss on a fresh graph from the current parameter values.
using LossBuilder = std::function<Var<double>(Graph<double>&)>;

/// Compares reverse-mode gradients against central differences
/// (f(p + h) - f(p - h)) / 2h for each listed parameter.
///
/// The relative error of a parameter tensor is normalised by the largest
/// gradient magnitude in that tensor, so entries that are tiny compared with
/// their siblings are judged on an absolute scale. A tensor whose analytic and
/// numeric gradients both stay under the floor passes trivially.
GradcheckReport gradcheck(const LossBuilder& build,
                          const std::vector<NamedParam<double>>& params,
                          const GradcheckOptions& options = {});

}  // namespace hgd
