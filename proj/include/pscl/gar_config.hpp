#pragma once

#include <cstdint>
#include <string>

#include "pscl/errors.hpp"

namespace pscl {

// Loss shape and weighting: np parents, ks softmax duplicates per parent,
// weights for affinity / (1 - balance) / squared Frobenius norm, and the
// denominator guard epsilon.
struct GarConfig {
  std::int64_t np = 1;
  std::int64_t ks = 1;
  double c_alpha = 0.1;
  double c_beta = 1.0;
  double c_frob = 1e-6;
  double eps = 1e-8;

  void validate() const {
    if (np < 1 || ks < 1) throw config_error("gar: np and ks must be >= 1");
    if (c_alpha < 0 || c_beta < 0 || c_frob < 0) throw config_error("gar: loss weights must be >= 0");
    if (!(eps > 0)) throw config_error("gar: eps must be > 0");
  }
};

}  // namespace pscl
