#pragma once

#include <string>
#include <vector>

#include "oat/forward_model.hpp"

namespace oat {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Numerical self-checks runnable on any install: forward/adjoint pairing,
/// analytic gradients against finite differences, exhaustive mask semantics,
/// SNR calibration and metric sanity. All deterministic.
std::vector<CheckResult> run_selftest(int threads = 1);

/// Worst relative adjoint defect |<Ax,y> - <x,A'y>| / (|Ax||y|) over n_pairs
/// random vector pairs; exposed separately so corrupted operators can be
/// probed directly.
double adjoint_defect(const ForwardOperator& op, int n_pairs, std::uint64_t seed);

}  // namespace oat
