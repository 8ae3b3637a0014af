#include "oat/lbp.hpp"

#include <cmath>

namespace oat {

LbpImage lbp_reconstruct(const ForwardOperator& nominal_op, const Sinogram& sinogram) {
  LbpImage out;
  out.image = apply_adjoint(nominal_op, sinogram);
  double max_abs = 0.0;
  for (double v : out.image.data) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs > 0.0) {
    for (double& v : out.image.data) v /= max_abs;
    out.scale = max_abs;
  }
  return out;
}

}  // namespace oat
