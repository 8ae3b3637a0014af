#pragma once

#include "oat/forward_model.hpp"

namespace oat {

/// Back-projected first image estimate. `scale` is the max-abs value divided
/// out during normalization; multiplying by it restores the raw adjoint
/// output. Negative values are preserved, the network gets them as-is.
struct LbpImage {
  Image image;
  double scale = 1.0;
};

/// Applies the transpose of the nominal forward model to the sinogram and
/// normalizes to unit max-abs (zero sinograms stay zero with scale 1).
LbpImage lbp_reconstruct(const ForwardOperator& nominal_op, const Sinogram& sinogram);

}  // namespace oat
