#pragma once

#include <cstdint>

#include "hgd/efficientfcn.hpp"
#include "hgd/fpn.hpp"
#include "hgd/gradcheck.hpp"

// Tiny network configurations shared by the gradcheck command and the tests.
namespace hgd::suites {

/// Backbone 4/4/6/6, n = 4, codeword_dim = guidance = 6, compressed = 3, 3 classes.
seg::SegModelConfig tiny_seg_model();

/// channels = 4, n = 3, c = 5, k = 2, shared parameters.
fpn::FpnConfig tiny_fpn_config();

/// Cross-entropy through backbone, decoder and classifier on a random image
/// of size x size with random labels (some ignored).
GradcheckReport gradcheck_efficientfcn_tiny(std::uint64_t seed, const GradcheckOptions& options,
                                            std::size_t size = 32);

/// A fixed random linear read-out of every output level after k stages on a
/// random 16x16 .. 1x1 pyramid. Raw fusion scalars start at random positive values.
GradcheckReport gradcheck_hgd_fpn_tiny(std::uint64_t seed, const GradcheckOptions& options,
                                       const fpn::FpnConfig& config = tiny_fpn_config());

}  // namespace hgd::suites
