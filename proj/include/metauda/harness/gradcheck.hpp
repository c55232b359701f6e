// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode gradients of every training loss against central finite
// differences, on a toy detector small enough to difference exhaustively.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace metauda::harness {

struct GradCheck {
  std::string name;
  std::size_t parameters = 0;
  double relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return relative_error < tolerance; }
};

/// L_det, L_img, L_inst, L_uda and the exact meta-gradient for both inner
/// styles. Proposal boxes are held fixed while differencing.
std::vector<GradCheck> run_grad_checks(std::uint64_t seed);

}  // namespace metauda::harness
