#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace wtpose {

enum class GradScope { primitive, attention, wtb, wtm, full };

std::optional<GradScope> parse_grad_scope(const std::string& s);

struct SuiteResult {
  std::string component;
  double max_error = 0.0;
  double threshold = 0.0;
  std::size_t coords = 0;

  bool pass() const { return max_error < threshold; }
};

// Finite-difference suites in 64-bit on small random fixtures.
//   primitive  every differentiable op on 3 shapes each (< 1e-6)
//   attention  neighborhood attention core and full layer (< 1e-6)
//   wtb        one waterfall block (< 1e-4)
//   wtm        whole module, minimal config (< 1e-4)
//   full       all of the above plus head+loss (< 1e-5), backbone and model (< 1e-4)
std::vector<SuiteResult> run_gradcheck_suite(GradScope scope, std::uint64_t seed = 7);

}  // namespace wtpose
