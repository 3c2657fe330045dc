#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wtpose/graph.hpp"

namespace wtpose {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many
  // coordinates per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

// Builds a scalar loss. The tensors under test must be registered inside
// with g.parameter(...) so that gradients land in their grad buffers.
using LossBuilder = std::function<NodeId(Graph<double>&)>;

// Compares reverse-mode gradients against central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h. Error per coordinate is
// |analytic - numeric| / max(1, |numeric|); the maximum is reported.
// Tensors in `wrt` are perturbed in place and restored.
GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Tensor<double>* const> wrt,
                                  const GradCheckOptions& options = {});

// Single-input form: f maps the node holding x to a scalar node.
double finite_diff_check(const std::function<NodeId(Graph<double>&, NodeId)>& f, const Tensor<double>& x,
                         double step = 1e-5);

}  // namespace wtpose
