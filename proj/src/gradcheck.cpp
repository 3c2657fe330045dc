#include "wtpose/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace wtpose {
namespace {

double evaluate(const LossBuilder& loss) {
  Graph<double> g(false);
  return g.value(loss(g))[0];
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Tensor<double>* const> wrt,
                                  const GradCheckOptions& options) {
  for (Tensor<double>* t : wrt) t->zero_grad();
  {
    Graph<double> g(true);
    g.backward(loss(g));
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor<double>* t : wrt) {
    auto gr = t->grad();
    analytic.emplace_back(gr.begin(), gr.end());
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor<double>& t = *wrt[ti];
    for (std::size_t i : pick_coords(t.numel(), options.max_coords_per_tensor, rng)) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = evaluate(loss);
      t[i] = saved - h;
      const double down = evaluate(loss);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[ti][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coords_checked;
      if (err > report.max_rel_error || std::isnan(err)) {
        report.max_rel_error = err;
        report.worst_tensor = ti;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

double finite_diff_check(const std::function<NodeId(Graph<double>&, NodeId)>& f, const Tensor<double>& x,
                         double step) {
  Tensor<double> local = x;
  Tensor<double>* ptr = &local;
  const LossBuilder loss = [&](Graph<double>& g) { return f(g, g.parameter(local)); };
  return finite_diff_check(loss, std::span<Tensor<double>* const>(&ptr, 1), {.step = step}).max_rel_error;
}

}  // namespace wtpose
