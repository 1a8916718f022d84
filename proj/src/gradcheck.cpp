#include "hgd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace hgd {
namespace {

double evaluate(const LossBuilder& build, const GraphOptions& options) {
  GraphOptions opts = options;
  opts.check_finite = false;
  Graph<double> g(opts);
  const double loss = build(g).value()[0];
  if (!std::isfinite(loss)) throw GradcheckAborted("loss is not finite");
  return loss;
}

std::vector<std::size_t> pick_elements(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size <= limit) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

const ParamCheck* GradcheckReport::worst() const {
  const ParamCheck* out = nullptr;
  for (const auto& p : params) {
    if (!out || p.max_rel_error > out->max_rel_error) out = &p;
  }
  return out;
}

std::string GradcheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& p : params) {
    os << (p.passed ? "ok   " : "FAIL ") << p.name << "  checked=" << p.checked
       << "  max_rel=" << p.max_rel_error << "  max_abs=" << p.max_abs_error
       << "  scale=" << p.grad_scale << '\n';
  }
  return os.str();
}

GradcheckReport gradcheck(const LossBuilder& build,
                          const std::vector<NamedParam<double>>& params,
                          const GradcheckOptions& options) {
  for (const auto& p : params) {
    p.tensor->set_requires_grad(true);
    p.tensor->clear_grad();
  }
  double loss_value = 0;
  {
    Graph<double> g(options.graph);
    Var<double> loss = build(g);
    loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) throw GradcheckAborted("loss is not finite");
    g.backward(loss);
  }
  // Below this a central difference cannot be told apart from rounding noise.
  const double floor = std::max(
      options.zero_floor, options.noise_factor * std::numeric_limits<double>::epsilon() *
                              std::max(1.0, std::abs(loss_value)) / options.step);

  std::mt19937_64 rng(options.seed);
  GradcheckReport report;
  report.passed = true;
  for (const auto& p : params) {
    Tensor<double>& t = *p.tensor;
    ParamCheck check;
    check.name = p.name;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    double scale = 0;
    for (std::size_t i : pick_elements(t.size(), options.max_elements, rng)) {
      const double saved = t[i];
      t[i] = saved + options.step;
      const double up = evaluate(build, options.graph);
      t[i] = saved - options.step;
      const double down = evaluate(build, options.graph);
      t[i] = saved;
      const double numeric = (up - down) / (2 * options.step);
      check.max_abs_error = std::max(check.max_abs_error, std::abs(analytic[i] - numeric));
      check.grad_scale = std::max(check.grad_scale, std::abs(analytic[i]));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
      ++check.checked;
    }
    if (scale < floor) {
      check.max_rel_error = 0;
    } else {
      check.max_rel_error = check.max_abs_error / scale;
    }
    check.passed = check.max_rel_error <= options.tol;
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace hgd
