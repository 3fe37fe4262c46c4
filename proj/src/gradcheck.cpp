#include "hitrans/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "hitrans/errors.hpp"

namespace hitrans {

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, Real eps,
                           std::size_t samples, Rng& rng) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ConfigError("grad_check eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
  }
  if (params.empty()) throw ContractError("grad_check needs at least one parameter");

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor loss = f();
  if (loss.numel() != 1) throw ContractError("grad_check objective must be scalar");
  {
    NoGradGuard no_grad;
    if (f().item() != loss.item()) {
      throw ContractError("grad_check objective is not deterministic (is dropout active?)");
    }
  }
  backward(loss);

  std::vector<std::vector<Real>> analytic;
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<Real>(p.grad().begin(), p.grad().end())
                                       : std::vector<Real>(p.numel(), 0.0));
    total += p.numel();
    cumulative.push_back(total);
  }

  auto evaluate = [&] {
    NoGradGuard no_grad;
    return f().item();
  };

  GradCheckResult result;
  result.samples = samples;
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t flat = pick(rng);
    const std::size_t which =
        static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), flat) -
                                 cumulative.begin());
    const std::size_t index = flat - (which == 0 ? 0 : cumulative[which - 1]);
    auto data = params[which].mutable_data();
    const Real saved = data[index];
    data[index] = saved + eps;
    const Real up = evaluate();
    data[index] = saved - eps;
    const Real down = evaluate();
    data[index] = saved;

    const Real numeric = (up - down) / (2.0 * eps);
    const Real a = analytic[which][index];
    const Real rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
    if (rel > result.max_rel_error || s == 0) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      result.worst_param = which;
      result.worst_index = index;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace hitrans
