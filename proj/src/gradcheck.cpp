#include "xmsleep/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xmsleep/errors.hpp"

namespace xmsleep::diff {

double grad_check(const std::function<Tensor<double>()>& f,
                  const std::vector<Tensor<double>>& inputs, double step) {
  return grad_check(f, inputs, GradCheckOptions{step, 0, 1e-6});
}

double grad_check(const std::function<Tensor<double>()>& f,
                  const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opt) {
  if (!(opt.step > 0.0)) throw InputError("grad_check: step must be positive");
  auto evaluate = [&f]() {
    const double v = f().item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: function is not finite");
    return v;
  };

  std::vector<Tensor<double>> leaves = inputs;
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> y = f();
  if (!std::isfinite(y.item())) throw EvaluationError("grad_check: function is not finite");
  y.backward();
  const double eps = std::numeric_limits<double>::epsilon();
  const double scale = std::max(1.0, std::abs(y.item()));

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& t : leaves) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.data_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto central = [&](double step) {
        values[i] = saved + step;
        const double fp = evaluate();
        values[i] = saved - step;
        const double fm = evaluate();
        values[i] = saved;
        return (fp - fm) / (2.0 * step);
      };
      double numeric = central(opt.step);
      // Keep the (h, h/2) pair with the smallest disagreement plus roundoff
      // floor: shrinking the step gets past a kink but amplifies roundoff.
      double best = std::numeric_limits<double>::infinity();
      double h = opt.step;
      for (int attempt = 0; attempt < opt.kink_retries; ++attempt) {
        const double full = attempt == 0 ? numeric : central(h);
        const double half = central(h / 2.0);
        const double gap = std::abs(full - half);
        const double score = gap + 16.0 * eps * scale / h;
        if (score < best) {
          best = score;
          numeric = full;
        }
        if (gap <= opt.kink_ratio * (std::abs(full) + std::abs(half))) break;
        h /= 10.0;
      }
      const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace xmsleep::diff
