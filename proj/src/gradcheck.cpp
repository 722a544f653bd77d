#include "signformer/gradcheck.hpp"

#include <cmath>

#include "signformer/ops.hpp"
#include "signformer/rng.hpp"

namespace signformer {

namespace {

double weighted_sum(const Tensor& out, const std::vector<float>& weights) {
  check(out.size() == weights.size(), "grad_check: output shape changed between calls");
  double acc = 0.0;
  auto od = out.data();
  for (std::size_t i = 0; i < weights.size(); ++i)
    acc += static_cast<double>(od[i]) * weights[i];
  return acc;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, float h, double tol,
                           uint64_t weight_seed) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }

  Tensor probe = f(inputs);
  Rng wrng(weight_seed);
  std::vector<float> weights(probe.size());
  for (auto& w : weights) w = wrng.uniform(-1.0f, 1.0f);

  // analytic gradients
  std::vector<std::vector<float>> analytic(inputs.size());
  {
    Tape tape;
    Tensor out = f(inputs);
    Tensor w = Tensor::from_data(out.shape(), weights);
    Tensor loss = sum(mul(out, w));
    tape.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto g = inputs[i].grad();
      analytic[i].assign(g.begin(), g.end());
    }
  }

  GradCheckReport report;
  report.max_rel_err.assign(inputs.size(), 0.0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].data_mut();
    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t e = 0; e < data.size(); ++e) {
      const float keep = data[e];
      data[e] = keep + h;
      const double up = weighted_sum(f(inputs), weights);
      data[e] = keep - h;
      const double down = weighted_sum(f(inputs), weights);
      data[e] = keep;
      const double numeric = (up - down) / (2.0 * static_cast<double>(h));
      const double a = analytic[i][e];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_mag = std::max({max_mag, std::abs(a), std::abs(numeric)});
    }
    report.max_rel_err[i] = max_diff / std::max(1.0, max_mag);
    report.worst = std::max(report.worst, report.max_rel_err[i]);
  }
  report.pass = report.worst <= tol;
  for (auto& in : inputs) in.zero_grad();
  return report;
}

}  // namespace signformer
