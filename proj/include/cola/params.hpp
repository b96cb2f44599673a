#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "cola/tensor.hpp"

namespace cola {

// Named trainable parameters plus AdamW moment buffers. Iteration order is
// the sorted name order (std::map), which makes optimizer sweeps and
// checkpoint layout deterministic.
class ParameterSet {
  public:
    // Registers `t` under `name` with requires_grad forced on.
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    const std::map<std::string, Tensor>& all() const { return params_; }
    std::map<std::string, Tensor>& all() { return params_; }

    std::size_t tensor_count() const { return params_.size(); }
    std::size_t scalar_count() const;
    std::uint64_t step() const { return step_; }

    void zero_grad();

    struct Moments {
        std::vector<double> m, v;
    };
    const std::map<std::string, Moments>& moments() const { return moments_; }

  private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Moments> moments_;
    std::uint64_t step_ = 0;

    friend void adamw_step(ParameterSet&, double, double, std::pair<double, double>, double);
};

// Adam update with decoupled weight decay. Every parameter must carry a
// populated gradient; gradients are cleared afterwards and the step counter
// advances.
void adamw_step(ParameterSet& params, double learning_rate, double weight_decay,
                std::pair<double, double> betas = {0.9, 0.999}, double epsilon = 1e-8);

// Compares the analytic gradient of `forward` (rebuilt per call from the
// current parameter values) against central finite differences, coordinate
// by coordinate. Returns the worst relative error with denominator
// max(|analytic|, |numeric|, 1e-8). Evaluates the forward twice up front and
// refuses to proceed if the two values disagree (non-deterministic forward).
double finite_difference_check(ParameterSet& params, const std::function<Tensor()>& forward,
                               double step);

}  // namespace cola
