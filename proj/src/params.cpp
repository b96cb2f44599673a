#include "cola/params.hpp"

#include <cmath>

namespace cola {

Tensor& ParameterSet::add(const std::string& name, Tensor t) {
    if (params_.count(name)) throw ConfigError("parameter '" + name + "' already registered");
    t.node()->requires_grad = true;
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void adamw_step(ParameterSet& params, double learning_rate, double weight_decay,
                std::pair<double, double> betas, double epsilon) {
    if (learning_rate <= 0) throw ConfigError("adamw_step: learning rate must be positive");
    if (weight_decay < 0) throw ConfigError("adamw_step: weight decay must be non-negative");
    const auto [b1, b2] = betas;
    if (b1 <= 0 || b1 >= 1 || b2 <= 0 || b2 >= 1)
        throw ConfigError("adamw_step: betas must lie in (0,1)");
    if (epsilon <= 0) throw ConfigError("adamw_step: epsilon must be positive");

    for (const auto& [name, t] : params.params_) {
        if (!t.has_grad())
            throw ContractError("adamw_step: parameter '" + name + "' has no gradient");
    }

    params.step_ += 1;
    const double t_step = double(params.step_);
    const double bc1 = 1.0 - std::pow(b1, t_step);
    const double bc2 = 1.0 - std::pow(b2, t_step);

    for (auto& [name, p] : params.params_) {
        auto& mom = params.moments_[name];
        if (mom.m.size() != p.size()) {
            mom.m.assign(p.size(), 0.0);
            mom.v.assign(p.size(), 0.0);
        }
        const auto& g = p.grad();
        auto& val = p.mutable_values();
        for (std::size_t i = 0; i < val.size(); ++i) {
            mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g[i];
            mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            // Decoupled decay: the shrink term bypasses the adaptive scaling.
            val[i] -= learning_rate * (mhat / (std::sqrt(vhat) + epsilon) + weight_decay * val[i]);
        }
        p.zero_grad();
    }
}

namespace {
double eval_scalar(const std::function<Tensor()>& forward) {
    NoGradGuard ng;
    Tensor t = forward();
    return t.item();
}
}  // namespace

double finite_difference_check(ParameterSet& params, const std::function<Tensor()>& forward,
                               double step) {
    if (step <= 0) throw ConfigError("finite_difference_check: step must be positive");

    const double base1 = eval_scalar(forward);
    const double base2 = eval_scalar(forward);
    if (base1 != base2)
        throw ContractError("finite_difference_check: forward is non-deterministic (" +
                            std::to_string(base1) + " vs " + std::to_string(base2) + ")");

    params.zero_grad();
    Tensor loss = forward();
    backward(loss);

    // Snapshot analytic gradients before perturbing anything.
    std::map<std::string, std::vector<double>> analytic;
    for (const auto& [name, t] : params.all()) {
        analytic[name] = t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0);
    }

    double worst = 0.0;
    for (auto& [name, t] : params.all()) {
        auto& vals = t.mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + step;
            const double up = eval_scalar(forward);
            vals[i] = keep - step;
            const double dn = eval_scalar(forward);
            vals[i] = keep;
            const double numeric = (up - dn) / (2.0 * step);
            const double a = analytic[name][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    params.zero_grad();
    return worst;
}

}  // namespace cola
