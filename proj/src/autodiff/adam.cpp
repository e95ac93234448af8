#include "routelab/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace routelab::ad {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
  : params_(std::move(params)), config_(config)
{
    for (Parameter* p : params_) {
        if (!p) throw std::invalid_argument("Adam: null parameter");
        if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
        first_moment_.emplace_back(p->value.shape());
        second_moment_.emplace_back(p->value.shape());
    }
}

void Adam::step()
{
    for (Parameter* p : params_) {
        if (!p->grad.all_finite()) {
            throw std::runtime_error("Adam: non-finite gradient in parameter '" + p->name + "'");
        }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (p.grad.shape() != first_moment_[k].shape()) {
            throw std::logic_error("Adam: parameter '" + p.name + "' changed shape");
        }
        auto w = p.value.data();
        auto g = p.grad.data();
        auto m = first_moment_[k].data();
        auto v = second_moment_[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        }
        p.zero_grad();
    }
}

void Adam::zero_grad()
{
    for (Parameter* p : params_) p->zero_grad();
}

} // namespace routelab::ad
