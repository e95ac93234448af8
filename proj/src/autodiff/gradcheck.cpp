#include "routelab/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace routelab::ad {

GradCheckResult check_gradients(const std::vector<Parameter*>& params,
                                const std::function<Var(Tape&)>& build_loss, double step)
{
    for (Parameter* p : params) p->grad = Tensor(p->value.shape());
    {
        Tape tape;
        tape.backward(build_loss(tape));
    }
    auto eval = [&] {
        Tape tape;
        return build_loss(tape).value().item();
    };

    GradCheckResult result;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + step;
            const double up = eval();
            p->value[i] = saved - step;
            const double down = eval();
            p->value[i] = saved;

            const double numeric = (up - down) / (2.0 * step);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            const double rel = std::abs(numeric - analytic) / denom;
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p->name;
                result.worst_index = i;
            }
        }
        p->zero_grad();
    }
    return result;
}

} // namespace routelab::ad
