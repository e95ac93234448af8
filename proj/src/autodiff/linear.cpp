#include "routelab/autodiff/linear.hpp"

#include <cmath>

namespace routelab::ad {

Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng)
{
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * rng.normal();
    return t;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng)
  : weight(name + ".weight", gaussian_tensor(Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng))
{
    if (with_bias) bias.emplace(name + ".bias", Tensor(Shape{1, out}));
}

Var Linear::operator()(Tape& tape, const Var& x)
{
    Var y = matmul(x, tape.param(weight));
    if (bias) y = add(y, tape.param(*bias));
    return y;
}

void Linear::collect(std::vector<Parameter*>& out)
{
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
}

} // namespace routelab::ad
