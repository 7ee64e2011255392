#include "fpb/nn.hpp"

#include <cmath>

namespace fpb {

std::int64_t ParamTable::count(const std::string& prefix) const {
  std::int64_t total = 0;
  for (const auto& p : params_)
    if (p.name.compare(0, prefix.size(), prefix) == 0) total += p.var->numel();
  return total;
}

void ParamTable::zero_grad() const {
  for (const auto& p : params_) p.var->zero_grad();
}

Tensor he_normal(Shape shape, std::int64_t fan, std::mt19937_64& rng) {
  return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<real>(fan)));
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int pad, std::mt19937_64& rng)
    : weight_(he_normal({out, in, kernel, kernel}, out * kernel * kernel, rng), true), stride_(stride), pad_(pad) {}

BatchNorm::BatchNorm(std::int64_t channels, bool learn_shift)
    : gamma_(Tensor({channels}, 1), true), stats_{Tensor({channels}, 0), Tensor({channels}, 1)} {
  if (learn_shift) beta_ = Var(Tensor({channels}, 0), true);
}

Var BatchNorm::forward(const Var& x, bool training) {
  return ops::batch_norm(x, gamma_, beta_, stats_, training, kMomentum, kEps);
}

void BatchNorm::collect(ParamTable& table, const std::string& prefix) {
  table.add_param(join_name(prefix, "weight"), gamma_);
  if (beta_.defined()) table.add_param(join_name(prefix, "bias"), beta_);
  table.add_buffer(join_name(prefix, "running_mean"), stats_.mean);
  table.add_buffer(join_name(prefix, "running_var"), stats_.var);
}

ConvBn::ConvBn(std::int64_t in, std::int64_t out, int kernel, int stride, int pad, bool relu, std::mt19937_64& rng)
    : conv_(in, out, kernel, stride, pad, rng), bn_(out), relu_(relu) {}

Var ConvBn::forward(const Var& x, bool training) {
  Var y = bn_.forward(conv_.forward(x), training);
  return relu_ ? ops::relu(y) : y;
}

void ConvBn::collect(ParamTable& table, const std::string& prefix) {
  conv_.collect(table, join_name(prefix, "conv"));
  bn_.collect(table, join_name(prefix, "bn"));
}

Linear::Linear(std::int64_t in, std::int64_t out, bool bias, real init_std, std::mt19937_64& rng)
    : weight_(Tensor::randn({out, in}, rng, init_std), true) {
  if (bias) bias_ = Var(Tensor({out}, 0), true);
}

void Linear::collect(ParamTable& table, const std::string& prefix) {
  table.add_param(join_name(prefix, "weight"), weight_);
  if (bias_.defined()) table.add_param(join_name(prefix, "bias"), bias_);
}

}  // namespace fpb
