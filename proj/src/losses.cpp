#include "fpb/losses.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "fpb/ops.hpp"

namespace fpb {

void LossConfig::validate() const {
  if (alpha < 0) throw std::invalid_argument("loss: alpha must be >= 0");
  if (margin < 0) throw std::invalid_argument("loss: margin must be >= 0");
  if (label_smoothing < 0 || label_smoothing >= 1) throw std::invalid_argument("loss: label_smoothing must be in [0,1)");
}

namespace {
std::string describe(const std::string& component, real value) {
  std::ostringstream os;
  os << "non-finite loss component '" << component << "' (" << value << ")";
  return os.str();
}
}  // namespace

NonFiniteLoss::NonFiniteLoss(const std::string& component, real value)
    : std::runtime_error(describe(component, value)), component_(component) {}

Var triplet_feature(const Var& f_g, const std::vector<Var>& f_p) {
  std::vector<Var> parts{f_g};
  for (const auto& p : f_p) {
    if (!p.defined()) throw std::invalid_argument("triplet_feature: missing part feature");
    parts.push_back(p);
  }
  return ops::concat(parts, 1);
}

Var batch_hard_triplet(const Var& features, const std::vector<int>& labels, real margin) {
  if (features.value().rank() != 2) throw std::invalid_argument("batch_hard_triplet: expected [B,D] features");
  const std::int64_t b = features.dim(0), d = features.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) throw std::invalid_argument("batch_hard_triplet: label count");
  if (b < 4) throw std::invalid_argument("batch_hard_triplet: batch needs at least 4 samples");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  for (const auto& [label, n] : counts)
    if (n < 2)
      throw std::invalid_argument("batch_hard_triplet: identity " + std::to_string(label) +
                                  " has a single instance in the batch");
  if (counts.size() < 2) throw std::invalid_argument("batch_hard_triplet: batch needs at least two identities");

  const real* x = features.value().data();
  std::vector<real> dist(static_cast<std::size_t>(b * b));
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < b; ++j) {
      real s = 0;
      for (std::int64_t k = 0; k < d; ++k) {
        const real diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      dist[i * b + j] = std::sqrt(std::max(s, real(1e-12)));
    }

  struct Hardest {
    std::int64_t pos, neg;
    bool active;
  };
  std::vector<Hardest> hardest(static_cast<std::size_t>(b));
  real loss = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    std::int64_t pos = -1, neg = -1;
    for (std::int64_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (pos < 0 || dist[i * b + j] > dist[i * b + pos]) pos = j;
      } else if (neg < 0 || dist[i * b + j] < dist[i * b + neg]) {
        neg = j;
      }
    }
    const real value = dist[i * b + pos] - dist[i * b + neg] + margin;
    hardest[i] = {pos, neg, value > 0};
    if (value > 0) loss += value;
  }
  loss /= static_cast<real>(b);

  return make_op_result(Tensor({1}, loss), {features}, [hardest, dist = std::move(dist), b, d](Node& self) {
    const real* x = self.inputs[0]->value.data();
    real* g = self.inputs[0]->grad_buffer().data();
    const real scale = self.grad[0] / static_cast<real>(b);
    auto push = [&](std::int64_t i, std::int64_t j, real sign) {
      const real dij = dist[i * b + j];
      if (dij <= 1e-6) return;  // clamped region, zero gradient
      for (std::int64_t k = 0; k < d; ++k) {
        const real u = sign * scale * (x[i * d + k] - x[j * d + k]) / dij;
        g[i * d + k] += u;
        g[j * d + k] -= u;
      }
    };
    for (std::int64_t i = 0; i < b; ++i) {
      if (!hardest[i].active) continue;
      push(i, hardest[i].pos, 1);
      push(i, hardest[i].neg, -1);
    }
  });
}

Var ce_head(const Var& logits, const std::vector<int>& labels, real epsilon) {
  if (logits.value().rank() != 2) throw std::invalid_argument("ce_head: expected [B,K] logits");
  const std::int64_t b = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) throw std::invalid_argument("ce_head: label count mismatch");
  if (epsilon < 0 || epsilon >= 1) throw std::invalid_argument("ce_head: label smoothing must be in [0,1)");
  for (int l : labels)
    if (l < 0 || l >= k)
      throw std::invalid_argument("ce_head: label " + std::to_string(l) + " out of range for " + std::to_string(k) +
                                  " classes");
  Tensor probs({b, k});
  real loss = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    const real* z = logits.value().data() + i * k;
    real mx = -std::numeric_limits<real>::infinity();
    for (std::int64_t c = 0; c < k; ++c) mx = std::max(mx, z[c]);
    real s = 0;
    for (std::int64_t c = 0; c < k; ++c) s += std::exp(z[c] - mx);
    const real log_z = mx + std::log(s);
    for (std::int64_t c = 0; c < k; ++c) {
      const real logp = z[c] - log_z;
      probs[i * k + c] = std::exp(logp);
      const real target = (c == labels[i] ? 1 - epsilon : 0) + epsilon / static_cast<real>(k);
      loss -= target * logp;
    }
  }
  loss /= static_cast<real>(b);
  return make_op_result(Tensor({1}, loss), {logits}, [probs = std::move(probs), labels, b, k, epsilon](Node& self) {
    real* g = self.inputs[0]->grad_buffer().data();
    const real scale = self.grad[0] / static_cast<real>(b);
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t c = 0; c < k; ++c) {
        const real target = (c == labels[i] ? 1 - epsilon : 0) + epsilon / static_cast<real>(k);
        g[i * k + c] += scale * (probs[i * k + c] - target);
      }
  });
}

TotalLoss total_loss(const Var& triplet_features, const Var& global_logits, const std::vector<Var>& part_logits,
                     const Var& cor, const std::vector<int>& labels, const LossConfig& cfg) {
  cfg.validate();
  auto check = [](const std::string& name, const Var& v) {
    if (!std::isfinite(v.item())) throw NonFiniteLoss(name, v.item());
  };
  TotalLoss out;
  Var triplet = batch_hard_triplet(triplet_features, labels, cfg.margin);
  check("triplet", triplet);
  Var ce_global = ce_head(global_logits, labels, cfg.label_smoothing);
  check("ce_global", ce_global);
  out.breakdown.triplet = triplet.item();
  out.breakdown.ce_global = ce_global.item();

  Var total = ops::add(ops::scale(triplet, cfg.alpha), ce_global);
  for (std::size_t n = 0; n < part_logits.size(); ++n) {
    Var ce = ce_head(part_logits[n], labels, cfg.label_smoothing);
    check("ce_part" + std::to_string(n + 1), ce);
    out.breakdown.ce_parts.push_back(ce.item());
    total = ops::add(total, ce);
  }
  if (cor.defined()) {
    check("cor", cor);
    out.breakdown.cor = cor.item();
    total = ops::add(total, cor);
  }
  check("total", total);
  out.breakdown.total = total.item();
  out.total = total;
  return out;
}

}  // namespace fpb
