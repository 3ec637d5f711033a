#include "kge/loss.hpp"

#include "kge/error.hpp"

namespace kge {

std::string_view to_string(LossKind k) { return k == LossKind::margin ? "margin" : "softplus"; }

std::optional<LossKind> parse_loss_kind(std::string_view s) {
  if (s == "margin") return LossKind::margin;
  if (s == "softplus") return LossKind::softplus;
  return std::nullopt;
}

double loss(const LossSpec& spec, std::span<const double> pos, std::span<const double> neg,
            double touched_sq_norm) {
  if (pos.size() != neg.size()) throw Error("loss: positive and negative scores are not aligned");
  double total = 0;
  if (spec.kind == LossKind::margin) {
    for (std::size_t i = 0; i < pos.size(); ++i)
      total += std::max(0.0, spec.margin - pos[i] + neg[i]);
  } else {
    for (std::size_t i = 0; i < pos.size(); ++i) total += softplus(-pos[i]) + softplus(neg[i]);
    total += spec.lambda * touched_sq_norm;
  }
  return total;
}

}  // namespace kge
