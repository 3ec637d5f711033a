#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string_view>

namespace kge {

enum class LossKind { margin, softplus };

std::string_view to_string(LossKind k);
std::optional<LossKind> parse_loss_kind(std::string_view s);

struct LossSpec {
  LossKind kind = LossKind::margin;
  double margin = 1.0;  // hinge width for LossKind::margin
  double lambda = 0.0;  // L2 weight on touched rows for LossKind::softplus
};

// ln(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// 1 / (1 + e^-x) without overflow.
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Summed loss over aligned positive/negative scores (higher score = more
// plausible). margin: sum max(0, margin - pos + neg). softplus: sum
// softplus(-pos) + softplus(neg) + lambda * touched_sq_norm.
double loss(const LossSpec& spec, std::span<const double> pos, std::span<const double> neg,
            double touched_sq_norm = 0.0);

}  // namespace kge
