#pragma once

// Adversarial debiasing objectives. All probability-space losses use the
// cross-entropy f_CE(p, y) = -log max(p[y], eps) with eps = 1e-12; a clamped
// term contributes no gradient and is counted in LossClampCount.

#include <span>
#include <vector>

#include "bssard/autograd.hpp"
#include "bssard/core.hpp"

namespace bssard {

inline constexpr double kProbabilityEps = 1e-12;

/// Discriminator flag targets.
inline constexpr int kUnbiased = 0;
inline constexpr int kBiased = 1;

struct LossWeights {
  double lambda1 = 1.0;  // generator: deception term
  double lambda2 = 1.0;  // discriminator: flag term
  double lambda3 = 1.0;  // discriminator: KL regularizer
};

struct LossBreakdown {
  double gen_cls = 0.0;
  double gen_loc = 0.0;
  double gen_total = 0.0;
  double disc_cls = 0.0;
  double disc_loc = 0.0;
  double disc_kl = 0.0;
  double disc_total = 0.0;
  int clamped = 0;
};

/// Counts log-clamping events across loss evaluations.
struct LossClampCount {
  int count = 0;
};

namespace losses {

template <typename T>
ag::Var<T> cross_entropy(ag::Var<T> p, int target, LossClampCount* clamps = nullptr) {
  bool clipped = false;
  auto out = ag::neg_log_at(p, target, static_cast<T>(kProbabilityEps), &clipped);
  if (clipped && clamps != nullptr) ++clamps->count;
  return out;
}

/// -log p_d^f[unbiased]: the generator wants its sample judged real.
template <typename T>
ag::Var<T> gen_cls_loss(ag::Var<T> p_d_fake, LossClampCount* clamps = nullptr) {
  return cross_entropy(p_d_fake, kUnbiased, clamps);
}

/// 1/2 [f_CE(p_s^f, fake.start) + f_CE(p_e^f, fake.end)].
template <typename T>
ag::Var<T> gen_loc_loss(ag::Var<T> p_s_fake, ag::Var<T> p_e_fake, const Moment& fake,
                        LossClampCount* clamps = nullptr) {
  auto s = cross_entropy(p_s_fake, fake.start, clamps);
  auto e = cross_entropy(p_e_fake, fake.end, clamps);
  return ag::scale(ag::add(s, e), T(0.5));
}

/// L_loc^g + lambda1 * L_cls^g.
template <typename T>
ag::Var<T> gen_total(ag::Var<T> loc, ag::Var<T> cls, double lambda1) {
  return ag::add(loc, ag::scale(cls, static_cast<T>(lambda1)));
}

/// f_CE(p_d^r, unbiased) + f_CE(p_d^f, biased).
template <typename T>
ag::Var<T> disc_cls_loss(ag::Var<T> p_d_real, ag::Var<T> p_d_fake, LossClampCount* clamps = nullptr) {
  return ag::add(cross_entropy(p_d_real, kUnbiased, clamps), cross_entropy(p_d_fake, kBiased, clamps));
}

/// Span cross-entropy of both branches against the real moment.
template <typename T>
ag::Var<T> disc_loc_loss(ag::Var<T> p_s_real, ag::Var<T> p_e_real, ag::Var<T> p_s_fake,
                         ag::Var<T> p_e_fake, const Moment& real, LossClampCount* clamps = nullptr) {
  auto r = ag::add(cross_entropy(p_s_real, real.start, clamps), cross_entropy(p_e_real, real.end, clamps));
  auto f = ag::add(cross_entropy(p_s_fake, real.start, clamps), cross_entropy(p_e_fake, real.end, clamps));
  return ag::scale(ag::add(r, f), T(0.5));
}

/// Real-branch-only span loss (the plain grounding objective).
template <typename T>
ag::Var<T> span_loss(ag::Var<T> p_s, ag::Var<T> p_e, const Moment& real, LossClampCount* clamps = nullptr) {
  return ag::scale(ag::add(cross_entropy(p_s, real.start, clamps), cross_entropy(p_e, real.end, clamps)), T(0.5));
}

/// KL(p_s^r || p_s^f) + KL(p_e^r || p_e^f). The real-branch distributions enter as
/// constants, so no gradient reaches anything upstream of p^r.
template <typename T>
ag::Var<T> kl_regularizer(ag::Var<T> p_s_real, ag::Var<T> p_e_real, ag::Var<T> p_s_fake, ag::Var<T> p_e_fake) {
  const T eps = static_cast<T>(kProbabilityEps);
  return ag::add(ag::kl_from_constant(p_s_real.value(), p_s_fake, eps),
                 ag::kl_from_constant(p_e_real.value(), p_e_fake, eps));
}

/// L_loc^d + lambda2 * L_cls^d + lambda3 * L_kl^d.
template <typename T>
ag::Var<T> disc_total(ag::Var<T> loc, ag::Var<T> cls, ag::Var<T> kl, double lambda2, double lambda3) {
  return ag::add(ag::add(loc, ag::scale(cls, static_cast<T>(lambda2))), ag::scale(kl, static_cast<T>(lambda3)));
}

// Plain-valued evaluations for reporting and tests.
double gen_cls_loss(std::span<const double> p_d_fake);
double gen_loc_loss(std::span<const double> p_s_fake, std::span<const double> p_e_fake, const Moment& fake);
double gen_total(double loc, double cls, double lambda1);
double disc_cls_loss(std::span<const double> p_d_real, std::span<const double> p_d_fake);
double disc_loc_loss(std::span<const double> p_s_real, std::span<const double> p_e_real,
                     std::span<const double> p_s_fake, std::span<const double> p_e_fake, const Moment& real);
double kl_regularizer(std::span<const double> p_s_real, std::span<const double> p_e_real,
                      std::span<const double> p_s_fake, std::span<const double> p_e_fake);
double disc_total(double loc, double cls, double kl, double lambda2, double lambda3);

}  // namespace losses
}  // namespace bssard
