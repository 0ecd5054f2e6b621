#pragma once

/**
 * losses.hpp - Objectives and exact gradients
 *
 * Supervised, preference (DPO-style), and reward-plus-KL (RLHF-style)
 * objectives over tabular policies, each paired with its exact analytic
 * gradient with respect to the policy logits, evaluated by exhaustive
 * summation. Also: the implicit pairwise reward, the population functional
 * derivative of the preference loss, the score-function identity residual,
 * and the policy-sampled objective built from an implied reward (in its two
 * algebraically equal forms).
 *
 * Gradient conventions:
 *   - Gradients are tables over (prompt, response) logits.
 *   - The preference-loss gradient is computed through the pair margin, in
 *     which the per-prompt log-partition cancels; a response appearing in no
 *     pair for its prompt therefore receives an exact 0.0 gradient entry.
 */

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "core.hpp"

namespace prefopt::losses {

// ============================================================================
// Parameters and datasets
// ============================================================================

/** Inverse KL-strength of preference objectives. Must be positive. */
struct BetaParam {
  double value = 0.5;

  explicit BetaParam(double v) : value(v) {
    require(std::isfinite(v) && v > 0.0, "BetaParam: beta must be positive and finite");
  }

  /** Values above 1 are legal but atypical; callers may want to warn. */
  bool above_one() const { return value > 1.0; }
};

/** Weighted supervised dataset: (prompt, response) items, weights sum to 1. */
struct SupervisedSet {
  struct Item {
    std::size_t prompt = 0;
    std::size_t response = 0;
    double weight = 0.0;
  };

  std::vector<Item> items;
  std::size_t prompts = 0;
  std::size_t responses = 0;

  static SupervisedSet normalized(std::vector<Item> items, std::size_t prompts,
                                  std::size_t responses) {
    require(!items.empty(), "SupervisedSet: dataset must not be empty");
    double total = 0.0;
    for (const Item& it : items) {
      require(it.prompt < prompts, "SupervisedSet: prompt index out of range");
      require(it.response < responses, "SupervisedSet: response index out of range");
      require(std::isfinite(it.weight) && it.weight >= 0.0,
              "SupervisedSet: weights must be finite and nonnegative");
      total += it.weight;
    }
    require(total > 0.0, "SupervisedSet: weights must not all be zero");
    for (Item& it : items) it.weight /= total;
    return SupervisedSet{std::move(items), prompts, responses};
  }
};

/** Gradient with respect to policy logits, shaped like the logit table. */
struct GradientTable {
  Matrix values;

  double max_norm() const { return max_abs(values); }
};

namespace detail {

/** log ref(y|x) with a support check naming the calling operation. */
inline double checked_log_ref(const CategoricalConditional& ref, std::size_t x, std::size_t y,
                              const char* op) {
  const double v = ref.probs(x, y);
  if (v < k_support_floor)
    throw support_violation_error(std::string(op) +
                                  ": reference policy lacks support at a referenced item");
  return std::log(v);
}

inline void check_same_shape(const TabularPolicy& policy, const CategoricalConditional& ref,
                             const char* op) {
  require(policy.prompts() == ref.prompts() && policy.responses() == ref.responses(),
          std::string(op) + ": policy/reference shape mismatch");
}

}  // namespace detail

// ============================================================================
// Supervised objective
// ============================================================================

/** Weighted negative log-likelihood: -sum_i w_i log pi(y_i | x_i). */
inline double sft_loss(const TabularPolicy& policy, const SupervisedSet& data) {
  require(policy.prompts() == data.prompts && policy.responses() == data.responses,
          "sft_loss: policy/dataset shape mismatch");
  const Matrix logp = policy_log_probs(policy);
  double loss = 0.0;
  for (const auto& it : data.items) loss -= it.weight * logp(it.prompt, it.response);
  return loss;
}

/**
 * Exact logit gradient of sft_loss. Each item contributes
 * w * (pi(. | x) - onehot(y)) to its prompt row.
 */
inline GradientTable sft_gradient(const TabularPolicy& policy, const SupervisedSet& data) {
  require(policy.prompts() == data.prompts && policy.responses() == data.responses,
          "sft_gradient: policy/dataset shape mismatch");
  const CategoricalConditional probs = policy_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  // Per-prompt total item weight and per-cell observed mass.
  std::vector<double> prompt_mass(p, 0.0);
  Matrix observed(p, r, 0.0);
  for (const auto& it : data.items) {
    prompt_mass[it.prompt] += it.weight;
    observed(it.prompt, it.response) += it.weight;
  }
  Matrix g(p, r, 0.0);
  for (std::size_t x = 0; x < p; ++x)
    for (std::size_t y = 0; y < r; ++y)
      g(x, y) = prompt_mass[x] * probs.probs(x, y) - observed(x, y);
  return GradientTable{std::move(g)};
}

// ============================================================================
// Implicit reward and the preference objective
// ============================================================================

/**
 * Implicit pairwise reward beta * log(pi(y|x) / ref(y|x)) over the full
 * table. Requires a full-support reference.
 */
inline RewardTable implicit_reward(const TabularPolicy& policy,
                                   const CategoricalConditional& ref, BetaParam beta) {
  detail::check_same_shape(policy, ref, "implicit_reward");
  if (!ref.full_support)
    throw support_violation_error("implicit_reward: reference must have full support");
  const Matrix logp = policy_log_probs(policy);
  Matrix out(policy.prompts(), policy.responses());
  for (std::size_t x = 0; x < policy.prompts(); ++x)
    for (std::size_t y = 0; y < policy.responses(); ++y)
      out(x, y) = beta.value * (logp(x, y) - std::log(ref.probs(x, y)));
  return RewardTable::from_values(std::move(out));
}

namespace detail {

/**
 * Pair margin beta * [(z_w - log ref_w) - (z_l - log ref_l)] computed from
 * raw logits: the per-prompt log-partition cancels between the two sides, so
 * the value (and hence the loss) does not depend on any other logit.
 */
inline double pair_margin(const TabularPolicy& policy, const CategoricalConditional& ref,
                          std::size_t x, std::size_t w, std::size_t l, double beta,
                          const char* op) {
  const double fw = policy.logits(x, w) - checked_log_ref(ref, x, w, op);
  const double fl = policy.logits(x, l) - checked_log_ref(ref, x, l, op);
  return beta * (fw - fl);
}

}  // namespace detail

/**
 * Preference objective: -sum_i w_i log sigmoid(margin_i), where margin_i is
 * the implicit-reward difference between chosen and rejected.
 */
inline double dpo_loss(const TabularPolicy& policy, const CategoricalConditional& ref,
                       const PreferencePairSet& data, BetaParam beta) {
  require(policy.prompts() == data.prompts && policy.responses() == data.responses,
          "dpo_loss: policy/dataset shape mismatch");
  detail::check_same_shape(policy, ref, "dpo_loss");
  double loss = 0.0;
  for (const auto& it : data.items) {
    const double m = detail::pair_margin(policy, ref, it.prompt, it.chosen, it.rejected,
                                         beta.value, "dpo_loss");
    loss -= it.weight * log_sigmoid(m);
  }
  return loss;
}

/**
 * Exact logit gradient of dpo_loss. Each item adds
 *   -w * beta * sigmoid(-margin) at the chosen logit and
 *   +w * beta * sigmoid(-margin) at the rejected logit;
 * every logit uncovered by the dataset keeps an exact 0.0 entry, and each
 * prompt row sums to zero.
 */
inline GradientTable dpo_gradient(const TabularPolicy& policy, const CategoricalConditional& ref,
                                  const PreferencePairSet& data, BetaParam beta) {
  require(policy.prompts() == data.prompts && policy.responses() == data.responses,
          "dpo_gradient: policy/dataset shape mismatch");
  detail::check_same_shape(policy, ref, "dpo_gradient");
  Matrix g(policy.prompts(), policy.responses(), 0.0);
  for (const auto& it : data.items) {
    const double m = detail::pair_margin(policy, ref, it.prompt, it.chosen, it.rejected,
                                         beta.value, "dpo_gradient");
    const double coef = it.weight * beta.value * sigmoid(-m);
    g(it.prompt, it.chosen) -= coef;
    g(it.prompt, it.rejected) += coef;
  }
  return GradientTable{std::move(g)};
}

// ============================================================================
// Reward-plus-KL objective
// ============================================================================

/** -E[reward] + beta * KL(pi || ref), expectations exhausting the space. */
inline double rlhf_objective(const TabularPolicy& policy, const CategoricalConditional& ref,
                             const RewardTable& reward, const PromptSpace& prompts,
                             BetaParam beta) {
  detail::check_same_shape(policy, ref, "rlhf_objective");
  const CategoricalConditional probs = policy_probs(policy);
  const double er = expected_reward(probs, reward, prompts);
  const double kl = kl_divergence(probs, ref, prompts).total;
  return -er + beta.value * kl;
}

/**
 * Exact logit gradient of rlhf_objective:
 *   w_x * pi_y * [ -(r_y - E_pi r) + beta * (s_y - KL_x) ],  s = log(pi/ref).
 */
inline GradientTable rlhf_gradient(const TabularPolicy& policy, const CategoricalConditional& ref,
                                   const RewardTable& reward, const PromptSpace& prompts,
                                   BetaParam beta) {
  detail::check_same_shape(policy, ref, "rlhf_gradient");
  require(prompts.size() == policy.prompts(), "rlhf_gradient: prompt space mismatch");
  const CategoricalConditional probs = policy_probs(policy);
  const Matrix logp = policy_log_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  Matrix g(p, r, 0.0);
  for (std::size_t x = 0; x < p; ++x) {
    double mean_r = 0.0, kl = 0.0;
    std::vector<double> s(r);
    for (std::size_t y = 0; y < r; ++y) {
      s[y] = logp(x, y) - detail::checked_log_ref(ref, x, y, "rlhf_gradient");
      mean_r += probs.probs(x, y) * reward.values(x, y);
      kl += probs.probs(x, y) * s[y];
    }
    for (std::size_t y = 0; y < r; ++y)
      g(x, y) = prompts.weights[x] * probs.probs(x, y) *
                (-(reward.values(x, y) - mean_r) + beta.value * (s[y] - kl));
  }
  return GradientTable{std::move(g)};
}

// ============================================================================
// KL gradient, two routes
// ============================================================================

/**
 * Exact logit gradient of KL(pi || ref) weighted by prompt probabilities,
 * from direct softmax differentiation: w_x * pi_y * (s_y - KL_x).
 */
inline GradientTable kl_gradient(const TabularPolicy& policy, const CategoricalConditional& ref,
                                 const PromptSpace& prompts) {
  detail::check_same_shape(policy, ref, "kl_gradient");
  require(prompts.size() == policy.prompts(), "kl_gradient: prompt space mismatch");
  const CategoricalConditional probs = policy_probs(policy);
  const Matrix logp = policy_log_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  Matrix g(p, r, 0.0);
  for (std::size_t x = 0; x < p; ++x) {
    double kl = 0.0;
    std::vector<double> s(r);
    for (std::size_t y = 0; y < r; ++y) {
      s[y] = logp(x, y) - detail::checked_log_ref(ref, x, y, "kl_gradient");
      kl += probs.probs(x, y) * s[y];
    }
    for (std::size_t y = 0; y < r; ++y)
      g(x, y) = prompts.weights[x] * probs.probs(x, y) * (s[y] - kl);
  }
  return GradientTable{std::move(g)};
}

/**
 * The same KL gradient through the score-weighted identity
 *   grad = E_{y' ~ pi}[ s(y') * grad log pi(y') ],
 * summed exhaustively over y'. Used to cross-check kl_gradient; the two
 * routes agree analytically and to ~1e-10 in floating point.
 */
inline GradientTable kl_gradient_score_form(const TabularPolicy& policy,
                                            const CategoricalConditional& ref,
                                            const PromptSpace& prompts) {
  detail::check_same_shape(policy, ref, "kl_gradient_score_form");
  require(prompts.size() == policy.prompts(), "kl_gradient_score_form: prompt space mismatch");
  const CategoricalConditional probs = policy_probs(policy);
  const Matrix logp = policy_log_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  Matrix g(p, r, 0.0);
  for (std::size_t x = 0; x < p; ++x) {
    std::vector<double> s(r);
    for (std::size_t y = 0; y < r; ++y)
      s[y] = logp(x, y) - detail::checked_log_ref(ref, x, y, "kl_gradient_score_form");
    for (std::size_t y = 0; y < r; ++y) {
      double acc = 0.0;
      for (std::size_t yp = 0; yp < r; ++yp) {
        const double dlog = (yp == y ? 1.0 : 0.0) - probs.probs(x, y);
        acc += probs.probs(x, yp) * s[yp] * dlog;
      }
      g(x, y) = prompts.weights[x] * acc;
    }
  }
  return GradientTable{std::move(g)};
}

// ============================================================================
// Score-function identity
// ============================================================================

/**
 * Max-norm of E_{x, y ~ pi}[ grad log pi(y | x) ], evaluated literally
 * (without algebraic simplification). Analytically zero; the returned value
 * is the floating-point residual of the identity.
 */
inline double score_identity_residual(const TabularPolicy& policy, const PromptSpace& prompts) {
  require(prompts.size() == policy.prompts(), "score_identity_residual: prompt space mismatch");
  const CategoricalConditional probs = policy_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  double worst = 0.0;
  for (std::size_t x = 0; x < p; ++x)
    for (std::size_t y = 0; y < r; ++y) {
      double acc = 0.0;
      for (std::size_t yp = 0; yp < r; ++yp) {
        const double dlog = (yp == y ? 1.0 : 0.0) - probs.probs(x, y);
        acc += probs.probs(x, yp) * dlog;
      }
      worst = std::max(worst, std::abs(prompts.weights[x] * acc));
    }
  return worst;
}

// ============================================================================
// Population functional derivative of the preference loss
// ============================================================================

/** Averaged preference tables entering the functional derivative. */
struct AveragedPreferences {
  Matrix p_true;    // mean oracle win probability of y against Y2 ~ du | (x, y)
  Matrix p_model;   // same under the implicit-reward Bradley-Terry model
  Matrix marginal;  // joint first-slot mass: w_x * sum_y2 q(y, y2 | x)
};

/**
 * Conditional averaged preferences of each response against the symmetrized
 * pair law, under the oracle and under the policy's implicit-reward model.
 * Rows outside the pair law's support get zeros in all three tables.
 */
inline AveragedPreferences averaged_preferences(const TabularPolicy& policy,
                                                const CategoricalConditional& ref,
                                                const PairDistribution& du,
                                                const PreferenceOracle& oracle,
                                                const PromptSpace& prompts, BetaParam beta) {
  detail::check_same_shape(policy, ref, "averaged_preferences");
  require(du.prompts() == policy.prompts() && du.responses() == policy.responses(),
          "averaged_preferences: pair distribution shape mismatch");
  require(oracle.prompts() == policy.prompts() && oracle.responses() == policy.responses(),
          "averaged_preferences: oracle shape mismatch");
  require(prompts.size() == policy.prompts(), "averaged_preferences: prompt space mismatch");
  const Matrix logp = policy_log_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  AveragedPreferences out{Matrix(p, r, 0.0), Matrix(p, r, 0.0), Matrix(p, r, 0.0)};
  std::vector<double> f(r);
  for (std::size_t x = 0; x < p; ++x) {
    for (std::size_t y = 0; y < r; ++y)
      f[y] = logp(x, y) - detail::checked_log_ref(ref, x, y, "averaged_preferences");
    const Matrix q = du.symmetrized(x);
    for (std::size_t y = 0; y < r; ++y) {
      double mass = 0.0, acc_true = 0.0, acc_model = 0.0;
      for (std::size_t y2 = 0; y2 < r; ++y2) {
        const double qv = q(y, y2);
        if (qv == 0.0) continue;
        mass += qv;
        acc_true += qv * oracle.preference(x, y, y2);
        acc_model += qv * sigmoid(beta.value * (f[y] - f[y2]));
      }
      out.marginal(x, y) = prompts.weights[x] * mass;
      if (mass > 0.0) {
        out.p_true(x, y) = acc_true / mass;
        out.p_model(x, y) = acc_model / mass;
      }
    }
  }
  return out;
}

/**
 * Closed-form functional derivative of the population preference loss with
 * respect to the relative logit at each (x, y):
 *   g(x, y) = -2 beta * w_x * sum_{y2} q(y, y2 | x)
 *               * [ P(y beats y2 | x) - P_model(y beats y2 | x) ],
 * with q the symmetrized pair law and P_model the implicit-reward
 * Bradley-Terry law. Responses with no pair mass get exactly 0.
 */
inline Matrix functional_derivative(const TabularPolicy& policy,
                                    const CategoricalConditional& ref,
                                    const PairDistribution& du, const PreferenceOracle& oracle,
                                    const PromptSpace& prompts, BetaParam beta) {
  detail::check_same_shape(policy, ref, "functional_derivative");
  require(du.prompts() == policy.prompts() && du.responses() == policy.responses(),
          "functional_derivative: pair distribution shape mismatch");
  require(oracle.prompts() == policy.prompts() && oracle.responses() == policy.responses(),
          "functional_derivative: oracle shape mismatch");
  require(prompts.size() == policy.prompts(), "functional_derivative: prompt space mismatch");
  const Matrix logp = policy_log_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  Matrix g(p, r, 0.0);
  std::vector<double> f(r);
  for (std::size_t x = 0; x < p; ++x) {
    for (std::size_t y = 0; y < r; ++y)
      f[y] = logp(x, y) - detail::checked_log_ref(ref, x, y, "functional_derivative");
    const Matrix q = du.symmetrized(x);
    for (std::size_t y = 0; y < r; ++y) {
      double acc = 0.0;
      for (std::size_t y2 = 0; y2 < r; ++y2) {
        const double qv = q(y, y2);
        if (qv == 0.0) continue;
        acc += qv * (oracle.preference(x, y, y2) - sigmoid(beta.value * (f[y] - f[y2])));
      }
      g(x, y) = -2.0 * beta.value * prompts.weights[x] * acc;
    }
  }
  return g;
}

// ============================================================================
// Policy-sampled objective from an implied reward
// ============================================================================

/** Which algebraic form of the implied-reward objective to evaluate. */
enum class ImpliedRewardForm {
  reward_form,         // -E_{y ~ pi}[ log(chosen(y)/rejected(y)) ] + beta KL(pi || ref)
  kl_difference_form,  // KL(pi || chosen) - KL(pi || rejected) + beta KL(pi || ref)
};

/**
 * Objective of a policy scored by the implied reward log(chosen/rejected) of
 * a marginal pair, with a KL anchor to the reference. The two forms are
 * algebraically identical; both are exposed so their agreement can be
 * verified numerically. All three conditionals must have full support.
 */
inline double implied_reward_objective(const TabularPolicy& policy,
                                       const CategoricalConditional& ref,
                                       const CategoricalConditional& chosen,
                                       const CategoricalConditional& rejected,
                                       const PromptSpace& prompts, BetaParam beta,
                                       ImpliedRewardForm form) {
  detail::check_same_shape(policy, ref, "implied_reward_objective");
  require(chosen.prompts() == policy.prompts() && chosen.responses() == policy.responses() &&
              rejected.prompts() == policy.prompts() &&
              rejected.responses() == policy.responses(),
          "implied_reward_objective: marginal shape mismatch");
  if (!chosen.full_support || !rejected.full_support)
    throw support_violation_error(
        "implied_reward_objective: marginals must have full support");
  const CategoricalConditional probs = policy_probs(policy);
  if (form == ImpliedRewardForm::kl_difference_form) {
    const double a = kl_divergence(probs, chosen, prompts).total;
    const double b = kl_divergence(probs, rejected, prompts).total;
    const double anchor = kl_divergence(probs, ref, prompts).total;
    return a - b + beta.value * anchor;
  }
  double mean_ratio = 0.0;
  for (std::size_t x = 0; x < policy.prompts(); ++x) {
    double row = 0.0;
    for (std::size_t y = 0; y < policy.responses(); ++y)
      row += probs.probs(x, y) *
             (std::log(chosen.probs(x, y)) - std::log(rejected.probs(x, y)));
    mean_ratio += prompts.weights[x] * row;
  }
  const double anchor = kl_divergence(probs, ref, prompts).total;
  return -mean_ratio + beta.value * anchor;
}

// ============================================================================
// Online preference objective (rejected responses from the current policy)
// ============================================================================

/**
 * Preference loss over the exact product law: chosen from a fixed marginal,
 * rejected from the current policy itself. Identical draws (chosen ==
 * rejected) are part of the law and contribute log 2 each.
 */
inline double online_dpo_loss(const TabularPolicy& policy, const CategoricalConditional& ref,
                              const CategoricalConditional& chosen_marginal,
                              const PromptSpace& prompts, BetaParam beta) {
  detail::check_same_shape(policy, ref, "online_dpo_loss");
  require(chosen_marginal.prompts() == policy.prompts() &&
              chosen_marginal.responses() == policy.responses(),
          "online_dpo_loss: chosen marginal shape mismatch");
  require(prompts.size() == policy.prompts(), "online_dpo_loss: prompt space mismatch");
  const CategoricalConditional probs = policy_probs(policy);
  const Matrix logp = policy_log_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  std::vector<double> f(r);
  double loss = 0.0;
  for (std::size_t x = 0; x < p; ++x) {
    for (std::size_t y = 0; y < r; ++y)
      f[y] = logp(x, y) - detail::checked_log_ref(ref, x, y, "online_dpo_loss");
    double row = 0.0;
    for (std::size_t a = 0; a < r; ++a) {
      const double wa = chosen_marginal.probs(x, a);
      if (wa == 0.0) continue;
      for (std::size_t b = 0; b < r; ++b) {
        const double wb = probs.probs(x, b);
        if (wb == 0.0) continue;
        row -= wa * wb * log_sigmoid(beta.value * (f[a] - f[b]));
      }
    }
    loss += prompts.weights[x] * row;
  }
  return loss;
}

/**
 * Gradient of the online preference loss at the current policy, treating the
 * rejected-side sampling distribution as data (no gradient flows through it):
 * the product law is rebuilt from the current policy, then differentiated as
 * a fixed dataset. Identical draws contribute zero and are skipped.
 */
inline GradientTable online_dpo_gradient(const TabularPolicy& policy,
                                         const CategoricalConditional& ref,
                                         const CategoricalConditional& chosen_marginal,
                                         const PromptSpace& prompts, BetaParam beta) {
  detail::check_same_shape(policy, ref, "online_dpo_gradient");
  require(chosen_marginal.prompts() == policy.prompts() &&
              chosen_marginal.responses() == policy.responses(),
          "online_dpo_gradient: chosen marginal shape mismatch");
  require(prompts.size() == policy.prompts(), "online_dpo_gradient: prompt space mismatch");
  const CategoricalConditional probs = policy_probs(policy);
  const Matrix logp = policy_log_probs(policy);
  const std::size_t p = policy.prompts(), r = policy.responses();
  Matrix g(p, r, 0.0);
  std::vector<double> f(r);
  for (std::size_t x = 0; x < p; ++x) {
    for (std::size_t y = 0; y < r; ++y)
      f[y] = logp(x, y) - detail::checked_log_ref(ref, x, y, "online_dpo_gradient");
    const double wx = prompts.weights[x];
    for (std::size_t a = 0; a < r; ++a) {
      const double wa = chosen_marginal.probs(x, a);
      if (wa == 0.0) continue;
      for (std::size_t b = 0; b < r; ++b) {
        if (b == a) continue;  // equal-pair terms have an exactly zero gradient
        const double wb = probs.probs(x, b);
        if (wb == 0.0) continue;
        const double coef =
            wx * wa * wb * beta.value * sigmoid(-beta.value * (f[a] - f[b]));
        g(x, a) -= coef;
        g(x, b) += coef;
      }
    }
  }
  return GradientTable{std::move(g)};
}

}  // namespace prefopt::losses
