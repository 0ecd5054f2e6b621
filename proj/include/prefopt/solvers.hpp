#pragma once

/**
 * solvers.hpp - Closed-form optimal policies
 *
 * Exact minimizers of the reward-plus-KL objective and of the preference
 * objective over independently drawn chosen/rejected marginals, plus the
 * implied pairwise reward of a marginal pair. All solutions are computed in
 * log space with per-row max subtraction.
 */

#include <cmath>
#include <cstddef>
#include <vector>

#include "core.hpp"
#include "losses.hpp"

namespace prefopt::solvers {

using losses::BetaParam;

/**
 * Chosen/rejected marginals of a preference dataset whose pairs are drawn
 * independently. Both sides must have full support.
 */
struct MarginalPair {
  CategoricalConditional chosen;
  CategoricalConditional rejected;

  static MarginalPair of(CategoricalConditional chosen, CategoricalConditional rejected) {
    require(chosen.prompts() == rejected.prompts() &&
                chosen.responses() == rejected.responses(),
            "MarginalPair: shape mismatch");
    if (!chosen.full_support || !rejected.full_support)
      throw support_violation_error("MarginalPair: marginals must have full support");
    return MarginalPair{std::move(chosen), std::move(rejected)};
  }

  std::size_t prompts() const { return chosen.prompts(); }
  std::size_t responses() const { return chosen.responses(); }
};

namespace detail {

/** Row-softmax of a score table. */
inline CategoricalConditional softmax_of_scores(Matrix scores) {
  Matrix out(scores.rows, scores.cols);
  for (std::size_t x = 0; x < scores.rows; ++x)
    softmax_row_gauge_fixed(scores.row(x), out.row(x), scores.cols);
  return CategoricalConditional::from_probs(std::move(out));
}

}  // namespace detail

/**
 * Exact minimizer of -E[reward] + beta * KL(pi || ref), as a logit table:
 *   logits(x, y) = log ref(y | x) + reward(x, y) / beta, gauge-centered.
 * The logit form is exact even where the probabilities underflow.
 */
inline TabularPolicy rlhf_optimal_logits(const CategoricalConditional& ref,
                                         const RewardTable& reward, BetaParam beta) {
  require(ref.prompts() == reward.prompts() && ref.responses() == reward.responses(),
          "rlhf_optimal_logits: shape mismatch");
  if (!ref.full_support)
    throw support_violation_error("rlhf_optimal_logits: reference must have full support");
  Matrix scores(ref.prompts(), ref.responses());
  for (std::size_t x = 0; x < ref.prompts(); ++x)
    for (std::size_t y = 0; y < ref.responses(); ++y)
      scores(x, y) = std::log(ref.probs(x, y)) + reward.values(x, y) / beta.value;
  return gauge_center(TabularPolicy::from_logits(std::move(scores)));
}

/** Probability table of rlhf_optimal_logits. */
inline CategoricalConditional rlhf_optimal_policy(const CategoricalConditional& ref,
                                                  const RewardTable& reward, BetaParam beta) {
  return detail::softmax_of_scores(rlhf_optimal_logits(ref, reward, beta).logits);
}

/**
 * Exact minimizer of the preference objective over pairs drawn independently
 * from the marginal pair, as a logit table:
 *   logits(x, y) = log ref(y|x) + (log chosen(y|x) - log rejected(y|x)) / beta,
 * gauge-centered. Holds for any marginals, whether or not a Bradley-Terry law
 * produced them.
 */
inline TabularPolicy dpo_optimal_logits(const CategoricalConditional& ref,
                                        const MarginalPair& marginals, BetaParam beta) {
  require(ref.prompts() == marginals.prompts() && ref.responses() == marginals.responses(),
          "dpo_optimal_logits: shape mismatch");
  if (!ref.full_support)
    throw support_violation_error("dpo_optimal_logits: reference must have full support");
  Matrix scores(ref.prompts(), ref.responses());
  for (std::size_t x = 0; x < ref.prompts(); ++x)
    for (std::size_t y = 0; y < ref.responses(); ++y)
      scores(x, y) = std::log(ref.probs(x, y)) +
                     (std::log(marginals.chosen.probs(x, y)) -
                      std::log(marginals.rejected.probs(x, y))) /
                         beta.value;
  return gauge_center(TabularPolicy::from_logits(std::move(scores)));
}

/** Probability table of dpo_optimal_logits. */
inline CategoricalConditional dpo_optimal_policy(const CategoricalConditional& ref,
                                                 const MarginalPair& marginals,
                                                 BetaParam beta) {
  return detail::softmax_of_scores(dpo_optimal_logits(ref, marginals, beta).logits);
}

/**
 * Implied pairwise reward of a marginal pair: r(x, y) = log(chosen/rejected).
 * Its Bradley-Terry law equals the probability that y1 appears as the chosen
 * side given the unordered pair {y1, y2} was drawn from the marginals.
 */
inline RewardTable implied_reward(const MarginalPair& marginals) {
  Matrix out(marginals.prompts(), marginals.responses());
  for (std::size_t x = 0; x < marginals.prompts(); ++x)
    for (std::size_t y = 0; y < marginals.responses(); ++y)
      out(x, y) = std::log(marginals.chosen.probs(x, y)) -
                  std::log(marginals.rejected.probs(x, y));
  return RewardTable::from_values(std::move(out));
}

}  // namespace prefopt::solvers
