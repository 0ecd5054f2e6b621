#pragma once

/**
 * theory.hpp - Numerical verification of the library's structural claims
 *
 * Five independent checks, each returning a VerificationReport of named
 * measurements with explicit bounds:
 *
 *   coverage         - responses absent from the preference data keep
 *                      bitwise-constant logits and fixed probability ratios
 *                      over a full training run.
 *   sign-agreement   - per response, the sign of (averaged true preference
 *                      minus averaged model preference) matches the sign of
 *                      the negative functional derivative and of the one-step
 *                      logit update, with explicit zero-classification bands.
 *   closed-form      - gradient descent on an exact product preference law
 *                      reaches the analytic optimum; the functional
 *                      derivative vanishes there; on a three-response
 *                      instance no simplex grid point improves on it. Also
 *                      holds when the labels come from a non-Bradley-Terry
 *                      oracle, using the labeled law's own marginals.
 *   loss-identity    - the two algebraic forms of the implied-reward
 *                      objective agree to near machine precision, its
 *                      analytic minimizer dominates random policies, and the
 *                      expected score of every policy is numerically zero.
 *   online-reduction - the gap between the rescaled online preference
 *                      gradient and the cross-entropy-plus-KL gradient
 *                      shrinks linearly in beta, and at small beta the two
 *                      trained optima nearly coincide.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "losses.hpp"
#include "rng.hpp"
#include "solvers.hpp"
#include "trainer.hpp"

namespace prefopt::theory {

using losses::BetaParam;

// ============================================================================
// Reports
// ============================================================================

/** Size, seed, and strength parameters of a verification instance family. */
struct InstanceSpec {
  std::size_t prompts = 4;
  std::size_t responses = 8;
  std::uint64_t seed = 0;
  double beta = 0.5;

  void validate() const {
    require(prompts >= 1, "InstanceSpec: prompts must be at least 1");
    require(responses >= 2, "InstanceSpec: responses must be at least 2");
    require(std::isfinite(beta) && beta > 0.0, "InstanceSpec: beta must be positive");
  }
};

/**
 * One named quantity with the bound it was held to. relation is "<=", ">=",
 * "==", or "info"; info rows never affect the pass flag.
 */
struct Measurement {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  std::string relation = "info";
  bool pass = true;
};

struct VerificationReport {
  std::string check;
  InstanceSpec spec;
  std::vector<Measurement> measurements;
  bool pass = true;

  void add_at_most(const std::string& name, double value, double bound) {
    const bool ok = value <= bound;
    measurements.push_back({name, value, bound, "<=", ok});
    pass = pass && ok;
  }
  void add_at_least(const std::string& name, double value, double bound) {
    const bool ok = value >= bound;
    measurements.push_back({name, value, bound, ">=", ok});
    pass = pass && ok;
  }
  void add_flag(const std::string& name, bool ok) {
    measurements.push_back({name, ok ? 1.0 : 0.0, 1.0, "==", ok});
    pass = pass && ok;
  }
  void add_info(const std::string& name, double value) {
    measurements.push_back({name, value, 0.0, "info", true});
  }
};

namespace detail {

/** Expanded supervised set: every cell (x, y) weighted w_x * target(y|x). */
inline losses::SupervisedSet expand_target(const CategoricalConditional& target,
                                           const PromptSpace& prompts) {
  std::vector<losses::SupervisedSet::Item> items;
  for (std::size_t x = 0; x < target.prompts(); ++x)
    for (std::size_t y = 0; y < target.responses(); ++y)
      if (prompts.weights[x] * target.probs(x, y) > 0.0)
        items.push_back({x, y, prompts.weights[x] * target.probs(x, y)});
  return losses::SupervisedSet::normalized(std::move(items), target.prompts(),
                                           target.responses());
}

/** Exact off-diagonal product preference set of two full-support marginals. */
inline PreferencePairSet product_pair_set(const CategoricalConditional& chosen,
                                          const CategoricalConditional& rejected,
                                          const PromptSpace& prompts) {
  std::vector<PreferencePairSet::Item> items;
  for (std::size_t x = 0; x < chosen.prompts(); ++x)
    for (std::size_t a = 0; a < chosen.responses(); ++a)
      for (std::size_t b = 0; b < chosen.responses(); ++b) {
        if (a == b) continue;
        items.push_back(
            {x, a, b, prompts.weights[x] * chosen.probs(x, a) * rejected.probs(x, b)});
      }
  return PreferencePairSet::normalized(std::move(items),
                                       PreferencePairSet::Mode::exact_distribution,
                                       chosen.prompts(), chosen.responses());
}

/** Marginal laws of the chosen and rejected slots of an exactly labeled pair law. */
inline std::pair<CategoricalConditional, CategoricalConditional> labeled_marginals(
    const PairDistribution& du, const PreferenceOracle& oracle) {
  const std::size_t P = du.prompts(), R = du.responses();
  Matrix chosen(P, R, 0.0), rejected(P, R, 0.0);
  for (std::size_t x = 0; x < P; ++x) {
    const Matrix q = du.symmetrized(x);
    for (std::size_t a = 0; a < R; ++a)
      for (std::size_t b = 0; b < R; ++b) {
        if (a == b) continue;
        const double w = 2.0 * q(a, b) * oracle.preference(x, a, b);
        chosen(x, a) += w;
        rejected(x, b) += w;
      }
    // Renormalize away accumulated rounding so the rows are exact laws.
    double cm = 0.0, rm = 0.0;
    for (std::size_t y = 0; y < R; ++y) {
      cm += chosen(x, y);
      rm += rejected(x, y);
    }
    for (std::size_t y = 0; y < R; ++y) {
      chosen(x, y) /= cm;
      rejected(x, y) /= rm;
    }
  }
  return {CategoricalConditional::from_probs(std::move(chosen)),
          CategoricalConditional::from_probs(std::move(rejected))};
}

inline int sign_class(double value, double tolerance) {
  if (value > tolerance) return 1;
  if (value < -tolerance) return -1;
  return 0;
}

/** Least-squares slope of y against x. */
inline double lsq_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

// ============================================================================
// Coverage: unsupported responses are untouched by training
// ============================================================================

inline VerificationReport verify_coverage(const InstanceSpec& spec, std::size_t seeds = 20,
                                          std::size_t steps = 1000) {
  spec.validate();
  if (spec.responses < 3)
    throw invalid_instance_error(
        "verify_coverage: needs at least 3 responses so the preference data can leave "
        "some uncovered");
  VerificationReport report;
  report.check = "coverage";
  report.spec = spec;

  const std::size_t P = spec.prompts, R = spec.responses;
  const std::size_t covered = std::min(std::max<std::size_t>(2, R / 2), R - 1);

  bool bitwise_ok = true;
  double max_ratio_drift = 0.0;
  double max_prob_drift = 0.0;  // informational: probabilities may drift
  double max_uncovered_grad = 0.0;

  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = Rng(spec.seed).substream(0x636f76ULL + s);
    auto ref = random_full_support_conditional(rng, P, R);
    auto init = random_policy(rng, P, R);

    std::vector<PreferencePairSet::Item> items;
    for (std::size_t x = 0; x < P; ++x)
      for (std::size_t a = 0; a < covered; ++a)
        for (std::size_t b = 0; b < covered; ++b)
          if (a != b) items.push_back({x, a, b, rng.uniform(0.1, 1.0)});
    auto data =
        PreferencePairSet::normalized(std::move(items), PreferencePairSet::Mode::sampled, P, R);

    max_uncovered_grad = std::max(
        max_uncovered_grad,
        [&] {
          auto g = losses::dpo_gradient(init, ref, data, BetaParam(spec.beta));
          double m = 0.0;
          for (std::size_t x = 0; x < P; ++x)
            for (std::size_t y = covered; y < R; ++y) m = std::max(m, std::abs(g.values(x, y)));
          return m;
        }());

    trainer::TrainConfig config;
    config.max_steps = steps;
    config.convergence_tol = 0.0;  // always run the full budget
    config.snapshot_interval = 1;
    auto result = trainer::train_dpo(init, ref, data, BetaParam(spec.beta), config);

    const Matrix& first = result.trace.snapshots.front().logits;
    Matrix first_probs(P, R);
    for (std::size_t x = 0; x < P; ++x) {
      Matrix scratch = first;
      softmax_row_gauge_fixed(scratch.row(x), first_probs.row(x), R);
    }
    for (const auto& snap : result.trace.snapshots) {
      for (std::size_t x = 0; x < P; ++x) {
        for (std::size_t y = covered; y < R; ++y) {
          if (!bitwise_equal_scalar(snap.logits(x, y), first(x, y))) bitwise_ok = false;
        }
        Matrix scratch = snap.logits;
        std::vector<double> probs(R);
        softmax_row_gauge_fixed(scratch.row(x), probs.data(), R);
        for (std::size_t y1 = covered; y1 < R; ++y1) {
          max_prob_drift =
              std::max(max_prob_drift, std::abs(probs[y1] - first_probs(x, y1)));
          for (std::size_t y2 = y1 + 1; y2 < R; ++y2) {
            const double now = probs[y1] / probs[y2];
            const double then = first_probs(x, y1) / first_probs(x, y2);
            max_ratio_drift = std::max(max_ratio_drift, std::abs(now - then) / then);
          }
        }
      }
    }
  }

  report.add_info("seeds", static_cast<double>(seeds));
  report.add_info("steps", static_cast<double>(steps));
  report.add_info("uncovered_responses_per_prompt", static_cast<double>(R - covered));
  report.add_at_most("uncovered_gradient_max", max_uncovered_grad, 0.0);
  report.add_flag("uncovered_logits_bitwise_constant", bitwise_ok);
  report.add_at_most("uncovered_probability_ratio_drift_max", max_ratio_drift, 1e-12);
  report.add_info("uncovered_probability_drift_max", max_prob_drift);
  return report;
}

// ============================================================================
// Sign agreement between preference residual, derivative, and update
// ============================================================================

inline VerificationReport verify_sign_conditions(const InstanceSpec& spec,
                                                 std::size_t instances = 20) {
  spec.validate();
  VerificationReport report;
  report.check = "sign-agreement";
  report.spec = spec;

  const std::size_t P = spec.prompts, R = spec.responses;
  const double lr = 0.5;
  const double residual_tol = 1e-12;

  std::size_t mismatches = 0, zero_cells = 0, signed_cells = 0;

  for (std::size_t k = 0; k < instances; ++k) {
    Rng rng = Rng(spec.seed).substream(0x7369676eULL + k);
    auto policy = random_policy(rng, P, R);
    auto ref = random_full_support_conditional(rng, P, R);
    auto prompts = random_prompt_weights(rng, P);
    auto du = random_pair_density(rng, P, R, /*zero_diagonal=*/true);
    auto oracle = random_explicit_oracle(rng, P, R);
    BetaParam beta(spec.beta);

    auto avg = losses::averaged_preferences(policy, ref, du, oracle, prompts, beta);
    auto g = losses::functional_derivative(policy, ref, du, oracle, prompts, beta);
    const double logit_scale = std::max(1.0, max_abs(policy.logits));

    for (std::size_t x = 0; x < P; ++x)
      for (std::size_t y = 0; y < R; ++y) {
        const double residual = avg.p_true(x, y) - avg.p_model(x, y);
        const double tol_g = 2.0 * beta.value * avg.marginal(x, y) * 1e-12;
        const double tol_dz = std::max(lr * tol_g, 1e-13 * logit_scale);
        const int s_res = detail::sign_class(residual, residual_tol);
        const int s_neg_g = detail::sign_class(-g(x, y), tol_g);
        const int s_dz = detail::sign_class(-lr * g(x, y), tol_dz);
        if (s_res != s_neg_g || s_res != s_dz)
          ++mismatches;
        else if (s_res == 0)
          ++zero_cells;
        else
          ++signed_cells;
      }
  }

  report.add_info("instances", static_cast<double>(instances));
  report.add_info("cells_with_signed_agreement", static_cast<double>(signed_cells));
  report.add_info("cells_classified_zero", static_cast<double>(zero_cells));
  report.add_at_most("sign_mismatch_count", static_cast<double>(mismatches), 0.0);
  report.add_at_least("signed_cell_fraction",
                      static_cast<double>(signed_cells) /
                          std::max<double>(1.0, static_cast<double>(instances * P * R)),
                      0.5);
  return report;
}

// ============================================================================
// Closed form: training reaches it; nothing nearby beats it
// ============================================================================

inline VerificationReport verify_closed_form(const InstanceSpec& spec, std::size_t seeds = 20,
                                             std::size_t nonbt_seeds = 5) {
  spec.validate();
  VerificationReport report;
  report.check = "closed-form";
  report.spec = spec;
  BetaParam beta(spec.beta);

  const std::size_t P = spec.prompts, R = spec.responses;
  double max_tv = 0.0, max_stationarity = 0.0, max_tv_nonbt = 0.0;

  trainer::TrainConfig config;
  // Preference curvature carries beta squared; scale the step to match.
  config.learning_rate = 2.0 / (spec.beta * spec.beta);
  config.max_steps = 200000;

  // Bradley-Terry-free by construction: independently drawn marginals.
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = Rng(spec.seed).substream(0x636c6f73ULL + s);
    auto ref = random_full_support_conditional(rng, P, R);
    auto chosen = random_full_support_conditional(rng, P, R);
    auto rejected = random_full_support_conditional(rng, P, R);
    auto prompts = random_prompt_weights(rng, P);
    auto marginals = solvers::MarginalPair::of(chosen, rejected);

    auto data = detail::product_pair_set(chosen, rejected, prompts);
    auto result = trainer::train_dpo(policy_from_probs(ref), ref, data, beta, config);
    auto optimum = solvers::dpo_optimal_policy(ref, marginals, beta);
    max_tv = std::max(max_tv,
                      max_tv_distance(policy_probs(result.policy).probs, optimum.probs));

    // Stationarity of the analytic optimum under the matching pair law.
    auto du = PairDistribution::independent_product(chosen, rejected);
    auto oracle = PreferenceOracle::bradley_terry(solvers::implied_reward(marginals));
    auto g = losses::functional_derivative(solvers::dpo_optimal_logits(ref, marginals, beta),
                                           ref, du, oracle, prompts, beta);
    max_stationarity = std::max(max_stationarity, max_abs(g));
  }

  // Labels from a non-Bradley-Terry oracle: the optimum is determined by the
  // labeled law's own chosen/rejected marginals, independently re-paired.
  for (std::size_t s = 0; s < nonbt_seeds; ++s) {
    Rng rng = Rng(spec.seed).substream(0x6e626befULL + s);
    auto ref = random_full_support_conditional(rng, P, R);
    auto prompts = random_prompt_weights(rng, P);
    auto du = random_pair_density(rng, P, R, /*zero_diagonal=*/true);
    auto oracle = random_explicit_oracle(rng, P, R);
    auto [chosen, rejected] = detail::labeled_marginals(du, oracle);
    auto marginals = solvers::MarginalPair::of(chosen, rejected);

    auto data = detail::product_pair_set(chosen, rejected, prompts);
    auto result = trainer::train_dpo(policy_from_probs(ref), ref, data, beta, config);
    auto optimum = solvers::dpo_optimal_policy(ref, marginals, beta);
    max_tv_nonbt = std::max(
        max_tv_nonbt, max_tv_distance(policy_probs(result.policy).probs, optimum.probs));
  }

  // Exhaustive grid on a three-response instance. The objective separates
  // across prompts, so each prompt's simplex is scanned independently with
  // the other rows pinned at the optimum.
  double grid_improvement = -1e300;
  {
    Rng rng = Rng(spec.seed).substream(0x67726964ULL);
    const std::size_t GP = 2, GR = 3;
    auto ref = random_full_support_conditional(rng, GP, GR);
    auto chosen = random_full_support_conditional(rng, GP, GR);
    auto rejected = random_full_support_conditional(rng, GP, GR);
    auto prompts = random_prompt_weights(rng, GP);
    auto marginals = solvers::MarginalPair::of(chosen, rejected);
    auto data = detail::product_pair_set(chosen, rejected, prompts);
    auto opt_logits = solvers::dpo_optimal_logits(ref, marginals, beta);
    const double opt_loss = losses::dpo_loss(opt_logits, ref, data, beta);

    for (std::size_t x = 0; x < GP; ++x) {
      TabularPolicy probe = opt_logits;
      for (int i = 0; i <= 100; ++i)
        for (int j = 0; j + i <= 100; ++j) {
          const int k = 100 - i - j;
          const double cells[3] = {i / 100.0, j / 100.0, k / 100.0};
          for (std::size_t y = 0; y < GR; ++y)
            probe.logits(x, y) = std::log(std::max(cells[y], 1e-300));
          const double loss = losses::dpo_loss(probe, ref, data, beta);
          grid_improvement = std::max(grid_improvement, opt_loss - loss);
        }
    }
  }

  report.add_info("seeds", static_cast<double>(seeds));
  report.add_at_most("trained_vs_closed_form_tv_max", max_tv, 1e-3);
  report.add_at_most("functional_derivative_at_optimum_max", max_stationarity, 1e-8);
  report.add_at_most("trained_vs_closed_form_tv_max_non_bradley_terry", max_tv_nonbt, 1e-3);
  report.add_at_most("grid_improvement_over_optimum", grid_improvement, 1e-6);
  return report;
}

// ============================================================================
// Loss identities
// ============================================================================

inline VerificationReport verify_loss_identity(const InstanceSpec& spec,
                                               std::size_t policies = 100,
                                               std::size_t random_challengers = 1000) {
  spec.validate();
  VerificationReport report;
  report.check = "loss-identity";
  report.spec = spec;

  const std::size_t P = spec.prompts, R = spec.responses;
  double max_form_gap = 0.0, max_score_residual = 0.0;

  for (std::size_t k = 0; k < policies; ++k) {
    Rng rng = Rng(spec.seed).substream(0x6964656eULL + k);
    auto policy = random_policy(rng, P, R);
    auto ref = random_full_support_conditional(rng, P, R);
    auto chosen = random_full_support_conditional(rng, P, R);
    auto rejected = random_full_support_conditional(rng, P, R);
    auto prompts = random_prompt_weights(rng, P);
    BetaParam beta(rng.uniform(0.1, 1.5));

    const double a = losses::implied_reward_objective(policy, ref, chosen, rejected, prompts,
                                                      beta,
                                                      losses::ImpliedRewardForm::reward_form);
    const double b = losses::implied_reward_objective(
        policy, ref, chosen, rejected, prompts, beta,
        losses::ImpliedRewardForm::kl_difference_form);
    max_form_gap = std::max(max_form_gap, std::abs(a - b));
    max_score_residual =
        std::max(max_score_residual, losses::score_identity_residual(policy, prompts));
  }

  // The analytic minimizer of the implied-reward objective dominates random
  // policies.
  double min_margin = 1e300;
  {
    Rng rng = Rng(spec.seed).substream(0x646f6d69ULL);
    auto ref = random_full_support_conditional(rng, P, R);
    auto chosen = random_full_support_conditional(rng, P, R);
    auto rejected = random_full_support_conditional(rng, P, R);
    auto prompts = random_prompt_weights(rng, P);
    BetaParam beta(spec.beta);
    auto marginals = solvers::MarginalPair::of(chosen, rejected);
    auto opt = solvers::rlhf_optimal_logits(ref, solvers::implied_reward(marginals), beta);
    const double opt_value = losses::implied_reward_objective(
        opt, ref, chosen, rejected, prompts, beta, losses::ImpliedRewardForm::reward_form);
    for (std::size_t k = 0; k < random_challengers; ++k) {
      auto challenger = random_policy(rng, P, R);
      const double value = losses::implied_reward_objective(
          challenger, ref, chosen, rejected, prompts, beta,
          losses::ImpliedRewardForm::reward_form);
      min_margin = std::min(min_margin, value - opt_value);
    }
  }

  report.add_info("policies", static_cast<double>(policies));
  report.add_at_most("objective_form_gap_max", max_form_gap, 1e-12);
  report.add_at_most("score_identity_residual_max", max_score_residual, 1e-12);
  report.add_at_least("minimizer_margin_over_random_min", min_margin, -1e-12);
  return report;
}

// ============================================================================
// Online preference training reduces to cross-entropy plus KL as beta shrinks
// ============================================================================

inline VerificationReport verify_online_reduction(const InstanceSpec& spec,
                                                  std::size_t policies = 20,
                                                  std::size_t training_seeds = 10) {
  spec.validate();
  VerificationReport report;
  report.check = "online-reduction";
  report.spec = spec;

  const std::size_t P = spec.prompts, R = spec.responses;
  const std::vector<double> betas = {0.2, 0.1, 0.05, 0.025};

  // Matched tuples reused across every beta.
  struct Tuple {
    TabularPolicy policy;
    CategoricalConditional ref, chosen;
    PromptSpace prompts;
  };
  std::vector<Tuple> tuples;
  for (std::size_t k = 0; k < policies; ++k) {
    Rng rng = Rng(spec.seed).substream(0x726564ULL + k);
    tuples.push_back({random_policy(rng, P, R), random_full_support_conditional(rng, P, R),
                      random_full_support_conditional(rng, P, R),
                      random_prompt_weights(rng, P)});
  }

  std::vector<double> mean_gaps;
  for (const double beta : betas) {
    double total = 0.0;
    for (const auto& t : tuples) {
      auto data = detail::expand_target(t.chosen, t.prompts);
      Matrix g_online =
          losses::online_dpo_gradient(t.policy, t.ref, t.chosen, t.prompts, BetaParam(beta))
              .values;
      Matrix g_sft = losses::sft_gradient(t.policy, data).values;
      Matrix g_kl = losses::kl_gradient(t.policy, t.ref, t.prompts).values;
      double diff = 0.0;
      for (std::size_t i = 0; i < g_online.data.size(); ++i)
        diff = std::max(diff, std::abs((2.0 / beta) * g_online.data[i] -
                                       (g_sft.data[i] + (beta / 2.0) * g_kl.data[i])));
      total += diff / std::max(max_abs(g_sft), 1e-300);
    }
    mean_gaps.push_back(total / static_cast<double>(tuples.size()));
  }

  bool monotone = true;
  for (std::size_t i = 0; i + 1 < betas.size(); ++i)
    if (!(mean_gaps[i] > mean_gaps[i + 1])) monotone = false;

  std::vector<double> log_beta, log_gap;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    log_beta.push_back(std::log(betas[i]));
    log_gap.push_back(std::log(mean_gaps[i]));
  }
  const double slope = detail::lsq_slope(log_beta, log_gap);

  // Trained comparison at the smallest practical beta.
  const double beta_small = 0.05;
  double max_trained_tv = 0.0, mean_mismatch_scale = 0.0;
  for (std::size_t s = 0; s < training_seeds; ++s) {
    Rng rng = Rng(spec.seed).substream(0x74726eULL + s);
    auto ref = random_full_support_conditional(rng, P, R);
    auto chosen = random_full_support_conditional(rng, P, R);
    auto prompts = random_prompt_weights(rng, P);

    trainer::TrainConfig online_config;
    online_config.learning_rate = 0.5 / (beta_small * beta_small);
    online_config.max_steps = 200000;
    online_config.convergence_tol = 1e-10;
    trainer::OnlineSpec online_spec;
    auto online = trainer::train_online_dpo(policy_from_probs(ref), ref, chosen, prompts,
                                            BetaParam(beta_small), online_spec, online_config);

    trainer::TrainConfig surrogate_config;
    surrogate_config.max_steps = 200000;
    surrogate_config.convergence_tol = 1e-10;
    auto surrogate = trainer::train_sft_kl(policy_from_probs(ref), chosen, ref, prompts,
                                           beta_small / 2.0, surrogate_config);
    max_trained_tv = std::max(max_trained_tv,
                              max_tv_distance(policy_probs(online.policy).probs,
                                              policy_probs(surrogate.policy).probs));

    // Scale of the next-order correction at the online optimum: the
    // prompt-averaged gap between the policy's and the target's mean
    // log-ratio, times beta / 4. Informational.
    auto probs = policy_probs(online.policy);
    double scale = 0.0;
    for (std::size_t x = 0; x < P; ++x) {
      double e_policy = 0.0, e_target = 0.0;
      for (std::size_t y = 0; y < R; ++y) {
        const double f = std::log(std::max(probs.probs(x, y), 1e-300)) -
                         std::log(ref.probs(x, y));
        e_policy += probs.probs(x, y) * f;
        e_target += chosen.probs(x, y) * f;
      }
      scale += prompts.weights[x] * (beta_small / 4.0) * (e_policy - e_target);
    }
    mean_mismatch_scale += scale / static_cast<double>(training_seeds);
  }

  for (std::size_t i = 0; i < betas.size(); ++i)
    report.add_info("gradient_gap_mean_at_beta_" + std::to_string(betas[i]), mean_gaps[i]);
  for (std::size_t i = 0; i + 1 < betas.size(); ++i)
    report.add_info("gap_ratio_" + std::to_string(i), mean_gaps[i + 1] / mean_gaps[i]);
  report.add_flag("gradient_gap_monotone_in_beta", monotone);
  report.add_at_least("gradient_gap_loglog_slope", slope, 0.6);
  report.add_at_most("gradient_gap_loglog_slope_upper", slope, 1.4);
  report.add_at_most("trained_online_vs_surrogate_tv_max", max_trained_tv, 0.05);
  report.add_info("next_order_correction_scale_mean", mean_mismatch_scale);
  return report;
}

// ============================================================================
// Run everything
// ============================================================================

inline std::vector<VerificationReport> verify_all(const InstanceSpec& spec) {
  std::vector<VerificationReport> reports;
  reports.push_back(verify_coverage(spec));
  reports.push_back(verify_sign_conditions(spec));
  reports.push_back(verify_closed_form(spec));
  reports.push_back(verify_loss_identity(spec));
  reports.push_back(verify_online_reduction(spec));
  return reports;
}

}  // namespace prefopt::theory
