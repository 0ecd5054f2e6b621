// Objectives, gradients, implicit rewards, and the functional derivative.
//
// Expected values are frozen from independent computation: hand arithmetic on
// tiny instances, or the central finite-difference oracle in test_util.hpp.

#include <doctest.h>

#include <cmath>
#include <vector>

#include <prefopt/losses.hpp>
#include <prefopt/solvers.hpp>

#include "test_util.hpp"

using namespace prefopt;
using losses::BetaParam;
using testutil::finite_difference_gradient;
using testutil::gradient_relative_error;

namespace {

CategoricalConditional uniform_ref(std::size_t p, std::size_t r) {
  Matrix m(p, r, 1.0 / static_cast<double>(r));
  return CategoricalConditional::from_probs(std::move(m), true);
}

/**
 * Exact preference dataset induced by labeling a pair law with an oracle:
 * ordered item (a, b) gets weight w_x * 2 q(a, b | x) * P(a beats b | x).
 * Built inline (independently of library dataset builders) as a test oracle.
 */
PreferencePairSet exact_labeled_set(const PairDistribution& du, const PreferenceOracle& oracle,
                                    const PromptSpace& prompts) {
  std::vector<PreferencePairSet::Item> items;
  for (std::size_t x = 0; x < du.prompts(); ++x) {
    const Matrix q = du.symmetrized(x);
    for (std::size_t a = 0; a < du.responses(); ++a)
      for (std::size_t b = 0; b < du.responses(); ++b) {
        if (a == b) continue;
        const double w = prompts.weights[x] * 2.0 * q(a, b) * oracle.preference(x, a, b);
        if (w > 0.0) items.push_back({x, a, b, w});
      }
  }
  return PreferencePairSet::normalized(std::move(items),
                                       PreferencePairSet::Mode::exact_distribution,
                                       du.prompts(), du.responses());
}

}  // namespace

// ============================================================================
// Supervised objective
// ============================================================================

TEST_CASE("sft_loss: frozen two-item value") {
  // Items with probabilities 0.5 and 0.25, weights 0.5/0.5:
  // loss = .5 ln 2 + .5 ln 4 = 1.0397207708399179.
  auto policy = TabularPolicy::from_logits(
      Matrix::from_rows({{0.0, 0.0}, {std::log(3.0), 0.0}}));
  auto data = losses::SupervisedSet::normalized({{0, 0, 0.5}, {1, 1, 0.5}}, 2, 2);
  CHECK(losses::sft_loss(policy, data) ==
        doctest::Approx(1.0397207708399179).epsilon(1e-12));
}

TEST_CASE("sft_gradient: single uniform datum gives (-1/2, +1/2)") {
  auto policy = TabularPolicy::from_logits(Matrix::from_rows({{0.0, 0.0}}));
  auto data = losses::SupervisedSet::normalized({{0, 0, 1.0}}, 1, 2);
  auto g = losses::sft_gradient(policy, data);
  CHECK(g.values(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(g.values(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sft_gradient matches finite differences on random instances") {
  Rng rng(101);
  for (int rep = 0; rep < 10; ++rep) {
    auto policy = random_policy(rng, 4, 8);
    std::vector<losses::SupervisedSet::Item> items;
    for (std::size_t x = 0; x < 4; ++x)
      for (int k = 0; k < 3; ++k)
        items.push_back({x, rng.uniform_index(8), rng.uniform(0.1, 1.0)});
    auto data = losses::SupervisedSet::normalized(items, 4, 8);
    auto analytic = losses::sft_gradient(policy, data);
    auto fd = finite_difference_gradient(
        policy, [&](const TabularPolicy& p) { return losses::sft_loss(p, data); });
    CHECK(gradient_relative_error(fd, analytic.values) < 1e-6);
  }
}

// ============================================================================
// Implicit reward
// ============================================================================

TEST_CASE("implicit_reward: ratio e with beta 0.1 gives 0.1") {
  // policy probs (sigmoid(1), sigmoid(-1)), ref swapped: log ratios (1, -1).
  auto policy = TabularPolicy::from_logits(Matrix::from_rows({{1.0, 0.0}}));
  auto ref = CategoricalConditional::from_probs(
      Matrix::from_rows({{sigmoid(-1.0), sigmoid(1.0)}}), true);
  auto r = losses::implicit_reward(policy, ref, BetaParam(0.1));
  CHECK(r.values(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.values(0, 1) == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("implicit_reward: zero at policy == reference; support enforced") {
  Rng rng(7);
  auto ref = random_full_support_conditional(rng, 3, 5);
  auto policy = policy_from_probs(ref);
  auto r = losses::implicit_reward(policy, ref, BetaParam(0.5));
  CHECK(max_abs(r.values) <= 1e-12);

  auto gap = CategoricalConditional::from_probs(Matrix::from_rows({{1.0, 0.0}}));
  auto p2 = TabularPolicy::from_logits(Matrix::from_rows({{0.0, 0.0}}));
  CHECK_THROWS_AS(losses::implicit_reward(p2, gap, BetaParam(0.5)),
                  support_violation_error);
}

// ============================================================================
// Preference objective
// ============================================================================

TEST_CASE("dpo_loss: frozen single-pair value at margin ln 3") {
  auto policy = TabularPolicy::from_logits(Matrix::from_rows({{std::log(3.0), 0.0}}));
  auto ref = uniform_ref(1, 2);
  auto data = PreferencePairSet::normalized({{0, 0, 1, 1.0}},
                                            PreferencePairSet::Mode::sampled, 1, 2);
  // -log sigmoid(ln 3) = log(4/3) = 0.2876820724517809.
  CHECK(losses::dpo_loss(policy, ref, data, BetaParam(1.0)) ==
        doctest::Approx(0.2876820724517809).epsilon(1e-12));
}

TEST_CASE("dpo_loss at policy == reference is ln 2") {
  Rng rng(11);
  auto ref = random_full_support_conditional(rng, 3, 6);
  auto policy = policy_from_probs(ref);
  auto data = PreferencePairSet::normalized(
      {{0, 1, 4, 0.25}, {1, 0, 2, 0.5}, {2, 5, 3, 0.25}},
      PreferencePairSet::Mode::sampled, 3, 6);
  CHECK(losses::dpo_loss(policy, ref, data, BetaParam(0.5)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("dpo_gradient: at policy == reference entries are -/+ beta*w/2") {
  auto policy = TabularPolicy::from_logits(Matrix::from_rows({{0.0, 0.0, 0.0}}));
  auto ref = uniform_ref(1, 3);
  auto data = PreferencePairSet::normalized({{0, 2, 0, 1.0}},
                                            PreferencePairSet::Mode::sampled, 1, 3);
  auto g = losses::dpo_gradient(policy, ref, data, BetaParam(0.4));
  CHECK(g.values(0, 2) == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(g.values(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(g.values(0, 1) == 0.0);  // uncovered: exact zero
}

TEST_CASE("dpo_gradient: rows sum to zero and uncovered cells are exact zeros") {
  Rng rng(13);
  auto policy = random_policy(rng, 4, 8);
  auto ref = random_full_support_conditional(rng, 4, 8);
  // Cover only responses 0..3; responses 4..7 appear in no pair.
  std::vector<PreferencePairSet::Item> items;
  for (std::size_t x = 0; x < 4; ++x) {
    items.push_back({x, 0, 1, rng.uniform(0.1, 1.0)});
    items.push_back({x, 2, 3, rng.uniform(0.1, 1.0)});
    items.push_back({x, 1, 2, rng.uniform(0.1, 1.0)});
  }
  auto data = PreferencePairSet::normalized(items, PreferencePairSet::Mode::sampled, 4, 8);
  auto g = losses::dpo_gradient(policy, ref, data, BetaParam(0.5));
  for (std::size_t x = 0; x < 4; ++x) {
    double row = 0.0;
    for (std::size_t y = 0; y < 8; ++y) row += g.values(x, y);
    CHECK(std::abs(row) <= 1e-10);
    for (std::size_t y = 4; y < 8; ++y) CHECK(g.values(x, y) == 0.0);
  }
}

TEST_CASE("dpo_gradient matches finite differences on random instances") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    auto policy = random_policy(rng, 4, 8);
    auto ref = random_full_support_conditional(rng, 4, 8);
    std::vector<PreferencePairSet::Item> items;
    for (std::size_t x = 0; x < 4; ++x)
      for (int k = 0; k < 4; ++k) {
        std::size_t a = rng.uniform_index(8), b = rng.uniform_index(8);
        if (a == b) b = (b + 1) % 8;
        items.push_back({x, a, b, rng.uniform(0.1, 1.0)});
      }
    auto data = PreferencePairSet::normalized(items, PreferencePairSet::Mode::sampled, 4, 8);
    BetaParam beta(rng.uniform(0.1, 1.0));
    auto analytic = losses::dpo_gradient(policy, ref, data, beta);
    auto fd = finite_difference_gradient(
        policy, [&](const TabularPolicy& p) { return losses::dpo_loss(p, ref, data, beta); });
    CHECK(gradient_relative_error(fd, analytic.values) < 1e-6);
  }
}

// ============================================================================
// Reward-plus-KL objective
// ============================================================================

TEST_CASE("rlhf_objective: KL-only at zero reward, and beta scaling") {
  Rng rng(19);
  auto ref = random_full_support_conditional(rng, 3, 5);
  auto policy = random_policy(rng, 3, 5);
  auto zero = RewardTable::from_values(Matrix(3, 5, 0.0));
  auto prompts = PromptSpace::uniform(3);
  const double kl = kl_divergence(policy_probs(policy), ref, prompts).total;
  CHECK(losses::rlhf_objective(policy, ref, zero, prompts, BetaParam(2.0)) ==
        doctest::Approx(2.0 * kl).epsilon(1e-12));
}

TEST_CASE("rlhf_gradient matches finite differences on random instances") {
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    auto policy = random_policy(rng, 4, 8);
    auto ref = random_full_support_conditional(rng, 4, 8);
    auto reward = random_reward_table(rng, 4, 8);
    auto prompts = random_prompt_weights(rng, 4);
    BetaParam beta(rng.uniform(0.1, 1.5));
    auto analytic = losses::rlhf_gradient(policy, ref, reward, prompts, beta);
    auto fd = finite_difference_gradient(policy, [&](const TabularPolicy& p) {
      return losses::rlhf_objective(p, ref, reward, prompts, beta);
    });
    CHECK(gradient_relative_error(fd, analytic.values) < 1e-6);
  }
}

// ============================================================================
// KL gradient
// ============================================================================

TEST_CASE("kl_gradient: frozen value at uniform policy vs (0.25, 0.75)") {
  auto policy = TabularPolicy::from_logits(Matrix::from_rows({{0.0, 0.0}}));
  auto ref = CategoricalConditional::from_probs(Matrix::from_rows({{0.25, 0.75}}), true);
  auto g = losses::kl_gradient(policy, ref, PromptSpace::uniform(1));
  // 0.5 * (ln 2 - KL), KL = 0.14384103622589045: 0.27465307216702745.
  CHECK(g.values(0, 0) == doctest::Approx(0.27465307216702745).epsilon(1e-12));
  CHECK(g.values(0, 1) == doctest::Approx(-0.27465307216702745).epsilon(1e-12));
}

TEST_CASE("kl_gradient: zero at policy == reference") {
  Rng rng(29);
  auto ref = random_full_support_conditional(rng, 3, 6);
  auto policy = policy_from_probs(ref);
  auto g = losses::kl_gradient(policy, ref, PromptSpace::uniform(3));
  CHECK(g.max_norm() <= 1e-12);
}

TEST_CASE("kl_gradient matches finite differences and the score-weighted route") {
  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    auto policy = random_policy(rng, 4, 8);
    auto ref = random_full_support_conditional(rng, 4, 8);
    auto prompts = random_prompt_weights(rng, 4);
    auto direct = losses::kl_gradient(policy, ref, prompts);
    auto scored = losses::kl_gradient_score_form(policy, ref, prompts);
    double gap = 0.0;
    for (std::size_t i = 0; i < direct.values.data.size(); ++i)
      gap = std::max(gap, std::abs(direct.values.data[i] - scored.values.data[i]));
    CHECK(gap <= 1e-10);
    auto fd = finite_difference_gradient(policy, [&](const TabularPolicy& p) {
      return kl_divergence(policy_probs(p), ref, prompts).total;
    });
    CHECK(gradient_relative_error(fd, direct.values) < 1e-6);
  }
}

// ============================================================================
// Score-function identity
// ============================================================================

TEST_CASE("score_identity_residual is at the rounding floor on random policies") {
  Rng rng(37);
  for (int rep = 0; rep < 20; ++rep) {
    auto policy = random_policy(rng, 4, 8);
    auto prompts = random_prompt_weights(rng, 4);
    CHECK(losses::score_identity_residual(policy, prompts) <= 1e-12);
  }
}

// ============================================================================
// Functional derivative
// ============================================================================

TEST_CASE("functional_derivative equals the dataset gradient of the labeled law") {
  Rng rng(41);
  for (int rep = 0; rep < 5; ++rep) {
    auto policy = random_policy(rng, 3, 6);
    auto ref = random_full_support_conditional(rng, 3, 6);
    auto prompts = random_prompt_weights(rng, 3);
    auto du = random_pair_density(rng, 3, 6, /*zero_diagonal=*/true);
    auto oracle = PreferenceOracle::bradley_terry(random_reward_table(rng, 3, 6));
    BetaParam beta(0.5);

    auto g = losses::functional_derivative(policy, ref, du, oracle, prompts, beta);
    auto data = exact_labeled_set(du, oracle, prompts);
    auto dataset_grad = losses::dpo_gradient(policy, ref, data, beta);
    double gap = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i)
      gap = std::max(gap, std::abs(g.data[i] - dataset_grad.values.data[i]));
    CHECK(gap <= 1e-10);
  }
}

TEST_CASE("functional_derivative: responses with no pair mass get exact zero") {
  Rng rng(43);
  auto policy = random_policy(rng, 2, 5);
  auto ref = random_full_support_conditional(rng, 2, 5);
  auto prompts = PromptSpace::uniform(2);
  // Pair law supported on responses {0, 1, 2} only.
  std::vector<Matrix> density;
  for (std::size_t x = 0; x < 2; ++x) {
    Matrix m(5, 5, 0.0);
    m(0, 1) = 0.25; m(1, 0) = 0.25; m(1, 2) = 0.25; m(2, 1) = 0.25;
    density.push_back(std::move(m));
  }
  auto du = PairDistribution::from_density(std::move(density));
  auto oracle = PreferenceOracle::bradley_terry(random_reward_table(rng, 2, 5));
  auto g = losses::functional_derivative(policy, ref, du, oracle, prompts, BetaParam(0.5));
  for (std::size_t x = 0; x < 2; ++x) {
    CHECK(g(x, 3) == 0.0);
    CHECK(g(x, 4) == 0.0);
  }
}

TEST_CASE("averaged_preferences: probabilities in [0,1], marginals sum to prompt weight") {
  Rng rng(47);
  auto policy = random_policy(rng, 3, 6);
  auto ref = random_full_support_conditional(rng, 3, 6);
  auto prompts = random_prompt_weights(rng, 3);
  auto du = random_pair_density(rng, 3, 6);
  auto oracle = random_explicit_oracle(rng, 3, 6);
  auto avg = losses::averaged_preferences(policy, ref, du, oracle, prompts, BetaParam(0.7));
  for (std::size_t x = 0; x < 3; ++x) {
    double mass = 0.0;
    for (std::size_t y = 0; y < 6; ++y) {
      CHECK(avg.p_true(x, y) >= 0.0);
      CHECK(avg.p_true(x, y) <= 1.0);
      CHECK(avg.p_model(x, y) >= 0.0);
      CHECK(avg.p_model(x, y) <= 1.0);
      mass += avg.marginal(x, y);
    }
    CHECK(mass == doctest::Approx(prompts.weights[x]).epsilon(1e-9));
  }
}

// ============================================================================
// Implied-reward objective (two forms)
// ============================================================================

TEST_CASE("implied_reward_objective: the two forms agree to 1e-12") {
  Rng rng(53);
  for (int rep = 0; rep < 20; ++rep) {
    auto policy = random_policy(rng, 4, 8);
    auto ref = random_full_support_conditional(rng, 4, 8);
    auto chosen = random_full_support_conditional(rng, 4, 8);
    auto rejected = random_full_support_conditional(rng, 4, 8);
    auto prompts = random_prompt_weights(rng, 4);
    BetaParam beta(rng.uniform(0.1, 1.5));
    const double a = losses::implied_reward_objective(
        policy, ref, chosen, rejected, prompts, beta, losses::ImpliedRewardForm::reward_form);
    const double b = losses::implied_reward_objective(
        policy, ref, chosen, rejected, prompts, beta,
        losses::ImpliedRewardForm::kl_difference_form);
    CHECK(std::abs(a - b) <= 1e-12);
  }
}

// ============================================================================
// Online preference objective
// ============================================================================

TEST_CASE("online_dpo_loss at policy == reference is ln 2") {
  Rng rng(59);
  auto ref = random_full_support_conditional(rng, 3, 6);
  auto policy = policy_from_probs(ref);
  auto chosen = random_full_support_conditional(rng, 3, 6);
  CHECK(losses::online_dpo_loss(policy, ref, chosen, PromptSpace::uniform(3), BetaParam(0.2)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("online_dpo_gradient equals the frozen-dataset gradient, rescaled") {
  // Freezing the current policy's product law into a dataset (which drops the
  // zero-gradient diagonal and renormalizes) must reproduce the online
  // gradient up to the dropped diagonal mass.
  Rng rng(61);
  for (int rep = 0; rep < 5; ++rep) {
    auto policy = random_policy(rng, 3, 6);
    auto ref = random_full_support_conditional(rng, 3, 6);
    auto chosen = random_full_support_conditional(rng, 3, 6);
    auto prompts = random_prompt_weights(rng, 3);
    BetaParam beta(0.3);
    auto online = losses::online_dpo_gradient(policy, ref, chosen, prompts, beta);

    auto probs = policy_probs(policy);
    std::vector<PreferencePairSet::Item> items;
    double offdiag = 0.0;
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t b = 0; b < 6; ++b) {
          if (a == b) continue;
          const double w = prompts.weights[x] * chosen.probs(x, a) * probs.probs(x, b);
          offdiag += w;
          items.push_back({x, a, b, w});
        }
    auto data = PreferencePairSet::normalized(items,
                                              PreferencePairSet::Mode::exact_distribution, 3, 6);
    auto frozen = losses::dpo_gradient(policy, ref, data, beta);
    double gap = 0.0;
    for (std::size_t i = 0; i < online.values.data.size(); ++i)
      gap = std::max(gap,
                     std::abs(online.values.data[i] - offdiag * frozen.values.data[i]));
    CHECK(gap <= 1e-12);
  }
}
