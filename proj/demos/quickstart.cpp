/**
 * quickstart.cpp - A five-minute tour of the library.
 *
 * Builds a small synthetic world, materializes a preference dataset from its
 * reward tiers, trains the pairwise preference objective from the reference
 * policy, and compares the result against the reference and against the
 * exact optimum of reward-with-leash training at the same strength. Output
 * is deterministic: rerunning prints identical numbers.
 */

#include <prefopt/datagen.hpp>
#include <prefopt/harness.hpp>
#include <prefopt/solvers.hpp>
#include <prefopt/trainer.hpp>

#include <cstdio>

int main() {
  using namespace prefopt;

  // ==========================================================================
  // 1. A world: i.i.d. normal rewards and a softmax reference policy
  // ==========================================================================
  harness::WorldSpec spec;
  spec.prompts = 4;
  spec.responses = 12;
  spec.seed = 42;
  const harness::World world = harness::make_world(spec);
  std::printf("world: %zu prompts x %zu responses, seed %llu\n", spec.prompts, spec.responses,
              static_cast<unsigned long long>(spec.seed));

  // ==========================================================================
  // 2. A dataset recipe: best-tier chosen over worst-tier rejected
  // ==========================================================================
  harness::DatasetRecipe recipe;  // defaults to the best-over-worst tier pair
  const harness::BuiltDataset built =
      harness::build_dataset(world, recipe, mix_seed(spec.seed, harness::k_tag_dataset));
  const datagen::DatasetStats stats = datagen::dataset_stats(built.data, world.reward);
  std::printf("dataset '%s': %zu pairs, mean chosen reward %+.4f, mean rejected %+.4f\n",
              recipe.name().c_str(), built.data.items.size(), stats.mean_chosen_reward,
              stats.mean_rejected_reward);

  // ==========================================================================
  // 3. Train the pairwise preference objective from the reference policy
  // ==========================================================================
  const losses::BetaParam beta(0.25);
  trainer::TrainConfig train;
  train.learning_rate = 0.5;
  train.max_steps = 5000;
  const trainer::TrainResult result = trainer::train_dpo(
      policy_from_probs(world.reference), world.reference, built.data, beta, train);
  std::printf("training: halt=%s after %zu steps, final loss %.6f, gradient max-norm %.2e\n",
              trainer::halt_reason_name(result.trace.halt), result.trace.steps,
              result.trace.loss.back(), result.trace.grad_max_norm.back());

  // ==========================================================================
  // 4. Evaluate against the reference under the true reward
  // ==========================================================================
  const CategoricalConditional trained = policy_probs(result.policy);
  const harness::PolicyMetrics before = harness::eval_policy(world.reference, world);
  const harness::PolicyMetrics after = harness::eval_policy(trained, world);
  std::printf("expected true reward: reference %+.4f -> trained %+.4f\n",
              before.expected_true_reward, after.expected_true_reward);
  std::printf("win rate vs reference: %.4f   divergence from reference: %.4f\n",
              after.win_rate_vs_reference, after.kl_to_reference);

  // ==========================================================================
  // 5. Compare with the exact reward-with-leash optimum at the same strength
  // ==========================================================================
  const CategoricalConditional exact =
      solvers::rlhf_optimal_policy(world.reference, world.reward, beta);
  std::printf("total variation to the exact reward-with-leash optimum: %.4f\n",
              max_tv_distance(trained.probs, exact.probs));
  std::printf("(the pairwise objective sees only %zu sampled pairs, not the full reward)\n",
              built.data.items.size());
  return 0;
}
