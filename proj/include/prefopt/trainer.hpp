#pragma once

/**
 * trainer.hpp - Full-batch gradient descent over tabular policy logits
 *
 * One generic descent loop drives every objective in the library. Each step
 * records the pre-update loss and gradient max-norm; snapshots of the logits
 * are kept at a fixed interval and at the final state. Training halts when
 * the gradient max-norm falls below the convergence tolerance, when the step
 * budget runs out, or when the iterate degenerates (non-finite loss,
 * gradient, or logits, or a loss magnitude past any sane scale), in which
 * case a training_diverged_error carrying the trace so far is thrown.
 *
 * Plain gradient descent is the default; heavy-ball momentum is opt-in via
 * TrainConfig::optimizer and is never used by the verification routines,
 * whose statements are about the plain-descent trajectory.
 */

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "losses.hpp"
#include "rng.hpp"

namespace prefopt::trainer {

using losses::BetaParam;

// ============================================================================
// Configuration and traces
// ============================================================================

enum class Optimizer { gradient_descent, momentum };

struct TrainConfig {
  double learning_rate = 0.5;
  std::size_t max_steps = 20000;
  double convergence_tol = 1e-8;  // on the gradient max-norm
  std::size_t snapshot_interval = 100;
  Optimizer optimizer = Optimizer::gradient_descent;
  double momentum_coef = 0.9;
  // Loss magnitudes beyond this are treated as divergence even while finite.
  double divergence_threshold = 1e12;

  void validate() const {
    require(std::isfinite(learning_rate) && learning_rate > 0.0,
            "TrainConfig: learning_rate must be positive and finite");
    require(max_steps >= 1, "TrainConfig: max_steps must be at least 1");
    require(std::isfinite(convergence_tol) && convergence_tol >= 0.0,
            "TrainConfig: convergence_tol must be nonnegative");
    require(snapshot_interval >= 1, "TrainConfig: snapshot_interval must be at least 1");
    require(momentum_coef >= 0.0 && momentum_coef < 1.0,
            "TrainConfig: momentum_coef must lie in [0, 1)");
    require(divergence_threshold > 0.0, "TrainConfig: divergence_threshold must be positive");
  }
};

struct Snapshot {
  std::size_t step;
  Matrix logits;
};

enum class HaltReason { converged, step_limit, diverged };

inline const char* halt_reason_name(HaltReason reason) {
  switch (reason) {
    case HaltReason::converged: return "converged";
    case HaltReason::step_limit: return "step_limit";
    case HaltReason::diverged: return "diverged";
  }
  return "unknown";
}

/**
 * Per-step history of one training run. loss[t] and grad_max_norm[t] are
 * evaluated at the iterate BEFORE update t; steps counts updates performed.
 */
struct TrainTrace {
  std::vector<double> loss;
  std::vector<double> grad_max_norm;
  std::vector<Snapshot> snapshots;
  HaltReason halt = HaltReason::step_limit;
  std::size_t steps = 0;
};

struct training_diverged_error : error {
  TrainTrace trace;
  training_diverged_error(const std::string& msg, TrainTrace t)
      : error(msg), trace(std::move(t)) {}
};

struct TrainResult {
  TabularPolicy policy;
  TrainTrace trace;
};

// ============================================================================
// Descent step and loop
// ============================================================================

/**
 * One descent update in place. With a velocity table the update is heavy-ball
 * momentum (v <- mu v - lr g; z <- z + v); without one it is plain descent.
 */
inline void gd_step(TabularPolicy& policy, const Matrix& grad, const TrainConfig& config,
                    Matrix* velocity = nullptr) {
  require(policy.logits.same_shape(grad), "gd_step: gradient shape mismatch");
  if (velocity != nullptr) {
    require(velocity->same_shape(grad), "gd_step: velocity shape mismatch");
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
      velocity->data[i] =
          config.momentum_coef * velocity->data[i] - config.learning_rate * grad.data[i];
      policy.logits.data[i] += velocity->data[i];
    }
  } else {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
      policy.logits.data[i] -= config.learning_rate * grad.data[i];
  }
}

namespace detail {

template <typename LossFn, typename GradFn>
TrainResult descend(TabularPolicy policy, LossFn&& loss_fn, GradFn&& grad_fn,
                    const TrainConfig& config) {
  config.validate();
  TrainTrace trace;
  Matrix velocity(policy.logits.rows, policy.logits.cols, 0.0);
  Matrix* velocity_ptr =
      config.optimizer == Optimizer::momentum ? &velocity : nullptr;

  for (std::size_t step = 0; step < config.max_steps; ++step) {
    const double loss = loss_fn(policy);
    Matrix grad = grad_fn(policy);
    const double grad_norm = max_abs(grad);
    trace.loss.push_back(loss);
    trace.grad_max_norm.push_back(grad_norm);
    if (step % config.snapshot_interval == 0)
      trace.snapshots.push_back({step, policy.logits});

    if (!std::isfinite(loss) || !std::isfinite(grad_norm) || !all_finite(policy.logits) ||
        std::abs(loss) > config.divergence_threshold) {
      trace.halt = HaltReason::diverged;
      trace.steps = step;
      throw training_diverged_error(
          "descend: iterate degenerated at step " + std::to_string(step), std::move(trace));
    }
    if (grad_norm <= config.convergence_tol) {
      trace.halt = HaltReason::converged;
      trace.steps = step;
      trace.snapshots.push_back({step, policy.logits});
      return {std::move(policy), std::move(trace)};
    }
    gd_step(policy, grad, config, velocity_ptr);
  }

  trace.halt = HaltReason::step_limit;
  trace.steps = config.max_steps;
  if (!all_finite(policy.logits)) {
    trace.halt = HaltReason::diverged;
    throw training_diverged_error("descend: final logits are not finite", std::move(trace));
  }
  trace.snapshots.push_back({config.max_steps, policy.logits});
  return {std::move(policy), std::move(trace)};
}

}  // namespace detail

// ============================================================================
// Objective-specific entry points
// ============================================================================

/** Descend the supervised objective over a fixed weighted dataset. */
inline TrainResult train_sft(TabularPolicy init, const losses::SupervisedSet& data,
                             const TrainConfig& config) {
  return detail::descend(
      std::move(init),
      [&](const TabularPolicy& p) { return losses::sft_loss(p, data); },
      [&](const TabularPolicy& p) { return losses::sft_gradient(p, data).values; }, config);
}

/** Descend the pairwise preference objective over a fixed dataset. */
inline TrainResult train_dpo(TabularPolicy init, const CategoricalConditional& ref,
                             const PreferencePairSet& data, BetaParam beta,
                             const TrainConfig& config) {
  return detail::descend(
      std::move(init),
      [&](const TabularPolicy& p) { return losses::dpo_loss(p, ref, data, beta); },
      [&](const TabularPolicy& p) { return losses::dpo_gradient(p, ref, data, beta).values; },
      config);
}

/** Descend the reward-plus-KL objective against an explicit reward table. */
inline TrainResult train_rlhf(TabularPolicy init, const CategoricalConditional& ref,
                              const RewardTable& reward, const PromptSpace& prompts,
                              BetaParam beta, const TrainConfig& config) {
  return detail::descend(
      std::move(init),
      [&](const TabularPolicy& p) {
        return losses::rlhf_objective(p, ref, reward, prompts, beta);
      },
      [&](const TabularPolicy& p) {
        return losses::rlhf_gradient(p, ref, reward, prompts, beta).values;
      },
      config);
}

/**
 * Descend the cross-entropy-to-target objective with a KL leash:
 *   -E_x E_{y ~ target} [log pi(y|x)] + kl_weight * KL(pi || ref).
 * Note this is cross-entropy FROM the target, not KL toward it; the two
 * objectives have different minimizers whenever kl_weight > 0.
 */
inline TrainResult train_sft_kl(TabularPolicy init, const CategoricalConditional& target,
                                const CategoricalConditional& ref, const PromptSpace& prompts,
                                double kl_weight, const TrainConfig& config) {
  require(std::isfinite(kl_weight) && kl_weight >= 0.0,
          "train_sft_kl: kl_weight must be nonnegative");
  require(target.prompts() == prompts.size(),
          "train_sft_kl: target/prompt shape mismatch");
  // The cross-entropy term is the supervised loss of the fully expanded
  // target law: every cell (x, y) weighted w_x * target(y | x).
  std::vector<losses::SupervisedSet::Item> items;
  for (std::size_t x = 0; x < target.prompts(); ++x)
    for (std::size_t y = 0; y < target.responses(); ++y)
      if (prompts.weights[x] * target.probs(x, y) > 0.0)
        items.push_back({x, y, prompts.weights[x] * target.probs(x, y)});
  auto data = losses::SupervisedSet::normalized(std::move(items), target.prompts(),
                                                target.responses());
  return detail::descend(
      std::move(init),
      [&, data](const TabularPolicy& p) {
        double value = losses::sft_loss(p, data);
        if (kl_weight > 0.0)
          value += kl_weight * kl_divergence(policy_probs(p), ref, prompts).total;
        return value;
      },
      [&, data](const TabularPolicy& p) {
        Matrix g = losses::sft_gradient(p, data).values;
        if (kl_weight > 0.0) {
          Matrix kg = losses::kl_gradient(p, ref, prompts).values;
          for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += kl_weight * kg.data[i];
        }
        return g;
      },
      config);
}

// ============================================================================
// Online preference training
// ============================================================================

/**
 * How the rejected side of each online pair is produced: the exact
 * expectation under the current policy, or a finite sampled batch per step.
 */
struct OnlineSpec {
  enum class RejectedSource { exact_expectation, sampled };
  RejectedSource source = RejectedSource::exact_expectation;
  std::size_t batch_size = 256;  // pairs per step in sampled mode
  std::uint64_t seed = 0;

  void validate() const {
    if (source == RejectedSource::sampled)
      require(batch_size >= 1, "OnlineSpec: batch_size must be at least 1 in sampled mode");
  }
};

/**
 * Descend the online preference objective: at every step the dataset is the
 * product of the fixed chosen marginal and the CURRENT policy (data side held
 * fixed during differentiation). Sampled mode draws batch_size pairs per step
 * from that product; coincident draws keep their place in the batch average
 * and contribute zero gradient, mirroring the exact law's diagonal.
 */
inline TrainResult train_online_dpo(TabularPolicy init, const CategoricalConditional& ref,
                                    const CategoricalConditional& chosen,
                                    const PromptSpace& prompts, BetaParam beta,
                                    const OnlineSpec& spec, const TrainConfig& config) {
  spec.validate();
  if (spec.source == OnlineSpec::RejectedSource::exact_expectation) {
    return detail::descend(
        std::move(init),
        [&](const TabularPolicy& p) {
          return losses::online_dpo_loss(p, ref, chosen, prompts, beta);
        },
        [&](const TabularPolicy& p) {
          return losses::online_dpo_gradient(p, ref, chosen, prompts, beta).values;
        },
        config);
  }

  Rng rng = Rng(spec.seed).substream(0x6f6e6c696e65ULL);  // independent draw stream
  const std::size_t batch = spec.batch_size;
  return detail::descend(
      std::move(init),
      [&](const TabularPolicy& p) {
        return losses::online_dpo_loss(p, ref, chosen, prompts, beta);
      },
      [&, batch](const TabularPolicy& p) mutable {
        const auto probs = policy_probs(p);
        Matrix g(p.logits.rows, p.logits.cols, 0.0);
        const double unit = 1.0 / static_cast<double>(batch);
        for (std::size_t k = 0; k < batch; ++k) {
          const std::size_t x = rng.categorical(prompts.weights);
          const std::size_t a = rng.categorical(chosen.probs.row(x), chosen.responses());
          const std::size_t b = rng.categorical(probs.probs.row(x), probs.responses());
          if (a == b) continue;  // zero-gradient pair, still occupies its batch slot
          const double margin =
              losses::detail::pair_margin(p, ref, x, a, b, beta.value, "train_online_dpo");
          const double pull = unit * beta.value * sigmoid(-margin);
          g(x, a) -= pull;
          g(x, b) += pull;
        }
        return g;
      },
      config);
}

}  // namespace prefopt::trainer
