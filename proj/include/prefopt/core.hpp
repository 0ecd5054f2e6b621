#pragma once

/**
 * core.hpp - Domain types and elementary operations
 *
 * Finite prompt/response spaces, logit-parameterized tabular policies,
 * categorical conditionals, reward tables, preference oracles, pair
 * distributions, and preference pair datasets; plus the elementary
 * operations every other module builds on: softmax probabilities,
 * gauge centering, KL divergence, and expected reward.
 *
 * Conventions:
 *   - Tables are (prompt x response) row-major matrices.
 *   - Policies are parameterized by unconstrained logits; probabilities are
 *     softmax rows computed through a gauge-fixed, max-subtracted pipeline.
 *   - Pair objects order their entries (first, second) = (y1, y2); preference
 *     oracles return P(y1 beats y2 | x).
 */

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace prefopt {

/** Sum-to-one checks accept this much slack. */
inline constexpr double k_sum_tolerance = 1e-12;

// ============================================================================
// Spaces
// ============================================================================

/** Finite prompt space with a sampling distribution over prompts. */
struct PromptSpace {
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }

  static PromptSpace uniform(std::size_t n) {
    require(n > 0, "PromptSpace::uniform: need at least one prompt");
    PromptSpace s;
    s.weights.assign(n, 1.0 / static_cast<double>(n));
    return s;
  }

  static PromptSpace from_weights(std::vector<double> w) {
    require(!w.empty(), "PromptSpace::from_weights: empty weights");
    double total = 0.0;
    for (double v : w) {
      require(std::isfinite(v) && v >= 0.0,
              "PromptSpace::from_weights: weights must be finite and nonnegative");
      total += v;
    }
    require(std::abs(total - 1.0) <= k_sum_tolerance,
            "PromptSpace::from_weights: weights must sum to 1");
    PromptSpace s;
    s.weights = std::move(w);
    return s;
  }
};

/** Finite response space; responses are the column indices 0..count-1. */
struct ResponseSpace {
  std::size_t count = 0;

  static ResponseSpace of(std::size_t n) {
    require(n > 0, "ResponseSpace::of: need at least one response");
    return ResponseSpace{n};
  }
};

// ============================================================================
// Policies and conditionals
// ============================================================================

/** Policy over responses given prompts, parameterized by free logits. */
struct TabularPolicy {
  Matrix logits;  // (prompt x response), finite entries

  std::size_t prompts() const { return logits.rows; }
  std::size_t responses() const { return logits.cols; }

  static TabularPolicy from_logits(Matrix m) {
    require(all_finite(m), "TabularPolicy::from_logits: logits must be finite");
    return TabularPolicy{std::move(m)};
  }
};

/** Row-stochastic table of response probabilities given each prompt. */
struct CategoricalConditional {
  Matrix probs;            // (prompt x response), rows sum to 1
  bool full_support = false;  // true iff every entry >= k_support_floor

  std::size_t prompts() const { return probs.rows; }
  std::size_t responses() const { return probs.cols; }

  /**
   * Validates row-stochasticity. When require_full_support is set, also
   * enforces every entry >= k_support_floor and flags the result.
   */
  static CategoricalConditional from_probs(Matrix m, bool require_full_support = false) {
    double min_entry = 1.0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < m.cols; ++c) {
        const double v = m(r, c);
        require(std::isfinite(v) && v >= 0.0,
                "CategoricalConditional: entries must be finite and nonnegative");
        s += v;
        min_entry = std::min(min_entry, v);
      }
      require(std::abs(s - 1.0) <= k_sum_tolerance,
              "CategoricalConditional: row " + std::to_string(r) + " does not sum to 1");
    }
    if (require_full_support && min_entry < k_support_floor)
      throw support_violation_error(
          "CategoricalConditional: full support required but an entry is below the floor");
    CategoricalConditional c;
    c.probs = std::move(m);
    c.full_support = min_entry >= k_support_floor;
    return c;
  }
};

/** True reward r*(x, y) over the full table. */
struct RewardTable {
  Matrix values;

  std::size_t prompts() const { return values.rows; }
  std::size_t responses() const { return values.cols; }

  static RewardTable from_values(Matrix m) {
    require(all_finite(m), "RewardTable::from_values: rewards must be finite");
    return RewardTable{std::move(m)};
  }
};

// ============================================================================
// Preference oracles
// ============================================================================

/**
 * Pairwise preference law P(y1 beats y2 | x). Two variants:
 *   - bradley_terry(reward): P = sigmoid(r(x,y1) - r(x,y2));
 *   - explicit_table(tables): arbitrary per-prompt win matrices, allowing
 *     non-transitive laws no reward function can induce.
 */
class PreferenceOracle {
 public:
  static PreferenceOracle bradley_terry(RewardTable reward) {
    PreferenceOracle o;
    o.bt_ = true;
    o.reward_ = std::move(reward);
    return o;
  }

  static PreferenceOracle explicit_table(std::vector<Matrix> tables) {
    require(!tables.empty(), "PreferenceOracle::explicit_table: no tables");
    const std::size_t n = tables[0].rows;
    for (std::size_t x = 0; x < tables.size(); ++x) {
      const Matrix& t = tables[x];
      require(t.rows == n && t.cols == n,
              "PreferenceOracle::explicit_table: tables must be square and same-sized");
      for (std::size_t a = 0; a < n; ++a) {
        require(std::abs(t(a, a) - 0.5) <= k_sum_tolerance,
                "PreferenceOracle::explicit_table: diagonal must be 1/2");
        for (std::size_t b = 0; b < n; ++b) {
          require(std::isfinite(t(a, b)) && t(a, b) >= 0.0 && t(a, b) <= 1.0,
                  "PreferenceOracle::explicit_table: entries must lie in [0, 1]");
          require(std::abs(t(a, b) + t(b, a) - 1.0) <= k_sum_tolerance,
                  "PreferenceOracle::explicit_table: P(a,b) + P(b,a) must equal 1");
        }
      }
    }
    PreferenceOracle o;
    o.bt_ = false;
    o.tables_ = std::move(tables);
    return o;
  }

  /** P(y1 beats y2 | x). */
  double preference(std::size_t x, std::size_t y1, std::size_t y2) const {
    if (bt_) return sigmoid(reward_.values(x, y1) - reward_.values(x, y2));
    return tables_[x](y1, y2);
  }

  bool is_bradley_terry() const { return bt_; }

  const RewardTable& reward() const {
    require(bt_, "PreferenceOracle::reward: not a Bradley-Terry oracle");
    return reward_;
  }

  const std::vector<Matrix>& tables() const {
    require(!bt_, "PreferenceOracle::tables: not an explicit oracle");
    return tables_;
  }

  std::size_t prompts() const { return bt_ ? reward_.prompts() : tables_.size(); }
  std::size_t responses() const { return bt_ ? reward_.responses() : tables_[0].rows; }

 private:
  PreferenceOracle() = default;
  bool bt_ = true;
  RewardTable reward_;
  std::vector<Matrix> tables_;
};

// ============================================================================
// Pair distributions and datasets
// ============================================================================

/**
 * Law of unlabeled response pairs given each prompt: density[x](y1, y2) is
 * the probability of drawing the ordered pair (y1, y2) at prompt x. Each
 * per-prompt matrix sums to 1.
 */
struct PairDistribution {
  std::vector<Matrix> density;

  std::size_t prompts() const { return density.size(); }
  std::size_t responses() const { return density.empty() ? 0 : density[0].rows; }

  static PairDistribution from_density(std::vector<Matrix> d) {
    require(!d.empty(), "PairDistribution::from_density: no prompts");
    const std::size_t n = d[0].rows;
    for (std::size_t x = 0; x < d.size(); ++x) {
      require(d[x].rows == n && d[x].cols == n,
              "PairDistribution::from_density: matrices must be square and same-sized");
      double s = 0.0;
      for (double v : d[x].data) {
        require(std::isfinite(v) && v >= 0.0,
                "PairDistribution::from_density: entries must be finite and nonnegative");
        s += v;
      }
      require(std::abs(s - 1.0) <= k_sum_tolerance,
              "PairDistribution::from_density: prompt " + std::to_string(x) +
                  " density does not sum to 1");
    }
    return PairDistribution{std::move(d)};
  }

  /** Independent product: density[x](y1, y2) = first(y1|x) * second(y2|x). */
  static PairDistribution independent_product(const CategoricalConditional& first,
                                              const CategoricalConditional& second) {
    require(first.prompts() == second.prompts() && first.responses() == second.responses(),
            "PairDistribution::independent_product: shape mismatch");
    std::vector<Matrix> d;
    d.reserve(first.prompts());
    for (std::size_t x = 0; x < first.prompts(); ++x) {
      Matrix m(first.responses(), first.responses());
      for (std::size_t a = 0; a < first.responses(); ++a)
        for (std::size_t b = 0; b < first.responses(); ++b)
          m(a, b) = first.probs(x, a) * second.probs(x, b);
      d.push_back(std::move(m));
    }
    return PairDistribution{std::move(d)};
  }

  /** Symmetrized density q(y1, y2 | x) = (p(y1, y2 | x) + p(y2, y1 | x)) / 2. */
  Matrix symmetrized(std::size_t x) const {
    const Matrix& p = density[x];
    Matrix q(p.rows, p.cols);
    for (std::size_t a = 0; a < p.rows; ++a)
      for (std::size_t b = 0; b < p.cols; ++b) q(a, b) = 0.5 * (p(a, b) + p(b, a));
    return q;
  }
};

/**
 * Weighted labeled preference dataset. Items are (prompt, chosen, rejected)
 * with nonnegative weights summing to 1. `sampled` marks empirical datasets
 * (weights = relative frequencies); `exact_distribution` marks datasets whose
 * weights are exact population probabilities.
 */
struct PreferencePairSet {
  enum class Mode { sampled, exact_distribution };

  struct Item {
    std::size_t prompt = 0;
    std::size_t chosen = 0;
    std::size_t rejected = 0;
    double weight = 0.0;
  };

  std::vector<Item> items;
  Mode mode = Mode::sampled;
  std::size_t prompts = 0;
  std::size_t responses = 0;

  /** Validates indices and chosen != rejected, then normalizes weights to 1. */
  static PreferencePairSet normalized(std::vector<Item> items, Mode mode,
                                      std::size_t prompts, std::size_t responses) {
    require(!items.empty(), "PreferencePairSet: dataset must not be empty");
    double total = 0.0;
    for (const Item& it : items) {
      require(it.prompt < prompts, "PreferencePairSet: prompt index out of range");
      require(it.chosen < responses && it.rejected < responses,
              "PreferencePairSet: response index out of range");
      require(it.chosen != it.rejected,
              "PreferencePairSet: degenerate pair (chosen equals rejected)");
      require(std::isfinite(it.weight) && it.weight >= 0.0,
              "PreferencePairSet: weights must be finite and nonnegative");
      total += it.weight;
    }
    require(total > 0.0, "PreferencePairSet: weights must not all be zero");
    for (Item& it : items) it.weight /= total;
    return PreferencePairSet{std::move(items), mode, prompts, responses};
  }
};

// ============================================================================
// Elementary operations
// ============================================================================

/**
 * Softmax probabilities of a policy. Each logit row is gauge-fixed (mean
 * removed to a fixed point) before the max-subtracted softmax, so policies
 * that differ only by a per-prompt constant produce the same rows and
 * gauge_center() leaves the output bit-identical.
 */
inline CategoricalConditional policy_probs(const TabularPolicy& policy) {
  const std::size_t p = policy.prompts(), r = policy.responses();
  Matrix out(p, r);
  std::vector<double> scratch(r);
  double min_entry = 1.0;
  for (std::size_t x = 0; x < p; ++x) {
    for (std::size_t y = 0; y < r; ++y) scratch[y] = policy.logits(x, y);
    softmax_row_gauge_fixed(scratch.data(), out.row(x), r);
    for (std::size_t y = 0; y < r; ++y) min_entry = std::min(min_entry, out(x, y));
  }
  CategoricalConditional c;
  c.probs = std::move(out);
  c.full_support = min_entry >= k_support_floor;
  return c;
}

/** Log-softmax of a policy, computed directly in log space. */
inline Matrix policy_log_probs(const TabularPolicy& policy) {
  const std::size_t p = policy.prompts(), r = policy.responses();
  Matrix out(p, r);
  std::vector<double> scratch(r);
  for (std::size_t x = 0; x < p; ++x) {
    for (std::size_t y = 0; y < r; ++y) scratch[y] = policy.logits(x, y);
    log_softmax_row_gauge_fixed(scratch.data(), out.row(x), r);
  }
  return out;
}

/** Removes the softmax gauge freedom: each logit row is shifted to mean 0. */
inline TabularPolicy gauge_center(const TabularPolicy& policy) {
  TabularPolicy out = policy;
  for (std::size_t x = 0; x < out.prompts(); ++x)
    gauge_fix_row(out.logits.row(x), out.responses());
  return out;
}

/** Policy whose probabilities equal the given full-support conditional. */
inline TabularPolicy policy_from_probs(const CategoricalConditional& probs) {
  for (double v : probs.probs.data)
    if (v < k_support_floor)
      throw support_violation_error(
          "policy_from_probs: conditional must have full support");
  Matrix logits(probs.prompts(), probs.responses());
  for (std::size_t x = 0; x < probs.prompts(); ++x)
    for (std::size_t y = 0; y < probs.responses(); ++y)
      logits(x, y) = std::log(probs.probs(x, y));
  return gauge_center(TabularPolicy::from_logits(std::move(logits)));
}

/** KL divergence result: prompt-weighted total plus per-prompt terms. */
struct KlResult {
  double total = 0.0;
  std::vector<double> per_prompt;
};

/**
 * KL(p || q) per prompt, weighted by prompt probabilities for the total.
 * Terms with p(y|x) = 0 contribute 0; a term with p(y|x) > 0 but
 * q(y|x) below the support floor raises support_violation_error.
 */
inline KlResult kl_divergence(const CategoricalConditional& p,
                              const CategoricalConditional& q,
                              const PromptSpace& prompts) {
  require(p.prompts() == q.prompts() && p.responses() == q.responses(),
          "kl_divergence: shape mismatch");
  require(prompts.size() == p.prompts(), "kl_divergence: prompt space mismatch");
  KlResult out;
  out.per_prompt.resize(p.prompts());
  for (std::size_t x = 0; x < p.prompts(); ++x) {
    double acc = 0.0;
    for (std::size_t y = 0; y < p.responses(); ++y) {
      const double py = p.probs(x, y);
      if (py == 0.0) continue;  // 0 * log 0 = 0
      const double qy = q.probs(x, y);
      if (qy < k_support_floor)
        throw support_violation_error(
            "kl_divergence: q lacks support at a point where p is positive");
      acc += py * (std::log(py) - std::log(qy));
    }
    out.per_prompt[x] = acc;
    out.total += prompts.weights[x] * acc;
  }
  return out;
}

/** E_{x ~ prompts, y ~ probs}[reward(x, y)], summed exhaustively. */
inline double expected_reward(const CategoricalConditional& probs,
                              const RewardTable& reward, const PromptSpace& prompts) {
  require(probs.prompts() == reward.prompts() && probs.responses() == reward.responses(),
          "expected_reward: shape mismatch");
  require(prompts.size() == probs.prompts(), "expected_reward: prompt space mismatch");
  double total = 0.0;
  for (std::size_t x = 0; x < probs.prompts(); ++x) {
    double row = 0.0;
    for (std::size_t y = 0; y < probs.responses(); ++y)
      row += probs.probs(x, y) * reward.values(x, y);
    total += prompts.weights[x] * row;
  }
  return total;
}

// ============================================================================
// Seeded random instance builders
// ============================================================================

/** Logit table with i.i.d. normal(0, stddev) entries. */
inline Matrix random_logits(Rng& rng, std::size_t prompts, std::size_t responses,
                            double stddev = 1.5) {
  Matrix m(prompts, responses);
  for (double& v : m.data) v = rng.normal(0.0, stddev);
  return m;
}

inline TabularPolicy random_policy(Rng& rng, std::size_t prompts, std::size_t responses,
                                   double stddev = 1.5) {
  return TabularPolicy::from_logits(random_logits(rng, prompts, responses, stddev));
}

/** Full-support conditional: softmax of i.i.d. normal(0, stddev) logits. */
inline CategoricalConditional random_full_support_conditional(Rng& rng, std::size_t prompts,
                                                              std::size_t responses,
                                                              double stddev = 1.5) {
  return policy_probs(random_policy(rng, prompts, responses, stddev));
}

/** Prompt weights proportional to exp(normal(0, 0.5)): bounded away from 0. */
inline PromptSpace random_prompt_weights(Rng& rng, std::size_t prompts) {
  std::vector<double> w(prompts);
  double total = 0.0;
  for (double& v : w) {
    v = std::exp(rng.normal(0.0, 0.5));
    total += v;
  }
  for (double& v : w) v /= total;
  return PromptSpace::from_weights(std::move(w));
}

inline RewardTable random_reward_table(Rng& rng, std::size_t prompts, std::size_t responses,
                                       double mean = 0.0, double stddev = 1.0) {
  Matrix m(prompts, responses);
  for (double& v : m.data) v = rng.normal(mean, stddev);
  return RewardTable::from_values(std::move(m));
}

/**
 * Random pair law: per prompt, softmax over all response-pair cells of
 * i.i.d. normals. With zero_diagonal set, identical pairs get no mass.
 */
inline PairDistribution random_pair_density(Rng& rng, std::size_t prompts,
                                            std::size_t responses, bool zero_diagonal = false,
                                            double stddev = 1.0) {
  require(!zero_diagonal || responses >= 2,
          "random_pair_density: zero_diagonal needs at least two responses");
  std::vector<Matrix> d;
  d.reserve(prompts);
  for (std::size_t x = 0; x < prompts; ++x) {
    Matrix m(responses, responses);
    double total = 0.0;
    for (std::size_t a = 0; a < responses; ++a)
      for (std::size_t b = 0; b < responses; ++b) {
        if (zero_diagonal && a == b) {
          m(a, b) = 0.0;
          continue;
        }
        m(a, b) = std::exp(rng.normal(0.0, stddev));
        total += m(a, b);
      }
    for (double& v : m.data) v /= total;
    d.push_back(std::move(m));
  }
  return PairDistribution::from_density(std::move(d));
}

/**
 * Random explicit preference law: P = sigmoid(S) for a random antisymmetric
 * score table S. Generically non-transitive, so no reward induces it.
 */
inline PreferenceOracle random_explicit_oracle(Rng& rng, std::size_t prompts,
                                               std::size_t responses, double stddev = 1.5) {
  std::vector<Matrix> tables;
  tables.reserve(prompts);
  for (std::size_t x = 0; x < prompts; ++x) {
    Matrix t(responses, responses, 0.5);
    for (std::size_t a = 0; a < responses; ++a)
      for (std::size_t b = a + 1; b < responses; ++b) {
        const double s = rng.normal(0.0, stddev);
        t(a, b) = sigmoid(s);
        t(b, a) = sigmoid(-s);
      }
    tables.push_back(std::move(t));
  }
  return PreferenceOracle::explicit_table(std::move(tables));
}

}  // namespace prefopt
