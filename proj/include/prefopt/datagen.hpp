#pragma once

/**
 * datagen.hpp - Preference dataset construction
 *
 * Builders for labeled preference datasets over a finite world:
 *   - reward-quantile quality tiers and deterministic tier-pair datasets;
 *   - rejection-sampled pairs (draw k, keep the best; pit it against the
 *     worst draw or a random other draw), plus the exact best-of-k law;
 *   - stochastic labeling of unlabeled pairs by a preference oracle, and
 *     the exact population labeling of a pair distribution;
 *   - on-policy mixing: replace a fixed fraction of an offline dataset
 *     using fresh samples from a generation policy;
 *   - a six-member gap/quality family that decouples the chosen response's
 *     quality from the chosen-rejected reward gap, including matched-gap
 *     counterfactual members.
 *
 * All sampling is counter-based: every (prompt, item) cell derives its own
 * substream from the caller's seed, so construction order cannot affect the
 * draws and identical seeds give bitwise identical datasets.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace prefopt::datagen {

// ============================================================================
// Quality tiers
// ============================================================================

/** Reward-quantile quality buckets, ordered from best to worst. */
enum class QualityTier { best = 0, high = 1, medium = 2, low = 3, worst = 4 };

inline constexpr std::size_t k_tier_count = 5;

inline constexpr std::array<QualityTier, k_tier_count> k_all_tiers = {
    QualityTier::best, QualityTier::high, QualityTier::medium, QualityTier::low,
    QualityTier::worst};

inline std::size_t tier_index(QualityTier t) { return static_cast<std::size_t>(t); }

inline const char* tier_name(QualityTier t) {
  switch (t) {
    case QualityTier::best: return "best";
    case QualityTier::high: return "high";
    case QualityTier::medium: return "medium";
    case QualityTier::low: return "low";
    case QualityTier::worst: return "worst";
  }
  throw invalid_input_error("tier_name: unknown tier");
}

inline QualityTier tier_from_name(const std::string& name) {
  for (QualityTier t : k_all_tiers)
    if (name == tier_name(t)) return t;
  throw invalid_input_error("tier_from_name: unknown tier '" + name + "'");
}

/** True iff `a` is a strictly higher-quality tier than `b`. */
inline bool tier_above(QualityTier a, QualityTier b) {
  return tier_index(a) < tier_index(b);
}

// ============================================================================
// Tier assignment
// ============================================================================

/**
 * One representative response per tier per prompt, picked by reward rank.
 * `ranks` records the 1-based descending-reward ranks used (provenance).
 */
struct TierAssignment {
  std::size_t prompts = 0;
  std::size_t responses = 0;
  std::array<std::size_t, k_tier_count> ranks{};
  std::vector<std::array<std::size_t, k_tier_count>> picks;  // per prompt

  std::size_t response_of(std::size_t x, QualityTier t) const {
    require(x < prompts, "TierAssignment::response_of: prompt index out of range");
    return picks[x][tier_index(t)];
  }
};

namespace detail {

/** Strictly prefers higher reward; ties go to the lower response index. */
inline bool reward_priority_less(const double* r, std::size_t a, std::size_t b) {
  return r[a] > r[b] || (r[a] == r[b] && a < b);
}

/** Response indices of one reward row, best-first under reward_priority_less. */
inline std::vector<std::size_t> priority_order(const double* r, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [r](std::size_t a, std::size_t b) { return reward_priority_less(r, a, b); });
  return order;
}

}  // namespace detail

/**
 * Assigns the five tiers by nearest-rank quantiles of each prompt's rewards:
 * descending-reward ranks {1, ceil(n/4), ceil(n/2), ceil(3n/4), n}, ties
 * broken toward the lower response index. Needs n >= 5 so ranks are distinct.
 */
inline TierAssignment assign_tiers(const RewardTable& reward) {
  const std::size_t n = reward.responses();
  if (n < 5)
    throw invalid_input_error("assign_tiers: need at least 5 responses, got " +
                              std::to_string(n));
  TierAssignment out;
  out.prompts = reward.prompts();
  out.responses = n;
  out.ranks = {1, (n + 3) / 4, (n + 1) / 2, (3 * n + 3) / 4, n};
  for (std::size_t t = 1; t < k_tier_count; ++t)
    require(out.ranks[t] > out.ranks[t - 1], "assign_tiers: tier ranks must be distinct");
  out.picks.resize(out.prompts);
  for (std::size_t x = 0; x < out.prompts; ++x) {
    const std::vector<std::size_t> order =
        detail::priority_order(reward.values.row(x), n);
    for (std::size_t t = 0; t < k_tier_count; ++t)
      out.picks[x][t] = order[out.ranks[t] - 1];
  }
  return out;
}

// ============================================================================
// Pair strategies
// ============================================================================

/**
 * Tagged description of how a preference dataset is built. Carries only the
 * fields its kind uses; validate() enforces the per-kind invariants.
 */
struct PairStrategy {
  enum class Kind {
    tier_pair,        // deterministic (chosen tier, rejected tier) per prompt
    best_vs_worst,    // sample k, best draw beats worst draw
    best_vs_random,   // sample k, best draw beats a random other draw
    gap_controlled,   // one base member of the gap/quality family
    counterfactual,   // one matched-gap counterfactual family member
  };

  Kind kind = Kind::tier_pair;
  QualityTier chosen = QualityTier::best;    // tier_pair
  QualityTier rejected = QualityTier::worst; // tier_pair
  std::size_t k = 8;                         // best_vs_worst / best_vs_random
  std::string member;                        // gap_controlled / counterfactual

  static PairStrategy tier_pair(QualityTier chosen, QualityTier rejected) {
    PairStrategy s;
    s.kind = Kind::tier_pair;
    s.chosen = chosen;
    s.rejected = rejected;
    s.validate();
    return s;
  }

  static PairStrategy best_vs_worst(std::size_t k) {
    PairStrategy s;
    s.kind = Kind::best_vs_worst;
    s.k = k;
    s.validate();
    return s;
  }

  static PairStrategy best_vs_random(std::size_t k) {
    PairStrategy s;
    s.kind = Kind::best_vs_random;
    s.k = k;
    s.validate();
    return s;
  }

  static PairStrategy gap_controlled(std::string member) {
    PairStrategy s;
    s.kind = Kind::gap_controlled;
    s.member = std::move(member);
    s.validate();
    return s;
  }

  static PairStrategy counterfactual(std::string member) {
    PairStrategy s;
    s.kind = Kind::counterfactual;
    s.member = std::move(member);
    s.validate();
    return s;
  }

  void validate() const {
    switch (kind) {
      case Kind::tier_pair:
        if (!tier_above(chosen, rejected))
          throw invalid_input_error(
              std::string("PairStrategy: invalid strategy: chosen tier '") +
              tier_name(chosen) + "' must rank strictly above rejected tier '" +
              tier_name(rejected) + "'");
        return;
      case Kind::best_vs_worst:
      case Kind::best_vs_random:
        if (k < 2)
          throw invalid_input_error(
              "PairStrategy: sampled strategies need k >= 2 candidates, got " +
              std::to_string(k));
        return;
      case Kind::gap_controlled:
      case Kind::counterfactual:
        if (member.empty())
          throw invalid_input_error("PairStrategy: family member name must not be empty");
        return;
    }
    throw invalid_input_error("PairStrategy: unknown kind");
  }
};

// ============================================================================
// Deterministic tier pairs
// ============================================================================

/**
 * One exact item per prompt: (tier pick of `chosen`, tier pick of `rejected`)
 * weighted by the prompt probability. The chosen tier must rank strictly
 * above the rejected tier; reward(chosen) >= reward(rejected) then holds by
 * construction of the tier ranks.
 */
inline PreferencePairSet build_tier_pairs(const TierAssignment& tiers, QualityTier chosen,
                                          QualityTier rejected, const PromptSpace& prompts) {
  if (!tier_above(chosen, rejected))
    throw invalid_input_error(
        std::string("build_tier_pairs: invalid strategy: chosen tier '") +
        tier_name(chosen) + "' must rank strictly above rejected tier '" +
        tier_name(rejected) + "'");
  require(prompts.size() == tiers.prompts, "build_tier_pairs: prompt space mismatch");
  std::vector<PreferencePairSet::Item> items;
  items.reserve(tiers.prompts);
  for (std::size_t x = 0; x < tiers.prompts; ++x)
    items.push_back({x, tiers.response_of(x, chosen), tiers.response_of(x, rejected),
                     prompts.weights[x]});
  return PreferencePairSet::normalized(std::move(items),
                                       PreferencePairSet::Mode::exact_distribution,
                                       tiers.prompts, tiers.responses);
}

// ============================================================================
// Rejection-sampled pairs
// ============================================================================

enum class RejectionVariant { best_vs_worst, best_vs_random };

namespace detail {

/**
 * One exact draw from a generation row restricted to responses != banned
 * (renormalized). Used when the unrestricted draw collides with the chosen
 * response; a generation law that is a point mass on `banned` has no
 * restricted mass left and is rejected.
 */
inline std::size_t draw_excluding(Rng& rng, const double* gen_row, std::size_t n,
                                  std::size_t banned, const char* op) {
  std::vector<double> w(gen_row, gen_row + n);
  w[banned] = 0.0;
  double total = 0.0;
  for (double v : w) total += v;
  if (total <= 0.0)
    throw invalid_input_error(std::string(op) +
                              ": generation law is a point mass on the chosen response");
  return rng.categorical(w);
}

}  // namespace detail

/**
 * Draws k candidate responses per pair from the generation policy and keeps
 * the reward-argmax as chosen (ties to the lowest index). The rejected side
 * is the reward-argmin draw (best_vs_worst) or a uniform pick among the other
 * k-1 slots (best_vs_random). If the rejected side collides with the chosen
 * response, it is redrawn once, exactly, from the generation law restricted
 * to the other responses. With k = 2 the two variants coincide.
 *
 * Each (prompt, pair index) cell draws from its own seed-derived substream.
 */
inline PreferencePairSet rejection_sample_pairs(const CategoricalConditional& gen,
                                                const RewardTable& reward, std::size_t k,
                                                RejectionVariant variant, std::uint64_t seed,
                                                const PromptSpace& prompts,
                                                std::size_t pairs_per_prompt = 1) {
  if (k < 2)
    throw invalid_input_error("rejection_sample_pairs: need k >= 2 candidates, got " +
                              std::to_string(k));
  require(pairs_per_prompt >= 1, "rejection_sample_pairs: pairs_per_prompt must be positive");
  require(gen.prompts() == reward.prompts() && gen.responses() == reward.responses(),
          "rejection_sample_pairs: generation policy and reward shape mismatch");
  require(prompts.size() == gen.prompts(), "rejection_sample_pairs: prompt space mismatch");

  const std::size_t n = gen.responses();
  const Rng root(seed);
  std::vector<PreferencePairSet::Item> items;
  items.reserve(gen.prompts() * pairs_per_prompt);
  std::vector<std::size_t> slots(k);
  for (std::size_t x = 0; x < gen.prompts(); ++x) {
    const double* gen_row = gen.probs.row(x);
    const double* r = reward.values.row(x);
    for (std::size_t j = 0; j < pairs_per_prompt; ++j) {
      Rng rng = root.substream((static_cast<std::uint64_t>(x) << 32) ^
                               static_cast<std::uint64_t>(j));
      std::size_t best_slot = 0;
      for (std::size_t s = 0; s < k; ++s) {
        slots[s] = rng.categorical(gen_row, n);
        if (s > 0 && detail::reward_priority_less(r, slots[s], slots[best_slot]))
          best_slot = s;
      }
      const std::size_t chosen = slots[best_slot];
      std::size_t rejected;
      if (variant == RejectionVariant::best_vs_worst) {
        std::size_t worst_slot = 0;
        for (std::size_t s = 1; s < k; ++s)
          if (detail::reward_priority_less(r, slots[worst_slot], slots[s])) worst_slot = s;
        rejected = slots[worst_slot];
      } else {
        std::size_t other;
        if (k == 2) {
          // Only one other slot exists; drawing nothing keeps the stream
          // aligned with best_vs_worst, making the k = 2 equivalence exact.
          other = 1 - best_slot;
        } else {
          other = rng.uniform_index(k - 1);
          if (other >= best_slot) ++other;  // uniform over the k-1 slots != best_slot
        }
        rejected = slots[other];
      }
      if (rejected == chosen)
        rejected = detail::draw_excluding(rng, gen_row, n, chosen, "rejection_sample_pairs");
      items.push_back({x, chosen, rejected,
                       prompts.weights[x] / static_cast<double>(pairs_per_prompt)});
    }
  }
  return PreferencePairSet::normalized(std::move(items), PreferencePairSet::Mode::sampled,
                                       gen.prompts(), n);
}

/**
 * Exact law of the chosen response under best-of-k rejection sampling: the
 * distribution of the reward-argmax (ties to the lowest index) of k
 * independent draws from the generation policy. In priority order,
 * P(y) = T(y)^k - (T(y) - p(y))^k with T(y) the generation mass at or below
 * y's priority.
 */
inline CategoricalConditional best_of_k_chosen_law(const CategoricalConditional& gen,
                                                   const RewardTable& reward, std::size_t k) {
  if (k < 1)
    throw invalid_input_error("best_of_k_chosen_law: need k >= 1 draws");
  require(gen.prompts() == reward.prompts() && gen.responses() == reward.responses(),
          "best_of_k_chosen_law: generation policy and reward shape mismatch");
  const std::size_t n = gen.responses();
  // Monotone nonnegative integer power, so telescoping terms stay nonnegative.
  const auto pow_k = [k](double base) {
    double acc = 1.0, b = base;
    for (std::size_t e = k; e > 0; e >>= 1) {
      if (e & 1) acc *= b;
      b *= b;
    }
    return acc;
  };
  Matrix out(gen.prompts(), n);
  for (std::size_t x = 0; x < gen.prompts(); ++x) {
    const std::vector<std::size_t> order =
        detail::priority_order(reward.values.row(x), n);
    // Suffix masses T[j] = sum of generation probability from priority j down.
    std::vector<double> suffix(n + 1, 0.0);
    for (std::size_t j = n; j-- > 0;)
      suffix[j] = suffix[j + 1] + gen.probs(x, order[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = pow_k(suffix[j]) - pow_k(suffix[j + 1]);
      out(x, order[j]) = p;
      total += p;
    }
    for (std::size_t y = 0; y < n; ++y) out(x, y) /= total;
  }
  return CategoricalConditional::from_probs(std::move(out));
}

// ============================================================================
// Oracle labeling
// ============================================================================

/** An unlabeled response pair awaiting a preference judgment. */
struct UnlabeledPair {
  std::size_t prompt = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  double weight = 1.0;
};

/**
 * Labels each pair by one Bernoulli draw from the oracle: with probability
 * P(first beats second | prompt) the first response is chosen. Weights are
 * carried through unchanged. Item i draws from substream i of the seed.
 */
inline PreferencePairSet label_pairs_by_oracle(const std::vector<UnlabeledPair>& pairs,
                                               const PreferenceOracle& oracle,
                                               std::uint64_t seed) {
  require(!pairs.empty(), "label_pairs_by_oracle: no pairs to label");
  const Rng root(seed);
  std::vector<PreferencePairSet::Item> items;
  items.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const UnlabeledPair& u = pairs[i];
    require(u.first != u.second,
            "label_pairs_by_oracle: degenerate pair (first equals second)");
    Rng rng = root.substream(i);
    const double p = oracle.preference(u.prompt, u.first, u.second);
    const bool first_wins = rng.uniform01() < p;
    items.push_back({u.prompt, first_wins ? u.first : u.second,
                     first_wins ? u.second : u.first, u.weight});
  }
  return PreferencePairSet::normalized(std::move(items), PreferencePairSet::Mode::sampled,
                                       oracle.prompts(), oracle.responses());
}

/**
 * Exact population labeling of a pair distribution: every ordered pair
 * (a, b), a != b, becomes an item with weight proportional to
 * prompt_weight * q_sym(a, b) * P(a beats b), where q_sym is the symmetrized
 * pair density. Diagonal mass carries no preference signal and is dropped.
 */
inline PreferencePairSet label_pairs_exact(const PairDistribution& pairs,
                                           const PreferenceOracle& oracle,
                                           const PromptSpace& prompts) {
  require(pairs.prompts() == oracle.prompts() && pairs.responses() == oracle.responses(),
          "label_pairs_exact: pair distribution and oracle shape mismatch");
  require(prompts.size() == pairs.prompts(), "label_pairs_exact: prompt space mismatch");
  const std::size_t n = pairs.responses();
  std::vector<PreferencePairSet::Item> items;
  for (std::size_t x = 0; x < pairs.prompts(); ++x) {
    const Matrix q = pairs.symmetrized(x);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        if (a == b) continue;
        const double w = prompts.weights[x] * q(a, b) * oracle.preference(x, a, b);
        if (w > 0.0) items.push_back({x, a, b, w});
      }
  }
  require(!items.empty(), "label_pairs_exact: pair distribution has no off-diagonal mass");
  return PreferencePairSet::normalized(std::move(items),
                                       PreferencePairSet::Mode::exact_distribution,
                                       pairs.prompts(), n);
}

// ============================================================================
// On-policy mixing
// ============================================================================

/** Bounded retries for one mixed item before construction fails. */
inline constexpr std::size_t k_mix_retry_limit = 64;

struct MixConfig {
  double rho = 0.5;          // fraction of items rebuilt from fresh samples
  std::size_t k = 8;         // candidate draws per rebuilt item
  double temperature = 1.0;  // generation logit temperature
  std::uint64_t seed = 0;

  void validate() const {
    require(std::isfinite(rho) && rho >= 0.0 && rho <= 1.0,
            "MixConfig: rho must lie in [0, 1]");
    require(k >= 1, "MixConfig: k must be positive");
    require(std::isfinite(temperature) && temperature > 0.0,
            "MixConfig: temperature must be positive");
  }
};

struct MixResult {
  PreferencePairSet data;
  std::vector<std::uint8_t> changed;   // 1 where the item differs from the input
  std::size_t selected_count = 0;      // floor(rho * N), all of which differ
  std::size_t chosen_replaced = 0;     // fresh best beat the incumbent chosen
  std::size_t rejected_replaced = 0;   // incumbent kept, rejected side rebuilt
};

/**
 * Rebuilds exactly floor(rho * N) items of an offline dataset from fresh
 * generation-policy samples, keeping dataset size, item order, and weights.
 * For each selected item (chosen y_w, rejected y_l): draw k candidates, take
 * the reward-argmax y'. If reward(y') > reward(y_w) the new pair is
 * (y', y_w); otherwise the incumbent is kept and the best candidate other
 * than y_w becomes the rejected side. A batch whose emission would be
 * degenerate or identical to the original item is redrawn (bounded retries),
 * which is what makes the floor(rho * N) difference count exact.
 *
 * Selection and every item use independent seed-derived substreams.
 */
inline MixResult on_policy_mix(const PreferencePairSet& offline,
                               const CategoricalConditional& gen, const RewardTable& reward,
                               const MixConfig& config) {
  config.validate();
  require(!offline.items.empty(), "on_policy_mix: offline dataset must not be empty");
  require(gen.prompts() == offline.prompts && gen.responses() == offline.responses,
          "on_policy_mix: generation policy shape mismatch");
  require(reward.prompts() == offline.prompts && reward.responses() == offline.responses,
          "on_policy_mix: reward shape mismatch");

  const std::size_t n_items = offline.items.size();
  const std::size_t n = offline.responses;
  // Nudge before flooring so exact products like 0.3 * 10 do not round down.
  const std::size_t n_selected = static_cast<std::size_t>(
      std::floor(config.rho * static_cast<double>(n_items) + 1e-9));

  const Rng root(config.seed);
  std::vector<std::size_t> perm(n_items);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng select_rng = root.substream(0x73656c656374ULL);  // "select"
  for (std::size_t i = 0; i < n_selected; ++i)
    std::swap(perm[i], perm[i + select_rng.uniform_index(n_items - i)]);
  std::vector<std::uint8_t> selected(n_items, 0);
  for (std::size_t i = 0; i < n_selected; ++i) selected[perm[i]] = 1;

  const Rng item_root = root.substream(0x6974656dULL);  // "item"
  const bool tempered = config.temperature != 1.0;
  std::vector<double> weights(n);

  MixResult out;
  out.changed.assign(n_items, 0);
  std::vector<PreferencePairSet::Item> items = offline.items;
  for (std::size_t i = 0; i < n_items; ++i) {
    if (!selected[i]) continue;
    PreferencePairSet::Item& item = items[i];
    const double* r = reward.values.row(item.prompt);
    const double* gen_row = gen.probs.row(item.prompt);
    if (tempered) {
      for (std::size_t y = 0; y < n; ++y)
        weights[y] = std::pow(gen_row[y], 1.0 / config.temperature);
      gen_row = weights.data();
    }
    Rng rng = item_root.substream(i);
    bool done = false;
    for (std::size_t attempt = 0; attempt < k_mix_retry_limit && !done; ++attempt) {
      std::size_t best = n;      // priority argmax over all draws
      std::size_t best_alt = n;  // priority argmax over draws != incumbent chosen
      for (std::size_t s = 0; s < config.k; ++s) {
        const std::size_t draw = rng.categorical(gen_row, n);
        if (best == n || detail::reward_priority_less(r, draw, best)) best = draw;
        if (draw != item.chosen &&
            (best_alt == n || detail::reward_priority_less(r, draw, best_alt)))
          best_alt = draw;
      }
      if (r[best] > r[item.chosen]) {
        // A strict improvement cannot be the incumbent itself.
        item.rejected = item.chosen;
        item.chosen = best;
        ++out.chosen_replaced;
        done = true;
      } else {
        // Keep the incumbent chosen; the best non-incumbent draw becomes the
        // rejected side. Retry when every draw was the incumbent or the
        // emission would reproduce the original item.
        if (best_alt == n) continue;
        if (best_alt == item.rejected) continue;
        item.rejected = best_alt;
        ++out.rejected_replaced;
        done = true;
      }
    }
    if (!done)
      throw construction_error(
          "on_policy_mix: item " + std::to_string(i) + " produced no differing pair in " +
          std::to_string(k_mix_retry_limit) + " candidate batches");
    out.changed[i] = 1;
  }
  out.selected_count = n_selected;
  out.data = PreferencePairSet::normalized(std::move(items), offline.mode, offline.prompts,
                                           offline.responses);
  return out;
}

// ============================================================================
// Gap/quality counterfactual family
// ============================================================================

/**
 * Narrow-gap targets are this fraction of the best-worst reward spread. It
 * must stay below the low tier's typical distance to the worst response
 * (about a third of the spread for normal rewards), or the low-quality
 * narrow member could not reach the target from above the worst response.
 */
inline constexpr double k_small_gap_fraction = 0.25;

/** Relative tolerance for the family's matched-gap requirements. */
inline constexpr double k_gap_match_tolerance = 0.10;

struct GapFamilyMember {
  std::string name;
  QualityTier chosen_tier;
  bool small_gap = false;       // rejected side targets the small gap
  bool counterfactual = false;  // gap-matched variant of a base member
  PreferencePairSet data;
  double mean_chosen_reward = 0.0;
  double mean_rejected_reward = 0.0;
  double mean_gap = 0.0;
};

struct GapFamily {
  std::vector<GapFamilyMember> members;
  double small_gap_fraction = k_small_gap_fraction;

  const GapFamilyMember& member(const std::string& name) const {
    for (const GapFamilyMember& m : members)
      if (m.name == name) return m;
    throw invalid_input_error("GapFamily::member: no member named '" + name + "'");
  }
};

/** Weighted dataset statistics under the true reward. */
struct DatasetStats {
  double mean_chosen_reward = 0.0;
  double mean_rejected_reward = 0.0;
  double mean_gap = 0.0;
};

inline DatasetStats dataset_stats(const PreferencePairSet& data, const RewardTable& reward) {
  require(data.prompts == reward.prompts() && data.responses == reward.responses(),
          "dataset_stats: dataset and reward shape mismatch");
  DatasetStats s;
  double total = 0.0;
  for (const PreferencePairSet::Item& it : data.items) {
    s.mean_chosen_reward += it.weight * reward.values(it.prompt, it.chosen);
    s.mean_rejected_reward += it.weight * reward.values(it.prompt, it.rejected);
    total += it.weight;
  }
  s.mean_chosen_reward /= total;
  s.mean_rejected_reward /= total;
  s.mean_gap = s.mean_chosen_reward - s.mean_rejected_reward;
  return s;
}

namespace detail {

/** Responses with reward strictly below the chosen one. */
inline std::vector<std::size_t> below_chosen(const double* r, std::size_t n,
                                             std::size_t chosen, const char* member) {
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < n; ++y)
    if (r[y] < r[chosen]) out.push_back(y);
  if (out.empty())
    throw construction_error(std::string("gap_counterfactuals: member '") + member +
                             "': no response lies strictly below the chosen one");
  return out;
}

/**
 * Candidate whose gap to the chosen response is nearest the target
 * (ties to the lower index, which comes first in the candidate list).
 */
inline std::size_t nearest_gap_pick(const double* r, std::size_t chosen,
                                    const std::vector<std::size_t>& candidates,
                                    double target_gap) {
  std::size_t pick = candidates[0];
  double pick_err = std::abs((r[chosen] - r[pick]) - target_gap);
  for (std::size_t y : candidates) {
    const double err = std::abs((r[chosen] - r[y]) - target_gap);
    if (err < pick_err) {
      pick = y;
      pick_err = err;
    }
  }
  return pick;
}

/**
 * Deterministic coordinate descent on the weighted mean gap: starting from
 * per-prompt picks, repeatedly re-picks one prompt's candidate whenever that
 * strictly shrinks |mean gap - target|. Per-prompt nearest picks alone can
 * leave the mean off target on coarse reward grids; this pass closes the
 * mean to within one candidate spacing divided by the prompt count.
 */
inline void refine_mean_gap(const RewardTable& reward,
                            const std::vector<std::size_t>& chosen,
                            const std::vector<std::vector<std::size_t>>& candidates,
                            const std::vector<double>& weights, double target_mean,
                            std::vector<std::size_t>& pick) {
  const std::size_t p = pick.size();
  const auto gap = [&](std::size_t x, std::size_t y) {
    return reward.values(x, chosen[x]) - reward.values(x, y);
  };
  double mean = 0.0;
  for (std::size_t x = 0; x < p; ++x) mean += weights[x] * gap(x, pick[x]);
  for (std::size_t pass = 0; pass < 8; ++pass) {
    bool improved = false;
    for (std::size_t x = 0; x < p; ++x) {
      const double base = mean - weights[x] * gap(x, pick[x]);
      std::size_t best_y = pick[x];
      double best_err = std::abs(mean - target_mean);
      for (std::size_t y : candidates[x]) {
        const double err = std::abs(base + weights[x] * gap(x, y) - target_mean);
        if (err < best_err) {
          best_err = err;
          best_y = y;
        }
      }
      if (best_y != pick[x]) {
        pick[x] = best_y;
        mean = base + weights[x] * gap(x, best_y);
        improved = true;
      }
    }
    if (!improved) break;
  }
}

inline void check_gap(bool ok, const std::string& what) {
  if (!ok) throw construction_error("gap_counterfactuals: violated constraint: " + what);
}

}  // namespace detail

/**
 * Builds six one-item-per-prompt datasets that cross chosen-response quality
 * with the chosen-rejected reward gap:
 *
 *   base members (gap_controlled):
 *     best_over_worst   wide gap,   high-quality chosen (tier best vs worst)
 *     high_over_near    narrow gap, high-quality chosen (tier high vs nearest)
 *     medium_over_worst wide gap,   low-quality chosen  (tier medium vs worst)
 *     low_over_near     narrow gap, low-quality chosen  (tier low vs nearest)
 *   counterfactual members (gap-matched to a base member):
 *     best_over_near    same chosen as best_over_worst, gap matched per prompt
 *                       to high_over_near's realized gap
 *     high_over_worst   same chosen as high_over_near, gap re-widened to the
 *                       full spread
 *
 * Narrow-gap rejected sides come from responses strictly below the chosen
 * one, initialized per prompt at the gap nearest small_gap_fraction times
 * that prompt's best-worst spread, then refined by coordinate descent until
 * the weighted mean gap hits its family target. After construction the
 * family's defining orderings and matched-gap tolerances are verified on the
 * weighted means; any violation raises a construction error naming the
 * constraint.
 */
inline GapFamily gap_counterfactuals(const TierAssignment& tiers, const RewardTable& reward,
                                     const PromptSpace& prompts,
                                     double small_gap_fraction = k_small_gap_fraction) {
  require(tiers.prompts == reward.prompts() && tiers.responses == reward.responses(),
          "gap_counterfactuals: tier assignment and reward shape mismatch");
  require(prompts.size() == tiers.prompts, "gap_counterfactuals: prompt space mismatch");
  require(std::isfinite(small_gap_fraction) && small_gap_fraction > 0.0 &&
              small_gap_fraction < 1.0,
          "gap_counterfactuals: small_gap_fraction must lie in (0, 1)");

  const std::size_t p = tiers.prompts, n = tiers.responses;
  struct Draft {
    const char* name;
    QualityTier chosen_tier;
    bool small_gap;
    bool counterfactual;
    std::vector<PreferencePairSet::Item> items;
  };
  std::array<Draft, 6> drafts = {{
      {"best_over_worst", QualityTier::best, false, false, {}},
      {"high_over_near", QualityTier::high, true, false, {}},
      {"medium_over_worst", QualityTier::medium, false, false, {}},
      {"low_over_near", QualityTier::low, true, false, {}},
      {"best_over_near", QualityTier::best, true, true, {}},
      {"high_over_worst", QualityTier::high, false, true, {}},
  }};

  std::vector<std::size_t> best_pick(p), high_pick(p), medium_pick(p), low_pick(p),
      worst_pick(p);
  std::vector<std::vector<std::size_t>> below_high(p), below_low(p), below_best(p);
  std::vector<std::size_t> high_near(p), low_near(p), best_near(p);
  double mean_spread = 0.0;
  for (std::size_t x = 0; x < p; ++x) {
    const double* r = reward.values.row(x);
    best_pick[x] = tiers.response_of(x, QualityTier::best);
    high_pick[x] = tiers.response_of(x, QualityTier::high);
    medium_pick[x] = tiers.response_of(x, QualityTier::medium);
    low_pick[x] = tiers.response_of(x, QualityTier::low);
    worst_pick[x] = tiers.response_of(x, QualityTier::worst);
    const double spread = r[best_pick[x]] - r[worst_pick[x]];
    if (!(spread > 0.0))
      throw construction_error("gap_counterfactuals: prompt " + std::to_string(x) +
                               " has a flat reward row; no gaps exist");
    mean_spread += prompts.weights[x] * spread;
    const double target = small_gap_fraction * spread;
    below_high[x] = detail::below_chosen(r, n, high_pick[x], "high_over_near");
    below_low[x] = detail::below_chosen(r, n, low_pick[x], "low_over_near");
    below_best[x] = detail::below_chosen(r, n, best_pick[x], "best_over_near");
    high_near[x] = detail::nearest_gap_pick(r, high_pick[x], below_high[x], target);
    low_near[x] = detail::nearest_gap_pick(r, low_pick[x], below_low[x], target);
  }
  const double target_mean = small_gap_fraction * mean_spread;
  detail::refine_mean_gap(reward, high_pick, below_high, prompts.weights, target_mean,
                          high_near);
  detail::refine_mean_gap(reward, low_pick, below_low, prompts.weights, target_mean,
                          low_near);
  // The counterfactual narrow member starts from prompt-by-prompt matches of
  // the realized high_over_near gap, then refines toward its mean: candidate
  // gaps near the top of the reward order are coarse, so per-prompt matching
  // alone can drift past the family tolerance.
  double hn_mean_gap = 0.0;
  for (std::size_t x = 0; x < p; ++x) {
    const double* r = reward.values.row(x);
    const double realized = r[high_pick[x]] - r[high_near[x]];
    hn_mean_gap += prompts.weights[x] * realized;
    best_near[x] = detail::nearest_gap_pick(r, best_pick[x], below_best[x], realized);
  }
  detail::refine_mean_gap(reward, best_pick, below_best, prompts.weights, hn_mean_gap,
                          best_near);
  for (std::size_t x = 0; x < p; ++x) {
    const double w = prompts.weights[x];
    drafts[0].items.push_back({x, best_pick[x], worst_pick[x], w});
    drafts[1].items.push_back({x, high_pick[x], high_near[x], w});
    drafts[2].items.push_back({x, medium_pick[x], worst_pick[x], w});
    drafts[3].items.push_back({x, low_pick[x], low_near[x], w});
    drafts[4].items.push_back({x, best_pick[x], best_near[x], w});
    drafts[5].items.push_back({x, high_pick[x], worst_pick[x], w});
  }

  GapFamily family;
  family.small_gap_fraction = small_gap_fraction;
  for (Draft& d : drafts) {
    GapFamilyMember m;
    m.name = d.name;
    m.chosen_tier = d.chosen_tier;
    m.small_gap = d.small_gap;
    m.counterfactual = d.counterfactual;
    m.data = PreferencePairSet::normalized(std::move(d.items),
                                           PreferencePairSet::Mode::exact_distribution, p, n);
    const DatasetStats s = dataset_stats(m.data, reward);
    m.mean_chosen_reward = s.mean_chosen_reward;
    m.mean_rejected_reward = s.mean_rejected_reward;
    m.mean_gap = s.mean_gap;
    family.members.push_back(std::move(m));
  }

  const GapFamilyMember& bw = family.member("best_over_worst");
  const GapFamilyMember& hn = family.member("high_over_near");
  const GapFamilyMember& mw = family.member("medium_over_worst");
  const GapFamilyMember& ln = family.member("low_over_near");
  const GapFamilyMember& bn = family.member("best_over_near");
  const GapFamilyMember& hw = family.member("high_over_worst");

  for (std::size_t x = 0; x < p; ++x) {
    detail::check_gap(bw.data.items[x].chosen == bn.data.items[x].chosen,
                      "best_over_worst and best_over_near share chosen responses");
    detail::check_gap(hn.data.items[x].chosen == hw.data.items[x].chosen,
                      "high_over_near and high_over_worst share chosen responses");
  }
  for (const GapFamilyMember* wide : {&bw, &mw})
    for (const GapFamilyMember* narrow : {&hn, &ln})
      detail::check_gap(wide->mean_gap > narrow->mean_gap,
                        "mean gap(" + wide->name + ") > mean gap(" + narrow->name + ")");
  detail::check_gap(bw.mean_chosen_reward > mw.mean_chosen_reward,
                    "mean chosen reward(best_over_worst) > mean chosen reward(medium_over_worst)");
  detail::check_gap(hn.mean_chosen_reward > ln.mean_chosen_reward,
                    "mean chosen reward(high_over_near) > mean chosen reward(low_over_near)");
  detail::check_gap(hw.mean_gap > hn.mean_gap,
                    "mean gap(high_over_worst) > mean gap(high_over_near)");

  const double tol = k_gap_match_tolerance;
  detail::check_gap(std::abs(hn.mean_gap - target_mean) <= tol * target_mean,
                    "mean gap(high_over_near) within 10% of the small-gap target");
  detail::check_gap(std::abs(ln.mean_gap - target_mean) <= tol * target_mean,
                    "mean gap(low_over_near) within 10% of the small-gap target");
  detail::check_gap(std::abs(bn.mean_gap - hn.mean_gap) <= tol * hn.mean_gap,
                    "mean gap(best_over_near) within 10% of mean gap(high_over_near)");
  return family;
}

}  // namespace prefopt::datagen
