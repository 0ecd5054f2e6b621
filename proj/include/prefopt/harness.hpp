#pragma once

/**
 * harness.hpp - Synthetic-world experiment harness.
 *
 * Builds seeded finite worlds (a true reward table plus a full-support
 * reference policy), scores policies against them (expected true reward, KL
 * to the reference, exact pairwise win rate), runs replicated preference
 * trainings over declarative dataset recipes, and packages named suites whose
 * directional findings are machine-checked booleans rather than prose claims.
 *
 * Reproducibility contract: every randomized quantity descends from a single
 * world seed through tagged substreams, replicate k of every experiment in a
 * suite reuses the same world seed (so cross-experiment comparisons are
 * paired), and no output depends on wall-clock time or locale.
 */

#include <prefopt/core.hpp>
#include <prefopt/datagen.hpp>
#include <prefopt/errors.hpp>
#include <prefopt/losses.hpp>
#include <prefopt/numerics.hpp>
#include <prefopt/rng.hpp>
#include <prefopt/trainer.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace prefopt::harness {

using losses::BetaParam;

// ============================================================================
// Substream tags
// ============================================================================

inline constexpr std::uint64_t k_tag_reward = 0x726577;     // "rew"
inline constexpr std::uint64_t k_tag_reference = 0x726566;  // "ref"
inline constexpr std::uint64_t k_tag_dataset = 0x64617461;  // "data"
inline constexpr std::uint64_t k_tag_pairs = 0x70616972;    // "pair"
inline constexpr std::uint64_t k_tag_labels = 0x6c61626c;   // "labl"
inline constexpr std::uint64_t k_tag_mix = 0x6d6978;        // "mix"

// ============================================================================
// Worlds
// ============================================================================

/**
 * Recipe for one synthetic world. Rewards are i.i.d. normal; the reference
 * policy is a softmax over either reward-correlated or independent logits,
 * with a temperature that flattens it toward uniform as it grows.
 */
struct WorldSpec {
  enum class ReferenceLaw {
    noisy_reward_softmax,  // softmax((reward + noise) / temperature)
    random_logits,         // softmax(normal(0, logit_std) / temperature)
  };

  std::size_t prompts = 8;
  std::size_t responses = 16;
  double reward_mean = 0.0;
  double reward_std = 1.0;
  ReferenceLaw reference_law = ReferenceLaw::noisy_reward_softmax;
  double reference_noise_std = 1.0;
  double reference_temperature = 2.0;
  double reference_logit_std = 1.5;
  std::uint64_t seed = 0;

  void validate() const {
    require(prompts >= 1, "WorldSpec: need at least one prompt");
    require(responses >= 2, "WorldSpec: need at least two responses");
    require(std::isfinite(reward_mean), "WorldSpec: reward_mean must be finite");
    require(std::isfinite(reward_std) && reward_std >= 0.0,
            "WorldSpec: reward_std must be finite and nonnegative");
    require(std::isfinite(reference_noise_std) && reference_noise_std >= 0.0,
            "WorldSpec: reference_noise_std must be finite and nonnegative");
    require(std::isfinite(reference_temperature) && reference_temperature > 0.0,
            "WorldSpec: reference_temperature must be positive");
    require(std::isfinite(reference_logit_std) && reference_logit_std >= 0.0,
            "WorldSpec: reference_logit_std must be finite and nonnegative");
  }
};

/**
 * One fully materialized world: uniform prompt weights, the true reward
 * table, the reference policy, and the pairwise preference law the reward
 * induces.
 */
struct World {
  WorldSpec spec;
  PromptSpace prompts;
  RewardTable reward;
  CategoricalConditional reference;
  PreferenceOracle oracle;
};

/** Deterministically builds the world described by a spec. */
inline World make_world(const WorldSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);

  Rng reward_rng = root.substream(k_tag_reward);
  Matrix reward(spec.prompts, spec.responses);
  for (double& v : reward.data) v = reward_rng.normal(spec.reward_mean, spec.reward_std);

  Rng ref_rng = root.substream(k_tag_reference);
  Matrix logits(spec.prompts, spec.responses);
  if (spec.reference_law == WorldSpec::ReferenceLaw::noisy_reward_softmax) {
    for (std::size_t i = 0; i < logits.data.size(); ++i)
      logits.data[i] = (reward.data[i] + ref_rng.normal(0.0, spec.reference_noise_std)) /
                       spec.reference_temperature;
  } else {
    for (double& v : logits.data)
      v = ref_rng.normal(0.0, spec.reference_logit_std) / spec.reference_temperature;
  }

  RewardTable reward_table = RewardTable::from_values(std::move(reward));
  CategoricalConditional reference =
      policy_probs(TabularPolicy::from_logits(std::move(logits)));
  PreferenceOracle oracle = PreferenceOracle::bradley_terry(reward_table);
  return World{spec, PromptSpace::uniform(spec.prompts), std::move(reward_table),
               std::move(reference), std::move(oracle)};
}

// ============================================================================
// Policy evaluation
// ============================================================================

/**
 * Probability that a response drawn from `policy` beats an independent draw
 * from `opponent` under the pairwise law sigmoid(r(x,y) - r(x,y')), averaged
 * over prompts. Accumulated in centered antisymmetric form,
 *   1/2 + sum_{y<y'} (p_y q_{y'} - p_{y'} q_y) (sigmoid(r_y - r_{y'}) - 1/2),
 * so evaluating a policy against itself returns exactly 0.5.
 */
inline double win_rate(const CategoricalConditional& policy,
                       const CategoricalConditional& opponent, const RewardTable& reward,
                       const PromptSpace& prompts) {
  require(policy.prompts() == opponent.prompts() &&
              policy.responses() == opponent.responses(),
          "win_rate: policy/opponent shape mismatch");
  require(policy.prompts() == reward.prompts() && policy.responses() == reward.responses(),
          "win_rate: reward shape mismatch");
  require(prompts.size() == policy.prompts(), "win_rate: prompt space mismatch");
  double total = 0.0;
  for (std::size_t x = 0; x < policy.prompts(); ++x) {
    double acc = 0.0;
    for (std::size_t y = 0; y + 1 < policy.responses(); ++y) {
      for (std::size_t y2 = y + 1; y2 < policy.responses(); ++y2) {
        const double edge = sigmoid(reward.values(x, y) - reward.values(x, y2)) - 0.5;
        acc += (policy.probs(x, y) * opponent.probs(x, y2) -
                policy.probs(x, y2) * opponent.probs(x, y)) *
               edge;
      }
    }
    total += prompts.weights[x] * acc;
  }
  return 0.5 + total;
}

/** Scalar quality measures of one policy against a world. */
struct PolicyMetrics {
  double expected_true_reward = 0.0;
  double kl_to_reference = 0.0;
  double win_rate_vs_reference = 0.5;
};

inline PolicyMetrics eval_policy(const CategoricalConditional& policy, const World& world) {
  PolicyMetrics m;
  m.expected_true_reward = expected_reward(policy, world.reward, world.prompts);
  m.kl_to_reference = kl_divergence(policy, world.reference, world.prompts).total;
  m.win_rate_vs_reference = win_rate(policy, world.reference, world.reward, world.prompts);
  return m;
}

// ============================================================================
// Dataset recipes
// ============================================================================

/**
 * Declarative description of one training dataset (or target law) inside a
 * world. Recipes hold no randomness of their own: build_dataset derives
 * tagged substreams from its seed argument, and the seed field of an attached
 * MixConfig is overwritten by the derived mixing substream.
 */
struct DatasetRecipe {
  enum class Kind {
    tier_pair,                // one exact pair per prompt from the tier table
    best_vs_worst,            // sampled: best-of-k chosen, worst-of-k rejected
    best_vs_random,           // sampled: best-of-k chosen, random other draw rejected
    gap_member,               // one named member of the gap/counterfactual family
    labeled_reference_pairs,  // reference-policy pair draws labeled by the oracle
    best_of_k_target,         // exact chosen law for target-distribution training
  };

  Kind kind = Kind::tier_pair;
  datagen::QualityTier chosen = datagen::QualityTier::best;  // tier_pair only
  datagen::QualityTier rejected = datagen::QualityTier::worst;
  std::size_t k = 16;                 // candidate draws / target law order
  std::size_t pairs_per_prompt = 16;  // sampled recipes only
  std::string member = "best_over_worst";
  double small_gap_fraction = datagen::k_small_gap_fraction;
  bool with_mix = false;
  datagen::MixConfig mix;

  void validate() const {
    switch (kind) {
      case Kind::tier_pair:
        require(datagen::tier_above(chosen, rejected),
                "DatasetRecipe: chosen tier must rank strictly above rejected tier");
        break;
      case Kind::best_vs_worst:
      case Kind::best_vs_random:
        require(k >= 2, "DatasetRecipe: sampled pair recipes need k >= 2");
        require(pairs_per_prompt >= 1,
                "DatasetRecipe: pairs_per_prompt must be positive");
        break;
      case Kind::gap_member:
        require(!member.empty(), "DatasetRecipe: gap member name must not be empty");
        break;
      case Kind::labeled_reference_pairs:
        require(pairs_per_prompt >= 1,
                "DatasetRecipe: pairs_per_prompt must be positive");
        break;
      case Kind::best_of_k_target:
        require(k >= 1, "DatasetRecipe: target law order must be positive");
        require(!with_mix, "DatasetRecipe: target-law recipes cannot be mixed");
        break;
    }
    if (with_mix) mix.validate();
  }

  /** Stable human-readable label, also used as the experiment name. */
  std::string name() const {
    std::string base;
    switch (kind) {
      case Kind::tier_pair:
        base = std::string("chosen_") + datagen::tier_name(chosen) + "_rejected_" +
               datagen::tier_name(rejected);
        break;
      case Kind::best_vs_worst:
        base = "best_vs_worst_k" + std::to_string(k);
        break;
      case Kind::best_vs_random:
        base = "best_vs_random_k" + std::to_string(k);
        break;
      case Kind::gap_member:
        base = member;
        break;
      case Kind::labeled_reference_pairs:
        base = "reference_pairs";
        break;
      case Kind::best_of_k_target:
        base = "best_of_" + std::to_string(k) + "_target";
        break;
    }
    if (with_mix) base += "_mix" + std::to_string(static_cast<int>(mix.rho * 100.0 + 0.5));
    return base;
  }
};

/** A materialized pair dataset plus the mixing counters that produced it. */
struct BuiltDataset {
  PreferencePairSet data;
  std::size_t mix_selected = 0;
  std::size_t mix_chosen_replaced = 0;
  std::size_t mix_rejected_replaced = 0;
};

/**
 * Materializes a pair-dataset recipe inside a world. Sampled recipes draw
 * their randomness from tagged substreams of `seed`; exact recipes ignore it.
 * Target-law recipes are rejected here (see build_target_law).
 */
inline BuiltDataset build_dataset(const World& world, const DatasetRecipe& recipe,
                                  std::uint64_t seed) {
  recipe.validate();
  require(recipe.kind != DatasetRecipe::Kind::best_of_k_target,
          "build_dataset: recipe '" + recipe.name() +
              "' defines a target law, not a pair dataset");
  BuiltDataset out;
  switch (recipe.kind) {
    case DatasetRecipe::Kind::tier_pair: {
      const datagen::TierAssignment tiers = datagen::assign_tiers(world.reward);
      out.data =
          datagen::build_tier_pairs(tiers, recipe.chosen, recipe.rejected, world.prompts);
      break;
    }
    case DatasetRecipe::Kind::best_vs_worst:
    case DatasetRecipe::Kind::best_vs_random: {
      const datagen::RejectionVariant variant =
          recipe.kind == DatasetRecipe::Kind::best_vs_worst
              ? datagen::RejectionVariant::best_vs_worst
              : datagen::RejectionVariant::best_vs_random;
      out.data = datagen::rejection_sample_pairs(world.reference, world.reward, recipe.k,
                                                 variant, seed, world.prompts,
                                                 recipe.pairs_per_prompt);
      break;
    }
    case DatasetRecipe::Kind::gap_member: {
      const datagen::TierAssignment tiers = datagen::assign_tiers(world.reward);
      const datagen::GapFamily family = datagen::gap_counterfactuals(
          tiers, world.reward, world.prompts, recipe.small_gap_fraction);
      out.data = family.member(recipe.member).data;
      break;
    }
    case DatasetRecipe::Kind::labeled_reference_pairs: {
      const Rng pair_root(mix_seed(seed, k_tag_pairs));
      const std::size_t n = world.spec.responses;
      std::vector<datagen::UnlabeledPair> pairs;
      pairs.reserve(world.spec.prompts * recipe.pairs_per_prompt);
      for (std::size_t x = 0; x < world.spec.prompts; ++x) {
        const double* row = world.reference.probs.row(x);
        for (std::size_t j = 0; j < recipe.pairs_per_prompt; ++j) {
          Rng rng = pair_root.substream((static_cast<std::uint64_t>(x) << 32) ^ j);
          const std::size_t first = rng.categorical(row, n);
          std::vector<double> rest(row, row + n);
          rest[first] = 0.0;
          const std::size_t second = rng.categorical(rest.data(), n);
          pairs.push_back({x, first, second,
                           world.prompts.weights[x] /
                               static_cast<double>(recipe.pairs_per_prompt)});
        }
      }
      out.data =
          datagen::label_pairs_by_oracle(pairs, world.oracle, mix_seed(seed, k_tag_labels));
      break;
    }
    case DatasetRecipe::Kind::best_of_k_target:
      break;  // unreachable: rejected above
  }
  if (recipe.with_mix) {
    datagen::MixConfig config = recipe.mix;
    config.seed = mix_seed(seed, k_tag_mix);
    datagen::MixResult mixed =
        datagen::on_policy_mix(out.data, world.reference, world.reward, config);
    out.data = std::move(mixed.data);
    out.mix_selected = mixed.selected_count;
    out.mix_chosen_replaced = mixed.chosen_replaced;
    out.mix_rejected_replaced = mixed.rejected_replaced;
  }
  return out;
}

/** Materializes a target-law recipe: the exact best-of-k chosen law. */
inline CategoricalConditional build_target_law(const World& world,
                                               const DatasetRecipe& recipe) {
  recipe.validate();
  require(recipe.kind == DatasetRecipe::Kind::best_of_k_target,
          "build_target_law: recipe '" + recipe.name() +
              "' is a pair dataset, not a target law");
  return datagen::best_of_k_chosen_law(world.reference, world.reward, recipe.k);
}

// ============================================================================
// Replicated experiments
// ============================================================================

/** Mean, sample standard deviation, and count of the values that went in. */
struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

inline Aggregate aggregate_of(const std::vector<double>& values) {
  Aggregate out;
  out.count = values.size();
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

/** Deterministic per-replicate world seeds derived from one base seed. */
inline std::vector<std::uint64_t> replicate_seeds(std::uint64_t base, std::size_t count) {
  require(count >= 1, "replicate_seeds: need at least one replicate");
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = mix_seed(base, i);
  return out;
}

/**
 * Fixed-budget training defaults for the offline suites. The budget is
 * deliberately finite (no convergence stop): trained policies keep a few
 * percent of off-target mass, which mirrors finite-epoch training and keeps
 * the smaller rejected-side effects measurable instead of rounding every
 * dataset to a near point mass on its chosen responses.
 */
inline trainer::TrainConfig suite_train_config() {
  trainer::TrainConfig config;
  config.learning_rate = 0.5;
  config.max_steps = 500;
  config.convergence_tol = 0.0;
  config.snapshot_interval = 500;
  return config;
}

/** One replicated experiment: a recipe, a beta, and a training budget. */
struct ExperimentConfig {
  std::string name;
  WorldSpec world;  // the seed field is replaced by each replicate seed
  DatasetRecipe recipe;
  BetaParam beta{0.5};
  trainer::TrainConfig train = suite_train_config();
  std::vector<std::uint64_t> replicate_seeds = harness::replicate_seeds(0, 20);

  void validate() const {
    require(!name.empty(), "ExperimentConfig: name must not be empty");
    world.validate();
    recipe.validate();
    train.validate();
    require(!replicate_seeds.empty(), "ExperimentConfig: need at least one replicate seed");
  }
};

/** Everything recorded about one replicate. */
struct ReplicateResult {
  std::uint64_t seed = 0;
  bool failed = false;  // dataset construction failed or training diverged
  std::string failure;  // non-empty iff failed
  PolicyMetrics metrics;            // trained policy (zeros when failed)
  PolicyMetrics reference_metrics;  // untrained reference baseline
  datagen::DatasetStats data;       // pre-training dataset statistics
  std::size_t mix_selected = 0;
  std::size_t mix_chosen_replaced = 0;
  std::size_t mix_rejected_replaced = 0;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  std::size_t steps = 0;
  // Paired suites only: total-variation distance to the companion run trained
  // on the same replicate seed.
  double tv_to_companion = 0.0;
};

/** Replicate rows plus aggregates over the non-failed replicates. */
struct RunReport {
  ExperimentConfig config;
  std::string objective = "dpo";  // which trainer produced the replicates
  std::vector<ReplicateResult> replicates;
  std::size_t failed_count = 0;
  Aggregate expected_true_reward;
  Aggregate kl_to_reference;
  Aggregate win_rate_vs_reference;
  Aggregate data_mean_chosen_reward;
  Aggregate data_mean_rejected_reward;
  Aggregate data_mean_gap;

  const std::string& name() const { return config.name; }
};

namespace detail {

template <typename F>
std::vector<double> collect(const RunReport& report, F&& get) {
  std::vector<double> out;
  out.reserve(report.replicates.size());
  for (const ReplicateResult& rep : report.replicates)
    if (!rep.failed) out.push_back(get(rep));
  return out;
}

inline void finalize_report(RunReport& report) {
  report.failed_count = 0;
  for (const ReplicateResult& rep : report.replicates)
    if (rep.failed) ++report.failed_count;
  report.expected_true_reward = aggregate_of(
      collect(report, [](const ReplicateResult& r) { return r.metrics.expected_true_reward; }));
  report.kl_to_reference = aggregate_of(
      collect(report, [](const ReplicateResult& r) { return r.metrics.kl_to_reference; }));
  report.win_rate_vs_reference = aggregate_of(collect(
      report, [](const ReplicateResult& r) { return r.metrics.win_rate_vs_reference; }));
  report.data_mean_chosen_reward = aggregate_of(
      collect(report, [](const ReplicateResult& r) { return r.data.mean_chosen_reward; }));
  report.data_mean_rejected_reward = aggregate_of(
      collect(report, [](const ReplicateResult& r) { return r.data.mean_rejected_reward; }));
  report.data_mean_gap =
      aggregate_of(collect(report, [](const ReplicateResult& r) { return r.data.mean_gap; }));
}

}  // namespace detail

/**
 * Trains the pairwise preference objective once per replicate seed and
 * aggregates the evaluation metrics. Replicate k rebuilds the world with
 * spec.seed = replicate_seeds[k] and derives its dataset seed from that, so
 * experiments sharing a seed list see identical worlds and their replicate
 * rows are paired by index. A replicate whose dataset construction or
 * training fails is recorded with its error text and excluded from the
 * aggregates; it never aborts the run.
 */
inline RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  require(config.recipe.kind != DatasetRecipe::Kind::best_of_k_target,
          "run_experiment: offline experiments need a pair-dataset recipe");
  RunReport report;
  report.config = config;
  report.objective = "dpo";
  for (std::uint64_t seed : config.replicate_seeds) {
    ReplicateResult rep;
    rep.seed = seed;
    try {
      WorldSpec spec = config.world;
      spec.seed = seed;
      const World world = make_world(spec);
      const BuiltDataset built =
          build_dataset(world, config.recipe, mix_seed(seed, k_tag_dataset));
      rep.data = datagen::dataset_stats(built.data, world.reward);
      rep.mix_selected = built.mix_selected;
      rep.mix_chosen_replaced = built.mix_chosen_replaced;
      rep.mix_rejected_replaced = built.mix_rejected_replaced;
      rep.reference_metrics = eval_policy(world.reference, world);
      trainer::TrainResult result =
          trainer::train_dpo(policy_from_probs(world.reference), world.reference,
                             built.data, config.beta, config.train);
      rep.metrics = eval_policy(policy_probs(result.policy), world);
      if (!result.trace.loss.empty()) rep.final_loss = result.trace.loss.back();
      if (!result.trace.grad_max_norm.empty())
        rep.final_grad_norm = result.trace.grad_max_norm.back();
      rep.steps = result.trace.steps;
    } catch (const error& e) {
      rep.failed = true;
      rep.failure = e.what();
    }
    report.replicates.push_back(std::move(rep));
  }
  detail::finalize_report(report);
  return report;
}

// ============================================================================
// Findings and suites
// ============================================================================

/**
 * One machine-checked claim. Asserted findings decide the suite verdict;
 * informational ones record measured quantities without judging them.
 */
struct Finding {
  std::string name;
  bool asserted = true;
  bool holds = true;
  double value = 0.0;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<RunReport> reports;
  std::vector<Finding> findings;
  bool pass = true;  // conjunction of the asserted findings

  const RunReport& report(const std::string& name) const {
    for (const RunReport& r : reports)
      if (r.config.name == name) return r;
    throw invalid_input_error("SuiteResult: no report named '" + name + "'");
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

inline void add_finding(SuiteResult& suite, std::string name, bool asserted, bool holds,
                        double value, std::string detail_text) {
  suite.findings.push_back({std::move(name), asserted, holds, value, std::move(detail_text)});
  if (asserted && !holds) suite.pass = false;
}

/** |a - b| relative to the larger magnitude; 0 when both vanish. */
inline double relative_gap(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

// ----------------------------------------------------------------------------
// table1: sweep the chosen tier against a fixed worst rejected, then sweep the
// rejected tier under a fixed best chosen. Chosen quality must move trained
// reward strictly and much more than rejected quality does.
// ----------------------------------------------------------------------------
inline SuiteResult suite_quality_sweep(std::uint64_t seed, std::size_t replicates) {
  using datagen::QualityTier;
  SuiteResult out;
  out.suite = "table1";
  const std::vector<std::uint64_t> seeds = replicate_seeds(seed, replicates);

  const auto run_tier_pair = [&](QualityTier chosen, QualityTier rejected) {
    ExperimentConfig config;
    config.recipe.kind = DatasetRecipe::Kind::tier_pair;
    config.recipe.chosen = chosen;
    config.recipe.rejected = rejected;
    config.name = config.recipe.name();
    config.replicate_seeds = seeds;
    out.reports.push_back(run_experiment(config));
  };

  const std::array<QualityTier, 4> chosen_sweep = {QualityTier::low, QualityTier::medium,
                                                   QualityTier::high, QualityTier::best};
  for (QualityTier t : chosen_sweep) run_tier_pair(t, QualityTier::worst);
  for (QualityTier t : {QualityTier::low, QualityTier::medium, QualityTier::high})
    run_tier_pair(QualityTier::best, t);

  const auto er = [&](const std::string& name) {
    return out.report(name).expected_true_reward.mean;
  };
  const double er_low = er("chosen_low_rejected_worst");
  const double er_medium = er("chosen_medium_rejected_worst");
  const double er_high = er("chosen_high_rejected_worst");
  const double er_best = er("chosen_best_rejected_worst");
  const bool increasing = er_low < er_medium && er_medium < er_high && er_high < er_best;
  add_finding(out, "chosen_quality_sweep_increases_reward", true, increasing,
              er_best - er_low,
              "mean trained reward by chosen tier against a worst-tier rejected: low=" +
                  fmt(er_low) + " medium=" + fmt(er_medium) + " high=" + fmt(er_high) +
                  " best=" + fmt(er_best));

  const std::array<double, 4> chosen_vals = {er_low, er_medium, er_high, er_best};
  const std::array<double, 4> rejected_vals = {
      er("chosen_best_rejected_worst"), er("chosen_best_rejected_low"),
      er("chosen_best_rejected_medium"), er("chosen_best_rejected_high")};
  const auto spread = [](const std::array<double, 4>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
  };
  const double chosen_spread = spread(chosen_vals);
  const double rejected_spread = spread(rejected_vals);
  add_finding(out, "rejected_quality_spread_below_half_of_chosen_spread", true,
              rejected_spread < 0.5 * chosen_spread,
              chosen_spread > 0.0 ? rejected_spread / chosen_spread : 1.0,
              "trained-reward spread when sweeping the rejected tier (" +
                  fmt(rejected_spread) + ") vs sweeping the chosen tier (" +
                  fmt(chosen_spread) + ")");

  // Informational: how often the full chosen-tier ordering holds seed by seed.
  const RunReport& rl = out.report("chosen_low_rejected_worst");
  const RunReport& rm = out.report("chosen_medium_rejected_worst");
  const RunReport& rh = out.report("chosen_high_rejected_worst");
  const RunReport& rb = out.report("chosen_best_rejected_worst");
  std::size_t ordered = 0, counted = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (rl.replicates[i].failed || rm.replicates[i].failed || rh.replicates[i].failed ||
        rb.replicates[i].failed)
      continue;
    ++counted;
    const double a = rl.replicates[i].metrics.expected_true_reward;
    const double b = rm.replicates[i].metrics.expected_true_reward;
    const double c = rh.replicates[i].metrics.expected_true_reward;
    const double d = rb.replicates[i].metrics.expected_true_reward;
    if (a < b && b < c && c < d) ++ordered;
  }
  add_finding(out, "chosen_quality_per_seed_ordering_frequency", false, true,
              counted == 0 ? 0.0
                           : static_cast<double>(ordered) / static_cast<double>(counted),
              "fraction of replicate seeds on which the chosen-tier reward ordering is "
              "strict: " +
                  std::to_string(ordered) + "/" + std::to_string(counted));

  // The datasets themselves must already carry the quality ordering.
  const bool data_increasing =
      rl.data_mean_chosen_reward.mean < rm.data_mean_chosen_reward.mean &&
      rm.data_mean_chosen_reward.mean < rh.data_mean_chosen_reward.mean &&
      rh.data_mean_chosen_reward.mean < rb.data_mean_chosen_reward.mean;
  add_finding(out, "dataset_chosen_reward_increases_with_tier", true, data_increasing,
              rb.data_mean_chosen_reward.mean - rl.data_mean_chosen_reward.mean,
              "mean chosen reward in the data: low=" + fmt(rl.data_mean_chosen_reward.mean) +
                  " medium=" + fmt(rm.data_mean_chosen_reward.mean) +
                  " high=" + fmt(rh.data_mean_chosen_reward.mean) +
                  " best=" + fmt(rb.data_mean_chosen_reward.mean));
  return out;
}

// ----------------------------------------------------------------------------
// table2: online preference training against a fixed chosen law must land on
// the same policy as continual supervised training toward that law with a
// small KL leash, and their evaluation metrics must agree closely.
// ----------------------------------------------------------------------------
inline SuiteResult suite_online_vs_continual(std::uint64_t seed, std::size_t replicates) {
  SuiteResult out;
  out.suite = "table2";
  const std::vector<std::uint64_t> seeds = replicate_seeds(seed, replicates);
  const BetaParam beta(0.05);
  const double kl_weight = beta.value / 2.0;  // the small-beta expansion's leash

  DatasetRecipe target_recipe;
  target_recipe.kind = DatasetRecipe::Kind::best_of_k_target;
  target_recipe.k = 4;

  trainer::TrainConfig online_config;
  online_config.learning_rate = 0.5 / (beta.value * beta.value);  // curvature ~ beta^2
  online_config.max_steps = 20000;
  online_config.convergence_tol = 1e-8;
  online_config.snapshot_interval = 20000;

  trainer::TrainConfig continual_config;
  continual_config.learning_rate = 0.5 / (1.0 + kl_weight);  // the leash adds curvature
  continual_config.max_steps = 20000;
  continual_config.convergence_tol = 1e-8;
  continual_config.snapshot_interval = 20000;

  RunReport online_report;
  online_report.config.name = "online_preference";
  online_report.config.recipe = target_recipe;
  online_report.config.beta = beta;
  online_report.config.train = online_config;
  online_report.config.replicate_seeds = seeds;
  online_report.objective = "online_dpo";

  RunReport continual_report;
  continual_report.config.name = "continual_supervised";
  continual_report.config.recipe = target_recipe;
  continual_report.config.beta = beta;
  continual_report.config.train = continual_config;
  continual_report.config.replicate_seeds = seeds;
  continual_report.objective = "sft_kl";

  std::vector<double> tvs;
  for (std::uint64_t s : seeds) {
    ReplicateResult rep_online;
    ReplicateResult rep_continual;
    rep_online.seed = rep_continual.seed = s;
    try {
      WorldSpec spec;
      spec.seed = s;
      const World world = make_world(spec);
      const CategoricalConditional target = build_target_law(world, target_recipe);
      const PolicyMetrics reference_metrics = eval_policy(world.reference, world);

      trainer::OnlineSpec online_spec;  // exact-expectation rejected side
      trainer::TrainResult online = trainer::train_online_dpo(
          policy_from_probs(world.reference), world.reference, target, world.prompts, beta,
          online_spec, online_config);
      trainer::TrainResult continual = trainer::train_sft_kl(
          policy_from_probs(world.reference), target, world.reference, world.prompts,
          kl_weight, continual_config);

      const CategoricalConditional online_probs = policy_probs(online.policy);
      const CategoricalConditional continual_probs = policy_probs(continual.policy);
      rep_online.metrics = eval_policy(online_probs, world);
      rep_continual.metrics = eval_policy(continual_probs, world);
      rep_online.reference_metrics = rep_continual.reference_metrics = reference_metrics;
      const double tv = max_tv_distance(online_probs.probs, continual_probs.probs);
      rep_online.tv_to_companion = rep_continual.tv_to_companion = tv;
      tvs.push_back(tv);

      rep_online.final_loss = online.trace.loss.back();
      rep_online.final_grad_norm = online.trace.grad_max_norm.back();
      rep_online.steps = online.trace.steps;
      rep_continual.final_loss = continual.trace.loss.back();
      rep_continual.final_grad_norm = continual.trace.grad_max_norm.back();
      rep_continual.steps = continual.trace.steps;
    } catch (const error& e) {
      rep_online.failed = rep_continual.failed = true;
      rep_online.failure = rep_continual.failure = e.what();
    }
    online_report.replicates.push_back(std::move(rep_online));
    continual_report.replicates.push_back(std::move(rep_continual));
  }
  finalize_report(online_report);
  finalize_report(continual_report);
  out.reports.push_back(std::move(online_report));
  out.reports.push_back(std::move(continual_report));

  double max_tv = 0.0;
  for (double tv : tvs) max_tv = std::max(max_tv, tv);
  add_finding(out, "online_matches_continual_supervised_law", true,
              !tvs.empty() && max_tv <= 0.05, max_tv,
              "largest per-replicate total-variation distance between the two trained "
              "policies: " +
                  fmt(max_tv));

  const RunReport& a = out.reports[0];
  const RunReport& b = out.reports[1];
  const double er_gap =
      relative_gap(a.expected_true_reward.mean, b.expected_true_reward.mean);
  add_finding(out, "expected_reward_gap_within_ten_percent", true,
              a.expected_true_reward.count > 0 && er_gap <= 0.10, er_gap,
              "mean trained reward online=" + fmt(a.expected_true_reward.mean) +
                  " vs continual=" + fmt(b.expected_true_reward.mean));
  const double wr_gap =
      relative_gap(a.win_rate_vs_reference.mean, b.win_rate_vs_reference.mean);
  add_finding(out, "win_rate_gap_within_ten_percent", true,
              a.win_rate_vs_reference.count > 0 && wr_gap <= 0.10, wr_gap,
              "mean win rate online=" + fmt(a.win_rate_vs_reference.mean) +
                  " vs continual=" + fmt(b.win_rate_vs_reference.mean));
  add_finding(out, "kl_to_reference_relative_gap", false, true,
              relative_gap(a.kl_to_reference.mean, b.kl_to_reference.mean),
              "mean KL to reference online=" + fmt(a.kl_to_reference.mean) +
                  " vs continual=" + fmt(b.kl_to_reference.mean));
  return out;
}

// ----------------------------------------------------------------------------
// table3: with the gap/counterfactual family, varying chosen quality must move
// trained reward more than varying the chosen-rejected gap, which in turn must
// move it more than a gap-matched counterfactual at lower chosen quality.
// ----------------------------------------------------------------------------
inline SuiteResult suite_gap_effects(std::uint64_t seed, std::size_t replicates) {
  SuiteResult out;
  out.suite = "table3";
  const std::vector<std::uint64_t> seeds = replicate_seeds(seed, replicates);

  const std::array<const char*, 6> members = {"best_over_worst",   "high_over_near",
                                              "medium_over_worst", "low_over_near",
                                              "best_over_near",    "high_over_worst"};
  for (const char* member : members) {
    ExperimentConfig config;
    config.recipe.kind = DatasetRecipe::Kind::gap_member;
    config.recipe.member = member;
    config.name = member;
    config.replicate_seeds = seeds;
    out.reports.push_back(run_experiment(config));
  }

  const auto er = [&](const std::string& name) {
    return out.report(name).expected_true_reward.mean;
  };
  const double quality_effect = er("best_over_worst") - er("medium_over_worst");
  const double gap_effect = er("best_over_worst") - er("best_over_near");
  const double counterfactual_effect = er("high_over_worst") - er("high_over_near");

  add_finding(out, "chosen_quality_effect", false, true, quality_effect,
              "trained-reward shift from raising the chosen tier (medium -> best) at a "
              "fixed worst rejected");
  add_finding(out, "gap_effect", false, true, gap_effect,
              "trained-reward shift from widening the pair gap (near -> worst rejected) at "
              "a fixed best chosen");
  add_finding(out, "counterfactual_effect", false, true, counterfactual_effect,
              "the same gap widening applied at a high (not best) chosen tier");
  add_finding(out, "chosen_quality_effect_exceeds_gap_effect", true,
              quality_effect > gap_effect, quality_effect - gap_effect,
              "quality effect " + fmt(quality_effect) + " vs gap effect " + fmt(gap_effect));
  add_finding(out, "gap_effect_exceeds_counterfactual_effect", true,
              gap_effect > counterfactual_effect, gap_effect - counterfactual_effect,
              "gap effect " + fmt(gap_effect) + " vs counterfactual effect " +
                  fmt(counterfactual_effect));

  const double bw_gap = out.report("best_over_worst").data_mean_gap.mean;
  const double bn_gap = out.report("best_over_near").data_mean_gap.mean;
  const double hw_gap = out.report("high_over_worst").data_mean_gap.mean;
  const double hn_gap = out.report("high_over_near").data_mean_gap.mean;
  add_finding(out, "wide_gap_data_exceeds_narrow_gap_data", true,
              bw_gap > bn_gap && hw_gap > hn_gap, bw_gap - bn_gap,
              "mean data gaps: best_over_worst=" + fmt(bw_gap) + " best_over_near=" +
                  fmt(bn_gap) + " high_over_worst=" + fmt(hw_gap) + " high_over_near=" +
                  fmt(hn_gap));
  return out;
}

// ----------------------------------------------------------------------------
// table4: rebuilding a fraction of a mediocre offline dataset from fresh
// generation-policy samples must monotonically upgrade the data's chosen side,
// replicate by replicate; the trained-reward shift is recorded.
// ----------------------------------------------------------------------------
inline SuiteResult suite_mixing(std::uint64_t seed, std::size_t replicates) {
  SuiteResult out;
  out.suite = "table4";
  const std::vector<std::uint64_t> seeds = replicate_seeds(seed, replicates);

  const auto run_mixing = [&](bool with_mix, double rho) {
    ExperimentConfig config;
    config.recipe.kind = DatasetRecipe::Kind::labeled_reference_pairs;
    config.recipe.pairs_per_prompt = 8;
    config.recipe.with_mix = with_mix;
    config.recipe.mix.rho = rho;
    config.recipe.mix.k = 8;
    config.name = config.recipe.name();
    config.replicate_seeds = seeds;
    out.reports.push_back(run_experiment(config));
  };
  run_mixing(false, 0.0);
  for (double rho : {0.25, 0.5, 1.0}) run_mixing(true, rho);

  const RunReport& base = out.report("reference_pairs");
  const std::array<const char*, 3> mixed_names = {
      "reference_pairs_mix25", "reference_pairs_mix50", "reference_pairs_mix100"};

  // Asserted per replicate: mixing never lowers the data's mean chosen reward.
  bool never_lower = true;
  double min_margin = 0.0;
  bool first_margin = true;
  std::size_t compared = 0;
  for (const char* name : mixed_names) {
    const RunReport& mixed = out.report(name);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (base.replicates[i].failed || mixed.replicates[i].failed) continue;
      const double margin = mixed.replicates[i].data.mean_chosen_reward -
                            base.replicates[i].data.mean_chosen_reward;
      if (first_margin || margin < min_margin) min_margin = margin;
      first_margin = false;
      never_lower = never_lower && margin >= -1e-12;
      ++compared;
    }
  }
  add_finding(out, "mixing_never_lowers_dataset_chosen_reward", true,
              never_lower && compared > 0, min_margin,
              "smallest per-replicate change in mean chosen reward after mixing, over " +
                  std::to_string(compared) + " comparisons");

  // Asserted per replicate: the upgrade is monotone in the mixing fraction
  // (selection prefixes nest and per-item rebuilds reuse the item's stream).
  bool monotone = true;
  double min_step = 0.0;
  bool first_step = true;
  for (std::size_t m = 0; m + 1 < mixed_names.size(); ++m) {
    const RunReport& lo = out.report(mixed_names[m]);
    const RunReport& hi = out.report(mixed_names[m + 1]);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (lo.replicates[i].failed || hi.replicates[i].failed) continue;
      const double step = hi.replicates[i].data.mean_chosen_reward -
                          lo.replicates[i].data.mean_chosen_reward;
      if (first_step || step < min_step) min_step = step;
      first_step = false;
      monotone = monotone && step >= -1e-12;
    }
  }
  add_finding(out, "dataset_chosen_reward_nondecreasing_in_mixing_fraction", true,
              monotone && !first_step, min_step,
              "smallest per-replicate chosen-reward step between consecutive mixing "
              "fractions");

  const auto er = [&](const std::string& name) {
    return out.report(name).expected_true_reward.mean;
  };
  add_finding(out, "mixing_trained_reward_shift", false, true,
              er("reference_pairs_mix100") - er("reference_pairs"),
              "mean trained reward: base=" + fmt(er("reference_pairs")) + " mix25=" +
                  fmt(er("reference_pairs_mix25")) + " mix50=" +
                  fmt(er("reference_pairs_mix50")) + " mix100=" +
                  fmt(er("reference_pairs_mix100")));

  const auto mean_selected = [&](const std::string& name) {
    return aggregate_of(collect(out.report(name), [](const ReplicateResult& r) {
             return static_cast<double>(r.mix_selected);
           }))
        .mean;
  };
  const auto mean_chosen_branch = [&](const std::string& name) {
    return aggregate_of(collect(out.report(name), [](const ReplicateResult& r) {
             return static_cast<double>(r.mix_chosen_replaced);
           }))
        .mean;
  };
  add_finding(out, "mixing_replacement_counts", false, true,
              mean_selected("reference_pairs_mix100"),
              "mean items rebuilt per replicate: mix25=" +
                  fmt(mean_selected("reference_pairs_mix25")) + " mix50=" +
                  fmt(mean_selected("reference_pairs_mix50")) + " mix100=" +
                  fmt(mean_selected("reference_pairs_mix100")) +
                  "; chosen-side upgrades at mix100=" +
                  fmt(mean_chosen_branch("reference_pairs_mix100")));
  return out;
}

// ----------------------------------------------------------------------------
// khaki: under a shared candidate stream, switching the rejected side from
// worst-of-k to a random other draw must move trained reward by less than the
// gap separating either variant from a genuinely low-quality chosen side.
// ----------------------------------------------------------------------------
inline SuiteResult suite_sampled_variants(std::uint64_t seed, std::size_t replicates) {
  using datagen::QualityTier;
  SuiteResult out;
  out.suite = "khaki";
  const std::vector<std::uint64_t> seeds = replicate_seeds(seed, replicates);

  const auto run_recipe = [&](DatasetRecipe recipe) {
    ExperimentConfig config;
    config.recipe = std::move(recipe);
    config.name = config.recipe.name();
    config.replicate_seeds = seeds;
    out.reports.push_back(run_experiment(config));
  };
  DatasetRecipe bw;
  bw.kind = DatasetRecipe::Kind::best_vs_worst;
  bw.k = 16;
  bw.pairs_per_prompt = 16;
  run_recipe(bw);
  DatasetRecipe br = bw;
  br.kind = DatasetRecipe::Kind::best_vs_random;
  run_recipe(br);
  DatasetRecipe low;
  low.kind = DatasetRecipe::Kind::tier_pair;
  low.chosen = QualityTier::low;
  low.rejected = QualityTier::worst;
  run_recipe(low);

  const RunReport& report_bw = out.report("best_vs_worst_k16");
  const RunReport& report_br = out.report("best_vs_random_k16");
  const RunReport& report_low = out.report("chosen_low_rejected_worst");
  const double er_bw = report_bw.expected_true_reward.mean;
  const double er_br = report_br.expected_true_reward.mean;
  const double er_low = report_low.expected_true_reward.mean;
  const double variant_gap = std::abs(er_bw - er_br);
  const double quality_gap = er_bw - er_low;
  add_finding(out, "rejected_variant_gap_below_chosen_quality_gap", true,
              variant_gap < quality_gap, variant_gap,
              "|best_vs_worst - best_vs_random| = " + fmt(variant_gap) +
                  " vs best_vs_worst - low_tier_baseline = " + fmt(quality_gap));

  // Structural: both variants must have drawn identical chosen responses
  // (same dataset substream), so their data-side chosen means match exactly.
  bool shared_chosen = true;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (report_bw.replicates[i].failed || report_br.replicates[i].failed) continue;
    shared_chosen = shared_chosen && (report_bw.replicates[i].data.mean_chosen_reward ==
                                      report_br.replicates[i].data.mean_chosen_reward);
  }
  add_finding(out, "variants_share_chosen_draws", true, shared_chosen, 0.0,
              "per-replicate mean chosen rewards of the two sampled variants are "
              "bit-identical");

  std::size_t closer = 0, counted = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (report_bw.replicates[i].failed || report_br.replicates[i].failed ||
        report_low.replicates[i].failed)
      continue;
    ++counted;
    const double bw_i = report_bw.replicates[i].metrics.expected_true_reward;
    const double br_i = report_br.replicates[i].metrics.expected_true_reward;
    const double low_i = report_low.replicates[i].metrics.expected_true_reward;
    if (std::abs(bw_i - br_i) < bw_i - low_i) ++closer;
  }
  add_finding(out, "per_seed_variant_agreement_frequency", false, true,
              counted == 0 ? 0.0 : static_cast<double>(closer) / static_cast<double>(counted),
              "fraction of replicate seeds on which the variant gap stays below the "
              "quality gap: " +
                  std::to_string(closer) + "/" + std::to_string(counted));

  add_finding(out, "sampled_dataset_quality", false, true,
              report_bw.data_mean_chosen_reward.mean,
              "data means: best_vs_worst chosen=" + fmt(report_bw.data_mean_chosen_reward.mean) +
                  " gap=" + fmt(report_bw.data_mean_gap.mean) + "; best_vs_random chosen=" +
                  fmt(report_br.data_mean_chosen_reward.mean) + " gap=" +
                  fmt(report_br.data_mean_gap.mean));
  return out;
}

}  // namespace detail

/** The suite names run_suite accepts, in canonical order. */
inline const std::array<const char*, 5>& suite_names() {
  static const std::array<const char*, 5> names = {"table1", "table2", "table3", "table4",
                                                   "khaki"};
  return names;
}

/**
 * Runs one named experiment suite:
 *   - table1: chosen-tier quality sweep dominates the rejected-tier sweep;
 *   - table2: online preference training matches continual supervised training;
 *   - table3: chosen quality beats gap width beats gap-matched counterfactuals;
 *   - table4: on-policy mixing monotonically upgrades dataset quality;
 *   - khaki: rejected-side sampling variants are nearly interchangeable.
 */
inline SuiteResult run_suite(const std::string& suite, std::uint64_t seed = 0,
                             std::size_t replicates = 20) {
  require(replicates >= 1, "run_suite: need at least one replicate");
  if (suite == "table1") return detail::suite_quality_sweep(seed, replicates);
  if (suite == "table2") return detail::suite_online_vs_continual(seed, replicates);
  if (suite == "table3") return detail::suite_gap_effects(seed, replicates);
  if (suite == "table4") return detail::suite_mixing(seed, replicates);
  if (suite == "khaki") return detail::suite_sampled_variants(seed, replicates);
  throw invalid_input_error("run_suite: unknown suite '" + suite + "'");
}

}  // namespace prefopt::harness
