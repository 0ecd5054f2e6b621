/**
 * prefopt_cli.cpp - Command-line front end for the preference-optimization
 * laboratory.
 *
 * Subcommands:
 *   verify      run structural checks and write one JSON report per check
 *   train       train one objective in a synthetic world, write policy + trace
 *   datagen     materialize a dataset recipe as JSON-lines, print statistics
 *   experiment  run a named finding suite or one replicated experiment
 *
 * Conventions shared by every subcommand:
 *   - configuration comes from an optional JSON file (--config) with flags
 *     overriding file values; unknown keys and unknown flags are rejected;
 *   - a resolved-config echo is written next to the outputs, and re-feeding
 *     that echo reproduces identical output files;
 *   - outputs land in --out, defaulting to $PREFOPT_OUT_DIR or ./prefopt_out,
 *     written atomically and versioned with schema tags;
 *   - output bytes depend only on the configuration and seeds (never on
 *     wall-clock time, environment, or locale);
 *   - exit 0 on success, 1 when a run fails (divergence, failed findings,
 *     unsatisfiable construction), 2 for usage or configuration errors.
 */

#include <CLI11.hpp>

#include <prefopt/serialize.hpp>

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace {

using namespace prefopt;
namespace sz = prefopt::serialize;
using sz::json;

std::string fd(double v) { return sz::format_double(v); }

std::string out_path(const std::string& out_dir, const std::string& name) {
  return (std::filesystem::path(out_dir) / name).string();
}

std::string default_out_dir() {
  const char* env = std::getenv("PREFOPT_OUT_DIR");
  return (env != nullptr && *env != '\0') ? std::string(env) : std::string("prefopt_out");
}

void warn_if_sharp_beta(double beta) {
  if (beta > 1.0)
    std::cerr << "warning: beta " << fd(beta)
              << " exceeds 1; preference strengths this sharp are atypical\n";
}

/** Loads a JSON config file; a missing or unreadable file is a usage error. */
json load_config_file(const std::string& path) {
  std::string text;
  try {
    text = sz::read_text_file(path);
  } catch (const sz::io_error& e) {
    throw invalid_input_error(std::string("config: ") + e.what());
  }
  return sz::parse_json_text(text, "config '" + path + "'");
}

std::string pad(std::string s, std::size_t width) {
  while (s.size() < width) s += ' ';
  return s;
}

// ============================================================================
// verify
// ============================================================================

const std::array<const char*, 5>& all_check_names() {
  static const std::array<const char*, 5> names = {
      "coverage", "sign-agreement", "closed-form", "loss-identity", "online-reduction"};
  return names;
}

struct VerifyConfig {
  std::vector<std::string> checks;
  theory::InstanceSpec spec;
};

json verify_config_to_json(const VerifyConfig& c) {
  return json{{"schema", sz::schema_tag("verify_config")},
              {"checks", c.checks},
              {"prompts", c.spec.prompts},
              {"responses", c.spec.responses},
              {"seed", c.spec.seed},
              {"beta", c.spec.beta}};
}

VerifyConfig verify_config_from_json(const json& j) {
  const std::string context = "verify_config_from_json";
  sz::detail::check_schema(j, sz::schema_tag("verify_config"), context);
  sz::detail::require_keys(j, {"schema", "checks", "prompts", "responses", "seed", "beta"},
                           context);
  VerifyConfig c;
  if (j.find("checks") != j.end()) {
    const json& checks = j.at("checks");
    if (!checks.is_array())
      throw invalid_input_error(context + ": 'checks' must be an array of check names");
    for (const json& v : checks) c.checks.push_back(sz::detail::as_string(v, "checks", context));
  }
  sz::detail::read_size(j, "prompts", c.spec.prompts, context);
  sz::detail::read_size(j, "responses", c.spec.responses, context);
  sz::detail::read_u64(j, "seed", c.spec.seed, context);
  sz::detail::read_double(j, "beta", c.spec.beta, context);
  c.spec.validate();
  return c;
}

theory::VerificationReport run_check(const std::string& name, const theory::InstanceSpec& spec) {
  if (name == "coverage") return theory::verify_coverage(spec);
  if (name == "sign-agreement") return theory::verify_sign_conditions(spec);
  if (name == "closed-form") return theory::verify_closed_form(spec);
  if (name == "loss-identity") return theory::verify_loss_identity(spec);
  if (name == "online-reduction") return theory::verify_online_reduction(spec);
  throw invalid_input_error("verify: unknown check '" + name + "'");
}

int cmd_verify(const VerifyConfig& cfg, const std::string& out_dir, bool quiet) {
  if (cfg.checks.empty())
    throw invalid_input_error("verify: no checks selected; pass --all or --check <name>");
  for (const std::string& name : cfg.checks) {
    bool known = false;
    for (const char* candidate : all_check_names()) known = known || name == candidate;
    if (!known) throw invalid_input_error("verify: unknown check '" + name + "'");
  }
  warn_if_sharp_beta(cfg.spec.beta);
  sz::write_json_file(out_path(out_dir, "resolved_config.json"), verify_config_to_json(cfg));

  bool all_pass = true;
  for (const std::string& name : cfg.checks) {
    const theory::VerificationReport report = run_check(name, cfg.spec);
    sz::write_json_file(out_path(out_dir, "verify_" + name + ".json"),
                        sz::verification_report_to_json(report));
    all_pass = all_pass && report.pass;
    if (quiet) continue;
    std::cout << pad(name, 18) << (report.pass ? "PASS" : "FAIL") << "  "
              << report.measurements.size() << " measurements\n";
    for (const theory::Measurement& m : report.measurements)
      if (!m.pass)
        std::cout << "    FAIL " << m.name << " value=" << fd(m.value) << " " << m.relation
                  << " bound=" << fd(m.bound) << "\n";
  }
  if (!quiet)
    std::cout << (all_pass ? "verify: all checks passed" : "verify: some checks FAILED")
              << "\n";
  return all_pass ? 0 : 1;
}

// ============================================================================
// train
// ============================================================================

struct TrainCliConfig {
  std::string objective = "dpo";  // dpo | rlhf | sft | sft_kl | online_dpo
  double beta = 0.5;
  double kl_weight = 0.0;  // sft_kl only
  harness::WorldSpec world;
  harness::DatasetRecipe recipe;
  std::string dataset_path;  // optional pair-data JSONL, dpo only
  trainer::TrainConfig train;
  bool compare_closed_form = false;
};

json train_cli_to_json(const TrainCliConfig& c) {
  return json{{"schema", sz::schema_tag("train_config")},
              {"objective", c.objective},
              {"beta", c.beta},
              {"kl_weight", c.kl_weight},
              {"world", sz::world_spec_to_json(c.world)},
              {"recipe", sz::dataset_recipe_to_json(c.recipe)},
              {"dataset", c.dataset_path},
              {"train", sz::train_config_to_json(c.train)},
              {"compare_closed_form", c.compare_closed_form}};
}

TrainCliConfig train_cli_from_json(const json& j) {
  const std::string context = "train_config_from_json";
  sz::detail::check_schema(j, sz::schema_tag("train_config"), context);
  sz::detail::require_keys(j,
                           {"schema", "objective", "beta", "kl_weight", "world", "recipe",
                            "dataset", "train", "compare_closed_form"},
                           context);
  TrainCliConfig c;
  sz::detail::read_string(j, "objective", c.objective, context);
  sz::detail::read_double(j, "beta", c.beta, context);
  sz::detail::read_double(j, "kl_weight", c.kl_weight, context);
  if (j.find("world") != j.end()) c.world = sz::world_spec_from_json(j.at("world"));
  if (j.find("recipe") != j.end()) c.recipe = sz::dataset_recipe_from_json(j.at("recipe"));
  sz::detail::read_string(j, "dataset", c.dataset_path, context);
  if (j.find("train") != j.end()) c.train = sz::train_config_from_json(j.at("train"));
  sz::detail::read_bool(j, "compare_closed_form", c.compare_closed_form, context);
  return c;
}

/** Every (prompt, response) cell of the target law as a supervised item. */
losses::SupervisedSet expand_supervised(const CategoricalConditional& target,
                                        const PromptSpace& prompts) {
  std::vector<losses::SupervisedSet::Item> items;
  for (std::size_t x = 0; x < target.prompts(); ++x)
    for (std::size_t y = 0; y < target.responses(); ++y) {
      const double w = prompts.weights[x] * target.probs(x, y);
      if (w > 0.0) items.push_back({x, y, w});
    }
  return losses::SupervisedSet::normalized(std::move(items), target.prompts(),
                                           target.responses());
}

/** Weighted chosen/rejected marginals of a pair dataset, one row per prompt. */
solvers::MarginalPair empirical_marginals(const PreferencePairSet& data) {
  Matrix chosen(data.prompts, data.responses, 0.0);
  Matrix rejected(data.prompts, data.responses, 0.0);
  for (const PreferencePairSet::Item& it : data.items) {
    chosen(it.prompt, it.chosen) += it.weight;
    rejected(it.prompt, it.rejected) += it.weight;
  }
  for (Matrix* side : {&chosen, &rejected}) {
    for (std::size_t x = 0; x < data.prompts; ++x) {
      double total = 0.0;
      for (std::size_t y = 0; y < data.responses; ++y) total += (*side)(x, y);
      require(total > 0.0, "train: closed-form comparison needs pairs on every prompt");
      for (std::size_t y = 0; y < data.responses; ++y) {
        (*side)(x, y) /= total;
        require((*side)(x, y) > 0.0,
                "train: closed-form comparison requires every response to appear on both "
                "the chosen and the rejected side");
      }
    }
  }
  return solvers::MarginalPair::of(CategoricalConditional::from_probs(std::move(chosen)),
                                   CategoricalConditional::from_probs(std::move(rejected)));
}

int cmd_train(const TrainCliConfig& cfg, const std::string& out_dir, bool quiet) {
  bool known = false;
  for (const char* name : {"dpo", "rlhf", "sft", "sft_kl", "online_dpo"})
    known = known || cfg.objective == name;
  if (!known) throw invalid_input_error("train: unknown objective '" + cfg.objective + "'");
  if (cfg.compare_closed_form && cfg.objective != "dpo" && cfg.objective != "rlhf")
    throw invalid_input_error(
        "train: closed-form comparison supports the dpo and rlhf objectives only");
  if (!cfg.dataset_path.empty() && cfg.objective != "dpo")
    throw invalid_input_error("train: a dataset file applies only to the dpo objective");
  const losses::BetaParam beta(cfg.beta);
  warn_if_sharp_beta(cfg.beta);

  const harness::World world = harness::make_world(cfg.world);
  const TabularPolicy init = policy_from_probs(world.reference);
  sz::write_json_file(out_path(out_dir, "resolved_config.json"), train_cli_to_json(cfg));

  // Materialize the data the objective consumes before training starts, so
  // configuration problems surface as usage errors rather than mid-run.
  PreferencePairSet pairs;
  CategoricalConditional target;
  std::optional<solvers::MarginalPair> pair_marginals;
  if (cfg.objective == "dpo") {
    if (!cfg.dataset_path.empty()) {
      const sz::ParsedDataset parsed =
          sz::dataset_from_jsonl(sz::read_text_file(cfg.dataset_path));
      require(parsed.data.prompts == world.spec.prompts &&
                  parsed.data.responses == world.spec.responses,
              "train: dataset shape does not match the world's prompt/response counts");
      pairs = parsed.data;
    } else {
      pairs = harness::build_dataset(world, cfg.recipe,
                                     mix_seed(cfg.world.seed, harness::k_tag_dataset))
                  .data;
    }
    if (cfg.compare_closed_form) pair_marginals = empirical_marginals(pairs);
  } else if (cfg.objective != "rlhf") {
    target = harness::build_target_law(world, cfg.recipe);
  }

  try {
    trainer::TrainResult result = [&] {
      if (cfg.objective == "dpo")
        return trainer::train_dpo(init, world.reference, pairs, beta, cfg.train);
      if (cfg.objective == "rlhf")
        return trainer::train_rlhf(init, world.reference, world.reward, world.prompts, beta,
                                   cfg.train);
      if (cfg.objective == "sft")
        return trainer::train_sft(init, expand_supervised(target, world.prompts), cfg.train);
      if (cfg.objective == "sft_kl")
        return trainer::train_sft_kl(init, target, world.reference, world.prompts,
                                     cfg.kl_weight, cfg.train);
      return trainer::train_online_dpo(init, world.reference, target, world.prompts, beta,
                                       trainer::OnlineSpec{}, cfg.train);
    }();

    sz::write_json_file(out_path(out_dir, "policy.json"), sz::policy_to_json(result.policy));
    sz::atomic_write_file(out_path(out_dir, "trace.csv"), sz::train_trace_csv(result.trace));
    sz::write_json_file(out_path(out_dir, "trace.json"),
                        sz::train_trace_to_json(result.trace));

    const CategoricalConditional trained = policy_probs(result.policy);
    const double tv_reference = max_tv_distance(trained.probs, world.reference.probs);
    std::string closed_form_note;
    if (cfg.compare_closed_form) {
      const CategoricalConditional optimum =
          cfg.objective == "dpo"
              ? solvers::dpo_optimal_policy(world.reference, *pair_marginals, beta)
              : solvers::rlhf_optimal_policy(world.reference, world.reward, beta);
      closed_form_note =
          " tv_to_closed_form=" + fd(max_tv_distance(trained.probs, optimum.probs));
    }
    if (!quiet)
      std::cout << "train objective=" << cfg.objective
                << " halt=" << trainer::halt_reason_name(result.trace.halt)
                << " steps=" << result.trace.steps
                << " final_loss=" << fd(result.trace.loss.back())
                << " final_grad_norm=" << fd(result.trace.grad_max_norm.back())
                << " tv_to_reference=" << fd(tv_reference) << closed_form_note << "\n";
    return 0;
  } catch (const trainer::training_diverged_error& e) {
    sz::atomic_write_file(out_path(out_dir, "trace.csv"), sz::train_trace_csv(e.trace));
    sz::write_json_file(out_path(out_dir, "trace.json"), sz::train_trace_to_json(e.trace));
    std::cerr << "train: " << e.what() << " (trace written)\n";
    return 1;
  }
}

// ============================================================================
// datagen
// ============================================================================

struct DatagenCliConfig {
  harness::WorldSpec world;
  harness::DatasetRecipe recipe;
};

json datagen_cli_to_json(const DatagenCliConfig& c) {
  return json{{"schema", sz::schema_tag("datagen_config")},
              {"world", sz::world_spec_to_json(c.world)},
              {"recipe", sz::dataset_recipe_to_json(c.recipe)}};
}

DatagenCliConfig datagen_cli_from_json(const json& j) {
  const std::string context = "datagen_config_from_json";
  sz::detail::check_schema(j, sz::schema_tag("datagen_config"), context);
  sz::detail::require_keys(j, {"schema", "world", "recipe"}, context);
  DatagenCliConfig c;
  if (j.find("world") != j.end()) c.world = sz::world_spec_from_json(j.at("world"));
  if (j.find("recipe") != j.end()) c.recipe = sz::dataset_recipe_from_json(j.at("recipe"));
  return c;
}

int cmd_datagen(const DatagenCliConfig& cfg, const std::string& out_dir, bool quiet) {
  const harness::World world = harness::make_world(cfg.world);
  const std::uint64_t data_seed = mix_seed(cfg.world.seed, harness::k_tag_dataset);
  const harness::BuiltDataset built = harness::build_dataset(world, cfg.recipe, data_seed);

  sz::DatasetProvenance provenance;
  provenance.strategy = cfg.recipe.name();
  provenance.seed = data_seed;
  const bool tier_based = cfg.recipe.kind == harness::DatasetRecipe::Kind::tier_pair ||
                          cfg.recipe.kind == harness::DatasetRecipe::Kind::gap_member;
  if (tier_based) {
    const datagen::TierAssignment tiers = datagen::assign_tiers(world.reward);
    provenance.tier_ranks.assign(tiers.ranks.begin(), tiers.ranks.end());
  }

  sz::write_json_file(out_path(out_dir, "resolved_config.json"), datagen_cli_to_json(cfg));
  sz::atomic_write_file(out_path(out_dir, "dataset.jsonl"),
                        sz::dataset_to_jsonl(built.data, provenance));

  if (quiet) return 0;
  const datagen::DatasetStats stats = datagen::dataset_stats(built.data, world.reward);
  std::cout << "dataset " << cfg.recipe.name() << "\n"
            << "items: " << built.data.items.size() << "\n"
            << "mean_chosen_reward: " << fd(stats.mean_chosen_reward) << "\n"
            << "mean_rejected_reward: " << fd(stats.mean_rejected_reward) << "\n"
            << "mean_gap: " << fd(stats.mean_gap) << "\n";
  if (cfg.recipe.with_mix)
    std::cout << "mix_selected: " << built.mix_selected << "\n"
              << "mix_chosen_replaced: " << built.mix_chosen_replaced << "\n"
              << "mix_rejected_replaced: " << built.mix_rejected_replaced << "\n";
  if (cfg.recipe.kind == harness::DatasetRecipe::Kind::gap_member) {
    const datagen::GapFamily family =
        datagen::gap_counterfactuals(datagen::assign_tiers(world.reward), world.reward,
                                     world.prompts, cfg.recipe.small_gap_fraction);
    const auto gap = [&](const char* n) { return family.member(n).mean_gap; };
    const auto chosen = [&](const char* n) { return family.member(n).mean_chosen_reward; };
    const auto line = [](const char* desc, bool holds) {
      std::cout << "ordering " << desc << ": " << (holds ? "true" : "false") << "\n";
    };
    line("gap(best_over_worst) > gap(high_over_near)",
         gap("best_over_worst") > gap("high_over_near"));
    line("gap(medium_over_worst) > gap(low_over_near)",
         gap("medium_over_worst") > gap("low_over_near"));
    line("chosen(best_over_worst) > chosen(medium_over_worst)",
         chosen("best_over_worst") > chosen("medium_over_worst"));
    line("gap(high_over_worst) > gap(high_over_near)",
         gap("high_over_worst") > gap("high_over_near"));
  }
  return 0;
}

// ============================================================================
// experiment
// ============================================================================

struct ExperimentCliConfig {
  std::string suite;  // named-suite mode when nonempty
  std::uint64_t seed = 0;
  std::size_t replicates = 20;
  bool has_experiment = false;  // single-experiment mode
  harness::ExperimentConfig experiment;
};

json experiment_cli_to_json(const ExperimentCliConfig& c) {
  if (c.has_experiment)
    return json{{"schema", sz::schema_tag("suite_config")},
                {"experiment", sz::experiment_config_to_json(c.experiment)}};
  return json{{"schema", sz::schema_tag("suite_config")},
              {"suite", c.suite},
              {"seed", c.seed},
              {"replicates", c.replicates}};
}

ExperimentCliConfig experiment_cli_from_json(const json& j) {
  const std::string context = "experiment_config_from_json";
  sz::detail::check_schema(j, sz::schema_tag("suite_config"), context);
  sz::detail::require_keys(j, {"schema", "suite", "seed", "replicates", "experiment"}, context);
  ExperimentCliConfig c;
  sz::detail::read_string(j, "suite", c.suite, context);
  sz::detail::read_u64(j, "seed", c.seed, context);
  sz::detail::read_size(j, "replicates", c.replicates, context);
  if (j.find("experiment") != j.end()) {
    c.has_experiment = true;
    c.experiment = sz::experiment_config_from_json(j.at("experiment"));
  }
  if (c.has_experiment && !c.suite.empty())
    throw invalid_input_error(
        "experiment: choose a named suite or an explicit experiment, not both");
  return c;
}

void print_aggregate(const char* name, const harness::Aggregate& a) {
  std::cout << "  " << name << " mean=" << fd(a.mean) << " stddev=" << fd(a.stddev)
            << " count=" << a.count << "\n";
}

int cmd_experiment(const ExperimentCliConfig& cfg, const std::string& out_dir, bool quiet) {
  if (cfg.has_experiment) {
    warn_if_sharp_beta(cfg.experiment.beta.value);
    sz::write_json_file(out_path(out_dir, "resolved_config.json"),
                        experiment_cli_to_json(cfg));
    const harness::RunReport report = harness::run_experiment(cfg.experiment);
    sz::write_json_file(out_path(out_dir, "run_report.json"), sz::run_report_to_json(report));
    sz::atomic_write_file(out_path(out_dir, "replicates.csv"), sz::run_report_csv(report));
    if (!quiet) {
      std::cout << "experiment " << report.name()
                << ": replicates=" << report.replicates.size()
                << " failed=" << report.failed_count << "\n";
      print_aggregate("expected_true_reward", report.expected_true_reward);
      print_aggregate("kl_to_reference", report.kl_to_reference);
      print_aggregate("win_rate_vs_reference", report.win_rate_vs_reference);
      print_aggregate("data_mean_chosen_reward", report.data_mean_chosen_reward);
      print_aggregate("data_mean_rejected_reward", report.data_mean_rejected_reward);
      print_aggregate("data_mean_gap", report.data_mean_gap);
    }
    return 0;
  }

  if (cfg.suite.empty())
    throw invalid_input_error("experiment: pass --suite <name> or a config with 'experiment'");
  sz::write_json_file(out_path(out_dir, "resolved_config.json"), experiment_cli_to_json(cfg));
  const harness::SuiteResult result = harness::run_suite(cfg.suite, cfg.seed, cfg.replicates);
  sz::write_json_file(out_path(out_dir, "findings.json"), sz::suite_findings_to_json(result));
  sz::write_json_file(out_path(out_dir, "suite.json"), sz::suite_to_json(result));
  sz::atomic_write_file(out_path(out_dir, "replicates.csv"),
                        sz::run_reports_csv(result.reports));
  if (!quiet) {
    std::cout << "suite " << result.suite << ": " << (result.pass ? "PASS" : "FAIL") << "\n";
    for (const harness::Finding& f : result.findings) {
      const char* mark = !f.asserted ? "info" : (f.holds ? "PASS" : "FAIL");
      std::cout << "  [" << mark << "] " << f.name << " value=" << fd(f.value);
      if (!f.detail.empty()) std::cout << " (" << f.detail << ")";
      std::cout << "\n";
    }
  }
  return result.pass ? 0 : 1;
}

}  // namespace

// ============================================================================
// Argument wiring
// ============================================================================

int main(int argc, char** argv) {
  CLI::App app{"Tabular preference-optimization laboratory"};
  app.require_subcommand(1);

  // verify
  auto* verify = app.add_subcommand("verify", "Run structural checks, one JSON report each");
  std::string verify_config_path;
  std::vector<std::string> verify_checks;
  bool verify_all_flag = false;
  std::size_t verify_prompts = 0, verify_responses = 0;
  std::uint64_t verify_seed = 0;
  double verify_beta = 0.0;
  std::string verify_out = default_out_dir();
  bool verify_quiet = false;
  verify->add_option("--config", verify_config_path, "JSON config file");
  auto* verify_check_opt =
      verify->add_option("--check", verify_checks,
                         "Check to run (coverage, sign-agreement, closed-form, loss-identity, "
                         "online-reduction); repeatable");
  auto* verify_all_opt = verify->add_flag("--all", verify_all_flag, "Run every check");
  verify_all_opt->excludes(verify_check_opt);
  auto* verify_prompts_opt = verify->add_option("--prompts", verify_prompts, "Prompt count");
  auto* verify_responses_opt =
      verify->add_option("--responses", verify_responses, "Response count");
  auto* verify_seed_opt = verify->add_option("--seed", verify_seed, "Instance seed");
  auto* verify_beta_opt = verify->add_option("--beta", verify_beta, "Preference strength");
  verify->add_option("--out", verify_out, "Output directory");
  verify->add_flag("-q,--quiet", verify_quiet, "Suppress the summary table");

  // train
  auto* train = app.add_subcommand("train", "Train one objective in a synthetic world");
  std::string train_config_path, train_objective, train_dataset;
  std::uint64_t train_seed = 0;
  double train_beta = 0.0, train_kl_weight = 0.0, train_lr = 0.0;
  std::size_t train_steps = 0;
  bool train_compare = false, train_quiet = false;
  std::string train_out = default_out_dir();
  train->add_option("--config", train_config_path, "JSON config file");
  auto* train_objective_opt = train->add_option(
      "--objective", train_objective, "Objective (dpo, rlhf, sft, sft_kl, online_dpo)");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "World seed");
  auto* train_beta_opt = train->add_option("--beta", train_beta, "Preference strength");
  auto* train_kl_opt =
      train->add_option("--kl-weight", train_kl_weight, "Leash weight (sft_kl)");
  auto* train_lr_opt = train->add_option("--lr", train_lr, "Learning rate");
  auto* train_steps_opt = train->add_option("--steps", train_steps, "Step budget");
  auto* train_dataset_opt =
      train->add_option("--dataset", train_dataset, "Pair dataset JSONL (dpo only)");
  train->add_flag("--compare-closed-form", train_compare,
                  "Also report distance to the exact optimum (dpo, rlhf)");
  train->add_option("--out", train_out, "Output directory");
  train->add_flag("-q,--quiet", train_quiet, "Suppress the summary line");

  // datagen
  auto* datagen_cmd =
      app.add_subcommand("datagen", "Materialize a dataset recipe as JSON-lines");
  std::string datagen_config_path;
  std::uint64_t datagen_seed = 0;
  std::string datagen_out = default_out_dir();
  bool datagen_quiet = false;
  datagen_cmd->add_option("--config", datagen_config_path, "JSON config file");
  auto* datagen_seed_opt = datagen_cmd->add_option("--seed", datagen_seed, "World seed");
  datagen_cmd->add_option("--out", datagen_out, "Output directory");
  datagen_cmd->add_flag("-q,--quiet", datagen_quiet, "Suppress the statistics block");

  // experiment
  auto* experiment =
      app.add_subcommand("experiment", "Run a finding suite or one replicated experiment");
  std::string experiment_config_path, experiment_suite;
  std::uint64_t experiment_seed = 0;
  std::size_t experiment_replicates = 0;
  std::string experiment_out = default_out_dir();
  bool experiment_quiet = false;
  experiment->add_option("--config", experiment_config_path, "JSON config file");
  auto* experiment_suite_opt = experiment->add_option(
      "--suite", experiment_suite, "Named suite (table1, table2, table3, table4, khaki)");
  auto* experiment_seed_opt =
      experiment->add_option("--seed", experiment_seed, "Base replicate seed");
  auto* experiment_reps_opt =
      experiment->add_option("--replicates", experiment_replicates, "Replicates per experiment");
  experiment->add_option("--out", experiment_out, "Output directory");
  experiment->add_flag("-q,--quiet", experiment_quiet, "Suppress the findings table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (verify->parsed()) {
      VerifyConfig cfg;
      if (!verify_config_path.empty())
        cfg = verify_config_from_json(load_config_file(verify_config_path));
      if (verify_all_flag) {
        cfg.checks.clear();
        for (const char* name : all_check_names()) cfg.checks.push_back(name);
      }
      if (verify_check_opt->count() > 0) cfg.checks = verify_checks;
      if (verify_prompts_opt->count() > 0) cfg.spec.prompts = verify_prompts;
      if (verify_responses_opt->count() > 0) cfg.spec.responses = verify_responses;
      if (verify_seed_opt->count() > 0) cfg.spec.seed = verify_seed;
      if (verify_beta_opt->count() > 0) cfg.spec.beta = verify_beta;
      cfg.spec.validate();
      return cmd_verify(cfg, verify_out, verify_quiet);
    }
    if (train->parsed()) {
      TrainCliConfig cfg;
      bool recipe_explicit = false;
      if (!train_config_path.empty()) {
        const json doc = load_config_file(train_config_path);
        cfg = train_cli_from_json(doc);
        recipe_explicit = doc.find("recipe") != doc.end();
      }
      if (train_objective_opt->count() > 0) cfg.objective = train_objective;
      if (train_seed_opt->count() > 0) cfg.world.seed = train_seed;
      if (train_beta_opt->count() > 0) cfg.beta = train_beta;
      if (train_kl_opt->count() > 0) cfg.kl_weight = train_kl_weight;
      if (train_lr_opt->count() > 0) cfg.train.learning_rate = train_lr;
      if (train_steps_opt->count() > 0) cfg.train.max_steps = train_steps;
      if (train_dataset_opt->count() > 0) cfg.dataset_path = train_dataset;
      if (train_compare) cfg.compare_closed_form = true;
      // Target-law objectives default to an exact selection-law recipe when
      // the config named none; an explicitly configured recipe is respected
      // (and rejected downstream if it is the wrong kind).
      const bool needs_target_law = cfg.objective == "sft" || cfg.objective == "sft_kl" ||
                                    cfg.objective == "online_dpo";
      if (needs_target_law && !recipe_explicit) {
        cfg.recipe = harness::DatasetRecipe{};
        cfg.recipe.kind = harness::DatasetRecipe::Kind::best_of_k_target;
      }
      cfg.world.validate();
      cfg.train.validate();
      return cmd_train(cfg, train_out, train_quiet);
    }
    if (datagen_cmd->parsed()) {
      DatagenCliConfig cfg;
      if (!datagen_config_path.empty())
        cfg = datagen_cli_from_json(load_config_file(datagen_config_path));
      if (datagen_seed_opt->count() > 0) cfg.world.seed = datagen_seed;
      cfg.world.validate();
      cfg.recipe.validate();
      return cmd_datagen(cfg, datagen_out, datagen_quiet);
    }
    // experiment
    ExperimentCliConfig cfg;
    if (!experiment_config_path.empty())
      cfg = experiment_cli_from_json(load_config_file(experiment_config_path));
    if (experiment_suite_opt->count() > 0) {
      cfg.suite = experiment_suite;
      cfg.has_experiment = false;
    }
    if (experiment_seed_opt->count() > 0) cfg.seed = experiment_seed;
    if (experiment_reps_opt->count() > 0) cfg.replicates = experiment_replicates;
    if (cfg.has_experiment &&
        (experiment_seed_opt->count() > 0 || experiment_reps_opt->count() > 0))
      cfg.experiment.replicate_seeds = harness::replicate_seeds(cfg.seed, cfg.replicates);
    return cmd_experiment(cfg, experiment_out, experiment_quiet);
  } catch (const invalid_instance_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const invalid_input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
