#pragma once

/**
 * serialize.hpp - Versioned JSON / CSV / JSON-lines persistence
 *
 * Turns library artifacts into plain-text documents and back:
 *   - domain types (policies, conditionals, reward tables, prompt spaces)
 *     as JSON with matrices stored row-major;
 *   - training traces as JSON (full snapshots) and CSV (step, loss, grad_norm);
 *   - pair datasets as JSON-lines with a provenance header record;
 *   - verification reports, experiment configs, run reports, and suite
 *     findings as JSON, plus a flat one-row-per-replicate CSV.
 *
 * Contracts:
 *   - Every top-level document carries a "schema" tag ("prefopt.<doc>/1")
 *     so downstream tooling can detect drift; parsers verify the tag when
 *     present.
 *   - Output is a pure function of the input value: no wall-clock time, no
 *     locale dependence (doubles are formatted with shortest-round-trip
 *     std::to_chars), stable key order. Equal values serialize to equal
 *     bytes.
 *   - Config parsers reject unknown keys and fill omitted keys from the
 *     type's defaults, then run the type's own validation.
 *   - File writes go through a temp-file + rename so readers never observe
 *     a half-written artifact.
 */

#include <prefopt/core.hpp>
#include <prefopt/datagen.hpp>
#include <prefopt/errors.hpp>
#include <prefopt/harness.hpp>
#include <prefopt/numerics.hpp>
#include <prefopt/theory.hpp>
#include <prefopt/trainer.hpp>

#include <json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prefopt::serialize {

/** Insertion-ordered JSON so documents keep a stable, readable key order. */
using json = nlohmann::ordered_json;

/** A file could not be read, written, or renamed. */
struct io_error : error {
  explicit io_error(const std::string& what) : error(what) {}
};

/** Schema tag carried by every top-level document of the given kind. */
inline std::string schema_tag(std::string_view doc) {
  return "prefopt." + std::string(doc) + "/1";
}

// ============================================================================
// Field access and formatting helpers
// ============================================================================

namespace detail {

/** Shortest round-trip decimal representation, independent of locale. */
inline std::string fmt_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  require(res.ec == std::errc{}, "fmt_double: formatting failed");
  return std::string(buf.data(), res.ptr);
}

/** Quotes a CSV field only when it contains a delimiter, quote, or newline. */
inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

inline void require_object(const json& j, const std::string& context) {
  if (!j.is_object()) throw invalid_input_error(context + ": expected a JSON object");
}

/** Rejects keys outside `allowed` so config typos fail loudly. */
inline void require_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& context) {
  require_object(j, context);
  for (const auto& item : j.items()) {
    bool known = false;
    for (std::string_view k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw invalid_input_error(context + ": unknown key '" + item.key() + "'");
  }
}

/** Verifies the "schema" field against `tag` when the document carries one. */
inline void check_schema(const json& j, const std::string& tag, const std::string& context) {
  require_object(j, context);
  const auto it = j.find("schema");
  if (it == j.end()) return;
  if (!it->is_string() || it->get<std::string>() != tag)
    throw invalid_input_error(context + ": schema mismatch: expected '" + tag + "'");
}

inline const json& get_field(const json& j, const char* key, const std::string& context) {
  require_object(j, context);
  const auto it = j.find(key);
  if (it == j.end())
    throw invalid_input_error(context + ": missing field '" + std::string(key) + "'");
  return *it;
}

inline double as_double(const json& v, const char* key, const std::string& context) {
  if (!v.is_number())
    throw invalid_input_error(context + ": field '" + std::string(key) + "' must be a number");
  return v.get<double>();
}

inline std::uint64_t as_u64(const json& v, const char* key, const std::string& context) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw invalid_input_error(context + ": field '" + std::string(key) +
                              "' must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline bool as_bool(const json& v, const char* key, const std::string& context) {
  if (!v.is_boolean())
    throw invalid_input_error(context + ": field '" + std::string(key) + "' must be a boolean");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const char* key, const std::string& context) {
  if (!v.is_string())
    throw invalid_input_error(context + ": field '" + std::string(key) + "' must be a string");
  return v.get<std::string>();
}

// Required-field getters.
inline double get_double(const json& j, const char* key, const std::string& context) {
  return as_double(get_field(j, key, context), key, context);
}
inline std::uint64_t get_u64(const json& j, const char* key, const std::string& context) {
  return as_u64(get_field(j, key, context), key, context);
}
inline std::size_t get_size(const json& j, const char* key, const std::string& context) {
  return static_cast<std::size_t>(get_u64(j, key, context));
}
inline bool get_bool(const json& j, const char* key, const std::string& context) {
  return as_bool(get_field(j, key, context), key, context);
}
inline std::string get_string(const json& j, const char* key, const std::string& context) {
  return as_string(get_field(j, key, context), key, context);
}

// Optional-field readers: leave `out` untouched when the key is absent.
inline void read_double(const json& j, const char* key, double& out,
                        const std::string& context) {
  const auto it = j.find(key);
  if (it != j.end()) out = as_double(*it, key, context);
}
inline void read_u64(const json& j, const char* key, std::uint64_t& out,
                     const std::string& context) {
  const auto it = j.find(key);
  if (it != j.end()) out = as_u64(*it, key, context);
}
inline void read_size(const json& j, const char* key, std::size_t& out,
                      const std::string& context) {
  const auto it = j.find(key);
  if (it != j.end()) out = static_cast<std::size_t>(as_u64(*it, key, context));
}
inline void read_bool(const json& j, const char* key, bool& out, const std::string& context) {
  const auto it = j.find(key);
  if (it != j.end()) out = as_bool(*it, key, context);
}
inline void read_string(const json& j, const char* key, std::string& out,
                        const std::string& context) {
  const auto it = j.find(key);
  if (it != j.end()) out = as_string(*it, key, context);
}

// Enum <-> name maps (names double as the on-disk vocabulary).

inline const char* optimizer_name(trainer::Optimizer o) {
  switch (o) {
    case trainer::Optimizer::gradient_descent: return "gradient_descent";
    case trainer::Optimizer::momentum: return "momentum";
  }
  throw invalid_input_error("optimizer_name: unknown optimizer");
}

inline trainer::Optimizer optimizer_from_name(const std::string& name) {
  if (name == "gradient_descent") return trainer::Optimizer::gradient_descent;
  if (name == "momentum") return trainer::Optimizer::momentum;
  throw invalid_input_error("optimizer_from_name: unknown optimizer '" + name + "'");
}

inline trainer::HaltReason halt_reason_from_name(const std::string& name) {
  for (trainer::HaltReason r : {trainer::HaltReason::converged, trainer::HaltReason::step_limit,
                                trainer::HaltReason::diverged})
    if (name == trainer::halt_reason_name(r)) return r;
  throw invalid_input_error("halt_reason_from_name: unknown halt reason '" + name + "'");
}

inline const char* pair_mode_name(PreferencePairSet::Mode m) {
  switch (m) {
    case PreferencePairSet::Mode::sampled: return "sampled";
    case PreferencePairSet::Mode::exact_distribution: return "exact_distribution";
  }
  throw invalid_input_error("pair_mode_name: unknown mode");
}

inline PreferencePairSet::Mode pair_mode_from_name(const std::string& name) {
  if (name == "sampled") return PreferencePairSet::Mode::sampled;
  if (name == "exact_distribution") return PreferencePairSet::Mode::exact_distribution;
  throw invalid_input_error("pair_mode_from_name: unknown mode '" + name + "'");
}

inline const char* reference_law_name(harness::WorldSpec::ReferenceLaw law) {
  switch (law) {
    case harness::WorldSpec::ReferenceLaw::noisy_reward_softmax: return "noisy_reward_softmax";
    case harness::WorldSpec::ReferenceLaw::random_logits: return "random_logits";
  }
  throw invalid_input_error("reference_law_name: unknown reference law");
}

inline harness::WorldSpec::ReferenceLaw reference_law_from_name(const std::string& name) {
  if (name == "noisy_reward_softmax")
    return harness::WorldSpec::ReferenceLaw::noisy_reward_softmax;
  if (name == "random_logits") return harness::WorldSpec::ReferenceLaw::random_logits;
  throw invalid_input_error("reference_law_from_name: unknown reference law '" + name + "'");
}

inline const char* recipe_kind_name(harness::DatasetRecipe::Kind kind) {
  using Kind = harness::DatasetRecipe::Kind;
  switch (kind) {
    case Kind::tier_pair: return "tier_pair";
    case Kind::best_vs_worst: return "best_vs_worst";
    case Kind::best_vs_random: return "best_vs_random";
    case Kind::gap_member: return "gap_member";
    case Kind::labeled_reference_pairs: return "labeled_reference_pairs";
    case Kind::best_of_k_target: return "best_of_k_target";
  }
  throw invalid_input_error("recipe_kind_name: unknown recipe kind");
}

inline harness::DatasetRecipe::Kind recipe_kind_from_name(const std::string& name) {
  using Kind = harness::DatasetRecipe::Kind;
  for (Kind k : {Kind::tier_pair, Kind::best_vs_worst, Kind::best_vs_random, Kind::gap_member,
                 Kind::labeled_reference_pairs, Kind::best_of_k_target})
    if (name == recipe_kind_name(k)) return k;
  throw invalid_input_error("recipe_kind_from_name: unknown recipe kind '" + name + "'");
}

}  // namespace detail

/** Shortest decimal string that parses back to exactly `v`; locale-free. */
inline std::string format_double(double v) { return detail::fmt_double(v); }

// ============================================================================
// Text parsing and file I/O
// ============================================================================

/** Parses JSON text, converting parser failures into the library error family. */
inline json parse_json_text(const std::string& text, const std::string& context) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input_error(context + ": invalid JSON: " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("read_text_file: cannot open '" + path + "'");
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read_text_file: failed reading '" + path + "'");
  return out;
}

/**
 * Writes `contents` to a sibling temp file, then renames it over `path`, so
 * a reader never observes a partially written artifact. Parent directories
 * are created as needed.
 */
inline void atomic_write_file(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path(), ec);
    if (ec)
      throw io_error("atomic_write_file: cannot create directory '" +
                     target.parent_path().string() + "': " + ec.message());
  }
  const fs::path temp = target.string() + ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("atomic_write_file: cannot open '" + temp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out.good()) throw io_error("atomic_write_file: failed writing '" + temp.string() + "'");
  }
  fs::rename(temp, target, ec);
  if (ec)
    throw io_error("atomic_write_file: cannot rename onto '" + path + "': " + ec.message());
}

/** Serializes with two-space indentation plus a trailing newline, atomically. */
inline void write_json_file(const std::string& path, const json& doc) {
  atomic_write_file(path, doc.dump(2) + "\n");
}

// ============================================================================
// Matrices and core domain types
// ============================================================================

inline json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const json& j, const std::string& context) {
  detail::require_keys(j, {"rows", "cols", "data"}, context);
  const std::size_t rows = detail::get_size(j, "rows", context);
  const std::size_t cols = detail::get_size(j, "cols", context);
  require(rows > 0 && cols > 0, context + ": matrix dimensions must be positive");
  const json& data = detail::get_field(j, "data", context);
  if (!data.is_array() || data.size() != rows * cols)
    throw invalid_input_error(context + ": 'data' must be an array of rows*cols numbers");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = detail::as_double(data[i], "data", context);
  return m;
}

inline json prompt_space_to_json(const PromptSpace& s) {
  return json{{"weights", s.weights}};
}

inline PromptSpace prompt_space_from_json(const json& j) {
  const std::string context = "prompt_space_from_json";
  detail::require_keys(j, {"weights"}, context);
  const json& w = detail::get_field(j, "weights", context);
  if (!w.is_array() || w.empty())
    throw invalid_input_error(context + ": 'weights' must be a nonempty array");
  std::vector<double> weights;
  weights.reserve(w.size());
  for (const json& v : w) weights.push_back(detail::as_double(v, "weights", context));
  return PromptSpace::from_weights(std::move(weights));
}

inline json policy_to_json(const TabularPolicy& p) {
  return json{{"schema", schema_tag("policy")}, {"logits", matrix_to_json(p.logits)}};
}

inline TabularPolicy policy_from_json(const json& j) {
  const std::string context = "policy_from_json";
  detail::check_schema(j, schema_tag("policy"), context);
  detail::require_keys(j, {"schema", "logits"}, context);
  return TabularPolicy::from_logits(
      matrix_from_json(detail::get_field(j, "logits", context), context));
}

inline json conditional_to_json(const CategoricalConditional& c) {
  return json{{"schema", schema_tag("conditional")},
              {"full_support", c.full_support},
              {"probs", matrix_to_json(c.probs)}};
}

inline CategoricalConditional conditional_from_json(const json& j) {
  const std::string context = "conditional_from_json";
  detail::check_schema(j, schema_tag("conditional"), context);
  detail::require_keys(j, {"schema", "full_support", "probs"}, context);
  // full_support is derived from the probabilities on reconstruction; the
  // stored flag is informational for downstream tooling.
  return CategoricalConditional::from_probs(
      matrix_from_json(detail::get_field(j, "probs", context), context));
}

inline json reward_table_to_json(const RewardTable& r) {
  return json{{"schema", schema_tag("reward")}, {"values", matrix_to_json(r.values)}};
}

inline RewardTable reward_table_from_json(const json& j) {
  const std::string context = "reward_table_from_json";
  detail::check_schema(j, schema_tag("reward"), context);
  detail::require_keys(j, {"schema", "values"}, context);
  return RewardTable::from_values(
      matrix_from_json(detail::get_field(j, "values", context), context));
}

// ============================================================================
// Pair datasets: JSON-lines with a provenance header
// ============================================================================

/** Generation provenance recorded in a dataset file's header line. */
struct DatasetProvenance {
  std::string strategy;                 // free-form recipe / strategy label
  std::uint64_t seed = 0;               // dataset-level seed (0 for exact recipes)
  std::vector<std::size_t> tier_ranks;  // 1-based quality ranks, empty if unused
};

/**
 * One header record (schema, provenance, shape, item count) followed by one
 * compact JSON record per item. Weights are stored as-is; they are already
 * normalized by construction.
 */
inline std::string dataset_to_jsonl(const PreferencePairSet& data,
                                    const DatasetProvenance& provenance) {
  json header{{"schema", schema_tag("dataset")},
              {"strategy", provenance.strategy},
              {"seed", provenance.seed},
              {"tier_ranks", provenance.tier_ranks},
              {"mode", detail::pair_mode_name(data.mode)},
              {"prompts", data.prompts},
              {"responses", data.responses},
              {"items", data.items.size()}};
  std::string out = header.dump() + "\n";
  for (const PreferencePairSet::Item& it : data.items) {
    const json line{{"prompt", it.prompt},
                    {"chosen", it.chosen},
                    {"rejected", it.rejected},
                    {"weight", it.weight}};
    out += line.dump() + "\n";
  }
  return out;
}

struct ParsedDataset {
  PreferencePairSet data;
  DatasetProvenance provenance;
};

/**
 * Inverse of dataset_to_jsonl. Validates indices, pair distinctness, and that
 * the stored weights are normalized, but deliberately does not renormalize:
 * reloading preserves weights bitwise, so serialize -> parse -> serialize is
 * byte-identical.
 */
inline ParsedDataset dataset_from_jsonl(const std::string& text) {
  const std::string context = "dataset_from_jsonl";
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  require(!lines.empty(), context + ": empty document");

  const json header = parse_json_text(lines[0], context);
  detail::require_keys(
      header, {"schema", "strategy", "seed", "tier_ranks", "mode", "prompts", "responses", "items"},
      context);
  if (header.find("schema") == header.end())
    throw invalid_input_error(context + ": header record must carry a schema tag");
  detail::check_schema(header, schema_tag("dataset"), context);

  ParsedDataset out;
  out.provenance.strategy = detail::get_string(header, "strategy", context);
  out.provenance.seed = detail::get_u64(header, "seed", context);
  const json& ranks = detail::get_field(header, "tier_ranks", context);
  if (!ranks.is_array())
    throw invalid_input_error(context + ": 'tier_ranks' must be an array");
  for (const json& r : ranks)
    out.provenance.tier_ranks.push_back(
        static_cast<std::size_t>(detail::as_u64(r, "tier_ranks", context)));

  const std::size_t prompts = detail::get_size(header, "prompts", context);
  const std::size_t responses = detail::get_size(header, "responses", context);
  const std::size_t declared = detail::get_size(header, "items", context);
  require(prompts >= 1 && responses >= 2, context + ": header shape must be at least 1x2");
  require(declared == lines.size() - 1,
          context + ": header item count does not match the number of item records");
  require(declared >= 1, context + ": dataset must not be empty");

  std::vector<PreferencePairSet::Item> items;
  items.reserve(declared);
  double total = 0.0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const json rec = parse_json_text(lines[i], context);
    detail::require_keys(rec, {"prompt", "chosen", "rejected", "weight"}, context);
    PreferencePairSet::Item it;
    it.prompt = detail::get_size(rec, "prompt", context);
    it.chosen = detail::get_size(rec, "chosen", context);
    it.rejected = detail::get_size(rec, "rejected", context);
    it.weight = detail::get_double(rec, "weight", context);
    require(it.prompt < prompts, context + ": prompt index out of range");
    require(it.chosen < responses && it.rejected < responses,
            context + ": response index out of range");
    require(it.chosen != it.rejected, context + ": degenerate pair (chosen equals rejected)");
    require(std::isfinite(it.weight) && it.weight >= 0.0,
            context + ": weights must be finite and nonnegative");
    total += it.weight;
    items.push_back(it);
  }
  require(std::abs(total - 1.0) <= k_sum_tolerance,
          context + ": stored weights must sum to 1");

  out.data = PreferencePairSet{std::move(items),
                               detail::pair_mode_from_name(
                                   detail::get_string(header, "mode", context)),
                               prompts, responses};
  return out;
}

// ============================================================================
// Training configuration and traces
// ============================================================================

inline json train_config_to_json(const trainer::TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"max_steps", c.max_steps},
              {"convergence_tol", c.convergence_tol},
              {"snapshot_interval", c.snapshot_interval},
              {"optimizer", detail::optimizer_name(c.optimizer)},
              {"momentum_coef", c.momentum_coef},
              {"divergence_threshold", c.divergence_threshold}};
}

inline trainer::TrainConfig train_config_from_json(const json& j) {
  const std::string context = "train_config_from_json";
  detail::require_keys(j,
                       {"learning_rate", "max_steps", "convergence_tol", "snapshot_interval",
                        "optimizer", "momentum_coef", "divergence_threshold"},
                       context);
  trainer::TrainConfig c;
  detail::read_double(j, "learning_rate", c.learning_rate, context);
  detail::read_size(j, "max_steps", c.max_steps, context);
  detail::read_double(j, "convergence_tol", c.convergence_tol, context);
  detail::read_size(j, "snapshot_interval", c.snapshot_interval, context);
  if (j.find("optimizer") != j.end())
    c.optimizer = detail::optimizer_from_name(detail::get_string(j, "optimizer", context));
  detail::read_double(j, "momentum_coef", c.momentum_coef, context);
  detail::read_double(j, "divergence_threshold", c.divergence_threshold, context);
  c.validate();
  return c;
}

inline json train_trace_to_json(const trainer::TrainTrace& t) {
  json snapshots = json::array();
  for (const trainer::Snapshot& s : t.snapshots)
    snapshots.push_back(json{{"step", s.step}, {"logits", matrix_to_json(s.logits)}});
  return json{{"schema", schema_tag("trace")},
              {"halt", trainer::halt_reason_name(t.halt)},
              {"steps", t.steps},
              {"loss", t.loss},
              {"grad_max_norm", t.grad_max_norm},
              {"snapshots", std::move(snapshots)}};
}

inline trainer::TrainTrace train_trace_from_json(const json& j) {
  const std::string context = "train_trace_from_json";
  detail::check_schema(j, schema_tag("trace"), context);
  detail::require_keys(j, {"schema", "halt", "steps", "loss", "grad_max_norm", "snapshots"},
                       context);
  trainer::TrainTrace t;
  t.halt = detail::halt_reason_from_name(detail::get_string(j, "halt", context));
  t.steps = detail::get_size(j, "steps", context);
  const json& loss = detail::get_field(j, "loss", context);
  const json& grad = detail::get_field(j, "grad_max_norm", context);
  if (!loss.is_array() || !grad.is_array() || loss.size() != grad.size())
    throw invalid_input_error(context +
                              ": 'loss' and 'grad_max_norm' must be arrays of equal length");
  for (const json& v : loss) t.loss.push_back(detail::as_double(v, "loss", context));
  for (const json& v : grad)
    t.grad_max_norm.push_back(detail::as_double(v, "grad_max_norm", context));
  const json& snaps = detail::get_field(j, "snapshots", context);
  if (!snaps.is_array()) throw invalid_input_error(context + ": 'snapshots' must be an array");
  for (const json& s : snaps) {
    detail::require_keys(s, {"step", "logits"}, context);
    trainer::Snapshot snap{detail::get_size(s, "step", context),
                           matrix_from_json(detail::get_field(s, "logits", context), context)};
    t.snapshots.push_back(std::move(snap));
  }
  return t;
}

/** Per-step history as CSV: one row per evaluated iterate. */
inline std::string train_trace_csv(const trainer::TrainTrace& t) {
  require(t.loss.size() == t.grad_max_norm.size(),
          "train_trace_csv: loss and gradient series must have equal length");
  std::string out = "step,loss,grad_norm\n";
  for (std::size_t i = 0; i < t.loss.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += detail::fmt_double(t.loss[i]);
    out += ',';
    out += detail::fmt_double(t.grad_max_norm[i]);
    out += '\n';
  }
  return out;
}

// ============================================================================
// Verification reports
// ============================================================================

inline json instance_spec_to_json(const theory::InstanceSpec& s) {
  return json{{"prompts", s.prompts},
              {"responses", s.responses},
              {"seed", s.seed},
              {"beta", s.beta}};
}

inline theory::InstanceSpec instance_spec_from_json(const json& j) {
  const std::string context = "instance_spec_from_json";
  detail::require_keys(j, {"prompts", "responses", "seed", "beta"}, context);
  theory::InstanceSpec s;
  detail::read_size(j, "prompts", s.prompts, context);
  detail::read_size(j, "responses", s.responses, context);
  detail::read_u64(j, "seed", s.seed, context);
  detail::read_double(j, "beta", s.beta, context);
  s.validate();
  return s;
}

inline json verification_report_to_json(const theory::VerificationReport& r) {
  json measurements = json::array();
  for (const theory::Measurement& m : r.measurements)
    measurements.push_back(json{{"name", m.name},
                                {"value", m.value},
                                {"bound", m.bound},
                                {"relation", m.relation},
                                {"pass", m.pass}});
  return json{{"schema", schema_tag("verification")},
              {"check", r.check},
              {"pass", r.pass},
              {"spec", instance_spec_to_json(r.spec)},
              {"measurements", std::move(measurements)}};
}

inline theory::VerificationReport verification_report_from_json(const json& j) {
  const std::string context = "verification_report_from_json";
  detail::check_schema(j, schema_tag("verification"), context);
  detail::require_keys(j, {"schema", "check", "pass", "spec", "measurements"}, context);
  theory::VerificationReport r;
  r.check = detail::get_string(j, "check", context);
  r.pass = detail::get_bool(j, "pass", context);
  r.spec = instance_spec_from_json(detail::get_field(j, "spec", context));
  const json& ms = detail::get_field(j, "measurements", context);
  if (!ms.is_array()) throw invalid_input_error(context + ": 'measurements' must be an array");
  for (const json& m : ms) {
    detail::require_keys(m, {"name", "value", "bound", "relation", "pass"}, context);
    theory::Measurement out;
    out.name = detail::get_string(m, "name", context);
    out.value = detail::get_double(m, "value", context);
    out.bound = detail::get_double(m, "bound", context);
    out.relation = detail::get_string(m, "relation", context);
    out.pass = detail::get_bool(m, "pass", context);
    if (out.relation != "<=" && out.relation != ">=" && out.relation != "==" &&
        out.relation != "info")
      throw invalid_input_error(context + ": unknown relation '" + out.relation + "'");
    r.measurements.push_back(std::move(out));
  }
  return r;
}

// ============================================================================
// Experiment configuration
// ============================================================================

inline json world_spec_to_json(const harness::WorldSpec& w) {
  return json{{"prompts", w.prompts},
              {"responses", w.responses},
              {"reward_mean", w.reward_mean},
              {"reward_std", w.reward_std},
              {"reference_law", detail::reference_law_name(w.reference_law)},
              {"reference_noise_std", w.reference_noise_std},
              {"reference_temperature", w.reference_temperature},
              {"reference_logit_std", w.reference_logit_std},
              {"seed", w.seed}};
}

inline harness::WorldSpec world_spec_from_json(const json& j) {
  const std::string context = "world_spec_from_json";
  detail::require_keys(j,
                       {"prompts", "responses", "reward_mean", "reward_std", "reference_law",
                        "reference_noise_std", "reference_temperature", "reference_logit_std",
                        "seed"},
                       context);
  harness::WorldSpec w;
  detail::read_size(j, "prompts", w.prompts, context);
  detail::read_size(j, "responses", w.responses, context);
  detail::read_double(j, "reward_mean", w.reward_mean, context);
  detail::read_double(j, "reward_std", w.reward_std, context);
  if (j.find("reference_law") != j.end())
    w.reference_law =
        detail::reference_law_from_name(detail::get_string(j, "reference_law", context));
  detail::read_double(j, "reference_noise_std", w.reference_noise_std, context);
  detail::read_double(j, "reference_temperature", w.reference_temperature, context);
  detail::read_double(j, "reference_logit_std", w.reference_logit_std, context);
  detail::read_u64(j, "seed", w.seed, context);
  w.validate();
  return w;
}

// The mixing seed is omitted on purpose: dataset construction overwrites it
// with a substream derived from the dataset seed.
inline json mix_config_to_json(const datagen::MixConfig& m) {
  return json{{"rho", m.rho}, {"k", m.k}, {"temperature", m.temperature}};
}

inline datagen::MixConfig mix_config_from_json(const json& j) {
  const std::string context = "mix_config_from_json";
  detail::require_keys(j, {"rho", "k", "temperature"}, context);
  datagen::MixConfig m;
  detail::read_double(j, "rho", m.rho, context);
  detail::read_size(j, "k", m.k, context);
  detail::read_double(j, "temperature", m.temperature, context);
  m.validate();
  return m;
}

inline json dataset_recipe_to_json(const harness::DatasetRecipe& r) {
  return json{{"kind", detail::recipe_kind_name(r.kind)},
              {"chosen", datagen::tier_name(r.chosen)},
              {"rejected", datagen::tier_name(r.rejected)},
              {"k", r.k},
              {"pairs_per_prompt", r.pairs_per_prompt},
              {"member", r.member},
              {"small_gap_fraction", r.small_gap_fraction},
              {"with_mix", r.with_mix},
              {"mix", mix_config_to_json(r.mix)}};
}

inline harness::DatasetRecipe dataset_recipe_from_json(const json& j) {
  const std::string context = "dataset_recipe_from_json";
  detail::require_keys(j,
                       {"kind", "chosen", "rejected", "k", "pairs_per_prompt", "member",
                        "small_gap_fraction", "with_mix", "mix"},
                       context);
  harness::DatasetRecipe r;
  if (j.find("kind") != j.end())
    r.kind = detail::recipe_kind_from_name(detail::get_string(j, "kind", context));
  if (j.find("chosen") != j.end())
    r.chosen = datagen::tier_from_name(detail::get_string(j, "chosen", context));
  if (j.find("rejected") != j.end())
    r.rejected = datagen::tier_from_name(detail::get_string(j, "rejected", context));
  detail::read_size(j, "k", r.k, context);
  detail::read_size(j, "pairs_per_prompt", r.pairs_per_prompt, context);
  detail::read_string(j, "member", r.member, context);
  detail::read_double(j, "small_gap_fraction", r.small_gap_fraction, context);
  detail::read_bool(j, "with_mix", r.with_mix, context);
  if (j.find("mix") != j.end()) r.mix = mix_config_from_json(detail::get_field(j, "mix", context));
  r.validate();
  return r;
}

inline json experiment_config_to_json(const harness::ExperimentConfig& c) {
  return json{{"schema", schema_tag("experiment")},
              {"name", c.name},
              {"world", world_spec_to_json(c.world)},
              {"recipe", dataset_recipe_to_json(c.recipe)},
              {"beta", c.beta.value},
              {"train", train_config_to_json(c.train)},
              {"replicate_seeds", c.replicate_seeds}};
}

/** Omitted fields default; an omitted name defaults to the recipe's label. */
inline harness::ExperimentConfig experiment_config_from_json(const json& j) {
  const std::string context = "experiment_config_from_json";
  detail::check_schema(j, schema_tag("experiment"), context);
  detail::require_keys(
      j, {"schema", "name", "world", "recipe", "beta", "train", "replicate_seeds"}, context);
  harness::ExperimentConfig c;
  if (j.find("world") != j.end())
    c.world = world_spec_from_json(detail::get_field(j, "world", context));
  if (j.find("recipe") != j.end())
    c.recipe = dataset_recipe_from_json(detail::get_field(j, "recipe", context));
  if (j.find("beta") != j.end())
    c.beta = losses::BetaParam(detail::get_double(j, "beta", context));
  if (j.find("train") != j.end())
    c.train = train_config_from_json(detail::get_field(j, "train", context));
  if (j.find("replicate_seeds") != j.end()) {
    const json& seeds = detail::get_field(j, "replicate_seeds", context);
    if (!seeds.is_array())
      throw invalid_input_error(context + ": 'replicate_seeds' must be an array");
    c.replicate_seeds.clear();
    for (const json& s : seeds)
      c.replicate_seeds.push_back(detail::as_u64(s, "replicate_seeds", context));
  }
  detail::read_string(j, "name", c.name, context);
  if (c.name.empty()) c.name = c.recipe.name();
  c.validate();
  return c;
}

// ============================================================================
// Run reports and suite findings
// ============================================================================

inline json policy_metrics_to_json(const harness::PolicyMetrics& m) {
  return json{{"expected_true_reward", m.expected_true_reward},
              {"kl_to_reference", m.kl_to_reference},
              {"win_rate_vs_reference", m.win_rate_vs_reference}};
}

inline json dataset_stats_to_json(const datagen::DatasetStats& s) {
  return json{{"mean_chosen_reward", s.mean_chosen_reward},
              {"mean_rejected_reward", s.mean_rejected_reward},
              {"mean_gap", s.mean_gap}};
}

inline json aggregate_to_json(const harness::Aggregate& a) {
  return json{{"mean", a.mean}, {"stddev", a.stddev}, {"count", a.count}};
}

inline json replicate_to_json(const harness::ReplicateResult& r) {
  return json{{"seed", r.seed},
              {"failed", r.failed},
              {"failure", r.failure},
              {"metrics", policy_metrics_to_json(r.metrics)},
              {"reference_metrics", policy_metrics_to_json(r.reference_metrics)},
              {"data", dataset_stats_to_json(r.data)},
              {"mix_selected", r.mix_selected},
              {"mix_chosen_replaced", r.mix_chosen_replaced},
              {"mix_rejected_replaced", r.mix_rejected_replaced},
              {"final_loss", r.final_loss},
              {"final_grad_norm", r.final_grad_norm},
              {"steps", r.steps},
              {"tv_to_companion", r.tv_to_companion}};
}

inline json run_report_to_json(const harness::RunReport& r) {
  json replicates = json::array();
  for (const harness::ReplicateResult& rep : r.replicates)
    replicates.push_back(replicate_to_json(rep));
  return json{{"schema", schema_tag("run_report")},
              {"name", r.name()},
              {"objective", r.objective},
              {"config", experiment_config_to_json(r.config)},
              {"failed_count", r.failed_count},
              {"aggregates",
               json{{"expected_true_reward", aggregate_to_json(r.expected_true_reward)},
                    {"kl_to_reference", aggregate_to_json(r.kl_to_reference)},
                    {"win_rate_vs_reference", aggregate_to_json(r.win_rate_vs_reference)},
                    {"data_mean_chosen_reward", aggregate_to_json(r.data_mean_chosen_reward)},
                    {"data_mean_rejected_reward",
                     aggregate_to_json(r.data_mean_rejected_reward)},
                    {"data_mean_gap", aggregate_to_json(r.data_mean_gap)}}},
              {"replicates", std::move(replicates)}};
}

inline json finding_to_json(const harness::Finding& f) {
  return json{{"name", f.name},
              {"asserted", f.asserted},
              {"holds", f.holds},
              {"value", f.value},
              {"detail", f.detail}};
}

/** Findings summary: named booleans plus effect sizes, no replicate rows. */
inline json suite_findings_to_json(const harness::SuiteResult& s) {
  json findings = json::array();
  for (const harness::Finding& f : s.findings) findings.push_back(finding_to_json(f));
  return json{{"schema", schema_tag("findings")},
              {"suite", s.suite},
              {"pass", s.pass},
              {"findings", std::move(findings)}};
}

/** Full suite document: findings plus every member run report. */
inline json suite_to_json(const harness::SuiteResult& s) {
  json reports = json::array();
  for (const harness::RunReport& r : s.reports) reports.push_back(run_report_to_json(r));
  json doc = suite_findings_to_json(s);
  doc["schema"] = schema_tag("suite");
  doc["reports"] = std::move(reports);
  return doc;
}

/** Flat replicate table over one or more run reports, one CSV row each. */
inline std::string run_reports_csv(const std::vector<harness::RunReport>& reports) {
  std::string out =
      "experiment,objective,seed,failed,expected_true_reward,kl_to_reference,"
      "win_rate_vs_reference,reference_expected_true_reward,data_mean_chosen_reward,"
      "data_mean_rejected_reward,data_mean_gap,mix_selected,mix_chosen_replaced,"
      "mix_rejected_replaced,final_loss,final_grad_norm,steps,tv_to_companion\n";
  for (const harness::RunReport& r : reports) {
    for (const harness::ReplicateResult& rep : r.replicates) {
      out += detail::csv_escape(r.name());
      out += ',';
      out += detail::csv_escape(r.objective);
      out += ',';
      out += std::to_string(rep.seed);
      out += ',';
      out += rep.failed ? '1' : '0';
      out += ',';
      out += detail::fmt_double(rep.metrics.expected_true_reward);
      out += ',';
      out += detail::fmt_double(rep.metrics.kl_to_reference);
      out += ',';
      out += detail::fmt_double(rep.metrics.win_rate_vs_reference);
      out += ',';
      out += detail::fmt_double(rep.reference_metrics.expected_true_reward);
      out += ',';
      out += detail::fmt_double(rep.data.mean_chosen_reward);
      out += ',';
      out += detail::fmt_double(rep.data.mean_rejected_reward);
      out += ',';
      out += detail::fmt_double(rep.data.mean_gap);
      out += ',';
      out += std::to_string(rep.mix_selected);
      out += ',';
      out += std::to_string(rep.mix_chosen_replaced);
      out += ',';
      out += std::to_string(rep.mix_rejected_replaced);
      out += ',';
      out += detail::fmt_double(rep.final_loss);
      out += ',';
      out += detail::fmt_double(rep.final_grad_norm);
      out += ',';
      out += std::to_string(rep.steps);
      out += ',';
      out += detail::fmt_double(rep.tv_to_companion);
      out += '\n';
    }
  }
  return out;
}

inline std::string run_report_csv(const harness::RunReport& report) {
  return run_reports_csv({report});
}

}  // namespace prefopt::serialize
