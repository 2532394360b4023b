#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tabsynth/attacks.hpp"
#include "tabsynth/data.hpp"
#include "tabsynth/encoder.hpp"
#include "tabsynth/error.hpp"
#include "tabsynth/gan.hpp"
#include "tabsynth/metrics.hpp"
#include "tabsynth/ml.hpp"
#include "tabsynth/privacy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tabsynth;

namespace {

constexpr int kReportSchemaVersion = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

/// Raised for bad flags or config values detected by the CLI itself.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a over the canonical dump; stable across platforms and runs.
std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

/// Settings shared by every subcommand: the merged config file plus flag overrides.
struct Run {
  std::string config_path;
  std::string schema;
  std::string data;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  json config = json::object();

  void load() {
    if (!config_path.empty()) config = read_json(config_path);
    if (schema.empty()) schema = config.value("schema", std::string());
    if (data.empty()) data = config.value("data", std::string());
    if (output_dir.empty()) output_dir = config.value("output_dir", std::string());
    if (output_dir.empty()) {
      const char* env = std::getenv("TABSYNTH_OUTPUT_DIR");
      output_dir = env && *env ? env : "tabsynth_out";
    }
    if (!seed && config.contains("seed")) seed = config["seed"].get<std::uint64_t>();
    if (!config.is_object()) throw ConfigError("config root must be an object");
  }

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("a seed is required (--seed or \"seed\" in the config)");
    return *seed;
  }

  TableSchema load_schema() const {
    if (schema.empty()) throw ConfigError("a schema path is required (--schema or \"schema\")");
    if (!fs::exists(schema)) throw ConfigError("schema file not found: " + schema);
    return TableSchema::load(schema);
  }

  Table load_data(const TableSchema& s, const std::string& path) const {
    if (path.empty()) throw ConfigError("a data path is required (--data or \"data\")");
    if (!fs::exists(path)) throw ConfigError("data file not found: " + path);
    return load_csv(path, s);
  }

  fs::path out(const std::string& name) const {
    fs::create_directories(output_dir);
    return fs::path(output_dir) / name;
  }

  json section(const std::string& key) const {
    return config.contains(key) ? config[key] : json::object();
  }

  /// Wraps a report with the reproducibility envelope and writes it.
  json emit(const std::string& command, const json& effective, const json& body, const std::string& file) const {
    json r = {{"schema_version", kReportSchemaVersion},
              {"command", command},
              {"config_hash", config_hash(effective)},
              {"seed", seed ? json(*seed) : json(nullptr)},
              {"report", body}};
    if (!file.empty()) write_text(out(file), r.dump(2) + "\n");
    return r;
  }
};

struct TrainFlags {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> loss_mode;
};

TrainConfig train_config(const Run& run, const TrainFlags& flags) {
  json j = run.section("train");
  if (flags.epochs) j["epochs"] = *flags.epochs;
  if (flags.batch_size) j["batch_size"] = *flags.batch_size;
  if (flags.loss_mode) j["loss_mode"] = *flags.loss_mode;
  j["seed"] = run.require_seed();
  return TrainConfig::from_json(j);
}

struct PrivacyFlags {
  std::optional<double> epsilon, delta, sigma, clip;
  std::optional<std::size_t> batch, n, iterations, discriminators;
  std::optional<std::string> variant;
};

privacy::PrivacySpec privacy_spec(const Run& run, const PrivacyFlags& f) {
  json j = run.section("privacy");
  if (f.epsilon) j["epsilon"] = *f.epsilon;
  if (f.delta) j["delta"] = *f.delta;
  if (f.sigma) j["sigma"] = *f.sigma;
  if (f.clip) j["clip"] = *f.clip;
  if (f.batch) j["batch"] = *f.batch;
  if (f.n) j["n"] = *f.n;
  if (f.iterations) j["iterations"] = *f.iterations;
  if (f.discriminators) j["n_discriminators"] = *f.discriminators;
  if (f.variant) j["variant"] = *f.variant;
  return privacy::PrivacySpec::from_json(j);
}

void add_common(CLI::App* cmd, Run& run) {
  cmd->add_option("--config", run.config_path, "JSON run config");
  cmd->add_option("--schema", run.schema, "schema JSON");
  cmd->add_option("--data", run.data, "training CSV");
  cmd->add_option("--out-dir", run.output_dir, "output directory (default $TABSYNTH_OUTPUT_DIR or ./tabsynth_out)");
  cmd->add_option("--seed", run.seed, "random seed");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--loss-mode", f.loss_mode, "vanilla or wgan_gp");
}

void add_privacy_flags(CLI::App* cmd, PrivacyFlags& f) {
  cmd->add_option("--epsilon", f.epsilon);
  cmd->add_option("--delta", f.delta);
  cmd->add_option("--sigma", f.sigma);
  cmd->add_option("--clip", f.clip);
  cmd->add_option("--batch", f.batch);
  cmd->add_option("--iterations", f.iterations, "fixed number of updates; reports epsilon instead of planning");
  cmd->add_option("--discriminators", f.discriminators, "partitions for g_dp");
  cmd->add_option("--variant", f.variant, "d_dp or g_dp");
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_fit(Run& run) {
  run.load();
  const TableSchema schema = run.load_schema();
  const Table table = run.load_data(schema, run.data);
  EncoderOptions opts;
  opts.vgm.seed = run.require_seed();
  const DataTransformer enc = DataTransformer::fit(table, opts);
  write_text(run.out("encoder.json"), enc.to_json().dump(2) + "\n");
  const auto& layout = enc.layout();
  json effective = {{"schema", schema.to_json()}, {"seed", *run.seed}, {"rows", table.num_rows()}};
  run.emit("fit", effective, layout.to_json(), "layout.json");
  std::cout << "T=" << layout.width << " E=" << layout.cond_width << " d=" << layout.square_side() << "\n";
  return 0;
}

int cmd_train(Run& run, const TrainFlags& flags) {
  run.load();
  const TableSchema schema = run.load_schema();
  const Table table = run.load_data(schema, run.data);
  const TrainConfig cfg = train_config(run, flags);
  const GanModel model = train(table, cfg);
  model.save(run.out("model.json"));
  write_loss_trace(model.trace, run.out("loss_trace.csv"));
  json body = {{"rows", table.num_rows()}, {"epochs", model.trace.size()}, {"width", model.layout().width}};
  if (!model.trace.empty()) {
    const auto& last = model.trace.back();
    body["final_losses"] = {{"L_D", last.d}, {"L_G", last.g}, {"L_class", last.cls}, {"L_info", last.info},
                            {"L_cond", last.cond}};
  }
  run.emit("train", {{"train", cfg.to_json()}, {"schema", schema.to_json()}}, body, "train_report.json");
  std::cout << "model written to " << run.out("model.json").string() << "\n";
  return 0;
}

int cmd_train_dp(Run& run, const TrainFlags& tflags, const PrivacyFlags& pflags) {
  run.load();
  const TableSchema schema = run.load_schema();
  const Table table = run.load_data(schema, run.data);
  TrainFlags t = tflags;
  if (!t.loss_mode && !run.section("train").contains("loss_mode")) t.loss_mode = "wgan_gp";
  const TrainConfig cfg = train_config(run, t);
  const privacy::PrivacySpec spec = privacy_spec(run, pflags);
  const privacy::PrivateRun result = privacy::train_private(table, cfg, spec);
  result.model.save(run.out("model.json"));
  write_loss_trace(result.model.trace, run.out("loss_trace.csv"));
  json body = result.report.to_json();
  body["generator_steps"] = result.generator_steps;
  body["exhausted_before_min_epochs"] = result.exhausted_before_min_epochs;
  const json effective = {{"train", cfg.to_json()}, {"privacy", spec.to_json()}, {"schema", schema.to_json()}};
  run.emit("train-dp", effective, body, "privacy_report.json");
  std::cout << body.dump(2) << "\n";
  return 0;
}

struct SampleFlags {
  std::string model;
  std::size_t n = 0;
  std::string output;
  std::string condition_column;
  std::string condition_value;
};

int cmd_sample(Run& run, const SampleFlags& f) {
  run.load();
  const std::uint64_t seed = run.require_seed();
  const fs::path model_path = f.model.empty() ? run.out("model.json") : fs::path(f.model);
  if (!fs::exists(model_path)) throw ConfigError("model checkpoint not found: " + model_path.string());
  const GanModel model = GanModel::load(model_path);
  std::optional<std::pair<std::size_t, std::size_t>> condition;
  if (!f.condition_column.empty()) {
    const auto& schema = model.encoder.schema();
    const std::size_t col = schema.index_of(f.condition_column);
    const auto& labels = schema[col].categorical_values;
    const auto it = std::find(labels.begin(), labels.end(), f.condition_value);
    if (it == labels.end()) throw ConfigError("unknown class '" + f.condition_value + "' for " + f.condition_column);
    condition = std::make_pair(col, static_cast<std::size_t>(it - labels.begin()));
  }
  const Table synth = sample(model, f.n, condition, seed);
  const fs::path out = f.output.empty() ? run.out("synthetic.csv") : fs::path(f.output);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_csv(synth, out);
  std::cout << synth.num_rows() << " rows written to " << out.string() << "\n";
  return 0;
}

struct EvaluateFlags {
  std::string real;
  std::string synthetic;
  std::string test;
  std::vector<std::string> models;
  bool no_distances = false;
};

int cmd_evaluate(Run& run, EvaluateFlags f) {
  run.load();
  const json ev = run.section("evaluate");
  if (f.real.empty()) f.real = ev.value("real", run.data);
  if (f.synthetic.empty()) f.synthetic = ev.value("synthetic", std::string());
  if (f.test.empty()) f.test = ev.value("test", std::string());
  if (f.models.empty()) f.models = ev.value("models", std::vector<std::string>{});
  const TableSchema schema = run.load_schema();
  const Table real = run.load_data(schema, f.real);
  if (f.synthetic.empty()) throw ConfigError("--synthetic is required");
  const Table synth = run.load_data(schema, f.synthetic);
  json body;
  body["similarity"] = similarity(real, synth, true).to_json();
  body["diff_corr"] = diff_corr(real, synth);
  if (!f.no_distances) body["distances"] = dcr_nndr(real, synth).to_json();
  if (!f.test.empty()) {
    const Table test = run.load_data(schema, f.test);
    std::vector<ml::ModelKind> kinds;
    if (f.models.empty()) f.models = {"decision_tree", "random_forest", "logistic_regression", "mlp"};
    for (const auto& m : f.models) kinds.push_back(ml::model_kind_from_string(m));
    body["utility"] = ml_utility(real, synth, test, kinds, run.seed.value_or(0)).to_json();
  }
  const json effective = {{"real", f.real}, {"synthetic", f.synthetic}, {"test", f.test}, {"models", f.models},
                          {"distances", !f.no_distances}, {"schema", schema.to_json()}};
  const json r = run.emit("evaluate", effective, body, "evaluation.json");
  std::cout << r.dump(2) << "\n";
  return 0;
}

struct AttackFlags {
  std::string kind = "membership";
  std::string target;
  std::string mode;
  std::string sensitive;
  std::optional<std::size_t> reference_size;
  std::optional<std::size_t> repetitions;
  std::optional<std::size_t> batches;
  bool private_generator = false;
};

/// Builds a row from a JSON object keyed by column name; categorical values are labels.
Row row_from_json(const json& j, const TableSchema& schema) {
  std::ostringstream header, line;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const std::string& name = schema[c].name;
    if (c) {
      header << ',';
      line << ',';
    }
    header << name;
    if (!j.contains(name) || j[name].is_null()) continue;
    if (j[name].is_string()) {
      line << j[name].get<std::string>();
    } else {
      line << format_number(j[name].get<double>());
    }
  }
  const Table t = parse_csv(header.str() + "\n" + line.str() + "\n", schema);
  return t[0];
}

int cmd_attack(Run& run, const TrainFlags& tflags, const PrivacyFlags& pflags, AttackFlags f) {
  run.load();
  const std::uint64_t seed = run.require_seed();
  const json at = run.section("attack");
  if (at.contains("kind") && f.kind == "membership") f.kind = at["kind"].get<std::string>();
  const TableSchema schema = run.load_schema();
  const Table data = run.load_data(schema, run.data);
  const TrainConfig cfg = train_config(run, tflags);
  std::optional<privacy::PrivacySpec> spec;
  if (f.private_generator || run.config.contains("privacy")) spec = privacy_spec(run, pflags);
  const attacks::TrainFn train_fn = attacks::gan_train_fn(cfg, spec);
  const std::size_t reps = f.repetitions.value_or(at.value("repetitions", std::size_t{5}));
  json body;
  json effective = {{"train", cfg.to_json()}, {"kind", f.kind}, {"repetitions", reps}, {"schema", schema.to_json()}};
  if (spec) effective["privacy"] = spec->to_json();
  if (f.kind == "membership") {
    auto mcfg = attacks::MembershipAttackConfig::from_json(at.value("membership", json::object()));
    mcfg.seed = seed;
    if (!f.mode.empty()) mcfg.mode = attacks::feature_mode_from_string(f.mode);
    if (f.batches) mcfg.batches = *f.batches;
    mcfg.validate();
    effective["membership"] = mcfg.to_json();
    if (f.target.empty() && !at.contains("target")) {
      const std::size_t ref = f.reference_size.value_or(at.value("reference_size", data.num_rows() - reps));
      effective["reference_size"] = ref;
      body = attacks::membership_audit(train_fn, data, ref, reps, mcfg).to_json();
    } else {
      const json target = f.target.empty() ? at["target"] : read_json(f.target);
      effective["target"] = target;
      const auto o = attacks::membership_attack(train_fn, data, row_from_json(target, schema), mcfg);
      body = {{"kind", "membership"}, {"p_fake", o.p_fake}, {"p_real", o.p_real}, {"privacy_gain", o.gain}};
    }
  } else if (f.kind == "attribute") {
    auto acfg = attacks::AttributeAttackConfig::from_json(at.value("attribute", json::object()));
    acfg.seed = seed;
    acfg.validate();
    const std::string sensitive = f.sensitive.empty() ? at.value("sensitive", std::string()) : f.sensitive;
    if (sensitive.empty()) throw ConfigError("--sensitive is required for attribute attacks");
    effective["attribute"] = acfg.to_json();
    effective["sensitive"] = sensitive;
    body = attacks::attribute_audit(train_fn, data, schema.index_of(sensitive), reps, acfg).to_json();
  } else {
    throw ConfigError("unknown attack kind '" + f.kind + "'");
  }
  const json r = run.emit("attack", effective, body, "attack_report.json");
  std::cout << r.dump(2) << "\n";
  return 0;
}

int cmd_account(Run& run, const PrivacyFlags& f) {
  run.load();
  privacy::PrivacySpec spec = privacy_spec(run, f);
  spec.validate();
  std::size_t iterations = 0;
  const bool planned = !spec.iterations;
  iterations = planned ? privacy::max_iterations(spec) : *spec.iterations;
  privacy::RdpLedger ledger(spec.max_order);
  if (iterations > 0) ledger.compose(privacy::step_curve(spec), iterations);
  json body = privacy::make_report(spec, ledger).to_json();
  const auto one = privacy::epsilon_after(spec, 1);
  body["planned"] = planned;
  body["single_step_epsilon"] = one.epsilon;
  body["budget_too_small"] = planned && iterations == 0;
  // Each update consumes B rows; epochs are passes over the usable rows.
  body["implied_epochs"] = static_cast<double>(iterations) * static_cast<double>(spec.batch) /
                           static_cast<double>(spec.usable_rows());
  const json r = run.emit("account", {{"privacy", spec.to_json()}}, body, "");
  std::cout << r.dump(2) << "\n";
  return 0;
}

bool is_config_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidSchema:
    case ErrorCode::UnknownColumn:
    case ErrorCode::MissingHeader:
    case ErrorCode::InvalidCondition:
    case ErrorCode::Io:
      return true;
    default:
      return false;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tabsynth: conditional GAN tabular synthesizer with privacy accounting and audits"};
  app.require_subcommand(1);

  Run run;
  TrainFlags tflags;
  PrivacyFlags pflags;
  SampleFlags sflags;
  EvaluateFlags eflags;
  AttackFlags aflags;

  auto* fit = app.add_subcommand("fit", "fit column transforms and write the encoder sidecar");
  add_common(fit, run);

  auto* tr = app.add_subcommand("train", "train the GAN and write a checkpoint");
  add_common(tr, run);
  add_train_flags(tr, tflags);

  auto* trdp = app.add_subcommand("train-dp", "train under a differential-privacy budget");
  add_common(trdp, run);
  add_train_flags(trdp, tflags);
  add_privacy_flags(trdp, pflags);

  auto* smp = app.add_subcommand("sample", "draw synthetic rows from a checkpoint");
  add_common(smp, run);
  smp->add_option("--model", sflags.model, "checkpoint (default <out-dir>/model.json)");
  smp->add_option("--n", sflags.n, "rows to draw")->required();
  smp->add_option("--output", sflags.output, "CSV path (default <out-dir>/synthetic.csv)");
  smp->add_option("--condition-column", sflags.condition_column);
  smp->add_option("--condition-value", sflags.condition_value);

  auto* ev = app.add_subcommand("evaluate", "similarity, distance and utility metrics");
  add_common(ev, run);
  ev->add_option("--real", eflags.real, "real CSV (defaults to --data)");
  ev->add_option("--synthetic", eflags.synthetic, "synthetic CSV");
  ev->add_option("--test", eflags.test, "held-out real CSV enabling ML utility");
  ev->add_option("--models", eflags.models, "decision_tree random_forest logistic_regression mlp");
  ev->add_flag("--no-distances", eflags.no_distances);

  auto* atk = app.add_subcommand("attack", "membership or attribute inference audit");
  add_common(atk, run);
  add_train_flags(atk, tflags);
  add_privacy_flags(atk, pflags);
  atk->add_option("--kind", aflags.kind, "membership or attribute");
  atk->add_option("--target", aflags.target, "JSON row for a single membership attack");
  atk->add_option("--mode", aflags.mode, "naive or correlation");
  atk->add_option("--sensitive", aflags.sensitive, "continuous column for attribute attacks");
  atk->add_option("--reference-size", aflags.reference_size);
  atk->add_option("--repetitions", aflags.repetitions);
  atk->add_option("--batches", aflags.batches, "batches per generator");
  atk->add_flag("--private", aflags.private_generator, "train the attacked generators under DP");

  auto* acc = app.add_subcommand("account", "plan iterations or report epsilon");
  acc->add_option("--config", run.config_path, "JSON run config");
  acc->add_option("--seed", run.seed);
  add_privacy_flags(acc, pflags);
  acc->add_option("--n", pflags.n, "dataset size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "fit") return cmd_fit(run);
    if (name == "train") return cmd_train(run, tflags);
    if (name == "train-dp") return cmd_train_dp(run, tflags, pflags);
    if (name == "sample") return cmd_sample(run, sflags);
    if (name == "evaluate") return cmd_evaluate(run, eflags);
    if (name == "attack") return cmd_attack(run, tflags, pflags, aflags);
    if (name == "account") return cmd_account(run, pflags);
  } catch (const ConfigError& e) {
    std::cerr << name << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return is_config_error(e.code()) ? kExitConfig : kExitRuntime;
  } catch (const json::exception& e) {
    std::cerr << name << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
