#pragma once

// Command-line driver: gen-data, train, grid, eval, report.
//
// Every command reads one YAML experiment file (see README for the grammar);
// flags override single keys. Configuration is validated as a whole before
// any work starts and every violation is reported. Each command that writes
// files also writes manifest-<command>.json next to them.

#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "textlens/textlens.hpp"

namespace textlens {

inline constexpr const char* kToolVersion = "0.1.0";

namespace fs = std::filesystem;

struct GenerateBlock {
  int n_skills = 5;
  int items_per_skill = 40;
  int n_students = 2000;
  double cue_fidelity = TextStyle{}.cue_fidelity;
  std::optional<std::uint64_t> seed;
};

struct IngestBlock {
  fs::path items;
  fs::path responses;
  std::optional<fs::path> students;
  int n_skills = 0;  // 0: infer from the items
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  fs::path output = "out";
  fs::path base_dir = ".";  // relative paths in the file resolve against this

  std::string dataset_name = "llm-sim";
  std::optional<GenerateBlock> generate;
  std::optional<IngestBlock> ingest;
  std::optional<std::uint64_t> split_seed;

  std::optional<EmbeddingMode> embedding_mode;  // unset: the kind's default
  FeaturizerConfig featurizer;
  std::optional<fs::path> embedding_path;

  ModelKind kind = ModelKind::kTextLens;
  std::string preset;  // "", "llm-sim" or "eedi"
  ModelConfig model;

  TrainPlan plan;
  std::optional<std::uint64_t> train_seed;
  std::optional<fs::path> resume;

  std::optional<GridSpec> grid;

  std::vector<int> conditions{1, 2, 3, 4, 5, 6, 7, 8};
  std::size_t n_input = 19;
  EvalOptions eval;
  std::optional<std::uint64_t> eval_seed;
  bool oracle = false;
  std::vector<fs::path> checkpoints;
  std::vector<fs::path> results;

  bool ablate_difficulty_shuffle = false;
  std::optional<std::uint64_t> ablation_seed;

  std::uint64_t data_seed() const { return generate && generate->seed ? *generate->seed : seed; }
  std::uint64_t resolved_split_seed() const { return split_seed.value_or(seed); }
  std::uint64_t resolved_train_seed() const { return train_seed.value_or(seed); }
  std::uint64_t resolved_eval_seed() const { return eval_seed.value_or(seed); }
  std::uint64_t resolved_ablation_seed() const { return ablation_seed.value_or(seed); }
  EmbeddingMode resolved_embedding_mode() const {
    if (embedding_mode) return *embedding_mode;
    return kind == ModelKind::kLens ? EmbeddingMode::kIdOneHot : EmbeddingMode::kTextFeatures;
  }
};

namespace cli_detail {

/// Reads typed keys from YAML while collecting every problem instead of
/// stopping at the first one.
class Reader {
 public:
  std::vector<std::string> errors;

  void keys(const YAML::Node& n, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!n) return;
    if (!n.IsMap()) {
      errors.push_back(where + ": expected a mapping");
      return;
    }
    for (const auto& kv : n) {
      const auto k = kv.first.as<std::string>();
      bool ok = false;
      for (const char* a : allowed) ok = ok || k == a;
      if (!ok) errors.push_back(where + "." + k + ": unknown key");
    }
  }

  template <typename T>
  bool get(const YAML::Node& n, const char* key, T& dst, const std::string& where) {
    if (!n || !n.IsMap() || !n[key]) return false;
    const YAML::Node v = n[key];
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const auto x = v.as<long long>();
        if (x < 0) {
          errors.push_back(where + "." + key + ": must be >= 0, got " + std::to_string(x));
          return false;
        }
        dst = static_cast<T>(x);
      } else {
        dst = v.as<T>();
      }
      return true;
    } catch (const YAML::Exception&) {
      errors.push_back(where + "." + key + ": expected " + type_name<T>() + ", got '" + scalar(v) + "'");
      return false;
    }
  }

  template <typename T>
  bool get(const YAML::Node& n, const char* key, std::optional<T>& dst, const std::string& where) {
    T tmp{};
    if (!get(n, key, tmp, where)) return false;
    dst = tmp;
    return true;
  }

  template <typename T>
  bool list(const YAML::Node& n, const char* key, std::vector<T>& dst, const std::string& where) {
    if (!n || !n.IsMap() || !n[key]) return false;
    const YAML::Node v = n[key];
    if (!v.IsSequence()) {
      errors.push_back(where + "." + key + ": expected a list");
      return false;
    }
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      YAML::Node holder;
      holder["x"] = v[i];
      T x{};
      if (!get(holder, "x", x, where + "." + key + "[" + std::to_string(i) + "]")) return false;
      out.push_back(x);
    }
    dst = std::move(out);
    return true;
  }

 private:
  static std::string scalar(const YAML::Node& v) {
    if (v.IsScalar()) return v.Scalar();
    return v.IsSequence() ? "<list>" : v.IsMap() ? "<mapping>" : "<null>";
  }
  template <typename T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
  }
};

inline fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

}  // namespace cli_detail

/// Parses a YAML document into a config. Returns the violations found while
/// reading; semantic checks live in validate().
inline std::vector<std::string> read_config(const YAML::Node& root, ExperimentConfig& c) {
  cli_detail::Reader r;
  if (!root || root.IsNull()) return {};
  if (!root.IsMap()) return {"config: top level must be a mapping"};
  r.keys(root, "config", {"seed", "output", "dataset", "split", "embedding", "model", "train", "grid", "eval", "ablation"});
  r.get(root, "seed", c.seed, "config");
  std::string out;
  if (r.get(root, "output", out, "config")) c.output = cli_detail::resolve(c.base_dir, out);

  if (const auto d = root["dataset"]) {
    r.keys(d, "dataset", {"name", "generate", "ingest"});
    r.get(d, "name", c.dataset_name, "dataset");
    if (const auto g = d["generate"]) {
      GenerateBlock gb;
      r.keys(g, "dataset.generate", {"n_skills", "items_per_skill", "n_students", "cue_fidelity", "seed"});
      r.get(g, "n_skills", gb.n_skills, "dataset.generate");
      r.get(g, "items_per_skill", gb.items_per_skill, "dataset.generate");
      r.get(g, "n_students", gb.n_students, "dataset.generate");
      r.get(g, "cue_fidelity", gb.cue_fidelity, "dataset.generate");
      r.get(g, "seed", gb.seed, "dataset.generate");
      c.generate = gb;
    }
    if (const auto i = d["ingest"]) {
      IngestBlock ib;
      r.keys(i, "dataset.ingest", {"items", "responses", "students", "n_skills"});
      std::string s;
      if (r.get(i, "items", s, "dataset.ingest")) ib.items = cli_detail::resolve(c.base_dir, s);
      else r.errors.push_back("dataset.ingest.items: required");
      if (r.get(i, "responses", s, "dataset.ingest")) ib.responses = cli_detail::resolve(c.base_dir, s);
      else r.errors.push_back("dataset.ingest.responses: required");
      if (r.get(i, "students", s, "dataset.ingest")) ib.students = cli_detail::resolve(c.base_dir, s);
      r.get(i, "n_skills", ib.n_skills, "dataset.ingest");
      c.ingest = ib;
    }
  }
  if (const auto s = root["split"]) {
    r.keys(s, "split", {"seed"});
    r.get(s, "seed", c.split_seed, "split");
  }
  if (const auto e = root["embedding"]) {
    r.keys(e, "embedding", {"mode", "dim", "bigrams", "path"});
    std::string mode;
    if (r.get(e, "mode", mode, "embedding")) {
      try {
        c.embedding_mode = parse_embedding_mode(mode);
      } catch (const Error& ex) {
        r.errors.push_back(std::string("embedding.mode: ") + ex.what());
      }
    }
    r.get(e, "dim", c.featurizer.dim, "embedding");
    r.get(e, "bigrams", c.featurizer.bigrams, "embedding");
    std::string p;
    if (r.get(e, "path", p, "embedding")) c.embedding_path = cli_detail::resolve(c.base_dir, p);
  }
  if (const auto m = root["model"]) {
    r.keys(m, "model", {"kind", "preset", "lr", "dist_dim", "encoder_hidden_dim", "accumulator_hidden_dim",
                        "item_projection_dim", "decoder_hidden_dim", "kl_weight", "eval_samples"});
    std::string kind;
    if (r.get(m, "kind", kind, "model")) {
      try {
        c.kind = parse_model_kind(kind);
      } catch (const Error& ex) {
        r.errors.push_back(std::string("model.kind: ") + ex.what());
      }
    }
    r.get(m, "preset", c.preset, "model");
  }
  // Preset first, explicit keys on top.
  try {
    c.model = published_config(c.preset.empty() ? "llm-sim" : c.preset, c.kind);
  } catch (const Error& ex) {
    r.errors.push_back(std::string("model.preset: ") + ex.what());
  }
  if (const auto m = root["model"]) {
    r.get(m, "lr", c.model.lr, "model");
    r.get(m, "dist_dim", c.model.dist_dim, "model");
    r.get(m, "encoder_hidden_dim", c.model.encoder_hidden_dim, "model");
    r.get(m, "accumulator_hidden_dim", c.model.accumulator_hidden_dim, "model");
    r.get(m, "item_projection_dim", c.model.item_projection_dim, "model");
    r.get(m, "decoder_hidden_dim", c.model.decoder_hidden_dim, "model");
    r.get(m, "kl_weight", c.model.kl_weight, "model");
    r.get(m, "eval_samples", c.model.eval_samples, "model");
  }
  if (const auto t = root["train"]) {
    r.keys(t, "train", {"epochs", "batch_size", "seed", "min_input_fraction", "max_input_fraction", "kl_warmup_epochs",
                        "reconstruct_inputs", "resume"});
    r.get(t, "epochs", c.plan.epochs, "train");
    r.get(t, "batch_size", c.plan.batch_size, "train");
    r.get(t, "seed", c.train_seed, "train");
    r.get(t, "min_input_fraction", c.plan.min_input_fraction, "train");
    r.get(t, "max_input_fraction", c.plan.max_input_fraction, "train");
    r.get(t, "kl_warmup_epochs", c.plan.kl_warmup_epochs, "train");
    r.get(t, "reconstruct_inputs", c.plan.reconstruct_inputs, "train");
    std::string p;
    if (r.get(t, "resume", p, "train")) c.resume = cli_detail::resolve(c.base_dir, p);
  }
  if (const auto g = root["grid"]) {
    r.keys(g, "grid", {"lr", "dist_dim", "encoder_hidden_dim", "accumulator_hidden_dim", "epochs"});
    GridSpec gs;
    gs.lr = {c.model.lr};
    gs.dist_dim = {c.model.dist_dim};
    gs.encoder_hidden_dim = {c.model.encoder_hidden_dim};
    gs.accumulator_hidden_dim = {c.model.accumulator_hidden_dim};
    r.list(g, "lr", gs.lr, "grid");
    r.list(g, "dist_dim", gs.dist_dim, "grid");
    r.list(g, "encoder_hidden_dim", gs.encoder_hidden_dim, "grid");
    r.list(g, "accumulator_hidden_dim", gs.accumulator_hidden_dim, "grid");
    r.get(g, "epochs", gs.epochs, "grid");
    c.grid = gs;
  }
  if (const auto e = root["eval"]) {
    r.keys(e, "eval", {"conditions", "n_reps", "n_input", "seed", "other_skills", "resample_students", "oracle",
                       "checkpoints", "results"});
    r.list(e, "conditions", c.conditions, "eval");
    r.get(e, "n_reps", c.eval.n_reps, "eval");
    r.get(e, "n_input", c.n_input, "eval");
    r.get(e, "seed", c.eval_seed, "eval");
    std::string other;
    if (r.get(e, "other_skills", other, "eval")) {
      if (other == "union") c.eval.other_skills = OtherSkillMode::kUnion;
      else if (other == "single") c.eval.other_skills = OtherSkillMode::kSingleAlternate;
      else r.errors.push_back("eval.other_skills: expected 'union' or 'single', got '" + other + "'");
    }
    r.get(e, "resample_students", c.eval.resample_students, "eval");
    r.get(e, "oracle", c.oracle, "eval");
    std::vector<std::string> paths;
    if (r.list(e, "checkpoints", paths, "eval"))
      for (const auto& p : paths) c.checkpoints.push_back(cli_detail::resolve(c.base_dir, p));
    paths.clear();
    if (r.list(e, "results", paths, "eval"))
      for (const auto& p : paths) c.results.push_back(cli_detail::resolve(c.base_dir, p));
  }
  if (const auto a = root["ablation"]) {
    r.keys(a, "ablation", {"difficulty_shuffle", "seed"});
    r.get(a, "difficulty_shuffle", c.ablate_difficulty_shuffle, "ablation");
    r.get(a, "seed", c.ablation_seed, "ablation");
  }
  return r.errors;
}

/// Semantic checks for `command`; returns every violation.
inline std::vector<std::string> validate(const ExperimentConfig& c, std::string_view command) {
  std::vector<std::string> v;
  auto need_file = [&](const fs::path& p, const std::string& key) {
    if (!fs::is_regular_file(p)) v.push_back(key + ": file not found: " + p.string());
  };
  const bool needs_data = command != "report";
  if (needs_data) {
    if (c.generate && c.ingest) v.push_back("dataset: give exactly one of 'generate' or 'ingest', not both");
    if (c.ingest) {
      need_file(c.ingest->items, "dataset.ingest.items");
      need_file(c.ingest->responses, "dataset.ingest.responses");
      if (c.ingest->students) need_file(*c.ingest->students, "dataset.ingest.students");
      if (c.ingest->n_skills < 0) v.push_back("dataset.ingest.n_skills: must be >= 0");
    } else {
      const GenerateBlock g = c.generate.value_or(GenerateBlock{});
      if (g.n_skills < 1) v.push_back("dataset.generate.n_skills: must be >= 1");
      if (g.items_per_skill < 1) v.push_back("dataset.generate.items_per_skill: must be >= 1");
      if (g.n_students < 10) v.push_back("dataset.generate.n_students: must be >= 10 for a train/validation/test split");
      if (!(g.cue_fidelity >= 0.0 && g.cue_fidelity <= 1.0)) v.push_back("dataset.generate.cue_fidelity: must lie in [0, 1]");
    }
    if (command == "gen-data" && c.ingest) v.push_back("gen-data: needs a dataset.generate block, not dataset.ingest");
  }
  const bool needs_model = command == "train" || command == "grid";
  if (needs_model) {
    const EmbeddingMode mode = c.resolved_embedding_mode();
    if (c.kind == ModelKind::kLens && mode != EmbeddingMode::kIdOneHot)
      v.push_back("embedding.mode: lens uses id, got " + std::string(to_string(mode)));
    if (c.kind == ModelKind::kTextLens && mode == EmbeddingMode::kIdOneHot)
      v.push_back("embedding.mode: text-lens needs text or file, got id");
    if (mode == EmbeddingMode::kFileVectors) {
      if (!c.embedding_path) v.push_back("embedding.path: required for mode file");
      else need_file(*c.embedding_path, "embedding.path");
    }
    if (mode == EmbeddingMode::kTextFeatures && c.featurizer.dim < 1) v.push_back("embedding.dim: must be >= 1");
    for (const auto& s : c.model.violations()) v.push_back("model: " + s);
    TrainPlan p = c.plan;
    p.model = c.model;
    for (const auto& s : p.violations()) v.push_back("train: " + s);
    if (c.resume) need_file(*c.resume, "train.resume");
  }
  if (command == "grid") {
    if (!c.grid) v.push_back("grid: block required for the grid command");
    else
      for (const auto& s : c.grid->violations()) v.push_back(s);
  }
  if (command == "eval") {
    if (c.checkpoints.empty() && !c.oracle) v.push_back("eval.checkpoints: at least one checkpoint (or eval.oracle: true)");
    for (const auto& p : c.checkpoints) need_file(p, "eval.checkpoints");
    if (c.conditions.empty()) v.push_back("eval.conditions: must be non-empty");
    for (int id : c.conditions)
      if (id < 1 || id > 8) v.push_back("eval.conditions: condition " + std::to_string(id) + " is not in 1..8");
    if (c.eval.n_reps < 1) v.push_back("eval.n_reps: must be >= 1");
    if (c.oracle && c.ingest && !c.ingest->students)
      v.push_back("eval.oracle: needs proficiency profiles (dataset.ingest.students)");
  }
  if (command == "report") {
    if (c.results.empty()) v.push_back("eval.results: at least one results CSV is required for report");
    for (const auto& p : c.results) need_file(p, "eval.results");
  }
  if (c.ablate_difficulty_shuffle && c.embedding_mode == EmbeddingMode::kFileVectors)
    v.push_back("ablation.difficulty_shuffle: file vectors cannot be re-embedded from shuffled text");
  return v;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_checksum(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string() + " for checksumming");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    if (!in) break;
  }
  return hex64(h);
}

/// Canonical description of everything that determines a trained model,
/// except the epoch count (so a run can be extended by resuming). Input files
/// enter by content checksum, so moving the data does not change the identity.
inline nlohmann::ordered_json training_identity(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  if (c.ingest) {
    j["dataset"] = {{"ingest", {{"items", file_checksum(c.ingest->items)}, {"responses", file_checksum(c.ingest->responses)}}}};
  } else {
    const GenerateBlock g = c.generate.value_or(GenerateBlock{});
    j["dataset"] = {{"generate",
                     {{"n_skills", g.n_skills},
                      {"items_per_skill", g.items_per_skill},
                      {"n_students", g.n_students},
                      {"cue_fidelity", g.cue_fidelity},
                      {"seed", c.data_seed()}}}};
  }
  j["split_seed"] = c.resolved_split_seed();
  j["embedding"] = {{"mode", std::string(to_string(c.resolved_embedding_mode()))},
                    {"dim", c.featurizer.dim},
                    {"bigrams", c.featurizer.bigrams},
                    {"table", c.embedding_path ? file_checksum(*c.embedding_path) : ""}};
  j["model"] = {{"kind", std::string(to_string(c.kind))}, {"config", to_json(c.model)}};
  j["train"] = {{"batch_size", c.plan.batch_size},
                {"seed", c.resolved_train_seed()},
                {"min_input_fraction", c.plan.min_input_fraction},
                {"max_input_fraction", c.plan.max_input_fraction},
                {"kl_warmup_epochs", c.plan.kl_warmup_epochs},
                {"reconstruct_inputs", c.plan.reconstruct_inputs}};
  j["ablation"] = {{"difficulty_shuffle", c.ablate_difficulty_shuffle}, {"seed", c.resolved_ablation_seed()}};
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(training_identity(c).dump())); }

class Manifest {
 public:
  Manifest(std::string command, const ExperimentConfig& c, const YAML::Node& snapshot)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    j_["command"] = command_;
    j_["tool_version"] = kToolVersion;
    j_["checkpoint_version"] = kCheckpointVersion;
    YAML::Emitter em;
    em << snapshot;
    j_["config_snapshot"] = std::string(em.c_str());
    j_["config_hash"] = config_hash(c);
    j_["seeds"] = {{"base", c.seed},
                   {"data", c.data_seed()},
                   {"split", c.resolved_split_seed()},
                   {"train", c.resolved_train_seed()},
                   {"eval", c.resolved_eval_seed()},
                   {"ablation", c.resolved_ablation_seed()}};
    j_["inputs"] = nlohmann::ordered_json::array();
    j_["outputs"] = nlohmann::ordered_json::array();
    j_["timings_s"] = nlohmann::ordered_json::object();
  }
  void input(const fs::path& p) { j_["inputs"].push_back({{"path", p.string()}, {"fnv1a64", file_checksum(p)}}); }
  void output(const fs::path& p) { j_["outputs"].push_back({{"path", p.string()}, {"fnv1a64", file_checksum(p)}}); }
  void timing(const std::string& stage, double seconds) { j_["timings_s"][stage] = seconds; }
  double elapsed() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

  void write(const fs::path& dir) {
    j_["timings_s"]["total"] = elapsed();
    const std::time_t now = std::time(nullptr);
    char ts[32];
    std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    j_["finished_at"] = ts;
    auto out = io_detail::open_out(dir / ("manifest-" + command_ + ".json"));
    out << j_.dump(2) << '\n';
    if (!out) throw IoError("write failed: manifest in " + dir.string());
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  nlohmann::ordered_json j_;
};

struct LoadedData {
  Dataset data;
  DatasetSplit split;
  std::vector<fs::path> inputs;  // files read, for the manifest
};

inline Dataset generate_dataset(const GenerateBlock& g, std::uint64_t seed) {
  auto items = generate_item_bank(g.n_skills, g.items_per_skill, seed, TextStyle{g.cue_fidelity});
  auto students = sample_students(g.n_students, g.n_skills, seed);
  auto responses = simulate_responses(students, items, IrtParams{}, seed);
  return Dataset(g.n_skills, std::move(items), std::move(responses), std::move(students));
}

inline Dataset apply_ablation(const ExperimentConfig& c, Dataset data) {
  if (!c.ablate_difficulty_shuffle) return data;
  return data.with_items(shuffle_difficulty_text_link(data.items(), c.resolved_ablation_seed()));
}

inline LoadedData load_data(const ExperimentConfig& c) {
  LoadedData out;
  if (c.ingest) {
    out.data = load_dataset(c.ingest->items, c.ingest->responses, c.ingest->students, c.ingest->n_skills);
    out.inputs = {c.ingest->items, c.ingest->responses};
    if (c.ingest->students) out.inputs.push_back(*c.ingest->students);
  } else {
    out.data = generate_dataset(c.generate.value_or(GenerateBlock{}), c.data_seed());
  }
  out.data = apply_ablation(c, std::move(out.data));
  out.split = split_dataset(out.data, c.resolved_split_seed());
  return out;
}

inline EmbeddingProvider make_provider(const ExperimentConfig& c, const Dataset& data) {
  switch (c.resolved_embedding_mode()) {
    case EmbeddingMode::kIdOneHot: return provider_for(c.kind, Vocabulary::over(data.items()), &data.items());
    case EmbeddingMode::kFileVectors:
      return provider_for(c.kind, EmbeddingTable::load(*c.embedding_path), &data.items());
    case EmbeddingMode::kTextFeatures: return provider_for(c.kind, c.featurizer, &data.items());
  }
  throw UsageError("unknown embedding mode");
}

inline void write_train_log(const fs::path& path, const TrainLog& log) {
  auto out = io_detail::open_out(path);
  out << "epoch,train_elbo,validation_elbo\n";
  for (const auto& e : log.epochs)
    out << e.epoch << ',' << io_detail::format_real(e.train_elbo) << ',' << io_detail::format_real(e.validation_elbo) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

struct CliContext {
  ExperimentConfig config;
  YAML::Node snapshot;
  std::ostream* out;
  std::ostream* err;
};

inline int cmd_gen_data(CliContext& ctx) {
  const auto& c = ctx.config;
  Manifest m("gen-data", c, ctx.snapshot);
  const GenerateBlock g = c.generate.value_or(GenerateBlock{});
  Dataset data = apply_ablation(c, generate_dataset(g, c.data_seed()));
  m.timing("generate", m.elapsed());
  const fs::path items = c.output / "items.jsonl", responses = c.output / "responses.csv", students = c.output / "students.csv";
  write_items(items, data.items());
  write_responses(responses, data.responses());
  write_students(students, data.students());
  for (const auto& p : {items, responses, students}) m.output(p);
  m.write(c.output);
  *ctx.out << "wrote " << data.items().size() << " items, " << data.students().size() << " students, "
           << data.responses().size() << " responses to " << c.output.string() << '\n';
  return exit_codes::kOk;
}

inline TrainPlan resolved_plan(const ExperimentConfig& c, std::ostream* progress) {
  TrainPlan plan = c.plan;
  plan.model = c.model;
  plan.seed = c.resolved_train_seed();
  if (progress)
    plan.on_epoch = [progress](const EpochStats& s) {
      *progress << "epoch " << s.epoch << " train_elbo " << s.train_elbo << " validation_elbo " << s.validation_elbo << '\n';
    };
  return plan;
}

inline int cmd_train(CliContext& ctx) {
  const auto& c = ctx.config;
  Manifest m("train", c, ctx.snapshot);
  LoadedData d = load_data(c);
  for (const auto& p : d.inputs) m.input(p);
  const EmbeddingProvider provider = make_provider(c, d.data);
  if (c.embedding_path) m.input(*c.embedding_path);
  const TrainPlan plan = resolved_plan(c, ctx.err);
  const std::string hash = config_hash(c);

  std::optional<LoadedCheckpoint> resumed;
  std::size_t start = 0;
  if (c.resume) {
    resumed = load_checkpoint(*c.resume);
    m.input(*c.resume);
    if (resumed->meta.config_hash != hash)
      throw UsageError("resume rejected: checkpoint " + c.resume->string() + " has config hash " +
                       resumed->meta.config_hash + ", current config hashes to " + hash);
    start = static_cast<std::size_t>(resumed->meta.epochs_completed);
    if (start > plan.epochs)
      throw UsageError("resume rejected: checkpoint already has " + std::to_string(start) + " epochs, config asks for " +
                       std::to_string(plan.epochs));
  }
  auto res = train(plan, d.data, d.split, provider, resumed ? &resumed->model : nullptr, start);
  m.timing("train", m.elapsed());
  const fs::path ck = c.output / "checkpoint.json", log = c.output / "train_log.csv";
  save_checkpoint(ck, res.model, CheckpointMeta{plan.epochs, hash});
  write_train_log(log, res.log);
  m.output(ck);
  m.output(log);
  m.write(c.output);
  if (res.log.skipped_students)
    *ctx.err << "warning: skipped " << res.log.skipped_students << " student-epochs with fewer than 2 seen responses\n";
  *ctx.out << "trained " << to_string(c.kind) << " for " << plan.epochs - start << " epochs; checkpoint " << ck.string() << '\n';
  return exit_codes::kOk;
}

inline int cmd_grid(CliContext& ctx) {
  const auto& c = ctx.config;
  Manifest m("grid", c, ctx.snapshot);
  LoadedData d = load_data(c);
  for (const auto& p : d.inputs) m.input(p);
  const EmbeddingProvider provider = make_provider(c, d.data);
  TrainPlan base = resolved_plan(c, nullptr);
  const auto result = grid_search(*c.grid, base, d.data, d.split, provider, c.resolved_train_seed());
  m.timing("search", m.elapsed());

  const fs::path board = c.output / "leaderboard.csv";
  {
    auto out = io_detail::open_out(board);
    out << "rank,lr,dist_dim,encoder_hidden_dim,accumulator_hidden_dim,validation_auc\n";
    for (std::size_t i = 0; i < result.leaderboard.size(); ++i) {
      const auto& e = result.leaderboard[i];
      out << i + 1 << ',' << io_detail::format_real(e.config.lr) << ',' << e.config.dist_dim << ','
          << e.config.encoder_hidden_dim << ',' << e.config.accumulator_hidden_dim << ','
          << io_detail::format_real(e.validation_auc) << '\n';
    }
    if (!out) throw IoError("write failed: " + board.string());
  }
  ExperimentConfig winner = c;
  winner.model = result.best;
  TrainPlan plan = resolved_plan(winner, ctx.err);
  auto res = train(plan, d.data, d.split, provider);
  m.timing("retrain", m.elapsed());
  const fs::path ck = c.output / "checkpoint.json", log = c.output / "train_log.csv";
  save_checkpoint(ck, res.model, CheckpointMeta{plan.epochs, config_hash(winner)});
  write_train_log(log, res.log);
  for (const auto& p : {board, ck, log}) m.output(p);
  m.write(c.output);
  *ctx.out << "grid of " << result.leaderboard.size() << " points; best lr=" << result.best.lr
           << " dist_dim=" << result.best.dist_dim << " encoder_hidden_dim=" << result.best.encoder_hidden_dim
           << " accumulator_hidden_dim=" << result.best.accumulator_hidden_dim << '\n';
  return exit_codes::kOk;
}

inline std::vector<EvalResult> evaluate_all(const ExperimentConfig& c, const Dataset& data, const DatasetSplit& split,
                                            const LensModel* model, const std::string& name) {
  EvalOptions opt = c.eval;
  opt.seed = c.resolved_eval_seed();
  std::vector<EvalResult> out;
  for (int id : c.conditions) {
    const ConditionSpec spec = build_condition(id, c.n_input);
    out.push_back(model ? run_condition(ModelScorer(*model, data), name, data, split, spec, opt)
                        : run_condition(OracleScorer(data), name, data, split, spec, opt));
  }
  return out;
}

inline int cmd_eval(CliContext& ctx) {
  const auto& c = ctx.config;
  Manifest m("eval", c, ctx.snapshot);
  LoadedData d = load_data(c);
  for (const auto& p : d.inputs) m.input(p);
  const std::string suffix = c.ablate_difficulty_shuffle ? "+shuffled" : "";
  std::vector<ResultRow> rows;
  for (const auto& path : c.checkpoints) {
    auto ck = load_checkpoint(path);
    m.input(path);
    if (c.embedding_mode && ck.model.kind() == c.kind && ck.model.provider().mode() != *c.embedding_mode)
      throw UsageError("checkpoint " + path.string() + " uses " + std::string(to_string(ck.model.provider().mode())) +
                       " but the config asks for " + std::string(to_string(*c.embedding_mode)));
    if (c.ablate_difficulty_shuffle && ck.model.provider().mode() == EmbeddingMode::kFileVectors)
      throw UsageError("ablation.difficulty_shuffle: checkpoint " + path.string() + " uses file vectors, which cannot be re-embedded");
    ck.model.provider().require_coverage(d.data.items());
    for (const auto& r : evaluate_all(c, d.data, d.split, &ck.model, std::string(to_string(ck.model.kind())) + suffix))
      rows.push_back(to_row(r, c.dataset_name));
  }
  if (c.oracle) {
    if (!d.data.has_profiles()) throw UsageError("eval.oracle: the dataset has no proficiency profiles");
    for (const auto& r : evaluate_all(c, d.data, d.split, nullptr, "oracle")) rows.push_back(to_row(r, c.dataset_name));
  }
  m.timing("eval", m.elapsed());
  report(rows, c.output);
  m.output(c.output / "results.csv");
  m.output(c.output / "plot_data.json");
  m.write(c.output);
  for (const auto& r : rows)
    *ctx.out << r.model << " condition " << r.condition_id << ": auc " << std::fixed << std::setprecision(4) << r.auc_mean
             << " +- " << r.auc_stderr << std::defaultfloat << '\n';
  return exit_codes::kOk;
}

inline int cmd_report(CliContext& ctx) {
  const auto& c = ctx.config;
  Manifest m("report", c, ctx.snapshot);
  std::vector<ResultRow> rows;
  for (const auto& p : c.results) {
    auto part = read_results_csv(p);
    m.input(p);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  report(rows, c.output);
  m.output(c.output / "results.csv");
  m.output(c.output / "plot_data.json");
  m.write(c.output);
  *ctx.out << "merged " << rows.size() << " rows into " << (c.output / "results.csv").string() << '\n';
  return exit_codes::kOk;
}

/// Entry point. Returns the process exit code: 0 success, 2 usage or
/// validation, 3 data, 4 numeric abort, 5 I/O.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"LENS / Text-LENS experiments: data generation, training, grid search, evaluation, reports"};
  app.require_subcommand(1, 1);
  app.fallthrough();  // subcommands copy this when created
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool paper_scale = false, ablate = false;
  std::vector<std::string> checkpoints, results;
  std::string resume;
  app.add_option("--config", config_path, "experiment file (YAML)");
  app.add_option("--seed", seed, "base seed; stage seeds default to it");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--paper-scale", paper_scale, "50,000 generated students");
  app.add_flag("--ablate-difficulty-shuffle", ablate, "permute item texts across difficulty levels within each skill");
  app.add_subcommand("gen-data", "generate items, students and responses");
  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--resume", resume, "continue from a checkpoint (config hash must match)");
  app.add_subcommand("grid", "grid search, then retrain the winner");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on conditions 1-8");
  eval_cmd->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable)");
  auto* report_cmd = app.add_subcommand("report", "merge results CSVs and emit plot data");
  report_cmd->add_option("--results", results, "results CSV (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_codes::kOk : exit_codes::kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    CliContext ctx;
    ctx.out = &out;
    ctx.err = &err;
    ExperimentConfig& c = ctx.config;
    std::vector<std::string> violations;
    if (!config_path.empty()) {
      if (!fs::is_regular_file(config_path)) throw IoError("config file not found: " + config_path);
      c.base_dir = fs::path(config_path).parent_path();
      try {
        ctx.snapshot = YAML::LoadFile(config_path);
      } catch (const YAML::Exception& e) {
        throw UsageError("config " + config_path + ": " + e.what());
      }
      violations = read_config(ctx.snapshot, c);
    } else {
      c.model = published_config("llm-sim", c.kind);
    }
    if (seed) c.seed = *seed;
    if (!out_dir.empty()) c.output = out_dir;
    if (paper_scale) {
      if (!c.generate) c.generate = GenerateBlock{};
      c.generate->n_students = 50000;
    }
    if (ablate) c.ablate_difficulty_shuffle = true;
    if (!resume.empty()) c.resume = resume;
    for (const auto& p : checkpoints) c.checkpoints.emplace_back(p);
    for (const auto& p : results) c.results.emplace_back(p);
    if (violations.empty()) violations = validate(c, command);
    else {
      const auto more = validate(c, command);
      violations.insert(violations.end(), more.begin(), more.end());
    }
    if (!violations.empty()) {
      err << "invalid configuration (" << violations.size() << " problem" << (violations.size() == 1 ? "" : "s") << "):\n";
      for (const auto& v : violations) err << "  - " << v << '\n';
      return exit_codes::kUsage;
    }
    if (command == "gen-data") return cmd_gen_data(ctx);
    if (command == "train") return cmd_train(ctx);
    if (command == "grid") return cmd_grid(ctx);
    if (command == "eval") return cmd_eval(ctx);
    return cmd_report(ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_codes::kIo;
  }
}

}  // namespace textlens
