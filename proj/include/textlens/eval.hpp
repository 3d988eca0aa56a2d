#pragma once

// Seen/unseen generalization harness: eight conditions crossing input
// seen-ness, input skill alignment and query seen-ness, each evaluated as a
// ROC-AUC averaged over repetitions of fresh query and input draws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "textlens/data/io.hpp"
#include "textlens/data/irt.hpp"
#include "textlens/data/splits.hpp"
#include "textlens/data/types.hpp"
#include "textlens/errors.hpp"
#include "textlens/model.hpp"
#include "textlens/rng.hpp"

namespace textlens {

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Computed from mid-ranks.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw UsageError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;  // sum of mid-ranks of positives, 1-based
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum += mid;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UsageError("auc: undefined without both positive and negative labels");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

enum class ItemPool { kSeen, kUnseen };
enum class SkillRelation { kTarget, kOther };

struct ConditionSpec {
  int condition_id = 1;
  ItemPool input_source = ItemPool::kSeen;
  SkillRelation input_skill = SkillRelation::kTarget;
  ItemPool query_source = ItemPool::kSeen;
  std::size_t n_input = 19;
};

/// Conditions 1-4 query seen items, 5-8 unseen ones; within each group the
/// inputs are seen/target, unseen/target, seen/other, unseen/other.
inline ConditionSpec build_condition(int id, std::size_t n_input = 19) {
  if (id < 1 || id > 8) throw UsageError("condition id must be in 1..8, got " + std::to_string(id));
  const int k = (id - 1) % 4;
  ConditionSpec c;
  c.condition_id = id;
  c.input_source = (k == 0 || k == 2) ? ItemPool::kSeen : ItemPool::kUnseen;
  c.input_skill = k < 2 ? SkillRelation::kTarget : SkillRelation::kOther;
  c.query_source = id <= 4 ? ItemPool::kSeen : ItemPool::kUnseen;
  c.n_input = n_input;
  return c;
}

inline std::string describe(const ConditionSpec& c) {
  auto pool = [](ItemPool p) { return p == ItemPool::kSeen ? "seen" : "unseen"; };
  return "condition " + std::to_string(c.condition_id) + " (" + std::to_string(c.n_input) + " " + pool(c.input_source) +
         "/" + (c.input_skill == SkillRelation::kTarget ? "target" : "other") + " inputs, " + pool(c.query_source) +
         " query)";
}

enum class OtherSkillMode { kUnion, kSingleAlternate };

struct EvalOptions {
  std::size_t n_reps = 60;
  std::uint64_t seed = 0;
  OtherSkillMode other_skills = OtherSkillMode::kUnion;
  bool resample_students = false;  // bootstrap the test students in every repetition
};

struct Probe {
  StudentId student_id = 0;
  std::vector<InputObservation> inputs;
  const Item* query = nullptr;
  int label = 0;
};

struct EvalResult {
  int condition_id = 0;
  std::string model;
  double auc_mean = 0.0;
  double auc_stderr = 0.0;
  std::size_t n_reps = 0;
  std::vector<double> rep_aucs;
  std::uint64_t seed = 0;
  std::size_t skipped_students = 0;
};

namespace eval_detail {

inline const std::vector<ItemId>& pool_ids(const DatasetSplit& split, ItemPool p) {
  return p == ItemPool::kSeen ? split.seen : split.unseen;
}

inline void check_feasible(const Dataset& data, const DatasetSplit& split, const ConditionSpec& spec,
                           const EvalOptions& opt) {
  const auto& qpool = pool_ids(split, spec.query_source);
  const auto& ipool = pool_ids(split, spec.input_source);
  if (qpool.empty()) throw UsageError(describe(spec) + ": the query pool is empty");
  std::map<int, std::size_t> per_skill;
  for (ItemId id : ipool) ++per_skill[data.item(id).skill_id];
  std::set<int> query_skills;
  for (ItemId id : qpool) query_skills.insert(data.item(id).skill_id);
  const std::size_t same_pool = spec.input_source == spec.query_source ? 1 : 0;
  for (int s : query_skills) {
    std::size_t avail = 0;
    if (spec.input_skill == SkillRelation::kTarget) {
      avail = per_skill[s] >= same_pool ? per_skill[s] - same_pool : 0;
    } else if (opt.other_skills == OtherSkillMode::kUnion) {
      avail = ipool.size() - per_skill[s];
    } else {
      for (const auto& [k, n] : per_skill)
        if (k != s) avail = std::max(avail, n);
    }
    if (avail < spec.n_input)
      throw UsageError(describe(spec) + ": input pool (" + (spec.input_source == ItemPool::kSeen ? "seen" : "unseen") +
                       ", " + (spec.input_skill == SkillRelation::kTarget ? "target" : "other") + " skills of skill " +
                       std::to_string(s) + ") has " + std::to_string(avail) + " items, fewer than " +
                       std::to_string(spec.n_input));
  }
}

}  // namespace eval_detail

/// Query and input draws of one repetition. The query draw depends only on
/// (seed, repetition, student, query pool); input draws additionally on the
/// condition. Conditions that share a query pool therefore share queries.
/// Students whose own responses cannot fill the condition are skipped.
inline std::vector<Probe> draw_probes(const Dataset& data, const DatasetSplit& split, const ConditionSpec& spec,
                                      std::size_t rep, const EvalOptions& opt, std::size_t* skipped = nullptr) {
  const auto& qpool = eval_detail::pool_ids(split, spec.query_source);
  const auto& ipool = eval_detail::pool_ids(split, spec.input_source);
  std::vector<StudentId> students = split.test;
  if (opt.resample_students) {
    auto rng = CounterRng::stream(opt.seed, "eval/bootstrap", {rep});
    for (auto& s : students) s = split.test[rng.below(split.test.size())];
  }
  std::vector<Probe> probes;
  probes.reserve(students.size());
  std::size_t n_skipped = 0;
  for (std::size_t si = 0; si < students.size(); ++si) {
    const StudentId sid = students[si];
    const std::uint64_t slot = opt.resample_students ? si : static_cast<std::uint64_t>(sid);
    std::vector<ItemId> q_elig;
    for (ItemId id : qpool)
      if (data.response(sid, id)) q_elig.push_back(id);
    if (q_elig.empty()) {
      ++n_skipped;
      continue;
    }
    auto qrng = CounterRng::stream(opt.seed, "eval/query",
                                   {rep, slot, static_cast<std::uint64_t>(spec.query_source)});
    const Item& query = data.item(q_elig[qrng.below(q_elig.size())]);

    auto irng = CounterRng::stream(opt.seed, "eval/input",
                                   {static_cast<std::uint64_t>(spec.condition_id), rep, slot});
    int alternate = -1;
    if (spec.input_skill == SkillRelation::kOther && opt.other_skills == OtherSkillMode::kSingleAlternate) {
      std::map<int, std::size_t> counts;
      for (ItemId id : ipool)
        if (data.item(id).skill_id != query.skill_id && id != query.item_id && data.response(sid, id))
          ++counts[data.item(id).skill_id];
      std::vector<int> options;
      for (const auto& [k, n] : counts)
        if (n >= spec.n_input) options.push_back(k);
      if (!options.empty()) alternate = options[irng.below(options.size())];
    }
    std::vector<ItemId> i_elig;
    for (ItemId id : ipool) {
      if (id == query.item_id || !data.response(sid, id)) continue;
      const int skill = data.item(id).skill_id;
      const bool ok = spec.input_skill == SkillRelation::kTarget ? skill == query.skill_id
                      : alternate >= 0                           ? skill == alternate
                                                                 : skill != query.skill_id;
      if (ok) i_elig.push_back(id);
    }
    if (i_elig.size() < spec.n_input ||
        (spec.input_skill == SkillRelation::kOther && opt.other_skills == OtherSkillMode::kSingleAlternate && alternate < 0)) {
      ++n_skipped;
      continue;
    }
    Probe p;
    p.student_id = sid;
    p.query = &query;
    p.label = *data.response(sid, query.item_id);
    for (std::size_t k : sample_without_replacement(i_elig.size(), spec.n_input, irng)) {
      const Item& it = data.item(i_elig[k]);
      p.inputs.push_back({&it, *data.response(sid, it.item_id)});
    }
    probes.push_back(std::move(p));
  }
  if (skipped) *skipped += n_skipped;
  return probes;
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation over sqrt(n); zero for fewer than two values.
inline double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

/// `score` maps a span of probes to one probability per probe.
template <typename Scorer>
EvalResult run_condition(Scorer&& score, std::string model_name, const Dataset& data, const DatasetSplit& split,
                         const ConditionSpec& spec, const EvalOptions& opt) {
  if (opt.n_reps < 1) throw UsageError("run_condition: n_reps must be >= 1");
  eval_detail::check_feasible(data, split, spec, opt);
  EvalResult r;
  r.condition_id = spec.condition_id;
  r.model = std::move(model_name);
  r.n_reps = opt.n_reps;
  r.seed = opt.seed;
  for (std::size_t rep = 0; rep < opt.n_reps; ++rep) {
    const auto probes = draw_probes(data, split, spec, rep, opt, &r.skipped_students);
    const std::vector<double> scores = score(std::span<const Probe>(probes));
    if (scores.size() != probes.size()) throw UsageError("scorer returned the wrong number of scores");
    std::vector<int> labels;
    for (const auto& p : probes) labels.push_back(p.label);
    r.rep_aucs.push_back(auc(scores, labels));
  }
  r.auc_mean = mean_of(r.rep_aucs);
  r.auc_stderr = standard_error(r.rep_aucs);
  return r;
}

/// Scores probes with a trained model (posterior-mean predictions).
class ModelScorer {
 public:
  ModelScorer(const LensModel& model, const Dataset& data)
      : model_(&model), features_(model.provider(), data.items()) {}

  std::vector<double> operator()(std::span<const Probe> probes) const {
    std::vector<double> out;
    out.reserve(probes.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t i = 0; i < probes.size(); i += kChunk) {
      std::vector<StudentExample> batch;
      for (std::size_t k = i; k < std::min(probes.size(), i + kChunk); ++k)
        batch.push_back({probes[k].inputs, {probes[k].query}, {}});
      const auto p = model_->predict_batch(features_, batch);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

 private:
  const LensModel* model_;
  ItemFeatures features_;
};

/// True 3-PL probability of the query; ignores the inputs.
class OracleScorer {
 public:
  OracleScorer(const Dataset& data, IrtParams params = {}) : data_(&data), params_(params) {}
  std::vector<double> operator()(std::span<const Probe> probes) const {
    std::vector<double> out;
    for (const auto& p : probes) {
      const auto& theta = data_->profile(p.student_id).theta;
      out.push_back(p_correct(theta.at(static_cast<std::size_t>(p.query->skill_id)), params_, p.query->b()));
    }
    return out;
  }

 private:
  const Dataset* data_;
  IrtParams params_;
};

inline EvalResult run_condition(const LensModel& model, const Dataset& data, const DatasetSplit& split,
                                const ConditionSpec& spec, const EvalOptions& opt) {
  return run_condition(ModelScorer(model, data), std::string(to_string(model.kind())), data, split, spec, opt);
}

// ---------------------------------------------------------------------------
// Reports

struct ResultRow {
  std::string dataset;
  std::string model;
  int condition_id = 0;
  double auc_mean = 0.0;
  double auc_stderr = 0.0;
  std::size_t n_reps = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline ResultRow to_row(const EvalResult& r, std::string dataset) {
  return {std::move(dataset), r.model, r.condition_id, r.auc_mean, r.auc_stderr, r.n_reps, r.seed};
}

inline constexpr const char* kResultsHeader = "dataset,model,condition_id,auc_mean,auc_stderr,n_reps,seed";

inline void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  auto out = io_detail::open_out(path);
  out << kResultsHeader << '\n';
  for (const auto& r : rows)
    out << r.dataset << ',' << r.model << ',' << r.condition_id << ',' << io_detail::format_real(r.auc_mean) << ','
        << io_detail::format_real(r.auc_stderr) << ',' << r.n_reps << ',' << r.seed << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  const std::string src = path.string();
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw ParseError(src, 1, std::string("expected header ") + kResultsHeader);
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = io_detail::split(line, ',');
    if (f.size() != 7) throw ParseError(src, lineno, "expected 7 fields");
    ResultRow r;
    r.dataset = f[0];
    r.model = f[1];
    const auto cid = io_detail::parse_int<int>(f[2]);
    const auto m = io_detail::parse_real(f[3]);
    const auto se = io_detail::parse_real(f[4]);
    const auto n = io_detail::parse_int<std::size_t>(f[5]);
    const auto seed = io_detail::parse_int<std::uint64_t>(f[6]);
    if (!cid || !m || !se || !n || !seed) throw ParseError(src, lineno, "bad numeric field");
    r.condition_id = *cid, r.auc_mean = *m, r.auc_stderr = *se, r.n_reps = *n, r.seed = *seed;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Plot data in two panels (seen queries: conditions 1-4, unseen queries:
/// 5-8), one series per (dataset, model) with AUC and standard error per condition.
inline nlohmann::ordered_json plot_data(const std::vector<ResultRow>& rows) {
  nlohmann::ordered_json panels = nlohmann::ordered_json::array();
  const std::pair<const char*, int> groups[] = {{"seen query", 1}, {"unseen query", 5}};
  for (const auto& [title, first] : groups) {
    nlohmann::ordered_json panel;
    panel["title"] = title;
    panel["conditions"] = {first, first + 1, first + 2, first + 3};
    std::map<std::pair<std::string, std::string>, std::map<int, const ResultRow*>> series;
    for (const auto& r : rows)
      if (r.condition_id >= first && r.condition_id < first + 4) series[{r.dataset, r.model}][r.condition_id] = &r;
    nlohmann::ordered_json ss = nlohmann::ordered_json::array();
    for (const auto& [key, byc] : series) {
      nlohmann::ordered_json s;
      s["dataset"] = key.first;
      s["model"] = key.second;
      nlohmann::ordered_json aucs = nlohmann::ordered_json::array(), errs = nlohmann::ordered_json::array();
      for (int c = first; c < first + 4; ++c) {
        auto it = byc.find(c);
        aucs.push_back(it == byc.end() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(it->second->auc_mean));
        errs.push_back(it == byc.end() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(it->second->auc_stderr));
      }
      s["auc"] = aucs;
      s["stderr"] = errs;
      ss.push_back(s);
    }
    panel["series"] = ss;
    panels.push_back(panel);
  }
  return {{"panels", panels}};
}

/// Writes results.csv and plot_data.json into `dir`.
inline void report(const std::vector<ResultRow>& rows, const std::filesystem::path& dir) {
  write_results_csv(dir / "results.csv", rows);
  auto out = io_detail::open_out(dir / "plot_data.json");
  out << plot_data(rows).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "plot_data.json").string());
}

}  // namespace textlens
