#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "textlens/data/splits.hpp"
#include "textlens/data/types.hpp"
#include "textlens/embeddings.hpp"
#include "textlens/errors.hpp"
#include "textlens/eval.hpp"
#include "textlens/model.hpp"
#include "textlens/nn/adam.hpp"
#include "textlens/rng.hpp"

namespace textlens {

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_elbo = 0.0;
  double validation_elbo = 0.0;
};

struct TrainPlan {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  ModelConfig model;
  std::uint64_t seed = 0;
  double min_input_fraction = 0.3;
  double max_input_fraction = 0.9;
  std::size_t kl_warmup_epochs = 0;  // kl weight ramps linearly from 0 over these epochs
  bool reconstruct_inputs = true;     // decode the input responses as well as the queries
  bool track_validation = true;
  std::function<void(const EpochStats&)> on_epoch;

  std::vector<std::string> violations() const {
    std::vector<std::string> v = model.violations();
    if (epochs < 1) v.push_back("epochs must be >= 1");
    if (batch_size < 1) v.push_back("batch_size must be >= 1");
    if (!(min_input_fraction > 0.0 && max_input_fraction < 1.0 && min_input_fraction <= max_input_fraction))
      v.push_back("input fractions must satisfy 0 < min <= max < 1");
    return v;
  }
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::size_t skipped_students = 0;  // counted once per skipped (student, epoch)
};

struct TrainResult {
  LensModel model;
  TrainLog log;
};

using ResponseList = std::vector<std::pair<const Item*, int>>;

/// Shuffles the responses and takes the first `n_in` as inputs, the rest as queries.
inline StudentExample partition_with_count(const ResponseList& responses, std::size_t n_in, CounterRng& rng) {
  std::vector<std::size_t> idx(responses.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle_in_place(idx, rng);
  StudentExample ex;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& [item, y] = responses[idx[k]];
    if (k < n_in) {
      ex.inputs.push_back({item, y});
    } else {
      ex.queries.push_back(item);
      ex.labels.push_back(y);
    }
  }
  return ex;
}

/// Splits one student's seen-item responses into inputs and queries. A
/// fraction f ~ U[min_fraction, max_fraction] of the responses, rounded and
/// kept within [1, n - 1], becomes the input set. Returns nullopt for fewer
/// than two responses.
inline std::optional<StudentExample> partition_student_batch(const ResponseList& responses, CounterRng& rng,
                                                             double min_fraction = 0.3, double max_fraction = 0.9) {
  const std::size_t n = responses.size();
  if (n < 2) return std::nullopt;
  const double f = rng.uniform(min_fraction, max_fraction);
  const auto n_in = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(f * static_cast<double>(n))), 1, n - 1);
  return partition_with_count(responses, n_in, rng);
}

namespace train_detail {

inline ResponseList seen_responses(const Dataset& data, const DatasetSplit& split, StudentId s) {
  ResponseList out;
  for (const auto& [id, y] : data.responses_of(s))
    if (split.is_seen(id)) out.emplace_back(&data.item(id), y);
  return out;
}

inline nn::Tensor normal_noise(std::size_t rows, std::size_t cols, CounterRng rng) {
  nn::Tensor t({rows, cols});
  for (auto& x : t.values()) x = rng.normal();
  return t;
}

}  // namespace train_detail

/// Training targets: the queries, plus the inputs themselves when
/// `reconstruct_inputs` is set.
inline StudentExample with_targets(StudentExample ex, bool reconstruct_inputs) {
  if (!reconstruct_inputs) return ex;
  for (const auto& o : ex.inputs) {
    ex.queries.push_back(o.item);
    ex.labels.push_back(o.correct);
  }
  return ex;
}

/// Multiplier on the KL weight during epoch `epoch` (0-based).
inline double kl_scale(const TrainPlan& plan, std::size_t epoch) {
  if (plan.kl_warmup_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(plan.kl_warmup_epochs));
}

/// Mean ELBO over `students` with partitions and noise drawn from fixed
/// streams of `seed`; parameters are not touched.
inline double evaluate_elbo(const LensModel& model, const Dataset& data, const DatasetSplit& split,
                            const ItemFeatures& features, const std::vector<StudentId>& students, std::uint64_t seed,
                            double fmin, double fmax, bool reconstruct_inputs = true, std::size_t batch_size = 64) {
  std::vector<StudentExample> all;
  for (StudentId s : students) {
    auto rng = CounterRng::stream(seed, "train/validation", {static_cast<std::uint64_t>(s)});
    if (auto ex = partition_student_batch(train_detail::seen_responses(data, split, s), rng, fmin, fmax))
      all.push_back(with_targets(std::move(*ex), reconstruct_inputs));
  }
  if (all.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < all.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, all.size() - i);
    std::span<const StudentExample> batch(all.data() + i, n);
    const auto eps = train_detail::normal_noise(n, model.config().dist_dim, CounterRng::stream(seed, "train/validation-noise", {i}));
    nn::Graph g;
    auto f = model.forward(g, features, batch, &eps);
    total += LensModel::loss_terms(f, batch, model.config().kl_weight).value().item() * static_cast<double>(n);
  }
  return total / static_cast<double>(all.size());
}

/// Trains on train-split students and seen items only. The provider is
/// queried for seen items only. `resume` continues from a checkpointed
/// model (optimizer state included) at epoch `start_epoch`.
inline TrainResult train(const TrainPlan& plan, const Dataset& data, const DatasetSplit& split,
                         const EmbeddingProvider& provider, const LensModel* resume = nullptr,
                         std::size_t start_epoch = 0) {
  if (const auto v = plan.violations(); !v.empty()) throw UsageError("invalid train plan: " + v.front());
  std::vector<const Item*> seen_items;
  for (ItemId id : split.seen) seen_items.push_back(&data.item(id));
  if (seen_items.empty()) throw UsageError("train: no seen items");
  const ItemFeatures features(provider, seen_items);

  LensModel model = resume ? *resume : LensModel(plan.model, provider, plan.seed);
  if (resume && resume->provider().dim() != provider.dim()) throw UsageError("train: resumed model has a different item dimension");

  std::vector<std::pair<StudentId, ResponseList>> students;
  for (StudentId s : split.train) students.emplace_back(s, train_detail::seen_responses(data, split, s));
  if (students.empty()) throw UsageError("train: no training students");

  TrainLog log;
  const std::size_t k = plan.model.dist_dim;
  for (std::size_t epoch = start_epoch; epoch < plan.epochs; ++epoch) {
    std::vector<std::size_t> order(students.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto orng = CounterRng::stream(plan.seed, "train/order", {epoch});
    shuffle_in_place(order, orng);

    double epoch_loss = 0.0;
    std::size_t epoch_n = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size, ++batch_index) {
      std::vector<StudentExample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + plan.batch_size); ++i) {
        const auto& [sid, resp] = students[order[i]];
        auto prng = CounterRng::stream(plan.seed, "train/partition", {epoch, static_cast<std::uint64_t>(sid)});
        if (auto ex = partition_student_batch(resp, prng, plan.min_input_fraction, plan.max_input_fraction))
          batch.push_back(with_targets(std::move(*ex), plan.reconstruct_inputs));
        else
          ++log.skipped_students;
      }
      if (batch.empty()) continue;
      const auto eps = train_detail::normal_noise(batch.size(), k, CounterRng::stream(plan.seed, "train/noise", {epoch, batch_index}));
      nn::Graph g;
      nn::Var loss = model.loss(g, features, batch, eps, kl_scale(plan, epoch));
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch + 1 << ", batch " << batch_index << "; parameter norms:";
        for (const auto& p : model.params()) {
          double s = 0.0;
          for (double x : p.value.values()) s += x * x;
          os << ' ' << p.name << '=' << std::sqrt(s);
        }
        throw NumericError(os.str());
      }
      model.params().zero_grad();
      g.backward(loss);
      nn::adam_step(model.params(), plan.model.lr);
      epoch_loss += value * static_cast<double>(batch.size());
      epoch_n += batch.size();
    }
    EpochStats st;
    st.epoch = epoch + 1;
    st.train_elbo = epoch_n ? epoch_loss / static_cast<double>(epoch_n) : 0.0;
    if (plan.track_validation && !split.validation.empty())
      st.validation_elbo = evaluate_elbo(model, data, split, features, split.validation, plan.seed ^ 0x5EEDULL,
                                         plan.min_input_fraction, plan.max_input_fraction, plan.reconstruct_inputs);
    log.epochs.push_back(st);
    if (plan.on_epoch) plan.on_epoch(st);
  }
  return TrainResult{std::move(model), std::move(log)};
}

/// Validation AUC on condition-1-style probes: per validation student, one
/// seen query and up to `n_input` seen inputs of the query's skill. Averaged
/// over `n_reps` probe draws.
inline double validation_auc(const LensModel& model, const Dataset& data, const DatasetSplit& split, std::uint64_t seed,
                             std::size_t n_input = 19, std::size_t n_reps = 20) {
  const ModelScorer scorer(model, data);
  double total = 0.0;
  for (std::size_t rep = 0; rep < n_reps; ++rep) {
    std::vector<Probe> probes;
    for (StudentId s : split.validation) {
      const auto resp = train_detail::seen_responses(data, split, s);
      if (resp.size() < 2) continue;
      auto rng = CounterRng::stream(seed, "grid/probe", {rep, static_cast<std::uint64_t>(s)});
      const auto& [query, label] = resp[rng.below(resp.size())];
      std::vector<std::pair<const Item*, int>> same;
      for (const auto& r : resp)
        if (r.first != query && r.first->skill_id == query->skill_id) same.push_back(r);
      if (same.empty()) continue;
      Probe p;
      p.student_id = s;
      p.query = query;
      p.label = label;
      for (std::size_t k : sample_without_replacement(same.size(), std::min(n_input, same.size()), rng))
        p.inputs.push_back({same[k].first, same[k].second});
      probes.push_back(std::move(p));
    }
    std::vector<int> labels;
    for (const auto& p : probes) labels.push_back(p.label);
    const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                      std::find(labels.begin(), labels.end(), 1) != labels.end();
    total += both ? auc(scorer(probes), labels) : 0.5;
  }
  return n_reps ? total / static_cast<double>(n_reps) : 0.5;
}

struct GridSpec {
  std::vector<double> lr;
  std::vector<std::size_t> dist_dim;
  std::vector<std::size_t> encoder_hidden_dim;
  std::vector<std::size_t> accumulator_hidden_dim;
  std::size_t epochs = 60;  // per grid point; the winner is retrained at full length by the caller

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (lr.empty()) v.push_back("grid.lr must be non-empty");
    if (dist_dim.empty()) v.push_back("grid.dist_dim must be non-empty");
    if (encoder_hidden_dim.empty()) v.push_back("grid.encoder_hidden_dim must be non-empty");
    if (accumulator_hidden_dim.empty()) v.push_back("grid.accumulator_hidden_dim must be non-empty");
    if (epochs < 1) v.push_back("grid.epochs must be >= 1");
    return v;
  }
};

struct GridEntry {
  ModelConfig config;
  double validation_auc = 0.0;
};

struct GridResult {
  ModelConfig best;
  std::vector<GridEntry> leaderboard;  // best first
};

/// Trains one model per grid point and ranks by validation AUC; ties go to
/// the lower lr, then smaller dist_dim, encoder and accumulator widths.
inline GridResult grid_search(const GridSpec& grid, const TrainPlan& base, const Dataset& data, const DatasetSplit& split,
                              const EmbeddingProvider& provider, std::uint64_t seed) {
  if (const auto v = grid.violations(); !v.empty()) throw UsageError("invalid grid: " + v.front());
  if (split.validation.empty()) throw UsageError("grid_search: validation split is empty");
  GridResult out;
  for (double lr : grid.lr)
    for (std::size_t d : grid.dist_dim)
      for (std::size_t e : grid.encoder_hidden_dim)
        for (std::size_t a : grid.accumulator_hidden_dim) {
          TrainPlan plan = base;
          plan.epochs = grid.epochs;
          plan.seed = seed;
          plan.track_validation = false;
          plan.on_epoch = nullptr;
          plan.model.lr = lr, plan.model.dist_dim = d, plan.model.encoder_hidden_dim = e,
          plan.model.accumulator_hidden_dim = a;
          auto res = train(plan, data, split, provider);
          out.leaderboard.push_back({plan.model, validation_auc(res.model, data, split, seed)});
        }
  std::stable_sort(out.leaderboard.begin(), out.leaderboard.end(), [](const GridEntry& x, const GridEntry& y) {
    if (x.validation_auc != y.validation_auc) return x.validation_auc > y.validation_auc;
    return std::tie(x.config.lr, x.config.dist_dim, x.config.encoder_hidden_dim, x.config.accumulator_hidden_dim) <
           std::tie(y.config.lr, y.config.dist_dim, y.config.encoder_hidden_dim, y.config.accumulator_hidden_dim);
  });
  out.best = out.leaderboard.front().config;
  return out;
}

}  // namespace textlens
