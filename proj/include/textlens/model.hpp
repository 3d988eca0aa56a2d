#pragma once

// Partial VAE over answered items.
//
//   e   = project(embed(item))                       item projection layer
//   h_i = relu(encoder([e_i | correct_i]))           per answered item
//   g   = relu(accumulator(sum_i h_i))               permutation-invariant pool
//   mu, logvar = heads(g)                            logvar clamped to [-10, 10]
//   p   = sigmoid(out(relu(decoder([z | e_query]))))  clamped to [1e-7, 1 - 1e-7]
//
// Inputs of a student are pooled in ascending item-id order, so encode and
// predict are bit-identical under any presentation order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "textlens/data/types.hpp"
#include "textlens/embeddings.hpp"
#include "textlens/errors.hpp"
#include "textlens/nn/adam.hpp"
#include "textlens/nn/autograd.hpp"
#include "textlens/rng.hpp"

namespace textlens {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

struct ModelConfig {
  double lr = 0.005;
  std::size_t dist_dim = 64;
  std::size_t encoder_hidden_dim = 30;
  std::size_t accumulator_hidden_dim = 24;
  std::size_t item_projection_dim = 0;  // 0: same as dist_dim
  std::size_t decoder_hidden_dim = 0;   // 0: same as encoder_hidden_dim
  double kl_weight = 0.1;
  std::size_t eval_samples = 0;  // 0: decode the posterior mean

  std::size_t projection_dim() const { return item_projection_dim ? item_projection_dim : dist_dim; }
  std::size_t decoder_dim() const { return decoder_hidden_dim ? decoder_hidden_dim : encoder_hidden_dim; }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(lr > 0.0) || !std::isfinite(lr)) v.push_back("lr must be positive");
    if (dist_dim < 1) v.push_back("dist_dim must be >= 1");
    if (encoder_hidden_dim < 1) v.push_back("encoder_hidden_dim must be >= 1");
    if (accumulator_hidden_dim < 1) v.push_back("accumulator_hidden_dim must be >= 1");
    if (!(kl_weight >= 0.0)) v.push_back("kl_weight must be >= 0");
    return v;
  }
  void validate() const {
    const auto v = violations();
    if (!v.empty()) throw UsageError("invalid model config: " + v.front());
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Published per-dataset settings. dataset is "eedi" or "llm-sim".
inline ModelConfig published_config(std::string_view dataset, ModelKind kind) {
  ModelConfig c;
  if (dataset == "eedi") {
    c.lr = 0.001, c.dist_dim = 16, c.encoder_hidden_dim = 30, c.accumulator_hidden_dim = 8;
  } else if (dataset == "llm-sim") {
    if (kind == ModelKind::kLens)
      c.lr = 0.001, c.dist_dim = 64, c.encoder_hidden_dim = 90, c.accumulator_hidden_dim = 24;
    else
      c.lr = 0.005, c.dist_dim = 64, c.encoder_hidden_dim = 30, c.accumulator_hidden_dim = 24;
  } else {
    throw UsageError("no published config for dataset '" + std::string(dataset) + "'");
  }
  return c;
}

struct InputObservation {
  const Item* item = nullptr;
  int correct = 0;
};

struct LatentState {
  nn::Tensor mu;
  nn::Tensor logvar;
  std::vector<nn::Tensor> samples;  // filled only when noise is supplied
  std::vector<nn::Tensor> noise;
};

/// One student's contribution to a batch: answered inputs plus query items
/// (labels are needed only for the loss).
struct StudentExample {
  std::vector<InputObservation> inputs;
  std::vector<const Item*> queries;
  std::vector<int> labels;
};

/// Embedding rows of a fixed set of items.
class ItemFeatures {
 public:
  ItemFeatures() = default;
  ItemFeatures(const EmbeddingProvider& provider, std::span<const Item* const> items) : dim_(provider.dim()) {
    std::vector<const Item*> sorted(items.begin(), items.end());
    std::sort(sorted.begin(), sorted.end(), [](const Item* a, const Item* b) { return a->item_id < b->item_id; });
    sorted.erase(std::unique(sorted.begin(), sorted.end(),
                             [](const Item* a, const Item* b) { return a->item_id == b->item_id; }),
                 sorted.end());
    matrix_ = nn::Tensor({sorted.size(), dim_});
    for (std::size_t r = 0; r < sorted.size(); ++r) {
      const auto v = provider.embed(*sorted[r]);
      if (v.size() != dim_) throw DimensionError("provider returned a vector of the wrong length");
      std::copy(v.begin(), v.end(), matrix_.row_span(r).begin());
      row_.emplace(sorted[r]->item_id, r);
    }
  }
  ItemFeatures(const EmbeddingProvider& provider, const std::vector<Item>& items)
      : ItemFeatures(provider, pointers(items)) {}

  std::size_t row(ItemId id) const {
    auto it = row_.find(id);
    if (it == row_.end()) throw LookupError("no features prepared for item_id " + std::to_string(id));
    return it->second;
  }
  bool contains(ItemId id) const { return row_.count(id) != 0; }
  const nn::Tensor& matrix() const noexcept { return matrix_; }
  std::size_t dim() const noexcept { return dim_; }

  static std::vector<const Item*> pointers(const std::vector<Item>& items) {
    std::vector<const Item*> p;
    for (const auto& it : items) p.push_back(&it);
    return p;
  }

 private:
  std::size_t dim_ = 0;
  nn::Tensor matrix_;
  std::unordered_map<ItemId, std::size_t> row_;
};

enum class Init { kRandom, kZero };

class LensModel {
 public:
  LensModel(ModelConfig config, EmbeddingProvider provider, std::uint64_t init_seed, Init init = Init::kRandom)
      : config_(config), provider_(std::move(provider)), init_seed_(init_seed) {
    config_.validate();
    const std::size_t D = provider_.dim(), P = config_.projection_dim(), H = config_.encoder_hidden_dim,
                      A = config_.accumulator_hidden_dim, K = config_.dist_dim, Hd = config_.decoder_dim();
    auto rng = CounterRng::stream(init_seed, "model/init");
    auto layer = [&](const std::string& name, std::size_t in, std::size_t out) {
      nn::Tensor W({in, out});
      if (init == Init::kRandom) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& w : W.values()) w = rng.uniform(-bound, bound);
      }
      params_.add(name + ".W", std::move(W));
      params_.add(name + ".b", nn::Tensor({1, out}));
    };
    layer("project", D, P);
    layer("encoder", P + 1, H);
    layer("accumulator", H, A);
    layer("mu", A, K);
    layer("logvar", A, K);
    layer("decoder", K + P, Hd);
    layer("out", Hd, 1);
  }

  const ModelConfig& config() const noexcept { return config_; }
  const EmbeddingProvider& provider() const noexcept { return provider_; }
  EmbeddingProvider& provider() noexcept { return provider_; }
  ModelKind kind() const noexcept {
    return provider_.mode() == EmbeddingMode::kIdOneHot ? ModelKind::kLens : ModelKind::kTextLens;
  }
  std::uint64_t init_seed() const noexcept { return init_seed_; }
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }

  struct Forward {
    nn::Var mu, logvar, latent, probs;
    std::vector<std::size_t> query_owner;
  };

  /// Builds the batch graph. With `noise` ([batch, dist_dim]) the latent is a
  /// reparameterized sample; without it, the posterior mean. `trainable`
  /// binds parameters so backward() reaches them; otherwise they enter as
  /// constants.
  Forward forward(nn::Graph& g, const ItemFeatures& features, std::span<const StudentExample> batch,
                  const nn::Tensor* noise, bool trainable) {
    std::vector<nn::Var> v;
    for (auto& p : params_) v.push_back(trainable ? g.param(p) : g.constant(p.value));
    return build(g, v, features, batch, noise);
  }
  Forward forward(nn::Graph& g, const ItemFeatures& features, std::span<const StudentExample> batch,
                  const nn::Tensor* noise) const {
    std::vector<nn::Var> v;
    for (const auto& p : params_) v.push_back(g.constant(p.value));
    return build(g, v, features, batch, noise);
  }

  /// Mean over students of (sum of query NLLs + kl_weight * KL) / n_queries,
  /// i.e. the negative ELBO per query. Returns the loss node; call backward on
  /// it to fill parameter gradients.
  nn::Var loss(nn::Graph& g, const ItemFeatures& features, std::span<const StudentExample> batch,
               const nn::Tensor& noise, double kl_scale = 1.0) {
    if (batch.empty()) throw UsageError("elbo: empty batch");
    Forward f = forward(g, features, batch, &noise, true);
    return loss_terms(f, batch, config_.kl_weight * kl_scale);
  }

  static nn::Var loss_terms(const Forward& f, std::span<const StudentExample> batch, double kl_weight) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<int> labels;
    std::vector<double> weights, kl_weights;
    for (const auto& ex : batch) {
      if (ex.queries.empty()) throw UsageError("elbo: a student has no query items");
      if (ex.labels.size() != ex.queries.size()) throw UsageError("elbo: labels do not match queries");
      const double per_query = inv_b / static_cast<double>(ex.queries.size());
      for (int y : ex.labels) {
        labels.push_back(y);
        weights.push_back(per_query);
      }
      kl_weights.push_back(per_query * kl_weight);
    }
    nn::Var nll = nn::bernoulli_nll(f.probs, std::move(labels), std::move(weights));
    nn::Var kl = nn::gaussian_kl(f.mu, f.logvar, std::move(kl_weights));
    return nn::add(nll, kl);
  }

  /// Evaluation-time probability of a correct answer on each query of each
  /// student, flattened in batch order.
  std::vector<double> predict_batch(const ItemFeatures& features, std::span<const StudentExample> batch) const {
    if (batch.empty()) return {};
    if (config_.eval_samples == 0) {
      nn::Graph g;
      Forward f = forward(g, features, batch, nullptr);
      const auto vals = f.probs.value().values();
      return {vals.begin(), vals.end()};
    }
    std::vector<double> acc;
    for (std::size_t k = 0; k < config_.eval_samples; ++k) {
      nn::Tensor eps({batch.size(), config_.dist_dim});
      for (std::size_t s = 0; s < batch.size(); ++s) {
        auto rng = CounterRng::stream(init_seed_, "predict/samples", {k, s});
        for (auto& e : eps.row_span(s)) e = rng.normal();
      }
      nn::Graph g;
      Forward f = forward(g, features, batch, &eps);
      const auto vals = f.probs.value().values();
      if (acc.empty()) acc.assign(vals.size(), 0.0);
      for (std::size_t i = 0; i < vals.size(); ++i) acc[i] += vals[i];
    }
    for (double& a : acc) a /= static_cast<double>(config_.eval_samples);
    return acc;
  }

 private:
  Forward build(nn::Graph& g, const std::vector<nn::Var>& v, const ItemFeatures& features,
                std::span<const StudentExample> batch, const nn::Tensor* noise) const {
    enum { kPW, kPB, kEW, kEB, kAW, kAB, kMW, kMB, kLW, kLB, kDW, kDB, kOW, kOB };
    if (features.dim() != provider_.dim())
      throw DimensionError("item features have dimension " + std::to_string(features.dim()) + ", model expects " +
                           std::to_string(provider_.dim()));
    nn::Var proj = nn::affine(g.constant(features.matrix()), v[kPW], v[kPB]);

    std::vector<std::size_t> in_rows, offsets{0}, q_rows, owner;
    std::vector<double> correct;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      std::vector<std::pair<ItemId, int>> inputs;
      for (const auto& o : batch[s].inputs) inputs.emplace_back(o.item->item_id, o.correct);
      std::sort(inputs.begin(), inputs.end());
      for (const auto& [id, c] : inputs) {
        in_rows.push_back(features.row(id));
        correct.push_back(static_cast<double>(c));
      }
      offsets.push_back(in_rows.size());
      for (const Item* q : batch[s].queries) {
        q_rows.push_back(features.row(q->item_id));
        owner.push_back(s);
      }
    }
    const std::size_t n_in = in_rows.size();
    nn::Var enc_in = nn::concat(nn::gather_rows(proj, std::move(in_rows)),
                                g.constant(nn::Tensor({n_in, 1}, std::move(correct))));
    nn::Var h = nn::relu(nn::affine(enc_in, v[kEW], v[kEB]));
    nn::Var pooled = nn::segment_sum(h, std::move(offsets));
    nn::Var acc = nn::relu(nn::affine(pooled, v[kAW], v[kAB]));
    nn::Var mu = nn::affine(acc, v[kMW], v[kMB]);
    nn::Var logvar = nn::clamp(nn::affine(acc, v[kLW], v[kLB]), kLogvarMin, kLogvarMax);
    nn::Var z = noise ? nn::reparam_sample(mu, logvar, *noise) : mu;
    nn::Var dec_in = nn::concat(nn::gather_rows(z, owner), nn::gather_rows(proj, std::move(q_rows)));
    nn::Var d = nn::relu(nn::affine(dec_in, v[kDW], v[kDB]));
    nn::Var p = nn::clamp(nn::sigmoid(nn::affine(d, v[kOW], v[kOB])), nn::kProbEpsilon, 1.0 - nn::kProbEpsilon);
    return Forward{mu, logvar, z, p, std::move(owner)};
  }

  ModelConfig config_;
  EmbeddingProvider provider_;
  std::uint64_t init_seed_;
  nn::ParamSet params_;
};

namespace model_detail {
inline ItemFeatures features_for(const LensModel& m, const std::vector<InputObservation>& inputs,
                                 std::initializer_list<const Item*> extra = {}) {
  std::vector<const Item*> items;
  for (const auto& o : inputs) items.push_back(o.item);
  items.insert(items.end(), extra.begin(), extra.end());
  return ItemFeatures(m.provider(), items);
}
}  // namespace model_detail

/// Posterior of one student given answered items (possibly none).
inline LatentState encode(const LensModel& model, const std::vector<InputObservation>& inputs) {
  const ItemFeatures feats = model_detail::features_for(model, inputs);
  nn::Graph g;
  StudentExample ex{inputs, {}, {}};
  auto f = model.forward(g, feats, std::span<const StudentExample>(&ex, 1), nullptr);
  return LatentState{f.mu.value(), f.logvar.value(), {}, {}};
}

/// Probability of a correct answer on `query` for latent point z ([1, dist_dim]).
inline double decode(const LensModel& model, const nn::Tensor& z, const Item& query) {
  const auto& c = model.config();
  if (z.size() != c.dist_dim) throw DimensionError("decode: latent has " + std::to_string(z.size()) + " values");
  if (!z.all_finite()) throw UsageError("decode: latent is not finite");
  const auto& P = model.params();
  nn::Graph g;
  const nn::Tensor emb({1, model.provider().dim()}, model.provider().embed(query));
  nn::Var e = nn::affine(g.constant(emb), g.constant(P.at("project.W").value), g.constant(P.at("project.b").value));
  nn::Var zin = g.constant(nn::Tensor({1, c.dist_dim}, z.data()));
  nn::Var d = nn::relu(nn::affine(nn::concat(zin, e), g.constant(P.at("decoder.W").value), g.constant(P.at("decoder.b").value)));
  nn::Var p = nn::sigmoid(nn::affine(d, g.constant(P.at("out.W").value), g.constant(P.at("out.b").value)));
  return std::clamp(p.value().item(), nn::kProbEpsilon, 1.0 - nn::kProbEpsilon);
}

/// Deterministic prediction: decode at the posterior mean (or the configured
/// sample average).
inline double predict(const LensModel& model, const std::vector<InputObservation>& inputs, const Item& query) {
  const ItemFeatures feats = model_detail::features_for(model, inputs, {&query});
  StudentExample ex{inputs, {&query}, {}};
  return model.predict_batch(feats, std::span<const StudentExample>(&ex, 1)).front();
}

/// ELBO of one student for the given noise ([1, dist_dim]); value only.
inline double elbo_loss(const LensModel& model, const std::vector<InputObservation>& inputs,
                        const std::vector<std::pair<const Item*, int>>& queries, const nn::Tensor& noise) {
  if (queries.empty()) throw UsageError("elbo_loss: at least one query is required");
  StudentExample ex{inputs, {}, {}};
  std::vector<const Item*> extra;
  for (const auto& [q, y] : queries) {
    ex.queries.push_back(q);
    ex.labels.push_back(y);
  }
  std::vector<const Item*> items;
  for (const auto& o : inputs) items.push_back(o.item);
  items.insert(items.end(), ex.queries.begin(), ex.queries.end());
  const ItemFeatures feats(model.provider(), items);
  nn::Graph g;
  auto f = model.forward(g, feats, std::span<const StudentExample>(&ex, 1), &noise);
  return LensModel::loss_terms(f, std::span<const StudentExample>(&ex, 1), model.config().kl_weight).value().item();
}

// ---------------------------------------------------------------------------
// Checkpoints: a JSON document holding the config, the item representation
// (including the id vocabulary or the full embedding table), all parameter
// tensors and the optimizer state.

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t epochs_completed = 0;
  std::string config_hash;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"lr", c.lr},
          {"dist_dim", c.dist_dim},
          {"encoder_hidden_dim", c.encoder_hidden_dim},
          {"accumulator_hidden_dim", c.accumulator_hidden_dim},
          {"item_projection_dim", c.item_projection_dim},
          {"decoder_hidden_dim", c.decoder_hidden_dim},
          {"kl_weight", c.kl_weight},
          {"eval_samples", c.eval_samples}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.lr = j.at("lr").get<double>();
  c.dist_dim = j.at("dist_dim").get<std::size_t>();
  c.encoder_hidden_dim = j.at("encoder_hidden_dim").get<std::size_t>();
  c.accumulator_hidden_dim = j.at("accumulator_hidden_dim").get<std::size_t>();
  c.item_projection_dim = j.value("item_projection_dim", std::size_t{0});
  c.decoder_hidden_dim = j.value("decoder_hidden_dim", std::size_t{0});
  c.kl_weight = j.value("kl_weight", 0.1);
  c.eval_samples = j.value("eval_samples", std::size_t{0});
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const LensModel& model, const CheckpointMeta& meta = {}) {
  nlohmann::ordered_json j;
  j["format"] = "textlens-checkpoint";
  j["version"] = kCheckpointVersion;
  j["model_kind"] = std::string(to_string(model.kind()));
  j["config"] = to_json(model.config());
  j["init_seed"] = model.init_seed();
  j["epochs_completed"] = meta.epochs_completed;
  j["config_hash"] = meta.config_hash;
  const auto& prov = model.provider();
  nlohmann::ordered_json pj;
  pj["mode"] = std::string(to_string(prov.mode()));
  pj["dim"] = prov.dim();
  if (prov.mode() == EmbeddingMode::kIdOneHot) pj["vocab"] = prov.vocabulary().ids;
  if (prov.mode() == EmbeddingMode::kTextFeatures) pj["bigrams"] = prov.featurizer().bigrams;
  if (prov.mode() == EmbeddingMode::kFileVectors) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& [id, v] : prov.table().rows()) rows.push_back({{"item_id", id}, {"vector", v}});
    pj["table"] = rows;
  }
  j["provider"] = pj;
  j["optimizer_step"] = model.params().step_count();
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& p : model.params())
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"values", p.value.data()}, {"m", p.m.data()}, {"v", p.v.data()}});
  j["params"] = params;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

struct LoadedCheckpoint {
  LensModel model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string(), 1, std::string("checkpoint is not JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "textlens-checkpoint") throw DataError(path.string() + ": not a textlens checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw DataError(path.string() + ": unsupported checkpoint version " + j.at("version").dump());
    const auto cfg = model_config_from_json(j.at("config"));
    const auto& pj = j.at("provider");
    const auto mode = parse_embedding_mode(pj.at("mode").get<std::string>());
    std::optional<EmbeddingProvider> prov;
    if (mode == EmbeddingMode::kIdOneHot) {
      prov = EmbeddingProvider::id_one_hot(Vocabulary{pj.at("vocab").get<std::vector<ItemId>>()});
    } else if (mode == EmbeddingMode::kTextFeatures) {
      prov = EmbeddingProvider::text_features({pj.at("dim").get<std::size_t>(), pj.at("bigrams").get<bool>()});
    } else {
      EmbeddingTable t;
      for (const auto& r : pj.at("table")) t.add(r.at("item_id").get<ItemId>(), r.at("vector").get<std::vector<double>>());
      prov = EmbeddingProvider::file_vectors(std::move(t));
    }
    LensModel model(cfg, std::move(*prov), j.at("init_seed").get<std::uint64_t>(), Init::kZero);
    const auto& params = j.at("params");
    if (params.size() != model.params().size()) throw DataError(path.string() + ": parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = model.params()[i];
      const auto& pj2 = params[i];
      if (pj2.at("name").get<std::string>() != p.name || pj2.at("shape").get<nn::Shape>() != p.value.shape())
        throw DataError(path.string() + ": parameter '" + p.name + "' does not match the architecture");
      p.value = nn::Tensor(p.value.shape(), pj2.at("values").get<std::vector<double>>());
      p.m = nn::Tensor(p.value.shape(), pj2.at("m").get<std::vector<double>>());
      p.v = nn::Tensor(p.value.shape(), pj2.at("v").get<std::vector<double>>());
    }
    model.params().set_step_count(j.at("optimizer_step").get<std::uint64_t>());
    CheckpointMeta meta{j.at("epochs_completed").get<std::uint64_t>(), j.at("config_hash").get<std::string>()};
    return LoadedCheckpoint{std::move(model), std::move(meta)};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint: " + e.what());
  }
}

}  // namespace textlens
