#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "textlens/textlens.hpp"

using namespace textlens;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.dist_dim = 4;
  c.encoder_hidden_dim = 6;
  c.accumulator_hidden_dim = 5;
  return c;
}

std::vector<InputObservation> observe(const std::vector<Item>& items, std::initializer_list<std::pair<int, int>> picks) {
  std::vector<InputObservation> out;
  for (auto [i, y] : picks) out.push_back({&items[static_cast<std::size_t>(i)], y});
  return out;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

TEST(Model, ZeroInitialisedLossIsLogTwo) {
  const auto items = generate_item_bank(2, 6, 1);
  const LensModel m(small_config(), provider_for(ModelKind::kTextLens, FeaturizerConfig{32, true}), 1, Init::kZero);
  const auto inputs = observe(items, {{0, 1}, {3, 0}});
  const double loss = elbo_loss(m, inputs, {{&items[5], 1}, {&items[7], 0}}, nn::Tensor({1, 4}));
  EXPECT_NEAR(loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(predict(m, inputs, items[1]), 0.5, 1e-15);
}

TEST(Model, ParameterShapesFollowTheConfig) {
  ModelConfig c = small_config();
  c.item_projection_dim = 3;
  c.decoder_hidden_dim = 7;
  const LensModel m(c, provider_for(ModelKind::kTextLens, FeaturizerConfig{10, true}), 1);
  EXPECT_EQ(m.params().at("project.W").value.shape(), (nn::Shape{10, 3}));
  EXPECT_EQ(m.params().at("encoder.W").value.shape(), (nn::Shape{4, 6}));
  EXPECT_EQ(m.params().at("accumulator.W").value.shape(), (nn::Shape{6, 5}));
  EXPECT_EQ(m.params().at("mu.W").value.shape(), (nn::Shape{5, 4}));
  EXPECT_EQ(m.params().at("decoder.W").value.shape(), (nn::Shape{7, 7}));
  EXPECT_EQ(m.params().at("out.W").value.shape(), (nn::Shape{7, 1}));
}

TEST(Model, InvalidConfigListsTheProblem) {
  ModelConfig c = small_config();
  c.dist_dim = 0;
  c.lr = -1;
  EXPECT_EQ(c.violations().size(), 2u);
  EXPECT_THROW(LensModel(c, provider_for(ModelKind::kTextLens, FeaturizerConfig{}), 1), UsageError);
}

TEST(Model, EncodeShapesAndLogvarClamp) {
  const auto items = generate_item_bank(2, 6, 1);
  LensModel m(small_config(), provider_for(ModelKind::kLens, Vocabulary::over(items)), 3);
  for (auto& p : m.params())
    if (p.name == "logvar.b") p.value.fill(50.0);
  const auto st = encode(m, observe(items, {{1, 1}, {2, 0}, {4, 1}}));
  EXPECT_EQ(st.mu.size(), 4u);
  EXPECT_EQ(st.logvar.size(), 4u);
  for (double v : st.logvar.values()) EXPECT_EQ(v, kLogvarMax);
}

TEST(Model, EmptyInputSetIsAllowed) {
  const auto items = generate_item_bank(2, 6, 1);
  const LensModel m(small_config(), provider_for(ModelKind::kTextLens, FeaturizerConfig{}), 3);
  const double p = predict(m, {}, items[0]);
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
}

TEST(Model, PredictEqualsDecodeOfPosteriorMean) {
  const auto items = generate_item_bank(2, 6, 1);
  const LensModel m(small_config(), provider_for(ModelKind::kTextLens, FeaturizerConfig{}), 3);
  const auto inputs = observe(items, {{1, 1}, {2, 0}, {8, 1}});
  EXPECT_NEAR(predict(m, inputs, items[4]), decode(m, encode(m, inputs).mu, items[4]), 1e-14);
}

TEST(Model, DecodeRejectsBadLatents) {
  const auto items = generate_item_bank(1, 3, 1);
  const LensModel m(small_config(), provider_for(ModelKind::kTextLens, FeaturizerConfig{}), 3);
  EXPECT_THROW(decode(m, nn::Tensor({1, 3}), items[0]), DimensionError);
  nn::Tensor z({1, 4});
  z[2] = std::nan("");
  EXPECT_THROW(decode(m, z, items[0]), UsageError);
}

TEST(Model, UnknownItemIsALookupError) {
  const auto items = generate_item_bank(1, 6, 1);
  const std::vector<Item> first(items.begin(), items.begin() + 3);
  const LensModel m(small_config(), provider_for(ModelKind::kLens, Vocabulary::over(first)), 3);
  EXPECT_THROW(predict(m, {}, items[5]), LookupError);
}

TEST(Model, PermutationInvarianceIsBitExact) {
  const auto items = generate_item_bank(3, 20, 2);
  std::mt19937_64 gen(8);
  for (ModelKind kind : {ModelKind::kLens, ModelKind::kTextLens}) {
    const LensModel m(published_config("llm-sim", kind),
                      kind == ModelKind::kLens ? provider_for(kind, Vocabulary::over(items))
                                               : provider_for(kind, FeaturizerConfig{}),
                      5);
    for (int t = 0; t < 50; ++t) {
      std::vector<InputObservation> in;
      for (int k = 0; k < 19; ++k) in.push_back({&items[gen() % items.size()], static_cast<int>(gen() % 2)});
      auto perm = in;
      std::shuffle(perm.begin(), perm.end(), gen);
      const Item& q = items[gen() % items.size()];
      EXPECT_TRUE(same_bits(predict(m, in, q), predict(m, perm, q)));
      EXPECT_EQ(encode(m, in).mu.data(), encode(m, perm).mu.data());
    }
  }
}

TEST(Model, CheckpointRoundTripPreservesPredictions) {
  const auto items = generate_item_bank(2, 9, 1);
  const auto dir = fs::temp_directory_path() / ("textlens-ckpt-" + std::to_string(::getpid()));
  for (ModelKind kind : {ModelKind::kLens, ModelKind::kTextLens}) {
    ModelConfig c = small_config();
    c.eval_samples = 3;
    LensModel m(c,
                kind == ModelKind::kLens ? provider_for(kind, Vocabulary::over(items))
                                         : provider_for(kind, FeaturizerConfig{16, false}),
                11);
    save_checkpoint(dir / "m.json", m, {7, "abc"});
    const auto loaded = load_checkpoint(dir / "m.json");
    EXPECT_EQ(loaded.meta.epochs_completed, 7u);
    EXPECT_EQ(loaded.meta.config_hash, "abc");
    EXPECT_EQ(loaded.model.config(), c);
    EXPECT_EQ(loaded.model.kind(), kind);
    const auto inputs = observe(items, {{0, 1}, {5, 0}, {11, 1}});
    for (const auto& q : items) EXPECT_TRUE(same_bits(predict(m, inputs, q), predict(loaded.model, inputs, q)));
  }
  fs::remove_all(dir);
}

TEST(Model, CheckpointWithFileVectorsEmbedsTheTable) {
  const auto items = generate_item_bank(1, 4, 1);
  EmbeddingTable t;
  for (const auto& it : items) t.add(it.item_id, {0.1 * static_cast<double>(it.item_id), 1.0, -0.5});
  const LensModel m(small_config(), provider_for(ModelKind::kTextLens, t), 2);
  const auto p = fs::temp_directory_path() / ("textlens-ckpt-t-" + std::to_string(::getpid()) + ".json");
  save_checkpoint(p, m);
  const auto loaded = load_checkpoint(p);
  fs::remove(p);
  EXPECT_EQ(loaded.model.provider().table(), t);
  EXPECT_TRUE(same_bits(predict(m, {}, items[2]), predict(loaded.model, {}, items[2])));
}

TEST(Model, CorruptCheckpointsAreRejected) {
  const auto p = fs::temp_directory_path() / ("textlens-ckpt-bad-" + std::to_string(::getpid()) + ".json");
  std::ofstream(p) << "{not json";
  EXPECT_THROW(load_checkpoint(p), ParseError);
  std::ofstream(p) << R"({"format":"textlens-checkpoint","version":99})";
  EXPECT_THROW(load_checkpoint(p), DataError);
  fs::remove(p);
  EXPECT_THROW(load_checkpoint(p), IoError);
}

TEST(Model, PublishedSettings) {
  const auto e = published_config("eedi", ModelKind::kLens);
  EXPECT_EQ(e.dist_dim, 16u);
  EXPECT_EQ(e.encoder_hidden_dim, 30u);
  EXPECT_EQ(e.accumulator_hidden_dim, 8u);
  const auto l = published_config("llm-sim", ModelKind::kLens);
  EXPECT_EQ(l.lr, 0.001);
  EXPECT_EQ(l.encoder_hidden_dim, 90u);
  const auto t = published_config("llm-sim", ModelKind::kTextLens);
  EXPECT_EQ(t.lr, 0.005);
  EXPECT_EQ(t.dist_dim, 64u);
  EXPECT_EQ(t.encoder_hidden_dim, 30u);
  EXPECT_EQ(t.accumulator_hidden_dim, 24u);
  EXPECT_THROW(published_config("other", ModelKind::kLens), UsageError);
}

// Behaviour of a briefly trained model against simulator ground truth.
class TrainedTextLens : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto items = generate_item_bank(5, 40, 1);
    auto students = sample_students(2000, 5, 1);
    auto responses = simulate_responses(students, items, {}, 1);
    data_ = new Dataset(5, std::move(items), std::move(responses), std::move(students));
    split_ = new DatasetSplit(split_dataset(*data_, 1));
    TrainPlan plan;
    plan.epochs = 20;
    plan.seed = 2;
    plan.model = published_config("llm-sim", ModelKind::kTextLens);
    plan.track_validation = false;
    model_ = new LensModel(train(plan, *data_, *split_, provider_for(ModelKind::kTextLens, FeaturizerConfig{})).model);
  }
  static void TearDownTestSuite() {
    delete model_;
    delete split_;
    delete data_;
  }
  static Dataset* data_;
  static DatasetSplit* split_;
  static LensModel* model_;
};
Dataset* TrainedTextLens::data_ = nullptr;
DatasetSplit* TrainedTextLens::split_ = nullptr;
LensModel* TrainedTextLens::model_ = nullptr;

TEST_F(TrainedTextLens, TopDecileStudentsGetHigherPredictions) {
  // fresh students answer the same bank; 19 seen on-target inputs, medium seen query
  const auto fresh = sample_students(3000, 5, 77);
  const auto resp = simulate_responses(fresh, data_->items(), {}, 77);
  const Dataset d(5, data_->items(), resp, fresh);
  const int skill = 0;
  std::vector<const Item*> seen_target;
  const Item* query = nullptr;
  for (ItemId id : split_->seen) {
    const Item& it = d.item(id);
    if (it.skill_id != skill) continue;
    if (!query && it.difficulty == Difficulty::kMedium) query = &it;
    else seen_target.push_back(&it);
  }
  ASSERT_NE(query, nullptr);
  ASSERT_GE(seen_target.size(), 19u);
  std::vector<std::pair<double, double>> theta_p;
  for (const auto& s : fresh) {
    std::vector<InputObservation> in;
    for (std::size_t k = 0; k < 19; ++k) in.push_back({seen_target[k], *d.response(s.student_id, seen_target[k]->item_id)});
    theta_p.emplace_back(s.theta[skill], predict(*model_, in, *query));
  }
  std::sort(theta_p.begin(), theta_p.end());
  const std::size_t n = theta_p.size() / 10;
  double lo = 0, hi = 0;
  for (std::size_t i = 0; i < n; ++i) lo += theta_p[i].second, hi += theta_p[theta_p.size() - 1 - i].second;
  EXPECT_GT(hi / n, lo / n + 0.1);
}

TEST_F(TrainedTextLens, MoreInputsNeverHurtOnAverage) {
  const auto fresh = sample_students(600, 5, 78);
  const auto resp = simulate_responses(fresh, data_->items(), {}, 78);
  const Dataset d(5, data_->items(), resp, fresh);
  double loss0 = 0, loss19 = 0;
  std::size_t n = 0;
  for (const auto& s : fresh) {
    auto rng = CounterRng::stream(5, "test/monotone", {static_cast<std::uint64_t>(s.student_id)});
    const int skill = static_cast<int>(rng.below(5));
    std::vector<const Item*> pool;
    for (ItemId id : split_->seen)
      if (d.item(id).skill_id == skill) pool.push_back(&d.item(id));
    const auto pick = sample_without_replacement(pool.size(), 20, rng);
    const Item& q = *pool[pick[0]];
    const int y = *d.response(s.student_id, q.item_id);
    std::vector<InputObservation> in;
    for (std::size_t k = 1; k < 20; ++k) in.push_back({pool[pick[k]], *d.response(s.student_id, pool[pick[k]]->item_id)});
    auto ll = [&](double p) { return -(y ? std::log(p) : std::log1p(-p)); };
    loss0 += ll(predict(*model_, {}, q));
    loss19 += ll(predict(*model_, in, q));
    ++n;
  }
  EXPECT_GE(n, 500u);
  EXPECT_LE(loss19 / n, loss0 / n);
}
