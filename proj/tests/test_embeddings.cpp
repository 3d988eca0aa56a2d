#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "textlens/textlens.hpp"

using namespace textlens;
namespace fs = std::filesystem;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("textlens-emb-" + std::to_string(::getpid()) + "-" + name);
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsOnNonAlphanumerics) {
  EXPECT_EQ(tokenize("Find the AREA, of 12-sided shapes!"),
            (std::vector<std::string>{"find", "the", "area", "of", "12", "sided", "shapes"}));
  EXPECT_TRUE(tokenize("  ,;  ").empty());
}

TEST(TextFeatures, UnitNormAndDeterministic) {
  const auto v = embed_text("compute the area of the rectangle");
  EXPECT_EQ(v.size(), FeaturizerConfig{}.dim);
  EXPECT_NEAR(dot(v, v), 1.0, 1e-12);
  EXPECT_EQ(v, embed_text("compute the area of the rectangle"));
  EXPECT_EQ(v, embed_text("Compute the AREA of the rectangle."));
}

TEST(TextFeatures, BigramsDistinguishWordOrder) {
  const FeaturizerConfig uni{64, false}, bi{64, true};
  EXPECT_EQ(embed_text("alpha beta gamma", uni), embed_text("gamma beta alpha", uni));
  EXPECT_NE(embed_text("alpha beta gamma", bi), embed_text("gamma beta alpha", bi));
}

TEST(TextFeatures, RejectsEmptyInputAndZeroDim) {
  EXPECT_THROW(embed_text("..."), UsageError);
  EXPECT_THROW(embed_text("word", FeaturizerConfig{0, true}), UsageError);
  Item it;
  EXPECT_THROW(embed_text(it), UsageError);
}

TEST(TextFeatures, SameSkillItemsAreCloserThanCrossSkill) {
  const auto items = generate_item_bank(5, 40, 3);
  double same = 0, cross = 0;
  int ns = 0, nc = 0;
  std::vector<std::vector<double>> e;
  for (const auto& it : items) e.push_back(embed_text(it));
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      const double c = dot(e[i], e[j]);
      if (items[i].skill_id == items[j].skill_id) same += c, ++ns;
      else cross += c, ++nc;
    }
  EXPECT_GT(same / ns - cross / nc, 0.05);
}

TEST(IdFeatures, OneHotRowsAreOrthonormal) {
  const auto items = generate_item_bank(2, 6, 1);
  const auto prov = provider_for(ModelKind::kLens, Vocabulary::over(items));
  EXPECT_EQ(prov.dim(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = 0; j < items.size(); ++j)
      EXPECT_EQ(dot(prov.embed(items[i]), prov.embed(items[j])), i == j ? 1.0 : 0.0);
}

TEST(IdFeatures, UnknownIdIsALookupError) {
  const auto items = generate_item_bank(1, 3, 1);
  const auto prov = provider_for(ModelKind::kLens, Vocabulary::over(items));
  Item other = items[0];
  other.item_id = 999;
  EXPECT_THROW(prov.embed(other), LookupError);
  std::vector<Item> more = items;
  more.push_back(other);
  EXPECT_THROW(provider_for(ModelKind::kLens, Vocabulary::over(items), &more), LookupError);
}

TEST(Provider, KindAndSourceMustAgree) {
  const auto items = generate_item_bank(1, 3, 1);
  EXPECT_THROW(provider_for(ModelKind::kTextLens, Vocabulary::over(items)), UsageError);
  EXPECT_THROW(provider_for(ModelKind::kLens, FeaturizerConfig{}), UsageError);
  EXPECT_THROW(provider_for(ModelKind::kLens, Vocabulary{}), UsageError);
}

TEST(Provider, ObserverSeesEveryLookup) {
  const auto items = generate_item_bank(1, 4, 1);
  auto prov = provider_for(ModelKind::kTextLens, FeaturizerConfig{});
  std::vector<ItemId> seen;
  prov.set_observer([&](ItemId id) { seen.push_back(id); });
  prov.embed(items[2]);
  prov.embed(items[0]);
  EXPECT_EQ(seen, (std::vector<ItemId>{2, 0}));
}

TEST(EmbeddingTable, SaveLoadRoundTrip) {
  EmbeddingTable t;
  t.add(3, {0.25, -1.0, 1e-9});
  t.add(1, {2.0, 0.0, 3.5});
  const auto p = temp_file("rt.tsv");
  t.save(p);
  const auto u = EmbeddingTable::load(p);
  fs::remove(p);
  EXPECT_EQ(u.dim(), 3u);
  EXPECT_EQ(u.rows(), t.rows());
  const auto prov = provider_for(ModelKind::kTextLens, u);
  Item it;
  it.item_id = 3;
  EXPECT_EQ(prov.embed(it), (std::vector<double>{0.25, -1.0, 1e-9}));
  it.item_id = 4;
  EXPECT_THROW(prov.embed(it), LookupError);
}

TEST(EmbeddingTable, MalformedFilesAreRejected) {
  const std::pair<const char*, const char*> cases[] = {
      {"ragged", "1\t0.5\t0.5\n2\t0.5\n"},
      {"dup", "1\t0.5\n1\t0.25\n"},
      {"nan", "1\tnan\n"},
      {"word", "1\tabc\n"},
      {"empty", ""},
  };
  for (const auto& [name, body] : cases) {
    const auto p = temp_file(name);
    std::ofstream(p) << body;
    EXPECT_THROW(EmbeddingTable::load(p), ParseError) << name;
    fs::remove(p);
  }
  EXPECT_THROW(EmbeddingTable::load(temp_file("missing")), IoError);
}

TEST(EmbeddingTable, AddValidatesRows) {
  EmbeddingTable t;
  t.add(1, {1.0, 2.0});
  EXPECT_THROW(t.add(2, {1.0}), DataError);
  EXPECT_THROW(t.add(1, {1.0, 2.0}), DataError);
  EXPECT_THROW(t.add(3, {std::nan(""), 0.0}), DataError);
}
