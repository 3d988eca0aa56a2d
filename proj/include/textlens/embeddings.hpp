#pragma once

// Item representations. LENS sees an item only through its id (a one-hot
// code over a fixed vocabulary); Text-LENS sees a vector derived from the
// item's text, either loaded from a file of precomputed encoder outputs or
// produced by the built-in hashing featurizer.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "textlens/data/io.hpp"
#include "textlens/data/types.hpp"
#include "textlens/errors.hpp"
#include "textlens/rng.hpp"

namespace textlens {

enum class ModelKind { kLens, kTextLens };
enum class EmbeddingMode { kIdOneHot, kFileVectors, kTextFeatures };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::kLens ? "lens" : "text-lens"; }
inline std::string_view to_string(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::kIdOneHot: return "id";
    case EmbeddingMode::kFileVectors: return "file";
    case EmbeddingMode::kTextFeatures: return "text";
  }
  return "?";
}
inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "lens") return ModelKind::kLens;
  if (s == "text-lens" || s == "textlens") return ModelKind::kTextLens;
  throw UsageError("unknown model kind '" + std::string(s) + "' (expected lens or text-lens)");
}
inline EmbeddingMode parse_embedding_mode(std::string_view s) {
  if (s == "id") return EmbeddingMode::kIdOneHot;
  if (s == "file") return EmbeddingMode::kFileVectors;
  if (s == "text") return EmbeddingMode::kTextFeatures;
  throw UsageError("unknown embedding mode '" + std::string(s) + "' (expected id, file or text)");
}

/// Item ids in one-hot order.
struct Vocabulary {
  std::vector<ItemId> ids;

  static Vocabulary over(const std::vector<Item>& items) {
    Vocabulary v;
    for (const auto& it : items) v.ids.push_back(it.item_id);
    std::sort(v.ids.begin(), v.ids.end());
    v.ids.erase(std::unique(v.ids.begin(), v.ids.end()), v.ids.end());
    return v;
  }
};

struct FeaturizerConfig {
  std::size_t dim = 256;
  bool bigrams = true;
};

/// One-hot code of the item's position in `vocab`.
inline std::vector<double> embed_id(const Item& item, const std::vector<ItemId>& vocab) {
  const auto it = std::find(vocab.begin(), vocab.end(), item.item_id);
  if (it == vocab.end()) throw LookupError("item_id " + std::to_string(item.item_id) + " is not in the id vocabulary");
  std::vector<double> v(vocab.size(), 0.0);
  v[static_cast<std::size_t>(it - vocab.begin())] = 1.0;
  return v;
}

/// Lowercased alphanumeric runs.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Signed feature hashing of unigrams (and adjacent-token bigrams), then L2
/// normalization.
inline std::vector<double> embed_text(std::string_view text, const FeaturizerConfig& cfg = {}) {
  if (cfg.dim == 0) throw UsageError("embed_text: dimension must be >= 1");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw UsageError("embed_text: text has no tokens");
  std::vector<double> v(cfg.dim, 0.0);
  auto add = [&](std::uint64_t h) {
    h = splitmix64(h);
    v[h % cfg.dim] += (h >> 63) ? -1.0 : 1.0;
  };
  for (const auto& t : tokens) add(fnv1a64(t));
  if (cfg.bigrams)
    for (std::size_t i = 1; i < tokens.size(); ++i) add(fnv1a64(tokens[i], fnv1a64("\x1f", fnv1a64(tokens[i - 1]))));
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& x : v) x /= norm;
  return v;
}

inline std::vector<double> embed_text(const Item& item, const FeaturizerConfig& cfg = {}) {
  if (item.text.empty()) throw UsageError("embed_text: item " + std::to_string(item.item_id) + " has empty text");
  return embed_text(std::string_view(item.text), cfg);
}

/// item_id -> fixed-length vector.
class EmbeddingTable {
 public:
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool contains(ItemId id) const { return rows_.count(id) != 0; }
  const std::map<ItemId, std::vector<double>>& rows() const noexcept { return rows_; }

  void add(ItemId id, std::vector<double> v) {
    if (rows_.empty() && dim_ == 0) dim_ = v.size();
    if (v.size() != dim_ || v.empty())
      throw DataError("embedding for item " + std::to_string(id) + " has " + std::to_string(v.size()) +
                      " components, table dimension is " + std::to_string(dim_));
    for (double x : v)
      if (!std::isfinite(x)) throw DataError("embedding for item " + std::to_string(id) + " has a non-finite value");
    if (!rows_.emplace(id, std::move(v)).second) throw DataError("duplicate item_id " + std::to_string(id) + " in embedding table");
  }

  const std::vector<double>& at(ItemId id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) throw LookupError("embedding table has no row for item_id " + std::to_string(id));
    return it->second;
  }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

  /// TSV: item_id followed by the vector components.
  static EmbeddingTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    const std::string src = path.string();
    EmbeddingTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      const auto f = io_detail::split(line, '\t');
      if (f.size() < 2) throw ParseError(src, lineno, "expected item_id and at least one component");
      if (t.dim_ != 0 && f.size() - 1 != t.dim_)
        throw ParseError(src, lineno, "ragged row: " + std::to_string(f.size() - 1) + " components, expected " + std::to_string(t.dim_));
      const auto id = io_detail::parse_int<ItemId>(f[0]);
      if (!id) throw ParseError(src, lineno, "bad item_id '" + f[0] + "'");
      std::vector<double> v;
      for (std::size_t k = 1; k < f.size(); ++k) {
        const auto x = io_detail::parse_real(f[k]);
        if (!x) throw ParseError(src, lineno, "bad component '" + f[k] + "'");
        if (!std::isfinite(*x)) throw ParseError(src, lineno, "non-finite component '" + f[k] + "'");
        v.push_back(*x);
      }
      if (t.contains(*id)) throw ParseError(src, lineno, "duplicate item_id " + f[0]);
      t.add(*id, std::move(v));
    }
    if (t.rows_.empty()) throw ParseError(src, lineno, "embedding table is empty");
    return t;
  }

  void save(const std::filesystem::path& path) const {
    auto out = io_detail::open_out(path);
    for (const auto& [id, v] : rows_) {
      out << id;
      for (double x : v) out << '\t' << io_detail::format_real(x);
      out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
  }

 private:
  std::size_t dim_ = 0;
  std::map<ItemId, std::vector<double>> rows_;
};

/// Maps items to fixed-length vectors. Immutable after construction apart
/// from the optional access observer, which exists for instrumentation.
class EmbeddingProvider {
 public:
  static EmbeddingProvider id_one_hot(Vocabulary vocab) {
    if (vocab.ids.empty()) throw UsageError("id provider needs a non-empty vocabulary");
    EmbeddingProvider p(EmbeddingMode::kIdOneHot, vocab.ids.size());
    p.vocab_ = std::move(vocab);
    for (std::size_t i = 0; i < p.vocab_.ids.size(); ++i) p.vocab_pos_.emplace(p.vocab_.ids[i], i);
    return p;
  }
  static EmbeddingProvider file_vectors(EmbeddingTable table) {
    if (table.size() == 0) throw UsageError("file provider needs a non-empty embedding table");
    EmbeddingProvider p(EmbeddingMode::kFileVectors, table.dim());
    p.table_ = std::move(table);
    return p;
  }
  static EmbeddingProvider text_features(FeaturizerConfig cfg) {
    if (cfg.dim == 0) throw UsageError("text featurizer dimension must be >= 1");
    EmbeddingProvider p(EmbeddingMode::kTextFeatures, cfg.dim);
    p.featurizer_ = cfg;
    return p;
  }

  EmbeddingMode mode() const noexcept { return mode_; }
  std::size_t dim() const noexcept { return dim_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  const EmbeddingTable& table() const noexcept { return table_; }
  const FeaturizerConfig& featurizer() const noexcept { return featurizer_; }

  std::vector<double> embed(const Item& item) const {
    if (observer_) observer_(item.item_id);
    switch (mode_) {
      case EmbeddingMode::kIdOneHot: {
        auto it = vocab_pos_.find(item.item_id);
        if (it == vocab_pos_.end())
          throw LookupError("item_id " + std::to_string(item.item_id) + " is not in the id vocabulary");
        std::vector<double> v(dim_, 0.0);
        v[it->second] = 1.0;
        return v;
      }
      case EmbeddingMode::kFileVectors: return table_.at(item.item_id);
      case EmbeddingMode::kTextFeatures: return embed_text(item, featurizer_);
    }
    return {};
  }

  /// Throws LookupError naming the first item the provider cannot embed.
  void require_coverage(const std::vector<Item>& items) const {
    for (const auto& it : items) {
      if (mode_ == EmbeddingMode::kIdOneHot && !vocab_pos_.count(it.item_id))
        throw LookupError("id vocabulary does not cover item_id " + std::to_string(it.item_id));
      if (mode_ == EmbeddingMode::kFileVectors && !table_.contains(it.item_id))
        throw LookupError("embedding table does not cover item_id " + std::to_string(it.item_id));
      if (mode_ == EmbeddingMode::kTextFeatures && tokenize(it.text).empty())
        throw LookupError("item_id " + std::to_string(it.item_id) + " has no text tokens");
    }
  }

  void set_observer(std::function<void(ItemId)> f) { observer_ = std::move(f); }

 private:
  EmbeddingProvider(EmbeddingMode mode, std::size_t dim) : mode_(mode), dim_(dim) {}

  EmbeddingMode mode_;
  std::size_t dim_;
  Vocabulary vocab_;
  std::map<ItemId, std::size_t> vocab_pos_;
  EmbeddingTable table_;
  FeaturizerConfig featurizer_;
  std::function<void(ItemId)> observer_;
};

using EmbeddingSource = std::variant<Vocabulary, EmbeddingTable, FeaturizerConfig>;

/// Pairs a model kind with its item representation: LENS takes a vocabulary,
/// Text-LENS a table or a featurizer. When `must_cover` is given, every item
/// in it has to be embeddable.
inline EmbeddingProvider provider_for(ModelKind kind, EmbeddingSource source, const std::vector<Item>* must_cover = nullptr) {
  EmbeddingProvider p = std::visit(
      [kind](auto&& src) -> EmbeddingProvider {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, Vocabulary>) {
          if (kind != ModelKind::kLens) throw UsageError("text-lens cannot use an id vocabulary as its item representation");
          return EmbeddingProvider::id_one_hot(std::move(src));
        } else if constexpr (std::is_same_v<T, EmbeddingTable>) {
          if (kind != ModelKind::kTextLens) throw UsageError("lens takes an id vocabulary, not an embedding table");
          return EmbeddingProvider::file_vectors(std::move(src));
        } else {
          if (kind != ModelKind::kTextLens) throw UsageError("lens takes an id vocabulary, not a text featurizer");
          return EmbeddingProvider::text_features(src);
        }
      },
      std::move(source));
  if (must_cover) p.require_coverage(*must_cover);
  return p;
}

}  // namespace textlens
