#pragma once

// Templated item bank.
//
// Each skill owns a keyword lexicon (the first word names the topic) and
// three or four subskills with their own keywords. Each difficulty level owns
// phrasing cues: an opener, task wording with a fixed number of steps,
// step-count words and a band of number magnitudes. An item's text is a pure function of
// (skill, subskill, difficulty, template index, cue fidelity). With
// probability `cue_fidelity` the phrasing follows the item's own level;
// otherwise it follows one of the other two levels, so text predicts
// difficulty only partially.

#include <array>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "textlens/data/types.hpp"
#include "textlens/errors.hpp"
#include "textlens/rng.hpp"

namespace textlens {

struct TextStyle {
  double cue_fidelity = 0.8;
};

struct TemplateKey {
  int skill_id = 0;
  int subskill = 0;  // index within the skill
  Difficulty difficulty = Difficulty::kMedium;
  std::uint64_t template_index = 0;
};

namespace bank_detail {

struct SkillLexicon {
  std::vector<std::string> terms;
  std::vector<std::vector<std::string>> subskills;
};

inline const std::vector<SkillLexicon>& builtin_lexicons() {
  static const std::vector<SkillLexicon> kLexicons = {
      {{"fraction", "numerator", "denominator", "simplify", "equivalent", "mixed", "improper", "reciprocal",
        "halves", "quarters", "thirds", "common"},
       {{"adding", "unlike"}, {"multiplying", "product"}, {"comparing", "larger"}, {"dividing", "quotient"}}},
      {{"percentage", "percent", "discount", "increase", "decrease", "interest", "original", "rate", "tax",
        "markup", "reduction", "sale"},
       {{"finding", "amount"}, {"change", "change"}, {"reverse", "before"}}},
      {{"angle", "degrees", "triangle", "parallel", "vertical", "opposite", "supplementary", "complementary",
        "polygon", "interior", "exterior", "protractor"},
       {{"straight", "line"}, {"transversal", "corresponding"}, {"polygons", "sides"}, {"bearing", "north"}}},
      {{"area", "perimeter", "rectangle", "length", "width", "square", "units", "centimetres", "boundary",
        "shape", "compound", "trapezium"},
       {{"rectangles", "grid"}, {"triangles", "base"}, {"circles", "radius"}}},
      {{"equation", "solve", "unknown", "variable", "coefficient", "linear", "expression", "balance", "substitute",
        "both", "sides", "term"},
       {{"onestep", "inverse"}, {"brackets", "expand"}, {"unknowns", "each"}, {"forming", "words"}}},
      {{"probability", "chance", "likely", "outcome", "spinner", "dice", "coin", "event", "random", "bag",
        "counters", "experiment"},
       {{"single", "event"}, {"combined", "events"}, {"expected", "frequency"}}},
      {{"ratio", "proportion", "share", "parts", "recipe", "scale", "split", "portion", "simplest", "unitary",
        "map", "mixture"},
       {{"sharing", "ratio"}, {"scaling", "recipe"}, {"map", "distance"}, {"direct", "proportion"}}},
      {{"mean", "median", "mode", "range", "average", "data", "table", "frequency", "chart", "survey", "values",
        "spread"},
       {{"averages", "list"}, {"grouped", "table"}, {"charts", "reading"}}},
  };
  return kLexicons;
}

/// Lexicon for any skill id; skills past the built-in list get synthetic words.
inline SkillLexicon lexicon_for(int skill) {
  const auto& builtin = builtin_lexicons();
  if (skill < static_cast<int>(builtin.size())) return builtin[static_cast<std::size_t>(skill)];
  SkillLexicon lex;
  const std::string stem = "sk" + std::to_string(skill);
  for (int k = 0; k < 12; ++k) lex.terms.push_back(stem + "term" + std::to_string(k));
  const int n_sub = 3 + skill % 2;
  for (int k = 0; k < n_sub; ++k) lex.subskills.push_back({stem + "sub" + std::to_string(k), stem + "topic" + std::to_string(k)});
  return lex;
}

struct Cue {
  std::vector<std::string> openers;
  std::vector<std::string> step_phrases;
  int n_terms;  // lexicon terms woven into the task wording
  int n_numbers;
  int lo, hi, step;  // number magnitude band, on a grid of `step`
};

inline const std::array<Cue, 3>& cues() {
  static const std::array<Cue, 3> kCues = {{
      {{"Quick question:", "Simple check:", "Warm up:", "Basic practice:"},
       {"in one step", "directly", "with a single calculation"},
       1, 2, 2, 12, 1},
      {{"Two part problem:", "Work it out:", "Standard question:", "Think about this:"},
       {"in two steps", "then check your answer", "using a short method"},
       2, 2, 15, 95, 5},
      {{"Challenge problem:", "Extended investigation:", "Multi step reasoning task:", "Problem solving challenge:"},
       {"in several steps and justify every stage", "explaining each stage of your reasoning carefully",
        "combining several methods and proving your final result"},
       4, 3, 100, 2000, 100},
  }};
  return kCues;
}

template <typename T>
const T& pick(const std::vector<T>& v, CounterRng& rng) {
  return v[rng.below(v.size())];
}

}  // namespace bank_detail

inline int subskill_count(int skill) {
  return static_cast<int>(bank_detail::lexicon_for(skill).subskills.size());
}

/// The difficulty level whose phrasing an item's text uses.
inline Difficulty cue_level(const TemplateKey& key, const TextStyle& style) {
  auto rng = CounterRng::stream(key.template_index, "bank/cue",
                                {static_cast<std::uint64_t>(key.skill_id), static_cast<std::uint64_t>(key.subskill),
                                 static_cast<std::uint64_t>(key.difficulty)});
  const int own = static_cast<int>(key.difficulty);
  if (rng.uniform() < style.cue_fidelity) return key.difficulty;
  const int shift = 1 + static_cast<int>(rng.below(2));
  return static_cast<Difficulty>((own + shift) % 3);
}

inline std::string render_item_text(const TemplateKey& key, const TextStyle& style = {}) {
  using namespace bank_detail;
  const SkillLexicon lex = lexicon_for(key.skill_id);
  if (key.subskill < 0 || key.subskill >= static_cast<int>(lex.subskills.size()))
    throw UsageError("render_item_text: subskill " + std::to_string(key.subskill) + " out of range for skill " +
                     std::to_string(key.skill_id));
  const Difficulty level = cue_level(key, style);
  const Cue& cue = cues()[static_cast<std::size_t>(level)];
  auto rng = CounterRng::stream(key.template_index, "bank/text",
                                {static_cast<std::uint64_t>(key.skill_id), static_cast<std::uint64_t>(key.subskill),
                                 static_cast<std::uint64_t>(key.difficulty)});

  const auto& sub = lex.subskills[static_cast<std::size_t>(key.subskill)];
  const auto term_idx = sample_without_replacement(lex.terms.size() - 1, static_cast<std::size_t>(cue.n_terms), rng);
  std::vector<std::string> terms;
  for (auto i : term_idx) terms.push_back(lex.terms[i + 1]);
  std::vector<int> numbers;
  for (int k = 0; k < cue.n_numbers; ++k)
    numbers.push_back(cue.lo + cue.step * static_cast<int>(rng.below(static_cast<std::uint64_t>((cue.hi - cue.lo) / cue.step + 1))));

  std::ostringstream os;
  os << pick(cue.openers, rng) << ' ' << lex.terms[0] << ' ' << sub[0] << ' ' << sub[1] << ". Using";
  for (std::size_t k = 0; k < numbers.size(); ++k) os << (k ? (k + 1 == numbers.size() ? " and " : ", ") : " ") << numbers[k];
  os << ", ";
  switch (level) {
    case Difficulty::kEasy:
      os << "find the " << terms[0];
      break;
    case Difficulty::kMedium:
      os << "first find the " << terms[0] << ", then use it to work out the " << terms[1];
      break;
    case Difficulty::kHard:
      os << "first determine the " << terms[0] << ", next relate it to the " << terms[1] << ", then compare with the "
         << terms[2] << ", and finally decide the " << terms[3];
      break;
  }
  os << ' ' << pick(cue.step_phrases, rng) << ". Topic: " << lex.terms[0] << ' ' << sub[0] << '.';
  return os.str();
}

/// Best guess of the phrasing level of a rendered text, from its cue words.
inline std::optional<Difficulty> infer_cue_level(std::string_view text) {
  const bool hard = text.find("finally") != std::string_view::npos;
  const bool medium = text.find(", then use it") != std::string_view::npos;
  if (hard) return Difficulty::kHard;
  if (medium) return Difficulty::kMedium;
  if (text.find("find the") != std::string_view::npos) return Difficulty::kEasy;
  return std::nullopt;
}

/// Builds `items_per_skill` items for each skill with difficulty levels as
/// equal as possible (remainders go to Easy, then Medium) and subskills
/// assigned round-robin. Item ids run 0..N-1, skill-major; difficulty order
/// within a skill is shuffled so ids carry no difficulty information.
inline std::vector<Item> generate_item_bank(int n_skills, int items_per_skill, std::uint64_t seed,
                                            const TextStyle& style = {}) {
  if (n_skills < 1) throw UsageError("generate_item_bank: n_skills must be >= 1, got " + std::to_string(n_skills));
  if (items_per_skill < 1)
    throw UsageError("generate_item_bank: items_per_skill must be >= 1, got " + std::to_string(items_per_skill));
  if (!(style.cue_fidelity >= 0.0 && style.cue_fidelity <= 1.0))
    throw UsageError("generate_item_bank: cue_fidelity must lie in [0, 1]");
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(n_skills) * static_cast<std::size_t>(items_per_skill));
  for (int s = 0; s < n_skills; ++s) {
    auto rng = CounterRng::stream(seed, "bank/layout", {static_cast<std::uint64_t>(s)});
    std::vector<Difficulty> levels;
    for (int lv = 0; lv < 3; ++lv) {
      const int count = items_per_skill / 3 + (lv < items_per_skill % 3 ? 1 : 0);
      levels.insert(levels.end(), static_cast<std::size_t>(count), static_cast<Difficulty>(lv));
    }
    shuffle_in_place(levels, rng);
    const int n_sub = subskill_count(s);
    for (int k = 0; k < items_per_skill; ++k) {
      TemplateKey key{s, k % n_sub, levels[static_cast<std::size_t>(k)], rng()};
      Item it;
      it.item_id = static_cast<ItemId>(s) * items_per_skill + k;
      it.skill_id = s;
      it.subskill_id = s * 10 + key.subskill;
      it.difficulty = key.difficulty;
      it.text = render_item_text(key, style);
      items.push_back(std::move(it));
    }
  }
  return items;
}

enum class TextShuffle { kUniform, kIdentity };

/// Permutes texts among the items of each skill, ignoring difficulty, so text
/// keeps its skill vocabulary but no longer predicts b. Item ids, skills and
/// difficulty levels stay in place.
inline std::vector<Item> shuffle_difficulty_text_link(std::vector<Item> items, std::uint64_t seed,
                                                      TextShuffle kind = TextShuffle::kUniform) {
  std::set<Difficulty> present;
  for (const auto& it : items) present.insert(it.difficulty);
  if (present.size() < 2) throw UsageError("shuffle_difficulty_text_link: needs at least two difficulty levels");
  if (kind == TextShuffle::kIdentity) return items;
  std::map<int, std::vector<std::size_t>> by_skill;
  for (std::size_t i = 0; i < items.size(); ++i) by_skill[items[i].skill_id].push_back(i);
  for (const auto& [skill, idx] : by_skill) {
    auto rng = CounterRng::stream(seed, "shuffle/text", {static_cast<std::uint64_t>(skill)});
    std::vector<std::size_t> perm = idx;
    shuffle_in_place(perm, rng);
    std::vector<std::string> texts;
    for (auto i : perm) texts.push_back(items[i].text);
    for (std::size_t k = 0; k < idx.size(); ++k) items[idx[k]].text = std::move(texts[k]);
  }
  return items;
}

}  // namespace textlens
