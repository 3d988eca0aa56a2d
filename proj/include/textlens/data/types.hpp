#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "textlens/errors.hpp"

namespace textlens {

using ItemId = std::int64_t;
using StudentId = std::int64_t;

enum class Difficulty { kEasy = 0, kMedium = 1, kHard = 2 };

inline constexpr Difficulty kAllDifficulties[] = {Difficulty::kEasy, Difficulty::kMedium, Difficulty::kHard};

/// IRT difficulty parameter b for a level.
inline constexpr double difficulty_parameter(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return -1.5;
    case Difficulty::kMedium: return 0.0;
    case Difficulty::kHard: return 1.5;
  }
  return 0.0;
}

inline constexpr std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kMedium: return "medium";
    case Difficulty::kHard: return "hard";
  }
  return "?";
}

inline std::optional<Difficulty> parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "medium") return Difficulty::kMedium;
  if (s == "hard") return Difficulty::kHard;
  return std::nullopt;
}

struct Item {
  ItemId item_id = 0;
  int skill_id = 0;
  int subskill_id = 0;
  Difficulty difficulty = Difficulty::kMedium;
  std::string text;

  double b() const { return difficulty_parameter(difficulty); }
  friend bool operator==(const Item&, const Item&) = default;
};

struct StudentProfile {
  StudentId student_id = 0;
  std::vector<double> theta;
  friend bool operator==(const StudentProfile&, const StudentProfile&) = default;
};

struct ResponseRecord {
  StudentId student_id = 0;
  ItemId item_id = 0;
  int correct = 0;
  friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

/// Items, responses and (for simulated data) the generating proficiencies,
/// with lookup indexes built on construction.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int n_skills, std::vector<Item> items, std::vector<ResponseRecord> responses,
          std::vector<StudentProfile> students = {})
      : n_skills_(n_skills), items_(std::move(items)), responses_(std::move(responses)), students_(std::move(students)) {
    reindex();
  }

  int n_skills() const noexcept { return n_skills_; }
  const std::vector<Item>& items() const noexcept { return items_; }
  const std::vector<ResponseRecord>& responses() const noexcept { return responses_; }
  const std::vector<StudentProfile>& students() const noexcept { return students_; }
  bool has_profiles() const noexcept { return !students_.empty(); }

  /// Sorted ids of every student with at least one response.
  const std::vector<StudentId>& student_ids() const noexcept { return student_ids_; }

  const Item& item(ItemId id) const {
    auto it = item_index_.find(id);
    if (it == item_index_.end()) throw DataError("unknown item_id " + std::to_string(id));
    return items_[it->second];
  }
  bool has_item(ItemId id) const { return item_index_.count(id) != 0; }

  /// (item_id, correct) pairs of one student, ascending by item_id.
  const std::vector<std::pair<ItemId, int>>& responses_of(StudentId s) const {
    static const std::vector<std::pair<ItemId, int>> kEmpty;
    auto it = by_student_.find(s);
    return it == by_student_.end() ? kEmpty : it->second;
  }

  std::optional<int> response(StudentId s, ItemId i) const {
    const auto& r = responses_of(s);
    auto it = std::lower_bound(r.begin(), r.end(), std::pair<ItemId, int>{i, -1});
    if (it == r.end() || it->first != i) return std::nullopt;
    return it->second;
  }

  const StudentProfile& profile(StudentId s) const {
    auto it = profile_index_.find(s);
    if (it == profile_index_.end()) throw DataError("no proficiency profile for student " + std::to_string(s));
    return students_[it->second];
  }

  /// Replaces item texts (same ids, same order); used by the text ablation.
  Dataset with_items(std::vector<Item> items) const {
    return Dataset(n_skills_, std::move(items), responses_, students_);
  }

 private:
  void reindex() {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const Item& it = items_[i];
      if (!item_index_.emplace(it.item_id, i).second)
        throw DataError("duplicate item_id " + std::to_string(it.item_id));
      if (it.skill_id < 0 || it.skill_id >= n_skills_)
        throw DataError("item " + std::to_string(it.item_id) + " references skill_id " + std::to_string(it.skill_id) +
                        " outside [0, " + std::to_string(n_skills_) + ")");
    }
    for (const auto& r : responses_) {
      if (!item_index_.count(r.item_id))
        throw DataError("response of student " + std::to_string(r.student_id) + " references unknown item_id " +
                        std::to_string(r.item_id));
      by_student_[r.student_id].emplace_back(r.item_id, r.correct);
    }
    for (auto& [sid, rs] : by_student_) {
      std::sort(rs.begin(), rs.end());
      for (std::size_t k = 1; k < rs.size(); ++k)
        if (rs[k].first == rs[k - 1].first)
          throw DataError("duplicate response pair (student_id=" + std::to_string(sid) +
                          ", item_id=" + std::to_string(rs[k].first) + ")");
      student_ids_.push_back(sid);
    }
    for (std::size_t i = 0; i < students_.size(); ++i) profile_index_.emplace(students_[i].student_id, i);
  }

  int n_skills_ = 0;
  std::vector<Item> items_;
  std::vector<ResponseRecord> responses_;
  std::vector<StudentProfile> students_;
  std::unordered_map<ItemId, std::size_t> item_index_;
  std::map<StudentId, std::vector<std::pair<ItemId, int>>> by_student_;
  std::unordered_map<StudentId, std::size_t> profile_index_;
  std::vector<StudentId> student_ids_;
};

}  // namespace textlens
