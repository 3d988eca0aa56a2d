#pragma once

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "textlens/data/types.hpp"
#include "textlens/errors.hpp"
#include "textlens/rng.hpp"

namespace textlens {

struct DatasetSplit {
  std::vector<StudentId> train;
  std::vector<StudentId> validation;
  std::vector<StudentId> test;
  std::vector<ItemId> seen;    // ascending
  std::vector<ItemId> unseen;  // ascending

  bool is_seen(ItemId id) const { return std::binary_search(seen.begin(), seen.end(), id); }
  bool is_unseen(ItemId id) const { return std::binary_search(unseen.begin(), unseen.end(), id); }
};

/// Seeded shuffle-split of student ids. Train and validation sizes are
/// round(ratio * n); test takes the rest. Each part comes back ascending.
inline DatasetSplit split_students(std::vector<StudentId> students, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw UsageError("split_students: ratios must be non-negative and sum to 1");
  std::sort(students.begin(), students.end());
  const std::size_t n = students.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw UsageError("split_students: " + std::to_string(n) + " students leave an empty train/validation/test part");
  auto rng = CounterRng::stream(seed, "split/students");
  shuffle_in_place(students, rng);
  DatasetSplit out;
  out.train.assign(students.begin(), students.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(students.begin() + static_cast<std::ptrdiff_t>(n_train),
                        students.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(students.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), students.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline DatasetSplit split_students(std::vector<StudentId> students, std::uint64_t seed) {
  return split_students(std::move(students), {0.8, 0.1, 0.1}, seed);
}

/// Halves every (skill, difficulty) stratum into seen and unseen items.
/// On odd strata the extra item alternates between the seen and the unseen
/// side within a skill (seen first), so each skill's halves differ by at most one.
inline DatasetSplit split_items_seen_unseen(const std::vector<Item>& items, std::uint64_t seed) {
  std::map<std::pair<int, int>, std::vector<ItemId>> strata;
  for (const auto& it : items) strata[{it.skill_id, static_cast<int>(it.difficulty)}].push_back(it.item_id);
  std::vector<std::string> too_small;
  for (const auto& [key, ids] : strata)
    if (ids.size() < 2)
      too_small.push_back("(skill " + std::to_string(key.first) + ", " +
                          std::string(to_string(static_cast<Difficulty>(key.second))) + ": " +
                          std::to_string(ids.size()) + " item)");
  if (!too_small.empty()) {
    std::string msg = "split_items_seen_unseen: strata need at least 2 items:";
    for (const auto& s : too_small) msg += " " + s;
    throw UsageError(msg);
  }
  DatasetSplit out;
  std::map<int, bool> extra_to_seen;
  for (auto& [key, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    auto rng = CounterRng::stream(seed, "split/items",
                                  {static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second)});
    shuffle_in_place(ids, rng);
    std::size_t n_seen = ids.size() / 2;
    if (ids.size() % 2 == 1) {
      auto it = extra_to_seen.try_emplace(key.first, true).first;
      if (it->second) ++n_seen;
      it->second = !it->second;
    }
    out.seen.insert(out.seen.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_seen));
    out.unseen.insert(out.unseen.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_seen), ids.end());
  }
  std::sort(out.seen.begin(), out.seen.end());
  std::sort(out.unseen.begin(), out.unseen.end());
  return out;
}

/// Student split plus item split of one dataset.
inline DatasetSplit split_dataset(const Dataset& data, std::uint64_t seed) {
  DatasetSplit s = split_students(data.student_ids(), seed);
  DatasetSplit i = split_items_seen_unseen(data.items(), seed);
  s.seen = std::move(i.seen);
  s.unseen = std::move(i.unseen);
  return s;
}

}  // namespace textlens
