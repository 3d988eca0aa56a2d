#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "textlens/data/types.hpp"
#include "textlens/errors.hpp"
#include "textlens/rng.hpp"

namespace textlens {

/// 3-PL item parameters shared by every item of a generated bank; b comes from
/// the item's difficulty level.
struct IrtParams {
  double a = 1.0;  // discrimination
  double c = 0.1;  // guessing floor
};

inline constexpr double kThetaClip = 4.0;

/// c + (1 - c) * logistic(a * (theta - b))
inline double p_correct(double theta, const IrtParams& params, double b) {
  const double x = params.a * (theta - b);
  const double logistic = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return params.c + (1.0 - params.c) * logistic;
}

/// Student i gets id i and one independent N(0, 1) draw per skill, clipped
/// to [-4, 4] (no resampling).
inline std::vector<StudentProfile> sample_students(int n, int n_skills, std::uint64_t seed) {
  if (n < 1) throw UsageError("sample_students: n must be >= 1, got " + std::to_string(n));
  if (n_skills < 1) throw UsageError("sample_students: n_skills must be >= 1");
  std::vector<StudentProfile> out(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    auto rng = CounterRng::stream(seed, "students", {static_cast<std::uint64_t>(s)});
    out[s].student_id = s;
    out[s].theta.resize(static_cast<std::size_t>(n_skills));
    for (auto& t : out[s].theta) t = std::clamp(rng.normal(), -kThetaClip, kThetaClip);
  }
  return out;
}

/// One Bernoulli response per (student, item), ordered student-major. Each
/// draw uses its own (student, item) stream, so the result does not depend on
/// iteration order.
inline std::vector<ResponseRecord> simulate_responses(const std::vector<StudentProfile>& students,
                                                      const std::vector<Item>& items, const IrtParams& params,
                                                      std::uint64_t seed) {
  if (students.empty() || items.empty()) throw UsageError("simulate_responses: empty students or items");
  int max_skill = 0;
  for (const auto& it : items) {
    if (it.skill_id < 0) throw DataError("item " + std::to_string(it.item_id) + " has negative skill_id");
    max_skill = std::max(max_skill, it.skill_id);
  }
  for (const auto& s : students)
    if (static_cast<std::size_t>(max_skill) >= s.theta.size())
      throw DataError("an item has skill_id " + std::to_string(max_skill) + " but student " +
                      std::to_string(s.student_id) + " carries " + std::to_string(s.theta.size()) + " skills");
  std::vector<ResponseRecord> out;
  out.reserve(students.size() * items.size());
  for (const auto& s : students) {
    for (const auto& it : items) {
      auto rng = CounterRng::stream(seed, "responses",
                                    {static_cast<std::uint64_t>(s.student_id), static_cast<std::uint64_t>(it.item_id)});
      const double p = p_correct(s.theta[static_cast<std::size_t>(it.skill_id)], params, it.b());
      out.push_back({s.student_id, it.item_id, rng.uniform() < p ? 1 : 0});
    }
  }
  return out;
}

}  // namespace textlens
