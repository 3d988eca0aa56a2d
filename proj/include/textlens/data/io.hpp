#pragma once

// File formats:
//   items      JSON lines: {"item_id", "skill_id", "subskill_id", "difficulty", "text"}
//   responses  CSV, header student_id,item_id,correct
//   students   CSV, header student_id,theta_0,...,theta_{S-1}

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "textlens/data/types.hpp"
#include "textlens/errors.hpp"

namespace textlens {

namespace io_detail {

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
std::optional<T> parse_int(const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_real(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

/// Shortest text that reads back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace io_detail

inline void write_items(const std::filesystem::path& path, const std::vector<Item>& items) {
  auto out = io_detail::open_out(path);
  for (const auto& it : items) {
    nlohmann::ordered_json j;
    j["item_id"] = it.item_id;
    j["skill_id"] = it.skill_id;
    j["subskill_id"] = it.subskill_id;
    j["difficulty"] = std::string(to_string(it.difficulty));
    j["text"] = it.text;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<Item> ingest_items(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  const std::string src = path.string();
  std::vector<Item> items;
  std::set<ItemId> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(src, lineno, std::string("invalid JSON: ") + e.what());
    }
    Item it;
    try {
      it.item_id = j.at("item_id").get<ItemId>();
      it.skill_id = j.at("skill_id").get<int>();
      it.subskill_id = j.at("subskill_id").get<int>();
      const auto diff = parse_difficulty(j.at("difficulty").get<std::string>());
      if (!diff) throw ParseError(src, lineno, "difficulty must be easy, medium or hard");
      it.difficulty = *diff;
      it.text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(src, lineno, std::string("bad item record: ") + e.what());
    }
    if (it.item_id < 0) throw ParseError(src, lineno, "item_id must be non-negative");
    if (it.skill_id < 0) throw ParseError(src, lineno, "skill_id must be non-negative");
    if (it.text.empty()) throw ParseError(src, lineno, "text must be non-empty");
    if (!ids.insert(it.item_id).second) throw ParseError(src, lineno, "duplicate item_id " + std::to_string(it.item_id));
    items.push_back(std::move(it));
  }
  return items;
}

inline void write_responses(const std::filesystem::path& path, const std::vector<ResponseRecord>& records) {
  auto out = io_detail::open_out(path);
  out << "student_id,item_id,correct\n";
  for (const auto& r : records) out << r.student_id << ',' << r.item_id << ',' << r.correct << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<ResponseRecord> ingest_responses(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  const std::string src = path.string();
  std::string line;
  if (!std::getline(in, line) || io_detail::split(line, ',') != std::vector<std::string>{"student_id", "item_id", "correct"})
    throw ParseError(src, 1, "expected header student_id,item_id,correct");
  std::vector<ResponseRecord> out;
  std::set<std::pair<StudentId, ItemId>> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = io_detail::split(line, ',');
    if (f.size() != 3) throw ParseError(src, lineno, "expected 3 fields, got " + std::to_string(f.size()));
    const auto s = io_detail::parse_int<StudentId>(f[0]);
    const auto i = io_detail::parse_int<ItemId>(f[1]);
    const auto c = io_detail::parse_int<int>(f[2]);
    if (!s || !i || !c) throw ParseError(src, lineno, "non-integer field");
    if (*c != 0 && *c != 1) throw ParseError(src, lineno, "correct must be 0 or 1");
    if (!seen.emplace(*s, *i).second)
      throw DataError(src + ":" + std::to_string(lineno) + ": duplicate response pair (student_id=" + std::to_string(*s) +
                      ", item_id=" + std::to_string(*i) + ")");
    out.push_back({*s, *i, *c});
  }
  return out;
}

inline void write_students(const std::filesystem::path& path, const std::vector<StudentProfile>& students) {
  auto out = io_detail::open_out(path);
  const std::size_t S = students.empty() ? 0 : students.front().theta.size();
  out << "student_id";
  for (std::size_t k = 0; k < S; ++k) out << ",theta_" << k;
  out << '\n';
  for (const auto& s : students) {
    if (s.theta.size() != S) throw DataError("students carry differing skill counts");
    out << s.student_id;
    for (double t : s.theta) out << ',' << io_detail::format_real(t);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<StudentProfile> ingest_students(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  const std::string src = path.string();
  std::string line;
  if (!std::getline(in, line)) throw ParseError(src, 1, "missing header");
  const auto header = io_detail::split(line, ',');
  if (header.empty() || header[0] != "student_id") throw ParseError(src, 1, "header must start with student_id");
  for (std::size_t k = 1; k < header.size(); ++k)
    if (header[k] != "theta_" + std::to_string(k - 1)) throw ParseError(src, 1, "expected column theta_" + std::to_string(k - 1));
  std::vector<StudentProfile> out;
  std::set<StudentId> ids;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = io_detail::split(line, ',');
    if (f.size() != header.size()) throw ParseError(src, lineno, "expected " + std::to_string(header.size()) + " fields");
    StudentProfile p;
    const auto id = io_detail::parse_int<StudentId>(f[0]);
    if (!id) throw ParseError(src, lineno, "bad student_id");
    p.student_id = *id;
    for (std::size_t k = 1; k < f.size(); ++k) {
      const auto v = io_detail::parse_real(f[k]);
      if (!v || !std::isfinite(*v)) throw ParseError(src, lineno, "bad theta value '" + f[k] + "'");
      p.theta.push_back(*v);
    }
    if (!ids.insert(p.student_id).second) throw ParseError(src, lineno, "duplicate student_id " + std::to_string(p.student_id));
    out.push_back(std::move(p));
  }
  return out;
}

/// Loads an external dataset. n_skills <= 0 infers max(skill_id) + 1.
inline Dataset load_dataset(const std::filesystem::path& items_path, const std::filesystem::path& responses_path,
                            const std::optional<std::filesystem::path>& students_path = std::nullopt, int n_skills = 0) {
  auto items = ingest_items(items_path);
  auto responses = ingest_responses(responses_path);
  std::vector<StudentProfile> students;
  if (students_path) students = ingest_students(*students_path);
  int max_skill = -1;
  for (const auto& it : items) max_skill = std::max(max_skill, it.skill_id);
  if (n_skills <= 0) n_skills = max_skill + 1;
  if (max_skill >= n_skills)
    throw DataError("items reference skill_id " + std::to_string(max_skill) + " but the dataset declares " +
                    std::to_string(n_skills) + " skills");
  return Dataset(n_skills, std::move(items), std::move(responses), std::move(students));
}

}  // namespace textlens
