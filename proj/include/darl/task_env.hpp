// Copyright 2026 The DARL Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DARL_TASK_ENV_HPP_
#define DARL_TASK_ENV_HPP_

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "darl/error.hpp"
#include "darl/rng.hpp"

namespace darl {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

/// Ordered symbol table. Ids 0..4 are the structural tokens of the tag
/// protocol; everything after them is content.
class Vocab {
 public:
  static constexpr Token kThinkOpen = 0;
  static constexpr Token kThinkClose = 1;
  static constexpr Token kAnswerOpen = 2;
  static constexpr Token kAnswerClose = 3;
  static constexpr Token kEnd = 4;
  static constexpr int kNumStructural = 5;
  static constexpr int kMinContent = 3;

  explicit Vocab(const std::vector<std::string>& content) {
    symbols_ = {"<think>", "</think>", "<answer>", "</answer>", "<end>"};
    symbols_.insert(symbols_.end(), content.begin(), content.end());
    if (content.size() < static_cast<std::size_t>(kMinContent)) {
      throw Error(ErrorCode::kInvalidConfig,
                  "vocab needs at least 3 content symbols");
    }
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<Token>(i)).second) {
        throw Error(ErrorCode::kInvalidConfig,
                    "duplicate vocab symbol '" + symbols_[i] + "'");
      }
    }
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(Token t) const { return symbols_.at(t); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  bool contains(Token t) const { return t >= 0 && t < size(); }
  static bool is_structural(Token t) { return t >= 0 && t < kNumStructural; }

  std::optional<Token> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Token id(std::string_view name) const {
    auto t = find(name);
    if (!t) {
      throw Error(ErrorCode::kInvalidToken,
                  "symbol '" + std::string(name) + "' not in vocab");
    }
    return *t;
  }

  TokenSeq encode(std::string_view text) const {
    TokenSeq out;
    std::istringstream in{std::string(text)};
    std::string word;
    while (in >> word) out.push_back(id(word));
    return out;
  }

  std::string decode(const TokenSeq& seq) const {
    std::string out;
    for (Token t : seq) {
      if (!out.empty()) out += ' ';
      out += contains(t) ? symbols_[t] : "<?>";
    }
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, Token> index_;
};

enum class TaskFamily { kModArith, kKeyValue, kSynonymMap };

inline std::string_view to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::kModArith: return "MOD_ARITH";
    case TaskFamily::kKeyValue: return "KEY_VALUE";
    case TaskFamily::kSynonymMap: return "SYNONYM_MAP";
  }
  return "?";
}

inline std::optional<TaskFamily> parse_family(std::string_view s) {
  if (s == "MOD_ARITH") return TaskFamily::kModArith;
  if (s == "KEY_VALUE") return TaskFamily::kKeyValue;
  if (s == "SYNONYM_MAP") return TaskFamily::kSynonymMap;
  return std::nullopt;
}

namespace detail {

inline const std::vector<std::string>& digit_names() {
  static const std::vector<std::string> v = {"0", "1", "2", "3", "4",
                                             "5", "6", "7", "8", "9"};
  return v;
}

inline const std::vector<std::string>& word_names() {
  static const std::vector<std::string> v = {
      "zero", "one", "two", "three", "four",
      "five", "six", "seven", "eight", "nine"};
  return v;
}

constexpr int kSynonymConcepts = 12;
constexpr int kSynonymsPerConcept = 3;

inline std::string concept_name(int c) { return "c" + std::to_string(c); }
inline std::string synonym_name(int c, int j) {
  return "c" + std::to_string(c) + "." + std::to_string(j);
}

}  // namespace detail

/// The default symbol table for a task family. MOD_ARITH renders 32 symbols.
inline Vocab make_vocab(TaskFamily family) {
  std::vector<std::string> content;
  auto append = [&](const std::vector<std::string>& v) {
    content.insert(content.end(), v.begin(), v.end());
  };
  switch (family) {
    case TaskFamily::kModArith:
      append(detail::digit_names());
      append(detail::word_names());
      append({"+", "mod", "=", "so", "then", "ok", "?"});
      break;
    case TaskFamily::kKeyValue:
      append(detail::digit_names());
      append(detail::word_names());
      append({"a", "b", "c", "d", "e", "f", "g", "h", "?", "="});
      break;
    case TaskFamily::kSynonymMap:
      for (int c = 0; c < detail::kSynonymConcepts; ++c) {
        content.push_back(detail::concept_name(c));
        for (int j = 0; j < detail::kSynonymsPerConcept; ++j) {
          content.push_back(detail::synonym_name(c, j));
        }
      }
      append({"aka", "="});
      break;
  }
  return Vocab(content);
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct TaskInstance {
  std::string task_id;
  TokenSeq prompt;
  TokenSeq reference;
  /// All valid answers, reference first, deduplicated.
  std::vector<TokenSeq> equivalence_class;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct TaskFamilyConfig {
  TaskFamily family = TaskFamily::kModArith;
  int num_tasks = 200;
  int class_size = 4;
  std::uint64_t seed = 0;
};

/// Exact set membership in the task's equivalence class.
inline bool is_equivalent(const TaskInstance& task, const TokenSeq& candidate) {
  return std::find(task.equivalence_class.begin(), task.equivalence_class.end(),
                   candidate) != task.equivalence_class.end();
}

/// Binary verifier of the verifiable-reward baseline.
inline int rule_verifier(const TaskInstance& task, const TokenSeq& answer) {
  return is_equivalent(task, answer) ? 1 : 0;
}

namespace detail {

inline std::optional<Token> digit(const Vocab& v, int d) {
  return v.find(digit_names().at(d));
}

inline std::optional<int> digit_value(const Vocab& v, Token t) {
  for (int d = 0; d < 10; ++d) {
    if (digit(v, d) == t) return d;
  }
  return std::nullopt;
}

inline std::optional<int> word_value(const Vocab& v, Token t) {
  for (int d = 0; d < 10; ++d) {
    if (v.find(word_names()[d]) == t) return d;
  }
  return std::nullopt;
}

inline std::optional<int> concept_of(const Vocab& v, Token t) {
  if (!v.contains(t)) return std::nullopt;
  const std::string& s = v.symbol(t);
  if (s.size() < 4 || s[0] != 'c') return std::nullopt;
  const auto dot = s.find('.');
  if (dot == std::string::npos) return std::nullopt;
  return std::stoi(s.substr(1, dot - 1));
}

// Surface forms of a single-digit value: decimal, zero-padded, spelled out,
// spelled out zero-padded, zero-padded to width 3. Forms whose symbols are
// missing from the vocab are skipped.
inline std::vector<TokenSeq> numeric_renderings(const Vocab& v, int value) {
  std::vector<TokenSeq> out;
  auto d = digit(v, value);
  auto zero = digit(v, 0);
  auto w = v.find(word_names().at(value));
  auto wzero = v.find(word_names()[0]);
  if (!d) return out;
  out.push_back({*d});
  if (zero) out.push_back({*zero, *d});
  if (w) out.push_back({*w});
  if (w && wzero) out.push_back({*wzero, *w});
  if (zero) out.push_back({*zero, *zero, *d});
  return out;
}

inline std::vector<TokenSeq> synonym_renderings(const Vocab& v, int c) {
  std::vector<TokenSeq> out;
  for (int j = 0; j < kSynonymsPerConcept; ++j) {
    if (auto s = v.find(synonym_name(c, j))) out.push_back({*s});
  }
  if (auto aka = v.find("aka")) {
    const std::size_t n = out.size();
    for (std::size_t j = 0; j < n; ++j) out.push_back({*aka, out[j][0]});
  }
  return out;
}

inline Token require(const Vocab& v, std::string_view name) {
  auto t = v.find(name);
  if (!t) {
    throw Error(ErrorCode::kInvalidConfig,
                "vocab lacks prompt symbol '" + std::string(name) + "'");
  }
  return *t;
}

}  // namespace detail

/// Semantic value of an answer under the family's evaluator, or nullopt when
/// the sequence is not a rendering of any value.
inline std::optional<int> evaluate_answer(TaskFamily family, const Vocab& v,
                                          const TokenSeq& answer) {
  if (answer.empty()) return std::nullopt;
  if (family == TaskFamily::kSynonymMap) {
    TokenSeq body = answer;
    if (body.size() == 2 && v.find("aka") == body[0]) body.erase(body.begin());
    if (body.size() != 1) return std::nullopt;
    return detail::concept_of(v, body[0]);
  }
  // All digits or all spelled digits, read as a decimal numeral.
  int value = 0;
  const bool words = detail::word_value(v, answer[0]).has_value();
  for (Token t : answer) {
    auto d = words ? detail::word_value(v, t) : detail::digit_value(v, t);
    if (!d) return std::nullopt;
    value = value * 10 + *d;
  }
  return value;
}

/// Value the prompt asks for, computed from the prompt tokens alone.
inline int expected_value(TaskFamily family, const Vocab& v,
                          const TokenSeq& prompt) {
  auto dv = [&](Token t) {
    auto d = detail::digit_value(v, t);
    if (!d) throw Error(ErrorCode::kInvalidToken, "expected a digit token");
    return *d;
  };
  switch (family) {
    case TaskFamily::kModArith:
      // a + b mod m =
      return (dv(prompt.at(0)) + dv(prompt.at(2))) % dv(prompt.at(4));
    case TaskFamily::kKeyValue: {
      // k1 v1 k2 v2 k3 v3 ? kq =
      const Token query = prompt.at(prompt.size() - 2);
      for (std::size_t i = 0; i + 1 < prompt.size() - 3; i += 2) {
        if (prompt[i] == query) return dv(prompt[i + 1]);
      }
      throw Error(ErrorCode::kInvalidToken, "query key absent from prompt");
    }
    case TaskFamily::kSynonymMap: {
      const std::string& s = v.symbol(prompt.at(0));
      return std::stoi(s.substr(1));
    }
  }
  return 0;
}

/// Reasoning trace used for warm-start demonstrations. For MOD_ARITH it is
/// the unreduced sum followed by "mod m", for KEY_VALUE the queried key, for
/// SYNONYM_MAP the concept symbol.
inline TokenSeq reasoning_trace(TaskFamily family, const Vocab& v,
                                const TokenSeq& prompt) {
  switch (family) {
    case TaskFamily::kModArith: {
      const int a = *detail::digit_value(v, prompt.at(0));
      const int b = *detail::digit_value(v, prompt.at(2));
      const int s = a + b;
      TokenSeq out;
      if (s >= 10) out.push_back(*detail::digit(v, s / 10));
      out.push_back(*detail::digit(v, s % 10));
      out.push_back(prompt.at(3));
      out.push_back(prompt.at(4));
      return out;
    }
    case TaskFamily::kKeyValue:
      return {prompt.at(prompt.size() - 2)};
    case TaskFamily::kSynonymMap:
      return {prompt.at(0)};
  }
  return {};
}

namespace detail {

struct Candidate {
  TokenSeq prompt;
  int value;
};

inline std::vector<Candidate> prompt_space(TaskFamily family, const Vocab& v) {
  std::vector<Candidate> out;
  switch (family) {
    case TaskFamily::kModArith: {
      const Token plus = require(v, "+"), mod = require(v, "mod"),
                  eq = require(v, "=");
      for (int a = 0; a < 10; ++a) {
        for (int b = 0; b < 10; ++b) {
          for (int m = 2; m < 10; ++m) {
            auto da = digit(v, a), db = digit(v, b), dm = digit(v, m);
            if (!da || !db || !dm) continue;
            out.push_back({{*da, plus, *db, mod, *dm, eq}, (a + b) % m});
          }
        }
      }
      break;
    }
    case TaskFamily::kKeyValue: {
      const std::vector<std::string> keys = {"a", "b", "c", "d",
                                             "e", "f", "g", "h"};
      const Token q = require(v, "?"), eq = require(v, "=");
      for (std::size_t k = 0; k < keys.size(); ++k) require(v, keys[k]);
      // Three consecutive keys (cyclic), values from a fixed mixing of the
      // key index, query on each of the three.
      for (int start = 0; start < 8; ++start) {
        for (int shift = 0; shift < 10; ++shift) {
          for (int qi = 0; qi < 3; ++qi) {
            TokenSeq p;
            int answer = 0;
            for (int i = 0; i < 3; ++i) {
              const int key = (start + i) % 8;
              const int val = (shift + 3 * i + key) % 10;
              p.push_back(v.id(keys[key]));
              p.push_back(*digit(v, val));
              if (i == qi) answer = val;
            }
            p.push_back(q);
            p.push_back(v.id(keys[(start + qi) % 8]));
            p.push_back(eq);
            out.push_back({std::move(p), answer});
          }
        }
      }
      break;
    }
    case TaskFamily::kSynonymMap: {
      const Token eq = require(v, "=");
      for (int c = 0; c < kSynonymConcepts; ++c) {
        if (auto t = v.find(concept_name(c))) out.push_back({{*t, eq}, c});
      }
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Deterministically draws cfg.num_tasks distinct prompts from the family's
/// prompt space and attaches the first cfg.class_size renderings of the
/// answer as the equivalence class (the first rendering is the reference).
inline std::vector<TaskInstance> generate_tasks(const TaskFamilyConfig& cfg,
                                                const Vocab& vocab) {
  if (cfg.num_tasks < 1 || cfg.class_size < 1) {
    throw Error(ErrorCode::kInvalidConfig,
                "num_tasks and class_size must be >= 1");
  }
  auto space = detail::prompt_space(cfg.family, vocab);
  if (static_cast<std::size_t>(cfg.num_tasks) > space.size()) {
    throw Error(ErrorCode::kInvalidConfig,
                "num_tasks " + std::to_string(cfg.num_tasks) + " exceeds the " +
                    std::to_string(space.size()) + " distinct prompts of " +
                    std::string(to_string(cfg.family)));
  }
  Rng rng(cfg.seed);
  for (std::size_t i = space.size() - 1; i > 0; --i) {
    std::swap(space[i], space[rng.uniform_int(i + 1)]);
  }

  std::vector<TaskInstance> tasks;
  tasks.reserve(cfg.num_tasks);
  for (int i = 0; i < cfg.num_tasks; ++i) {
    auto& cand = space[i];
    auto forms = cfg.family == TaskFamily::kSynonymMap
                     ? detail::synonym_renderings(vocab, cand.value)
                     : detail::numeric_renderings(vocab, cand.value);
    std::vector<TokenSeq> cls;
    for (auto& f : forms) {
      if (std::find(cls.begin(), cls.end(), f) == cls.end()) cls.push_back(f);
    }
    if (cls.size() < static_cast<std::size_t>(cfg.class_size)) {
      throw Error(ErrorCode::kUnsatisfiableClassSize,
                  std::string(to_string(cfg.family)) + " can render only " +
                      std::to_string(cls.size()) + " forms, class_size=" +
                      std::to_string(cfg.class_size));
    }
    cls.resize(cfg.class_size);
    TaskInstance t;
    t.task_id = std::string(to_string(cfg.family)) + "-" +
                std::to_string(cfg.seed) + "-" + std::to_string(i);
    t.prompt = std::move(cand.prompt);
    t.reference = cls.front();
    t.equivalence_class = std::move(cls);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Line-delimited task files:
//   task_id <TAB> prompt ids <TAB> reference ids <TAB> member ids <TAB> ...
// Each id list is space separated. Lines starting with '#' are comments.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_ids(const TokenSeq& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s[i]);
  }
  return out;
}

inline TokenSeq parse_ids(const std::string& field) {
  TokenSeq out;
  std::istringstream in(field);
  long long x = 0;
  while (in >> x) out.push_back(static_cast<Token>(x));
  if (!in.eof()) {
    throw Error(ErrorCode::kIo, "bad token id list '" + field + "'");
  }
  return out;
}

}  // namespace detail

inline void write_tasks(std::ostream& out, const std::vector<TaskInstance>& tasks) {
  out << "# darl-tasks v1\n";
  for (const auto& t : tasks) {
    out << t.task_id << '\t' << detail::join_ids(t.prompt) << '\t'
        << detail::join_ids(t.reference);
    for (const auto& m : t.equivalence_class) out << '\t' << detail::join_ids(m);
    out << '\n';
  }
}

inline std::vector<TaskInstance> read_tasks(std::istream& in) {
  std::vector<TaskInstance> tasks;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      auto tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() < 4) {
      throw Error(ErrorCode::kIo,
                  "task line " + std::to_string(lineno) + ": too few fields");
    }
    TaskInstance t;
    t.task_id = fields[0];
    t.prompt = detail::parse_ids(fields[1]);
    t.reference = detail::parse_ids(fields[2]);
    for (std::size_t i = 3; i < fields.size(); ++i) {
      t.equivalence_class.push_back(detail::parse_ids(fields[i]));
    }
    if (!is_equivalent(t, t.reference)) {
      throw Error(ErrorCode::kIo, "task line " + std::to_string(lineno) +
                                      ": reference not in its class");
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace darl

#endif  // DARL_TASK_ENV_HPP_
