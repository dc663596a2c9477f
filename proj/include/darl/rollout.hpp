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

#ifndef DARL_ROLLOUT_HPP_
#define DARL_ROLLOUT_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "darl/task_env.hpp"

namespace darl {

/// Half-open index range [begin, end) into Rollout::tokens.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct ParsedRollout {
  Span z_span;
  Span y_span;
  bool well_formed = false;
};

/// One sampled completion o = z (+) y for a prompt.
struct Rollout {
  std::string task_id;
  TokenSeq prompt;
  /// Generated tokens only (the prompt is not repeated here).
  TokenSeq tokens;
  Span z_span;
  Span y_span;
  /// Behaviour-policy log-probabilities recorded at sampling time, one per
  /// generated token.
  std::vector<double> logprob_old;
  bool well_formed = false;
  bool truncated = false;

  TokenSeq reasoning() const {
    return {tokens.begin() + z_span.begin, tokens.begin() + z_span.end};
  }
  TokenSeq answer() const {
    return {tokens.begin() + y_span.begin, tokens.begin() + y_span.end};
  }
  /// Well formed with a non-empty answer; only these receive a reward.
  bool scorable() const { return well_formed && !y_span.empty(); }
};

/// Locates the tag protocol
///   <think> z </think> <answer> y </answer>
/// in a generated sequence. Well formed iff each of the four tags occurs
/// exactly once, in that order, with </think> immediately followed by
/// <answer>. Tokens before <think> and after </answer> are ignored. On a
/// malformed sequence the spans cover whatever could be delimited (possibly
/// nothing).
inline ParsedRollout parse_rollout(const TokenSeq& tokens, const Vocab& /*vocab*/) {
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t pos[4] = {kNone, kNone, kNone, kNone};
  int count[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token t = tokens[i];
    if (t >= Vocab::kThinkOpen && t <= Vocab::kAnswerClose) {
      if (count[t]++ == 0) pos[t] = i;
    }
  }
  ParsedRollout out;
  const std::size_t to = pos[Vocab::kThinkOpen], tc = pos[Vocab::kThinkClose],
                    ao = pos[Vocab::kAnswerOpen], ac = pos[Vocab::kAnswerClose];
  if (to != kNone && tc != kNone && to < tc) out.z_span = {to + 1, tc};
  if (ao != kNone && ac != kNone && ao < ac) out.y_span = {ao + 1, ac};
  const bool once = count[0] == 1 && count[1] == 1 && count[2] == 1 && count[3] == 1;
  out.well_formed = once && to < tc && tc + 1 == ao && ao < ac;
  if (!out.well_formed) out.y_span = {};
  return out;
}

inline void attach_parse(Rollout& r, const Vocab& vocab) {
  auto p = parse_rollout(r.tokens, vocab);
  r.z_span = p.z_span;
  r.y_span = p.y_span;
  r.well_formed = p.well_formed;
}

}  // namespace darl

#endif  // DARL_ROLLOUT_HPP_
