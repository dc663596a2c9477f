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

#ifndef DARL_REWARD_HPP_
#define DARL_REWARD_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "darl/error.hpp"
#include "darl/policy.hpp"
#include "darl/rollout.hpp"
#include "darl/task_env.hpp"

namespace darl {

/// RULE: binary verifier. RLPR: reference probability only.
/// SAD: reference probability plus a diversity bonus gated by a fixed
/// threshold tau. DAD: same bonus gated by r_ref / gamma.
enum class RewardMode { kRule, kRlpr, kSad, kDad };

inline std::string_view to_string(RewardMode m) {
  switch (m) {
    case RewardMode::kRule: return "RULE";
    case RewardMode::kRlpr: return "RLPR";
    case RewardMode::kSad: return "SAD";
    case RewardMode::kDad: return "DAD";
  }
  return "?";
}

inline std::optional<RewardMode> parse_reward_mode(std::string_view s) {
  if (s == "RULE") return RewardMode::kRule;
  if (s == "RLPR") return RewardMode::kRlpr;
  if (s == "SAD") return RewardMode::kSad;
  if (s == "DAD") return RewardMode::kDad;
  return std::nullopt;
}

struct RewardConfig {
  RewardMode mode = RewardMode::kRlpr;
  double alpha = 1.0;
  double beta = 0.0;
  std::optional<double> tau;
  std::optional<double> gamma;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, m); };
    if (mode == RewardMode::kRule) return;
    if (!(alpha >= 0.0 && alpha <= 1.0)) bad("reward.alpha must lie in [0,1]");
    if (!(beta >= 0.0 && beta <= 1.0)) bad("reward.beta must lie in [0,1]");
    if (std::abs(alpha + beta - 1.0) > 1e-12) bad("reward.alpha + reward.beta must equal 1");
    if (mode == RewardMode::kRlpr && beta != 0.0) bad("RLPR mode requires beta = 0");
    if (mode == RewardMode::kSad && !(tau && *tau >= 0.0)) bad("SAD mode requires tau >= 0");
    if (mode == RewardMode::kDad && !(gamma && *gamma > 0.0)) bad("DAD mode requires gamma > 0");
  }
};

struct RewardBreakdown {
  double r_ref = 0.0;
  double r_gen = 0.0;
  double delta_r = 0.0;
  double threshold = 0.0;
  int indicator = 0;
  double total = 0.0;
  /// Set when the rollout had no scorable answer and was given reward 0.
  bool malformed = false;
};

/// Arithmetic mean of the per-token probabilities of an answer.
inline double mean_token_prob(const SequenceScore& score) {
  if (score.per_token_prob.empty()) {
    throw Error(ErrorCode::kEmptyAnswer, "mean_token_prob of an empty answer");
  }
  double s = 0.0;
  for (double p : score.per_token_prob) s += p;
  return s / static_cast<double>(score.per_token_prob.size());
}

inline double diversity_deviation(double r_ref, double r_gen) {
  return std::max(r_ref - r_gen, 0.0);
}

inline double threshold_for(const RewardConfig& cfg, double r_ref) {
  switch (cfg.mode) {
    case RewardMode::kSad: return *cfg.tau;
    case RewardMode::kDad: return r_ref / *cfg.gamma;
    default:
      throw Error(ErrorCode::kModeMismatch,
                  "no diversity threshold in mode " + std::string(to_string(cfg.mode)));
  }
}

/// alpha * r_ref + beta * delta_r * [delta_r <= threshold]. RLPR mode has no
/// gate: threshold and indicator stay 0 and the total is alpha * r_ref.
inline RewardBreakdown combined_reward(const RewardConfig& cfg, double r_ref,
                                       double r_gen) {
  if (cfg.mode == RewardMode::kRule) {
    throw Error(ErrorCode::kModeMismatch, "RULE rewards come from rule_verifier");
  }
  RewardBreakdown b;
  b.r_ref = r_ref;
  b.r_gen = r_gen;
  b.delta_r = diversity_deviation(r_ref, r_gen);
  if (cfg.mode == RewardMode::kRlpr) {
    b.total = cfg.alpha * r_ref;
    return b;
  }
  b.threshold = threshold_for(cfg, r_ref);
  b.indicator = b.delta_r <= b.threshold ? 1 : 0;
  b.total = cfg.alpha * r_ref + cfg.beta * b.delta_r * b.indicator;
  return b;
}

/// Scores one rollout. The reference answer and the generated answer are both
/// teacher-forced after the rollout's own prefix up to and including
/// <answer>, so they share the reasoning trace z.
inline RewardBreakdown score_rollout(const RewardConfig& cfg,
                                     const PolicyParams& policy,
                                     const TaskInstance& task,
                                     const Rollout& rollout) {
  RewardBreakdown b;
  if (!rollout.scorable()) {
    b.malformed = true;
    return b;
  }
  const TokenSeq answer = rollout.answer();
  if (cfg.mode == RewardMode::kRule) {
    b.total = rule_verifier(task, answer);
    return b;
  }
  TokenSeq context = rollout.prompt;
  context.insert(context.end(), rollout.tokens.begin(),
                 rollout.tokens.begin() + rollout.y_span.begin);
  const double r_ref = mean_token_prob(score_sequence(policy, context, task.reference));
  const double r_gen = mean_token_prob(score_sequence(policy, context, answer));
  return combined_reward(cfg, r_ref, r_gen);
}

}  // namespace darl

#endif  // DARL_REWARD_HPP_
