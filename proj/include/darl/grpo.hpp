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

#ifndef DARL_GRPO_HPP_
#define DARL_GRPO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darl/error.hpp"
#include "darl/policy.hpp"
#include "darl/reward.hpp"
#include "darl/rng.hpp"
#include "darl/rollout.hpp"
#include "darl/task_env.hpp"

namespace darl {

enum class AdvantageNorm { kStd, kMeanOnly };

/// Group-relative policy optimisation settings. There is deliberately no KL
/// coefficient: updates are regulated by asymmetric ratio clipping alone.
struct TrainConfig {
  int group_size = 8;
  int prompts_per_step = 16;
  /// Prompts per surrogate update; prompts_per_step / minibatch updates run
  /// per sampled batch.
  int minibatch = 4;
  double clip_low = 0.2;
  double clip_high = 0.27;
  OptimizerConfig optimizer;
  int max_steps = 300;
  RewardConfig reward;
  std::uint64_t seed = 1;
  int max_rollout_len = 12;
  double temperature = 1.0;
  AdvantageNorm advantage_norm = AdvantageNorm::kStd;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, m); };
    if (group_size < 2) bad("train.group_size must be >= 2");
    if (prompts_per_step < 1) bad("train.prompts_per_step must be >= 1");
    if (minibatch < 1 || prompts_per_step % minibatch != 0) {
      bad("train.minibatch must divide train.prompts_per_step");
    }
    if (!(clip_low > 0.0 && clip_low < 1.0)) bad("train.clip_low must lie in (0,1)");
    if (!(clip_high > 0.0)) bad("train.clip_high must be > 0");
    if (!(optimizer.lr >= 0.0)) bad("train.lr must be >= 0");
    if (max_steps < 0) bad("train.max_steps must be >= 0");
    if (max_rollout_len < 1) bad("train.max_rollout_len must be >= 1");
    if (!(temperature > 0.0)) bad("train.temperature must be > 0");
    reward.validate();
  }
};

struct GroupBatch {
  std::string task_id;
  std::vector<Rollout> rollouts;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

/// a_i = (r_i - mean) / (std + 1e-8) with population std; all zeros when the
/// group has (numerically) no spread. kMeanOnly skips the division.
inline std::vector<double> group_advantages(std::span<const double> rewards,
                                            AdvantageNorm norm = AdvantageNorm::kStd) {
  if (rewards.size() < 2) {
    throw Error(ErrorCode::kGroupTooSmall,
                "need at least 2 rewards, got " + std::to_string(rewards.size()));
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sd < 1e-12) return adv;
  const double denom = norm == AdvantageNorm::kStd ? sd + 1e-8 : 1.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

/// Reward breakdown for each rollout of one prompt. Malformed rollouts get
/// reward 0 and carry breakdown.malformed.
inline std::vector<RewardBreakdown> score_group(const RewardConfig& cfg,
                                                const PolicyParams& policy,
                                                const TaskInstance& task,
                                                std::span<const Rollout> rollouts) {
  std::vector<RewardBreakdown> out;
  out.reserve(rollouts.size());
  for (const Rollout& r : rollouts) out.push_back(score_rollout(cfg, policy, task, r));
  return out;
}

inline std::vector<double> compute_group_rewards(const TrainConfig& cfg,
                                                 const PolicyParams& policy,
                                                 const TaskInstance& task,
                                                 std::span<const Rollout> rollouts) {
  std::vector<double> rewards;
  for (const auto& b : score_group(cfg.reward, policy, task, rollouts)) {
    rewards.push_back(b.total);
  }
  return rewards;
}

struct SurrogateResult {
  std::vector<double> gradient;
  double objective = 0.0;
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;

  double clip_fraction() const {
    return tokens ? static_cast<double>(clipped_tokens) / tokens : 0.0;
  }
};

/// Gradient of the token-mean clipped surrogate
///   sum_i sum_t min(rho a_i, clip(rho, 1 - clip_low, 1 + clip_high) a_i) / N
/// over every generated token of every rollout in `groups`, where
/// rho = exp(logprob_now - logprob_old) and N is the total token count.
/// A token counts as clipped when the clipped branch is the smaller one.
inline SurrogateResult clipped_surrogate_grad(const PolicyParams& policy,
                                              std::span<const GroupBatch> groups,
                                              double clip_low, double clip_high) {
  SurrogateResult res;
  res.gradient.assign(policy.values.size(), 0.0);
  for (const auto& g : groups) {
    for (const auto& r : g.rollouts) res.tokens += r.tokens.size();
  }
  if (res.tokens == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(res.tokens);
  const double lo = 1.0 - clip_low, hi = 1.0 + clip_high;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const Rollout& r = g.rollouts[i];
      const double adv = g.advantages.at(i);
      const TokenSeq seq = detail::concat(r.prompt, r.tokens);
      auto weight = [&](std::size_t t, double logprob) {
        const double ratio = std::exp(logprob - r.logprob_old[t]);
        if (!std::isfinite(ratio)) {
          throw Error(ErrorCode::kNonfiniteRatio,
                      "rollout " + r.task_id + " token " + std::to_string(t));
        }
        const double unclipped = ratio * adv;
        const double clipped = std::clamp(ratio, lo, hi) * adv;
        if (clipped < unclipped) {
          res.objective += clipped * inv_n;
          ++res.clipped_tokens;
          return 0.0;
        }
        res.objective += unclipped * inv_n;
        return adv * ratio * inv_n;
      };
      detail::accumulate_logprob_grad(policy, seq, r.prompt.size(), weight,
                                      res.gradient);
    }
  }
  return res;
}

inline SurrogateResult clipped_surrogate_grad(const PolicyParams& policy,
                                              const GroupBatch& group,
                                              double clip_low, double clip_high) {
  return clipped_surrogate_grad(policy, std::span<const GroupBatch>(&group, 1),
                                clip_low, clip_high);
}

/// Optional probe measurements attached to a step record.
struct ProbeFields {
  double mean_ref_loglik = 0.0;
  double mean_variant_loglik = 0.0;
  double probe_entropy = 0.0;
  std::size_t probe_rollout_count = 0;
};

struct StepMetrics {
  int step = 0;
  double mean_total_reward = 0.0;
  double mean_r_ref = 0.0;
  double mean_delta_r = 0.0;
  double indicator_rate = 0.0;
  double mean_threshold = 0.0;
  double policy_entropy = 0.0;
  double clip_fraction = 0.0;
  double first_minibatch_clip_fraction = 0.0;
  double malformed_rate = 0.0;
  double pass_rate = 0.0;
  std::optional<ProbeFields> probe;
};

struct TrainState {
  PolicyParams params;
  Optimizer optimizer;
  Rng rng;
  int step = 0;
};

/// One GRPO step on `batch`: sample group_size rollouts per prompt under the
/// current policy, score them, normalise rewards within each group, then run
/// one clipped-surrogate update per minibatch of prompts, ratios recomputed
/// against the evolving parameters.
inline StepMetrics train_step(TrainState& state, std::span<const TaskInstance> batch,
                              const TrainConfig& cfg, const Vocab& vocab) {
  const PolicyParams behaviour = state.params;
  // Each rollout draws from its own stream, so a token that flips in one
  // rollout does not shift the randomness of the others.
  const std::uint64_t base = state.rng.next_u64();
  std::vector<GroupBatch> groups(batch.size());
  for (std::size_t p = 0; p < batch.size(); ++p) {
    GroupBatch& g = groups[p];
    g.task_id = batch[p].task_id;
    for (int i = 0; i < cfg.group_size; ++i) {
      Rng rr = Rng::derived(base, p * static_cast<std::size_t>(cfg.group_size) +
                                      static_cast<std::size_t>(i));
      Rollout r = sample_rollout(behaviour, batch[p].prompt, cfg.max_rollout_len,
                                 cfg.temperature, rr, vocab);
      r.task_id = g.task_id;
      g.rollouts.push_back(std::move(r));
    }
  }

  StepMetrics m;
  m.step = state.step;
  std::size_t n_rollouts = 0, n_scored = 0, n_malformed = 0, n_pass = 0;
  EntropyStats ent;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    GroupBatch& g = groups[p];
    g.breakdowns = score_group(cfg.reward, behaviour, batch[p], g.rollouts);
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const auto& b = g.breakdowns[i];
      g.rewards.push_back(b.total);
      m.mean_total_reward += b.total;
      ++n_rollouts;
      if (b.malformed) {
        ++n_malformed;
        continue;
      }
      ++n_scored;
      n_pass += rule_verifier(batch[p], g.rollouts[i].answer());
      m.mean_r_ref += b.r_ref;
      m.mean_delta_r += b.delta_r;
      m.mean_threshold += b.threshold;
      m.indicator_rate += b.indicator;
    }
    g.advantages = group_advantages(g.rewards, cfg.advantage_norm);
    ent += entropy_stats(behaviour, g.rollouts);
    if (cfg.temperature != 1.0) {
      for (auto& r : g.rollouts) {
        r.logprob_old = token_logprobs(behaviour, detail::concat(r.prompt, r.tokens),
                                       r.prompt.size());
      }
    }
  }
  if (n_rollouts) {
    m.mean_total_reward /= n_rollouts;
    m.malformed_rate = static_cast<double>(n_malformed) / n_rollouts;
    m.pass_rate = static_cast<double>(n_pass) / n_rollouts;
  }
  if (n_scored) {
    m.mean_r_ref /= n_scored;
    m.mean_delta_r /= n_scored;
    m.mean_threshold /= n_scored;
    m.indicator_rate /= n_scored;
  }
  m.policy_entropy = ent.mean();

  std::size_t tokens = 0, clipped = 0;
  const std::size_t mb = static_cast<std::size_t>(cfg.minibatch);
  for (std::size_t start = 0; start < groups.size(); start += mb) {
    const std::size_t len = std::min(mb, groups.size() - start);
    try {
      auto res = clipped_surrogate_grad(
          state.params, std::span<const GroupBatch>(groups.data() + start, len),
          cfg.clip_low, cfg.clip_high);
      if (start == 0) m.first_minibatch_clip_fraction = res.clip_fraction();
      tokens += res.tokens;
      clipped += res.clipped_tokens;
      state.params = state.optimizer.step(state.params, res.gradient);
    } catch (const Error& e) {
      throw Error(e.code(), e.detail() + " at step " +
                                std::to_string(state.step));
    }
  }
  m.clip_fraction = tokens ? static_cast<double>(clipped) / tokens : 0.0;
  ++state.step;
  return m;
}

}  // namespace darl

#endif  // DARL_GRPO_HPP_
