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

#ifndef DARL_DIAGNOSTICS_HPP_
#define DARL_DIAGNOSTICS_HPP_

#include <cmath>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "darl/error.hpp"
#include "darl/grpo.hpp"
#include "darl/policy.hpp"
#include "darl/rng.hpp"
#include "darl/rollout.hpp"
#include "darl/task_env.hpp"

namespace darl {

enum class LoglikNorm { kPerToken, kPerSequence };

struct DiversityProbe {
  int step = 0;
  double mean_ref_loglik = 0.0;
  double mean_variant_loglik = 0.0;
  std::size_t probe_rollout_count = 0;
};

struct ProbeSettings {
  int rollouts_per_task = 8;
  int max_len = 12;
  double temperature = 1.0;
  LoglikNorm norm = LoglikNorm::kPerToken;
};

/// Samples `rollouts_per_task` completions per task; rollouts[t] belongs to
/// tasks[t].
inline std::vector<std::vector<Rollout>> sample_probe_rollouts(
    const PolicyParams& policy, std::span<const TaskInstance> tasks,
    const ProbeSettings& s, Rng& rng, const Vocab& vocab) {
  std::vector<std::vector<Rollout>> out(tasks.size());
  const std::uint64_t base = rng.next_u64();
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (int i = 0; i < s.rollouts_per_task; ++i) {
      Rng rr = Rng::derived(base, t * static_cast<std::size_t>(s.rollouts_per_task) +
                                      static_cast<std::size_t>(i));
      Rollout r = sample_rollout(policy, tasks[t].prompt, s.max_len, s.temperature,
                                 rr, vocab);
      r.task_id = tasks[t].task_id;
      out[t].push_back(std::move(r));
    }
  }
  return out;
}

/// Prefix an answer is scored after: the rollout's own tokens through
/// <answer>. Rollouts without that structure fall back to their reasoning
/// span (empty when absent) wrapped in canonical tags.
inline TokenSeq answer_context(const Rollout& r) {
  TokenSeq ctx = r.prompt;
  if (r.well_formed) {
    ctx.insert(ctx.end(), r.tokens.begin(), r.tokens.begin() + r.y_span.begin);
    return ctx;
  }
  ctx.push_back(Vocab::kThinkOpen);
  ctx.insert(ctx.end(), r.tokens.begin() + r.z_span.begin,
             r.tokens.begin() + r.z_span.end);
  ctx.push_back(Vocab::kThinkClose);
  ctx.push_back(Vocab::kAnswerOpen);
  return ctx;
}

/// Average log-likelihood of the reference and of the non-reference class
/// members, each teacher-forced after every probe rollout's reasoning.
/// Tasks with a singleton class are skipped.
inline DiversityProbe probe_diversity_on(
    const PolicyParams& policy, std::span<const TaskInstance> tasks,
    const std::vector<std::vector<Rollout>>& rollouts,
    LoglikNorm norm = LoglikNorm::kPerToken) {
  auto loglik = [&](const TokenSeq& ctx, const TokenSeq& answer) {
    const double total = score_sequence(policy, ctx, answer).total_logprob;
    return norm == LoglikNorm::kPerToken ? total / static_cast<double>(answer.size())
                                         : total;
  };
  DiversityProbe probe;
  std::size_t pairs = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const TaskInstance& task = tasks[t];
    probe.probe_rollout_count += rollouts[t].size();
    if (task.equivalence_class.size() < 2) continue;
    for (const Rollout& r : rollouts[t]) {
      const TokenSeq ctx = answer_context(r);
      probe.mean_ref_loglik += loglik(ctx, task.reference);
      double v = 0.0;
      std::size_t nv = 0;
      for (const TokenSeq& member : task.equivalence_class) {
        if (member == task.reference) continue;
        v += loglik(ctx, member);
        ++nv;
      }
      probe.mean_variant_loglik += v / static_cast<double>(nv);
      ++pairs;
    }
  }
  if (pairs == 0) {
    throw Error(ErrorCode::kNoVariants,
                "every probed task has a singleton equivalence class");
  }
  probe.mean_ref_loglik /= static_cast<double>(pairs);
  probe.mean_variant_loglik /= static_cast<double>(pairs);
  return probe;
}

inline DiversityProbe probe_diversity(const PolicyParams& policy,
                                      std::span<const TaskInstance> tasks,
                                      const ProbeSettings& s, Rng& rng,
                                      const Vocab& vocab) {
  if (s.rollouts_per_task < 1) {
    throw Error(ErrorCode::kInvalidConfig, "rollouts_per_task must be >= 1");
  }
  return probe_diversity_on(policy, tasks,
                            sample_probe_rollouts(policy, tasks, s, rng, vocab),
                            s.norm);
}

/// Policy entropy over freshly sampled rollouts of the probe prompts.
inline double entropy_probe(const PolicyParams& policy,
                            std::span<const TaskInstance> tasks,
                            const ProbeSettings& s, Rng& rng, const Vocab& vocab) {
  EntropyStats st;
  for (const auto& group : sample_probe_rollouts(policy, tasks, s, rng, vocab)) {
    st += entropy_stats(policy, group);
  }
  return st.mean();
}

// ---------------------------------------------------------------------------
// Trace comparison
// ---------------------------------------------------------------------------

struct WindowComparison {
  int first_step = 0;
  int last_step = 0;
  double entropy_a = 0.0;
  double entropy_b = 0.0;
  double entropy_gap = 0.0;
  /// NaN when neither run has a probe record inside the window.
  double variant_a = std::numeric_limits<double>::quiet_NaN();
  double variant_b = std::numeric_limits<double>::quiet_NaN();
  double variant_gap = std::numeric_limits<double>::quiet_NaN();
};

struct TraceComparison {
  std::vector<WindowComparison> windows;

  int entropy_gap_sign() const { return sign_of_last(&WindowComparison::entropy_gap); }
  int variant_gap_sign() const { return sign_of_last(&WindowComparison::variant_gap); }

 private:
  int sign_of_last(double WindowComparison::*field) const {
    for (auto it = windows.rbegin(); it != windows.rend(); ++it) {
      const double g = (*it).*field;
      if (std::isnan(g)) continue;
      return (g > 0.0) - (g < 0.0);
    }
    return 0;
  }
};

/// Windowed means of policy entropy and variant log-likelihood for two runs
/// on the same step grid; gaps are a - b.
inline TraceComparison compare_traces(std::span<const StepMetrics> a,
                                      std::span<const StepMetrics> b, int window) {
  if (window < 1) throw Error(ErrorCode::kInvalidConfig, "window must be >= 1");
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kGridMismatch, "runs have " + std::to_string(a.size()) +
                                              " and " + std::to_string(b.size()) +
                                              " records");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || a[i].probe.has_value() != b[i].probe.has_value()) {
      throw Error(ErrorCode::kGridMismatch,
                  "step grids diverge at record " + std::to_string(i));
    }
  }
  TraceComparison out;
  for (std::size_t start = 0; start < a.size(); start += window) {
    const std::size_t end = std::min(a.size(), start + window);
    WindowComparison w;
    w.first_step = a[start].step;
    w.last_step = a[end - 1].step;
    double va = 0.0, vb = 0.0;
    std::size_t nv = 0;
    for (std::size_t i = start; i < end; ++i) {
      w.entropy_a += a[i].policy_entropy;
      w.entropy_b += b[i].policy_entropy;
      if (a[i].probe) {
        va += a[i].probe->mean_variant_loglik;
        vb += b[i].probe->mean_variant_loglik;
        ++nv;
      }
    }
    const double n = static_cast<double>(end - start);
    w.entropy_a /= n;
    w.entropy_b /= n;
    w.entropy_gap = w.entropy_a - w.entropy_b;
    if (nv) {
      w.variant_a = va / nv;
      w.variant_b = vb / nv;
      w.variant_gap = w.variant_a - w.variant_b;
    }
    out.windows.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Held-out answer evaluation
// ---------------------------------------------------------------------------

struct AnswerEvaluation {
  /// Share of samples whose answer passes rule_verifier (malformed fail).
  double pass_rate = 0.0;
  /// Mean over prompts of |distinct class members emitted| / |class|.
  double coverage = 0.0;
  double combined() const { return 0.5 * (pass_rate + coverage); }
};

inline AnswerEvaluation evaluate_answers(const PolicyParams& policy,
                                         std::span<const TaskInstance> tasks,
                                         int samples_per_task, int max_len,
                                         Rng& rng, const Vocab& vocab,
                                         double temperature = 1.0) {
  AnswerEvaluation ev;
  if (tasks.empty() || samples_per_task < 1) return ev;
  std::size_t passed = 0;
  const std::uint64_t base = rng.next_u64();
  std::uint64_t k = 0;
  for (const TaskInstance& task : tasks) {
    std::set<TokenSeq> seen;
    for (int i = 0; i < samples_per_task; ++i) {
      Rng rr = Rng::derived(base, k++);
      const Rollout r = sample_rollout(policy, task.prompt, max_len, temperature, rr, vocab);
      if (!r.scorable()) continue;
      const TokenSeq y = r.answer();
      if (rule_verifier(task, y)) {
        ++passed;
        seen.insert(y);
      }
    }
    ev.coverage += static_cast<double>(seen.size()) /
                   static_cast<double>(task.equivalence_class.size());
  }
  ev.pass_rate = static_cast<double>(passed) /
                 (static_cast<double>(tasks.size()) * samples_per_task);
  ev.coverage /= static_cast<double>(tasks.size());
  return ev;
}

}  // namespace darl

#endif  // DARL_DIAGNOSTICS_HPP_
