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

#ifndef DARL_EXPERIMENT_HPP_
#define DARL_EXPERIMENT_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darl/diagnostics.hpp"
#include "darl/error.hpp"
#include "darl/grpo.hpp"
#include "darl/policy.hpp"
#include "darl/rng.hpp"
#include "darl/task_env.hpp"

namespace darl {

/// Supervised warm start on formatted demonstrations
///   <think> trace </think> <answer> y </answer> <end>
/// where y is the reference with probability `reference_weight` and otherwise
/// a uniformly chosen other class member. RL then starts from a policy that
/// already follows the tag protocol.
struct WarmStartConfig {
  int steps = 3000;
  int batch = 16;
  double lr = 0.01;
  double reference_weight = 0.55;
  /// Prefix each demonstration trace with a random discourse filler ("so",
  /// "then", "ok") when the vocab has them, so traces are not a deterministic
  /// function of the prompt.
  bool trace_fillers = true;
  /// Extra prompts, disjoint from every other split, seen only by the warm
  /// start. They stand in for the breadth of pretraining; RL never sees them.
  int extra_tasks = 504;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, m); };
    if (steps < 0) bad("warm_start.steps must be >= 0");
    if (batch < 1) bad("warm_start.batch must be >= 1");
    if (extra_tasks < 0) bad("warm_start.extra_tasks must be >= 0");
    if (!(lr >= 0.0)) bad("warm_start.lr must be >= 0");
    if (!(reference_weight >= 0.0 && reference_weight <= 1.0)) {
      bad("warm_start.reference_weight must lie in [0,1]");
    }
  }
};

struct ProbeConfig {
  int every = 10;
  int rollouts_per_task = 8;
  LoglikNorm norm = LoglikNorm::kPerToken;
};

struct EvalConfig {
  int samples_per_task = 64;
};

struct RunConfig {
  std::string run_name = "run";
  std::string output_dir = "runs";
  TaskFamilyConfig tasks;
  int heldout_tasks = 32;
  int eval_tasks = 64;
  PolicyArch arch;
  WarmStartConfig warm_start;
  TrainConfig train;
  ProbeConfig probe;
  EvalConfig eval;
  int checkpoint_every = 0;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, m); };
    if (tasks.num_tasks < 1) bad("tasks.num_tasks must be >= 1");
    if (tasks.class_size < 1) bad("tasks.class_size must be >= 1");
    if (heldout_tasks < 1) bad("tasks.heldout must be >= 1");
    if (eval_tasks < 0) bad("tasks.eval must be >= 0");
    if (arch.embed_dim < 1 || arch.context < 1 || arch.hidden < 0) {
      bad("policy architecture dimensions must be positive");
    }
    if (probe.every < 1) bad("probe.every must be >= 1");
    if (probe.rollouts_per_task < 1) bad("probe.rollouts_per_task must be >= 1");
    if (eval.samples_per_task < 1) bad("eval.samples_per_task must be >= 1");
    if (checkpoint_every < 0) bad("checkpoint_every must be >= 0");
    warm_start.validate();
    train.validate();
  }
};

/// Salts of the independent random streams of a run.
enum class Stream : std::uint64_t {
  kInit = 1,
  kWarmStart = 2,
  kTrain = 3,
  kBatch = 4,
  kProbe = 5,
  kEval = 6,
};

inline Rng stream(std::uint64_t seed, Stream s, std::uint64_t sub = 0) {
  return Rng::derived(seed, static_cast<std::uint64_t>(s) * 0x100000000ULL + sub);
}

/// Training, probe and evaluation prompt sets drawn disjointly from one
/// generator call.
struct TaskSplit {
  Vocab vocab;
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> probe;
  std::vector<TaskInstance> eval;
  /// Warm-start-only prompts.
  std::vector<TaskInstance> extra;
};

inline TaskSplit make_task_split(const RunConfig& cfg) {
  Vocab vocab = make_vocab(cfg.tasks.family);
  TaskFamilyConfig all = cfg.tasks;
  all.num_tasks = cfg.tasks.num_tasks + cfg.heldout_tasks + cfg.eval_tasks +
                  cfg.warm_start.extra_tasks;
  auto tasks = generate_tasks(all, vocab);
  TaskSplit split{vocab, {}, {}, {}, {}};
  auto it = tasks.begin();
  auto take = [&](std::vector<TaskInstance>& dst, int n) {
    dst.assign(it, it + n);
    it += n;
  };
  take(split.train, cfg.tasks.num_tasks);
  take(split.probe, cfg.heldout_tasks);
  take(split.eval, cfg.eval_tasks);
  take(split.extra, cfg.warm_start.extra_tasks);
  return split;
}

inline TokenSeq demonstration(TaskFamily family, const Vocab& vocab,
                              const TaskInstance& task, const TokenSeq& answer,
                              std::optional<Token> filler = std::nullopt) {
  TokenSeq out{Vocab::kThinkOpen};
  if (filler) out.push_back(*filler);
  const TokenSeq trace = reasoning_trace(family, vocab, task.prompt);
  out.insert(out.end(), trace.begin(), trace.end());
  out.push_back(Vocab::kThinkClose);
  out.push_back(Vocab::kAnswerOpen);
  out.insert(out.end(), answer.begin(), answer.end());
  out.push_back(Vocab::kAnswerClose);
  out.push_back(Vocab::kEnd);
  return out;
}

/// Maximum-likelihood warm start with Adam; returns the adapted parameters.
inline PolicyParams warm_start(PolicyParams params, std::span<const TaskInstance> tasks,
                               TaskFamily family, const Vocab& vocab,
                               const WarmStartConfig& cfg, Rng rng) {
  if (cfg.steps == 0 || tasks.empty()) return params;
  Optimizer opt({OptimizerKind::kAdam, cfg.lr});
  std::vector<Token> fillers;
  if (cfg.trace_fillers) {
    for (const char* f : {"so", "then", "ok"}) {
      if (auto t = vocab.find(f)) fillers.push_back(*t);
    }
  }
  std::vector<double> grad(params.values.size());
  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::size_t tokens = 0;
    std::vector<TokenSeq> seqs;
    std::vector<std::size_t> starts;
    for (int b = 0; b < cfg.batch; ++b) {
      const TaskInstance& task = tasks[rng.uniform_int(tasks.size())];
      const auto& cls = task.equivalence_class;
      TokenSeq answer = task.reference;
      if (cls.size() > 1 && rng.uniform01() >= cfg.reference_weight) {
        answer = cls[1 + rng.uniform_int(cls.size() - 1)];
      }
      TokenSeq seq = task.prompt;
      std::optional<Token> filler;
      if (!fillers.empty()) filler = fillers[rng.uniform_int(fillers.size())];
      const TokenSeq demo = demonstration(family, vocab, task, answer, filler);
      seq.insert(seq.end(), demo.begin(), demo.end());
      tokens += demo.size();
      starts.push_back(task.prompt.size());
      seqs.push_back(std::move(seq));
    }
    const double w = 1.0 / static_cast<double>(tokens);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      detail::accumulate_logprob_grad(
          params, seqs[i], starts[i], [w](std::size_t, double) { return w; }, grad);
    }
    params = opt.step(params, grad);
  }
  return params;
}

/// Prompts of one training step: a fresh random subset of the training set.
inline std::vector<TaskInstance> pick_batch(std::span<const TaskInstance> tasks,
                                            int count, Rng& rng) {
  std::vector<std::size_t> idx(tasks.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<TaskInstance> out;
  const std::size_t n = std::min<std::size_t>(count, idx.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(idx[i], idx[i + rng.uniform_int(idx.size() - i)]);
    out.push_back(tasks[idx[i]]);
  }
  return out;
}

/// Probe of the held-out prompts with a stream keyed by (seed, step), so
/// repeated probes of one checkpoint agree and training randomness is never
/// consumed.
inline ProbeFields run_probe(const PolicyParams& params, const TaskSplit& split,
                             const RunConfig& cfg, int step) {
  Rng rng = stream(cfg.train.seed, Stream::kProbe, static_cast<std::uint64_t>(step));
  ProbeSettings s{cfg.probe.rollouts_per_task, cfg.train.max_rollout_len,
                  cfg.train.temperature, cfg.probe.norm};
  const auto rollouts = sample_probe_rollouts(params, split.probe, s, rng, split.vocab);
  const DiversityProbe d = probe_diversity_on(params, split.probe, rollouts, s.norm);
  EntropyStats ent;
  for (const auto& g : rollouts) ent += entropy_stats(params, g);
  return {d.mean_ref_loglik, d.mean_variant_loglik, ent.mean(), d.probe_rollout_count};
}

struct RunResult {
  std::vector<StepMetrics> metrics;
  PolicyParams final_params;
  PolicyParams initial_params;
  AnswerEvaluation evaluation;
};

struct RunHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(int step, const PolicyParams&)> on_checkpoint;
  /// Called with the parameters entering each step.
  std::function<void(int step, const PolicyParams&)> on_params;
};

inline PolicyArch resolve_arch(const RunConfig& cfg, const Vocab& vocab) {
  PolicyArch a = cfg.arch;
  a.vocab_size = vocab.size();
  return a;
}

/// Initial policy of a run: seeded init followed by the warm start.
inline PolicyParams initial_policy(const RunConfig& cfg, const TaskSplit& split) {
  PolicyParams p = init_params(resolve_arch(cfg, split.vocab),
                               stream(cfg.train.seed, Stream::kInit).next_u64());
  std::vector<TaskInstance> pool = split.train;
  pool.insert(pool.end(), split.extra.begin(), split.extra.end());
  return warm_start(std::move(p), pool, cfg.tasks.family, split.vocab,
                    cfg.warm_start, stream(cfg.train.seed, Stream::kWarmStart));
}

/// Full run: warm start, max_steps GRPO steps with periodic probes, then
/// held-out answer evaluation. Pure function of the config.
inline RunResult run_training(const RunConfig& cfg, const RunHooks& hooks = {}) {
  cfg.validate();
  const TaskSplit split = make_task_split(cfg);
  RunResult result;
  result.initial_params = initial_policy(cfg, split);
  TrainState state{result.initial_params, Optimizer(cfg.train.optimizer),
                   stream(cfg.train.seed, Stream::kTrain), 0};
  Rng batch_rng = stream(cfg.train.seed, Stream::kBatch);
  for (int step = 0; step < cfg.train.max_steps; ++step) {
    if (hooks.on_params) hooks.on_params(step, state.params);
    std::optional<ProbeFields> probe;
    if (step % cfg.probe.every == 0) probe = run_probe(state.params, split, cfg, step);
    const auto batch = pick_batch(split.train, cfg.train.prompts_per_step, batch_rng);
    StepMetrics m = train_step(state, batch, cfg.train, split.vocab);
    m.probe = probe;
    if (hooks.on_step) hooks.on_step(m);
    result.metrics.push_back(m);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        hooks.on_checkpoint) {
      hooks.on_checkpoint(step + 1, state.params);
    }
  }
  result.final_params = state.params;
  if (!split.eval.empty()) {
    Rng eval_rng = stream(cfg.train.seed, Stream::kEval);
    result.evaluation = evaluate_answers(state.params, split.eval,
                                         cfg.eval.samples_per_task,
                                         cfg.train.max_rollout_len, eval_rng, split.vocab);
  }
  return result;
}

}  // namespace darl

#endif  // DARL_EXPERIMENT_HPP_
