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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "darl/diagnostics.hpp"
#include "darl/error.hpp"
#include "darl/experiment.hpp"
#include "oracles.hpp"

namespace darl {
namespace {

class Probe : public ::testing::Test {
 protected:
  Vocab vocab = make_vocab(TaskFamily::kModArith);
  std::vector<TaskInstance> tasks;

  void SetUp() override {
    TaskFamilyConfig cfg;
    cfg.num_tasks = 3;
    cfg.seed = 4;
    tasks = generate_tasks(cfg, vocab);
  }
};

TEST_F(Probe, UniformPolicyGivesMinusLogV) {
  const PolicyParams uniform(PolicyArch{32, 4, 6, 8});
  Rng rng(1);
  const DiversityProbe d = probe_diversity(uniform, tasks, {8, 12, 1.0}, rng, vocab);
  EXPECT_NEAR(d.mean_ref_loglik, -std::log(32.0), 1e-12);
  EXPECT_NEAR(d.mean_variant_loglik, -std::log(32.0), 1e-12);
  EXPECT_EQ(d.probe_rollout_count, 24u);
  Rng rng2(1);
  EXPECT_NEAR(entropy_probe(uniform, tasks, {8, 12, 1.0}, rng2, vocab), std::log(32.0),
              1e-12);
}

TEST_F(Probe, SaturatedReferencePolicy) {
  // Every task here shares no reference token with its variants' first
  // token, so a policy that always emits the reference token gives the
  // reference log-likelihood ~0 and the variants a very negative one.
  TaskInstance t = tasks[0];
  PolicyParams p(PolicyArch{32, 2, 3, 0});
  const ParamLayout L(p.arch);
  p.values[L.b2 + t.reference[0]] = 40.0;
  std::vector<TaskInstance> one = {t};
  Rng rng(2);
  const DiversityProbe d = probe_diversity(p, one, {4, 6, 1.0}, rng, vocab);
  EXPECT_GT(d.mean_ref_loglik, -1e-12);
  EXPECT_LT(d.mean_variant_loglik, -10.0);
}

TEST_F(Probe, MatchesPerSequenceOracle) {
  const PolicyParams p = init_params(PolicyArch{32, 4, 6, 8}, 12, 0.9);
  std::vector<std::vector<Rollout>> rollouts(tasks.size());
  const char* texts[] = {"<think> 1 2 mod 5 </think> <answer> 2 </answer>",
                         "<think> 7 </think> 3 <answer> 3 </answer>", "so then ok"};
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (const char* text : texts) {
      Rollout r;
      r.prompt = tasks[t].prompt;
      r.tokens = vocab.encode(text);
      attach_parse(r, vocab);
      rollouts[t].push_back(r);
    }
  }
  const DiversityProbe d = probe_diversity_on(p, tasks, rollouts);
  // The oracle rebuilds each answer context from the rollout text by hand.
  const std::string ctx_suffix[] = {"<think> 1 2 mod 5 </think> <answer>",
                                    "<think> 7 </think> <answer>",
                                    "<think> </think> <answer>"};
  double ref = 0.0, var = 0.0;
  int pairs = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (const auto& suffix : ctx_suffix) {
      TokenSeq ctx = tasks[t].prompt;
      const TokenSeq tail = vocab.encode(suffix);
      ctx.insert(ctx.end(), tail.begin(), tail.end());
      const auto& cls = tasks[t].equivalence_class;
      ref += oracle::sequence_logprob(p, ctx, cls[0]) / cls[0].size();
      double v = 0.0;
      for (std::size_t k = 1; k < cls.size(); ++k) {
        v += oracle::sequence_logprob(p, ctx, cls[k]) / cls[k].size();
      }
      var += v / (cls.size() - 1);
      ++pairs;
    }
  }
  EXPECT_NEAR(d.mean_ref_loglik, ref / pairs, 1e-9);
  EXPECT_NEAR(d.mean_variant_loglik, var / pairs, 1e-9);
  EXPECT_LE(d.mean_ref_loglik, 0.0);
  EXPECT_LE(d.mean_variant_loglik, 0.0);

  const DiversityProbe seq = probe_diversity_on(p, tasks, rollouts, LoglikNorm::kPerSequence);
  EXPECT_LE(seq.mean_variant_loglik, d.mean_variant_loglik);
}

TEST_F(Probe, SingletonClassesOnly) {
  for (auto& t : tasks) t.equivalence_class.resize(1);
  const PolicyParams p(PolicyArch{32, 4, 6, 8});
  Rng rng(3);
  try {
    probe_diversity(p, tasks, {2, 6, 1.0}, rng, vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoVariants);
  }
}

TEST_F(Probe, RepeatableWithSameSeed) {
  const PolicyParams p = init_params(PolicyArch{32, 4, 6, 8}, 5, 0.9);
  Rng a(77), b(77);
  EXPECT_EQ(entropy_probe(p, tasks, {8, 12, 1.0}, a, vocab),
            entropy_probe(p, tasks, {8, 12, 1.0}, b, vocab));
}

std::vector<StepMetrics> trace(std::size_t n, double entropy_offset, double var_offset) {
  std::vector<StepMetrics> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].step = static_cast<int>(i);
    out[i].policy_entropy = 1.0 / (1.0 + i) + entropy_offset;
    if (i % 10 == 0) {
      out[i].probe = ProbeFields{-1.0, -2.0 + 0.01 * i + var_offset, 0.5, 8};
    }
  }
  return out;
}

TEST(CompareTraces, SelfComparisonIsZero) {
  const auto a = trace(100, 0.0, 0.0);
  const TraceComparison c = compare_traces(a, a, 25);
  ASSERT_EQ(c.windows.size(), 4u);
  for (const auto& w : c.windows) {
    EXPECT_EQ(w.entropy_gap, 0.0);
    EXPECT_EQ(w.variant_gap, 0.0);
  }
  EXPECT_EQ(c.entropy_gap_sign(), 0);
}

TEST(CompareTraces, ConstantOffset) {
  const auto a = trace(100, 0.1, 0.1);
  const auto b = trace(100, 0.0, 0.0);
  const TraceComparison c = compare_traces(a, b, 20);
  for (const auto& w : c.windows) {
    EXPECT_NEAR(w.entropy_gap, 0.1, 1e-12);
    EXPECT_NEAR(w.variant_gap, 0.1, 1e-12);
  }
  EXPECT_EQ(c.entropy_gap_sign(), 1);
  EXPECT_EQ(compare_traces(b, a, 20).variant_gap_sign(), -1);
}

TEST(CompareTraces, GridMismatch) {
  const auto a = trace(100, 0.0, 0.0);
  auto b = trace(90, 0.0, 0.0);
  EXPECT_THROW(compare_traces(a, b, 10), Error);
  b = a;
  b[50].step = 51;
  try {
    compare_traces(a, b, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGridMismatch);
  }
}

double spearman(const std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return y[a] < y[b]; });
  std::vector<double> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[idx[r]] = static_cast<double>(r);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rank[i] - i) * (rank[i] - i);
  return 1.0 - 6.0 * d2 / (n * (static_cast<double>(n) * n - 1.0));
}

// Pure RLPR on a small memorisation set collapses the sampling distribution.
TEST(EntropyTrace, RlprCollapseTrendsDownward) {
  RunConfig c;
  c.tasks.num_tasks = 16;
  c.heldout_tasks = 8;
  c.eval_tasks = 0;
  c.arch = PolicyArch{0, 8, 8, 64};
  c.warm_start.steps = 400;
  c.warm_start.extra_tasks = 0;
  c.train.max_steps = 80;
  c.train.reward = RewardConfig{RewardMode::kRlpr, 1.0, 0.0};
  const RunResult r = run_training(c);
  std::vector<double> ent;
  for (const auto& m : r.metrics) ent.push_back(m.policy_entropy);
  EXPECT_LT(spearman(ent), 0.0);
}

TEST(Evaluate, RatesAreBounded) {
  const Vocab vocab = make_vocab(TaskFamily::kModArith);
  TaskFamilyConfig cfg;
  cfg.num_tasks = 4;
  const auto tasks = generate_tasks(cfg, vocab);
  const PolicyParams p(PolicyArch{32, 4, 6, 8});
  Rng rng(1);
  const AnswerEvaluation e = evaluate_answers(p, tasks, 16, 12, rng, vocab);
  EXPECT_GE(e.pass_rate, 0.0);
  EXPECT_LE(e.pass_rate, 1.0);
  EXPECT_GE(e.coverage, 0.0);
  EXPECT_LE(e.coverage, 1.0);
  EXPECT_DOUBLE_EQ(e.combined(), 0.5 * (e.pass_rate + e.coverage));
}

}  // namespace
}  // namespace darl
