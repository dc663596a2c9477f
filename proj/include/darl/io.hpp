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

#ifndef DARL_IO_HPP_
#define DARL_IO_HPP_

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "darl/diagnostics.hpp"
#include "darl/error.hpp"
#include "darl/experiment.hpp"
#include "darl/grpo.hpp"
#include "darl/policy.hpp"
#include "darl/reward.hpp"
#include "darl/task_env.hpp"
#include "json.hpp"

namespace darl::io {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kMomentum: return "momentum";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

inline std::string_view to_string(AdvantageNorm n) {
  return n == AdvantageNorm::kStd ? "std" : "mean_only";
}

inline std::string_view to_string(LoglikNorm n) {
  return n == LoglikNorm::kPerToken ? "per_token" : "per_sequence";
}

/// Reads one JSON object section. Every key must be consumed; finish()
/// reports the first unknown one with its dotted path.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    static const Json kEmpty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, name(key));
  }

  void get(const char* key, int& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_integer()) fail(name(key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) fail(name(key), "out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(name(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number()) fail(name(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::optional<double>& out) {
    if (const Json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) fail(name(key), "expected a number or null");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const Json* v = take(key)) {
      if (!v->is_boolean()) fail(name(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const Json* v = take(key)) {
      if (!v->is_string()) fail(name(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  /// Enum field parsed from a string via `parse`.
  template <class T, class Parse>
  void get_enum(const char* key, T& out, Parse parse, const char* allowed) {
    std::string s;
    if (!has(key)) {
      seen_.insert(key);
      return;
    }
    get(key, s);
    auto v = parse(s);
    if (!v) fail(name(key), "expected one of " + std::string(allowed) + ", got '" + s + "'");
    out = *v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(name(it.key().c_str()), "unknown key");
    }
  }

 private:
  const Json* take(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string name(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw Error(ErrorCode::kInvalidConfig, field + ": " + msg);
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::optional<OptimizerKind> parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "momentum") return OptimizerKind::kMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  return std::nullopt;
}

inline std::optional<AdvantageNorm> parse_advantage_norm(std::string_view s) {
  if (s == "std") return AdvantageNorm::kStd;
  if (s == "mean_only") return AdvantageNorm::kMeanOnly;
  return std::nullopt;
}

inline std::optional<LoglikNorm> parse_loglik_norm(std::string_view s) {
  if (s == "per_token") return LoglikNorm::kPerToken;
  if (s == "per_sequence") return LoglikNorm::kPerSequence;
  return std::nullopt;
}

}  // namespace detail

/// Parses and validates a run config. Missing keys keep their defaults;
/// unknown keys are rejected with their dotted path.
inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  detail::Section root(j, "");
  root.get("run_name", c.run_name);
  root.get("output_dir", c.output_dir);
  root.get("checkpoint_every", c.checkpoint_every);

  auto tasks = root.sub("tasks");
  tasks.get_enum("family", c.tasks.family, parse_family, "MOD_ARITH, KEY_VALUE, SYNONYM_MAP");
  tasks.get("num_tasks", c.tasks.num_tasks);
  tasks.get("class_size", c.tasks.class_size);
  tasks.get("seed", c.tasks.seed);
  tasks.get("heldout", c.heldout_tasks);
  tasks.get("eval", c.eval_tasks);
  tasks.finish();

  auto policy = root.sub("policy");
  policy.get("embed_dim", c.arch.embed_dim);
  policy.get("context", c.arch.context);
  policy.get("hidden", c.arch.hidden);
  policy.finish();

  auto ws = root.sub("warm_start");
  ws.get("steps", c.warm_start.steps);
  ws.get("batch", c.warm_start.batch);
  ws.get("lr", c.warm_start.lr);
  ws.get("reference_weight", c.warm_start.reference_weight);
  ws.get("trace_fillers", c.warm_start.trace_fillers);
  ws.get("extra_tasks", c.warm_start.extra_tasks);
  ws.finish();

  auto train = root.sub("train");
  train.get("seed", c.train.seed);
  train.get("max_steps", c.train.max_steps);
  train.get("group_size", c.train.group_size);
  train.get("prompts_per_step", c.train.prompts_per_step);
  train.get("minibatch", c.train.minibatch);
  train.get("clip_low", c.train.clip_low);
  train.get("clip_high", c.train.clip_high);
  train.get("max_rollout_len", c.train.max_rollout_len);
  train.get("temperature", c.train.temperature);
  train.get_enum("advantage_norm", c.train.advantage_norm, detail::parse_advantage_norm,
                 "std, mean_only");
  train.get_enum("optimizer", c.train.optimizer.kind, detail::parse_optimizer,
                 "sgd, momentum, adam");
  train.get("lr", c.train.optimizer.lr);
  train.get("momentum", c.train.optimizer.momentum);
  train.get("adam_beta1", c.train.optimizer.beta1);
  train.get("adam_beta2", c.train.optimizer.beta2);
  train.get("adam_eps", c.train.optimizer.eps);
  train.finish();

  auto reward = root.sub("reward");
  reward.get_enum("mode", c.train.reward.mode, parse_reward_mode, "RULE, RLPR, SAD, DAD");
  reward.get("alpha", c.train.reward.alpha);
  reward.get("beta", c.train.reward.beta);
  reward.get("tau", c.train.reward.tau);
  reward.get("gamma", c.train.reward.gamma);
  reward.finish();

  auto probe = root.sub("probe");
  probe.get("every", c.probe.every);
  probe.get("rollouts_per_task", c.probe.rollouts_per_task);
  probe.get_enum("norm", c.probe.norm, detail::parse_loglik_norm, "per_token, per_sequence");
  probe.finish();

  auto eval = root.sub("eval");
  eval.get("samples_per_task", c.eval.samples_per_task);
  eval.finish();

  root.finish();
  c.validate();
  return c;
}

/// Complete config with every field spelled out; config_from_json of the
/// result reproduces `c` exactly.
inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["run_name"] = c.run_name;
  j["output_dir"] = c.output_dir;
  j["checkpoint_every"] = c.checkpoint_every;
  j["tasks"] = {{"family", to_string(c.tasks.family)},
                {"num_tasks", c.tasks.num_tasks},
                {"class_size", c.tasks.class_size},
                {"seed", c.tasks.seed},
                {"heldout", c.heldout_tasks},
                {"eval", c.eval_tasks}};
  j["policy"] = {{"embed_dim", c.arch.embed_dim},
                 {"context", c.arch.context},
                 {"hidden", c.arch.hidden}};
  j["warm_start"] = {{"steps", c.warm_start.steps},
                     {"batch", c.warm_start.batch},
                     {"lr", c.warm_start.lr},
                     {"reference_weight", c.warm_start.reference_weight},
                     {"trace_fillers", c.warm_start.trace_fillers},
                     {"extra_tasks", c.warm_start.extra_tasks}};
  const auto& t = c.train;
  j["train"] = {{"seed", t.seed},
                {"max_steps", t.max_steps},
                {"group_size", t.group_size},
                {"prompts_per_step", t.prompts_per_step},
                {"minibatch", t.minibatch},
                {"clip_low", t.clip_low},
                {"clip_high", t.clip_high},
                {"max_rollout_len", t.max_rollout_len},
                {"temperature", t.temperature},
                {"advantage_norm", detail::to_string(t.advantage_norm)},
                {"optimizer", detail::to_string(t.optimizer.kind)},
                {"lr", t.optimizer.lr},
                {"momentum", t.optimizer.momentum},
                {"adam_beta1", t.optimizer.beta1},
                {"adam_beta2", t.optimizer.beta2},
                {"adam_eps", t.optimizer.eps}};
  Json r = {{"mode", to_string(t.reward.mode)},
            {"alpha", t.reward.alpha},
            {"beta", t.reward.beta}};
  r["tau"] = t.reward.tau ? Json(*t.reward.tau) : Json(nullptr);
  r["gamma"] = t.reward.gamma ? Json(*t.reward.gamma) : Json(nullptr);
  j["reward"] = r;
  j["probe"] = {{"every", c.probe.every},
                {"rollouts_per_task", c.probe.rollouts_per_task},
                {"norm", detail::to_string(c.probe.norm)}};
  j["eval"] = {{"samples_per_task", c.eval.samples_per_task}};
  return j;
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, origin + ": " + e.what());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return config_from_json(parse_json_text(read_file(path), path.string()));
}

inline std::string config_text(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Metrics stream
// ---------------------------------------------------------------------------

inline Json step_record(const StepMetrics& m) {
  return {{"kind", "step"},
          {"step", m.step},
          {"mean_total_reward", m.mean_total_reward},
          {"mean_r_ref", m.mean_r_ref},
          {"mean_delta_r", m.mean_delta_r},
          {"indicator_rate", m.indicator_rate},
          {"mean_threshold", m.mean_threshold},
          {"policy_entropy", m.policy_entropy},
          {"clip_fraction", m.clip_fraction},
          {"first_minibatch_clip_fraction", m.first_minibatch_clip_fraction},
          {"malformed_rate", m.malformed_rate},
          {"pass_rate", m.pass_rate}};
}

inline Json probe_record(int step, const ProbeFields& p) {
  return {{"kind", "probe"},
          {"step", step},
          {"mean_ref_loglik", p.mean_ref_loglik},
          {"mean_variant_loglik", p.mean_variant_loglik},
          {"probe_entropy", p.probe_entropy},
          {"probe_rollout_count", p.probe_rollout_count}};
}

inline Json eval_record(const AnswerEvaluation& e, int tasks, int samples) {
  return {{"kind", "eval"},
          {"tasks", tasks},
          {"samples_per_task", samples},
          {"pass_rate", e.pass_rate},
          {"coverage", e.coverage},
          {"combined", e.combined()}};
}

/// Lines for one step: the step record, then its probe record if any.
inline std::string metrics_lines(const StepMetrics& m) {
  std::string s = step_record(m).dump() + "\n";
  if (m.probe) s += probe_record(m.step, *m.probe).dump() + "\n";
  return s;
}

struct MetricsFile {
  std::vector<StepMetrics> steps;
  std::optional<AnswerEvaluation> evaluation;
};

inline MetricsFile parse_metrics(std::istream& in, const std::string& origin) {
  MetricsFile out;
  std::string line;
  int lineno = 0;
  auto bad = [&](const std::string& msg) {
    throw Error(ErrorCode::kIo, origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "step") {
        StepMetrics m;
        m.step = j.at("step").get<int>();
        m.mean_total_reward = j.at("mean_total_reward").get<double>();
        m.mean_r_ref = j.at("mean_r_ref").get<double>();
        m.mean_delta_r = j.at("mean_delta_r").get<double>();
        m.indicator_rate = j.at("indicator_rate").get<double>();
        m.mean_threshold = j.at("mean_threshold").get<double>();
        m.policy_entropy = j.at("policy_entropy").get<double>();
        m.clip_fraction = j.at("clip_fraction").get<double>();
        m.first_minibatch_clip_fraction = j.at("first_minibatch_clip_fraction").get<double>();
        m.malformed_rate = j.at("malformed_rate").get<double>();
        m.pass_rate = j.at("pass_rate").get<double>();
        if (!out.steps.empty() && m.step <= out.steps.back().step) bad("steps not increasing");
        out.steps.push_back(m);
      } else if (kind == "probe") {
        const int step = j.at("step").get<int>();
        if (out.steps.empty() || out.steps.back().step != step) {
          bad("probe record without a preceding step record");
        }
        ProbeFields p;
        p.mean_ref_loglik = j.at("mean_ref_loglik").get<double>();
        p.mean_variant_loglik = j.at("mean_variant_loglik").get<double>();
        p.probe_entropy = j.at("probe_entropy").get<double>();
        p.probe_rollout_count = j.at("probe_rollout_count").get<std::size_t>();
        out.steps.back().probe = p;
      } else if (kind == "eval") {
        AnswerEvaluation e;
        e.pass_rate = j.at("pass_rate").get<double>();
        e.coverage = j.at("coverage").get<double>();
        out.evaluation = e;
      } else {
        bad("unknown record kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      bad(e.what());
    }
  }
  return out;
}

inline MetricsFile read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_metrics(in, path.string());
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Means over the final `window` step records (probe fields over the probes
/// that fall inside it; NaN when there are none).
struct RunSummary {
  int steps = 0;
  int window = 0;
  double entropy = 0.0;
  double variant_loglik = std::numeric_limits<double>::quiet_NaN();
  double ref_loglik = std::numeric_limits<double>::quiet_NaN();
  double mean_total_reward = 0.0;
  double mean_threshold = 0.0;
  double clip_fraction = 0.0;
  double malformed_rate = 0.0;
};

inline RunSummary summarize(std::span<const StepMetrics> m, int window) {
  RunSummary s;
  s.steps = static_cast<int>(m.size());
  if (m.empty()) return s;
  const std::size_t w = std::min<std::size_t>(m.size(), static_cast<std::size_t>(window));
  s.window = static_cast<int>(w);
  double var = 0.0, ref = 0.0;
  std::size_t probes = 0;
  for (std::size_t i = m.size() - w; i < m.size(); ++i) {
    s.entropy += m[i].policy_entropy;
    s.mean_total_reward += m[i].mean_total_reward;
    s.mean_threshold += m[i].mean_threshold;
    s.clip_fraction += m[i].clip_fraction;
    s.malformed_rate += m[i].malformed_rate;
    if (m[i].probe) {
      var += m[i].probe->mean_variant_loglik;
      ref += m[i].probe->mean_ref_loglik;
      ++probes;
    }
  }
  const double n = static_cast<double>(w);
  s.entropy /= n;
  s.mean_total_reward /= n;
  s.mean_threshold /= n;
  s.clip_fraction /= n;
  s.malformed_rate /= n;
  if (probes) {
    s.variant_loglik = var / static_cast<double>(probes);
    s.ref_loglik = ref / static_cast<double>(probes);
  }
  return s;
}

/// Shortest decimal that round-trips; "nan" for missing values.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  return Json(x).dump();
}

inline std::string summary_csv(const RunConfig& c, const RunSummary& s,
                               const std::optional<AnswerEvaluation>& ev) {
  std::string out =
      "run_name,mode,alpha,beta,tau,gamma,seed,steps,window,entropy,variant_loglik,"
      "ref_loglik,mean_total_reward,mean_threshold,clip_fraction,malformed_rate,"
      "eval_pass_rate,eval_coverage,eval_combined\n";
  const auto& r = c.train.reward;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out += c.run_name + "," + std::string(to_string(r.mode)) + "," + fmt(r.alpha) + "," +
         fmt(r.beta) + "," + fmt(r.tau.value_or(nan)) + "," + fmt(r.gamma.value_or(nan)) +
         "," + std::to_string(c.train.seed) + "," + std::to_string(s.steps) + "," +
         std::to_string(s.window) + "," + fmt(s.entropy) + "," + fmt(s.variant_loglik) +
         "," + fmt(s.ref_loglik) + "," + fmt(s.mean_total_reward) + "," +
         fmt(s.mean_threshold) + "," + fmt(s.clip_fraction) + "," + fmt(s.malformed_rate) +
         "," + fmt(ev ? ev->pass_rate : nan) + "," + fmt(ev ? ev->coverage : nan) + "," +
         fmt(ev ? ev->combined() : nan) + "\n";
  return out;
}

}  // namespace darl::io

#endif  // DARL_IO_HPP_
