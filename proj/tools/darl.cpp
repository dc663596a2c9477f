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

// darl: command-line driver for training runs, sweeps, gradient checks,
// reports and task-file generation.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "darl/experiment.hpp"
#include "darl/io.hpp"

namespace fs = std::filesystem;

namespace darl::cli {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kBadConfig = 2;
constexpr int kNonfinite = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("darl");
  logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("DARL_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only accept it when asked for.
    if (level == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("ignoring DARL_LOG_LEVEL={}; use trace, debug, info, warn, error or off", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

RunConfig load_run_config(const std::string& path, const Overrides& o) {
  RunConfig c = path.empty() ? RunConfig{} : io::load_config(path);
  if (o.seed) c.train.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d.ckpt", step);
  return buf;
}

void save_checkpoint(const fs::path& path, const PolicyParams& p) {
  std::ostringstream out;
  write_checkpoint(out, p);
  io::write_file(path, out.str());
}

/// One run into `dir`: config.json, metrics.jsonl (one flushed line per
/// record), checkpoints/, final.ckpt and summary.csv.
int cmd_train(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_file(dir / "config.json", io::config_text(cfg));
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw Error(ErrorCode::kIo, "cannot write " + (dir / "metrics.jsonl").string());
  if (cfg.train.max_steps == 0) {
    spdlog::info("{}: max_steps is 0, wrote config only", dir.string());
    return kOk;
  }

  std::vector<StepMetrics> history;
  RunHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    metrics << io::metrics_lines(m) << std::flush;
    history.push_back(m);
    spdlog::debug("{} step {} reward {:.4f} entropy {:.4f} clip {:.3f}", cfg.run_name, m.step,
                  m.mean_total_reward, m.policy_entropy, m.clip_fraction);
    if ((m.step + 1) % 50 == 0) {
      spdlog::info("{} step {}/{} reward {:.4f} entropy {:.4f}", cfg.run_name, m.step + 1,
                   cfg.train.max_steps, m.mean_total_reward, m.policy_entropy);
    }
  };
  hooks.on_checkpoint = [&](int step, const PolicyParams& p) {
    save_checkpoint(dir / "checkpoints" / checkpoint_name(step), p);
  };
  if (cfg.checkpoint_every > 0) fs::create_directories(dir / "checkpoints");

  RunResult r;
  try {
    r = run_training(cfg, hooks);
  } catch (const Error& e) {
    metrics.flush();
    if (e.code() == ErrorCode::kNonfiniteGradient || e.code() == ErrorCode::kNonfiniteRatio) {
      spdlog::error("{}: {} ({} steps written)", dir.string(), e.what(), history.size());
      return kNonfinite;
    }
    throw;
  }
  if (!cfg.eval_tasks) {
    io::write_file(dir / "summary.csv",
                   io::summary_csv(cfg, io::summarize(history, 50), std::nullopt));
  } else {
    metrics << io::eval_record(r.evaluation, cfg.eval_tasks, cfg.eval.samples_per_task).dump()
            << "\n"
            << std::flush;
    io::write_file(dir / "summary.csv",
                   io::summary_csv(cfg, io::summarize(history, 50), r.evaluation));
  }
  save_checkpoint(dir / "final.ckpt", r.final_params);
  spdlog::info("{}: {} steps, eval pass {:.3f} coverage {:.3f}", dir.string(), history.size(),
               r.evaluation.pass_rate, r.evaluation.coverage);
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Applies one sweep value to a copy of `base`. "default" leaves it unchanged.
RunConfig apply_axis(RunConfig c, const std::string& axis, const std::string& value) {
  if (value == "default") return c;
  auto number = [&] {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size()) {
      throw Error(ErrorCode::kInvalidConfig, axis + " value '" + value + "' is not a number");
    }
    return x;
  };
  auto& r = c.train.reward;
  if (axis == "beta") {
    r.beta = number();
    r.alpha = 1.0 - r.beta;
  } else if (axis == "gamma") {
    r.gamma = number();
  } else if (axis == "mode") {
    const auto m = parse_reward_mode(value);
    if (!m) throw Error(ErrorCode::kInvalidConfig, "unknown mode '" + value + "'");
    r.mode = *m;
    if (r.mode == RewardMode::kRlpr || r.mode == RewardMode::kRule) {
      r.alpha = 1.0;
      r.beta = 0.0;
    }
  }
  c.validate();
  return c;
}

struct Cell {
  std::string value;
  std::uint64_t seed = 0;
  fs::path dir;
  int status = -1;
  std::string error;
  std::vector<StepMetrics> metrics;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_sweep(const RunConfig& base, const std::string& axis,
              const std::vector<std::string>& values, const std::vector<std::uint64_t>& seeds,
              const fs::path& out, int workers) {
  if (axis != "beta" && axis != "gamma" && axis != "mode") {
    throw Error(ErrorCode::kInvalidConfig, "axis must be beta, gamma or mode");
  }
  if (values.empty() || seeds.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "sweep needs at least one value and one seed");
  }
  std::vector<Cell> cells;
  for (const auto& v : values) {
    for (auto s : seeds) {
      cells.push_back({v, s, out / (axis + "=" + v) / ("seed=" + std::to_string(s)), -1, {}, {}});
    }
  }
  spdlog::info("sweep over {}: {} cells, {} workers", axis, cells.size(), workers);

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      Cell& cell = cells[i];
      try {
        RunConfig c = apply_axis(base, axis, cell.value);
        // output_dir keeps the base value so the echoed config matches a
        // plain train of the same config and seed.
        c.train.seed = cell.seed;
        cell.status = cmd_train(c, cell.dir);
        if (cell.status == kOk && c.train.max_steps > 0) {
          cell.metrics = io::read_metrics(cell.dir / "metrics.jsonl").steps;
        }
      } catch (const std::exception& e) {
        cell.status = kFailed;
        cell.error = e.what();
      }
      if (cell.status != kOk) {
        spdlog::error("cell {}={} seed {} failed: {}", axis, cell.value, cell.seed,
                      cell.error.empty() ? "exit " + std::to_string(cell.status) : cell.error);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(1, workers); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  // Per-cell table. Gaps are against the first value at the same seed.
  std::map<std::uint64_t, const Cell*> reference;
  for (const auto& c : cells) {
    if (c.value == values.front()) reference[c.seed] = &c;
  }
  std::string table =
      "axis,value,seed,status,entropy,variant_loglik,ref_loglik,mean_total_reward,"
      "entropy_gap,variant_gap,error\n";
  struct Signs {
    int ok = 0, entropy_up = 0, variant_up = 0;
  };
  std::map<std::string, Signs> signs;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  int failed = 0;
  for (const auto& c : cells) {
    io::RunSummary s;
    s.entropy = s.mean_total_reward = nan;
    double egap = nan, vgap = nan;
    if (c.status == kOk && !c.metrics.empty()) {
      s = io::summarize(c.metrics, 50);
      const Cell* ref = reference[c.seed];
      if (ref && ref->status == kOk && !ref->metrics.empty()) {
        try {
          const TraceComparison t = compare_traces(c.metrics, ref->metrics, 50);
          egap = t.windows.back().entropy_gap;
          for (auto it = t.windows.rbegin(); it != t.windows.rend(); ++it) {
            if (!std::isnan(it->variant_gap)) {
              vgap = it->variant_gap;
              break;
            }
          }
          Signs& g = signs[c.value];
          ++g.ok;
          g.entropy_up += t.entropy_gap_sign() > 0;
          g.variant_up += t.variant_gap_sign() > 0;
        } catch (const Error& e) {
          spdlog::warn("cell {}={} seed {}: {}", axis, c.value, c.seed, e.what());
        }
      }
    }
    if (c.status != kOk) ++failed;
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    table += axis + "," + c.value + "," + std::to_string(c.seed) + "," +
             std::to_string(c.status) + "," + io::fmt(s.entropy) + "," +
             io::fmt(s.variant_loglik) + "," + io::fmt(s.ref_loglik) + "," +
             io::fmt(s.mean_total_reward) + "," + io::fmt(egap) + "," + io::fmt(vgap) + "," +
             err + "\n";
  }
  fs::create_directories(out);
  io::write_file(out / "sweep_summary.csv", table);

  std::string sign_table = "axis,value,seeds,entropy_gap_positive,variant_gap_positive,majority\n";
  for (const auto& v : values) {
    const Signs g = signs[v];
    const bool majority = g.ok > 0 && 2 * g.entropy_up > g.ok && 2 * g.variant_up > g.ok;
    sign_table += axis + "," + v + "," + std::to_string(g.ok) + "," +
                  std::to_string(g.entropy_up) + "," + std::to_string(g.variant_up) + "," +
                  (majority ? "yes" : "no") + "\n";
  }
  io::write_file(out / "sweep_signs.csv", sign_table);
  std::cout << sign_table;
  if (failed) spdlog::error("{} of {} cells failed", failed, cells.size());
  return failed ? kFailed : kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const RunConfig& cfg, int trials, const fs::path& out) {
  const Vocab vocab = make_vocab(cfg.tasks.family);
  const PolicyArch arch = resolve_arch(cfg, vocab);
  Rng rng = stream(cfg.train.seed, Stream::kInit, 0x6763);
  constexpr double h = 1e-5;
  constexpr std::size_t kMaxCoords = 400;

  struct Worst {
    double rel = -1.0;
    std::uint64_t param_seed = 0;
    TokenSeq context, target;
    std::size_t coord = 0;
    double analytic = 0.0, numeric = 0.0;
  } worst;

  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t param_seed = rng.next_u64();
    PolicyParams p = init_params(arch, param_seed, 0.5);
    TokenSeq context(1 + rng.uniform_int(arch.context));
    TokenSeq target(1 + rng.uniform_int(8));
    for (auto& t : context) t = static_cast<Token>(rng.uniform_int(arch.vocab_size));
    for (auto& t : target) t = static_cast<Token>(rng.uniform_int(arch.vocab_size));
    const auto g = grad_logprob(p, context, target);

    std::vector<std::size_t> coords(p.values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > kMaxCoords) {
      for (std::size_t i = 0; i < kMaxCoords; ++i) {
        std::swap(coords[i], coords[i + rng.uniform_int(coords.size() - i)]);
      }
      coords.resize(kMaxCoords);
    }
    double err = 0.0, scale = 0.0;
    std::size_t at = 0;
    double fd_at = 0.0;
    for (double x : g) scale = std::max(scale, std::abs(x));
    for (std::size_t c : coords) {
      const double x0 = p.values[c];
      p.values[c] = x0 + h;
      const double up = score_sequence(p, context, target).total_logprob;
      p.values[c] = x0 - h;
      const double down = score_sequence(p, context, target).total_logprob;
      p.values[c] = x0;
      const double fd = (up - down) / (2 * h);
      if (std::abs(g[c] - fd) >= err) {
        err = std::abs(g[c] - fd);
        at = c;
        fd_at = fd;
      }
    }
    const double rel = err / std::max(scale, 1e-12);
    if (rel > worst.rel) worst = {rel, param_seed, context, target, at, g[at], fd_at};
    spdlog::debug("trial {}: relative error {:.3g}", trial, rel);
  }
  std::printf("gradcheck: %d trials, max relative error %.6g\n", trials, worst.rel);
  if (worst.rel < 1e-4) return kOk;

  io::Json dump = {{"relative_error", worst.rel},
                   {"arch", {{"vocab_size", arch.vocab_size}, {"embed_dim", arch.embed_dim},
                             {"context", arch.context}, {"hidden", arch.hidden}}},
                   {"init_seed", worst.param_seed},
                   {"init_scale", 0.5},
                   {"context", worst.context},
                   {"target", worst.target},
                   {"coordinate", worst.coord},
                   {"analytic", worst.analytic},
                   {"finite_difference", worst.numeric}};
  fs::create_directories(out);
  io::write_file(out / "gradcheck_worst.json", dump.dump(2) + "\n");
  std::cout << dump.dump(2) << "\n";
  return kFailed;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& runs, const fs::path& out, int window) {
  std::vector<io::MetricsFile> files;
  for (const auto& r : runs) {
    const fs::path p = fs::path(r) / "metrics.jsonl";
    if (!fs::exists(p)) throw Error(ErrorCode::kIo, "missing metrics file " + p.string());
    files.push_back(io::read_metrics(p));
  }
  // Aligned per-probe table: steps with a probe record in every run.
  std::string csv = "step";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string k = "run" + std::to_string(i);
    csv += "," + k + "_policy_entropy," + k + "_mean_ref_loglik," + k +
           "_mean_variant_loglik," + k + "_probe_entropy";
  }
  csv += "\n";
  std::map<int, std::vector<const StepMetrics*>> rows;
  for (std::size_t i = 0; i < files.size(); ++i) {
    for (const auto& m : files[i].steps) {
      if (m.probe) rows[m.step].push_back(&m);
    }
  }
  std::size_t written = 0;
  for (const auto& [step, ms] : rows) {
    if (ms.size() != files.size()) continue;
    csv += std::to_string(step);
    for (const StepMetrics* m : ms) {
      csv += "," + io::fmt(m->policy_entropy) + "," + io::fmt(m->probe->mean_ref_loglik) + "," +
             io::fmt(m->probe->mean_variant_loglik) + "," + io::fmt(m->probe->probe_entropy);
    }
    csv += "\n";
    ++written;
  }
  fs::create_directories(out);
  io::write_file(out / "report.csv", csv);
  spdlog::info("report.csv: {} aligned probe rows", written);

  if (files.size() > 1) {
    std::string cmp =
        "run,first_step,last_step,entropy_a,entropy_b,entropy_gap,variant_a,variant_b,"
        "variant_gap\n";
    for (std::size_t i = 1; i < files.size(); ++i) {
      const TraceComparison t = compare_traces(files[i].steps, files[0].steps, window);
      for (const auto& w : t.windows) {
        cmp += runs[i] + "," + std::to_string(w.first_step) + "," + std::to_string(w.last_step) +
               "," + io::fmt(w.entropy_a) + "," + io::fmt(w.entropy_b) + "," +
               io::fmt(w.entropy_gap) + "," + io::fmt(w.variant_a) + "," +
               io::fmt(w.variant_b) + "," + io::fmt(w.variant_gap) + "\n";
      }
      std::printf("%s vs %s: final entropy gap sign %+d, variant gap sign %+d\n", runs[i].c_str(),
                  runs[0].c_str(), t.entropy_gap_sign(), t.variant_gap_sign());
    }
    io::write_file(out / "comparison.csv", cmp);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gen-tasks
// ---------------------------------------------------------------------------

int cmd_gen_tasks(const RunConfig& cfg, const fs::path& out) {
  const TaskSplit split = make_task_split(cfg);
  fs::create_directories(out);
  auto write = [&](const char* name, const std::vector<TaskInstance>& tasks) {
    std::ostringstream s;
    write_tasks(s, tasks);
    io::write_file(out / name, s.str());
  };
  write("train.tsv", split.train);
  write("probe.tsv", split.probe);
  write("eval.tsv", split.eval);
  write("extra.tsv", split.extra);
  std::ostringstream v;
  for (Token t = 0; t < static_cast<Token>(split.vocab.size()); ++t) {
    v << t << '\t' << split.vocab.symbol(t) << '\n';
  }
  io::write_file(out / "vocab.tsv", v.str());
  spdlog::info("wrote {} train, {} probe, {} eval, {} extra tasks to {}", split.train.size(),
               split.probe.size(), split.eval.size(), split.extra.size(), out.string());
  return kOk;
}

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"darl: diversity-aware GRPO on synthetic answer-equivalence tasks"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::string out_flag;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
    if (with_seed) sub->add_option("--seed", seed, "Override train.seed");
    sub->add_option("--out", out_flag, "Output directory");
  };

  auto* train = app.add_subcommand("train", "Run one training run");
  common(train, true);

  std::string axis;
  std::string values = "default";
  std::string seeds = "1,2,3,4,5";
  int workers = 1;
  auto* sweep = app.add_subcommand("sweep", "Cross product of axis values and seeds");
  common(sweep, false);
  sweep->add_option("--axis", axis, "beta, gamma or mode")->required();
  sweep->add_option("--values", values, "Comma-separated values; 'default' keeps the config");
  sweep->add_option("--seeds", seeds, "Comma-separated seeds");
  sweep->add_option("--workers", workers, "Cells run in parallel")->check(CLI::PositiveNumber);

  int trials = 100;
  auto* grad = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
  common(grad, true);
  grad->add_option("--trials", trials, "Random (params, sequence) instances");

  std::vector<std::string> runs;
  int window = 50;
  auto* report = app.add_subcommand("report", "Aligned probe table and trace comparison");
  report->add_option("runs", runs, "Run directories")->required();
  report->add_option("--out", out_flag, "Output directory");
  report->add_option("--window", window, "Comparison window in steps");

  auto* gen = app.add_subcommand("gen-tasks", "Write the task splits of a config");
  common(gen, true);  // --seed overrides tasks.seed here

  CLI11_PARSE(app, argc, argv);
  if (!out_flag.empty()) ov.out = out_flag;
  auto seed_for = [&](CLI::App* sub) {
    if (sub->count("--seed")) ov.seed = seed;
  };

  try {
    if (train->parsed()) {
      seed_for(train);
      const RunConfig cfg = load_run_config(config_path, ov);
      return cmd_train(cfg, cfg.output_dir);
    }
    if (sweep->parsed()) {
      const RunConfig cfg = load_run_config(config_path, {});
      std::vector<std::uint64_t> seed_list;
      for (const auto& s : split_list(seeds)) seed_list.push_back(std::stoull(s));
      return cmd_sweep(cfg, axis, split_list(values), seed_list,
                       out_flag.empty() ? fs::path(cfg.output_dir) : fs::path(out_flag), workers);
    }
    if (grad->parsed()) {
      seed_for(grad);
      const RunConfig cfg = load_run_config(config_path, ov);
      return cmd_gradcheck(cfg, trials, cfg.output_dir);
    }
    if (report->parsed()) return cmd_report(runs, out_flag.empty() ? "." : out_flag, window);
    if (gen->parsed()) {
      RunConfig cfg = load_run_config(config_path, {std::nullopt, ov.out});
      if (gen->count("--seed")) cfg.tasks.seed = seed;
      return cmd_gen_tasks(cfg, cfg.output_dir);
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return e.code() == ErrorCode::kInvalidConfig ? kBadConfig : kFailed;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailed;
  }
  return kFailed;
}

}  // namespace darl::cli

int main(int argc, char** argv) { return darl::cli::main(argc, argv); }
