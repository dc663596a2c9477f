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

#ifndef DARL_POLICY_HPP_
#define DARL_POLICY_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "darl/error.hpp"
#include "darl/rng.hpp"
#include "darl/rollout.hpp"
#include "darl/task_env.hpp"

namespace darl {

// The policy is a fixed-window MLP language model:
//
//   x      = [E[t-k], ..., E[t-1]]          (k embeddings, padded at start)
//   h      = tanh(W1^T x + b1)              (omitted when hidden == 0)
//   logits = W2^T h + b2
//
// Embedding row `vocab_size` is the padding symbol; it is never emitted.

struct PolicyArch {
  int vocab_size = 32;
  int embed_dim = 8;
  int context = 8;
  int hidden = 64;

  std::size_t input_dim() const {
    return static_cast<std::size_t>(context) * embed_dim;
  }
  std::size_t out_fan_in() const {
    return hidden > 0 ? static_cast<std::size_t>(hidden) : input_dim();
  }
  std::size_t embed_size() const {
    return static_cast<std::size_t>(vocab_size + 1) * embed_dim;
  }
  std::size_t param_count() const {
    std::size_t n = embed_size();
    if (hidden > 0) n += input_dim() * hidden + hidden;
    return n + out_fan_in() * vocab_size + vocab_size;
  }

  friend bool operator==(const PolicyArch&, const PolicyArch&) = default;
};

/// Offsets of each parameter block inside the flat vector.
struct ParamLayout {
  std::size_t embed = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0, total = 0;

  explicit ParamLayout(const PolicyArch& a) {
    embed = 0;
    w1 = a.embed_size();
    b1 = w1 + (a.hidden > 0 ? a.input_dim() * a.hidden : 0);
    w2 = b1 + (a.hidden > 0 ? a.hidden : 0);
    b2 = w2 + a.out_fan_in() * a.vocab_size;
    total = b2 + a.vocab_size;
  }
};

struct PolicyParams {
  PolicyArch arch;
  std::vector<double> values;

  PolicyParams() = default;
  explicit PolicyParams(const PolicyArch& a)
      : arch(a), values(a.param_count(), 0.0) {}

  void validate() const {
    if (arch.vocab_size < 1 || arch.embed_dim < 1 || arch.context < 1 ||
        arch.hidden < 0) {
      throw Error(ErrorCode::kInvalidConfig, "bad policy architecture");
    }
    if (values.size() != arch.param_count()) {
      throw Error(ErrorCode::kInvalidConfig,
                  "parameter count " + std::to_string(values.size()) +
                      " != architecture's " +
                      std::to_string(arch.param_count()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kInvalidConfig, "non-finite parameter");
      }
    }
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// I.i.d. uniform in [-scale, scale].
inline PolicyParams init_params(const PolicyArch& arch, std::uint64_t seed,
                                double scale = 0.05) {
  PolicyParams p(arch);
  Rng rng(seed);
  for (double& v : p.values) v = rng.uniform(-scale, scale);
  return p;
}

/// Row i holds the logits for token i given tokens [0, i).
struct LogitsOutput {
  std::size_t rows = 0;
  int vocab = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * vocab, static_cast<std::size_t>(vocab)};
  }
};

struct SequenceScore {
  std::vector<double> per_token_logprob;
  double total_logprob = 0.0;
  std::vector<double> per_token_prob;
};

namespace detail {

inline void check_tokens(const PolicyArch& a, std::span<const Token> seq) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] < 0 || seq[i] >= a.vocab_size) {
      throw Error(ErrorCode::kInvalidToken,
                  "token " + std::to_string(seq[i]) + " at index " +
                      std::to_string(i) + " outside vocab of " +
                      std::to_string(a.vocab_size));
    }
  }
}

/// Scratch buffers for one position; reused across positions.
struct Activations {
  std::vector<Token> window;
  std::vector<double> x, h, logits;

  explicit Activations(const PolicyArch& a)
      : window(a.context), x(a.input_dim()), h(a.hidden), logits(a.vocab_size) {}
};

/// Computes logits for the token at index `pos` of `seq` (i.e. conditioned on
/// seq[0..pos)). `seq` may be shorter than pos+1.
inline void position_logits(const PolicyParams& p, const ParamLayout& L,
                            std::span<const Token> seq, std::size_t pos,
                            Activations& act) {
  const PolicyArch& a = p.arch;
  const double* w = p.values.data();
  const std::size_t d = a.embed_dim;
  for (int s = 0; s < a.context; ++s) {
    const long idx = static_cast<long>(pos) - a.context + s;
    act.window[s] = idx < 0 ? a.vocab_size : seq[idx];
    const double* e = w + L.embed + static_cast<std::size_t>(act.window[s]) * d;
    std::copy(e, e + d, act.x.begin() + s * d);
  }
  const std::size_t V = a.vocab_size;
  const double* feat = act.x.data();
  if (a.hidden > 0) {
    const std::size_t H = a.hidden;
    std::copy(w + L.b1, w + L.b1 + H, act.h.begin());
    for (std::size_t i = 0; i < a.input_dim(); ++i) {
      const double xi = act.x[i];
      const double* row = w + L.w1 + i * H;
      for (std::size_t j = 0; j < H; ++j) act.h[j] += xi * row[j];
    }
    for (std::size_t j = 0; j < H; ++j) act.h[j] = std::tanh(act.h[j]);
    feat = act.h.data();
  }
  std::copy(w + L.b2, w + L.b2 + V, act.logits.begin());
  const std::size_t fan = a.out_fan_in();
  for (std::size_t j = 0; j < fan; ++j) {
    const double hj = feat[j];
    const double* row = w + L.w2 + j * V;
    for (std::size_t v = 0; v < V; ++v) act.logits[v] += hj * row[v];
  }
}

/// In-place log-softmax of logits / temperature.
inline void log_softmax(std::span<double> z, double temperature = 1.0) {
  if (temperature != 1.0) {
    for (double& v : z) v /= temperature;
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (double& v : z) v -= lse;
}

inline double entropy_from_logits(std::span<const double> logits,
                                  std::vector<double>& scratch) {
  scratch.assign(logits.begin(), logits.end());
  log_softmax(scratch);
  double h = 0.0;
  for (double lp : scratch) h -= std::exp(lp) * lp;
  return h;
}

/// Adds sum_t w_t * d/dtheta log p(seq[t] | seq[<t]) for t in
/// [first, seq.size()) into grad, where w_t = weight(t - first, logprob_t).
/// The weight callback sees the current log-probability so ratio-dependent
/// weights (clipped surrogates) cost a single forward pass.
template <typename WeightFn>
void accumulate_logprob_grad(const PolicyParams& p, std::span<const Token> seq,
                             std::size_t first, WeightFn&& weight,
                             std::span<double> grad) {
  const PolicyArch& a = p.arch;
  const ParamLayout L(a);
  Activations act(a);
  const std::size_t V = a.vocab_size, H = a.hidden, d = a.embed_dim;
  const std::size_t fan = a.out_fan_in();
  std::vector<double> gz(V), gfeat(fan), gx(a.input_dim());
  const double* w = p.values.data();
  double* g = grad.data();
  for (std::size_t t = first; t < seq.size(); ++t) {
    position_logits(p, L, seq, t, act);
    std::copy(act.logits.begin(), act.logits.end(), gz.begin());
    log_softmax(gz);
    const double wt = weight(t - first, gz[seq[t]]);
    if (wt == 0.0) continue;
    for (std::size_t v = 0; v < V; ++v) gz[v] = -std::exp(gz[v]) * wt;
    gz[seq[t]] += wt;

    const double* feat = H > 0 ? act.h.data() : act.x.data();
    for (std::size_t v = 0; v < V; ++v) g[L.b2 + v] += gz[v];
    for (std::size_t j = 0; j < fan; ++j) {
      const double* row = w + L.w2 + j * V;
      double* grow = g + L.w2 + j * V;
      const double fj = feat[j];
      double acc = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        grow[v] += fj * gz[v];
        acc += row[v] * gz[v];
      }
      gfeat[j] = acc;
    }
    if (H > 0) {
      for (std::size_t j = 0; j < H; ++j) {
        gfeat[j] *= 1.0 - act.h[j] * act.h[j];
        g[L.b1 + j] += gfeat[j];
      }
      for (std::size_t i = 0; i < a.input_dim(); ++i) {
        const double* row = w + L.w1 + i * H;
        double* grow = g + L.w1 + i * H;
        const double xi = act.x[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
          grow[j] += xi * gfeat[j];
          acc += row[j] * gfeat[j];
        }
        gx[i] = acc;
      }
    } else {
      std::copy(gfeat.begin(), gfeat.end(), gx.begin());
    }
    for (int s = 0; s < a.context; ++s) {
      double* ge = g + L.embed + static_cast<std::size_t>(act.window[s]) * d;
      for (std::size_t c = 0; c < d; ++c) ge[c] += gx[s * d + c];
    }
  }
}

inline TokenSeq concat(std::span<const Token> a, std::span<const Token> b) {
  TokenSeq out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace detail

/// Per-position logits of a sequence: row i conditions on context[0, i).
inline LogitsOutput forward(const PolicyParams& params,
                            std::span<const Token> context) {
  detail::check_tokens(params.arch, context);
  const ParamLayout L(params.arch);
  detail::Activations act(params.arch);
  LogitsOutput out;
  out.rows = context.size();
  out.vocab = params.arch.vocab_size;
  out.data.resize(out.rows * out.vocab);
  for (std::size_t i = 0; i < out.rows; ++i) {
    detail::position_logits(params, L, context, i, act);
    std::copy(act.logits.begin(), act.logits.end(),
              out.data.begin() + i * out.vocab);
  }
  return out;
}

/// Logits for the token following `prefix`.
inline std::vector<double> next_logits(const PolicyParams& params,
                                       std::span<const Token> prefix) {
  detail::check_tokens(params.arch, prefix);
  const ParamLayout L(params.arch);
  detail::Activations act(params.arch);
  detail::position_logits(params, L, prefix, prefix.size(), act);
  return act.logits;
}

/// Samples a completion after `prompt` until END or max_len tokens.
/// temperature == 0 selects greedy (argmax) decoding, in which case the
/// recorded log-probability is that of the argmax under the untempered
/// distribution.
inline Rollout sample_rollout(const PolicyParams& params, const TokenSeq& prompt,
                              int max_len, double temperature, Rng& rng,
                              const Vocab& vocab) {
  if (!(temperature >= 0.0) || max_len < 1) {
    throw Error(ErrorCode::kInvalidConfig,
                "sampling needs temperature >= 0 and max_len >= 1");
  }
  detail::check_tokens(params.arch, prompt);
  const ParamLayout L(params.arch);
  detail::Activations act(params.arch);
  TokenSeq seq = prompt;
  seq.reserve(prompt.size() + max_len);
  Rollout r;
  r.prompt = prompt;
  std::vector<double> lp(params.arch.vocab_size);
  const bool greedy = temperature == 0.0;
  for (int step = 0; step < max_len; ++step) {
    detail::position_logits(params, L, seq, seq.size(), act);
    lp = act.logits;
    detail::log_softmax(lp, greedy ? 1.0 : temperature);
    Token tok = 0;
    if (greedy) {
      tok = static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      double u = rng.uniform01();
      tok = static_cast<Token>(lp.size() - 1);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        u -= std::exp(lp[v]);
        if (u < 0.0) {
          tok = static_cast<Token>(v);
          break;
        }
      }
    }
    seq.push_back(tok);
    r.tokens.push_back(tok);
    r.logprob_old.push_back(lp[tok]);
    if (tok == Vocab::kEnd) break;
  }
  r.truncated = r.tokens.back() != Vocab::kEnd;
  attach_parse(r, vocab);
  return r;
}

/// Teacher-forced scoring of `target` after `context` at temperature 1.
inline SequenceScore score_sequence(const PolicyParams& params,
                                    std::span<const Token> context,
                                    std::span<const Token> target) {
  if (target.empty()) throw Error(ErrorCode::kEmptyTarget, "nothing to score");
  const TokenSeq seq = detail::concat(context, target);
  detail::check_tokens(params.arch, seq);
  const ParamLayout L(params.arch);
  detail::Activations act(params.arch);
  SequenceScore s;
  s.per_token_logprob.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const std::size_t pos = context.size() + i;
    detail::position_logits(params, L, seq, pos, act);
    detail::log_softmax(act.logits);
    const double lp = act.logits[seq[pos]];
    s.per_token_logprob.push_back(lp);
    s.per_token_prob.push_back(std::exp(lp));
    s.total_logprob += lp;
  }
  return s;
}

/// Log-probabilities of every token of seq from index `first` on.
inline std::vector<double> token_logprobs(const PolicyParams& params,
                                          std::span<const Token> seq,
                                          std::size_t first) {
  const ParamLayout L(params.arch);
  detail::Activations act(params.arch);
  std::vector<double> out;
  out.reserve(seq.size() - first);
  for (std::size_t t = first; t < seq.size(); ++t) {
    detail::position_logits(params, L, seq, t, act);
    detail::log_softmax(act.logits);
    out.push_back(act.logits[seq[t]]);
  }
  return out;
}

/// Exact gradient of score_sequence(...).total_logprob.
inline std::vector<double> grad_logprob(const PolicyParams& params,
                                        std::span<const Token> context,
                                        std::span<const Token> target) {
  if (target.empty()) throw Error(ErrorCode::kEmptyTarget, "nothing to score");
  const TokenSeq seq = detail::concat(context, target);
  detail::check_tokens(params.arch, seq);
  std::vector<double> grad(params.values.size(), 0.0);
  detail::accumulate_logprob_grad(
      params, seq, context.size(), [](std::size_t, double) { return 1.0; }, grad);
  return grad;
}

struct EntropyStats {
  double sum = 0.0;
  std::size_t positions = 0;

  double mean() const { return positions ? sum / positions : 0.0; }
  EntropyStats& operator+=(const EntropyStats& o) {
    sum += o.sum;
    positions += o.positions;
    return *this;
  }
};

inline EntropyStats entropy_stats(const PolicyParams& params,
                                  std::span<const Rollout> rollouts) {
  const ParamLayout L(params.arch);
  detail::Activations act(params.arch);
  std::vector<double> scratch;
  EntropyStats st;
  for (const Rollout& r : rollouts) {
    const TokenSeq seq = detail::concat(r.prompt, r.tokens);
    for (std::size_t t = r.prompt.size(); t < seq.size(); ++t) {
      detail::position_logits(params, L, seq, t, act);
      st.sum += detail::entropy_from_logits(act.logits, scratch);
      ++st.positions;
    }
  }
  return st;
}

/// Mean categorical entropy (nats, temperature 1) over every generated
/// position of the rollouts, reasoning and answer alike.
inline double policy_entropy(const PolicyParams& params,
                             std::span<const Rollout> rollouts) {
  return entropy_stats(params, rollouts).mean();
}

/// params + lr * gradient (ascent).
inline PolicyParams apply_update(const PolicyParams& params,
                                 std::span<const double> gradient, double lr) {
  if (gradient.size() != params.values.size()) {
    throw Error(ErrorCode::kInvalidConfig, "gradient shape mismatch");
  }
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    if (!std::isfinite(gradient[i])) {
      throw Error(ErrorCode::kNonfiniteGradient,
                  "component " + std::to_string(i));
    }
  }
  PolicyParams out = params;
  for (std::size_t i = 0; i < gradient.size(); ++i) out.values[i] += lr * gradient[i];
  return out;
}

enum class OptimizerKind { kSgd, kMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Stateful ascent optimizer. SGD reduces to apply_update.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }

  PolicyParams step(const PolicyParams& params, std::span<const double> grad) {
    if (cfg_.kind == OptimizerKind::kSgd) return apply_update(params, grad, cfg_.lr);
    const std::size_t n = params.values.size();
    if (grad.size() != n) {
      throw Error(ErrorCode::kInvalidConfig, "gradient shape mismatch");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(grad[i])) {
        throw Error(ErrorCode::kNonfiniteGradient, "component " + std::to_string(i));
      }
    }
    if (m_.size() != n) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
      t_ = 0;
    }
    ++t_;
    std::vector<double> dir(n);
    if (cfg_.kind == OptimizerKind::kMomentum) {
      for (std::size_t i = 0; i < n; ++i) {
        m_[i] = cfg_.momentum * m_[i] + grad[i];
        dir[i] = m_[i];
      }
    } else {
      const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
      const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
      for (std::size_t i = 0; i < n; ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        dir[i] = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
      }
    }
    return apply_update(params, dir, cfg_.lr);
  }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: text header followed by one C99 hex-float per line, so a
// write/read round trip is bit-exact.
// ---------------------------------------------------------------------------

inline void write_checkpoint(std::ostream& out, const PolicyParams& p) {
  out << "darl-policy v1\n"
      << "vocab " << p.arch.vocab_size << "\n"
      << "embed " << p.arch.embed_dim << "\n"
      << "context " << p.arch.context << "\n"
      << "hidden " << p.arch.hidden << "\n"
      << "count " << p.values.size() << "\n";
  char buf[64];
  for (double v : p.values) {
    std::snprintf(buf, sizeof buf, "%a\n", v);
    out << buf;
  }
}

inline PolicyParams read_checkpoint(std::istream& in) {
  std::string magic, version;
  in >> magic >> version;
  if (magic != "darl-policy" || version != "v1") {
    throw Error(ErrorCode::kIo, "not a darl-policy v1 checkpoint");
  }
  PolicyArch a;
  std::size_t count = 0;
  auto field = [&](const char* name, auto& dst) {
    std::string key;
    in >> key >> dst;
    if (!in || key != name) {
      throw Error(ErrorCode::kIo, std::string("checkpoint header lacks ") + name);
    }
  };
  field("vocab", a.vocab_size);
  field("embed", a.embed_dim);
  field("context", a.context);
  field("hidden", a.hidden);
  field("count", count);
  PolicyParams p(a);
  if (count != p.values.size()) {
    throw Error(ErrorCode::kIo, "checkpoint count disagrees with architecture");
  }
  std::string tok;
  for (std::size_t i = 0; i < count; ++i) {
    if (!(in >> tok)) throw Error(ErrorCode::kIo, "checkpoint truncated");
    char* end = nullptr;
    p.values[i] = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
      throw Error(ErrorCode::kIo, "bad checkpoint value '" + tok + "'");
    }
  }
  p.validate();
  return p;
}

}  // namespace darl

#endif  // DARL_POLICY_HPP_
