#pragma once

#include "atm/prompt.hpp"
#include "atm/rng.hpp"

namespace atm {

inline constexpr double kSpecialLogit = -1e9;

struct TemperatureSchedule {
  enum class Mode { Constant, Geometric };

  double tau_start = 1.0;
  double tau_end = 0.1;
  Mode mode = Mode::Geometric;

  // tau for step in [0, total_steps); geometric anneal tau_start -> tau_end
  double at(int step, int total_steps) const;

  static TemperatureSchedule constant(double tau) {
    return TemperatureSchedule{tau, tau, Mode::Constant};
  }
};

// Trainable word-selection logits, K x V. Columns of special tokens are held
// at a large negative constant so they are never selected.
struct LogitsMatrix {
  Matrix omega;

  static LogitsMatrix zeros(int rows, const Vocabulary& vocab);
  void mask_special(const Vocabulary& vocab);
  int rows() const { return static_cast<int>(omega.rows()); }
  int cols() const { return static_cast<int>(omega.cols()); }
};

Matrix sample_gumbel(int rows, int cols, Rng& rng);

// softmax((logits + noise) / tau); throws if tau <= 0
Vector gumbel_softmax(const Vector& logits, const Vector& noise, double tau);

// VJP of gumbel_softmax w.r.t. logits given probs = gumbel_softmax(logits, noise, tau)
Vector gumbel_softmax_vjp(const Vector& probs, const Vector& dprobs, double tau);

// psi(omega_k; tau) = GumbelSoftmax(omega_k; tau) . E
Vector relax_select(const Vector& logits, const Vector& noise, double tau,
                    const EmbeddingTable& table);

// per-row argmax; ties broken by lowest index
TokenSequence hard_decode(const LogitsMatrix& omega);

struct SampledPrompt {
  TokenSequence tokens;
  Matrix soft_rows;  // K x V probability rows used for differentiable terms
};

// Draws Gumbel noise (unless disabled), returns per-row argmax tokens of
// omega + g together with the soft probability rows at temperature tau.
SampledPrompt sample_attack_tokens(const LogitsMatrix& omega, double tau, Rng& rng,
                                   bool with_noise);

}  // namespace atm
