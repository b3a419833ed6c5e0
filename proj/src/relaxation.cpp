#include "atm/relaxation.hpp"

#include <cmath>
#include <stdexcept>

namespace atm {

double TemperatureSchedule::at(int step, int total_steps) const {
  if (tau_start <= 0.0 || tau_end <= 0.0) throw std::invalid_argument("tau must be positive");
  if (mode == Mode::Constant || total_steps <= 1) return tau_start;
  double f = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  if (f < 0.0) f = 0.0;
  if (f > 1.0) f = 1.0;
  return tau_start * std::pow(tau_end / tau_start, f);
}

LogitsMatrix LogitsMatrix::zeros(int rows, const Vocabulary& vocab) {
  LogitsMatrix m;
  m.omega = Matrix::Zero(rows, vocab.size());
  m.mask_special(vocab);
  return m;
}

void LogitsMatrix::mask_special(const Vocabulary& vocab) {
  for (int s : vocab.special_indices()) omega.col(s).setConstant(kSpecialLogit);
}

Matrix sample_gumbel(int rows, int cols, Rng& rng) {
  Matrix g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = rng.gumbel();
  return g;
}

Vector gumbel_softmax(const Vector& logits, const Vector& noise, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel_softmax: tau must be positive");
  if (logits.size() != noise.size())
    throw std::invalid_argument("gumbel_softmax: size mismatch");
  Vector z = (logits + noise) / tau;
  double m = z.maxCoeff();
  Vector e = (z.array() - m).exp();
  return e / e.sum();
}

Vector gumbel_softmax_vjp(const Vector& probs, const Vector& dprobs, double tau) {
  double dot = probs.dot(dprobs);
  return (probs.array() * (dprobs.array() - dot) / tau).matrix();
}

Vector relax_select(const Vector& logits, const Vector& noise, double tau,
                    const EmbeddingTable& table) {
  if (logits.size() != table.vocab_size())
    throw std::invalid_argument("relax_select: logits size != vocab size");
  Vector p = gumbel_softmax(logits, noise, tau);
  return table.matrix.transpose() * p;
}

TokenSequence hard_decode(const LogitsMatrix& omega) {
  TokenSequence seq;
  seq.indices.reserve(static_cast<size_t>(omega.rows()));
  for (int k = 0; k < omega.rows(); ++k) {
    int best = 0;
    double best_v = omega.omega(k, 0);
    for (int j = 1; j < omega.cols(); ++j) {
      if (omega.omega(k, j) > best_v) {
        best_v = omega.omega(k, j);
        best = j;
      }
    }
    seq.indices.push_back(best);
  }
  return seq;
}

SampledPrompt sample_attack_tokens(const LogitsMatrix& omega, double tau, Rng& rng,
                                   bool with_noise) {
  const int rows = omega.rows();
  const int cols = omega.cols();
  Matrix noise = with_noise ? sample_gumbel(rows, cols, rng) : Matrix::Zero(rows, cols);
  SampledPrompt out;
  out.soft_rows.resize(rows, cols);
  out.tokens.indices.reserve(static_cast<size_t>(rows));
  for (int k = 0; k < rows; ++k) {
    Vector p = gumbel_softmax(omega.omega.row(k).transpose(), noise.row(k).transpose(), tau);
    out.soft_rows.row(k) = p.transpose();
    // argmax of (omega+g)/tau, i.e. of omega+g; lowest index wins ties
    int best = 0;
    double best_v = omega.omega(k, 0) + noise(k, 0);
    for (int j = 1; j < cols; ++j) {
      double v = omega.omega(k, j) + noise(k, j);
      if (v > best_v) {
        best_v = v;
        best = j;
      }
    }
    out.tokens.indices.push_back(best);
  }
  return out;
}

}  // namespace atm
