#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "atm/backends.hpp"
#include "atm/objectives.hpp"
#include "atm/relaxation.hpp"

namespace atm {

struct SearchConfig {
  int iterations = 100;  // T
  double eta = 0.3;
  int noise_samples_per_step = 1;
  TemperatureSchedule temperature;  // geometric 1.0 -> 0.1 by default
  ConstraintWeights weights;
  MarginConfig margin;
  std::uint64_t seed = 0;
  bool with_noise = true;  // Gumbel noise during search; off for deterministic tests
};

struct AttackConfig {
  int candidates = 100;  // N
  double tau = 0.1;
  std::optional<double> ts_floor;
  std::uint64_t seed = 0;
};

struct AttackRecord {
  TokenSequence prompt_tokens;
  std::string prompt_text;
  ImageArray image;
  std::string image_ref;  // filled on persistence
  int predicted_class = -1;
  bool success = false;
  bool filtered = false;  // flipped the classifier but fell below the ts floor
  double margin = 0.0;
  double fluency = 0.0;
  double bert = 0.0;
  double ts = 0.0;
  std::uint64_t seed_used = 0;
};

struct SearchStep {
  double total = 0.0;
  double margin = 0.0;
  double fluency = 0.0;
  double bert = 0.0;
  double tau = 0.0;
  std::string decoded;
};

struct SearchTrace {
  std::vector<SearchStep> steps;
};

struct LossBreakdown {
  double total = 0.0;
  double margin = 0.0;
  double fluency = 0.0;
  double bert = 0.0;
};

// Loss and gradient of the full objective w.r.t. omega for one (noise, z, tau)
// draw. Exposed for the finite-difference test suite.
LossBreakdown evaluate_objective(const LogitsMatrix& omega, const Matrix& noise,
                                 const Vector& z, double tau, const PromptSpec& spec,
                                 const PromptMask& mask, const BackendBundle& backends,
                                 const ConstraintWeights& weights, const MarginConfig& margin,
                                 const IdfWeights& idf, Matrix* grad_omega);

// Algorithm: T gradient-descent steps on omega; fresh Gumbel noise and latent
// draw per step.
std::pair<LogitsMatrix, SearchTrace> search(const PromptSpec& spec,
                                            const BackendBundle& backends,
                                            const SearchConfig& cfg);

// Samples N candidate prompts from omega, generates and classifies each.
std::vector<AttackRecord> attack(const LogitsMatrix& omega, const PromptSpec& spec,
                                 const BackendBundle& backends, const AttackConfig& cfg);

struct AtmResult {
  SearchTrace trace;
  std::vector<AttackRecord> records;
};

AtmResult run_atm(const PromptSpec& spec, const BackendBundle& backends,
                  const SearchConfig& search_cfg, const AttackConfig& attack_cfg);

// Uniform random replacement over the non-special vocabulary, evaluated with
// the same record schema as attack().
std::vector<AttackRecord> random_baseline(const PromptSpec& spec,
                                          const BackendBundle& backends,
                                          const AttackConfig& cfg, Rng& rng);

// Initial omega: +5 logit at each clean token index, N(0, 0.1) jitter on
// modifiable rows, special columns masked.
LogitsMatrix init_omega(const PromptSpec& spec, const PromptMask& mask,
                        const Vocabulary& vocab, Rng& rng);

// Protected positions replaced by the clean tokens.
TokenSequence apply_token_mask(const TokenSequence& sampled, const PromptSpec& spec,
                               const PromptMask& mask);

}  // namespace atm
