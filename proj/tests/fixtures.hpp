#pragma once

#include <string>
#include <vector>

#include "atm/attack.hpp"
#include "atm/toy_backend.hpp"

namespace atm::testing {

inline const std::vector<std::string>& animal_names() {
  static const std::vector<std::string> names = {
      "cat",  "dog",   "fish",  "bird",  "horse", "sheep", "lion",
      "tiger", "bear", "wolf",  "fox",   "deer",  "frog",  "crab",
      "duck", "goose", "mouse", "otter", "seal",  "whale"};
  return names;
}

// 20 short prompts "a photo of <name>", noun protected at the last position.
inline std::vector<CorpusRecord> animal_corpus(int n = 20) {
  std::vector<CorpusRecord> recs;
  for (int i = 0; i < n; ++i) {
    CorpusRecord r;
    r.class_id = i;
    r.class_name = animal_names()[static_cast<size_t>(i)];
    r.prompt_text = "a photo of " + r.class_name;
    r.noun_begin = 3;
    r.noun_end = 3;
    recs.push_back(std::move(r));
  }
  return recs;
}

// The position-sensitive backend configuration used by the end-to-end attack
// runs; the final-token pooling weight makes the protected noun dominate the
// image so only coordinated multi-token perturbations flip the classifier.
inline ToyBackendConfig attack_backend_config(std::uint64_t seed = 7) {
  ToyBackendConfig cfg;
  cfg.seed = seed;
  cfg.final_token_weight = 9.0;
  return cfg;
}

inline SearchConfig attack_search_config() {
  SearchConfig cfg;
  cfg.iterations = 100;
  cfg.eta = 0.3;
  cfg.weights.lambda = 0.1;
  cfg.weights.gamma = 0.1;
  cfg.noise_samples_per_step = 4;
  cfg.seed = 42;
  return cfg;
}

inline AttackConfig attack_attack_config() {
  AttackConfig cfg;
  cfg.candidates = 20;
  cfg.seed = 42;
  return cfg;
}

// Tiny two-class instance with exactly one modifiable slot (position 0); the
// two-word noun spans cover positions 1..2 of the three-token prompts.
inline std::vector<CorpusRecord> tiny_corpus() {
  std::vector<CorpusRecord> recs;
  CorpusRecord a;
  a.class_id = 0;
  a.class_name = "tabby cat";
  a.prompt_text = "a tabby cat";
  a.noun_begin = 1;
  a.noun_end = 2;
  recs.push_back(a);
  CorpusRecord b;
  b.class_id = 1;
  b.class_name = "husky cat";
  b.prompt_text = "a husky cat";
  b.noun_begin = 1;
  b.noun_end = 2;
  recs.push_back(b);
  return recs;
}

inline ToyBackendConfig tiny_backend_config(std::uint64_t seed) {
  ToyBackendConfig cfg;
  cfg.seed = seed;
  cfg.filler_tokens = 0;
  cfg.outlier_tokens = 0;
  cfg.final_token_weight = 9.0;
  return cfg;
}

}  // namespace atm::testing
