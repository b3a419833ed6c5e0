#pragma once

#include <cstdint>
#include <vector>

#include "atm/backends.hpp"
#include "atm/prompt.hpp"
#include "atm/rng.hpp"

namespace atm {

// Desk-scale deterministic differentiable stand-in for a diffusion generator,
// a contrastive zero-shot classifier, and a GPT-style causal LM. Everything is
// reconstructible from one seed.
struct ToyBackendConfig {
  std::uint64_t seed = 1;
  int image_hw = 8;       // square grayscale image
  int embedding_dim = 8;  // D
  int hidden_dim = 24;
  int t_diffusion = 10;
  int filler_tokens = 40;      // vocabulary padding beyond the corpus words
  int outlier_tokens = 14;     // filler tokens given a large embedding norm
  double outlier_norm = 3.0;
  double z_field_scale = 0.25;     // weight of the z_T-dependent additive field
  double rate_min = 0.10;          // convergence-rate (generation speed) range
  double rate_max = 0.70;
  // Pooling weight multiplier for the final prompt position (last-token
  // emphasis). 1.0 = plain mean pooling; > 1 makes the generator
  // position-sensitive and lets a trailing noun dominate the image.
  double final_token_weight = 1.0;
  double margin_target = 60.0;  // clean-prompt margin the logit scale aims at
  double clm_sharpness = 8.0;
  std::string sampler_id = "toy-linear";  // or "toy-cosine"
};

class ToyGenerator : public Generator {
 public:
  ToyGenerator(const ToyBackendConfig& cfg, const EmbeddingTable& table, Rng& rng);

  std::string sampler_id() const override { return cfg_.sampler_id; }
  int diffusion_steps() const override { return cfg_.t_diffusion; }
  int latent_size() const override { return cfg_.image_hw * cfg_.image_hw; }

  ImageArray generate(const Vector& z, const Matrix& prompt_emb) const override;
  Matrix generate_vjp(const Vector& z, const Matrix& prompt_emb,
                      const Vector& dimage) const override;

  State init(const Vector& z, const Matrix& prompt_emb) const override;
  void step(State& state, const Matrix& prompt_emb) const override;
  ImageArray decode(const State& state) const override;

  // Per-prompt convergence rate toward the final latent; the "generation
  // speed" of the class this prompt describes.
  double convergence_rate(const Matrix& prompt_emb) const;

  Vector pooled(const Matrix& prompt_emb) const;
  Vector target_latent(const Vector& z, const Matrix& prompt_emb) const;

 private:
  double step_factor(int steps_remaining) const;

  ToyBackendConfig cfg_;
  Matrix w1_, w2_;  // hidden x D, pixels x hidden
  Vector b1_, b2_;
  Vector rate_w_;
  double rate_b_;
};

class ToyClassifier : public Classifier {
 public:
  ToyClassifier(std::vector<ImageArray> prototypes, double scale);

  int num_classes() const override { return static_cast<int>(prototypes_.size()); }
  Vector classify(const ImageArray& image) const override;
  Vector classify_vjp(const ImageArray& image, const Vector& dscores) const override;

  double scale() const { return scale_; }
  const ImageArray& prototype(int c) const { return prototypes_[static_cast<size_t>(c)]; }

 private:
  std::vector<ImageArray> prototypes_;
  double scale_;
};

class ToyCausalLM : public CausalLM {
 public:
  ToyCausalLM(const ToyBackendConfig& cfg, const EmbeddingTable& table,
              const Vocabulary& vocab, const std::vector<TokenSequence>& corpus, Rng& rng);

  int vocab_size() const override { return static_cast<int>(bigram_.rows()); }
  Matrix next_logprobs(const Matrix& prefix_emb) const override;
  Matrix next_logprobs_vjp(const Matrix& prefix_emb, const Matrix& dlogp) const override;
  Matrix embed(const TokenSequence& seq) const override;

 private:
  Vector token_softmax(const Vector& emb) const;  // soft nearest-token weights

  Matrix table_;   // copy of the embedding matrix
  Matrix bigram_;  // V x V row-stochastic transition probabilities
  Vector prior_;   // unigram distribution for position 0
  double sharpness_;
};

class ToyTextEmbedder : public TextEmbedder {
 public:
  explicit ToyTextEmbedder(const EmbeddingTable& table) : table_(table.matrix) {}
  Vector embed_text(const TokenSequence& seq) const override;

 private:
  Matrix table_;
};

class ToyImageEmbedder : public ImageEmbedder {
 public:
  ToyImageEmbedder(int dim, int pixels, Rng& rng);
  Vector embed_image(const ImageArray& image) const override;

 private:
  Matrix proj_;
};

struct ToyBackend {
  BackendBundle bundle;
  std::vector<PromptSpec> specs;  // corpus bound to the toy vocabulary
  Vector z_ref;                   // reference latent used for calibration
  ToyBackendConfig config;
};

// Builds the vocabulary, embedding table, and all model components from the
// corpus and one seed, then calibrates the classifier so that every clean
// prompt is classified correctly at the reference latent. Throws if two
// classes collapse onto the same prototype image.
ToyBackend toy_calibrate(const std::vector<CorpusRecord>& corpus, const ToyBackendConfig& cfg);

// Embedding rows for a token sequence.
Matrix embed_tokens(const EmbeddingTable& table, const TokenSequence& seq);

}  // namespace atm
