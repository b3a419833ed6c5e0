#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "atm/prompt.hpp"

namespace atm {

struct ImageArray {
  int height = 0;
  int width = 0;
  int channels = 1;
  Vector data;  // row-major h*w*c, values in [0, 1]

  int size() const { return height * width * channels; }
  bool same_shape(const ImageArray& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
};

// Thrown by adapters that cannot provide gradients to prompt embeddings.
struct GradientUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Generator {
 public:
  struct State {
    Vector latent;
    Vector z;   // initial noise, kept for conditioning
    int t = 0;  // remaining denoising steps
  };

  virtual ~Generator() = default;

  virtual std::string sampler_id() const = 0;
  virtual int diffusion_steps() const = 0;
  virtual int latent_size() const = 0;

  // One-shot generation; deterministic given (z, prompt_emb, sampler_id).
  virtual ImageArray generate(const Vector& z, const Matrix& prompt_emb) const = 0;

  // VJP from an image cotangent back to the prompt embedding rows.
  virtual Matrix generate_vjp(const Vector& z, const Matrix& prompt_emb,
                              const Vector& dimage) const = 0;

  // Step-wise API; generate() must equal init + diffusion_steps() x step + decode.
  virtual State init(const Vector& z, const Matrix& prompt_emb) const = 0;
  virtual void step(State& state, const Matrix& prompt_emb) const = 0;
  virtual ImageArray decode(const State& state) const = 0;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int num_classes() const = 0;
  virtual Vector classify(const ImageArray& image) const = 0;
  virtual Vector classify_vjp(const ImageArray& image, const Vector& dscores) const = 0;
};

class CausalLM {
 public:
  virtual ~CausalLM() = default;
  virtual int vocab_size() const = 0;
  // Row i: log-probabilities over V for the token at position i given the
  // prefix embedding rows 0..i-1. logsumexp of every row is 0.
  virtual Matrix next_logprobs(const Matrix& prefix_emb) const = 0;
  // VJP from a logprob cotangent (K x V) back to prefix embedding rows.
  virtual Matrix next_logprobs_vjp(const Matrix& prefix_emb, const Matrix& dlogp) const = 0;
  // Per-token contextual embeddings used by the BERTScore constraint.
  virtual Matrix embed(const TokenSequence& seq) const = 0;
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual Vector embed_text(const TokenSequence& seq) const = 0;
};

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual Vector embed_image(const ImageArray& image) const = 0;
};

struct BackendBundle {
  std::shared_ptr<const Generator> generator;
  std::shared_ptr<const Classifier> classifier;
  std::shared_ptr<const CausalLM> clm;
  std::shared_ptr<const TextEmbedder> text_embedder;
  std::shared_ptr<const ImageEmbedder> image_embedder;  // optional, used by probes
  EmbeddingTable embedding_table;
  Vocabulary vocab;
};

}  // namespace atm
