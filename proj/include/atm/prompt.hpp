#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace atm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, std::set<int> special_indices);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int index) const;
  // -1 if unknown
  int index_of(const std::string& token) const;
  bool is_special(int index) const { return special_.count(index) > 0; }
  const std::set<int>& special_indices() const { return special_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::set<int> special_;
};

struct TokenSequence {
  std::vector<int> indices;
  std::string text;  // optional decoded form

  int length() const { return static_cast<int>(indices.size()); }
  bool operator==(const TokenSequence& other) const { return indices == other.indices; }
};

// 1 = modifiable, 0 = protected
struct PromptMask {
  std::vector<int> bits;

  int length() const { return static_cast<int>(bits.size()); }
  int modifiable_count() const;
};

struct EmbeddingTable {
  Matrix matrix;  // V x D

  int vocab_size() const { return static_cast<int>(matrix.rows()); }
  int dim() const { return static_cast<int>(matrix.cols()); }
};

enum class PerturbMode { Replace, Extend };

struct PromptSpec {
  TokenSequence clean;
  int class_id = 0;
  std::string class_name;
  int noun_begin = 0;  // inclusive
  int noun_end = 0;    // inclusive
  PerturbMode mode = PerturbMode::Replace;
  int extend_count = 0;  // K', 0 in replace mode

  void validate(int vocab_size) const;
  // total perturbed sequence length: K in replace mode, K + K' in extend mode
  int target_length() const {
    return clean.length() + (mode == PerturbMode::Extend ? extend_count : 0);
  }
};

// One raw corpus entry; prompt text is tokenized later by the backend.
struct CorpusRecord {
  int class_id = 0;
  std::string class_name;
  std::string prompt_text;
  int noun_begin = 0;  // whitespace-token span, inclusive
  int noun_end = 0;
  PerturbMode mode = PerturbMode::Replace;
  int extend_count = 0;
};

PromptMask build_mask(const PromptSpec& spec);

// row k of the result is clean_emb row k where mask=0, perturbed_emb row k where mask=1
Matrix apply_mask(const Matrix& clean_emb, const Matrix& perturbed_emb, const PromptMask& mask);

// Detokenizes; special tokens are omitted from the text.
std::string decode(const TokenSequence& seq, const Vocabulary& vocab);

// Whitespace tokenizer used by the toy backend; lowercases and strips
// punctuation. Throws if a word is not in the vocabulary.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);
std::vector<std::string> split_words(const std::string& text);

}  // namespace atm
