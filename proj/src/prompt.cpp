#include "atm/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace atm {

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::set<int> special_indices)
    : tokens_(std::move(tokens)), special_(std::move(special_indices)) {
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], i);
    if (!inserted) throw std::invalid_argument("duplicate vocabulary token: " + tokens_[i]);
  }
  for (int s : special_) {
    if (s < 0 || s >= size()) throw std::invalid_argument("special index out of range");
  }
}

const std::string& Vocabulary::token(int index) const {
  if (index < 0 || index >= size()) throw std::out_of_range("token index out of range");
  return tokens_[static_cast<size_t>(index)];
}

int Vocabulary::index_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

int PromptMask::modifiable_count() const {
  int n = 0;
  for (int b : bits) n += (b != 0);
  return n;
}

void PromptSpec::validate(int vocab_size) const {
  if (clean.length() < 1) throw std::invalid_argument("clean prompt is empty");
  for (int idx : clean.indices) {
    if (idx < 0 || idx >= vocab_size) throw std::invalid_argument("token index out of range");
  }
  if (noun_begin < 0 || noun_end < noun_begin || noun_end >= clean.length())
    throw std::invalid_argument("noun span outside prompt");
  if (mode == PerturbMode::Extend && extend_count < 1)
    throw std::invalid_argument("extend mode requires extend_count >= 1");
  if (mode == PerturbMode::Replace && extend_count != 0)
    throw std::invalid_argument("replace mode requires extend_count == 0");
}

PromptMask build_mask(const PromptSpec& spec) {
  const int k = spec.clean.length();
  PromptMask mask;
  if (spec.mode == PerturbMode::Replace) {
    mask.bits.assign(static_cast<size_t>(k), 1);
    for (int i = spec.noun_begin; i <= spec.noun_end; ++i) mask.bits[static_cast<size_t>(i)] = 0;
  } else {
    // extend mode: original words are frozen, only appended slots are learned
    mask.bits.assign(static_cast<size_t>(k), 0);
    mask.bits.resize(static_cast<size_t>(k + spec.extend_count), 1);
  }
  if (mask.modifiable_count() == 0)
    throw std::invalid_argument("mask has no modifiable position (no attack surface)");
  return mask;
}

Matrix apply_mask(const Matrix& clean_emb, const Matrix& perturbed_emb, const PromptMask& mask) {
  if (clean_emb.rows() != perturbed_emb.rows() || clean_emb.cols() != perturbed_emb.cols())
    throw std::invalid_argument("apply_mask: embedding shapes differ");
  if (clean_emb.rows() != mask.length())
    throw std::invalid_argument("apply_mask: mask length does not match rows");
  Matrix out = clean_emb;
  for (int k = 0; k < mask.length(); ++k) {
    if (mask.bits[static_cast<size_t>(k)]) out.row(k) = perturbed_emb.row(k);
  }
  return out;
}

std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
  if (seq.indices.empty()) throw std::invalid_argument("decode: empty sequence");
  std::string out;
  for (int idx : seq.indices) {
    if (vocab.is_special(idx)) continue;
    const std::string& t = vocab.token(idx);
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '_' || ch == '-') {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenSequence seq;
  for (const auto& w : split_words(text)) {
    int idx = vocab.index_of(w);
    if (idx < 0) throw std::invalid_argument("token not in vocabulary: " + w);
    seq.indices.push_back(idx);
  }
  if (seq.indices.empty()) throw std::invalid_argument("tokenize: no tokens in input");
  seq.text = decode(seq, vocab);
  return seq;
}

}  // namespace atm
