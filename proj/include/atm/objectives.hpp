#pragma once

#include <optional>
#include <string>
#include <vector>

#include "atm/prompt.hpp"

namespace atm {

struct MarginConfig {
  double kappa = 30.0;
};

struct ConstraintWeights {
  double lambda = 1.0;  // fluency
  double gamma = 1.0;   // semantic similarity
};

struct IdfWeights {
  Vector w;  // per-reference-token, non-negative, sums to 1
};

// max(0, scores[y] - max_{i != y} scores[i] + kappa)
double margin_loss(const Vector& scores, int y, double kappa);

// Subgradient of margin_loss w.r.t. scores (zero vector when the hinge is
// saturated; ties in the runner-up resolved to the lowest index).
Vector margin_loss_grad(const Vector& scores, int y, double kappa);

// -sum_i sum_j p_ij * logp_ij over positions and vocabulary.
// soft_rows and clm_logprobs are both K x V.
double fluency_ce(const Matrix& soft_rows, const Matrix& clm_logprobs);

// d(fluency_ce)/d(soft_rows) = -clm_logprobs; d/d(clm_logprobs) = -soft_rows.
Matrix fluency_ce_grad_soft(const Matrix& clm_logprobs);
Matrix fluency_ce_grad_logprobs(const Matrix& soft_rows);

// Recall-style BERTScore: sum_i w_i max_j cos(ref_i, cand_j).
// ref_emb is N x D, cand_emb is M x D; rows are L2-normalized internally.
double bertscore(const Matrix& ref_emb, const Matrix& cand_emb, const IdfWeights& idf);

// Gradient of bertscore w.r.t. the raw (pre-normalization) candidate rows.
Matrix bertscore_grad_cand(const Matrix& ref_emb, const Matrix& cand_emb,
                           const IdfWeights& idf);

// Plain-text document collection, one document per line.
struct IdfCorpus {
  std::vector<std::vector<std::string>> docs;

  static IdfCorpus load(const std::string& path);
  // log((1 + |docs|) / (1 + df(token)))
  double raw_idf(const std::string& token) const;
};

// Normalized idf weights for the reference tokens; uniform without a corpus.
IdfWeights idf_weights(const TokenSequence& ref, const Vocabulary& vocab,
                       const IdfCorpus* corpus);

// L = margin + lambda * ce + gamma * (1 - bert); minimized by the search stage.
double total_objective(double margin, double ce, double bert, const ConstraintWeights& w);

}  // namespace atm
