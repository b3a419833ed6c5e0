#include "atm/objectives.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace atm {

namespace {

int runner_up(const Vector& scores, int y) {
  int best = -1;
  for (int i = 0; i < scores.size(); ++i) {
    if (i == y) continue;
    if (best < 0 || scores[i] > scores[best]) best = i;
  }
  return best;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (int i = 0; i < out.rows(); ++i) {
    double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

}  // namespace

double margin_loss(const Vector& scores, int y, double kappa) {
  if (scores.size() < 2) throw std::invalid_argument("margin_loss: need at least 2 classes");
  if (y < 0 || y >= scores.size()) throw std::invalid_argument("margin_loss: class out of range");
  if (kappa < 0.0) throw std::invalid_argument("margin_loss: kappa must be non-negative");
  double other = scores[runner_up(scores, y)];
  return std::max(0.0, scores[y] - other + kappa);
}

Vector margin_loss_grad(const Vector& scores, int y, double kappa) {
  Vector g = Vector::Zero(scores.size());
  int r = runner_up(scores, y);
  if (scores[y] - scores[r] + kappa > 0.0) {
    g[y] = 1.0;
    g[r] = -1.0;
  }
  return g;
}

double fluency_ce(const Matrix& soft_rows, const Matrix& clm_logprobs) {
  if (soft_rows.rows() != clm_logprobs.rows() || soft_rows.cols() != clm_logprobs.cols())
    throw std::invalid_argument("fluency_ce: vocabulary mismatch between sampler and CLM");
  return -(soft_rows.array() * clm_logprobs.array()).sum();
}

Matrix fluency_ce_grad_soft(const Matrix& clm_logprobs) { return -clm_logprobs; }

Matrix fluency_ce_grad_logprobs(const Matrix& soft_rows) { return -soft_rows; }

double bertscore(const Matrix& ref_emb, const Matrix& cand_emb, const IdfWeights& idf) {
  if (ref_emb.rows() == 0 || cand_emb.rows() == 0)
    throw std::invalid_argument("bertscore: empty sequence");
  if (idf.w.size() != ref_emb.rows())
    throw std::invalid_argument("bertscore: idf length != reference length");
  Matrix r = normalize_rows(ref_emb);
  Matrix c = normalize_rows(cand_emb);
  Matrix cos = r * c.transpose();  // N x M
  double s = 0.0;
  for (int i = 0; i < cos.rows(); ++i) s += idf.w[i] * cos.row(i).maxCoeff();
  return s;
}

Matrix bertscore_grad_cand(const Matrix& ref_emb, const Matrix& cand_emb,
                           const IdfWeights& idf) {
  Matrix r = normalize_rows(ref_emb);
  Matrix c = normalize_rows(cand_emb);
  Matrix cos = r * c.transpose();
  Matrix grad = Matrix::Zero(cand_emb.rows(), cand_emb.cols());
  for (int i = 0; i < cos.rows(); ++i) {
    int jbest = 0;
    cos.row(i).maxCoeff(&jbest);
    // d cos(r_i, c_j) / d c_j_raw with c_j = c_raw / ||c_raw||
    double n = cand_emb.row(jbest).norm();
    if (n == 0.0) continue;
    Vector cj = c.row(jbest).transpose();
    Vector ri = r.row(i).transpose();
    Vector d = (ri - cos(i, jbest) * cj) / n;
    grad.row(jbest) += idf.w[i] * d.transpose();
  }
  return grad;
}

IdfCorpus IdfCorpus::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open idf corpus: " + path);
  IdfCorpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_words(line);
    if (!words.empty()) corpus.docs.push_back(std::move(words));
  }
  return corpus;
}

double IdfCorpus::raw_idf(const std::string& token) const {
  int df = 0;
  for (const auto& doc : docs) {
    for (const auto& w : doc) {
      if (w == token) {
        ++df;
        break;
      }
    }
  }
  return std::log((1.0 + static_cast<double>(docs.size())) / (1.0 + static_cast<double>(df)));
}

IdfWeights idf_weights(const TokenSequence& ref, const Vocabulary& vocab,
                       const IdfCorpus* corpus) {
  const int n = ref.length();
  if (n == 0) throw std::invalid_argument("idf_weights: empty reference");
  IdfWeights out;
  out.w = Vector::Constant(n, 1.0 / static_cast<double>(n));
  if (corpus == nullptr || corpus->docs.empty()) return out;
  Vector raw(n);
  for (int i = 0; i < n; ++i) raw[i] = corpus->raw_idf(vocab.token(ref.indices[static_cast<size_t>(i)]));
  double s = raw.sum();
  if (s > 0.0) out.w = raw / s;
  return out;
}

double total_objective(double margin, double ce, double bert, const ConstraintWeights& w) {
  if (w.lambda < 0.0 || w.gamma < 0.0)
    throw std::invalid_argument("total_objective: weights must be non-negative");
  return margin + w.lambda * ce + w.gamma * (1.0 - bert);
}

}  // namespace atm
