#include "atm/attack.hpp"

#include <cmath>
#include <stdexcept>

#include "atm/toy_backend.hpp"

namespace atm {

namespace {

// Clean embedding rows padded with zeros for appended extend-mode positions.
Matrix clean_embedding(const PromptSpec& spec, const EmbeddingTable& table) {
  Matrix emb = Matrix::Zero(spec.target_length(), table.dim());
  for (int i = 0; i < spec.clean.length(); ++i)
    emb.row(i) = table.matrix.row(spec.clean.indices[static_cast<size_t>(i)]);
  return emb;
}

// Probability rows: soft where modifiable, one-hot clean where protected.
Matrix probability_rows(const LogitsMatrix& omega, const Matrix& noise, double tau,
                        const PromptSpec& spec, const PromptMask& mask) {
  Matrix p = Matrix::Zero(omega.rows(), omega.cols());
  for (int k = 0; k < omega.rows(); ++k) {
    if (mask.bits[static_cast<size_t>(k)]) {
      p.row(k) = gumbel_softmax(omega.omega.row(k).transpose(), noise.row(k).transpose(), tau)
                     .transpose();
    } else {
      p(k, spec.clean.indices[static_cast<size_t>(k)]) = 1.0;
    }
  }
  return p;
}

Vector draw_latent(Rng& rng, int n) {
  Vector z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

double cosine(const Vector& a, const Vector& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace

LogitsMatrix init_omega(const PromptSpec& spec, const PromptMask& mask,
                        const Vocabulary& vocab, Rng& rng) {
  LogitsMatrix omega = LogitsMatrix::zeros(spec.target_length(), vocab);
  for (int k = 0; k < spec.clean.length(); ++k)
    omega.omega(k, spec.clean.indices[static_cast<size_t>(k)]) += 5.0;
  for (int k = 0; k < omega.rows(); ++k) {
    if (!mask.bits[static_cast<size_t>(k)]) continue;
    for (int j = 0; j < omega.cols(); ++j) {
      double jitter = 0.1 * rng.normal();
      if (!vocab.is_special(j)) omega.omega(k, j) += jitter;
    }
  }
  omega.mask_special(vocab);
  return omega;
}

TokenSequence apply_token_mask(const TokenSequence& sampled, const PromptSpec& spec,
                               const PromptMask& mask) {
  if (sampled.length() != mask.length())
    throw std::invalid_argument("apply_token_mask: length mismatch");
  TokenSequence out = sampled;
  for (int k = 0; k < mask.length(); ++k) {
    if (!mask.bits[static_cast<size_t>(k)])
      out.indices[static_cast<size_t>(k)] = spec.clean.indices[static_cast<size_t>(k)];
  }
  return out;
}

LossBreakdown evaluate_objective(const LogitsMatrix& omega, const Matrix& noise,
                                 const Vector& z, double tau, const PromptSpec& spec,
                                 const PromptMask& mask, const BackendBundle& backends,
                                 const ConstraintWeights& weights, const MarginConfig& margin,
                                 const IdfWeights& idf, Matrix* grad_omega) {
  const auto& table = backends.embedding_table;
  Matrix p = probability_rows(omega, noise, tau, spec, mask);
  Matrix psi = p * table.matrix;  // K x D soft embeddings
  Matrix clean_emb = clean_embedding(spec, table);
  Matrix emb = apply_mask(clean_emb, psi, mask);

  ImageArray img = backends.generator->generate(z, emb);
  Vector scores = backends.classifier->classify(img);
  double l_margin = margin_loss(scores, spec.class_id, margin.kappa);

  Matrix logp = backends.clm->next_logprobs(emb);
  double l_ce = fluency_ce(p, logp);

  Matrix ref_emb = backends.clm->embed(spec.clean);
  double l_bert = bertscore(ref_emb, psi, idf);

  LossBreakdown out;
  out.margin = l_margin;
  out.fluency = l_ce;
  out.bert = l_bert;
  out.total = total_objective(l_margin, l_ce, l_bert, weights);
  if (!std::isfinite(out.total))
    throw std::runtime_error("non-finite loss (margin=" + std::to_string(l_margin) +
                             " ce=" + std::to_string(l_ce) +
                             " bert=" + std::to_string(l_bert) + ")");
  if (grad_omega == nullptr) return out;

  // margin term back to the embedding rows
  Vector dscores = margin_loss_grad(scores, spec.class_id, margin.kappa);
  Vector dimg = backends.classifier->classify_vjp(img, dscores);
  Matrix demb = backends.generator->generate_vjp(z, emb, dimg);

  // fluency term: directly in p, and through the prefix embeddings
  Matrix dp = weights.lambda * fluency_ce_grad_soft(logp);
  demb += backends.clm->next_logprobs_vjp(emb, weights.lambda * fluency_ce_grad_logprobs(p));

  // similarity term: gamma * (1 - bert) through the candidate soft embeddings
  Matrix dpsi = -weights.gamma * bertscore_grad_cand(ref_emb, psi, idf);

  // emb row k = psi row k on modifiable rows; protected rows carry no gradient
  for (int k = 0; k < mask.length(); ++k)
    if (mask.bits[static_cast<size_t>(k)]) dpsi.row(k) += demb.row(k);
  dp += dpsi * table.matrix.transpose();

  grad_omega->setZero(omega.rows(), omega.cols());
  for (int k = 0; k < omega.rows(); ++k) {
    if (!mask.bits[static_cast<size_t>(k)]) continue;
    Vector g = gumbel_softmax_vjp(p.row(k).transpose(), dp.row(k).transpose(), tau);
    grad_omega->row(k) = g.transpose();
  }
  return out;
}

std::pair<LogitsMatrix, SearchTrace> search(const PromptSpec& spec,
                                            const BackendBundle& backends,
                                            const SearchConfig& cfg) {
  if (cfg.iterations < 1) throw std::invalid_argument("search: iterations must be >= 1");
  if (cfg.eta < 0.0) throw std::invalid_argument("search: eta must be non-negative");
  spec.validate(backends.vocab.size());
  PromptMask mask = build_mask(spec);
  const std::uint64_t cid = static_cast<std::uint64_t>(spec.class_id);

  Rng init_rng = derive_rng(cfg.seed, cid, "omega-init");
  LogitsMatrix omega = init_omega(spec, mask, backends.vocab, init_rng);
  Rng noise_rng = derive_rng(cfg.seed, cid, "search-gumbel");
  Rng latent_rng = derive_rng(cfg.seed, cid, "search-latent");

  IdfWeights idf = idf_weights(spec.clean, backends.vocab, nullptr);

  SearchTrace trace;
  trace.steps.reserve(static_cast<size_t>(cfg.iterations));
  const int latent_n = backends.generator->latent_size();

  for (int t = 0; t < cfg.iterations; ++t) {
    double tau = cfg.temperature.at(t, cfg.iterations);
    Vector z = draw_latent(latent_rng, latent_n);

    Matrix grad_sum = Matrix::Zero(omega.rows(), omega.cols());
    LossBreakdown mean{};
    const int s = std::max(1, cfg.noise_samples_per_step);
    for (int i = 0; i < s; ++i) {
      Matrix noise = cfg.with_noise ? sample_gumbel(omega.rows(), omega.cols(), noise_rng)
                                    : Matrix::Zero(omega.rows(), omega.cols());
      Matrix grad;
      LossBreakdown l = evaluate_objective(omega, noise, z, tau, spec, mask, backends,
                                           cfg.weights, cfg.margin, idf, &grad);
      grad_sum += grad;
      mean.total += l.total / s;
      mean.margin += l.margin / s;
      mean.fluency += l.fluency / s;
      mean.bert += l.bert / s;
    }
    omega.omega -= (cfg.eta / s) * grad_sum;
    omega.mask_special(backends.vocab);

    SearchStep step;
    step.total = mean.total;
    step.margin = mean.margin;
    step.fluency = mean.fluency;
    step.bert = mean.bert;
    step.tau = tau;
    step.decoded = decode(apply_token_mask(hard_decode(omega), spec, mask), backends.vocab);
    trace.steps.push_back(std::move(step));
  }
  return {omega, trace};
}

namespace {

AttackRecord evaluate_candidate(const TokenSequence& tokens, const PromptSpec& spec,
                                const PromptMask& mask, const BackendBundle& backends,
                                const AttackConfig& cfg, const Vector& z,
                                std::uint64_t seed_used) {
  const auto& table = backends.embedding_table;
  AttackRecord rec;
  rec.prompt_tokens = apply_token_mask(tokens, spec, mask);
  rec.prompt_text = decode(rec.prompt_tokens, backends.vocab);
  rec.prompt_tokens.text = rec.prompt_text;
  rec.seed_used = seed_used;

  Matrix emb = embed_tokens(table, rec.prompt_tokens);
  rec.image = backends.generator->generate(z, emb);
  Vector scores = backends.classifier->classify(rec.image);
  scores.maxCoeff(&rec.predicted_class);

  rec.margin = margin_loss(scores, spec.class_id, 0.0);
  Matrix onehot = Matrix::Zero(rec.prompt_tokens.length(), backends.vocab.size());
  for (int k = 0; k < rec.prompt_tokens.length(); ++k)
    onehot(k, rec.prompt_tokens.indices[static_cast<size_t>(k)]) = 1.0;
  rec.fluency = fluency_ce(onehot, backends.clm->next_logprobs(emb));

  IdfWeights idf = idf_weights(spec.clean, backends.vocab, nullptr);
  rec.bert = bertscore(backends.clm->embed(spec.clean),
                       backends.clm->embed(rec.prompt_tokens), idf);
  rec.ts = cosine(backends.text_embedder->embed_text(spec.clean),
                  backends.text_embedder->embed_text(rec.prompt_tokens));

  bool flipped = rec.predicted_class != spec.class_id;
  rec.filtered = cfg.ts_floor.has_value() && rec.ts < *cfg.ts_floor;
  rec.success = flipped && !rec.filtered;
  return rec;
}

}  // namespace

std::vector<AttackRecord> attack(const LogitsMatrix& omega, const PromptSpec& spec,
                                 const BackendBundle& backends, const AttackConfig& cfg) {
  if (cfg.candidates < 1) throw std::invalid_argument("attack: candidates must be >= 1");
  if (!omega.omega.allFinite()) throw std::invalid_argument("attack: omega not finite");
  PromptMask mask = build_mask(spec);
  const std::uint64_t cid = static_cast<std::uint64_t>(spec.class_id);
  Rng noise_rng = derive_rng(cfg.seed, cid, "attack-gumbel");
  Rng latent_rng = derive_rng(cfg.seed, cid, "attack-latent");
  const int latent_n = backends.generator->latent_size();

  std::vector<AttackRecord> records;
  records.reserve(static_cast<size_t>(cfg.candidates));
  for (int n = 0; n < cfg.candidates; ++n) {
    SampledPrompt sampled = sample_attack_tokens(omega, cfg.tau, noise_rng, true);
    Vector z = draw_latent(latent_rng, latent_n);
    records.push_back(evaluate_candidate(sampled.tokens, spec, mask, backends, cfg, z,
                                         derive_seed(cfg.seed, cid, "attack-gumbel")));
  }
  return records;
}

AtmResult run_atm(const PromptSpec& spec, const BackendBundle& backends,
                  const SearchConfig& search_cfg, const AttackConfig& attack_cfg) {
  auto [omega, trace] = search(spec, backends, search_cfg);
  AtmResult result;
  result.trace = std::move(trace);
  result.records = attack(omega, spec, backends, attack_cfg);
  return result;
}

std::vector<AttackRecord> random_baseline(const PromptSpec& spec,
                                          const BackendBundle& backends,
                                          const AttackConfig& cfg, Rng& rng) {
  PromptMask mask = build_mask(spec);
  std::vector<int> sampleable;
  for (int j = 0; j < backends.vocab.size(); ++j)
    if (!backends.vocab.is_special(j)) sampleable.push_back(j);
  if (sampleable.empty()) throw std::invalid_argument("random_baseline: empty vocabulary");

  Rng latent_rng(rng.next_u64());
  const int latent_n = backends.generator->latent_size();
  std::vector<AttackRecord> records;
  records.reserve(static_cast<size_t>(cfg.candidates));
  for (int n = 0; n < cfg.candidates; ++n) {
    TokenSequence tokens;
    tokens.indices.resize(static_cast<size_t>(spec.target_length()), 0);
    for (int k = 0; k < mask.length(); ++k) {
      if (mask.bits[static_cast<size_t>(k)])
        tokens.indices[static_cast<size_t>(k)] =
            sampleable[rng.integer(sampleable.size())];
      else
        tokens.indices[static_cast<size_t>(k)] = spec.clean.indices[static_cast<size_t>(k)];
    }
    Vector z = draw_latent(latent_rng, latent_n);
    records.push_back(evaluate_candidate(tokens, spec, mask, backends, cfg, z, 0));
  }
  return records;
}

}  // namespace atm
