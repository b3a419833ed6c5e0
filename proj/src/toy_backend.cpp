#include "atm/toy_backend.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <stdexcept>

namespace atm {

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Vector random_vector(int n, Rng& rng, double scale) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector softmax(const Vector& z) {
  Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

const char* kFillerWords[] = {
    "red",    "blue",   "green",  "small",  "large",  "shiny",  "dark",   "bright",
    "wooden", "stone",  "glass",  "round",  "flat",   "soft",   "rough",  "quiet",
    "wild",   "gentle", "curly",  "spotted","striped","golden", "silver", "pale",
    "heavy",  "light",  "swift",  "slow",   "misty",  "frozen", "dusty",  "velvet",
    "amber",  "coral",  "ivory",  "maroon", "navy",   "olive",  "plum",   "teal"};

}  // namespace

Matrix embed_tokens(const EmbeddingTable& table, const TokenSequence& seq) {
  Matrix out(seq.length(), table.dim());
  for (int i = 0; i < seq.length(); ++i)
    out.row(i) = table.matrix.row(seq.indices[static_cast<size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------------------
// generator

ToyGenerator::ToyGenerator(const ToyBackendConfig& cfg, const EmbeddingTable& table, Rng& rng)
    : cfg_(cfg) {
  const int pixels = cfg.image_hw * cfg.image_hw;
  const int d = table.dim();
  w1_ = random_matrix(cfg.hidden_dim, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  b1_ = random_vector(cfg.hidden_dim, rng, 0.3);
  w2_ = random_matrix(pixels, cfg.hidden_dim, rng,
                      2.0 / std::sqrt(static_cast<double>(cfg.hidden_dim)));
  b2_ = random_vector(pixels, rng, 0.3);
  rate_w_ = random_vector(d, rng, 1.0);
  rate_b_ = rng.normal();
  if (cfg.sampler_id != "toy-linear" && cfg.sampler_id != "toy-cosine")
    throw std::invalid_argument("unknown toy sampler: " + cfg.sampler_id);
}

Vector ToyGenerator::pooled(const Matrix& prompt_emb) const {
  const int k = static_cast<int>(prompt_emb.rows());
  Vector w = Vector::Ones(k);
  w[k - 1] = cfg_.final_token_weight;
  w /= w.sum();
  return prompt_emb.transpose() * w;
}

double ToyGenerator::convergence_rate(const Matrix& prompt_emb) const {
  Vector u = pooled(prompt_emb);
  return cfg_.rate_min + (cfg_.rate_max - cfg_.rate_min) * sigmoid(rate_w_.dot(u) + rate_b_);
}

Vector ToyGenerator::target_latent(const Vector& z, const Matrix& prompt_emb) const {
  if (z.size() != latent_size()) throw std::invalid_argument("latent size mismatch");
  Vector u = pooled(prompt_emb);
  Vector h = (w1_ * u + b1_).array().tanh();
  return w2_ * h + b2_ + cfg_.z_field_scale * z;
}

double ToyGenerator::step_factor(int steps_remaining) const {
  if (cfg_.sampler_id == "toy-linear") return 1.0;
  // cosine ramp over the trajectory, small early steps, larger late ones
  int k = cfg_.t_diffusion - steps_remaining;  // 0-based step index
  return 0.5 * (1.0 - std::cos(M_PI * static_cast<double>(k + 1) /
                               static_cast<double>(cfg_.t_diffusion)));
}

Generator::State ToyGenerator::init(const Vector& z, const Matrix& prompt_emb) const {
  if (z.size() != latent_size()) throw std::invalid_argument("latent size mismatch");
  (void)prompt_emb;
  State s;
  s.latent = z;
  s.z = z;
  s.t = cfg_.t_diffusion;
  return s;
}

void ToyGenerator::step(State& state, const Matrix& prompt_emb) const {
  if (state.t <= 0) throw std::invalid_argument("generator step past t = 0");
  Vector x = target_latent(state.z, prompt_emb);
  double r = convergence_rate(prompt_emb) * step_factor(state.t);
  state.latent += r * (x - state.latent);
  --state.t;
}

ImageArray ToyGenerator::decode(const State& state) const {
  ImageArray img;
  img.height = cfg_.image_hw;
  img.width = cfg_.image_hw;
  img.channels = 1;
  img.data = (0.5 * (state.latent.array().tanh() + 1.0)).matrix();
  return img;
}

ImageArray ToyGenerator::generate(const Vector& z, const Matrix& prompt_emb) const {
  State s = init(z, prompt_emb);
  while (s.t > 0) step(s, prompt_emb);
  return decode(s);
}

Matrix ToyGenerator::generate_vjp(const Vector& z, const Matrix& prompt_emb,
                                  const Vector& dimage) const {
  const int steps = cfg_.t_diffusion;
  Vector u = pooled(prompt_emb);
  Vector pre_h = w1_ * u + b1_;
  Vector h = pre_h.array().tanh();
  Vector x = w2_ * h + b2_ + cfg_.z_field_scale * z;
  double rate_pre = rate_w_.dot(u) + rate_b_;
  double sig = sigmoid(rate_pre);
  double r = cfg_.rate_min + (cfg_.rate_max - cfg_.rate_min) * sig;

  // forward latents a_0 = z, a_k after k steps
  std::vector<Vector> a(static_cast<size_t>(steps) + 1);
  a[0] = z;
  for (int k = 1; k <= steps; ++k) {
    double f = r * step_factor(steps - (k - 1));
    a[static_cast<size_t>(k)] = a[static_cast<size_t>(k - 1)] +
                                f * (x - a[static_cast<size_t>(k - 1)]);
  }

  // img = 0.5 (tanh(a_T) + 1)
  Vector da = (dimage.array() * 0.5 *
               (1.0 - a[static_cast<size_t>(steps)].array().tanh().square()))
                  .matrix();
  Vector dx = Vector::Zero(x.size());
  double dr = 0.0;
  for (int k = steps; k >= 1; --k) {
    double fac = step_factor(steps - (k - 1));
    double f = r * fac;
    const Vector& prev = a[static_cast<size_t>(k - 1)];
    dx += f * da;
    dr += fac * da.dot(x - prev);
    da = ((1.0 - f) * da).eval();
  }

  Vector dh = w2_.transpose() * dx;
  Vector du = w1_.transpose() * (dh.array() * (1.0 - h.array().square())).matrix();
  du += rate_w_ * (dr * (cfg_.rate_max - cfg_.rate_min) * sig * (1.0 - sig));

  const int kk = static_cast<int>(prompt_emb.rows());
  Vector w = Vector::Ones(kk);
  w[kk - 1] = cfg_.final_token_weight;
  w /= w.sum();
  Matrix demb(kk, prompt_emb.cols());
  for (int i = 0; i < kk; ++i) demb.row(i) = w[i] * du.transpose();
  return demb;
}

// ---------------------------------------------------------------------------
// classifier

ToyClassifier::ToyClassifier(std::vector<ImageArray> prototypes, double scale)
    : prototypes_(std::move(prototypes)), scale_(scale) {
  if (prototypes_.size() < 2) throw std::invalid_argument("need at least 2 classes");
}

Vector ToyClassifier::classify(const ImageArray& image) const {
  Vector scores(num_classes());
  for (int c = 0; c < num_classes(); ++c) {
    const auto& p = prototypes_[static_cast<size_t>(c)];
    if (!image.same_shape(p)) throw std::invalid_argument("classifier: image shape mismatch");
    scores[c] = -scale_ * (image.data - p.data).squaredNorm();
  }
  return scores;
}

Vector ToyClassifier::classify_vjp(const ImageArray& image, const Vector& dscores) const {
  Vector dimg = Vector::Zero(image.data.size());
  for (int c = 0; c < num_classes(); ++c) {
    const auto& p = prototypes_[static_cast<size_t>(c)];
    dimg += dscores[c] * (-2.0 * scale_) * (image.data - p.data);
  }
  return dimg;
}

// ---------------------------------------------------------------------------
// causal LM

ToyCausalLM::ToyCausalLM(const ToyBackendConfig& cfg, const EmbeddingTable& table,
                         const Vocabulary& vocab, const std::vector<TokenSequence>& corpus,
                         Rng& rng)
    : table_(table.matrix), sharpness_(cfg.clm_sharpness) {
  const int v = vocab.size();
  Matrix logits = random_matrix(v, v, rng, 1.0);
  Vector prior_logits = random_vector(v, rng, 1.0);
  // clean-prompt transitions are boosted so the corpus itself is "fluent"
  for (const auto& seq : corpus) {
    if (!seq.indices.empty()) prior_logits[seq.indices[0]] += 3.0;
    for (size_t i = 0; i + 1 < seq.indices.size(); ++i)
      logits(seq.indices[i], seq.indices[i + 1]) += 4.0;
  }
  bigram_.resize(v, v);
  for (int i = 0; i < v; ++i) bigram_.row(i) = softmax(logits.row(i).transpose()).transpose();
  prior_ = softmax(prior_logits);
}

Vector ToyCausalLM::token_softmax(const Vector& emb) const {
  return softmax(sharpness_ * (table_ * emb));
}

Matrix ToyCausalLM::next_logprobs(const Matrix& prefix_emb) const {
  const int k = static_cast<int>(prefix_emb.rows());
  Matrix out(k, vocab_size());
  out.row(0) = prior_.array().log().matrix().transpose();
  for (int i = 1; i < k; ++i) {
    Vector q = token_softmax(prefix_emb.row(i - 1).transpose());
    Vector m = bigram_.transpose() * q;
    out.row(i) = m.array().log().matrix().transpose();
  }
  return out;
}

Matrix ToyCausalLM::next_logprobs_vjp(const Matrix& prefix_emb, const Matrix& dlogp) const {
  const int k = static_cast<int>(prefix_emb.rows());
  Matrix dprefix = Matrix::Zero(k, prefix_emb.cols());
  for (int i = 1; i < k; ++i) {
    Vector e = prefix_emb.row(i - 1).transpose();
    Vector q = token_softmax(e);
    Vector m = bigram_.transpose() * q;
    Vector dm = (dlogp.row(i).transpose().array() / m.array()).matrix();
    Vector dq = bigram_ * dm;
    Vector ds = (q.array() * (dq.array() - q.dot(dq))).matrix();
    dprefix.row(i - 1) = (sharpness_ * (table_.transpose() * ds)).transpose();
  }
  return dprefix;
}

Matrix ToyCausalLM::embed(const TokenSequence& seq) const {
  Matrix out(seq.length(), table_.cols());
  for (int i = 0; i < seq.length(); ++i) {
    Vector row = table_.row(seq.indices[static_cast<size_t>(i)]).transpose();
    double n = row.norm();
    out.row(i) = (n > 0.0 ? (row / n) : row).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedders

Vector ToyTextEmbedder::embed_text(const TokenSequence& seq) const {
  if (seq.indices.empty()) throw std::invalid_argument("embed_text: empty sequence");
  Vector u = Vector::Zero(table_.cols());
  for (int idx : seq.indices) u += table_.row(idx).transpose();
  u /= static_cast<double>(seq.length());
  double n = u.norm();
  return n > 0.0 ? Vector(u / n) : u;
}

ToyImageEmbedder::ToyImageEmbedder(int dim, int pixels, Rng& rng)
    : proj_(random_matrix(dim, pixels, rng, 1.0 / std::sqrt(static_cast<double>(pixels)))) {}

Vector ToyImageEmbedder::embed_image(const ImageArray& image) const {
  Vector v = proj_ * image.data;
  double n = v.norm();
  return n > 0.0 ? Vector(v / n) : v;
}

// ---------------------------------------------------------------------------
// calibration

ToyBackend toy_calibrate(const std::vector<CorpusRecord>& corpus, const ToyBackendConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("toy_calibrate: empty corpus");

  // vocabulary: specials, then corpus words in order of appearance, then fillers
  std::vector<std::string> tokens = {"<pad>", "<bos>", "<eos>"};
  std::set<int> specials = {0, 1, 2};
  auto add_token = [&tokens](const std::string& w) {
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) tokens.push_back(w);
  };
  for (const auto& rec : corpus)
    for (const auto& w : split_words(rec.prompt_text)) add_token(w);
  add_token("and");  // needed by the positioning-probe template
  const int n_fillers = cfg.filler_tokens;
  for (int i = 0; i < n_fillers; ++i) {
    if (i < static_cast<int>(std::size(kFillerWords)))
      add_token(kFillerWords[i]);
    else
      add_token("w" + std::to_string(i));
  }
  Vocabulary vocab(tokens, specials);

  Rng rng(derive_seed(cfg.seed, 0, "toy-backend"));

  EmbeddingTable table;
  table.matrix = Matrix::Zero(vocab.size(), cfg.embedding_dim);
  for (int i = 0; i < vocab.size(); ++i) {
    if (vocab.is_special(i)) continue;
    Vector row = random_vector(cfg.embedding_dim, rng, 1.0);
    row /= row.norm();
    table.matrix.row(i) = row.transpose();
  }
  // a few filler tokens get a large norm; these are the reachable "adversarial"
  // directions of the toy embedding space
  for (int i = 0; i < cfg.outlier_tokens && i < n_fillers; ++i) {
    int idx = vocab.size() - 1 - i;
    table.matrix.row(idx) *= cfg.outlier_norm;
  }

  auto generator = std::make_shared<ToyGenerator>(cfg, table, rng);

  // bind corpus records to the vocabulary
  std::vector<PromptSpec> specs;
  std::vector<TokenSequence> clean_seqs;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& rec = corpus[i];
    if (rec.class_id != static_cast<int>(i))
      throw std::invalid_argument("toy_calibrate: class ids must be dense 0..C-1 in order");
    PromptSpec spec;
    spec.clean = tokenize(rec.prompt_text, vocab);
    spec.class_id = rec.class_id;
    spec.class_name = rec.class_name;
    spec.noun_begin = rec.noun_begin;
    spec.noun_end = rec.noun_end;
    spec.mode = rec.mode;
    spec.extend_count = rec.extend_count;
    spec.validate(vocab.size());
    clean_seqs.push_back(spec.clean);
    specs.push_back(std::move(spec));
  }

  auto clm = std::make_shared<ToyCausalLM>(cfg, table, vocab, clean_seqs, rng);
  auto text_embedder = std::make_shared<ToyTextEmbedder>(table);
  auto image_embedder = std::make_shared<ToyImageEmbedder>(
      cfg.embedding_dim, cfg.image_hw * cfg.image_hw, rng);

  Rng zrng(derive_seed(cfg.seed, 0, "toy-zref"));
  Vector z_ref = random_vector(generator->latent_size(), zrng, 1.0);

  // per-class prototype images from the clean prompts at the reference latent
  std::vector<ImageArray> prototypes;
  for (const auto& spec : specs)
    prototypes.push_back(generator->generate(z_ref, embed_tokens(table, spec.clean)));

  std::vector<double> min_d2;
  for (size_t i = 0; i < prototypes.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < prototypes.size(); ++j) {
      if (i == j) continue;
      best = std::min(best, (prototypes[i].data - prototypes[j].data).squaredNorm());
    }
    if (best < 1e-6)
      throw std::runtime_error("toy_calibrate: duplicate class images, reject seed");
    min_d2.push_back(best);
  }
  std::vector<double> sorted = min_d2;
  std::sort(sorted.begin(), sorted.end());
  double median = sorted[sorted.size() / 2];
  double scale = cfg.margin_target / median;

  auto classifier = std::make_shared<ToyClassifier>(std::move(prototypes), scale);

  // clean prompts must be classified correctly at the reference latent
  for (size_t c = 0; c < specs.size(); ++c) {
    Vector scores = classifier->classify(
        generator->generate(z_ref, embed_tokens(table, specs[c].clean)));
    int argmax = 0;
    scores.maxCoeff(&argmax);
    if (argmax != static_cast<int>(c))
      throw std::runtime_error("toy_calibrate: clean prompt misclassified, reject seed");
  }

  ToyBackend backend;
  backend.bundle.generator = generator;
  backend.bundle.classifier = classifier;
  backend.bundle.clm = clm;
  backend.bundle.text_embedder = text_embedder;
  backend.bundle.image_embedder = image_embedder;
  backend.bundle.embedding_table = table;
  backend.bundle.vocab = vocab;
  backend.specs = std::move(specs);
  backend.z_ref = z_ref;
  backend.config = cfg;
  return backend;
}

}  // namespace atm
