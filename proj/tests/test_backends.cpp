#include <doctest.h>

#include <cmath>

#include "atm/toy_backend.hpp"
#include "fixtures.hpp"

using namespace atm;
using namespace atm::testing;

TEST_CASE("calibration classifies every clean prompt correctly") {
  ToyBackend b = toy_calibrate(animal_corpus(), ToyBackendConfig{});
  REQUIRE(b.specs.size() == 20);
  for (const auto& spec : b.specs) {
    Matrix emb = embed_tokens(b.bundle.embedding_table, spec.clean);
    Vector scores = b.bundle.classifier->classify(b.bundle.generator->generate(b.z_ref, emb));
    int argmax = 0;
    scores.maxCoeff(&argmax);
    CHECK(argmax == spec.class_id);
  }
}

TEST_CASE("same seed rebuilds identical prototypes and embeddings") {
  ToyBackendConfig cfg;
  cfg.seed = 5;
  ToyBackend a = toy_calibrate(animal_corpus(), cfg);
  ToyBackend b = toy_calibrate(animal_corpus(), cfg);
  CHECK(a.bundle.embedding_table.matrix == b.bundle.embedding_table.matrix);
  CHECK(a.z_ref == b.z_ref);
  auto* ca = dynamic_cast<const ToyClassifier*>(a.bundle.classifier.get());
  auto* cb = dynamic_cast<const ToyClassifier*>(b.bundle.classifier.get());
  REQUIRE(ca);
  REQUIRE(cb);
  for (int c = 0; c < 20; ++c) CHECK(ca->prototype(c).data == cb->prototype(c).data);
}

TEST_CASE("a single perturbed token can flip at least one class") {
  // exhaustive scan over modifiable positions and the full non-special
  // vocabulary under the default mean-pooled generator
  ToyBackend b = toy_calibrate(animal_corpus(), ToyBackendConfig{});
  bool found = false;
  for (const auto& spec : b.specs) {
    for (int pos = 0; pos < 3 && !found; ++pos) {
      for (int v = 0; v < b.bundle.vocab.size() && !found; ++v) {
        if (b.bundle.vocab.is_special(v)) continue;
        TokenSequence seq = spec.clean;
        seq.indices[static_cast<size_t>(pos)] = v;
        Matrix emb = embed_tokens(b.bundle.embedding_table, seq);
        Vector h = b.bundle.classifier->classify(b.bundle.generator->generate(b.z_ref, emb));
        int am = 0;
        h.maxCoeff(&am);
        if (am != spec.class_id) found = true;
      }
    }
    if (found) break;
  }
  CHECK(found);
}

TEST_CASE("calibration rejects duplicate class images") {
  std::vector<CorpusRecord> recs;
  for (int i = 0; i < 2; ++i) {
    CorpusRecord r;
    r.class_id = i;
    r.class_name = i == 0 ? "cat" : "also cat";
    r.prompt_text = "a photo of cat";  // identical prompts, identical prototypes
    r.noun_begin = 3;
    r.noun_end = 3;
    recs.push_back(r);
  }
  CHECK_THROWS(toy_calibrate(recs, ToyBackendConfig{}));
}

TEST_CASE("calibration requires dense in-order class ids") {
  auto recs = animal_corpus(3);
  recs[1].class_id = 7;
  CHECK_THROWS(toy_calibrate(recs, ToyBackendConfig{}));
}

TEST_CASE("stepwise generation equals one-shot generation bit-exactly") {
  ToyBackend b = toy_calibrate(animal_corpus(), attack_backend_config());
  const auto& gen = *b.bundle.generator;
  for (int c = 0; c < 3; ++c) {
    Matrix emb = embed_tokens(b.bundle.embedding_table, b.specs[c].clean);
    ImageArray one_shot = gen.generate(b.z_ref, emb);
    Generator::State s = gen.init(b.z_ref, emb);
    for (int t = 0; t < gen.diffusion_steps(); ++t) gen.step(s, emb);
    ImageArray stepped = gen.decode(s);
    CHECK(one_shot.data == stepped.data);
    // repeated calls are bit-identical too
    CHECK(gen.generate(b.z_ref, emb).data == one_shot.data);
  }
}

TEST_CASE("both sampler variants generate and differ") {
  ToyBackendConfig lin;
  ToyBackendConfig cos;
  cos.sampler_id = "toy-cosine";
  ToyBackend a = toy_calibrate(animal_corpus(), lin);
  ToyBackend b = toy_calibrate(animal_corpus(), cos);
  CHECK(a.bundle.generator->sampler_id() == "toy-linear");
  CHECK(b.bundle.generator->sampler_id() == "toy-cosine");
  Matrix emb = embed_tokens(a.bundle.embedding_table, a.specs[0].clean);
  ImageArray ia = a.bundle.generator->generate(a.z_ref, emb);
  ImageArray ib = b.bundle.generator->generate(b.z_ref, emb);
  CHECK((ia.data - ib.data).norm() > 0.0);

  ToyBackendConfig bad;
  bad.sampler_id = "ddim";
  CHECK_THROWS(toy_calibrate(animal_corpus(), bad));
}

TEST_CASE("generator images stay in [0, 1]") {
  ToyBackend b = toy_calibrate(animal_corpus(), ToyBackendConfig{});
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Vector z(b.bundle.generator->latent_size());
    for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
    Matrix emb = embed_tokens(b.bundle.embedding_table, b.specs[trial].clean);
    ImageArray img = b.bundle.generator->generate(z, emb);
    CHECK(img.data.minCoeff() >= 0.0);
    CHECK(img.data.maxCoeff() <= 1.0);
    CHECK(img.data.allFinite());
  }
}

TEST_CASE("classifier gradient through the generator matches finite differences") {
  ToyBackend b = toy_calibrate(animal_corpus(), attack_backend_config());
  const auto& gen = *b.bundle.generator;
  const auto& cls = *b.bundle.classifier;
  Rng rng(17);
  Matrix emb = embed_tokens(b.bundle.embedding_table, b.specs[0].clean);

  // scalar probe: L = r . classify(generate(z, emb))
  Vector r(cls.num_classes());
  for (int i = 0; i < r.size(); ++i) r[i] = rng.normal();
  auto loss = [&](const Matrix& e) {
    return r.dot(cls.classify(gen.generate(b.z_ref, e)));
  };

  ImageArray img = gen.generate(b.z_ref, emb);
  Vector dimg = cls.classify_vjp(img, r);
  Matrix demb = gen.generate_vjp(b.z_ref, emb, dimg);

  int checked = 0;
  for (int i = 0; i < emb.rows(); ++i) {
    for (int j = 0; j < emb.cols(); ++j) {
      const double h = 1e-5;
      Matrix plus = emb, minus = emb;
      plus(i, j) += h;
      minus(i, j) -= h;
      double fd = (loss(plus) - loss(minus)) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(demb(i, j)), 1e-6});
      CHECK(std::abs(fd - demb(i, j)) / denom < 1e-3);
      ++checked;
    }
  }
  CHECK(checked == emb.size());
}

TEST_CASE("causal LM rows are normalized log-probabilities") {
  ToyBackend b = toy_calibrate(animal_corpus(), ToyBackendConfig{});
  Matrix emb = embed_tokens(b.bundle.embedding_table, b.specs[0].clean);
  Matrix logp = b.bundle.clm->next_logprobs(emb);
  REQUIRE(logp.rows() == emb.rows());
  REQUIRE(logp.cols() == b.bundle.vocab.size());
  for (int i = 0; i < logp.rows(); ++i) {
    CHECK(logp.row(i).maxCoeff() <= 0.0);
    double lse = std::log(logp.row(i).array().exp().sum());
    CHECK(std::abs(lse) < 1e-5);
  }
}

TEST_CASE("clean corpus prompts are more fluent than scrambled ones") {
  ToyBackend b = toy_calibrate(animal_corpus(), ToyBackendConfig{});
  const auto& spec = b.specs[0];
  Matrix emb = embed_tokens(b.bundle.embedding_table, spec.clean);
  Matrix logp = b.bundle.clm->next_logprobs(emb);
  double clean_ll = 0.0;
  for (int i = 0; i < spec.clean.length(); ++i)
    clean_ll += logp(i, spec.clean.indices[static_cast<size_t>(i)]);

  TokenSequence scrambled = spec.clean;
  std::reverse(scrambled.indices.begin(), scrambled.indices.end());
  Matrix semb = embed_tokens(b.bundle.embedding_table, scrambled);
  Matrix slogp = b.bundle.clm->next_logprobs(semb);
  double scrambled_ll = 0.0;
  for (int i = 0; i < scrambled.length(); ++i)
    scrambled_ll += slogp(i, scrambled.indices[static_cast<size_t>(i)]);
  CHECK(clean_ll > scrambled_ll);
}

TEST_CASE("causal LM vjp matches finite differences") {
  ToyBackend b = toy_calibrate(animal_corpus(), ToyBackendConfig{});
  Rng rng(23);
  Matrix emb = embed_tokens(b.bundle.embedding_table, b.specs[1].clean);
  Matrix dlogp(emb.rows(), b.bundle.vocab.size());
  for (int i = 0; i < dlogp.size(); ++i) dlogp.data()[i] = 0.1 * rng.normal();

  auto loss = [&](const Matrix& e) {
    return (b.bundle.clm->next_logprobs(e).array() * dlogp.array()).sum();
  };
  Matrix grad = b.bundle.clm->next_logprobs_vjp(emb, dlogp);
  for (int i = 0; i < emb.rows(); ++i) {
    for (int j = 0; j < emb.cols(); ++j) {
      const double h = 1e-6;
      Matrix plus = emb, minus = emb;
      plus(i, j) += h;
      minus(i, j) -= h;
      double fd = (loss(plus) - loss(minus)) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(grad(i, j)), 1e-6});
      CHECK(std::abs(fd - grad(i, j)) / denom < 1e-3);
    }
  }
}

TEST_CASE("contextual and text embeddings are unit-norm and deterministic") {
  ToyBackend b = toy_calibrate(animal_corpus(), ToyBackendConfig{});
  const auto& spec = b.specs[2];
  Matrix e1 = b.bundle.clm->embed(spec.clean);
  Matrix e2 = b.bundle.clm->embed(spec.clean);
  CHECK(e1 == e2);
  for (int i = 0; i < e1.rows(); ++i)
    CHECK(e1.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));

  Vector t = b.bundle.text_embedder->embed_text(spec.clean);
  CHECK(t.norm() == doctest::Approx(1.0).epsilon(1e-12));

  ImageArray img = b.bundle.generator->generate(
      b.z_ref, embed_tokens(b.bundle.embedding_table, spec.clean));
  Vector v = b.bundle.image_embedder->embed_image(img);
  CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("convergence rate stays inside the configured band") {
  ToyBackendConfig cfg;
  cfg.rate_min = 0.05;
  cfg.rate_max = 0.30;
  ToyBackend b = toy_calibrate(animal_corpus(), cfg);
  auto* gen = dynamic_cast<const ToyGenerator*>(b.bundle.generator.get());
  REQUIRE(gen);
  for (const auto& spec : b.specs) {
    double r = gen->convergence_rate(embed_tokens(b.bundle.embedding_table, spec.clean));
    CHECK(r > cfg.rate_min);
    CHECK(r < cfg.rate_max);
  }
}

TEST_CASE("vocabulary stays within the desk-scale bound") {
  // 3 specials + 23 corpus words + "and" + 40 fillers
  ToyBackend b = toy_calibrate(animal_corpus(), attack_backend_config());
  CHECK(b.bundle.vocab.size() == 67);
  CHECK(b.bundle.vocab.size() - static_cast<int>(b.bundle.vocab.special_indices().size()) ==
        64);
  CHECK(b.bundle.embedding_table.dim() <= 16);
}
