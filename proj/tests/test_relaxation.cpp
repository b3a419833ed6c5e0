#include <doctest.h>

#include <cmath>

#include "atm/relaxation.hpp"

using namespace atm;

namespace {

Vocabulary vocab5() {
  return Vocabulary({"<pad>", "w1", "w2", "w3", "w4"}, {0});
}

Vector softmax(const Vector& x) {
  Vector e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

TEST_CASE("gumbel draws follow -log(-log(u)) of the same uniform stream") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) {
    double u = a.uniform();
    CHECK(b.gumbel() == doctest::Approx(-std::log(-std::log(u))).epsilon(1e-15));
  }
}

TEST_CASE("sample_gumbel is reproducible and finite") {
  Rng a(9), b(9);
  Matrix ga = sample_gumbel(4, 6, a);
  Matrix gb = sample_gumbel(4, 6, b);
  CHECK(ga == gb);
  CHECK(ga.allFinite());
}

TEST_CASE("gumbel sample mean matches the Euler-Mascheroni constant") {
  Rng rng(2024);
  double sum = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) sum += rng.gumbel();
  CHECK(std::abs(sum / n - 0.5772156649) < 0.01);
}

TEST_CASE("gumbel_softmax basics") {
  Vector w2(2), g0(2);
  w2 << 0, 0;
  g0.setZero();
  Vector p = gumbel_softmax(w2, g0, 1.0);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  Vector sharp(2);
  sharp << 10, 0;
  Vector q = gumbel_softmax(sharp, g0, 0.01);
  CHECK(std::abs(q[0] - 1.0) < 1e-6);
  CHECK(std::abs(q[1]) < 1e-6);

  CHECK_THROWS(gumbel_softmax(w2, g0, 0.0));
  CHECK_THROWS(gumbel_softmax(w2, g0, -1.0));
}

TEST_CASE("gumbel_softmax rows are positive and sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Vector w(9), g(9);
    for (int i = 0; i < 9; ++i) {
      w[i] = 3.0 * rng.normal();
      g[i] = rng.gumbel();
    }
    for (double tau : {1.0, 0.1, 0.01}) {
      Vector p = gumbel_softmax(w, g, tau);
      CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
      // low temperatures can underflow small entries to exactly zero
      CHECK(p.minCoeff() >= 0.0);
    }
    CHECK(gumbel_softmax(w, g, 1.0).minCoeff() > 0.0);
  }
}

TEST_CASE("hard-sample frequencies match softmax by the Gumbel-max property") {
  Vector w(3);
  w << 1, 0, -1;
  Vector expected = softmax(w);
  CHECK(expected[0] == doctest::Approx(0.6652).epsilon(1e-3));
  CHECK(expected[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(expected[2] == doctest::Approx(0.0900).epsilon(2e-3));

  Rng rng(31);
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double top = -1e300;
    for (int j = 0; j < 3; ++j) {
      double v = w[j] + rng.gumbel();
      if (v > top) {
        top = v;
        best = j;
      }
    }
    counts[best]++;
  }
  double chi2 = 0.0;
  for (int j = 0; j < 3; ++j) {
    double freq = static_cast<double>(counts[j]) / n;
    CHECK(std::abs(freq - expected[j]) < 0.01);
    double e = expected[j] * n;
    chi2 += (counts[j] - e) * (counts[j] - e) / e;
  }
  // chi-square with 2 degrees of freedom, p > 0.01 cutoff
  CHECK(chi2 < 9.21);
}

TEST_CASE("relax_select limit and symmetry cases") {
  EmbeddingTable table;
  table.matrix = Matrix(3, 2);
  table.matrix << 1, 2, 3, 4, 5, 6;
  Vector g0 = Vector::Zero(3);

  Vector onehotish(3);
  onehotish << 10, 0, 0;
  Vector out = relax_select(onehotish, g0, 0.01, table);
  CHECK((out.transpose() - table.matrix.row(0)).cwiseAbs().maxCoeff() < 1e-4);

  Vector uniform = Vector::Zero(3);
  Vector mean = relax_select(uniform, g0, 1.0, table);
  CHECK(mean[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(mean[1] == doctest::Approx(4.0).epsilon(1e-12));

  Vector wrong = Vector::Zero(4);
  CHECK_THROWS(relax_select(wrong, Vector::Zero(4), 1.0, table));
}

TEST_CASE("relax_select equals an independent dense product") {
  EmbeddingTable table;
  Rng rng(55);
  table.matrix = Matrix(7, 4);
  for (int i = 0; i < table.matrix.size(); ++i) table.matrix.data()[i] = rng.normal();
  for (int trial = 0; trial < 10; ++trial) {
    Vector w(7), g(7);
    for (int i = 0; i < 7; ++i) {
      w[i] = rng.normal();
      g[i] = rng.gumbel();
    }
    Vector got = relax_select(w, g, 0.5, table);
    Vector p = gumbel_softmax(w, g, 0.5);
    Vector want = Vector::Zero(4);
    for (int v = 0; v < 7; ++v)
      for (int d = 0; d < 4; ++d) want[d] += p[v] * table.matrix(v, d);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("hard_decode argmax with lowest-index tie break and special masking") {
  Vocabulary v = vocab5();
  LogitsMatrix omega = LogitsMatrix::zeros(3, v);
  omega.omega(0, 2) = 3;
  omega.omega(0, 3) = 1;
  omega.omega(1, 1) = 2;
  omega.omega(1, 3) = 2;  // tie, lowest index wins
  omega.omega(2, 0) = 50;  // raw logit on the special column before masking
  omega.omega(2, 4) = 1;
  omega.mask_special(v);
  TokenSequence seq = hard_decode(omega);
  CHECK(seq.indices == std::vector<int>{2, 1, 4});
}

TEST_CASE("sample_attack_tokens without noise reduces to hard_decode") {
  Vocabulary v = vocab5();
  LogitsMatrix omega = LogitsMatrix::zeros(2, v);
  Rng rng(3);
  omega.omega(0, 1) = 2;
  omega.omega(1, 4) = 2;
  omega.mask_special(v);
  SampledPrompt s = sample_attack_tokens(omega, 0.1, rng, false);
  CHECK(s.tokens.indices == hard_decode(omega).indices);
  CHECK(s.soft_rows.rows() == 2);
  CHECK(s.soft_rows.cols() == v.size());
}

TEST_CASE("sample_attack_tokens is deterministic and matches softmax frequencies") {
  Vocabulary v = vocab5();
  LogitsMatrix omega = LogitsMatrix::zeros(1, v);
  omega.omega(0, 1) = 1;
  omega.omega(0, 2) = 0;
  omega.omega(0, 3) = -1;
  omega.omega(0, 4) = -1e9;  // effectively excluded
  omega.mask_special(v);

  Rng a(77), b(77);
  CHECK(sample_attack_tokens(omega, 0.1, a, true).tokens.indices ==
        sample_attack_tokens(omega, 0.1, b, true).tokens.indices);

  Vector w(3);
  w << 1, 0, -1;
  Vector expected = softmax(w);
  Rng rng(78);
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    int tok = sample_attack_tokens(omega, 0.1, rng, true).tokens.indices[0];
    REQUIRE(tok >= 1);
    REQUIRE(tok <= 3);
    counts[tok - 1]++;
  }
  for (int j = 0; j < 3; ++j)
    CHECK(std::abs(static_cast<double>(counts[j]) / n - expected[j]) < 0.01);
}

TEST_CASE("temperature anneal hits both endpoints and decreases") {
  TemperatureSchedule sched;  // geometric 1.0 -> 0.1
  const int steps = 100;
  CHECK(sched.at(0, steps) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sched.at(steps - 1, steps) == doctest::Approx(0.1).epsilon(1e-12));
  for (int t = 1; t < steps; ++t) CHECK(sched.at(t, steps) < sched.at(t - 1, steps));

  TemperatureSchedule c = TemperatureSchedule::constant(0.3);
  CHECK(c.at(0, steps) == 0.3);
  CHECK(c.at(99, steps) == 0.3);
}

TEST_CASE("fixed-noise rows approach the one-hot monotonically as tau shrinks") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Vector w(6), g(6);
    for (int i = 0; i < 6; ++i) {
      w[i] = 2.0 * rng.normal();
      g[i] = rng.gumbel();
    }
    int best;
    (w + g).maxCoeff(&best);
    double prev = 2.0;
    for (double tau : {1.0, 0.1, 0.01}) {
      Vector p = gumbel_softmax(w, g, tau);
      Vector onehot = Vector::Zero(6);
      onehot[best] = 1.0;
      double dist = (p - onehot).cwiseAbs().maxCoeff();
      CHECK(dist < prev);
      prev = dist;
    }
    CHECK(prev < 1e-4);
  }
}

TEST_CASE("analytic gradient through psi matches finite differences") {
  // scalar loss L = r . psi(omega) for a random direction r
  Rng rng(202);
  EmbeddingTable table;
  table.matrix = Matrix(7, 4);
  for (int i = 0; i < table.matrix.size(); ++i) table.matrix.data()[i] = rng.normal();

  for (int trial = 0; trial < 5; ++trial) {
    Matrix omega(5, 7), noise(5, 7);
    for (int i = 0; i < omega.size(); ++i) {
      omega.data()[i] = rng.normal();
      noise.data()[i] = rng.gumbel();
    }
    Vector r(4);
    for (int i = 0; i < 4; ++i) r[i] = rng.normal();
    const double tau = 0.7;

    auto loss = [&](const Matrix& om) {
      double sum = 0.0;
      for (int k = 0; k < om.rows(); ++k)
        sum += relax_select(om.row(k).transpose(), noise.row(k).transpose(), tau, table).dot(r);
      return sum;
    };

    for (int k = 0; k < omega.rows(); ++k) {
      Vector p = gumbel_softmax(omega.row(k).transpose(), noise.row(k).transpose(), tau);
      Vector dpsi = table.matrix * r;  // dL/dp
      Vector grad = gumbel_softmax_vjp(p, dpsi, tau);
      for (int j = 0; j < omega.cols(); ++j) {
        const double h = 1e-5;
        Matrix plus = omega, minus = omega;
        plus(k, j) += h;
        minus(k, j) -= h;
        double fd = (loss(plus) - loss(minus)) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(grad[j]), 1e-8});
        CHECK(std::abs(fd - grad[j]) / denom < 1e-3);
      }
    }
  }
}
