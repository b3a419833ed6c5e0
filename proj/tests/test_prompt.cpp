#include <doctest.h>

#include "atm/prompt.hpp"
#include "atm/rng.hpp"

using namespace atm;

namespace {

Vocabulary small_vocab() {
  return Vocabulary({"<pad>", "a", "photo", "of", "cat"}, {0});
}

PromptSpec photo_spec() {
  PromptSpec spec;
  spec.clean.indices = {1, 2, 3, 4};
  spec.class_id = 0;
  spec.class_name = "cat";
  spec.noun_begin = 3;
  spec.noun_end = 3;
  return spec;
}

}  // namespace

TEST_CASE("vocabulary indices are dense and invertible") {
  Vocabulary v = small_vocab();
  CHECK(v.size() == 5);
  for (int i = 0; i < v.size(); ++i) CHECK(v.index_of(v.token(i)) == i);
  CHECK(v.index_of("missing") == -1);
  CHECK(v.is_special(0));
  CHECK(!v.is_special(1));
}

TEST_CASE("replace-mode mask zeros exactly the noun span") {
  PromptMask mask = build_mask(photo_spec());
  CHECK(mask.bits == std::vector<int>{1, 1, 1, 0});
  CHECK(mask.modifiable_count() == 3);
}

TEST_CASE("extend-mode mask freezes originals and opens appended slots") {
  PromptSpec spec = photo_spec();
  spec.mode = PerturbMode::Extend;
  spec.extend_count = 2;
  PromptMask mask = build_mask(spec);
  CHECK(mask.bits == std::vector<int>{0, 0, 0, 0, 1, 1});
}

TEST_CASE("all-protected mask is rejected") {
  PromptSpec spec;
  spec.clean.indices = {4};
  spec.noun_begin = 0;
  spec.noun_end = 0;
  CHECK_THROWS(build_mask(spec));
}

TEST_CASE("build_mask is deterministic") {
  PromptSpec spec = photo_spec();
  CHECK(build_mask(spec).bits == build_mask(spec).bits);
}

TEST_CASE("apply_mask selects rows by mask bit") {
  Matrix clean(2, 3), pert(2, 3);
  clean << 1, 2, 3, 4, 5, 6;
  pert << 7, 8, 9, 10, 11, 12;

  PromptMask m10{{1, 0}};
  Matrix out = apply_mask(clean, pert, m10);
  CHECK(out.row(0) == pert.row(0));
  CHECK(out.row(1) == clean.row(1));

  PromptMask zeros{{0, 0}};
  CHECK(apply_mask(clean, pert, zeros) == clean);
  PromptMask ones{{1, 1}};
  CHECK(apply_mask(clean, pert, ones) == pert);
}

TEST_CASE("apply_mask on equal inputs is the identity for any mask") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x(4, 3);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    PromptMask m;
    for (int k = 0; k < 4; ++k) m.bits.push_back(static_cast<int>(rng.integer(2)));
    CHECK(apply_mask(x, x, m) == x);
  }
}

TEST_CASE("apply_mask rejects shape mismatch") {
  Matrix a = Matrix::Zero(2, 3), b = Matrix::Zero(3, 3);
  CHECK_THROWS(apply_mask(a, b, PromptMask{{1, 1}}));
}

TEST_CASE("decode joins tokens and skips specials") {
  Vocabulary v = small_vocab();
  TokenSequence seq;
  seq.indices = {1, 2, 3, 4};
  CHECK(decode(seq, v) == "a photo of cat");
  seq.indices = {0, 1, 0, 4};
  CHECK(decode(seq, v) == "a cat");
  TokenSequence empty;
  CHECK_THROWS(decode(empty, v));
  TokenSequence bad;
  bad.indices = {99};
  CHECK_THROWS(decode(bad, v));
}

TEST_CASE("tokenize round-trips with decode and lowercases input") {
  Vocabulary v = small_vocab();
  TokenSequence seq = tokenize("A Photo of CAT", v);
  CHECK(decode(seq, v) == "a photo of cat");
  CHECK_THROWS(tokenize("a photo of zebra", v));
}

TEST_CASE("split_words strips punctuation") {
  auto words = split_words("A photo, of cat.");
  CHECK(words == std::vector<std::string>{"a", "photo", "of", "cat"});
}

TEST_CASE("spec validation catches bad spans and modes") {
  PromptSpec spec = photo_spec();
  CHECK_NOTHROW(spec.validate(5));
  spec.noun_end = 7;
  CHECK_THROWS(spec.validate(5));
  spec = photo_spec();
  spec.mode = PerturbMode::Extend;
  spec.extend_count = 0;
  CHECK_THROWS(spec.validate(5));
}
