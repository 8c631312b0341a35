#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "orderlab/data.hpp"

using namespace orderlab;

TEST_CASE("length filter drops short texts", "[data]") {
  IngestConfig cfg;
  cfg.t_batches = 1;
  cfg.train_frac = 1.0;
  cfg.val_frac = 0.0;
  Corpus c = ingest_docs({"hi", "hello world"}, cfg);
  REQUIRE(c.train.size() == 1);
  // Only "hello world" (plus separator) survives.
  REQUIRE(c.train[0].token_count == 12);
}

TEST_CASE("byte-identical documents dedup to one", "[data]") {
  auto kept = dedup_minhash({"the same words", "the same words", "different text"}, 128);
  REQUIRE(kept.size() == 2);
  // Identical word sets share every min-hash even with reordering.
  auto sig_a = minhash_signature("b a c", 128);
  auto sig_b = minhash_signature("a b c c", 128);
  REQUIRE(sig_a == sig_b);
}

TEST_CASE("dedup is idempotent", "[data]") {
  std::vector<std::string> docs = {"alpha beta", "alpha beta", "gamma delta", "gamma delta",
                                   "unique doc"};
  auto once = dedup_minhash(docs, 64);
  auto twice = dedup_minhash(once, 64);
  REQUIRE(once == twice);
}

TEST_CASE("synthetic text corpus splits and batches evenly", "[data]") {
  SynthTextSpec spec;
  spec.seed = 5;
  spec.n_docs = 1000;
  auto docs = synth_text_docs(spec);
  REQUIRE(docs.size() == 1000);

  IngestConfig cfg;
  cfg.t_batches = 8;
  Corpus c = ingest_docs(docs, cfg);
  REQUIRE(c.train.size() == 8);
  uint64_t count = c.train[0].token_count;
  for (const auto& b : c.train) REQUIRE(b.token_count == count);
  // 80/10/10 over documents; batches carve up the training docs' tokens.
  REQUIRE(c.validation_seqs.size() == 100);
  REQUIRE(c.test_seqs.size() == 100);
}

TEST_CASE("ingest error paths", "[data]") {
  IngestConfig cfg;
  cfg.t_batches = 4;
  REQUIRE_THROWS_AS(ingest_docs({"ab", "cd"}, cfg), IngestionError);  // all filtered
  REQUIRE_THROWS_AS(ingest_docs({"hello there", "not enough docs"}, cfg), ConfigError);
}

TEST_CASE("synthetic regression is deterministic", "[data]") {
  Corpus a = synth_regression(9, 160, 3, 8);
  Corpus b = synth_regression(9, 160, 3, 8);
  REQUIRE(a.train.size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    REQUIRE(a.train[i].samples.size() == 16);  // 128 train docs / 8
    for (size_t j = 0; j < a.train[i].samples.size(); ++j) {
      REQUIRE(a.train[i].samples[j].x == b.train[i].samples[j].x);
      REQUIRE(a.train[i].samples[j].y == b.train[i].samples[j].y);
    }
  }
  REQUIRE(a.validation_samples.size() == 16);
  REQUIRE(a.test_samples.size() == 16);
}

TEST_CASE("regression targets are exact without noise", "[data]") {
  Corpus c = synth_regression(3, 40, 1, 4, 0.8, 0.1, 0.0);
  // All samples lie exactly on the hidden line; recover w* from two of them.
  const auto& s0 = c.train[0].samples[0];
  const auto& s1 = c.train[0].samples[1];
  double w = s0.y / s0.x[0];
  REQUIRE(s1.y == Catch::Approx(w * s1.x[0]).epsilon(1e-12));
  REQUIRE_THROWS_AS(synth_regression(3, 7, 1, 4), ConfigError);  // n < 2T
}

TEST_CASE("batch similarity matches hand-computed cosine", "[data]") {
  Corpus c;
  c.mode = DataMode::language_model;
  c.vocab = {"a", "b"};
  Batch b;
  b.batch_id = 0;
  b.sequences = {{0, 0}};  // {a:2, b:0}
  b.token_count = 2;
  c.train.push_back(b);
  std::vector<std::vector<int32_t>> d = {{0, 1}};  // {a:1, b:1}
  Dataset ds{DataMode::language_model, &d, nullptr};

  REQUIRE(batch_similarity(c, c.train[0], ds) == Catch::Approx(2.0 / (2.0 * std::sqrt(2.0))));

  // Identical multisets -> 1; disjoint supports -> 0.
  std::vector<std::vector<int32_t>> same = {{0, 0}};
  REQUIRE(batch_similarity(c, c.train[0], {DataMode::language_model, &same, nullptr}) ==
          Catch::Approx(1.0));
  std::vector<std::vector<int32_t>> disjoint = {{1, 1, 1}};
  REQUIRE(batch_similarity(c, c.train[0], {DataMode::language_model, &disjoint, nullptr}) ==
          Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("batch similarity is symmetric and duplication-invariant", "[data]") {
  SynthTextSpec spec;
  spec.seed = 11;
  spec.n_docs = 120;
  spec.styles = 2;
  IngestConfig icfg;
  icfg.t_batches = 4;
  Corpus c = ingest_docs(synth_text_docs(spec), icfg);

  // Symmetry: swap the roles of batch and eval set.
  Corpus swapped = c;
  Batch as_batch;
  as_batch.batch_id = 99;
  as_batch.sequences = c.test_seqs;
  for (const auto& s : c.test_seqs) as_batch.token_count += s.size();
  double ab = batch_similarity(c, c.train[1], c.test_set());
  double ba = batch_similarity(c, as_batch,
                               Dataset{DataMode::language_model, &c.train[1].sequences, nullptr});
  REQUIRE(ab == Catch::Approx(ba).epsilon(1e-12));

  // Duplicating every sample in one argument leaves the cosine unchanged.
  auto doubled = c.test_seqs;
  doubled.insert(doubled.end(), c.test_seqs.begin(), c.test_seqs.end());
  double dup = batch_similarity(c, c.train[1], {DataMode::language_model, &doubled, nullptr});
  REQUIRE(ab == Catch::Approx(dup).epsilon(1e-12));

  Batch empty;
  REQUIRE_THROWS_AS(batch_similarity(c, empty, c.test_set()), InputError);
}

TEST_CASE("styled synthetic text separates similarities", "[data]") {
  SynthTextSpec spec;
  spec.seed = 21;
  spec.n_docs = 400;
  spec.styles = 2;
  spec.blocks = 8;
  IngestConfig icfg;
  icfg.t_batches = 8;
  Corpus c = ingest_docs(synth_text_docs(spec), icfg);
  // Test split is pure style 0, so even batches (style 0) must look much more
  // similar to it than odd batches (style 1).
  double even = batch_similarity(c, c.train[0], c.test_set());
  double odd = batch_similarity(c, c.train[1], c.test_set());
  REQUIRE(even > odd + 0.2);
}

TEST_CASE("corpus container roundtrips and rejects corruption", "[data]") {
  auto dir = std::filesystem::temp_directory_path() / "orderlab_data_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "corpus.olc").string();

  SynthTextSpec spec;
  spec.seed = 31;
  spec.n_docs = 60;
  IngestConfig icfg;
  icfg.t_batches = 4;
  Corpus c = ingest_docs(synth_text_docs(spec), icfg);
  save_corpus(c, path, 0xfeed);

  uint64_t digest = 0;
  Corpus back = load_corpus(path, &digest);
  REQUIRE(digest == 0xfeed);
  REQUIRE(back.vocab == c.vocab);
  REQUIRE(back.train.size() == c.train.size());
  for (size_t i = 0; i < c.train.size(); ++i)
    REQUIRE(back.train[i].sequences == c.train[i].sequences);
  REQUIRE(back.validation_seqs == c.validation_seqs);
  REQUIRE(back.test_seqs == c.test_seqs);

  // Flip one payload byte: checksum must reject it.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    char byte;
    f.seekg(40);
    f.get(byte);
    byte = static_cast<char>(byte ^ 0x1);
    f.seekp(40);
    f.put(byte);
  }
  REQUIRE_THROWS_AS(load_corpus(path), CorruptionError);

  // Truncation is also a corruption error.
  save_corpus(c, path, 0xfeed);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  REQUIRE_THROWS_AS(load_corpus(path), CorruptionError);

  // Regression corpora roundtrip through the same container.
  Corpus reg = synth_regression(4, 80, 3, 4);
  save_corpus(reg, path, 1);
  Corpus reg_back = load_corpus(path);
  REQUIRE(reg_back.mode == DataMode::regression);
  REQUIRE(reg_back.feature_dim == 3);
  REQUIRE(reg_back.train[2].samples[5].y == reg.train[2].samples[5].y);
}
