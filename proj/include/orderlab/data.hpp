#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "orderlab/common.hpp"
#include "orderlab/rng.hpp"

namespace orderlab {

enum class DataMode : uint8_t { language_model = 0, regression = 1 };

struct RegressionSample {
  std::vector<double> x;
  double y = 0;
};

// One training batch: B_t. In LM mode a batch holds token-id sequences; in
// regression mode (feature, target) pairs. token_count counts tokens (LM) or
// samples (regression).
struct Batch {
  uint32_t batch_id = 0;
  std::vector<std::vector<int32_t>> sequences;
  std::vector<RegressionSample> samples;
  uint64_t token_count = 0;
};

// Non-owning view over an evaluation set (validation/test split or a single
// batch's contents).
struct Dataset {
  DataMode mode = DataMode::language_model;
  const std::vector<std::vector<int32_t>>* seqs = nullptr;
  const std::vector<RegressionSample>* regs = nullptr;

  size_t size() const {
    if (mode == DataMode::language_model) return seqs ? seqs->size() : 0;
    return regs ? regs->size() : 0;
  }
  bool empty() const { return size() == 0; }
};

struct Corpus {
  DataMode mode = DataMode::language_model;
  std::vector<Batch> train;  // length T
  std::vector<std::vector<int32_t>> validation_seqs, test_seqs;
  std::vector<RegressionSample> validation_samples, test_samples;
  std::vector<std::string> vocab;  // token id -> token text (LM mode)
  uint32_t feature_dim = 0;        // regression mode

  uint32_t vocab_size() const { return static_cast<uint32_t>(vocab.size()); }
  size_t batch_count() const { return train.size(); }

  Dataset validation_set() const {
    if (mode == DataMode::language_model) return {mode, &validation_seqs, nullptr};
    return {mode, nullptr, &validation_samples};
  }
  Dataset test_set() const {
    if (mode == DataMode::language_model) return {mode, &test_seqs, nullptr};
    return {mode, nullptr, &test_samples};
  }
  Dataset batch_set(const Batch& b) const {
    if (mode == DataMode::language_model) return {mode, &b.sequences, nullptr};
    return {mode, nullptr, &b.samples};
  }
};

// ---------------------------------------------------------------------------
// MinHash dedup: signature over the word set, 128 permutations by default;
// texts with identical digests are duplicates and only the first survives.
// ---------------------------------------------------------------------------

inline std::vector<uint64_t> minhash_signature(const std::string& text, int num_perms) {
  std::set<std::string> words;
  std::istringstream iss(text);
  std::string w;
  while (iss >> w) words.insert(w);

  std::vector<uint64_t> sig(static_cast<size_t>(num_perms), UINT64_MAX);
  uint64_t salt = 0x4d696e4861736831ULL;  // fixed: dedup is corpus-independent
  for (int i = 0; i < num_perms; ++i) {
    salt = splitmix64(salt);
    for (const auto& word : words) {
      uint64_t h = splitmix64(fnv1a64(word) ^ salt);
      if (h < sig[static_cast<size_t>(i)]) sig[static_cast<size_t>(i)] = h;
    }
  }
  return sig;
}

inline std::vector<std::string> dedup_minhash(const std::vector<std::string>& docs,
                                              int num_perms) {
  std::vector<std::string> kept;
  std::unordered_set<uint64_t> seen;
  for (const auto& d : docs) {
    auto sig = minhash_signature(d, num_perms);
    uint64_t digest = fnv1a64(sig.data(), sig.size() * sizeof(uint64_t));
    if (seen.insert(digest).second) kept.push_back(d);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct IngestConfig {
  size_t min_length = 5;  // drop texts shorter than this many characters
  int minhash_perms = 128;
  double train_frac = 0.8, val_frac = 0.1;  // test gets the remainder
  uint32_t t_batches = 8;
};

namespace detail {

struct SplitCounts {
  size_t train, val, test;
};

inline SplitCounts split_counts(size_t n, double train_frac, double val_frac) {
  auto tr = static_cast<size_t>(std::llround(static_cast<double>(n) * train_frac));
  auto va = static_cast<size_t>(std::llround(static_cast<double>(n) * val_frac));
  tr = std::min(tr, n);
  va = std::min(va, n - tr);
  return {tr, va, n - tr - va};
}

}  // namespace detail

// Character-level tokenization: vocab = distinct bytes, sorted, so ids are a
// pure function of the corpus content.
inline std::vector<std::string> build_char_vocab(const std::vector<std::string>& docs,
                                                 bool with_separator) {
  std::set<char> chars;
  for (const auto& d : docs)
    for (char c : d) chars.insert(c);
  if (with_separator) chars.insert('\n');
  std::vector<std::string> vocab;
  vocab.reserve(chars.size());
  for (char c : chars) vocab.emplace_back(1, c);
  return vocab;
}

// Build a Corpus from raw documents: length filter, MinHash dedup, char
// tokenization, split, then pack the training tokens into T equal batches
// (remainder truncated). Documents are joined by '\n' inside a batch stream.
inline Corpus ingest_docs(const std::vector<std::string>& raw_docs, const IngestConfig& cfg) {
  std::vector<std::string> docs;
  for (const auto& d : raw_docs)
    if (d.size() >= cfg.min_length) docs.push_back(d);
  docs = dedup_minhash(docs, cfg.minhash_perms);
  if (docs.empty()) throw IngestionError("ingest: no documents left after filtering");

  auto counts = detail::split_counts(docs.size(), cfg.train_frac, cfg.val_frac);
  if (cfg.t_batches == 0 || counts.train < cfg.t_batches)
    throw ConfigError("ingest: T=" + std::to_string(cfg.t_batches) +
                      " exceeds available training samples (" + std::to_string(counts.train) +
                      ")");

  Corpus corpus;
  corpus.mode = DataMode::language_model;
  corpus.vocab = build_char_vocab(docs, /*with_separator=*/true);
  std::unordered_map<char, int32_t> to_id;
  for (size_t i = 0; i < corpus.vocab.size(); ++i) to_id[corpus.vocab[i][0]] = static_cast<int32_t>(i);

  auto tokenize = [&](const std::string& s) {
    std::vector<int32_t> t;
    t.reserve(s.size());
    for (char c : s) t.push_back(to_id.at(c));
    return t;
  };

  // Training stream: docs joined by the separator, then cut into T equal runs.
  std::vector<int32_t> stream;
  const int32_t sep = to_id.at('\n');
  for (size_t i = 0; i < counts.train; ++i) {
    auto toks = tokenize(docs[i]);
    stream.insert(stream.end(), toks.begin(), toks.end());
    stream.push_back(sep);
  }
  size_t run = stream.size() / cfg.t_batches;
  if (run == 0) throw ConfigError("ingest: not enough training tokens for T batches");
  for (uint32_t b = 0; b < cfg.t_batches; ++b) {
    Batch batch;
    batch.batch_id = b;
    batch.sequences.emplace_back(stream.begin() + static_cast<long>(b * run),
                                 stream.begin() + static_cast<long>((b + 1) * run));
    batch.token_count = run;
    corpus.train.push_back(std::move(batch));
  }

  for (size_t i = counts.train; i < counts.train + counts.val; ++i)
    corpus.validation_seqs.push_back(tokenize(docs[i]));
  for (size_t i = counts.train + counts.val; i < docs.size(); ++i)
    corpus.test_seqs.push_back(tokenize(docs[i]));
  return corpus;
}

inline std::vector<std::string> read_doc_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("ingest: cannot open " + path);
  std::vector<std::string> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    docs.push_back(line);
  }
  return docs;
}

inline Corpus ingest(const std::string& path, const IngestConfig& cfg) {
  return ingest_docs(read_doc_lines(path), cfg);
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

// Deterministic linear-plus-noise regression data: y = w*.x + noise_scale*n.
// The hidden weights are written to w_star_out when requested.
inline Corpus synth_regression(uint64_t seed, size_t n_samples, uint32_t dim, uint32_t t_batches,
                               double train_frac = 0.8, double val_frac = 0.1,
                               double noise_scale = 0.01,
                               std::vector<double>* w_star_out = nullptr) {
  if (n_samples < 2 * t_batches)
    throw ConfigError("synth_regression: need n_samples >= 2*T");
  Rng rng(seed);
  std::vector<double> w_star(dim);
  for (auto& w : w_star) w = rng.normal();
  if (w_star_out) *w_star_out = w_star;

  std::vector<RegressionSample> all(n_samples);
  for (auto& s : all) {
    s.x.resize(dim);
    double y = 0;
    for (uint32_t j = 0; j < dim; ++j) {
      s.x[j] = rng.uniform(-1.0, 1.0);
      y += w_star[j] * s.x[j];
    }
    s.y = y + noise_scale * rng.normal();
  }

  auto counts = detail::split_counts(n_samples, train_frac, val_frac);
  Corpus corpus;
  corpus.mode = DataMode::regression;
  corpus.feature_dim = dim;
  size_t per_batch = counts.train / t_batches;
  if (per_batch == 0) throw ConfigError("synth_regression: T exceeds available training samples");
  for (uint32_t b = 0; b < t_batches; ++b) {
    Batch batch;
    batch.batch_id = b;
    batch.samples.assign(all.begin() + static_cast<long>(b * per_batch),
                         all.begin() + static_cast<long>((b + 1) * per_batch));
    batch.token_count = per_batch;
    corpus.train.push_back(std::move(batch));
  }
  corpus.validation_samples.assign(all.begin() + static_cast<long>(counts.train),
                                   all.begin() + static_cast<long>(counts.train + counts.val));
  corpus.test_samples.assign(all.begin() + static_cast<long>(counts.train + counts.val),
                             all.end());
  return corpus;
}

// Synthetic text: pseudo-words with consonant-vowel structure. Both styles
// draw from the same alphabet (so every batch exercises every character and
// gradients stay dense) but with opposite letter-frequency skews; the
// training region is laid out in `blocks` alternating style blocks,
// validation mixes styles and the test region is pure style 0 -- giving
// batches a controllable frequency similarity to the test split.
struct SynthTextSpec {
  uint64_t seed = 1;
  size_t n_docs = 400;
  int words_lo = 6, words_hi = 12;
  int styles = 1;
  int blocks = 8;
  double train_frac = 0.8, val_frac = 0.1;
};

inline std::vector<std::string> synth_text_docs(const SynthTextSpec& spec) {
  static const std::string kConsonants = "bcdfgklm";
  static const std::string kVowels = "aeio";
  Rng rng(spec.seed);

  // Geometric letter weights; style 1 reads them back to front.
  auto pick = [&](const std::string& letters, int style) {
    double ratio = spec.styles > 1 ? 0.55 : 1.0;
    double total = 0, w = 1;
    for (size_t i = 0; i < letters.size(); ++i, w *= ratio) total += w;
    double x = rng.uniform() * total;
    w = 1;
    size_t idx = 0;
    for (; idx + 1 < letters.size(); ++idx, w *= ratio) {
      if (x < w) break;
      x -= w;
    }
    return style == 1 ? letters[letters.size() - 1 - idx] : letters[idx];
  };

  auto make_word = [&](int style) {
    int syllables = 1 + static_cast<int>(rng.below(3));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += pick(kConsonants, style);
      w += pick(kVowels, style);
    }
    return w;
  };
  auto make_doc = [&](int style) {
    int n_words = spec.words_lo + static_cast<int>(rng.below(
                                      static_cast<uint64_t>(spec.words_hi - spec.words_lo + 1)));
    std::string doc;
    for (int w = 0; w < n_words; ++w) {
      if (w) doc += ' ';
      doc += make_word(style);
    }
    return doc;
  };

  auto counts = detail::split_counts(spec.n_docs, spec.train_frac, spec.val_frac);
  std::vector<std::string> docs;
  docs.reserve(spec.n_docs);
  if (spec.styles <= 1) {
    for (size_t i = 0; i < spec.n_docs; ++i) docs.push_back(make_doc(0));
    return docs;
  }
  size_t block_len = std::max<size_t>(1, counts.train / static_cast<size_t>(spec.blocks));
  for (size_t i = 0; i < counts.train; ++i)
    docs.push_back(make_doc(static_cast<int>((i / block_len) % 2)));
  for (size_t i = 0; i < counts.val; ++i) docs.push_back(make_doc(static_cast<int>(i % 2)));
  for (size_t i = 0; i < counts.test; ++i) docs.push_back(make_doc(0));
  return docs;
}

// ---------------------------------------------------------------------------
// Batch-vs-dataset similarity: cosine between L2-normalized token-frequency
// vectors.
// ---------------------------------------------------------------------------

inline double batch_similarity(const Corpus& corpus, const Batch& batch, const Dataset& eval) {
  if (corpus.mode != DataMode::language_model)
    throw InputError("batch_similarity: defined for language-model corpora only");
  if (batch.token_count == 0 || batch.sequences.empty())
    throw InputError("batch_similarity: empty batch");
  if (eval.empty()) throw InputError("batch_similarity: empty evaluation set");

  const size_t v = corpus.vocab.size();
  std::vector<double> fa(v, 0), fb(v, 0);
  for (const auto& s : batch.sequences)
    for (int32_t t : s) fa[static_cast<size_t>(t)] += 1;
  for (const auto& s : *eval.seqs)
    for (int32_t t : s) fb[static_cast<size_t>(t)] += 1;

  double na = 0, nb = 0, dot = 0;
  for (size_t i = 0; i < v; ++i) {
    na += fa[i] * fa[i];
    nb += fb[i] * fb[i];
    dot += fa[i] * fb[i];
  }
  if (na == 0 || nb == 0) throw InputError("batch_similarity: zero-frequency operand");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// OLC1 container
// ---------------------------------------------------------------------------

namespace detail {

inline void write_seqs(ByteWriter& w, const std::vector<std::vector<int32_t>>& seqs) {
  w.u32(static_cast<uint32_t>(seqs.size()));
  for (const auto& s : seqs) {
    w.u32(static_cast<uint32_t>(s.size()));
    for (int32_t t : s) w.i32(t);
  }
}

inline std::vector<std::vector<int32_t>> read_seqs(ByteReader& r) {
  std::vector<std::vector<int32_t>> seqs(r.u32());
  for (auto& s : seqs) {
    s.resize(r.u32());
    for (auto& t : s) t = r.i32();
  }
  return seqs;
}

inline void write_regs(ByteWriter& w, const std::vector<RegressionSample>& regs, uint32_t dim) {
  w.u32(static_cast<uint32_t>(regs.size()));
  for (const auto& s : regs) {
    if (s.x.size() != dim) throw PersistenceError("regression sample dim mismatch");
    w.f64_span(s.x.data(), s.x.size());
    w.f64(s.y);
  }
}

inline std::vector<RegressionSample> read_regs(ByteReader& r, uint32_t dim) {
  std::vector<RegressionSample> regs(r.u32());
  for (auto& s : regs) {
    s.x.resize(dim);
    r.f64_span(s.x.data(), dim);
    s.y = r.f64();
  }
  return regs;
}

inline void write_file(const std::string& path, ByteWriter& w) {
  uint64_t crc = crc64(w.data().data(), w.size());
  w.u64(crc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(w.data().data()),
            static_cast<std::streamsize>(w.size()));
  if (!out) throw PersistenceError("write failure: " + path);
}

inline std::vector<uint8_t> read_checked(const std::string& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot open: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), magic, 4) != 0)
    throw CorruptionError(path + ": bad magic (expected " + std::string(magic) + ")");
  uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<uint64_t>(buf[buf.size() - 8 + static_cast<size_t>(i)]) << (8 * i);
  if (crc64(buf.data(), buf.size() - 8) != stored)
    throw CorruptionError(path + ": checksum mismatch");
  buf.resize(buf.size() - 8);
  return buf;
}

}  // namespace detail

inline void save_corpus(const Corpus& corpus, const std::string& path, uint64_t config_digest) {
  ByteWriter w;
  w.bytes("OLC1", 4);
  w.u16(1);  // version
  w.u64(config_digest);
  w.u8(static_cast<uint8_t>(corpus.mode));
  if (corpus.mode == DataMode::language_model) {
    w.u32(corpus.vocab_size());
    for (const auto& tok : corpus.vocab) w.str(tok);
    w.u32(static_cast<uint32_t>(corpus.train.size()));
    for (const auto& b : corpus.train) {
      w.u32(b.batch_id);
      detail::write_seqs(w, b.sequences);
    }
    detail::write_seqs(w, corpus.validation_seqs);
    detail::write_seqs(w, corpus.test_seqs);
  } else {
    w.u32(corpus.feature_dim);
    w.u32(static_cast<uint32_t>(corpus.train.size()));
    for (const auto& b : corpus.train) {
      w.u32(b.batch_id);
      detail::write_regs(w, b.samples, corpus.feature_dim);
    }
    detail::write_regs(w, corpus.validation_samples, corpus.feature_dim);
    detail::write_regs(w, corpus.test_samples, corpus.feature_dim);
  }
  detail::write_file(path, w);
}

inline Corpus load_corpus(const std::string& path, uint64_t* config_digest = nullptr) {
  auto buf = detail::read_checked(path, "OLC1");
  ByteReader r(buf);
  r.skip(4);
  uint16_t version = r.u16();
  if (version != 1) throw CorruptionError(path + ": unsupported OLC1 version");
  uint64_t digest = r.u64();
  if (config_digest) *config_digest = digest;

  Corpus corpus;
  corpus.mode = static_cast<DataMode>(r.u8());
  if (corpus.mode == DataMode::language_model) {
    corpus.vocab.resize(r.u32());
    for (auto& tok : corpus.vocab) tok = r.str();
    corpus.train.resize(r.u32());
    for (auto& b : corpus.train) {
      b.batch_id = r.u32();
      b.sequences = detail::read_seqs(r);
      b.token_count = 0;
      for (const auto& s : b.sequences) b.token_count += s.size();
    }
    corpus.validation_seqs = detail::read_seqs(r);
    corpus.test_seqs = detail::read_seqs(r);
  } else {
    corpus.feature_dim = r.u32();
    corpus.train.resize(r.u32());
    for (auto& b : corpus.train) {
      b.batch_id = r.u32();
      b.samples = detail::read_regs(r, corpus.feature_dim);
      b.token_count = b.samples.size();
    }
    corpus.validation_samples = detail::read_regs(r, corpus.feature_dim);
    corpus.test_samples = detail::read_regs(r, corpus.feature_dim);
  }
  return corpus;
}

}  // namespace orderlab
