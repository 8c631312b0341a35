#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orderlab/analysis.hpp"
#include "orderlab/curriculum.hpp"
#include "orderlab/data.hpp"
#include "orderlab/estimator.hpp"
#include "orderlab/model.hpp"
#include "orderlab/store.hpp"
#include "orderlab/trainer.hpp"

namespace orderlab {

using json = nlohmann::json;

namespace detail {

inline std::pair<size_t, size_t> line_col(const std::string& text, size_t byte) {
  size_t line = 1, col = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                                const std::string& path) {
  if (!obj.is_object()) return;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("config: unknown key '" + path + it.key() + "'");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

struct ModelSpec {
  std::string kind = "char_lm";  // char_lm | mlp_regressor | quadratic
  uint32_t window = 8;
  uint32_t embed_dim = 16;
  uint32_t hidden_dim = 64;
  uint32_t dim = 4;  // quadratic only
  double init_scale = 0.1;
};

struct DataSpec {
  std::string source = "synth_text";  // synth_text | synth_regression | file
  std::string path;                   // file source
  uint32_t t_batches = 8;
  double train_frac = 0.8, val_frac = 0.1;
  size_t min_length = 5;
  int minhash_perms = 128;
  // synth_text
  size_t n_docs = 400;
  int words_lo = 6, words_hi = 12;
  int styles = 1, blocks = 8;
  // synth_regression
  size_t n_samples = 160;
  uint32_t feature_dim = 4;
  double noise_scale = 0.01;
};

struct AnalysisSpec {
  size_t absdiff_n = 10;
  size_t heatmap_n = 3;
  std::vector<size_t> timing_orders = {10, 50, 100, 1000};
};

// Parsed run configuration. All stage randomness fans out of `seed` through
// labeled sub-seeds; `digest` identifies the exact parsed file and is stamped
// into every artifact this run produces.
struct RunConfig {
  uint64_t seed = 42;
  std::string out_dir = "out";
  ModelSpec model;
  std::optional<ModelSpec> model_weak;  // PD curriculum baseline
  DataSpec data;
  AdamConfig adam;
  EstimatorConfig estimator;
  GAConfig ga;
  StoreOptions store;
  AnalysisSpec analysis;
  uint64_t digest = 0;

  uint64_t seed_for(const std::string& label) const { return sub_seed(seed, label); }

  Corpus make_corpus() const {
    if (data.source == "synth_text") {
      SynthTextSpec spec;
      spec.seed = seed_for("data");
      spec.n_docs = data.n_docs;
      spec.words_lo = data.words_lo;
      spec.words_hi = data.words_hi;
      spec.styles = data.styles;
      spec.blocks = data.blocks;
      spec.train_frac = data.train_frac;
      spec.val_frac = data.val_frac;
      IngestConfig icfg{data.min_length, data.minhash_perms, data.train_frac, data.val_frac,
                        data.t_batches};
      return ingest_docs(synth_text_docs(spec), icfg);
    }
    if (data.source == "synth_regression")
      return synth_regression(seed_for("data"), data.n_samples, data.feature_dim,
                              data.t_batches, data.train_frac, data.val_frac,
                              data.noise_scale);
    if (data.source == "file") {
      IngestConfig icfg{data.min_length, data.minhash_perms, data.train_frac, data.val_frac,
                        data.t_batches};
      return ingest(data.path, icfg);
    }
    throw ConfigError("config: unknown data source '" + data.source + "'");
  }

  static std::unique_ptr<DifferentiableModel> instantiate(const ModelSpec& spec,
                                                          const Corpus& corpus) {
    if (spec.kind == "char_lm") {
      if (corpus.mode != DataMode::language_model)
        throw ConfigError("config: char_lm model needs a language-model corpus");
      return std::make_unique<CharLm>(corpus.vocab_size(), spec.window, spec.embed_dim,
                                      spec.hidden_dim, spec.init_scale);
    }
    if (spec.kind == "mlp_regressor") {
      if (corpus.mode != DataMode::regression)
        throw ConfigError("config: mlp_regressor model needs a regression corpus");
      return std::make_unique<MlpRegressor>(corpus.feature_dim, spec.hidden_dim,
                                            spec.init_scale);
    }
    if (spec.kind == "quadratic") return std::make_unique<QuadraticModel>(spec.dim);
    throw ConfigError("config: unknown model kind '" + spec.kind + "'");
  }

  std::unique_ptr<DifferentiableModel> make_model(const Corpus& corpus) const {
    return instantiate(model, corpus);
  }
};

namespace detail {

inline ModelSpec parse_model_spec(const json& m, const std::string& path) {
  reject_unknown_keys(m, {"kind", "window", "embed_dim", "hidden_dim", "dim", "init_scale"},
                      path);
  ModelSpec spec;
  spec.kind = get_or<std::string>(m, "kind", spec.kind);
  spec.window = get_or<uint32_t>(m, "window", spec.window);
  spec.embed_dim = get_or<uint32_t>(m, "embed_dim", spec.embed_dim);
  spec.hidden_dim = get_or<uint32_t>(m, "hidden_dim", spec.hidden_dim);
  spec.dim = get_or<uint32_t>(m, "dim", spec.dim);
  spec.init_scale = get_or<double>(m, "init_scale", spec.init_scale);
  return spec;
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = detail::line_col(text, e.byte ? e.byte - 1 : 0);
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError(origin + ": config root must be an object");
  detail::reject_unknown_keys(root,
                              {"seed", "out_dir", "model", "model_weak", "data", "adam",
                               "estimator", "ga", "store", "analysis"},
                              "");

  RunConfig cfg;
  cfg.seed = detail::get_or<uint64_t>(root, "seed", cfg.seed);
  cfg.out_dir = detail::get_or<std::string>(root, "out_dir", cfg.out_dir);

  if (root.contains("model")) cfg.model = detail::parse_model_spec(root["model"], "model.");
  if (root.contains("model_weak"))
    cfg.model_weak = detail::parse_model_spec(root["model_weak"], "model_weak.");

  if (root.contains("data")) {
    const json& d = root["data"];
    detail::reject_unknown_keys(
        d,
        {"source", "path", "t_batches", "train_frac", "val_frac", "min_length",
         "minhash_perms", "n_docs", "words_lo", "words_hi", "styles", "blocks", "n_samples",
         "feature_dim", "noise_scale"},
        "data.");
    DataSpec& ds = cfg.data;
    ds.source = detail::get_or<std::string>(d, "source", ds.source);
    ds.path = detail::get_or<std::string>(d, "path", ds.path);
    ds.t_batches = detail::get_or<uint32_t>(d, "t_batches", ds.t_batches);
    ds.train_frac = detail::get_or<double>(d, "train_frac", ds.train_frac);
    ds.val_frac = detail::get_or<double>(d, "val_frac", ds.val_frac);
    ds.min_length = detail::get_or<size_t>(d, "min_length", ds.min_length);
    ds.minhash_perms = detail::get_or<int>(d, "minhash_perms", ds.minhash_perms);
    ds.n_docs = detail::get_or<size_t>(d, "n_docs", ds.n_docs);
    ds.words_lo = detail::get_or<int>(d, "words_lo", ds.words_lo);
    ds.words_hi = detail::get_or<int>(d, "words_hi", ds.words_hi);
    ds.styles = detail::get_or<int>(d, "styles", ds.styles);
    ds.blocks = detail::get_or<int>(d, "blocks", ds.blocks);
    ds.n_samples = detail::get_or<size_t>(d, "n_samples", ds.n_samples);
    ds.feature_dim = detail::get_or<uint32_t>(d, "feature_dim", ds.feature_dim);
    ds.noise_scale = detail::get_or<double>(d, "noise_scale", ds.noise_scale);
  }

  if (root.contains("adam")) {
    const json& a = root["adam"];
    detail::reject_unknown_keys(a, {"lr", "beta1", "beta2", "eps"}, "adam.");
    cfg.adam.lr = detail::get_or<double>(a, "lr", cfg.adam.lr);
    cfg.adam.beta1 = detail::get_or<double>(a, "beta1", cfg.adam.beta1);
    cfg.adam.beta2 = detail::get_or<double>(a, "beta2", cfg.adam.beta2);
    cfg.adam.eps = detail::get_or<double>(a, "eps", cfg.adam.eps);
    cfg.adam.validate();
  }

  if (root.contains("estimator")) {
    const json& e = root["estimator"];
    detail::reject_unknown_keys(e, {"mode", "c", "clip_bound", "clip_raw_params"},
                                "estimator.");
    std::string mode = detail::get_or<std::string>(e, "mode", "fut");
    if (mode == "fut")
      cfg.estimator.mode = EstimatorMode::fut;
    else if (mode == "futpp")
      cfg.estimator.mode = EstimatorMode::futpp;
    else
      throw ConfigError("config: estimator.mode must be fut or futpp");
    cfg.estimator.c = detail::get_or<double>(e, "c", cfg.estimator.c);
    cfg.estimator.clip_bound = detail::get_or<double>(e, "clip_bound", cfg.estimator.clip_bound);
    cfg.estimator.clip_raw_params =
        detail::get_or<bool>(e, "clip_raw_params", cfg.estimator.clip_raw_params);
    cfg.estimator.validate();
  }

  if (root.contains("ga")) {
    const json& g = root["ga"];
    detail::reject_unknown_keys(
        g, {"population", "generations", "mutation_prob", "inject_identity"}, "ga.");
    cfg.ga.population = detail::get_or<size_t>(g, "population", cfg.ga.population);
    cfg.ga.generations = detail::get_or<size_t>(g, "generations", cfg.ga.generations);
    cfg.ga.mutation_prob = detail::get_or<double>(g, "mutation_prob", cfg.ga.mutation_prob);
    cfg.ga.inject_identity =
        detail::get_or<bool>(g, "inject_identity", cfg.ga.inject_identity);
    cfg.ga.validate();
  }

  if (root.contains("store")) {
    const json& s = root["store"];
    detail::reject_unknown_keys(s, {"compression", "k_ladder", "second_order"}, "store.");
    std::string comp = detail::get_or<std::string>(s, "compression", "jl");
    if (comp == "jl")
      cfg.store.compression = StoreCompression::jl;
    else if (comp == "none")
      cfg.store.compression = StoreCompression::none;
    else
      throw ConfigError("config: store.compression must be jl or none");
    cfg.store.k_ladder =
        detail::get_or<std::vector<uint32_t>>(s, "k_ladder", cfg.store.k_ladder);
    cfg.store.second_order = detail::get_or<bool>(s, "second_order", cfg.store.second_order);
  }

  if (root.contains("analysis")) {
    const json& a = root["analysis"];
    detail::reject_unknown_keys(a, {"absdiff_n", "heatmap_n", "timing_orders"}, "analysis.");
    cfg.analysis.absdiff_n = detail::get_or<size_t>(a, "absdiff_n", cfg.analysis.absdiff_n);
    cfg.analysis.heatmap_n = detail::get_or<size_t>(a, "heatmap_n", cfg.analysis.heatmap_n);
    cfg.analysis.timing_orders =
        detail::get_or<std::vector<size_t>>(a, "timing_orders", cfg.analysis.timing_orders);
  }

  // Digest of the canonical (key-sorted) form, so formatting changes do not
  // invalidate artifacts but value changes do.
  cfg.digest = fnv1a64(root.dump());
  cfg.store.seed = cfg.seed_for("projection");
  cfg.ga.seed = cfg.seed_for("ga");
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace orderlab
