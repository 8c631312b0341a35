// orderlab: reference-trajectory capture, update-term store construction,
// retraining-free trajectory estimation, curriculum search and
// memorization/generalization analysis over training-batch orders.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "orderlab/orderlab.hpp"

namespace fs = std::filesystem;
using namespace orderlab;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  unsigned jobs = 0;
  bool force = false;
  long long seed_override = -1;
};

struct Stage {
  RunConfig cfg;
  fs::path out;
  CommonArgs args;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  fs::path corpus_path() const { return out / "corpus.olc"; }
  fs::path trajectory_path() const { return out / "reference.olt"; }
  fs::path store_path() const { return out / "store.ols"; }

  double elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
};

Stage open_stage(const CommonArgs& args) {
  Stage st;
  st.args = args;
  st.cfg = parse_config(args.config_path);
  if (args.seed_override >= 0) st.cfg.seed = static_cast<uint64_t>(args.seed_override);
  st.cfg.store.jobs = args.jobs;
  st.cfg.ga.jobs = args.jobs;

  std::string dir = st.cfg.out_dir;
  if (const char* env = std::getenv("ORDERLAB_OUT"); env && *env) dir = env;
  if (!args.out_override.empty()) dir = args.out_override;
  st.out = dir;
  fs::create_directories(st.out);
  return st;
}

uint64_t file_crc(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return 0;
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return crc64(buf.data(), buf.size());
}

void require_digest(const Stage& st, uint64_t artifact_digest, const fs::path& path,
                    const char* producer) {
  if (artifact_digest != st.cfg.digest && !st.args.force)
    throw DependencyError(path.string() + " was produced by a different config (digest " +
                          std::to_string(artifact_digest) + " vs " +
                          std::to_string(st.cfg.digest) +
                          "); re-run " + producer + " or pass --force");
}

void require_file(const fs::path& p, const char* producer) {
  if (!fs::exists(p))
    throw DependencyError("missing artifact " + p.string() + "; run '" + producer +
                          "' first");
}

void write_manifest(const Stage& st, const std::string& command,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["config_digest"] = st.cfg.digest;
  m["wall_time_s"] = st.elapsed_s();
  json in = json::object(), outj = json::object();
  for (const auto& p : inputs) in[p.filename().string()] = file_crc(p);
  for (const auto& p : outputs) outj[p.filename().string()] = file_crc(p);
  m["inputs"] = in;
  m["outputs"] = outj;
  std::string name = command + "_manifest.json";
  for (char& c : name)
    if (c == '-') c = '_';
  std::ofstream f(st.out / name);
  f << m.dump(2) << "\n";
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw PersistenceError("cannot write " + p.string());
  f << text;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct LoadedPipeline {
  Corpus corpus;
  std::unique_ptr<DifferentiableModel> model;
  ReferenceTrajectory trajectory;
};

LoadedPipeline load_corpus_and_trajectory(const Stage& st) {
  require_file(st.corpus_path(), "train-ref");
  require_file(st.trajectory_path(), "train-ref");
  LoadedPipeline lp;
  uint64_t d1 = 0, d2 = 0;
  lp.corpus = load_corpus(st.corpus_path().string(), &d1);
  lp.trajectory = load_trajectory(st.trajectory_path().string(), &d2);
  require_digest(st, d1, st.corpus_path(), "train-ref");
  require_digest(st, d2, st.trajectory_path(), "train-ref");
  lp.model = st.cfg.make_model(lp.corpus);
  return lp;
}

UpdateTermStore load_store_checked(const Stage& st, const DifferentiableModel& model) {
  require_file(st.store_path(), "build-store");
  auto layout = model.param_template().layout();
  UpdateTermStore store = UpdateTermStore::load(st.store_path().string(), &layout);
  require_digest(st, store.config_digest(), st.store_path(), "build-store");
  return store;
}

std::vector<Permutation> parse_perm_arg(const std::string& arg, size_t t_batches) {
  std::vector<Permutation> perms;
  if (arg.empty() || arg == "identity") {
    perms.push_back(Permutation::identity(t_batches));
    return perms;
  }
  if (arg[0] == '@') {
    std::ifstream in(arg.substr(1));
    if (!in) throw InputError("cannot open permutation file " + arg.substr(1));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      perms.push_back(Permutation::parse(line));
    }
    if (perms.empty()) throw InputError("permutation file is empty: " + arg.substr(1));
  } else {
    perms.push_back(Permutation::parse(arg));
  }
  for (const auto& p : perms)
    if (p.size() != t_batches)
      throw InputError("permutation length " + std::to_string(p.size()) +
                       " does not match T=" + std::to_string(t_batches));
  return perms;
}

// --- commands ---------------------------------------------------------------

int cmd_train_ref(const CommonArgs& args) {
  Stage st = open_stage(args);
  Corpus corpus = st.cfg.make_corpus();
  auto model = st.cfg.make_model(corpus);
  ParamVector p0 = model->init_params(st.cfg.seed_for("init"));
  Permutation order = Permutation::identity(corpus.batch_count());
  ReferenceTrajectory traj = train_reference(*model, corpus, order, st.cfg.adam, p0);

  save_corpus(corpus, st.corpus_path().string(), st.cfg.digest);
  save_trajectory(traj, st.trajectory_path().string(), st.cfg.digest);

  EvalResult initial = evaluate(*model, traj.checkpoints.front(), corpus.validation_set());
  EvalResult final = evaluate(*model, traj.checkpoints.back(), corpus.validation_set());
  json summary;
  summary["t_batches"] = corpus.batch_count();
  summary["param_count"] = p0.total_dim();
  summary["initial_metric"] = initial.metric(model->mode());
  summary["final_metric"] = final.metric(model->mode());
  summary["config_digest"] = st.cfg.digest;
  write_text(st.out / "train_ref_summary.json", summary.dump(2) + "\n");
  std::cout << "train-ref: T=" << corpus.batch_count() << " params=" << p0.total_dim()
            << " val metric " << initial.metric(model->mode()) << " -> "
            << final.metric(model->mode()) << "\n";
  write_manifest(st, "train-ref", {},
                 {st.corpus_path(), st.trajectory_path(), st.out / "train_ref_summary.json"});
  return 0;
}

int cmd_build_store(const CommonArgs& args) {
  Stage st = open_stage(args);
  LoadedPipeline lp = load_corpus_and_trajectory(st);
  UpdateTermStore store =
      build_store(lp.trajectory, *lp.model, lp.corpus, st.cfg.store, st.cfg.digest);
  store.save(st.store_path().string());
  std::cout << "build-store: " << store.t_batches() * store.t_batches() << " entries, "
            << store.stored_value_count() << "/" << store.raw_value_count()
            << " values stored (compressed/raw)\n";
  write_manifest(st, "build-store", {st.corpus_path(), st.trajectory_path()},
                 {st.store_path()});
  return 0;
}

int cmd_estimate(const CommonArgs& args, const std::string& perm_arg, const std::string& mode,
                 bool every_step) {
  Stage st = open_stage(args);
  LoadedPipeline lp = load_corpus_and_trajectory(st);
  UpdateTermStore store = load_store_checked(st, *lp.model);

  EstimatorConfig ec = st.cfg.estimator;
  if (mode == "fut")
    ec.mode = EstimatorMode::fut;
  else if (mode == "futpp")
    ec.mode = EstimatorMode::futpp;
  else if (!mode.empty())
    throw ConfigError("--mode must be fut or futpp");

  auto perms = parse_perm_arg(perm_arg, store.t_batches());
  const Dataset val = lp.corpus.validation_set();

  std::string jsonl;
  std::string csv = "perm,mode,final_metric\n";
  for (const auto& perm : perms) {
    EstimatedTrajectory est = estimate(store, lp.trajectory, perm, ec);
    auto evals = estimate_performance(est, *lp.model, val, every_step);
    json rec;
    rec["perm"] = perm.to_string();
    rec["mode"] = mode_name(ec.mode);
    rec["final_ppl"] = evals.back().metric(lp.model->mode());
    rec["config_digest"] = st.cfg.digest;
    rec["clip_events"] = est.clip_events;
    if (every_step) {
      json steps = json::array();
      for (const auto& e : evals) steps.push_back(e.metric(lp.model->mode()));
      rec["per_step_ppl"] = steps;
    }
    jsonl += rec.dump() + "\n";
    csv += perm.to_string() + "," + mode_name(ec.mode) + "," +
           fmt(evals.back().metric(lp.model->mode())) + "\n";
    std::cout << "estimate perm=[" << perm.to_string() << "] mode=" << mode_name(ec.mode)
              << " final=" << evals.back().metric(lp.model->mode()) << "\n";
  }
  write_text(st.out / "estimates.jsonl", jsonl);
  write_text(st.out / "estimates.csv", csv);
  write_manifest(st, "estimate", {st.corpus_path(), st.trajectory_path(), st.store_path()},
                 {st.out / "estimates.jsonl", st.out / "estimates.csv"});
  return 0;
}

int cmd_absdiff(const CommonArgs& args, size_t n_override, const std::string& methods_arg) {
  Stage st = open_stage(args);
  LoadedPipeline lp = load_corpus_and_trajectory(st);
  UpdateTermStore store = load_store_checked(st, *lp.model);

  AbsDiffOptions opts;
  opts.n_orders = n_override ? n_override : st.cfg.analysis.absdiff_n;
  opts.seed = st.cfg.seed_for("absdiff");
  opts.jobs = args.jobs;
  if (!methods_arg.empty()) {
    opts.methods.clear();
    std::stringstream ss(methods_arg);
    std::string m;
    while (std::getline(ss, m, ',')) opts.methods.insert(m);
  }
  if (opts.methods.count("futpp") && !store.includes_second_order())
    throw StoreError("absdiff: futpp requested but store lacks second-order terms");

  auto reports = absdiff_eval(store, lp.trajectory, *lp.model, lp.corpus, st.cfg.estimator,
                              opts);
  json out;
  out["n_orders"] = opts.n_orders;
  out["config_digest"] = st.cfg.digest;
  std::string csv = "method,absdiff\n";
  for (const auto& rep : reports) {
    json orders = json::array();
    for (const auto& o : rep.orders)
      orders.push_back({{"perm", o.perm.to_string()}, {"r", o.r_true}, {"r_est", o.r_est}});
    out["methods"][rep.method] = {{"absdiff", rep.absdiff}, {"orders", orders}};
    csv += rep.method + "," + fmt(rep.absdiff) + "\n";
    std::cout << "absdiff " << rep.method << " = " << rep.absdiff << "\n";
  }
  write_text(st.out / "absdiff.json", out.dump(2) + "\n");
  write_text(st.out / "absdiff.csv", csv);
  write_manifest(st, "absdiff", {st.corpus_path(), st.trajectory_path(), st.store_path()},
                 {st.out / "absdiff.json", st.out / "absdiff.csv"});
  return 0;
}

int cmd_curriculum(const CommonArgs& args, const std::string& strategy, bool descending) {
  Stage st = open_stage(args);
  LoadedPipeline lp = load_corpus_and_trajectory(st);

  Permutation result;
  double est_metric = 0;
  std::vector<fs::path> outputs;

  if (strategy == "ga") {
    UpdateTermStore store = load_store_checked(st, *lp.model);
    GAResult ga = ga_search(store, lp.trajectory, *lp.model, lp.corpus.validation_set(),
                            st.cfg.ga, st.cfg.estimator);
    result = ga.best;
    est_metric = ga.best_fitness;
    std::string hist;
    for (const auto& g : ga.history) {
      json rec;
      rec["generation"] = g.generation;
      rec["best_fitness"] = g.best_fitness;
      rec["median_fitness"] = g.median_fitness;
      rec["best_genome"] = g.best.to_string();
      hist += rec.dump() + "\n";
    }
    write_text(st.out / "ga_history.jsonl", hist);
    outputs.push_back(st.out / "ga_history.jsonl");
    std::cout << "curriculum ga: best estimated metric " << est_metric << " after "
              << ga.fitness_evaluations << " estimator runs\n";
  } else {
    CurriculumStrategy strat = parse_strategy(strategy);
    BaselineRefs refs;
    std::unique_ptr<DifferentiableModel> weak_model;
    ParamVector ref_params, weak_params;
    if (strat == CurriculumStrategy::ppl || strat == CurriculumStrategy::pd) {
      refs.model = lp.model.get();
      ref_params = lp.trajectory.checkpoints.back();
      refs.ref_params = &ref_params;
    }
    if (strat == CurriculumStrategy::pd) {
      if (!st.cfg.model_weak)
        throw ConfigError("curriculum pd: config needs a model_weak block");
      weak_model = RunConfig::instantiate(*st.cfg.model_weak, lp.corpus);
      ParamVector w0 = weak_model->init_params(st.cfg.seed_for("weak_init"));
      ReferenceTrajectory weak_traj =
          train_reference(*weak_model, lp.corpus, lp.trajectory.order, st.cfg.adam, w0);
      weak_params = weak_traj.checkpoints.back();
      refs.weak_model = weak_model.get();
      refs.weak_params = &weak_params;
    }
    result = baseline_order(lp.corpus, strat, refs, st.cfg.seed_for("curriculum"), descending);
    std::cout << "curriculum " << strategy << ": [" << result.to_string() << "]\n";
  }

  write_text(st.out / "curriculum.txt", result.to_string() + "\n");
  outputs.push_back(st.out / "curriculum.txt");
  json meta;
  meta["strategy"] = strategy;
  meta["order"] = result.to_string();
  meta["config_digest"] = st.cfg.digest;
  if (strategy == "ga") meta["estimated_metric"] = est_metric;
  write_text(st.out / "curriculum_meta.json", meta.dump(2) + "\n");
  outputs.push_back(st.out / "curriculum_meta.json");
  write_manifest(st, "curriculum", {st.corpus_path(), st.trajectory_path()}, outputs);
  return 0;
}

std::string heatmap_csv(const Heatmap& hm) {
  std::string csv = "batch";
  for (size_t j = 0; j < hm.t; ++j) csv += ",pos" + std::to_string(j);
  csv += "\n";
  for (size_t i = 0; i < hm.t; ++i) {
    csv += std::to_string(i);
    for (size_t j = 0; j < hm.t; ++j) csv += "," + fmt(hm.at(i, j));
    csv += "\n";
  }
  return csv;
}

int cmd_memgen(const CommonArgs& args, size_t n_override, bool oracle) {
  Stage st = open_stage(args);
  LoadedPipeline lp = load_corpus_and_trajectory(st);
  UpdateTermStore store;
  if (!oracle) store = load_store_checked(st, *lp.model);

  MemGenOptions opts;
  opts.n_per_cell = n_override ? n_override : st.cfg.analysis.heatmap_n;
  opts.seed = st.cfg.seed_for("memgen");
  opts.oracle = oracle;
  opts.jobs = args.jobs;

  MemGenResult res = memgen_heatmaps(oracle ? nullptr : &store, lp.trajectory, *lp.model,
                                     lp.corpus, lp.corpus.test_set(), st.cfg.estimator, opts);

  std::string suffix = oracle ? "_oracle" : "";
  write_text(st.out / ("mem_heatmap" + suffix + ".csv"), heatmap_csv(res.mem));
  write_text(st.out / ("gen_heatmap" + suffix + ".csv"), heatmap_csv(res.gen));

  json meta;
  meta["n_per_cell"] = opts.n_per_cell;
  meta["oracle"] = oracle;
  meta["config_digest"] = st.cfg.digest;
  meta["tau"] = res.tau;
  meta["similarity"] = res.similarity;
  json groups = json::array();
  for (bool hg : res.high_group) groups.push_back(hg ? "high" : "low");
  meta["group"] = groups;
  write_text(st.out / ("memgen_meta" + suffix + ".json"), meta.dump(2) + "\n");

  // Group-mean generalization curves over positions.
  std::string gcsv = "group";
  for (size_t j = 0; j < res.gen.t; ++j) gcsv += ",pos" + std::to_string(j);
  gcsv += "\n";
  for (int hg = 1; hg >= 0; --hg) {
    gcsv += hg ? "high" : "low";
    for (size_t j = 0; j < res.gen.t; ++j) {
      double s = 0;
      size_t n = 0;
      for (size_t i = 0; i < res.gen.t; ++i)
        if (!res.high_group.empty() && res.high_group[i] == static_cast<bool>(hg)) {
          s += res.gen.at(i, j);
          ++n;
        }
      gcsv += "," + (n ? fmt(s / static_cast<double>(n)) : std::string("nan"));
    }
    gcsv += "\n";
  }
  write_text(st.out / ("gen_groups" + suffix + ".csv"), gcsv);

  std::cout << "memgen" << (oracle ? " (oracle)" : "") << ": T=" << res.mem.t
            << " recency spearman=" << res.mem.mean_position_spearman() << " tau=" << res.tau
            << "\n";
  std::vector<fs::path> inputs = {st.corpus_path(), st.trajectory_path()};
  if (!oracle) inputs.push_back(st.store_path());
  write_manifest(st, oracle ? "memgen-oracle" : "memgen", inputs,
                 {st.out / ("mem_heatmap" + suffix + ".csv"),
                  st.out / ("gen_heatmap" + suffix + ".csv"),
                  st.out / ("memgen_meta" + suffix + ".json"),
                  st.out / ("gen_groups" + suffix + ".csv")});
  return 0;
}

int cmd_timing(const CommonArgs& args, const std::vector<size_t>& orders_override) {
  Stage st = open_stage(args);
  LoadedPipeline lp = load_corpus_and_trajectory(st);

  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };

  auto t0 = clock::now();
  UpdateTermStore store =
      build_store(lp.trajectory, *lp.model, lp.corpus, st.cfg.store, st.cfg.digest);
  auto t1 = clock::now();
  double build_cost = secs(t0, t1);

  const size_t t = store.t_batches();
  Rng rng(st.cfg.seed_for("timing"));
  const size_t n_est = 20, n_retrain = 5;
  std::vector<Permutation> perms;
  for (size_t i = 0; i < std::max(n_est, n_retrain); ++i)
    perms.push_back(Permutation::random(t, rng));

  const Dataset val = lp.corpus.validation_set();
  auto t2 = clock::now();
  for (size_t i = 0; i < n_est; ++i) {
    EstimatedTrajectory est = estimate(store, lp.trajectory, perms[i], st.cfg.estimator);
    (void)evaluate(*lp.model, est.final_params(), val);
  }
  auto t3 = clock::now();
  double est_cost = secs(t2, t3) / static_cast<double>(n_est);

  auto t4 = clock::now();
  for (size_t i = 0; i < n_retrain; ++i)
    (void)retrain_oracle(*lp.model, lp.corpus, perms[i], st.cfg.adam,
                         lp.trajectory.checkpoints[0], val);
  auto t5 = clock::now();
  double retrain_cost = secs(t4, t5) / static_cast<double>(n_retrain);

  auto n_values = orders_override.empty() ? st.cfg.analysis.timing_orders : orders_override;
  auto rows = timing_compare(build_cost, est_cost, retrain_cost, n_values);

  std::string csv = "n_orders,amortized_per_order_s,retrain_per_order_s,speedup\n";
  for (const auto& row : rows) {
    csv += std::to_string(row.n_orders) + "," + fmt(row.amortized_per_order) + "," +
           fmt(row.retrain_per_order) + "," + fmt(row.speedup) + "\n";
    std::cout << "timing N=" << row.n_orders << ": amortized "
              << row.amortized_per_order << "s vs retrain " << row.retrain_per_order
              << "s (speedup " << row.speedup << "x)\n";
  }
  write_text(st.out / "timing.csv", csv);
  json meta;
  meta["store_build_s"] = build_cost;
  meta["estimate_per_order_s"] = est_cost;
  meta["retrain_per_order_s"] = retrain_cost;
  meta["config_digest"] = st.cfg.digest;
  write_text(st.out / "timing_meta.json", meta.dump(2) + "\n");
  write_manifest(st, "timing", {st.corpus_path(), st.trajectory_path()},
                 {st.out / "timing.csv", st.out / "timing_meta.json"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orderlab: training-order performance estimation without retraining"};
  app.require_subcommand(1);

  CommonArgs args;
  app.add_option("--config", args.config_path, "run configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--jobs", args.jobs, "worker threads (0 = hardware)");
  app.add_option("--seed", args.seed_override, "override the config master seed");
  app.add_option("--out", args.out_override, "override the output directory");
  app.add_flag("--force", args.force, "ignore config-digest mismatches on input artifacts");

  auto* train = app.add_subcommand("train-ref", "stage 1: record the reference trajectory");
  auto* build = app.add_subcommand("build-store", "stage 2: compute and compress update terms");

  auto* est = app.add_subcommand("estimate", "stage 3: estimate a permuted trajectory");
  std::string perm_arg = "identity", mode_arg;
  bool every_step = false;
  est->add_option("--perm", perm_arg, "comma-separated order, or @file with one per line");
  est->add_option("--mode", mode_arg, "fut or futpp (overrides config)");
  est->add_flag("--every-step", every_step, "evaluate every intermediate step");

  auto* absd = app.add_subcommand("absdiff", "estimator accuracy vs the retraining oracle");
  size_t absdiff_n = 0;
  std::string methods_arg;
  absd->add_option("--n", absdiff_n, "number of sampled orders");
  absd->add_option("--methods", methods_arg, "comma list from fut,futpp,random");

  auto* curr = app.add_subcommand("curriculum", "search or score a training curriculum");
  std::string strategy = "ga";
  bool descending = false;
  curr->add_option("--strategy", strategy, "ga | ro | sl | ppl | pd");
  curr->add_flag("--descending", descending, "sort hard-to-easy instead");

  auto* memgen = app.add_subcommand("memgen", "memorization/generalization heatmaps");
  size_t memgen_n = 0;
  bool oracle = false;
  memgen->add_option("--n", memgen_n, "permutations per cell");
  memgen->add_flag("--oracle", oracle, "retrain for ground truth instead of estimating");

  auto* timing = app.add_subcommand("timing", "amortized estimation vs retraining cost");
  std::vector<size_t> timing_orders;
  timing->add_option("--orders", timing_orders, "order counts to amortize over");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train_ref(args);
    if (build->parsed()) return cmd_build_store(args);
    if (est->parsed()) return cmd_estimate(args, perm_arg, mode_arg, every_step);
    if (absd->parsed()) return cmd_absdiff(args, absdiff_n, methods_arg);
    if (curr->parsed()) return cmd_curriculum(args, strategy, descending);
    if (memgen->parsed()) return cmd_memgen(args, memgen_n, oracle);
    if (timing->parsed()) return cmd_timing(args, timing_orders);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    json rec;
    rec["error"] = e.kind();
    rec["message"] = e.what();
    std::cerr << rec.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json rec;
    rec["error"] = "internal";
    rec["message"] = e.what();
    std::cerr << rec.dump() << "\n";
    return 1;
  }
}
