// Command-line front end: synthesize data, train, evaluate, export maps,
// benchmark the sparse attention kernel, and run the gradient-check suites.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfnet/sfnet.hpp"

namespace {

using json = nlohmann::ordered_json;

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string precision = "standard";
  std::string config_path;
};

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sfnet::ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw sfnet::ConfigError("config file " + path + ": " + e.what());
  }
}

/// Flags win over config-file values: a config entry applies only when the
/// matching flag was not passed on the command line.
template <typename T>
void merge_opt(const CLI::App* cmd, const json& cfg, const std::string& key, T& var) {
  if (cmd->count("--" + key) == 0 && cfg.contains(key)) {
    try {
      var = cfg.at(key).get<T>();
    } catch (const json::exception& e) {
      throw sfnet::ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

sfnet::Precision parse_precision(const std::string& name) {
  if (name == "standard") return sfnet::Precision::standard;
  if (name == "verification") return sfnet::Precision::verification;
  throw sfnet::ConfigError("unknown precision '" + name + "' (standard|verification)");
}

void echo_effective(const json& effective) {
  std::cout << "effective config: " << effective.dump() << "\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string out;
  std::size_t classes = 6, height = 64, width = 64, bands = 32, aux_channels = 2;
};

int run_synth(const GlobalOpts& g, const SynthOpts& o) {
  auto raster = sfnet::synth_generate<float>(o.classes, o.height, o.width, o.bands,
                                             o.aux_channels, g.seed);
  sfnet::write_raster(o.out, raster);
  std::size_t labeled = 0;
  for (auto l : raster.labels)
    if (l) ++labeled;
  std::cout << "wrote " << o.out << ": " << o.height << "x" << o.width << ", " << o.bands
            << " bands, " << o.aux_channels << " aux channels, " << o.classes << " classes, "
            << labeled << " labeled pixels\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string data, out, history;
  double train_fraction = 0.1;
  std::size_t epochs = 30, batch = 32;
  double lr = 1e-3;
  std::size_t patch_size = 11, pca_components = 30, token_dim = 64, stb_depth = 3,
              ffn_multiplier = 2, hsi_filters = 8, aux_filters = 16;
  bool positional_embeddings = false, paper_literal_eq8 = false, zero_aux = false;
};

template <typename S>
int run_train_t(const GlobalOpts& g, const TrainOpts& o) {
  auto raster = sfnet::read_raster<S>(o.data);
  if (o.zero_aux)
    std::fill(raster.aux.raw_value().begin(), raster.aux.raw_value().end(), S(0));

  sfnet::ModelConfig cfg;
  cfg.patch_size = o.patch_size;
  cfg.pca_components = std::min(o.pca_components, raster.bands());
  cfg.hsi_stem_filters = o.hsi_filters;
  cfg.aux_stem_filters = o.aux_filters;
  cfg.aux_channels = raster.aux_channels();
  cfg.token_dim = o.token_dim;
  cfg.stb_depth = o.stb_depth;
  cfg.ffn_multiplier = o.ffn_multiplier;
  cfg.n_classes = raster.n_classes();
  cfg.positional_embeddings = o.positional_embeddings;
  cfg.paper_literal_eq8 = o.paper_literal_eq8;
  cfg.precision = parse_precision(g.precision);
  cfg.seed = g.seed;

  auto model = sfnet::SfNetModel<S>::init(cfg);

  const std::size_t hw = raster.height() * raster.width(), bands = raster.bands();
  std::vector<S> spectra(hw * bands);
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t i = 0; i < hw; ++i) spectra[i * bands + b] = raster.hsi.value()[b * hw + i];
  model.pca =
      sfnet::pca_fit(sfnet::Tensor<S>::from({hw, bands}, std::move(spectra)), cfg.pca_components);

  auto samples = sfnet::extract_patches(sfnet::reduce_raster(model, raster), cfg.patch_size);
  auto split = sfnet::stratified_split(raster.labels, o.train_fraction, g.seed);

  sfnet::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.seed = g.seed;
  tc.checkpoint_path = o.out;

  std::cout << "training on " << split.train_indices.size() << " samples ("
            << split.test_indices.size() << " held out)\n";
  auto history = sfnet::train(model, samples, split, tc);
  for (std::size_t e = 0; e < history.size(); ++e)
    std::cout << "epoch " << e << ": loss " << history[e].loss << ", train acc "
              << history[e].accuracy << "\n";

  const std::string history_path = o.history.empty() ? o.out + ".history.csv" : o.history;
  sfnet::write_history_csv(history_path, history);
  std::cout << "wrote " << o.out << " and " << history_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / map

struct EvalOpts {
  std::string model, data, metrics_csv, json_out;
  double train_fraction = -1;  // default: from checkpoint
  std::int64_t split_seed = -1;
  bool zero_aux = false;
};

double extra_or(const std::vector<sfnet::TensorEntry>& extras, const std::string& name,
                double fallback) {
  for (const auto& e : extras)
    if (e.name == name && !e.data.empty()) return e.data[0];
  return fallback;
}

template <typename S>
int run_eval_t(const GlobalOpts& g, const EvalOpts& o) {
  auto loaded = sfnet::load_model<S>(o.model);
  auto raster = sfnet::read_raster<S>(o.data);
  if (o.zero_aux)
    std::fill(raster.aux.raw_value().begin(), raster.aux.raw_value().end(), S(0));

  const double fraction = o.train_fraction > 0
                              ? o.train_fraction
                              : extra_or(loaded.extras, "train/split_fraction", 0.1);
  const std::uint64_t split_seed =
      o.split_seed >= 0 ? static_cast<std::uint64_t>(o.split_seed)
                        : static_cast<std::uint64_t>(
                              extra_or(loaded.extras, "train/split_seed",
                                       static_cast<double>(g.seed)));

  auto samples =
      sfnet::extract_patches(sfnet::reduce_raster(loaded.model, raster),
                             loaded.model.config.patch_size);
  auto split = sfnet::stratified_split(raster.labels, fraction, split_seed);
  auto metrics = sfnet::evaluate(loaded.model, samples, split);

  std::cout << sfnet::format_metrics_report(metrics, raster.class_names);
  if (!o.metrics_csv.empty()) {
    sfnet::write_metrics_csv(o.metrics_csv, metrics, raster.class_names);
    std::cout << "wrote " << o.metrics_csv << "\n";
  }
  if (!o.json_out.empty()) {
    json j;
    j["oa"] = metrics.oa;
    j["per_class_accuracy"] = metrics.per_class_acc;
    j["confusion"] = metrics.confusion;
    std::ofstream out(o.json_out, std::ios::trunc);
    if (!out) throw sfnet::DataError("cannot open " + o.json_out + " for writing");
    out << j.dump(2) << "\n";
    std::cout << "wrote " << o.json_out << "\n";
  }
  return 0;
}

struct MapOpts {
  std::string model, data, out;
  bool zero_aux = false;
};

template <typename S>
int run_map_t(const GlobalOpts&, const MapOpts& o) {
  auto loaded = sfnet::load_model<S>(o.model);
  auto raster = sfnet::read_raster<S>(o.data);
  if (o.zero_aux)
    std::fill(raster.aux.raw_value().begin(), raster.aux.raw_value().end(), S(0));
  sfnet::export_map(loaded.model, raster, o.out);
  std::cout << "wrote " << o.out << "\n";
  return 0;
}

sfnet::Precision checkpoint_precision(const std::string& path) {
  for (const auto& e : sfnet::read_named_tensors(path))
    if (e.name == "config/precision" && !e.data.empty())
      return e.data[0] != 0.0 ? sfnet::Precision::verification : sfnet::Precision::standard;
  return sfnet::Precision::standard;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
  std::size_t n = 256, d = 64, iters = 10;
};

double median_ms(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

template <typename S>
int run_bench_t(const GlobalOpts& g, const BenchOpts& o) {
  using clock = std::chrono::steady_clock;
  sfnet::Rng rng(g.seed);
  auto x = sfnet::Tensor<S>::uniform({o.n, o.d}, rng, -1, 1);
  auto p = sfnet::SparseAttentionParams<S>::glorot(o.d, sfnet::default_alphas(), rng);
  const auto levels = sfnet::sparsity_levels(o.n, p.alphas);

  sfnet::NoGradGuard ng;
  const auto q = sfnet::linear(x, p.w_q, p.b_q);
  const auto k = sfnet::linear(x, p.w_k, p.b_k);
  const auto v = sfnet::linear(x, p.w_v, p.b_v);
  const auto score = sfnet::attention_scores(q, k);

  auto time_branch = [&](std::size_t kk) {
    for (int w = 0; w < 3; ++w)
      sfnet::matmul(sfnet::row_softmax(sfnet::sparse_row_mask(score, kk)), v);
    std::vector<double> times;
    for (std::size_t it = 0; it < o.iters; ++it) {
      const auto t0 = clock::now();
      auto out = sfnet::matmul(sfnet::row_softmax(sfnet::sparse_row_mask(score, kk)), v);
      const auto t1 = clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return median_ms(times);
  };

  std::cout << "sparse attention bench: n=" << o.n << " d=" << o.d << " iters=" << o.iters
            << " (median after 3 warmups)\n";
  for (std::size_t gi = 0; gi < levels.size(); ++gi)
    std::cout << "  branch alpha=" << p.alphas[gi] << " k=" << levels[gi] << ": "
              << time_branch(levels[gi]) << " ms\n";

  // Dense reference path (no masking).
  for (int w = 0; w < 3; ++w) sfnet::matmul(sfnet::row_softmax(score), v);
  std::vector<double> dense_times;
  sfnet::Tensor<S> dense;
  for (std::size_t it = 0; it < o.iters; ++it) {
    const auto t0 = clock::now();
    dense = sfnet::matmul(sfnet::row_softmax(score), v);
    const auto t1 = clock::now();
    dense_times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::cout << "  dense: " << median_ms(dense_times) << " ms\n";

  // alpha = 1 branch must reproduce dense attention.
  sfnet::SparseAttentionParams<S> dense_p = p;
  dense_p.alphas = {1.0};
  dense_p.branch_weights = sfnet::Tensor<S>::from({1}, {S(1)});
  const auto full = sfnet::sparse_attention(x, dense_p);
  double deviation = 0;
  for (std::size_t i = 0; i < full.numel(); ++i)
    deviation = std::max(deviation, std::abs(static_cast<double>(full.value()[i]) -
                                             static_cast<double>(dense.value()[i])));
  std::cout << "  max deviation of alpha=1 branch from dense: " << deviation << "\n";
  if (!(deviation < 1e-6)) {
    std::cerr << "bench: dense-equivalence deviation " << deviation << " exceeds 1e-6\n";
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int run_gradcheck(double tol) {
  auto results = sfnet::run_standard_gradcheck_suite();
  double worst = 0;
  bool ok = true;
  for (const auto& [name, res] : results) {
    const bool pass = res.passed(tol);
    ok = ok && pass;
    worst = std::max(worst, res.worst_rel_error);
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << ": worst rel error "
              << res.worst_rel_error << " over " << res.checked << " entries";
    if (!res.worst_where.empty()) std::cout << " (at " << res.worst_where << ")";
    std::cout << "\n";
  }
  std::cout << "gradcheck worst relative error: " << worst << " (tolerance " << tol << ")\n";
  return ok ? 0 : 3;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"SF-Net: sparse-focus multi-source pixel classification"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global RNG seed");
  app.add_option("--precision", g.precision, "scalar precision: standard|verification");
  app.add_option("--config", g.config_path, "JSON config file (flags win over file values)");

  SynthOpts synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic SFNR dataset");
  synth_cmd->add_option("--out", synth.out, "output .sfnr path")->required();
  synth_cmd->add_option("--classes", synth.classes, "number of classes");
  synth_cmd->add_option("--height", synth.height, "scene height");
  synth_cmd->add_option("--width", synth.width, "scene width");
  synth_cmd->add_option("--bands", synth.bands, "HSI band count");
  synth_cmd->add_option("--aux-channels", synth.aux_channels, "auxiliary channel count");

  TrainOpts tr;
  auto* train_cmd = app.add_subcommand("train", "train SF-Net on an SFNR dataset");
  train_cmd->add_option("--data", tr.data, "input .sfnr path")->required();
  train_cmd->add_option("--out", tr.out, "output checkpoint (.sfnm)")->required();
  train_cmd->add_option("--history", tr.history, "history CSV path (default <out>.history.csv)");
  train_cmd->add_option("--train-fraction", tr.train_fraction, "per-class train fraction");
  train_cmd->add_option("--epochs", tr.epochs, "training epochs");
  train_cmd->add_option("--batch", tr.batch, "batch size");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--patch-size", tr.patch_size, "odd patch size");
  train_cmd->add_option("--pca-components", tr.pca_components, "retained PCA components");
  train_cmd->add_option("--token-dim", tr.token_dim, "token width D");
  train_cmd->add_option("--stb-depth", tr.stb_depth, "sparse transformer blocks per stream");
  train_cmd->add_option("--ffn-multiplier", tr.ffn_multiplier, "FFN width multiplier");
  train_cmd->add_option("--hsi-filters", tr.hsi_filters, "HSI stem filter count");
  train_cmd->add_option("--aux-filters", tr.aux_filters, "aux stem filter count");
  train_cmd->add_flag("--positional-embeddings", tr.positional_embeddings,
                      "enable learnable positional embeddings");
  train_cmd->add_flag("--paper-literal-eq8", tr.paper_literal_eq8,
                      "use the printed X-stream residual form");
  train_cmd->add_flag("--zero-aux", tr.zero_aux, "zero the auxiliary stream (ablation)");

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_cmd->add_option("--model", ev.model, "checkpoint (.sfnm)")->required();
  eval_cmd->add_option("--data", ev.data, "input .sfnr path")->required();
  eval_cmd->add_option("--train-fraction", ev.train_fraction,
                       "split fraction (default: stored in checkpoint)");
  eval_cmd->add_option("--split-seed", ev.split_seed,
                       "split seed (default: stored in checkpoint)");
  eval_cmd->add_option("--metrics-csv", ev.metrics_csv, "write metrics CSV here");
  eval_cmd->add_option("--json-out", ev.json_out, "write metrics JSON here");
  eval_cmd->add_flag("--zero-aux", ev.zero_aux, "zero the auxiliary stream (ablation)");

  MapOpts mp;
  auto* map_cmd = app.add_subcommand("map", "export a classification map (P6 PPM)");
  map_cmd->add_option("--model", mp.model, "checkpoint (.sfnm)")->required();
  map_cmd->add_option("--data", mp.data, "input .sfnr path")->required();
  map_cmd->add_option("--out", mp.out, "output .ppm path")->required();
  map_cmd->add_flag("--zero-aux", mp.zero_aux, "zero the auxiliary stream (ablation)");

  BenchOpts bn;
  auto* bench_cmd = app.add_subcommand("bench", "time the sparse attention branches");
  bench_cmd->add_option("--n", bn.n, "token count");
  bench_cmd->add_option("--d", bn.d, "token width");
  bench_cmd->add_option("--iters", bn.iters, "timed iterations");

  double gradcheck_tol = 1e-4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--tol", gradcheck_tol, "relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 1;
  }

  json cfg = json::object();
  if (!g.config_path.empty()) cfg = load_config_file(g.config_path);
  merge_opt(&app, cfg, "seed", g.seed);
  merge_opt(&app, cfg, "precision", g.precision);
  const sfnet::Precision precision = parse_precision(g.precision);

  json effective = {{"seed", g.seed}, {"precision", g.precision}};

  if (synth_cmd->parsed()) {
    merge_opt(synth_cmd, cfg, "classes", synth.classes);
    merge_opt(synth_cmd, cfg, "height", synth.height);
    merge_opt(synth_cmd, cfg, "width", synth.width);
    merge_opt(synth_cmd, cfg, "bands", synth.bands);
    merge_opt(synth_cmd, cfg, "aux-channels", synth.aux_channels);
    effective["subcommand"] = "synth";
    effective["out"] = synth.out;
    effective["classes"] = synth.classes;
    effective["height"] = synth.height;
    effective["width"] = synth.width;
    effective["bands"] = synth.bands;
    effective["aux-channels"] = synth.aux_channels;
    echo_effective(effective);
    return run_synth(g, synth);
  }

  if (train_cmd->parsed()) {
    merge_opt(train_cmd, cfg, "train-fraction", tr.train_fraction);
    merge_opt(train_cmd, cfg, "epochs", tr.epochs);
    merge_opt(train_cmd, cfg, "batch", tr.batch);
    merge_opt(train_cmd, cfg, "lr", tr.lr);
    merge_opt(train_cmd, cfg, "patch-size", tr.patch_size);
    merge_opt(train_cmd, cfg, "pca-components", tr.pca_components);
    merge_opt(train_cmd, cfg, "token-dim", tr.token_dim);
    merge_opt(train_cmd, cfg, "stb-depth", tr.stb_depth);
    merge_opt(train_cmd, cfg, "ffn-multiplier", tr.ffn_multiplier);
    merge_opt(train_cmd, cfg, "hsi-filters", tr.hsi_filters);
    merge_opt(train_cmd, cfg, "aux-filters", tr.aux_filters);
    merge_opt(train_cmd, cfg, "positional-embeddings", tr.positional_embeddings);
    merge_opt(train_cmd, cfg, "paper-literal-eq8", tr.paper_literal_eq8);
    merge_opt(train_cmd, cfg, "zero-aux", tr.zero_aux);
    effective["subcommand"] = "train";
    effective["data"] = tr.data;
    effective["out"] = tr.out;
    effective["train-fraction"] = tr.train_fraction;
    effective["epochs"] = tr.epochs;
    effective["batch"] = tr.batch;
    effective["lr"] = tr.lr;
    effective["patch-size"] = tr.patch_size;
    effective["pca-components"] = tr.pca_components;
    effective["token-dim"] = tr.token_dim;
    effective["stb-depth"] = tr.stb_depth;
    effective["ffn-multiplier"] = tr.ffn_multiplier;
    effective["hsi-filters"] = tr.hsi_filters;
    effective["aux-filters"] = tr.aux_filters;
    effective["positional-embeddings"] = tr.positional_embeddings;
    effective["paper-literal-eq8"] = tr.paper_literal_eq8;
    effective["zero-aux"] = tr.zero_aux;
    echo_effective(effective);
    return precision == sfnet::Precision::verification ? run_train_t<double>(g, tr)
                                                       : run_train_t<float>(g, tr);
  }

  if (eval_cmd->parsed()) {
    merge_opt(eval_cmd, cfg, "train-fraction", ev.train_fraction);
    merge_opt(eval_cmd, cfg, "zero-aux", ev.zero_aux);
    effective["subcommand"] = "eval";
    effective["model"] = ev.model;
    effective["data"] = ev.data;
    effective["zero-aux"] = ev.zero_aux;
    echo_effective(effective);
    const auto prec = app.count("--precision") ? precision : checkpoint_precision(ev.model);
    return prec == sfnet::Precision::verification ? run_eval_t<double>(g, ev)
                                                  : run_eval_t<float>(g, ev);
  }

  if (map_cmd->parsed()) {
    merge_opt(map_cmd, cfg, "zero-aux", mp.zero_aux);
    effective["subcommand"] = "map";
    effective["model"] = mp.model;
    effective["data"] = mp.data;
    effective["out"] = mp.out;
    effective["zero-aux"] = mp.zero_aux;
    echo_effective(effective);
    const auto prec = app.count("--precision") ? precision : checkpoint_precision(mp.model);
    return prec == sfnet::Precision::verification ? run_map_t<double>(g, mp)
                                                  : run_map_t<float>(g, mp);
  }

  if (bench_cmd->parsed()) {
    merge_opt(bench_cmd, cfg, "n", bn.n);
    merge_opt(bench_cmd, cfg, "d", bn.d);
    merge_opt(bench_cmd, cfg, "iters", bn.iters);
    effective["subcommand"] = "bench";
    effective["n"] = bn.n;
    effective["d"] = bn.d;
    effective["iters"] = bn.iters;
    echo_effective(effective);
    return precision == sfnet::Precision::verification ? run_bench_t<double>(g, bn)
                                                       : run_bench_t<float>(g, bn);
  }

  if (gc_cmd->parsed()) {
    merge_opt(gc_cmd, cfg, "tol", gradcheck_tol);
    effective["subcommand"] = "gradcheck";
    effective["tol"] = gradcheck_tol;
    echo_effective(effective);
    return run_gradcheck(gradcheck_tol);
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const sfnet::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const sfnet::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const sfnet::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const sfnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
