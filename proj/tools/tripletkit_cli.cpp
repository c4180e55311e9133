// tripletkit command-line tool: datagen, train, evaluate, bench-losses.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tripletkit/checkpoint.hpp"
#include "tripletkit/csv_io.hpp"
#include "tripletkit/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tripletkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitCollapse = 4;

struct CollapseAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string json_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Feeds config-file values into options the user did not set on the command
// line. Keys are option long names with dashes or underscores.
void apply_config(CLI::App& app, const json& cfg) {
  for (CLI::Option* opt : app.get_options()) {
    if (opt->count() > 0 || opt->get_lnames().empty()) continue;
    std::string key = opt->get_lnames().front();
    if (key == "config" || key == "help") continue;
    auto it = cfg.find(key);
    if (it == cfg.end()) {
      std::replace(key.begin(), key.end(), '-', '_');
      it = cfg.find(key);
    }
    if (it == cfg.end()) continue;
    if (it->is_array())
      for (const auto& v : *it) opt->add_result(json_scalar(v));
    else
      opt->add_result(json_scalar(*it));
    opt->run_callback();
  }
}

json read_json_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("cannot open config " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + p.string() + " is not valid JSON: " + e.what());
  }
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

struct GenFlags {
  std::size_t ids = 0, per_id = 0, dim = 0, cams = 2, nuisance_dims = 0, families = 0;
  double identity_spread = 1.0, intra_spread = 0.5, outlier_rate = 0.0, nuisance_spread = 0.0, family_spread = 0.0;

  void add(CLI::App* c, bool required) {
    auto* a = c->add_option("--ids", ids, "Number of identities");
    auto* b = c->add_option("--per-id", per_id, "Items per identity");
    auto* d = c->add_option("--dim", dim, "Feature dimension");
    if (required)
      for (auto* o : {a, b, d}) o->description(o->get_description() + " (required)");
    c->add_option("--cams", cams, "Number of cameras")->capture_default_str();
    c->add_option("--identity-spread", identity_spread)->capture_default_str();
    c->add_option("--intra-spread", intra_spread)->capture_default_str();
    c->add_option("--outlier-rate", outlier_rate, "Fraction of mislabeled items")->capture_default_str();
    c->add_option("--nuisance-dims", nuisance_dims, "Trailing noise-only dimensions")->capture_default_str();
    c->add_option("--nuisance-spread", nuisance_spread)->capture_default_str();
    c->add_option("--families", families, "Groups of identities sharing a centre offset")->capture_default_str();
    c->add_option("--family-spread", family_spread)->capture_default_str();
  }

  void store(GenSpec& g, CLI::App* c) const {
    auto given = [&](const char* n) { return c->get_option(n)->count() > 0; };
    if (given("--ids")) g.num_identities = ids;
    if (given("--per-id")) g.items_per_identity = per_id;
    if (given("--dim")) g.feature_dim = dim;
    if (given("--cams")) g.num_cameras = cams;
    if (given("--identity-spread")) g.identity_spread = identity_spread;
    if (given("--intra-spread")) g.intra_spread = intra_spread;
    if (given("--outlier-rate")) g.outlier_rate = outlier_rate;
    if (given("--nuisance-dims")) g.nuisance_dims = nuisance_dims;
    if (given("--nuisance-spread")) g.nuisance_spread = nuisance_spread;
    if (given("--families")) g.num_families = families;
    if (given("--family-spread")) g.family_spread = family_spread;
  }
};

json spec_to_json(const GenSpec& g) {
  return {{"ids", g.num_identities},          {"per_id", g.items_per_identity},
          {"dim", g.feature_dim},             {"cams", g.num_cameras},
          {"identity_spread", g.identity_spread}, {"intra_spread", g.intra_spread},
          {"outlier_rate", g.outlier_rate},   {"nuisance_dims", g.nuisance_dims},
          {"nuisance_spread", g.nuisance_spread}, {"families", g.num_families},
          {"family_spread", g.family_spread}, {"seed", g.seed}};
}

struct TrainFlags {
  std::string loss, margin, metric;
  std::size_t P = 0, K = 0, B = 0, emb_dim = 0;
  std::vector<std::size_t> hidden;
  double eps0 = 0, slope = 0, init_scale = 0, lmnn_mu = 0;
  std::int64_t t0 = 0, t1 = 0;
  double ohm_fraction = 0;
  std::int64_t ohm_refresh = 0;
  std::size_t ohm_pool = 0, collapse_window = 0;
  double collapse_ratio = 0;
  bool keep_going = false;

  void add(CLI::App* c) {
    c->add_option("--loss", loss, "triplet, triplet_ohm, batch_hard, batch_hard_nnz, batch_all, batch_all_nnz, lifted, lifted_gen, lmnn");
    c->add_option("--margin", margin, "Nonnegative margin or 'soft'");
    c->add_option("--metric", metric, "euclidean or squared");
    c->add_option("-P,--P", P, "Identities per batch");
    c->add_option("-K,--K", K, "Items per identity in a batch");
    c->add_option("-B,--B", B, "Triplets per batch (triplet, triplet_ohm)");
    c->add_option("--hidden", hidden, "Hidden layer widths");
    c->add_option("--emb-dim", emb_dim, "Embedding dimension");
    c->add_option("--slope", slope, "Leaky ReLU slope");
    c->add_option("--init-scale", init_scale, "Multiplier on initial weights");
    c->add_option("--eps0", eps0, "Initial learning rate");
    c->add_option("--t0", t0, "Iteration where decay starts");
    c->add_option("--t1", t1, "Final iteration");
    c->add_option("--lmnn-mu", lmnn_mu);
    c->add_option("--ohm-fraction", ohm_fraction, "Fraction of the training set embedded when mining");
    c->add_option("--ohm-refresh", ohm_refresh, "Iterations between mining passes");
    c->add_option("--ohm-pool", ohm_pool, "Triplets kept per mining pass (0: 10 x B)");
    c->add_option("--collapse-window", collapse_window, "Consecutive collapsed records before the alarm");
    c->add_option("--collapse-ratio", collapse_ratio, "Median distance, relative to the first batch, counted as collapsed");
    c->add_flag("--keep-going", keep_going, "Do not abort when the collapse alarm fires");
  }

  void store(RunConfig& r, CLI::App* c) const {
    auto given = [&](const char* n) { return c->get_option(n)->count() > 0; };
    if (given("--loss")) r.loss = parse_loss(loss);
    if (given("--margin")) r.margin = parse_margin(margin);
    if (given("--metric")) r.metric = parse_metric(metric);
    if (given("--P")) r.P = P;
    if (given("--K")) r.K = K;
    if (given("--B")) r.B = B;
    if (given("--hidden")) r.hidden_widths = hidden;
    if (given("--emb-dim")) r.embedding_dim = emb_dim;
    if (given("--slope")) r.slope = slope;
    if (given("--init-scale")) r.init_scale = init_scale;
    if (given("--eps0")) r.schedule.eps0 = eps0;
    if (given("--t0")) r.schedule.t0 = t0;
    if (given("--t1")) r.schedule.t1 = t1;
    if (given("--lmnn-mu")) r.lmnn_mu = lmnn_mu;
    if (given("--ohm-fraction")) r.ohm.sample_fraction = ohm_fraction;
    if (given("--ohm-refresh")) r.ohm.refresh_every = ohm_refresh;
    if (given("--ohm-pool")) r.ohm.pool_size = ohm_pool;
    if (given("--collapse-window")) r.collapse.window = collapse_window;
    if (given("--collapse-ratio")) r.collapse.relative_distance = collapse_ratio;
    if (keep_going) r.abort_on_collapse = false;
  }
};

struct EvalFlags {
  std::string checkpoint, query, gallery, distractors, metric = "euclidean";
  bool multi_query = false, keep_same_camera = false, prepend = false;
  std::vector<std::size_t> ranks{1, 5, 10};

  EvalProtocol protocol() const {
    EvalProtocol p;
    p.mode = multi_query ? QueryMode::multi_query : QueryMode::single_query;
    p.exclude_same_camera_same_id = !keep_same_camera;
    p.cmc_ranks = ranks;
    p.metric = parse_metric(metric);
    p.validate();
    return p;
  }
};

json result_json(const EvalResult& r) {
  json cmc = json::object();
  for (const auto& [rank, v] : r.cmc) cmc[std::to_string(rank)] = v;
  return {{"map", r.map}, {"cmc", cmc}, {"num_queries", r.num_queries}, {"num_skipped", r.num_skipped}};
}

// Checked after the config file is applied so required values may come
// from either source.
void require_given(CLI::App* c, std::initializer_list<const char*> names) {
  for (const char* n : names)
    if (c->get_option(n)->count() == 0) throw CLI::RequiredError(std::string(n));
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot open " + p.string() + " for writing");
  os << s;
}

int run_datagen(const Globals& g, const GenFlags& f, CLI::App* c) {
  GenSpec spec;
  f.store(spec, c);
  if (g.seed) spec.seed = *g.seed;
  const auto ds = generate(spec);
  const fs::path out(g.out);
  fs::create_directories(out);
  write_dataset_csv(out / "train.csv", ds);
  write_text(out / "spec.json", spec_to_json(spec).dump(2) + "\n");
  std::cout << "wrote " << ds.size() << " rows to " << (out / "train.csv").string() << "\n";
  return kExitOk;
}

int run_train(const Globals& g, const TrainFlags& f, const std::string& train_csv, const std::string& val_csv,
              bool dump_terms, CLI::App* c) {
  RunConfig cfg;
  f.store(cfg, c);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  const auto ds = read_dataset_csv(fs::path(train_csv), 'f');
  const fs::path out(g.out);
  fs::create_directories(out);
  std::ofstream terms;
  if (dump_terms) {
    terms.open(out / "terms.csv", std::ios::binary);
    if (!terms) throw DataError("cannot open terms.csv for writing");
    terms << "iter,term,value\n";
  }
  const auto res = train(
      cfg, ds,
      [&](const TrainLogRecord& r) {
        if (r.iteration % 500 == 0)
          std::cout << "iter " << r.iteration << " loss " << r.loss_mean << " active " << r.active_fraction
                    << " lr " << r.lr << "\n";
      },
      [&](std::int64_t t, const LossReport& rep) {
        if (!dump_terms) return;
        for (std::size_t i = 0; i < rep.per_term.size(); ++i)
          terms << t << ',' << i << ',' << format_double(rep.per_term[i]) << '\n';
      });
  res.log.write_csv(out / "train_log.csv");
  save_checkpoint(out / "checkpoint.json", {res.params, res.optim});
  if (!val_csv.empty()) {
    const auto val = read_dataset_csv(fs::path(val_csv), 'f');
    const auto ev = evaluate_model(res.params, val);
    std::cout << "validation mAP " << ev.map << " rank-1 " << ev.cmc_at(1) << "\n";
  }
  if (res.collapsed) {
    std::cerr << "collapse alarm at iteration " << res.iterations - 1 << "\n";
    if (cfg.abort_on_collapse) throw CollapseAbort("training collapsed");
  }
  std::cout << "wrote " << (out / "checkpoint.json").string() << "\n";
  return kExitOk;
}

int run_evaluate(const Globals& g, const EvalFlags& f) {
  const auto protocol = f.protocol();
  const auto ck = load_checkpoint(f.checkpoint);
  const auto queries = read_dataset_csv(fs::path(f.query), 'f');
  const auto gallery = read_dataset_csv(fs::path(f.gallery), 'f');
  const auto in = ck.params.input_width();
  for (const auto* ds : {&queries, &gallery})
    if (ds->dim() != in)
      throw DimensionError("data width " + std::to_string(ds->dim()) + " does not match checkpoint input width " +
                           std::to_string(in));
  const auto eq = embed(ck.params, queries);
  const auto eg = embed(ck.params, gallery);
  const auto r = evaluate(eq, eg, protocol);
  json report = result_json(r);
  report["protocol"] = {{"mode", protocol.mode == QueryMode::multi_query ? "multi_query" : "single_query"},
                        {"exclude_same_camera_same_id", protocol.exclude_same_camera_same_id},
                        {"metric", std::string(to_string(protocol.metric))},
                        {"cmc_ranks", protocol.cmc_ranks}};
  std::cout << "mAP " << r.map;
  for (const auto& [rank, v] : r.cmc)
    if (rank <= 5) std::cout << "  rank-" << rank << " " << v;
  std::cout << "\n";
  if (!f.distractors.empty()) {
    const auto d = read_dataset_csv(fs::path(f.distractors), 'f');
    if (d.dim() != in) throw DimensionError("distractor width does not match checkpoint input width");
    const auto mixed = inject_distractors(eg, embed(ck.params, d), eq, f.prepend ? Placement::prepend : Placement::append);
    const auto rd = evaluate(eq, mixed, protocol);
    report["distractors"] = {{"count", d.size()}, {"map_before", r.map}, {"map_after", rd.map},
                             {"result", result_json(rd)}};
    std::cout << "with " << d.size() << " distractors: mAP " << r.map << " -> " << rd.map << "\n";
  }
  write_text(fs::path(g.out) / "report.json", report.dump(2) + "\n");
  return kExitOk;
}

int run_bench(const Globals& g, const TrainFlags& tf, const GenFlags& gf, const std::vector<std::string>& losses,
              const std::vector<std::string>& margins, double val_fraction, std::optional<std::uint64_t> split_seed,
              CLI::App* c) {
  BenchConfig bc;
  tf.store(bc.base, c);
  gf.store(bc.data, c);
  if (g.seed) {
    bc.base.seed = *g.seed;
    bc.data.seed = *g.seed;
  }
  if (split_seed) bc.split_seed = *split_seed;
  if (c->get_option("--val-fraction")->count()) bc.val_fraction = val_fraction;
  if (!losses.empty()) {
    bc.losses.clear();
    for (const auto& l : losses) bc.losses.push_back(parse_loss(l));
  }
  if (!margins.empty()) {
    bc.margins.clear();
    for (const auto& m : margins) bc.margins.push_back(parse_margin(m));
  }
  bc.base.validate();
  const auto cells = run_bench(bc, [](const BenchCell& cell) {
    std::cout << to_string(cell.loss) << " / " << to_string(cell.margin) << ": "
              << (cell.failed ? "failed (" + cell.error + ")" : "mAP " + std::to_string(cell.map)) << "\n";
  });
  const fs::path out(g.out);
  fs::create_directories(out);
  std::ofstream csv(out / "bench.csv", std::ios::binary);
  write_bench_csv(csv, cells);
  const auto table = render_bench_table(cells, bc.losses, bc.margins);
  write_text(out / "bench.txt", table);
  std::cout << table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triplet-loss metric learning toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON file with option values (command-line flags take precedence)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("-o,--out", g.out, "Output directory")->capture_default_str();

  auto* datagen = app.add_subcommand("datagen", "Write a synthetic identity dataset");
  GenFlags gen;
  gen.add(datagen, true);

  auto* train_cmd = app.add_subcommand("train", "Train an embedding network");
  TrainFlags tf;
  tf.add(train_cmd);
  std::string train_csv, val_csv;
  train_cmd->add_option("--train", train_csv, "Training CSV (required)");
  train_cmd->add_option("--val", val_csv, "Optional validation CSV");
  bool dump_terms = false;
  train_cmd->add_flag("--dump-terms", dump_terms, "Write every per-term loss value to terms.csv");

  auto* eval_cmd = app.add_subcommand("evaluate", "Embed and score a query/gallery split");
  EvalFlags ef;
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "(required)");
  eval_cmd->add_option("--query", ef.query, "(required)");
  eval_cmd->add_option("--gallery", ef.gallery, "(required)");
  eval_cmd->add_option("--distractors", ef.distractors, "Extra gallery items from unseen identities");
  eval_cmd->add_flag("--prepend", ef.prepend, "Place distractors before the gallery");
  eval_cmd->add_flag("--multi-query", ef.multi_query, "Mean-pool queries per identity and camera");
  eval_cmd->add_flag("--keep-same-camera", ef.keep_same_camera, "Keep same-identity same-camera gallery items");
  eval_cmd->add_option("--ranks", ef.ranks, "CMC ranks")->capture_default_str();
  eval_cmd->add_option("--metric", ef.metric)->capture_default_str();

  auto* bench_cmd = app.add_subcommand("bench-losses", "Train and score a loss x margin grid");
  TrainFlags btf;
  btf.add(bench_cmd);
  GenFlags bgen;
  bgen.add(bench_cmd, false);
  std::vector<std::string> losses, margins;
  double val_fraction = 0.3;
  std::optional<std::uint64_t> split_seed;
  bench_cmd->add_option("--losses", losses, "Loss variants (default: triplet batch_hard)");
  bench_cmd->add_option("--margins", margins, "Margins (default: 0.2 soft)");
  bench_cmd->add_option("--val-fraction", val_fraction, "Fraction of identities held out")->capture_default_str();
  bench_cmd->add_option("--split-seed", split_seed);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!g.config.empty()) {
      const json cfg = read_json_file(g.config);
      apply_config(app, cfg);
      for (auto* sub : app.get_subcommands()) apply_config(*sub, cfg);
    }
    if (datagen->parsed()) require_given(datagen, {"--ids", "--per-id", "--dim"});
    if (train_cmd->parsed()) require_given(train_cmd, {"--train"});
    if (eval_cmd->parsed()) require_given(eval_cmd, {"--checkpoint", "--query", "--gallery"});
    if (datagen->parsed()) return run_datagen(g, gen, datagen);
    if (train_cmd->parsed()) return run_train(g, tf, train_csv, val_csv, dump_terms, train_cmd);
    if (eval_cmd->parsed()) return run_evaluate(g, ef);
    if (bench_cmd->parsed()) return run_bench(g, btf, bgen, losses, margins, val_fraction, split_seed, bench_cmd);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CollapseAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCollapse;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ScheduleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
