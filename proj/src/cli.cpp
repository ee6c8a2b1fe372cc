#include "lotnext/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "lotnext/config.hpp"
#include "lotnext/data.hpp"
#include "lotnext/error.hpp"
#include "lotnext/eval.hpp"
#include "lotnext/train.hpp"

namespace lotnext::cli {

namespace fs = std::filesystem;

namespace {

/// Config keys as `--key` options. Values are kept as text so that a flag
/// given on the command line can be told apart from one left at its default.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "config file of `key = value` lines (overrides $LOTNEXT_CONFIG)");
    for (const auto& k : RunConfig::schema()) {
      options[k.key] = app.add_option("--" + k.key, values[k.key], k.help)->default_str(k.default_value);
    }
  }

  std::vector<std::pair<std::string, std::string>> given() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) out.emplace_back(key, values.at(key));
    }
    return out;
  }

  /// default < $LOTNEXT_CONFIG < --config < flags, starting from `base`.
  RunConfig resolve(RunConfig base = {}) const {
    if (const char* env = std::getenv("LOTNEXT_CONFIG"); env && *env) base.merge_file(env);
    if (!config_file.empty()) base.merge_file(config_file);
    base.merge(given());
    return base;
  }
};

void require_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

int cmd_prepare(const std::string& input, const fs::path& out_dir, const ConfigFlags& flags, std::ostream& out) {
  const auto cfg = flags.resolve();
  const auto opts = cfg.preprocess_options();
  std::ifstream f(input);
  if (!f) throw NotFoundError("cannot read check-in file " + input);
  const auto parsed = parse_checkins(f, cfg.format());
  const auto ds = preprocess(parsed.records, opts);
  require_dir(out_dir);
  save_dataset(ds, out_dir);
  {
    auto rej = open_out(out_dir / "rejected.txt");
    for (const auto& r : parsed.rejected) rej << r.line << '\t' << r.reason << '\n';
  }
  std::size_t n_train = 0, n_test = 0;
  for (const auto& w : ds.train) n_train += w.pois.size();
  for (const auto& w : ds.test) n_test += w.pois.size();
  out << "records=" << parsed.records.size() << " rejected=" << parsed.rejected.size() << " users=" << ds.n_users()
      << " pois=" << ds.n_pois() << " train_windows=" << ds.train.size() << " train_steps=" << n_train
      << " test_windows=" << ds.test.size() << " test_steps=" << n_test << '\n';
  return kExitOk;
}

int cmd_synth(const SyntheticConfig& sc, const fs::path& out_dir, std::ostream& out) {
  const auto records = generate_synthetic(sc);
  require_dir(out_dir);
  const auto path = out_dir / "checkins.tsv";
  auto f = open_out(path);
  write_checkins(f, records);
  if (!f) throw Error("write failed: " + path.string());
  out << "wrote " << records.size() << " check-ins to " << path.string() << '\n';
  return kExitOk;
}

int cmd_train(const fs::path& data_dir, const fs::path& out_dir, const ConfigFlags& flags, std::ostream& out,
              std::ostream& err) {
  const auto run_cfg = flags.resolve();
  auto cfg = run_cfg.train_config();
  const auto ds = load_dataset(data_dir);
  cfg.model.window_len = ds.window_len;
  require_dir(out_dir);
  {
    auto f = open_out(out_dir / "config.txt");
    RunConfig::from_train_config(cfg).write(f);
  }
  auto log = open_out(out_dir / "train.log");
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    Tee(std::streambuf* x, std::streambuf* y) : a(x), b(y) {}
    int overflow(int c) override {
      if (c == EOF) return !EOF;
      return a->sputc(static_cast<char>(c)) == EOF || b->sputc(static_cast<char>(c)) == EOF ? EOF : c;
    }
    int sync() override { return a->pubsync() | b->pubsync(); }
  } tee(log.rdbuf(), out.rdbuf());
  std::ostream both(&tee);

  try {
    auto result = train(ds, cfg, &both);
    const int epochs = static_cast<int>(result.report.epochs.size());
    save_checkpoint(make_checkpoint(result.model, cfg, ds, epochs), out_dir / "model.ckpt");
    both << "checkpoint=" << (out_dir / "model.ckpt").string() << (result.report.stopped_early ? " stopped_early" : "")
         << '\n';
  } catch (const TrainingError& e) {
    auto dump = open_out(out_dir / "failure_dump.txt");
    dump << e.what() << '\n' << e.dump();
    err << "error: " << e.what() << " (batch dump in " << (out_dir / "failure_dump.txt").string() << ")\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& out_dir, const ConfigFlags& flags,
             std::ostream& out) {
  const auto ckpt = load_checkpoint(ckpt_path);
  RunConfig base;
  base.merge(ckpt.config);
  auto cfg = flags.resolve(base).train_config();
  auto model = restore_model(ckpt);
  cfg.model = model.config();
  const auto ds = load_dataset(data_dir);
  verify_vocabulary(ckpt, ds);
  const auto graphs = make_graph_context(ds, cfg.graph);
  const auto ev = evaluate(model, ds, ds.test, graphs, cfg);
  require_dir(out_dir);
  {
    auto f = open_out(out_dir / "report.txt");
    write_report(f, ev.overall, ev.stratified);
  }
  const std::vector<TableRow> rows = {
      {"overall", ev.overall}, {"head", ev.stratified.head}, {"tail", ev.stratified.tail}};
  render_table(out, rows);
  out << "predicted_tail_proportion=" << ev.stratified.predicted_tail_proportion << '\n';
  return kExitOk;
}

int cmd_export(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& out_dir, std::ostream& out) {
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto ds = load_dataset(data_dir);
  verify_vocabulary(ckpt, ds);
  const auto model = restore_model(ckpt);
  require_dir(out_dir);
  const auto path = out_dir / "embeddings.tsv";
  export_embeddings(model.params().get("poi_emb").value, ds.freq, ds.pois, path);
  out << "wrote " << ds.n_pois() << " embeddings to " << path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-tail adjusted next-POI prediction", "lotnext"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "raw check-ins -> dataset directory");
  std::string input;
  std::string out_dir;
  ConfigFlags prepare_flags;
  prepare->add_option("--input", input, "check-in file")->required();
  prepare->add_option("--out", out_dir, "output dataset directory")->required();
  prepare_flags.attach(*prepare);

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic check-in file");
  SyntheticConfig sc;
  synth->add_option("--seed", sc.seed, "generator seed")->capture_default_str();
  synth->add_option("--n-users", sc.n_users, "number of users")->capture_default_str();
  synth->add_option("--n-pois", sc.n_pois, "number of POIs")->capture_default_str();
  synth->add_option("--zipf-exponent", sc.zipf_exponent, "popularity exponent")->capture_default_str();
  synth->add_option("--checkins-per-user", sc.checkins_per_user, "check-ins per user")->capture_default_str();
  synth->add_option("--n-clusters", sc.n_clusters, "spatial clusters")->capture_default_str();
  synth->add_option("--cluster-spread-km", sc.cluster_spread_km, "POI jitter around a cluster centre")
      ->capture_default_str();
  synth->add_option("--out", out_dir, "output directory (writes checkins.tsv)")->required();

  auto* train_cmd = app.add_subcommand("train", "dataset + config -> checkpoint and log");
  std::string data_dir;
  ConfigFlags train_flags;
  train_cmd->add_option("--data", data_dir, "dataset directory from `prepare`")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_flags.attach(*train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "checkpoint + dataset -> metrics");
  std::string ckpt;
  ConfigFlags eval_flags;
  eval_cmd->add_option("--checkpoint", ckpt, "model.ckpt from `train`")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--out", out_dir, "output directory (writes report.txt)")->required();
  eval_flags.attach(*eval_cmd);

  auto* export_cmd = app.add_subcommand("export-embeddings", "checkpoint -> POI embedding file");
  export_cmd->add_option("--checkpoint", ckpt, "model.ckpt from `train`")->required();
  export_cmd->add_option("--data", data_dir, "dataset directory the checkpoint was trained on")->required();
  export_cmd->add_option("--out", out_dir, "output directory (writes embeddings.tsv)")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(input, out_dir, prepare_flags, out);
    if (*synth) return cmd_synth(sc, out_dir, out);
    if (*train_cmd) return cmd_train(data_dir, out_dir, train_flags, out, err);
    if (*eval_cmd) return cmd_eval(ckpt, data_dir, out_dir, eval_flags, out);
    if (*export_cmd) return cmd_export(ckpt, data_dir, out_dir, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace lotnext::cli
