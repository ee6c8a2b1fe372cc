#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "lotnext/cli.hpp"
#include "lotnext/config.hpp"
#include "lotnext/error.hpp"

using namespace lotnext;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lotnext_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

// Small synthetic dataset shared by the end-to-end tests.
fs::path prepared_dataset() {
  static const fs::path dir = [] {
    const auto root = scratch("dataset");
    const auto s = invoke({"synth", "--seed", "4", "--n-users", "6", "--n-pois", "40", "--checkins-per-user", "120",
                        "--out", (root / "raw").string()});
    EXPECT_EQ(s.code, 0) << s.err;
    const auto p = invoke({"prepare", "--input", (root / "raw" / "checkins.tsv").string(), "--out",
                        (root / "data").string(), "--data.window_len", "10"});
    EXPECT_EQ(p.code, 0) << p.err;
    return root / "data";
  }();
  return dir;
}

}  // namespace

TEST(RunConfig, DefaultsAndUnknownKeys) {
  RunConfig c;
  EXPECT_EQ(c.get("loss.tau"), "1.2");
  EXPECT_EQ(c.get("data.window_len"), "20");
  EXPECT_THROW(c.set("loss.tua", "1"), ConfigError);
  EXPECT_THROW(c.get("nope"), ConfigError);
  std::istringstream bad("model.n_layers = 3\n");
  EXPECT_THROW(c.merge_text(bad), ConfigError);
  std::istringstream no_eq("loss.tau 1.0\n");
  EXPECT_THROW(c.merge_text(no_eq), ConfigError);
}

TEST(RunConfig, TextMergeAndTypedView) {
  RunConfig c;
  std::istringstream in("# comment\n\nloss.tau = 0.5   # trailing\ntrain.epochs=3\ndenoiser.enabled = no\n");
  c.merge_text(in);
  const auto t = c.train_config();
  EXPECT_DOUBLE_EQ(t.loss.tau, 0.5);
  EXPECT_EQ(t.epochs, 3);
  EXPECT_FALSE(t.graph.denoise);
  EXPECT_EQ(t.model.window_len, 20);
  c.set("train.epochs", "three");
  EXPECT_THROW(c.train_config(), ConfigError);
  c.set("train.epochs", "-1");
  EXPECT_THROW(c.train_config(), ConfigError);
}

TEST(RunConfig, WriteReadRoundTrip) {
  RunConfig a;
  a.set("spatial.beta", "0.25");
  a.set("model.ffn_norm", "standard");
  std::stringstream s;
  a.write(s);
  RunConfig b;
  b.merge_text(s);
  EXPECT_EQ(a.entries(), b.entries());
  EXPECT_EQ(RunConfig::from_train_config(a.train_config()).entries(), a.entries());
}

TEST(RunConfig, ScalarParsers) {
  EXPECT_EQ(parse_int("k", "-4"), -4);
  EXPECT_THROW(parse_int("k", "4.5"), ConfigError);
  EXPECT_THROW(parse_int("k", ""), ConfigError);
  EXPECT_DOUBLE_EQ(parse_double("k", "1e-3"), 1e-3);
  EXPECT_THROW(parse_double("k", "1.0x"), ConfigError);
  EXPECT_TRUE(parse_bool("k", "on"));
  EXPECT_FALSE(parse_bool("k", "0"));
  EXPECT_THROW(parse_bool("k", "maybe"), ConfigError);
}

TEST(Cli, HelpListsEveryKeyWithDefault) {
  for (const char* sub : {"train", "eval"}) {
    const auto r = invoke({sub, "--help"});
    EXPECT_EQ(r.code, 0);
    for (const auto& k : RunConfig::schema()) {
      const auto at = r.out.find("--" + k.key);
      ASSERT_NE(at, std::string::npos) << sub << ' ' << k.key;
      const auto eol = r.out.find('\n', at);
      EXPECT_NE(r.out.substr(at, eol - at).find(k.default_value), std::string::npos) << sub << ' ' << k.key;
    }
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  auto r = invoke({"train", "--out", "x"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("--data"), std::string::npos);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({}).code, cli::kExitUsage);
  const auto dir = scratch("unknown_key");
  write_file(dir / "bad.cfg", "loss.tua = 1\n");
  r = invoke({"train", "--data", prepared_dataset().string(), "--out", (dir / "o").string(), "--config",
           (dir / "bad.cfg").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("loss.tua"), std::string::npos);
}

TEST(Cli, MissingInputsExitOne) {
  const auto dir = scratch("missing");
  EXPECT_EQ(invoke({"prepare", "--input", (dir / "none.tsv").string(), "--out", (dir / "d").string()}).code,
            cli::kExitRuntime);
  EXPECT_EQ(invoke({"eval", "--checkpoint", (dir / "none.ckpt").string(), "--data", prepared_dataset().string(), "--out",
                 (dir / "e").string()})
                .code,
            cli::kExitRuntime);
}

TEST(Cli, SynthIsDeterministic) {
  const auto dir = scratch("synth");
  for (const char* sub : {"a", "b"}) {
    ASSERT_EQ(invoke({"synth", "--seed", "11", "--n-users", "3", "--n-pois", "20", "--checkins-per-user", "30", "--out",
                   (dir / sub).string()})
                  .code,
              0);
  }
  const auto a = slurp(dir / "a" / "checkins.tsv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "checkins.tsv"));
}

TEST(Cli, PrecedenceFlagOverFileOverEnvOverDefault) {
  const auto dir = scratch("precedence");
  write_file(dir / "env.cfg", "loss.tau = 0.7\nspatial.beta = 3\ntrain.epochs = 1\n");
  write_file(dir / "file.cfg", "loss.tau = 0.9\ntrain.batch_size = 8\n");
  ::setenv("LOTNEXT_CONFIG", (dir / "env.cfg").c_str(), 1);
  const auto r = invoke({"train", "--data", prepared_dataset().string(), "--out", (dir / "o").string(), "--config",
                      (dir / "file.cfg").string(), "--train.batch_size", "4", "--train.evaluate_each_epoch", "false"});
  ::unsetenv("LOTNEXT_CONFIG");
  ASSERT_EQ(r.code, 0) << r.err;
  RunConfig used;
  std::ifstream f(dir / "o" / "config.txt");
  used.merge_text(f);
  EXPECT_EQ(used.get("spatial.beta"), "3");       // env file only
  EXPECT_EQ(used.get("loss.tau"), "0.9");         // --config beats env
  EXPECT_EQ(used.get("train.batch_size"), "4");   // flag beats --config
  EXPECT_EQ(used.get("denoiser.delta"), "0.5");   // default
  EXPECT_EQ(used.get("data.window_len"), "10");   // taken from the dataset
}

TEST(Cli, EndToEndTrainEvalExport) {
  const auto dir = scratch("e2e");
  const auto data = prepared_dataset().string();
  auto r = invoke({"train", "--data", data, "--out", (dir / "run").string(), "--train.epochs", "2",
                "--train.batch_size", "16", "--seed", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epoch=2 "), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  EXPECT_NE(slurp(dir / "run" / "train.log").find("epoch=1 "), std::string::npos);

  r = invoke({"eval", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--data", data, "--out",
           (dir / "ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* col : {"Acc@1", "Acc@5", "Acc@10", "MRR", "overall", "head", "tail"})
    EXPECT_NE(r.out.find(col), std::string::npos) << col;
  const auto report = slurp(dir / "ev" / "report.txt");
  EXPECT_NE(report.find("overall.mrr = "), std::string::npos);
  EXPECT_NE(report.find("predicted_tail_proportion = "), std::string::npos);

  r = invoke({"export-embeddings", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--data", data, "--out",
           (dir / "emb").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream emb(dir / "emb" / "embeddings.tsv");
  std::string header;
  std::getline(emb, header);
  EXPECT_EQ(header.rfind("# d_p=10 n_pois=", 0), 0u);
}
