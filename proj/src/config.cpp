#include "lotnext/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "lotnext/error.hpp"

namespace lotnext {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const std::vector<ConfigKey>& RunConfig::schema() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "42", "root seed; every random stream is derived from it"},
      {"data.format", "gowalla-tsv", "check-in file format (gowalla-tsv|generic-csv)"},
      {"data.min_checkins", "100", "drop users with fewer check-ins"},
      {"data.train_frac", "0.8", "leading fraction of each timeline used for training"},
      {"data.window_len", "20", "input steps per window"},
      {"model.d_poi", "10", "POI embedding width"},
      {"model.d_user", "10", "user embedding width"},
      {"model.d_time", "6", "time-slot embedding width"},
      {"model.n_heads", "2", "attention heads per encoder block"},
      {"model.n_blocks", "2", "encoder blocks"},
      {"model.ffn_hidden", "0", "feed-forward hidden width (0 = 4 x (d_poi + d_time))"},
      {"model.dropout", "0", "dropout rate in the encoder"},
      {"model.ffn_norm", "literal", "second normalization placement (literal|standard)"},
      {"denoiser.enabled", "true", "score and prune the user-POI graph"},
      {"denoiser.delta", "0.5", "edge score threshold"},
      {"denoiser.hidden", "16", "hidden width of the edge-scoring MLP"},
      {"denoiser.gradient_gate", "score-scaled", "retained-edge weighting (hard|score-scaled)"},
      {"spatial.beta", "1", "distance decay per kilometre"},
      {"spatial.epsilon", "1e-10", "additive floor of the spatial kernel"},
      {"loss.tau", "1.2", "logit adjustment weight"},
      {"loss.epsilon", "1e-10", "stabilizing constant in logs and cosines"},
      {"loss.adjust_at_inference", "false", "add the adjustment factors to logits when ranking"},
      {"loss.lambda_mode", "uncertainty", "joint loss weighting (uncertainty|fixed)"},
      {"loss.lambda_ce", "1", "fixed weight of the cross-entropy term"},
      {"loss.lambda_lta", "1", "fixed weight of the long-tail adjusted term"},
      {"loss.lambda_aux", "1", "fixed weight of the time term"},
      {"loss.adaptive_weights", "true", "per-sample weights from cosine magnitudes (false: all 1)"},
      {"loss.detach_weights", "true", "treat per-sample weights as constants in backprop"},
      {"train.epochs", "20", "passes over the training windows"},
      {"train.batch_size", "64", "windows per optimizer step"},
      {"train.learning_rate", "0.001", "AdamW step size"},
      {"train.weight_decay", "1e-05", "decoupled weight decay"},
      {"train.gradient_clip_norm", "5", "global gradient norm limit (0 disables)"},
      {"train.early_stopping_patience", "0", "stop after this many epochs without test MRR gain (0 = off)"},
      {"train.evaluate_each_epoch", "true", "score the test windows after every epoch"},
      {"eval.tail_threshold", "100", "POIs with training frequency below this are tail"},
  };
  return keys;
}

bool RunConfig::known(const std::string& key) {
  const auto& s = schema();
  return std::any_of(s.begin(), s.end(), [&](const ConfigKey& k) { return k.key == key; });
}

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::merge_text(std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    if (!known(key)) throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown config key '" + key + "'");
    set(key, line.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  merge_text(f, path.string());
}

void RunConfig::merge(const std::vector<std::pair<std::string, std::string>>& entries) {
  for (const auto& [k, v] : entries) set(k, v);
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : schema()) out.emplace_back(k.key, values_.at(k.key));
  return out;
}

void RunConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : entries()) out << k << " = " << v << '\n';
}

int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

TrainConfig RunConfig::train_config() const {
  auto i = [&](const char* k) { return parse_int(k, get(k)); };
  auto d = [&](const char* k) { return parse_double(k, get(k)); };
  auto b = [&](const char* k) { return parse_bool(k, get(k)); };

  TrainConfig c;
  const auto seed = parse_double("seed", get("seed"));
  if (seed < 0 || seed != static_cast<double>(static_cast<std::uint64_t>(seed))) {
    throw ConfigError("config key 'seed': expected a non-negative integer");
  }
  c.seed = static_cast<std::uint64_t>(seed);
  c.epochs = i("train.epochs");
  c.batch_size = i("train.batch_size");
  c.learning_rate = d("train.learning_rate");
  c.weight_decay = d("train.weight_decay");
  c.gradient_clip_norm = d("train.gradient_clip_norm");
  c.early_stopping_patience = i("train.early_stopping_patience");
  c.evaluate_each_epoch = b("train.evaluate_each_epoch");
  c.tail_threshold = i("eval.tail_threshold");

  c.model.d_poi = i("model.d_poi");
  c.model.d_user = i("model.d_user");
  c.model.d_time = i("model.d_time");
  c.model.n_heads = i("model.n_heads");
  c.model.n_blocks = i("model.n_blocks");
  c.model.window_len = i("data.window_len");
  c.model.ffn_hidden = i("model.ffn_hidden");
  c.model.denoiser_hidden = i("denoiser.hidden");
  c.model.dropout = d("model.dropout");
  c.model.ffn_norm = parse_ffn_norm(get("model.ffn_norm"));

  c.loss.tau = d("loss.tau");
  c.loss.epsilon = d("loss.epsilon");
  c.loss.adjust_at_inference = b("loss.adjust_at_inference");
  c.loss.lambda_mode = parse_lambda_mode(get("loss.lambda_mode"));
  c.loss.fixed_lambda = {d("loss.lambda_ce"), d("loss.lambda_lta"), d("loss.lambda_aux")};
  c.loss.adaptive_weights = b("loss.adaptive_weights");
  c.loss.detach_weights = b("loss.detach_weights");

  c.spatial.beta = d("spatial.beta");
  c.spatial.epsilon = d("spatial.epsilon");

  c.graph.denoise = b("denoiser.enabled");
  c.graph.delta = d("denoiser.delta");
  c.graph.gate = parse_gradient_gate(get("denoiser.gradient_gate"));

  c.validate();
  return c;
}

PreprocessOptions RunConfig::preprocess_options() const {
  PreprocessOptions o;
  o.min_checkins = parse_int("data.min_checkins", get("data.min_checkins"));
  o.train_frac = parse_double("data.train_frac", get("data.train_frac"));
  o.window_len = parse_int("data.window_len", get("data.window_len"));
  if (o.min_checkins < 0 || o.window_len < 1 || o.train_frac <= 0.0 || o.train_frac > 1.0) {
    throw ConfigError("data.* values out of range");
  }
  return o;
}

CheckInFormat RunConfig::format() const { return parse_format(get("data.format")); }

RunConfig RunConfig::from_train_config(const TrainConfig& c) {
  RunConfig r;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  r.set("seed", std::to_string(c.seed));
  r.set("train.epochs", std::to_string(c.epochs));
  r.set("train.batch_size", std::to_string(c.batch_size));
  r.set("train.learning_rate", fmt_double(c.learning_rate));
  r.set("train.weight_decay", fmt_double(c.weight_decay));
  r.set("train.gradient_clip_norm", fmt_double(c.gradient_clip_norm));
  r.set("train.early_stopping_patience", std::to_string(c.early_stopping_patience));
  r.set("train.evaluate_each_epoch", b(c.evaluate_each_epoch));
  r.set("eval.tail_threshold", std::to_string(c.tail_threshold));
  r.set("model.d_poi", std::to_string(c.model.d_poi));
  r.set("model.d_user", std::to_string(c.model.d_user));
  r.set("model.d_time", std::to_string(c.model.d_time));
  r.set("model.n_heads", std::to_string(c.model.n_heads));
  r.set("model.n_blocks", std::to_string(c.model.n_blocks));
  r.set("data.window_len", std::to_string(c.model.window_len));
  r.set("model.ffn_hidden", std::to_string(c.model.ffn_hidden));
  r.set("denoiser.hidden", std::to_string(c.model.denoiser_hidden));
  r.set("model.dropout", fmt_double(c.model.dropout));
  r.set("model.ffn_norm", std::string(to_string(c.model.ffn_norm)));
  r.set("loss.tau", fmt_double(c.loss.tau));
  r.set("loss.epsilon", fmt_double(c.loss.epsilon));
  r.set("loss.adjust_at_inference", b(c.loss.adjust_at_inference));
  r.set("loss.lambda_mode", std::string(to_string(c.loss.lambda_mode)));
  r.set("loss.lambda_ce", fmt_double(c.loss.fixed_lambda[0]));
  r.set("loss.lambda_lta", fmt_double(c.loss.fixed_lambda[1]));
  r.set("loss.lambda_aux", fmt_double(c.loss.fixed_lambda[2]));
  r.set("loss.adaptive_weights", b(c.loss.adaptive_weights));
  r.set("loss.detach_weights", b(c.loss.detach_weights));
  r.set("spatial.beta", fmt_double(c.spatial.beta));
  r.set("spatial.epsilon", fmt_double(c.spatial.epsilon));
  r.set("denoiser.enabled", b(c.graph.denoise));
  r.set("denoiser.delta", fmt_double(c.graph.delta));
  r.set("denoiser.gradient_gate", std::string(to_string(c.graph.gate)));
  return r;
}

}  // namespace lotnext
