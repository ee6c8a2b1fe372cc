#include "lotnext/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "lotnext/config.hpp"
#include "lotnext/error.hpp"
#include "lotnext/optim.hpp"

namespace lotnext {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (gradient_clip_norm < 0.0) throw ConfigError("train.gradient_clip_norm must be >= 0");
  if (early_stopping_patience < 0) throw ConfigError("train.early_stopping_patience must be >= 0");
  if (tail_threshold < 0) throw ConfigError("eval.tail_threshold must be >= 0");
  if (!(spatial.beta >= 0.0) || !(spatial.epsilon > 0.0)) {
    throw ConfigError("spatial.beta must be >= 0 and spatial.epsilon > 0");
  }
  if (!(graph.delta >= 0.0 && graph.delta <= 1.0)) throw ConfigError("denoiser.delta must lie in [0, 1]");
  model.validate();
  loss.validate();
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void write_epoch_record(std::ostream& out, const EpochRecord& rec) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(6);
  out << "epoch=" << rec.epoch << " ce=" << rec.loss.ce << " lta=" << rec.loss.lta << " aux=" << rec.loss.aux
      << " joint=" << rec.loss.joint << " lambda_ce=" << rec.loss.lambda[0] << " lambda_lta=" << rec.loss.lambda[1]
      << " lambda_aux=" << rec.loss.lambda[2] << " xi_bar=" << rec.loss.xi_bar;
  if (rec.test && rec.test->present()) {
    out << " acc@1=" << rec.test->acc1 << " acc@5=" << rec.test->acc5 << " acc@10=" << rec.test->acc10
        << " mrr=" << rec.test->mrr;
  }
  out << " seconds=" << rec.seconds << '\n';
  out.flags(flags);
  out.precision(prec);
}

ScoredWindows score_windows(LotNextModel& model, const std::vector<SequenceWindow>& windows,
                            std::span<const GeoPoint> poi_coords, const GraphContext& graphs,
                            const SpatialParams& spatial, const RowVector* inference_offsets, int batch_size) {
  ScoredWindows out;
  std::size_t total = 0;
  for (const auto& w : windows) total += w.pois.size();
  out.scores.resize(static_cast<Eigen::Index>(total), model.n_pois());
  out.time_pred.resize(static_cast<Eigen::Index>(total), 1);
  out.labels.reserve(total);

  Eigen::Index row = 0;
  std::size_t i = 0;
  while (i < windows.size()) {
    std::vector<const SequenceWindow*> chunk;
    int rows = 0;
    while (i < windows.size() && (chunk.empty() || rows + windows[i].length() <= batch_size)) {
      rows += windows[i].length();
      chunk.push_back(&windows[i++]);
    }
    const auto batch = make_batch(chunk, poi_coords);
    auto [logits, time] = model.infer(batch, graphs, spatial);
    if (inference_offsets) logits.rowwise() += *inference_offsets;
    out.scores.middleRows(row, logits.rows()) = logits;
    out.time_pred.middleRows(row, time.rows()) = time;
    out.labels.insert(out.labels.end(), batch.labels.begin(), batch.labels.end());
    row += logits.rows();
  }
  return out;
}

Evaluation evaluate(LotNextModel& model, const Dataset& ds, const std::vector<SequenceWindow>& windows,
                    const GraphContext& graphs, const TrainConfig& cfg) {
  RowVector alpha;
  if (cfg.loss.adjust_at_inference) alpha = logit_adjustment_factors(ds.freq, cfg.loss.tau, cfg.loss.epsilon);
  const auto scored = score_windows(model, windows, ds.coords, graphs, cfg.spatial,
                                    cfg.loss.adjust_at_inference ? &alpha : nullptr);
  Evaluation ev;
  ev.overall = compute_metrics(scored.scores, scored.labels);
  ev.stratified = stratified_metrics(scored.scores, scored.labels, ds.freq, cfg.tail_threshold);
  return ev;
}

Checkpoint make_checkpoint(const LotNextModel& model, const TrainConfig& cfg, const Dataset& ds, int epoch) {
  Checkpoint c;
  c.version = kCheckpointVersion;
  TrainConfig snapshot = cfg;
  snapshot.model = model.config();
  c.config = RunConfig::from_train_config(snapshot).entries();
  c.user_digest = ds.users.digest();
  c.poi_digest = ds.pois.digest();
  c.epoch = epoch;
  c.n_users = model.n_users();
  c.n_pois = model.n_pois();
  for (const auto& p : model.params()) c.arrays.emplace_back(p->name, p->value);
  return c;
}

TrainConfig checkpoint_config(const Checkpoint& ckpt) {
  try {
    RunConfig r;
    r.merge(ckpt.config);
    return r.train_config();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint carries an invalid configuration: ") + e.what());
  }
}

LotNextModel restore_model(const Checkpoint& ckpt) {
  const auto cfg = checkpoint_config(ckpt);
  LotNextModel model(cfg.model, ckpt.n_users, ckpt.n_pois, 0);
  std::size_t matched = 0;
  for (auto& p : model.params()) {
    auto it = std::find_if(ckpt.arrays.begin(), ckpt.arrays.end(), [&](const auto& a) { return a.first == p->name; });
    if (it == ckpt.arrays.end()) throw CheckpointError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw CheckpointError("checkpoint parameter '" + p->name + "' has the wrong shape");
    }
    p->value = it->second;
    ++matched;
  }
  if (matched != ckpt.arrays.size()) throw CheckpointError("checkpoint holds parameters this model does not have");
  return model;
}

namespace {

std::string describe_batch(const Batch& batch, const LossTerms& terms) {
  std::ostringstream s;
  s << std::setprecision(10);
  s << "rows=" << batch.rows() << " windows=" << batch.segments.size() << '\n';
  s << "ce=" << terms.ce.scalar() << " lta=" << terms.lta.scalar() << " aux=" << terms.aux.scalar()
    << " joint=" << terms.joint.scalar() << '\n';
  s << "users:";
  for (int u : batch.users) s << ' ' << u;
  s << "\npois:";
  for (int p : batch.pois) s << ' ' << p;
  s << "\nlabels:";
  for (int y : batch.labels) s << ' ' << y;
  s << '\n';
  return s.str();
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (ds.train.empty()) throw DataError("no training windows");
  for (const auto& w : ds.train) {
    if (w.length() > cfg.model.window_len) {
      throw ConfigError("training window longer than model window_len (" + std::to_string(cfg.model.window_len) + ")");
    }
  }

  const auto graphs = make_graph_context(ds, cfg.graph);
  const RowVector alpha = logit_adjustment_factors(ds.freq, cfg.loss.tau, cfg.loss.epsilon);

  TrainResult result{LotNextModel(cfg.model, ds.n_users(), ds.n_pois(), derive_seed(cfg.seed, 1)), {}};
  auto& model = result.model;
  AdamW optimizer(model.params(), AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 2));
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 3));

  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);
  model.params().zero_grad();

  double best_mrr = -1.0;
  int since_best = 0;
  std::vector<Matrix> best_state;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double rows_seen = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const SequenceWindow*> chunk;
      for (std::size_t i = start; i < stop; ++i) chunk.push_back(&ds.train[order[i]]);
      const auto batch = make_batch(chunk, ds.coords);

      ad::Tape tape;
      const auto bound = model.bind(tape);
      const auto out = model.forward(bound, batch, graphs, cfg.spatial, cfg.model.dropout > 0 ? &dropout_rng : nullptr);
      const auto terms = compute_losses(out.prediction.logits, out.prediction.hidden, out.prediction.time_pred,
                                        bound.head.w, bound.loss_log_vars, batch.labels, batch.label_slots, alpha,
                                        cfg.loss);
      if (!std::isfinite(terms.joint.scalar())) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch), describe_batch(batch, terms));
      }
      tape.backward(terms.joint);
      if (cfg.gradient_clip_norm > 0.0) clip_grad_norm(model.params(), cfg.gradient_clip_norm);
      optimizer.step();
      model.params().zero_grad();

      const auto b = terms.breakdown();
      const double n = batch.rows();
      rec.loss.ce += n * b.ce;
      rec.loss.lta += n * b.lta;
      rec.loss.aux += n * b.aux;
      rec.loss.joint += n * b.joint;
      rec.loss.xi_bar += n * b.xi_bar;
      for (int k = 0; k < 3; ++k) rec.loss.lambda[k] += n * b.lambda[k];
      rows_seen += n;
    }
    rec.loss.xi_bar -= 1.0;  // default-initialized to 1
    rec.loss.ce /= rows_seen;
    rec.loss.lta /= rows_seen;
    rec.loss.aux /= rows_seen;
    rec.loss.joint /= rows_seen;
    rec.loss.xi_bar /= rows_seen;
    for (auto& l : rec.loss.lambda) l /= rows_seen;

    if (cfg.evaluate_each_epoch && !ds.test.empty()) {
      rec.test = evaluate(model, ds, ds.test, graphs, cfg).overall;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) write_epoch_record(*log, rec);
    result.report.epochs.push_back(rec);

    if (cfg.early_stopping_patience > 0 && rec.test) {
      if (rec.test->mrr > best_mrr) {
        best_mrr = rec.test->mrr;
        since_best = 0;
        best_state.clear();
        for (const auto& p : model.params()) best_state.push_back(p->value);
      } else if (++since_best >= cfg.early_stopping_patience) {
        result.report.stopped_early = true;
        break;
      }
    }
  }

  if (result.report.stopped_early) {
    std::size_t i = 0;
    for (auto& p : model.params()) p->value = best_state[i++];
  }
  return result;
}

}  // namespace lotnext
