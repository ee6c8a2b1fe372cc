#include "lotnext/model.hpp"

#include <cmath>

#include "lotnext/error.hpp"

namespace lotnext {

FfnNorm parse_ffn_norm(std::string_view name) {
  if (name == "literal") return FfnNorm::Literal;
  if (name == "standard") return FfnNorm::Standard;
  throw ConfigError("unknown ffn norm '" + std::string(name) + "' (literal|standard)");
}

std::string_view to_string(FfnNorm norm) { return norm == FfnNorm::Literal ? "literal" : "standard"; }

void ModelConfig::validate() const {
  if (d_poi <= 0 || d_user <= 0 || d_time <= 0 || n_heads <= 0 || n_blocks <= 0 || window_len <= 0 ||
      denoiser_hidden <= 0 || ffn_hidden < 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model() % n_heads != 0) {
    throw ConfigError("d_poi + d_time (" + std::to_string(d_model()) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (d_poi != d_user) throw ConfigError("d_poi and d_user must match for the interaction graph");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

Batch make_batch(std::span<const SequenceWindow* const> windows, std::span<const GeoPoint> poi_coords) {
  Batch b;
  int start = 0;
  for (const SequenceWindow* w : windows) {
    const int n = w->length();
    b.segments.push_back({start, n});
    for (int k = 0; k < n; ++k) {
      const int p = w->pois[k];
      if (p < 0 || static_cast<std::size_t>(p) >= poi_coords.size()) throw ShapeError("make_batch: poi out of range");
      b.users.push_back(w->user);
      b.pois.push_back(p);
      b.slots.push_back(w->slots[k]);
      b.positions.push_back(k);
      b.labels.push_back(w->label_pois[k]);
      b.label_slots.push_back(w->label_slots[k]);
      b.coords.push_back(poi_coords[static_cast<std::size_t>(p)]);
    }
    start += n;
  }
  return b;
}

Batch make_batch(const SequenceWindow& window, std::span<const GeoPoint> poi_coords) {
  const SequenceWindow* ptr = &window;
  return make_batch(std::span<const SequenceWindow* const>(&ptr, 1), poi_coords);
}

ad::Var embed_sequence(ad::Var poi_table, ad::Var time_emb, std::span<const int> pois, std::span<const int> slots) {
  if (pois.size() != slots.size()) throw ShapeError("embed_sequence: poi and slot counts differ");
  return ad::hconcat(ad::gather_rows(poi_table, pois), ad::gather_rows(time_emb, slots));
}

namespace {

ad::Var linear(ad::Var x, ad::Var w, ad::Var b) { return ad::add_row(ad::matmul(x, w), b); }

ad::Var maybe_dropout(ad::Var x, const EncoderOptions& o) {
  if (o.rng == nullptr || o.dropout <= 0.0) return x;
  return ad::dropout(x, o.dropout, *o.rng);
}

}  // namespace

ad::Var encoder_forward(ad::Var x, ad::Var pos_emb, std::span<const int> positions,
                        std::span<const ad::Segment> segments, std::span<const BlockWeights> blocks,
                        const EncoderOptions& options) {
  if (static_cast<Eigen::Index>(positions.size()) != x.rows()) throw ShapeError("encoder: one position per row");
  if (pos_emb.cols() != x.cols()) {
    throw ShapeError("encoder: positional width " + std::to_string(pos_emb.cols()) + " != " +
                     std::to_string(x.cols()));
  }
  ad::Var h = ad::add(x, ad::gather_rows(pos_emb, positions));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& blk = blocks[i];
    const bool last = i + 1 == blocks.size();
    auto attn = ad::causal_attention(ad::matmul(h, blk.wq), ad::matmul(h, blk.wk), ad::matmul(h, blk.wv),
                                     segments, options.n_heads, last ? options.attention : nullptr);
    attn = maybe_dropout(ad::matmul(attn, blk.wo), options);
    auto z = ad::layer_norm(ad::add(h, attn), blk.ln1_gamma, blk.ln1_beta);
    auto ffn = linear(ad::relu(linear(z, blk.ffn_w1, blk.ffn_b1)), blk.ffn_w2, blk.ffn_b2);
    ffn = maybe_dropout(ffn, options);
    if (options.ffn_norm == FfnNorm::Literal) {
      h = ad::add(ad::layer_norm(z, blk.ln2_gamma, blk.ln2_beta), ffn);
    } else {
      h = ad::layer_norm(ad::add(z, ffn), blk.ln2_gamma, blk.ln2_beta);
    }
  }
  return h;
}

Prediction predict(ad::Var refined, ad::Var user_emb, std::span<const int> users, const HeadWeights& head) {
  if (static_cast<Eigen::Index>(users.size()) != refined.rows()) throw ShapeError("predict: one user per row");
  Prediction p;
  p.hidden = ad::hconcat(refined, ad::gather_rows(user_emb, users));
  p.logits = linear(p.hidden, head.w, head.b);
  p.time_pred = ad::sigmoid(linear(p.hidden, head.time_w, head.time_b));
  return p;
}

GraphContext make_graph_context(const Dataset& ds, const GraphAdjustConfig& adjust) {
  return GraphContext{build_interaction_graph(ds.train, ds.n_users(), ds.n_pois()),
                      build_transition_graph(ds.train, ds.n_pois()), adjust};
}

// ---------------------------------------------------------------------------
// LotNextModel

namespace {

Matrix uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double limit) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix embedding_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index dim) {
  return uniform(rng, rows, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
}

Matrix xavier(std::mt19937_64& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  return uniform(rng, fan_in, fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace

LotNextModel::LotNextModel(const ModelConfig& cfg, int n_users, int n_pois, std::uint64_t seed)
    : cfg_(cfg), n_users_(n_users), n_pois_(n_pois) {
  cfg_.validate();
  if (n_users <= 0 || n_pois <= 0) throw ConfigError("model needs at least one user and one poi");
  std::mt19937_64 rng(seed);
  const int dm = cfg_.d_model();
  const int ff = cfg_.ffn_width();
  const int h = cfg_.hidden_width();

  params_.add("poi_emb", embedding_init(rng, n_pois, cfg_.d_poi));
  params_.add("time_emb", embedding_init(rng, kTimeSlots, cfg_.d_time));
  params_.add("user_emb", embedding_init(rng, n_users, cfg_.d_user));
  params_.add("pos_emb", embedding_init(rng, cfg_.window_len, dm));
  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    params_.add(p + "wq", xavier(rng, dm, dm));
    params_.add(p + "wk", xavier(rng, dm, dm));
    params_.add(p + "wv", xavier(rng, dm, dm));
    params_.add(p + "wo", xavier(rng, dm, dm));
    params_.add(p + "ln1.gamma", Matrix::Ones(1, dm));
    params_.add(p + "ln1.beta", Matrix::Zero(1, dm));
    params_.add(p + "ffn.w1", xavier(rng, dm, ff));
    params_.add(p + "ffn.b1", Matrix::Zero(1, ff));
    params_.add(p + "ffn.w2", xavier(rng, ff, dm));
    params_.add(p + "ffn.b2", Matrix::Zero(1, dm));
    params_.add(p + "ln2.gamma", Matrix::Ones(1, dm));
    params_.add(p + "ln2.beta", Matrix::Zero(1, dm));
  }
  params_.add("head.w", xavier(rng, h, n_pois));
  params_.add("head.b", Matrix::Zero(1, n_pois));
  params_.add("time_head.w", xavier(rng, h, 1));
  params_.add("time_head.b", Matrix::Zero(1, 1));
  params_.add("denoiser.wa", xavier(rng, cfg_.d_user + cfg_.d_poi, cfg_.denoiser_hidden));
  params_.add("denoiser.ba", Matrix::Zero(1, cfg_.denoiser_hidden));
  params_.add("denoiser.wb", xavier(rng, cfg_.denoiser_hidden, 1));
  params_.add("denoiser.bb", Matrix::Zero(1, 1));
  params_.add("gcn.interaction", xavier(rng, cfg_.d_poi, cfg_.d_poi));
  params_.add("gcn.transition", xavier(rng, cfg_.d_poi, cfg_.d_poi));
  params_.add("loss.log_vars", Matrix::Zero(1, 3));
}

LotNextModel::Bound LotNextModel::bind(ad::Tape& tape, bool trainable) {
  auto p = [&](const std::string& name) {
    auto& param = params_.get(name);
    return trainable ? tape.param(param) : tape.constant(param.value);
  };
  Bound b;
  b.poi_emb = p("poi_emb");
  b.time_emb = p("time_emb");
  b.user_emb = p("user_emb");
  b.pos_emb = p("pos_emb");
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string pre = "block" + std::to_string(i) + ".";
    b.blocks.push_back(BlockWeights{p(pre + "wq"), p(pre + "wk"), p(pre + "wv"), p(pre + "wo"),
                                    p(pre + "ln1.gamma"), p(pre + "ln1.beta"), p(pre + "ffn.w1"),
                                    p(pre + "ffn.b1"), p(pre + "ffn.w2"), p(pre + "ffn.b2"),
                                    p(pre + "ln2.gamma"), p(pre + "ln2.beta")});
  }
  b.head = HeadWeights{p("head.w"), p("head.b"), p("time_head.w"), p("time_head.b")};
  b.graph.denoiser = DenoiserWeights{p("denoiser.wa"), p("denoiser.ba"), p("denoiser.wb"), p("denoiser.bb")};
  b.graph.gcn_interaction = p("gcn.interaction");
  b.graph.gcn_transition = p("gcn.transition");
  b.loss_log_vars = p("loss.log_vars");
  return b;
}

ForwardOutput LotNextModel::forward(const Bound& bound, const Batch& batch,
                                    const GraphContext& graphs, const SpatialParams& spatial,
                                    std::mt19937_64* dropout_rng, std::vector<Matrix>* attention) const {
  for (const auto& s : batch.segments) {
    if (s.length > cfg_.window_len) {
      throw ShapeError("window of length " + std::to_string(s.length) + " exceeds configured window_len " +
                       std::to_string(cfg_.window_len));
    }
  }
  ForwardOutput out;
  out.graph = adjust_graph(graphs.interaction, graphs.transition, bound.user_emb, bound.poi_emb, bound.graph,
                           graphs.adjust);
  auto x = embed_sequence(out.graph.poi_embeddings, bound.time_emb, batch.pois, batch.slots);
  EncoderOptions opts;
  opts.n_heads = cfg_.n_heads;
  opts.ffn_norm = cfg_.ffn_norm;
  opts.dropout = cfg_.dropout;
  opts.rng = dropout_rng;
  opts.attention = attention;
  auto z = encoder_forward(x, bound.pos_emb, batch.positions, batch.segments, bound.blocks, opts);
  auto refined = spatial_context_attention(z, batch.segments, batch.coords, spatial);
  out.prediction = predict(refined, bound.user_emb, batch.users, bound.head);
  return out;
}

std::pair<Matrix, Matrix> LotNextModel::infer(const Batch& batch, const GraphContext& graphs,
                                              const SpatialParams& spatial) {
  ad::Tape tape;
  auto bound = bind(tape, false);
  auto out = forward(bound, batch, graphs, spatial);
  return {out.prediction.logits.value(), out.prediction.time_pred.value()};
}

}  // namespace lotnext
