#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "lotnext/autodiff.hpp"
#include "lotnext/data.hpp"
#include "lotnext/graph.hpp"
#include "lotnext/spatial.hpp"

namespace lotnext {

/// Placement of the second normalization in each encoder block.
///  Literal:  out = LayerNorm(Z) + FFN(Z)
///  Standard: out = LayerNorm(Z + FFN(Z))
enum class FfnNorm { Literal, Standard };

FfnNorm parse_ffn_norm(std::string_view name);
std::string_view to_string(FfnNorm norm);

struct ModelConfig {
  int d_poi = 10;
  int d_user = 10;
  int d_time = 6;
  int n_heads = 2;
  int n_blocks = 2;
  int window_len = 20;
  int ffn_hidden = 0;  // 0 selects 4 * d_model
  int denoiser_hidden = 16;
  double dropout = 0.0;
  FfnNorm ffn_norm = FfnNorm::Literal;

  int d_model() const { return d_poi + d_time; }
  int hidden_width() const { return d_model() + d_user; }
  int ffn_width() const { return ffn_hidden > 0 ? ffn_hidden : 4 * d_model(); }
  void validate() const;
};

/// Rows of a batch, one per (window, step), windows stacked in order.
struct Batch {
  std::vector<ad::Segment> segments;
  std::vector<int> users;
  std::vector<int> pois;
  std::vector<int> slots;
  std::vector<int> positions;
  std::vector<int> labels;
  std::vector<int> label_slots;
  std::vector<GeoPoint> coords;

  int rows() const { return static_cast<int>(pois.size()); }
};

Batch make_batch(std::span<const SequenceWindow* const> windows, std::span<const GeoPoint> poi_coords);
Batch make_batch(const SequenceWindow& window, std::span<const GeoPoint> poi_coords);

struct BlockWeights {
  ad::Var wq, wk, wv, wo;
  ad::Var ln1_gamma, ln1_beta;
  ad::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  ad::Var ln2_gamma, ln2_beta;
};

struct HeadWeights {
  ad::Var w, b;            // (h x |P|), (1 x |P|)
  ad::Var time_w, time_b;  // (h x 1), (1 x 1)
};

/// Row k = [poi_table[pois[k]] || time_emb[slots[k]]].
ad::Var embed_sequence(ad::Var poi_table, ad::Var time_emb, std::span<const int> pois, std::span<const int> slots);

struct EncoderOptions {
  int n_heads = 2;
  FfnNorm ffn_norm = FfnNorm::Literal;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;           // dropout is skipped when null
  std::vector<Matrix>* attention = nullptr;  // probabilities of the last block
};

/// Adds positional embeddings, then runs the causal encoder blocks.
ad::Var encoder_forward(ad::Var x, ad::Var pos_emb, std::span<const int> positions,
                        std::span<const ad::Segment> segments, std::span<const BlockWeights> blocks,
                        const EncoderOptions& options);

struct Prediction {
  ad::Var logits;     // rows x |P|
  ad::Var time_pred;  // rows x 1, in (0,1); multiply by 168 for a slot
  ad::Var hidden;     // rows x (d_model + d_user)
};

/// O = [refined || E^U[user]], logits = O W + b, time = sigmoid(O w_t + b_t).
Prediction predict(ad::Var refined, ad::Var user_emb, std::span<const int> users, const HeadWeights& head);

/// Static graphs plus the per-step adjustment settings.
struct GraphContext {
  InteractionGraph interaction;
  TransitionGraph transition;
  GraphAdjustConfig adjust;
};

GraphContext make_graph_context(const Dataset& ds, const GraphAdjustConfig& adjust);

struct ForwardOutput {
  Prediction prediction;
  GraphAdjustOutput graph;
};

/// Every learnable tensor: embeddings, encoder, heads, denoiser, GCN and the
/// joint-loss weighting state.
class LotNextModel {
 public:
  LotNextModel(const ModelConfig& cfg, int n_users, int n_pois, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int n_users() const { return n_users_; }
  int n_pois() const { return n_pois_; }

  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  struct Bound {
    ad::Var poi_emb, time_emb, user_emb, pos_emb;
    std::vector<BlockWeights> blocks;
    HeadWeights head;
    GraphAdjustWeights graph;
    ad::Var loss_log_vars;
  };

  /// Puts every parameter on the tape, as gradient-receiving leaves when
  /// `trainable`, otherwise as constants.
  Bound bind(ad::Tape& tape, bool trainable = true);

  ForwardOutput forward(const Bound& bound, const Batch& batch, const GraphContext& graphs,
                        const SpatialParams& spatial, std::mt19937_64* dropout_rng = nullptr,
                        std::vector<Matrix>* attention = nullptr) const;

  /// Inference-only logits for a batch (rows x |P|) and time predictions.
  std::pair<Matrix, Matrix> infer(const Batch& batch, const GraphContext& graphs, const SpatialParams& spatial);

 private:
  ModelConfig cfg_;
  int n_users_;
  int n_pois_;
  ad::ParameterStore params_;
};

}  // namespace lotnext
