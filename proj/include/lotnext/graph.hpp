#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "lotnext/autodiff.hpp"
#include "lotnext/data.hpp"

namespace lotnext {

struct InteractionEdge {
  int user = 0;
  int poi = 0;
  std::int64_t weight = 0;

  bool operator==(const InteractionEdge&) const = default;
};

/// Bipartite user-POI graph weighted by visit counts. Edges are unique per
/// (user, poi) and sorted by user, then poi.
struct InteractionGraph {
  int n_users = 0;
  int n_pois = 0;
  std::vector<InteractionEdge> edges;
};

struct TransitionEdge {
  int src = 0;
  int dst = 0;
  std::int64_t weight = 0;

  bool operator==(const TransitionEdge&) const = default;
};

/// Directed POI -> POI graph weighted by consecutive-visit counts, sorted by
/// (src, dst).
struct TransitionGraph {
  int n_pois = 0;
  std::vector<TransitionEdge> edges;
};

InteractionGraph build_interaction_graph(const std::vector<SequenceWindow>& windows, int n_users, int n_pois);
TransitionGraph build_transition_graph(const std::vector<SequenceWindow>& windows, int n_pois);

/// How gradients reach the denoiser through retained edges.
enum class GradientGate { Hard, ScoreScaled };

GradientGate parse_gradient_gate(std::string_view name);
std::string_view to_string(GradientGate gate);

/// Edge-scoring MLP: wa (2d x h), ba (1 x h), wb (h x 1), bb (1 x 1).
struct DenoiserWeights {
  ad::Var wa, ba, wb, bb;
};

/// Attention score in (0,1) for every existing edge, as an (E x 1) node:
/// sigmoid(LeakyReLU([E^U_u || E^P_p] wa + ba) wb + bb).
ad::Var score_edges(const InteractionGraph& graph, ad::Var user_emb, ad::Var poi_emb, const DenoiserWeights& w);

struct EdgeSelection {
  std::vector<int> kept;   // ascending edge indices
  std::vector<int> guard;  // edges restored so that no user loses all its edges
};

/// Keeps edges with score >= delta, then restores each stripped user's
/// highest-scoring edge (ties: lowest poi index).
EdgeSelection select_edges(const InteractionGraph& graph, std::span<const double> scores, double delta);

/// The denoised graph itself (subset of the input edges).
InteractionGraph denoise(const InteractionGraph& graph, std::span<const double> scores, double delta);

/// Symmetric block adjacency over |U|+|P| nodes (users first) restricted to
/// `kept` edges, with unit self-loops.
ad::PropagationGraph interaction_propagation(const InteractionGraph& graph, std::span<const int> kept);
/// A + A^T over POIs with unit self-loops; observed self-transitions add to
/// the diagonal.
ad::PropagationGraph transition_propagation(const TransitionGraph& graph);

/// LeakyReLU(D^{-1/2} A D^{-1/2} H W), slope 0.01.
ad::Var gcn_embed(ad::Var features, const ad::PropagationGraph& graph, ad::Var edge_weights, ad::Var weight);

/// Elementwise mean of the two POI embedding tables.
ad::Var fuse_poi_embeddings(ad::Var interaction_poi, ad::Var transition_poi);

struct GraphAdjustConfig {
  bool denoise = true;
  double delta = 0.5;
  GradientGate gate = GradientGate::ScoreScaled;
};

struct GraphAdjustWeights {
  DenoiserWeights denoiser;
  ad::Var gcn_interaction;  // d x d
  ad::Var gcn_transition;   // d x d
};

struct GraphAdjustOutput {
  ad::Var poi_embeddings;  // |P| x d, fused
  ad::Var scores;          // E x 1; invalid when denoising is off
  EdgeSelection selection;
};

/// Scores and prunes the interaction graph, runs one GCN layer on each graph
/// and fuses the POI rows.
GraphAdjustOutput adjust_graph(const InteractionGraph& interaction, const TransitionGraph& transition,
                               ad::Var user_emb, ad::Var poi_emb, const GraphAdjustWeights& w,
                               const GraphAdjustConfig& cfg);

/// Writes `src \t dst \t weight \t score` per edge (users and POIs by index).
void write_edge_list(std::ostream& out, const InteractionGraph& graph, std::span<const double> scores);

}  // namespace lotnext
