#include "lotnext/graph.hpp"

#include <algorithm>
#include <map>
#include <ostream>

#include "lotnext/error.hpp"

namespace lotnext {

InteractionGraph build_interaction_graph(const std::vector<SequenceWindow>& windows, int n_users, int n_pois) {
  std::map<std::pair<int, int>, std::int64_t> counts;
  for (const auto& w : windows) {
    if (w.user < 0 || w.user >= n_users) throw DataError("interaction graph: user index out of range");
    for (int p : w.pois) {
      if (p < 0 || p >= n_pois) throw DataError("interaction graph: poi index out of range");
      ++counts[{w.user, p}];
    }
  }
  InteractionGraph g{n_users, n_pois, {}};
  g.edges.reserve(counts.size());
  for (const auto& [key, c] : counts) g.edges.push_back({key.first, key.second, c});
  return g;
}

TransitionGraph build_transition_graph(const std::vector<SequenceWindow>& windows, int n_pois) {
  std::map<std::pair<int, int>, std::int64_t> counts;
  for (const auto& w : windows) {
    for (int k = 0; k < w.length(); ++k) {
      const int a = w.pois[k], b = w.label_pois[k];
      if (a < 0 || a >= n_pois || b < 0 || b >= n_pois) {
        throw DataError("transition graph: poi index out of range");
      }
      ++counts[{a, b}];
    }
  }
  TransitionGraph g{n_pois, {}};
  g.edges.reserve(counts.size());
  for (const auto& [key, c] : counts) g.edges.push_back({key.first, key.second, c});
  return g;
}

GradientGate parse_gradient_gate(std::string_view name) {
  if (name == "hard") return GradientGate::Hard;
  if (name == "score-scaled") return GradientGate::ScoreScaled;
  throw ConfigError("unknown gradient gate '" + std::string(name) + "' (hard|score-scaled)");
}

std::string_view to_string(GradientGate gate) {
  return gate == GradientGate::Hard ? "hard" : "score-scaled";
}

ad::Var score_edges(const InteractionGraph& graph, ad::Var user_emb, ad::Var poi_emb, const DenoiserWeights& w) {
  if (user_emb.rows() != graph.n_users || poi_emb.rows() != graph.n_pois) {
    throw ShapeError("score_edges: embedding tables do not match the graph");
  }
  if (w.wa.rows() != user_emb.cols() + poi_emb.cols()) {
    throw ShapeError("score_edges: denoiser input width " + std::to_string(w.wa.rows()) + " != " +
                     std::to_string(user_emb.cols() + poi_emb.cols()));
  }
  std::vector<int> users, pois;
  users.reserve(graph.edges.size());
  pois.reserve(graph.edges.size());
  for (const auto& e : graph.edges) {
    users.push_back(e.user);
    pois.push_back(e.poi);
  }
  auto x = ad::hconcat(ad::gather_rows(user_emb, users), ad::gather_rows(poi_emb, pois));
  auto h = ad::leaky_relu(ad::add_row(ad::matmul(x, w.wa), w.ba));
  return ad::sigmoid(ad::add_row(ad::matmul(h, w.wb), w.bb));
}

EdgeSelection select_edges(const InteractionGraph& graph, std::span<const double> scores, double delta) {
  if (scores.size() != graph.edges.size()) throw ShapeError("select_edges: one score per edge required");
  EdgeSelection sel;
  std::vector<int> best(static_cast<std::size_t>(graph.n_users), -1);
  std::vector<char> has_kept(static_cast<std::size_t>(graph.n_users), 0);
  for (std::size_t i = 0; i < graph.edges.size(); ++i) {
    const auto& e = graph.edges[i];
    const auto u = static_cast<std::size_t>(e.user);
    if (scores[i] >= delta) {
      sel.kept.push_back(static_cast<int>(i));
      has_kept[u] = 1;
    }
    const int b = best[u];
    if (b < 0 || scores[i] > scores[static_cast<std::size_t>(b)] ||
        (scores[i] == scores[static_cast<std::size_t>(b)] && e.poi < graph.edges[static_cast<std::size_t>(b)].poi)) {
      best[u] = static_cast<int>(i);
    }
  }
  for (std::size_t u = 0; u < best.size(); ++u) {
    if (best[u] >= 0 && !has_kept[u]) sel.guard.push_back(best[u]);
  }
  if (!sel.guard.empty()) {
    sel.kept.insert(sel.kept.end(), sel.guard.begin(), sel.guard.end());
    std::sort(sel.kept.begin(), sel.kept.end());
    std::sort(sel.guard.begin(), sel.guard.end());
  }
  return sel;
}

InteractionGraph denoise(const InteractionGraph& graph, std::span<const double> scores, double delta) {
  const auto sel = select_edges(graph, scores, delta);
  InteractionGraph out{graph.n_users, graph.n_pois, {}};
  out.edges.reserve(sel.kept.size());
  for (int i : sel.kept) out.edges.push_back(graph.edges[static_cast<std::size_t>(i)]);
  return out;
}

ad::PropagationGraph interaction_propagation(const InteractionGraph& graph, std::span<const int> kept) {
  ad::PropagationGraph g;
  g.n_nodes = graph.n_users + graph.n_pois;
  g.diagonal.assign(static_cast<std::size_t>(g.n_nodes), 1.0);
  g.src.reserve(kept.size());
  g.dst.reserve(kept.size());
  for (int i : kept) {
    const auto& e = graph.edges.at(static_cast<std::size_t>(i));
    g.src.push_back(e.user);
    g.dst.push_back(graph.n_users + e.poi);
  }
  return g;
}

ad::PropagationGraph transition_propagation(const TransitionGraph& graph) {
  ad::PropagationGraph g;
  g.n_nodes = graph.n_pois;
  g.diagonal.assign(static_cast<std::size_t>(g.n_nodes), 1.0);
  std::map<std::pair<int, int>, double> undirected;
  for (const auto& e : graph.edges) {
    if (e.src == e.dst) {
      g.diagonal[static_cast<std::size_t>(e.src)] += 2.0 * static_cast<double>(e.weight);
    } else {
      undirected[{std::min(e.src, e.dst), std::max(e.src, e.dst)}] += static_cast<double>(e.weight);
    }
  }
  for (const auto& [key, w] : undirected) {
    g.src.push_back(key.first);
    g.dst.push_back(key.second);
  }
  return g;
}

namespace {

Matrix transition_weights(const TransitionGraph& graph) {
  std::map<std::pair<int, int>, double> undirected;
  for (const auto& e : graph.edges) {
    if (e.src != e.dst) {
      undirected[{std::min(e.src, e.dst), std::max(e.src, e.dst)}] += static_cast<double>(e.weight);
    }
  }
  Matrix w(static_cast<Eigen::Index>(undirected.size()), 1);
  Eigen::Index i = 0;
  for (const auto& [key, v] : undirected) w(i++, 0) = v;
  return w;
}

}  // namespace

ad::Var gcn_embed(ad::Var features, const ad::PropagationGraph& graph, ad::Var edge_weights, ad::Var weight) {
  if (features.cols() != weight.rows()) throw ShapeError("gcn_embed: feature width does not match weight");
  return ad::leaky_relu(ad::normalized_propagate(ad::matmul(features, weight), graph, edge_weights), 0.01);
}

ad::Var fuse_poi_embeddings(ad::Var interaction_poi, ad::Var transition_poi) {
  if (interaction_poi.rows() != transition_poi.rows() || interaction_poi.cols() != transition_poi.cols()) {
    throw ShapeError("fuse_poi_embeddings: shape mismatch");
  }
  return ad::scale(ad::add(interaction_poi, transition_poi), 0.5);
}

GraphAdjustOutput adjust_graph(const InteractionGraph& interaction, const TransitionGraph& transition,
                               ad::Var user_emb, ad::Var poi_emb, const GraphAdjustWeights& w,
                               const GraphAdjustConfig& cfg) {
  if (user_emb.cols() != poi_emb.cols()) {
    throw ShapeError("adjust_graph: user and poi embeddings must share a width");
  }
  ad::Tape& tape = *user_emb.tape();
  GraphAdjustOutput out;

  const auto n_edges = interaction.edges.size();
  Matrix counts;
  ad::Var edge_weights;
  if (cfg.denoise) {
    out.scores = score_edges(interaction, user_emb, poi_emb, w.denoiser);
    const Matrix& s = out.scores.value();
    out.selection = select_edges(interaction, std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                                 cfg.delta);
  } else {
    out.selection.kept.resize(n_edges);
    for (std::size_t i = 0; i < n_edges; ++i) out.selection.kept[i] = static_cast<int>(i);
  }
  counts.resize(static_cast<Eigen::Index>(out.selection.kept.size()), 1);
  for (std::size_t i = 0; i < out.selection.kept.size(); ++i) {
    counts(static_cast<Eigen::Index>(i), 0) =
        static_cast<double>(interaction.edges[static_cast<std::size_t>(out.selection.kept[i])].weight);
  }
  if (cfg.denoise && cfg.gate == GradientGate::ScoreScaled) {
    edge_weights = ad::mul_const(ad::gather_rows(out.scores, out.selection.kept), counts);
  } else {
    edge_weights = tape.constant(counts);
  }

  const auto in_graph = interaction_propagation(interaction, out.selection.kept);
  auto nodes = gcn_embed(ad::vconcat(user_emb, poi_emb), in_graph, edge_weights, w.gcn_interaction);
  auto in_poi = ad::slice_rows(nodes, interaction.n_users, interaction.n_pois);

  const auto tr_graph = transition_propagation(transition);
  auto tr_poi = gcn_embed(poi_emb, tr_graph, tape.constant(transition_weights(transition)), w.gcn_transition);

  out.poi_embeddings = fuse_poi_embeddings(in_poi, tr_poi);
  return out;
}

void write_edge_list(std::ostream& out, const InteractionGraph& graph, std::span<const double> scores) {
  if (!scores.empty() && scores.size() != graph.edges.size()) {
    throw ShapeError("write_edge_list: one score per edge required");
  }
  for (std::size_t i = 0; i < graph.edges.size(); ++i) {
    const auto& e = graph.edges[i];
    out << e.user << '\t' << e.poi << '\t' << e.weight << '\t';
    if (scores.empty()) {
      out << "nan";
    } else {
      out << scores[i];
    }
    out << '\n';
  }
}

}  // namespace lotnext
