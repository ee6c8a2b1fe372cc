#include "lotnext/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lotnext/error.hpp"

namespace lotnext::ad {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

void require_segments(std::span<const Segment> segments, Eigen::Index rows, const char* op) {
  for (const auto& s : segments) {
    if (s.start < 0 || s.length < 0 || s.start + s.length > rows) {
      throw ShapeError(std::string(op) + ": segment out of range");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(std::string name, Matrix value) {
  if (contains(name)) {
    throw Error("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->zero_grad();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw Error("unknown parameter: " + name);
}

const Parameter& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw Error("unknown parameter: " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p->name == name; });
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): value is not 1x1");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, true, &param, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw Error("record: parent belongs to another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0 && n.value.size() != 0) {
    n.grad.setZero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  if (!nodes_[v.id()].requires_grad) return;
  Matrix& buf = grad_buffer(v.id());
  require_same_shape(buf, g, "accumulate");
  buf += g;
}

void Tape::accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Matrix& g) {
  if (!nodes_[v.id()].requires_grad) return;
  grad_buffer(v.id()).block(row, col, g.rows(), g.cols()) += g;
}

void Tape::accumulate_row(Var v, Eigen::Index row, const RowVector& g) {
  if (!nodes_[v.id()].requires_grad) return;
  grad_buffer(v.id()).row(row) += g;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw Error("backward: root belongs to another tape");
  if (nodes_[root.id()].value.size() != 1) throw ShapeError("backward: root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).setOnes();
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      // The callback only touches parents, which precede this node.
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a.id())) t.accumulate(a, g * t.value(b.id()).transpose());
    if (t.requires_grad(b.id())) t.accumulate(b, t.value(a.id()).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value() - b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a.id())) t.accumulate(a, g.cwiseProduct(t.value(b.id())));
    if (t.requires_grad(b.id())) t.accumulate(b, g.cwiseProduct(t.value(a.id())));
  });
}

Var scale(Var a, double factor) {
  Matrix out = a.value() * factor;
  return a.tape()->record(std::move(out), {a},
                          [a, factor](Tape& t, const Matrix& g) { t.accumulate(a, g * factor); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: row must be 1 x " + std::to_string(a.cols()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row.id())) t.accumulate(row, g.colwise().sum());
  });
}

Var mul_const(Var a, const Matrix& c) {
  require_same_shape(a.value(), c, "mul_const");
  Matrix out = a.value().cwiseProduct(c);
  return a.tape()->record(std::move(out), {a},
                          [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(c)); });
}

Var hconcat(Var a, Var b) {
  if (a.rows() != b.rows()) throw ShapeError("hconcat: row counts differ");
  const Eigen::Index ca = a.cols();
  Matrix out(a.rows(), ca + b.cols());
  out << a.value(), b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b, ca](Tape& t, const Matrix& g) {
    if (t.requires_grad(a.id())) t.accumulate(a, g.leftCols(ca));
    if (t.requires_grad(b.id())) t.accumulate(b, g.rightCols(g.cols() - ca));
  });
}

Var vconcat(Var a, Var b) {
  if (a.cols() != b.cols()) throw ShapeError("vconcat: column counts differ");
  const Eigen::Index ra = a.rows();
  Matrix out(ra + b.rows(), a.cols());
  out << a.value(), b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b, ra](Tape& t, const Matrix& g) {
    if (t.requires_grad(a.id())) t.accumulate(a, g.topRows(ra));
    if (t.requires_grad(b.id())) t.accumulate(b, g.bottomRows(g.rows() - ra));
  });
}

Var gather_rows(Var a, std::span<const int> index) {
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), av.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= av.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range [0," +
                       std::to_string(av.rows()) + ")");
    }
    out.row(static_cast<Eigen::Index>(i)) = av.row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return a.tape()->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      t.accumulate_row(a, idx[i], g.row(static_cast<Eigen::Index>(i)));
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start](Tape& t, const Matrix& g) {
    t.accumulate_block(a, start, 0, g);
  });
}

Var element(Var a, Eigen::Index row, Eigen::Index col) {
  if (row < 0 || col < 0 || row >= a.rows() || col >= a.cols()) throw ShapeError("element: out of range");
  Matrix out(1, 1);
  out(0, 0) = a.value()(row, col);
  return a.tape()->record(std::move(out), {a}, [a, row, col](Tape& t, const Matrix& g) {
    t.accumulate_block(a, row, col, g);
  });
}

Var leaky_relu(Var a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return a.tape()->record(std::move(out), {a}, [a, slope](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a.id());
    t.accumulate(a, g.binaryExpr(x, [slope](double gi, double xi) { return xi > 0.0 ? gi : slope * gi; }));
  });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Matrix y = out;
  return a.tape()->record(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  Matrix y = out;
  return a.tape()->record(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(y));
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(out), {a}, [a, r, c](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw Error("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  }
  return mul_const(a, mask);
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows(), c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    throw ShapeError("layer_norm: scale/offset must be 1 x " + std::to_string(c));
  }
  Matrix xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  return a.tape()->record(
      std::move(out), {a, gamma, beta},
      [a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
        if (t.requires_grad(gamma.id())) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(beta.id())) t.accumulate(beta, g.colwise().sum());
        if (!t.requires_grad(a.id())) return;
        const RowVector& gam = t.value(gamma.id()).row(0);
        Matrix dx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          RowVector dxhat = g.row(i).cwiseProduct(gam);
          const double m1 = dxhat.mean();
          const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
          dx.row(i) = inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
        }
        t.accumulate(a, dx);
      });
}

Var causal_attention(Var q, Var k, Var v, std::span<const Segment> segments, int n_heads,
                     std::vector<Matrix>* probs) {
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  require_same_shape(Q, K, "causal_attention");
  require_same_shape(Q, V, "causal_attention");
  require_segments(segments, Q.rows(), "causal_attention");
  if (n_heads <= 0 || Q.cols() % n_heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(Q.cols()) +
                     " not divisible by head count " + std::to_string(n_heads));
  }
  const Eigen::Index dk = Q.cols() / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix out = Matrix::Zero(Q.rows(), Q.cols());
  std::vector<Matrix> cache;
  cache.reserve(segments.size() * static_cast<std::size_t>(n_heads));
  for (const auto& s : segments) {
    for (int h = 0; h < n_heads; ++h) {
      const auto qs = Q.block(s.start, h * dk, s.length, dk);
      const auto ks = K.block(s.start, h * dk, s.length, dk);
      const auto vs = V.block(s.start, h * dk, s.length, dk);
      Matrix p = (qs * ks.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < s.length; ++i) {
        const double m = p.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < s.length; ++j) {
          const double e = j <= i ? std::exp(p(i, j) - m) : 0.0;
          p(i, j) = e;
          z += e;
        }
        p.row(i) /= z;
      }
      out.block(s.start, h * dk, s.length, dk) = p * vs;
      cache.push_back(std::move(p));
    }
  }
  if (probs != nullptr) *probs = cache;

  std::vector<Segment> segs(segments.begin(), segments.end());
  return q.tape()->record(
      std::move(out), {q, k, v},
      [q, k, v, segs = std::move(segs), cache = std::move(cache), n_heads, dk, inv_sqrt](
          Tape& t, const Matrix& g) {
        const Matrix& Q = t.value(q.id());
        const Matrix& K = t.value(k.id());
        const Matrix& V = t.value(v.id());
        Matrix dq = Matrix::Zero(Q.rows(), Q.cols());
        Matrix dk_ = Matrix::Zero(Q.rows(), Q.cols());
        Matrix dv = Matrix::Zero(Q.rows(), Q.cols());
        std::size_t c = 0;
        for (const auto& s : segs) {
          for (int h = 0; h < n_heads; ++h, ++c) {
            const Matrix& p = cache[c];
            const auto go = g.block(s.start, h * dk, s.length, dk);
            const auto qs = Q.block(s.start, h * dk, s.length, dk);
            const auto ks = K.block(s.start, h * dk, s.length, dk);
            const auto vs = V.block(s.start, h * dk, s.length, dk);
            dv.block(s.start, h * dk, s.length, dk) += p.transpose() * go;
            Matrix dp = go * vs.transpose();
            Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
            Matrix ds = p.cwiseProduct(dp.colwise() - row_dot) * inv_sqrt;
            dq.block(s.start, h * dk, s.length, dk) += ds * ks;
            dk_.block(s.start, h * dk, s.length, dk) += ds.transpose() * qs;
          }
        }
        t.accumulate(q, dq);
        t.accumulate(k, dk_);
        t.accumulate(v, dv);
      });
}

Var mix_segments(Var a, std::span<const Segment> segments, std::span<const Matrix> mixing) {
  const Matrix& x = a.value();
  require_segments(segments, x.rows(), "mix_segments");
  if (segments.size() != mixing.size()) throw ShapeError("mix_segments: one matrix per segment");
  Matrix out = x;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (mixing[i].rows() != s.length || mixing[i].cols() != s.length) {
      throw ShapeError("mix_segments: mixing matrix must be square with segment length");
    }
    out.middleRows(s.start, s.length) = mixing[i] * x.middleRows(s.start, s.length);
  }
  std::vector<Segment> segs(segments.begin(), segments.end());
  std::vector<Matrix> mats(mixing.begin(), mixing.end());
  return a.tape()->record(std::move(out), {a},
                          [a, segs = std::move(segs), mats = std::move(mats)](Tape& t, const Matrix& g) {
                            Matrix dx = g;
                            for (std::size_t i = 0; i < segs.size(); ++i) {
                              const auto& s = segs[i];
                              dx.middleRows(s.start, s.length) =
                                  mats[i].transpose() * g.middleRows(s.start, s.length);
                            }
                            t.accumulate(a, dx);
                          });
}

Var normalized_propagate(Var features, const PropagationGraph& graph, Var edge_weights) {
  const Matrix& H = features.value();
  const Matrix& W = edge_weights.value();
  const auto n_edges = static_cast<Eigen::Index>(graph.src.size());
  if (H.rows() != graph.n_nodes) {
    throw ShapeError("normalized_propagate: feature rows " + std::to_string(H.rows()) +
                     " != node count " + std::to_string(graph.n_nodes));
  }
  if (graph.dst.size() != graph.src.size() ||
      graph.diagonal.size() != static_cast<std::size_t>(graph.n_nodes)) {
    throw ShapeError("normalized_propagate: malformed graph");
  }
  if (W.rows() != n_edges || W.cols() != 1) throw ShapeError("normalized_propagate: weights must be E x 1");

  Eigen::VectorXd deg(graph.n_nodes);
  for (int i = 0; i < graph.n_nodes; ++i) deg(i) = graph.diagonal[i];
  for (Eigen::Index e = 0; e < n_edges; ++e) {
    const int a = graph.src[e], b = graph.dst[e];
    if (a == b || a < 0 || b < 0 || a >= graph.n_nodes || b >= graph.n_nodes) {
      throw ShapeError("normalized_propagate: invalid edge endpoint");
    }
    deg(a) += W(e, 0);
    deg(b) += W(e, 0);
  }
  Eigen::VectorXd inv_sqrt(graph.n_nodes);
  for (int i = 0; i < graph.n_nodes; ++i) {
    inv_sqrt(i) = deg(i) > 0.0 ? 1.0 / std::sqrt(deg(i)) : 0.0;
  }

  Matrix out(H.rows(), H.cols());
  for (int i = 0; i < graph.n_nodes; ++i) {
    out.row(i) = (graph.diagonal[i] * inv_sqrt(i) * inv_sqrt(i)) * H.row(i);
  }
  for (Eigen::Index e = 0; e < n_edges; ++e) {
    const int a = graph.src[e], b = graph.dst[e];
    const double c = W(e, 0) * inv_sqrt(a) * inv_sqrt(b);
    out.row(a) += c * H.row(b);
    out.row(b) += c * H.row(a);
  }

  return features.tape()->record(
      std::move(out), {features, edge_weights},
      [features, edge_weights, graph, inv_sqrt = std::move(inv_sqrt)](Tape& t, const Matrix& g) {
        const Matrix& H = t.value(features.id());
        const Matrix& W = t.value(edge_weights.id());
        const auto n_edges = static_cast<Eigen::Index>(graph.src.size());
        if (t.requires_grad(features.id())) {
          Matrix dh(H.rows(), H.cols());
          for (int i = 0; i < graph.n_nodes; ++i) {
            dh.row(i) = (graph.diagonal[i] * inv_sqrt(i) * inv_sqrt(i)) * g.row(i);
          }
          for (Eigen::Index e = 0; e < n_edges; ++e) {
            const int a = graph.src[e], b = graph.dst[e];
            const double c = W(e, 0) * inv_sqrt(a) * inv_sqrt(b);
            dh.row(b) += c * g.row(a);
            dh.row(a) += c * g.row(b);
          }
          t.accumulate(features, dh);
        }
        if (t.requires_grad(edge_weights.id())) {
          // dL/d(deg_i), then chain into each edge weight through both endpoints.
          Eigen::VectorXd ddeg(graph.n_nodes);
          for (int i = 0; i < graph.n_nodes; ++i) {
            const double d = inv_sqrt(i) * inv_sqrt(i);
            ddeg(i) = -graph.diagonal[i] * d * d * g.row(i).dot(H.row(i));
          }
          Eigen::VectorXd cross(n_edges);
          for (Eigen::Index e = 0; e < n_edges; ++e) {
            const int a = graph.src[e], b = graph.dst[e];
            cross(e) = g.row(a).dot(H.row(b)) + g.row(b).dot(H.row(a));
            const double c = W(e, 0) * inv_sqrt(a) * inv_sqrt(b) * cross(e);
            ddeg(a) -= 0.5 * c * inv_sqrt(a) * inv_sqrt(a);
            ddeg(b) -= 0.5 * c * inv_sqrt(b) * inv_sqrt(b);
          }
          Matrix dw(n_edges, 1);
          for (Eigen::Index e = 0; e < n_edges; ++e) {
            const int a = graph.src[e], b = graph.dst[e];
            dw(e, 0) = inv_sqrt(a) * inv_sqrt(b) * cross(e) + ddeg(a) + ddeg(b);
          }
          t.accumulate(edge_weights, dw);
        }
      });
}

Var weighted_softmax_cross_entropy(Var logits, std::span<const int> labels, const RowVector& offsets,
                                   Var weights) {
  const Matrix& L = logits.value();
  const Eigen::Index n = L.rows(), c = L.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeError("cross entropy: label count != rows");
  if (offsets.size() != 0 && offsets.size() != c) throw ShapeError("cross entropy: offsets must be 1 x C");
  if (weights.rows() != n || weights.cols() != 1) throw ShapeError("cross entropy: weights must be N x 1");
  if (n == 0) throw ShapeError("cross entropy: empty batch");
  const Matrix& w = weights.value();

  Matrix prob(n, c);
  Eigen::VectorXd per_sample(n);
  double total = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (labels[k] < 0 || labels[k] >= c) throw ShapeError("cross entropy: label out of range");
    RowVector z = L.row(k);
    if (offsets.size() != 0) z += offsets;
    const double m = z.maxCoeff();
    RowVector e = (z.array() - m).exp();
    const double s = e.sum();
    prob.row(k) = e / s;
    per_sample(k) = m + std::log(s) - z(labels[k]);
    total += w(k, 0) * per_sample(k);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape()->record(
      std::move(out), {logits, weights},
      [logits, weights, lab = std::move(lab), prob = std::move(prob), per_sample = std::move(per_sample)](
          Tape& t, const Matrix& g) {
        const Matrix& w = t.value(weights.id());
        const double inv_n = g(0, 0) / static_cast<double>(lab.size());
        if (t.requires_grad(logits.id())) {
          Matrix dl = prob;
          for (std::size_t k = 0; k < lab.size(); ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            dl(r, lab[k]) -= 1.0;
            dl.row(r) *= w(r, 0) * inv_n;
          }
          t.accumulate(logits, dl);
        }
        if (t.requires_grad(weights.id())) t.accumulate(weights, per_sample * inv_n);
      });
}

Var mean_squared_error(Var pred, const Matrix& target) {
  require_same_shape(pred.value(), target, "mean_squared_error");
  if (target.size() == 0) throw ShapeError("mean_squared_error: empty input");
  Matrix diff = pred.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<double>(diff.size());
  return pred.tape()->record(std::move(out), {pred}, [pred, diff = std::move(diff)](Tape& t, const Matrix& g) {
    t.accumulate(pred, diff * (2.0 * g(0, 0) / static_cast<double>(diff.size())));
  });
}

}  // namespace lotnext::ad
