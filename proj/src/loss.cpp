#include "lotnext/loss.hpp"

#include <cmath>

#include "lotnext/error.hpp"

namespace lotnext {

LambdaMode parse_lambda_mode(std::string_view name) {
  if (name == "uncertainty") return LambdaMode::Uncertainty;
  if (name == "fixed") return LambdaMode::Fixed;
  throw ConfigError("unknown lambda mode '" + std::string(name) + "' (uncertainty|fixed)");
}

std::string_view to_string(LambdaMode mode) { return mode == LambdaMode::Uncertainty ? "uncertainty" : "fixed"; }

void LossConfig::validate() const {
  if (!(tau >= 0.0)) throw ConfigError("loss.tau must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon must be > 0");
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  ad::Tape tape;
  auto l = tape.constant(logits);
  return cross_entropy(l, labels).scalar();
}

ad::Var cross_entropy(ad::Var logits, std::span<const int> labels) {
  auto ones = logits.tape()->constant(Matrix::Ones(logits.rows(), 1));
  return ad::weighted_softmax_cross_entropy(logits, labels, RowVector(), ones);
}

RowVector logit_adjustment_factors(const FrequencyTable& freq, double tau, double epsilon) {
  if (freq.max <= 0) throw DataError("logit adjustment: maximum frequency is zero (empty training set)");
  const double denom = std::log(static_cast<double>(freq.max) + epsilon);
  RowVector alpha(freq.size());
  for (int i = 0; i < freq.size(); ++i) {
    alpha(i) = tau * (1.0 - std::log(static_cast<double>(freq[i]) + epsilon) / denom);
  }
  return alpha;
}

AdaptiveWeights adaptive_sample_weights(const Matrix& hidden, const Matrix& head_w, std::span<const int> labels,
                                        double epsilon) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (hidden.rows() != n) throw ShapeError("adaptive weights: one hidden row per label");
  if (hidden.cols() != head_w.rows()) throw ShapeError("adaptive weights: hidden width != head input width");
  if (n == 0) throw ShapeError("adaptive weights: empty batch");
  AdaptiveWeights w;
  w.cosine.resize(n);
  w.xi.resize(n);
  w.phi.resize(n);
  double log_sum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const int y = labels[static_cast<std::size_t>(k)];
    if (y < 0 || y >= head_w.cols()) throw ShapeError("adaptive weights: label out of range");
    const auto o = hidden.row(k);
    const auto c = head_w.col(y);
    const double cosine = o.dot(c.transpose()) / (o.norm() * c.norm() + epsilon);
    w.cosine(k) = cosine;
    w.xi(k) = cosine > 0.0 ? 1.0 : 1.0 - cosine;
    log_sum += std::log(w.xi(k) + epsilon);
  }
  w.xi_bar = std::exp(log_sum / static_cast<double>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    w.phi(k) = w.xi(k) - w.xi_bar <= 0.0 ? 1.0 : 1.0 + w.xi(k) - w.xi_bar;
  }
  return w;
}

ad::Var adaptive_sample_weights(ad::Var hidden, ad::Var head_w, std::span<const int> labels, double epsilon) {
  auto w = adaptive_sample_weights(hidden.value(), head_w.value(), labels, epsilon);
  Matrix out = w.phi;
  std::vector<int> lab(labels.begin(), labels.end());
  return hidden.tape()->record(
      std::move(out), {hidden, head_w},
      [hidden, head_w, lab = std::move(lab), w = std::move(w), epsilon](ad::Tape& t, const Matrix& g) {
        const Matrix& O = t.value(hidden.id());
        const Matrix& W = t.value(head_w.id());
        const auto n = static_cast<Eigen::Index>(lab.size());
        double dbar = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          if (w.xi(k) > w.xi_bar) dbar -= g(k, 0);
        }
        Matrix dO = Matrix::Zero(O.rows(), O.cols());
        Matrix dW = Matrix::Zero(W.rows(), W.cols());
        for (Eigen::Index k = 0; k < n; ++k) {
          double dxi = (w.xi(k) > w.xi_bar ? g(k, 0) : 0.0) +
                       dbar * w.xi_bar / (static_cast<double>(n) * (w.xi(k) + epsilon));
          if (w.cosine(k) > 0.0) continue;
          const double dcos = -dxi;
          const int y = lab[static_cast<std::size_t>(k)];
          const RowVector o = O.row(k);
          const RowVector c = W.col(y).transpose();
          const double no = o.norm(), nc = c.norm();
          const double denom = no * nc + epsilon;
          const double dot = o.dot(c);
          RowVector go = c / denom;
          RowVector gc = o / denom;
          if (no > 0.0) go -= (dot * nc / (denom * denom * no)) * o;
          if (nc > 0.0) gc -= (dot * no / (denom * denom * nc)) * c;
          dO.row(k) += dcos * go;
          dW.col(y) += dcos * gc.transpose();
        }
        t.accumulate(hidden, dO);
        t.accumulate(head_w, dW);
      });
}

ad::Var lta_loss(ad::Var logits, std::span<const int> labels, const RowVector& alpha, ad::Var phi) {
  if (alpha.size() != logits.cols()) throw ShapeError("lta_loss: one adjustment factor per class");
  return ad::weighted_softmax_cross_entropy(logits, labels, alpha, phi);
}

ad::Var aux_time_loss(ad::Var time_pred, std::span<const int> slots) {
  if (time_pred.cols() != 1 || time_pred.rows() != static_cast<Eigen::Index>(slots.size())) {
    throw ShapeError("aux_time_loss: predictions must be N x 1");
  }
  Matrix target(time_pred.rows(), 1);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    target(static_cast<Eigen::Index>(k), 0) = static_cast<double>(slots[k]) / kTimeSlots;
  }
  return ad::mean_squared_error(time_pred, target);
}

double aux_time_loss(std::span<const double> time_pred, std::span<const int> slots) {
  ad::Tape tape;
  Matrix p(static_cast<Eigen::Index>(time_pred.size()), 1);
  for (std::size_t k = 0; k < time_pred.size(); ++k) p(static_cast<Eigen::Index>(k), 0) = time_pred[k];
  return aux_time_loss(tape.constant(p), slots).scalar();
}

JointLoss joint_loss(ad::Var ce, ad::Var lta, ad::Var aux, ad::Var log_vars, const LossConfig& cfg) {
  const std::array<ad::Var, 3> parts{ce, lta, aux};
  JointLoss out;
  ad::Var total;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    ad::Var term;
    if (cfg.lambda_mode == LambdaMode::Fixed) {
      out.lambda[i] = cfg.fixed_lambda[i];
      term = ad::scale(parts[i], cfg.fixed_lambda[i]);
    } else {
      if (log_vars.rows() != 1 || log_vars.cols() != 3) throw ShapeError("joint_loss: log_vars must be 1 x 3");
      auto s = ad::element(log_vars, 0, static_cast<Eigen::Index>(i));
      auto precision = ad::exp(ad::scale(s, -1.0));
      out.lambda[i] = precision.scalar();
      term = ad::add(ad::mul(precision, parts[i]), s);
    }
    total = total.valid() ? ad::add(total, term) : term;
  }
  out.value = total;
  return out;
}

LossBreakdown LossTerms::breakdown() const {
  LossBreakdown b;
  b.ce = ce.scalar();
  b.lta = lta.scalar();
  b.aux = aux.scalar();
  b.joint = joint.scalar();
  b.lambda = lambda;
  b.xi_bar = weights.xi_bar;
  b.phi = weights.phi;
  return b;
}

LossTerms compute_losses(ad::Var logits, ad::Var hidden, ad::Var time_pred, ad::Var head_w, ad::Var log_vars,
                         std::span<const int> labels, std::span<const int> label_slots, const RowVector& alpha,
                         const LossConfig& cfg) {
  ad::Tape& tape = *logits.tape();
  LossTerms t;
  t.ce = cross_entropy(logits, labels);

  ad::Var phi;
  t.weights = adaptive_sample_weights(hidden.value(), head_w.value(), labels, cfg.epsilon);
  if (!cfg.adaptive_weights) {
    t.weights.phi.setOnes();
    phi = tape.constant(Matrix::Ones(logits.rows(), 1));
  } else if (cfg.detach_weights) {
    phi = tape.constant(t.weights.phi);
  } else {
    phi = adaptive_sample_weights(hidden, head_w, labels, cfg.epsilon);
  }
  t.lta = lta_loss(logits, labels, alpha, phi);
  t.aux = aux_time_loss(time_pred, label_slots);
  auto joint = joint_loss(t.ce, t.lta, t.aux, log_vars, cfg);
  t.joint = joint.value;
  t.lambda = joint.lambda;
  return t;
}

}  // namespace lotnext
