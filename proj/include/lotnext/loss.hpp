#pragma once

#include <array>
#include <span>
#include <string_view>

#include "lotnext/autodiff.hpp"
#include "lotnext/data.hpp"

namespace lotnext {

/// uncertainty: sum_i exp(-s_i) L_i + s_i with learnable s_i.
/// fixed:       sum_i lambda_i L_i.
enum class LambdaMode { Uncertainty, Fixed };

LambdaMode parse_lambda_mode(std::string_view name);
std::string_view to_string(LambdaMode mode);

struct LossConfig {
  double tau = 1.2;
  double epsilon = 1e-10;
  bool adjust_at_inference = false;
  LambdaMode lambda_mode = LambdaMode::Uncertainty;
  std::array<double, 3> fixed_lambda{1.0, 1.0, 1.0};  // ce, lta, aux
  bool adaptive_weights = true;  // false: phi = 1 for every sample
  bool detach_weights = true;    // treat phi as a constant in backprop

  void validate() const;
};

/// Mean negative log-likelihood of the labels under softmax(logits).
double cross_entropy(const Matrix& logits, std::span<const int> labels);
ad::Var cross_entropy(ad::Var logits, std::span<const int> labels);

/// alpha_i = tau * (1 - log(freq_i + eps) / log(freq_max + eps)), one per class.
RowVector logit_adjustment_factors(const FrequencyTable& freq, double tau, double epsilon);

struct AdaptiveWeights {
  Eigen::VectorXd cosine;  // cos(o_k, w_{y_k})
  Eigen::VectorXd xi;      // 1 if cos > 0 else 1 - cos
  Eigen::VectorXd phi;     // 1 if xi <= xi_bar else 1 + xi - xi_bar
  double xi_bar = 1.0;     // exp(mean log(xi + eps))
};

/// `head_w` holds one class centre per column (h x |P|).
AdaptiveWeights adaptive_sample_weights(const Matrix& hidden, const Matrix& head_w, std::span<const int> labels,
                                        double epsilon);

/// Same weights as an (N x 1) node differentiable in `hidden` and `head_w`.
ad::Var adaptive_sample_weights(ad::Var hidden, ad::Var head_w, std::span<const int> labels, double epsilon);

/// -(1/N) sum_k phi_k log softmax(l_k + alpha)[y_k].
ad::Var lta_loss(ad::Var logits, std::span<const int> labels, const RowVector& alpha, ad::Var phi);

/// mean((t_hat - slot/168)^2).
ad::Var aux_time_loss(ad::Var time_pred, std::span<const int> slots);
double aux_time_loss(std::span<const double> time_pred, std::span<const int> slots);

struct JointLoss {
  ad::Var value;
  std::array<double, 3> lambda{};
};

JointLoss joint_loss(ad::Var ce, ad::Var lta, ad::Var aux, ad::Var log_vars, const LossConfig& cfg);

struct LossBreakdown {
  double ce = 0.0;
  double lta = 0.0;
  double aux = 0.0;
  double joint = 0.0;
  std::array<double, 3> lambda{};
  double xi_bar = 1.0;
  Eigen::VectorXd phi;
};

struct LossTerms {
  ad::Var ce, lta, aux, joint;
  AdaptiveWeights weights;
  std::array<double, 3> lambda{};

  LossBreakdown breakdown() const;
};

/// All loss components for one forward pass.
LossTerms compute_losses(ad::Var logits, ad::Var hidden, ad::Var time_pred, ad::Var head_w, ad::Var log_vars,
                         std::span<const int> labels, std::span<const int> label_slots, const RowVector& alpha,
                         const LossConfig& cfg);

}  // namespace lotnext
