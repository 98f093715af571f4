// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfrank/scoring.hpp"

namespace cfrank {

/// Scores of one training example: the positive passage's document, its
/// partial and full counterfactuals, the adversarial rewrite, and N >= 1
/// negatives.
struct ScoreBundle {
  double s_pos = 0.0;
  double s_partial = 0.0;
  double s_full = 0.0;
  double s_adv = 0.0;
  std::vector<double> s_negs;
};

/// Gradient of a loss with respect to each ScoreBundle field.
struct ScoreGrad {
  double s_pos = 0.0;
  double s_partial = 0.0;
  double s_full = 0.0;
  double s_adv = 0.0;
  std::vector<double> s_negs;
};

struct LossWeights {
  double alpha = 0.0;
  double beta = 0.0;
  std::string strategy = "plugin";
};

struct LossBundle {
  double l_cla = 0.0;
  double l_neg = 0.0;
  double l_pos = 0.0;
  double l_adv = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double total = 0.0;
  ScoreGrad grad;  // d(total)/d(score)
};

/// log(sum(exp(xs))) with max-subtraction; optionally fills the softmax.
double logsumexp(const std::vector<double>& xs, std::vector<double>* softmax = nullptr);

/// log(1 + e^x) without overflow.
double softplus(double x);

double logistic(double x);

/// -log(e^{s_pos} / (e^{s_pos} + sum_j e^{s_neg_j})). Gradient outputs are
/// optional and written, not accumulated.
double loss_cla(double s_pos, const std::vector<double>& s_negs, double* d_pos = nullptr,
                std::vector<double>* d_negs = nullptr);

/// -log sigma(s_pos - s_partial) - log sigma(s_partial - s_full): the partial
/// counterfactual must score under the intact document and over the full one.
double loss_neg(double s_pos, double s_partial, double s_full, double* d_pos = nullptr,
                double* d_partial = nullptr, double* d_full = nullptr);

/// -log(e^{s_full} / (e^{s_full} + sum_j e^{s_neg_j})): the document minus its
/// positive passage still outranks unrelated negatives.
double loss_pos(double s_full, const std::vector<double>& s_negs, double* d_full = nullptr,
                std::vector<double>* d_negs = nullptr);

/// -log sigma(s_pos - s_adv) - log sigma(s_adv - s_full): the adversarial
/// rewrite sits between the intact document and the full counterfactual.
double loss_adv(double s_pos, double s_adv, double s_full, double* d_pos = nullptr,
                double* d_adv = nullptr, double* d_full = nullptr);

/// alpha = 1 - r, beta = r with r = (cosine_full + 1) / 2, where cosine_full
/// is the similarity of the query to the full counterfactual. Out-of-range r
/// is clamped with a warning on stderr.
LossWeights weights_rel(double cosine_full);

/// alpha = 1 - s', beta = s' with s' = max(phi_pos, 0) / sum_i max(phi_i, 0);
/// s' = 0.5 when no value is positive.
LossWeights weights_shapley(const std::vector<std::optional<double>>& phi, size_t positive_index);

LossWeights weights_plugin(double alpha, double beta);

/// total = l_cla + alpha * (l_neg + l_adv) + beta * l_pos, with the gradient
/// accumulated from the term gradients with coefficients (1, alpha, beta,
/// alpha).
LossBundle total_loss(const ScoreBundle& scores, const LossWeights& weights);

uint64_t fnv1a64(const std::string& text);

/// Desk-scale differentiable stand-in for a trained dual encoder: tokens are
/// hashed into an H-bucket count vector, projected by an H x k weight matrix,
/// and compared by cosine. Zero-norm projections score 0 and contribute no
/// gradient.
class ReferenceEncoder {
 public:
  ReferenceEncoder(size_t hash_dim, size_t embed_dim, uint64_t seed);

  size_t hash_dim() const { return hash_dim_; }
  size_t embed_dim() const { return embed_dim_; }
  size_t weight_count() const { return weights_.size(); }

  double weight_at(size_t flat) const { return weights_[flat]; }
  void set_weight(size_t flat, double value) { weights_[flat] = value; }

  std::vector<double> counts(TokenView tokens) const;
  std::vector<double> encode(TokenView tokens) const;
  double score(TokenView query_tokens, TokenView doc_tokens) const;

  /// Adds coef * d score(q, d) / d W into grad (flat H x k, row-major).
  /// With u = W^T c_q, v = W^T c_d and f = cos(u, v):
  ///   d f / d W[h][j] = c_q[h] * g_u[j] + c_d[h] * g_v[j]
  ///   g_u = (v_hat - f * u_hat) / |u|,  g_v = (u_hat - f * v_hat) / |v|
  void accumulate_score_gradient(TokenView query_tokens, TokenView doc_tokens, double coef,
                                 std::vector<double>* grad) const;

 private:
  size_t hash_dim_;
  size_t embed_dim_;
  std::vector<double> weights_;  // row-major H x k
};

/// Scorer adapter so the reference encoder can drive ranking and attribution.
class ReferenceScorer : public Scorer {
 public:
  explicit ReferenceScorer(const ReferenceEncoder& encoder) : encoder_(encoder) {}
  std::string name() const override { return "reference"; }
  double score(const Query& query, TokenView doc_tokens) const override;

 private:
  const ReferenceEncoder& encoder_;
};

struct TrainingExample {
  std::vector<std::string> query;
  std::vector<std::string> pos;
  std::vector<std::string> partial;
  std::vector<std::string> full;
  std::vector<std::string> adv;
  std::vector<std::vector<std::string>> negs;  // N >= 1
};

/// Scores one example through the encoder.
ScoreBundle score_example(const ReferenceEncoder& encoder, const TrainingExample& example);

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t coordinates = 0;
};

/// Compares the analytic d(total)/d(weights) of the summed batch loss against
/// central finite differences at sampled weight coordinates. Weights alpha
/// and beta are held constant at their base-point values. epsilon_fd must lie
/// in [1e-7, 1e-3].
GradCheckReport grad_check(const ReferenceEncoder& encoder,
                           const std::vector<TrainingExample>& batch, const LossWeights& weights,
                           double epsilon_fd, size_t sample_coordinates, uint64_t seed);

}  // namespace cfrank
