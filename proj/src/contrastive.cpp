// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "cfrank/error.hpp"
#include "cfrank/rng.hpp"

namespace cfrank {

namespace {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ValidationError(std::string("non-finite ") + what);
}

void require_finite(const std::vector<double>& xs, const char* what) {
  for (double x : xs) require_finite(x, what);
}

LossWeights clamped_pair(double r, const char* strategy, const char* quantity) {
  if (r < 0.0 || r > 1.0) {
    std::cerr << "warning: " << quantity << " " << r << " clamped to [0,1]\n";
    r = std::clamp(r, 0.0, 1.0);
  }
  LossWeights w;
  w.alpha = 1.0 - r;
  w.beta = r;
  w.strategy = strategy;
  return w;
}

}  // namespace

double logsumexp(const std::vector<double>& xs, std::vector<double>* softmax) {
  if (xs.empty()) throw ValidationError("logsumexp of empty input");
  double m = *std::max_element(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  double lse = m + std::log(sum);
  if (softmax != nullptr) {
    softmax->resize(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) (*softmax)[i] = std::exp(xs[i] - m) / sum;
  }
  return lse;
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double loss_cla(double s_pos, const std::vector<double>& s_negs, double* d_pos,
                std::vector<double>* d_negs) {
  require_finite(s_pos, "score");
  require_finite(s_negs, "score");
  if (s_negs.empty()) throw ValidationError("need at least one negative");
  std::vector<double> xs;
  xs.reserve(s_negs.size() + 1);
  xs.push_back(s_pos);
  xs.insert(xs.end(), s_negs.begin(), s_negs.end());
  std::vector<double> p;
  double value = logsumexp(xs, &p) - s_pos;
  if (d_pos != nullptr) *d_pos = p[0] - 1.0;
  if (d_negs != nullptr) {
    d_negs->assign(p.begin() + 1, p.end());
  }
  return value;
}

double loss_neg(double s_pos, double s_partial, double s_full, double* d_pos, double* d_partial,
                double* d_full) {
  require_finite(s_pos, "score");
  require_finite(s_partial, "score");
  require_finite(s_full, "score");
  double g1 = logistic(s_partial - s_pos);   // d softplus(s_partial - s_pos)
  double g2 = logistic(s_full - s_partial);  // d softplus(s_full - s_partial)
  if (d_pos != nullptr) *d_pos = -g1;
  if (d_partial != nullptr) *d_partial = g1 - g2;
  if (d_full != nullptr) *d_full = g2;
  return softplus(s_partial - s_pos) + softplus(s_full - s_partial);
}

double loss_pos(double s_full, const std::vector<double>& s_negs, double* d_full,
                std::vector<double>* d_negs) {
  require_finite(s_full, "score");
  require_finite(s_negs, "score");
  if (s_negs.empty()) throw ValidationError("need at least one negative");
  std::vector<double> xs;
  xs.reserve(s_negs.size() + 1);
  xs.push_back(s_full);
  xs.insert(xs.end(), s_negs.begin(), s_negs.end());
  std::vector<double> p;
  double value = logsumexp(xs, &p) - s_full;
  if (d_full != nullptr) *d_full = p[0] - 1.0;
  if (d_negs != nullptr) d_negs->assign(p.begin() + 1, p.end());
  return value;
}

double loss_adv(double s_pos, double s_adv, double s_full, double* d_pos, double* d_adv,
                double* d_full) {
  require_finite(s_pos, "score");
  require_finite(s_adv, "score");
  require_finite(s_full, "score");
  double g1 = logistic(s_adv - s_pos);
  double g2 = logistic(s_full - s_adv);
  if (d_pos != nullptr) *d_pos = -g1;
  if (d_adv != nullptr) *d_adv = g1 - g2;
  if (d_full != nullptr) *d_full = g2;
  return softplus(s_adv - s_pos) + softplus(s_full - s_adv);
}

LossWeights weights_rel(double cosine_full) {
  require_finite(cosine_full, "similarity");
  return clamped_pair((cosine_full + 1.0) / 2.0, "rel", "relevance weight");
}

LossWeights weights_shapley(const std::vector<std::optional<double>>& phi, size_t positive_index) {
  if (positive_index >= phi.size() || !phi[positive_index]) {
    throw ValidationError("positive passage has no attribution value");
  }
  double sum = 0.0;
  for (const auto& v : phi) {
    if (v) sum += std::max(*v, 0.0);
  }
  double s = sum > 0.0 ? std::max(*phi[positive_index], 0.0) / sum : 0.5;
  return clamped_pair(s, "shapley", "normalized attribution weight");
}

LossWeights weights_plugin(double alpha, double beta) {
  require_finite(alpha, "weight");
  require_finite(beta, "weight");
  LossWeights w;
  w.alpha = alpha;
  w.beta = beta;
  w.strategy = "plugin";
  return w;
}

LossBundle total_loss(const ScoreBundle& scores, const LossWeights& weights) {
  LossBundle out;
  out.alpha = weights.alpha;
  out.beta = weights.beta;
  out.grad.s_negs.assign(scores.s_negs.size(), 0.0);

  double cla_d_pos = 0.0;
  std::vector<double> cla_d_negs;
  out.l_cla = loss_cla(scores.s_pos, scores.s_negs, &cla_d_pos, &cla_d_negs);

  double neg_d_pos = 0.0, neg_d_partial = 0.0, neg_d_full = 0.0;
  out.l_neg = loss_neg(scores.s_pos, scores.s_partial, scores.s_full, &neg_d_pos, &neg_d_partial,
                       &neg_d_full);

  double pos_d_full = 0.0;
  std::vector<double> pos_d_negs;
  out.l_pos = loss_pos(scores.s_full, scores.s_negs, &pos_d_full, &pos_d_negs);

  double adv_d_pos = 0.0, adv_d_adv = 0.0, adv_d_full = 0.0;
  out.l_adv = loss_adv(scores.s_pos, scores.s_adv, scores.s_full, &adv_d_pos, &adv_d_adv,
                       &adv_d_full);

  double a = weights.alpha, b = weights.beta;
  out.total = out.l_cla + a * (out.l_neg + out.l_adv) + b * out.l_pos;
  out.grad.s_pos = cla_d_pos + a * (neg_d_pos + adv_d_pos);
  out.grad.s_partial = a * neg_d_partial;
  out.grad.s_full = a * (neg_d_full + adv_d_full) + b * pos_d_full;
  out.grad.s_adv = a * adv_d_adv;
  for (size_t j = 0; j < scores.s_negs.size(); ++j) {
    out.grad.s_negs[j] = cla_d_negs[j] + b * pos_d_negs[j];
  }
  return out;
}

uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ReferenceEncoder::ReferenceEncoder(size_t hash_dim, size_t embed_dim, uint64_t seed)
    : hash_dim_(hash_dim), embed_dim_(embed_dim) {
  if (hash_dim == 0 || embed_dim == 0) throw ValidationError("encoder dimensions must be positive");
  weights_.resize(hash_dim * embed_dim);
  Rng rng(seed);
  double scale = 1.0 / std::sqrt(static_cast<double>(hash_dim));
  for (double& w : weights_) w = rng.normal() * scale;
}

std::vector<double> ReferenceEncoder::counts(TokenView tokens) const {
  std::vector<double> c(hash_dim_, 0.0);
  for (const std::string& t : tokens) c[fnv1a64(t) % hash_dim_] += 1.0;
  return c;
}

std::vector<double> ReferenceEncoder::encode(TokenView tokens) const {
  std::vector<double> c = counts(tokens);
  std::vector<double> u(embed_dim_, 0.0);
  for (size_t h = 0; h < hash_dim_; ++h) {
    if (c[h] == 0.0) continue;
    const double* row = &weights_[h * embed_dim_];
    for (size_t j = 0; j < embed_dim_; ++j) u[j] += c[h] * row[j];
  }
  return u;
}

namespace {

double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double ReferenceEncoder::score(TokenView query_tokens, TokenView doc_tokens) const {
  std::vector<double> u = encode(query_tokens);
  std::vector<double> v = encode(doc_tokens);
  double nu = vec_norm(u), nv = vec_norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return vec_dot(u, v) / (nu * nv);
}

void ReferenceEncoder::accumulate_score_gradient(TokenView query_tokens, TokenView doc_tokens,
                                                 double coef, std::vector<double>* grad) const {
  if (grad->size() != weights_.size()) throw Error("gradient buffer size mismatch");
  std::vector<double> cq = counts(query_tokens);
  std::vector<double> cd = counts(doc_tokens);
  std::vector<double> u = encode(query_tokens);
  std::vector<double> v = encode(doc_tokens);
  double nu = vec_norm(u), nv = vec_norm(v);
  if (nu == 0.0 || nv == 0.0) return;

  std::vector<double> uh(embed_dim_), vh(embed_dim_);
  for (size_t j = 0; j < embed_dim_; ++j) {
    uh[j] = u[j] / nu;
    vh[j] = v[j] / nv;
  }
  double f = vec_dot(uh, vh);
  std::vector<double> gu(embed_dim_), gv(embed_dim_);
  for (size_t j = 0; j < embed_dim_; ++j) {
    gu[j] = (vh[j] - f * uh[j]) / nu;
    gv[j] = (uh[j] - f * vh[j]) / nv;
  }
  for (size_t h = 0; h < hash_dim_; ++h) {
    if (cq[h] == 0.0 && cd[h] == 0.0) continue;
    double* out = &(*grad)[h * embed_dim_];
    for (size_t j = 0; j < embed_dim_; ++j) {
      out[j] += coef * (cq[h] * gu[j] + cd[h] * gv[j]);
    }
  }
}

double ReferenceScorer::score(const Query& query, TokenView doc_tokens) const {
  return encoder_.score(query.tokens, doc_tokens);
}

ScoreBundle score_example(const ReferenceEncoder& encoder, const TrainingExample& example) {
  if (example.negs.empty()) throw ValidationError("need at least one negative");
  ScoreBundle s;
  s.s_pos = encoder.score(example.query, example.pos);
  s.s_partial = encoder.score(example.query, example.partial);
  s.s_full = encoder.score(example.query, example.full);
  s.s_adv = encoder.score(example.query, example.adv);
  s.s_negs.reserve(example.negs.size());
  for (const auto& neg : example.negs) s.s_negs.push_back(encoder.score(example.query, neg));
  return s;
}

GradCheckReport grad_check(const ReferenceEncoder& encoder,
                           const std::vector<TrainingExample>& batch, const LossWeights& weights,
                           double epsilon_fd, size_t sample_coordinates, uint64_t seed) {
  if (epsilon_fd < 1e-7 || epsilon_fd > 1e-3) throw ValidationError("epsilon_fd out of range");
  if (batch.empty()) throw ValidationError("empty batch");
  if (sample_coordinates == 0) throw ValidationError("need at least one coordinate");

  auto batch_total = [&](const ReferenceEncoder& enc) {
    double total = 0.0;
    for (const TrainingExample& ex : batch) {
      total += total_loss(score_example(enc, ex), weights).total;
    }
    return total;
  };

  // Analytic gradient of the summed batch loss, chained through the encoder.
  std::vector<double> analytic(encoder.weight_count(), 0.0);
  for (const TrainingExample& ex : batch) {
    ScoreBundle scores = score_example(encoder, ex);
    LossBundle loss = total_loss(scores, weights);
    encoder.accumulate_score_gradient(ex.query, ex.pos, loss.grad.s_pos, &analytic);
    encoder.accumulate_score_gradient(ex.query, ex.partial, loss.grad.s_partial, &analytic);
    encoder.accumulate_score_gradient(ex.query, ex.full, loss.grad.s_full, &analytic);
    encoder.accumulate_score_gradient(ex.query, ex.adv, loss.grad.s_adv, &analytic);
    for (size_t j = 0; j < ex.negs.size(); ++j) {
      encoder.accumulate_score_gradient(ex.query, ex.negs[j], loss.grad.s_negs[j], &analytic);
    }
  }
  for (double g : analytic) {
    if (!std::isfinite(g)) throw Error("non-finite gradient");
  }

  size_t total_coords = encoder.weight_count();
  std::vector<size_t> coords;
  if (sample_coordinates >= total_coords) {
    coords.resize(total_coords);
    for (size_t i = 0; i < total_coords; ++i) coords[i] = i;
  } else {
    Rng rng(seed);
    coords = rng.sample_distinct(sample_coordinates, total_coords);
  }

  ReferenceEncoder probe = encoder;
  GradCheckReport report;
  report.coordinates = coords.size();
  for (size_t flat : coords) {
    double w0 = probe.weight_at(flat);
    probe.set_weight(flat, w0 + epsilon_fd);
    double up = batch_total(probe);
    probe.set_weight(flat, w0 - epsilon_fd);
    double down = batch_total(probe);
    probe.set_weight(flat, w0);
    double fd = (up - down) / (2.0 * epsilon_fd);
    if (!std::isfinite(fd)) throw Error("non-finite gradient");
    double denom = std::max({std::fabs(analytic[flat]), std::fabs(fd), 1e-3});
    report.max_rel_err = std::max(report.max_rel_err, std::fabs(analytic[flat] - fd) / denom);
  }
  return report;
}

}  // namespace cfrank
