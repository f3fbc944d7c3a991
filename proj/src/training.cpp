#include "hgn/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <thread>

#include "hgn/error.hpp"

namespace hgn {

namespace {

constexpr std::size_t kChunkSize = 256;
constexpr std::uint64_t kInitStream = 0x1000;
constexpr std::uint64_t kShuffleStream = 0x2000;
constexpr std::uint64_t kNegativeStream = 0x3000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename Fn>
void for_each_chunk(std::size_t num_chunks, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, num_chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = next++; c < num_chunks; c = next++) fn(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_item(ItemId item, Eigen::Index num_items) {
  if (item < 0 || item >= num_items) {
    throw ContractError("item index " + std::to_string(item) + " out of range");
  }
}

std::vector<ItemId> unique_items(std::span<const ItemId> a, std::span<const ItemId> b = {}) {
  std::vector<ItemId> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// lambda * ||theta||^2 over the gating weights the variant uses.
double gating_penalty(const ModelParams& p, const Variant& v, double lambda) {
  double sq = 0.0;
  if (v.feature_gate) {
    sq += p.gate_item.squaredNorm() + p.gate_user.squaredNorm() + p.gate_bias.squaredNorm();
  }
  if (v.instance_gate) sq += p.inst_item.squaredNorm() + p.inst_user.squaredNorm();
  return lambda * sq;
}

void add_gating_penalty_grad(const ModelParams& p, const Variant& v, double lambda, double weight,
                             GradientSet& g) {
  const double c = 2.0 * lambda * weight;
  if (v.feature_gate) {
    g.gate_item += c * p.gate_item;
    g.gate_user += c * p.gate_user;
    g.gate_bias += c * p.gate_bias;
  }
  if (v.instance_gate) {
    g.inst_item += c * p.inst_item;
    g.inst_user += c * p.inst_user;
  }
}

}  // namespace

Eigen::Map<Vector> SparseColumns::col(std::int32_t key) {
  auto [it, inserted] = slot_.try_emplace(key, keys_.size());
  if (inserted) {
    keys_.push_back(key);
    values_.resize(values_.size() + static_cast<std::size_t>(rows_), 0.0);
  }
  return Eigen::Map<Vector>(values_.data() + it->second * static_cast<std::size_t>(rows_), rows_);
}

const double* SparseColumns::find(std::int32_t key) const {
  auto it = slot_.find(key);
  if (it == slot_.end()) return nullptr;
  return values_.data() + it->second * static_cast<std::size_t>(rows_);
}

Eigen::Map<const Vector> SparseColumns::col_at(std::size_t slot) const {
  return Eigen::Map<const Vector>(values_.data() + slot * static_cast<std::size_t>(rows_), rows_);
}

void SparseColumns::add(const SparseColumns& other, double scale) {
  for (std::size_t s = 0; s < other.keys_.size(); ++s) col(other.keys_[s]) += scale * other.col_at(s);
}

void SparseColumns::scale(double factor) {
  for (auto& v : values_) v *= factor;
}

void SparseColumns::clear() {
  keys_.clear();
  values_.clear();
  slot_.clear();
}

Matrix SparseColumns::to_dense(Eigen::Index cols) const {
  Matrix out = Matrix::Zero(rows_, cols);
  for (std::size_t s = 0; s < keys_.size(); ++s) out.col(keys_[s]) = col_at(s);
  return out;
}

GradientSet GradientSet::zeros_like(const ModelParams& p) {
  GradientSet g;
  const auto d = p.user_emb.rows();
  g.user_emb = SparseColumns(d);
  g.item_in = SparseColumns(d);
  g.item_out = SparseColumns(d);
  g.gate_item = Matrix::Zero(p.gate_item.rows(), p.gate_item.cols());
  g.gate_user = Matrix::Zero(p.gate_user.rows(), p.gate_user.cols());
  g.gate_bias = Vector::Zero(p.gate_bias.size());
  g.inst_item = Vector::Zero(p.inst_item.size());
  g.inst_user = Matrix::Zero(p.inst_user.rows(), p.inst_user.cols());
  return g;
}

void GradientSet::add(const GradientSet& o, double s) {
  user_emb.add(o.user_emb, s);
  item_in.add(o.item_in, s);
  item_out.add(o.item_out, s);
  gate_item += s * o.gate_item;
  gate_user += s * o.gate_user;
  gate_bias += s * o.gate_bias;
  inst_item += s * o.inst_item;
  inst_user += s * o.inst_user;
}

void GradientSet::scale(double f) {
  user_emb.scale(f);
  item_in.scale(f);
  item_out.scale(f);
  gate_item *= f;
  gate_user *= f;
  gate_bias *= f;
  inst_item *= f;
  inst_user *= f;
}

double bpr_pair_loss(double score_pos, double score_neg) noexcept {
  const double delta = score_pos - score_neg;
  // log(1 + exp(-delta)) = max(-delta, 0) + log1p(exp(-|delta|))
  return std::max(-delta, 0.0) + std::log1p(std::exp(-std::abs(delta)));
}

double accumulate_instance(const ModelParams& params, const TrainingInstance& instance,
                           std::span<const ItemId> negatives, double lambda,
                           const Variant& variant, bool regularize_gating, double weight,
                           GradientSet& grad) {
  if (negatives.size() != instance.targets.size() || instance.targets.empty()) {
    throw ContractError("need exactly one negative per target (got " +
                        std::to_string(negatives.size()) + " for " +
                        std::to_string(instance.targets.size()) + " targets)");
  }
  const ForwardCache cache = encode(params, instance.user, instance.context, variant);
  const auto& Q = params.item_out;
  const Vector& query = cache.query;
  const auto d = query.size();

  // Prediction layer: score_j = query . q_j, loss = softplus(-(s_pos - s_neg)).
  double loss = 0.0;
  Vector d_query = Vector::Zero(d);
  for (std::size_t t = 0; t < negatives.size(); ++t) {
    const ItemId pos = instance.targets[t];
    const ItemId neg = negatives[t];
    check_item(pos, Q.cols());
    check_item(neg, Q.cols());
    const double delta = query.dot(Q.col(pos)) - query.dot(Q.col(neg));
    loss += bpr_pair_loss(delta, 0.0);
    const double g = -sigmoid(-delta);
    grad.item_out.col(pos) += (weight * g) * query;
    grad.item_out.col(neg) -= (weight * g) * query;
    d_query += g * (Q.col(pos) - Q.col(neg));
  }

  const Vector u = params.user_emb.col(instance.user);
  Vector d_user = d_query;
  const auto len = static_cast<Eigen::Index>(instance.context.size());
  Matrix d_seq;
  if (variant.uses_item_embeddings()) d_seq = Matrix::Zero(d, len);
  if (variant.item_item) d_seq.colwise() += d_query;

  if (variant.uses_gating()) {
    Matrix d_inst = Matrix::Zero(d, len);
    if (variant.pooling == Pooling::Avg) {
      d_inst.colwise() += d_query / static_cast<double>(len);
    } else {
      for (Eigen::Index r = 0; r < d; ++r) {
        d_inst(r, cache.pool_argmax[static_cast<std::size_t>(r)]) = d_query(r);
      }
    }

    Matrix d_feat;
    if (variant.instance_gate) {
      // S^I = S^F diag(gamma), gamma = sigmoid(S^F' w3 + W4' u)
      const Vector& gamma = cache.instance_gate;
      const Matrix& feat = cache.seq_feature;
      Vector d_pre(len);
      for (Eigen::Index l = 0; l < len; ++l) {
        d_pre(l) = d_inst.col(l).dot(feat.col(l)) * gamma(l) * (1.0 - gamma(l));
      }
      d_feat = d_inst * gamma.asDiagonal();
      d_feat.noalias() += params.inst_item * d_pre.transpose();
      grad.inst_item.noalias() += weight * (feat * d_pre);
      grad.inst_user.noalias() += weight * (u * d_pre.transpose());
      d_user.noalias() += params.inst_user * d_pre;
    } else {
      d_feat = std::move(d_inst);
    }

    if (variant.feature_gate) {
      // S^F = S .* G, G = sigmoid(W1 S + (W2 u + b) 1')
      const Matrix& gate = cache.feature_gate;
      const Matrix& seq = cache.seq;
      const Matrix d_pre =
          d_feat.cwiseProduct(seq).cwiseProduct(gate).cwiseProduct((1.0 - gate.array()).matrix());
      d_seq += d_feat.cwiseProduct(gate);
      d_seq.noalias() += params.gate_item.transpose() * d_pre;
      const Vector d_shift = d_pre.rowwise().sum();
      grad.gate_item.noalias() += weight * (d_pre * seq.transpose());
      grad.gate_user.noalias() += weight * (d_shift * u.transpose());
      grad.gate_bias += weight * d_shift;
      d_user.noalias() += params.gate_user.transpose() * d_shift;
    } else {
      d_seq += d_feat;
    }
  }

  grad.user_emb.col(instance.user) += weight * d_user;
  if (variant.uses_item_embeddings()) {
    for (Eigen::Index l = 0; l < len; ++l) {
      grad.item_in.col(instance.context[static_cast<std::size_t>(l)]) += weight * d_seq.col(l);
    }
  }

  // L2 on the touched columns (each counted once) and optionally the gating weights.
  const double c = 2.0 * lambda * weight;
  double penalty = u.squaredNorm();
  grad.user_emb.col(instance.user) += c * u;
  if (variant.uses_item_embeddings()) {
    for (const ItemId item : unique_items(instance.context)) {
      penalty += params.item_in.col(item).squaredNorm();
      grad.item_in.col(item) += c * params.item_in.col(item);
    }
  }
  for (const ItemId item : unique_items(instance.targets, negatives)) {
    penalty += Q.col(item).squaredNorm();
    grad.item_out.col(item) += c * Q.col(item);
  }
  loss += lambda * penalty;
  if (regularize_gating) {
    loss += gating_penalty(params, variant, lambda);
    add_gating_penalty_grad(params, variant, lambda, weight, grad);
  }
  return loss;
}

LossAndGradient instance_loss(const ModelParams& params, const TrainingInstance& instance,
                              std::span<const ItemId> negatives, double lambda,
                              const Variant& variant) {
  LossAndGradient out{0.0, GradientSet::zeros_like(params)};
  out.loss = accumulate_instance(params, instance, negatives, lambda, variant, true, 1.0, out.grad);
  return out;
}

double instance_objective(const ModelParams& params, const TrainingInstance& instance,
                          std::span<const ItemId> negatives, double lambda, const Variant& variant) {
  if (negatives.size() != instance.targets.size() || instance.targets.empty()) {
    throw ContractError("need exactly one negative per target");
  }
  const ForwardCache cache = encode(params, instance.user, instance.context, variant);
  const auto& Q = params.item_out;
  double loss = 0.0;
  for (std::size_t t = 0; t < negatives.size(); ++t) {
    check_item(instance.targets[t], Q.cols());
    check_item(negatives[t], Q.cols());
    loss += bpr_pair_loss(cache.query.dot(Q.col(instance.targets[t])),
                          cache.query.dot(Q.col(negatives[t])));
  }
  double penalty = params.user_emb.col(instance.user).squaredNorm();
  if (variant.uses_item_embeddings()) {
    for (const ItemId item : unique_items(instance.context)) {
      penalty += params.item_in.col(item).squaredNorm();
    }
  }
  for (const ItemId item : unique_items(instance.targets, negatives)) {
    penalty += Q.col(item).squaredNorm();
  }
  return loss + lambda * penalty + gating_penalty(params, variant, lambda);
}

AdamState::AdamState(const ModelParams& p, AdamConfig config) : config_(config) {
  auto zero = [](const auto& m) {
    return Moments{Matrix::Zero(m.rows(), m.cols()), Matrix::Zero(m.rows(), m.cols())};
  };
  user_emb_ = zero(p.user_emb);
  item_in_ = zero(p.item_in);
  item_out_ = zero(p.item_out);
  gate_item_ = zero(p.gate_item);
  gate_user_ = zero(p.gate_user);
  gate_bias_ = zero(p.gate_bias);
  inst_item_ = zero(p.inst_item);
  inst_user_ = zero(p.inst_user);
}

const AdamState::Moments& AdamState::moments(std::string_view tensor) const {
  if (tensor == "U") return user_emb_;
  if (tensor == "E") return item_in_;
  if (tensor == "Q") return item_out_;
  if (tensor == "W_g1") return gate_item_;
  if (tensor == "W_g2") return gate_user_;
  if (tensor == "b_g") return gate_bias_;
  if (tensor == "w_g3") return inst_item_;
  if (tensor == "W_g4") return inst_user_;
  throw ContractError("unknown tensor '" + std::string(tensor) + "'");
}

void AdamState::apply(ModelParams& params, const GradientSet& grad, double lr) {
  if (user_emb_.first.rows() != params.user_emb.rows() ||
      user_emb_.first.cols() != params.user_emb.cols() ||
      item_out_.first.cols() != params.item_out.cols() ||
      inst_user_.first.cols() != params.inst_user.cols()) {
    throw ContractError("Adam state does not match parameter shapes");
  }
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double eps = config_.epsilon;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));

  auto update = [&](auto&& param, auto&& m, auto&& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  auto update_sparse = [&](Matrix& param, Moments& mom, const SparseColumns& g) {
    for (std::size_t s = 0; s < g.size(); ++s) {
      const auto key = g.keys()[s];
      update(param.col(key), mom.first.col(key), mom.second.col(key), g.col_at(s));
    }
  };
  update_sparse(params.user_emb, user_emb_, grad.user_emb);
  update_sparse(params.item_in, item_in_, grad.item_in);
  update_sparse(params.item_out, item_out_, grad.item_out);
  update(params.gate_item, gate_item_.first, gate_item_.second, grad.gate_item);
  update(params.gate_user, gate_user_.first, gate_user_.second, grad.gate_user);
  update(params.gate_bias, gate_bias_.first.col(0), gate_bias_.second.col(0), grad.gate_bias);
  update(params.inst_item, inst_item_.first.col(0), inst_item_.second.col(0), grad.inst_item);
  update(params.inst_user, inst_user_.first, inst_user_.second, grad.inst_user);
}

void adam_apply(ModelParams& params, const GradientSet& grad, AdamState& state, double lr) {
  state.apply(params, grad, lr);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ContractError(what); };
  if (dim == 0) fail("d must be positive");
  if (context_len == 0) fail("L must be positive");
  if (horizon == 0) fail("T must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be non-negative");
  if (batch == 0) fail("batch must be positive");
  if (workers == 0) fail("workers must be positive");
}

std::string EpochStats::log_line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.9g wall_s=%.6f inst_per_s=%.1f sample_s=%.6f",
                epoch, mean_loss, wall_seconds, instances_per_second, sampling_seconds);
  return buf;
}

BatchNegatives sample_batch_negatives(std::span<const TrainingInstance* const> batch,
                                      const NegativeSampler& sampler, Rng& rng) {
  BatchNegatives out;
  out.offsets.reserve(batch.size() + 1);
  out.offsets.push_back(0);
  for (const auto* inst : batch) {
    for (std::size_t t = 0; t < inst->targets.size(); ++t) {
      out.items.push_back(sampler.sample(inst->user, rng));
    }
    out.offsets.push_back(out.items.size());
  }
  return out;
}

namespace {

std::span<const ItemId> negatives_for(const BatchNegatives& negs, std::size_t b) {
  return std::span<const ItemId>(negs.items).subspan(negs.offsets[b],
                                                     negs.offsets[b + 1] - negs.offsets[b]);
}

template <typename PerChunk>
void run_chunks(std::size_t batch_size, std::size_t workers, PerChunk&& per_chunk) {
  const std::size_t chunks = (batch_size + kChunkSize - 1) / kChunkSize;
  for_each_chunk(chunks, workers, [&](std::size_t c) {
    per_chunk(c, c * kChunkSize, std::min(batch_size, (c + 1) * kChunkSize));
  });
}

}  // namespace

LossAndGradient batch_gradient(const ModelParams& params,
                               std::span<const TrainingInstance* const> batch,
                               const BatchNegatives& negatives, const TrainConfig& config) {
  if (batch.empty()) throw ContractError("empty batch");
  if (negatives.offsets.size() != batch.size() + 1) {
    throw ContractError("negatives do not match batch");
  }
  const double weight = 1.0 / static_cast<double>(batch.size());
  const std::size_t chunks = (batch.size() + kChunkSize - 1) / kChunkSize;
  std::vector<std::optional<GradientSet>> chunk_grads(chunks);
  std::vector<double> chunk_loss(chunks, 0.0);
  run_chunks(batch.size(), config.workers, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    GradientSet g = GradientSet::zeros_like(params);
    double loss = 0.0;
    for (std::size_t b = lo; b < hi; ++b) {
      loss += accumulate_instance(params, *batch[b], negatives_for(negatives, b), config.lambda,
                                  config.variant, false, weight, g);
    }
    chunk_grads[c] = std::move(g);
    chunk_loss[c] = loss;
  });

  LossAndGradient out{0.0, std::move(*chunk_grads[0])};
  double total = chunk_loss[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    out.grad.add(*chunk_grads[c]);
    total += chunk_loss[c];
  }
  out.loss = total * weight + gating_penalty(params, config.variant, config.lambda);
  add_gating_penalty_grad(params, config.variant, config.lambda, 1.0, out.grad);
  return out;
}

double batch_loss(const ModelParams& params, std::span<const TrainingInstance* const> batch,
                  const BatchNegatives& negatives, const TrainConfig& config) {
  if (batch.empty()) throw ContractError("empty batch");
  const std::size_t chunks = (batch.size() + kChunkSize - 1) / kChunkSize;
  std::vector<double> chunk_loss(chunks, 0.0);
  const double theta = gating_penalty(params, config.variant, config.lambda);
  run_chunks(batch.size(), config.workers, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    double loss = 0.0;
    for (std::size_t b = lo; b < hi; ++b) {
      loss += instance_objective(params, *batch[b], negatives_for(negatives, b), config.lambda,
                                 config.variant) -
              theta;
    }
    chunk_loss[c] = loss;
  });
  double total = 0.0;
  for (const double l : chunk_loss) total += l;
  return total / static_cast<double>(batch.size()) + theta;
}

EpochStats train_epoch(ModelParams& params, std::span<const TrainingInstance> instances,
                       const NegativeSampler& sampler, const TrainConfig& config,
                       AdamState& state, std::size_t epoch) {
  if (instances.empty()) throw ContractError("no training instances");
  config.validate();

  EpochStats stats;
  stats.epoch = epoch;
  stats.instances = instances.size();

  auto start = Clock::now();
  std::vector<const TrainingInstance*> order(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) order[i] = &instances[i];
  Rng shuffle_rng(derive_seed(config.seed, kShuffleStream + epoch));
  shuffle(std::span(order), shuffle_rng);
  stats.wall_seconds += seconds_since(start);

  Rng negative_rng(derive_seed(config.seed, kNegativeStream + epoch));
  double loss_sum = 0.0;
  for (std::size_t lo = 0; lo < order.size(); lo += config.batch) {
    const auto batch = std::span<const TrainingInstance* const>(order).subspan(
        lo, std::min(config.batch, order.size() - lo));

    start = Clock::now();
    const BatchNegatives negs = sample_batch_negatives(batch, sampler, negative_rng);
    stats.sampling_seconds += seconds_since(start);

    start = Clock::now();
    auto [loss, grad] = batch_gradient(params, batch, negs, config);
    state.apply(params, grad, config.lr);
    stats.wall_seconds += seconds_since(start);
    loss_sum += loss * static_cast<double>(batch.size());
  }
  stats.mean_loss = loss_sum / static_cast<double>(instances.size());
  stats.instances_per_second =
      stats.wall_seconds > 0.0 ? static_cast<double>(instances.size()) / stats.wall_seconds : 0.0;
  return stats;
}

TrainResult train(const SplitLog& split, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto instances = generate_instances(split.train, config.context_len, config.horizon);
  if (instances.empty()) throw ContractError("training split yields no instances for this L");
  const NegativeSampler sampler(split.train, split.num_items);
  const ModelDims dims{config.dim, config.context_len, split.num_users, split.num_items};

  TrainResult result{ModelParams::random(dims, derive_seed(config.seed, kInitStream)), {}};
  AdamState state(result.params);
  for (std::size_t e = 1; e <= config.epochs; ++e) {
    result.epochs.push_back(train_epoch(result.params, instances, sampler, config, state, e));
    if (on_epoch) on_epoch(result.epochs.back(), result.params);
  }
  return result;
}

}  // namespace hgn
