#include "hgn/model.hpp"

#include <cmath>

#include "hgn/error.hpp"

namespace hgn {

Pooling parse_pooling(std::string_view tag) {
  if (tag == "avg") return Pooling::Avg;
  if (tag == "max") return Pooling::Max;
  throw ContractError("unknown pooling '" + std::string(tag) + "' (expected avg or max)");
}

std::string_view to_string(Pooling pooling) { return pooling == Pooling::Avg ? "avg" : "max"; }

std::string Variant::tag() const {
  if (!uses_gating() && !item_item) return "BPR";
  const std::string pool(to_string(pooling));
  if (feature_gate && instance_gate && item_item) {
    return pooling == Pooling::Avg ? "HGN" : "HGN+max";
  }
  std::string tag = "BPR";
  if (feature_gate) tag += "+F";
  if (instance_gate) tag += "+I";
  if (uses_gating()) tag += "+" + pool;
  if (item_item) tag += "+II";
  return tag;
}

Variant Variant::parse(std::string_view tag) {
  for (const bool f : {false, true}) {
    for (const bool i : {false, true}) {
      for (const bool ii : {false, true}) {
        for (const auto pool : {Pooling::Avg, Pooling::Max}) {
          const Variant v{f, i, ii, pool};
          if (v.tag() == tag) return v;
        }
      }
    }
  }
  throw ContractError("unknown variant '" + std::string(tag) + "'");
}

std::vector<Variant> ablation_variants() {
  return {
      Variant::bpr(),
      {true, false, false, Pooling::Avg},
      {true, false, false, Pooling::Max},
      {false, true, false, Pooling::Avg},
      {false, true, false, Pooling::Max},
      {true, true, false, Pooling::Avg},
      {true, true, false, Pooling::Max},
      Variant::hgn(),
  };
}

ModelParams ModelParams::zeros(const ModelDims& dims) {
  if (dims.dim == 0 || dims.context_len == 0 || dims.num_users == 0 || dims.num_items == 0) {
    throw ContractError("model dimensions must be positive");
  }
  const auto d = static_cast<Eigen::Index>(dims.dim);
  const auto l = static_cast<Eigen::Index>(dims.context_len);
  ModelParams p;
  p.user_emb = Matrix::Zero(d, static_cast<Eigen::Index>(dims.num_users));
  p.item_in = Matrix::Zero(d, static_cast<Eigen::Index>(dims.num_items));
  p.item_out = Matrix::Zero(d, static_cast<Eigen::Index>(dims.num_items));
  p.gate_item = Matrix::Zero(d, d);
  p.gate_user = Matrix::Zero(d, d);
  p.gate_bias = Vector::Zero(d);
  p.inst_item = Vector::Zero(d);
  p.inst_user = Matrix::Zero(d, l);
  return p;
}

ModelParams ModelParams::random(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p = zeros(dims);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dims.dim)));
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  };
  fill(p.user_emb);
  fill(p.item_in);
  fill(p.item_out);
  fill(p.gate_item);
  fill(p.gate_user);
  fill(p.inst_item);
  fill(p.inst_user);
  return p;
}

ModelDims ModelParams::dims() const {
  return {static_cast<std::size_t>(user_emb.rows()), static_cast<std::size_t>(inst_user.cols()),
          static_cast<std::size_t>(user_emb.cols()), static_cast<std::size_t>(item_out.cols())};
}

void ModelParams::validate() const {
  const auto d = user_emb.rows();
  const bool ok = d > 0 && item_in.rows() == d && item_out.rows() == d &&
                  item_in.cols() == item_out.cols() && gate_item.rows() == d &&
                  gate_item.cols() == d && gate_user.rows() == d && gate_user.cols() == d &&
                  gate_bias.size() == d && inst_item.size() == d && inst_user.rows() == d &&
                  inst_user.cols() > 0;
  if (!ok) throw ContractError("model parameter shapes are inconsistent");
}

bool ModelParams::all_finite() const {
  return user_emb.allFinite() && item_in.allFinite() && item_out.allFinite() &&
         gate_item.allFinite() && gate_user.allFinite() && gate_bias.allFinite() &&
         inst_item.allFinite() && inst_user.allFinite();
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
  };
  return same(a.user_emb, b.user_emb) && same(a.item_in, b.item_in) &&
         same(a.item_out, b.item_out) && same(a.gate_item, b.gate_item) &&
         same(a.gate_user, b.gate_user) && same(a.gate_bias, b.gate_bias) &&
         same(a.inst_item, b.inst_item) && same(a.inst_user, b.inst_user);
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix embed_sequence(const Matrix& item_in, std::span<const ItemId> context) {
  Matrix seq(item_in.rows(), static_cast<Eigen::Index>(context.size()));
  for (std::size_t j = 0; j < context.size(); ++j) {
    const auto item = context[j];
    if (item < 0 || item >= item_in.cols()) {
      throw ContractError("item index " + std::to_string(item) + " out of range [0, " +
                          std::to_string(item_in.cols()) + ")");
    }
    seq.col(static_cast<Eigen::Index>(j)) = item_in.col(item);
  }
  return seq;
}

FeatureGateResult feature_gate(const Matrix& seq, const Vector& user, const Matrix& gate_item,
                               const Matrix& gate_user, const Vector& gate_bias) {
  const auto d = seq.rows();
  if (user.size() != d || gate_item.rows() != d || gate_item.cols() != d ||
      gate_user.rows() != d || gate_user.cols() != d || gate_bias.size() != d) {
    throw ContractError("feature gate: shape mismatch");
  }
  if (!seq.allFinite() || !user.allFinite()) throw NumericError("feature gate: non-finite input");

  const Vector shift = gate_user * user + gate_bias;
  FeatureGateResult out;
  out.gate = (gate_item * seq).colwise() + shift;
  out.gate = out.gate.unaryExpr([](double x) { return sigmoid(x); });
  out.gated = seq.cwiseProduct(out.gate);
  return out;
}

InstanceGateResult instance_gate(const Matrix& seq_feature, const Vector& user,
                                 const Vector& inst_item, const Matrix& inst_user) {
  const auto d = seq_feature.rows();
  if (user.size() != d || inst_item.size() != d || inst_user.rows() != d ||
      inst_user.cols() != seq_feature.cols()) {
    throw ContractError("instance gate: shape mismatch");
  }
  if (!seq_feature.allFinite() || !user.allFinite()) {
    throw NumericError("instance gate: non-finite input");
  }
  InstanceGateResult out;
  out.gate = seq_feature.transpose() * inst_item + inst_user.transpose() * user;
  out.gate = out.gate.unaryExpr([](double x) { return sigmoid(x); });
  out.gated = seq_feature * out.gate.asDiagonal();
  return out;
}

PoolResult aggregate(const Matrix& seq, Pooling pooling) {
  if (seq.cols() == 0) throw ContractError("aggregate: empty sequence");
  PoolResult out;
  if (pooling == Pooling::Avg) {
    out.pooled = seq.rowwise().mean();
    return out;
  }
  out.pooled.resize(seq.rows());
  out.argmax.resize(static_cast<std::size_t>(seq.rows()));
  for (Eigen::Index r = 0; r < seq.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < seq.cols(); ++c) {
      if (seq(r, c) > seq(r, best)) best = c;
    }
    out.pooled(r) = seq(r, best);
    out.argmax[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

Vector item_item_scores(const Vector& context_sum, const Matrix& item_out) {
  if (context_sum.size() != item_out.rows()) throw ContractError("item-item: shape mismatch");
  return item_out.transpose() * context_sum;
}

Vector predict_all(const Vector& user, const Vector& pooled, const Vector& context_sum,
                   const Matrix& item_out) {
  const auto d = item_out.rows();
  if (user.size() != d || pooled.size() != d || context_sum.size() != d) {
    throw ContractError("predict: shape mismatch");
  }
  return item_out.transpose() * (user + pooled + context_sum);
}

ForwardCache encode(const ModelParams& params, UserId user, std::span<const ItemId> context,
                    const Variant& variant) {
  if (user < 0 || user >= params.user_emb.cols()) {
    throw ContractError("user index " + std::to_string(user) + " out of range");
  }
  const auto d = params.user_emb.rows();
  const Vector u = params.user_emb.col(user);

  ForwardCache cache;
  cache.pooled = Vector::Zero(d);
  cache.context_sum = Vector::Zero(d);
  if (variant.uses_item_embeddings()) {
    if (static_cast<Eigen::Index>(context.size()) != params.inst_user.cols()) {
      throw ContractError("context has " + std::to_string(context.size()) + " items; model expects " +
                          std::to_string(params.inst_user.cols()));
    }
    cache.seq = embed_sequence(params.item_in, context);
  }
  if (variant.uses_gating()) {
    if (variant.feature_gate) {
      auto fg = feature_gate(cache.seq, u, params.gate_item, params.gate_user, params.gate_bias);
      cache.seq_feature = std::move(fg.gated);
      cache.feature_gate = std::move(fg.gate);
    } else {
      cache.seq_feature = cache.seq;
    }
    if (variant.instance_gate) {
      auto ig = instance_gate(cache.seq_feature, u, params.inst_item, params.inst_user);
      cache.seq_instance = std::move(ig.gated);
      cache.instance_gate = std::move(ig.gate);
    } else {
      cache.seq_instance = cache.seq_feature;
    }
    auto pool = aggregate(cache.seq_instance, variant.pooling);
    cache.pooled = std::move(pool.pooled);
    cache.pool_argmax = std::move(pool.argmax);
  }
  if (variant.item_item) cache.context_sum = cache.seq.rowwise().sum();
  cache.query = u + cache.pooled + cache.context_sum;
  return cache;
}

ForwardResult forward(const ModelParams& params, UserId user, std::span<const ItemId> context,
                      const Variant& variant) {
  ForwardResult out;
  out.cache = encode(params, user, context, variant);
  out.scores = predict_all(params.user_emb.col(user), out.cache.pooled, out.cache.context_sum,
                           params.item_out);
  return out;
}

ParameterCount parameter_count(std::size_t dim, std::size_t context_len, std::size_t num_users,
                               std::size_t num_items, const Variant& variant) {
  if (dim == 0 || context_len == 0) throw ContractError("dimensions must be positive");
  ParameterCount c;
  if (variant.feature_gate) {
    c.gate_item = dim * dim;
    c.gate_user = dim * dim;
    c.gate_bias = dim;
  }
  if (variant.instance_gate) {
    c.inst_item = dim;
    c.inst_user = dim * context_len;
  }
  c.user_emb = dim * num_users;
  c.item_in = variant.uses_item_embeddings() ? dim * num_items : 0;
  c.item_out = dim * num_items;
  return c;
}

}  // namespace hgn
