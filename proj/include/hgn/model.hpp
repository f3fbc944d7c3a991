#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hgn/data.hpp"

namespace hgn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Pooling { Avg, Max };

Pooling parse_pooling(std::string_view tag);
std::string_view to_string(Pooling pooling);

/// Which parts of the network are active. The named tags cover the ablation
/// lattice: BPR, BPR+F+avg, BPR+F+max, BPR+I+avg, BPR+I+max, BPR+F+I+avg,
/// BPR+F+I+max, HGN (and HGN+max).
struct Variant {
  bool feature_gate = true;
  bool instance_gate = true;
  bool item_item = true;
  Pooling pooling = Pooling::Avg;

  bool uses_gating() const noexcept { return feature_gate || instance_gate; }
  bool uses_item_embeddings() const noexcept { return uses_gating() || item_item; }
  std::string tag() const;
  static Variant parse(std::string_view tag);
  static Variant hgn() { return {}; }
  static Variant bpr() { return {false, false, false, Pooling::Avg}; }

  friend bool operator==(const Variant&, const Variant&) = default;
};

/// The eight ablation rows trained by `ablate`, in table order.
std::vector<Variant> ablation_variants();

struct ModelDims {
  std::size_t dim = 50;
  std::size_t context_len = 5;
  std::size_t num_users = 0;
  std::size_t num_items = 0;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Embeddings are stored one column per user / item.
struct ModelParams {
  Matrix user_emb;     // d x M
  Matrix item_in;      // d x N, context side (E)
  Matrix item_out;     // d x N, candidate side (Q)
  Matrix gate_item;    // d x d, feature gate weight on item features
  Matrix gate_user;    // d x d, feature gate weight on the user
  Vector gate_bias;    // d
  Vector inst_item;    // d, instance gate weight on gated features
  Matrix inst_user;    // d x |L|, instance gate weight on the user

  static ModelParams zeros(const ModelDims& dims);
  /// N(0, 1/d) entries for every weight, zero bias.
  static ModelParams random(const ModelDims& dims, std::uint64_t seed);

  ModelDims dims() const;
  /// Throws ContractError when tensor shapes disagree.
  void validate() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

struct ForwardCache {
  Matrix seq;              // S
  Matrix feature_gate;     // sigmoid outputs, d x |L|
  Matrix seq_feature;      // S^F
  Vector instance_gate;    // sigmoid outputs, |L|
  Matrix seq_instance;     // S^I
  Vector pooled;
  std::vector<Eigen::Index> pool_argmax;  // max pooling only
  Vector context_sum;      // sum of raw context embeddings
  Vector query;            // u + pooled + context_sum; score_j = query . q_j
};

struct FeatureGateResult {
  Matrix gated;
  Matrix gate;
};

struct InstanceGateResult {
  Matrix gated;
  Vector gate;
};

struct PoolResult {
  Vector pooled;
  std::vector<Eigen::Index> argmax;  // filled for max pooling
};

double sigmoid(double x) noexcept;

Matrix embed_sequence(const Matrix& item_in, std::span<const ItemId> context);

FeatureGateResult feature_gate(const Matrix& seq, const Vector& user, const Matrix& gate_item,
                               const Matrix& gate_user, const Vector& gate_bias);

InstanceGateResult instance_gate(const Matrix& seq_feature, const Vector& user,
                                 const Vector& inst_item, const Matrix& inst_user);

/// Row-wise mean or max; max ties go to the first column.
PoolResult aggregate(const Matrix& seq, Pooling pooling);

Vector item_item_scores(const Vector& context_sum, const Matrix& item_out);

Vector predict_all(const Vector& user, const Vector& pooled, const Vector& context_sum,
                   const Matrix& item_out);

/// Runs the network up to the query vector without scoring any item.
ForwardCache encode(const ModelParams& params, UserId user, std::span<const ItemId> context,
                    const Variant& variant);

struct ForwardResult {
  Vector scores;
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& params, UserId user, std::span<const ItemId> context,
                      const Variant& variant);

struct ParameterCount {
  std::size_t gate_item = 0;
  std::size_t gate_user = 0;
  std::size_t gate_bias = 0;
  std::size_t inst_item = 0;
  std::size_t inst_user = 0;
  std::size_t user_emb = 0;
  std::size_t item_in = 0;
  std::size_t item_out = 0;

  std::size_t gating() const noexcept {
    return gate_item + gate_user + gate_bias + inst_item + inst_user;
  }
  std::size_t embeddings() const noexcept { return user_emb + item_in + item_out; }
  std::size_t total() const noexcept { return gating() + embeddings(); }
};

ParameterCount parameter_count(std::size_t dim, std::size_t context_len, std::size_t num_users,
                               std::size_t num_items, const Variant& variant = Variant::hgn());

}  // namespace hgn
