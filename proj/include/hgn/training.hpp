#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hgn/data.hpp"
#include "hgn/model.hpp"

namespace hgn {

/// Gradient rows for an embedding table, keyed by column index.
/// Keys keep insertion order so reductions are deterministic.
class SparseColumns {
 public:
  SparseColumns() = default;
  explicit SparseColumns(Eigen::Index rows) : rows_(rows) {}

  Eigen::Map<Vector> col(std::int32_t key);  // zero-initialised on first touch
  const double* find(std::int32_t key) const;
  std::span<const std::int32_t> keys() const noexcept { return keys_; }
  Eigen::Map<const Vector> col_at(std::size_t slot) const;
  Eigen::Index rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return keys_.size(); }

  void add(const SparseColumns& other, double scale = 1.0);
  void scale(double factor);
  void clear();
  /// Dense d x cols copy; untouched columns are zero.
  Matrix to_dense(Eigen::Index cols) const;

 private:
  Eigen::Index rows_ = 0;
  std::vector<std::int32_t> keys_;
  std::vector<double> values_;
  std::unordered_map<std::int32_t, std::size_t> slot_;
};

struct GradientSet {
  SparseColumns user_emb;
  SparseColumns item_in;
  SparseColumns item_out;
  Matrix gate_item;
  Matrix gate_user;
  Vector gate_bias;
  Vector inst_item;
  Matrix inst_user;

  static GradientSet zeros_like(const ModelParams& params);
  void add(const GradientSet& other, double scale = 1.0);
  void scale(double factor);
};

/// -log sigmoid(pos - neg), evaluated as log(1 + exp(-(pos - neg))) without overflow.
double bpr_pair_loss(double score_pos, double score_neg) noexcept;

struct LossAndGradient {
  double loss = 0.0;
  GradientSet grad;
};

/// Adds d(loss)/d(params) * weight into `grad` and returns the instance loss.
/// The loss is the sum of pair losses over targets plus lambda times the
/// squared norms of the touched embedding columns; the gating weights are
/// regularised only when `regularize_gating` is set.
double accumulate_instance(const ModelParams& params, const TrainingInstance& instance,
                           std::span<const ItemId> negatives, double lambda,
                           const Variant& variant, bool regularize_gating, double weight,
                           GradientSet& grad);

/// Loss and exact gradient for one instance, gating weights regularised.
LossAndGradient instance_loss(const ModelParams& params, const TrainingInstance& instance,
                              std::span<const ItemId> negatives, double lambda,
                              const Variant& variant);

/// Objective value only (no gradient); used by finite differences.
double instance_objective(const ModelParams& params, const TrainingInstance& instance,
                          std::span<const ItemId> negatives, double lambda, const Variant& variant);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const ModelParams& params, AdamConfig config = {});

  std::int64_t step() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }

  /// One bias-corrected Adam step. Embedding columns absent from `grad`
  /// keep both their values and their moments (lazy sparse update).
  void apply(ModelParams& params, const GradientSet& grad, double lr);

  struct Moments {
    Matrix first;
    Matrix second;
  };
  const Moments& moments(std::string_view tensor) const;

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  Moments user_emb_, item_in_, item_out_, gate_item_, gate_user_, gate_bias_, inst_item_,
      inst_user_;
};

void adam_apply(ModelParams& params, const GradientSet& grad, AdamState& state, double lr);

struct TrainConfig {
  std::size_t dim = 50;
  std::size_t context_len = 5;
  std::size_t horizon = 3;
  double lr = 1e-3;
  double lambda = 1e-3;
  std::size_t batch = 4096;
  std::size_t epochs = 30;
  Variant variant = Variant::hgn();
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  /// Throws ContractError on non-positive settings.
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t instances = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;      // forward, backward and updates only
  double sampling_seconds = 0.0;  // negative sampling, reported separately
  double instances_per_second = 0.0;

  /// `epoch=3 loss=0.412345 wall_s=1.234 inst_per_s=52000.0 sample_s=0.012`
  std::string log_line() const;
};

/// Negatives for one batch, `offsets[b]..offsets[b+1]` belonging to instance b.
struct BatchNegatives {
  std::vector<ItemId> items;
  std::vector<std::size_t> offsets;
};

BatchNegatives sample_batch_negatives(std::span<const TrainingInstance* const> batch,
                                      const NegativeSampler& sampler, Rng& rng);

/// Mean instance loss and mean gradient of a batch. Work is split into fixed
/// chunks reduced in chunk order, so the result does not depend on `workers`.
LossAndGradient batch_gradient(const ModelParams& params,
                               std::span<const TrainingInstance* const> batch,
                               const BatchNegatives& negatives, const TrainConfig& config);

/// One pass over `instances`: shuffle with the epoch stream, batch, sample one
/// negative per target, step Adam once per batch.
EpochStats train_epoch(ModelParams& params, std::span<const TrainingInstance> instances,
                       const NegativeSampler& sampler, const TrainConfig& config,
                       AdamState& state, std::size_t epoch);

/// Mean instance loss of a batch at fixed parameters, no gradient.
double batch_loss(const ModelParams& params, std::span<const TrainingInstance* const> batch,
                  const BatchNegatives& negatives, const TrainConfig& config);

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> epochs;
};

using EpochCallback = std::function<void(const EpochStats&, const ModelParams&)>;

/// Initialises from `config.seed` and runs `config.epochs` epochs.
TrainResult train(const SplitLog& split, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});


}  // namespace hgn
