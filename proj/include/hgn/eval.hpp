#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hgn/data.hpp"
#include "hgn/model.hpp"

namespace hgn {

struct EvalContext {
  Sequence context;              // last |L| items of the input sequence
  std::vector<ItemId> exclusion;  // sorted, unique input items
};

enum class HeldOut {
  Test,        // input = train + validation, held out = test
  Validation,  // input = train, held out = validation
};

/// nullopt when the user's input is shorter than `context_len`.
std::optional<EvalContext> build_eval_context(UserId user, const SplitLog& split,
                                              std::size_t context_len,
                                              HeldOut target = HeldOut::Test);

/// Top-`k` items by descending score, ties by ascending index, skipping
/// `exclusion` (sorted). Throws ContractError when fewer than `k` candidates remain.
std::vector<ItemId> rank_items(std::span<const double> scores, std::span<const ItemId> exclusion,
                               std::size_t k);

double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> heldout, std::size_t k);

/// Binary-relevance NDCG with log2(pos + 1) discount and ideal DCG over
/// min(k, |heldout|) hits.
double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> heldout, std::size_t k);

struct MetricReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // parallel to ks
  std::vector<double> ndcg;
  std::size_t users_evaluated = 0;
  std::size_t users_skipped_short = 0;  // input shorter than |L|
  std::size_t users_skipped_empty = 0;  // no held-out item outside the input

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
  std::string to_table() const;
};

std::vector<std::size_t> default_ks();

struct EvalConfig {
  std::size_t context_len = 5;
  Variant variant = Variant::hgn();
  std::vector<std::size_t> ks = default_ks();
  HeldOut target = HeldOut::Test;
  std::size_t workers = 1;
};

/// Produces an N-vector of scores for (user, context).
using Scorer = std::function<Vector(UserId, std::span<const ItemId>)>;

MetricReport evaluate_scorer(const SplitLog& split, const EvalConfig& config, const Scorer& scorer);

MetricReport evaluate(const ModelParams& params, const SplitLog& split, const EvalConfig& config);

}  // namespace hgn
