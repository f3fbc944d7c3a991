#include "hgn/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "hgn/error.hpp"

namespace hgn {

namespace {

std::vector<ItemId> sorted_unique(std::vector<ItemId> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

bool contains(std::span<const ItemId> sorted, ItemId item) {
  return std::binary_search(sorted.begin(), sorted.end(), item);
}

void check_metric_args(std::span<const ItemId> ranked, std::span<const ItemId> heldout,
                       std::size_t k) {
  if (heldout.empty()) throw ContractError("held-out set is empty");
  if (k == 0 || k > ranked.size()) {
    throw ContractError("k=" + std::to_string(k) + " but only " + std::to_string(ranked.size()) +
                        " items are ranked");
  }
}

}  // namespace

std::optional<EvalContext> build_eval_context(UserId user, const SplitLog& split,
                                              std::size_t context_len, HeldOut target) {
  const auto u = static_cast<std::size_t>(user);
  if (u >= split.num_users) throw ContractError("user index out of range");
  Sequence input = split.train[u];
  if (target == HeldOut::Test) {
    input.insert(input.end(), split.validation[u].begin(), split.validation[u].end());
  }
  if (input.size() < context_len) return std::nullopt;
  EvalContext ctx;
  ctx.context.assign(input.end() - static_cast<std::ptrdiff_t>(context_len), input.end());
  ctx.exclusion = sorted_unique(std::move(input));
  return ctx;
}

std::vector<ItemId> rank_items(std::span<const double> scores, std::span<const ItemId> exclusion,
                               std::size_t k) {
  std::vector<ItemId> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!contains(exclusion, static_cast<ItemId>(i))) candidates.push_back(static_cast<ItemId>(i));
  }
  if (k > candidates.size()) {
    throw ContractError("requested top-" + std::to_string(k) + " but only " +
                        std::to_string(candidates.size()) + " candidates remain");
  }
  const auto better = [&](ItemId a, ItemId b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), better);
  candidates.resize(k);
  return candidates;
}

double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> heldout, std::size_t k) {
  check_metric_args(ranked, heldout, k);
  const auto held = sorted_unique({heldout.begin(), heldout.end()});
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += contains(held, ranked[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(held.size());
}

double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> heldout, std::size_t k) {
  check_metric_args(ranked, heldout, k);
  const auto held = sorted_unique({heldout.begin(), heldout.end()});
  double dcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (contains(held, ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, held.size()); ++i) {
    idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / idcg;
}

std::vector<std::size_t> default_ks() { return {5, 10, 15, 20}; }

double MetricReport::recall_at(std::size_t k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ContractError("k=" + std::to_string(k) + " not in report");
  return recall[static_cast<std::size_t>(it - ks.begin())];
}

double MetricReport::ndcg_at(std::size_t k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ContractError("k=" + std::to_string(k) + " not in report");
  return ndcg[static_cast<std::size_t>(it - ks.begin())];
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "hgn.metrics/1";
  j["users_evaluated"] = users_evaluated;
  j["users_skipped_short"] = users_skipped_short;
  j["users_skipped_empty"] = users_skipped_empty;
  j["ks"] = ks;
  nlohmann::ordered_json r, n;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    r[std::to_string(ks[i])] = recall[i];
    n[std::to_string(ks[i])] = ndcg[i];
  }
  j["recall"] = r;
  j["ndcg"] = n;
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("schema", "") != "hgn.metrics/1") throw ReportError("not an hgn.metrics/1 document");
  MetricReport m;
  m.users_evaluated = j.at("users_evaluated").get<std::size_t>();
  m.users_skipped_short = j.at("users_skipped_short").get<std::size_t>();
  m.users_skipped_empty = j.at("users_skipped_empty").get<std::size_t>();
  m.ks = j.at("ks").get<std::vector<std::size_t>>();
  for (const auto k : m.ks) {
    m.recall.push_back(j.at("recall").at(std::to_string(k)).get<double>());
    m.ndcg.push_back(j.at("ndcg").at(std::to_string(k)).get<double>());
  }
  return m;
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(6) << "k" << std::right << std::setw(10) << "Recall"
      << std::setw(10) << "NDCG" << '\n';
  out << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out << std::left << std::setw(6) << ks[i] << std::right << std::setw(10) << recall[i]
        << std::setw(10) << ndcg[i] << '\n';
  }
  out << "users evaluated: " << users_evaluated << " (skipped: " << users_skipped_short
      << " short input, " << users_skipped_empty << " no held-out items)\n";
  return out.str();
}

MetricReport evaluate_scorer(const SplitLog& split, const EvalConfig& config, const Scorer& scorer) {
  if (config.ks.empty()) throw ContractError("no cutoffs requested");
  const std::size_t max_k = *std::max_element(config.ks.begin(), config.ks.end());

  enum class Outcome { Evaluated, Short, Empty };
  struct UserResult {
    Outcome outcome = Outcome::Short;
    std::vector<double> recall, ndcg;
  };
  std::vector<UserResult> results(split.num_users);

  auto run_user = [&](std::size_t u) {
    auto& res = results[u];
    const auto ctx = build_eval_context(static_cast<UserId>(u), split, config.context_len,
                                        config.target);
    if (!ctx) {
      res.outcome = Outcome::Short;
      return;
    }
    const auto& held_seq = config.target == HeldOut::Test ? split.test[u] : split.validation[u];
    std::vector<ItemId> heldout;
    for (const ItemId item : sorted_unique(held_seq)) {
      if (!contains(ctx->exclusion, item)) heldout.push_back(item);
    }
    if (heldout.empty()) {
      res.outcome = Outcome::Empty;
      return;
    }
    const Vector scores = scorer(static_cast<UserId>(u), ctx->context);
    if (static_cast<std::size_t>(scores.size()) != split.num_items) {
      throw ContractError("scorer returned the wrong number of scores");
    }
    const std::size_t k_avail = std::min(max_k, split.num_items - ctx->exclusion.size());
    const auto ranked = rank_items(std::span(scores.data(), static_cast<std::size_t>(scores.size())),
                                   ctx->exclusion, k_avail);
    res.outcome = Outcome::Evaluated;
    for (const auto k : config.ks) {
      const std::size_t kk = std::min(k, ranked.size());
      res.recall.push_back(recall_at_k(ranked, heldout, kk));
      res.ndcg.push_back(ndcg_at_k(ranked, heldout, kk));
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, split.num_users));
  if (workers == 1) {
    for (std::size_t u = 0; u < split.num_users; ++u) run_user(u);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t u = next++; u < split.num_users; u = next++) run_user(u);
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

  MetricReport report;
  report.ks = config.ks;
  report.recall.assign(config.ks.size(), 0.0);
  report.ndcg.assign(config.ks.size(), 0.0);
  for (const auto& res : results) {
    switch (res.outcome) {
      case Outcome::Short: ++report.users_skipped_short; break;
      case Outcome::Empty: ++report.users_skipped_empty; break;
      case Outcome::Evaluated:
        ++report.users_evaluated;
        for (std::size_t i = 0; i < config.ks.size(); ++i) {
          report.recall[i] += res.recall[i];
          report.ndcg[i] += res.ndcg[i];
        }
        break;
    }
  }
  if (report.users_evaluated == 0) throw ReportError("no user could be evaluated");
  for (std::size_t i = 0; i < config.ks.size(); ++i) {
    report.recall[i] /= static_cast<double>(report.users_evaluated);
    report.ndcg[i] /= static_cast<double>(report.users_evaluated);
  }
  return report;
}

MetricReport evaluate(const ModelParams& params, const SplitLog& split, const EvalConfig& config) {
  if (static_cast<std::size_t>(params.item_out.cols()) != split.num_items ||
      static_cast<std::size_t>(params.user_emb.cols()) != split.num_users) {
    throw ContractError("model was trained on a different dataset shape");
  }
  if (config.context_len != static_cast<std::size_t>(params.inst_user.cols())) {
    throw ContractError("evaluation context length differs from the model's |L|");
  }
  return evaluate_scorer(split, config, [&](UserId user, std::span<const ItemId> context) {
    return forward(params, user, context, config.variant).scores;
  });
}

}  // namespace hgn
