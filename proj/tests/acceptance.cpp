// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hgn/cli.hpp"
#include "hgn/data.hpp"
#include "hgn/eval.hpp"
#include "hgn/synthetic.hpp"
#include "hgn/training.hpp"
#include "oracles.hpp"

using namespace hgn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---- 1 --------------------------------------------------------------------

Outcome parameter_count_check() {
  std::ostringstream out, err;
  const int code = cli::run({"paramcount", "--d", "50", "--L", "5"}, out, err);
  const auto c = parameter_count(50, 5, 0, 0, Variant::hgn());
  const bool printed = out.str().find("gating total: 5,350\n") != std::string::npos;
  return {code == 0 && printed && c.gating() == 5350,
          fmt("gating parameters = %zu, CLI line %s", c.gating(), printed ? "matches" : "missing")};
}

// ---- 2 --------------------------------------------------------------------

Outcome gradient_check() {
  std::vector<Variant> variants = ablation_variants();
  variants.push_back(Variant::parse("HGN+max"));
  double worst = 0.0;
  std::string where;
  std::size_t cases = 0;
  bool sparsity = true;
  for (const std::size_t d : {2, 4, 8}) {
    for (const std::size_t L : {1, 3, 5}) {
      for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto rc = oracle::random_case(d, L, 20, 4, 3, 1000 * d + 100 * L + seed);
        for (const auto& v : variants) {
          const auto e = oracle::compare_gradients(rc.params, rc.inst, rc.negs, 1e-3, v, 1e-5);
          ++cases;
          sparsity = sparsity && e.sparsity_ok;
          if (e.max_rel > worst) {
            worst = e.max_rel;
            where = fmt("%s d=%zu L=%zu seed=%llu %s", v.tag().c_str(), d, L,
                        static_cast<unsigned long long>(seed), e.tensor.c_str());
          }
        }
      }
    }
  }
  return {worst < 1e-4 && sparsity,
          fmt("%zu cases, max rel err %.3e at %s%s", cases, worst, where.c_str(),
              sparsity ? "" : ", sparsity violated")};
}

// ---- 3 --------------------------------------------------------------------

Outcome metric_oracle_check() {
  Rng rng(2024);
  std::size_t recall_mismatch = 0;
  double ndcg_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    std::vector<ItemId> ranked(n);
    for (std::size_t i = 0; i < n; ++i) ranked[i] = static_cast<ItemId>(i);
    shuffle(std::span<ItemId>(ranked), rng);
    std::vector<ItemId> held(1 + uniform_index(rng, 15));
    for (auto& h : held) h = static_cast<ItemId>(uniform_index(rng, n + 20));
    const std::size_t k = 1 + uniform_index(rng, n);
    if (recall_at_k(ranked, held, k) != oracle::recall(ranked, held, k)) ++recall_mismatch;
    ndcg_err = std::max(ndcg_err, std::abs(ndcg_at_k(ranked, held, k) - oracle::ndcg(ranked, held, k)));
  }
  return {recall_mismatch == 0 && ndcg_err <= 1e-12,
          fmt("1000 cases, recall mismatches %zu, max NDCG abs err %.3e", recall_mismatch, ndcg_err)};
}

// ---- 4 --------------------------------------------------------------------

Outcome chance_level_check() {
  SyntheticConfig sc;
  sc.users = 500;
  sc.items = 200;
  sc.min_len = 20;
  sc.max_len = 60;
  sc.sequential = false;
  sc.seed = 5;
  const auto split = chronological_split(build_interactions(generate_ratings(sc), FilterRules{}));
  if (split.num_users != 500 || split.num_items != 200) {
    return {false, fmt("filtered shape %zux%zu, expected 500x200", split.num_users, split.num_items)};
  }
  const auto params = ModelParams::random({50, 5, 500, 200}, 17);
  EvalConfig ec;
  ec.ks = {10};
  const auto rep = evaluate(params, split, ec);

  // Held-out items are uniform among the candidates, so per-user hits follow
  // a hypergeometric law with mean 10 h / C.
  double mean = 0.0, var = 0.0;
  std::size_t n = 0;
  for (std::size_t u = 0; u < split.num_users; ++u) {
    const auto ctx = build_eval_context(static_cast<UserId>(u), split, ec.context_len);
    if (!ctx) continue;
    std::set<ItemId> held;
    for (const auto i : split.test[u]) {
      if (!std::binary_search(ctx->exclusion.begin(), ctx->exclusion.end(), i)) held.insert(i);
    }
    if (held.empty()) continue;
    const double C = static_cast<double>(split.num_items - ctx->exclusion.size());
    const double h = static_cast<double>(held.size());
    const double k = 10.0;
    mean += k / C;
    var += k * (h / C) * (1.0 - h / C) * (C - k) / (C - 1.0) / (h * h);
    ++n;
  }
  mean /= static_cast<double>(n);
  const double sigma = std::sqrt(var) / static_cast<double>(n);
  const double z = (rep.recall_at(10) - mean) / sigma;
  return {n == rep.users_evaluated && std::abs(z) <= 3.0,
          fmt("Recall@10 %.5f, chance %.5f, sigma %.5f, z %+.2f over %zu users", rep.recall_at(10), mean,
              sigma, z, n)};
}

// ---- 5, 6 -----------------------------------------------------------------

SplitLog desk_split() {
  return chronological_split(build_interactions(generate_ratings(SyntheticConfig{}), FilterRules{}));
}

struct AblationRuns {
  std::vector<std::vector<double>> recall;  // [variant][seed]
  std::vector<double> hgn_seed1_trace;
  ModelParams hgn_seed1_params;
};

const std::vector<std::string> kAblationTags = {"BPR", "BPR+F+I+avg", "HGN"};

// With `hgn_only`, just the HGN seed-1 run that the convergence check needs.
AblationRuns run_ablation(const SplitLog& split, bool hgn_only) {
  AblationRuns runs;
  for (const auto& tag : kAblationTags) {
    runs.recall.emplace_back();
    if (hgn_only && tag != "HGN") continue;
    for (std::uint64_t seed = 1; seed <= (hgn_only ? 1u : 3u); ++seed) {
      TrainConfig tc;
      tc.variant = Variant::parse(tag);
      tc.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = train(split, tc);
      EvalConfig ec;
      ec.variant = tc.variant;
      ec.ks = {10};
      const double rec = evaluate(r.params, split, ec).recall_at(10);
      runs.recall.back().push_back(rec);
      std::printf("  %-12s seed=%llu R@10=%.5f loss %.4f -> %.4f (%.1fs)\n", tag.c_str(),
                  static_cast<unsigned long long>(seed), rec, r.epochs.front().mean_loss,
                  r.epochs.back().mean_loss,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      std::fflush(stdout);
      if (tag == "HGN" && seed == 1) {
        for (const auto& e : r.epochs) runs.hgn_seed1_trace.push_back(e.mean_loss);
        runs.hgn_seed1_params = r.params;
      }
    }
  }
  return runs;
}

Outcome ablation_check(const AblationRuns& runs) {
  std::vector<double> mean;
  for (const auto& r : runs.recall) mean.push_back((r[0] + r[1] + r[2]) / 3.0);
  const double bpr = mean[0], fi = mean[1], hgn = mean[2];
  return {hgn > fi && fi > bpr && hgn >= 1.2 * bpr,
          fmt("mean R@10 over 3 seeds: HGN %.5f, BPR+F+I+avg %.5f, BPR %.5f (HGN/BPR %.2f)", hgn, fi, bpr,
              hgn / bpr)};
}

Outcome convergence_check(const SplitLog& split, const AblationRuns& runs) {
  const auto& trace = runs.hgn_seed1_trace;
  TrainConfig tc;
  tc.seed = 1;
  const auto again = train(split, tc);
  bool identical = again.params == runs.hgn_seed1_params && again.epochs.size() == trace.size();
  for (std::size_t e = 0; identical && e < trace.size(); ++e) identical = again.epochs[e].mean_loss == trace[e];
  const double ratio = trace.back() / trace.front();
  return {trace.size() == 30 && ratio < 0.5 && identical,
          fmt("epoch 30 / epoch 1 loss %.4f / %.4f = %.3f, re-run trace %s", trace.back(), trace.front(),
              ratio, identical ? "bit-identical" : "DIFFERS")};
}

// ---- 7 --------------------------------------------------------------------

Outcome timing_check(const SplitLog& split) {
  const auto all = generate_instances(split.train, 5, 3);
  const std::size_t n = all.size() / 2;
  const std::vector<TrainingInstance> half(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  const std::vector<TrainingInstance> full(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(2 * n));

  // Same instances, but every user has seen all but four items, so each
  // negative takes hundreds of rejection draws.
  std::vector<Sequence> crowded(split.num_users);
  for (std::size_t u = 0; u < split.num_users; ++u) {
    for (std::size_t i = 0; i < split.num_items; ++i) {
      if ((i + u) % (split.num_items / 4) != 0) crowded[u].push_back(static_cast<ItemId>(i));
    }
  }
  const NegativeSampler sparse(split.train, split.num_items);
  const NegativeSampler dense(crowded, split.num_items);

  TrainConfig tc;
  const ModelDims dims{tc.dim, tc.context_len, split.num_users, split.num_items};
  auto measure = [&](const std::vector<TrainingInstance>& insts, const NegativeSampler& sampler) {
    auto params = ModelParams::random(dims, 3);
    AdamState state(params);
    std::vector<double> wall, samp;
    for (std::size_t epoch = 1; epoch <= 5; ++epoch) {
      const auto s = train_epoch(params, insts, sampler, tc, state, epoch);
      wall.push_back(s.wall_seconds);
      samp.push_back(s.sampling_seconds);
    }
    return std::pair{median(wall), median(samp)};
  };
  const auto [w1, s1] = measure(half, sparse);
  const auto [w2, s2] = measure(full, sparse);
  const auto [wd, sd] = measure(half, dense);
  const double scale = w2 / (2.0 * w1);
  const double drift = wd / w1;
  const bool excluded = drift < 1.2 && (sd - s1) > 0.5 * w1;
  return {scale >= 0.7 && scale <= 1.5 && excluded,
          fmt("n=%zu: wall %.3fs, sampling %.3fs; 2n: wall %.3fs (ratio to linear %.2f); costly sampler: "
              "wall %.3fs (x%.2f), sampling %.3fs",
              n, w1, s1, w2, scale, wd, drift, sd)};
}

// ---- 8 --------------------------------------------------------------------

Outcome split_window_check() {
  Rng rng(8);
  InteractionLog log;
  log.num_users = 1000;
  log.num_items = 500;
  for (std::size_t u = 0; u < 1000; ++u) {
    Sequence s(10 + uniform_index(rng, 300));
    for (auto& i : s) i = static_cast<ItemId>(uniform_index(rng, 500));
    log.sequences.push_back(std::move(s));
  }
  const auto split = chronological_split(log);
  std::size_t bad_split = 0, bad_windows = 0, windows = 0;
  for (std::size_t u = 0; u < 1000; ++u) {
    const std::size_t n = log.sequences[u].size();
    const std::size_t tr = n * 7 / 10, va = n / 10;
    Sequence joined = split.train[u];
    joined.insert(joined.end(), split.validation[u].begin(), split.validation[u].end());
    joined.insert(joined.end(), split.test[u].begin(), split.test[u].end());
    if (split.train[u].size() != tr || split.validation[u].size() != va ||
        split.test[u].size() != n - tr - va || joined != log.sequences[u]) {
      ++bad_split;
    }
    const std::size_t L = 1 + uniform_index(rng, 8), T = 1 + uniform_index(rng, 4);
    const auto got = generate_instances(static_cast<UserId>(u), split.train[u], L, T);
    const auto want = oracle::windows(split.train[u], L, T);
    windows += want.size();
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      same = got[i].user == static_cast<UserId>(u) && got[i].context == want[i].first &&
             got[i].targets == want[i].second;
    }
    if (!same) ++bad_windows;
  }
  return {bad_split == 0 && bad_windows == 0,
          fmt("1000 users: split mismatches %zu, window mismatches %zu (%zu windows)", bad_split, bad_windows,
              windows)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    const auto o = fn();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%d] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };

  report(1, "parameter count", parameter_count_check);
  report(2, "gradient correctness", gradient_check);
  report(3, "metric oracle equivalence", metric_oracle_check);
  report(4, "chance-level sanity", chance_level_check);
  if (wanted(5) || wanted(6) || wanted(7)) {
    const auto split = desk_split();
    std::printf("desk dataset: %zu users, %zu items\n", split.num_users, split.num_items);
    if (wanted(5) || wanted(6)) {
      const auto runs = run_ablation(split, !wanted(5));
      report(5, "ablation ordering", [&] { return ablation_check(runs); });
      report(6, "convergence and reproducibility", [&] { return convergence_check(split, runs); });
    }
    report(7, "timing accounting", [&] { return timing_check(split); });
  }
  report(8, "split and windowing", split_window_check);
  return failures;
}
