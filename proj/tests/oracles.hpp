#pragma once

// Reference implementations used only by tests. They share no code with the
// library beyond the ModelParams storage they read from.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hgn/data.hpp"
#include "hgn/model.hpp"

namespace oracle {

using hgn::ItemId;

// Extended precision keeps finite-difference roundoff well below the
// gradient tolerance.
using Real = long double;

inline Real logistic(Real x) { return 1.0L / (1.0L + std::exp(-x)); }

struct Forward {
  std::vector<std::vector<Real>> seq, feat, inst;  // [dim][pos]
  std::vector<Real> pooled, context_sum;
  std::vector<Real> scores;
};

// Straight-line scalar forward pass.
inline Forward forward(const hgn::ModelParams& p, int user, const std::vector<ItemId>& ctx,
                       const hgn::Variant& v) {
  const int d = static_cast<int>(p.user_emb.rows());
  const int len = static_cast<int>(ctx.size());
  const int n = static_cast<int>(p.item_out.cols());
  Forward f;
  std::vector<Real> u(d);
  for (int a = 0; a < d; ++a) u[a] = p.user_emb(a, user);

  f.seq.assign(d, std::vector<Real>(len));
  for (int a = 0; a < d; ++a)
    for (int l = 0; l < len; ++l) f.seq[a][l] = p.item_in(a, ctx[l]);

  f.feat = f.seq;
  if (v.feature_gate) {
    for (int l = 0; l < len; ++l) {
      for (int a = 0; a < d; ++a) {
        Real pre = p.gate_bias(a);
        for (int b = 0; b < d; ++b) pre += p.gate_item(a, b) * f.seq[b][l];
        for (int b = 0; b < d; ++b) pre += p.gate_user(a, b) * u[b];
        f.feat[a][l] = f.seq[a][l] * logistic(pre);
      }
    }
  }
  f.inst = f.feat;
  if (v.instance_gate) {
    for (int l = 0; l < len; ++l) {
      Real pre = 0.0;
      for (int a = 0; a < d; ++a) pre += p.inst_item(a) * f.feat[a][l];
      for (int a = 0; a < d; ++a) pre += u[a] * p.inst_user(a, l);
      const Real g = logistic(pre);
      for (int a = 0; a < d; ++a) f.inst[a][l] = f.feat[a][l] * g;
    }
  }
  f.pooled.assign(d, 0.0);
  if (v.uses_gating()) {
    for (int a = 0; a < d; ++a) {
      if (v.pooling == hgn::Pooling::Avg) {
        Real s = 0.0;
        for (int l = 0; l < len; ++l) s += f.inst[a][l];
        f.pooled[a] = s / len;
      } else {
        Real m = f.inst[a][0];
        for (int l = 1; l < len; ++l) m = std::max(m, f.inst[a][l]);
        f.pooled[a] = m;
      }
    }
  }
  f.context_sum.assign(d, 0.0);
  if (v.item_item) {
    for (int a = 0; a < d; ++a)
      for (int l = 0; l < len; ++l) f.context_sum[a] += f.seq[a][l];
  }
  f.scores.assign(n, 0.0);
  for (int j = 0; j < n; ++j) {
    Real long_term = 0.0, short_term = 0.0, item_item = 0.0;
    for (int a = 0; a < d; ++a) long_term += u[a] * p.item_out(a, j);
    for (int a = 0; a < d; ++a) short_term += f.pooled[a] * p.item_out(a, j);
    for (int l = 0; l < len && v.item_item; ++l) {
      for (int a = 0; a < d; ++a) item_item += p.item_in(a, ctx[l]) * p.item_out(a, j);
    }
    f.scores[j] = long_term + short_term + item_item;
  }
  return f;
}

inline Real sq_col(const hgn::Matrix& m, int c) {
  Real s = 0.0;
  for (int a = 0; a < m.rows(); ++a) s += m(a, c) * m(a, c);
  return s;
}

inline Real sq_all(const hgn::Matrix& m) {
  Real s = 0.0;
  for (int i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
  return s;
}

// Full instance objective: pair losses plus the L2 terms.
inline Real loss(const hgn::ModelParams& p, const hgn::TrainingInstance& inst,
                   const std::vector<ItemId>& negs, Real lambda, const hgn::Variant& v) {
  const auto f = forward(p, inst.user, inst.context, v);
  Real total = 0.0;
  for (std::size_t t = 0; t < negs.size(); ++t) {
    const Real delta = f.scores[inst.targets[t]] - f.scores[negs[t]];
    total += -std::log(logistic(delta));
  }
  Real reg = sq_col(p.user_emb, inst.user);
  if (v.uses_item_embeddings()) {
    for (const ItemId e : std::set<ItemId>(inst.context.begin(), inst.context.end())) {
      reg += sq_col(p.item_in, e);
    }
  }
  std::set<ItemId> scored(inst.targets.begin(), inst.targets.end());
  scored.insert(negs.begin(), negs.end());
  for (const ItemId q : scored) reg += sq_col(p.item_out, q);
  if (v.feature_gate) reg += sq_all(p.gate_item) + sq_all(p.gate_user) + sq_all(p.gate_bias);
  if (v.instance_gate) reg += sq_all(p.inst_item) + sq_all(p.inst_user);
  return total + lambda * reg;
}

// Brute-force filter over raw rows, keyed by external ids, single pass.
struct FilterCounts {
  std::size_t users = 0, items = 0, interactions = 0;
};

inline FilterCounts reference_filter(const std::vector<hgn::RawRating>& rows) {
  std::vector<hgn::RawRating> kept;
  for (const auto& r : rows)
    if (r.rating >= 4.0) kept.push_back(r);
  std::map<std::string, std::set<std::string>> raters;
  for (const auto& r : kept) raters[r.item].insert(r.user);
  std::vector<hgn::RawRating> by_item;
  for (const auto& r : kept)
    if (raters[r.item].size() >= 5) by_item.push_back(r);
  std::map<std::string, std::size_t> per_user;
  for (const auto& r : by_item) ++per_user[r.user];
  FilterCounts c;
  std::set<std::string> users, items;
  for (const auto& r : by_item) {
    if (per_user[r.user] >= 10) {
      users.insert(r.user);
      items.insert(r.item);
      ++c.interactions;
    }
  }
  c.users = users.size();
  c.items = items.size();
  return c;
}

// Window enumeration by explicit positions.
inline std::vector<std::pair<std::vector<ItemId>, std::vector<ItemId>>> windows(
    const std::vector<ItemId>& seq, std::size_t L, std::size_t T) {
  std::vector<std::pair<std::vector<ItemId>, std::vector<ItemId>>> out;
  for (std::size_t s = 0; s < seq.size(); ++s) {
    if (s + L > seq.size()) break;
    std::vector<ItemId> ctx, tgt;
    for (std::size_t i = s; i < s + L; ++i) ctx.push_back(seq[i]);
    for (std::size_t i = s + L; i < seq.size() && i < s + L + T; ++i) tgt.push_back(seq[i]);
    if (!tgt.empty()) out.emplace_back(ctx, tgt);
  }
  return out;
}

inline double recall(const std::vector<ItemId>& ranked, const std::vector<ItemId>& held,
                     std::size_t k) {
  const std::set<ItemId> h(held.begin(), held.end());
  std::set<ItemId> top(ranked.begin(), ranked.begin() + static_cast<long>(k));
  std::vector<ItemId> inter;
  std::set_intersection(top.begin(), top.end(), h.begin(), h.end(), std::back_inserter(inter));
  return static_cast<double>(inter.size()) / static_cast<double>(h.size());
}

inline double ndcg(const std::vector<ItemId>& ranked, const std::vector<ItemId>& held,
                   std::size_t k) {
  const std::set<ItemId> h(held.begin(), held.end());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t pos = 1; pos <= k; ++pos) {
    if (h.count(ranked[pos - 1])) dcg += 1.0 / std::log2(pos + 1.0);
  }
  for (std::size_t pos = 1; pos <= std::min(k, h.size()); ++pos) idcg += 1.0 / std::log2(pos + 1.0);
  return dcg / idcg;
}

// Full sort by (-score, index) with exclusions removed.
inline std::vector<ItemId> full_sort_rank(const std::vector<double>& scores,
                                          const std::set<ItemId>& exclusion, std::size_t k) {
  std::vector<std::pair<double, ItemId>> all;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!exclusion.count(static_cast<ItemId>(i))) all.emplace_back(-scores[i], static_cast<ItemId>(i));
  }
  std::sort(all.begin(), all.end());
  std::vector<ItemId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

// Central-difference gradient of oracle::loss with respect to one entry.
template <typename Tensor>
double numeric_partial(hgn::ModelParams& p, Tensor& t, Eigen::Index r, Eigen::Index c,
                       const hgn::TrainingInstance& inst, const std::vector<ItemId>& negs,
                       double lambda, const hgn::Variant& v, double h = 1e-5) {
  const double saved = t(r, c);
  t(r, c) = saved + h;
  const Real up = loss(p, inst, negs, lambda, v);
  t(r, c) = saved - h;
  const Real down = loss(p, inst, negs, lambda, v);
  t(r, c) = saved;
  // the step actually taken, after rounding saved +/- h to double
  return static_cast<double>((up - down) / (static_cast<Real>(saved + h) - static_cast<Real>(saved - h)));
}

}  // namespace oracle

#include "hgn/rng.hpp"
#include "hgn/training.hpp"

namespace oracle {

struct GradError {
  double max_rel = 0.0;
  std::string tensor;
  bool sparsity_ok = true;
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Compares hgn::instance_loss against central differences of oracle::loss
// over every coordinate of every tensor (all columns, touched or not).
inline GradError compare_gradients(hgn::ModelParams p, const hgn::TrainingInstance& inst,
                                   const std::vector<ItemId>& negs, double lambda,
                                   const hgn::Variant& v, double h = 1e-5) {
  const auto analytic = hgn::instance_loss(p, inst, negs, lambda, v);
  const auto& g = analytic.grad;
  GradError out;
  auto check = [&](const std::string& name, auto& tensor, const hgn::Matrix& a) {
    for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
      for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
        const double num = numeric_partial(p, tensor, r, c, inst, negs, lambda, v, h);
        const double e = rel_err(a(r, c), num);
        if (e > out.max_rel) {
          out.max_rel = e;
          out.tensor = name + "(" + std::to_string(r) + "," + std::to_string(c) + ")";
        }
      }
    }
  };
  check("U", p.user_emb, g.user_emb.to_dense(p.user_emb.cols()));
  check("E", p.item_in, g.item_in.to_dense(p.item_in.cols()));
  check("Q", p.item_out, g.item_out.to_dense(p.item_out.cols()));
  check("W_g1", p.gate_item, g.gate_item);
  check("W_g2", p.gate_user, g.gate_user);
  check("b_g", p.gate_bias, g.gate_bias);
  check("w_g3", p.inst_item, g.inst_item);
  check("W_g4", p.inst_user, g.inst_user);

  auto only = [](const hgn::SparseColumns& s, const std::set<ItemId>& allowed) {
    for (const auto k : s.keys())
      if (!allowed.count(k)) return false;
    return true;
  };
  std::set<ItemId> scored(inst.targets.begin(), inst.targets.end());
  scored.insert(negs.begin(), negs.end());
  out.sparsity_ok = only(g.user_emb, {inst.user}) &&
                    only(g.item_in, v.uses_item_embeddings()
                                        ? std::set<ItemId>(inst.context.begin(), inst.context.end())
                                        : std::set<ItemId>{}) &&
                    only(g.item_out, scored);
  return out;
}

struct RandomCase {
  hgn::ModelParams params;
  hgn::TrainingInstance inst;
  std::vector<ItemId> negs;
};

inline RandomCase random_case(std::size_t d, std::size_t L, std::size_t N, std::size_t M,
                              std::size_t T, std::uint64_t seed) {
  RandomCase rc;
  rc.params = hgn::ModelParams::random({d, L, M, N}, seed);
  hgn::Rng rng(seed * 7919 + 13);
  rc.inst.user = static_cast<int>(hgn::uniform_index(rng, M));
  for (std::size_t l = 0; l < L; ++l) rc.inst.context.push_back(static_cast<ItemId>(hgn::uniform_index(rng, N)));
  for (std::size_t t = 0; t < T; ++t) rc.inst.targets.push_back(static_cast<ItemId>(hgn::uniform_index(rng, N)));
  for (std::size_t t = 0; t < T; ++t) {
    ItemId k;
    do {
      k = static_cast<ItemId>(hgn::uniform_index(rng, N));
    } while (std::find(rc.inst.targets.begin(), rc.inst.targets.end(), k) != rc.inst.targets.end());
    rc.negs.push_back(k);
  }
  return rc;
}

}  // namespace oracle
