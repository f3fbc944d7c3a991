#include "hgn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hgn/rng.hpp"

namespace hgn {

double relative_error(double a, double b) noexcept {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

struct Probe {
  std::string name;
  Eigen::Ref<Matrix> param;  // perturbed in place
  Matrix analytic;
  std::vector<Eigen::Index> columns;  // empty = every column
};

}  // namespace

GradCheckReport check_gradients(const GradCheckOptions& o, const Variant& variant) {
  const ModelDims dims{o.dim, o.context_len, o.num_users, o.num_items};
  ModelParams params = ModelParams::random(dims, o.seed);
  Rng rng(derive_seed(o.seed, 1));

  TrainingInstance inst;
  inst.user = static_cast<UserId>(uniform_index(rng, o.num_users));
  for (std::size_t l = 0; l < o.context_len; ++l) {
    inst.context.push_back(static_cast<ItemId>(uniform_index(rng, o.num_items)));
  }
  std::vector<ItemId> negatives;
  for (std::size_t t = 0; t < o.horizon; ++t) {
    inst.targets.push_back(static_cast<ItemId>(uniform_index(rng, o.num_items)));
  }
  for (std::size_t t = 0; t < o.horizon; ++t) {
    ItemId neg;
    do {
      neg = static_cast<ItemId>(uniform_index(rng, o.num_items));
    } while (std::find(inst.targets.begin(), inst.targets.end(), neg) != inst.targets.end());
    negatives.push_back(neg);
  }

  const auto result = instance_loss(params, inst, negatives, o.lambda, variant);
  const auto& g = result.grad;

  GradCheckReport report;
  report.variant = variant;

  // Touched columns; anything else in the sparse gradients is a sparsity bug.
  auto keys_within = [](const SparseColumns& s, std::vector<ItemId> allowed) {
    for (const auto k : s.keys()) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) return false;
    }
    return true;
  };
  std::vector<ItemId> scored = inst.targets;
  scored.insert(scored.end(), negatives.begin(), negatives.end());
  report.sparsity_ok = keys_within(g.user_emb, {inst.user}) &&
                       keys_within(g.item_in, variant.uses_item_embeddings() ? inst.context
                                                                             : std::vector<ItemId>{}) &&
                       keys_within(g.item_out, scored);

  auto cols_of = [](std::vector<ItemId> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return std::vector<Eigen::Index>(v.begin(), v.end());
  };
  const auto n = static_cast<Eigen::Index>(o.num_items);
  const auto m = static_cast<Eigen::Index>(o.num_users);
  std::vector<Probe> probes;
  probes.push_back({"U", params.user_emb, g.user_emb.to_dense(m), {inst.user}});
  probes.push_back({"E", params.item_in, g.item_in.to_dense(n), cols_of(inst.context)});
  probes.push_back({"Q", params.item_out, g.item_out.to_dense(n), cols_of(scored)});
  probes.push_back({"W_g1", params.gate_item, g.gate_item, {}});
  probes.push_back({"W_g2", params.gate_user, g.gate_user, {}});
  probes.push_back({"b_g", params.gate_bias, g.gate_bias, {}});
  probes.push_back({"w_g3", params.inst_item, g.inst_item, {}});
  probes.push_back({"W_g4", params.inst_user, g.inst_user, {}});

  for (auto& probe : probes) {
    if (o.corrupt_tensor && *o.corrupt_tensor == probe.name) {
      const Eigen::Index c = probe.columns.empty() ? 0 : probe.columns.front();
      probe.analytic(0, c) += 1.0;
    }
    TensorCheck check;
    check.tensor = probe.name;
    std::vector<Eigen::Index> cols = probe.columns;
    if (cols.empty()) {
      for (Eigen::Index c = 0; c < probe.param.cols(); ++c) cols.push_back(c);
    }
    for (const auto c : cols) {
      for (Eigen::Index r = 0; r < probe.param.rows(); ++r) {
        const double saved = probe.param(r, c);
        probe.param(r, c) = saved + o.step;
        const double up = instance_objective(params, inst, negatives, o.lambda, variant);
        probe.param(r, c) = saved - o.step;
        const double down = instance_objective(params, inst, negatives, o.lambda, variant);
        probe.param(r, c) = saved;
        const double numeric = (up - down) / (2.0 * o.step);
        const double analytic = probe.analytic(r, c);
        const double err = relative_error(analytic, numeric);
        ++check.coordinates;
        if (err > check.max_rel_error || check.worst.empty()) {
          check.max_rel_error = std::max(err, check.max_rel_error);
          check.worst = "(" + std::to_string(r) + "," + std::to_string(c) + ")";
          check.analytic = analytic;
          check.numeric = numeric;
        }
      }
    }
    check.pass = check.max_rel_error < o.tolerance;
    report.pass = report.pass && check.pass;
    report.tensors.push_back(std::move(check));
  }
  report.pass = report.pass && report.sparsity_ok;
  return report;
}

}  // namespace hgn
