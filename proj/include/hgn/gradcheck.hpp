#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hgn/model.hpp"
#include "hgn/training.hpp"

namespace hgn {

struct GradCheckOptions {
  std::size_t dim = 4;
  std::size_t context_len = 3;
  std::size_t num_items = 10;
  std::size_t num_users = 3;
  std::size_t horizon = 3;
  double lambda = 1e-3;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  /// Test hook: adds 1.0 to the first analytic coordinate of this tensor.
  std::optional<std::string> corrupt_tensor;
};

struct TensorCheck {
  std::string tensor;  // U, E, Q, W_g1, W_g2, b_g, w_g3, W_g4
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "(row,col)"
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  Variant variant;
  std::vector<TensorCheck> tensors;
  bool sparsity_ok = true;  // no gradient outside the touched embedding columns
  bool pass = true;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b) noexcept;

/// Central differences of `instance_objective` against `instance_loss` on a
/// random instance built from `options.seed`.
GradCheckReport check_gradients(const GradCheckOptions& options, const Variant& variant);

}  // namespace hgn
