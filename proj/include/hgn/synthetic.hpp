#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hgn/data.hpp"

namespace hgn {

/// Rating-log generator used by tests, the acceptance suite and `hgn generate`.
///
/// Items are split into `topics` equal blocks laid out as cycles. Each user
/// prefers `user_topics` blocks. With `sequential` set, every step continues
/// to the next unseen item of the current block with probability
/// `follow_prob` and otherwise jumps to an unseen item of a preferred block;
/// without it, items are drawn uniformly from all unseen items. A fraction
/// `low_rating_prob` of extra rows carry ratings below 4 on random items.
struct SyntheticConfig {
  std::size_t users = 943;
  std::size_t items = 1682;
  std::size_t min_len = 20;
  std::size_t max_len = 180;
  std::size_t topics = 10;
  std::size_t user_topics = 2;
  double follow_prob = 0.8;
  double low_rating_prob = 0.1;
  double tie_prob = 0.05;
  bool sequential = true;
  std::uint64_t seed = 42;
};

std::vector<RawRating> generate_ratings(const SyntheticConfig& config);

void write_ratings_csv(const std::filesystem::path& path, const std::vector<RawRating>& rows);

}  // namespace hgn
