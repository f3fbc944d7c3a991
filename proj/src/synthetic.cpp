#include "hgn/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "hgn/error.hpp"

namespace hgn {

std::vector<RawRating> generate_ratings(const SyntheticConfig& c) {
  if (c.users == 0 || c.items == 0 || c.min_len == 0 || c.max_len < c.min_len) {
    throw ContractError("invalid synthetic dataset configuration");
  }
  if (c.topics == 0 || c.topics > c.items || c.user_topics == 0 || c.user_topics > c.topics) {
    throw ContractError("invalid synthetic topic configuration");
  }
  if (c.max_len > c.items) throw ContractError("sequences cannot exceed the item count");

  Rng rng(c.seed);
  const std::size_t block = c.items / c.topics;
  auto topic_of = [&](std::size_t item) { return std::min(item / block, c.topics - 1); };
  auto topic_begin = [&](std::size_t t) { return t * block; };
  auto topic_end = [&](std::size_t t) { return t + 1 == c.topics ? c.items : (t + 1) * block; };

  std::vector<RawRating> rows;
  std::vector<char> seen(c.items);
  std::vector<std::size_t> candidates;
  for (std::size_t u = 0; u < c.users; ++u) {
    std::fill(seen.begin(), seen.end(), 0);
    const std::size_t len = c.min_len + uniform_index(rng, c.max_len - c.min_len + 1);

    std::vector<std::size_t> preferred(c.topics);
    for (std::size_t t = 0; t < c.topics; ++t) preferred[t] = t;
    shuffle(std::span(preferred), rng);
    preferred.resize(c.user_topics);

    auto random_unseen = [&](bool restrict_to_preferred) -> std::size_t {
      candidates.clear();
      if (restrict_to_preferred) {
        for (const auto t : preferred) {
          for (std::size_t i = topic_begin(t); i < topic_end(t); ++i) {
            if (!seen[i]) candidates.push_back(i);
          }
        }
      }
      if (candidates.empty()) {
        for (std::size_t i = 0; i < c.items; ++i) {
          if (!seen[i]) candidates.push_back(i);
        }
      }
      return candidates[uniform_index(rng, candidates.size())];
    };

    std::int64_t clock = 1'000'000'000 + static_cast<std::int64_t>(uniform_index(rng, 1'000'000));
    auto tick = [&] {
      if (uniform_real(rng) >= c.tie_prob) clock += 1 + static_cast<std::int64_t>(uniform_index(rng, 3600));
      return clock;
    };
    auto emit = [&](std::size_t item, double rating) {
      char ukey[32], ikey[32];
      std::snprintf(ukey, sizeof ukey, "u%zu", u);
      std::snprintf(ikey, sizeof ikey, "i%zu", item);
      rows.push_back({ukey, ikey, rating, tick()});
    };

    std::size_t current = random_unseen(c.sequential);
    for (std::size_t step = 0; step < len; ++step) {
      if (step > 0) {
        std::size_t next = c.items;
        if (c.sequential && uniform_real(rng) < c.follow_prob) {
          const auto t = topic_of(current);
          const std::size_t succ = current + 1 < topic_end(t) ? current + 1 : topic_begin(t);
          if (!seen[succ]) next = succ;
        }
        current = next < c.items ? next : random_unseen(c.sequential);
      }
      seen[current] = 1;
      emit(current, 4.0 + static_cast<double>(uniform_index(rng, 2)));
      if (uniform_real(rng) < c.low_rating_prob) {
        emit(uniform_index(rng, c.items), 1.0 + static_cast<double>(uniform_index(rng, 3)));
      }
    }
  }
  return rows;
}

void write_ratings_csv(const std::filesystem::path& path, const std::vector<RawRating>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& r : rows) {
    out << r.user << ',' << r.item << ',' << r.rating << ',' << r.timestamp << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace hgn
