#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hgn/rng.hpp"

namespace hgn {

using UserId = std::int32_t;
using ItemId = std::int32_t;
using Sequence = std::vector<ItemId>;

struct RawRating {
  std::string user;
  std::string item;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

/// Delimiter-separated rating files: `user<sep>item<sep>rating<sep>timestamp`.
enum class InputFormat {
  Csv,        // comma, no header
  CsvHeader,  // comma, first line is a header
  Tsv,        // tab, no header (MovieLens-100k u.data)
  Dat,        // "::" separated (MovieLens-1M ratings.dat)
};

InputFormat parse_input_format(std::string_view tag);
std::string_view to_string(InputFormat format);

enum class FilterMode {
  SinglePass,  // item filter then user filter, once
  Fixpoint,    // repeat both filters until nothing changes
};

FilterMode parse_filter_mode(std::string_view tag);
std::string_view to_string(FilterMode mode);

struct FilterRules {
  double min_rating = 4.0;
  std::size_t min_item_users = 5;
  std::size_t min_user_interactions = 10;
  FilterMode mode = FilterMode::SinglePass;
};

/// Dense internal index <-> external key.
class IdMap {
 public:
  std::int32_t intern(const std::string& key);
  std::int32_t find(const std::string& key) const;  // -1 when absent
  const std::string& external(std::int32_t index) const { return keys_.at(index); }
  std::size_t size() const noexcept { return keys_.size(); }
  const std::vector<std::string>& keys() const noexcept { return keys_; }

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.keys_ == b.keys_; }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct InteractionLog {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<Sequence> sequences;  // indexed by internal user id, chronological
  IdMap users;
  IdMap items;

  std::size_t num_interactions() const noexcept;
  double density() const noexcept;
};

struct SplitLog {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<Sequence> train;
  std::vector<Sequence> validation;
  std::vector<Sequence> test;
  IdMap users;
  IdMap items;

  friend bool operator==(const SplitLog&, const SplitLog&) = default;
};

struct TrainingInstance {
  UserId user = 0;
  Sequence context;  // exactly |L| items
  Sequence targets;  // 1..|T| items following the context
};

std::vector<RawRating> read_ratings(std::istream& in, InputFormat format);
std::vector<RawRating> read_ratings(const std::filesystem::path& path, InputFormat format);

/// Applies the rating and count filters, assigns dense ids in order of first
/// appearance and sorts each user's items by timestamp (stable in input order).
InteractionLog build_interactions(std::span<const RawRating> rows, const FilterRules& rules = {});

InteractionLog load_interactions(const std::filesystem::path& path, InputFormat format,
                                 const FilterRules& rules = {});

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// floor(0.7 n) / floor(0.1 n) / remainder.
SplitSizes split_sizes(std::size_t n) noexcept;

SplitLog chronological_split(const InteractionLog& log);

/// Sliding windows with stride 1. A window is kept only when its context is
/// full and at least one target follows it.
std::vector<TrainingInstance> generate_instances(UserId user, std::span<const ItemId> train,
                                                 std::size_t context_len, std::size_t horizon);
std::vector<TrainingInstance> generate_instances(std::span<const Sequence> train,
                                                 std::size_t context_len, std::size_t horizon);

/// Rejection sampler over items outside a user's training positives.
class NegativeSampler {
 public:
  NegativeSampler(std::span<const Sequence> train, std::size_t num_items);

  ItemId sample(UserId user, Rng& rng) const;
  bool is_positive(UserId user, ItemId item) const;
  std::size_t num_items() const noexcept { return num_items_; }

 private:
  std::size_t num_items_;
  std::vector<std::vector<ItemId>> positives_;  // sorted and unique per user
};

}  // namespace hgn
