#include "hgn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <unordered_set>

#include "hgn/error.hpp"

namespace hgn {

InputFormat parse_input_format(std::string_view tag) {
  if (tag == "csv") return InputFormat::Csv;
  if (tag == "csv-header") return InputFormat::CsvHeader;
  if (tag == "tsv") return InputFormat::Tsv;
  if (tag == "dat") return InputFormat::Dat;
  throw ContractError("unknown input format '" + std::string(tag) +
                      "' (expected csv, csv-header, tsv or dat)");
}

std::string_view to_string(InputFormat format) {
  switch (format) {
    case InputFormat::Csv: return "csv";
    case InputFormat::CsvHeader: return "csv-header";
    case InputFormat::Tsv: return "tsv";
    case InputFormat::Dat: return "dat";
  }
  return "?";
}

FilterMode parse_filter_mode(std::string_view tag) {
  if (tag == "single") return FilterMode::SinglePass;
  if (tag == "fixpoint") return FilterMode::Fixpoint;
  throw ContractError("unknown filter mode '" + std::string(tag) + "' (expected single or fixpoint)");
}

std::string_view to_string(FilterMode mode) {
  return mode == FilterMode::SinglePass ? "single" : "fixpoint";
}

std::int32_t IdMap::intern(const std::string& key) {
  auto [it, inserted] = index_.try_emplace(key, static_cast<std::int32_t>(keys_.size()));
  if (inserted) keys_.push_back(key);
  return it->second;
}

std::int32_t IdMap::find(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? -1 : it->second;
}

std::size_t InteractionLog::num_interactions() const noexcept {
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size();
  return total;
}

double InteractionLog::density() const noexcept {
  if (num_users == 0 || num_items == 0) return 0.0;
  return static_cast<double>(num_interactions()) /
         (static_cast<double>(num_users) * static_cast<double>(num_items));
}

namespace {

std::string_view delimiter_for(InputFormat format) {
  switch (format) {
    case InputFormat::Csv:
    case InputFormat::CsvHeader: return ",";
    case InputFormat::Tsv: return "\t";
    case InputFormat::Dat: return "::";
  }
  return ",";
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

RawRating parse_row(std::string_view line, std::string_view delim, std::size_t line_no) {
  std::string_view fields[4];
  std::size_t count = 0;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(delim, pos);
    const std::string_view field = line.substr(pos, next == std::string_view::npos ? next : next - pos);
    if (count == 4) throw ParseError("expected 4 fields, found more", line_no);
    fields[count++] = trim(field);
    if (next == std::string_view::npos) break;
    pos = next + delim.size();
  }
  if (count != 4) throw ParseError("expected 4 fields, found " + std::to_string(count), line_no);

  RawRating row;
  row.user = std::string(fields[0]);
  row.item = std::string(fields[1]);
  if (row.user.empty() || row.item.empty()) throw ParseError("empty user or item key", line_no);

  const auto rating = fields[2];
  auto [rp, rec] = std::from_chars(rating.data(), rating.data() + rating.size(), row.rating);
  if (rec != std::errc{} || rp != rating.data() + rating.size() || !std::isfinite(row.rating)) {
    throw ParseError("rating is not a number: '" + std::string(rating) + "'", line_no);
  }
  if (row.rating < 0.0 || row.rating > 5.0) {
    throw ParseError("rating outside [0, 5]: '" + std::string(rating) + "'", line_no);
  }

  const auto ts = fields[3];
  auto [tp, tec] = std::from_chars(ts.data(), ts.data() + ts.size(), row.timestamp);
  if (tec != std::errc{} || tp != ts.data() + ts.size()) {
    throw ParseError("timestamp is not an integer: '" + std::string(ts) + "'", line_no);
  }
  return row;
}

struct Row {
  std::size_t user;  // index into raw key tables
  std::size_t item;
  std::int64_t timestamp;
};

// Drops rows until both count thresholds hold (or one pass was made).
std::vector<Row> apply_count_filters(std::vector<Row> rows, std::size_t num_users,
                                     std::size_t num_items, const FilterRules& rules) {
  while (true) {
    const std::size_t before = rows.size();

    // Distinct raters per item.
    std::vector<std::size_t> item_users(num_items, 0);
    {
      std::unordered_set<std::uint64_t> seen;
      seen.reserve(rows.size());
      for (const auto& r : rows) {
        if (seen.insert((static_cast<std::uint64_t>(r.item) << 32) | r.user).second) {
          ++item_users[r.item];
        }
      }
    }
    std::erase_if(rows, [&](const Row& r) { return item_users[r.item] < rules.min_item_users; });

    std::vector<std::size_t> user_count(num_users, 0);
    for (const auto& r : rows) ++user_count[r.user];
    std::erase_if(rows, [&](const Row& r) { return user_count[r.user] < rules.min_user_interactions; });

    if (rules.mode == FilterMode::SinglePass || rows.size() == before) return rows;
  }
}

}  // namespace

std::vector<RawRating> read_ratings(std::istream& in, InputFormat format) {
  const auto delim = delimiter_for(format);
  std::vector<RawRating> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && format == InputFormat::CsvHeader) continue;
    if (trim(line).empty()) continue;
    rows.push_back(parse_row(line, delim, line_no));
  }
  if (in.bad()) throw IoError("read failure after line " + std::to_string(line_no));
  return rows;
}

std::vector<RawRating> read_ratings(const std::filesystem::path& path, InputFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rating file '" + path.string() + "'");
  return read_ratings(in, format);
}

InteractionLog build_interactions(std::span<const RawRating> raw, const FilterRules& rules) {
  // Provisional key tables over every row; dense ids are assigned after filtering.
  IdMap raw_users;
  IdMap raw_items;
  std::vector<Row> rows;
  rows.reserve(raw.size());
  for (const auto& r : raw) {
    if (r.rating < rules.min_rating) continue;
    rows.push_back({static_cast<std::size_t>(raw_users.intern(r.user)),
                    static_cast<std::size_t>(raw_items.intern(r.item)), r.timestamp});
  }
  rows = apply_count_filters(std::move(rows), raw_users.size(), raw_items.size(), rules);
  if (rows.empty()) throw EmptyDatasetError("no interactions survive filtering");

  InteractionLog log;
  std::vector<std::vector<std::pair<std::int64_t, ItemId>>> timed;
  for (const auto& r : rows) {
    const auto u = log.users.intern(raw_users.external(static_cast<std::int32_t>(r.user)));
    const auto i = log.items.intern(raw_items.external(static_cast<std::int32_t>(r.item)));
    if (static_cast<std::size_t>(u) == timed.size()) timed.emplace_back();
    timed[u].emplace_back(r.timestamp, i);
  }
  log.num_users = log.users.size();
  log.num_items = log.items.size();
  log.sequences.resize(log.num_users);
  for (std::size_t u = 0; u < timed.size(); ++u) {
    auto& events = timed[u];
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& seq = log.sequences[u];
    seq.reserve(events.size());
    for (const auto& e : events) seq.push_back(e.second);
  }
  return log;
}

InteractionLog load_interactions(const std::filesystem::path& path, InputFormat format,
                                 const FilterRules& rules) {
  const auto rows = read_ratings(path, format);
  return build_interactions(rows, rules);
}

SplitSizes split_sizes(std::size_t n) noexcept {
  SplitSizes s;
  s.train = n * 7 / 10;
  s.validation = n / 10;
  s.test = n - s.train - s.validation;
  return s;
}

SplitLog chronological_split(const InteractionLog& log) {
  SplitLog split;
  split.num_users = log.num_users;
  split.num_items = log.num_items;
  split.users = log.users;
  split.items = log.items;
  split.train.resize(log.num_users);
  split.validation.resize(log.num_users);
  split.test.resize(log.num_users);
  for (std::size_t u = 0; u < log.num_users; ++u) {
    const auto& seq = log.sequences[u];
    if (seq.size() < 10) {
      throw ContractError("user " + std::to_string(u) + " has " + std::to_string(seq.size()) +
                          " interactions; at least 10 are required to split");
    }
    const auto sizes = split_sizes(seq.size());
    const auto train_end = seq.begin() + static_cast<std::ptrdiff_t>(sizes.train);
    const auto val_end = train_end + static_cast<std::ptrdiff_t>(sizes.validation);
    split.train[u].assign(seq.begin(), train_end);
    split.validation[u].assign(train_end, val_end);
    split.test[u].assign(val_end, seq.end());
  }
  return split;
}

std::vector<TrainingInstance> generate_instances(UserId user, std::span<const ItemId> train,
                                                 std::size_t context_len, std::size_t horizon) {
  if (context_len == 0 || horizon == 0) {
    throw ContractError("context length and horizon must be at least 1");
  }
  std::vector<TrainingInstance> out;
  if (train.size() <= context_len) return out;
  out.reserve(train.size() - context_len);
  for (std::size_t start = 0; start + context_len < train.size(); ++start) {
    const std::size_t target_begin = start + context_len;
    const std::size_t target_end = std::min(train.size(), target_begin + horizon);
    TrainingInstance inst;
    inst.user = user;
    inst.context.assign(train.begin() + start, train.begin() + target_begin);
    inst.targets.assign(train.begin() + target_begin, train.begin() + target_end);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<TrainingInstance> generate_instances(std::span<const Sequence> train,
                                                 std::size_t context_len, std::size_t horizon) {
  std::vector<TrainingInstance> out;
  for (std::size_t u = 0; u < train.size(); ++u) {
    auto user = generate_instances(static_cast<UserId>(u), train[u], context_len, horizon);
    out.insert(out.end(), std::make_move_iterator(user.begin()), std::make_move_iterator(user.end()));
  }
  return out;
}

NegativeSampler::NegativeSampler(std::span<const Sequence> train, std::size_t num_items)
    : num_items_(num_items) {
  positives_.reserve(train.size());
  for (const auto& seq : train) {
    std::vector<ItemId> pos(seq.begin(), seq.end());
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    positives_.push_back(std::move(pos));
  }
}

bool NegativeSampler::is_positive(UserId user, ItemId item) const {
  const auto& pos = positives_.at(static_cast<std::size_t>(user));
  return std::binary_search(pos.begin(), pos.end(), item);
}

ItemId NegativeSampler::sample(UserId user, Rng& rng) const {
  const auto& pos = positives_.at(static_cast<std::size_t>(user));
  if (pos.size() >= num_items_) {
    throw SamplingError("user " + std::to_string(user) + " has interacted with every item");
  }
  while (true) {
    const auto item = static_cast<ItemId>(uniform_index(rng, num_items_));
    if (!std::binary_search(pos.begin(), pos.end(), item)) return item;
  }
}

}  // namespace hgn
