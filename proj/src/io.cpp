#include "hgn/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "hgn/error.hpp"

namespace hgn {

namespace {

constexpr std::array<char, 8> kBundleMagic{'H', 'G', 'N', 'B', 'N', 'D', 'L', '\0'};
constexpr std::array<char, 8> kCheckpointMagic{'H', 'G', 'N', 'C', 'K', 'P', 'T', '\0'};

// Sequences longer than this are treated as corruption.
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 40;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::uint64_t get_count(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > kMaxCount) throw IoError("corrupt header: count " + std::to_string(n));
  return n;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto len = get<std::uint32_t>(in);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) throw IoError("unexpected end of file");
  return s;
}

void check_magic(std::istream& in, const std::array<char, 8>& magic, const char* what) {
  std::array<char, 8> got{};
  if (!in.read(got.data(), 8) || got != magic) {
    throw IoError(std::string("not a ") + what + " file (bad magic)");
  }
}

template <typename M>
void put_row_major(std::ostream& out, const M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
}

template <typename M>
void get_row_major(std::istream& in, M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in);
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

void write_bundle(std::ostream& out, const SplitLog& split) {
  out.write(kBundleMagic.data(), 8);
  put<std::uint32_t>(out, kBundleVersion);
  put<std::uint64_t>(out, split.num_users);
  put<std::uint64_t>(out, split.num_items);
  for (const auto& key : split.users.keys()) put_string(out, key);
  for (const auto& key : split.items.keys()) put_string(out, key);
  for (std::size_t u = 0; u < split.num_users; ++u) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(split.train[u].size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(split.validation[u].size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(split.test[u].size()));
    for (const auto* part : {&split.train[u], &split.validation[u], &split.test[u]}) {
      for (const ItemId item : *part) put<std::int32_t>(out, item);
    }
  }
  if (!out) throw IoError("bundle write failed");
}

SplitLog read_bundle(std::istream& in) {
  check_magic(in, kBundleMagic, "dataset bundle");
  const auto version = get<std::uint32_t>(in);
  if (version != kBundleVersion) {
    throw IoError("unsupported bundle version " + std::to_string(version));
  }
  SplitLog split;
  split.num_users = get_count(in);
  split.num_items = get_count(in);
  for (std::size_t u = 0; u < split.num_users; ++u) split.users.intern(get_string(in));
  for (std::size_t i = 0; i < split.num_items; ++i) split.items.intern(get_string(in));
  if (split.users.size() != split.num_users || split.items.size() != split.num_items) {
    throw IoError("corrupt bundle: duplicate external keys");
  }
  split.train.resize(split.num_users);
  split.validation.resize(split.num_users);
  split.test.resize(split.num_users);
  for (std::size_t u = 0; u < split.num_users; ++u) {
    const auto nt = get<std::uint32_t>(in);
    const auto nv = get<std::uint32_t>(in);
    const auto ns = get<std::uint32_t>(in);
    for (auto [part, n] : {std::pair{&split.train[u], nt}, std::pair{&split.validation[u], nv},
                           std::pair{&split.test[u], ns}}) {
      part->resize(n);
      for (auto& item : *part) {
        item = get<std::int32_t>(in);
        if (item < 0 || static_cast<std::size_t>(item) >= split.num_items) {
          throw IoError("corrupt bundle: item index out of range");
        }
      }
    }
  }
  return split;
}

void save_bundle(const std::filesystem::path& path, const SplitLog& split) {
  auto out = open_out(path);
  write_bundle(out, split);
}

SplitLog load_bundle(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_bundle(in);
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  p.validate();
  const auto dims = p.dims();
  out.write(kCheckpointMagic.data(), 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, dims.dim);
  put<std::uint64_t>(out, dims.context_len);
  put<std::uint64_t>(out, dims.num_users);
  put<std::uint64_t>(out, dims.num_items);
  put<std::uint8_t>(out, ckpt.variant.feature_gate);
  put<std::uint8_t>(out, ckpt.variant.instance_gate);
  put<std::uint8_t>(out, ckpt.variant.item_item);
  put<std::uint8_t>(out, ckpt.variant.pooling == Pooling::Max ? 1 : 0);
  put<std::uint64_t>(out, ckpt.epochs);
  put_row_major(out, p.user_emb);
  put_row_major(out, p.item_in);
  put_row_major(out, p.item_out);
  put_row_major(out, p.gate_item);
  put_row_major(out, p.gate_user);
  put_row_major(out, p.gate_bias);
  put_row_major(out, p.inst_item);
  put_row_major(out, p.inst_user);
  if (!out) throw IoError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  check_magic(in, kCheckpointMagic, "checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelDims dims;
  dims.dim = get_count(in);
  dims.context_len = get_count(in);
  dims.num_users = get_count(in);
  dims.num_items = get_count(in);
  Checkpoint ckpt;
  ckpt.variant.feature_gate = get<std::uint8_t>(in) != 0;
  ckpt.variant.instance_gate = get<std::uint8_t>(in) != 0;
  ckpt.variant.item_item = get<std::uint8_t>(in) != 0;
  ckpt.variant.pooling = get<std::uint8_t>(in) != 0 ? Pooling::Max : Pooling::Avg;
  ckpt.epochs = get<std::uint64_t>(in);
  ckpt.params = ModelParams::zeros(dims);
  auto& p = ckpt.params;
  get_row_major(in, p.user_emb);
  get_row_major(in, p.item_in);
  get_row_major(in, p.item_out);
  get_row_major(in, p.gate_item);
  get_row_major(in, p.gate_user);
  get_row_major(in, p.gate_bias);
  get_row_major(in, p.inst_item);
  get_row_major(in, p.inst_user);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto out = open_out(path);
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_checkpoint(in);
}

}  // namespace hgn
