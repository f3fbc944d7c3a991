#pragma once

#include <filesystem>
#include <iosfwd>

#include "hgn/data.hpp"
#include "hgn/model.hpp"

namespace hgn {

// Dataset bundle, version 1. All integers little-endian.
//   char[8]  "HGNBNDL\0"
//   u32      version (1)
//   u64      M, u64 N
//   M x { u32 len, bytes }   external user keys by internal id
//   N x { u32 len, bytes }   external item keys by internal id
//   M x { u32 n_train, u32 n_val, u32 n_test, i32 items[n_train + n_val + n_test] }
inline constexpr std::uint32_t kBundleVersion = 1;

void write_bundle(std::ostream& out, const SplitLog& split);
SplitLog read_bundle(std::istream& in);
void save_bundle(const std::filesystem::path& path, const SplitLog& split);
SplitLog load_bundle(const std::filesystem::path& path);

// Parameter checkpoint, version 1. Integers little-endian, reals IEEE-754 binary64 LE.
//   char[8]  "HGNCKPT\0"
//   u32      version (1)
//   u64      d, |L|, M, N
//   u8       feature_gate, instance_gate, item_item, pooling (0 avg, 1 max)
//   u64      epochs trained
//   f64[]    U (d x M), E (d x N), Q (d x N), W_g1 (d x d), W_g2 (d x d),
//            b_g (d x 1), w_g3 (d x 1), W_g4 (d x |L|), each row-major
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  Variant variant;
  std::uint64_t epochs = 0;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hgn
