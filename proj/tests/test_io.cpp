#include <doctest.h>

#include <sstream>

#include "hgn/error.hpp"
#include "hgn/io.hpp"
#include "hgn/synthetic.hpp"

using namespace hgn;

namespace {

SplitLog sample_split() {
  SyntheticConfig c;
  c.users = 40;
  c.items = 60;
  c.min_len = 12;
  c.max_len = 25;
  c.seed = 3;
  const auto rows = generate_ratings(c);
  FilterRules rules;
  rules.min_item_users = 1;
  rules.min_user_interactions = 10;
  return chronological_split(build_interactions(rows, rules));
}

}  // namespace

TEST_CASE("bundle round trip is exact and re-serialises byte for byte") {
  const auto s = sample_split();
  std::stringstream a;
  write_bundle(a, s);
  const auto back = read_bundle(a);
  CHECK(back == s);
  std::stringstream b;
  write_bundle(b, back);
  CHECK(a.str() == b.str());
  CHECK(a.str().substr(0, 7) == "HGNBNDL");
}

TEST_CASE("checkpoint round trip preserves every double and the variant") {
  Checkpoint c{ModelParams::random({5, 3, 4, 9}, 11), Variant::parse("BPR+F+I+max"), 17};
  c.params.gate_bias(2) = -0.0;
  std::stringstream a;
  write_checkpoint(a, c);
  const auto back = read_checkpoint(a);
  CHECK(back.params == c.params);
  CHECK(back.variant.tag() == "BPR+F+I+max");
  CHECK(back.epochs == 17);
  std::stringstream b;
  write_checkpoint(b, back);
  CHECK(a.str() == b.str());
}

TEST_CASE("corrupt headers and truncation are rejected") {
  std::stringstream bad("NOTABNDL\x01\x00\x00\x00");
  CHECK_THROWS_AS(read_bundle(bad), IoError);

  Checkpoint c{ModelParams::random({2, 1, 1, 2}, 1), Variant::hgn(), 0};
  std::stringstream ok;
  write_checkpoint(ok, c);
  auto bytes = ok.str();
  bytes[8] = 9;  // version
  std::stringstream v(bytes);
  CHECK_THROWS_AS(read_checkpoint(v), IoError);

  std::stringstream trunc(ok.str().substr(0, ok.str().size() - 3));
  CHECK_THROWS_AS(read_checkpoint(trunc), IoError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.hgnc"), IoError);
}
