#include <gtest/gtest.h>

#include <cstdlib>
#include <limits>
#include <sstream>

#include "tripletkit/checkpoint.hpp"
#include "tripletkit/csv_io.hpp"
#include "tripletkit/datagen.hpp"

namespace tripletkit {
namespace {

TEST(FormatDouble, RoundTripsExactly) {
  for (double v : {0.1, -1e-300, 1.0 / 3.0, 12345.678, std::numeric_limits<double>::denorm_min()})
    EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
}

TEST(DatasetCsv, RoundTripIsByteStable) {
  GenSpec g;
  g.num_identities = 5;
  g.items_per_identity = 3;
  g.feature_dim = 4;
  const auto ds = generate(g);
  std::ostringstream a;
  write_dataset_csv(a, ds);
  std::istringstream in(a.str());
  const auto back = read_dataset_csv(in);
  EXPECT_EQ(back.features(), ds.features());
  EXPECT_EQ(back.pids(), ds.pids());
  std::ostringstream b;
  write_dataset_csv(b, back);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, 24), "item_id,pid,cam,f0,f1,f2");
}

TEST(DatasetCsv, RejectsMalformedInput) {
  auto parse = [](const std::string& s, char prefix = 0) {
    std::istringstream in(s);
    return read_dataset_csv(in, prefix);
  };
  EXPECT_THROW(parse(""), DataError);
  EXPECT_THROW(parse("id,pid,cam,f0\n"), DataError);
  EXPECT_THROW(parse("item_id,pid,cam,f0\n1,2,3,abc\n"), DataError);
  EXPECT_THROW(parse("item_id,pid,cam,f0,f1\n1,2,3,4\n"), DimensionError);
  EXPECT_THROW(parse("item_id,pid,cam,f0\n1,2,3,4\n1,2,3,4\n"), DataError);
  EXPECT_THROW(parse("item_id,pid,cam,f0\n1,2,3,4\n", 'e'), DataError);
  EXPECT_EQ(parse("item_id,pid,cam,e0\r\n1,2,3,4\r\n", 'e').size(), 1u);
}

TEST(Checkpoint, RoundTripIsByteStable) {
  Checkpoint ck;
  ck.params = init_params({5, 4, 3}, 7);
  ck.params.layers[1].bias[0] = 0.1;
  ck.optim = AdamState::for_params(ck.params);
  ck.optim->step_count = 12;
  ck.optim->beta1 = 0.5;
  const auto text = dump_checkpoint(ck);
  const auto back = parse_checkpoint(text);
  EXPECT_EQ(back.params, ck.params);
  ASSERT_TRUE(back.optim.has_value());
  EXPECT_EQ(*back.optim, *ck.optim);
  EXPECT_EQ(dump_checkpoint(back), text);
}

TEST(Checkpoint, RejectsMalformedInput) {
  EXPECT_THROW(parse_checkpoint("{"), DataError);
  EXPECT_THROW(parse_checkpoint("{}"), DataError);
  Checkpoint ck;
  ck.params = init_params({3, 2}, 1);
  auto j = to_json(ck);
  j["layer_widths"] = {3, 4};
  EXPECT_THROW(checkpoint_from_json(j), DataError);
}

}  // namespace
}  // namespace tripletkit
