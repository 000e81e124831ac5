#include <gtest/gtest.h>

#include <sstream>

#include "rankscope/checkpoint.hpp"
#include "test_util.hpp"

using namespace rankscope;

namespace {

std::string serialize(const Model& m) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, m);
  return os.str();
}

Model deserialize(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_checkpoint(is);
}

EncoderConfig tiny() {
  EncoderConfig c;
  c.depth = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.n_classes = 3;
  c.seq_len = 2;
  return c;
}

}  // namespace

TEST(Checkpoint, TeacherRoundTripIsBitExact) {
  const auto m = build_teacher(tiny(), 17);
  const auto bytes = serialize(m);
  const auto back = deserialize(bytes);
  EXPECT_EQ(back.config, m.config);
  EXPECT_FALSE(back.rank.has_value());
  const auto pa = m.parameters(), pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].tensor.shape(), pb[i].tensor.shape());
    for (std::size_t j = 0; j < pa[i].tensor.size(); ++j)
      ASSERT_EQ(std::bit_cast<std::uint64_t>(pa[i].tensor[j]), std::bit_cast<std::uint64_t>(pb[i].tensor[j]));
  }
  EXPECT_EQ(serialize(back), bytes);
}

TEST(Checkpoint, StudentRoundTripKeepsRank) {
  const auto s = factorize_student(build_teacher(tiny(), 3), 2);
  const auto back = deserialize(serialize(s));
  ASSERT_TRUE(back.rank.has_value());
  EXPECT_EQ(*back.rank, 2u);
  EXPECT_EQ(serialize(back), serialize(s));
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = rankscope::testing::temp_dir("ckpt");
  const auto m = build_teacher(tiny(), 5);
  save_checkpoint((dir / "m.ckpt").string(), m);
  EXPECT_EQ(serialize(load_checkpoint((dir / "m.ckpt").string())), serialize(m));
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), FormatError);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const auto bytes = serialize(build_teacher(tiny(), 5));
  EXPECT_THROW(deserialize("NOTACKPT"), FormatError);
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize(bytes + "x"), FormatError);
  EXPECT_THROW(deserialize(bytes.substr(0, 20)), FormatError);

  // Header edits: change a shape so it no longer matches the architecture.
  std::string edited = bytes;
  const auto pos = edited.find("[12,8]");
  ASSERT_NE(pos, std::string::npos);
  edited.replace(pos, 6, "[8,12]");
  EXPECT_THROW(deserialize(edited), FormatError);
}
