// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "retinev/event_io.hpp"
#include "test_util.hpp"

namespace retinev {
namespace {

EventStream sample_stream() {
  return {5, 4, {{0, 0, 12.0, 1}, {4, 3, 0.0, -1}, {2, 1, 4000000.0, 1}, {0, 0, 3.0, -1}}};
}

TEST(Evtm, RoundTrip) {
  const EventStream s = sample_stream();
  const auto bytes = encode_evtm(s);
  EXPECT_EQ(bytes.size(), kEvtmHeaderBytes + 4 * kEvtmRecordBytes);
  EXPECT_EQ(decode_evtm(bytes), s);
}

TEST(Evtm, RoundsToMicroseconds) {
  const EventStream s(1, 1, {{0, 0, 2.6, 1}});
  EXPECT_EQ(decode_evtm(encode_evtm(s)).events()[0].t, 3.0);
}

TEST(Evtm, TruncationAndCorruptionAreReported) {
  auto bytes = encode_evtm(sample_stream());
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(decode_evtm(cut), CorruptFileError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_evtm(bad), CorruptFileError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_evtm(extra), CorruptFileError);
  auto outside = bytes;
  outside[kEvtmHeaderBytes] = 9;  // x of first record beyond width 5
  EXPECT_THROW(decode_evtm(outside), CorruptFileError);
}

TEST(EventCsv, RoundTripAndMalformedLine) {
  testing::TempDir dir("csv");
  const EventStream s(3, 2, {{0, 1, 1.25, 1}, {2, 0, 7.5, -1}});
  write_events_csv(s, dir / "e.csv");
  EXPECT_EQ(read_events_csv(dir / "e.csv", 3, 2), s);
  {
    std::ofstream out(dir / "bad.csv");
    out << "x,y,t,p\n0,0,abc,1\n";
  }
  EXPECT_THROW(read_events_csv(dir / "bad.csv", 3, 2), CorruptFileError);
  {
    std::ofstream out(dir / "nohdr.csv");
    out << "0,0,1,1\n";
  }
  EXPECT_THROW(read_events_csv(dir / "nohdr.csv", 3, 2), CorruptFileError);
}

TEST(Fpe1, RoundTripThroughFloat) {
  const FpeMap m(3, 2, {1.0, kMissing, 0.1, 1e6, 33.3, 2.0});
  const FpeMap back = decode_fpe1(encode_fpe1(m));
  EXPECT_EQ(back, quantize_to_fpe1(m));
  EXPECT_TRUE(back.missing(1));
  EXPECT_EQ(back[4], static_cast<double>(33.3f));
}

TEST(Fpe1, RejectsBadPayload) {
  auto bytes = encode_fpe1(FpeMap(2, 2, {1, 2, 3, 4}));
  bytes.pop_back();
  EXPECT_THROW(decode_fpe1(bytes), CorruptFileError);
  auto neg = encode_fpe1(FpeMap(1, 1, {1}));
  const float v = -1.0f;
  std::memcpy(neg.data() + 8, &v, 4);
  EXPECT_THROW(decode_fpe1(neg), CorruptFileError);
}

TEST(Fpe1, FileRoundTrip) {
  testing::TempDir dir("fpe");
  const FpeMap m(2, 1, {5.0, kMissing});
  write_fpe1(m, dir / "m.fpe");
  EXPECT_EQ(read_fpe1(dir / "m.fpe"), m);
  EXPECT_THROW(read_fpe1(dir / "absent.fpe"), IoError);
}

}  // namespace
}  // namespace retinev
