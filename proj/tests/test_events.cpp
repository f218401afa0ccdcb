#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ev4dgs/events.hpp"
#include "test_support.hpp"

namespace ev4dgs {
namespace {

TEST(Accumulate, EmptyStreamGivesZeroMap) {
  const EventStream s(8, 6, 0.2, false, {});
  const auto m = accumulate(s, 0.0, 1.0);
  EXPECT_EQ(m.counts.size(), 48u);
  for (auto c : m.counts) EXPECT_EQ(c, 0);
}

TEST(Accumulate, SingleEventAtPixel) {
  Event e;
  e.t = 0.5;
  e.x = 3;
  e.y = 4;
  e.p = 1;
  const EventStream s(8, 8, 0.2, false, {e});
  const Image v = accumulate(s, 0.0, 1.0).values();
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(v(y, x), (x == 3 && y == 4) ? 0.2 : 0.0);
}

TEST(Accumulate, MatchesBruteForceOnRandomStream) {
  Rng rng(101);
  const EventStream s = test::random_stream(rng, 32, 32, 10000, false);
  const double t0 = 0.2 * s.t_end(), t1 = 0.8 * s.t_end();
  EXPECT_EQ(accumulate(s, t0, t1).values().data, test::brute_accumulate(s, t0, t1));
}

TEST(Accumulate, ColorStreamMatchesBruteForcePerChannel) {
  Rng rng(102);
  const EventStream s = test::random_stream(rng, 16, 16, 4000, true);
  const double t0 = 0.1 * s.t_end(), t1 = 0.9 * s.t_end();
  const auto m = accumulate(s, t0, t1);
  EXPECT_EQ(m.channels, 3);
  EXPECT_EQ(m.values().data, test::brute_accumulate(s, t0, t1));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (static_cast<int>(bayer_channel(x, y)) != c) {
          EXPECT_EQ(m.count(c, y, x), 0);
        }
}

TEST(Accumulate, WindowIsOpenAtStartClosedAtEnd) {
  Event a, b;
  a.t = 1.0;
  b.t = 2.0;
  b.p = -1;
  const EventStream s(2, 2, 0.2, false, {a, b});
  EXPECT_EQ(accumulate(s, 1.0, 2.0).count(0, 0, 0), -1);
  EXPECT_EQ(accumulate(s, 0.5, 1.0).count(0, 0, 0), 1);
  EXPECT_EQ(accumulate(s, 1.0, 1.0).count(0, 0, 0), 0);
}

TEST(Accumulate, WindowOutsideSpanContributesNothing) {
  Rng rng(103);
  const EventStream s = test::random_stream(rng, 8, 8, 500, false);
  for (auto c : accumulate(s, s.t_end() + 1.0, s.t_end() + 2.0).counts) EXPECT_EQ(c, 0);
}

TEST(Accumulate, RejectsReversedWindow) {
  const EventStream s(4, 4, 0.2, false, {});
  EXPECT_THROW(accumulate(s, 1.0, 0.5), std::invalid_argument);
}

TEST(AccumulateProperty, AdditiveOverAdjacentWindows) {
  Rng rng(104);
  for (int trial = 0; trial < 20; ++trial) {
    const EventStream s = test::random_stream(rng, 24, 16, 3000, trial % 2 == 1);
    double t[3] = {rng.uniform(0, s.t_end()), rng.uniform(0, s.t_end()), rng.uniform(0, s.t_end())};
    std::sort(t, t + 3);
    const auto a = accumulate(s, t[0], t[1]), b = accumulate(s, t[1], t[2]), ab = accumulate(s, t[0], t[2]);
    for (std::size_t i = 0; i < ab.counts.size(); ++i) ASSERT_EQ(a.counts[i] + b.counts[i], ab.counts[i]);
  }
}

TEST(AccumulateProperty, InvariantUnderPermutingSameTimestampEvents) {
  Rng rng(105);
  std::vector<Event> ev;
  for (int k = 0; k < 200; ++k) {
    Event e;
    e.t = 0.01 * static_cast<double>(k / 20);
    e.x = static_cast<std::uint16_t>(rng.below(8));
    e.y = static_cast<std::uint16_t>(rng.below(8));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
    ev.push_back(e);
  }
  const EventStream base(8, 8, 0.2, false, ev);
  for (std::size_t b = 0; b < ev.size(); b += 20) {
    for (std::size_t i = b + 19; i > b; --i) std::swap(ev[i], ev[b + rng.below(i - b + 1)]);
  }
  const EventStream shuffled(8, 8, 0.2, false, ev);
  EXPECT_EQ(accumulate(base, 0.015, 0.075).counts, accumulate(shuffled, 0.015, 0.075).counts);
}

TEST(AccumulateProperty, EntriesAreIntegerMultiplesOfSigma) {
  Rng rng(106);
  const EventStream s = test::random_stream(rng, 16, 16, 5000, false, 0.137);
  for (double v : accumulate(s, 0.0, s.t_end()).values().data) {
    EXPECT_NEAR(v / 0.137, std::round(v / 0.137), 1e-9);
  }
}

TEST(AccumulateProperty, ThreadCountDoesNotChangeResult) {
  Rng rng(107);
  const EventStream s = test::random_stream(rng, 32, 32, 200000, false, 0.2, 1e-6);
  set_num_threads(1);
  const auto serial = accumulate(s, 0.0, s.t_end());
  set_num_threads(4);
  const auto parallel = accumulate(s, 0.0, s.t_end());
  set_num_threads(1);
  EXPECT_EQ(serial.counts, parallel.counts);
}

TEST(EventStream, RejectsInvalidEvents) {
  Event e;
  e.x = 4;
  EXPECT_THROW(EventStream(4, 4, 0.2, false, {e}), DataError);
  Event p;
  p.p = 0;
  EXPECT_THROW(EventStream(4, 4, 0.2, false, {p}), DataError);
  Event late, early;
  late.t = 2.0;
  early.t = 1.0;
  EXPECT_THROW(EventStream(4, 4, 0.2, false, {late, early}), DataError);
  EXPECT_THROW(EventStream(4, 4, 0.0, false, {}), DataError);
  EXPECT_THROW(EventStream(3, 4, 0.2, true, {}), DataError);
}

TEST(EventStream, FileRoundTrip) {
  Rng rng(108);
  const EventStream s = test::random_stream(rng, 20, 10, 1000, true, 0.25);
  test::TempDir dir("events");
  write_events(dir.file("s.ev4d"), s);
  const EventStream r = read_events(dir.file("s.ev4d"));
  EXPECT_EQ(r.width(), 20);
  EXPECT_EQ(r.height(), 10);
  EXPECT_EQ(r.sigma(), 0.25);
  EXPECT_TRUE(r.color());
  ASSERT_EQ(r.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(r.events()[i].t, s.events()[i].t);
    EXPECT_EQ(r.events()[i].x, s.events()[i].x);
    EXPECT_EQ(r.events()[i].p, s.events()[i].p);
    EXPECT_EQ(r.events()[i].channel, s.events()[i].channel);
  }
}

TEST(SampleWindow, DeterministicUnderSeed) {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_window(1.0, 0.02, a), sample_window(1.0, 0.02, b));
}

TEST(SampleWindow, StaysInHalfOpenRange) {
  Rng rng(6);
  for (int i = 0; i < 10000; ++i) {
    const double d = sample_window(3.0, 0.02, rng) - 3.0;
    EXPECT_GE(d, 0.0);
    EXPECT_LT(d, 0.02);
  }
}

TEST(SampleWindow, MeanLengthIsHalfOfMax) {
  Rng rng(7);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += sample_window(0.0, 0.02, rng);
  EXPECT_NEAR(sum / n, 0.01, 0.001);
}

TEST(SampleWindow, RejectsNonPositiveLength) {
  Rng rng(8);
  EXPECT_THROW(sample_window(0.0, 0.0, rng), std::invalid_argument);
}

TEST(ColorFilterMask, SingleCellIsRGGB) {
  const BayerMask m = color_filter_mask(2, 2);
  EXPECT_EQ(m.at(0, 0), Channel::R);
  EXPECT_EQ(m.at(1, 0), Channel::G);
  EXPECT_EQ(m.at(0, 1), Channel::G);
  EXPECT_EQ(m.at(1, 1), Channel::B);
}

TEST(ColorFilterMask, CountsFollowOneTwoOneRatio) {
  for (auto [w, h] : {std::pair{4, 4}, std::pair{6, 10}, std::pair{32, 2}}) {
    const BayerMask m = color_filter_mask(w, h);
    int n[3] = {0, 0, 0};
    for (Channel c : m.channels) ++n[static_cast<int>(c)];
    EXPECT_EQ(n[0], w * h / 4);
    EXPECT_EQ(n[1], w * h / 2);
    EXPECT_EQ(n[2], w * h / 4);
  }
}

TEST(ColorFilterMask, RejectsOddDimensions) {
  EXPECT_THROW(color_filter_mask(3, 4), std::invalid_argument);
  EXPECT_THROW(color_filter_mask(4, 5), std::invalid_argument);
  EXPECT_THROW(color_filter_mask(0, 4), std::invalid_argument);
}

}  // namespace
}  // namespace ev4dgs
