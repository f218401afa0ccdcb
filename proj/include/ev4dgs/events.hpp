#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ev4dgs/core/error.hpp"
#include "ev4dgs/core/image.hpp"
#include "ev4dgs/core/parallel.hpp"
#include "ev4dgs/core/rng.hpp"
#include "ev4dgs/io/binary.hpp"

namespace ev4dgs {

enum class Channel : std::uint8_t { R = 0, G = 1, B = 2, Mono = 255 };

/// RGGB Bayer tiling: even rows R G R G ..., odd rows G B G B ...
inline Channel bayer_channel(int x, int y) {
  const bool odd_x = x & 1;
  const bool odd_y = y & 1;
  if (!odd_y) return odd_x ? Channel::G : Channel::R;
  return odd_x ? Channel::B : Channel::G;
}

struct BayerMask {
  int width = 0;
  int height = 0;
  std::vector<Channel> channels;

  Channel at(int x, int y) const { return channels[static_cast<std::size_t>(y) * width + x]; }
};

inline BayerMask color_filter_mask(int width, int height) {
  if (width <= 0 || height <= 0 || width % 2 != 0 || height % 2 != 0) {
    throw std::invalid_argument("color filter mask needs positive even dimensions");
  }
  BayerMask m{width, height, std::vector<Channel>(static_cast<std::size_t>(width) * height)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m.channels[static_cast<std::size_t>(y) * width + x] = bayer_channel(x, y);
  return m;
}

struct Event {
  double t = 0.0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;
  Channel channel = Channel::Mono;
};

/// Immutable, time-sorted event container with time-window lookup.
class EventStream {
 public:
  EventStream() = default;

  EventStream(int width, int height, double sigma, bool color, std::vector<Event> events)
      : width_(width), height_(height), sigma_(sigma), color_(color), events_(std::move(events)) {
    if (width <= 0 || height <= 0 || width > 65535 || height > 65535) throw DataError("bad event sensor size");
    if (!(sigma > 0.0)) throw DataError("contrast threshold must be positive");
    if (color && (width % 2 || height % 2)) throw DataError("color streams need even sensor dimensions");
    for (std::size_t i = 0; i < events_.size(); ++i) {
      Event& e = events_[i];
      if (e.x >= width || e.y >= height) throw DataError("event outside the sensor");
      if (e.p != 1 && e.p != -1) throw DataError("event polarity must be +1 or -1");
      if (!(e.t >= 0.0)) throw DataError("event timestamps must be non-negative");
      if (i > 0 && e.t < events_[i - 1].t) throw DataError("events must be sorted by time");
      e.channel = color ? bayer_channel(e.x, e.y) : Channel::Mono;
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double sigma() const { return sigma_; }
  bool color() const { return color_; }
  int channels() const { return color_ ? 3 : 1; }
  std::span<const Event> events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  double t_begin() const { return events_.empty() ? 0.0 : events_.front().t; }
  double t_end() const { return events_.empty() ? 0.0 : events_.back().t; }

  /// Index range of events with t0 < t <= t1.
  std::pair<std::size_t, std::size_t> range_open_closed(double t0, double t1) const {
    auto by_time = [](double t, const Event& e) { return t < e.t; };
    const auto lo = std::upper_bound(events_.begin(), events_.end(), t0, by_time);
    const auto hi = std::upper_bound(lo, events_.end(), t1, by_time);
    return {static_cast<std::size_t>(lo - events_.begin()), static_cast<std::size_t>(hi - events_.begin())};
  }

  /// Index range of events with t0 <= t <= t1.
  std::pair<std::size_t, std::size_t> range_closed(double t0, double t1) const {
    auto lo = std::lower_bound(events_.begin(), events_.end(), t0,
                               [](const Event& e, double t) { return e.t < t; });
    auto hi = std::upper_bound(lo, events_.end(), t1, [](double t, const Event& e) { return t < e.t; });
    return {static_cast<std::size_t>(lo - events_.begin()), static_cast<std::size_t>(hi - events_.begin())};
  }

 private:
  int width_ = 1;
  int height_ = 1;
  double sigma_ = 0.2;
  bool color_ = false;
  std::vector<Event> events_;
};

/// Signed per-pixel event counts over (t0, t1]; values are sigma * count.
/// Color streams keep one plane per channel, zero off the channel's Bayer sites.
struct AccumulatedDifferenceMap {
  int width = 0;
  int height = 0;
  int channels = 1;
  double sigma = 0.2;
  double t0 = 0.0;
  double t1 = 0.0;
  std::vector<std::int32_t> counts;

  std::int32_t count(int c, int y, int x) const {
    return counts[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double value(int c, int y, int x) const { return sigma * count(c, y, x); }

  Image values() const {
    Image img(width, height, channels);
    for (std::size_t i = 0; i < counts.size(); ++i) img.data[i] = sigma * counts[i];
    return img;
  }
};

inline AccumulatedDifferenceMap accumulate(const EventStream& stream, double t0, double t1) {
  AccumulatedDifferenceMap map;
  map.width = stream.width();
  map.height = stream.height();
  map.channels = stream.channels();
  map.sigma = stream.sigma();
  map.t0 = t0;
  map.t1 = t1;
  const std::size_t plane = static_cast<std::size_t>(map.width) * map.height;
  map.counts.assign(plane * map.channels, 0);
  if (t1 < t0) throw std::invalid_argument("accumulate: t0 must not exceed t1");

  const auto [lo, hi] = stream.range_open_closed(t0, t1);
  const auto events = stream.events();
  auto add = [&](std::vector<std::int32_t>& counts, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const Event& ev = events[i];
      const std::size_t c = ev.channel == Channel::Mono ? 0 : static_cast<std::size_t>(ev.channel);
      counts[c * plane + static_cast<std::size_t>(ev.y) * map.width + ev.x] += ev.p;
    }
  };

  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t n = hi - lo;
  if (n <= kChunk || num_threads() <= 1) {
    add(map.counts, lo, hi);
    return map;
  }
  // Integer partial sums: the result is identical for any partition.
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<std::vector<std::int32_t>> partial(chunks);
  parallel_for(chunks, [&](std::size_t k) {
    partial[k].assign(map.counts.size(), 0);
    add(partial[k], lo + k * kChunk, std::min(hi, lo + (k + 1) * kChunk));
  });
  for (const auto& p : partial)
    for (std::size_t i = 0; i < p.size(); ++i) map.counts[i] += p[i];
  return map;
}

/// Window end drawn uniformly from [t_i, t_i + l_max).
inline double sample_window(double t_i, double l_max, Rng& rng) {
  if (!(l_max > 0.0)) throw std::invalid_argument("sample_window: l_max must be positive");
  return t_i + l_max * rng.uniform();
}

// Binary event file: "EV4D", u16 version, u16 width, u16 height, f64 sigma,
// u8 color flag, then 13-byte records (f64 t, u16 x, u16 y, i8 p).
inline constexpr std::uint16_t kEventFileVersion = 1;

inline void write_events(const std::string& path, const EventStream& s) {
  io::ByteWriter w;
  w.put_magic("EV4D");
  w.put<std::uint16_t>(kEventFileVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(s.width()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(s.height()));
  w.put<double>(s.sigma());
  w.put<std::uint8_t>(s.color() ? 1 : 0);
  for (const Event& e : s.events()) {
    w.put<double>(e.t);
    w.put<std::uint16_t>(e.x);
    w.put<std::uint16_t>(e.y);
    w.put<std::int8_t>(e.p);
  }
  w.save(path);
}

inline EventStream read_events(const std::string& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("EV4D");
  const auto version = r.get<std::uint16_t>();
  if (version != kEventFileVersion) throw DataError("unsupported event file version");
  const int width = r.get<std::uint16_t>();
  const int height = r.get<std::uint16_t>();
  const double sigma = r.get<double>();
  const bool color = r.get<std::uint8_t>() != 0;
  if (r.remaining() % 13 != 0) throw DataError("event file has a truncated record");
  std::vector<Event> events(r.remaining() / 13);
  for (auto& e : events) {
    e.t = r.get<double>();
    e.x = r.get<std::uint16_t>();
    e.y = r.get<std::uint16_t>();
    e.p = r.get<std::int8_t>();
  }
  return EventStream(width, height, sigma, color, std::move(events));
}

}  // namespace ev4dgs
