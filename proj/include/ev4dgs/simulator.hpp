#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ev4dgs/core/error.hpp"
#include "ev4dgs/core/image.hpp"
#include "ev4dgs/core/parallel.hpp"
#include "ev4dgs/events.hpp"
#include "ev4dgs/io/image_io.hpp"

namespace ev4dgs {

inline constexpr double kLogFloor = 1e-3;

struct FrameSequence {
  std::vector<Image> frames;
  std::vector<double> timestamps;

  void validate() const {
    if (frames.size() < 2 || frames.size() != timestamps.size()) {
      throw DataError("frame sequence needs at least two frames with one timestamp each");
    }
    for (std::size_t i = 1; i < frames.size(); ++i) {
      if (!frames[i].same_shape(frames[0])) throw DataError("frames differ in shape");
      if (!(timestamps[i] > timestamps[i - 1])) throw DataError("frame timestamps must increase strictly");
    }
  }
};

inline Image log_intensity(const Image& image, double eps = kLogFloor) {
  Image out = image;
  for (auto& v : out.data) v = std::log(std::max(v, eps));
  return out;
}

/// Streaming ESIM-style simulator. Per pixel it keeps the log level at the
/// last emitted event (base + n * sigma); between two frames log intensity is
/// interpolated linearly in time and every threshold crossing emits one event.
class EventSimulator {
 public:
  /// `color` samples channel bayer(x,y) of a 3-channel frame at each pixel.
  EventSimulator(const Image& first, double t0, double sigma, bool color, double eps = kLogFloor)
      : width_(first.width), height_(first.height), sigma_(sigma), color_(color), eps_(eps), t_last_(t0) {
    if (!(sigma > 0.0)) throw std::invalid_argument("simulate: sigma must be positive");
    if (color && first.channels != 3) throw DataError("color simulation needs three-channel frames");
    if (!color && first.channels != 1) throw DataError("mono simulation needs one-channel frames");
    if (color && (width_ % 2 || height_ % 2)) throw DataError("color simulation needs even frame dimensions");
    const std::size_t n = first.pixels();
    base_.resize(n);
    last_.resize(n);
    level_.assign(n, 0);
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
        base_[i] = last_[i] = sample(first, x, y);
      }
  }

  void feed(const Image& frame, double t) {
    if (frame.width != width_ || frame.height != height_) throw DataError("frame size changed mid-sequence");
    if (!(t > t_last_)) throw DataError("frame timestamps must increase strictly");
    const double ta = t_last_;
    std::vector<std::vector<Event>> rows(height_);
    parallel_for(static_cast<std::size_t>(height_), [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      auto& out = rows[yy];
      for (int x = 0; x < width_; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
        const double la = last_[i];
        const double lb = sample(frame, x, y);
        std::int64_t n = level_[i];
        if (lb > la) {
          for (;;) {
            const double lvl = base_[i] + static_cast<double>(n + 1) * sigma_;
            if (lvl > lb) break;
            out.push_back(make_event(crossing_time(ta, t, la, lb, lvl), x, y, +1));
            ++n;
          }
        } else if (lb < la) {
          for (;;) {
            const double lvl = base_[i] + static_cast<double>(n - 1) * sigma_;
            if (lvl < lb) break;
            out.push_back(make_event(crossing_time(ta, t, la, lb, lvl), x, y, -1));
            --n;
          }
        }
        level_[i] = n;
        last_[i] = lb;
      }
    });
    for (auto& r : rows) events_.insert(events_.end(), r.begin(), r.end());
    t_last_ = t;
  }

  EventStream finish() {
    std::stable_sort(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    return EventStream(width_, height_, sigma_, color_, std::move(events_));
  }

 private:
  double sample(const Image& f, int x, int y) const {
    const int c = color_ ? static_cast<int>(bayer_channel(x, y)) : 0;
    return std::log(std::max(f.at(c, y, x), eps_));
  }

  Event make_event(double t, int x, int y, int p) const {
    Event e;
    e.t = t;
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.p = static_cast<std::int8_t>(p);
    e.channel = color_ ? bayer_channel(x, y) : Channel::Mono;
    return e;
  }

  static double crossing_time(double ta, double tb, double la, double lb, double level) {
    const double t = ta + (level - la) / (lb - la) * (tb - ta);
    // The crossing lies in (ta, tb]; keep it there under round-off.
    return std::clamp(t, std::nextafter(ta, tb), tb);
  }

  int width_;
  int height_;
  double sigma_;
  bool color_;
  double eps_;
  double t_last_;
  std::vector<double> base_;
  std::vector<double> last_;
  std::vector<std::int64_t> level_;
  std::vector<Event> events_;
};

inline EventStream simulate(const FrameSequence& seq, double sigma, double eps = kLogFloor) {
  seq.validate();
  if (seq.frames[0].channels != 1) throw DataError("simulate expects single-channel frames");
  EventSimulator sim(seq.frames[0], seq.timestamps[0], sigma, false, eps);
  for (std::size_t k = 1; k < seq.frames.size(); ++k) sim.feed(seq.frames[k], seq.timestamps[k]);
  return sim.finish();
}

/// Per-channel simulation at each channel's Bayer sites, merged by time.
inline EventStream simulate_color(const FrameSequence& seq, double sigma, double eps = kLogFloor) {
  seq.validate();
  if (seq.frames[0].channels != 3) throw DataError("simulate_color expects three-channel frames");
  EventSimulator sim(seq.frames[0], seq.timestamps[0], sigma, true, eps);
  for (std::size_t k = 1; k < seq.frames.size(); ++k) sim.feed(seq.frames[k], seq.timestamps[k]);
  return sim.finish();
}

/// Frames of a directory (sorted by name) at a fixed rate starting from t=0.
inline FrameSequence load_frames(const std::string& dir, double fps) {
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
  FrameSequence seq;
  const auto files = io::list_images(dir);
  for (std::size_t i = 0; i < files.size(); ++i) {
    seq.frames.push_back(io::read_linear_image(files[i]));
    seq.timestamps.push_back(static_cast<double>(i) / fps);
  }
  seq.validate();
  return seq;
}

/// Converts RGB frames to grey by channel mean; grey frames pass through.
inline Image to_grey(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    double s = 0.0;
    for (int c = 0; c < img.channels; ++c) s += img.data[c * img.pixels() + i];
    out.data[i] = s / img.channels;
  }
  return out;
}

}  // namespace ev4dgs
