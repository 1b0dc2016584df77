// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "retinev/error.hpp"
#include "retinev/raster.hpp"

// Temporal-mapping events: first-positive-event extraction and the
// timestamp <-> illuminance relation E = k / t_fpe, k = C U^2 / (2 eta A).

namespace retinev {

struct Event {
  int x = 0;
  int y = 0;
  double t = 0.0;  // microseconds since the transmittance step
  int p = 1;       // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

/// Unordered events from a sensor of known geometry.
class EventStream {
 public:
  EventStream() = default;
  EventStream(int width, int height, std::vector<Event> events)
      : width_(width), height_(height), events_(std::move(events)) {
    if (width_ <= 0 || height_ <= 0) throw ValidationError("EventStream: non-positive geometry");
    for (const auto& e : events_) {
      if (e.x < 0 || e.x >= width_ || e.y < 0 || e.y >= height_) {
        throw ValidationError("EventStream: event outside sensor at (" + std::to_string(e.x) + "," +
                              std::to_string(e.y) + ")");
      }
      if (!std::isfinite(e.t) || e.t < 0) throw ValidationError("EventStream: timestamp must be finite and >= 0");
      if (e.p != 1 && e.p != -1) throw ValidationError("EventStream: polarity must be +1 or -1");
    }
  }

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] const std::vector<Event>& events() const { return events_; }

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Event> events_;
};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// Smallest timestamp an FPE map may hold. A positive event stamped exactly 0
/// fired within the first microsecond tick and is recorded at half a tick.
inline constexpr double kMinFpe = 0.5;

namespace detail {

/// Row-major per-pixel raster of doubles where NaN marks a missing pixel.
class MissingRaster {
 public:
  MissingRaster() = default;
  MissingRaster(int width, int height, std::vector<double> values)
      : width_(width), height_(height), values_(std::move(values)) {
    if (width_ <= 0 || height_ <= 0) throw ValidationError("map: non-positive geometry");
    if (values_.size() != static_cast<std::size_t>(width_) * height_) {
      throw ValidationError("map: data length does not match geometry");
    }
  }

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  [[nodiscard]] bool missing(std::size_t i) const { return is_missing(values_[i]); }

  [[nodiscard]] std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(), [](double v) { return !is_missing(v); }));
  }
  /// Maximum over non-missing entries; NaN when every entry is missing.
  [[nodiscard]] double max_valid() const {
    double m = kMissing;
    for (double v : values_) {
      if (!is_missing(v) && (is_missing(m) || v > m)) m = v;
    }
    return m;
  }
  [[nodiscard]] double min_valid() const {
    double m = kMissing;
    for (double v : values_) {
      if (!is_missing(v) && (is_missing(m) || v < m)) m = v;
    }
    return m;
  }

  bool operator==(const MissingRaster& o) const {
    if (width_ != o.width_ || height_ != o.height_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const double a = values_[i];
      const double b = o.values_[i];
      if (is_missing(a) != is_missing(b)) return false;
      if (!is_missing(a) && a != b) return false;
    }
    return true;
  }

 protected:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

}  // namespace detail

/// Per-pixel first-positive-event timestamp (microseconds) or kMissing.
class FpeMap : public detail::MissingRaster {
 public:
  FpeMap() = default;
  FpeMap(int width, int height, std::vector<double> t) : MissingRaster(width, height, std::move(t)) {
    for (double v : values_) {
      if (!is_missing(v) && (!std::isfinite(v) || v <= 0)) {
        throw ValidationError("FpeMap: timestamps must be finite and > 0");
      }
    }
  }
  static FpeMap all_missing(int width, int height) {
    return {width, height, std::vector<double>(static_cast<std::size_t>(width) * height, kMissing)};
  }
};

/// Per-pixel illuminance in arbitrary linear units (>= 0) or kMissing.
class IlluminanceMap : public detail::MissingRaster {
 public:
  IlluminanceMap() = default;
  IlluminanceMap(int width, int height, std::vector<double> e) : MissingRaster(width, height, std::move(e)) {
    for (double v : values_) {
      if (!is_missing(v) && (!std::isfinite(v) || v < 0)) {
        throw ValidationError("IlluminanceMap: values must be finite and >= 0");
      }
    }
  }
};

/// Per-pixel contrast threshold c > 0.
class ThresholdField {
 public:
  ThresholdField() = default;
  ThresholdField(int width, int height, std::vector<double> c) : width_(width), height_(height), c_(std::move(c)) {
    if (c_.size() != static_cast<std::size_t>(width_) * height_) {
      throw ValidationError("ThresholdField: data length does not match geometry");
    }
    for (double v : c_) {
      if (!(v > 0) || !std::isfinite(v)) throw ValidationError("ThresholdField: thresholds must be finite and > 0");
    }
  }
  static ThresholdField uniform(int width, int height, double c) {
    return {width, height, std::vector<double>(static_cast<std::size_t>(width) * height, c)};
  }

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] double operator[](std::size_t i) const { return c_[i]; }
  [[nodiscard]] const std::vector<double>& values() const { return c_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> c_;
};

/// Pixel electrical constants. k is the energy-balance constant relating
/// illuminance and first-event latency.
struct SensorConstants {
  double eta = 0.5;                // photoelectric conversion efficiency
  double area = 1.0;               // photosensitive area, m^2
  double capacitance = 1.0;        // F
  double threshold_voltage = 1.0;  // V

  [[nodiscard]] double k() const {
    return capacitance * threshold_voltage * threshold_voltage / (2.0 * eta * area);
  }

  void validate() const {
    if (!(eta > 0) || !(area > 0) || !(capacitance > 0) || !(threshold_voltage > 0)) {
      throw ValidationError("SensorConstants: every field must be > 0");
    }
    if (!(k() > 0) || !std::isfinite(k())) throw ValidationError("SensorConstants: k must be finite and > 0");
  }

  friend bool operator==(const SensorConstants&, const SensorConstants&) = default;
};

/// Luminance floor that keeps simulated timestamps finite on black pixels.
inline constexpr double kDefaultIlluminanceFloor = 1e-4;

/// Earliest positive-polarity timestamp at every pixel; kMissing where none exists.
inline FpeMap extract_fpe(const EventStream& s) {
  std::vector<double> t(static_cast<std::size_t>(s.width()) * s.height(), kMissing);
  for (const auto& e : s.events()) {
    if (e.p != 1) continue;
    double& slot = t[static_cast<std::size_t>(e.y) * s.width() + e.x];
    const double v = std::max(e.t, kMinFpe);
    if (is_missing(slot) || v < slot) slot = v;
  }
  return {s.width(), s.height(), std::move(t)};
}

/// E = k / t_fpe; missing pixels stay missing.
inline IlluminanceMap illuminance_from_fpe(const FpeMap& m, double k) {
  if (!(k > 0) || !std::isfinite(k)) throw DomainError("illuminance_from_fpe: k must be finite and > 0");
  std::vector<double> e(m.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (m.missing(i)) {
      e[i] = kMissing;
      continue;
    }
    if (m[i] == 0.0) throw DomainError("illuminance_from_fpe: zero timestamp");
    e[i] = k / m[i];
  }
  return {m.width(), m.height(), std::move(e)};
}

/// t_fpe = k / max(E, floor); missing pixels stay missing.
inline FpeMap fpe_from_illuminance(const IlluminanceMap& e, double k, double floor = kDefaultIlluminanceFloor) {
  if (!(k > 0) || !std::isfinite(k)) throw DomainError("fpe_from_illuminance: k must be finite and > 0");
  if (!(floor > 0)) throw DomainError("fpe_from_illuminance: floor must be > 0");
  std::vector<double> t(e.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = e.missing(i) ? kMissing : k / std::max(e[i], floor);
  return {e.width(), e.height(), std::move(t)};
}

/// Ideal temporal-mapping response to a transmittance step:
/// t_fpe = k * c / max(L, floor), with L the luminance of `gt`.
inline FpeMap simulate_fpe_map(const LinearRaster& gt, const SensorConstants& sensor, const ThresholdField& thresholds,
                               double floor = kDefaultIlluminanceFloor) {
  sensor.validate();
  const LinearRaster lum = luminance(gt);
  if (thresholds.width() != lum.width() || thresholds.height() != lum.height()) {
    throw ValidationError("simulate_fpe_map: threshold field geometry mismatch");
  }
  const double k = sensor.k();
  std::vector<double> t(lum.pixels());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = k * thresholds[i] / std::max(lum.data()[i], floor);
  return {lum.width(), lum.height(), std::move(t)};
}

/// One positive event per valid pixel at round(t_fpe / tick) ticks (at least
/// one tick), preceded by a negative event at t = 0 so streams are not trivially sorted.
inline EventStream events_from_fpe(const FpeMap& m, double tick_us = 1.0) {
  std::vector<Event> ev;
  ev.reserve(m.valid_count() * 2);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      const double t = m.at(x, y);
      if (is_missing(t)) continue;
      ev.push_back({x, y, std::max(1.0, std::round(t / tick_us)) * tick_us, 1});
      ev.push_back({x, y, 0.0, -1});
    }
  }
  return {m.width(), m.height(), std::move(ev)};
}

}  // namespace retinev
