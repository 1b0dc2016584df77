// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "retinev/binary_io.hpp"
#include "retinev/events.hpp"

// File formats for events and FPE maps.
//
// EVTM v1 (little-endian):
//   "EVTM" | u16 width | u16 height | u64 count | count x {u16 x, u16 y, i8 p, u8 0, u32 t_us}
// FPE1:
//   "FPE1" | u16 width | u16 height | width*height f32 row-major, NaN = missing
// Event CSV: header line "x,y,t,p", one event per line.

namespace retinev {

inline constexpr std::size_t kEvtmHeaderBytes = 16;
inline constexpr std::size_t kEvtmRecordBytes = 10;

namespace detail {

inline void check_u16_geometry(int width, int height, const char* what) {
  if (width <= 0 || height <= 0 || width > 0xffff || height > 0xffff) {
    throw ValidationError(std::string(what) + ": geometry does not fit in u16");
  }
}

}  // namespace detail

/// Timestamps are rounded to whole microseconds.
inline std::vector<unsigned char> encode_evtm(const EventStream& s) {
  detail::check_u16_geometry(s.width(), s.height(), "EVTM");
  io::ByteWriter w;
  w.put_bytes("EVTM");
  w.put(static_cast<std::uint16_t>(s.width()));
  w.put(static_cast<std::uint16_t>(s.height()));
  w.put(static_cast<std::uint64_t>(s.events().size()));
  for (const auto& e : s.events()) {
    const double t = std::round(e.t);
    if (t > 4294967295.0) throw ValidationError("EVTM: timestamp exceeds u32 microseconds");
    w.put(static_cast<std::uint16_t>(e.x));
    w.put(static_cast<std::uint16_t>(e.y));
    w.put(static_cast<std::int8_t>(e.p));
    w.put(static_cast<std::uint8_t>(0));
    w.put(static_cast<std::uint32_t>(t));
  }
  return w.bytes();
}

inline EventStream decode_evtm(const std::vector<unsigned char>& bytes, const std::string& context = "EVTM") {
  io::ByteReader r(bytes.data(), bytes.size(), context);
  if (r.get_bytes(4) != "EVTM") throw CorruptFileError(context + ": bad magic");
  const int width = r.get<std::uint16_t>();
  const int height = r.get<std::uint16_t>();
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / kEvtmRecordBytes) throw CorruptFileError(context + ": truncated event records");
  std::vector<Event> ev;
  ev.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.x = r.get<std::uint16_t>();
    e.y = r.get<std::uint16_t>();
    e.p = r.get<std::int8_t>();
    r.get<std::uint8_t>();
    e.t = r.get<std::uint32_t>();
    ev.push_back(e);
  }
  if (r.remaining() != 0) throw CorruptFileError(context + ": trailing bytes after event records");
  try {
    return {width, height, std::move(ev)};
  } catch (const ValidationError& err) {
    throw CorruptFileError(context + ": " + err.what());
  }
}

inline void write_evtm(const EventStream& s, const std::filesystem::path& path) {
  io::write_file(path, encode_evtm(s));
}

inline EventStream read_evtm(const std::filesystem::path& path) {
  return decode_evtm(io::read_file(path), path.string());
}

/// CSV carries no geometry, so it is supplied by the caller.
inline void write_events_csv(const EventStream& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path.string());
  out << "x,y,t,p\n";
  out.precision(17);
  for (const auto& e : s.events()) out << e.x << ',' << e.y << ',' << e.t << ',' << e.p << '\n';
}

inline EventStream read_events_csv(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,y,t,p", 0) != 0) {
    throw CorruptFileError(path.string() + ": missing x,y,t,p header");
  }
  std::vector<Event> ev;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    Event e;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ls >> e.x >> c1 >> e.y >> c2 >> e.t >> c3 >> e.p) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw CorruptFileError(path.string() + ": malformed line " + std::to_string(lineno));
    }
    ev.push_back(e);
  }
  return {width, height, std::move(ev)};
}

inline std::vector<unsigned char> encode_fpe1(const FpeMap& m) {
  detail::check_u16_geometry(m.width(), m.height(), "FPE1");
  io::ByteWriter w;
  w.put_bytes("FPE1");
  w.put(static_cast<std::uint16_t>(m.width()));
  w.put(static_cast<std::uint16_t>(m.height()));
  for (double v : m.values()) w.put(is_missing(v) ? std::numeric_limits<float>::quiet_NaN() : static_cast<float>(v));
  return w.bytes();
}

inline FpeMap decode_fpe1(const std::vector<unsigned char>& bytes, const std::string& context = "FPE1") {
  io::ByteReader r(bytes.data(), bytes.size(), context);
  if (r.get_bytes(4) != "FPE1") throw CorruptFileError(context + ": bad magic");
  const int width = r.get<std::uint16_t>();
  const int height = r.get<std::uint16_t>();
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (r.remaining() != n * sizeof(float)) throw CorruptFileError(context + ": payload size does not match geometry");
  std::vector<double> t(n);
  for (auto& v : t) {
    const float f = r.get<float>();
    v = std::isnan(f) ? kMissing : static_cast<double>(f);
  }
  try {
    return {width, height, std::move(t)};
  } catch (const ValidationError& err) {
    throw CorruptFileError(context + ": " + err.what());
  }
}

inline void write_fpe1(const FpeMap& m, const std::filesystem::path& path) { io::write_file(path, encode_fpe1(m)); }

inline FpeMap read_fpe1(const std::filesystem::path& path) { return decode_fpe1(io::read_file(path), path.string()); }

/// Rounds every valid timestamp through f32, the precision FPE1 stores.
inline FpeMap quantize_to_fpe1(const FpeMap& m) {
  std::vector<double> t(m.values());
  for (auto& v : t) {
    if (!is_missing(v)) v = static_cast<double>(static_cast<float>(v));
  }
  return {m.width(), m.height(), std::move(t)};
}

}  // namespace retinev
