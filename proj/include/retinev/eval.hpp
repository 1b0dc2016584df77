// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "retinev/dataset.hpp"
#include "retinev/metrics.hpp"
#include "retinev/model.hpp"

namespace retinev {

struct MetricRow {
  std::string name;
  double psnr = 0;
  double ssim = 0;
  double input_psnr = 0;  // low-light input against the reference
  double input_ssim = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;
};

inline MetricReport summarize(std::vector<MetricRow> rows) {
  MetricReport r;
  r.mean.name = "MEAN";
  for (const auto& row : rows) {
    r.mean.psnr += row.psnr;
    r.mean.ssim += row.ssim;
    r.mean.input_psnr += row.input_psnr;
    r.mean.input_ssim += row.input_ssim;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    r.mean.psnr /= n;
    r.mean.ssim /= n;
    r.mean.input_psnr /= n;
    r.mean.input_ssim /= n;
  }
  r.rows = std::move(rows);
  return r;
}

/// Enhances every low image of `root` (low/, high/, fpe/NAME.fpe) and scores it
/// against the reference in gamma-encoded space.
template <class T>
MetricReport evaluate(const RetinexModel<T>& model, const fs::path& root, double beta, const SensorConstants& sensor,
                      const std::string& low_dir = "low", const std::string& high_dir = "high") {
  const PairedDataset ds = load_paired_dataset(root, low_dir, high_dir, "test");
  std::vector<MetricRow> rows;
  for (const auto& p : ds.pairs) {
    const fs::path fpe_path = root / "fpe" / (fs::path(p.name).stem().string() + ".fpe");
    if (!fs::exists(fpe_path)) throw IoError("missing FPE map for " + p.name + ": expected " + fpe_path.string());
    const EncodedRaster low = load_image(p.low, model.config().gamma);
    const EncodedRaster high = load_image(p.high, model.config().gamma);
    if (low.channels() != 3 || high.channels() != 3) throw ValidationError("evaluate: " + p.name + " is not RGB");
    const auto out = enhance(model, gamma_decode(low), read_fpe1(fpe_path), beta, sensor);
    const EncodedRaster pred = gamma_encode(out.enhanced, model.config().gamma);
    rows.push_back({p.name, psnr(pred, high), ssim(pred, high), psnr(low, high), ssim(low, high)});
  }
  return summarize(std::move(rows));
}

inline std::string format_report(const MetricReport& r) {
  std::string s = "name\tpsnr\tssim\tinput_psnr\tinput_ssim\n";
  char buf[256];
  auto line = [&](const MetricRow& m) {
    std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.6f\t%.4f\t%.6f\n", m.name.c_str(), m.psnr, m.ssim, m.input_psnr,
                  m.input_ssim);
    s += buf;
  };
  for (const auto& m : r.rows) line(m);
  line(r.mean);
  return s;
}

inline void write_report(const MetricReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create report " + path.string());
  out << format_report(r);
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace retinev
