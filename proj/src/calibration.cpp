#include "gradunc/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "gradunc/common.hpp"

namespace gradunc {

int ReliabilityBins::total() const {
  int n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

int ReliabilityBins::non_empty() const {
  int n = 0;
  for (const auto& b : bins) n += b.count > 0 ? 1 : 0;
  return n;
}

int bin_index(double confidence, int num_bins) {
  if (!(confidence >= 0 && confidence <= 1)) {
    throw ValidationError("confidence outside [0, 1]");
  }
  const double b = static_cast<double>(num_bins);
  int i = static_cast<int>(std::ceil(confidence * b));
  i = std::clamp(i, 1, num_bins);
  // confidence * B may round across a boundary; compare with the bounds
  // themselves.
  if (i < num_bins && confidence > static_cast<double>(i) / b) ++i;
  if (i > 1 && confidence <= static_cast<double>(i - 1) / b) --i;
  return i;
}

ReliabilityBins bin_reliability(std::span<const double> confidences, std::span<const int> labels,
                                int num_bins) {
  if (num_bins < 1) throw ValidationError("need at least one bin");
  if (confidences.size() != labels.size()) {
    throw ValidationError("confidences and labels differ in length");
  }
  ReliabilityBins out;
  out.bins.resize(static_cast<std::size_t>(num_bins));
  std::vector<double> tp(out.bins.size(), 0.0), conf(out.bins.size(), 0.0);
  for (int i = 0; i < num_bins; ++i) {
    out.bins[static_cast<std::size_t>(i)].low = static_cast<double>(i) / num_bins;
    out.bins[static_cast<std::size_t>(i)].high = static_cast<double>(i + 1) / num_bins;
  }
  for (std::size_t k = 0; k < confidences.size(); ++k) {
    if (labels[k] != 0 && labels[k] != 1) throw ValidationError("labels must be 0 or 1");
    const std::size_t i = static_cast<std::size_t>(bin_index(confidences[k], num_bins) - 1);
    out.bins[i].count += 1;
    tp[i] += labels[k];
    conf[i] += confidences[k];
  }
  for (std::size_t i = 0; i < out.bins.size(); ++i) {
    if (out.bins[i].count == 0) continue;
    out.bins[i].acc = tp[i] / out.bins[i].count;
    out.bins[i].conf = conf[i] / out.bins[i].count;
  }
  return out;
}

CalibrationErrors calibration_errors(const ReliabilityBins& bins) {
  const int total = bins.total();
  if (total == 0) throw ValidationError("calibration errors need at least one sample");
  CalibrationErrors e;
  int non_empty = 0;
  for (const auto& b : bins.bins) {
    if (b.count == 0) continue;
    const double gap = std::abs(b.acc - b.conf);
    e.mce = std::max(e.mce, gap);
    e.ace += gap;
    e.ece += static_cast<double>(b.count) / total * gap;
    ++non_empty;
  }
  e.ace /= non_empty;
  return e;
}

void write_reliability_csv(std::ostream& out, const ReliabilityBins& bins) {
  out << "# reliability bins: ((i-1)/B, i/B], confidence 0 in bin 1\n";
  out << "# bins=" << bins.bins.size() << " non_empty=" << bins.non_empty()
      << " ace_divisor=non_empty_bins ece=count_weighted\n";
  out << "bin_low,bin_high,count,acc,conf\n";
  for (const auto& b : bins.bins) {
    out << format_double(b.low) << ',' << format_double(b.high) << ',' << b.count << ','
        << format_double(b.acc) << ',' << format_double(b.conf) << '\n';
  }
}

ReliabilityBins read_reliability_csv(std::istream& in) {
  ReliabilityBins out;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "bin_low,bin_high,count,acc,conf") {
        throw ValidationError("line " + std::to_string(lineno) + ": unexpected reliability header");
      }
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) {
      throw ValidationError("line " + std::to_string(lineno) + ": expected 5 fields");
    }
    try {
      ReliabilityBin b;
      b.low = parse_double(f[0]);
      b.high = parse_double(f[1]);
      b.count = std::stoi(f[2]);
      b.acc = parse_double(f[3]);
      b.conf = parse_double(f[4]);
      out.bins.push_back(b);
    } catch (const std::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw ValidationError("reliability CSV has no header");
  return out;
}

}  // namespace gradunc
