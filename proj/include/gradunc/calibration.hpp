#ifndef GRADUNC_CALIBRATION_HPP_
#define GRADUNC_CALIBRATION_HPP_

#include <iosfwd>
#include <span>
#include <vector>

namespace gradunc {

struct ReliabilityBin {
  double low = 0, high = 0;
  int count = 0;
  double acc = 0;   // fraction of true positives; 0 when empty
  double conf = 0;  // mean confidence; 0 when empty

  friend bool operator==(const ReliabilityBin&, const ReliabilityBin&) = default;
};

struct ReliabilityBins {
  std::vector<ReliabilityBin> bins;

  int total() const;
  int non_empty() const;
  friend bool operator==(const ReliabilityBins&, const ReliabilityBins&) = default;
};

// 1-based bin of a confidence: ((i-1)/B, i/B], with 0 in bin 1.
int bin_index(double confidence, int num_bins);

ReliabilityBins bin_reliability(std::span<const double> confidences, std::span<const int> labels,
                                int num_bins = 10);

struct CalibrationErrors {
  double mce = 0;
  double ace = 0;  // mean over non-empty bins
  double ece = 0;  // count-weighted
};

// Empty bins are skipped. Throws ValidationError when every bin is empty.
CalibrationErrors calibration_errors(const ReliabilityBins& bins);

// CSV with '#' metadata lines: bin_low,bin_high,count,acc,conf.
void write_reliability_csv(std::ostream& out, const ReliabilityBins& bins);
ReliabilityBins read_reliability_csv(std::istream& in);

}  // namespace gradunc

#endif  // GRADUNC_CALIBRATION_HPP_
