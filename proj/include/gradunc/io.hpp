#ifndef GRADUNC_IO_HPP_
#define GRADUNC_IO_HPP_

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gradunc/detection.hpp"
#include "gradunc/features.hpp"
#include "gradunc/pipeline.hpp"

namespace gradunc {

inline constexpr int kFormatVersion = 1;

// One image per line:
//   {"format_version":1,"image_id":..,"width":..,"height":..,
//    "predictions":[{"bbox":[x0,y0,x1,y1],"score":..,"class_id":..,
//                    "class_probs":[..],"anchor_index":..,"raw_outputs":[..]}],
//    "ground_truth":[{"bbox":[..],"class_id":..}]}
// raw_outputs is omitted when empty. A missing format_version reads as 1.
void write_detections_jsonl(std::ostream& out, std::span<const ImageSample> samples);
std::vector<ImageSample> read_detections_jsonl(std::istream& in);

// image_id,box_index,score,label_tpfp,target_iou,<columns> after '#'
// metadata lines that carry the format version and schema id.
void write_features_csv(std::ostream& out, const FeatureTable& table);
FeatureTable read_features_csv(std::istream& in);

enum class SweepKind { kMap, kFpFn };

// source,threshold,map or source,threshold,fp,fn; one block per source.
struct SweepSeries {
  std::string source;
  std::vector<SweepRow> rows;
};
void write_sweep_csv(std::ostream& out, SweepKind kind, std::span<const SweepSeries> series,
                     const std::vector<std::string>& metadata = {});

std::string read_file(const std::string& path);
// Both throw ValidationError naming the path when it cannot be opened.
void write_file(const std::string& path, const std::string& content);

}  // namespace gradunc

#endif  // GRADUNC_IO_HPP_
