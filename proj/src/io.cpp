#include "gradunc/io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gradunc/common.hpp"

namespace gradunc {

namespace {

using Json = nlohmann::ordered_json;

Json box_json(const BoundingBox& b) { return Json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

double number(const Json& j, const char* what) {
  if (!j.is_number()) throw ValidationError(std::string(what) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ValidationError(std::string(what) + " must be finite");
  return v;
}

int integer(const Json& j, const char* what) {
  if (!j.is_number_integer()) throw ValidationError(std::string(what) + " must be an integer");
  return j.get<int>();
}

const Json& field(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(std::string("missing field '") + key + "'");
  return *it;
}

std::vector<double> numbers(const Json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array");
  std::vector<double> v;
  for (const Json& e : j) v.push_back(number(e, what));
  return v;
}

BoundingBox parse_box(const Json& j) {
  const std::vector<double> v = numbers(j, "bbox");
  if (v.size() != 4) throw ValidationError("bbox needs 4 numbers");
  return {v[0], v[1], v[2], v[3]};
}

ImageSample parse_sample(const Json& j) {
  if (!j.is_object()) throw ValidationError("expected a JSON object");
  if (auto it = j.find("format_version"); it != j.end()) {
    if (integer(*it, "format_version") != kFormatVersion) {
      throw ValidationError("unsupported format_version " + it->dump());
    }
  }
  ImageSample s;
  const Json& id = field(j, "image_id");
  if (!id.is_string()) throw ValidationError("image_id must be a string");
  s.image_id = id.get<std::string>();
  s.width = number(field(j, "width"), "width");
  s.height = number(field(j, "height"), "height");
  const Json& preds = field(j, "predictions");
  if (!preds.is_array()) throw ValidationError("predictions must be an array");
  for (const Json& p : preds) {
    if (!p.is_object()) throw ValidationError("prediction must be an object");
    Instance inst;
    inst.bbox = parse_box(field(p, "bbox"));
    inst.score = number(field(p, "score"), "score");
    inst.class_id = integer(field(p, "class_id"), "class_id");
    inst.class_probs = numbers(field(p, "class_probs"), "class_probs");
    inst.anchor_index = integer(field(p, "anchor_index"), "anchor_index");
    if (auto it = p.find("raw_outputs"); it != p.end()) {
      inst.raw_outputs = numbers(*it, "raw_outputs");
    }
    s.predictions.push_back(std::move(inst));
  }
  const Json& gts = field(j, "ground_truth");
  if (!gts.is_array()) throw ValidationError("ground_truth must be an array");
  for (const Json& g : gts) {
    if (!g.is_object()) throw ValidationError("ground truth entry must be an object");
    s.ground_truth.push_back({parse_box(field(g, "bbox")), integer(field(g, "class_id"), "class_id")});
  }
  validate_sample(s);
  return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string line_error(int lineno, const std::string& what) {
  return "line " + std::to_string(lineno) + ": " + what;
}

const char* const kFixedColumns[] = {"image_id", "box_index", "score", "label_tpfp", "target_iou"};

}  // namespace

void write_detections_jsonl(std::ostream& out, std::span<const ImageSample> samples) {
  for (const ImageSample& s : samples) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["image_id"] = s.image_id;
    j["width"] = s.width;
    j["height"] = s.height;
    Json preds = Json::array();
    for (const Instance& p : s.predictions) {
      Json e;
      e["bbox"] = box_json(p.bbox);
      e["score"] = p.score;
      e["class_id"] = p.class_id;
      e["class_probs"] = p.class_probs;
      e["anchor_index"] = p.anchor_index;
      if (!p.raw_outputs.empty()) e["raw_outputs"] = p.raw_outputs;
      preds.push_back(std::move(e));
    }
    j["predictions"] = std::move(preds);
    Json gts = Json::array();
    for (const GroundTruthObject& g : s.ground_truth) {
      Json e;
      e["bbox"] = box_json(g.bbox);
      e["class_id"] = g.class_id;
      gts.push_back(std::move(e));
    }
    j["ground_truth"] = std::move(gts);
    out << j.dump() << '\n';
  }
}

std::vector<ImageSample> read_detections_jsonl(std::istream& in) {
  std::vector<ImageSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_sample(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ValidationError(line_error(lineno, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(line_error(lineno, e.what()));
    }
  }
  return out;
}

void write_features_csv(std::ostream& out, const FeatureTable& table) {
  out << "# format_version=" << kFormatVersion << '\n';
  out << "# schema=" << table.schema_id() << '\n';
  out << "# gradient maps use the population std; mc.std.<comp> is the sample std over dropout samples\n";
  for (const char* c : kFixedColumns) out << c << (c == kFixedColumns[4] ? "" : ",");
  for (const std::string& c : table.columns) out << ',' << c;
  out << '\n';
  for (const BoxRecord& r : table.rows) {
    if (r.image_id.find_first_of(",\"\n\r") != std::string::npos) {
      throw ValidationError("image_id '" + r.image_id + "' cannot be written to CSV");
    }
    if (r.features.size() != table.columns.size()) {
      throw ValidationError("feature row of image '" + r.image_id + "' has the wrong width");
    }
    out << r.image_id << ',' << r.box_index << ',' << format_double(r.score) << ',' << r.label
        << ',' << format_double(r.target_iou);
    for (double v : r.features) out << ',' << format_double(v);
    out << '\n';
  }
}

FeatureTable read_features_csv(std::istream& in) {
  FeatureTable t;
  std::string line, schema;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.starts_with("# format_version=")) {
        if (line != "# format_version=" + std::to_string(kFormatVersion)) {
          throw ValidationError(line_error(lineno, "unsupported format version"));
        }
      } else if (line.starts_with("# schema=")) {
        schema = line.substr(9);
      }
      continue;
    }
    const std::vector<std::string> f = split(line, ',');
    if (!header) {
      if (f.size() < 5) throw ValidationError(line_error(lineno, "feature header is too short"));
      for (int k = 0; k < 5; ++k) {
        if (f[static_cast<std::size_t>(k)] != kFixedColumns[k]) {
          throw ValidationError(line_error(lineno, std::string("expected column '") +
                                                       kFixedColumns[k] + "'"));
        }
      }
      t.columns.assign(f.begin() + 5, f.end());
      if (!schema.empty() && schema != t.schema_id()) {
        throw ValidationError(line_error(lineno, "columns do not match schema " + schema));
      }
      header = true;
      continue;
    }
    if (f.size() != t.columns.size() + 5) {
      throw ValidationError(line_error(lineno, "expected " + std::to_string(t.columns.size() + 5) +
                                                   " fields, got " + std::to_string(f.size())));
    }
    try {
      BoxRecord r;
      r.image_id = f[0];
      std::size_t pos = 0;
      r.box_index = std::stoi(f[1], &pos);
      if (pos != f[1].size() || r.box_index < 0) throw ValidationError("bad box_index");
      r.score = parse_double(f[2]);
      if (f[3] != "0" && f[3] != "1") throw ValidationError("label_tpfp must be 0 or 1");
      r.label = f[3] == "1" ? 1 : 0;
      r.target_iou = parse_double(f[4]);
      if (!(r.score >= 0 && r.score <= 1)) throw ValidationError("score outside [0, 1]");
      if (!(r.target_iou >= 0 && r.target_iou <= 1)) throw ValidationError("target_iou outside [0, 1]");
      for (std::size_t k = 5; k < f.size(); ++k) {
        try {
          r.features.push_back(parse_double(f[k]));
        } catch (const ValidationError& e) {
          throw ValidationError("column '" + t.columns[k - 5] + "': " + e.what());
        }
      }
      t.rows.push_back(std::move(r));
    } catch (const ValidationError& e) {
      throw ValidationError(line_error(lineno, e.what()));
    } catch (const std::exception&) {
      throw ValidationError(line_error(lineno, "bad box_index"));
    }
  }
  if (!header) throw ValidationError("feature CSV has no header");
  return t;
}

void write_sweep_csv(std::ostream& out, SweepKind kind, std::span<const SweepSeries> series,
                     const std::vector<std::string>& metadata) {
  out << "# format_version=" << kFormatVersion << '\n';
  for (const std::string& m : metadata) out << "# " << m << '\n';
  out << (kind == SweepKind::kMap ? "source,threshold,map\n" : "source,threshold,fp,fn\n");
  for (const SweepSeries& s : series) {
    for (const SweepRow& r : s.rows) {
      out << s.source << ',' << format_double(r.threshold);
      if (kind == SweepKind::kMap) {
        out << ',' << format_double(r.map);
      } else {
        out << ',' << r.fp << ',' << r.fn;
      }
      out << '\n';
    }
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

}  // namespace gradunc
