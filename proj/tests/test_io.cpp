#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>
#include <string>

#include "gradunc/common.hpp"
#include "gradunc/io.hpp"
#include "gradunc/synthetic.hpp"
#include "gradunc/toy_detector.hpp"

using namespace gradunc;

namespace {

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("doubles print in shortest round-trip form") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::ldexp(rng.uniform(-1, 1), static_cast<int>(rng.below(80)) - 40);
    CHECK(parse_double(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK_THROWS_AS(parse_double("1.5x"), ValidationError);
  CHECK_THROWS_AS(parse_double("inf"), ValidationError);
  CHECK_THROWS_AS(parse_double(""), ValidationError);
}

TEST_CASE("random streams are reproducible and independent") {
  Rng a(5), b(5), c(mix_seed(5, 1));
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(5).next_u64() != c.next_u64());
  CHECK(hash_string("abc") == hash_string("abc"));
  CHECK(hash_string("abc") != hash_string("abd"));
}

TEST_CASE("detections JSONL round trip is exact") {
  SyntheticConfig cfg;
  cfg.num_images = 6;
  cfg.seed = 9;
  const auto images = generate_synthetic_corpus(cfg).images;
  std::stringstream ss;
  write_detections_jsonl(ss, images);
  CHECK(read_detections_jsonl(ss) == images);

  const ToyDetector det = make_toy_detector(HeadKind::kRoi, 2, 3);
  const auto toy = toy_corpus(det, 2, 4, 1e-4);
  std::stringstream ts;
  write_detections_jsonl(ts, toy);
  const auto back = read_detections_jsonl(ts);
  CHECK(back == toy);
  CHECK_FALSE(back.front().predictions.front().raw_outputs.empty());
}

TEST_CASE("detections JSONL errors name the line") {
  const std::string good =
      R"({"image_id":"a","width":10,"height":10,"predictions":[{"bbox":[0,0,5,5],"score":0.5,"class_id":1,"class_probs":[0.6],"anchor_index":0}],"ground_truth":[]})";
  {
    std::stringstream ss(good + "\n");
    const auto v = read_detections_jsonl(ss);  // no format_version: version 1
    REQUIRE(v.size() == 1);
    CHECK(v[0].predictions[0].raw_outputs.empty());
  }
  {
    std::stringstream ss(good + "\n" + good.substr(0, 40) + "\n");
    const std::string e = error_of([&] { read_detections_jsonl(ss); });
    CHECK(e.find("line 2") != std::string::npos);
  }
  {
    std::string v2 = good;
    v2.insert(1, "\"format_version\":2,");
    std::stringstream ss(v2 + "\n");
    CHECK(error_of([&] { read_detections_jsonl(ss); }).find("format_version") != std::string::npos);
  }
  {
    std::string bad = good;
    bad.replace(bad.find("0.5"), 3, "1.5");
    std::stringstream ss(bad + "\n");
    CHECK_THROWS_AS(read_detections_jsonl(ss), ValidationError);
  }
  {
    std::string bad = good;
    bad.erase(bad.find("\"score\":0.5,"), 12);
    std::stringstream ss(bad + "\n");
    CHECK(error_of([&] { read_detections_jsonl(ss); }).find("score") != std::string::npos);
  }
}

TEST_CASE("feature CSV round trip is exact") {
  SyntheticConfig cfg;
  cfg.num_images = 5;
  cfg.seed = 2;
  const FeatureTable t = generate_synthetic_corpus(cfg).features;
  std::stringstream ss;
  write_features_csv(ss, t);
  const std::string text = ss.str();
  CHECK(text.rfind("# format_version=1\n", 0) == 0);
  CHECK(text.find("# schema=" + t.schema_id()) != std::string::npos);
  CHECK(read_features_csv(ss) == t);
}

TEST_CASE("feature CSV validation") {
  FeatureTable t;
  t.columns = {"loc.T.max"};
  BoxRecord r;
  r.image_id = "im";
  r.score = 0.4;
  r.label = 1;
  r.target_iou = 0.7;
  r.features = {2.5};
  t.rows = {r};
  std::stringstream ss;
  write_features_csv(ss, t);
  const std::string text = ss.str();

  auto read = [](const std::string& s) {
    std::stringstream in(s);
    return read_features_csv(in);
  };
  std::string bad = text;
  bad.replace(bad.find("im,0,0.4,1"), 10, "im,0,0.4,2");
  CHECK(error_of([&] { read(bad); }).find("label_tpfp") != std::string::npos);

  bad = text;
  bad.replace(bad.find("loc.T.max"), 9, "loc.T.min");
  CHECK(error_of([&] { read(bad); }).find("schema") != std::string::npos);

  bad = text;
  bad.replace(bad.find("format_version=1"), 16, "format_version=7");
  CHECK(error_of([&] { read(bad); }).find("line 1") != std::string::npos);

  bad = text.substr(0, text.size() - 4) + "\n";  // truncated last row
  CHECK_THROWS_AS(read(bad), ValidationError);

  t.rows[0].image_id = "a,b";
  std::stringstream out;
  CHECK_THROWS_AS(write_features_csv(out, t), ValidationError);
}

TEST_CASE("sweep CSV layout") {
  std::vector<SweepSeries> series(2);
  series[0].source = "score";
  series[0].rows = {{0.0, 0.5, 3, 1}, {1.0, 0.0, 0, 4}};
  series[1].source = "meta:G";
  series[1].rows = {{0.0, 0.6, 2, 1}};
  std::stringstream m, f;
  write_sweep_csv(m, SweepKind::kMap, series, {"iou=0.5"});
  CHECK(m.str() == "# format_version=1\n# iou=0.5\nsource,threshold,map\nscore,0,0.5\nscore,1,0\nmeta:G,0,0.6\n");
  write_sweep_csv(f, SweepKind::kFpFn, series);
  CHECK(f.str().find("source,threshold,fp,fn\nscore,0,3,1\n") != std::string::npos);
}

TEST_CASE("toy head JSON round trip and raw-output verification") {
  const ToyDetector det = make_toy_detector(HeadKind::kYolo, 3, 5);
  const ToyDetector back = toy_detector_from_json(toy_detector_to_json(det));
  CHECK(toy_detector_to_json(back) == toy_detector_to_json(det));
  auto samples = toy_corpus(back, 1, 1, 1e-4);
  REQUIRE_FALSE(samples[0].predictions.empty());
  const ForwardPass pass = forward_pass(det.net, det.input_for(samples[0].image_id));
  CHECK_NOTHROW(verified_raw_outputs(det, samples[0], pass));
  samples[0].predictions[0].raw_outputs[0] += 1e-9;
  CHECK_THROWS_AS(verified_raw_outputs(det, samples[0], pass), ValidationError);
  CHECK_THROWS_AS(toy_detector_from_json("{\"format\":\"x\"}"), ValidationError);
}

TEST_CASE("file helpers report the path") {
  CHECK(error_of([] { read_file("/nonexistent/dir/f.txt"); }).find("/nonexistent/dir/f.txt") !=
        std::string::npos);
}
