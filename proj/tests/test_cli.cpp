#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "json.hpp"
#include "streamtopics/features.hpp"
#include "streamtopics/image.hpp"
#include "streamtopics/rng.hpp"
#include "streamtopics/scoring.hpp"
#include "streamtopics/synth.hpp"
#include "streamtopics/topic_model.hpp"
#include "streamtopics/word_stream.hpp"

using namespace stm;
using testutil::TempDir;
using testutil::run_cli;

namespace {

const char* kSynthConfig =
    "V = 6\n"
    "T = 20\n"
    "width = 64\n"
    "height = 48\n"
    "cell_size = 16\n"
    "words_per_frame = 30\n"
    "seed = 5\n"
    "topic.0.dist = uniform(0,2)\n"
    "topic.0.weight = 1.0\n"
    "topic.1.dist = uniform(3,5)\n"
    "topic.1.weight = 1.0\n"
    "anomaly.0.start = 10\n"
    "anomaly.0.end = 13\n"
    "anomaly.0.intensity = 0.9\n"
    "anomaly.0.dist = uniform(5,5)\n";

// Runs synth with kSynthConfig into <tmp>/<name> and returns the result.
testutil::CliResult run_synth(const TempDir& tmp, const std::string& name) {
  testutil::write_file(tmp.str(name + ".config"), kSynthConfig);
  return run_cli("synth --config " + tmp.str(name + ".config") + " --out " + tmp.str(name),
                 tmp.path());
}

testutil::CliResult run_model(const TempDir& tmp, const std::string& stream,
                              const std::string& out, const std::string& extra = "") {
  return run_cli("model --stream " + tmp.str(stream) + " --out " + tmp.str(out) +
                     " --set alpha=0.1 --set beta=1 --set gamma=0.05"
                     " --set iters_per_step=5 --seed 11 " +
                     extra,
                 tmp.path());
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("synth writes a stream, ground truth, and the effective config", "[cli]") {
  TempDir tmp("cli_synth");
  auto result = run_synth(tmp, "synth");
  REQUIRE(result.exit_code == 0);
  CHECK(result.output ==
        "synth: 600 observations over 20 frames, 1 planted windows\n");

  WordStream stream = parse_stream_file(tmp.str("synth/stream.words"));
  CHECK(stream.layout.total_size() == 6);
  CHECK(stream.observations.size() == 600);

  std::ifstream truth_in(tmp.str("synth/truth.json"));
  GroundTruth truth = read_truth_json(truth_in);
  CHECK(truth.frames == 20);
  REQUIRE(truth.events.size() == 1);
  CHECK(truth.events[0].t_start == 10);
  CHECK(truth.events[0].t_end == 13);

  const std::string effective = testutil::read_file(tmp.str("synth/effective.config"));
  CHECK(effective.find("words_per_frame") != std::string::npos);

  auto again = run_synth(tmp, "synth2");
  REQUIRE(again.exit_code == 0);
  CHECK(testutil::files_identical(tmp.str("synth/stream.words"),
                                  tmp.str("synth2/stream.words")));
  CHECK(testutil::files_identical(tmp.str("synth/truth.json"),
                                  tmp.str("synth2/truth.json")));
}

TEST_CASE("synth rejects incomplete or unknown configuration", "[cli]") {
  TempDir tmp("cli_synth_bad");
  testutil::write_file(tmp.str("missing.config"), "T = 5\nwords_per_frame = 2\n");
  auto missing = run_cli("synth --config " + tmp.str("missing.config") + " --out " + tmp.str("out"),
                         tmp.path());
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("V") != std::string::npos);

  testutil::write_file(tmp.str("bogus.config"), std::string(kSynthConfig) + "bogus = 1\n");
  auto bogus = run_cli("synth --config " + tmp.str("bogus.config") + " --out " + tmp.str("out"),
                       tmp.path());
  CHECK(bogus.exit_code == 2);
  CHECK(bogus.output.find("bogus") != std::string::npos);
}

TEST_CASE("model fits a stream and writes a checkpoint with labels", "[cli]") {
  TempDir tmp("cli_model");
  REQUIRE(run_synth(tmp, "synth").exit_code == 0);

  auto result = run_model(tmp, "synth/stream.words", "model");
  REQUIRE(result.exit_code == 0);
  CHECK(result.output.find("model: 20 frames ingested, 600 observations") == 0);

  std::ifstream in(tmp.str("model/checkpoint.stm"), std::ios::binary);
  TopicModel model = TopicModel::load_checkpoint(in);
  CHECK(model.total_count() == 600);
  CHECK(model.frame_cursor() == 19);
  CHECK(model.config().prior.beta == 1.0);

  const std::string labels = testutil::read_file(tmp.str("model/labels.csv"));
  CHECK(labels.rfind("i,t,label\n", 0) == 0);
  CHECK(line_count(labels) == 601);
}

TEST_CASE("model rejects unknown keys and empty streams", "[cli]") {
  TempDir tmp("cli_model_bad");
  REQUIRE(run_synth(tmp, "synth").exit_code == 0);

  auto unknown = run_model(tmp, "synth/stream.words", "out", "--set wheels=4");
  CHECK(unknown.exit_code == 2);
  CHECK(unknown.output.find("wheels") != std::string::npos);

  testutil::write_file(tmp.str("empty.words"), "ROSTWORDS v1 V=6 channels=w:6\n");
  auto empty = run_model(tmp, "empty.words", "out");
  CHECK(empty.exit_code == 1);
  CHECK(empty.output.find("no observations") != std::string::npos);
}

TEST_CASE("an interrupted model run resumes to identical outputs", "[cli]") {
  TempDir tmp("cli_resume");
  REQUIRE(run_synth(tmp, "synth").exit_code == 0);

  REQUIRE(run_model(tmp, "synth/stream.words", "full").exit_code == 0);
  REQUIRE(run_model(tmp, "synth/stream.words", "half", "--set max_frames=10").exit_code == 0);
  auto resumed = run_model(tmp, "synth/stream.words", "resumed",
                           "--resume " + tmp.str("half/checkpoint.stm"));
  REQUIRE(resumed.exit_code == 0);

  CHECK(testutil::files_identical(tmp.str("full/checkpoint.stm"),
                                  tmp.str("resumed/checkpoint.stm")));
  CHECK(testutil::files_identical(tmp.str("full/labels.csv"), tmp.str("resumed/labels.csv")));
}

TEST_CASE("score writes a report and peak list from a checkpoint", "[cli]") {
  TempDir tmp("cli_score");
  REQUIRE(run_synth(tmp, "synth").exit_code == 0);
  REQUIRE(run_model(tmp, "synth/stream.words", "model").exit_code == 0);

  auto result = run_cli("score --checkpoint " + tmp.str("model/checkpoint.stm") + " --out " +
                            tmp.str("score") + " --set max_peaks=5 --set min_separation=3",
                        tmp.path());
  REQUIRE(result.exit_code == 0);
  CHECK(result.output.find("score: 20 timesteps") == 0);

  std::ifstream report_in(tmp.str("score/report.csv"));
  ReportData report = parse_report_csv(report_in);
  REQUIRE(report.frames.size() == 20);
  CHECK(report.frames.front() == 0);
  CHECK(report.frames.back() == 19);
  for (double s : report.normalized_scores) {
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }

  auto peaks = nlohmann::json::parse(testutil::read_file(tmp.str("score/peaks.json")));
  REQUIRE(peaks.is_array());
  REQUIRE(!peaks.empty());
  CHECK(peaks.size() <= 5);
  CHECK(peaks[0]["rank"] == 1);
  CHECK(peaks[0].contains("t"));
  CHECK(peaks[0].contains("score"));
}

TEST_CASE("score cross-checks an assignments file", "[cli]") {
  TempDir tmp("cli_assign");
  REQUIRE(run_synth(tmp, "synth").exit_code == 0);
  REQUIRE(run_model(tmp, "synth/stream.words", "model").exit_code == 0);

  auto ok = run_cli("score --checkpoint " + tmp.str("model/checkpoint.stm") +
                        " --assignments " + tmp.str("model/labels.csv") + " --out " +
                        tmp.str("score"),
                    tmp.path());
  CHECK(ok.exit_code == 0);

  std::string labels = testutil::read_file(tmp.str("model/labels.csv"));
  const auto pos = labels.rfind(",");
  labels.replace(pos + 1, labels.size() - pos - 2, "987654");
  testutil::write_file(tmp.str("tampered.csv"), labels);
  auto bad = run_cli("score --checkpoint " + tmp.str("model/checkpoint.stm") +
                         " --assignments " + tmp.str("tampered.csv") + " --out " +
                         tmp.str("score2"),
                     tmp.path());
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("does not match") != std::string::npos);
}

TEST_CASE("eval compares a report against ground truth", "[cli]") {
  TempDir tmp("cli_eval");
  REQUIRE(run_synth(tmp, "synth").exit_code == 0);
  REQUIRE(run_model(tmp, "synth/stream.words", "model").exit_code == 0);
  REQUIRE(run_cli("score --checkpoint " + tmp.str("model/checkpoint.stm") + " --out " +
                      tmp.str("score"),
                  tmp.path())
              .exit_code == 0);

  auto result = run_cli("eval --report " + tmp.str("score/report.csv") + " --truth " +
                            tmp.str("synth/truth.json") + " --out " + tmp.str("eval"),
                        tmp.path());
  REQUIRE(result.exit_code == 0);
  CHECK(result.output.rfind("eval: ks=", 0) == 0);

  auto eval = nlohmann::json::parse(testutil::read_file(tmp.str("eval/eval.json")));
  REQUIRE(eval.contains("ks_statistic"));
  const double ks = eval["ks_statistic"].get<double>();
  CHECK(ks >= 0.0);
  CHECK(ks <= 1.0);
  CHECK(eval["matched_topic"].get<int>() >= 0);
  REQUIRE(eval["peaks"].is_array());
  for (const auto& peak : eval["peaks"]) {
    CHECK(peak.contains("hit"));
    CHECK(peak.contains("window"));
  }
}

TEST_CASE("eval refuses a report that does not cover the ground truth", "[cli]") {
  TempDir tmp("cli_eval_bad");
  REQUIRE(run_synth(tmp, "synth").exit_code == 0);
  REQUIRE(run_model(tmp, "synth/stream.words", "model").exit_code == 0);
  REQUIRE(run_cli("score --checkpoint " + tmp.str("model/checkpoint.stm") + " --out " +
                      tmp.str("score"),
                  tmp.path())
              .exit_code == 0);

  std::string short_config(kSynthConfig);
  const auto pos = short_config.find("T = 20");
  short_config.replace(pos, 6, "T = 30");
  testutil::write_file(tmp.str("short.config"), short_config);
  REQUIRE(run_cli("synth --config " + tmp.str("short.config") + " --out " + tmp.str("synth30"),
                  tmp.path())
              .exit_code == 0);

  auto result = run_cli("eval --report " + tmp.str("score/report.csv") + " --truth " +
                            tmp.str("synth30/truth.json") + " --out " + tmp.str("eval"),
                        tmp.path());
  CHECK(result.exit_code == 1);
  CHECK(result.output.find("covers") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2", "[cli]") {
  TempDir tmp("cli_usage");
  CHECK(run_cli("", tmp.path()).exit_code == 2);
  CHECK(run_cli("frobnicate --out " + tmp.str("out"), tmp.path()).exit_code == 2);
  CHECK(run_cli("model --out " + tmp.str("out"), tmp.path()).exit_code == 2);

  auto missing_stream = run_cli("model --stream " + tmp.str("nope.words") + " --out " +
                                    tmp.str("out"),
                                tmp.path());
  CHECK(missing_stream.exit_code == 2);
  CHECK(missing_stream.output.find("not found") != std::string::npos);

  auto missing_frames = run_cli("extract --frames " + tmp.str("frames") + " --out " +
                                    tmp.str("out"),
                                tmp.path());
  CHECK(missing_frames.exit_code == 2);
  CHECK(missing_frames.output.find("frames directory") != std::string::npos);

  auto bad_set = run_cli("synth --set novalue --out " + tmp.str("out"), tmp.path());
  CHECK(bad_set.exit_code == 2);
  CHECK(bad_set.output.find("key=value") != std::string::npos);
}

TEST_CASE("extract turns a frame directory into a word stream", "[cli]") {
  TempDir tmp("cli_extract");
  std::filesystem::create_directory(tmp.path() / "frames");
  Rng rng(77, 0);
  for (int f = 0; f < 3; ++f) {
    Frame frame;
    frame.width = 64;
    frame.height = 64;
    frame.pixels.resize(64 * 64);
    for (auto& px : frame.pixels) {
      const auto v = static_cast<std::uint8_t>(rng.below(256));
      px = {v, v, v};
    }
    write_ppm_file(tmp.str("frames/frame" + std::to_string(f) + ".ppm"), frame);
  }

  testutil::write_file(tmp.str("extract.config"),
                       "grid_step = 16\n"
                       "texton_codewords = 4\n"
                       "kmeans_iters = 10\n"
                       "seed = 3\n");
  const std::string args = "extract --frames " + tmp.str("frames") + " --config " +
                           tmp.str("extract.config");
  auto result = run_cli(args + " --out " + tmp.str("out"), tmp.path());
  REQUIRE(result.exit_code == 0);
  CHECK(result.output.find("frame frame0.ppm: 48 words\n") != std::string::npos);
  CHECK(result.output.find("frame frame2.ppm: 48 words\n") != std::string::npos);

  WordStream stream = parse_stream_file(tmp.str("out/stream.words"));
  CHECK(stream.layout.spec_string() == "hue:12+intensity:8+texton:4");
  REQUIRE(stream.observations.size() == 144);
  CHECK(stream.observations.front().t == 0);
  CHECK(stream.observations.back().t == 2);

  Codebook book = parse_codebook_file(tmp.str("out/codebook.txt"));
  CHECK(book.size() == 4);
  CHECK(book.dim() == 12);

  auto again = run_cli(args + " --out " + tmp.str("out2"), tmp.path());
  REQUIRE(again.exit_code == 0);
  CHECK(testutil::files_identical(tmp.str("out/stream.words"), tmp.str("out2/stream.words")));
  CHECK(testutil::files_identical(tmp.str("out/codebook.txt"), tmp.str("out2/codebook.txt")));
}
