#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "streamtopics/config.hpp"
#include "streamtopics/synth.hpp"

using namespace stm;

namespace {

SynthSpec small_spec() {
  SynthSpec spec;
  spec.vocab_size = 10;
  spec.frames = 12;
  spec.words_per_frame = 50;
  spec.seed = 7;
  BackgroundTopic low, high;
  low.weight = 3.0;
  low.probs.assign(10, 0.0);
  for (int v = 0; v < 5; ++v) low.probs[v] = 0.2;
  high.weight = 1.0;
  high.probs.assign(10, 0.0);
  for (int v = 5; v < 10; ++v) high.probs[v] = 0.2;
  spec.topics = {low, high};
  return spec;
}

// Applies a position permutation to a partition key and re-canonicalizes.
std::string permuted_key(const std::string& key, const std::vector<std::size_t>& perm) {
  std::vector<std::int32_t> labels(key.size());
  for (std::size_t i = 0; i < key.size(); ++i) labels[i] = key[perm[i]] - '0';
  return partition_key(labels);
}

}  // namespace

TEST_CASE("parse_synth_spec reads a full configuration", "[synth]") {
  auto cfg = Config::from_string(
      "V = 6\n"
      "T = 40\n"
      "words_per_frame = 25\n"
      "width = 320\n"
      "height = 240\n"
      "cell_size = 64\n"
      "seed = 99\n"
      "topic.0.dist = uniform(0,2)\n"
      "topic.0.weight = 2.5\n"
      "topic.1.dist = 0,0,0,0.5,0.25,0.25\n"
      "anomaly.0.start = 10\n"
      "anomaly.0.end = 14\n"
      "anomaly.0.intensity = 0.8\n"
      "anomaly.0.dist = uniform(5,5)\n");
  auto spec = parse_synth_spec(cfg);
  CHECK(spec.vocab_size == 6);
  CHECK(spec.frames == 40);
  CHECK(spec.words_per_frame == 25);
  CHECK(spec.width == 320);
  CHECK(spec.height == 240);
  CHECK(spec.cell_size == 64);
  CHECK(spec.seed == 99);
  REQUIRE(spec.topics.size() == 2);
  CHECK(spec.topics[0].weight == 2.5);
  CHECK(spec.topics[0].probs ==
        std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3, 0.0, 0.0, 0.0});
  CHECK(spec.topics[1].weight == 1.0);
  CHECK(spec.topics[1].probs == std::vector<double>{0.0, 0.0, 0.0, 0.5, 0.25, 0.25});
  REQUIRE(spec.windows.size() == 1);
  CHECK(spec.windows[0].t_start == 10);
  CHECK(spec.windows[0].t_end == 14);
  CHECK(spec.windows[0].intensity == 0.8);
  CHECK(spec.windows[0].probs == std::vector<double>{0, 0, 0, 0, 0, 1.0});
}

TEST_CASE("parse_synth_spec reports missing and unknown keys", "[synth]") {
  const auto parse = [](const std::string& text) {
    return parse_synth_spec(Config::from_string(text));
  };
  const std::string base =
      "V = 4\nT = 10\nwords_per_frame = 5\ntopic.0.dist = uniform(0,3)\n";
  CHECK_NOTHROW(parse(base));
  CHECK_THROWS_WITH(parse("T = 10\nwords_per_frame = 5\ntopic.0.dist = uniform(0,3)\n"),
                    Catch::Matchers::ContainsSubstring("'V'"));
  CHECK_THROWS_WITH(parse("V = 4\nwords_per_frame = 5\ntopic.0.dist = uniform(0,3)\n"),
                    Catch::Matchers::ContainsSubstring("'T'"));
  CHECK_THROWS_WITH(parse("V = 4\nT = 10\ntopic.0.dist = uniform(0,3)\n"),
                    Catch::Matchers::ContainsSubstring("words_per_frame"));
  CHECK_THROWS_AS(parse("V = 4\nT = 10\nwords_per_frame = 5\n"), ConfigError);
  CHECK_THROWS_WITH(parse(base + "bogus = 1\n"),
                    Catch::Matchers::ContainsSubstring("bogus"));
  CHECK_THROWS_WITH(parse(base + "topic.0.shape = 1\n"),
                    Catch::Matchers::ContainsSubstring("topic.0.shape"));
  CHECK_THROWS_AS(parse("V = 4\nT = 10\nwords_per_frame = 5\ntopic.1.dist = uniform(0,3)\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse(base + "anomaly.0.start = 1\n"), ConfigError);
}

TEST_CASE("parse_synth_spec validates distributions", "[synth]") {
  const auto parse = [](const std::string& text) {
    return parse_synth_spec(Config::from_string(text));
  };
  const std::string head = "V = 4\nT = 10\nwords_per_frame = 5\n";
  CHECK_THROWS_AS(parse(head + "topic.0.dist = uniform(0,4)\n"), ConfigError);
  CHECK_THROWS_AS(parse(head + "topic.0.dist = uniform(3,1)\n"), ConfigError);
  CHECK_THROWS_AS(parse(head + "topic.0.dist = uniform(0)\n"), ConfigError);
  CHECK_THROWS_AS(parse(head + "topic.0.dist = 0.5,0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse(head + "topic.0.dist = 0.5,0.5,0.5,0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse(head + "topic.0.dist = 0.25,q,0.25,0.25\n"), ConfigError);
  CHECK_THROWS_AS(parse(head + "topic.0.dist = 1,0,0,-0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse(head + "topic.0.dist = uniform(0,3)\ntopic.0.weight = 0\n"),
                  ConfigError);
}

TEST_CASE("synth spec validation catches bad windows", "[synth]") {
  auto spec = small_spec();
  CHECK_NOTHROW(spec.validate());

  AnomalyWindow window;
  window.probs.assign(10, 0.1);

  auto with = [&](std::uint32_t start, std::uint32_t end, double intensity) {
    auto copy = spec;
    window.t_start = start;
    window.t_end = end;
    window.intensity = intensity;
    copy.windows = {window};
    return copy;
  };
  CHECK_THROWS_AS(with(5, 5, 0.5).validate(), ConfigError);
  CHECK_THROWS_AS(with(5, 13, 0.5).validate(), ConfigError);
  CHECK_THROWS_AS(with(5, 8, 0.0).validate(), ConfigError);
  CHECK_THROWS_AS(with(5, 8, 1.5).validate(), ConfigError);

  auto overlapping = with(2, 6, 0.5);
  window.t_start = 5;
  window.t_end = 9;
  overlapping.windows.push_back(window);
  CHECK_THROWS_WITH(overlapping.validate(), Catch::Matchers::ContainsSubstring("overlap"));
}

TEST_CASE("a windowless spec produces a stationary mixture stream", "[synth]") {
  auto spec = small_spec();
  auto result = generate(spec);

  CHECK(result.stream.layout.total_size() == 10);
  CHECK(result.stream.layout.channel(0).name == "synth");
  REQUIRE(result.stream.observations.size() == 12 * 50);
  REQUIRE(result.truth.labels.size() == 12 * 50);
  CHECK(result.truth.events.empty());
  CHECK(result.truth.frames == 12);
  CHECK(result.truth.vocab_size == 10);

  for (std::size_t i = 0; i < result.stream.observations.size(); ++i) {
    const auto& obs = result.stream.observations[i];
    CHECK(obs.t == i / 50);
    CHECK(obs.x < spec.width);
    CHECK(obs.y < spec.height);
    CHECK(obs.word < 10);
    const auto label = result.truth.labels[i];
    REQUIRE(label < 2);
    // Labels tie each word to the topic that generated it.
    CHECK(spec.topics[label].probs[obs.word] > 0.0);
  }
}

TEST_CASE("an intensity-1 window draws every in-window word from the anomaly",
          "[synth]") {
  auto spec = small_spec();
  // keep word 9 exclusive to the anomaly so it can be recognized outside
  spec.topics[1].probs.assign(10, 0.0);
  for (int v = 5; v < 9; ++v) spec.topics[1].probs[v] = 0.25;
  AnomalyWindow window;
  window.t_start = 4;
  window.t_end = 7;
  window.intensity = 1.0;
  window.probs.assign(10, 0.0);
  window.probs[9] = 1.0;
  spec.windows = {window};

  auto result = generate(spec);
  REQUIRE(result.truth.events.size() == 1);
  CHECK(result.truth.events[0].t_start == 4);
  CHECK(result.truth.events[0].t_end == 7);
  CHECK(result.truth.events[0].intensity == 1.0);
  CHECK(result.truth.events[0].rank == 1);

  for (std::size_t i = 0; i < result.stream.observations.size(); ++i) {
    const auto& obs = result.stream.observations[i];
    const bool inside = obs.t >= 4 && obs.t < 7;
    if (inside) {
      CHECK(obs.word == 9);
      CHECK(result.truth.labels[i] == 2);
    } else {
      CHECK(obs.word != 9);
      CHECK(result.truth.labels[i] < 2);
    }
  }
}

TEST_CASE("per-frame word histograms match the spec distributions", "[synth]") {
  auto spec = small_spec();
  spec.frames = 3;
  spec.words_per_frame = 20000;
  AnomalyWindow window;
  window.t_start = 2;
  window.t_end = 3;
  window.intensity = 0.5;
  window.probs.assign(10, 0.0);
  window.probs[8] = 0.5;
  window.probs[9] = 0.5;
  spec.windows = {window};

  auto result = generate(spec);
  for (std::uint32_t t = 0; t < 3; ++t) {
    std::vector<std::uint64_t> counts(10, 0);
    for (const auto& obs : result.stream.observations)
      if (obs.t == t) ++counts[obs.word];
    const auto expected = expected_word_distribution(spec, t);
    // 0.999 quantile of chi-square with 9 degrees of freedom.
    CHECK(testutil::chi_square_stat(counts, expected) <
          testutil::chi_square_critical(9.0, 3.09));
  }
}

TEST_CASE("generation is deterministic in the seed", "[synth]") {
  auto spec = small_spec();
  auto a = generate(spec);
  auto b = generate(spec);
  CHECK(a.stream.observations == b.stream.observations);
  CHECK(a.truth.labels == b.truth.labels);
  CHECK(write_stream_string(a.stream) == write_stream_string(b.stream));

  spec.seed = 8;
  auto c = generate(spec);
  CHECK(c.stream.observations != a.stream.observations);
}

TEST_CASE("exact posterior of one observation is certain", "[synth]") {
  auto posterior = exact_posterior({1}, 2, {0.1, 1.0, 0.1});
  REQUIRE(posterior.size() == 1);
  CHECK(posterior.at("0") == 1.0);
}

TEST_CASE("exact posterior matches the two-observation closed form", "[synth]") {
  // pi(together) = gamma (1+alpha) DM_2(w0 w1), pi(apart) = gamma^2 DM_1(w0) DM_1(w1)
  // with DM the symmetric Dirichlet-multinomial marginal over V=2 words.
  const double alphas[3] = {0.1, 0.5, 2.0};
  const double betas[3] = {1.0, 10.0, 0.5};
  const double gammas[3] = {0.1, 1.0, 5.0};
  for (int i = 0; i < 3; ++i) {
    Hyperparams hyper{alphas[i], betas[i], gammas[i]};
    const double b = hyper.beta;

    const double together_distinct =
        hyper.gamma * (1.0 + hyper.alpha) * b / (2.0 * (2.0 * b + 1.0));
    const double together_same =
        hyper.gamma * (1.0 + hyper.alpha) * (b + 1.0) / (2.0 * (2.0 * b + 1.0));
    const double apart = hyper.gamma * hyper.gamma / 4.0;

    auto distinct = exact_posterior({0, 1}, 2, hyper);
    CHECK(distinct.at("00") ==
          Catch::Approx(together_distinct / (together_distinct + apart)).epsilon(1e-12));
    auto same = exact_posterior({0, 0}, 2, hyper);
    CHECK(same.at("00") ==
          Catch::Approx(together_same / (together_same + apart)).epsilon(1e-12));

    // Identical words co-cluster more readily than distinct ones.
    CHECK(same.at("00") > distinct.at("00"));
  }
}

TEST_CASE("huge gamma splits observations apart", "[synth]") {
  auto posterior = exact_posterior({0, 0}, 2, {0.1, 1.0, 1e9});
  CHECK(posterior.at("01") > 0.999);
}

TEST_CASE("exact posterior normalizes and covers all partitions", "[synth]") {
  auto posterior = exact_posterior({0, 1, 2, 0, 1, 2}, 3, {0.3, 0.7, 0.4});
  CHECK(posterior.size() == 203);  // Bell(6)
  double sum = 0.0;
  for (const auto& [key, p] : posterior) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("exact posterior is exchangeable", "[synth]") {
  const std::vector<std::uint32_t> words{0, 1, 0, 2};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::uint32_t> shuffled(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) shuffled[i] = words[perm[i]];

  Hyperparams hyper{0.4, 1.5, 0.6};
  auto base = exact_posterior(words, 3, hyper);
  auto moved = exact_posterior(shuffled, 3, hyper);
  REQUIRE(base.size() == moved.size());

  // Mass of each partition must follow the observations it groups.
  std::map<std::string, double> remapped;
  for (const auto& [key, p] : base) remapped[permuted_key(key, perm)] += p;
  for (const auto& [key, p] : moved)
    CHECK(p == Catch::Approx(remapped.at(key)).margin(1e-12));
}

TEST_CASE("exact posterior rejects oversized instances", "[synth]") {
  Hyperparams hyper{0.1, 1.0, 0.1};
  CHECK_THROWS_AS(exact_posterior({}, 2, hyper), ConfigError);
  CHECK_THROWS_AS(exact_posterior({0, 0, 0, 0, 0, 0, 0, 0, 0}, 2, hyper), ConfigError);
  CHECK_THROWS_AS(exact_posterior({0}, 4, hyper), ConfigError);
  CHECK_THROWS_AS(exact_posterior({3}, 3, hyper), ConfigError);
  CHECK_THROWS_AS(exact_posterior({0}, 0, hyper), ConfigError);
}

TEST_CASE("partition keys canonicalize first occurrences", "[synth]") {
  CHECK(partition_key({5, 5, 2, 5, 2}) == "00101");
  CHECK(partition_key({0, 1, 2}) == "012");
  CHECK(partition_key({1, 0, 0, 2}) == "0112");
  CHECK(partition_key({}) == "");
}

TEST_CASE("ground truth JSON round trips", "[synth]") {
  GroundTruth truth;
  truth.frames = 9;
  truth.vocab_size = 4;
  truth.events = {{2, 5, 0.75, 1}, {7, 9, 1.0, 2}};
  truth.labels = {0, 0, 1, 2, 1};

  std::ostringstream out;
  write_truth_json(out, truth);
  std::istringstream in(out.str());
  auto loaded = read_truth_json(in);

  CHECK(loaded.frames == 9);
  CHECK(loaded.vocab_size == 4);
  REQUIRE(loaded.events.size() == 2);
  CHECK(loaded.events[0].t_start == 2);
  CHECK(loaded.events[0].t_end == 5);
  CHECK(loaded.events[0].intensity == 0.75);
  CHECK(loaded.events[0].rank == 1);
  CHECK(loaded.events[1].rank == 2);
  CHECK(loaded.labels == truth.labels);
}

TEST_CASE("ground truth JSON is stable", "[synth]") {
  GroundTruth truth;
  truth.frames = 3;
  truth.vocab_size = 2;
  truth.events = {{1, 2, 0.5, 1}};
  truth.labels = {1, 0};

  std::ostringstream out;
  write_truth_json(out, truth);
  CHECK(out.str() ==
        "{\n"
        "  \"T\": 3,\n"
        "  \"V\": 2,\n"
        "  \"events\": [\n"
        "    {\n"
        "      \"t_start\": 1,\n"
        "      \"t_end\": 2,\n"
        "      \"intensity\": 0.5,\n"
        "      \"rank\": 1\n"
        "    }\n"
        "  ],\n"
        "  \"labels\": [\n"
        "    1,\n"
        "    0\n"
        "  ]\n"
        "}\n");
}

TEST_CASE("ground truth JSON parse errors are explicit", "[synth]") {
  const auto read = [](const std::string& text) {
    std::istringstream in(text);
    return read_truth_json(in);
  };
  CHECK_THROWS_AS(read("not json"), ParseError);
  CHECK_THROWS_AS(read("{\"T\": 3}"), ParseError);
  CHECK_THROWS_AS(read("{\"T\": 3, \"V\": 2, \"events\": [{\"t_start\": 0}]}"), ParseError);
  CHECK_THROWS_AS(read("{\"T\": -1, \"V\": 2, \"events\": []}"), ParseError);
}

TEST_CASE("event density stacks window intensities", "[synth]") {
  GroundTruth truth;
  truth.frames = 7;
  truth.vocab_size = 2;
  truth.events = {{2, 4, 0.8, 1}, {5, 6, 0.5, 2}};
  CHECK(event_density(truth) == std::vector<double>{0.0, 0.0, 0.8, 0.8, 0.0, 0.5, 0.0});
}
