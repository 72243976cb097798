// streamtopics: stream -> topics -> perplexity pipeline driver.
//
// Subcommands: synth, extract, model, score, eval. Every command reads an
// optional flat key=value config (--config), applies --set overrides and
// --seed, writes its outputs under --out, and echoes the merged config to
// <out>/effective.config. Outputs depend only on inputs, config, and seed.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "streamtopics/config.hpp"
#include "streamtopics/errors.hpp"
#include "streamtopics/features.hpp"
#include "streamtopics/image.hpp"
#include "streamtopics/scoring.hpp"
#include "streamtopics/synth.hpp"
#include "streamtopics/topic_model.hpp"
#include "streamtopics/word_stream.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common_flags(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key = value config file");
  cmd->add_option("--out", opts.out_dir, "output directory")->required();
  cmd->add_option("--set", opts.overrides, "override a config key (key=value, repeatable)");
  cmd->add_option("--seed", opts.seed, "override the seed config key");
}

stm::Config merge_config(const CommonOpts& opts) {
  stm::Config cfg;
  if (!opts.config_path.empty()) {
    if (!fs::exists(opts.config_path))
      throw stm::ConfigError("config file not found: '" + opts.config_path + "'");
    cfg = stm::Config::from_file(opts.config_path);
  }
  for (const std::string& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw stm::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) cfg.set("seed", std::to_string(*opts.seed));
  return cfg;
}

fs::path prepare_out_dir(const CommonOpts& opts) {
  const fs::path out(opts.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    throw stm::ConfigError("cannot create output directory '" + opts.out_dir + "'");
  return out;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw stm::ConfigError("cannot open '" + path.string() + "' for writing");
  return out;
}

void write_effective_config(const fs::path& out_dir, const stm::Config& cfg) {
  auto out = open_output(out_dir / "effective.config");
  out << cfg.serialize();
}

void require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw stm::ConfigError(what + " is required");
  if (!fs::exists(path)) throw stm::ConfigError(what + " not found: '" + path + "'");
}

// ---------------------------------------------------------------- synth --

int cmd_synth(const CommonOpts& opts) {
  const stm::Config cfg = merge_config(opts);
  const stm::SynthSpec spec = stm::parse_synth_spec(cfg);
  const fs::path out_dir = prepare_out_dir(opts);

  const stm::SynthResult result = stm::generate(spec);
  {
    auto out = open_output(out_dir / "stream.words");
    stm::write_stream(out, result.stream);
  }
  {
    auto out = open_output(out_dir / "truth.json");
    stm::write_truth_json(out, result.truth);
  }
  write_effective_config(out_dir, cfg);
  std::cout << "synth: " << result.stream.observations.size() << " observations over "
            << spec.frames << " frames, " << spec.windows.size() << " planted windows\n";
  return 0;
}

// -------------------------------------------------------------- extract --

int cmd_extract(const CommonOpts& opts, const std::string& frames_dir) {
  const stm::Config cfg = merge_config(opts);
  const stm::ExtractConfig ec = stm::ExtractConfig::from_config(cfg);
  if (!fs::is_directory(frames_dir))
    throw stm::ConfigError("frames directory not found: '" + frames_dir + "'");

  std::vector<fs::path> frames;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") frames.push_back(entry.path());
  }
  std::sort(frames.begin(), frames.end());
  if (frames.empty())
    throw stm::ConfigError("no .ppm/.pgm frames in '" + frames_dir + "'");

  const fs::path out_dir = prepare_out_dir(opts);
  stm::WordExtractor extractor(ec);
  for (const fs::path& path : frames)
    extractor.accumulate_training(stm::read_image_file(path.string()));
  extractor.train();

  stm::WordStream stream;
  stream.layout = extractor.layout();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const stm::Frame frame = stm::read_image_file(frames[t].string());
    std::vector<stm::WordObservation> words =
        extractor.extract(frame, static_cast<std::uint32_t>(t));
    std::cout << "frame " << frames[t].filename().string() << ": " << words.size()
              << " words\n";
    stream.observations.insert(stream.observations.end(), words.begin(), words.end());
  }

  {
    auto out = open_output(out_dir / "stream.words");
    stm::write_stream(out, stream);
  }
  {
    auto out = open_output(out_dir / "codebook.txt");
    stm::write_codebook(out, extractor.codebook());
  }
  write_effective_config(out_dir, cfg);
  return 0;
}

// ---------------------------------------------------------------- model --

void write_labels_csv(const fs::path& path, const stm::TopicModel& model) {
  auto out = open_output(path);
  out << "i,t,label\n";
  const auto& obs = model.observations();
  const auto& labels = model.assignments();
  for (std::size_t i = 0; i < obs.size(); ++i)
    out << i << ',' << obs[i].t << ',' << labels[i] << '\n';
}

std::vector<std::int32_t> parse_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw stm::ParseError("cannot open labels file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || (line != "i,t,label" && line != "i,t,label\r"))
    throw stm::ParseError("labels line 1: expected header 'i,t,label'");
  std::vector<std::int32_t> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos)
      throw stm::ParseError("labels line " + std::to_string(line_no) + ": expected 3 fields");
    try {
      std::size_t used = 0;
      const long v = std::stol(line.substr(c2 + 1), &used);
      if (used != line.size() - c2 - 1) throw std::invalid_argument("");
      labels.push_back(static_cast<std::int32_t>(v));
    } catch (const std::exception&) {
      throw stm::ParseError("labels line " + std::to_string(line_no) + ": bad label");
    }
  }
  return labels;
}

int cmd_model(const CommonOpts& opts, const std::string& stream_path,
              const std::string& resume_path) {
  const stm::Config cfg = merge_config(opts);
  cfg.restrict_to({"cell_size", "spatial_radius", "temporal_radius", "alpha", "beta", "gamma",
                   "iters_per_step", "seed", "max_frames"});
  require_input(stream_path, "--stream");

  stm::ModelConfig mc;
  mc.cell_size = cfg.get_u32("cell_size", mc.cell_size);
  mc.neighborhood.spatial_radius = cfg.get_u32("spatial_radius", mc.neighborhood.spatial_radius);
  mc.neighborhood.temporal_radius = cfg.get_u32("temporal_radius", mc.neighborhood.temporal_radius);
  mc.prior.alpha = cfg.get_double("alpha", mc.prior.alpha);
  mc.prior.beta = cfg.get_double("beta", mc.prior.beta);
  mc.prior.gamma = cfg.get_double("gamma", mc.prior.gamma);
  mc.iters_per_step = cfg.get_u32("iters_per_step", mc.iters_per_step);
  mc.seed = cfg.get_u64("seed", mc.seed);
  const std::uint32_t max_frames = cfg.get_u32("max_frames", 0);

  const stm::WordStream stream = stm::parse_stream_file(stream_path);
  if (stream.observations.empty()) throw stm::ModelError("stream has no observations");

  std::optional<stm::TopicModel> model;
  const bool resuming = !resume_path.empty();
  if (resuming) {
    require_input(resume_path, "--resume checkpoint");
    std::ifstream in(resume_path, std::ios::binary);
    model = stm::TopicModel::load_checkpoint(in);
  } else {
    model.emplace(stream.layout, mc);
  }

  const auto& obs = stream.observations;
  std::uint32_t frames_done = 0;
  std::size_t i = 0;
  while (i < obs.size()) {
    const std::uint32_t t = obs[i].t;
    std::size_t j = i;
    while (j < obs.size() && obs[j].t == t) ++j;
    if (max_frames > 0 && t >= max_frames) break;
    if (resuming && !model->empty() && t <= model->frame_cursor()) {
      i = j;
      continue;
    }
    for (; i < j; ++i) model->add_observation(obs[i]);
    model->refine_step(t);
    ++frames_done;
    i = j;
  }
  if (model->empty()) throw stm::ModelError("no frames were processed");

  const fs::path out_dir = prepare_out_dir(opts);
  {
    auto out = open_output(out_dir / "checkpoint.stm");
    model->save_checkpoint(out);
  }
  write_labels_csv(out_dir / "labels.csv", *model);
  write_effective_config(out_dir, cfg);
  std::cout << "model: " << frames_done << " frames ingested, " << model->total_count()
            << " observations, " << model->active_topic_count() << " active topics\n";
  return 0;
}

// ---------------------------------------------------------------- score --

int cmd_score(const CommonOpts& opts, const std::string& checkpoint_path,
              const std::string& assignments_path) {
  const stm::Config cfg = merge_config(opts);
  cfg.restrict_to({"max_peaks", "min_separation", "seed"});
  const std::uint32_t max_peaks = cfg.get_u32("max_peaks", 8);
  const std::uint32_t min_separation = cfg.get_u32("min_separation", 20);
  require_input(checkpoint_path, "--checkpoint");

  std::ifstream in(checkpoint_path, std::ios::binary);
  const stm::TopicModel model = stm::TopicModel::load_checkpoint(in);
  if (model.empty()) throw stm::ModelError("checkpoint holds no observations");

  if (!assignments_path.empty()) {
    require_input(assignments_path, "--assignments");
    const std::vector<std::int32_t> labels = parse_labels_csv(assignments_path);
    if (labels != model.assignments())
      throw stm::ModelError("assignments file does not match the checkpoint");
  }

  const stm::TopicTimeline timeline = stm::timeline_from_model(model);
  const stm::PerplexityReport report = stm::build_report(timeline, max_peaks, min_separation);

  const fs::path out_dir = prepare_out_dir(opts);
  {
    auto out = open_output(out_dir / "report.csv");
    stm::write_report_csv(out, timeline, report);
  }
  {
    auto out = open_output(out_dir / "peaks.json");
    stm::write_peaks_json(out, report.peaks);
  }
  write_effective_config(out_dir, cfg);
  std::cout << "score: " << timeline.rows() << " timesteps, " << timeline.columns()
            << " topics, " << report.peaks.size() << " peaks\n";
  return 0;
}

// ----------------------------------------------------------------- eval --

int cmd_eval(const CommonOpts& opts, const std::string& report_path,
             const std::string& truth_path) {
  const stm::Config cfg = merge_config(opts);
  cfg.restrict_to({"max_peaks", "min_separation", "seed"});
  const std::uint32_t max_peaks = cfg.get_u32("max_peaks", 8);
  const std::uint32_t min_separation = cfg.get_u32("min_separation", 20);
  require_input(report_path, "--report");
  require_input(truth_path, "--truth");

  std::ifstream report_in(report_path);
  const stm::ReportData report = stm::parse_report_csv(report_in);
  std::ifstream truth_in(truth_path);
  const stm::GroundTruth truth = stm::read_truth_json(truth_in);

  if (report.frames.size() != truth.frames)
    throw stm::ModelError("report covers " + std::to_string(report.frames.size()) +
                          " timesteps but ground truth covers " + std::to_string(truth.frames));
  std::vector<std::pair<std::uint32_t, std::uint32_t>> windows;
  for (const auto& e : truth.events) windows.emplace_back(e.t_start, e.t_end);

  const stm::EvalResult result = stm::evaluate_report(report, stm::event_density(truth), windows,
                                                      max_peaks, min_separation);

  const fs::path out_dir = prepare_out_dir(opts);
  {
    auto out = open_output(out_dir / "eval.json");
    stm::write_eval_json(out, result);
  }
  write_effective_config(out_dir, cfg);
  std::size_t hits = 0;
  for (const auto& p : result.peaks) hits += p.hit ? 1 : 0;
  std::cout << "eval: ks=" << result.ks << " matched_topic=" << result.matched_topic << " peaks_hit="
            << hits << "/" << result.peaks.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatiotemporal topic modeling and perplexity-based anomaly detection"};
  app.require_subcommand(1);

  CommonOpts synth_opts;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic word stream with planted anomalies");
  add_common_flags(synth, synth_opts);

  CommonOpts extract_opts;
  std::string frames_dir;
  CLI::App* extract = app.add_subcommand("extract", "turn a directory of PPM/PGM frames into a word stream");
  add_common_flags(extract, extract_opts);
  extract->add_option("--frames", frames_dir, "directory of numbered .ppm/.pgm frames")->required();

  CommonOpts model_opts;
  std::string stream_path, resume_path;
  CLI::App* model = app.add_subcommand("model", "fit the streaming topic model to a word stream");
  add_common_flags(model, model_opts);
  model->add_option("--stream", stream_path, "word stream file")->required();
  model->add_option("--resume", resume_path, "checkpoint to resume from");

  CommonOpts score_opts;
  std::string checkpoint_path, assignments_path;
  CLI::App* score = app.add_subcommand("score", "score timesteps by perplexity and extract peaks");
  add_common_flags(score, score_opts);
  score->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  score->add_option("--assignments", assignments_path, "labels.csv to cross-check");

  CommonOpts eval_opts;
  std::string report_path, truth_path;
  CLI::App* eval = app.add_subcommand("eval", "compare a score report against ground truth");
  add_common_flags(eval, eval_opts);
  eval->add_option("--report", report_path, "report.csv from the score command")->required();
  eval->add_option("--truth", truth_path, "ground truth JSON from the synth command")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_opts);
    if (extract->parsed()) return cmd_extract(extract_opts, frames_dir);
    if (model->parsed()) return cmd_model(model_opts, stream_path, resume_path);
    if (score->parsed()) return cmd_score(score_opts, checkpoint_path, assignments_path);
    if (eval->parsed()) return cmd_eval(eval_opts, report_path, truth_path);
  } catch (const stm::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
