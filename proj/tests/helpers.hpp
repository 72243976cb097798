// Shared helpers for the test suite: scratch directories, CLI invocation,
// file utilities, and small statistical oracles kept independent of the
// library implementations they check.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace testutil {

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / (tag + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("could not create temp directory for " + tag);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path_.string() : (path_ / rel).string();
  }

 private:
  std::filesystem::path path_;
};

// Runs the CLI binary with the given arguments, capturing stdout+stderr.
// Returns the process exit code.
struct CliResult {
  int exit_code = -1;
  std::string output;
};

inline CliResult run_cli(const std::string& args,
                         const std::filesystem::path& capture_dir) {
  static const std::string binary = STM_CLI_PATH;
  auto log = capture_dir / "cli_output.log";
  std::string cmd = binary + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  CliResult result;
  if (status < 0) {
    result.exit_code = -1;
  } else {
    result.exit_code = (status >> 8) & 0xff;
  }
  std::ifstream in(log);
  std::ostringstream text;
  text << in.rdbuf();
  result.output = text.str();
  return result;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline bool files_identical(const std::filesystem::path& a,
                            const std::filesystem::path& b) {
  return read_file(a) == read_file(b);
}

// Brute-force two-sample Kolmogorov-Smirnov distance over discrete
// timelines. Mirrors the definition directly: normalize each series,
// then take the max absolute difference between running sums.
inline double ks_brute_force(const std::vector<double>& a,
                             const std::vector<double>& b) {
  double total_a = 0.0, total_b = 0.0;
  for (double v : a) total_a += v;
  for (double v : b) total_b += v;
  double best = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    double ca = 0.0, cb = 0.0;
    for (std::size_t i = 0; i <= t; ++i) {
      ca += a[i] / total_a;
      cb += b[i] / total_b;
    }
    best = std::max(best, std::fabs(ca - cb));
  }
  return best;
}

// Upper critical value of the chi-square distribution via the
// Wilson-Hilferty cube approximation. Good to a few percent for the
// degrees of freedom used in these tests, which is plenty for loose
// goodness-of-fit gates.
inline double chi_square_critical(double dof, double z_alpha) {
  double term = 1.0 - 2.0 / (9.0 * dof) + z_alpha * std::sqrt(2.0 / (9.0 * dof));
  return dof * term * term * term;
}

// Total variation distance between two distributions keyed by string.
inline double total_variation(const std::map<std::string, double>& p,
                              const std::map<std::string, double>& q) {
  double sum = 0.0;
  auto it_p = p.begin();
  auto it_q = q.begin();
  while (it_p != p.end() || it_q != q.end()) {
    if (it_q == q.end() || (it_p != p.end() && it_p->first < it_q->first)) {
      sum += std::fabs(it_p->second);
      ++it_p;
    } else if (it_p == p.end() || it_q->first < it_p->first) {
      sum += std::fabs(it_q->second);
      ++it_q;
    } else {
      sum += std::fabs(it_p->second - it_q->second);
      ++it_p;
      ++it_q;
    }
  }
  return 0.5 * sum;
}

// Chi-square goodness-of-fit statistic for observed counts against
// expected probabilities.
inline double chi_square_stat(const std::vector<std::uint64_t>& counts,
                              const std::vector<double>& probs) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    double expected = total * probs[i];
    if (expected <= 0.0) continue;
    double diff = static_cast<double>(counts[i]) - expected;
    stat += diff * diff / expected;
  }
  return stat;
}

}  // namespace testutil
