#include "platerec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace platerec {

namespace fs = std::filesystem;

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double ratio(std::string_view a, std::string_view b) {
  const std::size_t total = a.size() + b.size();
  if (total == 0) return 1.0;
  return static_cast<double>(total - edit_distance(a, b)) / static_cast<double>(total);
}

double char_accuracy(const ConfusionCounts& counts) {
  std::uint64_t trace = 0, sum = 0;
  const std::size_t n = static_cast<std::size_t>(std::sqrt(static_cast<double>(counts.size())));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      sum += counts[r * n + c];
      if (r == c) trace += counts[r * n + c];
    }
  }
  if (sum == 0) throw std::invalid_argument("char_accuracy: confusion matrix is empty");
  return 100.0 * static_cast<double>(trace) / static_cast<double>(sum);
}

std::vector<double> normalize_rows(const ConfusionCounts& counts) {
  const std::size_t n = kNumClasses;
  std::vector<double> out(counts.size(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::uint64_t row_sum = 0;
    for (std::size_t c = 0; c < n; ++c) row_sum += counts[r * n + c];
    if (row_sum == 0) continue;
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = 100.0 * static_cast<double>(counts[r * n + c]) / static_cast<double>(row_sum);
    }
  }
  return out;
}

EvalReport evaluate_strings(std::span<const std::string> predicted,
                            std::span<const std::string> targets) {
  if (predicted.size() != targets.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(predicted.size()) +
                                " predictions for " + std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw std::invalid_argument("evaluate: empty sample set");
  EvalReport report;
  report.samples = targets.size();
  std::size_t perfect = 0;
  double dist_sum = 0, ratio_sum = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const std::string& p = predicted[i];
    const std::string& t = targets[i];
    if (p == t) ++perfect;
    dist_sum += static_cast<double>(edit_distance(p, t));
    ratio_sum += ratio(p, t);
    if (p.size() != t.size()) {
      ++report.excluded_count;
      continue;
    }
    for (std::size_t k = 0; k < t.size(); ++k) {
      const int row = class_index(t[k]);
      const int col = class_index(p[k]);
      if (row < 0 || col < 0) {
        throw std::invalid_argument("evaluate: character outside the alphabet in sample " +
                                    std::to_string(i));
      }
      ++report.confusion[static_cast<std::size_t>(row) * kNumClasses +
                         static_cast<std::size_t>(col)];
      ++report.included_pairs;
    }
  }
  const double n = static_cast<double>(targets.size());
  report.percentage_perfect = 100.0 * static_cast<double>(perfect) / n;
  report.avg_edit_distance = dist_sum / n;
  report.avg_ratio = ratio_sum / n;
  if (report.included_pairs > 0) report.char_accuracy = char_accuracy(report.confusion);
  return report;
}

void emit_report(const EvalReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw std::runtime_error("cannot create report directory " + out_dir.string());
  }
  const auto open = [](const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
  };

  {
    const fs::path path = out_dir / "metrics.tsv";
    std::ofstream out = open(path);
    out << "percentage_perfect\tavg_edit_distance\tavg_ratio\tchar_accuracy\texcluded_count\n";
    out << std::fixed << std::setprecision(6) << report.percentage_perfect << '\t'
        << report.avg_edit_distance << '\t' << report.avg_ratio << '\t';
    if (report.char_accuracy) {
      out << *report.char_accuracy;
    } else {
      out << "NA";
    }
    out << '\t' << report.excluded_count << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  {
    const fs::path path = out_dir / "confusion.tsv";
    std::ofstream out = open(path);
    for (std::size_t c = 0; c < kNumClasses; ++c) out << (c ? "\t" : "") << kAlphabet[c];
    out << '\n';
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        out << (c ? "\t" : "") << report.confusion[r * kNumClasses + c];
      }
      out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  {
    const fs::path path = out_dir / "confusion.pgm";
    std::ofstream out = open(path);
    const std::vector<double> pct = normalize_rows(report.confusion);
    out << "P5\n" << kNumClasses << ' ' << kNumClasses << "\n255\n";
    for (double v : pct) {
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v / 100.0 * 255.0))));
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
}

MetricsRow read_metrics(const fs::path& metrics_tsv) {
  std::ifstream in(metrics_tsv);
  if (!in) throw std::runtime_error("cannot open " + metrics_tsv.string());
  std::string header, line;
  if (!std::getline(in, header) || !std::getline(in, line)) {
    throw std::runtime_error(metrics_tsv.string() + ": expected header and one data row");
  }
  std::istringstream fields(line);
  std::string pp, ed, ra, ca, ex;
  if (!std::getline(fields, pp, '\t') || !std::getline(fields, ed, '\t') ||
      !std::getline(fields, ra, '\t') || !std::getline(fields, ca, '\t') ||
      !std::getline(fields, ex)) {
    throw std::runtime_error(metrics_tsv.string() + ": expected 5 columns");
  }
  MetricsRow row;
  row.percentage_perfect = std::stod(pp);
  row.avg_edit_distance = std::stod(ed);
  row.avg_ratio = std::stod(ra);
  if (ca != "NA") row.char_accuracy = std::stod(ca);
  row.excluded_count = std::stoul(ex);
  return row;
}

}  // namespace platerec
