#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "platerec/plate.hpp"

namespace platerec {

/// Levenshtein distance with unit insertion, deletion and substitution costs.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// ((M + N) − distance) / (M + N); 1.0 when both strings are empty.
double ratio(std::string_view a, std::string_view b);

/// kNumClasses × kNumClasses counts; row = target class, column = predicted.
using ConfusionCounts = std::vector<std::uint64_t>;

/// 100 · trace / sum. Throws std::invalid_argument on an all-zero matrix.
double char_accuracy(const ConfusionCounts& counts);

/// Each row scaled to percentages; rows with no occurrences stay zero.
std::vector<double> normalize_rows(const ConfusionCounts& counts);

struct EvalReport {
  std::size_t samples = 0;
  double percentage_perfect = 0;
  double avg_edit_distance = 0;
  double avg_ratio = 0;
  ConfusionCounts confusion = ConfusionCounts(kNumClasses * kNumClasses, 0);
  std::optional<double> char_accuracy;  // empty when no pair was included
  std::size_t excluded_count = 0;
  std::size_t included_pairs = 0;
};

/// Scores stripped plate strings. Character pairs enter the confusion matrix
/// only when predicted and target lengths agree.
EvalReport evaluate_strings(std::span<const std::string> predicted,
                            std::span<const std::string> targets);

/// Writes metrics.tsv, confusion.tsv and confusion.pgm into `out_dir`.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir);

/// The headline numbers parsed back from metrics.tsv.
struct MetricsRow {
  double percentage_perfect = 0;
  double avg_edit_distance = 0;
  double avg_ratio = 0;
  std::optional<double> char_accuracy;
  std::size_t excluded_count = 0;
};

MetricsRow read_metrics(const std::filesystem::path& metrics_tsv);

}  // namespace platerec
