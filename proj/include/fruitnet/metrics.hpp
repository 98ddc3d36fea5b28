#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fruitnet {

/// Rows are true classes, columns predicted classes.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Unreduced fraction; 0/0 reads as zero.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 0;

  double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
  /// Integer percent, rounded half up.
  std::int64_t percent() const { return den == 0 ? 0 : (200 * num + den) / (2 * den); }
  friend bool operator==(const Ratio&, const Ratio&) = default;
};

struct ClassMetrics {
  Ratio precision;  // tp / column sum
  Ratio recall;     // tp / row sum
  Ratio f1;         // 2 tp / (row sum + column sum)
  std::int64_t support = 0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct EvalReport {
  std::vector<std::string> class_names;
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  Ratio accuracy;  // trace / total

  std::int64_t total() const { return accuracy.den; }
};

/// Per-class metrics of a square nonnegative matrix. Names default to
/// "class_<i>". Throws ConfigError for non-square or negative input.
EvalReport classification_report(const ConfusionMatrix& confusion, std::vector<std::string> class_names = {});

/// Counts (true, predicted) pairs into a K x K matrix.
ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int num_classes);

/// Table-style text: metric rows (precision/recall/f1 in percent, support)
/// by class columns, then the confusion grid and overall accuracy.
std::string render_text(const EvalReport& report);
/// Counts, exact fractions and rounded percents.
std::string render_json(const EvalReport& report);
/// Rebuilds a report from render_json output (metrics are recomputed from
/// the confusion matrix and must agree with the stored ones).
EvalReport parse_json_report(const std::string& json);

enum class ReportFormat { kText, kJson };
void export_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);

}  // namespace fruitnet
