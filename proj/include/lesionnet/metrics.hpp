#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lesionnet {

// K x K counts, rows = actual class, columns = predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> labels);
  ConfusionMatrix(std::vector<std::string> labels, std::vector<std::uint64_t> counts);

  std::size_t num_classes() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  std::uint64_t at(std::size_t actual, std::size_t predicted) const;
  void add(std::size_t actual, std::size_t predicted);
  // Fails when the cell is already zero.
  void remove(std::size_t actual, std::size_t predicted);

  std::uint64_t row_sum(std::size_t actual) const;
  std::uint64_t col_sum(std::size_t predicted) const;
  std::uint64_t trace() const;
  std::uint64_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index(std::size_t actual, std::size_t predicted) const;

  std::vector<std::string> labels_;
  std::vector<std::uint64_t> counts_;
};

// Labels default to "0".."K-1".
ConfusionMatrix confusion_matrix(std::span<const std::size_t> y_true,
                                 std::span<const std::size_t> y_pred, std::size_t num_classes,
                                 std::vector<std::string> labels = {});

struct ClassMetrics {
  std::string label;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::uint64_t support = 0;
  // Set when the denominator was zero and the metric was defined as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);

struct AverageMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> classes;
  AverageMetrics micro;
  AverageMetrics weighted;
  double accuracy = 0;
  std::uint64_t total = 0;

  bool has_undefined() const;
};

// Fails with kInvalidArgument on a matrix with no samples.
MetricsReport aggregate_metrics(const ConfusionMatrix& cm);

enum class ReportFormat { kText, kCsv, kSvg };

ReportFormat parse_report_format(const std::string& token);
const char* to_string(ReportFormat format);

std::string render_report(const MetricsReport& report, const ConfusionMatrix& cm,
                          ReportFormat format);

// First row: a corner cell then the predicted-class labels. Each following
// row: the actual-class label then K counts.
ConfusionMatrix parse_confusion_csv(std::istream& in, const std::string& source);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);
std::string confusion_to_csv(const ConfusionMatrix& cm);
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);

}  // namespace lesionnet
