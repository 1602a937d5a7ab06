#include "lesionnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csv_util.hpp"
#include "lesionnet/error.hpp"

namespace lesionnet {
namespace {

// num / den as a correctly rounded double; both stay below 2^53 for any
// realistic sample count, so the conversion is exact before dividing.
double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string render_text(const MetricsReport& r) {
  std::size_t width = 16;
  for (const ClassMetrics& c : r.classes) width = std::max(width, c.label.size());
  std::string out;
  char buf[256];
  auto row = [&](const std::string& name, const std::string& p, const std::string& rc,
                 const std::string& f, const std::string& s) {
    std::snprintf(buf, sizeof buf, "%-*s  %9s  %9s  %9s  %9s\n", static_cast<int>(width),
                  name.c_str(), p.c_str(), rc.c_str(), f.c_str(), s.c_str());
    out += buf;
  };
  row("Class", "Precision", "Recall", "f1-score", "Support");
  for (const ClassMetrics& c : r.classes) {
    row(c.label, fixed4(c.precision) + (c.precision_undefined ? "*" : ""),
        fixed4(c.recall) + (c.recall_undefined ? "*" : ""), fixed4(c.f1),
        std::to_string(c.support));
  }
  out += '\n';
  const std::string total = std::to_string(r.total);
  row("Micro Average", fixed4(r.micro.precision), fixed4(r.micro.recall), fixed4(r.micro.f1),
      total);
  row("Weighted Average", fixed4(r.weighted.precision), fixed4(r.weighted.recall),
      fixed4(r.weighted.f1), total);
  out += "\nAccuracy: " + fixed4(r.accuracy) + " (" + total + " samples)\n";
  if (r.has_undefined()) out += "* zero denominator, reported as 0\n";
  return out;
}

std::string render_csv(const MetricsReport& r) {
  std::string out = "class,precision,recall,f1,support\n";
  for (const ClassMetrics& c : r.classes) {
    out += detail::csv_field(c.label) + ',' + fixed4(c.precision) + ',' + fixed4(c.recall) +
           ',' + fixed4(c.f1) + ',' + std::to_string(c.support) + '\n';
  }
  const std::string total = std::to_string(r.total);
  out += "micro," + fixed4(r.micro.precision) + ',' + fixed4(r.micro.recall) + ',' +
         fixed4(r.micro.f1) + ',' + total + '\n';
  out += "weighted," + fixed4(r.weighted.precision) + ',' + fixed4(r.weighted.recall) + ',' +
         fixed4(r.weighted.f1) + ',' + total + '\n';
  out += "accuracy," + fixed4(r.accuracy) + '\n';
  return out;
}

// Linear white -> dark blue scale on count / max count. Any non-zero count gets
// at least a faint tint so it never reads as an empty cell.
std::string cell_color(std::uint64_t count, std::uint64_t max_count) {
  if (count == 0 || max_count == 0) return "#ffffff";
  const double t =
      0.06 + 0.94 * static_cast<double>(count) / static_cast<double>(max_count);
  const int r = static_cast<int>(255.0 + (8.0 - 255.0) * t + 0.5);
  const int g = static_cast<int>(255.0 + (48.0 - 255.0) * t + 0.5);
  const int b = static_cast<int>(255.0 + (107.0 - 255.0) * t + 0.5);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string render_svg(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  const int cell = 56;
  const int margin = 150;
  const int size = margin + static_cast<int>(k) * cell + 20;
  const std::uint64_t max_count =
      cm.counts().empty() ? 0 : *std::max_element(cm.counts().begin(), cm.counts().end());

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"" << margin << "\" y=\"16\">predicted</text>\n";
  out << "<text x=\"4\" y=\"" << margin - 6 << "\">actual</text>\n";
  for (std::size_t j = 0; j < k; ++j) {
    const int x = margin + static_cast<int>(j) * cell + cell / 2;
    out << "<text x=\"" << x << "\" y=\"" << margin - 8 << "\" text-anchor=\"start\" transform=\"rotate(-45 "
        << x << ' ' << margin - 8 << ")\">" << xml_escape(cm.labels()[j]) << "</text>\n";
  }
  for (std::size_t i = 0; i < k; ++i) {
    const int y = margin + static_cast<int>(i) * cell;
    out << "<text x=\"" << margin - 6 << "\" y=\"" << y + cell / 2 + 4
        << "\" text-anchor=\"end\">" << xml_escape(cm.labels()[i]) << "</text>\n";
    for (std::size_t j = 0; j < k; ++j) {
      const int x = margin + static_cast<int>(j) * cell;
      const std::uint64_t n = cm.at(i, j);
      const bool dark = max_count > 0 && 2 * n > max_count;
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
          << cell << "\" fill=\"" << cell_color(n, max_count) << "\" stroke=\"#cccccc\"/>\n";
      out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
          << "\" text-anchor=\"middle\" fill=\"" << (dark ? "#ffffff" : "#000000") << "\">" << n
          << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> labels)
    : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> labels,
                                 std::vector<std::uint64_t> counts)
    : labels_(std::move(labels)), counts_(std::move(counts)) {
  if (counts_.size() != labels_.size() * labels_.size()) {
    fail(ErrorKind::kInvalidArgument, "confusion matrix needs " +
                                          std::to_string(labels_.size() * labels_.size()) +
                                          " counts for " + std::to_string(labels_.size()) +
                                          " labels, got " + std::to_string(counts_.size()));
  }
}

std::size_t ConfusionMatrix::index(std::size_t actual, std::size_t predicted) const {
  const std::size_t k = num_classes();
  if (actual >= k || predicted >= k) {
    fail(ErrorKind::kInvalidArgument, "class index (" + std::to_string(actual) + ", " +
                                          std::to_string(predicted) + ") out of range for K=" +
                                          std::to_string(k));
  }
  return actual * k + predicted;
}

std::uint64_t ConfusionMatrix::at(std::size_t actual, std::size_t predicted) const {
  return counts_[index(actual, predicted)];
}

void ConfusionMatrix::add(std::size_t actual, std::size_t predicted) {
  ++counts_[index(actual, predicted)];
}

void ConfusionMatrix::remove(std::size_t actual, std::size_t predicted) {
  std::uint64_t& c = counts_[index(actual, predicted)];
  if (c == 0) fail(ErrorKind::kInvalidArgument, "cannot remove from an empty cell");
  --c;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < num_classes(); ++p) s += at(actual, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t a = 0; a < num_classes(); ++a) s += at(a, predicted);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < num_classes(); ++c) s += at(c, c);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (std::uint64_t c : counts_) s += c;
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> y_true,
                                 std::span<const std::size_t> y_pred, std::size_t num_classes,
                                 std::vector<std::string> labels) {
  if (y_true.size() != y_pred.size()) {
    fail(ErrorKind::kInvalidArgument, "y_true has " + std::to_string(y_true.size()) +
                                          " entries, y_pred has " +
                                          std::to_string(y_pred.size()));
  }
  if (labels.empty()) {
    for (std::size_t c = 0; c < num_classes; ++c) labels.push_back(std::to_string(c));
  } else if (labels.size() != num_classes) {
    fail(ErrorKind::kInvalidArgument, "label count does not match class count");
  }
  ConfusionMatrix cm(std::move(labels));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= num_classes || y_pred[i] >= num_classes) {
      fail(ErrorKind::kInvalidArgument,
           "sample " + std::to_string(i) + ": class index out of range [0, " +
               std::to_string(num_classes) + ")");
    }
    cm.add(y_true[i], y_pred[i]);
  }
  return cm;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> out;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t row = cm.row_sum(c);
    const std::uint64_t col = cm.col_sum(c);
    ClassMetrics m;
    m.label = cm.labels()[c];
    m.support = row;
    m.precision = ratio(tp, col);
    m.recall = ratio(tp, row);
    // 2PR / (P + R) with the divisions deferred; 0 when tp is 0.
    m.f1 = ratio(2 * tp, row + col);
    m.precision_undefined = col == 0;
    m.recall_undefined = row == 0;
    out.push_back(std::move(m));
  }
  return out;
}

bool MetricsReport::has_undefined() const {
  return std::any_of(classes.begin(), classes.end(), [](const ClassMetrics& c) {
    return c.precision_undefined || c.recall_undefined;
  });
}

MetricsReport aggregate_metrics(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) fail(ErrorKind::kInvalidArgument, "confusion matrix holds no samples");
  MetricsReport r;
  r.classes = per_class_metrics(cm);
  r.total = n;
  r.accuracy = ratio(cm.trace(), n);
  // Every correct prediction is a true positive of exactly one class and every
  // error is one false positive plus one false negative.
  r.micro = {r.accuracy, r.accuracy, r.accuracy};

  // support_c * metric_c summed, each term formed from integers first. For
  // recall the term is tp_c exactly, so the weighted recall is trace / N.
  double wp = 0, wr = 0, wf = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t row = cm.row_sum(c);
    const std::uint64_t col = cm.col_sum(c);
    wp += ratio(row * tp, col);
    wr += ratio(row * tp, row);
    wf += ratio(row * 2 * tp, row + col);
  }
  const auto nd = static_cast<double>(n);
  r.weighted = {wp / nd, wr / nd, wf / nd};
  return r;
}

ReportFormat parse_report_format(const std::string& token) {
  if (token == "text") return ReportFormat::kText;
  if (token == "csv") return ReportFormat::kCsv;
  if (token == "svg") return ReportFormat::kSvg;
  fail(ErrorKind::kInvalidArgument,
       "unknown report format '" + token + "' (expected text, csv or svg)");
}

const char* to_string(ReportFormat format) {
  switch (format) {
    case ReportFormat::kText: return "text";
    case ReportFormat::kCsv: return "csv";
    case ReportFormat::kSvg: return "svg";
  }
  return "?";
}

std::string render_report(const MetricsReport& report, const ConfusionMatrix& cm,
                          ReportFormat format) {
  switch (format) {
    case ReportFormat::kText: return render_text(report);
    case ReportFormat::kCsv: return render_csv(report);
    case ReportFormat::kSvg: return render_svg(cm);
  }
  fail(ErrorKind::kInvalidArgument, "unknown report format");
}

ConfusionMatrix parse_confusion_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> labels;
  std::vector<std::uint64_t> counts;
  std::size_t rows = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (!header_seen) {
      header_seen = true;
      if (fields.size() < 2) fail(ErrorKind::kIo, where + "header needs at least one class");
      for (std::size_t j = 1; j < fields.size(); ++j) labels.push_back(trim(fields[j]));
      continue;
    }
    if (fields.size() != labels.size() + 1) {
      fail(ErrorKind::kIo, where + "expected " + std::to_string(labels.size() + 1) +
                               " fields, got " + std::to_string(fields.size()));
    }
    if (rows >= labels.size()) fail(ErrorKind::kIo, where + "more rows than classes");
    if (trim(fields[0]) != labels[rows]) {
      fail(ErrorKind::kIo, where + "row label '" + trim(fields[0]) + "' does not match column '" +
                               labels[rows] + "'");
    }
    for (std::size_t j = 1; j < fields.size(); ++j) {
      const std::string cell = trim(fields[j]);
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        if (cell.empty() || cell[0] == '-') throw std::invalid_argument(cell);
        v = std::stoull(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size()) {
        fail(ErrorKind::kIo, where + "'" + cell + "' is not a non-negative integer count");
      }
      counts.push_back(v);
    }
    ++rows;
  }
  if (!header_seen) fail(ErrorKind::kIo, source + ": empty confusion matrix file");
  if (rows != labels.size()) {
    fail(ErrorKind::kIo, source + ": expected " + std::to_string(labels.size()) + " rows, got " +
                             std::to_string(rows));
  }
  return ConfusionMatrix(std::move(labels), std::move(counts));
}

ConfusionMatrix read_confusion_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, path.string() + ": cannot open");
  return parse_confusion_csv(in, path.string());
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::string out = "actual\\predicted";
  for (const std::string& l : cm.labels()) out += ',' + detail::csv_field(l);
  out += '\n';
  for (std::size_t a = 0; a < cm.num_classes(); ++a) {
    out += detail::csv_field(cm.labels()[a]);
    for (std::size_t p = 0; p < cm.num_classes(); ++p) out += ',' + std::to_string(cm.at(a, p));
    out += '\n';
  }
  return out;
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, path.string() + ": cannot open for writing");
  out << confusion_to_csv(cm);
  if (!out) fail(ErrorKind::kIo, path.string() + ": write failed");
}

}  // namespace lesionnet
