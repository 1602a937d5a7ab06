#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "lesionnet/error.hpp"
#include "lesionnet/metrics.hpp"

namespace ln = lesionnet;

namespace {

// Published 7-class ResNet confusion matrix, rows actual, columns predicted.
const std::vector<std::uint64_t> kResnetCounts = {
    63, 8,   6,   2,  3,    4,   0,   //
    4,  140, 1,   0,  9,    2,   0,   //
    11, 3,   245, 0,  40,   20,  0,   //
    1,  0,   0,   34, 0,    1,   0,   //
    1,  2,   5,   0,  2009, 16,  1,   //
    8,  9,   6,   1,  119,  194, 0,   //
    0,  0,   0,   0,  1,    1,   34};
const std::vector<std::string> kResnetLabels = {
    "Actinic keratoses", "Basal cell carcinoma", "Benign keratosis", "Dermatofibroma",
    "Melanocytic nevi",  "Melanoma",             "Vascular lesions"};

// Per-class metrics straight from label lists, no matrix involved.
struct Oracle {
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  double accuracy = 0;
};

Oracle oracle(const std::vector<std::size_t>& yt, const std::vector<std::size_t>& yp,
              std::size_t k) {
  Oracle o;
  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < yt.size(); ++i) {
      tp += yt[i] == c && yp[i] == c;
      fp += yt[i] != c && yp[i] == c;
      fn += yt[i] == c && yp[i] != c;
    }
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    o.precision.push_back(p);
    o.recall.push_back(r);
    o.f1.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
    o.support.push_back(tp + fn);
  }
  for (std::size_t i = 0; i < yt.size(); ++i) correct += yt[i] == yp[i];
  o.accuracy = double(correct) / double(yt.size());
  return o;
}

}  // namespace

TEST(Confusion, TwoByTwo) {
  const std::vector<std::size_t> yt = {0, 0, 1}, yp = {0, 1, 1};
  const auto cm = ln::confusion_matrix(yt, yp, 2);
  EXPECT_EQ(cm.counts(), (std::vector<std::uint64_t>{1, 1, 0, 1}));
  EXPECT_EQ(cm.labels(), (std::vector<std::string>{"0", "1"}));
  const auto r = ln::aggregate_metrics(cm);
  EXPECT_DOUBLE_EQ(r.accuracy, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.classes[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.classes[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.classes[1].precision, 0.5);
  EXPECT_DOUBLE_EQ(r.classes[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.classes[0].f1, 2.0 / 3.0);
}

TEST(Confusion, Errors) {
  const std::vector<std::size_t> a = {0, 1}, b = {0};
  EXPECT_THROW(ln::confusion_matrix(a, b, 2), ln::Error);
  const std::vector<std::size_t> c = {0, 2};
  EXPECT_THROW(ln::confusion_matrix(a, c, 2), ln::Error);
  ln::ConfusionMatrix cm({"a", "b"});
  EXPECT_THROW(cm.remove(0, 0), ln::Error);
  cm.add(0, 1);
  cm.remove(0, 1);
  EXPECT_EQ(cm.total(), 0u);
  EXPECT_THROW(ln::ConfusionMatrix({"a"}, {1, 2}), ln::Error);
}

TEST(Metrics, EmptyMatrixIsRejected) {
  const ln::ConfusionMatrix cm({"a", "b"});
  try {
    ln::aggregate_metrics(cm);
    FAIL();
  } catch (const ln::Error& e) {
    EXPECT_EQ(e.kind(), ln::ErrorKind::kInvalidArgument);
  }
}

TEST(Metrics, PublishedResnetMatrix) {
  const ln::ConfusionMatrix cm(kResnetLabels, kResnetCounts);
  EXPECT_EQ(cm.total(), 3004u);
  EXPECT_EQ(cm.trace(), 2719u);
  const auto r = ln::aggregate_metrics(cm);
  EXPECT_NEAR(r.accuracy, 0.9051, 1e-4);
  EXPECT_DOUBLE_EQ(r.classes[3].recall, 34.0 / 36.0);
  EXPECT_DOUBLE_EQ(r.classes[4].precision, 2009.0 / 2181.0);
  EXPECT_EQ(r.classes[4].support, 2034u);
  EXPECT_DOUBLE_EQ(r.micro.f1, r.accuracy);
  EXPECT_EQ(r.weighted.recall, r.accuracy);
  EXPECT_FALSE(r.has_undefined());
}

TEST(Metrics, UndefinedPrecisionIsFlaggedAndZero) {
  // Class 1 is never predicted.
  const ln::ConfusionMatrix cm({"a", "b"}, {3, 0, 2, 0});
  const auto r = ln::aggregate_metrics(cm);
  EXPECT_TRUE(r.classes[1].precision_undefined);
  EXPECT_EQ(r.classes[1].precision, 0.0);
  EXPECT_EQ(r.classes[1].f1, 0.0);
  EXPECT_FALSE(r.classes[1].recall_undefined);
  EXPECT_TRUE(r.has_undefined());
  const std::string text = ln::render_report(r, cm, ln::ReportFormat::kText);
  EXPECT_NE(text.find("0.0000*"), std::string::npos) << text;
}

TEST(Metrics, BruteForceOverRandomInstances) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + trial % 6;
    std::uniform_int_distribution<std::size_t> cls(0, k - 1);
    std::uniform_int_distribution<std::size_t> len(1, 200);
    std::vector<std::size_t> yt(len(gen)), yp(yt.size());
    for (auto& v : yt) v = cls(gen);
    for (std::size_t i = 0; i < yp.size(); ++i) yp[i] = gen() % 3 == 0 ? yt[i] : cls(gen);
    const auto o = oracle(yt, yp, k);
    const auto r = ln::aggregate_metrics(ln::confusion_matrix(yt, yp, k));
    EXPECT_DOUBLE_EQ(r.accuracy, o.accuracy);
    double wp = 0, wr = 0, wf = 0;
    for (std::size_t c = 0; c < k; ++c) {
      EXPECT_NEAR(r.classes[c].precision, o.precision[c], 1e-12);
      EXPECT_NEAR(r.classes[c].recall, o.recall[c], 1e-12);
      EXPECT_NEAR(r.classes[c].f1, o.f1[c], 1e-12);
      EXPECT_EQ(r.classes[c].support, o.support[c]);
      EXPECT_LE(r.classes[c].f1, std::max(r.classes[c].precision, r.classes[c].recall) + 1e-15);
      wp += o.precision[c] * double(o.support[c]);
      wr += o.recall[c] * double(o.support[c]);
      wf += o.f1[c] * double(o.support[c]);
    }
    const double n = double(yt.size());
    EXPECT_NEAR(r.weighted.precision, wp / n, 1e-12);
    EXPECT_NEAR(r.weighted.recall, wr / n, 1e-12);
    EXPECT_NEAR(r.weighted.f1, wf / n, 1e-12);
    // Exact identities.
    EXPECT_EQ(r.micro.precision, r.accuracy);
    EXPECT_EQ(r.micro.recall, r.accuracy);
    EXPECT_EQ(r.micro.f1, r.accuracy);
    EXPECT_EQ(r.weighted.recall, r.accuracy);
  }
}

TEST(Report, CsvLayout) {
  const ln::ConfusionMatrix cm({"a", "b"}, {1, 1, 0, 1});
  const auto r = ln::aggregate_metrics(cm);
  EXPECT_EQ(ln::render_report(r, cm, ln::ReportFormat::kCsv),
            "class,precision,recall,f1,support\n"
            "a,1.0000,0.5000,0.6667,2\n"
            "b,0.5000,1.0000,0.6667,1\n"
            "micro,0.6667,0.6667,0.6667,3\n"
            "weighted,0.8333,0.6667,0.6667,3\n"
            "accuracy,0.6667\n");
}

TEST(Report, TextLayout) {
  const ln::ConfusionMatrix cm(kResnetLabels, kResnetCounts);
  const std::string t = ln::render_report(ln::aggregate_metrics(cm), cm, ln::ReportFormat::kText);
  std::istringstream in(t);
  std::string first;
  std::getline(in, first);
  for (const char* col : {"Class", "Precision", "Recall", "f1-score", "Support"})
    EXPECT_NE(first.find(col), std::string::npos);
  for (const auto& l : kResnetLabels) EXPECT_NE(t.find(l), std::string::npos);
  EXPECT_NE(t.find("Micro Average"), std::string::npos);
  EXPECT_NE(t.find("Weighted Average"), std::string::npos);
  EXPECT_NE(t.find("Accuracy: 0.9051 (3004 samples)"), std::string::npos) << t;
}

TEST(Report, SvgZeroCellsAreWhite) {
  const ln::ConfusionMatrix cm(kResnetLabels, kResnetCounts);
  const std::string svg =
      ln::render_report(ln::aggregate_metrics(cm), cm, ln::ReportFormat::kSvg);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t rects = 0, white = 0, pos = 0;
  while ((pos = svg.find("<rect", pos)) != std::string::npos) {
    ++rects;
    const std::size_t end = svg.find("/>", pos);
    white += svg.substr(pos, end - pos).find("fill=\"#ffffff\"") != std::string::npos;
    pos = end;
  }
  EXPECT_EQ(rects, 49u);
  EXPECT_EQ(white, std::size_t(std::count(kResnetCounts.begin(), kResnetCounts.end(), 0u)));
  EXPECT_NE(svg.find("fill=\"#08306b\""), std::string::npos);  // the 2009 cell
}

TEST(Report, UnknownFormat) {
  EXPECT_EQ(ln::parse_report_format("svg"), ln::ReportFormat::kSvg);
  EXPECT_THROW(ln::parse_report_format("pdf"), ln::Error);
}

TEST(ConfusionCsv, RoundTripAndBundledFile) {
  const ln::ConfusionMatrix cm(kResnetLabels, kResnetCounts);
  std::istringstream in(ln::confusion_to_csv(cm));
  EXPECT_EQ(ln::parse_confusion_csv(in, "mem"), cm);
  EXPECT_EQ(ln::read_confusion_csv(LESIONNET_DATA_DIR "/ham10000_resnet_confusion.csv"), cm);
}

TEST(ConfusionCsv, MalformedInputNamesTheLine) {
  auto expect_io = [](const std::string& text, const std::string& where) {
    std::istringstream in(text);
    try {
      ln::parse_confusion_csv(in, "cm.csv");
      FAIL() << text;
    } catch (const ln::Error& e) {
      EXPECT_EQ(e.kind(), ln::ErrorKind::kIo);
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  expect_io(",a,b\na,1,2\nb,3,-4\n", "cm.csv:3");
  expect_io(",a,b\na,1,2\nc,3,4\n", "cm.csv:3");
  expect_io(",a,b\na,1\n", "cm.csv:2");
  expect_io(",a,b\na,1,2\n", "expected 2 rows");
  expect_io("", "empty");
}
