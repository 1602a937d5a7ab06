#include "lesionnet/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "csv_util.hpp"
#include "lesionnet/error.hpp"
#include "lesionnet/random.hpp"

namespace lesionnet {
namespace {

using detail::csv_field;
using detail::split_csv_line;

std::string format_age(const std::optional<double>& age) {
  if (!age) return "";
  std::ostringstream out;
  out << *age;
  return out.str();
}

std::size_t largest_remainder_pick(const std::array<double, 3>& quotas,
                                   std::array<std::size_t, 3>& counts, std::size_t total) {
  std::size_t assigned = 0;
  std::array<double, 3> remainders{};
  for (std::size_t i = 0; i < 3; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(quotas[i]));
    remainders[i] = quotas[i] - counts[i];
    assigned += counts[i];
  }
  std::array<std::size_t, 3> rank{0, 1, 2};
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  std::size_t left = total - std::min(total, assigned);
  for (std::size_t r = 0; r < 3 && left > 0; ++r) {
    if (quotas[rank[r]] <= 0.0) continue;
    ++counts[rank[r]];
    --left;
  }
  return left;
}

// ---------------------------------------------------------------------------
// Synthetic motifs. Coordinates are relative to the motif center, r is the
// motif radius.

bool motif_contains(std::size_t cls, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (cls) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // horizontal bar
      return ay <= 0.25 * r && ax <= r;
    case 2:  // plus-shaped cross
      return (ay <= 0.2 * r && ax <= r) || (ax <= 0.2 * r && ay <= r);
    case 3: {  // ring
      const double d = std::sqrt(dx * dx + dy * dy);
      return d <= r && d >= 0.6 * r;
    }
    case 4:  // diamond
      return ax + ay <= r;
    case 5:  // diagonal cross
      return std::max(ax, ay) <= 0.75 * r &&
             (std::abs(dx - dy) <= 0.25 * r || std::abs(dx + dy) <= 0.25 * r);
    case 6:  // triangle, apex up
      return dy >= -r && dy <= r && ax <= (dy + r) / 2.0;
    default:
      return false;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ClassCatalog::ClassCatalog(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (classes_[i].code == classes_[j].code) {
        fail(ErrorKind::kInvalidArgument, "class catalog: duplicate code " + classes_[i].code);
      }
    }
  }
}

const ClassCatalog& ClassCatalog::canonical() {
  static const ClassCatalog catalog({
      {"akiec", "Actinic keratoses"},
      {"bcc", "Basal cell carcinoma"},
      {"bkl", "Benign keratosis"},
      {"df", "Dermatofibroma"},
      {"mel", "Melanoma"},
      {"nv", "Melanocytic nevi"},
      {"vasc", "Vascular skin lesions"},
  });
  return catalog;
}

ClassCatalog ClassCatalog::first(std::size_t k) {
  if (k < 1 || k > kNumLesionClasses) {
    fail(ErrorKind::kInvalidArgument, "class count must be in [1, 7], got " + std::to_string(k));
  }
  const auto& all = canonical();
  std::vector<ClassInfo> classes;
  for (std::size_t i = 0; i < k; ++i) classes.push_back(all[i]);
  return ClassCatalog(std::move(classes));
}

ClassCatalog ClassCatalog::from_codes(std::span<const std::string> codes) {
  std::vector<ClassInfo> classes;
  for (const auto& code : codes) {
    const auto idx = canonical().index_of(code);
    classes.push_back(idx ? canonical()[*idx] : ClassInfo{code, code});
  }
  return ClassCatalog(std::move(classes));
}

std::optional<std::size_t> ClassCatalog::index_of(std::string_view code) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].code == code) return i;
  }
  return std::nullopt;
}

std::vector<std::string> ClassCatalog::codes() const {
  std::vector<std::string> out;
  for (const auto& c : classes_) out.push_back(c.code);
  return out;
}

std::vector<std::string> ClassCatalog::display_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes_) out.push_back(c.display_name);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SampleRecord> parse_metadata(std::istream& in, const std::string& source) {
  auto bad = [&](std::size_t line, const std::string& what) {
    fail(ErrorKind::kIo, source + ":" + std::to_string(line) + ": " + what);
  };
  std::string line;
  if (!std::getline(in, line)) bad(1, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const std::vector<std::string> header = split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* required : {"lesion_id", "image_id", "dx"}) {
    if (!column.count(required)) bad(1, std::string("header lacks column '") + required + "'");
  }
  auto get = [&](const std::vector<std::string>& row, const char* name) -> std::string {
    const auto it = column.find(name);
    return it == column.end() ? std::string() : row[it->second];
  };

  std::vector<SampleRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> row = split_csv_line(line);
    if (row.size() != header.size()) {
      bad(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(row.size()));
    }
    SampleRecord rec;
    rec.lesion_id = get(row, "lesion_id");
    rec.image_id = get(row, "image_id");
    rec.dx = get(row, "dx");
    rec.dx_type = get(row, "dx_type");
    rec.sex = get(row, "sex");
    rec.localization = get(row, "localization");
    if (rec.image_id.empty()) bad(line_no, "empty image_id");
    if (!ClassCatalog::canonical().index_of(rec.dx)) {
      bad(line_no, "unknown class code '" + rec.dx + "'");
    }
    const std::string age = get(row, "age");
    if (!age.empty() && age != "nan" && age != "NaN" && age != "NA") {
      try {
        std::size_t used = 0;
        rec.age = std::stod(age, &used);
        if (used != age.size()) throw std::invalid_argument(age);
      } catch (const std::exception&) {
        bad(line_no, "malformed age '" + age + "'");
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<SampleRecord> load_metadata(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) fail(ErrorKind::kIo, csv_path.string() + ": cannot open metadata file");
  return parse_metadata(in, csv_path.string());
}

void write_metadata(std::span<const SampleRecord> records,
                    const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, csv_path.string() + ": cannot open for writing");
  out << "lesion_id,image_id,dx,dx_type,age,sex,localization\n";
  for (const auto& r : records) {
    out << csv_field(r.lesion_id) << ',' << csv_field(r.image_id) << ',' << csv_field(r.dx)
        << ',' << csv_field(r.dx_type) << ',' << format_age(r.age) << ',' << csv_field(r.sex)
        << ',' << csv_field(r.localization) << '\n';
  }
  if (!out) fail(ErrorKind::kIo, csv_path.string() + ": write failed");
}

std::vector<double> encode_label(std::string_view dx) {
  const auto idx = ClassCatalog::canonical().index_of(dx);
  if (!idx) fail(ErrorKind::kInvalidArgument, "unknown class code '" + std::string(dx) + "'");
  std::vector<double> out(kNumLesionClasses, 0.0);
  out[*idx] = 1.0;
  return out;
}

// ---------------------------------------------------------------------------

void SplitSpec::validate() const {
  for (double f : {train, val, test}) {
    if (!(f >= 0.0 && f <= 1.0)) {
      fail(ErrorKind::kInvalidArgument, "split fractions must lie in [0, 1]");
    }
  }
  if (!(train > 0.0)) fail(ErrorKind::kInvalidArgument, "train fraction must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "split fractions must sum to 1, got " << (train + val + test);
    fail(ErrorKind::kInvalidArgument, msg.str());
  }
}

Split stratified_split(std::span<const SampleRecord> records, const SplitSpec& spec) {
  spec.validate();
  const bool by_lesion = spec.grouping == SplitGrouping::kLesion;

  // class index -> unit key -> record positions
  std::map<std::size_t, std::map<std::string, std::vector<std::size_t>>> units;
  std::unordered_map<std::string, std::size_t> unit_class;
  std::unordered_map<std::string, std::size_t> seen_images;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!seen_images.emplace(r.image_id, i).second) {
      fail(ErrorKind::kConsistency, "duplicate image_id " + r.image_id);
    }
    const auto cls = ClassCatalog::canonical().index_of(r.dx);
    if (!cls) fail(ErrorKind::kInvalidArgument, "unknown class code '" + r.dx + "'");
    const std::string key = by_lesion ? r.lesion_id : r.image_id;
    const auto [it, inserted] = unit_class.emplace(key, *cls);
    if (!inserted && it->second != *cls) {
      fail(ErrorKind::kConsistency, "lesion " + key + " has images of different classes");
    }
    units[*cls][key].push_back(i);
  }

  Split out;
  const std::array<double, 3> fractions{spec.train, spec.val, spec.test};
  std::array<std::vector<SampleRecord>*, 3> parts{&out.train, &out.val, &out.test};
  for (auto& [cls, by_key] : units) {
    std::vector<const std::vector<std::size_t>*> ordered;
    for (const auto& [key, members] : by_key) ordered.push_back(&members);
    auto gen = make_rng({spec.seed, cls});
    std::shuffle(ordered.begin(), ordered.end(), gen);

    const std::size_t n = ordered.size();
    std::array<double, 3> quotas{};
    for (std::size_t s = 0; s < 3; ++s) quotas[s] = fractions[s] * static_cast<double>(n);
    std::array<std::size_t, 3> counts{};
    largest_remainder_pick(quotas, counts, n);

    std::size_t cursor = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < counts[s] && cursor < n; ++k, ++cursor) {
        for (std::size_t idx : *ordered[cursor]) parts[s]->push_back(records[idx]);
      }
    }
  }
  for (auto* part : parts) {
    std::sort(part->begin(), part->end(),
              [](const SampleRecord& a, const SampleRecord& b) { return a.image_id < b.image_id; });
  }
  return out;
}

std::vector<double> class_weights(std::span<const std::size_t> class_counts) {
  std::vector<double> out;
  for (const Fraction& f : class_weight_fractions(class_counts)) {
    out.push_back(static_cast<double>(f.num) / static_cast<double>(f.den));
  }
  return out;
}

std::vector<Fraction> class_weight_fractions(std::span<const std::size_t> class_counts) {
  if (class_counts.empty()) fail(ErrorKind::kInvalidArgument, "class_weights: no classes");
  std::int64_t total = 0;
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    if (class_counts[i] == 0) {
      fail(ErrorKind::kConsistency,
           "class_weights: class " + std::to_string(i) + " has no samples");
    }
    total += static_cast<std::int64_t>(class_counts[i]);
  }
  const auto k = static_cast<std::int64_t>(class_counts.size());
  std::vector<Fraction> out;
  for (std::size_t n : class_counts) {
    const std::int64_t den = k * static_cast<std::int64_t>(n);
    const std::int64_t g = std::gcd(total, den);
    out.push_back({total / g, den / g});
  }
  return out;
}

std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, path.string() + ": cannot open manifest");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void write_manifest(std::span<const std::string> image_ids, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, path.string() + ": cannot open for writing");
  for (const auto& id : image_ids) out << id << '\n';
  if (!out) fail(ErrorKind::kIo, path.string() + ": write failed");
}

std::vector<SampleRecord> select_records(std::span<const SampleRecord> records,
                                         std::span<const std::string> image_ids) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < records.size(); ++i) by_id.emplace(records[i].image_id, i);
  std::vector<SampleRecord> out;
  out.reserve(image_ids.size());
  for (const auto& id : image_ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      fail(ErrorKind::kConsistency, "manifest lists image_id " + id + " absent from metadata");
    }
    out.push_back(records[it->second]);
  }
  return out;
}

// ---------------------------------------------------------------------------

SynthDataset synth_dataset(std::size_t n_per_class, std::size_t classes, int side,
                           std::uint64_t seed) {
  if (classes < 1 || classes > kNumLesionClasses) {
    fail(ErrorKind::kInvalidArgument,
         "synth: classes must be in [1, 7], got " + std::to_string(classes));
  }
  if (side < 16) fail(ErrorKind::kInvalidArgument, "synth: side must be >= 16");

  SynthDataset data;
  const std::size_t total = n_per_class * classes;
  const auto& catalog = ClassCatalog::canonical();
  char id[32];
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t label = i % classes;
    auto gen = make_rng({seed, i});
    std::uniform_int_distribution<int> background(0, 100);
    std::uniform_int_distribution<int> foreground(170, 255);
    std::uniform_real_distribution<double> radius(0.18 * side, 0.30 * side);
    const double r = radius(gen);
    std::uniform_real_distribution<double> center(r + 1.0, side - 2.0 - r);
    const double cx = center(gen);
    const double cy = center(gen);

    Image img(side, side, 3);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const bool on = motif_contains(label, x - cx, y - cy, r);
        const auto v = static_cast<std::uint8_t>(on ? foreground(gen) : background(gen));
        img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = v;
      }
    }

    SampleRecord rec;
    std::snprintf(id, sizeof id, "SYNL_%07zu", i);
    rec.lesion_id = id;
    std::snprintf(id, sizeof id, "SYN_%07zu", i);
    rec.image_id = id;
    rec.dx = catalog[label].code;
    rec.dx_type = "synthetic";
    rec.sex = "unknown";
    rec.localization = "unknown";

    data.images.push_back(std::move(img));
    data.labels.push_back(label);
    data.records.push_back(std::move(rec));
  }
  return data;
}

void write_synth_dataset(const SynthDataset& data, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) fail(ErrorKind::kIo, out_dir.string() + ": cannot create directory: " + ec.message());
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    write_pnm(data.images[i], out_dir / "images" / (data.records[i].image_id + ".ppm"));
  }
  write_metadata(data.records, out_dir / "metadata.csv");
}

// ---------------------------------------------------------------------------

Image preprocess(const Image& raw, const PreprocessOptions& options) {
  Image img = to_rgb(raw);
  if (img.width != options.input_side || img.height != options.input_side) {
    img = resize(img, options.input_side, options.input_side);
  }
  return histogram_equalize(img, options.equalize);
}

std::filesystem::path resolve_image(std::span<const std::filesystem::path> image_dirs,
                                    const std::string& image_id) {
  for (const auto& dir : image_dirs) {
    for (const char* ext : {".jpg", ".png", ".ppm", ".pgm"}) {
      std::filesystem::path p = dir / (image_id + ext);
      if (std::filesystem::is_regular_file(p)) return p;
    }
  }
  fail(ErrorKind::kIo, "image " + image_id + " not found in any image directory");
}

std::vector<std::size_t> SampleSet::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t label : labels) ++counts.at(label);
  return counts;
}

SampleSet load_samples(std::span<const SampleRecord> records,
                       std::span<const std::filesystem::path> image_dirs,
                       const ClassCatalog& catalog, const PreprocessOptions& options) {
  SampleSet set;
  set.num_classes = catalog.size();
  for (const auto& rec : records) {
    const auto label = catalog.index_of(rec.dx);
    if (!label) {
      fail(ErrorKind::kConsistency, "image " + rec.image_id + " has class '" + rec.dx +
                                        "' which the model does not know");
    }
    Image raw;
    try {
      raw = read_image(resolve_image(image_dirs, rec.image_id));
    } catch (const Error& e) {
      fail(ErrorKind::kIo, "image_id " + rec.image_id + ": " + e.what());
    }
    set.image_ids.push_back(rec.image_id);
    set.images.push_back(preprocess(raw, options));
    set.labels.push_back(*label);
  }
  return set;
}

SampleSet make_samples(std::span<const Image> images, std::span<const std::size_t> labels,
                       std::size_t num_classes, const PreprocessOptions& options) {
  if (images.size() != labels.size()) {
    fail(ErrorKind::kInvalidArgument, "make_samples: images/labels length mismatch");
  }
  SampleSet set;
  set.num_classes = num_classes;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] >= num_classes) {
      fail(ErrorKind::kConsistency, "make_samples: label out of range");
    }
    set.image_ids.push_back(std::to_string(i));
    set.images.push_back(preprocess(images[i], options));
    set.labels.push_back(labels[i]);
  }
  return set;
}

Tensor<float> sample_tensor(const SampleSet& samples, std::size_t index) {
  return normalize<float>(samples.images.at(index));
}

BatchIterator::BatchIterator(const SampleSet& samples, std::size_t batch_size,
                             std::uint64_t seed, std::uint64_t epoch,
                             std::optional<AugmentRanges> augment, bool shuffle)
    : samples_(&samples),
      batch_size_(batch_size),
      seed_(seed),
      epoch_(epoch),
      augment_(augment) {
  if (batch_size == 0) fail(ErrorKind::kInvalidArgument, "batch size must be >= 1");
  order_.resize(samples.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    auto gen = make_rng({seed, epoch, 0x5348554646ULL});
    std::shuffle(order_.begin(), order_.end(), gen);
  }
}

std::size_t BatchIterator::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  const Image& first = samples_->images[order_[cursor_]];
  const std::size_t c = static_cast<std::size_t>(first.channels);
  const std::size_t h = static_cast<std::size_t>(first.height);
  const std::size_t w = static_cast<std::size_t>(first.width);
  const std::size_t k = samples_->num_classes;

  Batch batch{Tensor<float>(Shape{n, c, h, w}), Tensor<float>(Shape{n, k}), {}};
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t idx = order_[cursor_ + b];
    batch.indices.push_back(idx);
    Tensor<float> x;
    if (augment_) {
      auto gen = make_rng({seed_, epoch_, idx});
      x = normalize<float>(augment(samples_->images[idx], augment_->draw(gen)));
    } else {
      x = normalize<float>(samples_->images[idx]);
    }
    if (x.size() != c * h * w) {
      fail(ErrorKind::kConsistency, "batch: images differ in size");
    }
    std::copy(x.data().begin(), x.data().end(), batch.inputs.data().begin() + b * c * h * w);
    batch.targets[b * k + samples_->labels[idx]] = 1.0f;
  }
  cursor_ += n;
  return batch;
}

}  // namespace lesionnet
