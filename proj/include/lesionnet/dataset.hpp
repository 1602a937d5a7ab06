#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lesionnet/image.hpp"
#include "lesionnet/preproc.hpp"
#include "lesionnet/tensor.hpp"

namespace lesionnet {

struct ClassInfo {
  std::string code;          // HAM10000 dx code, e.g. "mel"
  std::string display_name;  // e.g. "Melanoma"

  friend bool operator==(const ClassInfo&, const ClassInfo&) = default;
};

// Ordered list of lesion classes. The canonical catalog holds the seven
// HAM10000 classes in alphabetical dx order; models trained on fewer classes
// carry a prefix or any other subset.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassInfo> classes);

  static const ClassCatalog& canonical();
  // The first k canonical classes.
  static ClassCatalog first(std::size_t k);
  // Catalog from dx codes, display names taken from the canonical catalog.
  static ClassCatalog from_codes(std::span<const std::string> codes);

  std::size_t size() const { return classes_.size(); }
  const ClassInfo& operator[](std::size_t i) const { return classes_.at(i); }
  std::optional<std::size_t> index_of(std::string_view code) const;
  std::vector<std::string> codes() const;
  std::vector<std::string> display_names() const;

  friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;

 private:
  std::vector<ClassInfo> classes_;
};

inline constexpr std::size_t kNumLesionClasses = 7;

struct SampleRecord {
  std::string lesion_id;
  std::string image_id;
  std::string dx;
  std::string dx_type;
  std::optional<double> age;
  std::string sex;
  std::string localization;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// Metadata CSV with header lesion_id,image_id,dx,dx_type,age,sex,localization
// (column order free; extra columns ignored). Unknown dx codes are rejected
// with the offending line number.
std::vector<SampleRecord> load_metadata(const std::filesystem::path& csv_path);
std::vector<SampleRecord> parse_metadata(std::istream& in, const std::string& source);
void write_metadata(std::span<const SampleRecord> records,
                    const std::filesystem::path& csv_path);

// One-hot over the canonical catalog.
std::vector<double> encode_label(std::string_view dx);

enum class SplitGrouping {
  kImage,   // every image is its own unit
  kLesion,  // all images of a lesion land in the same split
};

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;
  SplitGrouping grouping = SplitGrouping::kImage;

  void validate() const;
};

struct Split {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> val;
  std::vector<SampleRecord> test;
};

// Per class, units are shuffled with a seeded generator and dealt into the
// three parts by largest-remainder rounding of fraction * class size, so each
// part is within one unit of its requested share. Parts are sorted by
// image_id.
Split stratified_split(std::span<const SampleRecord> records, const SplitSpec& spec);

// w_c = N / (K * n_c).
std::vector<double> class_weights(std::span<const std::size_t> class_counts);

struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;
};

// The same weights as reduced exact fractions.
std::vector<Fraction> class_weight_fractions(std::span<const std::size_t> class_counts);

// Split manifests: one image_id per line, LF endings.
std::vector<std::string> read_manifest(const std::filesystem::path& path);
void write_manifest(std::span<const std::string> image_ids,
                    const std::filesystem::path& path);

// Records whose image_id is listed, in manifest order. Unknown ids fail.
std::vector<SampleRecord> select_records(std::span<const SampleRecord> records,
                                         std::span<const std::string> image_ids);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthDataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<SampleRecord> records;  // HAM10000-schema metadata
};

// Gray noise images (stored as 3 identical channels), each stamped with the
// motif of its class at a random position and scale. Class i is tagged with
// the i-th canonical dx code. Labels cycle through the classes.
SynthDataset synth_dataset(std::size_t n_per_class, std::size_t classes, int side,
                           std::uint64_t seed);

// Writes <out_dir>/images/<image_id>.ppm and <out_dir>/metadata.csv.
void write_synth_dataset(const SynthDataset& data, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Loading and batching
// ---------------------------------------------------------------------------

struct PreprocessOptions {
  int input_side = 64;
  EqualizeMode equalize = EqualizeMode::kPerChannel;
};

// to_rgb -> resize -> histogram_equalize.
Image preprocess(const Image& raw, const PreprocessOptions& options);

// First existing <dir>/<image_id>.{jpg,png,ppm,pgm} across the directories.
std::filesystem::path resolve_image(std::span<const std::filesystem::path> image_dirs,
                                    const std::string& image_id);

// Preprocessed images with labels indexed into a catalog.
struct SampleSet {
  std::vector<std::string> image_ids;
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return images.size(); }
  std::vector<std::size_t> class_counts() const;
};

// Fails with kConsistency when a record's class is absent from the catalog
// and with kIo (naming the image_id) when an image cannot be read.
SampleSet load_samples(std::span<const SampleRecord> records,
                       std::span<const std::filesystem::path> image_dirs,
                       const ClassCatalog& catalog, const PreprocessOptions& options);

// Already-decoded images, preprocessed the same way.
SampleSet make_samples(std::span<const Image> images, std::span<const std::size_t> labels,
                       std::size_t num_classes, const PreprocessOptions& options);

struct Batch {
  Tensor<float> inputs;   // N x C x H x W
  Tensor<float> targets;  // N x K one-hot
  std::vector<std::size_t> indices;  // positions in the SampleSet
};

// One epoch over a SampleSet in seeded-shuffled order; the last batch may be
// short. With augmentation ranges set, every sample is augmented with
// parameters drawn from a generator seeded by (seed, epoch, sample index).
class BatchIterator {
 public:
  BatchIterator(const SampleSet& samples, std::size_t batch_size, std::uint64_t seed,
                std::uint64_t epoch = 0, std::optional<AugmentRanges> augment = {},
                bool shuffle = true);

  std::optional<Batch> next();
  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const SampleSet* samples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_;
  std::optional<AugmentRanges> augment_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// The network input for one sample without augmentation.
Tensor<float> sample_tensor(const SampleSet& samples, std::size_t index);

}  // namespace lesionnet
