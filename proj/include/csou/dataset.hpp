#pragma once

// Synthetic blended-spot datasets and their on-disk format.
//
// Binary layout (little-endian):
//   header: "CSOU" | u32 version=1 | u32 count | u16 M1 | u16 M2 | u16 c
//           | f32 sigma_psf | f32 noise_sigma
//   record: u16 K | K x (f32 x, f32 y, f32 s) | M1*M2 f32 measurement, row-major

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "csou/rng.hpp"
#include "csou/scene.hpp"

namespace csou {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr double kExtractionThreshold = 50.0;

struct DatasetConfig {
  std::size_t count = 100;
  std::size_t k_min = 1;
  std::size_t k_max = 5;
  double s_lo = 100.0;
  double s_hi = 255.0;
  double margin = 2.0;          // low-res pixels from each border
  double min_separation = 0.5;  // low-res pixels between any two targets
  SceneConfig scene;
  std::uint64_t seed = 0;
  std::string split = "train";

  void validate() const;
};

struct DatasetRecord {
  SparseScene scene;
  Measurement measurement;
};

bool operator==(const DatasetRecord& a, const DatasetRecord& b);

struct DatasetHeader {
  std::uint32_t version = kDatasetVersion;
  std::uint32_t count = 0;
  std::uint16_t rows = 0;
  std::uint16_t cols = 0;
  std::uint16_t ratio = 0;
  float sigma_psf = 0.0f;
  float noise_sigma = 0.0f;

  SceneConfig scene() const;
};

// Draws K, then positions one at a time, resampling any position that lands
// closer than min_separation to an earlier target or in an occupied
// sub-pixel cell. More than 10^4 draws in total raises InfeasibleConfig.
SparseScene sample_scene(const DatasetConfig& cfg, CounterRng& rng);

// Record i of a split is a pure function of (cfg, i). Targets and the
// measurement are rounded to float32 so they survive serialization exactly.
DatasetRecord make_record(const DatasetConfig& cfg, std::size_t index);
std::vector<DatasetRecord> make_records(const DatasetConfig& cfg);

class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, const SceneConfig& scene,
                std::uint32_t count);
  void write(const DatasetRecord& record);
  // Throws unless exactly `count` records were written.
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  SceneConfig scene_;
  std::uint32_t expected_;
  std::uint32_t written_ = 0;
};

void write_dataset(const std::filesystem::path& path, const SceneConfig& scene,
                   const std::vector<DatasetRecord>& records);

// Streams records without loading the whole file.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);

  const DatasetHeader& header() const { return header_; }
  SceneConfig scene() const { return header_.scene(); }
  std::size_t size() const { return header_.count; }
  std::optional<DatasetRecord> next();

  class iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = DatasetRecord;
    using difference_type = std::ptrdiff_t;
    using pointer = const DatasetRecord*;
    using reference = const DatasetRecord&;

    iterator() = default;
    explicit iterator(DatasetReader* reader) : reader_(reader) { advance(); }
    reference operator*() const { return *current_; }
    pointer operator->() const { return &*current_; }
    iterator& operator++() {
      advance();
      return *this;
    }
    void operator++(int) { advance(); }
    friend bool operator==(const iterator& a, const iterator& b) {
      return a.reader_ == b.reader_;
    }

   private:
    void advance() {
      current_ = reader_->next();
      if (!current_) reader_ = nullptr;
    }
    DatasetReader* reader_ = nullptr;
    std::optional<DatasetRecord> current_;
  };

  iterator begin() { return iterator(this); }
  iterator end() { return iterator(); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  DatasetHeader header_;
  std::size_t index_ = 0;
};

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path,
                                        SceneConfig* scene = nullptr);

// One row per target: sample_id,x,y,s
void export_targets_csv(const std::filesystem::path& path,
                        const std::vector<DatasetRecord>& records);

struct SplitSpec {
  std::string name;
  std::size_t count = 0;
};

struct GeneratedFiles {
  std::vector<std::filesystem::path> data_files;
  std::vector<std::filesystem::path> csv_files;
  std::filesystem::path manifest;
};

// Writes <dir>/<split>.csou and <dir>/<split>_targets.csv per split plus
// <dir>/manifest.txt. `base.split` and `base.count` are ignored.
GeneratedFiles generate_dataset(const DatasetConfig& base, const std::vector<SplitSpec>& splits,
                                const std::filesystem::path& dir);

}  // namespace csou
