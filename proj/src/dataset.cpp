#include "csou/dataset.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <sstream>

#include "csou/binary_io.hpp"
#include "csou/errors.hpp"
#include "csou/parallel.hpp"

namespace csou {
namespace {

constexpr char kMagic[4] = {'C', 'S', 'O', 'U'};
constexpr std::size_t kMaxDraws = 10000;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// float32 draw in [lo, hi): rounding may land on hi, so step back one ulp.
double draw_f32(CounterRng& rng, double lo, double hi) {
  double v = to_f32(rng.uniform(lo, hi));
  if (v >= hi) v = std::nextafter(static_cast<float>(hi), static_cast<float>(lo));
  return v;
}

std::string describe(const std::filesystem::path& path) { return "'" + path.string() + "'"; }

}  // namespace

void DatasetConfig::validate() const {
  scene.validate();
  if (k_min < 1 || k_min > k_max) {
    throw InvalidParameter("target count range must satisfy 1 <= k_min <= k_max (got " +
                           std::to_string(k_min) + ".." + std::to_string(k_max) + ")");
  }
  if (k_max > std::numeric_limits<std::uint16_t>::max()) {
    throw InvalidParameter("k_max does not fit the record format");
  }
  if (!(s_lo > kExtractionThreshold) || !(s_hi >= s_lo)) {
    throw InvalidParameter("intensity range must satisfy 50 < s_lo <= s_hi");
  }
  if (!(margin >= 0.0) || !(2.0 * margin < static_cast<double>(scene.rows)) ||
      !(2.0 * margin < static_cast<double>(scene.cols))) {
    throw InvalidParameter("margin leaves no room for targets");
  }
  if (!(min_separation >= 0.0)) throw InvalidParameter("min_separation must be >= 0");
}

bool operator==(const DatasetRecord& a, const DatasetRecord& b) {
  if (a.scene.size() != b.scene.size()) return false;
  for (std::size_t i = 0; i < a.scene.size(); ++i) {
    const Target& p = a.scene.targets[i];
    const Target& q = b.scene.targets[i];
    if (p.x != q.x || p.y != q.y || p.s != q.s) return false;
  }
  return static_cast<const Grid2D&>(a.measurement) == static_cast<const Grid2D&>(b.measurement);
}

SceneConfig DatasetHeader::scene() const {
  SceneConfig cfg;
  cfg.rows = rows;
  cfg.cols = cols;
  cfg.ratio = ratio;
  cfg.sigma_psf = sigma_psf;
  cfg.noise_sigma = noise_sigma;
  return cfg;
}

SparseScene sample_scene(const DatasetConfig& cfg, CounterRng& rng) {
  const std::size_t k = cfg.k_min + static_cast<std::size_t>(rng.uniform_int(cfg.k_max - cfg.k_min + 1));
  const double x_hi = static_cast<double>(cfg.scene.cols) - cfg.margin;
  const double y_hi = static_cast<double>(cfg.scene.rows) - cfg.margin;
  const double sep2 = cfg.min_separation * cfg.min_separation;

  SparseScene scene;
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  std::size_t draws = 0;
  while (scene.size() < k) {
    if (++draws > kMaxDraws) {
      throw InfeasibleConfig("could not place " + std::to_string(k) + " targets within " +
                             std::to_string(kMaxDraws) + " draws");
    }
    Target t;
    t.x = draw_f32(rng, cfg.margin, x_hi);
    t.y = draw_f32(rng, cfg.margin, y_hi);
    bool ok = true;
    for (const Target& o : scene.targets) {
      const double dx = o.x - t.x;
      const double dy = o.y - t.y;
      if (dx * dx + dy * dy < sep2) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    const auto cell = target_cell(t, cfg.scene);
    for (const auto& c : cells) {
      if (c == cell) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    cells.push_back(cell);
    scene.targets.push_back(t);
  }
  for (Target& t : scene.targets) t.s = to_f32(rng.uniform(cfg.s_lo, cfg.s_hi));
  return scene;
}

DatasetRecord make_record(const DatasetConfig& cfg, std::size_t index) {
  CounterRng rng = CounterRng(cfg.seed).split(stream_id(cfg.split.c_str())).split(index);
  DatasetRecord rec;
  rec.scene = sample_scene(cfg, rng);
  const std::uint64_t noise_seed = rng.next_u64();
  const PsfKernel kernel = make_psf_kernel(cfg.scene);
  const Measurement clean = forward(embed_scene(rec.scene, cfg.scene), kernel, cfg.scene);
  rec.measurement = add_noise(clean, cfg.scene.noise_sigma, noise_seed);
  for (double& v : rec.measurement.values()) v = to_f32(v);
  return rec;
}

std::vector<DatasetRecord> make_records(const DatasetConfig& cfg) {
  cfg.validate();
  std::vector<DatasetRecord> records(cfg.count);
  parallel_for(cfg.count, [&](std::size_t i) { records[i] = make_record(cfg, i); });
  return records;
}

DatasetWriter::DatasetWriter(const std::filesystem::path& path, const SceneConfig& scene,
                             std::uint32_t count)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), scene_(scene), expected_(count) {
  if (!out_) throw IoError("cannot open " + describe(path) + " for writing");
  out_.write(kMagic, 4);
  le::put_u32(out_, kDatasetVersion);
  le::put_u32(out_, count);
  le::put_u16(out_, static_cast<std::uint16_t>(scene.rows));
  le::put_u16(out_, static_cast<std::uint16_t>(scene.cols));
  le::put_u16(out_, static_cast<std::uint16_t>(scene.ratio));
  le::put_f32(out_, static_cast<float>(scene.sigma_psf));
  le::put_f32(out_, static_cast<float>(scene.noise_sigma));
  if (!out_) throw IoError("write failed on " + describe(path));
}

void DatasetWriter::write(const DatasetRecord& record) {
  if (written_ >= expected_) throw IoError("too many records for " + describe(path_));
  if (record.measurement.rows() != scene_.rows || record.measurement.cols() != scene_.cols) {
    throw DimensionError("record measurement does not match the dataset patch size");
  }
  le::put_u16(out_, static_cast<std::uint16_t>(record.scene.size()));
  for (const Target& t : record.scene.targets) {
    le::put_f32(out_, static_cast<float>(t.x));
    le::put_f32(out_, static_cast<float>(t.y));
    le::put_f32(out_, static_cast<float>(t.s));
  }
  for (double v : record.measurement.values()) le::put_f32(out_, static_cast<float>(v));
  if (!out_) throw IoError("write failed on " + describe(path_));
  ++written_;
}

void DatasetWriter::close() {
  out_.flush();
  if (!out_) throw IoError("flush failed on " + describe(path_));
  out_.close();
  if (written_ != expected_) {
    throw IoError(describe(path_) + ": wrote " + std::to_string(written_) + " of " +
                  std::to_string(expected_) + " records");
  }
}

void write_dataset(const std::filesystem::path& path, const SceneConfig& scene,
                   const std::vector<DatasetRecord>& records) {
  DatasetWriter writer(path, scene, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) writer.write(r);
  writer.close();
}

DatasetReader::DatasetReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + describe(path));
  char magic[4] = {};
  in_.read(magic, 4);
  if (in_.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw BadMagic(describe(path) + " is not a CSOU dataset (bad magic)");
  }
  if (!le::get_u32(in_, header_.version)) throw IoError(describe(path) + ": truncated header");
  if (header_.version != kDatasetVersion) {
    throw VersionMismatch(describe(path) + ": dataset version " +
                          std::to_string(header_.version) + ", expected " +
                          std::to_string(kDatasetVersion));
  }
  if (!le::get_u32(in_, header_.count) || !le::get_u16(in_, header_.rows) ||
      !le::get_u16(in_, header_.cols) || !le::get_u16(in_, header_.ratio) ||
      !le::get_f32(in_, header_.sigma_psf) || !le::get_f32(in_, header_.noise_sigma)) {
    throw IoError(describe(path) + ": truncated header");
  }
}

std::optional<DatasetRecord> DatasetReader::next() {
  if (index_ >= header_.count) return std::nullopt;
  auto truncated = [&] {
    return TruncatedRecord(describe(path_) + ": truncated record " + std::to_string(index_),
                           index_);
  };
  std::uint16_t k = 0;
  if (!le::get_u16(in_, k)) throw truncated();
  DatasetRecord rec;
  rec.scene.targets.resize(k);
  for (Target& t : rec.scene.targets) {
    float x = 0, y = 0, s = 0;
    if (!le::get_f32(in_, x) || !le::get_f32(in_, y) || !le::get_f32(in_, s)) throw truncated();
    t = {x, y, s};
  }
  rec.measurement = Measurement(header_.rows, header_.cols);
  for (double& v : rec.measurement.values()) {
    float f = 0;
    if (!le::get_f32(in_, f)) throw truncated();
    v = f;
  }
  ++index_;
  return rec;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, SceneConfig* scene) {
  DatasetReader reader(path);
  if (scene != nullptr) *scene = reader.scene();
  std::vector<DatasetRecord> out;
  out.reserve(reader.size());
  for (auto rec = reader.next(); rec; rec = reader.next()) out.push_back(std::move(*rec));
  return out;
}

void export_targets_csv(const std::filesystem::path& path,
                        const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + describe(path) + " for writing");
  out << "sample_id,x,y,s\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const Target& t : records[i].scene.targets) {
      out << i << ',' << t.x << ',' << t.y << ',' << t.s << '\n';
    }
  }
  if (!out) throw IoError("write failed on " + describe(path));
}

GeneratedFiles generate_dataset(const DatasetConfig& base, const std::vector<SplitSpec>& splits,
                                const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + describe(dir) + ": " + ec.message());

  GeneratedFiles files;
  std::ostringstream manifest;
  manifest << std::setprecision(9);
  manifest << "# CSOU dataset manifest\n"
           << "format = CSOU\n"
           << "version = " << kDatasetVersion << "\n"
           << "seed = " << base.seed << "\n"
           << "rows = " << base.scene.rows << "\n"
           << "cols = " << base.scene.cols << "\n"
           << "ratio = " << base.scene.ratio << "\n"
           << "sigma_psf = " << base.scene.sigma_psf << "\n"
           << "noise_sigma = " << base.scene.noise_sigma << "\n"
           << "k_min = " << base.k_min << "\n"
           << "k_max = " << base.k_max << "\n"
           << "s_lo = " << base.s_lo << "\n"
           << "s_hi = " << base.s_hi << "\n"
           << "margin = " << base.margin << "\n"
           << "min_separation = " << base.min_separation << "\n";
  for (const SplitSpec& split : splits) {
    DatasetConfig cfg = base;
    cfg.split = split.name;
    cfg.count = split.count;
    const auto records = make_records(cfg);
    const auto data_path = dir / (split.name + ".csou");
    const auto csv_path = dir / (split.name + "_targets.csv");
    write_dataset(data_path, cfg.scene, records);
    export_targets_csv(csv_path, records);
    std::size_t targets = 0;
    for (const auto& r : records) targets += r.scene.size();
    manifest << "split." << split.name << ".file = " << data_path.filename().string() << "\n"
             << "split." << split.name << ".count = " << split.count << "\n"
             << "split." << split.name << ".targets = " << targets << "\n";
    files.data_files.push_back(data_path);
    files.csv_files.push_back(csv_path);
  }
  files.manifest = dir / "manifest.txt";
  std::ofstream out(files.manifest, std::ios::trunc);
  if (!out) throw IoError("cannot open " + describe(files.manifest) + " for writing");
  out << manifest.str();
  if (!out) throw IoError("write failed on " + describe(files.manifest));
  return files;
}

}  // namespace csou
