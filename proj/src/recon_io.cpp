#include "csou/recon_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "csou/binary_io.hpp"
#include "csou/errors.hpp"

namespace csou {
namespace {

constexpr char kMagic[4] = {'C', 'S', 'R', 'C'};

}  // namespace

void write_reconstructions(const std::filesystem::path& path,
                           const std::vector<HighResGrid>& grids) {
  const std::size_t rows = grids.empty() ? 0 : grids.front().rows();
  const std::size_t cols = grids.empty() ? 0 : grids.front().cols();
  constexpr std::size_t kMax = std::numeric_limits<std::uint16_t>::max();
  if (rows > kMax || cols > kMax || grids.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw InvalidParameter("reconstruction set too large for the file format");
  }
  for (const auto& g : grids) {
    if (g.rows() != rows || g.cols() != cols) {
      throw DimensionError("reconstructions must share one grid size");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  le::put_u32(out, kReconVersion);
  le::put_u32(out, static_cast<std::uint32_t>(grids.size()));
  le::put_u16(out, static_cast<std::uint16_t>(rows));
  le::put_u16(out, static_cast<std::uint16_t>(cols));
  for (const auto& g : grids) {
    for (double v : g.values()) le::put_uint(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<HighResGrid> read_reconstructions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw BadMagic("'" + path.string() + "' is not a reconstruction file");
  }
  std::uint32_t version = 0, count = 0;
  std::uint16_t rows = 0, cols = 0;
  if (!le::get_u32(in, version) || !le::get_u32(in, count) || !le::get_u16(in, rows) ||
      !le::get_u16(in, cols)) {
    throw TruncatedRecord("'" + path.string() + "': truncated header", 0);
  }
  if (version != kReconVersion) {
    throw VersionMismatch("'" + path.string() + "': unsupported version " +
                          std::to_string(version));
  }
  std::vector<HighResGrid> grids;
  grids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    HighResGrid g(rows, cols);
    for (double& v : g.values()) {
      std::uint64_t bits = 0;
      if (!le::get_uint(in, bits)) {
        throw TruncatedRecord("'" + path.string() + "': truncated at reconstruction " +
                                  std::to_string(i),
                              i);
      }
      v = std::bit_cast<double>(bits);
    }
    grids.push_back(std::move(g));
  }
  return grids;
}

}  // namespace csou
