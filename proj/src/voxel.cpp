#include "mbf/voxel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "mbf/error.hpp"

namespace mbf {

namespace {

constexpr char kMagic[4] = {'V', 'G', 'R', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 3 * 4 + 8 + 3 * 8;

static_assert(std::endian::native == std::endian::little, "vgrid codec assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

constexpr int kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};

// One-dimensional squared distance transform of a sampled function (lower
// envelope of parabolas). `f` has n entries; results go to `d`.
void squared_edt_1d(const double* f, int n, double* d, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    const double fq = f[q] + double(q) * q;
    double s = (fq - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
    while (s <= z[k]) {
      --k;
      s = (fq - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

VoxelGrid::VoxelGrid(Index3 dims, double voxel_size, Vec3 origin)
    : dims_(dims), voxel_size_(voxel_size), origin_(origin) {
  for (int d : dims) require(d >= 1, "voxel grid dims must be >= 1");
  require(voxel_size > 0.0 && std::isfinite(voxel_size), "voxel size must be positive");
  occupancy_.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);
}

Index3 VoxelGrid::unravel(std::size_t idx) const {
  const auto nx = static_cast<std::size_t>(dims_[0]);
  const auto ny = static_cast<std::size_t>(dims_[1]);
  return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(occupancy_.begin(), occupancy_.end(), std::uint8_t{1}));
}

double PointHull::bounding_radius() const {
  double r2 = 0.0;
  for (const auto& p : points) r2 = std::max(r2, p.squaredNorm());
  return std::sqrt(r2);
}

std::vector<std::uint8_t> encode_vgrid(const VoxelGrid& grid) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + grid.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  for (int d : grid.dims()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put<double>(out, grid.voxel_size());
  for (int a = 0; a < 3; ++a) put<double>(out, grid.origin()[a]);
  out.insert(out.end(), grid.occupancy().begin(), grid.occupancy().end());
  return out;
}

VoxelGrid decode_vgrid(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) fail(Errc::format, "vgrid: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(Errc::format, "vgrid: bad magic");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) fail(Errc::format, "vgrid: unsupported version " + std::to_string(version));
  Index3 dims;
  for (auto& d : dims) {
    const auto v = get<std::uint32_t>(bytes, pos);
    if (v == 0 || v > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
      fail(Errc::format, "vgrid: dims must be positive");
    d = static_cast<int>(v);
  }
  const auto voxel_size = get<double>(bytes, pos);
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) fail(Errc::format, "vgrid: non-positive voxel size");
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = get<double>(bytes, pos);
  const std::size_t expected = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (bytes.size() - pos != expected) {
    fail(Errc::format, "vgrid: payload has " + std::to_string(bytes.size() - pos) + " bytes, header declares " +
                           std::to_string(expected));
  }
  VoxelGrid grid(dims, voxel_size, origin);
  auto occ = grid.occupancy();
  for (std::size_t i = 0; i < expected; ++i) occ[i] = bytes[pos + i] != 0 ? 1 : 0;
  return grid;
}

std::string encode_sparse_text(const VoxelGrid& grid) {
  std::ostringstream os;
  os.precision(17);
  os << "dims " << grid.dims()[0] << ' ' << grid.dims()[1] << ' ' << grid.dims()[2] << " voxel_size "
     << grid.voxel_size() << '\n';
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    if (grid.occupancy()[idx]) {
      const auto [i, j, k] = grid.unravel(idx);
      os << i << ' ' << j << ' ' << k << '\n';
    }
  }
  return os.str();
}

VoxelGrid decode_sparse_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) fail(Errc::format, "sparse grid: empty input");
  std::istringstream header(line);
  std::string tag_dims, tag_vs;
  long long nx = 0, ny = 0, nz = 0;
  double vs = 0.0;
  if (!(header >> tag_dims >> nx >> ny >> nz >> tag_vs >> vs) || tag_dims != "dims" || tag_vs != "voxel_size")
    fail(Errc::format, "sparse grid: malformed header, expected 'dims nx ny nz voxel_size s'");
  if (nx < 1 || ny < 1 || nz < 1 || nx > std::numeric_limits<int>::max() || ny > std::numeric_limits<int>::max() ||
      nz > std::numeric_limits<int>::max())
    fail(Errc::format, "sparse grid: dims must be positive");
  if (!(vs > 0.0) || !std::isfinite(vs)) fail(Errc::format, "sparse grid: non-positive voxel size");
  VoxelGrid grid({int(nx), int(ny), int(nz)}, vs);
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long long i, j, k;
    if (!(ls >> i >> j >> k)) fail(Errc::format, "sparse grid: bad index line " + std::to_string(lineno));
    std::string rest;
    if (ls >> rest) fail(Errc::format, "sparse grid: trailing data on line " + std::to_string(lineno));
    if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz)
      fail(Errc::format, "sparse grid: index out of range on line " + std::to_string(lineno));
    grid.set(int(i), int(j), int(k), true);
  }
  return grid;
}

VoxelGrid load_voxel_grid(const std::filesystem::path& path, GridFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (format == GridFormat::automatic) {
    format = bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0 ? GridFormat::binary
                                                                            : GridFormat::sparse_text;
  }
  if (format == GridFormat::binary) return decode_vgrid(bytes);
  return decode_sparse_text(std::string(bytes.begin(), bytes.end()));
}

void save_voxel_grid(const VoxelGrid& grid, const std::filesystem::path& path, GridFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, "cannot write " + path.string());
  if (format == GridFormat::sparse_text) {
    out << encode_sparse_text(grid);
  } else {
    const auto bytes = encode_vgrid(grid);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) fail(Errc::io, "write failed for " + path.string());
}

bool is_surface_voxel(const VoxelGrid& grid, int i, int j, int k) {
  if (!grid.at(i, j, k)) return false;
  for (const auto& o : kOffsets) {
    const int a = i + o[0], b = j + o[1], c = k + o[2];
    if (!grid.in_bounds(a, b, c) || !grid.at(a, b, c)) return true;
  }
  return false;
}

Vec3 surface_centroid(const VoxelGrid& grid) {
  Vec3 sum = Vec3::Zero();
  std::size_t count = 0;
  const auto& d = grid.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        if (is_surface_voxel(grid, i, j, k)) {
          sum += grid.center(i, j, k);
          ++count;
        }
  if (count == 0) fail(Errc::invalid_argument, "grid has no occupied voxels");
  return sum / static_cast<double>(count);
}

PointHull extract_point_hull(const VoxelGrid& grid) {
  if (grid.occupied_count() < 4) fail(Errc::invalid_argument, "point hull needs at least 4 occupied voxels");
  PointHull hull;
  const auto& d = grid.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        if (is_surface_voxel(grid, i, j, k)) hull.points.push_back(grid.center(i, j, k));
  if (hull.points.size() < 4) fail(Errc::invalid_argument, "point hull needs at least 4 surface voxels");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : hull.points) sum += p;
  hull.centroid = sum / static_cast<double>(hull.points.size());
  for (auto& p : hull.points) p -= hull.centroid;
  return hull;
}

DistanceField distance_transform(const VoxelGrid& grid) {
  const auto& d = grid.dims();
  const int nmax = std::max({d[0], d[1], d[2]}) + 2;
  // One padding sample on each side of every scan line stands in for the
  // background outside the grid.
  std::vector<double> f(nmax), out(nmax), z(nmax + 1);
  std::vector<int> v(nmax);

  DistanceField field;
  field.dims = d;
  field.values.resize(grid.size());
  auto& val = field.values;
  const double big = 3.0 * double(nmax) * nmax;
  for (std::size_t i = 0; i < grid.size(); ++i) val[i] = grid.occupancy()[i] ? big : 0.0;

  const std::size_t stride[3] = {1, static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[0]) * d[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[axis];
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int u = 0; u < d[a1]; ++u) {
      for (int w = 0; w < d[a2]; ++w) {
        const std::size_t base = u * stride[a1] + w * stride[a2];
        f[0] = 0.0;
        f[n + 1] = 0.0;
        for (int q = 0; q < n; ++q) f[q + 1] = val[base + q * stride[axis]];
        squared_edt_1d(f.data(), n + 2, out.data(), v.data(), z.data());
        for (int q = 0; q < n; ++q) val[base + q * stride[axis]] = out[q + 1];
      }
    }
  }
  for (std::size_t i = 0; i < val.size(); ++i) {
    val[i] = grid.occupancy()[i] ? std::sqrt(val[i]) : 0.0;
  }
  return field;
}

DistanceField distance_transform_brute_force(const VoxelGrid& grid) {
  const auto& d = grid.dims();
  // Background sites: empty voxels plus a one-voxel shell around the grid.
  std::vector<Index3> background;
  for (int k = -1; k <= d[2]; ++k)
    for (int j = -1; j <= d[1]; ++j)
      for (int i = -1; i <= d[0]; ++i)
        if (!grid.in_bounds(i, j, k) || !grid.at(i, j, k)) background.push_back({i, j, k});

  DistanceField field;
  field.dims = d;
  field.values.assign(grid.size(), 0.0);
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    if (!grid.occupancy()[idx]) continue;
    const auto [i, j, k] = grid.unravel(idx);
    long long best = std::numeric_limits<long long>::max();
    for (const auto& b : background) {
      const long long dx = b[0] - i, dy = b[1] - j, dz = b[2] - k;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    field.values[idx] = std::sqrt(static_cast<double>(best));
  }
  return field;
}

VoxelGrid carve_sphere(const VoxelGrid& grid, const Vec3& center, double radius) {
  require(radius > 0.0, "carve radius must be positive");
  VoxelGrid out = grid;
  const auto& d = grid.dims();
  int lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0, static_cast<int>(std::floor(center[a] - radius)));
    hi[a] = std::min(d[a] - 1, static_cast<int>(std::ceil(center[a] + radius)));
    if (lo[a] > hi[a]) return out;
  }
  const double r2 = radius * radius;
  for (int k = lo[2]; k <= hi[2]; ++k)
    for (int j = lo[1]; j <= hi[1]; ++j)
      for (int i = lo[0]; i <= hi[0]; ++i) {
        const double dx = i - center[0], dy = j - center[1], dz = k - center[2];
        if (dx * dx + dy * dy + dz * dz <= r2) out.set(i, j, k, false);
      }
  return out;
}

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b) {
  require(a.dims() == b.dims(), "voxel_iou: dims differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.occupancy()[i], y = b.occupancy()[i];
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace mbf
