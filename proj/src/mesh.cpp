#include "mbf/mesh.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>
#include <unordered_map>

#include "mbf/error.hpp"

namespace mbf {

namespace {

// Cube corner c has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1). Each
// tetrahedron walks from corner 0 to corner 7 along one axis permutation,
// which makes the split consistent across shared faces.
constexpr int kTets[6][4] = {
    {0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7}, {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7},
};

// Keeps interpolated vertices off lattice points so no triangle collapses.
constexpr double kEdgeClamp = 1e-3;

class Builder {
 public:
  Builder(const ScalarGrid& g, double iso) : g_(g), iso_(iso) {}

  int edge_vertex(std::size_t a, std::size_t b, const Vec3& pa, const Vec3& pb, double fa, double fb) {
    const std::uint64_t key = a < b ? a * total() + b : b * total() + a;
    auto [it, inserted] = cache_.try_emplace(key, static_cast<int>(mesh_.vertices.size()));
    if (inserted) {
      double t = (iso_ - fa) / (fb - fa);
      t = std::clamp(t, kEdgeClamp, 1.0 - kEdgeClamp);
      mesh_.vertices.push_back(pa + t * (pb - pa));
    }
    return it->second;
  }

  void add_triangle(int a, int b, int c, const Vec3& inside_ref) {
    const Vec3& pa = mesh_.vertices[a];
    const Vec3 n = (mesh_.vertices[b] - pa).cross(mesh_.vertices[c] - pa);
    const Vec3 centroid = (pa + mesh_.vertices[b] + mesh_.vertices[c]) / 3.0;
    if (n.dot(centroid - inside_ref) < 0.0) std::swap(b, c);
    mesh_.triangles.push_back({a, b, c});
  }

  TriangleMesh take() { return std::move(mesh_); }

 private:
  std::uint64_t total() const { return g_.values.size(); }

  const ScalarGrid& g_;
  double iso_;
  TriangleMesh mesh_;
  std::unordered_map<std::uint64_t, int> cache_;
};

}  // namespace

TriangleMesh extract_isosurface(const ScalarGrid& field, double iso) {
  const auto& d = field.dims;
  require(d[0] >= 2 && d[1] >= 2 && d[2] >= 2, "isosurface lattice needs at least 2 samples per axis");
  require(field.values.size() == static_cast<std::size_t>(d[0]) * d[1] * d[2], "isosurface lattice size mismatch");

  bool any_inside = false;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        if (field.values[field.linear(i, j, k)] < iso) continue;
        any_inside = true;
        if (i == 0 || j == 0 || k == 0 || i == d[0] - 1 || j == d[1] - 1 || k == d[2] - 1)
          fail(Errc::open_mesh, "isosurface touches the sampling lattice boundary");
      }
  if (!any_inside) fail(Errc::empty_surface, "no lattice edge crosses the iso level");

  Builder builder(field, iso);
  std::size_t corner_idx[8];
  double corner_val[8];
  Vec3 corner_pos[8];
  for (int k = 0; k + 1 < d[2]; ++k)
    for (int j = 0; j + 1 < d[1]; ++j)
      for (int i = 0; i + 1 < d[0]; ++i) {
        int inside = 0;
        for (int c = 0; c < 8; ++c) {
          const int ci = i + (c & 1), cj = j + ((c >> 1) & 1), ck = k + ((c >> 2) & 1);
          corner_idx[c] = field.linear(ci, cj, ck);
          corner_val[c] = field.values[corner_idx[c]];
          inside += corner_val[c] >= iso;
        }
        if (inside == 0 || inside == 8) continue;
        for (int c = 0; c < 8; ++c)
          corner_pos[c] = field.position(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));

        for (const auto& tet : kTets) {
          int in[4], out[4], nin = 0, nout = 0;
          for (int v : tet) (corner_val[v] >= iso ? in[nin++] : out[nout++]) = v;
          if (nin == 0 || nout == 0) continue;
          auto vert = [&](int a, int b) {
            return builder.edge_vertex(corner_idx[a], corner_idx[b], corner_pos[a], corner_pos[b], corner_val[a],
                                       corner_val[b]);
          };
          Vec3 inside_ref = Vec3::Zero();
          for (int q = 0; q < nin; ++q) inside_ref += corner_pos[in[q]];
          inside_ref /= nin;
          if (nin == 1) {
            builder.add_triangle(vert(in[0], out[0]), vert(in[0], out[1]), vert(in[0], out[2]), inside_ref);
          } else if (nin == 3) {
            builder.add_triangle(vert(in[0], out[0]), vert(in[1], out[0]), vert(in[2], out[0]), inside_ref);
          } else {
            // Quad with cyclic order (a,c) (a,d) (b,d) (b,c).
            const int ac = vert(in[0], out[0]), ad = vert(in[0], out[1]);
            const int bd = vert(in[1], out[1]), bc = vert(in[1], out[0]);
            builder.add_triangle(ac, ad, bd, inside_ref);
            builder.add_triangle(ac, bd, bc, inside_ref);
          }
        }
      }
  return builder.take();
}

bool is_closed(const TriangleMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  const auto nv = static_cast<std::uint64_t>(mesh.vertices.size());
  // directed edge -> use count
  std::unordered_map<std::uint64_t, int> directed;
  directed.reserve(mesh.triangles.size() * 3);
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      if (a < 0 || b < 0 || static_cast<std::uint64_t>(a) >= nv || static_cast<std::uint64_t>(b) >= nv || a == b)
        return false;
      if (++directed[a * nv + b] > 1) return false;
    }
  }
  for (const auto& [key, count] : directed) {
    const auto a = key / nv, b = key % nv;
    if (!directed.contains(b * nv + a)) return false;
  }
  return true;
}

double triangle_area(const TriangleMesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const Vec3& a = mesh.vertices[tri[0]];
  return 0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm();
}

void write_obj(const TriangleMesh& mesh, std::ostream& out) {
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

void write_stl_binary(const TriangleMesh& mesh, std::ostream& out) {
  char header[80] = {};
  std::strncpy(header, "mbf binary STL", sizeof(header) - 1);
  out.write(header, sizeof(header));
  const auto count = static_cast<std::uint32_t>(mesh.triangles.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    Vec3 n = (b - a).cross(c - a);
    if (n.norm() > 0.0) n.normalize();
    float rec[12];
    for (int q = 0; q < 3; ++q) {
      rec[q] = static_cast<float>(n[q]);
      rec[3 + q] = static_cast<float>(a[q]);
      rec[6 + q] = static_cast<float>(b[q]);
      rec[9 + q] = static_cast<float>(c[q]);
    }
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    const std::uint16_t attr = 0;
    out.write(reinterpret_cast<const char*>(&attr), 2);
  }
}

void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, "cannot write " + path.string());
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".stl") {
    write_stl_binary(mesh, out);
  } else {
    write_obj(mesh, out);
  }
  if (!out) fail(Errc::io, "write failed for " + path.string());
}

}  // namespace mbf
