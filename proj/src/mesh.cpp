#include "icm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "icm/errors.hpp"

namespace icm {

namespace {

double signed_area(const Eigen::Vector2d& p0, const Eigen::Vector2d& p1,
                   const Eigen::Vector2d& p2) {
    return 0.5 * ((p1.x() - p0.x()) * (p2.y() - p0.y()) -
                  (p2.x() - p0.x()) * (p1.y() - p0.y()));
}

double hole_signed_distance(const HoleSpec& h, const Eigen::Vector2d& X) {
    const Eigen::Vector2d r = X - h.center;
    switch (h.shape) {
        case HoleSpec::Shape::Circle:
            return r.norm() - h.a;
        case HoleSpec::Shape::Ellipse: {
            const double q = std::sqrt((r.x() / h.a) * (r.x() / h.a) +
                                       (r.y() / h.b) * (r.y() / h.b));
            return (q - 1.0) * std::min(h.a, h.b);
        }
        case HoleSpec::Shape::Square:
            return std::max(std::fabs(r.x()), std::fabs(r.y())) - h.a;
    }
    throw Error("bad hole shape");
}

Eigen::Vector2d hole_project(const HoleSpec& h, const Eigen::Vector2d& X) {
    const Eigen::Vector2d r = X - h.center;
    switch (h.shape) {
        case HoleSpec::Shape::Circle: {
            const double n = r.norm();
            if (n < 1e-14) return h.center + Eigen::Vector2d(h.a, 0.0);
            return h.center + r * (h.a / n);
        }
        case HoleSpec::Shape::Ellipse: {
            const double q = std::sqrt((r.x() / h.a) * (r.x() / h.a) +
                                       (r.y() / h.b) * (r.y() / h.b));
            if (q < 1e-14) return h.center + Eigen::Vector2d(h.a, 0.0);
            return h.center + r / q;
        }
        case HoleSpec::Shape::Square: {
            Eigen::Vector2d p = r;
            const double m = std::max(std::fabs(p.x()), std::fabs(p.y()));
            if (m < 1e-14) return h.center + Eigen::Vector2d(h.a, 0.0);
            // Push the dominant component onto the side, clamp the other.
            if (std::fabs(p.x()) >= std::fabs(p.y())) {
                p.x() = p.x() > 0 ? h.a : -h.a;
                p.y() = std::clamp(p.y(), -h.a, h.a);
            } else {
                p.y() = p.y() > 0 ? h.a : -h.a;
                p.x() = std::clamp(p.x(), -h.a, h.a);
            }
            return h.center + p;
        }
    }
    throw Error("bad hole shape");
}

}  // namespace

void Mesh::finalize() {
    const int nn = node_count();
    const int ne = element_count();
    area.assign(static_cast<std::size_t>(ne), 0.0);
    shape_grad.assign(static_cast<std::size_t>(ne), {});
    node_elements.assign(static_cast<std::size_t>(nn), {});
    is_boundary.assign(static_cast<std::size_t>(nn), false);

    double lmax = 0.0;
    for (const auto& p : nodes) lmax = std::max(lmax, p.cwiseAbs().maxCoeff());
    length_scale = lmax > 0 ? lmax : 1.0;

    for (int e = 0; e < ne; ++e) {
        const auto& t = triangles[static_cast<std::size_t>(e)];
        for (int v : t)
            if (v < 0 || v >= nn) throw Error("triangle node index out of range");
        const Eigen::Vector2d& p0 = nodes[static_cast<std::size_t>(t[0])];
        const Eigen::Vector2d& p1 = nodes[static_cast<std::size_t>(t[1])];
        const Eigen::Vector2d& p2 = nodes[static_cast<std::size_t>(t[2])];
        const double w = signed_area(p0, p1, p2);
        if (w <= 1e-14 * length_scale * length_scale)
            throw DegenerateElement("element " + std::to_string(e) +
                                    " has area " + std::to_string(w));
        area[static_cast<std::size_t>(e)] = w;
        // grad N_i = (y_j - y_k, x_k - x_j) / (2w), cyclic (i, j, k)
        for (int i = 0; i < 3; ++i) {
            const auto& pj = nodes[static_cast<std::size_t>(t[(i + 1) % 3])];
            const auto& pk = nodes[static_cast<std::size_t>(t[(i + 2) % 3])];
            shape_grad[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)] =
                Eigen::Vector2d(pj.y() - pk.y(), pk.x() - pj.x()) / (2.0 * w);
        }
        for (int i = 0; i < 3; ++i)
            node_elements[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])]
                .push_back(e);
    }

    for (const auto& [name, set] : boundary_sets)
        for (int n : set) {
            if (n < 0 || n >= nn) throw Error("boundary set node out of range");
            is_boundary[static_cast<std::size_t>(n)] = true;
        }

    interior_nodes.clear();
    for (int n = 0; n < nn; ++n)
        if (!is_boundary[static_cast<std::size_t>(n)]) interior_nodes.push_back(n);
}

const std::vector<int>& Mesh::boundary_set(const std::string& name) const {
    const auto it = boundary_sets.find(name);
    if (it == boundary_sets.end())
        throw UnknownBoundarySet("no boundary set named '" + name + "'");
    return it->second;
}

Mesh generate_plate_mesh(const PlateGeometry& geom) {
    const double L = geom.L;
    if (L <= 0 || geom.h <= 0) throw MeshGenerationFailure("bad plate dimensions");

    // Hole placement validation.
    for (std::size_t i = 0; i < geom.holes.size(); ++i) {
        const auto& h = geom.holes[i];
        const double rad = std::max(h.a, h.b);
        const double margin = 1.5 * geom.h;
        if (h.center.x() - rad < margin || h.center.x() + rad > L - margin ||
            h.center.y() - rad < margin || h.center.y() + rad > L - margin)
            throw MeshGenerationFailure("hole touches the outer boundary");
        for (std::size_t j = i + 1; j < geom.holes.size(); ++j) {
            const auto& g = geom.holes[j];
            const double gap =
                (h.center - g.center).norm() - rad - std::max(g.a, g.b);
            if (gap < margin) throw MeshGenerationFailure("holes overlap or touch");
        }
    }

    const int n = std::max(2, static_cast<int>(std::lround(L / geom.h)));
    const double hh = L / n;

    auto node_id = [&](int i, int j) { return j * (n + 1) + i; };
    std::vector<Eigen::Vector2d> pts(static_cast<std::size_t>((n + 1) * (n + 1)));
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i)
            pts[static_cast<std::size_t>(node_id(i, j))] =
                Eigen::Vector2d(i * hh, j * hh);

    auto phi = [&](const Eigen::Vector2d& X) {
        double d = 1e300;
        for (const auto& h : geom.holes) d = std::min(d, hole_signed_distance(h, X));
        return d;
    };
    auto nearest_hole = [&](const Eigen::Vector2d& X) -> const HoleSpec* {
        const HoleSpec* best = nullptr;
        double d = 1e300;
        for (const auto& h : geom.holes) {
            const double v = hole_signed_distance(h, X);
            if (v < d) {
                d = v;
                best = &h;
            }
        }
        return best;
    };

    // Pre-snap grid nodes close to a hole boundary onto it, then carve
    // triangles whose centroid stays inside a hole.
    std::vector<bool> outer(pts.size(), false);
    std::vector<bool> snapped(pts.size(), false);
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) {
            const int id = node_id(i, j);
            if (i == 0 || i == n || j == 0 || j == n) {
                outer[static_cast<std::size_t>(id)] = true;
                continue;
            }
            if (geom.holes.empty()) continue;
            Eigen::Vector2d& X = pts[static_cast<std::size_t>(id)];
            const double d = phi(X);
            if (std::fabs(d) < 0.45 * hh) {
                X = hole_project(*nearest_hole(X), X);
                snapped[static_cast<std::size_t>(id)] = true;
            }
        }

    std::vector<std::array<int, 3>> tris;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const int a = node_id(i, j), b = node_id(i + 1, j);
            const int c = node_id(i + 1, j + 1), d = node_id(i, j + 1);
            // Alternate the diagonal to avoid directional bias.
            if ((i + j) % 2 == 0) {
                tris.push_back({a, b, c});
                tris.push_back({a, c, d});
            } else {
                tris.push_back({a, b, d});
                tris.push_back({b, c, d});
            }
        }

    std::vector<std::array<int, 3>> kept;
    for (const auto& t : tris) {
        const Eigen::Vector2d centroid = (pts[static_cast<std::size_t>(t[0])] +
                                          pts[static_cast<std::size_t>(t[1])] +
                                          pts[static_cast<std::size_t>(t[2])]) /
                                         3.0;
        const double w = signed_area(pts[static_cast<std::size_t>(t[0])],
                                     pts[static_cast<std::size_t>(t[1])],
                                     pts[static_cast<std::size_t>(t[2])]);
        if (w <= 1e-12 * L * L) continue;  // snapped into a sliver
        if (!geom.holes.empty() && phi(centroid) < 0) continue;
        kept.push_back(t);
    }
    if (kept.empty()) throw MeshGenerationFailure("carving removed every element");

    // Compact node numbering.
    std::vector<int> remap(pts.size(), -1);
    Mesh mesh;
    for (const auto& t : kept)
        for (int v : t)
            if (remap[static_cast<std::size_t>(v)] < 0) {
                remap[static_cast<std::size_t>(v)] = mesh.node_count();
                mesh.nodes.push_back(pts[static_cast<std::size_t>(v)]);
            }
    std::vector<bool> n_outer(mesh.nodes.size(), false), n_snap(mesh.nodes.size(), false);
    for (std::size_t v = 0; v < pts.size(); ++v)
        if (remap[v] >= 0) {
            n_outer[static_cast<std::size_t>(remap[v])] = outer[v];
            n_snap[static_cast<std::size_t>(remap[v])] = snapped[v];
        }
    for (const auto& t : kept)
        mesh.triangles.push_back({remap[static_cast<std::size_t>(t[0])],
                                  remap[static_cast<std::size_t>(t[1])],
                                  remap[static_cast<std::size_t>(t[2])]});

    // Laplacian smoothing of free nodes (outer boundary and hole-snapped
    // nodes stay put); a pass is reverted per-node if it would invert an
    // adjacent element.
    if (!geom.holes.empty()) {
        std::vector<std::set<int>> nbr(mesh.nodes.size());
        std::vector<std::vector<int>> adj(mesh.nodes.size());
        for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
            const auto& t = mesh.triangles[e];
            for (int i = 0; i < 3; ++i) {
                nbr[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])].insert(
                    t[static_cast<std::size_t>((i + 1) % 3)]);
                nbr[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])].insert(
                    t[static_cast<std::size_t>((i + 2) % 3)]);
                adj[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])].push_back(
                    static_cast<int>(e));
            }
        }
        auto min_adj_area = [&](int v) {
            double m = 1e300;
            for (int e : adj[static_cast<std::size_t>(v)]) {
                const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
                m = std::min(m, signed_area(mesh.nodes[static_cast<std::size_t>(t[0])],
                                            mesh.nodes[static_cast<std::size_t>(t[1])],
                                            mesh.nodes[static_cast<std::size_t>(t[2])]));
            }
            return m;
        };
        for (int pass = 0; pass < 4; ++pass) {
            for (int v = 0; v < mesh.node_count(); ++v) {
                if (n_outer[static_cast<std::size_t>(v)] ||
                    n_snap[static_cast<std::size_t>(v)])
                    continue;
                Eigen::Vector2d avg(0, 0);
                for (int w : nbr[static_cast<std::size_t>(v)])
                    avg += mesh.nodes[static_cast<std::size_t>(w)];
                avg /= static_cast<double>(nbr[static_cast<std::size_t>(v)].size());
                const Eigen::Vector2d old = mesh.nodes[static_cast<std::size_t>(v)];
                mesh.nodes[static_cast<std::size_t>(v)] = old + 0.6 * (avg - old);
                if (min_adj_area(v) <= 1e-12 * L * L)
                    mesh.nodes[static_cast<std::size_t>(v)] = old;
            }
        }
    }

    // Outer-edge boundary sets.
    const double tol = 1e-9 * L;
    std::vector<int> left, right, top, bottom;
    for (int v = 0; v < mesh.node_count(); ++v) {
        const auto& X = mesh.nodes[static_cast<std::size_t>(v)];
        if (std::fabs(X.x()) < tol) left.push_back(v);
        if (std::fabs(X.x() - L) < tol) right.push_back(v);
        if (std::fabs(X.y() - L) < tol) top.push_back(v);
        if (std::fabs(X.y()) < tol) bottom.push_back(v);
    }
    mesh.boundary_sets["left"] = left;
    mesh.boundary_sets["right"] = right;
    mesh.boundary_sets["top"] = top;
    mesh.boundary_sets["bottom"] = bottom;

    mesh.finalize();

    // Holes must be resolved by enough boundary segments.
    if (!geom.holes.empty()) {
        std::map<std::pair<int, int>, int> edge_count;
        for (const auto& t : mesh.triangles)
            for (int i = 0; i < 3; ++i) {
                int a = t[static_cast<std::size_t>(i)];
                int b = t[static_cast<std::size_t>((i + 1) % 3)];
                if (a > b) std::swap(a, b);
                edge_count[{a, b}]++;
            }
        std::size_t hole_edges = 0;
        for (const auto& [edge, cnt] : edge_count) {
            if (cnt != 1) continue;
            const auto& pa = mesh.nodes[static_cast<std::size_t>(edge.first)];
            const auto& pb = mesh.nodes[static_cast<std::size_t>(edge.second)];
            const bool outer_edge =
                (std::fabs(pa.x()) < tol && std::fabs(pb.x()) < tol) ||
                (std::fabs(pa.x() - L) < tol && std::fabs(pb.x() - L) < tol) ||
                (std::fabs(pa.y()) < tol && std::fabs(pb.y()) < tol) ||
                (std::fabs(pa.y() - L) < tol && std::fabs(pb.y() - L) < tol);
            if (!outer_edge) ++hole_edges;
        }
        if (hole_edges < 16 * geom.holes.size())
            throw MeshGenerationFailure(
                "holes under-resolved: " + std::to_string(hole_edges) +
                " boundary segments; reduce h");
    }
    return mesh;
}

Mesh refine_uniform(const Mesh& mesh) {
    Mesh out;
    out.nodes = mesh.nodes;
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
        if (a > b) std::swap(a, b);
        const auto it = midpoint.find({a, b});
        if (it != midpoint.end()) return it->second;
        const int id = out.node_count();
        out.nodes.push_back(0.5 * (mesh.nodes[static_cast<std::size_t>(a)] +
                                   mesh.nodes[static_cast<std::size_t>(b)]));
        midpoint[{a, b}] = id;
        return id;
    };
    for (const auto& t : mesh.triangles) {
        const int m01 = mid(t[0], t[1]);
        const int m12 = mid(t[1], t[2]);
        const int m20 = mid(t[2], t[0]);
        out.triangles.push_back({t[0], m01, m20});
        out.triangles.push_back({t[1], m12, m01});
        out.triangles.push_back({t[2], m20, m12});
        out.triangles.push_back({m01, m12, m20});
    }
    for (const auto& [name, set] : mesh.boundary_sets) {
        std::set<int> s(set.begin(), set.end());
        std::vector<int> grown(set.begin(), set.end());
        for (const auto& [edge, id] : midpoint)
            if (s.count(edge.first) && s.count(edge.second)) grown.push_back(id);
        std::sort(grown.begin(), grown.end());
        out.boundary_sets[name] = grown;
    }
    out.finalize();
    return out;
}

double mesh_min_angle_deg(const Mesh& mesh) {
    double worst = 180.0;
    for (const auto& t : mesh.triangles) {
        for (int i = 0; i < 3; ++i) {
            const auto& p = mesh.nodes[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])];
            const auto& q = mesh.nodes[static_cast<std::size_t>(t[static_cast<std::size_t>((i + 1) % 3)])];
            const auto& r = mesh.nodes[static_cast<std::size_t>(t[static_cast<std::size_t>((i + 2) % 3)])];
            const Eigen::Vector2d u = q - p, v = r - p;
            const double c = u.dot(v) / (u.norm() * v.norm());
            worst = std::min(worst, std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 /
                                        3.14159265358979323846);
        }
    }
    return worst;
}

}  // namespace icm
