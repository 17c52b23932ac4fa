#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <string>
#include <vector>

namespace icm {

// Linear-triangle mesh of a plate in its reference configuration.
// finalize() derives the caches (areas, shape-function gradients,
// node-element adjacency, interior node list) and validates element areas.
struct Mesh {
    std::vector<Eigen::Vector2d> nodes;
    std::vector<std::array<int, 3>> triangles;
    std::map<std::string, std::vector<int>> boundary_sets;

    // Derived, immutable after finalize().
    std::vector<int> interior_nodes;                       // not in any boundary set
    std::vector<std::vector<int>> node_elements;           // E(n)
    std::vector<double> area;                              // w^e
    std::vector<std::array<Eigen::Vector2d, 3>> shape_grad;  // dN/dX per vertex
    std::vector<bool> is_boundary;
    double length_scale = 1.0;

    void finalize();
    int node_count() const { return static_cast<int>(nodes.size()); }
    int element_count() const { return static_cast<int>(triangles.size()); }
    const std::vector<int>& boundary_set(const std::string& name) const;
};

struct HoleSpec {
    enum class Shape { Circle, Ellipse, Square };
    Shape shape = Shape::Circle;
    Eigen::Vector2d center{0.5, 0.5};
    double a = 0.2;  // radius / semi-axis / half-side
    double b = 0.2;
};

struct PlateGeometry {
    double L = 1.0;
    double h = 0.1;  // target edge length
    std::vector<HoleSpec> holes;
};

// Structured background grid with hole carving, boundary snapping and
// Laplacian smoothing. Populates "left"/"right"/"top"/"bottom" sets.
Mesh generate_plate_mesh(const PlateGeometry& geom);

// Splits every triangle into four via edge midpoints; boundary sets are
// extended with midpoints of boundary edges.
Mesh refine_uniform(const Mesh& mesh);

double mesh_min_angle_deg(const Mesh& mesh);

}  // namespace icm
