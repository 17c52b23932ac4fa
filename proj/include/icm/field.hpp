#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace icm {

// Measured resultant on one displacement-controlled boundary: the named node
// set, the unit loading direction and the force magnitude projected on it.
struct BoundaryCondition {
    std::string set;
    Eigen::Vector2d direction{1.0, 0.0};
    double force = 0.0;
};

// Converged nodal displacement field plus its boundary force records.
struct StrainField {
    std::string mesh_id;
    std::vector<Eigen::Vector2d> displacements;
    std::vector<BoundaryCondition> bcs;
};

}  // namespace icm
