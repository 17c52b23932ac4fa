#include "icm/constitutive.hpp"

#include "icm/parallel.hpp"

namespace icm {

void GradientProvider::hess(std::span<const Invariants2D> inv,
                            std::span<Eigen::Matrix2d> out) const {
    const std::size_t n = inv.size();
    std::vector<Invariants2D> probes(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double h1 = 1e-6 * std::max(1.0, std::fabs(inv[i].i1));
        const double h3 = 1e-6 * std::max(1.0, std::fabs(inv[i].i3));
        probes[4 * i + 0] = {inv[i].i1 + h1, inv[i].i3};
        probes[4 * i + 1] = {inv[i].i1 - h1, inv[i].i3};
        probes[4 * i + 2] = {inv[i].i1, inv[i].i3 + h3};
        probes[4 * i + 3] = {inv[i].i1, inv[i].i3 - h3};
    }
    std::vector<Eigen::Vector2d> g(4 * n);
    eval(probes, g);
    for (std::size_t i = 0; i < n; ++i) {
        const double h1 = 1e-6 * std::max(1.0, std::fabs(inv[i].i1));
        const double h3 = 1e-6 * std::max(1.0, std::fabs(inv[i].i3));
        const Eigen::Vector2d dt = (g[4 * i + 0] - g[4 * i + 1]) / (2.0 * h1);
        const Eigen::Vector2d dd = (g[4 * i + 2] - g[4 * i + 3]) / (2.0 * h3);
        Eigen::Matrix2d H;
        H << dt[0], 0.5 * (dd[0] + dt[1]), 0.5 * (dd[0] + dt[1]), dd[1];
        out[i] = H;
    }
}

void MaterialGradientProvider::eval(std::span<const Invariants2D> inv,
                                    std::span<Eigen::Vector2d> out) const {
    par::for_index(static_cast<std::int64_t>(inv.size()), [&](std::int64_t i) {
        out[static_cast<std::size_t>(i)] =
            grad_energy(model_, inv[static_cast<std::size_t>(i)]);
    });
}

void MaterialGradientProvider::hess(std::span<const Invariants2D> inv,
                                    std::span<Eigen::Matrix2d> out) const {
    par::for_index(static_cast<std::int64_t>(inv.size()), [&](std::int64_t i) {
        out[static_cast<std::size_t>(i)] =
            hess_energy(model_, inv[static_cast<std::size_t>(i)]);
    });
}

}  // namespace icm
