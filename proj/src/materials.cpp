#include "icm/materials.hpp"

#include <algorithm>
#include <cmath>

#include "icm/errors.hpp"

namespace icm {

namespace {

// Generalized binomial coefficient C(p, k) for real p.
double binom(double p, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= (p - i) / (i + 1);
    return r;
}

struct Embedded {
    Dual2 ib1;  // isochoric I1 (3D)
    Dual2 ib2;  // isochoric I2 (3D)
    Dual2 jac;  // J = sqrt(i3)
};

Embedded embed(const Dual2& t, const Dual2& d) {
    if (d.v <= 0.0)
        throw DomainViolation("invariant i3 must be positive, got " + std::to_string(d.v));
    Embedded e;
    e.jac = sqrt(d);
    const Dual2 dm13 = pow(d, -1.0 / 3.0);
    e.ib1 = dm13 * (t + 1.0);
    e.ib2 = pow(d, -2.0 / 3.0) * (d + t);
    return e;
}

// Shared volumetric series sum D_m (J-1)^{2m}.
Dual2 volumetric_poly(const std::array<double, 4>& dm, const Dual2& J) {
    const Dual2 jm1 = J - 1.0;
    const Dual2 jm2 = jm1 * jm1;
    Dual2 acc(0.0);
    Dual2 p = jm2;
    for (int m = 0; m < 4; ++m) {
        if (dm[static_cast<std::size_t>(m)] != 0.0)
            acc = acc + dm[static_cast<std::size_t>(m)] * p;
        p = p * jm2;
    }
    return acc;
}

// Volumetric term D ((J^2-1)/2 - ln J) used by PS / Exp-ln / VdW.
Dual2 volumetric_log(double D, const Dual2& J) {
    return D * ((J * J - 1.0) * 0.5 - log(J));
}

Dual2 psi_polynomial(const PolynomialParams& p, const Dual2& t, const Dual2& d) {
    const Embedded e = embed(t, d);
    const Dual2 u = e.ib1 - 3.0;
    const Dual2 v = e.ib2 - 3.0;
    Dual2 acc(0.0);
    for (int k = 1; k <= 6; ++k) {
        for (int i = k; i >= 0; --i) {
            const int j = k - i;
            const double c = p.c[static_cast<std::size_t>(cij_index(i, j))];
            if (c == 0.0) continue;
            acc = acc + c * (pow_int(u, i) * pow_int(v, j));
        }
    }
    return acc + volumetric_poly(p.d, e.jac);
}

// a^q + b^q for the eigenvalues a, b of C (roots of x^2 - t x + d).
// Near-degenerate pairs go through the even Taylor series in
// delta2 = (t/2)^2 - d, which is smooth in the invariants.
Dual2 eigen_power_sum(const Dual2& t, const Dual2& d, double q) {
    const Dual2 mean = t * 0.5;
    const Dual2 delta2 = mean * mean - d;
    const double rel = delta2.v / std::max(mean.v * mean.v, 1e-300);
    if (rel < 1e-3) {
        Dual2 acc(0.0);
        Dual2 dp(1.0);
        for (int k = 0; k <= 4; ++k) {
            acc = acc + binom(q, 2 * k) * pow(mean, q - 2.0 * k) * dp;
            dp = dp * delta2;
        }
        return 2.0 * acc;
    }
    const Dual2 s = sqrt(delta2);
    return pow(mean + s, q) + pow(mean - s, q);
}

Dual2 psi_ogden(const OgdenParams& p, const Dual2& t, const Dual2& d) {
    if (d.v <= 0.0)
        throw DomainViolation("invariant i3 must be positive, got " + std::to_string(d.v));
    Dual2 acc(0.0);
    for (int k = 0; k < 6; ++k) {
        const double mu = p.mu[static_cast<std::size_t>(k)];
        if (mu == 0.0) continue;
        const double al = p.alpha[static_cast<std::size_t>(k)];
        // lbar_i^al = d^{-al/6} lam_i^al, lam_{1,2}^al = eig(C)^{al/2}, lam_3 = 1.
        const Dual2 g = eigen_power_sum(t, d, al * 0.5);
        acc = acc + (2.0 * mu / (al * al)) * (pow(d, -al / 6.0) * (g + 1.0) - 3.0);
    }
    return acc + volumetric_poly(p.d, sqrt(d));
}

Dual2 psi_pucci_saccomandi(const PucciSaccomandiParams& p, const Dual2& t, const Dual2& d) {
    const Embedded e = embed(t, d);
    const Dual2 arg = 1.0 - (e.ib1 - 3.0) / p.Jm;
    if (arg.v <= 0.0)
        throw DomainViolation("Pucci-Saccomandi locking: 1 - (Ib1-3)/Jm = " +
                              std::to_string(arg.v));
    return (-0.5 * p.mu * p.Jm) * log(arg) + p.C2 * log(e.ib2 / 3.0) +
           volumetric_log(p.D, e.jac);
}

Dual2 psi_exp_ln(const ExpLnParams& p, const Dual2& t, const Dual2& d) {
    const Embedded e = embed(t, d);
    const Dual2 w = e.ib1 - 2.0;
    if (w.v <= 0.0)
        throw DomainViolation("Exp-ln log argument Ib1-2 = " + std::to_string(w.v));
    const double c = 1.0 / p.a + p.b;
    const Dual2 iso = (1.0 / p.a) * exp(p.a * (e.ib1 - 3.0)) +
                      p.b * (w * (1.0 - log(w))) - c;
    return (0.5 * p.mu) * iso + volumetric_log(p.D, e.jac);
}

Dual2 psi_van_der_waals(const VanDerWaalsParams& p, const Dual2& t, const Dual2& d) {
    const Embedded e = embed(t, d);
    const Dual2 itil = (1.0 - p.beta) * e.ib1 + p.beta * e.ib2;
    const Dual2 x = itil - 3.0;
    const double L = p.lambda_m * p.lambda_m - 3.0;
    if (x.v < -1e-12)
        throw DomainViolation("VdW isochoric invariant below reference: " +
                              std::to_string(x.v));
    Dual2 iso;
    if (x.v < 1e-13) {
        // -L (ln(1-eta)+eta) = x/2 + O(x^{3/2}); the sqrt cusp is below
        // machine precision here and would produce inf/NaN dual components.
        iso = x * 0.5;
    } else {
        if (x.v / L >= 1.0)
            throw DomainViolation("VdW locking: eta >= 1 (x/L = " +
                                  std::to_string(x.v / L) + ")");
        const Dual2 eta = sqrt(x * (1.0 / L));
        iso = (-L) * (log(1.0 - eta) + eta) - (2.0 * p.a / 3.0) * pow(x * 0.5, 1.5);
    }
    return p.mu * iso + volumetric_log(p.D, e.jac);
}

}  // namespace

std::string family_name(Family f) {
    switch (f) {
        case Family::Polynomial: return "polynomial";
        case Family::Ogden: return "ogden";
        case Family::PucciSaccomandi: return "pucci_saccomandi";
        case Family::ExpLn: return "exp_ln";
        case Family::VanDerWaals: return "van_der_waals";
    }
    throw Error("bad family enum");
}

Family family_from_name(const std::string& name) {
    if (name == "polynomial") return Family::Polynomial;
    if (name == "ogden") return Family::Ogden;
    if (name == "pucci_saccomandi") return Family::PucciSaccomandi;
    if (name == "exp_ln") return Family::ExpLn;
    if (name == "van_der_waals") return Family::VanDerWaals;
    throw Error("unknown material family: " + name);
}

int cij_index(int i, int j) {
    const int k = i + j;
    return k * (k + 1) / 2 - 1 + (k - i);
}

void cij_from_index(int idx, int& i, int& j) {
    for (int k = 1; k <= 6; ++k) {
        const int off = k * (k + 1) / 2 - 1;
        if (idx < off + k + 1) {
            i = k - (idx - off);
            j = k - i;
            return;
        }
    }
    throw Error("cij index out of range");
}

Family MaterialModel::family() const {
    return std::visit(
        [](const auto& p) -> Family {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, PolynomialParams>) return Family::Polynomial;
            if constexpr (std::is_same_v<T, OgdenParams>) return Family::Ogden;
            if constexpr (std::is_same_v<T, PucciSaccomandiParams>)
                return Family::PucciSaccomandi;
            if constexpr (std::is_same_v<T, ExpLnParams>) return Family::ExpLn;
            if constexpr (std::is_same_v<T, VanDerWaalsParams>) return Family::VanDerWaals;
        },
        params);
}

Invariants2D invariants_from_F(const Eigen::Matrix2d& F) {
    const double det = F.determinant();
    if (det <= 0.0)
        throw NonPositiveJacobian("det F = " + std::to_string(det));
    const Eigen::Matrix2d C = F.transpose() * F;
    return {C.trace(), C.determinant()};
}

Dual2 energy_dual(const MaterialModel& m, const Dual2& i1, const Dual2& i3) {
    return std::visit(
        [&](const auto& p) -> Dual2 {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, PolynomialParams>)
                return psi_polynomial(p, i1, i3);
            else if constexpr (std::is_same_v<T, OgdenParams>)
                return psi_ogden(p, i1, i3);
            else if constexpr (std::is_same_v<T, PucciSaccomandiParams>)
                return psi_pucci_saccomandi(p, i1, i3);
            else if constexpr (std::is_same_v<T, ExpLnParams>)
                return psi_exp_ln(p, i1, i3);
            else
                return psi_van_der_waals(p, i1, i3);
        },
        m.params);
}

double energy(const MaterialModel& m, Invariants2D inv) {
    return energy_dual(m, Dual2(inv.i1), Dual2(inv.i3)).v;
}

Eigen::Vector2d grad_energy(const MaterialModel& m, Invariants2D inv) {
    const Dual2 e = energy_dual(m, Dual2::var_t(inv.i1), Dual2::var_d(inv.i3));
    return {e.t, e.d};
}

Eigen::Matrix2d hess_energy(const MaterialModel& m, Invariants2D inv) {
    const Dual2 e = energy_dual(m, Dual2::var_t(inv.i1), Dual2::var_d(inv.i3));
    Eigen::Matrix2d h;
    h << e.tt, e.td, e.td, e.dd;
    return h;
}

Eigen::Matrix2d stress_from_gradient(const Eigen::Matrix2d& F, const Eigen::Vector2d& g) {
    const Eigen::Matrix2d C = F.transpose() * F;
    const double detC = C.determinant();
    const Eigen::Matrix2d Cinv = C.inverse();
    return 2.0 * (g[0] * Eigen::Matrix2d::Identity() + g[1] * detC * Cinv);
}

Eigen::Matrix2d second_pk_stress(const MaterialModel& m, const Eigen::Matrix2d& F) {
    return stress_from_gradient(F, grad_energy(m, invariants_from_F(F)));
}

Eigen::Matrix2d first_pk_stress(const MaterialModel& m, const Eigen::Matrix2d& F) {
    return F * second_pk_stress(m, F);
}

Tangent4 material_tangent(const Eigen::Matrix2d& F, const Eigen::Vector2d& g,
                          const Eigen::Matrix2d& H) {
    const Eigen::Matrix2d C = F.transpose() * F;
    const double detC = C.determinant();
    const Eigen::Matrix2d Ci = C.inverse();
    const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d S =
        2.0 * (g[0] * I + g[1] * detC * Ci);

    // dS_lr/dC_pq treating the four C entries as independent; the symmetric
    // structure enters through dC_pq/dF_js below.
    double dSdC[2][2][2][2];
    for (int l = 0; l < 2; ++l)
        for (int r = 0; r < 2; ++r)
            for (int p = 0; p < 2; ++p)
                for (int q = 0; q < 2; ++q) {
                    const double di1 = (p == q) ? 1.0 : 0.0;
                    const double di3 = detC * Ci(q, p);
                    const double dg1 = H(0, 0) * di1 + H(0, 1) * di3;
                    const double dg3 = H(1, 0) * di1 + H(1, 1) * di3;
                    const double dCinv = -Ci(l, p) * Ci(q, r);
                    const double ddetCi = di3 * Ci(l, r) + detC * dCinv;
                    dSdC[l][r][p][q] =
                        2.0 * (dg1 * I(l, r) + dg3 * detC * Ci(l, r) + g[1] * ddetCi);
                }

    Tangent4 A{};
    for (int i = 0; i < 2; ++i)
        for (int r = 0; r < 2; ++r)
            for (int j = 0; j < 2; ++j)
                for (int s = 0; s < 2; ++s) {
                    double v = (i == j) ? S(s, r) : 0.0;
                    for (int l = 0; l < 2; ++l)
                        for (int p = 0; p < 2; ++p)
                            for (int q = 0; q < 2; ++q) {
                                // dC_pq/dF_js = delta_ps F_jq + delta_qs F_jp
                                double dC = 0.0;
                                if (p == s) dC += F(j, q);
                                if (q == s) dC += F(j, p);
                                if (dC != 0.0) v += F(i, l) * dSdC[l][r][p][q] * dC;
                            }
                    A[i][r][j][s] = v;
                }
    return A;
}

std::string subset_rule_name(SubsetRule r) {
    switch (r) {
        case SubsetRule::Default: return "default";
        case SubsetRule::PolyA: return "poly_a";
        case SubsetRule::PolyB: return "poly_b";
        case SubsetRule::PolyC: return "poly_c";
        case SubsetRule::OgdenLow: return "ogden_low";
        case SubsetRule::OgdenHigh: return "ogden_high";
    }
    throw Error("bad subset rule enum");
}

SubsetRule subset_rule_from_name(const std::string& name) {
    if (name == "default") return SubsetRule::Default;
    if (name == "poly_a") return SubsetRule::PolyA;
    if (name == "poly_b") return SubsetRule::PolyB;
    if (name == "poly_c") return SubsetRule::PolyC;
    if (name == "ogden_low") return SubsetRule::OgdenLow;
    if (name == "ogden_high") return SubsetRule::OgdenHigh;
    throw UnknownSubsetRule("unknown subset rule: " + name);
}

namespace {

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

MaterialModel sample_polynomial(SubsetRule rule, Rng& rng) {
    PolynomialParams p;
    if (rule == SubsetRule::PolyA) {
        std::array<std::uint64_t, 2> ci{};
        rng.sample_without_replacement(9, 2, ci.begin());  // i+j <= 3 slots
        for (auto idx : ci) p.c[idx] = rng.uniform(0.0, 100.0);
        std::array<std::uint64_t, 2> di{};
        rng.sample_without_replacement(4, 2, di.begin());
        for (auto idx : di) p.d[idx] = rng.uniform(0.0, 100.0);
        p.c[static_cast<std::size_t>(cij_index(1, 0))] += 1.0;
        p.d[0] += 1.0;
    } else if (rule == SubsetRule::PolyB) {
        std::array<std::uint64_t, 4> ci{};
        rng.sample_without_replacement(27, 4, ci.begin());
        for (auto idx : ci) p.c[idx] = rng.uniform(0.0, 100.0);
        std::array<std::uint64_t, 2> di{};
        rng.sample_without_replacement(4, 2, di.begin());
        for (auto idx : di) p.d[idx] = rng.uniform(0.0, 100.0);
        p.c[static_cast<std::size_t>(cij_index(1, 0))] += 1.0;
        p.d[0] += 1.0;
    } else if (rule == SubsetRule::PolyC) {
        for (auto& c : p.c) c = rng.uniform(0.0, 100.0);
        for (auto& d : p.d) d = rng.uniform(0.0, 100.0);
    } else {
        throw UnknownSubsetRule("polynomial family needs poly_a/poly_b/poly_c, got " +
                                subset_rule_name(rule));
    }
    return MaterialModel{p};
}

MaterialModel sample_ogden(SubsetRule rule, Rng& rng) {
    OgdenParams p;
    const bool low = rule == SubsetRule::OgdenLow;
    if (!low && rule != SubsetRule::OgdenHigh)
        throw UnknownSubsetRule("ogden family needs ogden_low/ogden_high, got " +
                                subset_rule_name(rule));
    const double scale = low ? 2.0 : 10.0;
    const int active = low ? 2 : 6;
    for (int k = 0; k < 6; ++k) {
        p.mu[static_cast<std::size_t>(k)] = k < active ? rng.uniform(1.0, 101.0) : 0.0;
        p.alpha[static_cast<std::size_t>(k)] =
            clip(scale * std::fabs(rng.normal()) + 1.0, 1.2, 20.0);
    }
    for (auto& d : p.d) d = rng.uniform(0.0, 100.0);
    p.d[0] += 1.0;
    return MaterialModel{p};
}

}  // namespace

MaterialModel sample_material(Family family, SubsetRule rule, Rng& rng) {
    switch (family) {
        case Family::Polynomial:
            return sample_polynomial(rule, rng);
        case Family::Ogden:
            return sample_ogden(rule, rng);
        case Family::PucciSaccomandi: {
            if (rule != SubsetRule::Default)
                throw UnknownSubsetRule("pucci_saccomandi takes no subset rule");
            PucciSaccomandiParams p;
            p.mu = rng.uniform(1.0, 101.0);
            const double s = rng.uniform(4.0, 6.0);
            p.Jm = s * s;
            p.C2 = rng.uniform(0.0, 100.0);
            p.D = rng.uniform(1.0, 501.0);
            return MaterialModel{p};
        }
        case Family::ExpLn: {
            if (rule != SubsetRule::Default)
                throw UnknownSubsetRule("exp_ln takes no subset rule");
            ExpLnParams p;
            p.mu = rng.uniform(1.0, 101.0);
            p.a = rng.uniform(0.1, 3.1);
            p.b = rng.uniform(0.0, 1.0);
            p.D = rng.uniform(1.0, 501.0);
            return MaterialModel{p};
        }
        case Family::VanDerWaals: {
            if (rule != SubsetRule::Default)
                throw UnknownSubsetRule("van_der_waals takes no subset rule");
            VanDerWaalsParams p;
            p.mu = rng.uniform(1.0, 101.0);
            p.lambda_m = rng.uniform(4.0, 6.0);
            p.a = rng.uniform(0.0, 0.5);
            p.beta = rng.uniform(0.0, 1.0);
            p.D = rng.uniform(1.0, 501.0);
            return MaterialModel{p};
        }
    }
    throw Error("bad family enum");
}

Eigen::Matrix2d random_deformation_gradient(Rng& rng) {
    for (int tries = 0; tries < 10000; ++tries) {
        Eigen::Matrix2d F;
        F << 1.0 + rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
            rng.uniform(-0.5, 0.5), 1.0 + rng.uniform(-0.5, 0.5);
        if (F.determinant() > 0.2) return F;
    }
    throw Error("random_deformation_gradient: rejection sampling stalled");
}

namespace {

MaterialModel basis_material(int basis_index) {
    PolynomialParams p;
    if (basis_index < 27)
        p.c[static_cast<std::size_t>(basis_index)] = 1.0;
    else
        p.d[static_cast<std::size_t>(basis_index - 27)] = 1.0;
    return MaterialModel{p};
}

}  // namespace

double polynomial_basis_std(int basis_index, std::uint64_t mc_seed, int samples) {
    const MaterialModel bm = basis_material(basis_index);
    Rng rng(mc_seed);
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(samples) * 4);
    for (int s = 0; s < samples; ++s) {
        const Eigen::Matrix2d F = random_deformation_gradient(rng);
        const Eigen::Matrix2d P = first_pk_stress(bm, F);
        vals.push_back(P(0, 0));
        vals.push_back(P(0, 1));
        vals.push_back(P(1, 0));
        vals.push_back(P(1, 1));
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size());
    return std::sqrt(var);
}

double tangent_stiffness_estimate(const MaterialModel& m) {
    Eigen::Matrix2d Fp, Fm;
    Fp << 1.1, 0, 0, 1.0;
    Fm << 0.9, 0, 0, 1.0;
    const double p11p = first_pk_stress(m, Fp)(0, 0);
    const double p11m = first_pk_stress(m, Fm)(0, 0);
    return (p11p - p11m) / 0.2;
}

MaterialModel normalize_polynomial_coefficients(const MaterialModel& m,
                                                std::uint64_t mc_seed) {
    const auto* poly = std::get_if<PolynomialParams>(&m.params);
    if (!poly) throw Error("normalize_polynomial_coefficients: not a polynomial model");

    PolynomialParams out = *poly;
    for (int b = 0; b < 31; ++b) {
        double& coeff = b < 27 ? out.c[static_cast<std::size_t>(b)]
                               : out.d[static_cast<std::size_t>(b - 27)];
        if (coeff == 0.0) continue;
        const double sd = polynomial_basis_std(b, mc_seed);
        if (sd < 1e-12) {
            coeff = 0.0;  // DegenerateBasis policy: zero instead of divide
            continue;
        }
        coeff /= sd;
    }

    MaterialModel step1{out};
    const double k = tangent_stiffness_estimate(step1);
    if (std::fabs(k) < 1e-12)
        throw DegenerateBasis("tangent stiffness of step-1 model is degenerate");
    for (auto& c : out.c) c /= k;
    for (auto& d : out.d) d /= k;
    return MaterialModel{out};
}

}  // namespace icm
