#include "icm/enn.hpp"

#include <cmath>

#include "icm/assembly.hpp"
#include "icm/errors.hpp"
#include "icm/parallel.hpp"
#include "icm/rng.hpp"
#include "icm/tape.hpp"

namespace icm {

namespace {

// Packed parameter offsets: W0 (h x 2), b0 (h), then (layers-1) x [W (h x h),
// b (h)], then w_out (h), b_out (1).
struct EnnOffsets {
    int w0, b0;
    std::vector<int> w, b;
    int w_out, b_out;
    int total;
};

EnnOffsets offsets(const EnnConfig& c) {
    EnnOffsets o;
    int at = 0;
    o.w0 = at;
    at += c.hidden * 2;
    o.b0 = at;
    at += c.hidden;
    for (int l = 1; l < c.hidden_layers; ++l) {
        o.w.push_back(at);
        at += c.hidden * c.hidden;
        o.b.push_back(at);
        at += c.hidden;
    }
    o.w_out = at;
    at += c.hidden;
    o.b_out = at;
    at += 1;
    o.total = at;
    return o;
}

}  // namespace

std::size_t enn_parameter_count(const EnnConfig& cfg) {
    return static_cast<std::size_t>(offsets(cfg).total);
}

EnnModel enn_init(const EnnConfig& cfg) {
    EnnModel m;
    m.cfg = cfg;
    const EnnOffsets o = offsets(cfg);
    m.params.assign(static_cast<std::size_t>(o.total), 0.0);
    Rng rng(cfg.init_seed);
    auto fill = [&](int base, int count, int fan_in) {
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (int i = 0; i < count; ++i)
            m.params[static_cast<std::size_t>(base + i)] = rng.uniform(-s, s);
    };
    fill(o.w0, cfg.hidden * 2, 2);
    for (std::size_t l = 0; l < o.w.size(); ++l)
        fill(o.w[l], cfg.hidden * cfg.hidden, cfg.hidden);
    fill(o.w_out, cfg.hidden, cfg.hidden);
    return m;
}

void enn_forward(const EnnModel& m, double i1, double i3, double& psi,
                 Eigen::Vector2d& grad) {
    const EnnConfig& c = m.cfg;
    const EnnOffsets o = offsets(c);
    const double x0 = (i1 - m.in_mean[0]) / m.in_std[0];
    const double x1 = (i3 - m.in_mean[1]) / m.in_std[1];

    // Value plus two tangent channels (d/dx0, d/dx1).
    std::vector<double> a(static_cast<std::size_t>(c.hidden));
    std::vector<double> t0(static_cast<std::size_t>(c.hidden));
    std::vector<double> t1(static_cast<std::size_t>(c.hidden));
    for (int i = 0; i < c.hidden; ++i) {
        const double w_i0 = m.params[static_cast<std::size_t>(o.w0 + 2 * i)];
        const double w_i1 = m.params[static_cast<std::size_t>(o.w0 + 2 * i + 1)];
        const double z = w_i0 * x0 + w_i1 * x1 +
                         m.params[static_cast<std::size_t>(o.b0 + i)];
        const double h = std::tanh(z);
        const double hp = 1.0 - h * h;
        a[static_cast<std::size_t>(i)] = h;
        t0[static_cast<std::size_t>(i)] = hp * w_i0;
        t1[static_cast<std::size_t>(i)] = hp * w_i1;
    }
    std::vector<double> na(a.size()), nt0(a.size()), nt1(a.size());
    for (std::size_t l = 0; l < o.w.size(); ++l) {
        for (int i = 0; i < c.hidden; ++i) {
            double z = m.params[static_cast<std::size_t>(o.b[l] + i)];
            double z0 = 0.0, z1 = 0.0;
            const double* w = m.params.data() + o.w[l] + i * c.hidden;
            for (int j = 0; j < c.hidden; ++j) {
                z += w[j] * a[static_cast<std::size_t>(j)];
                z0 += w[j] * t0[static_cast<std::size_t>(j)];
                z1 += w[j] * t1[static_cast<std::size_t>(j)];
            }
            const double h = std::tanh(z);
            const double hp = 1.0 - h * h;
            na[static_cast<std::size_t>(i)] = h;
            nt0[static_cast<std::size_t>(i)] = hp * z0;
            nt1[static_cast<std::size_t>(i)] = hp * z1;
        }
        a.swap(na);
        t0.swap(nt0);
        t1.swap(nt1);
    }
    double out = m.params[static_cast<std::size_t>(o.b_out)];
    double g0 = 0.0, g1 = 0.0;
    for (int j = 0; j < c.hidden; ++j) {
        const double w = m.params[static_cast<std::size_t>(o.w_out + j)];
        out += w * a[static_cast<std::size_t>(j)];
        g0 += w * t0[static_cast<std::size_t>(j)];
        g1 += w * t1[static_cast<std::size_t>(j)];
    }
    if (!std::isfinite(out)) throw NonFiniteActivation("enn forward");
    psi = out;
    grad = {g0 / m.in_std[0], g1 / m.in_std[1]};
}

double huber(double x, double y) {
    const double d = std::fabs(x - y);
    return d < 1.0 ? 0.5 * d * d : d - 0.5;
}

void EnnGradientProvider::eval(std::span<const Invariants2D> inv,
                               std::span<Eigen::Vector2d> out) const {
    par::for_index(static_cast<std::int64_t>(inv.size()), [&](std::int64_t i) {
        double psi;
        enn_forward(model_, inv[static_cast<std::size_t>(i)].i1,
                    inv[static_cast<std::size_t>(i)].i3, psi,
                    out[static_cast<std::size_t>(i)]);
    });
}

// ---------------------------------------------------------------------------
// training

namespace {

// Static per-field assembly data reused every step.
struct FieldPlan {
    std::vector<Invariants2D> states;   // per element
    std::vector<std::array<double, 2>> inputs;  // normalized
    // Per needed node: adjacency as (element, A) pairs.
    struct NodeForces {
        int node;
        std::vector<std::pair<int, Eigen::Matrix2d>> terms;
    };
    std::vector<NodeForces> interior;
    struct BcPlan {
        std::vector<int> node_indices;  // into `boundary` below
        double truth_x, truth_y;
        double n_nodes;
    };
    std::vector<NodeForces> boundary;
    std::vector<BcPlan> bcs;
};

struct TapeEval {
    Tape tape;
    std::vector<int> param_nodes;
    int loss = -1;
};

int huber_node(Tape& tp, int x, double y) {
    const double d = tp.val(x) - y;
    if (std::fabs(d) < 1.0) return tp.mul_const(tp.square(tp.add_const(x, -y)), 0.5);
    if (d >= 0.0) return tp.add_const(x, -y - 0.5);
    return tp.add_const(tp.neg(tp.add_const(x, -y)), -0.5);
}

// Energy gradient of one element state on the tape: tangent channels pushed
// through the layers so the adjoint sweep reaches every weight.
std::pair<int, int> tape_gradient(Tape& tp, const std::vector<int>& pn,
                                  const EnnConfig& c, const EnnOffsets& o,
                                  const std::array<double, 2>& x,
                                  const Eigen::Vector2d& in_std) {
    std::vector<int> a(static_cast<std::size_t>(c.hidden));
    std::vector<int> t0(a.size()), t1(a.size());
    for (int i = 0; i < c.hidden; ++i) {
        const int w0 = pn[static_cast<std::size_t>(o.w0 + 2 * i)];
        const int w1 = pn[static_cast<std::size_t>(o.w0 + 2 * i + 1)];
        int z = tp.add(tp.add(tp.mul_const(w0, x[0]), tp.mul_const(w1, x[1])),
                       pn[static_cast<std::size_t>(o.b0 + i)]);
        const int h = tp.tanh_node(z);
        const int hp = tp.add_const(tp.neg(tp.square(h)), 1.0);
        a[static_cast<std::size_t>(i)] = h;
        t0[static_cast<std::size_t>(i)] = tp.mul(hp, w0);
        t1[static_cast<std::size_t>(i)] = tp.mul(hp, w1);
    }
    for (std::size_t l = 0; l < o.w.size(); ++l) {
        std::vector<int> na(a.size()), nt0(a.size()), nt1(a.size());
        for (int i = 0; i < c.hidden; ++i) {
            int z = pn[static_cast<std::size_t>(o.b[l] + i)];
            int z0 = -1, z1 = -1;
            for (int j = 0; j < c.hidden; ++j) {
                const int w = pn[static_cast<std::size_t>(o.w[l] + i * c.hidden + j)];
                z = tp.add(z, tp.mul(w, a[static_cast<std::size_t>(j)]));
                const int c0 = tp.mul(w, t0[static_cast<std::size_t>(j)]);
                const int c1 = tp.mul(w, t1[static_cast<std::size_t>(j)]);
                z0 = z0 < 0 ? c0 : tp.add(z0, c0);
                z1 = z1 < 0 ? c1 : tp.add(z1, c1);
            }
            const int h = tp.tanh_node(z);
            const int hp = tp.add_const(tp.neg(tp.square(h)), 1.0);
            na[static_cast<std::size_t>(i)] = h;
            nt0[static_cast<std::size_t>(i)] = tp.mul(hp, z0);
            nt1[static_cast<std::size_t>(i)] = tp.mul(hp, z1);
        }
        a.swap(na);
        t0.swap(nt0);
        t1.swap(nt1);
    }
    int g0 = -1, g1 = -1;
    for (int j = 0; j < c.hidden; ++j) {
        const int w = pn[static_cast<std::size_t>(o.w_out + j)];
        const int c0 = tp.mul(w, t0[static_cast<std::size_t>(j)]);
        const int c1 = tp.mul(w, t1[static_cast<std::size_t>(j)]);
        g0 = g0 < 0 ? c0 : tp.add(g0, c0);
        g1 = g1 < 0 ? c1 : tp.add(g1, c1);
    }
    return {tp.mul_const(g0, 1.0 / in_std[0]), tp.mul_const(g1, 1.0 / in_std[1])};
}

FieldPlan build_plan(const Mesh& mesh, const StrainField& field, const EnnModel& model) {
    FieldPlan plan;
    const FieldKinematics kin = compute_field_kinematics(mesh, field);
    plan.states = kin.inv;
    for (const auto& s : plan.states)
        plan.inputs.push_back({(s.i1 - model.in_mean[0]) / model.in_std[0],
                               (s.i3 - model.in_mean[1]) / model.in_std[1]});

    auto terms_for = [&](int n) {
        FieldPlan::NodeForces nf;
        nf.node = n;
        for (int e : mesh.node_elements[static_cast<std::size_t>(n)]) {
            const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
            int v = 0;
            while (t[static_cast<std::size_t>(v)] != n) ++v;
            nf.terms.emplace_back(
                e, coefficient_matrix(kin.elems[static_cast<std::size_t>(e)], v));
        }
        return nf;
    };

    for (int n : mesh.interior_nodes) plan.interior.push_back(terms_for(n));
    std::map<int, int> boundary_index;
    for (const auto& bc : field.bcs) {
        FieldPlan::BcPlan bp;
        const auto& set = mesh.boundary_set(bc.set);
        for (int n : set) {
            auto it = boundary_index.find(n);
            if (it == boundary_index.end()) {
                it = boundary_index.emplace(n, static_cast<int>(plan.boundary.size()))
                         .first;
                plan.boundary.push_back(terms_for(n));
            }
            bp.node_indices.push_back(it->second);
        }
        bp.truth_x = bc.direction.x() * bc.force;
        bp.truth_y = bc.direction.y() * bc.force;
        bp.n_nodes = static_cast<double>(set.size());
        plan.bcs.push_back(std::move(bp));
    }
    return plan;
}

int tape_loss(Tape& tp, const std::vector<int>& pn, const EnnModel& model,
              std::span<const FieldPlan> plans) {
    const EnnConfig& c = model.cfg;
    const EnnOffsets o = offsets(c);
    const double inv_sf = 1.0 / model.force_scale;

    int l_in = -1, l_b = -1;
    std::size_t n_free = 0, n_bc = 0;
    for (const auto& plan : plans) {
        std::vector<std::pair<int, int>> g(plan.states.size());
        for (std::size_t e = 0; e < plan.states.size(); ++e)
            g[e] = tape_gradient(tp, pn, c, o, plan.inputs[e], model.in_std);

        auto force_nodes = [&](const FieldPlan::NodeForces& nf) {
            int fx = -1, fy = -1;
            for (const auto& [e, A] : nf.terms) {
                const auto [g1, g3] = g[static_cast<std::size_t>(e)];
                const int cx = tp.add(tp.mul_const(g1, A(0, 0)), tp.mul_const(g3, A(0, 1)));
                const int cy = tp.add(tp.mul_const(g1, A(1, 0)), tp.mul_const(g3, A(1, 1)));
                fx = fx < 0 ? cx : tp.add(fx, cx);
                fy = fy < 0 ? cy : tp.add(fy, cy);
            }
            return std::make_pair(fx, fy);
        };

        for (const auto& nf : plan.interior) {
            const auto [fx, fy] = force_nodes(nf);
            const int hx = huber_node(tp, tp.mul_const(fx, inv_sf), 0.0);
            const int hy = huber_node(tp, tp.mul_const(fy, inv_sf), 0.0);
            const int h = tp.add(hx, hy);
            l_in = l_in < 0 ? h : tp.add(l_in, h);
            ++n_free;
        }

        std::vector<std::pair<int, int>> bf(plan.boundary.size());
        for (std::size_t i = 0; i < plan.boundary.size(); ++i)
            bf[i] = force_nodes(plan.boundary[i]);
        for (const auto& bp : plan.bcs) {
            int rx = -1, ry = -1;
            for (int idx : bp.node_indices) {
                rx = rx < 0 ? bf[static_cast<std::size_t>(idx)].first
                            : tp.add(rx, bf[static_cast<std::size_t>(idx)].first);
                ry = ry < 0 ? bf[static_cast<std::size_t>(idx)].second
                            : tp.add(ry, bf[static_cast<std::size_t>(idx)].second);
            }
            const double scale = inv_sf / bp.n_nodes;
            const int hx = huber_node(tp, tp.mul_const(rx, scale), bp.truth_x * scale);
            const int hy = huber_node(tp, tp.mul_const(ry, scale), bp.truth_y * scale);
            const int h = tp.add(hx, hy);
            l_b = l_b < 0 ? h : tp.add(l_b, h);
            ++n_bc;
        }
    }
    if (l_in < 0 || n_free == 0) throw Error("enn loss needs interior nodes");
    int loss = tp.mul_const(l_in, 1.0 / static_cast<double>(n_free));
    if (l_b >= 0 && n_bc > 0)
        loss = tp.add(loss, tp.mul_const(
                               l_b, model.cfg.boundary_weight /
                                        static_cast<double>(n_bc)));
    return loss;
}

}  // namespace

double enn_loss(const EnnModel& model, const Mesh& mesh,
                std::span<const StrainField> fields) {
    std::vector<FieldPlan> plans;
    for (const auto& f : fields) plans.push_back(build_plan(mesh, f, model));
    Tape tp;
    std::vector<int> pn(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i)
        pn[i] = tp.constant(model.params[i]);
    return tp.val(tape_loss(tp, pn, model, plans));
}

EnnTrainResult enn_train(const Mesh& mesh, std::span<const StrainField> fields,
                         const EnnConfig& cfg, int steps, std::uint64_t seed) {
    if (fields.empty()) throw Error("enn training needs at least one field");
    EnnConfig cfg_seeded = cfg;
    cfg_seeded.init_seed = seed;
    EnnTrainResult result;
    result.model = enn_init(cfg_seeded);
    EnnModel& model = result.model;

    // Input normalization over all element states of the training fields.
    {
        std::vector<Invariants2D> all;
        for (const auto& f : fields) {
            const FieldKinematics kin = compute_field_kinematics(mesh, f);
            all.insert(all.end(), kin.inv.begin(), kin.inv.end());
        }
        Eigen::Vector2d mean(0, 0), var(0, 0);
        for (const auto& s : all) mean += Eigen::Vector2d(s.i1, s.i3);
        mean /= static_cast<double>(all.size());
        for (const auto& s : all) {
            const Eigen::Vector2d d = Eigen::Vector2d(s.i1, s.i3) - mean;
            var += d.cwiseProduct(d);
        }
        var /= static_cast<double>(all.size());
        model.in_mean = mean;
        model.in_std = var.cwiseSqrt().cwiseMax(1e-8);
    }

    // Force scale from the measured external forces.
    {
        double acc = 0.0;
        int count = 0;
        for (const auto& f : fields)
            for (const auto& bc : f.bcs) {
                acc += std::fabs(bc.force);
                ++count;
            }
        if (count == 0 || acc < 1e-300)
            throw ZeroForceScale("no usable boundary forces for the force scale");
        model.force_scale = acc / count;
    }

    std::vector<FieldPlan> plans;
    for (const auto& f : fields) plans.push_back(build_plan(mesh, f, model));

    // Adam with StepLR decay.
    const std::size_t P = model.params.size();
    std::vector<double> m1(P, 0.0), m2(P, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Tape tp;
    std::vector<double> adj;
    for (int step = 1; step <= steps; ++step) {
        tp.clear();
        std::vector<int> pn(P);
        for (std::size_t i = 0; i < P; ++i) pn[i] = tp.constant(model.params[i]);
        const int loss = tape_loss(tp, pn, model, plans);
        tp.backward(loss, adj);

        const double lr = cfg.lr0 * std::pow(cfg.lr_decay, (step - 1) / cfg.lr_step);
        const double c1 = 1.0 - std::pow(b1, step);
        const double c2 = 1.0 - std::pow(b2, step);
        for (std::size_t i = 0; i < P; ++i) {
            const double g = adj[static_cast<std::size_t>(pn[i])];
            m1[i] = b1 * m1[i] + (1 - b1) * g;
            m2[i] = b2 * m2[i] + (1 - b2) * g * g;
            model.params[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps);
        }
        result.curve.push_back({step, lr, tp.val(loss)});
    }
    return result;
}

}  // namespace icm
