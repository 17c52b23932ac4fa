#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace icm {

// Minimal scalar reverse-mode tape. Nodes carry a value and up to two
// parents with fixed local partials; backward() is one reverse sweep.
class Tape {
public:
    struct Node {
        double val;
        double w0, w1;
        int p0, p1;
    };

    int constant(double v) { return push(v, 0.0, 0.0, -1, -1); }

    int add(int a, int b) { return push(val(a) + val(b), 1.0, 1.0, a, b); }
    int sub(int a, int b) { return push(val(a) - val(b), 1.0, -1.0, a, b); }
    int mul(int a, int b) { return push(val(a) * val(b), val(b), val(a), a, b); }
    int div(int a, int b) {
        const double ib = 1.0 / val(b);
        return push(val(a) * ib, ib, -val(a) * ib * ib, a, b);
    }
    int add_const(int a, double c) { return push(val(a) + c, 1.0, 0.0, a, -1); }
    int mul_const(int a, double c) { return push(val(a) * c, c, 0.0, a, -1); }
    int neg(int a) { return mul_const(a, -1.0); }
    int tanh_node(int a) {
        const double t = std::tanh(val(a));
        return push(t, 1.0 - t * t, 0.0, a, -1);
    }
    int square(int a) { return push(val(a) * val(a), 2.0 * val(a), 0.0, a, -1); }

    double val(int i) const { return nodes_[static_cast<std::size_t>(i)].val; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

    // Adjoints of every node w.r.t. the root.
    void backward(int root, std::vector<double>& adjoint) const {
        adjoint.assign(nodes_.size(), 0.0);
        adjoint[static_cast<std::size_t>(root)] = 1.0;
        for (int i = root; i >= 0; --i) {
            const double a = adjoint[static_cast<std::size_t>(i)];
            if (a == 0.0) continue;
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.p0 >= 0) adjoint[static_cast<std::size_t>(n.p0)] += a * n.w0;
            if (n.p1 >= 0) adjoint[static_cast<std::size_t>(n.p1)] += a * n.w1;
        }
    }

private:
    int push(double v, double w0, double w1, int p0, int p1) {
        nodes_.push_back({v, w0, w1, p0, p1});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
};

}  // namespace icm
