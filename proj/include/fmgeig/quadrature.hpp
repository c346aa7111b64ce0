#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "fmgeig/errors.hpp"

namespace fmgeig {

/// Symmetric simplex quadrature in barycentric coordinates. Weights sum to 1
/// and are multiplied by the cell measure at the call site.
struct QuadratureRule {
    int dim = 2;
    int degree = 0;
    std::vector<std::array<double, 4>> points;
    std::vector<double> weights;

    std::size_t size() const noexcept { return weights.size(); }
};

/// 6-point rule exact for degree 4 on triangles.
inline const QuadratureRule& triangle_rule_degree4() {
    static const QuadratureRule rule = [] {
        QuadratureRule q;
        q.dim = 2;
        q.degree = 4;
        constexpr double a1 = 0.44594849091596488632, w1 = 0.22338158967801146570;
        constexpr double a2 = 0.09157621350977074346, w2 = 0.10995174365532186764;
        for (auto [a, w] : {std::pair{a1, w1}, std::pair{a2, w2}}) {
            double b = 1.0 - 2.0 * a;
            q.points.push_back({a, a, b, 0.0});
            q.points.push_back({a, b, a, 0.0});
            q.points.push_back({b, a, a, 0.0});
            q.weights.insert(q.weights.end(), 3, w);
        }
        return q;
    }();
    return rule;
}

/// 11-point rule exact for degree 4 on tetrahedra (one negative weight).
inline const QuadratureRule& tetrahedron_rule_degree4() {
    static const QuadratureRule rule = [] {
        QuadratureRule q;
        q.dim = 3;
        q.degree = 4;
        q.points.push_back({0.25, 0.25, 0.25, 0.25});
        q.weights.push_back(-74.0 / 5625.0 * 6.0);
        const double s = 1.0 / 14.0, t = 11.0 / 14.0;
        for (int i = 0; i < 4; ++i) {
            std::array<double, 4> p{s, s, s, s};
            p[i] = t;
            q.points.push_back(p);
            q.weights.push_back(343.0 / 45000.0 * 6.0);
        }
        const double r = std::sqrt(5.0 / 14.0);
        const double a = (1.0 + r) / 4.0, b = (1.0 - r) / 4.0;
        static constexpr int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
        for (const auto& pr : pairs) {
            std::array<double, 4> p{b, b, b, b};
            p[pr[0]] = a;
            p[pr[1]] = a;
            q.points.push_back(p);
            q.weights.push_back(56.0 / 2250.0 * 6.0);
        }
        return q;
    }();
    return rule;
}

/// Rule for integrands of polynomial degree `degree` on a `dim`-simplex.
inline const QuadratureRule& quadrature_rule(int dim, int degree) {
    if (degree > 4)
        throw AssemblyError("no quadrature rule exact for degree " + std::to_string(degree) +
                            " (maximum 4); sigma > 1 is not supported");
    if (dim == 2) return triangle_rule_degree4();
    if (dim == 3) return tetrahedron_rule_degree4();
    throw InvalidArgument("quadrature_rule: dim must be 2 or 3");
}

} // namespace fmgeig
