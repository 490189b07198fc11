#pragma once

#include "tdnns/common.hpp"

#include <cassert>
#include <cmath>
#include <map>
#include <vector>

namespace tdnns {

/// Gauss-Legendre rule on [-1, 1], exact for polynomials of degree 2n-1.
struct GaussRule {
    std::vector<double> points;
    std::vector<double> weights;
};

inline GaussRule gauss_legendre(int n)
{
    assert(n >= 1 && n <= 64);
    GaussRule rule;
    rule.points.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        // Chebyshev initial guess, then Newton on P_n.
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            if (n == 1)
                p1 = x;
            for (int j = 2; j <= n; ++j) {
                const double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            const double pn = (n == 1) ? x : p1;
            dp = n * (x * pn - p0) / (x * x - 1.0);
            const double dx = pn / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15)
                break;
        }
        rule.points[n - 1 - i] = x;
        rule.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return rule;
}

/// Quadrature on the reference triangle {(0,0),(1,0),(0,1)}; weights sum to 1/2.
struct TriangleRule {
    std::vector<Vec2> points;
    std::vector<double> weights;
    int degree = 0;
};

/// Conical-product (Duffy) rule, exact for total degree <= `degree`.
/// Tensorizes Gauss-Legendre in the collapsed coordinate; all weights positive
/// and every point strictly interior.
inline TriangleRule triangle_rule(int degree)
{
    assert(degree >= 0);
    const int nx = (degree + 2) / 2 + 1; // integrand picks up one extra power of (1-x)
    const int ny = (degree + 1) / 2 + 1;
    const GaussRule gx = gauss_legendre(nx);
    const GaussRule gy = gauss_legendre(ny);
    TriangleRule rule;
    rule.degree = degree;
    for (int i = 0; i < nx; ++i) {
        const double x = 0.5 * (gx.points[i] + 1.0);
        const double wx = 0.5 * gx.weights[i];
        for (int j = 0; j < ny; ++j) {
            const double eta = 0.5 * (gy.points[j] + 1.0);
            const double wy = 0.5 * gy.weights[j];
            rule.points.emplace_back(x, (1.0 - x) * eta);
            rule.weights.push_back(wx * wy * (1.0 - x));
        }
    }
    return rule;
}

inline const TriangleRule& cached_triangle_rule(int degree)
{
    static std::map<int, TriangleRule> cache;
    auto it = cache.find(degree);
    if (it == cache.end())
        it = cache.emplace(degree, triangle_rule(degree)).first;
    return it->second;
}

inline const GaussRule& cached_gauss_rule(int n)
{
    static std::map<int, GaussRule> cache;
    auto it = cache.find(n);
    if (it == cache.end())
        it = cache.emplace(n, gauss_legendre(n)).first;
    return it->second;
}

/// Legendre polynomial P_m on [-1, 1].
inline double legendre(int m, double s)
{
    if (m == 0)
        return 1.0;
    if (m == 1)
        return s;
    double p0 = 1.0, p1 = s;
    for (int j = 2; j <= m; ++j) {
        const double p2 = ((2 * j - 1) * s * p1 - (j - 1) * p0) / j;
        p0 = p1;
        p1 = p2;
    }
    return p1;
}

} // namespace tdnns
