#include "tdnns/quadrature.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace tdnns;

namespace {

// exact monomial integral over the reference triangle: a! b! / (a+b+2)!
double exact_triangle_monomial(int a, int b)
{
    double num = 1.0;
    for (int i = 2; i <= a; ++i)
        num *= i;
    for (int i = 2; i <= b; ++i)
        num *= i;
    double den = 1.0;
    for (int i = 2; i <= a + b + 2; ++i)
        den *= i;
    return num / den;
}

} // namespace

TEST_CASE("gauss rules integrate polynomials exactly")
{
    for (int n = 1; n <= 10; ++n) {
        const GaussRule g = gauss_legendre(n);
        for (int p = 0; p <= 2 * n - 1; ++p) {
            double s = 0.0;
            for (int i = 0; i < n; ++i)
                s += g.weights[i] * std::pow(g.points[i], p);
            const double exact = (p % 2 == 0) ? 2.0 / (p + 1) : 0.0;
            REQUIRE(std::abs(s - exact) < 1e-13);
        }
    }
}

TEST_CASE("gauss points are symmetric")
{
    for (int n = 1; n <= 8; ++n) {
        const GaussRule g = gauss_legendre(n);
        for (int i = 0; i < n; ++i) {
            REQUIRE(g.points[i] == Catch::Approx(-g.points[n - 1 - i]).margin(1e-14));
            REQUIRE(g.weights[i] == Catch::Approx(g.weights[n - 1 - i]).margin(1e-14));
        }
    }
}

TEST_CASE("triangle rules match closed-form monomial integrals")
{
    for (int degree = 0; degree <= 12; ++degree) {
        const TriangleRule rule = triangle_rule(degree);
        double wsum = 0.0;
        for (double w : rule.weights) {
            REQUIRE(w > 0.0);
            wsum += w;
        }
        REQUIRE(wsum == Catch::Approx(0.5).epsilon(1e-14));
        for (int a = 0; a + 0 <= degree; ++a) {
            for (int b = 0; a + b <= degree; ++b) {
                double s = 0.0;
                for (std::size_t q = 0; q < rule.points.size(); ++q)
                    s += rule.weights[q] * std::pow(rule.points[q].x(), a) *
                         std::pow(rule.points[q].y(), b);
                REQUIRE(s == Catch::Approx(exact_triangle_monomial(a, b)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("triangle rule points are strictly interior")
{
    const TriangleRule rule = triangle_rule(8);
    for (const auto& p : rule.points) {
        REQUIRE(p.x() > 0.0);
        REQUIRE(p.y() > 0.0);
        REQUIRE(p.x() + p.y() < 1.0);
    }
}

TEST_CASE("legendre recurrence matches explicit low orders")
{
    for (double s : {-0.9, -0.3, 0.0, 0.4, 1.0}) {
        REQUIRE(legendre(0, s) == Catch::Approx(1.0));
        REQUIRE(legendre(1, s) == Catch::Approx(s));
        REQUIRE(legendre(2, s) == Catch::Approx(0.5 * (3 * s * s - 1)));
        REQUIRE(legendre(3, s) == Catch::Approx(0.5 * (5 * s * s * s - 3 * s)));
    }
}
