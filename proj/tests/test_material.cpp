#include "tdnns/material.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

using namespace tdnns;

namespace {

constexpr double eps0 = vacuum_permittivity;

Mat6 pzt5_stiffness()
{
    return detail::transversely_isotropic_66(120e9, 111e9, 75.2e9, 75.1e9, 21.1e9, 22.6e9);
}

Mat36 pzt5_coupling()
{
    return detail::coupling_36(-5.35, 15.8, 12.3);
}

Mat3 pzt5_permittivity()
{
    Mat3 eps = Mat3::Zero();
    eps.diagonal() << 919 * eps0, 919 * eps0, 827 * eps0;
    return eps;
}

MaterialForms pzt5()
{
    return from_e_form(pzt5_stiffness(), pzt5_coupling(), pzt5_permittivity());
}

MaterialForms sonox_p502()
{
    const Mat6 S = detail::transversely_isotropic_66(18.5e-12, 20.7e-12, -6.29e-12, -6.23e-12,
                                                     33.2e-12, 52.3e-12);
    const Mat36 d = detail::coupling_36(-1.85e-10, 4.40e-10, 5.60e-10);
    Mat3 eps = Mat3::Zero();
    eps.diagonal() << 1950 * eps0, 1950 * eps0, 1850 * eps0;
    return from_d_form(S, d, eps);
}

// dense-linear-algebra oracle, deliberately independent of Eigen: plain
// Gauss-Jordan inversion and row-times-column multiplication
template <int N>
std::array<std::array<double, N>, N> gauss_jordan_inverse(std::array<std::array<double, N>, N> a)
{
    std::array<std::array<double, N>, N> inv{};
    for (int i = 0; i < N; ++i)
        inv[i][i] = 1.0;
    for (int col = 0; col < N; ++col) {
        int piv = col;
        for (int r = col + 1; r < N; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col]))
                piv = r;
        std::swap(a[piv], a[col]);
        std::swap(inv[piv], inv[col]);
        const double diag = a[col][col];
        REQUIRE(std::abs(diag) > 0.0);
        for (int c = 0; c < N; ++c) {
            a[col][c] /= diag;
            inv[col][c] /= diag;
        }
        for (int r = 0; r < N; ++r) {
            if (r == col)
                continue;
            const double f = a[r][col];
            for (int c = 0; c < N; ++c) {
                a[r][c] -= f * a[col][c];
                inv[r][c] -= f * inv[col][c];
            }
        }
    }
    return inv;
}

std::string write_temp_card(const std::string& body)
{
    static int counter = 0;
    const std::string path = "card_fixture_" + std::to_string(counter++) + ".tmp";
    std::ofstream out(path);
    out << body;
    return path;
}

} // namespace

TEST_CASE("PZT-5 card yields a consistent MaterialForms")
{
    const MaterialForms m = pzt5();
    REQUIRE(consistency_residual(m) < 1e-12);
    for (const Eigen::MatrixXd mat :
         {Eigen::MatrixXd(m.C_E), Eigen::MatrixXd(m.S_E), Eigen::MatrixXd(m.S_D)}) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat);
        REQUIRE(es.eigenvalues().minCoeff() > 0.0);
    }
    Eigen::SelfAdjointEigenSolver<Mat3> ee(m.eps_eps), es2(m.eps_sigma);
    REQUIRE(ee.eigenvalues().minCoeff() > 0.0);
    REQUIRE(es2.eigenvalues().minCoeff() > 0.0);
    // S_E - S_D positive semidefinite
    Eigen::SelfAdjointEigenSolver<Mat6> diff(m.S_E - m.S_D);
    REQUIRE(diff.eigenvalues().minCoeff() > -1e-12 * m.S_E.norm());
}

TEST_CASE("PZT-5 d tensor against an independent dense oracle")
{
    // oracle: invert C with Gauss-Jordan, multiply e * S row by row
    std::array<std::array<double, 6>, 6> C{};
    const Mat6 Ce = pzt5_stiffness();
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            C[i][j] = Ce(i, j);
    const auto S = gauss_jordan_inverse<6>(C);
    const Mat36 e = pzt5_coupling();
    double d33_oracle = 0.0, d31_oracle = 0.0, d15_oracle = 0.0;
    for (int k = 0; k < 6; ++k) {
        d33_oracle += e(2, k) * S[k][2];
        d31_oracle += e(2, k) * S[k][0];
        d15_oracle += e(0, k) * S[k][4];
    }
    // frozen oracle outputs
    REQUIRE(d33_oracle == Catch::Approx(3.742815663154003e-10).epsilon(1e-12));
    REQUIRE(d31_oracle == Catch::Approx(-1.7140648376171394e-10).epsilon(1e-12));
    REQUIRE(d15_oracle == Catch::Approx(5.829383886255925e-10).epsilon(1e-12));

    const MaterialForms m = pzt5();
    REQUIRE(m.d(2, 2) == Catch::Approx(d33_oracle).epsilon(1e-13));
    REQUIRE(m.d(2, 0) == Catch::Approx(d31_oracle).epsilon(1e-13));
    REQUIRE(m.d(0, 4) == Catch::Approx(d15_oracle).epsilon(1e-13));
}

TEST_CASE("zero coupling fully decouples the forms")
{
    const MaterialForms m = from_e_form(pzt5_stiffness(), Mat36::Zero(), pzt5_permittivity());
    REQUIRE(m.d.norm() == 0.0);
    REQUIRE(m.g.norm() == 0.0);
    REQUIRE(rel_frobenius(m.eps_sigma, m.eps_eps) < 1e-15);
    REQUIRE(rel_frobenius(m.S_D, m.S_E) < 1e-15);
}

TEST_CASE("SONOX P502 d-form card is valid and round trips")
{
    const MaterialForms m = sonox_p502();
    REQUIRE(consistency_residual(m) < 1e-12);
    // re-import from the exported e-form and compare every tensor
    const MaterialForms back = from_e_form(m.C_E, m.e, m.eps_eps);
    REQUIRE(rel_frobenius(back.S_E, m.S_E) < 1e-12);
    REQUIRE(rel_frobenius(back.d, m.d) < 1e-12);
    REQUIRE(rel_frobenius(back.eps_sigma, m.eps_sigma) < 1e-12);
    REQUIRE(rel_frobenius(back.S_D, m.S_D) < 1e-12);
}

TEST_CASE("d = 0 collapses d-form construction")
{
    Mat3 eps = Mat3::Zero();
    eps.diagonal() << 100 * eps0, 100 * eps0, 50 * eps0;
    const Mat6 S = detail::transversely_isotropic_66(18.5e-12, 20.7e-12, -6.29e-12, -6.23e-12,
                                                     33.2e-12, 52.3e-12);
    const MaterialForms m = from_d_form(S, Mat36::Zero(), eps);
    REQUIRE(rel_frobenius(m.eps_eps, m.eps_sigma) < 1e-15);
    REQUIRE(rel_frobenius((m.C_E * m.S_E).eval(), Mat6::Identity().eval()) < 1e-13);
}

TEST_CASE("PZT-5 exported to d-form and re-imported matches to 1e-12")
{
    const MaterialForms m = pzt5();
    const MaterialForms back = from_d_form(m.S_E, m.d, m.eps_sigma);
    REQUIRE(rel_frobenius(back.C_E, m.C_E) < 1e-12);
    REQUIRE(rel_frobenius(back.e, m.e) < 1e-12);
    REQUIRE(rel_frobenius(back.eps_eps, m.eps_eps) < 1e-12);
    REQUIRE(rel_frobenius(back.g, m.g) < 1e-12);
    REQUIRE(rel_frobenius(back.S_D, m.S_D) < 1e-12);
}

TEST_CASE("isotropic materials")
{
    SECTION("epoxy is decoupled")
    {
        const MaterialForms m = isotropic(2.5e9, 0.42, 4.25);
        REQUIRE(m.e.norm() == 0.0);
        REQUIRE(m.d.norm() == 0.0);
        REQUIRE(consistency_residual(m) < 1e-13);
        REQUIRE(m.eps_eps(0, 0) == Catch::Approx(4.25 * eps0));
    }
    SECTION("zero Poisson ratio gives diagonal stiffness with C11 = Y")
    {
        const MaterialForms m = isotropic(3.0e9, 0.0, 1.0);
        REQUIRE(m.C_E(0, 0) == Catch::Approx(3.0e9));
        REQUIRE(std::abs(m.C_E(0, 1)) < 1e-6);
        REQUIRE(std::abs(m.C_E(0, 2)) < 1e-6);
    }
    SECTION("copper compliance matches closed-form isotropic entries")
    {
        const double Y = 110e9, nu = 0.34;
        const MaterialForms m = isotropic(Y, nu, 2000.0);
        REQUIRE(m.S_E(0, 0) == Catch::Approx(1.0 / Y).epsilon(1e-13));
        REQUIRE(m.S_E(0, 1) == Catch::Approx(-nu / Y).epsilon(1e-13));
        REQUIRE(m.S_E(3, 3) == Catch::Approx(2.0 * (1.0 + nu) / Y).epsilon(1e-13));
    }
    SECTION("parameter validation")
    {
        REQUIRE_THROWS_AS(isotropic(-1.0, 0.3, 1.0), material_error);
        REQUIRE_THROWS_AS(isotropic(1e9, 0.5, 1.0), material_error);
        REQUIRE_THROWS_AS(isotropic(1e9, 0.6, 1.0), material_error);
        REQUIRE_THROWS_AS(isotropic(1e9, 0.3, -2.0), material_error);
    }
}

TEST_CASE("non-SPD inputs are rejected naming the offending tensor")
{
    Mat6 C = pzt5_stiffness();
    C(0, 0) = -1.0;
    try {
        from_e_form(C, pzt5_coupling(), pzt5_permittivity());
        FAIL("expected material_error");
    } catch (const material_error& err) {
        REQUIRE(std::string(err.what()).find("C_E") != std::string::npos);
    }
    Mat3 eps = Mat3::Zero();
    eps.diagonal() << -1.0, 1.0, 1.0;
    try {
        from_e_form(pzt5_stiffness(), pzt5_coupling(), eps);
        FAIL("expected material_error");
    } catch (const material_error& err) {
        REQUIRE(std::string(err.what()).find("eps_eps") != std::string::npos);
    }
}

TEST_CASE("plane-strain reduction")
{
    SECTION("decoupled isotropic material reduces to textbook plane-strain compliance")
    {
        const double Y = 2.5e9, nu = 0.42;
        const Material2D r = reduce_to_plane(isotropic(Y, nu, 4.25));
        const double a = (1.0 - nu * nu) / Y;
        const double b = -a * nu / (1.0 - nu);
        const double mu = Y / (2.0 * (1.0 + nu));
        REQUIRE(r.S_E2(0, 0) == Catch::Approx(a).epsilon(1e-12));
        REQUIRE(r.S_E2(0, 1) == Catch::Approx(b).epsilon(1e-12));
        REQUIRE(r.S_E2(1, 1) == Catch::Approx(a).epsilon(1e-12));
        REQUIRE(r.S_E2(2, 2) == Catch::Approx(1.0 / mu).epsilon(1e-12));
    }
    SECTION("zero coupling reduces to zero coupling")
    {
        const Material2D r = reduce_to_plane(isotropic(2.5e9, 0.42, 4.25));
        REQUIRE(r.d2.norm() == 0.0);
        REQUIRE(r.g2.norm() == 0.0);
    }
    SECTION("PZT-5 reduced tensors satisfy the reduced consistency relations")
    {
        const Material2D r = reduce_to_plane(pzt5());
        REQUIRE(consistency_residual(r) < 1e-12);
    }
    SECTION("reduction commutes with the card form used to build the material")
    {
        const MaterialForms via_e = pzt5();
        const MaterialForms via_d = from_d_form(via_e.S_E, via_e.d, via_e.eps_sigma);
        const Material2D r1 = reduce_to_plane(via_e);
        const Material2D r2 = reduce_to_plane(via_d);
        REQUIRE(rel_frobenius(r1.S_E2, r2.S_E2) < 1e-12);
        REQUIRE(rel_frobenius(r1.d2, r2.d2) < 1e-12);
        REQUIRE(rel_frobenius(r1.g2, r2.g2) < 1e-12);
        REQUIRE(rel_frobenius(r1.eps_sigma2, r2.eps_sigma2) < 1e-12);
        REQUIRE(rel_frobenius(r1.S_D2, r2.S_D2) < 1e-12);
    }
    SECTION("plane stress uses the compliance-based deletion")
    {
        const double Y = 2.5e9, nu = 0.42;
        const Material2D r =
            reduce_to_plane(isotropic(Y, nu, 4.25), PolingAxis::x3, PlaneReduction::stress);
        REQUIRE(r.S_E2(0, 0) == Catch::Approx(1.0 / Y).epsilon(1e-12));
        REQUIRE(r.S_E2(0, 1) == Catch::Approx(-nu / Y).epsilon(1e-12));
    }
    SECTION("SONOX reduced shear identities used by homogenization")
    {
        const Material2D r = reduce_to_plane(sonox_p502());
        REQUIRE(1.0 / r.S_E2(2, 2) == Catch::Approx(1.0 / 33.2e-12).epsilon(1e-12));
        REQUIRE(r.d2(0, 2) == Catch::Approx(5.60e-10).epsilon(1e-12));
        REQUIRE(r.eps_sigma2(0, 0) == Catch::Approx(1950 * eps0).epsilon(1e-12));
    }
}

TEST_CASE("material card files")
{
    SECTION("e-form card parses to the PZT-5 tensors")
    {
        const std::string path = write_temp_card("# PZT-5\n"
                                                 "form = e\n"
                                                 "C11 = 120e9\nC33 = 111e9\nC12 = 75.2e9\n"
                                                 "C13 = 75.1e9\nC44 = 21.1e9\nC66 = 22.6e9\n"
                                                 "e31 = -5.35\ne33 = 15.8\ne15 = 12.3\n"
                                                 "eps11_rel = 919\neps33_rel = 827\n");
        const MaterialForms m = load_material_card(path);
        REQUIRE(rel_frobenius(m.C_E, pzt5().C_E) < 1e-15);
        REQUIRE(rel_frobenius(m.d, pzt5().d) < 1e-15);
        std::remove(path.c_str());
    }
    SECTION("unknown keys are rejected")
    {
        std::istringstream in("form = isotropic\nY = 1e9\nnu = 0.3\neps_rel = 1\nbogus = 4\n");
        REQUIRE_THROWS_AS(parse_material_card(in), material_error);
    }
    SECTION("missing keys are rejected")
    {
        std::istringstream in("form = isotropic\nY = 1e9\nnu = 0.3\n");
        REQUIRE_THROWS_AS(parse_material_card(in), material_error);
    }
    SECTION("missing form is rejected")
    {
        std::istringstream in("Y = 1e9\nnu = 0.3\neps_rel = 1\n");
        REQUIRE_THROWS_AS(parse_material_card(in), material_error);
    }
    SECTION("bad numeric values are rejected with line numbers")
    {
        std::istringstream in("form = isotropic\nY = fast\nnu = 0.3\neps_rel = 1\n");
        try {
            parse_material_card(in, "fixture");
            FAIL("expected material_error");
        } catch (const material_error& err) {
            REQUIRE(std::string(err.what()).find("fixture:2") != std::string::npos);
        }
    }
}
