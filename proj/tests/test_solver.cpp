#include "tdnns/solver.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

using namespace tdnns;

TEST_CASE("identity factors trivially")
{
    Eigen::SparseMatrix<double> A(2, 2);
    A.insert(0, 0) = 1.0;
    A.insert(1, 1) = 1.0;
    const Factorization f = factor(A);
    Eigen::VectorXd b(2);
    b << 3.0, -4.0;
    REQUIRE((f.solve(b) - b).norm() == 0.0);
}

TEST_CASE("1D Laplacian with manufactured solution")
{
    const int n = 100;
    Eigen::SparseMatrix<double> A(n, n);
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < n; ++i) {
        trip.emplace_back(i, i, 2.0);
        if (i > 0)
            trip.emplace_back(i, i - 1, -1.0);
        if (i < n - 1)
            trip.emplace_back(i, i + 1, -1.0);
    }
    A.setFromTriplets(trip.begin(), trip.end());
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd b = A * ones;
    const Factorization f = factor(A);
    REQUIRE((f.solve(b) - ones).norm() < 1e-12 * ones.norm());
}

TEST_CASE("exact singularity is rejected")
{
    Eigen::SparseMatrix<double> A(3, 3);
    A.insert(0, 0) = 1.0;
    A.insert(1, 1) = 1.0;
    A.insert(0, 2) = 1.0; // column 2 never gets a pivot, row 2 empty
    REQUIRE_THROWS_AS(factor(A), solver_error);
}

TEST_CASE("factor reuse matches independent factorizations")
{
    const int n = 50;
    Eigen::SparseMatrix<double> A(n, n);
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < n; ++i) {
        trip.emplace_back(i, i, 4.0 + 0.01 * i);
        if (i > 0)
            trip.emplace_back(i, i - 1, -1.3);
        if (i < n - 1)
            trip.emplace_back(i, i + 1, -1.3);
    }
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd b1 = Eigen::VectorXd::Random(n), b2 = Eigen::VectorXd::Random(n);
    const Factorization f = factor(A);
    const Eigen::VectorXd x1 = f.solve(b1), x2 = f.solve(b2);
    const Eigen::VectorXd y1 = factor(A).solve(b1), y2 = factor(A).solve(b2);
    REQUIRE((x1 - y1).norm() < 1e-12 * y1.norm());
    REQUIRE((x2 - y2).norm() < 1e-12 * y2.norm());
}

TEST_CASE("coordinate-format matrix dump")
{
    Eigen::SparseMatrix<double> A(3, 3);
    A.insert(0, 0) = 1.5;
    A.insert(2, 1) = -2.25;
    A.makeCompressed();
    const std::string path = "dump.tmp.txt";
    dump_matrix(A, path);
    std::ifstream in(path);
    int i, j;
    double v;
    int count = 0;
    double sum = 0.0;
    while (in >> i >> j >> v) {
        ++count;
        sum += v;
        REQUIRE(i >= 0);
        REQUIRE(j >= 0);
    }
    REQUIRE(count == 2);
    REQUIRE(sum == Catch::Approx(1.5 - 2.25));
    std::remove(path.c_str());
}
