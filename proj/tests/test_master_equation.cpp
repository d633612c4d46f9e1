#include "catch_amalgamated.hpp"
#include "oracles.hpp"

#include "nmwtd/deterministic.hpp"
#include "nmwtd/master_equation.hpp"
#include "nmwtd/systems.hpp"

#include <Eigen/Eigenvalues>

#include <random>
#include <sstream>

using namespace nmwtd;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Matrix pure(const Vector& v) { return v * v.adjoint(); }

SystemModel breakdown_ladder() { return make_ladder({5.0, 1.0, 0.0, 0.0}, {5.0, 1.0, 4.0, 0.0}); }

} // namespace

TEST_CASE("closed-form eigenvalues agree with a general eigensolver") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int d : {1, 2, 3}) {
        for (int trial = 0; trial < 300; ++trial) {
            Matrix a(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) a(i, j) = cplx(g(rng), g(rng));
            a = 0.5 * (a + a.adjoint()).eval();
            if (trial % 3 == 0 && d == 3) a(2, 2) = a(1, 1), a(1, 2) = a(0, 2) = 0.0, a(2, 1) = a(2, 0) = 0.0;
            const auto ev = hermitian_eigenvalues(a);
            Eigen::SelfAdjointEigenSolver<Matrix> es(a);
            for (int i = 0; i < d; ++i) CHECK_THAT(ev[static_cast<std::size_t>(i)], WithinAbs(es.eigenvalues()(i), 1e-10));
        }
    }
    CHECK(hermitian_eigenvalues(Matrix::Identity(3, 3)) == std::vector<double>{1.0, 1.0, 1.0});
    CHECK_THROWS_AS(hermitian_eigenvalues(Matrix::Identity(4, 4)), std::invalid_argument);
}

TEST_CASE("zero rates leave the density matrix unchanged") {
    auto m = preset("lambda_fig3").model;
    for (auto& ch : m.channels) ch.rate = make_constant_rate(0.0);
    Vector psi(3);
    psi << 0.6, cplx(0.0, 0.48), 0.64;
    const Matrix rho0 = pure(psi);
    const auto sol = integrate_tcl(m, rho0, 0.0, 5.0, 1e-3);
    for (const auto& r : sol.rho) CHECK(max_abs_diff(r, rho0) == 0.0);
}

TEST_CASE("constant-rate two-level atom decays exponentially") {
    auto m = preset("tla_fig2").model;
    const double gamma = 0.8;
    m.channels[0].rate = make_constant_rate(gamma);
    const auto sol = integrate_tcl(m, pure(basis_vector(2, 0)), 0.0, 5.0, 1e-3);
    for (std::size_t i = 0; i < sol.size(); ++i) {
        CHECK_THAT(sol.rho[i](0, 0).real(), WithinAbs(std::exp(-gamma * sol.times[i]), 1e-8));
    }
}

TEST_CASE("TCL4 two-level atom: excited population is exp(-D)") {
    const auto m = preset("tla_fig2").model;
    const auto sol = integrate_tcl(m, pure(basis_vector(2, 0)), 0.0, 5.0, 1e-3);
    for (std::size_t i = 250; i < sol.size(); i += 250) {
        const double D = oracle::richardson_trapezoid(m.channels[0].rate, 0.0, sol.times[i]);
        CHECK_THAT(sol.rho[i](0, 0).real(), WithinAbs(std::exp(-D), 1e-7));
    }
}

TEST_CASE("integration preserves trace and Hermiticity") {
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        auto m = preset(name).model;
        Vector psi = Vector::Constant(m.dimension, cplx(1.0, 0.5));
        psi(0) = 2.0;
        psi /= psi.norm();
        const auto sol = integrate_tcl(m, pure(psi), 0.0, 5.0, 1e-3);
        for (std::size_t i = 0; i < sol.size(); ++i) {
            CHECK(sol.trace_error[i] <= 1e-8);
            CHECK(sol.hermiticity_error[i] <= 1e-10);
            CHECK(sol.min_eigenvalue[i] >= -1e-8);
        }
    }
}

TEST_CASE("integrate_tcl validates rho0") {
    const auto m = preset("tla_fig2").model;
    Matrix skew = pure(basis_vector(2, 0));
    skew(0, 1) = 0.3;
    CHECK_THROWS_AS(integrate_tcl(m, skew, 0.0, 1.0, 1e-3), std::invalid_argument);
    CHECK_THROWS_AS(integrate_tcl(m, 2.0 * pure(basis_vector(2, 0)), 0.0, 1.0, 1e-3), std::invalid_argument);
    CHECK_THROWS_AS(integrate_tcl(m, pure(basis_vector(3, 0)), 0.0, 1.0, 1e-3), std::invalid_argument);
}

TEST_CASE("analytic probabilities at the initial time") {
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        const auto m = preset(name).model;
        const auto p = analytic_probabilities(m, 0.0, 0.0);
        CHECK(p[0] == 1.0);
        for (std::size_t a = 1; a < p.size(); ++a) CHECK(p[a] == 0.0);
        const AnalyticDecomposition dec(m, TimeGrid::over(0.0, 1.0, 1e-3));
        const auto q = dec.probabilities(0.0);
        CHECK(q[0] == 1.0);
        for (std::size_t a = 1; a < q.size(); ++a) CHECK(q[a] == 0.0);
    }
}

TEST_CASE("symmetric lambda system has equal ground probabilities") {
    const SpectralDensityParams p{5.0, 1.0, 6.0, 0.0};
    const auto m = make_lambda(p, p);
    const AnalyticDecomposition dec(m, TimeGrid::over(0.0, 5.0, 1e-3));
    for (double t = 0.0; t <= 5.0; t += 0.0137) {
        const auto q = dec.probabilities(t);
        CHECK(q[1] == q[2]);
    }
}

TEST_CASE("decomposition probabilities sum to one") {
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        auto m = preset(name).model;
        const AnalyticDecomposition dec(m, TimeGrid::over(0.0, 5.0, 1e-3));
        for (double t = 0.0; t <= 5.0; t += 0.01) {
            const auto s = dec.at(t);
            CHECK_THAT(s.total_probability(), WithinAbs(1.0, 1e-8));
            for (const auto& e : s.entries) CHECK(e.probability >= -1e-12);
        }
    }
}

TEST_CASE("analytic decomposition reproduces the master equation") {
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        const auto m = preset(name).model;
        const auto grid = TimeGrid::over(0.0, 5.0, 1e-3);
        const AnalyticDecomposition dec(m, grid);
        const auto sol = integrate_tcl(m, pure(m.initial_state()), 0.0, 5.0, 1e-3);
        double worst = 0.0;
        for (std::size_t i = 0; i < sol.size(); ++i) {
            worst = std::max(worst, max_abs_diff(outer_product_sum(dec.at(sol.times[i])), sol.rho[i]));
        }
        INFO(name);
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("superposition initial states also reproduce the master equation") {
    Vector psi(3);
    psi << 0.7, cplx(0.0, 0.5), 0.5;
    psi /= psi.norm();
    for (const char* name : {"lambda_fig3", "ladder_fig4"}) {
        auto m = preset(name).model;
        set_initial_state(m, psi);
        const AnalyticDecomposition dec(m, TimeGrid::over(0.0, 5.0, 1e-3));
        const auto sol = integrate_tcl(m, pure(psi), 0.0, 5.0, 1e-3);
        double worst = 0.0;
        for (std::size_t i = 0; i < sol.size(); i += 7) {
            worst = std::max(worst, max_abs_diff(outer_product_sum(dec.at(sol.times[i])), sol.rho[i]));
        }
        INFO(name);
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("independent density-matrix oracle agrees with integrate_tcl") {
    const auto m = preset("ladder_fig4").model;
    oracle::Dissipator gen{{m.channels[0].jump, m.channels[1].jump}, {m.channels[0].rate, m.channels[1].rate}};
    const auto rho = oracle::rk4_density(gen, pure(m.initial_state()), 0.0, 3.0, 6000);
    const auto sol = integrate_tcl(m, pure(m.initial_state()), 0.0, 3.0, 1e-3);
    CHECK(max_abs_diff(sol.rho.back(), rho) <= 1e-8);
}

TEST_CASE("excited probability follows the norm-decay law") {
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        const auto m = preset(name).model;
        const double h = 1e-3;
        const AnalyticDecomposition dec(m, TimeGrid::over(0.0, 5.0, h));
        double worst = 0.0;
        for (int i = 2; i <= 4998; ++i) {
            const double t = i * h;
            const double fd = (dec.probabilities(t - 2 * h)[0] - 8.0 * dec.probabilities(t - h)[0] +
                               8.0 * dec.probabilities(t + h)[0] - dec.probabilities(t + 2 * h)[0]) / (12.0 * h);
            const Vector psi = dec.unnormalized_initial(t);
            double rhs = 0.0;
            for (int k = 0; k < m.num_channels(); ++k) rhs -= m.rate(k, t) * (m.channels[static_cast<std::size_t>(k)].jump * psi).squaredNorm();
            if (std::abs(rhs) > 1e-3) worst = std::max(worst, std::abs(fd - rhs) / std::abs(rhs));
        }
        INFO(name);
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("ladder P2 by closure matches the flow equation") {
    for (const auto& m : {preset("ladder_fig4").model, breakdown_ladder()}) {
        const AnalyticDecomposition dec(m, TimeGrid::over(0.0, 5.0, 1e-3));
        for (double t = 0.0; t <= 5.0; t += 0.05) {
            CHECK_THAT(dec.probabilities(t)[2], WithinAbs(dec.ladder_p2_by_flow(t), 1e-8));
        }
    }
    CHECK_THROWS_AS(AnalyticDecomposition(preset("tla_fig2").model, TimeGrid::over(0.0, 1.0, 1e-3)).ladder_p2_by_flow(0.5),
                    std::logic_error);
}

TEST_CASE("ladder P2 taken literally with P2 in its own integrand vanishes identically") {
    // With psi^0(t0) = |0>, ||C2 psi^0(t0)||^2 = 0 and P2 = int Delta2 P2 ds has only the zero solution,
    // whereas the master equation populates |2>.
    const auto m = preset("ladder_fig4").model;
    const double literal = oracle::rk4_scalar([&](double t, double p2) { return m.rate(1, t) * p2; }, 0.0, 0.0, 5.0, 5000);
    CHECK(literal == 0.0);
    const auto sol = integrate_tcl(m, pure(m.initial_state()), 0.0, 5.0, 1e-3);
    CHECK(sol.rho.back()(2, 2).real() > 0.1);
    // the P1 reading integrates to the right value
    const AnalyticDecomposition dec(m, TimeGrid::over(0.0, 5.0, 1e-3));
    const double p2 = oracle::rk4_scalar([&](double t, double) {
        const Vector psi = dec.unnormalized_initial(t);
        return m.rate(1, t) * (std::norm(psi(1)) + dec.probabilities(t)[1]);
    }, 0.0, 0.0, 5.0, 5000);
    CHECK_THAT(p2, WithinAbs(sol.rho.back()(2, 2).real(), 1e-6));
}

TEST_CASE("analytic decomposition requires a predefined system without H_S") {
    auto m = preset("tla_fig2").model;
    m.kind = SystemKind::custom;
    CHECK_THROWS_AS(AnalyticDecomposition(m, TimeGrid::over(0.0, 1.0, 1e-3)), std::invalid_argument);
    auto h = preset("tla_fig2").model;
    h.hamiltonian = [](double) { return Matrix::Identity(2, 2); };
    CHECK_THROWS_AS(AnalyticDecomposition(h, TimeGrid::over(0.0, 1.0, 1e-3)), std::invalid_argument);
    const AnalyticDecomposition dec(preset("tla_fig2").model, TimeGrid::over(0.0, 1.0, 1e-3));
    CHECK_THROWS_AS(dec.at(1.5), std::out_of_range);
}

TEST_CASE("generic propagated decomposition matches the closed forms") {
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        const auto m = preset(name).model;
        const auto grid = TimeGrid::over(0.0, 5.0, 1e-3);
        const AnalyticDecomposition a(m, grid);
        const PropagatedDecomposition p(m, grid);
        for (double t = 0.0; t <= 5.0; t += 0.0731) {
            const auto pa = a.probabilities(t);
            const auto pp = p.at(t);
            for (int k = 0; k < m.num_labels(); ++k) CHECK_THAT(pp.probability(k), WithinAbs(pa[static_cast<std::size_t>(k)], 1e-9));
        }
    }
}

TEST_CASE("custom models fall back to the propagated decomposition") {
    auto m = preset("tla_fig2").model;
    m.kind = SystemKind::custom;
    const auto dec = make_decomposition(m, TimeGrid::over(0.0, 2.0, 1e-3));
    CHECK(dynamic_cast<const PropagatedDecomposition*>(dec.get()) != nullptr);
    const auto ref = make_decomposition(preset("tla_fig2").model, TimeGrid::over(0.0, 2.0, 1e-3));
    CHECK(dynamic_cast<const AnalyticDecomposition*>(ref.get()) != nullptr);
    CHECK_THAT(dec->at(1.3).probability(1), WithinAbs(ref->at(1.3).probability(1), 1e-9));
}

TEST_CASE("ladder positivity breaks where P2 is exhausted") {
    const auto m = breakdown_ladder();
    const auto sol = integrate_tcl(m, pure(m.initial_state()), 0.0, 5.0, 1e-3);
    CHECK(sol.most_negative_eigenvalue() < -1e-3);
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        const auto s = integrate_tcl(preset(name).model, pure(preset(name).model.initial_state()), 0.0, 5.0, 1e-3);
        CHECK(s.most_negative_eigenvalue() >= -1e-8);
    }
}

TEST_CASE("master-equation CSV layout") {
    const auto m = preset("tla_fig2").model;
    const auto sol = integrate_tcl(m, pure(m.initial_state()), 0.0, 0.01, 1e-3);
    std::ostringstream os;
    write_master_eq_csv(os, sol);
    std::istringstream in(os.str());
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "t,re(rho_00),re(rho_01),re(rho_10),re(rho_11),im(rho_00),im(rho_01),im(rho_10),im(rho_11),trace_err,min_eig");
    CHECK(first.rfind("0,1,0,0,0,", 0) == 0);
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows + 1 == sol.size());
}
