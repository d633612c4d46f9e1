#include "catch_amalgamated.hpp"
#include "oracles.hpp"

#include "nmwtd/deterministic.hpp"
#include "nmwtd/systems.hpp"

using namespace nmwtd;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
SystemModel tla_constant(double gamma) {
    auto m = preset("tla_fig2").model;
    m.channels[0].rate = make_constant_rate(gamma);
    m.channels[0].spectral.reset();
    return m;
}
} // namespace

TEST_CASE("effective Hamiltonian examples") {
    auto zero = tla_constant(0.0);
    CHECK(effective_hamiltonian(1.0, zero).cwiseAbs().maxCoeff() == 0.0);

    const auto tla = tla_constant(1.7);
    const Matrix h = effective_hamiltonian(0.3, tla);
    Matrix expect = Matrix::Zero(2, 2);
    expect(0, 0) = cplx(0.0, -0.85);
    CHECK(max_abs_diff(h, expect) <= 1e-15);

    auto ladder = preset("ladder_fig4").model;
    ladder.channels[0].rate = make_constant_rate(0.4);
    ladder.channels[1].rate = make_constant_rate(-1.3);
    // C1^dag C1 = |0><0|, C2^dag C2 = |1><1|
    const Matrix c1 = ladder.channels[0].jump, c2 = ladder.channels[1].jump;
    const Matrix ref = -0.5 * I * (0.4 * (c1.adjoint() * c1) + (-1.3) * (c2.adjoint() * c2));
    CHECK(max_abs_diff(effective_hamiltonian(2.0, ladder), ref) <= 1e-15);
    CHECK_THAT(effective_hamiltonian(2.0, ladder)(1, 1).imag(), WithinAbs(0.65, 1e-15));
}

TEST_CASE("effective Hamiltonian includes a Hermitian system part") {
    auto m = tla_constant(1.0);
    m.hamiltonian = [](double t) {
        Matrix h(2, 2);
        h << 1.0, cplx(0.0, t), cplx(0.0, -t), -1.0;
        return h;
    };
    const Matrix h = effective_hamiltonian(0.5, m);
    CHECK_THAT(h(0, 1).imag(), WithinAbs(0.5, 1e-15));
    CHECK_THAT(h(0, 0).real(), WithinAbs(1.0, 1e-15));
    CHECK_THAT(h(0, 0).imag(), WithinAbs(-0.5, 1e-15));
}

TEST_CASE("propagate with tau = 0 leaves the state unchanged") {
    const auto m = preset("tla_fig2").model;
    Vector psi(2);
    psi << 0.6, 0.8;
    const auto r = propagate(m, PureState(psi, 0, true), 0.7, 0.0, 1e-3);
    CHECK(r.unnormalized.amplitudes == psi);
    CHECK(r.norm_sq_history.size() == 1);
}

TEST_CASE("constant rate: norm decays exponentially") {
    const double gamma = 1.3, tau = 2.0;
    const auto m = tla_constant(gamma);
    const auto r = propagate(m, PureState(basis_vector(2, 0), 0, true), 0.0, tau, tau / 1000.0);
    CHECK(r.norm_sq_history.front() == 1.0);
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK_THAT(r.norm_sq_history[i], WithinAbs(std::exp(-gamma * r.tau[i]), 1e-10));
    }
}

TEST_CASE("TCL4 rate: excited amplitude follows exp(-D)") {
    const auto m = preset("tla_fig2").model;
    const auto r = propagate(m, PureState(basis_vector(2, 0), 0, true), 0.0, 5.0, 1e-3);
    for (std::size_t i = 0; i < r.size(); i += 250) {
        const double D = oracle::richardson_trapezoid(m.channels[0].rate, 0.0, r.tau[i] > 0 ? r.tau[i] : 1e-300);
        CHECK_THAT(std::norm(r.states[i](0)), WithinAbs(std::exp(-D), 1e-8));
    }
}

TEST_CASE("norm history obeys the norm-decay law") {
    for (const char* name : {"tla_fig2", "lambda_fig3", "ladder_fig4"}) {
        auto m = preset(name).model;
        Vector psi = Vector::Constant(m.dimension, 1.0);
        set_initial_state(m, psi);
        const double h = 1e-3;
        const auto r = propagate(m, PureState(m.initial_state(), 0, true), 0.0, 5.0, h);
        double worst = 0.0;
        const auto& n = r.norm_sq_history;
        for (std::size_t i = 2; i + 2 < r.size(); ++i) {
            const double fd = (n[i - 2] - 8.0 * n[i - 1] + 8.0 * n[i + 1] - n[i + 2]) / (12.0 * h);
            double rhs = 0.0;
            for (int k = 0; k < m.num_channels(); ++k) {
                rhs -= m.rate(k, r.tau[i]) * (m.channels[static_cast<std::size_t>(k)].jump * r.states[i]).squaredNorm();
            }
            if (std::abs(rhs) > 1e-3) worst = std::max(worst, std::abs(fd - rhs) / std::abs(rhs));
        }
        INFO(name);
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("propagation is linear") {
    const auto m = preset("ladder_fig4").model;
    Vector psi(3);
    psi << 0.5, cplx(0.1, 0.7), -0.3;
    const cplx alpha(0.3, -1.2);
    const auto a = propagate(m, PureState(psi), 0.2, 3.0, 1e-3);
    const auto b = propagate(m, PureState(alpha * psi), 0.2, 3.0, 1e-3);
    CHECK((b.unnormalized.amplitudes - alpha * a.unnormalized.amplitudes).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("zero rates and Hermitian Hamiltonian conserve the norm") {
    auto m = preset("lambda_fig3").model;
    for (auto& ch : m.channels) ch.rate = make_constant_rate(0.0);
    m.hamiltonian = [](double t) {
        Matrix h(3, 3);
        h << 1.0, cplx(0.2, t), 0.0, cplx(0.2, -t), -0.5, 0.3, 0.0, 0.3, 2.0;
        return h;
    };
    Vector psi(3);
    psi << 0.6, 0.0, 0.8;
    const auto r = propagate(m, PureState(psi, 0, true), 0.0, 5.0, 1e-3);
    for (double n : r.norm_sq_history) CHECK_THAT(n, WithinAbs(1.0, 1e-10));
}

TEST_CASE("propagate validates its arguments") {
    const auto m = preset("tla_fig2").model;
    const PureState s(basis_vector(2, 0), 0, true);
    CHECK_THROWS_AS(propagate(m, s, 0.0, -1.0, 1e-3), std::invalid_argument);
    CHECK_THROWS_AS(propagate(m, s, 0.0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(propagate(m, PureState(basis_vector(3, 0)), 0.0, 1.0, 1e-3), std::invalid_argument);
}

TEST_CASE("a norm that underflows to zero raises") {
    const auto m = tla_constant(2000.0);
    const PureState s(basis_vector(2, 0), 0, true);
    CHECK_THROWS_AS(propagate(m, s, 0.0, 2.0, 1e-3), ZeroNormError);
}
