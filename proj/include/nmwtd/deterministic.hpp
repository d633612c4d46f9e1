// Effective non-Hermitian Hamiltonian and fixed-step RK4 propagation of
// unnormalized states between jumps.

#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/systems.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace nmwtd {

// H_eff(t) = H_S(t) - (i/2) sum_j Delta_j(t) C_j^dag C_j
inline Matrix effective_hamiltonian(double t, const SystemModel& model) {
    Matrix h = model.system_hamiltonian(t);
    for (const auto& ch : model.channels) {
        const double rate = ch.rate(t);
        if (rate == 0.0) continue;
        h.noalias() -= (0.5 * rate) * I * (ch.jump.adjoint() * ch.jump);
    }
    return h;
}

struct PropagationResult {
    PureState unnormalized;              // psi~_T(tau)
    double start{0.0};                   // T
    double step{0.0};
    std::vector<double> tau;             // integrator grid, tau[0] = 0
    std::vector<double> norm_sq_history; // ||psi~_T(tau_i)||^2
    std::vector<Vector> states;          // psi~_T(tau_i)

    std::size_t size() const { return tau.size(); }
};

// One classical RK4 step of d psi/dt = -i H_eff(t) psi, with H_eff at t, t+h/2, t+h supplied.
inline Vector rk4_step(const Vector& psi, const Matrix& h0, const Matrix& hm, const Matrix& h1, double h) {
    const Vector k1 = -I * (h0 * psi);
    const Vector k2 = -I * (hm * (psi + 0.5 * h * k1));
    const Vector k3 = -I * (hm * (psi + 0.5 * h * k2));
    const Vector k4 = -I * (h1 * (psi + h * k3));
    return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Integrates psi~ from T over [0, tau] with a step no larger than `step`.
inline PropagationResult propagate(const SystemModel& model, const PureState& state, double T, double tau,
                                   double step) {
    if (tau < 0.0) throw std::invalid_argument("propagate: tau must be >= 0");
    if (!(step > 0.0)) throw std::invalid_argument("propagate: step must be > 0");
    if (state.dimension() != static_cast<std::size_t>(model.dimension)) {
        throw std::invalid_argument("propagate: state dimension does not match model");
    }

    const auto n = static_cast<std::size_t>(std::ceil(tau / step - 1e-9));
    const double h = n == 0 ? step : tau / static_cast<double>(n);

    PropagationResult out;
    out.start = T;
    out.step = h;
    out.tau.reserve(n + 1);
    out.norm_sq_history.reserve(n + 1);
    out.states.reserve(n + 1);

    Vector psi = state.amplitudes;
    out.tau.push_back(0.0);
    out.norm_sq_history.push_back(psi.squaredNorm());
    out.states.push_back(psi);

    Matrix h0 = effective_hamiltonian(T, model);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = T + static_cast<double>(i) * h;
        const Matrix hm = effective_hamiltonian(t + 0.5 * h, model);
        const Matrix h1 = effective_hamiltonian(t + h, model);
        psi = rk4_step(psi, h0, hm, h1, h);
        const double nsq = psi.squaredNorm();
        if (!(nsq > 0.0) || !std::isfinite(nsq)) {
            throw ZeroNormError("propagate: norm vanished at t = " + std::to_string(t + h) + " (step too large)");
        }
        out.tau.push_back(static_cast<double>(i + 1) * h);
        out.norm_sq_history.push_back(nsq);
        out.states.push_back(psi);
        h0 = h1;
    }
    out.unnormalized = PureState(psi, state.label, false);
    return out;
}

} // namespace nmwtd
