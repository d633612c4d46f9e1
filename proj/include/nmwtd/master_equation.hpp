// Direct RK4 integration of the TCL master equation and the closed-form
// decomposition probabilities of the predefined systems (independent verification routes).

#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/decomposition.hpp"
#include "nmwtd/rates.hpp"
#include "nmwtd/systems.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <memory>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace nmwtd {

// Eigenvalues of a Hermitian matrix with d <= 3 from the characteristic polynomial, ascending.
inline std::vector<double> hermitian_eigenvalues(const Matrix& a) {
    const auto d = a.rows();
    if (d != a.cols() || d < 1 || d > 3) throw std::invalid_argument("hermitian_eigenvalues: need 1x1 to 3x3");
    if (d == 1) return {a(0, 0).real()};
    if (d == 2) {
        const double m = 0.5 * (a(0, 0).real() + a(1, 1).real());
        const double h = 0.5 * (a(0, 0).real() - a(1, 1).real());
        const double r = std::sqrt(h * h + std::norm(a(0, 1)));
        return {m - r, m + r};
    }
    const double a00 = a(0, 0).real(), a11 = a(1, 1).real(), a22 = a(2, 2).real();
    const double p1 = std::norm(a(0, 1)) + std::norm(a(0, 2)) + std::norm(a(1, 2));
    std::vector<double> ev;
    if (p1 == 0.0) {
        ev = {a00, a11, a22};
    } else {
        const double q = (a00 + a11 + a22) / 3.0;
        const double p2 = (a00 - q) * (a00 - q) + (a11 - q) * (a11 - q) + (a22 - q) * (a22 - q) + 2.0 * p1;
        const double p = std::sqrt(p2 / 6.0);
        Matrix b = (a - q * Matrix::Identity(3, 3)) / p;
        const double r = std::clamp(0.5 * b.determinant().real(), -1.0, 1.0);
        const double phi = std::acos(r) / 3.0;
        const double e1 = q + 2.0 * p * std::cos(phi);
        const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
        ev = {e1, 3.0 * q - e1 - e3, e3};
    }
    std::sort(ev.begin(), ev.end());
    return ev;
}

inline double min_eigenvalue(const Matrix& rho) { return hermitian_eigenvalues(0.5 * (rho + rho.adjoint())).front(); }

// d rho/dt = -i[H_S, rho] + sum_k Delta_k(t) (C_k rho C_k^dag - {C_k^dag C_k, rho}/2)
inline Matrix tcl_generator(double t, const SystemModel& model, const Matrix& rho) {
    const Matrix h = model.system_hamiltonian(t);
    Matrix out = -I * (h * rho - rho * h);
    for (const auto& ch : model.channels) {
        const double delta = ch.rate(t);
        if (delta == 0.0) continue;
        const Matrix cdc = ch.jump.adjoint() * ch.jump;
        out.noalias() += delta * (ch.jump * rho * ch.jump.adjoint() - 0.5 * (cdc * rho + rho * cdc));
    }
    return out;
}

struct MasterEqSolution {
    std::vector<double> times;
    std::vector<Matrix> rho;
    std::vector<double> trace_error;
    std::vector<double> hermiticity_error;
    std::vector<double> min_eigenvalue;

    std::size_t size() const { return times.size(); }
    double most_negative_eigenvalue() const {
        return *std::min_element(min_eigenvalue.begin(), min_eigenvalue.end());
    }
};

// Negative eigenvalues are recorded, never clipped.
inline MasterEqSolution integrate_tcl(const SystemModel& model, const Matrix& rho0, double t0, double tend,
                                      double step) {
    if (rho0.rows() != model.dimension || rho0.cols() != model.dimension) {
        throw std::invalid_argument("integrate_tcl: rho0 dimension mismatch");
    }
    if (hermiticity_error(rho0) > 1e-10) throw std::invalid_argument("integrate_tcl: rho0 is not Hermitian");
    if (std::abs(rho0.trace().real() - 1.0) > 1e-10) throw std::invalid_argument("integrate_tcl: rho0 trace != 1");
    const TimeGrid grid = TimeGrid::over(t0, tend, step);

    MasterEqSolution sol;
    sol.times.reserve(grid.size());
    sol.rho.reserve(grid.size());
    auto record = [&](double t, const Matrix& r) {
        sol.times.push_back(t);
        sol.rho.push_back(r);
        sol.trace_error.push_back(std::abs(r.trace() - cplx(1.0, 0.0)));
        sol.hermiticity_error.push_back(hermiticity_error(r));
        sol.min_eigenvalue.push_back(min_eigenvalue(r));
    };

    Matrix rho = rho0;
    record(grid.t0, rho);
    const double h = grid.step;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double t = grid.time(i - 1);
        const Matrix k1 = tcl_generator(t, model, rho);
        const Matrix k2 = tcl_generator(t + 0.5 * h, model, rho + 0.5 * h * k1);
        const Matrix k3 = tcl_generator(t + 0.5 * h, model, rho + 0.5 * h * k2);
        const Matrix k4 = tcl_generator(t + h, model, rho + h * k3);
        rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        record(grid.time(i), rho);
    }
    return sol;
}

// ---------------------------------------------------------------------------------------
// Closed-form decompositions for H_S = 0. With c = psi^0(t0) and D_k = int_{t0}^t Delta_k:
//   TLA:    psi~0 = (c0 e^{-D/2}, c1),                 P1 = 1 - P0
//   Lambda: psi~0 = (c0 e^{-(D1+D2)/2}, c1, c2),       P_j = |c0|^2 int Delta_j e^{-D1-D2}
//   Ladder: psi~0 = (c0 e^{-D1/2}, c1 e^{-D2/2}, c2),  P1 = |c0|^2 e^{-D2} int Delta_1 e^{-D1+D2}
//           P2 = 1 - P0 - P1 (closure)
// with P0 = ||psi~0||^2 throughout.
class AnalyticDecomposition final : public DecompositionEvolution {
public:
    AnalyticDecomposition(SystemModel model, TimeGrid grid) : model_(std::move(model)), grid_(grid) {
        if (model_.kind == SystemKind::custom) {
            throw std::invalid_argument("AnalyticDecomposition: closed forms exist only for tla, lambda, ladder");
        }
        if (model_.hamiltonian) throw std::invalid_argument("AnalyticDecomposition: requires H_S = 0");
        c_ = model_.initial_state() / model_.initial_state().norm();

        const std::size_t n = grid_.size();
        const int nch = model_.num_channels();
        cum_.assign(static_cast<std::size_t>(nch), std::vector<double>(n, 0.0));
        nested_.assign(2, std::vector<double>(n, 0.0));
        ladder_p2_flow_.assign(n, 0.0);
        for (std::size_t i = 1; i < n; ++i) {
            const double a = grid_.time(i - 1);
            const double b = grid_.time(i);
            for (int k = 0; k < nch; ++k) {
                cum_[static_cast<std::size_t>(k)][i] =
                    cum_[static_cast<std::size_t>(k)][i - 1] + gauss_panel(model_.channels[static_cast<std::size_t>(k)].rate, a, b);
            }
            for (int j = 0; j < nested_count(); ++j) {
                nested_[static_cast<std::size_t>(j)][i] = nested_[static_cast<std::size_t>(j)][i - 1] +
                    gauss_panel([&](double s) { return nested_integrand(j, i - 1, s); }, a, b);
            }
            if (model_.kind == SystemKind::ladder) {
                ladder_p2_flow_[i] = ladder_p2_flow_[i - 1] + gauss_panel(
                    [&](double s) { return model_.rate(1, s) * probabilities_in_panel(i - 1, s)[1]; }, a, b);
            }
        }
    }

    DecompositionState at(double t) const override {
        check_window(t);
        const std::size_t i = grid_.node_below(t);
        const auto probs = probabilities_in_panel(i, t);
        DecompositionState s;
        s.time = t;
        s.mode = DecompositionMode::analytic;
        const Vector psi0 = unnormalized_initial_in_panel(i, t);
        s.entries.push_back({0, PureState(psi0 / psi0.norm(), 0, true), probs[0]});
        for (int a = 1; a < model_.num_labels(); ++a) {
            s.entries.push_back({a, PureState(model_.label_states[static_cast<std::size_t>(a)], a, true),
                                 probs[static_cast<std::size_t>(a)]});
        }
        return s;
    }

    std::vector<double> probabilities(double t) const {
        check_window(t);
        return probabilities_in_panel(grid_.node_below(t), t);
    }

    // psi~^0_{t0}(t - t0)
    Vector unnormalized_initial(double t) const {
        check_window(t);
        return unnormalized_initial_in_panel(grid_.node_below(t), t);
    }

    double cumulative(int k, double t) const {
        check_window(t);
        return cumulative_in_panel(k, grid_.node_below(t), t);
    }

    // Ladder cross-check: P2 from integrating dP2/dt = Delta_2 (|c~1|^2 + P1).
    double ladder_p2_by_flow(double t) const {
        if (model_.kind != SystemKind::ladder) throw std::logic_error("ladder_p2_by_flow: not a ladder model");
        check_window(t);
        const std::size_t i = grid_.node_below(t);
        const double flow = ladder_p2_flow_[i] + gauss_panel(
            [&](double s) { return model_.rate(1, s) * probabilities_in_panel(i, s)[1]; }, grid_.time(i), t);
        return std::norm(c_(1)) * (1.0 - std::exp(-cumulative_in_panel(1, i, t))) + flow;
    }

    double t_begin() const override { return grid_.t0; }
    double t_end() const override { return grid_.tend(); }
    int num_labels() const override { return model_.num_labels(); }
    const SystemModel& model() const { return model_; }
    const TimeGrid& grid() const { return grid_; }

private:
    void check_window(double t) const {
        if (t < grid_.t0 - 1e-12 || t > grid_.tend() + 1e-12) {
            throw std::out_of_range("AnalyticDecomposition: t outside tabulated window");
        }
    }

    int nested_count() const {
        switch (model_.kind) {
        case SystemKind::lambda: return 2;
        case SystemKind::ladder: return 1;
        default: return 0;
        }
    }

    double cumulative_in_panel(int k, std::size_t i, double t) const {
        return cum_[static_cast<std::size_t>(k)][i] +
               gauss_panel(model_.channels[static_cast<std::size_t>(k)].rate, grid_.time(i), t);
    }

    double nested_integrand(int j, std::size_t i, double s) const {
        if (model_.kind == SystemKind::lambda) {
            const double total = cumulative_in_panel(0, i, s) + cumulative_in_panel(1, i, s);
            return model_.rate(j, s) * std::exp(-total);
        }
        // ladder: Delta_1 e^{-D1 + D2}
        return model_.rate(0, s) * std::exp(-cumulative_in_panel(0, i, s) + cumulative_in_panel(1, i, s));
    }

    double nested_in_panel(int j, std::size_t i, double t) const {
        return nested_[static_cast<std::size_t>(j)][i] +
               gauss_panel([&](double s) { return nested_integrand(j, i, s); }, grid_.time(i), t);
    }

    Vector unnormalized_initial_in_panel(std::size_t i, double t) const {
        Vector psi = c_;
        switch (model_.kind) {
        case SystemKind::tla:
            psi(0) *= std::exp(-0.5 * cumulative_in_panel(0, i, t));
            break;
        case SystemKind::lambda:
            psi(0) *= std::exp(-0.5 * (cumulative_in_panel(0, i, t) + cumulative_in_panel(1, i, t)));
            break;
        case SystemKind::ladder:
            psi(0) *= std::exp(-0.5 * cumulative_in_panel(0, i, t));
            psi(1) *= std::exp(-0.5 * cumulative_in_panel(1, i, t));
            break;
        case SystemKind::custom:
            break;
        }
        return psi;
    }

    std::vector<double> probabilities_in_panel(std::size_t i, double t) const {
        const double p0 = unnormalized_initial_in_panel(i, t).squaredNorm();
        const double c0sq = std::norm(c_(0));
        switch (model_.kind) {
        case SystemKind::tla:
            return {p0, 1.0 - p0};
        case SystemKind::lambda:
            return {p0, c0sq * nested_in_panel(0, i, t), c0sq * nested_in_panel(1, i, t)};
        case SystemKind::ladder: {
            const double p1 = c0sq * std::exp(-cumulative_in_panel(1, i, t)) * nested_in_panel(0, i, t);
            return {p0, p1, 1.0 - p0 - p1};
        }
        case SystemKind::custom:
            break;
        }
        return {};
    }

    SystemModel model_;
    TimeGrid grid_;
    Vector c_;
    std::vector<std::vector<double>> cum_;
    std::vector<std::vector<double>> nested_;
    std::vector<double> ladder_p2_flow_;
};

// P_alpha(t) for a predefined system started in its psi^0(t0).
inline std::vector<double> analytic_probabilities(const SystemModel& model, double t0, double t, double step = 1e-3) {
    if (t < t0) throw std::invalid_argument("analytic_probabilities: t < t0");
    if (t == t0) {
        std::vector<double> p(static_cast<std::size_t>(model.num_labels()), 0.0);
        p[0] = 1.0;
        return p;
    }
    const auto n = static_cast<std::size_t>(std::ceil((t - t0) / step));
    const double h = (t - t0) / static_cast<double>(n);
    AnalyticDecomposition decomp(model, TimeGrid{t0, h, n + 1});
    return decomp.probabilities(t);
}

// Analytic route for presets, flow-ODE route otherwise.
inline std::unique_ptr<DecompositionEvolution> make_decomposition(const SystemModel& model, const TimeGrid& grid) {
    if (model.kind != SystemKind::custom && !model.hamiltonian) {
        return std::make_unique<AnalyticDecomposition>(model, grid);
    }
    return std::make_unique<PropagatedDecomposition>(model, grid);
}

// `t,re(rho_00),re(rho_01),...,im(rho_00),...,trace_err,min_eig`
inline void write_master_eq_csv(std::ostream& os, const MasterEqSolution& sol) {
    if (sol.size() == 0) return;
    const auto d = sol.rho.front().rows();
    os << "t";
    for (const char* part : {"re", "im"}) {
        for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index c = 0; c < d; ++c) os << "," << part << "(rho_" << r << c << ")";
        }
    }
    os << ",trace_err,min_eig\n";
    os << std::setprecision(12);
    for (std::size_t i = 0; i < sol.size(); ++i) {
        os << sol.times[i];
        for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index c = 0; c < d; ++c) os << "," << sol.rho[i](r, c).real();
        }
        for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index c = 0; c < d; ++c) os << "," << sol.rho[i](r, c).imag();
        }
        os << "," << sol.trace_error[i] << "," << sol.min_eigenvalue[i] << "\n";
    }
}

} // namespace nmwtd
