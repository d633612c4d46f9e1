// Time evolution of a finite pure-state decomposition {psi^alpha(t), P_alpha(t)}.

#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/deterministic.hpp"
#include "nmwtd/systems.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace nmwtd {

// Source of decomposition snapshots at arbitrary times inside [t_begin, t_end].
class DecompositionEvolution {
public:
    virtual ~DecompositionEvolution() = default;

    virtual DecompositionState at(double t) const = 0;
    virtual double t_begin() const = 0;
    virtual double t_end() const = 0;
    virtual int num_labels() const = 0;
    virtual DecompositionMode mode() const { return DecompositionMode::analytic; }
};

// Uniform grid t_i = t0 + i*step, i = 0..n-1.
struct TimeGrid {
    double t0{0.0};
    double step{1e-3};
    std::size_t n{1};

    static TimeGrid over(double t0, double tend, double step) {
        if (!(tend > t0)) throw std::invalid_argument("TimeGrid: tend must exceed t0");
        if (!(step > 0.0)) throw std::invalid_argument("TimeGrid: step must be > 0");
        const auto intervals = static_cast<std::size_t>(std::llround((tend - t0) / step));
        if (std::abs(static_cast<double>(intervals) * step - (tend - t0)) > 1e-9 * (tend - t0)) {
            throw std::invalid_argument("TimeGrid: window length must be a multiple of the step");
        }
        return {t0, step, intervals + 1};
    }

    double time(std::size_t i) const { return t0 + static_cast<double>(i) * step; }
    double tend() const { return time(n - 1); }
    std::size_t size() const { return n; }

    // Largest node index with time <= t (clamped to the last interval).
    std::size_t node_below(double t) const {
        const double x = (t - t0) / step;
        if (x <= 0.0) return 0;
        auto i = static_cast<std::size_t>(std::floor(x + 1e-9));
        return std::min(i, n >= 2 ? n - 2 : 0);
    }
    // Index of the node equal to t (within 1e-6 of a step), otherwise throws.
    std::size_t index_of(double t) const {
        const double x = (t - t0) / step;
        const auto i = static_cast<long long>(std::llround(x));
        if (i < 0 || static_cast<std::size_t>(i) >= n || std::abs(x - static_cast<double>(i)) > 1e-6) {
            throw std::invalid_argument("TimeGrid: time is not a grid node");
        }
        return static_cast<std::size_t>(i);
    }
};

// Generic decomposition evolution driven by the jump-edge flows:
//   d psi~^a/dt = -i H_eff psi~^a
//   dP/dt = sum_k Delta_k(t) sum_{edges b->g} ||C_k psi^b||^2 P_b (e_g - e_b)
// Tabulated with RK4 on a grid; off-grid times are reached by one RK4 sub-step.
class PropagatedDecomposition final : public DecompositionEvolution {
public:
    PropagatedDecomposition(SystemModel model, TimeGrid grid)
        : model_(std::move(model)), grid_(grid) {
        const auto labels = static_cast<std::size_t>(model_.num_labels());
        const auto d = static_cast<Eigen::Index>(model_.dimension);
        Vector y(static_cast<Eigen::Index>(labels) * d + static_cast<Eigen::Index>(labels));
        y.setZero();
        for (std::size_t a = 0; a < labels; ++a) {
            y.segment(static_cast<Eigen::Index>(a) * d, d) = model_.label_states[a];
        }
        y(static_cast<Eigen::Index>(labels) * d) = 1.0;
        nodes_.reserve(grid_.size());
        nodes_.push_back(y);
        for (std::size_t i = 1; i < grid_.size(); ++i) {
            y = step(grid_.time(i - 1), y, grid_.step);
            nodes_.push_back(y);
        }
    }

    DecompositionState at(double t) const override {
        return unpack(t, raw_at(t));
    }

    // Unnormalized psi~^label(t) propagated from the representative state at t0.
    Vector unnormalized_state(int label, double t) const {
        const auto d = static_cast<Eigen::Index>(model_.dimension);
        return raw_at(t).segment(static_cast<Eigen::Index>(label) * d, d);
    }

    // Normalized label states at node i (no probabilities needed).
    std::vector<Vector> states_at_node(std::size_t i) const {
        const auto d = static_cast<Eigen::Index>(model_.dimension);
        std::vector<Vector> out;
        for (int a = 0; a < model_.num_labels(); ++a) {
            Vector v = nodes_[i].segment(static_cast<Eigen::Index>(a) * d, d);
            out.push_back(v / v.norm());
        }
        return out;
    }

    double t_begin() const override { return grid_.t0; }
    double t_end() const override { return grid_.tend(); }
    int num_labels() const override { return model_.num_labels(); }
    const TimeGrid& grid() const { return grid_; }
    const SystemModel& model() const { return model_; }

private:
    Vector raw_at(double t) const {
        if (t < grid_.t0 - 1e-12 || t > grid_.tend() + 1e-12) {
            throw std::out_of_range("PropagatedDecomposition: t outside tabulated window");
        }
        const std::size_t i = grid_.node_below(t);
        const double dt = t - grid_.time(i);
        if (std::abs(dt) < 1e-15) return nodes_[i];
        return step(grid_.time(i), nodes_[i], dt);
    }

    Vector rhs(double t, const Vector& y) const {
        const auto labels = static_cast<Eigen::Index>(model_.num_labels());
        const auto d = static_cast<Eigen::Index>(model_.dimension);
        Vector dy = Vector::Zero(y.size());
        const Matrix heff = effective_hamiltonian(t, model_);
        for (Eigen::Index a = 0; a < labels; ++a) {
            dy.segment(a * d, d) = -I * (heff * y.segment(a * d, d));
        }
        for (const auto& ch : model_.channels) {
            const double delta = ch.rate(t);
            if (delta == 0.0) continue;
            for (const auto& e : ch.edges) {
                const Vector src = y.segment(static_cast<Eigen::Index>(e.source) * d, d);
                const double nsq = src.squaredNorm();
                if (!(nsq > 0.0)) continue;
                const double mapped = (ch.jump * src).squaredNorm() / nsq;
                const double flow = delta * mapped * y(labels * d + e.source).real();
                dy(labels * d + e.target) += flow;
                dy(labels * d + e.source) -= flow;
            }
        }
        return dy;
    }

    Vector step(double t, const Vector& y, double h) const {
        const Vector k1 = rhs(t, y);
        const Vector k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
        const Vector k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
        const Vector k4 = rhs(t + h, y + h * k3);
        return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    DecompositionState unpack(double t, const Vector& y) const {
        const auto labels = static_cast<Eigen::Index>(model_.num_labels());
        const auto d = static_cast<Eigen::Index>(model_.dimension);
        DecompositionState s;
        s.time = t;
        s.mode = DecompositionMode::analytic;
        for (Eigen::Index a = 0; a < labels; ++a) {
            Vector v = y.segment(a * d, d);
            s.entries.push_back({static_cast<int>(a), PureState(v / v.norm(), static_cast<int>(a), true),
                                 y(labels * d + a).real()});
        }
        return s;
    }

    SystemModel model_;
    TimeGrid grid_;
    std::vector<Vector> nodes_;
};

} // namespace nmwtd
