// Waiting-time distributions F(tau | psi^alpha, T): general exponential form,
// Markovian limit, source-only and product-form special cases, and inverse-transform sampling.

#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/decomposition.hpp"
#include "nmwtd/deterministic.hpp"
#include "nmwtd/jump_process.hpp"
#include "nmwtd/rates.hpp"
#include "nmwtd/systems.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nmwtd {

struct WTDCurve {
    int label{0};
    double T{0.0};
    std::vector<double> tau;
    std::vector<double> F;
    bool defective{true}; // F(tau_max) < 1: no jump is a legal outcome

    std::size_t size() const { return tau.size(); }
    double tau_max() const { return tau.empty() ? 0.0 : tau.back(); }

    // Linear interpolation; constant beyond the last grid point.
    double value_at(double t) const {
        if (tau.empty() || t <= 0.0) return 0.0;
        if (t >= tau.back()) return F.back();
        auto it = std::upper_bound(tau.begin(), tau.end(), t);
        const auto i = static_cast<std::size_t>(it - tau.begin());
        const double w = (t - tau[i - 1]) / (tau[i] - tau[i - 1]);
        return (1.0 - w) * F[i - 1] + w * F[i];
    }
};

inline void finalize_defective(WTDCurve& c) { c.defective = c.F.empty() || c.F.back() < 1.0; }

// Gamma[psi^alpha, t] for every label; +inf where a negative channel diverges.
inline std::vector<double> label_rates(const SystemModel& model, const DecompositionState& state, double t) {
    std::vector<double> out(static_cast<std::size_t>(model.num_labels()), 0.0);
    for (const auto& e : collect_jump_edges(model, state, t)) out[static_cast<std::size_t>(e.source)] += e.rate;
    return out;
}

// Union of sign changes of all channel rates inside (a, b).
inline std::vector<double> rate_sign_changes(const SystemModel& model, double a, double b, double scan_step = 0.0) {
    std::vector<double> out;
    for (int k = 0; k < model.num_channels(); ++k) {
        const auto seg = sign_segments(model.channels[static_cast<std::size_t>(k)].rate, a, b, scan_step, k);
        out.insert(out.end(), seg.boundaries.begin(), seg.boundaries.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Integrated total jump rate per grid panel, per label. Panels are split at rate sign changes
// (where Gamma has kinks) and integrated by Simpson's rule on each piece.
class HazardTable {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    HazardTable(const SystemModel& model, const DecompositionEvolution& evolution, TimeGrid grid)
        : grid_(grid), labels_(model.num_labels()) {
        if (grid_.t0 < evolution.t_begin() - 1e-12 || grid_.tend() > evolution.t_end() + 1e-9) {
            throw std::out_of_range("HazardTable: grid exceeds the decomposition window");
        }
        const auto L = static_cast<std::size_t>(labels_);
        const std::size_t panels = grid_.size() - 1;
        increments_.assign(L, std::vector<double>(panels, 0.0));
        const auto kinks = rate_sign_changes(model, grid_.t0, grid_.tend());

        auto rates_at = [&](double t) {
            // decompositions are only defined inside the window
            const double tc = std::clamp(t, evolution.t_begin(), evolution.t_end());
            return label_rates(model, evolution.at(tc), tc);
        };
        auto simpson = [&](double u, const std::vector<double>& fu, double v, const std::vector<double>& fv,
                           std::vector<double>& acc) {
            const auto fm = rates_at(0.5 * (u + v));
            for (std::size_t a = 0; a < L; ++a) {
                const double w = (v - u) / 6.0 * (fu[a] + 4.0 * fm[a] + fv[a]);
                acc[a] += std::isnan(w) ? std::numeric_limits<double>::infinity() : w;
            }
        };

        std::vector<double> left = rates_at(grid_.t0);
        auto kink = kinks.begin();
        for (std::size_t i = 0; i < panels; ++i) {
            const double a = grid_.time(i);
            const double b = grid_.time(i + 1);
            const std::vector<double> right = rates_at(b);
            std::vector<double> acc(L, 0.0);
            double u = a;
            std::vector<double> fu = left;
            while (kink != kinks.end() && *kink <= a) ++kink;
            for (; kink != kinks.end() && *kink < b; ++kink) {
                const double v = *kink;
                if (v - u < 1e-14) continue;
                const auto fv = rates_at(v);
                simpson(u, fu, v, fv, acc);
                u = v;
                fu = fv;
            }
            simpson(u, fu, b, right, acc);
            for (std::size_t a2 = 0; a2 < L; ++a2) increments_[a2][i] = acc[a2];
            left = right;
        }

        prefix_.assign(L, std::vector<double>(grid_.size(), 0.0));
        next_divergent_.assign(L, std::vector<std::size_t>(grid_.size(), npos));
        for (std::size_t a = 0; a < L; ++a) {
            for (std::size_t i = 0; i < panels; ++i) {
                const double inc = increments_[a][i];
                prefix_[a][i + 1] = prefix_[a][i] + (std::isfinite(inc) ? inc : 0.0);
            }
            std::size_t next = npos;
            for (std::size_t i = panels; i-- > 0;) {
                if (!std::isfinite(increments_[a][i])) next = i;
                next_divergent_[a][i] = next;
            }
        }
    }

    const TimeGrid& grid() const { return grid_; }
    int num_labels() const { return labels_; }
    double increment(int label, std::size_t panel) const { return increments_[static_cast<std::size_t>(label)][panel]; }

    // int_{t_from}^{t_to} Gamma between two nodes; +inf when a divergent panel lies in between.
    double integrated(int label, std::size_t from, std::size_t to) const {
        const auto a = static_cast<std::size_t>(label);
        const std::size_t d = from < next_divergent_[a].size() ? next_divergent_[a][from] : npos;
        if (d != npos && d < to) return std::numeric_limits<double>::infinity();
        return prefix_[a][to] - prefix_[a][from];
    }

    // F(t_node - t_from) conditioned on sitting in `label` at node `from`.
    WTDCurve curve(int label, std::size_t from, std::size_t to) const {
        WTDCurve c;
        c.label = label;
        c.T = grid_.time(from);
        for (std::size_t j = from; j <= to; ++j) {
            const double h = integrated(label, from, j);
            c.tau.push_back(grid_.time(j) - c.T);
            if (!std::isfinite(h)) {
                c.F.push_back(1.0); // divergence: curve reaches unity at the end of the panel
                break;
            }
            c.F.push_back(-std::expm1(-h));
        }
        finalize_defective(c);
        return c;
    }

    struct Draw {
        bool jumped{false};
        double time{0.0};      // interpolated jump time
        std::size_t node{0};   // first node at or after the jump
    };

    // Inverse-transform draw of the next jump after node `from`; identical to
    // sample_waiting_time(curve(label, from, last), eta).
    Draw sample(int label, std::size_t from, double eta) const {
        const auto a = static_cast<std::size_t>(label);
        const std::size_t last = grid_.size() - 1;
        const std::size_t div = from < last ? next_divergent_[a][from] : npos;
        const std::size_t limit = div == npos ? last : div; // finite hazard up to this node
        const double level = -std::log1p(-eta);
        const double base = prefix_[a][from];
        // smallest m in (from, limit] with F(t_m) > eta
        auto first = prefix_[a].begin() + static_cast<std::ptrdiff_t>(from) + 1;
        auto end = prefix_[a].begin() + static_cast<std::ptrdiff_t>(limit) + 1;
        auto it = std::upper_bound(first, end, base + level);
        while (it != end && -std::expm1(-(*it - base)) <= eta) ++it; // guard against rounding in the log
        double f_prev = 0.0, f_next = 0.0;
        std::size_t m = 0;
        if (it != end) {
            m = static_cast<std::size_t>(it - prefix_[a].begin());
            f_prev = -std::expm1(-(prefix_[a][m - 1] - base));
            f_next = -std::expm1(-(prefix_[a][m] - base));
        } else if (div != npos) {
            m = div + 1;
            f_prev = -std::expm1(-(prefix_[a][div] - base));
            f_next = 1.0;
        } else {
            return {false, grid_.tend(), last};
        }
        const double w = f_next > f_prev ? (eta - f_prev) / (f_next - f_prev) : 0.0;
        return {true, grid_.time(m - 1) + std::clamp(w, 0.0, 1.0) * grid_.step, m};
    }

private:
    TimeGrid grid_;
    int labels_{0};
    std::vector<std::vector<double>> increments_;
    std::vector<std::vector<double>> prefix_;
    std::vector<std::vector<std::size_t>> next_divergent_;
};

// F(tau) = 1 - exp(-int_T^{T+tau} Gamma[psi^alpha, s] ds) on the grid tau_j = j*step.
// A divergent rate truncates the curve at the end of the panel with F = 1.
inline WTDCurve wtd_solve(const SystemModel& model, const DecompositionEvolution& evolution, int label, double T,
                          double tau_max, double step = 1e-3) {
    if (tau_max < 0.0) throw std::invalid_argument("wtd_solve: tau_max must be >= 0");
    if (label < 0 || label >= model.num_labels()) throw std::invalid_argument("wtd_solve: unknown label");
    if (tau_max == 0.0) {
        WTDCurve c;
        c.label = label;
        c.T = T;
        c.tau = {0.0};
        c.F = {0.0};
        return c;
    }
    const auto n = static_cast<std::size_t>(std::ceil(tau_max / step - 1e-9));
    const TimeGrid grid{T, tau_max / static_cast<double>(n), n + 1};
    HazardTable table(model, evolution, grid);
    return table.curve(label, 0, n);
}

// Markovian closed form F = (||psi~(0)||^2 - ||psi~(tau)||^2)/||psi~(0)||^2.
inline WTDCurve wtd_markovian(const PropagationResult& prop, const SystemModel& model) {
    if (prop.norm_sq_history.empty()) throw std::invalid_argument("wtd_markovian: empty norm history");
    for (std::size_t i = 0; i < prop.size(); ++i) {
        const double t = prop.start + prop.tau[i];
        for (int k = 0; k < model.num_channels(); ++k) {
            const bool neg = model.rate(k, t) < 0.0 ||
                             (i + 1 < prop.size() && model.rate(k, t + 0.5 * prop.step) < 0.0);
            if (neg) {
                throw std::domain_error("wtd_markovian: channel " + std::to_string(k) +
                                        " has a negative rate at t = " + std::to_string(t));
            }
        }
    }
    WTDCurve c;
    c.label = prop.unnormalized.label;
    c.T = prop.start;
    c.tau = prop.tau;
    const double n0 = prop.norm_sq_history.front();
    c.F.reserve(prop.size());
    for (double n : prop.norm_sq_history) c.F.push_back((n0 - n) / n0);
    finalize_defective(c);
    return c;
}

// Incoming probability flow into `label` at time t.
inline double inflow(const SystemModel& model, const DecompositionState& state, int label, double t) {
    double in = 0.0;
    for (const auto& e : collect_jump_edges(model, state, t)) {
        if (e.target == label) in += e.flow;
    }
    return in;
}

// For a state that only loses probability on [T, T+tau]: F = (P(T) - P(T+tau)) / P(T).
// Inflow is checked on a scan grid of `scan_step`.
inline double wtd_source_only(const SystemModel& model, const DecompositionEvolution& evolution, int label, double T,
                              double tau, double scan_step = 1e-3) {
    const double p_start = evolution.at(T).probability(label);
    if (!(p_start > 0.0)) throw std::domain_error("wtd_source_only: P_alpha(T) must be > 0");
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tau / scan_step)));
    for (std::size_t i = 0; i <= n; ++i) {
        const double t = T + tau * static_cast<double>(i) / static_cast<double>(n);
        if (inflow(model, evolution.at(t), label, t) > 1e-14) {
            throw std::domain_error("wtd_source_only: psi^" + std::to_string(label) + " receives inflow at t = " +
                                    std::to_string(t));
        }
    }
    const double p_end = evolution.at(T + tau).probability(label);
    return (p_start - p_end) / p_start;
}

enum class RateRegion { positive, negative };

// Two-level atom, region-wise closed forms on the norm history of psi~^0 (started at prop.start):
//   positive region from T: F = (n(T) - n(T+tau)) / n(T)
//   negative region from T: F = (n(T+tau) - n(T)) / (1 - n(T))
// The curve runs from node T to region_end (or the end of the history).
inline WTDCurve wtd_tla_regions(const PropagationResult& prop, RateRegion region, double T,
                                double region_end = std::numeric_limits<double>::infinity()) {
    const double x = (T - prop.start) / prop.step;
    const auto i0 = static_cast<long long>(std::llround(x));
    if (i0 < 0 || static_cast<std::size_t>(i0) >= prop.size() || std::abs(x - static_cast<double>(i0)) > 1e-6) {
        throw std::invalid_argument("wtd_tla_regions: T is not a node of the norm history");
    }
    const auto start = static_cast<std::size_t>(i0);
    const double nT = prop.norm_sq_history[start];
    const double denom = region == RateRegion::positive ? nT : 1.0 - nT;
    if (denom < 1e-12) throw std::domain_error("wtd_tla_regions: vanishing denominator (no population to jump)");

    WTDCurve c;
    c.label = region == RateRegion::positive ? 0 : 1;
    c.T = T;
    for (std::size_t j = start; j < prop.size(); ++j) {
        const double t = prop.start + prop.tau[j];
        if (t > region_end + 1e-12) break;
        const double n = prop.norm_sq_history[j];
        c.tau.push_back(t - T);
        c.F.push_back(region == RateRegion::positive ? (nT - n) / nT : (n - nT) / denom);
    }
    finalize_defective(c);
    return c;
}

// F = 1 - prod over negative intervals [a, b] of P(b)/P(a), the last factor ending at T+tau.
// P is the decomposition probability of the (ground) state sitting in psi^alpha since T.
inline double wtd_product_negative_regions(const std::function<double(double)>& probability,
                                           const std::vector<std::pair<double, double>>& negative_intervals,
                                           double T, double tau) {
    const double end = T + tau;
    double survival = 1.0;
    for (const auto& [a0, b0] : negative_intervals) {
        const double a = std::max(a0, T);
        const double b = std::min(b0, end);
        if (b <= a) continue;
        const double pa = probability(a);
        if (!(pa > 0.0)) throw std::domain_error("wtd_product_negative_regions: P vanishes at interval start");
        const double pb = probability(b);
        if (pb <= 0.0) return 1.0; // population drained: jump certain
        survival *= pb / pa;
    }
    return 1.0 - survival;
}

// tau*(eta) = min{tau | F(tau) > eta} with linear interpolation between grid points;
// nullopt is the no-jump outcome of a defective curve.
inline std::optional<double> sample_waiting_time(const WTDCurve& curve, double eta) {
    for (std::size_t j = 1; j < curve.size(); ++j) {
        if (curve.F[j] > eta) {
            const double f0 = curve.F[j - 1];
            const double f1 = curve.F[j];
            const double w = f1 > f0 ? std::clamp((eta - f0) / (f1 - f0), 0.0, 1.0) : 0.0;
            return curve.tau[j - 1] + w * (curve.tau[j] - curve.tau[j - 1]);
        }
    }
    return std::nullopt;
}

// F(dt) ~ Gamma[psi^alpha, T] dt, the stepwise jump probability.
inline double short_time_rate(const DecompositionState& decomp, const SystemModel& model, int label, double T,
                              double dt) {
    const double p = total_jump_rate(decomp, model, label, T) * dt;
    if (p > 0.1) std::clog << "nmwtd: warning: Gamma*dt = " << p << " exceeds 0.1 at t = " << T << "\n";
    return p;
}

// ---------------------------------------------------------------------------------------
// CSV export: comment header with the condition and metadata, then `tau,F`.

inline void write_wtd_csv(std::ostream& os, const WTDCurve& curve,
                          const std::map<std::string, std::string>& meta = {}) {
    os << "# label=" << curve.label << " T=" << std::setprecision(17) << curve.T << "\n";
    for (const auto& [k, v] : meta) os << "# " << k << "=" << v << "\n";
    os << "# defective=" << (curve.defective ? "true" : "false") << "\n";
    os << "tau,F\n";
    for (std::size_t j = 0; j < curve.size(); ++j) {
        os << std::setprecision(10) << curve.tau[j] << "," << std::setprecision(17) << curve.F[j] << "\n";
    }
}

} // namespace nmwtd
