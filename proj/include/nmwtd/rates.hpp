// Decay-rate functions: Lorentzian TCL4 rate, rate splitting, cumulative rates,
// user rate tables and sign segmentation of the time axis.

#pragma once

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nmwtd {

// Delta_k(t); time in units of 1/lambda, rate in units of lambda.
using RateFunction = std::function<double(double)>;

// Lorentzian cavity: J(w) = gamma0 lambda^2 / (2 pi ((w - w_c)^2 + lambda^2)).
struct SpectralDensityParams {
    double gamma0{0.0};
    double lambda{1.0};
    double delta{0.0};   // w_a - w_c
    double omega_c{0.0}; // only enters through delta

    void validate() const {
        if (!(lambda > 0.0)) throw std::invalid_argument("SpectralDensityParams: lambda must be > 0");
        if (gamma0 < 0.0) throw std::invalid_argument("SpectralDensityParams: gamma0 must be >= 0");
    }
};

// Second-order term alone.
inline double tcl2_decay_rate(double t, const SpectralDensityParams& p) {
    const double l = p.lambda;
    const double d = p.delta;
    return p.gamma0 * l * l / (l * l + d * d) * (1.0 - std::exp(-l * t) * (std::cos(d * t) - d / l * std::sin(d * t)));
}

// Fourth-order TCL decay rate (second-order term plus fourth-order correction).
inline double tcl4_decay_rate(double t, const SpectralDensityParams& p) {
    const double l = p.lambda;
    const double d = p.delta;
    const double g = p.gamma0;
    const double r = d / l;
    const double l2d2 = l * l + d * d;
    const double e1 = std::exp(-l * t);
    const double e2 = e1 * e1;
    const double c1 = std::cos(d * t);
    const double s1 = std::sin(d * t);
    const double c2 = std::cos(2.0 * d * t);
    const double s2 = std::sin(2.0 * d * t);

    const double tcl2 = tcl2_decay_rate(t, p);

    // e^{-lt}(e^{lt} - e^{-lt}cos 2dt) is expanded to avoid overflow for large t.
    const double pref = g * g * std::pow(l, 5) / (2.0 * l2d2 * l2d2 * l2d2);
    const double bracket = (1.0 - 3.0 * r * r) * (1.0 - e2 * c2)
                           - 2.0 * (1.0 - r * r * r * r) * l * t * e1 * c1
                           + 4.0 * (1.0 + r * r) * d * t * e1 * s1
                           + r * (3.0 - r * r) * e2 * s2;
    return tcl2 + pref * bracket;
}

// Stationary value of tcl4_decay_rate for t -> infinity.
inline double tcl4_rate_limit(const SpectralDensityParams& p) {
    const double l = p.lambda;
    const double d = p.delta;
    const double r = d / l;
    const double l2d2 = l * l + d * d;
    return p.gamma0 * l * l / l2d2
           + p.gamma0 * p.gamma0 * std::pow(l, 5) * (1.0 - 3.0 * r * r) / (2.0 * l2d2 * l2d2 * l2d2);
}

inline RateFunction make_tcl4_rate(const SpectralDensityParams& p) {
    p.validate();
    return [p](double t) { return tcl4_decay_rate(t, p); };
}

inline RateFunction make_constant_rate(double gamma) {
    return [gamma](double) { return gamma; };
}

struct SplitRate {
    double plus{0.0};
    double minus{0.0};
};

// Delta^{+-} = (|Delta| +- Delta)/2, written so the reconstruction is exact.
inline SplitRate split_rate(double delta) {
    if (delta >= 0.0) return {delta, 0.0};
    return {0.0, -delta};
}

// Piecewise-linear rate from sampled values.
class RateTable {
public:
    RateTable(std::vector<double> times, std::vector<double> values)
        : times_(std::move(times)), values_(std::move(values)) {
        if (times_.size() != values_.size() || times_.size() < 2) {
            throw std::invalid_argument("RateTable: need at least two (t, delta) rows");
        }
        for (std::size_t i = 1; i < times_.size(); ++i) {
            if (!(times_[i] > times_[i - 1])) {
                throw std::invalid_argument("RateTable: t must be strictly increasing");
            }
        }
    }

    // Two whitespace-separated columns; '#' starts a comment line (header "# t delta").
    static RateTable parse(std::istream& in) {
        std::vector<double> t, v;
        std::string line;
        while (std::getline(in, line)) {
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            std::istringstream row(line);
            double a = 0.0, b = 0.0;
            if (!(row >> a >> b)) throw std::invalid_argument("RateTable: malformed row '" + line + "'");
            t.push_back(a);
            v.push_back(b);
        }
        return RateTable(std::move(t), std::move(v));
    }

    static RateTable load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("RateTable: cannot open " + path);
        return parse(in);
    }

    double operator()(double t) const {
        if (t < times_.front() || t > times_.back()) {
            throw std::out_of_range("RateTable: t outside tabulated range");
        }
        auto it = std::upper_bound(times_.begin(), times_.end(), t);
        if (it == times_.end()) return values_.back();
        const auto i = static_cast<std::size_t>(it - times_.begin());
        const double w = (t - times_[i - 1]) / (times_[i] - times_[i - 1]);
        return (1.0 - w) * values_[i - 1] + w * values_[i];
    }

    const std::vector<double>& times() const { return times_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::vector<double> times_;
    std::vector<double> values_;
};

// D(t0, t) = int_{t0}^{t} Delta(s) ds by adaptive Gauss-Kronrod.
inline double cumulative_rate(const RateFunction& rate, double t0, double t) {
    if (t < t0) throw std::invalid_argument("cumulative_rate: t < t0");
    if (t == t0) return 0.0;
    double err = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(rate, t0, t, 20, 1e-13, &err);
}

// Fixed 7-point Gauss-Legendre panel; used for short intervals.
template <class F>
double gauss_panel(F&& f, double a, double b) {
    if (a == b) return 0.0;
    return boost::math::quadrature::gauss<double, 7>::integrate(std::forward<F>(f), a, b);
}

// Cumulative integral at t0 + i*step, i = 0..n-1.
inline std::vector<double> cumulative_on_grid(const RateFunction& rate, double t0, double step, std::size_t n) {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        const double a = t0 + static_cast<double>(i - 1) * step;
        const double b = t0 + static_cast<double>(i) * step;
        out[i] = out[i - 1] + gauss_panel(rate, a, b);
    }
    return out;
}

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

// Partition of [t0, tend] into intervals of constant rate sign.
struct SignSegmentation {
    int channel{0};
    double t0{0.0};
    double tend{0.0};
    std::vector<double> boundaries; // interior sign changes, strictly increasing
    std::vector<int> signs;         // one per interval, size boundaries.size() + 1

    std::size_t size() const { return signs.size(); }
    double interval_begin(std::size_t i) const { return i == 0 ? t0 : boundaries[i - 1]; }
    double interval_end(std::size_t i) const { return i == boundaries.size() ? tend : boundaries[i]; }

    std::vector<std::pair<double, double>> intervals_with_sign(int s) const {
        std::vector<std::pair<double, double>> out;
        for (std::size_t i = 0; i < signs.size(); ++i) {
            if (signs[i] == s) out.emplace_back(interval_begin(i), interval_end(i));
        }
        return out;
    }
    std::vector<std::pair<double, double>> negative_intervals() const { return intervals_with_sign(-1); }
    std::vector<std::pair<double, double>> positive_intervals() const { return intervals_with_sign(1); }

    int sign_at(double t) const {
        auto it = std::upper_bound(boundaries.begin(), boundaries.end(), t);
        return signs[static_cast<std::size_t>(it - boundaries.begin())];
    }
};

// A boundary needs opposite signs at the bracket ends; zeros that only touch the axis are skipped.
inline SignSegmentation sign_segments(const RateFunction& rate, double t0, double tend, double scan_step = 0.0,
                                      int channel = 0) {
    if (!(tend > t0)) throw std::invalid_argument("sign_segments: empty window");
    if (scan_step <= 0.0) scan_step = (tend - t0) / 2000.0;
    const double tol = 1e-10 * (tend - t0);

    SignSegmentation seg;
    seg.channel = channel;
    seg.t0 = t0;
    seg.tend = tend;

    const auto n = static_cast<std::size_t>(std::ceil((tend - t0) / scan_step - 1e-9));
    int current = 0;     // sign of the open segment, 0 until a nonzero sample is seen
    double last_t = t0;  // time of the last nonzero sample
    double last_v = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        const double t = i == n ? tend : std::min(tend, t0 + static_cast<double>(i) * scan_step);
        const double v = rate(t);
        const int s = sign_of(v);
        if (s == 0) continue;
        if (current == 0) {
            current = s;
        } else if (s != current) {
            double a = last_t, b = t, fa = last_v;
            while (b - a > tol) {
                const double m = 0.5 * (a + b);
                const double fm = rate(m);
                if (fm == 0.0) {
                    a = b = m;
                    break;
                }
                if (sign_of(fm) == sign_of(fa)) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            seg.boundaries.push_back(0.5 * (a + b));
            seg.signs.push_back(current);
            current = s;
        }
        last_t = t;
        last_v = v;
    }
    seg.signs.push_back(current);
    return seg;
}

} // namespace nmwtd
