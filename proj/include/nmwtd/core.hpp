// Complex vectors/matrices, pure states and density matrices for small systems

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmwtd {

using cplx = std::complex<double>;
using Vector = Eigen::VectorXcd;
using Matrix = Eigen::MatrixXcd;

inline constexpr cplx I{0.0, 1.0};

// Raised when a deterministic branch loses all of its norm.
class ZeroNormError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Amplitude vector tagged with the decomposition label it represents.
struct PureState {
    Vector amplitudes;
    int label{0};
    bool normalized{false};

    PureState() = default;
    PureState(Vector amps, int lbl = 0, bool is_normalized = false)
        : amplitudes(std::move(amps)), label(lbl), normalized(is_normalized) {}

    std::size_t dimension() const { return static_cast<std::size_t>(amplitudes.size()); }
    double norm_sq() const { return amplitudes.squaredNorm(); }
};

// |k><k| style basis vector of dimension d.
inline Vector basis_vector(int d, int k) {
    Vector v = Vector::Zero(d);
    v(k) = 1.0;
    return v;
}

// |row><col|
inline Matrix ket_bra(int d, int row, int col) {
    Matrix m = Matrix::Zero(d, d);
    m(row, col) = 1.0;
    return m;
}

inline PureState normalize(const PureState& state) {
    const double n = state.amplitudes.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ZeroNormError("normalize: state has zero norm (label " +
                            std::to_string(state.label) + ")");
    }
    PureState out = state;
    if (state.normalized && std::abs(n - 1.0) <= 1e-15) return out;
    out.amplitudes /= n;
    out.normalized = true;
    return out;
}

inline Matrix projector(const Vector& psi) { return psi * psi.adjoint(); }

// One term of a finite pure-state decomposition.
struct DecompositionEntry {
    int label{0};
    PureState state;
    double probability{0.0};
};

enum class DecompositionMode { analytic, empirical };

// {psi^alpha, P_alpha} at a single time.
struct DecompositionState {
    std::vector<DecompositionEntry> entries;
    double time{0.0};
    DecompositionMode mode{DecompositionMode::analytic};

    const DecompositionEntry& entry(int label) const {
        for (const auto& e : entries) {
            if (e.label == label) return e;
        }
        throw std::out_of_range("DecompositionState: unknown label " + std::to_string(label));
    }
    double probability(int label) const { return entry(label).probability; }
    double total_probability() const {
        double s = 0.0;
        for (const auto& e : entries) s += e.probability;
        return s;
    }
};

// rho = sum_alpha P_alpha |psi^alpha><psi^alpha|
inline Matrix outer_product_sum(std::span<const DecompositionEntry> entries) {
    if (entries.empty()) throw std::invalid_argument("outer_product_sum: empty decomposition");
    const auto d = entries.front().state.amplitudes.size();
    Matrix rho = Matrix::Zero(d, d);
    for (const auto& e : entries) {
        if (e.probability < 0.0) {
            throw std::invalid_argument("outer_product_sum: negative probability for label " +
                                        std::to_string(e.label));
        }
        if (e.state.amplitudes.size() != d) {
            throw std::invalid_argument("outer_product_sum: dimension mismatch");
        }
        rho.noalias() += e.probability * projector(e.state.amplitudes);
    }
    return rho;
}

inline Matrix outer_product_sum(const DecompositionState& decomp) {
    return outer_product_sum(std::span<const DecompositionEntry>(decomp.entries));
}

inline double hermiticity_error(const Matrix& m) { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace nmwtd
