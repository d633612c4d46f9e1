// System models (jump operators, rates, label adjacency) and the predefined
// two-level, Lambda and ladder atoms coupled to a Lorentzian cavity.

#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/rates.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nmwtd {

enum class SystemKind { tla, lambda, ladder, custom };

// Positive-direction connection on one channel: C_k psi^source is parallel to psi^target.
// When the channel rate is negative the same edge is traversed target -> source.
struct LabelEdge {
    int source{0};
    int target{0};
};

struct Channel {
    Matrix jump;
    RateFunction rate;
    std::optional<SpectralDensityParams> spectral; // set when rate is the TCL4 form
    std::vector<LabelEdge> edges;
};

struct SystemModel {
    std::string name;
    SystemKind kind{SystemKind::custom};
    int dimension{0};
    std::function<Matrix(double)> hamiltonian; // empty means H_S = 0 (no Lamb shift)
    std::vector<Channel> channels;
    std::vector<Vector> label_states; // representative states at t0; label 0 is the initial state

    int num_labels() const { return static_cast<int>(label_states.size()); }
    int num_channels() const { return static_cast<int>(channels.size()); }

    Matrix system_hamiltonian(double t) const {
        if (!hamiltonian) return Matrix::Zero(dimension, dimension);
        return hamiltonian(t);
    }
    double rate(int k, double t) const { return channels[static_cast<std::size_t>(k)].rate(t); }
    const Vector& initial_state() const { return label_states.front(); }
};

struct RunDefaults {
    std::size_t samples{100000};
    double t0{0.0};
    double tend{5.0};
    double dt{1e-3};
};

struct Preset {
    SystemModel model;
    RunDefaults defaults;
};

inline Channel tcl4_channel(Matrix jump, const SpectralDensityParams& p, std::vector<LabelEdge> edges) {
    Channel ch;
    ch.jump = std::move(jump);
    ch.rate = make_tcl4_rate(p);
    ch.spectral = p;
    ch.edges = std::move(edges);
    return ch;
}

// |1> ground, |0> excited; C = |1><0|.
inline SystemModel make_tla(const SpectralDensityParams& p) {
    SystemModel m;
    m.name = "tla";
    m.kind = SystemKind::tla;
    m.dimension = 2;
    m.channels.push_back(tcl4_channel(ket_bra(2, 1, 0), p, {{0, 1}}));
    m.label_states = {basis_vector(2, 0), basis_vector(2, 1)};
    return m;
}

// |0> excited, |1>,|2> ground; C_1 = |1><0|, C_2 = |2><0|.
inline SystemModel make_lambda(const SpectralDensityParams& p1, const SpectralDensityParams& p2) {
    SystemModel m;
    m.name = "lambda";
    m.kind = SystemKind::lambda;
    m.dimension = 3;
    m.channels.push_back(tcl4_channel(ket_bra(3, 1, 0), p1, {{0, 1}}));
    m.channels.push_back(tcl4_channel(ket_bra(3, 2, 0), p2, {{0, 2}}));
    m.label_states = {basis_vector(3, 0), basis_vector(3, 1), basis_vector(3, 2)};
    return m;
}

// |0> excited, |1> middle, |2> ground; C_1 = |1><0|, C_2 = |2><1|.
// Negative channel 2 maps psi^2 back to psi^1 or psi^0.
inline SystemModel make_ladder(const SpectralDensityParams& p1, const SpectralDensityParams& p2) {
    SystemModel m;
    m.name = "ladder";
    m.kind = SystemKind::ladder;
    m.dimension = 3;
    m.channels.push_back(tcl4_channel(ket_bra(3, 1, 0), p1, {{0, 1}}));
    m.channels.push_back(tcl4_channel(ket_bra(3, 2, 1), p2, {{0, 2}, {1, 2}}));
    m.label_states = {basis_vector(3, 0), basis_vector(3, 1), basis_vector(3, 2)};
    return m;
}

inline Preset preset(std::string_view name) {
    if (name == "tla_fig2") {
        return {make_tla({5.0, 1.0, 8.0, 0.0}), {100000, 0.0, 5.0, 1e-3}};
    }
    if (name == "lambda_fig3") {
        return {make_lambda({5.0, 1.0, 4.0, 0.0}, {5.0, 1.0, 8.0, 0.0}), {100000, 0.0, 5.0, 1e-3}};
    }
    if (name == "ladder_fig4") {
        return {make_ladder({5.0, 1.0, 8.0, 0.0}, {5.0, 1.0, 4.0, 0.0}), {1000000, 0.0, 5.0, 1e-3}};
    }
    throw std::invalid_argument("unknown preset '" + std::string(name) +
                                "' (expected tla_fig2, lambda_fig3 or ladder_fig4)");
}

inline void set_initial_state(SystemModel& model, const Vector& psi) {
    if (psi.size() != model.dimension) throw std::invalid_argument("set_initial_state: dimension mismatch");
    const double n = psi.norm();
    if (!(n > 0.0)) throw ZeroNormError("set_initial_state: zero initial state");
    model.label_states.front() = psi / n;
}

// |<a|b>| = ||a|| ||b|| up to tol, or either vector vanishes.
inline bool parallel(const Vector& a, const Vector& b, double tol = 1e-12) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na <= tol || nb <= tol) return true;
    return std::abs(std::abs(a.dot(b)) - na * nb) <= tol * na * nb;
}

// Every declared edge must map the source state onto the target state.
inline void check_adjacency(const SystemModel& model, double tol = 1e-12) {
    for (int k = 0; k < model.num_channels(); ++k) {
        const auto& ch = model.channels[static_cast<std::size_t>(k)];
        for (const auto& e : ch.edges) {
            if (e.source < 0 || e.source >= model.num_labels() || e.target < 0 || e.target >= model.num_labels()) {
                throw std::invalid_argument("adjacency: label out of range on channel " + std::to_string(k));
            }
            const Vector mapped = ch.jump * model.label_states[static_cast<std::size_t>(e.source)];
            if (!parallel(mapped, model.label_states[static_cast<std::size_t>(e.target)], tol)) {
                throw std::invalid_argument("adjacency: C_" + std::to_string(k) + " psi^" + std::to_string(e.source) +
                                            " is not parallel to psi^" + std::to_string(e.target));
            }
        }
    }
}

// ---------------------------------------------------------------------------------------
// JSON model files

namespace detail {

inline cplx json_complex(const nlohmann::json& j) {
    if (j.is_number()) return {j.get<double>(), 0.0};
    if (j.is_array() && j.size() == 2) return {j[0].get<double>(), j[1].get<double>()};
    throw std::invalid_argument("model file: complex entries are numbers or [re, im]");
}

inline Vector json_vector(const nlohmann::json& j, int d) {
    if (!j.is_array() || static_cast<int>(j.size()) != d) {
        throw std::invalid_argument("model file: state must have " + std::to_string(d) + " entries");
    }
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = json_complex(j[static_cast<std::size_t>(i)]);
    return v;
}

inline Matrix json_matrix(const nlohmann::json& j, int d) {
    if (!j.is_array() || static_cast<int>(j.size()) != d) {
        throw std::invalid_argument("model file: matrix must have " + std::to_string(d) + " rows");
    }
    Matrix m(d, d);
    for (int r = 0; r < d; ++r) m.row(r) = json_vector(j[static_cast<std::size_t>(r)], d).transpose();
    return m;
}

} // namespace detail

// {name, dimension, lambda?, channels:[{matrix, gamma0, delta} | {matrix, constant_rate} |
//  {matrix, rate_table}], adjacency:[{channel, source, target}], initial_state, labels?}
// Labels other than 0 default to the normalized images of their adjacency sources.
// Relative rate_table paths are resolved against base_dir.
inline SystemModel model_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    SystemModel m;
    m.name = j.value("name", std::string("custom"));
    m.kind = SystemKind::custom;
    m.dimension = j.at("dimension").get<int>();
    if (m.dimension < 1) throw std::invalid_argument("model file: dimension must be >= 1");
    const double lambda = j.value("lambda", 1.0);

    for (const auto& cj : j.at("channels")) {
        Channel ch;
        ch.jump = detail::json_matrix(cj.at("matrix"), m.dimension);
        if (cj.contains("constant_rate")) {
            ch.rate = make_constant_rate(cj.at("constant_rate").get<double>());
        } else if (cj.contains("rate_table")) {
            std::filesystem::path file = cj.at("rate_table").get<std::string>();
            if (file.is_relative() && !base_dir.empty()) file = base_dir / file;
            auto table = std::make_shared<RateTable>(RateTable::load(file.string()));
            ch.rate = [table](double t) { return (*table)(t); };
        } else {
            SpectralDensityParams p{cj.at("gamma0").get<double>(), lambda, cj.at("delta").get<double>(),
                                    cj.value("omega_c", 0.0)};
            ch.rate = make_tcl4_rate(p);
            ch.spectral = p;
        }
        m.channels.push_back(std::move(ch));
    }

    int max_label = 0;
    for (const auto& aj : j.at("adjacency")) {
        const int k = aj.at("channel").get<int>();
        if (k < 0 || k >= m.num_channels()) throw std::invalid_argument("model file: adjacency channel out of range");
        LabelEdge e{aj.at("source").get<int>(), aj.at("target").get<int>()};
        if (e.source < 0 || e.target < 0) throw std::invalid_argument("model file: negative label");
        max_label = std::max({max_label, e.source, e.target});
        m.channels[static_cast<std::size_t>(k)].edges.push_back(e);
    }

    const Vector psi0 = detail::json_vector(j.at("initial_state"), m.dimension);
    if (!(psi0.norm() > 0.0)) throw std::invalid_argument("model file: zero initial state");

    std::vector<std::optional<Vector>> states(static_cast<std::size_t>(max_label + 1));
    states[0] = psi0 / psi0.norm();
    if (j.contains("labels")) {
        const auto& lj = j.at("labels");
        for (std::size_t i = 0; i < lj.size() && i + 1 < states.size(); ++i) {
            Vector v = detail::json_vector(lj[i], m.dimension);
            states[i + 1] = v / v.norm();
        }
    }
    // Breadth-first fill from label 0 through positive edges.
    std::queue<int> pending;
    pending.push(0);
    for (std::size_t i = 1; i < states.size(); ++i) {
        if (states[i]) pending.push(static_cast<int>(i));
    }
    while (!pending.empty()) {
        const int src = pending.front();
        pending.pop();
        for (const auto& ch : m.channels) {
            for (const auto& e : ch.edges) {
                if (e.source != src || states[static_cast<std::size_t>(e.target)]) continue;
                const Vector img = ch.jump * *states[static_cast<std::size_t>(src)];
                if (img.norm() <= 1e-12) continue;
                states[static_cast<std::size_t>(e.target)] = img / img.norm();
                pending.push(e.target);
            }
        }
    }
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (!states[i]) throw std::invalid_argument("model file: cannot determine state of label " + std::to_string(i));
        m.label_states.push_back(*states[i]);
    }
    check_adjacency(m, 1e-9);
    return m;
}

inline SystemModel load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file " + path);
    return model_from_json(nlohmann::json::parse(in), std::filesystem::path(path).parent_path());
}

} // namespace nmwtd
