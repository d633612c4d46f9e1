// Conditional jump densities over a finite decomposition: jump edges,
// total rates and target distributions.

#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/rates.hpp"
#include "nmwtd/systems.hpp"

#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmwtd {

// Below this a source probability counts as empty and a numerator as vanishing.
inline constexpr double kDivergenceThreshold = 1e-12;

enum class JumpDirection { positive, negative };

struct JumpEdge {
    int channel{0};
    int source{0};
    int target{0};
    JumpDirection direction{JumpDirection::positive};
    double rate{0.0}; // jump rate per realization sitting in `source`
    double flow{0.0}; // P_source * rate; finite even when the rate diverges
    bool divergent{false};
};

// A negative channel asks for probability flow out of an (almost) empty decomposition state.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(double t, int channel, int source, int target)
        : std::runtime_error(describe(t, channel, source, target)),
          time(t), channel(channel), source(source), target(target) {}

    double time;
    int channel;
    int source;
    int target;

private:
    static std::string describe(double t, int k, int s, int g) {
        std::ostringstream os;
        os << "negative-channel divergence at t = " << t << ": channel " << k << ", source psi^" << s
           << " has vanishing probability while the reverse jump to psi^" << g << " is required";
        return os.str();
    }
};

// Edge list with divergent edges flagged instead of raised.
inline std::vector<JumpEdge> collect_jump_edges(const SystemModel& model, const DecompositionState& decomp, double t) {
    std::vector<JumpEdge> edges;
    for (int k = 0; k < model.num_channels(); ++k) {
        const auto& ch = model.channels[static_cast<std::size_t>(k)];
        const double delta = ch.rate(t);
        const SplitRate split = split_rate(delta);
        for (const auto& e : ch.edges) {
            if (delta >= 0.0) {
                const auto& src = decomp.entry(e.source);
                const double mapped = (ch.jump * src.state.amplitudes).squaredNorm();
                if (!(mapped > 0.0)) continue;
                JumpEdge je{k, e.source, e.target, JumpDirection::positive, split.plus * mapped, 0.0, false};
                je.flow = src.probability * je.rate;
                edges.push_back(je);
            } else {
                // Reverse jump psi^target -> psi^source, weighted by P_source / P_target.
                const auto& origin = decomp.entry(e.source); // state whose image is the jump source
                const auto& from = decomp.entry(e.target);
                const double mapped = (ch.jump * origin.state.amplitudes).squaredNorm();
                if (!(mapped > 0.0)) continue;
                const double numerator = split.minus * origin.probability * mapped;
                JumpEdge je{k, e.target, e.source, JumpDirection::negative, 0.0, numerator, false};
                if (from.probability < kDivergenceThreshold) {
                    if (numerator <= kDivergenceThreshold) continue;
                    je.rate = std::numeric_limits<double>::infinity();
                    je.divergent = true;
                } else {
                    je.rate = numerator / from.probability;
                }
                edges.push_back(je);
            }
        }
    }
    return edges;
}

inline std::vector<JumpEdge> build_jump_edges(const SystemModel& model, const DecompositionState& decomp, double t) {
    auto edges = collect_jump_edges(model, decomp, t);
    for (const auto& e : edges) {
        if (e.divergent) throw DivergenceError(t, e.channel, e.source, e.target);
    }
    return edges;
}

inline std::vector<JumpEdge> edges_from(const std::vector<JumpEdge>& edges, int source) {
    std::vector<JumpEdge> out;
    for (const auto& e : edges) {
        if (e.source == source) out.push_back(e);
    }
    return out;
}

// Gamma[psi^alpha, t]
inline double total_jump_rate(const DecompositionState& decomp, const SystemModel& model, int source, double t) {
    double total = 0.0;
    for (const auto& e : collect_jump_edges(model, decomp, t)) {
        if (e.source != source) continue;
        if (e.divergent) throw DivergenceError(t, e.channel, e.source, e.target);
        total += e.rate;
    }
    return total;
}

struct TargetChoice {
    int channel{0};
    int target{0};
    double probability{0.0};
};

// Probabilities p_k / (Gamma dt) over (channel, target) pairs. Weights are rates, or flows
// when any edge is divergent.
inline std::vector<TargetChoice> target_distribution(const std::vector<JumpEdge>& edges_from_source) {
    double total = 0.0;
    bool any_divergent = false;
    for (const auto& e : edges_from_source) any_divergent = any_divergent || e.divergent;
    for (const auto& e : edges_from_source) total += any_divergent ? e.flow : e.rate;
    if (!(total > 0.0)) throw std::domain_error("target_distribution: total jump rate is zero");
    std::vector<TargetChoice> out;
    out.reserve(edges_from_source.size());
    for (const auto& e : edges_from_source) {
        out.push_back({e.channel, e.target, (any_divergent ? e.flow : e.rate) / total});
    }
    return out;
}

} // namespace nmwtd
