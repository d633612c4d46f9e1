// Monte Carlo engines (stepwise jump process and WTD sampling), the label
// sample matrix, ensemble averages and the cohort estimator of waiting-time distributions.

#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/decomposition.hpp"
#include "nmwtd/jump_process.hpp"
#include "nmwtd/master_equation.hpp"
#include "nmwtd/random.hpp"
#include "nmwtd/systems.hpp"
#include "nmwtd/wtd.hpp"

#include <algorithm>
#include <atomic>
#include <barrier>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nmwtd {

enum class EnsembleMode { analytic, self_consistent };

// A realization takes `label` from grid node `step` onward.
struct LabelRun {
    std::uint32_t step{0};
    std::int32_t label{0};
};

// N_t x N_S matrix of labels, stored column-wise as run-length encoded label changes.
class SampleMatrix {
public:
    SampleMatrix() = default;
    SampleMatrix(TimeGrid grid, std::size_t samples, int labels, std::uint64_t seed)
        : grid_(grid), columns_(samples), labels_(labels), seed_(seed) {}

    std::size_t rows() const { return grid_.size(); }
    std::size_t cols() const { return columns_.size(); }
    int num_labels() const { return labels_; }
    std::uint64_t seed() const { return seed_; }
    const TimeGrid& grid() const { return grid_; }

    const std::vector<LabelRun>& column(std::size_t j) const { return columns_[j]; }
    std::vector<LabelRun>& column(std::size_t j) { return columns_[j]; }

    int at(std::size_t i, std::size_t j) const {
        const auto& col = columns_[j];
        auto it = std::upper_bound(col.begin(), col.end(), i,
                                   [](std::size_t v, const LabelRun& r) { return v < r.step; });
        return std::prev(it)->label;
    }

    // Node index at which realization j first leaves the label it has at node i (rows() if never).
    std::size_t exit_after(std::size_t i, std::size_t j) const {
        const auto& col = columns_[j];
        auto it = std::upper_bound(col.begin(), col.end(), i,
                                   [](std::size_t v, const LabelRun& r) { return v < r.step; });
        return it == col.end() ? rows() : it->step;
    }

    // N_alpha(t_i) for every node: result[i][alpha].
    std::vector<std::vector<std::size_t>> occupations() const {
        const auto L = static_cast<std::size_t>(labels_);
        std::vector<std::vector<long long>> diff(rows() + 1, std::vector<long long>(L, 0));
        for (const auto& col : columns_) {
            for (std::size_t r = 0; r < col.size(); ++r) {
                const std::size_t end = r + 1 < col.size() ? col[r + 1].step : rows();
                diff[col[r].step][static_cast<std::size_t>(col[r].label)] += 1;
                diff[end][static_cast<std::size_t>(col[r].label)] -= 1;
            }
        }
        std::vector<std::vector<std::size_t>> occ(rows(), std::vector<std::size_t>(L, 0));
        std::vector<long long> running(L, 0);
        for (std::size_t i = 0; i < rows(); ++i) {
            for (std::size_t a = 0; a < L; ++a) {
                running[a] += diff[i][a];
                occ[i][a] = static_cast<std::size_t>(running[a]);
            }
        }
        return occ;
    }

    bool operator==(const SampleMatrix& o) const {
        if (rows() != o.rows() || cols() != o.cols() || labels_ != o.labels_ || seed_ != o.seed_) return false;
        for (std::size_t j = 0; j < cols(); ++j) {
            const auto& a = columns_[j];
            const auto& b = o.columns_[j];
            if (a.size() != b.size()) return false;
            for (std::size_t r = 0; r < a.size(); ++r) {
                if (a[r].step != b[r].step || a[r].label != b[r].label) return false;
            }
        }
        return true;
    }

private:
    TimeGrid grid_;
    std::vector<std::vector<LabelRun>> columns_;
    int labels_{0};
    std::uint64_t seed_{0};
};

struct JumpEvent {
    std::size_t realization{0};
    double time{0.0};     // stepwise: end of the step; WTD-based: interpolated tau*
    std::size_t node{0};  // first node carrying the new label
    int from{0};
    int to{0};
    int channel{0};
};

struct RunConfig {
    std::size_t samples{1000};
    double t0{0.0};
    double tend{5.0};
    double dt{1e-3};
    std::uint64_t seed{1};
    EnsembleMode mode{EnsembleMode::analytic};
    unsigned threads{1};

    TimeGrid grid() const { return TimeGrid::over(t0, tend, dt); }
};

struct RunResult {
    SampleMatrix matrix;
    std::vector<JumpEvent> events; // sorted by (realization, time)
    std::vector<std::vector<std::size_t>> occupations;
    std::vector<DecompositionState> history; // decomposition used at every node (stepwise)
    double max_jump_probability{0.0};        // max Gamma*dt encountered (stepwise)
};

namespace detail {

struct LabelStep {
    double rate{0.0};
    std::vector<TargetChoice> targets;
};

inline std::vector<LabelStep> label_steps(const SystemModel& model, const DecompositionState& state, double t) {
    const auto edges = collect_jump_edges(model, state, t);
    std::vector<LabelStep> out(static_cast<std::size_t>(model.num_labels()));
    for (int a = 0; a < model.num_labels(); ++a) {
        const auto from = edges_from(edges, a);
        auto& ls = out[static_cast<std::size_t>(a)];
        for (const auto& e : from) ls.rate += e.rate;
        if (ls.rate > 0.0) ls.targets = target_distribution(from);
    }
    return out;
}

inline const TargetChoice& pick(const std::vector<TargetChoice>& targets, double u) {
    double acc = 0.0;
    for (const auto& c : targets) {
        acc += c.probability;
        if (u < acc) return c;
    }
    return targets.back();
}

inline unsigned worker_count(unsigned threads, std::size_t samples) {
    const unsigned t = std::max(1u, threads);
    return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(1, samples)));
}

inline std::size_t block_begin(std::size_t n, unsigned workers, unsigned w) {
    return n * w / workers;
}

// Runs body(begin, end) over contiguous realization blocks; rethrows the first error by block.
template <class Body>
void parallel_blocks(std::size_t n, unsigned workers, Body&& body) {
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    body(w, block_begin(n, workers, w), block_begin(n, workers, w + 1));
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline void collect_events(RunResult& r, std::vector<std::vector<JumpEvent>>& per_block) {
    for (auto& b : per_block) r.events.insert(r.events.end(), b.begin(), b.end());
}

} // namespace detail

// Stepwise jump process: in every step a realization in psi^alpha jumps with probability
// Gamma[psi^alpha, t_i] dt to a target drawn from the target distribution.
// analytic mode: P_alpha from the decomposition evolution, trajectories are independent.
// self-consistent mode: P_alpha = N_alpha / N_S snapshotted at every step boundary.
inline RunResult run_stepwise(const SystemModel& model, const RunConfig& cfg) {
    if (cfg.samples < 1) throw std::invalid_argument("run_stepwise: need at least one realization");
    const TimeGrid grid = cfg.grid();
    const std::size_t ns = cfg.samples;
    const unsigned workers = detail::worker_count(cfg.threads, ns);
    const double dt = grid.step;

    RunResult result;
    result.matrix = SampleMatrix(grid, ns, model.num_labels(), cfg.seed);
    for (std::size_t j = 0; j < ns; ++j) result.matrix.column(j).push_back({0, 0});

    if (cfg.mode == EnsembleMode::analytic) {
        const auto evolution = make_decomposition(model, grid);
        std::vector<std::vector<detail::LabelStep>> table(grid.size() - 1);
        result.history.reserve(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double t = grid.time(i);
            result.history.push_back(evolution->at(t));
            if (i + 1 == grid.size()) break;
            table[i] = detail::label_steps(model, result.history.back(), t);
            for (const auto& ls : table[i]) {
                if (std::isfinite(ls.rate)) result.max_jump_probability = std::max(result.max_jump_probability, ls.rate * dt);
            }
        }
        std::vector<std::vector<JumpEvent>> events(workers);
        detail::parallel_blocks(ns, workers, [&](unsigned w, std::size_t begin, std::size_t end) {
            auto& local = events[w];
            for (std::size_t j = begin; j < end; ++j) {
                SplitMix64 rng(stream_seed(cfg.seed, j));
                auto& col = result.matrix.column(j);
                int label = 0;
                for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
                    const auto& ls = table[i][static_cast<std::size_t>(label)];
                    const double u = rng.uniform();
                    if (!std::isfinite(ls.rate)) {
                        const auto edges = collect_jump_edges(model, evolution->at(grid.time(i)), grid.time(i));
                        for (const auto& e : edges) {
                            if (e.divergent && e.source == label) throw DivergenceError(grid.time(i), e.channel, e.source, e.target);
                        }
                    }
                    if (u < ls.rate * dt) {
                        const auto& choice = detail::pick(ls.targets, rng.uniform());
                        local.push_back({j, grid.time(i + 1), i + 1, label, choice.target, choice.channel});
                        label = choice.target;
                        col.push_back({static_cast<std::uint32_t>(i + 1), label});
                    }
                }
            }
        });
        detail::collect_events(result, events);
    } else {
        const PropagatedDecomposition states(model, grid);
        std::vector<int> labels(ns, 0);
        std::vector<SplitMix64> rngs;
        rngs.reserve(ns);
        for (std::size_t j = 0; j < ns; ++j) rngs.emplace_back(stream_seed(cfg.seed, j));
        std::vector<std::vector<std::size_t>> counts(workers, std::vector<std::size_t>(static_cast<std::size_t>(model.num_labels()), 0));
        std::vector<std::vector<JumpEvent>> events(workers);

        std::size_t step = 0;
        std::vector<detail::LabelStep> current;
        std::exception_ptr failure;
        bool done = false;

        auto empirical = [&](std::size_t i, const std::vector<std::size_t>& occ) {
            const double t = grid.time(i);
            DecompositionState s;
            s.time = t;
            s.mode = DecompositionMode::empirical;
            const auto psi = states.states_at_node(i);
            for (int a = 0; a < model.num_labels(); ++a) {
                s.entries.push_back({a, PureState(psi[static_cast<std::size_t>(a)], a, true),
                                     static_cast<double>(occ[static_cast<std::size_t>(a)]) / static_cast<double>(ns)});
            }
            return s;
        };
        auto record = [&](std::size_t i, const std::vector<std::size_t>& occ) { result.history.push_back(empirical(i, occ)); };
        auto snapshot = [&](std::size_t i, const std::vector<std::size_t>& occ) {
            const double t = grid.time(i);
            const auto s = empirical(i, occ);
            result.history.push_back(s);
            build_jump_edges(model, s, t); // throws on N_alpha = 0 with pending demand
            current = detail::label_steps(model, s, t);
            for (const auto& ls : current) result.max_jump_probability = std::max(result.max_jump_probability, ls.rate * dt);
        };

        std::vector<std::size_t> occ0(static_cast<std::size_t>(model.num_labels()), 0);
        occ0[0] = ns;
        snapshot(0, occ0);
        if (grid.size() == 1) done = true;

        auto on_barrier = [&]() noexcept {
            std::vector<std::size_t> occ(static_cast<std::size_t>(model.num_labels()), 0);
            for (auto& c : counts) {
                for (std::size_t a = 0; a < occ.size(); ++a) {
                    occ[a] += c[a];
                    c[a] = 0;
                }
            }
            ++step;
            try {
                if (step + 1 >= grid.size()) {
                    done = true;
                    record(step, occ);
                    return;
                }
                snapshot(step, occ);
            } catch (...) {
                failure = std::current_exception();
                done = true;
            }
        };
        std::barrier sync(static_cast<std::ptrdiff_t>(workers), on_barrier);
        {
            std::vector<std::jthread> pool;
            for (unsigned w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    const std::size_t begin = detail::block_begin(ns, workers, w);
                    const std::size_t end = detail::block_begin(ns, workers, w + 1);
                    while (!done) {
                        const std::size_t i = step;
                        auto& cnt = counts[w];
                        for (std::size_t j = begin; j < end; ++j) {
                            int& label = labels[j];
                            const auto& ls = current[static_cast<std::size_t>(label)];
                            if (rngs[j].uniform() < ls.rate * dt) {
                                const auto& choice = detail::pick(ls.targets, rngs[j].uniform());
                                events[w].push_back({j, grid.time(i + 1), i + 1, label, choice.target, choice.channel});
                                label = choice.target;
                                result.matrix.column(j).push_back({static_cast<std::uint32_t>(i + 1), label});
                            }
                            ++cnt[static_cast<std::size_t>(label)];
                        }
                        sync.arrive_and_wait();
                    }
                });
            }
        }
        if (failure) std::rethrow_exception(failure);
        detail::collect_events(result, events);
        std::stable_sort(result.events.begin(), result.events.end(),
                         [](const JumpEvent& a, const JumpEvent& b) { return a.realization < b.realization; });
    }
    result.occupations = result.matrix.occupations();
    if (result.max_jump_probability > 0.1) {
        std::clog << "nmwtd: warning: max Gamma*dt = " << result.max_jump_probability << " exceeds 0.1\n";
    }
    return result;
}

// Jump-time sampling from the waiting-time distribution (analytic decomposition probabilities).
// After each jump a fresh eta is drawn at the grid node carrying the new label.
inline RunResult run_wtd_based(const SystemModel& model, const RunConfig& cfg) {
    if (cfg.mode != EnsembleMode::analytic) {
        throw std::invalid_argument("run_wtd_based: only analytic decomposition probabilities are supported");
    }
    if (cfg.samples < 1) throw std::invalid_argument("run_wtd_based: need at least one realization");
    const TimeGrid grid = cfg.grid();
    const std::size_t ns = cfg.samples;
    const unsigned workers = detail::worker_count(cfg.threads, ns);
    const auto evolution = make_decomposition(model, grid);
    const HazardTable hazard(model, *evolution, grid);

    RunResult result;
    result.matrix = SampleMatrix(grid, ns, model.num_labels(), cfg.seed);
    std::vector<std::vector<JumpEvent>> events(workers);

    auto targets_at = [&](int label, double t) -> std::vector<TargetChoice> {
        const auto from = edges_from(collect_jump_edges(model, evolution->at(t), t), label);
        double total = 0.0;
        for (const auto& e : from) total += e.divergent ? 1.0 : e.rate;
        if (total > 0.0) return target_distribution(from);
        return {};
    };

    detail::parallel_blocks(ns, workers, [&](unsigned w, std::size_t begin, std::size_t end) {
        auto& local = events[w];
        for (std::size_t j = begin; j < end; ++j) {
            SplitMix64 rng(stream_seed(cfg.seed, j));
            auto& col = result.matrix.column(j);
            col.push_back({0, 0});
            int label = 0;
            std::size_t node = 0;
            while (node + 1 < grid.size()) {
                const auto draw = hazard.sample(label, node, rng.uniform());
                if (!draw.jumped) break;
                // Gamma may vanish exactly at the interpolated time; fall back to the rest of the panel.
                std::vector<TargetChoice> targets = targets_at(label, draw.time);
                const double panel_start = grid.time(draw.node - 1);
                for (double frac : {0.5, 1.0}) {
                    if (!targets.empty()) break;
                    targets = targets_at(label, panel_start + frac * grid.step);
                }
                if (targets.empty()) {
                    throw std::logic_error("run_wtd_based: sampled a jump where the total rate vanishes");
                }
                const auto& choice = detail::pick(targets, rng.uniform());
                local.push_back({j, draw.time, draw.node, label, choice.target, choice.channel});
                label = choice.target;
                node = draw.node;
                col.push_back({static_cast<std::uint32_t>(node), label});
            }
        }
    });
    detail::collect_events(result, events);
    result.occupations = result.matrix.occupations();
    return result;
}

// Cohort survival estimate: C = {j : M[i][j] = alpha}, S_l = S_{l-1} with still-alpha members,
// W(t_l) = 1 - |S_l| / |C| for l = i..k.
struct CohortEstimate {
    int label{0};
    std::size_t start{0};
    std::size_t cohort_size{0};
    std::vector<double> times;
    std::vector<double> survival;
    std::vector<double> wtd;
};

// Cohort restricted to the given realizations (e.g. one trajectory class); members not in
// `label` at node i are ignored.
inline CohortEstimate estimate_wtd(const SampleMatrix& m, int label, std::size_t i, std::size_t k,
                                   const std::vector<std::size_t>& members) {
    if (i >= m.rows() || k >= m.rows() || k < i) throw std::out_of_range("estimate_wtd: bad step range");
    std::vector<std::size_t> exits_at(k - i + 1, 0); // leaving at node l (index l - i)
    std::size_t cohort = 0;
    for (std::size_t j : members) {
        if (j >= m.cols()) throw std::out_of_range("estimate_wtd: realization index out of range");
        if (m.at(i, j) != label) continue;
        ++cohort;
        const std::size_t exit = m.exit_after(i, j);
        if (exit <= k) ++exits_at[exit - i];
    }
    if (cohort == 0) throw std::domain_error("estimate_wtd: empty cohort");
    CohortEstimate est;
    est.label = label;
    est.start = i;
    est.cohort_size = cohort;
    std::size_t remaining = cohort;
    for (std::size_t l = i; l <= k; ++l) {
        remaining -= exits_at[l - i];
        const double s = static_cast<double>(remaining) / static_cast<double>(cohort);
        est.times.push_back(m.grid().time(l));
        est.survival.push_back(s);
        est.wtd.push_back(1.0 - s);
    }
    return est;
}

inline CohortEstimate estimate_wtd(const SampleMatrix& m, int label, std::size_t i, std::size_t k) {
    std::vector<std::size_t> all(m.cols());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    return estimate_wtd(m, label, i, k, all);
}

// Number of jumps realization j has made up to and including node i.
inline std::size_t jumps_before(const SampleMatrix& m, std::size_t j, std::size_t i) {
    const auto& col = m.column(j);
    auto it = std::upper_bound(col.begin(), col.end(), i, [](std::size_t v, const LabelRun& r) { return v < r.step; });
    return static_cast<std::size_t>(it - col.begin()) - 1;
}

// rho^(t) = sum_alpha (N_alpha / N_S) |psi^alpha(t)><psi^alpha(t)|
inline Matrix ensemble_average(const std::vector<std::size_t>& occupation, const std::vector<Vector>& states) {
    std::size_t total = 0;
    for (auto n : occupation) total += n;
    if (total == 0 || states.size() != occupation.size()) throw std::invalid_argument("ensemble_average: bad input");
    const auto d = states.front().size();
    Matrix rho = Matrix::Zero(d, d);
    for (std::size_t a = 0; a < states.size(); ++a) {
        if (occupation[a] == 0) continue;
        const Vector psi = states[a] / states[a].norm();
        rho.noalias() += (static_cast<double>(occupation[a]) / static_cast<double>(total)) * projector(psi);
    }
    return rho;
}

// One rho^ per grid node, with label states taken from `evolution`.
inline std::vector<Matrix> ensemble_average(const RunResult& run, const DecompositionEvolution& evolution) {
    std::vector<Matrix> out;
    const auto& grid = run.matrix.grid();
    out.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto snap = evolution.at(grid.time(i));
        std::vector<Vector> states;
        for (const auto& e : snap.entries) states.push_back(e.state.amplitudes);
        out.push_back(ensemble_average(run.occupations[i], states));
    }
    return out;
}

// Decomposition read back from a recorded run: P_alpha = N_alpha / N_S at the last node <= t,
// label states from the shared propagation.
class EmpiricalDecomposition final : public DecompositionEvolution {
public:
    EmpiricalDecomposition(const SystemModel& model, const RunResult& run)
        : states_(model, run.matrix.grid()), occupations_(run.occupations),
          samples_(static_cast<double>(run.matrix.cols())) {}

    DecompositionState at(double t) const override {
        auto s = states_.at(t);
        const auto& grid = states_.grid();
        const double x = (t - grid.t0) / grid.step;
        const auto i = std::min(grid.size() - 1, static_cast<std::size_t>(std::max(0.0, std::floor(x + 1e-9))));
        for (auto& e : s.entries) e.probability = static_cast<double>(occupations_[i][static_cast<std::size_t>(e.label)]) / samples_;
        s.mode = DecompositionMode::empirical;
        return s;
    }
    double t_begin() const override { return states_.t_begin(); }
    double t_end() const override { return states_.t_end(); }
    int num_labels() const override { return states_.num_labels(); }
    DecompositionMode mode() const override { return DecompositionMode::empirical; }

private:
    PropagatedDecomposition states_;
    std::vector<std::vector<std::size_t>> occupations_;
    double samples_;
};

// ---------------------------------------------------------------------------------------
// CSV export

inline void write_occupations_csv(std::ostream& os, const RunResult& run,
                                  const std::map<std::string, std::string>& meta = {}) {
    for (const auto& [k, v] : meta) os << "# " << k << "=" << v << "\n";
    os << "t";
    for (int a = 0; a < run.matrix.num_labels(); ++a) os << ",N_" << a;
    os << "\n";
    const auto& grid = run.matrix.grid();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        os << std::setprecision(10) << grid.time(i);
        for (auto n : run.occupations[i]) os << "," << n;
        os << "\n";
    }
}

// Run-length form: one row per realization at node 0 and at every node where its label changes.
inline void write_sample_matrix_csv(std::ostream& os, const SampleMatrix& m,
                                    const std::map<std::string, std::string>& meta = {}) {
    os << "# seed=" << m.seed() << "\n";
    os << "# N_S=" << m.cols() << "\n";
    os << "# N_t=" << m.rows() << "\n";
    os << "# dt=" << std::setprecision(17) << m.grid().step << "\n";
    os << "# t0=" << m.grid().t0 << "\n";
    for (const auto& [k, v] : meta) os << "# " << k << "=" << v << "\n";
    os << "# encoding=run-length (label holds until the next row of the same realization)\n";
    os << "time_index,realization_index,label\n";
    for (std::size_t j = 0; j < m.cols(); ++j) {
        for (const auto& r : m.column(j)) os << r.step << "," << j << "," << r.label << "\n";
    }
}

// Label of the first `count` realizations at every node: `t,r0,r1,...`.
inline void write_trajectories_csv(std::ostream& os, const SampleMatrix& m, std::size_t count) {
    count = std::min(count, m.cols());
    os << "t";
    for (std::size_t j = 0; j < count; ++j) os << ",r" << j;
    os << "\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        os << std::setprecision(10) << m.grid().time(i);
        for (std::size_t j = 0; j < count; ++j) os << "," << m.at(i, j);
        os << "\n";
    }
}

} // namespace nmwtd
