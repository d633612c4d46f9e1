// nmwtd: command-line front end for the jump-process simulations and WTD curves.
//
//   nmwtd simulate --preset tla_fig2 --mode compare --out run1
//   nmwtd wtd --preset tla_fig2 --trajectory 0:0 --trajectory 0:0,1:0.4 --eta 0.1,0.5 --out wtd1
//   nmwtd simulate --config run1/manifest.json --out run2
//
// Exit codes: 0 success, 1 usage or input error, 2 divergence diagnostic.

#include "nmwtd/nmwtd.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nmwtd;

namespace {

constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Config {
    std::string command;
    std::string preset;
    std::string model_file;
    std::string mode{"stepwise"};
    double t0{0.0};
    double tend{5.0};
    double dt{1e-3};
    std::optional<std::size_t> samples;
    std::uint64_t seed{1};
    std::string ensemble_mode{"analytic"};
    unsigned threads{1};
    std::string out{"nmwtd_out"};
    std::vector<std::string> trajectories;
    std::vector<double> eta;
};

// Run parameters only: output directory and thread count do not change results.
json to_json(const Config& c) {
    json j;
    j["command"] = c.command;
    if (!c.preset.empty()) j["preset"] = c.preset;
    if (!c.model_file.empty()) j["model_file"] = c.model_file;
    j["mode"] = c.mode;
    j["t0"] = c.t0;
    j["tend"] = c.tend;
    j["dt"] = c.dt;
    j["samples"] = c.samples.value_or(0);
    j["seed"] = c.seed;
    j["ensemble_mode"] = c.ensemble_mode;
    if (c.command == "wtd") {
        j["trajectories"] = c.trajectories;
        j["eta"] = c.eta;
    }
    return j;
}

void overlay(Config& c, const json& file) {
    // a manifest carries its run parameters under "config"
    const json& j = file.contains("config") && file.at("config").is_object() ? file.at("config") : file;
    if (j.contains("preset")) {
        c.preset = j.at("preset").get<std::string>();
        c.model_file.clear();
    }
    if (j.contains("model_file")) {
        c.model_file = j.at("model_file").get<std::string>();
        if (!j.contains("preset")) c.preset.clear();
    }
    if (j.contains("mode")) c.mode = j.at("mode").get<std::string>();
    if (j.contains("t0")) c.t0 = j.at("t0").get<double>();
    if (j.contains("tend")) c.tend = j.at("tend").get<double>();
    if (j.contains("dt")) c.dt = j.at("dt").get<double>();
    if (j.contains("samples")) c.samples = j.at("samples").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("ensemble_mode")) c.ensemble_mode = j.at("ensemble_mode").get<std::string>();
    if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("trajectories")) c.trajectories = j.at("trajectories").get<std::vector<std::string>>();
    if (j.contains("eta")) c.eta = j.at("eta").get<std::vector<double>>();
}

std::string git_blob_sha1(const std::string& content) {
    const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
        throw std::runtime_error("SHA-1 digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

EnsembleMode parse_ensemble_mode(const std::string& s) {
    if (s == "analytic" || s == "analytic-P") return EnsembleMode::analytic;
    if (s == "self-consistent") return EnsembleMode::self_consistent;
    throw UsageError("unknown ensemble mode '" + s + "' (expected analytic or self-consistent)");
}

struct Loaded {
    SystemModel model;
    RunConfig run;
};

Loaded resolve(Config& c) {
    if (c.preset.empty() == c.model_file.empty()) throw UsageError("give exactly one of --preset or --model-file");
    if (!(c.dt > 0.0)) throw UsageError("dt must be > 0");
    if (!(c.tend > c.t0)) throw UsageError("tend must exceed t0");
    if (c.samples && *c.samples < 1) throw UsageError("samples must be >= 1");
    if (c.threads < 1) throw UsageError("threads must be >= 1");

    Loaded l;
    if (!c.preset.empty()) {
        Preset p;
        try {
            p = preset(c.preset);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        l.model = p.model;
        if (!c.samples) c.samples = p.defaults.samples;
    } else {
        c.model_file = fs::absolute(c.model_file).lexically_normal().string();
        try {
            l.model = load_model_file(c.model_file);
        } catch (const std::exception& e) {
            throw UsageError(e.what());
        }
        if (!c.samples) c.samples = 1000;
    }
    l.run.samples = *c.samples;
    l.run.t0 = c.t0;
    l.run.tend = c.tend;
    l.run.dt = c.dt;
    l.run.seed = c.seed;
    l.run.mode = parse_ensemble_mode(c.ensemble_mode);
    l.run.threads = c.threads;
    try {
        (void)l.run.grid();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return l;
}

class Output {
public:
    explicit Output(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    std::ofstream open(const std::string& name) {
        std::ofstream f(dir_ / name, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
        written_.push_back(name);
        return f;
    }

    void manifest(const Config& c, const SystemModel& model, json extra) {
        const json cfg = to_json(c);
        json m;
        m["nmwtd_version"] = kVersion;
        m["config"] = cfg;
        m["config_sha1"] = git_blob_sha1(cfg.dump());
        m["seed"] = c.seed;
        json params;
        params["system"] = model.name;
        params["dimension"] = model.dimension;
        params["labels"] = model.num_labels();
        json chans = json::array();
        for (const auto& ch : model.channels) {
            json cj;
            if (ch.spectral) {
                cj["gamma0"] = ch.spectral->gamma0;
                cj["lambda"] = ch.spectral->lambda;
                cj["delta"] = ch.spectral->delta;
            }
            json edges = json::array();
            for (const auto& e : ch.edges) edges.push_back({e.source, e.target});
            cj["edges"] = edges;
            chans.push_back(cj);
        }
        params["channels"] = chans;
        m["parameters"] = params;
        for (auto& [k, v] : extra.items()) m[k] = v;
        m["outputs"] = written_;
        std::ofstream f(dir_ / "manifest.json", std::ios::binary);
        if (!f) throw std::runtime_error("cannot write manifest");
        f << m.dump(2) << "\n";
    }

private:
    fs::path dir_;
    std::vector<std::string> written_;
};

std::map<std::string, std::string> run_meta(const Config& c) {
    return {{"system", c.preset.empty() ? c.model_file : c.preset}, {"mode", c.mode}, {"ensemble_mode", c.ensemble_mode}};
}

RunResult simulate_ensemble(const Loaded& l, const std::string& engine) {
    if (engine == "wtd") {
        if (l.run.mode != EnsembleMode::analytic) throw UsageError("the wtd engine supports only the analytic ensemble mode");
        return run_wtd_based(l.model, l.run);
    }
    return run_stepwise(l.model, l.run);
}

void write_run_files(Output& out, const Config& c, const RunResult& run) {
    const auto meta = run_meta(c);
    {
        auto f = out.open("occupations.csv");
        write_occupations_csv(f, run, meta);
    }
    {
        auto f = out.open("trajectories.csv");
        write_trajectories_csv(f, run.matrix, 3);
    }
    {
        auto f = out.open("sample_matrix.csv");
        write_sample_matrix_csv(f, run.matrix, meta);
    }
}

int cmd_simulate(Config& c) {
    static const std::vector<std::string> modes{"stepwise", "wtd", "master-eq", "compare"};
    if (std::find(modes.begin(), modes.end(), c.mode) == modes.end()) {
        throw UsageError("unknown mode '" + c.mode + "' (expected stepwise, wtd, master-eq or compare)");
    }
    auto l = resolve(c);
    Output out(c.out);
    json extra = json::object();

    std::optional<RunResult> run;
    if (c.mode != "master-eq") {
        run = simulate_ensemble(l, c.mode == "wtd" ? "wtd" : "stepwise");
        write_run_files(out, c, *run);
        extra["jumps"] = run->events.size();
        extra["max_jump_probability"] = run->max_jump_probability;
    }
    if (c.mode == "master-eq" || c.mode == "compare") {
        const auto sol = integrate_tcl(l.model, projector(l.model.initial_state()), c.t0, c.tend, c.dt);
        {
            auto f = out.open("master_eq.csv");
            write_master_eq_csv(f, sol);
        }
        extra["min_eigenvalue"] = sol.most_negative_eigenvalue();
        if (run) {
            const auto dec = make_decomposition(l.model, run->matrix.grid());
            const auto rho_hat = ensemble_average(*run, *dec);
            auto f = out.open("compare.csv");
            f << "t,max_abs_diff,min_eig_me\n";
            double worst = 0.0;
            for (std::size_t i = 0; i < sol.size(); ++i) {
                const double d = max_abs_diff(rho_hat[i], sol.rho[i]);
                worst = std::max(worst, d);
                f << std::setprecision(10) << sol.times[i] << "," << std::setprecision(12) << d << ","
                  << sol.min_eigenvalue[i] << "\n";
            }
            extra["max_abs_diff"] = worst;
        }
    }
    out.manifest(c, l.model, extra);
    return 0;
}

// ---------------------------------------------------------------------------------------
// wtd subcommand

struct Step {
    int label;
    double time;
};

std::vector<Step> parse_trajectory(const std::string& spec) {
    std::vector<Step> steps;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw UsageError("trajectory entry '" + item + "' is not label:time");
        try {
            std::size_t used = 0;
            const int label = std::stoi(item.substr(0, colon), &used);
            if (used != colon) throw std::invalid_argument(item);
            const std::string ts = item.substr(colon + 1);
            const double t = std::stod(ts, &used);
            if (used != ts.size()) throw std::invalid_argument(item);
            steps.push_back({label, t});
        } catch (const std::logic_error&) {
            throw UsageError("trajectory entry '" + item + "' is not label:time");
        }
    }
    if (steps.empty()) throw UsageError("empty trajectory spec");
    return steps;
}

// Entries are checkpoints: the trajectory sits in `label` at `time`. The first must be 0:t0;
// each later label must be reachable from the previous one by a declared edge whose rate
// has the right sign somewhere in between.
void check_trajectory(const std::vector<Step>& steps, const SystemModel& model, const Config& c, const std::string& spec) {
    auto fail = [&](const std::string& why) { throw UsageError("inconsistent trajectory '" + spec + "': " + why); };
    if (steps.front().label != 0 || std::abs(steps.front().time - c.t0) > 1e-12) fail("must start with 0:t0");
    for (std::size_t s = 0; s < steps.size(); ++s) {
        if (steps[s].label < 0 || steps[s].label >= model.num_labels()) fail("label out of range");
        if (steps[s].time < c.t0 || steps[s].time > c.tend) fail("time outside the window");
        if (s == 0) continue;
        if (!(steps[s].time > steps[s - 1].time)) fail("times must increase");
        const int a = steps[s - 1].label, b = steps[s].label;
        if (a == b) fail("consecutive entries must differ");
        const double lo = steps[s - 1].time, hi = steps[s].time;
        const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / c.dt));
        bool ok = false;
        for (std::size_t q = 1; q <= n && !ok; ++q) {
            const double t = std::min(hi, lo + static_cast<double>(q) * c.dt);
            for (int k = 0; k < model.num_channels() && !ok; ++k) {
                const double rate = model.rate(k, t);
                for (const auto& e : model.channels[static_cast<std::size_t>(k)].edges) {
                    if ((e.source == a && e.target == b && rate > 0.0) || (e.source == b && e.target == a && rate < 0.0)) ok = true;
                }
            }
        }
        if (!ok) fail("no channel allows " + std::to_string(a) + " -> " + std::to_string(b) + " before t = " + std::to_string(hi));
    }
}

// Labels reachable only through one channel, with no outgoing positive edge.
std::optional<int> product_channel(const SystemModel& model, int label) {
    std::optional<int> channel;
    for (int k = 0; k < model.num_channels(); ++k) {
        for (const auto& e : model.channels[static_cast<std::size_t>(k)].edges) {
            if (e.source == label) return std::nullopt;
            if (e.target == label) {
                if (channel && *channel != k) return std::nullopt;
                channel = k;
            }
        }
    }
    return channel;
}

bool history_matches(const SampleMatrix& m, std::size_t j, std::size_t node, const std::vector<Step>& steps) {
    std::size_t s = 0;
    for (const auto& r : m.column(j)) {
        if (r.step > node) break;
        if (s >= steps.size() || r.label != steps[s].label) return false;
        ++s;
    }
    return s == steps.size();
}

int cmd_wtd(Config& c) {
    if (c.mode != "stepwise" && c.mode != "wtd") throw UsageError("wtd: --mode must be stepwise or wtd");
    if (c.trajectories.empty()) throw UsageError("wtd: at least one --trajectory is required");
    for (double e : c.eta) {
        if (!(e >= 0.0 && e < 1.0)) throw UsageError("eta values must lie in [0, 1)");
    }
    auto l = resolve(c);

    std::vector<std::vector<Step>> specs;
    for (const auto& t : c.trajectories) {
        specs.push_back(parse_trajectory(t));
        check_trajectory(specs.back(), l.model, c, t);
    }

    const auto run = simulate_ensemble(l, c.mode);
    const auto& grid = run.matrix.grid();
    const auto dec = make_decomposition(l.model, grid);
    const std::size_t last = grid.size() - 1;

    Output out(c.out);
    json summary = json::array();
    for (std::size_t n = 0; n < specs.size(); ++n) {
        const auto& steps = specs[n];
        const int label = steps.back().label;
        const auto node = static_cast<std::size_t>(std::ceil((steps.back().time - grid.t0) / grid.step - 1e-9));
        const double T = grid.time(node);
        const std::map<std::string, std::string> meta{{"trajectory", c.trajectories[n]}};
        const std::string stem = "wtd_" + std::to_string(n);
        json info{{"trajectory", c.trajectories[n]}, {"label", label}, {"T", T}};

        const auto analytic = wtd_solve(l.model, *dec, label, T, grid.tend() - T, grid.step);
        {
            auto f = out.open(stem + "_analytic.csv");
            write_wtd_csv(f, analytic, meta);
            for (double e : c.eta) {
                const auto tau = sample_waiting_time(analytic, e);
                f << "# eta=" << std::setprecision(17) << e << " tau_star=";
                if (tau) f << *tau; else f << "none";
                f << "\n";
            }
        }

        std::vector<std::size_t> members;
        for (std::size_t j = 0; j < run.matrix.cols(); ++j) {
            if (history_matches(run.matrix, j, node, steps)) members.push_back(j);
        }
        info["cohort"] = members.size();
        if (members.empty()) {
            std::cerr << "warning: empty cohort for trajectory '" << c.trajectories[n] << "', no empirical curve\n";
        } else {
            const auto est = estimate_wtd(run.matrix, label, node, last, members);
            WTDCurve emp;
            emp.label = label;
            emp.T = T;
            for (std::size_t q = 0; q < est.wtd.size(); ++q) {
                emp.tau.push_back(est.times[q] - est.times.front());
                emp.F.push_back(est.wtd[q]);
            }
            finalize_defective(emp);
            auto f = out.open(stem + "_empirical.csv");
            write_wtd_csv(f, emp, meta);
        }

        if (const auto k = product_channel(l.model, label)) {
            const auto neg = sign_segments(l.model.channels[static_cast<std::size_t>(*k)].rate, grid.t0, grid.tend()).negative_intervals();
            const auto P = [&](double t) { return dec->at(t).probability(label); };
            try {
                WTDCurve prod;
                prod.label = label;
                prod.T = T;
                prod.tau = analytic.tau;
                for (double tau : analytic.tau) prod.F.push_back(wtd_product_negative_regions(P, neg, T, tau));
                finalize_defective(prod);
                auto f = out.open(stem + "_product.csv");
                write_wtd_csv(f, prod, meta);
            } catch (const std::domain_error& e) {
                std::cerr << "warning: no product form for trajectory '" << c.trajectories[n] << "': " << e.what() << "\n";
            }
        }
        summary.push_back(info);
    }
    out.manifest(c, l.model, {{"trajectories", summary}});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Non-Markovian quantum jump simulations and waiting-time distributions"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Config flags;
    std::string config_file;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--preset", flags.preset, "tla_fig2, lambda_fig3 or ladder_fig4");
        sub->add_option("--model-file", flags.model_file, "JSON model description");
        sub->add_option("--mode", flags.mode, "simulate: stepwise|wtd|master-eq|compare; wtd: stepwise|wtd")->capture_default_str();
        sub->add_option("--t0", flags.t0, "window start (1/lambda)")->capture_default_str();
        sub->add_option("--tend", flags.tend, "window end (1/lambda)")->capture_default_str();
        sub->add_option("--dt", flags.dt, "time step (1/lambda)")->capture_default_str();
        sub->add_option("--samples", flags.samples, "number of realizations N_S (default: preset value or 1000)");
        sub->add_option("--seed", flags.seed, "master seed")->capture_default_str();
        sub->add_option("--ensemble-mode", flags.ensemble_mode, "analytic|self-consistent")->capture_default_str();
        sub->add_option("--threads", flags.threads, "worker threads (does not change results)")->capture_default_str();
        sub->add_option("--out", flags.out, "output directory")->capture_default_str();
        sub->add_option("--config", config_file, "JSON config or manifest; its values override flags");
    };
    auto* simulate = app.add_subcommand("simulate", "run an ensemble and/or the master equation");
    add_common(simulate);
    auto* wtd = app.add_subcommand("wtd", "analytic, empirical and product-form WTD curves for trajectory classes");
    add_common(wtd);
    wtd->add_option("--trajectory", flags.trajectories, "label:time checkpoints, comma separated, starting with 0:t0");
    wtd->add_option("--eta", flags.eta, "uniform variates for inverse sampling of tau*")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        Config c = flags;
        c.command = simulate->parsed() ? "simulate" : "wtd";
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in) throw UsageError("cannot open config " + config_file);
            json j;
            try {
                j = json::parse(in);
            } catch (const json::exception& e) {
                throw UsageError("config " + config_file + ": " + e.what());
            }
            try {
                overlay(c, j);
            } catch (const json::exception& e) {
                throw UsageError("config " + config_file + ": " + e.what());
            }
        }
        return c.command == "simulate" ? cmd_simulate(c) : cmd_wtd(c);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 2;
    } catch (const ZeroNormError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
