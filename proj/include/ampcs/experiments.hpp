#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "ampcs/amp.hpp"
#include "ampcs/errors.hpp"
#include "ampcs/instance.hpp"
#include "ampcs/lasso.hpp"
#include "ampcs/parallel.hpp"
#include "ampcs/prior.hpp"
#include "ampcs/rng.hpp"
#include "ampcs/state_evolution.hpp"

namespace ampcs {

inline constexpr const char* version_string = "0.1.0";

enum class ExperimentKind { Observables, PhaseTransition, OperatingChars };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::Observables: return "observables";
    case ExperimentKind::PhaseTransition: return "phase-transition";
    default: return "operating-chars";
    }
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
    if (s == "observables") return ExperimentKind::Observables;
    if (s == "phase-transition") return ExperimentKind::PhaseTransition;
    if (s == "operating-chars") return ExperimentKind::OperatingChars;
    throw config_error("unknown experiment '" + s + "'");
}

namespace detail {

inline double parse_number(const std::string& s, const std::string& context) {
    try {
        std::size_t used = 0;
        const double x = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw config_error(context + ": '" + s + "' is not a number");
    }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

} // namespace detail

/// Prior specs: "zero", "bernoulli:EPS[:VALUE]", "three-point:EPS:MU",
/// "mixture:P@X,P@X,...", "gg:ALPHA[:SCALE]".
inline PriorDistribution parse_prior(const std::string& spec) {
    const auto parts = detail::split(spec, ':');
    if (parts.empty()) throw config_error("empty prior spec");
    const auto& kind = parts[0];
    auto num = [&](std::size_t i) { return detail::parse_number(parts.at(i), "prior '" + spec + "'"); };
    try {
        if (kind == "zero" && parts.size() == 1) return PriorDistribution::point_mass(0.0);
        if (kind == "bernoulli" && (parts.size() == 2 || parts.size() == 3)) {
            return PriorDistribution::bernoulli(num(1), parts.size() == 3 ? num(2) : 1.0);
        }
        if (kind == "three-point" && parts.size() == 3) return PriorDistribution::three_point(num(1), num(2));
        if (kind == "gg" && (parts.size() == 2 || parts.size() == 3)) {
            return PriorDistribution::generalized_gaussian(num(1), parts.size() == 3 ? num(2) : 1.0);
        }
        if (kind == "mixture" && parts.size() == 2) {
            std::vector<Atom> atoms;
            for (const auto& item : detail::split(parts[1], ',')) {
                const auto at = item.find('@');
                if (at == std::string::npos) throw config_error("mixture atom '" + item + "' must be P@X");
                atoms.push_back({detail::parse_number(item.substr(at + 1), "prior atom"),
                                 detail::parse_number(item.substr(0, at), "prior weight")});
            }
            return PriorDistribution::mixture(std::move(atoms));
        }
    } catch (const config_error&) {
        throw;
    } catch (const error& e) {
        throw config_error("prior '" + spec + "': " + e.what());
    }
    throw config_error("unrecognized prior spec '" + spec + "'");
}

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::Observables;
    std::int64_t big_n = 5000;
    std::int64_t instances = 20;
    std::uint64_t master_seed = 1;
    std::vector<double> deltas{0.3};
    std::vector<double> rhos;
    std::vector<double> alphas;
    std::vector<double> lambdas;
    /// When `lambdas` is empty, each operating-chars cell uses lambda(tau0 + offset).
    std::vector<double> tau_offsets{0.3, 0.8, 1.5};
    std::string prior = "bernoulli:0.045";
    double v = 0.0;
    std::string policy = "m";
    std::optional<double> tau;
    bool onsager = true;
    std::int64_t max_iters = 30;
    double rel_tol = 1e-10;
    double success_tol = 1e-3;
    std::string operator_kind = "gaussian";
    /// IST baseline: theta = ist_tau * sigma_hat, gradient step ist_step / ||A||^2.
    double ist_tau = 2.5;
    double ist_step = 1.9;
    std::string output = "results";
    unsigned threads = 0;

    static ExperimentConfig defaults(ExperimentKind kind) {
        ExperimentConfig c;
        c.experiment = kind;
        switch (kind) {
        case ExperimentKind::Observables: break;
        case ExperimentKind::PhaseTransition:
            c.big_n = 500;
            c.instances = 50;
            c.deltas = {0.1, 0.3, 0.5};
            for (int i = 1; i <= 33; ++i) c.rhos.push_back(0.03 * i);
            c.max_iters = 1000;
            break;
        case ExperimentKind::OperatingChars:
            c.big_n = 500;
            c.instances = 50;
            c.deltas = {0.3, 0.5};
            c.alphas = {0.5, 1.0};
            c.prior = "gg:1";
            c.max_iters = 100'000;
            c.success_tol = 1e-9;
            break;
        }
        return c;
    }

    OperatorKind op() const {
        if (operator_kind == "gaussian") return OperatorKind::DenseGaussian;
        if (operator_kind == "dct") return OperatorKind::PartialFourier;
        throw config_error("operator must be 'gaussian' or 'dct'");
    }

    void validate() const {
        auto need = [](bool ok, const std::string& msg) {
            if (!ok) throw config_error(msg);
        };
        need(big_n >= 1, "N must be >= 1");
        need(instances >= 1, "instances must be >= 1");
        need(!deltas.empty(), "delta grid must be nonempty");
        for (double d : deltas) need(d > 0.0 && d < 1.0, "delta values must lie in (0, 1)");
        need(v >= 0.0, "v must be >= 0");
        need(max_iters >= 1, "max_iters must be >= 1");
        need(rel_tol >= 0.0, "rel_tol must be >= 0");
        need(success_tol > 0.0, "success_tol must be > 0");
        need(ist_tau > 0.0 && ist_step > 0.0 && ist_step < 2.0, "IST needs tau > 0 and step factor in (0, 2)");
        need(policy == "m" || policy == "t" || policy == "a" || policy == "zero", "policy must be one of m, t, a, zero");
        if (policy == "t") need(tau && *tau > 0.0, "policy t needs --tau > 0");
        if (policy == "a") need(lambdas.size() == 1 && lambdas[0] >= 0.0, "policy a needs exactly one --lambda >= 0");
        (void)op();
        switch (experiment) {
        case ExperimentKind::Observables: (void)parse_prior(prior); break;
        case ExperimentKind::PhaseTransition:
            need(!rhos.empty(), "rho grid must be nonempty");
            for (double r : rhos) need(r > 0.0 && r <= 1.0, "rho values must lie in (0, 1]");
            need(policy == "m" || policy == "t", "phase-transition runs the m or t policy");
            break;
        case ExperimentKind::OperatingChars:
            need(!alphas.empty(), "alpha grid must be nonempty");
            for (double a : alphas) need(a > 0.0, "alpha values must be > 0");
            need(!lambdas.empty() || !tau_offsets.empty(), "lambda grid must be nonempty");
            for (double l : lambdas) need(l >= 0.0, "lambda values must be >= 0");
            for (double o : tau_offsets) need(o > 0.0, "tau offsets must be > 0");
            break;
        }
    }

    ThresholdPolicy make_policy(double delta) const {
        if (policy == "m") return MinimaxPolicy{minimax_tau(delta)};
        if (policy == "t") return FixedTauPolicy{*tau};
        if (policy == "a") return LassoPolicy{lambdas.at(0)};
        return BasisPursuitPolicy::geometric();
    }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["experiment"] = to_string(c.experiment);
    j["N"] = c.big_n;
    j["instances"] = c.instances;
    j["master_seed"] = c.master_seed;
    j["deltas"] = c.deltas;
    j["rhos"] = c.rhos;
    j["alphas"] = c.alphas;
    j["lambdas"] = c.lambdas;
    j["tau_offsets"] = c.tau_offsets;
    j["prior"] = c.prior;
    j["v"] = c.v;
    j["policy"] = c.policy;
    j["tau"] = c.tau ? nlohmann::json(*c.tau) : nlohmann::json(nullptr);
    j["onsager"] = c.onsager;
    j["max_iters"] = c.max_iters;
    j["rel_tol"] = c.rel_tol;
    j["success_tol"] = c.success_tol;
    j["operator"] = c.operator_kind;
    j["ist_tau"] = c.ist_tau;
    j["ist_step"] = c.ist_step;
    j["output"] = c.output;
    j["threads"] = c.threads;
    return j;
}

/// Overlays the keys present in `j` on `c`; unknown keys are errors.
inline void apply_json(ExperimentConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw config_error("config must be a JSON object");
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "experiment") c.experiment = parse_experiment_kind(val.get<std::string>());
            else if (key == "N") c.big_n = val.get<std::int64_t>();
            else if (key == "instances") c.instances = val.get<std::int64_t>();
            else if (key == "master_seed") c.master_seed = val.get<std::uint64_t>();
            else if (key == "deltas") c.deltas = val.get<std::vector<double>>();
            else if (key == "rhos") c.rhos = val.get<std::vector<double>>();
            else if (key == "alphas") c.alphas = val.get<std::vector<double>>();
            else if (key == "lambdas") c.lambdas = val.get<std::vector<double>>();
            else if (key == "tau_offsets") c.tau_offsets = val.get<std::vector<double>>();
            else if (key == "prior") c.prior = val.get<std::string>();
            else if (key == "v") c.v = val.get<double>();
            else if (key == "policy") c.policy = val.get<std::string>();
            else if (key == "tau") c.tau = val.is_null() ? std::nullopt : std::optional<double>(val.get<double>());
            else if (key == "onsager") c.onsager = val.get<bool>();
            else if (key == "max_iters") c.max_iters = val.get<std::int64_t>();
            else if (key == "rel_tol") c.rel_tol = val.get<double>();
            else if (key == "success_tol") c.success_tol = val.get<double>();
            else if (key == "operator") c.operator_kind = val.get<std::string>();
            else if (key == "ist_tau") c.ist_tau = val.get<double>();
            else if (key == "ist_step") c.ist_step = val.get<double>();
            else if (key == "output") c.output = val.get<std::string>();
            else if (key == "threads") c.threads = val.get<unsigned>();
            else throw config_error("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
}

/// Reads a config file. The experiment defaults are taken from its "experiment"
/// key unless `kind` is given.
inline ExperimentConfig load_config(const std::filesystem::path& path, std::optional<ExperimentKind> kind = {}) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config " + path.string() + ": " + e.what());
    }
    ExperimentKind k = kind.value_or(ExperimentKind::Observables);
    if (!kind) {
        if (!j.contains("experiment")) throw config_error("config needs an \"experiment\" key");
        k = parse_experiment_kind(j["experiment"].get<std::string>());
    } else if (j.contains("experiment") && parse_experiment_kind(j["experiment"].get<std::string>()) != *kind) {
        throw config_error("config experiment does not match the subcommand");
    }
    ExperimentConfig c = ExperimentConfig::defaults(k);
    apply_json(c, j);
    c.experiment = k;
    return c;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Midpoint rule for even counts; NaN when empty.
inline double median(std::vector<double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const std::size_t m = xs.size() / 2;
    return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
    std::vector<double> r(xs.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw parameter_error("spearman: need two samples of equal size >= 2");
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

struct Crossover {
    enum class Status { Interior, BelowGrid, AboveGrid };
    double rho = std::numeric_limits<double>::quiet_NaN();
    Status status = Status::Interior;
};

inline std::string to_string(Crossover::Status s) {
    switch (s) {
    case Crossover::Status::Interior: return "interior";
    case Crossover::Status::BelowGrid: return "below-grid";
    default: return "above-grid";
    }
}

/// First rho where the success fraction drops below 1/2, by linear interpolation
/// with the preceding grid point. rho must be increasing.
inline Crossover fifty_percent_crossing(const std::vector<double>& rho, const std::vector<double>& frac) {
    if (rho.size() != frac.size() || rho.empty()) throw parameter_error("crossover: grid and fractions differ");
    for (std::size_t j = 0; j < rho.size(); ++j) {
        if (frac[j] < 0.5) {
            if (j == 0) return {std::numeric_limits<double>::quiet_NaN(), Crossover::Status::BelowGrid};
            const double t = (frac[j - 1] - 0.5) / (frac[j - 1] - frac[j]);
            return {rho[j - 1] + t * (rho[j] - rho[j - 1]), Crossover::Status::Interior};
        }
    }
    return {std::numeric_limits<double>::quiet_NaN(), Crossover::Status::AboveGrid};
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

inline std::string fmt(double x) {
    if (std::isnan(x)) return "NA";
    std::ostringstream s;
    s << std::setprecision(17) << x;
    return s.str();
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
        if (!out_) throw error("cannot open " + path.string() + " for writing");
        row(header);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
        if (!out_) throw error("write failed: " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

inline nlohmann::json versions_json() {
    nlohmann::json j;
    j["ampcs"] = version_string;
    j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    j["boost"] = BOOST_LIB_VERSION;
    j["fftw"] = std::string(fftw_version);
    j["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                         "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
#if defined(__VERSION__)
    j["compiler"] = __VERSION__;
#endif
    return j;
}

inline std::filesystem::path prepare_output(const std::string& dir) {
    std::filesystem::path p(dir);
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw error("cannot create output directory " + dir + ": " + ec.message());
    return p;
}

inline void write_manifest(const std::filesystem::path& path, const ExperimentConfig& cfg, double wall_seconds,
                           const std::vector<std::string>& outputs, const nlohmann::json& summary) {
    nlohmann::json j;
    j["experiment"] = to_string(cfg.experiment);
    j["config"] = to_json(cfg);
    j["master_seed"] = cfg.master_seed;
    j["versions"] = versions_json();
    j["wall_time_seconds"] = wall_seconds;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ts;
    ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    j["timestamp"] = ts.str();
    j["outputs"] = outputs;
    j["summary"] = summary;
    std::ofstream out(path);
    if (!out) throw error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Observables versus iteration
// ---------------------------------------------------------------------------

struct ObservablesRow {
    double delta = 0.0;
    std::size_t t = 0;
    std::size_t completed = 0;
    double mse = 0.0, mse_nz = 0.0, far = 0.0, mdr = 0.0, sigma_true = 0.0, sigma_hat = 0.0;
    /// SE predictions; NaN marks a prediction that is unavailable (basis-pursuit policy).
    double mse_se = 0.0, mse_nz_se = 0.0, far_se = 0.0, mdr_se = 0.0, sigma_se = 0.0;
};

struct ObservablesRun {
    double delta = 0.0;
    std::size_t instance = 0;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::vector<ObservableRecord> records;
};

struct ObservablesResult {
    std::vector<ObservablesRow> rows;
    std::vector<ObservablesRun> runs;
    /// Per delta: SE state sequence S_0..S_T (empty when unavailable).
    std::vector<std::vector<SEState>> se;
};

/// SE prediction of the observables of x^t: S_{t-1} for t >= 1, the zero estimate at t = 0.
inline ObservableRecord se_observables(const std::vector<SEState>& states, std::size_t t) {
    ObservableRecord r;
    r.t = t;
    const auto& prior = states.front().prior;
    if (t == 0) {
        r.mse = second_moment(prior);
        const double nz = prior.nonzero_mass();
        r.mse_nz = nz > 0.0 ? r.mse / nz : 0.0;
        r.far = 0.0;
        r.mdr = nz > 0.0 ? 1.0 : 0.0;
    } else {
        const auto& s = states[t - 1];
        r.mse = state_expectation(Observable::Mse, s);
        r.mse_nz = state_expectation(Observable::MseNz, s);
        r.far = state_expectation(Observable::Far, s);
        r.mdr = state_expectation(Observable::Mdr, s);
    }
    r.sigma_true = std::sqrt(states[t].sigma2);
    return r;
}

inline ObservablesResult run_observables(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto prior = parse_prior(cfg.prior);
    const auto kind = cfg.op();
    const auto iters = static_cast<std::size_t>(cfg.max_iters);
    const auto count = static_cast<std::size_t>(cfg.instances);

    ObservablesResult res;
    res.runs.resize(cfg.deltas.size() * count);
    std::vector<ThresholdPolicy> policies;
    for (double d : cfg.deltas) policies.push_back(cfg.make_policy(d));

    parallel_for(res.runs.size(), cfg.threads, [&](std::size_t job) {
        const std::size_t di = job / count, inst = job % count;
        ObservablesRun& run = res.runs[job];
        run.delta = cfg.deltas[di];
        run.instance = inst;
        run.seed = derive_seed(cfg.master_seed, {di, 0, inst});
        const auto pi = generate_instance(prior, run.delta, cfg.big_n, cfg.v, kind, run.seed);
        AmpOptions opt;
        opt.onsager = cfg.onsager;
        opt.max_iters = iters;
        opt.fixed_iterations = true;
        try {
            run.records = run_amp(pi, Nonlinearity::soft(), policies[di], opt).records;
        } catch (const amp_divergence& e) {
            run.diverged = true;
            run.records = e.trace().records;
        }
    });

    for (std::size_t di = 0; di < cfg.deltas.size(); ++di) {
        const double delta = cfg.deltas[di];
        std::vector<SEState> states;
        if (cfg.policy != "zero") {
            SEState init = initial_se_state(prior, cfg.v, delta);
            if (cfg.policy == "a") init.theta = cfg.lambdas.at(0) + std::sqrt(init.sigma2);
            states = evolve(init, policies[di], iters);
        }
        for (std::size_t t = 0; t <= iters; ++t) {
            ObservablesRow row;
            row.delta = delta;
            row.t = t;
            std::vector<double> mse, mse_nz, far, mdr, st, sh;
            for (std::size_t inst = 0; inst < count; ++inst) {
                const auto& recs = res.runs[di * count + inst].records;
                if (t >= recs.size()) continue;
                const auto& r = recs[t];
                mse.push_back(r.mse);
                mse_nz.push_back(r.mse_nz);
                far.push_back(r.far);
                mdr.push_back(r.mdr);
                st.push_back(r.sigma_true);
                sh.push_back(r.sigma_hat);
            }
            row.completed = mse.size();
            row.mse = median(mse);
            row.mse_nz = median(mse_nz);
            row.far = median(far);
            row.mdr = median(mdr);
            row.sigma_true = median(st);
            row.sigma_hat = median(sh);
            if (!states.empty()) {
                const auto p = se_observables(states, t);
                row.mse_se = p.mse;
                row.mse_nz_se = p.mse_nz;
                row.far_se = p.far;
                row.mdr_se = p.mdr;
                row.sigma_se = p.sigma_true;
            } else {
                row.mse_se = row.mse_nz_se = row.far_se = row.mdr_se = row.sigma_se =
                    std::numeric_limits<double>::quiet_NaN();
            }
            res.rows.push_back(row);
        }
        res.se.push_back(std::move(states));
    }
    return res;
}

inline std::vector<std::string> write_observables(const ObservablesResult& res, const std::filesystem::path& dir) {
    {
        CsvWriter w(dir / "observables.csv",
                    {"delta", "t", "completed", "mse", "mse_se", "mse_nz", "mse_nz_se", "far", "far_se", "mdr",
                     "mdr_se", "sigma_true", "sigma_hat", "sigma_se"});
        for (const auto& r : res.rows) {
            w.row({fmt(r.delta), std::to_string(r.t), std::to_string(r.completed), fmt(r.mse), fmt(r.mse_se),
                   fmt(r.mse_nz), fmt(r.mse_nz_se), fmt(r.far), fmt(r.far_se), fmt(r.mdr), fmt(r.mdr_se),
                   fmt(r.sigma_true), fmt(r.sigma_hat), fmt(r.sigma_se)});
        }
    }
    {
        CsvWriter w(dir / "observables_instances.csv",
                    {"delta", "instance", "seed", "diverged", "t", "mse", "mse_nz", "far", "mdr", "dr", "sigma_hat",
                     "sigma_true", "theta"});
        for (const auto& run : res.runs) {
            for (const auto& r : run.records) {
                w.row({fmt(run.delta), std::to_string(run.instance), std::to_string(run.seed),
                       run.diverged ? "1" : "0", std::to_string(r.t), fmt(r.mse), fmt(r.mse_nz), fmt(r.far),
                       fmt(r.mdr), fmt(r.dr), fmt(r.sigma_hat), fmt(r.sigma_true), fmt(r.theta)});
            }
        }
    }
    return {"observables.csv", "observables_instances.csv"};
}

// ---------------------------------------------------------------------------
// Phase transition
// ---------------------------------------------------------------------------

/// Success-tolerance sensitivity grid reported next to the configured tolerance.
inline const std::vector<double>& sensitivity_tolerances() {
    static const std::vector<double> tols{1e-2, 1e-3, 1e-4};
    return tols;
}

enum class Algorithm { Amp, Ist };

inline std::string to_string(Algorithm a) { return a == Algorithm::Amp ? "amp" : "ist"; }

struct PhaseOutcome {
    double rel_err = std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
    bool diverged = false;
};

struct PhaseCell {
    std::size_t delta_index = 0, rho_index = 0;
    double delta = 0.0, rho = 0.0;
    std::int64_t k = 0;
    Algorithm algorithm = Algorithm::Amp;
    std::vector<std::uint64_t> seeds;
    std::vector<PhaseOutcome> outcomes;

    double success_fraction(double tol) const {
        if (outcomes.empty()) return std::numeric_limits<double>::quiet_NaN();
        std::size_t ok = 0;
        for (const auto& o : outcomes) ok += (!o.diverged && o.rel_err <= tol) ? 1 : 0;
        return static_cast<double>(ok) / static_cast<double>(outcomes.size());
    }
    std::size_t diverged() const {
        return static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [](auto& o) { return o.diverged; }));
    }
};

struct PhaseTransitionSummary {
    double delta = 0.0;
    double rho_se = 0.0;
    Algorithm algorithm = Algorithm::Amp;
    double success_tol = 0.0;
    Crossover crossover;
};

struct PhaseTransitionResult {
    std::vector<PhaseCell> cells; // sorted by delta, rho, algorithm
    std::vector<double> rho_se;   // per delta
    std::vector<PhaseTransitionSummary> summaries;
};

/// k = round(rho delta N) unit entries at uniformly random positions, the rest zero.
inline Vec sparse_ones(Eigen::Index big_n, Eigen::Index k, std::uint64_t seed) {
    if (k < 0 || k > big_n) throw parameter_error("sparse_ones: k must lie in [0, N]");
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(big_n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Engine rng(seed);
    for (Eigen::Index i = 0; i < k; ++i) {
        std::uniform_int_distribution<Eigen::Index> pick(i, big_n - 1);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    Vec s0 = Vec::Zero(big_n);
    for (Eigen::Index i = 0; i < k; ++i) s0(perm[static_cast<std::size_t>(i)]) = 1.0;
    return s0;
}

inline std::vector<double> sorted_copy(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    return xs;
}

inline PhaseTransitionResult run_phase_transition(const ExperimentConfig& cfg_in) {
    cfg_in.validate();
    ExperimentConfig cfg = cfg_in;
    cfg.deltas = sorted_copy(cfg.deltas);
    cfg.rhos = sorted_copy(cfg.rhos);
    const auto kind = cfg.op();
    const auto count = static_cast<std::size_t>(cfg.instances);
    const std::size_t nd = cfg.deltas.size(), nr = cfg.rhos.size();

    PhaseTransitionResult res;
    std::vector<ThresholdPolicy> policies;
    for (double d : cfg.deltas) policies.push_back(cfg.make_policy(d));

    for (std::size_t di = 0; di < nd; ++di) {
        for (std::size_t ri = 0; ri < nr; ++ri) {
            for (auto alg : {Algorithm::Amp, Algorithm::Ist}) {
                PhaseCell c;
                c.delta_index = di;
                c.rho_index = ri;
                c.delta = cfg.deltas[di];
                c.rho = cfg.rhos[ri];
                c.algorithm = alg;
                c.k = static_cast<std::int64_t>(std::floor(c.rho * c.delta * static_cast<double>(cfg.big_n) + 0.5));
                c.k = std::min<std::int64_t>(c.k, cfg.big_n);
                c.seeds.resize(count);
                c.outcomes.resize(count);
                res.cells.push_back(std::move(c));
            }
        }
    }

    // One job per (delta, rho, instance): both algorithms share the instance.
    parallel_for(nd * nr * count, cfg.threads, [&](std::size_t job) {
        const std::size_t inst = job % count;
        const std::size_t ri = (job / count) % nr;
        const std::size_t di = job / (count * nr);
        PhaseCell& amp_cell = res.cells[2 * (di * nr + ri)];
        PhaseCell& ist_cell = res.cells[2 * (di * nr + ri) + 1];
        const std::uint64_t seed = derive_seed(cfg.master_seed, {di, ri, inst});
        amp_cell.seeds[inst] = ist_cell.seeds[inst] = seed;

        const Eigen::Index n = rows_for(amp_cell.delta, cfg.big_n);
        auto op = MeasurementOperator::build(kind, n, cfg.big_n, derive_seed(seed, {stream::matrix}));
        Vec s0 = sparse_ones(cfg.big_n, amp_cell.k, derive_seed(seed, {stream::signal}));
        const auto pi = make_instance(std::move(op), std::move(s0), cfg.v, derive_seed(seed, {stream::noise}));
        const double s0_norm = pi.s0.norm();

        auto attempt = [&](const ThresholdPolicy& policy, const AmpOptions& opt) {
            PhaseOutcome o;
            try {
                const auto tr = run_amp(pi, Nonlinearity::soft(), policy, opt);
                o.iterations = tr.iterations();
                const double err = (tr.x - pi.s0).norm();
                o.rel_err = s0_norm > 0.0 ? err / s0_norm : err;
            } catch (const amp_divergence& e) {
                o.diverged = true;
                o.iterations = e.trace().iterations();
            }
            return o;
        };

        AmpOptions amp_opt;
        amp_opt.onsager = true;
        amp_opt.max_iters = static_cast<std::size_t>(cfg.max_iters);
        amp_opt.rel_tol = cfg.rel_tol;
        amp_cell.outcomes[inst] = attempt(policies[di], amp_opt);

        AmpOptions ist_opt = amp_opt;
        ist_opt.onsager = false;
        ist_opt.step = cfg.ist_step / operator_norm_squared(pi.op);
        ist_cell.outcomes[inst] = attempt(FixedTauPolicy{cfg.ist_tau}, ist_opt);
    });

    for (double d : cfg.deltas) res.rho_se.push_back(se_phase_transition(d));

    std::vector<double> tols = sensitivity_tolerances();
    if (std::find(tols.begin(), tols.end(), cfg.success_tol) == tols.end()) tols.insert(tols.begin(), cfg.success_tol);
    for (std::size_t di = 0; di < nd; ++di) {
        for (auto alg : {Algorithm::Amp, Algorithm::Ist}) {
            for (double tol : tols) {
                std::vector<double> frac;
                for (std::size_t ri = 0; ri < nr; ++ri) {
                    frac.push_back(res.cells[2 * (di * nr + ri) + (alg == Algorithm::Ist)].success_fraction(tol));
                }
                res.summaries.push_back({cfg.deltas[di], res.rho_se[di], alg, tol, fifty_percent_crossing(cfg.rhos, frac)});
            }
        }
    }
    return res;
}

inline const PhaseTransitionSummary& find_summary(const PhaseTransitionResult& res, double delta, Algorithm alg,
                                                  double tol) {
    for (const auto& s : res.summaries) {
        if (s.delta == delta && s.algorithm == alg && s.success_tol == tol) return s;
    }
    throw parameter_error("no phase-transition summary for the requested cell");
}

inline std::vector<std::string> write_phase_transition(const PhaseTransitionResult& res, const ExperimentConfig& cfg,
                                                       const std::filesystem::path& dir) {
    {
        std::vector<std::string> header{"delta", "rho", "k", "algorithm", "instances", "completed", "diverged",
                                        "success_fraction", "median_rel_err", "rho_se"};
        for (double t : sensitivity_tolerances()) {
            std::ostringstream name;
            name << "success_fraction_tol_" << t;
            header.push_back(name.str());
        }
        CsvWriter w(dir / "phase_transition.csv", header);
        for (const auto& c : res.cells) {
            std::vector<double> errs;
            for (const auto& o : c.outcomes) errs.push_back(o.rel_err);
            std::vector<std::string> row{fmt(c.delta), fmt(c.rho), std::to_string(c.k), to_string(c.algorithm),
                                         std::to_string(c.outcomes.size()), std::to_string(c.outcomes.size()),
                                         std::to_string(c.diverged()), fmt(c.success_fraction(cfg.success_tol)),
                                         fmt(median(errs)), fmt(res.rho_se[c.delta_index])};
            for (double t : sensitivity_tolerances()) row.push_back(fmt(c.success_fraction(t)));
            w.row(row);
        }
    }
    {
        CsvWriter w(dir / "phase_transition_instances.csv",
                    {"delta", "rho", "instance", "seed", "algorithm", "rel_err", "iterations", "diverged"});
        for (const auto& c : res.cells) {
            for (std::size_t i = 0; i < c.outcomes.size(); ++i) {
                const auto& o = c.outcomes[i];
                w.row({fmt(c.delta), fmt(c.rho), std::to_string(i), std::to_string(c.seeds[i]), to_string(c.algorithm),
                       o.diverged ? "NA" : fmt(o.rel_err), std::to_string(o.iterations), o.diverged ? "1" : "0"});
            }
        }
    }
    {
        CsvWriter w(dir / "phase_transition_crossovers.csv",
                    {"delta", "algorithm", "success_tol", "crossover", "status", "rho_se"});
        for (const auto& s : res.summaries) {
            w.row({fmt(s.delta), to_string(s.algorithm), fmt(s.success_tol), fmt(s.crossover.rho),
                   to_string(s.crossover.status), fmt(s.rho_se)});
        }
    }
    return {"phase_transition.csv", "phase_transition_instances.csv", "phase_transition_crossovers.csv"};
}

// ---------------------------------------------------------------------------
// Operating characteristics of the LASSO
// ---------------------------------------------------------------------------

struct OperatingCell {
    double alpha = 0.0, delta = 0.0, lambda = 0.0;
    std::size_t alpha_index = 0, delta_index = 0, lambda_index = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> mse;       // NaN where the solver did not certify
    std::vector<double> kkt;
    std::vector<std::size_t> sweeps;
    bool prediction = false;       // false: prediction unavailable
    std::string prediction_note;
    double tau = std::numeric_limits<double>::quiet_NaN();
    double mse_se = std::numeric_limits<double>::quiet_NaN();
    double sigma_inf = std::numeric_limits<double>::quiet_NaN();
    double theta_inf = std::numeric_limits<double>::quiet_NaN();
    double eq_dr = std::numeric_limits<double>::quiet_NaN();

    std::size_t completed() const {
        return static_cast<std::size_t>(std::count_if(mse.begin(), mse.end(), [](double x) { return !std::isnan(x); }));
    }
    double median_mse() const {
        std::vector<double> ok;
        for (double x : mse) {
            if (!std::isnan(x)) ok.push_back(x);
        }
        return median(ok);
    }
    double rel_error() const {
        if (!prediction) return std::numeric_limits<double>::quiet_NaN();
        return std::abs(median_mse() - mse_se) / mse_se;
    }
};

struct OperatingCharsResult {
    std::vector<OperatingCell> cells; // sorted by alpha, delta, lambda index
    double spearman = std::numeric_limits<double>::quiet_NaN();
};

inline OperatingCharsResult run_operating_chars(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto kind = cfg.op();
    const auto count = static_cast<std::size_t>(cfg.instances);
    const auto engine = ExpectationEngine::closed_form();
    const std::size_t nl = cfg.lambdas.empty() ? cfg.tau_offsets.size() : cfg.lambdas.size();

    OperatingCharsResult res;
    for (std::size_t ai = 0; ai < cfg.alphas.size(); ++ai) {
        const auto prior = PriorDistribution::generalized_gaussian(cfg.alphas[ai]);
        for (std::size_t di = 0; di < cfg.deltas.size(); ++di) {
            const double delta = cfg.deltas[di];
            std::optional<double> tau0;
            try {
                tau0 = tau_validity_threshold(cfg.v, delta, prior, engine);
            } catch (const error&) {
            }
            for (std::size_t li = 0; li < nl; ++li) {
                OperatingCell c;
                c.alpha = cfg.alphas[ai];
                c.delta = delta;
                c.alpha_index = ai;
                c.delta_index = di;
                c.lambda_index = li;
                if (cfg.lambdas.empty()) {
                    if (!tau0) throw error("operating-chars: no calibration validity region for this cell");
                    c.lambda = calibrate_lambda(*tau0 + cfg.tau_offsets[li], cfg.v, delta, prior, engine);
                } else {
                    c.lambda = cfg.lambdas[li];
                }
                try {
                    if (!tau0) throw validity_error("no valid tau");
                    c.tau = calibrate_tau(c.lambda, cfg.v, delta, prior, engine, *tau0);
                    const auto eq = equilibrium(c.tau, cfg.v, delta, prior, engine);
                    const SEState s{std::max(eq.sigma * eq.sigma, cfg.v), cfg.v, delta, eq.theta, prior};
                    c.mse_se = state_expectation(Observable::Mse, s, {}, engine);
                    c.sigma_inf = eq.sigma;
                    c.theta_inf = eq.theta;
                    c.eq_dr = state_expectation(Observable::Dr, s, {}, engine);
                    c.prediction = true;
                } catch (const error& e) {
                    c.prediction = false;
                    c.prediction_note = e.what();
                }
                c.seeds.resize(count);
                c.mse.assign(count, std::numeric_limits<double>::quiet_NaN());
                c.kkt.assign(count, std::numeric_limits<double>::quiet_NaN());
                c.sweeps.assign(count, 0);
                res.cells.push_back(std::move(c));
            }
        }
    }

    // Instances are shared across the lambda values of an (alpha, delta) cell.
    const std::size_t ncells = res.cells.size();
    parallel_for(ncells * count, cfg.threads, [&](std::size_t job) {
        OperatingCell& c = res.cells[job / count];
        const std::size_t inst = job % count;
        const std::uint64_t seed = derive_seed(cfg.master_seed, {c.delta_index, c.alpha_index, inst});
        c.seeds[inst] = seed;
        const auto prior = PriorDistribution::generalized_gaussian(c.alpha);
        const auto pi = generate_instance(prior, c.delta, cfg.big_n, cfg.v, kind, seed);
        LassoOptions opt;
        opt.tol = cfg.success_tol;
        opt.max_sweeps = static_cast<std::size_t>(cfg.max_iters);
        try {
            const auto sol = solve_lasso(pi, c.lambda, opt);
            c.mse[inst] = (sol.x_hat - pi.s0).squaredNorm() / static_cast<double>(cfg.big_n);
            c.kkt[inst] = sol.kkt_residual;
            c.sweeps[inst] = sol.iterations;
        } catch (const lasso_nonconvergence& e) {
            c.kkt[inst] = e.best().kkt_residual;
            c.sweeps[inst] = e.best().iterations;
        }
    });

    std::vector<double> pred, obs;
    for (const auto& c : res.cells) {
        if (c.prediction && c.completed() > 0) {
            pred.push_back(c.mse_se);
            obs.push_back(c.median_mse());
        }
    }
    if (pred.size() >= 2) res.spearman = spearman(pred, obs);
    return res;
}

inline std::vector<std::string> write_operating_chars(const OperatingCharsResult& res, const std::filesystem::path& dir) {
    {
        CsvWriter w(dir / "operating_chars.csv",
                    {"alpha", "delta", "lambda", "instances", "completed", "median_mse", "mse_se", "rel_error", "tau",
                     "sigma_inf", "theta_inf", "eq_dr", "prediction"});
        for (const auto& c : res.cells) {
            w.row({fmt(c.alpha), fmt(c.delta), fmt(c.lambda), std::to_string(c.mse.size()),
                   std::to_string(c.completed()), fmt(c.median_mse()), fmt(c.mse_se), fmt(c.rel_error()), fmt(c.tau),
                   fmt(c.sigma_inf), fmt(c.theta_inf), fmt(c.eq_dr), c.prediction ? "ok" : "unavailable"});
        }
    }
    {
        CsvWriter w(dir / "operating_chars_instances.csv",
                    {"alpha", "delta", "lambda", "instance", "seed", "mse", "kkt_residual", "sweeps", "certified"});
        for (const auto& c : res.cells) {
            for (std::size_t i = 0; i < c.mse.size(); ++i) {
                w.row({fmt(c.alpha), fmt(c.delta), fmt(c.lambda), std::to_string(i), std::to_string(c.seeds[i]),
                       fmt(c.mse[i]), fmt(c.kkt[i]), std::to_string(c.sweeps[i]), std::isnan(c.mse[i]) ? "0" : "1"});
            }
        }
    }
    return {"operating_chars.csv", "operating_chars_instances.csv"};
}

} // namespace ampcs
