// Command-line front end: experiments, direct state-evolution queries, single LASSO solves.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ampcs/ampcs.hpp"

namespace {

using namespace ampcs;

/// Flag values; only flags given on the command line override the config.
struct Flags {
    std::string config;
    std::int64_t big_n = 0, instances = 0, max_iters = 0;
    std::uint64_t seed = 0;
    std::vector<double> deltas, rhos, alphas, lambdas;
    std::string policy, prior, out, op;
    double tau = 0.0, success_tol = 0.0, v = 0.0, ist_tau = 0.0, ist_step = 0.0;
    bool no_onsager = false;
    unsigned threads = 0;
    std::vector<CLI::Option*> opts;
    CLI::Option *o_n{}, *o_inst{}, *o_iters{}, *o_seed{}, *o_delta{}, *o_rho{}, *o_alpha{}, *o_lambda{}, *o_policy{},
        *o_prior{}, *o_out{}, *o_op{}, *o_tau{}, *o_tol{}, *o_v{}, *o_ist_tau{}, *o_ist_step{}, *o_threads{};
};

void add_experiment_flags(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    f.o_n = app->add_option("--n", f.big_n, "signal length N");
    f.o_inst = app->add_option("--instances", f.instances, "instances (seeds) per cell");
    f.o_seed = app->add_option("--seed", f.seed, "master seed");
    f.o_delta = app->add_option("--delta", f.deltas, "undersampling ratio(s) n/N")->delimiter(',');
    f.o_rho = app->add_option("--rho", f.rhos, "sparsity ratio grid k/n")->delimiter(',');
    f.o_alpha = app->add_option("--alpha", f.alphas, "generalized-Gaussian exponents")->delimiter(',');
    f.o_lambda = app->add_option("--lambda", f.lambdas, "LASSO penalties")->delimiter(',');
    f.o_policy = app->add_option("--policy", f.policy, "threshold policy")->check(CLI::IsMember({"m", "t", "a", "zero"}));
    f.o_tau = app->add_option("--tau", f.tau, "threshold multiplier for policy t");
    app->add_flag("--no-onsager", f.no_onsager, "drop the Onsager term (iterative soft thresholding)");
    f.o_iters = app->add_option("--max-iters", f.max_iters, "iterations (AMP) or sweeps (LASSO)");
    f.o_tol = app->add_option("--success-tol", f.success_tol, "success tolerance (LASSO: KKT tolerance)");
    f.o_out = app->add_option("--out", f.out, "output directory");
    f.o_prior = app->add_option("--prior", f.prior, "signal prior, e.g. bernoulli:0.045, gg:0.5, mixture:0.9@0,0.1@1");
    f.o_v = app->add_option("--v", f.v, "noise variance");
    f.o_op = app->add_option("--operator", f.op, "measurement operator")->check(CLI::IsMember({"gaussian", "dct"}));
    f.o_ist_tau = app->add_option("--ist-tau", f.ist_tau, "IST threshold multiplier");
    f.o_ist_step = app->add_option("--ist-step", f.ist_step, "IST step as a multiple of 1/||A||^2");
    f.o_threads = app->add_option("--threads", f.threads, "worker threads (0 = hardware)");
}

ExperimentConfig build_config(ExperimentKind kind, const Flags& f) {
    ExperimentConfig c = f.config.empty() ? ExperimentConfig::defaults(kind) : load_config(f.config, kind);
    if (*f.o_n) c.big_n = f.big_n;
    if (*f.o_inst) c.instances = f.instances;
    if (*f.o_seed) c.master_seed = f.seed;
    if (*f.o_delta) c.deltas = f.deltas;
    if (*f.o_rho) c.rhos = f.rhos;
    if (*f.o_alpha) c.alphas = f.alphas;
    if (*f.o_lambda) c.lambdas = f.lambdas;
    if (*f.o_policy) c.policy = f.policy;
    if (*f.o_tau) c.tau = f.tau;
    if (f.no_onsager) c.onsager = false;
    if (*f.o_iters) c.max_iters = f.max_iters;
    if (*f.o_tol) c.success_tol = f.success_tol;
    if (*f.o_out) c.output = f.out;
    if (*f.o_prior) c.prior = f.prior;
    if (*f.o_v) c.v = f.v;
    if (*f.o_op) c.operator_kind = f.op;
    if (*f.o_ist_tau) c.ist_tau = f.ist_tau;
    if (*f.o_ist_step) c.ist_step = f.ist_step;
    if (*f.o_threads) c.threads = f.threads;
    c.validate();
    return c;
}

int run_experiment(ExperimentKind kind, const Flags& f) {
    const auto cfg = build_config(kind, f);
    const auto dir = prepare_output(cfg.output);
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::string> outputs;
    nlohmann::json summary = nlohmann::json::object();

    switch (kind) {
    case ExperimentKind::Observables: {
        const auto res = run_observables(cfg);
        outputs = write_observables(res, dir);
        std::size_t diverged = 0;
        for (const auto& r : res.runs) diverged += r.diverged;
        summary["diverged_runs"] = diverged;
        std::cout << "observables: " << res.runs.size() << " runs, " << diverged << " diverged\n";
        break;
    }
    case ExperimentKind::PhaseTransition: {
        const auto res = run_phase_transition(cfg);
        outputs = write_phase_transition(res, cfg, dir);
        summary["crossovers"] = nlohmann::json::array();
        for (const auto& s : res.summaries) {
            summary["crossovers"].push_back({{"delta", s.delta},
                                             {"algorithm", to_string(s.algorithm)},
                                             {"success_tol", s.success_tol},
                                             {"crossover", std::isnan(s.crossover.rho) ? nlohmann::json(nullptr)
                                                                                      : nlohmann::json(s.crossover.rho)},
                                             {"status", to_string(s.crossover.status)},
                                             {"rho_se", s.rho_se}});
            if (s.success_tol == cfg.success_tol) {
                std::cout << "delta " << s.delta << " " << to_string(s.algorithm) << ": crossover "
                          << fmt(s.crossover.rho) << " (" << to_string(s.crossover.status) << "), rho_SE "
                          << fmt(s.rho_se) << "\n";
            }
        }
        break;
    }
    case ExperimentKind::OperatingChars: {
        const auto res = run_operating_chars(cfg);
        outputs = write_operating_chars(res, dir);
        summary["spearman"] = std::isnan(res.spearman) ? nlohmann::json(nullptr) : nlohmann::json(res.spearman);
        for (const auto& c : res.cells) {
            std::cout << "alpha " << c.alpha << " delta " << c.delta << " lambda " << fmt(c.lambda) << ": median MSE "
                      << fmt(c.median_mse()) << ", predicted " << fmt(c.mse_se) << "\n";
        }
        std::cout << "spearman " << fmt(res.spearman) << "\n";
        break;
    }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string manifest = to_string(kind) + "_manifest.json";
    outputs.push_back(manifest);
    write_manifest(dir / manifest, cfg, wall, outputs, summary);
    std::cout << "wrote " << outputs.size() << " files to " << dir.string() << " in " << wall << " s\n";
    return 0;
}

ExpectationEngine make_engine(const std::string& name, std::size_t samples, std::uint64_t seed) {
    if (name == "closed") return ExpectationEngine::closed_form();
    if (name == "gh") return ExpectationEngine::quadrature();
    return ExpectationEngine::monte_carlo(samples, seed);
}

struct SeFlags {
    std::string prior = "bernoulli:0.045", engine = "closed";
    double delta = 0.3, v = 0.0, sigma2 = 1.0, tau = 0.0, theta = -1.0, lambda = 0.0;
    std::size_t samples = 1'000'000;
    std::uint64_t seed = 1;
    std::vector<double> deltas;
    CLI::Option *o_tau{}, *o_lambda{};
};

void add_se_common(CLI::App* app, SeFlags& f) {
    app->add_option("--prior", f.prior, "signal prior");
    app->add_option("--delta", f.delta, "undersampling ratio");
    app->add_option("--v", f.v, "noise variance");
    app->add_option("--engine", f.engine, "expectation engine")->check(CLI::IsMember({"closed", "gh", "mc"}));
    app->add_option("--samples", f.samples, "Monte Carlo samples");
    app->add_option("--seed", f.seed, "Monte Carlo seed");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"AMP, state evolution and LASSO experiments"};
    app.require_subcommand(1);

    Flags obs, pt, oc;
    add_experiment_flags(app.add_subcommand("observables", "observables versus iteration with SE predictions"), obs);
    add_experiment_flags(app.add_subcommand("phase-transition", "empirical phase transition of AMP and IST"), pt);
    add_experiment_flags(app.add_subcommand("operating-chars", "LASSO MSE against calibrated SE predictions"), oc);

    auto* se = app.add_subcommand("se", "direct state-evolution queries");
    se->require_subcommand(1);
    SeFlags sf;
    auto* se_psi = se->add_subcommand("psi", "one MSE-map evaluation");
    add_se_common(se_psi, sf);
    se_psi->add_option("--sigma2", sf.sigma2, "effective variance sigma^2");
    sf.o_tau = se_psi->add_option("--tau", sf.tau, "theta = tau sigma");
    se_psi->add_option("--theta", sf.theta, "explicit threshold");
    auto* se_hfp = se->add_subcommand("hfp", "highest fixed point and stability coefficient");
    add_se_common(se_hfp, sf);
    auto* hfp_tau = se_hfp->add_option("--tau", sf.tau, "threshold multiplier (default: minimax)");
    auto* se_rho = se->add_subcommand("rho-se", "SE phase transition rho_SE(delta)");
    se_rho->add_option("--delta", sf.deltas, "undersampling ratios")->delimiter(',')->required();
    auto* se_cal = se->add_subcommand("calibrate", "lambda <-> tau calibration");
    add_se_common(se_cal, sf);
    auto* cal_tau = se_cal->add_option("--tau", sf.tau, "tau -> lambda");
    auto* cal_lambda = se_cal->add_option("--lambda", sf.lambda, "lambda -> tau");
    cal_tau->excludes(cal_lambda);

    auto* lasso = app.add_subcommand("lasso", "solve one random LASSO instance");
    std::string l_prior = "bernoulli:0.1";
    double l_delta = 0.5, l_lambda = 0.1, l_v = 0.0, l_tol = 1e-9;
    std::int64_t l_n = 500;
    std::uint64_t l_seed = 1;
    lasso->add_option("--prior", l_prior, "signal prior");
    lasso->add_option("--delta", l_delta, "undersampling ratio");
    lasso->add_option("--n", l_n, "signal length N");
    lasso->add_option("--lambda", l_lambda, "penalty");
    lasso->add_option("--v", l_v, "noise variance");
    lasso->add_option("--seed", l_seed, "instance seed");
    lasso->add_option("--tol", l_tol, "KKT tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (app.got_subcommand("observables")) return run_experiment(ExperimentKind::Observables, obs);
        if (app.got_subcommand("phase-transition")) return run_experiment(ExperimentKind::PhaseTransition, pt);
        if (app.got_subcommand("operating-chars")) return run_experiment(ExperimentKind::OperatingChars, oc);

        nlohmann::json out;
        if (se->got_subcommand(se_psi)) {
            const auto prior = parse_prior(sf.prior);
            if ((*sf.o_tau ? 1 : 0) + (sf.theta >= 0.0 ? 1 : 0) != 1) throw config_error("psi needs exactly one of --tau, --theta");
            const double theta = *sf.o_tau ? sf.tau * std::sqrt(sf.sigma2) : sf.theta;
            const auto est = psi_estimate(sf.sigma2, sf.v, sf.delta, theta, prior, Nonlinearity::soft(),
                                          make_engine(sf.engine, sf.samples, sf.seed));
            out = {{"sigma2", sf.sigma2}, {"theta", theta}, {"psi", est.value}, {"std_error", est.std_error}};
        } else if (se->got_subcommand(se_hfp)) {
            const auto prior = parse_prior(sf.prior);
            const double tau = *hfp_tau ? sf.tau : minimax_tau(sf.delta);
            const auto curve = psi_curve(tau, sf.v, sf.delta, prior, Nonlinearity::soft(),
                                         make_engine(sf.engine, sf.samples, sf.seed));
            const double upper = 4.0 * (sf.v + second_moment(prior) / sf.delta) + 1e-12;
            const auto h = hfp(curve, upper);
            out = {{"tau", tau}, {"hfp", h.value}, {"at_upper_bound", h.at_upper_bound},
                   {"stability_coefficient", stability_coefficient(curve, h.value)}};
        } else if (se->got_subcommand(se_rho)) {
            out = nlohmann::json::array();
            for (double d : sf.deltas) {
                out.push_back({{"delta", d}, {"rho_se", se_phase_transition(d)}, {"minimax_tau", minimax_tau(d)}});
            }
        } else if (se->got_subcommand(se_cal)) {
            const auto prior = parse_prior(sf.prior);
            const auto engine = make_engine(sf.engine, sf.samples, sf.seed);
            if (*cal_tau) {
                const auto c = calibrate(sf.tau, sf.v, sf.delta, prior, engine);
                out = {{"tau", sf.tau}, {"lambda", c.lambda}, {"eq_dr", c.eq_dr}, {"sigma_inf", c.sigma_inf},
                       {"theta_inf", c.theta_inf}, {"valid", c.lambda >= 0.0}};
            } else if (*cal_lambda) {
                const double tau = calibrate_tau(sf.lambda, sf.v, sf.delta, prior, engine);
                out = {{"lambda", sf.lambda}, {"tau", tau}};
            } else {
                out = {{"tau_validity_threshold", tau_validity_threshold(sf.v, sf.delta, prior, engine)}};
            }
        } else if (app.got_subcommand(lasso)) {
            const auto prior = parse_prior(l_prior);
            const auto inst = generate_instance(prior, l_delta, l_n, l_v, OperatorKind::DenseGaussian, l_seed);
            LassoOptions opt;
            opt.tol = l_tol;
            const auto sol = solve_lasso(inst, l_lambda, opt);
            out = {{"lambda", l_lambda},
                   {"mse", (sol.x_hat - inst.s0).squaredNorm() / static_cast<double>(l_n)},
                   {"objective", lasso_objective(inst, sol.x_hat, l_lambda)},
                   {"kkt_residual", sol.kkt_residual},
                   {"sweeps", sol.iterations},
                   {"nonzeros", (sol.x_hat.array() != 0.0).count()}};
        }
        std::cout << out.dump(2) << "\n";
        return 0;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
