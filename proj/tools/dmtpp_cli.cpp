// dmtpp command-line tool: fit, fit-ar, evaluate, predict, simulate,
// branching, abilities. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmtpp/dmtpp.hpp"

namespace {

using namespace dmtpp;

struct CommonOptions {
    std::size_t threads = 0;
    double jitter = 0.0;
};

struct TrainOptions {
    std::string data, val, out, log;
    int q = 1;
    int epochs = 2000;
    int batch = 32;
    double lr = 0.03;
    std::uint64_t seed = 0;
    int samples = 1;
    int patience = 100;
    bool literal = false;
    bool kl = false;
    bool no_survival = false;
};

struct AROptions {
    std::string link = "covariate";
    bool football_groups = false;
    int home_marks = -1;
    bool freeze_omega = false;
    bool fixed_hyper = false;
    double sigma_floor = 1e-2;
    std::string abilities;
};

struct ModelDataOptions {
    std::string model, data, out;
    int q = 0; ///< 0 = value stored in the checkpoint
};

struct SimulateOptions {
    std::string model, out;
    int u = 3;
    int zones = 0;
    std::size_t seqs = 100;
    double horizon = 50.0;
    std::uint64_t seed = 0;
    int q = 1;
};

struct BranchingOptions {
    ModelDataOptions io;
    int k = 5;
    double threshold = 1.0;
};

struct AbilityOptions {
    std::string model, out, ranking, spearman_out;
};

Dataset load(const std::string& path, const CommonOptions& common) {
    return load_dataset(path, LoadOptions{common.jitter});
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f.precision(17);
    return f;
}

TrainConfig train_config(const TrainOptions& o, const CommonOptions& common) {
    TrainConfig cfg;
    cfg.Q = o.q;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.learning_rate = o.lr;
    cfg.seed = o.seed;
    cfg.L = o.samples;
    cfg.patience = o.patience;
    cfg.normalize = !o.literal;
    cfg.include_kl = o.kl;
    cfg.threads = common.threads;
    return cfg;
}

void write_log(const std::string& path, const TrainingLog& log) {
    if (path.empty()) return;
    auto f = open_out(path);
    f << "epoch,objective,validation,skipped_steps\n";
    for (const auto& e : log.epochs) f << e.epoch << ',' << e.objective << ',' << e.validation << ',' << e.skipped_steps << '\n';
}

void summarize(const TrainingLog& log) {
    std::cerr << "epochs run: " << log.epochs.size() << ", best epoch: " << log.best_epoch
              << (log.stopped_early ? " (stopped early)" : "") << '\n';
}

ModelCheckpoint make_checkpoint(const Dataset& train, const TrainConfig& cfg, VariationalParams xi, TimeParams time,
                                TrainingLog log) {
    ModelCheckpoint c;
    c.U = train.U;
    c.Z = train.Z;
    c.p = train.p;
    c.xi = std::move(xi);
    c.time = std::move(time);
    c.config = cfg;
    c.log = std::move(log);
    return c;
}

int run_fit(const TrainOptions& o, const CommonOptions& common) {
    const Dataset train = load(o.data, common);
    Dataset val = load(o.val, common);
    if (val.U < train.U) val.U = train.U;
    const TrainConfig cfg = train_config(o, common);
    auto res = fit(train, val, cfg);
    res.time.survival_enabled = !o.no_survival;
    write_log(o.log, res.log);
    summarize(res.log);
    save_checkpoint(make_checkpoint(train, cfg, std::move(res.xi), std::move(res.time), std::move(res.log)), o.out);
    return 0;
}

int run_fit_ar(const TrainOptions& o, const AROptions& a, const CommonOptions& common) {
    const Dataset train = load(o.data, common);
    Dataset val = load(o.val, common);
    if (val.U < train.U) val.U = train.U;
    const TrainConfig cfg = train_config(o, common);
    const LinkConfig link = make_link(parse_link_mode(a.link), {&train, &val}, a.football_groups, a.home_marks);
    ARConfig ac;
    ac.freeze_omega = a.freeze_omega;
    ac.learn_hyper = !a.fixed_hyper;
    ac.sigma_floor = a.sigma_floor;
    ac.init_sigma = std::max(ac.init_sigma, 2.0 * a.sigma_floor);
    auto res = fit_nonexchangeable(train, val, cfg, link, ac);
    res.time.survival_enabled = !o.no_survival;
    write_log(o.log, res.log);
    summarize(res.log);
    auto c = make_checkpoint(train, cfg, std::move(res.xi), std::move(res.time), std::move(res.log));
    c.latent = LatentBlock{res.link, res.latent};
    if (!a.abilities.empty()) {
        auto f = open_out(a.abilities);
        write_abilities(f, c.latent->params, c.latent->link);
    }
    save_checkpoint(c, o.out);
    return 0;
}

struct LoadedModel {
    ModelCheckpoint ckpt;
    Dataset data;
    TruncationConfig trunc;
};

LoadedModel load_model_and_data(const ModelDataOptions& o, const CommonOptions& common) {
    LoadedModel m{load_checkpoint(o.model), load(o.data, common), {}};
    adopt_model_shape(m.ckpt, m.data);
    m.trunc.Q = o.q > 0 ? o.q : m.ckpt.config.Q;
    return m;
}

int run_evaluate(const ModelDataOptions& o, const CommonOptions& common) {
    const auto m = load_model_and_data(o, common);
    const auto report = evaluate([&](const EventSequence& s) { return m.ckpt.params_for(s); }, m.ckpt.time, m.data,
                                 m.trunc, m.ckpt.config.normalize);
    if (o.out.empty()) {
        write_report(std::cout, report);
    } else {
        auto f = open_out(o.out);
        write_report(f, report);
    }
    return 0;
}

int run_predict(const ModelDataOptions& o, const CommonOptions& common) {
    const auto m = load_model_and_data(o, common);
    const auto preds = predict_events([&](const EventSequence& s) { return m.ckpt.params_for(s); }, m.ckpt.time,
                                      m.data, m.trunc, m.ckpt.config.normalize);
    auto f = open_out(o.out);
    f << "sequence,event_index,t_star,u_star\n";
    for (const auto& p : preds) f << p.sequence + 1 << ',' << p.event + 1 << ',' << p.t_star << ',' << p.u_star + 1 << '\n';
    return 0;
}

/// Fixed parameters used when simulate runs without a model: uniform
/// background, each mark favouring its successor, unit decay and excitation,
/// log-normal gaps with median 1.
std::pair<MarkParams, TimeParams> default_simulation_params(int U, int Z) {
    MarkParams p = make_mark_params(U, std::max(Z, 1));
    for (int z = 0; z < p.Z; ++z) {
        for (int a = 0; a < U; ++a) {
            for (int u = 0; u < U; ++u) {
                p.g(z, a, u) = U == 1 ? 1.0 : (u == (a + 1) % U ? 0.5 : 0.5 / (U - 1));
            }
        }
    }
    TimeParams tp;
    tp.mu.assign(static_cast<std::size_t>(U), 0.0);
    tp.var.assign(static_cast<std::size_t>(U), 0.25);
    tp.mu0 = 0.0;
    tp.var0 = 0.25;
    return {p, tp};
}

int run_simulate(const SimulateOptions& o) {
    MarkParams p;
    TimeParams tp;
    int zones = o.zones;
    if (!o.model.empty()) {
        const auto c = load_checkpoint(o.model);
        if (c.latent) throw DataError("simulate supports exchangeable checkpoints only");
        p = plugin_estimate(c.xi);
        tp = c.time;
        zones = c.Z;
    } else {
        if (o.u < 1) throw DataError("--u must be >= 1");
        std::tie(p, tp) = default_simulation_params(o.u, o.zones);
    }
    if (!(o.horizon > 0.0)) throw DataError("--horizon must be positive");
    Dataset d = simulate_dataset(p, tp, o.seqs, o.horizon, {o.q}, o.seed, zones > 0);
    save_dataset(d, std::filesystem::path(o.out));
    return 0;
}

int run_branching(const BranchingOptions& o, const CommonOptions& common) {
    const auto m = load_model_and_data(o.io, common);
    auto f = open_out(o.io.out);
    for (std::size_t s = 0; s < m.data.sequences.size(); ++s) {
        const auto& seq = m.data.sequences[s];
        const auto posts = branching_posterior(m.ckpt.params_for(seq), seq, o.k);
        write_genealogy_csv(f, genealogy_export(posts, seq, o.threshold), s == 0, s + 1);
    }
    return 0;
}

/// Ranking file: CSV with header, columns effect,score (effect 1-based).
std::map<int, double> read_ranking(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open ranking file " + path);
    std::map<int, double> score;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (n == 1 || line.find_first_not_of(" \r\t") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',')) throw DataError("ranking file: malformed line " + std::to_string(n));
        try {
            score[std::stoi(a)] = std::stod(b);
        } catch (const std::exception&) {
            throw DataError("ranking file: malformed line " + std::to_string(n));
        }
    }
    return score;
}

int run_abilities(const AbilityOptions& o) {
    const auto c = load_checkpoint(o.model);
    if (!c.latent) throw DataError("checkpoint has no latent block (fit it with fit-ar)");
    const auto& lp = c.latent->params;
    const auto& link = c.latent->link;
    {
        auto f = open_out(o.out);
        write_abilities(f, lp, link);
    }
    if (o.ranking.empty()) return 0;
    const auto score = read_ranking(o.ranking);
    std::vector<double> y;
    for (int e = 1; e <= lp.E; ++e) {
        const auto it = score.find(e);
        if (it == score.end()) throw DataError("ranking file has no score for effect " + std::to_string(e));
        y.push_back(it->second);
    }
    std::ofstream file;
    if (!o.spearman_out.empty()) file = open_out(o.spearman_out);
    std::ostream& out = o.spearman_out.empty() ? std::cout : file;
    out.precision(10);
    out << "target_mark,order_index,spearman\n";
    for (int u = 0; u < lp.T; ++u) {
        for (int s = 0; s < lp.S; ++s) {
            std::vector<double> x;
            for (int e = 0; e < lp.E; ++e) x.push_back(lp.omega[lp.omega_index(e, u, s)]);
            const auto rho = spearman(x, y);
            out << u + 1 << ',' << link.order_base + s << ',';
            if (rho) out << *rho; else out << "nan";
            out << '\n';
        }
    }
    return 0;
}

/// Flat key=value config: every key not given on the command line becomes
/// --key=value, so explicit flags always win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    auto given = [&](const std::string& key) {
        for (const auto& a : args) {
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
        }
        return false;
    };
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    std::vector<std::string> injected;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("config line " + std::to_string(n) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || key == "config") throw DataError("config line " + std::to_string(n) + ": bad key");
        if (!given(key)) injected.push_back("--" + key + "=" + value);
    }
    // Injected options go right after the subcommand name.
    const auto head = std::min<std::ptrdiff_t>(2, std::ssize(args));
    std::vector<std::string> out(args.begin(), args.begin() + head);
    out.insert(out.end(), injected.begin(), injected.end());
    out.insert(out.end(), args.begin() + head, args.end());
    return out;
}

void add_common(CLI::App* cmd, CommonOptions& c) {
    cmd->add_option("--config", "flat key=value file; command-line flags take precedence");
    cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
    cmd->add_option("--jitter", c.jitter, "shift event i of each sequence by i*EPS to separate tied timestamps")
        ->check(CLI::NonNegativeNumber);
}

void add_train(CLI::App* cmd, TrainOptions& o) {
    cmd->add_option("--data", o.data, "training JSONL")->required()->check(CLI::ExistingFile);
    cmd->add_option("--val", o.val, "validation JSONL (early stopping)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "checkpoint path")->required();
    cmd->add_option("--log", o.log, "per-epoch CSV log");
    cmd->add_option("--q", o.q, "truncation: number of past events per mark term")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", o.epochs)->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch", o.batch)->check(CLI::PositiveNumber);
    cmd->add_option("--lr", o.lr)->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--samples", o.samples, "Monte Carlo samples per step")->check(CLI::PositiveNumber);
    cmd->add_option("--patience", o.patience, "epochs without validation improvement before stopping")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--literal", o.literal, "use the un-normalised mark PMF");
    cmd->add_flag("--kl", o.kl, "include the log-normal KL term");
    cmd->add_flag("--no-survival", o.no_survival, "drop the survival term from the time likelihood");
}

void add_model_data(CLI::App* cmd, ModelDataOptions& o, bool out_required) {
    cmd->add_option("--model", o.model, "checkpoint")->required();
    cmd->add_option("--data", o.data, "JSONL dataset")->required();
    auto* out = cmd->add_option("--out", o.out, "output path");
    if (out_required) out->required();
    cmd->add_option("--q", o.q, "truncation (default: checkpoint value)")->check(CLI::NonNegativeNumber);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decoupled marked temporal point processes: fitting, evaluation, simulation"};
    app.require_subcommand(1, 1);
    CommonOptions common;
    TrainOptions train;
    AROptions ar;
    ModelDataOptions eval_io, predict_io;
    SimulateOptions sim;
    BranchingOptions br;
    AbilityOptions ab;

    auto* fit_cmd = app.add_subcommand("fit", "fit the exchangeable model");
    add_common(fit_cmd, common);
    add_train(fit_cmd, train);

    auto* fit_ar_cmd = app.add_subcommand("fit-ar", "fit the model with AR(1) latent effects on conversion logits");
    add_common(fit_ar_cmd, common);
    add_train(fit_ar_cmd, train);
    fit_ar_cmd->add_option("--link", ar.link, "covariate or team-week")->check(CLI::IsMember({"covariate", "team-week"}));
    fit_ar_cmd->add_flag("--football-groups", ar.football_groups, "share sigma/rho via b(u') = max(1, u' mod 16)");
    fit_ar_cmd->add_option("--home-marks", ar.home_marks, "team-week: marks 1..H belong to the first team id");
    fit_ar_cmd->add_flag("--freeze-omega", ar.freeze_omega, "keep omega at 0 (exchangeable reduction)");
    fit_ar_cmd->add_flag("--fixed-hyper", ar.fixed_hyper, "do not optimise mu, sigma, rho");
    fit_ar_cmd->add_option("--sigma-floor", ar.sigma_floor)->check(CLI::PositiveNumber);
    fit_ar_cmd->add_option("--abilities", ar.abilities, "also write the ability CSV here");

    auto* eval_cmd = app.add_subcommand("evaluate", "LLKL, RMSE and F1 on a dataset");
    add_common(eval_cmd, common);
    add_model_data(eval_cmd, eval_io, false);

    auto* predict_cmd = app.add_subcommand("predict", "per-event next time and mark predictions (CSV)");
    add_common(predict_cmd, common);
    add_model_data(predict_cmd, predict_io, true);

    auto* sim_cmd = app.add_subcommand("simulate", "draw a JSONL dataset from a checkpoint or default parameters");
    add_common(sim_cmd, common);
    sim_cmd->add_option("--model", sim.model, "checkpoint supplying the parameters");
    sim_cmd->add_option("--u", sim.u, "number of marks for the default parameters");
    sim_cmd->add_option("--zones", sim.zones, "number of zones for the default parameters (0 = unzoned)")
        ->check(CLI::NonNegativeNumber);
    sim_cmd->add_option("--seqs", sim.seqs, "number of sequences");
    sim_cmd->add_option("--horizon", sim.horizon, "observation horizon T");
    sim_cmd->add_option("--seed", sim.seed);
    sim_cmd->add_option("--q", sim.q, "history length used by the simulator")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--out", sim.out)->required();

    auto* br_cmd = app.add_subcommand("branching", "posterior parent probabilities (CSV genealogy)");
    add_common(br_cmd, common);
    add_model_data(br_cmd, br.io, true);
    br_cmd->add_option("--k", br.k, "candidate parents per event")->check(CLI::PositiveNumber);
    br_cmd->add_option("--threshold", br.threshold, "emit every parent above this probability besides the argmax");

    auto* ab_cmd = app.add_subcommand("abilities", "export omega and its Spearman table against a ranking");
    add_common(ab_cmd, common);
    ab_cmd->add_option("--model", ab.model, "checkpoint from fit-ar")->required();
    ab_cmd->add_option("--out", ab.out, "ability CSV")->required();
    ab_cmd->add_option("--ranking", ab.ranking, "CSV effect,score");
    ab_cmd->add_option("--spearman-out", ab.spearman_out, "Spearman table (default stdout)");

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(args);
        std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*fit_cmd) return run_fit(train, common);
        if (*fit_ar_cmd) return run_fit_ar(train, ar, common);
        if (*eval_cmd) return run_evaluate(eval_io, common);
        if (*predict_cmd) return run_predict(predict_io, common);
        if (*sim_cmd) return run_simulate(sim);
        if (*br_cmd) return run_branching(br, common);
        if (*ab_cmd) return run_abilities(ab);
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
