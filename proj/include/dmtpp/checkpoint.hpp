#pragma once

// Versioned JSON checkpoints. Schema (version 1):
//
//   { "format": "dmtpp-checkpoint", "version": 1, "U", "Z", "p",
//     "variational": { delta_raw, gamma_raw, beta_loc, beta_log_scale, eta_loc, eta_log_scale },
//     "time": { mu, var, mu0, var0, survival },
//     "train_config": { ... }, "seed",
//     "log": { best_epoch, stopped_early, epochs: [[epoch, objective, validation, skipped], ..] },
//     "latent": { link: {...}, omega, mu, sigma_raw, rho_raw, sigma_floor, E, S, G }   (optional) }

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dmtpp/arlatent.hpp"
#include "dmtpp/error.hpp"
#include "dmtpp/timemodel.hpp"
#include "dmtpp/vi.hpp"

namespace dmtpp {

inline constexpr int kCheckpointVersion = 1;

struct LatentBlock {
    LinkConfig link;
    ARLatentParams params;
};

struct ModelCheckpoint {
    int U = 0;
    int Z = 0; ///< dataset zone count (0 = unzoned)
    int p = 0;
    VariationalParams xi;
    TimeParams time;
    TrainConfig config;
    TrainingLog log;
    std::optional<LatentBlock> latent;

    /// Mark parameters seen by one sequence (plug-in estimate, plus omega when present).
    [[nodiscard]] MarkParams params_for(const EventSequence& seq) const {
        const MarkParams base = plugin_estimate(xi);
        if (!latent) return base;
        return sequence_params(base, latent->params, latent->link, seq);
    }
};

namespace detail {

// JSON has no representation for non-finite numbers; encode them as strings.
inline nlohmann::json num(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}
inline double num(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DataError("checkpoint: bad number '" + s + "'");
}

} // namespace detail

inline nlohmann::ordered_json to_json(const ModelCheckpoint& c) {
    nlohmann::ordered_json j;
    j["format"] = "dmtpp-checkpoint";
    j["version"] = kCheckpointVersion;
    j["U"] = c.U;
    j["Z"] = c.Z;
    j["p"] = c.p;
    j["variational"] = {{"delta_raw", c.xi.delta_raw},       {"gamma_raw", c.xi.gamma_raw},
                        {"beta_loc", c.xi.beta_loc},         {"beta_log_scale", c.xi.beta_log_scale},
                        {"eta_loc", c.xi.eta_loc},           {"eta_log_scale", c.xi.eta_log_scale}};
    j["time"] = {{"mu", c.time.mu},     {"var", c.time.var},   {"mu0", c.time.mu0},
                 {"var0", c.time.var0}, {"survival", c.time.survival_enabled}};
    const auto& t = c.config;
    j["train_config"] = {{"L", t.L},
                         {"batch_size", t.batch_size},
                         {"epochs", t.epochs},
                         {"learning_rate", t.learning_rate},
                         {"beta1", t.beta1},
                         {"beta2", t.beta2},
                         {"adam_eps", t.adam_eps},
                         {"Q", t.Q},
                         {"normalize", t.normalize},
                         {"include_kl", t.include_kl},
                         {"patience", t.patience},
                         {"init_concentration", t.init_concentration},
                         {"init_log_scale", t.init_log_scale}};
    j["seed"] = t.seed;
    auto epochs = nlohmann::ordered_json::array();
    for (const auto& e : c.log.epochs) {
        epochs.push_back({e.epoch, detail::num(e.objective), detail::num(e.validation), e.skipped_steps});
    }
    j["log"] = {{"best_epoch", c.log.best_epoch}, {"stopped_early", c.log.stopped_early}, {"epochs", epochs}};
    if (c.latent) {
        const auto& l = c.latent->link;
        const auto& a = c.latent->params;
        j["latent"] = {{"link",
                        {{"mode", link_mode_name(l.mode)},
                         {"E", l.E},
                         {"home_marks", l.home_marks},
                         {"groups", l.groups},
                         {"order_base", l.order_base},
                         {"num_orders", l.num_orders}}},
                       {"sigma_floor", a.sigma_floor},
                       {"omega", a.omega},
                       {"mu", a.mu},
                       {"sigma_raw", a.sigma_raw},
                       {"rho_raw", a.rho_raw}};
    }
    return j;
}

inline ModelCheckpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string{}) != "dmtpp-checkpoint") throw DataError("not a dmtpp checkpoint");
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw DataError("unsupported checkpoint version " + std::to_string(version));
        }
        ModelCheckpoint c;
        c.U = j.at("U").get<int>();
        c.Z = j.at("Z").get<int>();
        c.p = j.at("p").get<int>();
        const int zones = std::max(c.Z, 1);
        c.xi = init_variational(c.U, zones);
        const auto& v = j.at("variational");
        auto take = [&](const nlohmann::json& src, const char* key, std::vector<double>& dst) {
            auto vals = src.at(key).get<std::vector<double>>();
            if (vals.size() != dst.size()) throw DataError(std::string("checkpoint: '") + key + "' has the wrong size");
            dst = std::move(vals);
        };
        take(v, "delta_raw", c.xi.delta_raw);
        take(v, "gamma_raw", c.xi.gamma_raw);
        take(v, "beta_loc", c.xi.beta_loc);
        take(v, "beta_log_scale", c.xi.beta_log_scale);
        c.xi.eta_loc = v.at("eta_loc").get<double>();
        c.xi.eta_log_scale = v.at("eta_log_scale").get<double>();

        const auto& t = j.at("time");
        c.time.mu.assign(static_cast<std::size_t>(c.U), 0.0);
        c.time.var.assign(static_cast<std::size_t>(c.U), 0.0);
        take(t, "mu", c.time.mu);
        take(t, "var", c.time.var);
        c.time.mu0 = t.at("mu0").get<double>();
        c.time.var0 = t.at("var0").get<double>();
        c.time.survival_enabled = t.at("survival").get<bool>();

        const auto& tc = j.at("train_config");
        auto& cfg = c.config;
        cfg.L = tc.at("L").get<int>();
        cfg.batch_size = tc.at("batch_size").get<int>();
        cfg.epochs = tc.at("epochs").get<int>();
        cfg.learning_rate = tc.at("learning_rate").get<double>();
        cfg.beta1 = tc.at("beta1").get<double>();
        cfg.beta2 = tc.at("beta2").get<double>();
        cfg.adam_eps = tc.at("adam_eps").get<double>();
        cfg.Q = tc.at("Q").get<int>();
        cfg.normalize = tc.at("normalize").get<bool>();
        cfg.include_kl = tc.at("include_kl").get<bool>();
        cfg.patience = tc.at("patience").get<int>();
        cfg.init_concentration = tc.at("init_concentration").get<double>();
        cfg.init_log_scale = tc.at("init_log_scale").get<double>();
        cfg.seed = j.at("seed").get<std::uint64_t>();

        const auto& lg = j.at("log");
        c.log.best_epoch = lg.at("best_epoch").get<int>();
        c.log.stopped_early = lg.at("stopped_early").get<bool>();
        for (const auto& e : lg.at("epochs")) {
            c.log.epochs.push_back({e.at(0).get<int>(), detail::num(e.at(1)), detail::num(e.at(2)), e.at(3).get<int>()});
        }

        if (j.contains("latent")) {
            const auto& lj = j.at("latent");
            const auto& k = lj.at("link");
            LatentBlock b;
            b.link.mode = parse_link_mode(k.at("mode").get<std::string>());
            b.link.U = c.U;
            b.link.E = k.at("E").get<int>();
            b.link.home_marks = k.at("home_marks").get<int>();
            b.link.groups = k.at("groups").get<std::vector<int>>();
            b.link.order_base = k.at("order_base").get<std::int64_t>();
            b.link.num_orders = k.at("num_orders").get<int>();
            if (static_cast<int>(b.link.groups.size()) != c.U - 1) throw DataError("checkpoint: group map has the wrong size");
            ARConfig ac;
            ac.sigma_floor = lj.at("sigma_floor").get<double>();
            ac.init_sigma = ac.sigma_floor + 1.0;
            b.params = init_latent(b.link, ac);
            take(lj, "omega", b.params.omega);
            take(lj, "mu", b.params.mu);
            take(lj, "sigma_raw", b.params.sigma_raw);
            take(lj, "rho_raw", b.params.rho_raw);
            c.latent = std::move(b);
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json(c).dump(1) << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

/// Data files without a header infer U from the largest observed mark, so a
/// test file may show fewer marks than the model; it is widened to the
/// model's shape. More marks, zones or covariates than the model is an error.
inline void adopt_model_shape(const ModelCheckpoint& c, Dataset& d) {
    const bool zoned_model = c.Z > 0, zoned_data = d.Z > 0;
    if (d.U > c.U || zoned_model != zoned_data || d.Z > c.Z || (c.latent && d.p != c.p)) {
        throw DataError("checkpoint (U=" + std::to_string(c.U) + ", Z=" + std::to_string(c.Z) + ", p=" +
                        std::to_string(c.p) + ") is incompatible with the data (U=" + std::to_string(d.U) +
                        ", Z=" + std::to_string(d.Z) + ", p=" + std::to_string(d.p) + ")");
    }
    d.U = c.U;
    d.Z = c.Z;
}

} // namespace dmtpp
