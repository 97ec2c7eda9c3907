#pragma once

// Event-sequence data model and JSON-lines dataset IO.
//
// File format: an optional header object {"U":..,"Z":..,"p":..,"mark_labels":[..]}
// followed by one sequence per line:
//   {"T":10.0,"order_index":3,"covariates":[..],"events":[{"t":1.0,"u":1,"z":2},..]}
// Marks and zones are 1-based in files and 0-based in memory.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmtpp/error.hpp"
#include "dmtpp/stochastics.hpp"

namespace dmtpp {

struct Event {
    double t = 0.0;
    int u = 0; ///< mark, 0-based
    int z = 0; ///< zone, 0-based (0 when unzoned)
};

struct EventSequence {
    std::vector<Event> events;
    double T = 0.0;
    std::optional<std::int64_t> order_index;
    std::vector<double> covariates;

    [[nodiscard]] std::size_t size() const noexcept { return events.size(); }
};

struct Dataset {
    std::vector<EventSequence> sequences;
    int U = 0;
    int Z = 0; ///< 0 when unzoned
    int p = 0;
    std::vector<std::string> mark_labels;

    /// Number of parameter zones; unzoned data behaves as a single zone.
    [[nodiscard]] int zones() const noexcept { return std::max(Z, 1); }
    [[nodiscard]] bool ordered() const noexcept {
        return !sequences.empty() && sequences.front().order_index.has_value();
    }
    [[nodiscard]] std::size_t num_events() const noexcept {
        std::size_t n = 0;
        for (const auto& s : sequences) n += s.size();
        return n;
    }
};

struct LoadOptions {
    /// When positive, event i of each sequence is shifted by i * jitter before
    /// validation, which separates tied timestamps.
    double jitter = 0.0;
};

namespace detail {

inline std::string at_line(std::size_t line) { return " at line " + std::to_string(line); }

inline void validate_sequence(const EventSequence& s, int U, int Z, int p, std::size_t line) {
    if (!(s.T > 0.0) || !std::isfinite(s.T)) throw DataError("horizon T must be positive" + at_line(line));
    double prev = -1.0;
    for (std::size_t i = 0; i < s.events.size(); ++i) {
        const Event& e = s.events[i];
        if (!(e.t >= 0.0) || !std::isfinite(e.t)) throw DataError("negative or non-finite time" + at_line(line));
        if (i > 0 && e.t == prev) throw DataError("duplicate timestamps" + at_line(line));
        if (i > 0 && e.t < prev) throw DataError("unsorted timestamps" + at_line(line));
        if (e.t >= s.T) throw DataError("event time >= T" + at_line(line));
        if (e.u < 0 || e.u >= U) throw DataError("mark out of range" + at_line(line));
        if (Z > 0 && (e.z < 0 || e.z >= Z)) throw DataError("zone out of range" + at_line(line));
        prev = e.t;
    }
    if (static_cast<int>(s.covariates.size()) != p) {
        throw DataError("covariate length differs from p" + at_line(line));
    }
}

} // namespace detail

/// Checks every Dataset invariant; line numbers in messages are sequence positions + 1.
inline void validate(const Dataset& d) {
    if (d.U < 1) throw DataError("dataset must declare U >= 1");
    if (d.sequences.empty()) throw DataError("dataset has no sequences");
    const bool ordered = d.sequences.front().order_index.has_value();
    for (std::size_t s = 0; s < d.sequences.size(); ++s) {
        if (d.sequences[s].order_index.has_value() != ordered) {
            throw DataError("order_index must be present on all sequences or none" + detail::at_line(s + 1));
        }
        detail::validate_sequence(d.sequences[s], d.U, d.Z, d.p, s + 1);
    }
}

inline Dataset parse_dataset(std::istream& in, const LoadOptions& options = {}) {
    Dataset d;
    std::optional<int> declared_U;
    std::optional<int> declared_Z;
    std::optional<int> declared_p;
    std::optional<bool> zoned;
    std::vector<std::size_t> lines;
    int max_u = 0;
    int max_z = 0;

    std::string text;
    std::size_t line = 0;
    bool first_object = true;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed line" + detail::at_line(line) + ": " + e.what());
        }
        if (!j.is_object()) throw DataError("expected a JSON object" + detail::at_line(line));
        try {
            if (first_object && !j.contains("events")) {
                first_object = false;
                if (j.contains("U")) declared_U = j.at("U").get<int>();
                if (j.contains("Z")) declared_Z = j.at("Z").get<int>();
                if (j.contains("p")) declared_p = j.at("p").get<int>();
                if (j.contains("mark_labels")) d.mark_labels = j.at("mark_labels").get<std::vector<std::string>>();
                continue;
            }
            first_object = false;
            EventSequence s;
            s.T = j.at("T").get<double>();
            if (j.contains("order_index")) s.order_index = j.at("order_index").get<std::int64_t>();
            if (j.contains("covariates")) s.covariates = j.at("covariates").get<std::vector<double>>();
            const auto& evs = j.at("events");
            if (!evs.is_array()) throw DataError("events must be an array" + detail::at_line(line));
            s.events.reserve(evs.size());
            for (std::size_t i = 0; i < evs.size(); ++i) {
                const auto& ej = evs[i];
                Event e;
                e.t = ej.at("t").get<double>() + options.jitter * static_cast<double>(i);
                e.u = ej.at("u").get<int>() - 1;
                const bool has_z = ej.contains("z");
                if (!zoned) zoned = has_z;
                if (*zoned != has_z) throw DataError("mixed zoned and unzoned events" + detail::at_line(line));
                if (has_z) {
                    e.z = ej.at("z").get<int>() - 1;
                    max_z = std::max(max_z, e.z + 1);
                }
                if (e.u < 0) throw DataError("marks must be >= 1" + detail::at_line(line));
                if (has_z && e.z < 0) throw DataError("zones must be >= 1" + detail::at_line(line));
                max_u = std::max(max_u, e.u + 1);
                s.events.push_back(e);
            }
            d.sequences.push_back(std::move(s));
            lines.push_back(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed line" + detail::at_line(line) + ": " + e.what());
        }
    }
    if (d.sequences.empty()) throw DataError("dataset has no sequences");

    d.U = declared_U.value_or(max_u);
    d.Z = declared_Z.value_or((zoned && *zoned) ? max_z : 0);
    if (declared_Z && *declared_Z > 0 && zoned && !*zoned) throw DataError("header declares zones but events carry none");
    d.p = declared_p.value_or(static_cast<int>(d.sequences.front().covariates.size()));
    if (d.U < 1) throw DataError("could not infer U (no events and no header)");
    if (max_u > d.U) throw DataError("mark exceeds declared U");

    const bool ordered = d.sequences.front().order_index.has_value();
    for (std::size_t s = 0; s < d.sequences.size(); ++s) {
        if (d.sequences[s].order_index.has_value() != ordered) {
            throw DataError("order_index must be present on all sequences or none" + detail::at_line(lines[s]));
        }
        detail::validate_sequence(d.sequences[s], d.U, d.Z, d.p, lines[s]);
    }
    return d;
}

inline Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file " + path.string());
    return parse_dataset(in, options);
}

/// Canonical form: header line first, then one sequence per line.
inline void save_dataset(const Dataset& d, std::ostream& out) {
    nlohmann::ordered_json header;
    header["U"] = d.U;
    header["Z"] = d.Z;
    header["p"] = d.p;
    if (!d.mark_labels.empty()) header["mark_labels"] = d.mark_labels;
    out << header.dump() << '\n';
    for (const auto& s : d.sequences) {
        nlohmann::ordered_json j;
        j["T"] = s.T;
        if (s.order_index) j["order_index"] = *s.order_index;
        if (d.p > 0) j["covariates"] = s.covariates;
        auto evs = nlohmann::ordered_json::array();
        for (const auto& e : s.events) {
            nlohmann::ordered_json ej;
            ej["t"] = e.t;
            ej["u"] = e.u + 1;
            if (d.Z > 0) ej["z"] = e.z + 1;
            evs.push_back(std::move(ej));
        }
        j["events"] = std::move(evs);
        out << j.dump() << '\n';
    }
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file " + path.string());
    save_dataset(d, out);
}

/// Dataset restricted to the given sequence indices (in the given order).
inline Dataset subset(const Dataset& d, std::span<const std::size_t> indices) {
    Dataset out;
    out.U = d.U;
    out.Z = d.Z;
    out.p = d.p;
    out.mark_labels = d.mark_labels;
    out.sequences.reserve(indices.size());
    for (std::size_t i : indices) out.sequences.push_back(d.sequences.at(i));
    return out;
}

struct DatasetSplit {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Largest-remainder apportionment of n items over the given fractions.
/// Remainder ties go to the earlier part.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& fractions) {
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = fractions[k] * static_cast<double>(n);
        sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[k] = exact - static_cast<double>(sizes[k]);
        assigned += sizes[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (int k = 0; assigned < n; k = (k + 1) % 3) {
        ++sizes[order[k]];
        ++assigned;
    }
    return sizes;
}

namespace detail {

inline void check_fractions(const std::array<double, 3>& f) {
    for (double x : f) {
        if (!(x > 0.0)) throw DataError("split fractions must be positive");
    }
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");
}

inline DatasetSplit assemble(const Dataset& d, const std::array<std::vector<std::size_t>, 3>& parts) {
    static constexpr std::array<const char*, 3> names{"train", "validation", "test"};
    for (int k = 0; k < 3; ++k) {
        if (parts[k].empty()) throw DataError(std::string("split leaves the ") + names[k] + " set empty");
    }
    return {subset(d, parts[0]), subset(d, parts[1]), subset(d, parts[2])};
}

} // namespace detail

/// Splits whole sequences into train/validation/test. Unordered datasets are
/// split at random (deterministic in seed); ordered datasets are split into
/// contiguous blocks of distinct order_index values.
inline DatasetSplit split_dataset(const Dataset& d, const std::array<double, 3>& fractions, std::uint64_t seed) {
    detail::check_fractions(fractions);
    std::array<std::vector<std::size_t>, 3> parts;
    if (d.ordered()) {
        std::vector<std::int64_t> levels;
        for (const auto& s : d.sequences) levels.push_back(*s.order_index);
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        const auto sizes = apportion(levels.size(), fractions);
        if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) {
            throw DataError("split leaves a part with no order_index values");
        }
        const std::int64_t val_from = levels[sizes[0]];
        const std::int64_t test_from = levels[sizes[0] + sizes[1]];
        for (std::size_t i = 0; i < d.sequences.size(); ++i) {
            const auto w = *d.sequences[i].order_index;
            parts[w < val_from ? 0 : (w < test_from ? 1 : 2)].push_back(i);
        }
        return detail::assemble(d, parts);
    }
    std::vector<std::size_t> perm(d.sequences.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed, 0x5E11);
    rng.shuffle(perm);
    const auto sizes = apportion(perm.size(), fractions);
    std::size_t at = 0;
    for (int k = 0; k < 3; ++k) {
        parts[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(at),
                        perm.begin() + static_cast<std::ptrdiff_t>(at + sizes[k]));
        std::sort(parts[k].begin(), parts[k].end());
        at += sizes[k];
    }
    return detail::assemble(d, parts);
}

/// Threshold split of an ordered dataset: train = [.., val_from), val = [val_from, test_from), test = [test_from, ..).
inline DatasetSplit split_by_order(const Dataset& d, std::int64_t val_from, std::int64_t test_from) {
    if (!d.ordered()) throw DataError("split_by_order requires order_index on every sequence");
    std::array<std::vector<std::size_t>, 3> parts;
    for (std::size_t i = 0; i < d.sequences.size(); ++i) {
        const auto w = *d.sequences[i].order_index;
        parts[w < val_from ? 0 : (w < test_from ? 1 : 2)].push_back(i);
    }
    return detail::assemble(d, parts);
}

} // namespace dmtpp
