#pragma once

// Posterior parent assignment for each event: either the background process
// (immigrant, parent 0) or one of the previous K events.
//
//   p(w_i = 0) ∝ delta^{z_i}_{u_i}
//   p(w_i = j) ∝ eta * gamma^{z_i}_{u_j,u_i} * exp(-beta^{z_i}_{u_j,u_i} (t_i - t_j))

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <vector>

#include "dmtpp/error.hpp"
#include "dmtpp/events.hpp"
#include "dmtpp/markmodel.hpp"

namespace dmtpp {

struct BranchingPosterior {
    std::size_t first_parent = 0;   ///< 1-based index of the oldest candidate parent
    std::vector<double> probability; ///< [0] immigrant, [k] parent first_parent + k - 1
    [[nodiscard]] std::size_t parent_of(std::size_t k) const { return k == 0 ? 0 : first_parent + k - 1; }
};

inline std::vector<BranchingPosterior> branching_posterior(const MarkParams& p, const EventSequence& seq, int K = 5) {
    if (K < 1) throw DataError("branching window K must be >= 1");
    const auto& ev = seq.events;
    std::vector<BranchingPosterior> out(ev.size());
    for (std::size_t i = 0; i < ev.size(); ++i) {
        const std::size_t from = i > static_cast<std::size_t>(K) ? i - static_cast<std::size_t>(K) : 0;
        auto& post = out[i];
        post.first_parent = from + 1;
        post.probability.reserve(i - from + 1);
        const int z = ev[i].z, u = ev[i].u;
        post.probability.push_back(p.d(z, u));
        for (std::size_t j = from; j < i; ++j) {
            if (!(ev[j].t < ev[i].t)) throw DataError("branching needs strictly increasing event times");
            post.probability.push_back(p.eta * p.g(z, ev[j].u, u) * std::exp(-p.b(z, ev[j].u, u) * (ev[i].t - ev[j].t)));
        }
        double total = 0.0;
        for (double x : post.probability) total += x;
        if (!(total > 0.0) || !std::isfinite(total)) {
            throw NumericError("branching posterior has zero mass at event " + std::to_string(i + 1));
        }
        for (double& x : post.probability) x /= total;
    }
    return out;
}

struct GenealogyEdge {
    std::size_t child = 0;  ///< 1-based
    int child_mark = 0;     ///< 0-based
    std::size_t parent = 0; ///< 1-based, 0 = immigrant
    double probability = 0.0;
};

/// For every event, the most probable parent plus every other parent with
/// probability above `threshold`, ordered by child then parent.
inline std::vector<GenealogyEdge> genealogy_export(const std::vector<BranchingPosterior>& posts,
                                                   const EventSequence& seq, double threshold) {
    std::vector<GenealogyEdge> edges;
    for (std::size_t i = 0; i < posts.size(); ++i) {
        const auto& pr = posts[i].probability;
        const auto best = static_cast<std::size_t>(std::max_element(pr.begin(), pr.end()) - pr.begin());
        for (std::size_t k = 0; k < pr.size(); ++k) {
            if (k == best || pr[k] > threshold) {
                edges.push_back({i + 1, seq.events[i].u, posts[i].parent_of(k), pr[k]});
            }
        }
    }
    return edges;
}

inline void write_genealogy_csv(std::ostream& out, const std::vector<GenealogyEdge>& edges, bool header = true,
                                std::size_t sequence = 0) {
    if (header) out << "sequence,child_index,child_mark,parent_index,probability\n";
    out.precision(17);
    for (const auto& e : edges) {
        out << sequence << ',' << e.child << ',' << e.child_mark + 1 << ',' << e.parent << ',' << e.probability << '\n';
    }
}

} // namespace dmtpp
