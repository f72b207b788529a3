#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "dcg/errors.hpp"
#include "dcg/graph.hpp"
#include "dcg/tfidf.hpp"

namespace dcg {

struct PruneParams {
    double alpha = 0.3;            // reproduction-block scale
    double beta = 0.6;             // cross-block scale, beta > alpha
    double theta = 0.75;           // retained proportion that stops the loop
    int max_t = 5;                 // indirect-relation horizon
    double eps = 1e-12;            // gap / degree guard
    double merge_threshold = 0.9;  // cosine at which retained methods merge

    void check() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
        if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("beta must lie in (0,1)");
        if (!(beta > alpha)) throw ConfigError("beta must exceed alpha");
        if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in (0,1]");
        if (max_t < 1) throw ConfigError("max_t must be at least 1");
        if (!(eps > 0.0)) throw ConfigError("eps must be positive");
        if (!(merge_threshold > 0.0 && merge_threshold <= 1.0)) {
            throw ConfigError("merge_threshold must lie in (0,1]");
        }
    }

    static PruneParams from_json(const nlohmann::json& j) {
        PruneParams p;
        p.alpha = j.value("alpha", p.alpha);
        p.beta = j.value("beta", p.beta);
        p.theta = j.value("theta", p.theta);
        p.max_t = j.value("max_t", p.max_t);
        p.eps = j.value("eps", p.eps);
        p.merge_threshold = j.value("merge_threshold", p.merge_threshold);
        p.check();
        return p;
    }

    nlohmann::json to_json() const {
        return {{"alpha", alpha},   {"beta", beta}, {"theta", theta},
                {"max_t", max_t},   {"eps", eps},   {"merge_threshold", merge_threshold}};
    }
};

/// Dense symmetric adjacency with type nodes first, then reproduction nodes.
struct BlockAdjacency {
    std::vector<std::string> order;  // node ids, type block then reproduction block
    Eigen::Index type_count = 0;
    Eigen::MatrixXd matrix;

    Eigen::Index size() const { return matrix.rows(); }
    Eigen::Index reproduction_count() const { return size() - type_count; }
};

struct Spectrum {
    Eigen::VectorXd values;  // descending
    Eigen::MatrixXd u;
    Eigen::MatrixXd v;
};

struct PruneReport {
    int iterations = 0;
    std::size_t cut = 0;
    std::vector<std::string> retained;                        // surviving reproduction nodes
    std::vector<std::string> pruned;                          // removed reproduction nodes
    std::vector<std::pair<std::string, std::string>> merged;  // absorbed -> survivor

    nlohmann::json to_json() const {
        nlohmann::json merged_json = nlohmann::json::array();
        for (const auto& [absorbed, survivor] : merged) {
            merged_json.push_back({{"absorbed", absorbed}, {"into", survivor}});
        }
        return {{"iterations", iterations}, {"cut", cut},     {"retained", retained},
                {"pruned", pruned},         {"merged", merged_json}};
    }
};

/// ReLU(sim_root - sim_pair): high root correlation and low pairwise
/// similarity mark a node as non-redundant.
inline double reproduction_score(double sim_root, double sim_pair) {
    const double s = sim_root - sim_pair;
    return s > 0.0 ? s : 0.0;
}

/// TF-IDF vectors for every node's contents, plus the per-node scoring root.
class NodeVectors {
public:
    NodeVectors(const Graph& graph, const TfidfModel& model) : graph_(graph) {
        for (const auto& [id, node] : graph.nodes()) {
            vectors_.emplace(id, model.vectorize(contents(node)));
        }
    }

    const SparseVector& of(const std::string& id) const { return vectors_.at(id); }

    double sim(const std::string& a, const std::string& b) const { return cosine(of(a), of(b)); }

    const std::string& root_of(const std::string& id) const {
        auto it = roots_.find(id);
        if (it == roots_.end()) it = roots_.emplace(id, graph_.root_of(id)).first;
        return it->second;
    }

    /// Eq-style pairwise score with the root exception: similarity terms
    /// touching the root node itself contribute zero.
    double score(const std::string& i, const std::string& j) const {
        if (i == j) throw ConstraintViolationError("reproduction score requires i != j");
        const std::string& root = root_of(i);
        const double sim_root = (i == root) ? 0.0 : sim(i, root);
        const double sim_pair = (i == root || j == root) ? 0.0 : sim(i, j);
        return reproduction_score(sim_root, sim_pair);
    }

private:
    const Graph& graph_;
    std::map<std::string, SparseVector> vectors_;
    mutable std::map<std::string, std::string> roots_;
};

/// Fits the TF-IDF model over every node's contents, ordered by node id.
inline TfidfModel fit_node_model(const Graph& graph) {
    if (graph.empty()) throw EmptyGraphError("cannot fit a model over an empty graph");
    std::vector<std::string> corpus;
    corpus.reserve(graph.node_count());
    for (const auto& [id, node] : graph.nodes()) corpus.push_back(contents(node));
    return TfidfModel::fit(corpus);
}

inline double reproduction_score(const TfidfModel& model, const Graph& graph, const std::string& i,
                                 const std::string& j) {
    return NodeVectors(graph, model).score(i, j);
}

/// Symmetrized but unscaled block adjacency: pairwise scores within each
/// block, cross entries only where a link edge (or membership in a linked
/// step) connects a type node to a reproduction node.
inline BlockAdjacency build_raw_adjacency(const Graph& graph, const TfidfModel& model) {
    if (graph.empty()) throw EmptyGraphError("cannot build an adjacency over an empty graph");

    BlockAdjacency adj;
    std::vector<std::string> repro;
    for (const auto& [id, node] : graph.nodes()) {
        const NodeKind k = kind_of(node);
        if (k == NodeKind::Type) adj.order.push_back(id);
        else if (is_reproduction(k)) repro.push_back(id);
    }
    adj.type_count = static_cast<Eigen::Index>(adj.order.size());
    adj.order.insert(adj.order.end(), repro.begin(), repro.end());

    const auto n = static_cast<Eigen::Index>(adj.order.size());
    std::map<std::string, Eigen::Index> index;
    for (Eigen::Index i = 0; i < n; ++i) index[adj.order[i]] = i;

    // reproduction nodes reachable from each type node through link edges
    std::map<std::string, std::set<std::string>> linked;
    for (const Edge& e : graph.edges()) {
        if (e.kind != EdgeKind::Link) continue;
        if (!index.count(e.src) || !index.count(e.dst)) continue;
        auto& slot = linked[e.src];
        for (const auto& member : graph.achievement_component(e.dst)) slot.insert(member);
    }

    NodeVectors vectors(graph, model);
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool i_type = i < adj.type_count;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const bool j_type = j < adj.type_count;
            if (i_type != j_type) {
                const std::string& type_id = i_type ? adj.order[i] : adj.order[j];
                const std::string& repro_id = i_type ? adj.order[j] : adj.order[i];
                auto it = linked.find(type_id);
                if (it == linked.end() || !it->second.count(repro_id)) continue;
            }
            raw(i, j) = vectors.score(adj.order[i], adj.order[j]);
        }
    }

    adj.matrix = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double sym = 0.5 * (raw(i, j) + raw(j, i));
            adj.matrix(i, j) = sym;
            adj.matrix(j, i) = sym;
        }
    }
    return adj;
}

/// Raw adjacency with the reproduction block scaled by alpha and the cross
/// block by beta; the type block stays unscaled.
inline BlockAdjacency build_adjacency(const Graph& graph, const TfidfModel& model, const PruneParams& params) {
    BlockAdjacency adj = build_raw_adjacency(graph, model);
    const auto n = adj.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool i_type = i < adj.type_count;
        for (Eigen::Index j = 0; j < n; ++j) {
            const bool j_type = j < adj.type_count;
            if (!i_type && !j_type) adj.matrix(i, j) = params.alpha * adj.matrix(i, j);
            else if (i_type != j_type) adj.matrix(i, j) = params.beta * adj.matrix(i, j);
        }
    }
    return adj;
}

/// L = I - D^{-1/2} A^t D^{-1/2}, with D the degree matrix of A^t and zero
/// degrees replaced by eps. Entries are computed once per pair, so L is
/// exactly symmetric.
inline Eigen::MatrixXd normalized_laplacian(const Eigen::MatrixXd& a, int t, double eps) {
    if (t < 1) throw ConfigError("laplacian power t must be at least 1");
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd b = a;
    for (int k = 1; k < t; ++k) b = b * a;
    // powering in floating point can leave dust asymmetry
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double sym = 0.5 * (b(i, j) + b(j, i));
            b(i, j) = sym;
            b(j, i) = sym;
        }
    }
    Eigen::VectorXd degree = b.rowwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (degree(i) == 0.0) degree(i) = eps;
    }
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        l(i, i) = 1.0 - b(i, i) / degree(i);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double value = -b(i, j) / std::sqrt(degree(i) * degree(j));
            l(i, j) = value;
            l(j, i) = value;
        }
    }
    return l;
}

inline Spectrum svd_spectrum(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return Spectrum{svd.singularValues(), svd.matrixU(), svd.matrixV()};
}

/// Index (1-based) of the steepest decline in a descending sequence, scored
/// as ln(v[i] - v[i+1] + eps). Ties break toward the smaller index; when
/// every gap is below eps the full length is returned (no cut).
inline std::size_t log_gap_cutoff(const std::vector<double>& values, double eps) {
    const std::size_t n = values.size();
    if (n < 2) throw TooShortError("need at least two values, got " + std::to_string(n));
    double best_gap = -1.0;
    std::size_t best_index = n;
    for (std::size_t i = 1; i < n; ++i) {
        const double gap = values[i - 1] - values[i];
        if (gap > best_gap) {
            best_gap = gap;
            best_index = i;
        }
    }
    if (best_gap < eps) return n;
    return best_index;
}

struct PruneResult {
    Graph graph;
    PruneReport report;
};

namespace detail {

class UnionFind {
public:
    const std::string& find(const std::string& x) {
        auto it = parent_.find(x);
        if (it == parent_.end()) {
            it = parent_.emplace(x, x).first;
            return it->first;
        }
        if (it->second == x) return it->first;
        const std::string root = find(it->second);
        parent_[x] = root;
        return parent_.find(x)->second;
    }

    /// Unites two classes; the lexicographically smaller root survives.
    void unite(const std::string& a, const std::string& b) {
        std::string ra = find(a);
        std::string rb = find(b);
        if (ra == rb) return;
        if (rb < ra) std::swap(ra, rb);
        parent_[rb] = ra;
    }

private:
    std::map<std::string, std::string> parent_;
};

}  // namespace detail

/// Full pruning loop: score, normalize, decompose, cut, retain by leverage,
/// merge near-duplicates and simplify dangling gates. Type nodes are always
/// preserved; the output graph validates clean.
inline PruneResult prune(const Graph& graph, const TfidfModel& model, const PruneParams& params) {
    params.check();
    if (graph.empty()) throw EmptyGraphError("cannot prune an empty graph");

    const BlockAdjacency adj = build_adjacency(graph, model, params);
    const auto n = adj.size();
    const auto n_type = adj.type_count;
    const auto n_repro = adj.reproduction_count();

    PruneReport report;
    std::set<std::string> keep;

    if (n < 2) {
        report.iterations = 0;
        report.cut = static_cast<std::size_t>(n);
        for (Eigen::Index i = n_type; i < n; ++i) keep.insert(adj.order[i]);
    } else {
        Spectrum spectrum;
        std::size_t cut = static_cast<std::size_t>(n);
        int used_t = 0;
        for (int t = 1; t <= params.max_t; ++t) {
            const Eigen::MatrixXd lap = normalized_laplacian(adj.matrix, t, params.eps);
            spectrum = svd_spectrum(lap);
            std::vector<double> values(spectrum.values.data(), spectrum.values.data() + spectrum.values.size());
            cut = log_gap_cutoff(values, params.eps);
            used_t = t;
            if (static_cast<double>(cut) / static_cast<double>(n) >= params.theta) break;
        }
        report.iterations = used_t;
        report.cut = cut;

        // leverage of each reproduction row over the retained directions
        const auto cut_cols = static_cast<Eigen::Index>(cut);
        std::vector<std::pair<double, std::string>> ranked;
        for (Eigen::Index r = n_type; r < n; ++r) {
            double sum = 0.0;
            for (Eigen::Index k = 0; k < cut_cols; ++k) {
                const double entry = spectrum.u(r, k) * spectrum.values(k);
                sum += entry * entry;
            }
            ranked.emplace_back(std::sqrt(sum), adj.order[r]);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const std::size_t budget = cut > static_cast<std::size_t>(n_type)
                                       ? std::min<std::size_t>(cut - static_cast<std::size_t>(n_type),
                                                               static_cast<std::size_t>(n_repro))
                                       : std::size_t{0};
        for (std::size_t i = 0; i < budget; ++i) keep.insert(ranked[i].second);
    }

    // a goal stays while any method of its step survives
    for (Eigen::Index r = n_type; r < n; ++r) {
        const std::string& id = adj.order[r];
        if (kind_of(graph.node(id)) != NodeKind::Goal || keep.count(id)) continue;
        for (const auto& member : graph.achievement_component(id)) {
            if (keep.count(member) && kind_of(graph.node(member)) == NodeKind::Method) {
                keep.insert(id);
                break;
            }
        }
    }

    // merge near-duplicate retained methods within the same step
    NodeVectors vectors(graph, model);
    std::vector<std::string> kept_methods;
    for (const auto& id : keep) {
        if (kind_of(graph.node(id)) == NodeKind::Method) kept_methods.push_back(id);
    }
    detail::UnionFind merge_sets;
    for (std::size_t i = 0; i < kept_methods.size(); ++i) {
        for (std::size_t j = i + 1; j < kept_methods.size(); ++j) {
            const auto& a = kept_methods[i];
            const auto& b = kept_methods[j];
            const auto component = graph.achievement_component(a);
            if (!std::binary_search(component.begin(), component.end(), b)) continue;
            if (vectors.sim(a, b) >= params.merge_threshold) merge_sets.unite(a, b);
        }
    }
    std::map<std::string, std::string> remap;
    for (const auto& id : kept_methods) {
        const std::string& root = merge_sets.find(id);
        if (root != id) {
            remap[id] = root;
            report.merged.emplace_back(id, root);
        }
    }
    std::sort(report.merged.begin(), report.merged.end());

    auto survives = [&](const std::string& id) { return keep.count(id) && !remap.count(id); };
    auto target_of = [&](const std::string& id) -> const std::string& {
        auto it = remap.find(id);
        return it == remap.end() ? id : it->second;
    };

    Graph out;
    for (const auto& [id, node] : graph.nodes()) {
        const NodeKind k = kind_of(node);
        // fail reason nodes are not part of a DCG's blocks; pass them through
        if (k == NodeKind::Type || k == NodeKind::FailReason || (is_reproduction(k) && survives(id))) {
            out.force_node(node);
        }
    }
    std::set<Edge> edges;
    for (const Edge& e : graph.edges()) {
        Edge mapped = e;
        switch (e.kind) {
            case EdgeKind::Type:
                break;
            case EdgeKind::Link: {
                if (kind_of(graph.node(e.dst)) != NodeKind::FailReason) {
                    if (!keep.count(e.dst)) continue;
                    mapped.dst = target_of(e.dst);
                }
                break;
            }
            case EdgeKind::Achievement: {
                if (!keep.count(e.src) || !keep.count(e.dst)) continue;
                mapped.src = target_of(e.src);
                mapped.dst = target_of(e.dst);
                break;
            }
        }
        if (mapped.src == mapped.dst) continue;
        if (edges.insert(mapped).second) out.force_edge(mapped);
    }
    for (const auto& [id, memes] : graph.provenance()) {
        if (!out.has_node(id) && !remap.count(id)) continue;
        out.force_provenance(target_of(id), {memes.begin(), memes.end()});
    }

    // simplify gates left dangling by the removals
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<std::string> gates;
        for (const auto& [id, node] : out.nodes()) {
            if (kind_of(node) == NodeKind::Gate) gates.push_back(id);
        }
        for (const auto& gate : gates) {
            std::vector<std::string> inbound;
            std::vector<std::string> outbound;
            for (const Edge& e : out.edges()) {
                if (e.kind != EdgeKind::Achievement) continue;
                if (e.dst == gate) inbound.push_back(e.src);
                if (e.src == gate) outbound.push_back(e.dst);
            }
            const GateOp op = std::get<GateData>(out.node(gate).data).op;
            if (inbound.empty()) {
                out.erase_node(gate);
                changed = true;
            } else if (op != GateOp::Not && inbound.size() == 1) {
                // single remaining input collapses to a direct edge
                const std::string source = inbound.front();
                out.erase_node(gate);
                for (const auto& target : outbound) {
                    if (source == target) continue;
                    Edge direct{EdgeKind::Achievement, source, target};
                    bool exists = false;
                    for (const Edge& e : out.edges()) {
                        if (e == direct) {
                            exists = true;
                            break;
                        }
                    }
                    if (!exists) out.force_edge(direct);
                }
                changed = true;
            }
        }
    }

    for (Eigen::Index r = n_type; r < n; ++r) {
        const std::string& id = adj.order[r];
        if (out.has_node(id)) report.retained.push_back(id);
        else report.pruned.push_back(id);
    }

    out.reseed_counters();
    const auto violations = out.validate();
    if (!violations.empty()) {
        throw StageError("pruned graph failed validation: " + violations.front().rule + " @ " +
                         violations.front().subject);
    }
    return PruneResult{std::move(out), std::move(report)};
}

}  // namespace dcg
