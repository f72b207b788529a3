#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include "dcg/errors.hpp"

namespace dcg {

enum class NodeKind { Type, FailReason, Method, Gate, Goal };
enum class TypeLevel { L1 = 1, L2 = 2, L3 = 3 };
enum class GateOp { And, Or, Not };
enum class EdgeKind { Type, Link, Achievement };

/// The seven fixed macro categories allowed as L1 type labels.
inline const std::array<std::string_view, 7>& macro_types() {
    static const std::array<std::string_view, 7> kinds = {
        "Animal", "Culture", "Gender", "Human", "Nationality", "Political", "Religion"};
    return kinds;
}

/// Case-folds and squeezes whitespace so "Video Game" and "video  game"
/// compare as the same label.
inline std::string normalize_label(std::string_view label) {
    std::string out;
    bool pending_space = false;
    for (char c : label) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(u)));
    }
    return out;
}

/// Canonical spelling of a macro type, or nullopt when the label is not one
/// of the seven categories.
inline std::optional<std::string> canonical_macro_type(std::string_view label) {
    const std::string norm = normalize_label(label);
    for (std::string_view m : macro_types()) {
        if (normalize_label(m) == norm) return std::string(m);
    }
    return std::nullopt;
}

struct TypeData {
    TypeLevel level = TypeLevel::L1;
    std::string label;
    friend bool operator==(const TypeData&, const TypeData&) = default;
};

struct FailReasonData {
    std::string reason;            // one sentence
    std::string meme_description;
    std::string meme_id;
    friend bool operator==(const FailReasonData&, const FailReasonData&) = default;
};

struct MethodData {
    std::string description;
    int harmful = 0;  // {0,1}
    friend bool operator==(const MethodData&, const MethodData&) = default;
};

struct GateData {
    GateOp op = GateOp::And;
    friend bool operator==(const GateData&, const GateData&) = default;
};

struct GoalData {
    std::string description;
    int harmful = 0;  // {0,1}
    friend bool operator==(const GoalData&, const GoalData&) = default;
};

using NodeData = std::variant<TypeData, FailReasonData, MethodData, GateData, GoalData>;

struct Node {
    std::string id;
    NodeData data;
};

inline NodeKind kind_of(const NodeData& data) {
    switch (data.index()) {
        case 0: return NodeKind::Type;
        case 1: return NodeKind::FailReason;
        case 2: return NodeKind::Method;
        case 3: return NodeKind::Gate;
        default: return NodeKind::Goal;
    }
}

inline NodeKind kind_of(const Node& node) { return kind_of(node.data); }

/// Method, gate and goal nodes form the reproduction block of a DCG.
inline bool is_reproduction(NodeKind k) {
    return k == NodeKind::Method || k == NodeKind::Gate || k == NodeKind::Goal;
}

/// Text a node contributes to similarity computations: its label,
/// description or reason. Gates carry no text.
inline std::string contents(const Node& node) {
    switch (kind_of(node)) {
        case NodeKind::Type: return std::get<TypeData>(node.data).label;
        case NodeKind::FailReason: return std::get<FailReasonData>(node.data).reason;
        case NodeKind::Method: return std::get<MethodData>(node.data).description;
        case NodeKind::Goal: return std::get<GoalData>(node.data).description;
        case NodeKind::Gate: return {};
    }
    return {};
}

struct Edge {
    EdgeKind kind = EdgeKind::Type;
    std::string src;
    std::string dst;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge& a, const Edge& b) {
        return std::tie(a.src, a.dst, a.kind) <=> std::tie(b.src, b.dst, b.kind);
    }
};

/// One schema violation found by Graph::validate.
struct Violation {
    std::string rule;     // stable identifier, e.g. "type-edge-level-order"
    std::string subject;  // node id or "src->dst" for edges
    std::string message;
};

/// Declarative payload for materializing one reproduction step atomically.
/// Edges reference method/gate keys local to the spec; "goal" names the
/// goal node.
struct StepSpec {
    struct MethodSpec {
        std::string key;
        std::string description;
        int harmful = 0;
    };
    struct GateSpec {
        std::string key;
        GateOp op = GateOp::And;
    };

    std::vector<MethodSpec> methods;
    std::vector<GateSpec> gates;
    std::string goal_description;
    int goal_harmful = 0;
    std::vector<std::pair<std::string, std::string>> edges;
    std::vector<std::string> provenance;  // meme ids stamped on every node
};

/// A connected method/gate/goal component plus the type nodes attached to it
/// through link edges.
struct ReproductionStep {
    std::vector<std::string> nodes;       // reproduction node ids, sorted
    std::vector<std::string> type_nodes;  // attached type node ids, sorted
    std::vector<std::string> goals;       // goal ids within the component

    const std::string& goal() const {
        if (goals.empty()) throw NoGoalError("step has no goal node");
        if (goals.size() > 1) throw MultipleGoalsError("step has " + std::to_string(goals.size()) + " goal nodes");
        return goals.front();
    }

    bool contains(const std::string& id) const {
        return std::binary_search(nodes.begin(), nodes.end(), id) ||
               std::binary_search(type_nodes.begin(), type_nodes.end(), id);
    }
};

/// Heterogeneous graph shared by the fail reason tree and the DCG.
///
/// Checked mutators keep the graph schema-valid at every step; force_*entry
/// points bypass the checks for deserialization and tests, after which
/// validate() reports what is broken. Single writer, many readers.
class Graph {
public:
    // -- checked mutation ---------------------------------------------------

    /// Adds (or finds) an L1 macro type node. Rejects labels outside the
    /// seven fixed categories.
    std::string add_macro_type(std::string_view label) {
        auto canon = canonical_macro_type(label);
        if (!canon) {
            throw ConstraintViolationError("L1 label '" + std::string(label) +
                                           "' is not one of the seven macro types");
        }
        if (auto existing = find_type(TypeLevel::L1, *canon)) return *existing;
        return insert_node(TypeData{TypeLevel::L1, *canon}, "t");
    }

    /// Adds (or finds) a subtype under `parent`. Labels are deduplicated per
    /// parent after normalization.
    std::string add_subtype(TypeLevel level, std::string_view label, const std::string& parent) {
        if (level == TypeLevel::L1) {
            throw ConstraintViolationError("subtypes must be L2 or L3");
        }
        const Node& p = node(parent);
        if (kind_of(p) != NodeKind::Type) {
            throw ConstraintViolationError("parent of a subtype must be a type node");
        }
        const auto parent_level = std::get<TypeData>(p.data).level;
        if (static_cast<int>(parent_level) + 1 != static_cast<int>(level)) {
            throw ConstraintViolationError("type edge must go from level " +
                                           std::to_string(static_cast<int>(level) - 1) + " to " +
                                           std::to_string(static_cast<int>(level)));
        }
        const std::string norm = normalize_label(label);
        for (const Edge& e : edges_) {
            if (e.kind != EdgeKind::Type || e.src != parent) continue;
            const Node& child = node(e.dst);
            const auto& td = std::get<TypeData>(child.data);
            if (td.level == level && normalize_label(td.label) == norm) return child.id;
        }
        if (norm.empty()) throw ConstraintViolationError("type label must be non-empty");
        const std::string id = insert_node(TypeData{level, std::string(label)}, "t");
        edges_.push_back(Edge{EdgeKind::Type, parent, id});
        return id;
    }

    /// Adds a fail reason node with its provenance meme ids.
    std::string add_fail_reason(FailReasonData data, std::vector<std::string> memes = {}) {
        if (data.reason.empty()) throw ConstraintViolationError("fail reason must be non-empty");
        if (data.meme_id.empty()) throw ConstraintViolationError("fail reason requires a meme id");
        if (memes.empty()) memes.push_back(data.meme_id);
        const std::string id = insert_node(std::move(data), "f");
        add_provenance(id, memes);
        return id;
    }

    /// Materializes a whole reproduction step: methods, gates, one goal and
    /// the achievement edges between them. Returns local key -> node id;
    /// the goal is stored under "goal".
    std::map<std::string, std::string> add_step(const StepSpec& spec) {
        if (spec.methods.empty()) throw ConstraintViolationError("a step requires at least one method");
        if (spec.goal_description.empty()) throw ConstraintViolationError("a step requires a goal description");
        if (spec.goal_harmful != 0 && spec.goal_harmful != 1) {
            throw ConstraintViolationError("harmful indicator must be 0 or 1");
        }
        if (spec.provenance.empty()) throw ConstraintViolationError("a step requires provenance meme ids");

        std::map<std::string, std::string> local;
        for (const auto& m : spec.methods) {
            if (m.description.empty()) throw ConstraintViolationError("method description must be non-empty");
            if (m.harmful != 0 && m.harmful != 1) throw ConstraintViolationError("harmful indicator must be 0 or 1");
            if (local.count(m.key) || m.key == "goal") {
                throw ConstraintViolationError("duplicate step key '" + m.key + "'");
            }
            local[m.key] = "";
        }
        for (const auto& g : spec.gates) {
            if (local.count(g.key) || g.key == "goal") {
                throw ConstraintViolationError("duplicate step key '" + g.key + "'");
            }
            local[g.key] = "";
        }

        // stage edges against local keys before allocating ids
        std::map<std::string, int> gate_inbound;
        std::set<std::pair<std::string, std::string>> seen;
        for (const auto& [from, to] : spec.edges) {
            if (from != "goal" && !local.count(from)) {
                throw UnknownEndpointError("step edge source '" + from + "' is not part of the step");
            }
            if (to != "goal" && !local.count(to)) {
                throw UnknownEndpointError("step edge target '" + to + "' is not part of the step");
            }
            if (from == to) throw ConstraintViolationError("step edge may not be a self-loop");
            if (!seen.insert({from, to}).second) {
                throw DuplicateEdgeError("duplicate step edge " + from + "->" + to);
            }
            ++gate_inbound[to];
        }
        for (const auto& g : spec.gates) {
            const int inbound = gate_inbound.count(g.key) ? gate_inbound[g.key] : 0;
            if (g.op == GateOp::Not && inbound != 1) {
                throw ConstraintViolationError("Not gate '" + g.key + "' requires exactly one input, got " +
                                               std::to_string(inbound));
            }
            if (g.op != GateOp::Not && inbound < 2) {
                throw ConstraintViolationError("And/Or gate '" + g.key + "' requires at least two inputs");
            }
        }

        for (const auto& m : spec.methods) local[m.key] = insert_node(MethodData{m.description, m.harmful}, "m");
        for (const auto& g : spec.gates) local[g.key] = insert_node(GateData{g.op}, "s");
        local["goal"] = insert_node(GoalData{spec.goal_description, spec.goal_harmful}, "g");

        for (const auto& [from, to] : spec.edges) {
            edges_.push_back(Edge{EdgeKind::Achievement, local.at(from), local.at(to)});
        }
        for (const auto& [key, id] : local) add_provenance(id, spec.provenance);
        return local;
    }

    /// Adds one edge with full constraint checking.
    void add_edge(EdgeKind kind, const std::string& src, const std::string& dst) {
        const Node& s = node(src);
        const Node& d = node(dst);
        if (src == dst) throw ConstraintViolationError("self-loop on '" + src + "'");
        for (const Edge& e : edges_) {
            if (e.kind == kind && e.src == src && e.dst == dst) {
                throw DuplicateEdgeError("edge " + src + "->" + dst + " already present");
            }
        }
        switch (kind) {
            case EdgeKind::Type: {
                if (kind_of(s) != NodeKind::Type || kind_of(d) != NodeKind::Type) {
                    throw ConstraintViolationError("type edge endpoints must be type nodes");
                }
                const auto ls = static_cast<int>(std::get<TypeData>(s.data).level);
                const auto ld = static_cast<int>(std::get<TypeData>(d.data).level);
                if (ls + 1 != ld) {
                    throw ConstraintViolationError("type edge must descend one level, got L" +
                                                   std::to_string(ls) + "->L" + std::to_string(ld));
                }
                for (const Edge& e : edges_) {
                    if (e.kind == EdgeKind::Type && e.dst == dst) {
                        throw ConstraintViolationError("subtype '" + dst + "' already has a parent");
                    }
                }
                break;
            }
            case EdgeKind::Link: {
                if (kind_of(s) != NodeKind::Type) {
                    throw ConstraintViolationError("link edge source must be a type node");
                }
                const NodeKind dk = kind_of(d);
                if (dk != NodeKind::FailReason && dk != NodeKind::Method) {
                    throw ConstraintViolationError("link edge target must be a fail reason or method node");
                }
                break;
            }
            case EdgeKind::Achievement: {
                if (!is_reproduction(kind_of(s)) || !is_reproduction(kind_of(d))) {
                    throw ConstraintViolationError("achievement edge endpoints must be reproduction nodes");
                }
                if (kind_of(d) == NodeKind::Gate) {
                    const auto op = std::get<GateData>(d.data).op;
                    const int inbound = achievement_inbound(dst) + 1;
                    if (op == GateOp::Not && inbound > 1) {
                        throw ConstraintViolationError("Not gate '" + dst + "' accepts exactly one input");
                    }
                }
                // joining two goal-owning components would leave a step with two goals
                const auto goals_s = component_goals(src);
                const auto goals_d = component_goals(dst);
                if (!goals_s.empty() && !goals_d.empty() && goals_s != goals_d) {
                    throw ConstraintViolationError("edge would merge steps with distinct goals");
                }
                break;
            }
        }
        edges_.push_back(Edge{kind, src, dst});
    }

    /// Removes a node and its incident edges. Fails when the removal would
    /// leave a neighboring constraint broken (e.g. a gate with too few
    /// inputs or an orphaned subtype).
    void remove_node(const std::string& id) {
        const Node& n = node(id);
        if (kind_of(n) == NodeKind::Type) {
            for (const Edge& e : edges_) {
                if (e.kind == EdgeKind::Type && e.src == id) {
                    throw ConstraintViolationError("cannot remove type node '" + id +
                                                   "' while subtype '" + e.dst + "' depends on it");
                }
            }
        }
        // simulate removal for gate arity checks
        for (const auto& [other_id, other] : nodes_) {
            if (other_id == id || kind_of(other) != NodeKind::Gate) continue;
            int inbound = 0;
            for (const Edge& e : edges_) {
                if (e.kind == EdgeKind::Achievement && e.dst == other_id && e.src != id) ++inbound;
            }
            const bool touched = achievement_inbound(other_id) != inbound;
            if (!touched) continue;
            const auto op = std::get<GateData>(other.data).op;
            if (op == GateOp::Not && inbound != 1) {
                throw ConstraintViolationError("removing '" + id + "' would leave Not gate '" + other_id +
                                               "' without its input");
            }
            if (op != GateOp::Not && inbound < 2) {
                throw ConstraintViolationError("removing '" + id + "' would leave gate '" + other_id +
                                               "' with fewer than two inputs");
            }
        }
        std::erase_if(edges_, [&](const Edge& e) { return e.src == id || e.dst == id; });
        provenance_.erase(id);
        nodes_.erase(id);
    }

    // -- unchecked entry points (deserialization, tests) ---------------------

    void force_node(Node n) { nodes_[n.id] = std::move(n); }

    /// Unchecked cascade removal: drops the node, its edges and provenance
    /// without re-checking neighbor constraints.
    void erase_node(const std::string& id) {
        std::erase_if(edges_, [&](const Edge& e) { return e.src == id || e.dst == id; });
        provenance_.erase(id);
        nodes_.erase(id);
    }
    void force_edge(Edge e) { edges_.push_back(std::move(e)); }
    void force_provenance(const std::string& id, std::vector<std::string> memes) {
        auto& slot = provenance_[id];
        slot.insert(memes.begin(), memes.end());
    }
    void add_provenance(const std::string& id, const std::vector<std::string>& memes) {
        auto& slot = provenance_[id];
        slot.insert(memes.begin(), memes.end());
    }

    // -- validation -----------------------------------------------------------

    /// Checks every schema rule and returns all violations. An optional set
    /// of known meme ids additionally resolves fail-reason references.
    std::vector<Violation> validate(const std::set<std::string>* known_memes = nullptr) const {
        std::vector<Violation> out;
        auto flag = [&](std::string rule, std::string subject, std::string message) {
            out.push_back(Violation{std::move(rule), std::move(subject), std::move(message)});
        };

        for (const auto& [id, n] : nodes_) {
            switch (kind_of(n)) {
                case NodeKind::Type: {
                    const auto& td = std::get<TypeData>(n.data);
                    if (td.label.empty()) flag("empty-text", id, "type label is empty");
                    if (td.level == TypeLevel::L1 && !canonical_macro_type(td.label)) {
                        flag("macro-type-label", id,
                             "L1 label '" + td.label + "' is not one of the seven macro types");
                    }
                    break;
                }
                case NodeKind::FailReason: {
                    const auto& fd = std::get<FailReasonData>(n.data);
                    if (fd.reason.empty()) flag("empty-text", id, "fail reason is empty");
                    if (fd.meme_id.empty()) {
                        flag("meme-unresolved", id, "fail reason has no meme id");
                    } else if (known_memes && !known_memes->count(fd.meme_id)) {
                        flag("meme-unresolved", id, "meme '" + fd.meme_id + "' is not ingested");
                    }
                    break;
                }
                case NodeKind::Method: {
                    const auto& md = std::get<MethodData>(n.data);
                    if (md.description.empty()) flag("empty-text", id, "method description is empty");
                    if (md.harmful != 0 && md.harmful != 1) {
                        flag("indicator-domain", id,
                             "harmful indicator " + std::to_string(md.harmful) + " outside {0,1}");
                    }
                    break;
                }
                case NodeKind::Goal: {
                    const auto& gd = std::get<GoalData>(n.data);
                    if (gd.description.empty()) flag("empty-text", id, "goal description is empty");
                    if (gd.harmful != 0 && gd.harmful != 1) {
                        flag("indicator-domain", id,
                             "harmful indicator " + std::to_string(gd.harmful) + " outside {0,1}");
                    }
                    break;
                }
                case NodeKind::Gate:
                    break;
            }
        }

        std::set<std::pair<std::string, std::pair<std::string, int>>> seen_edges;
        for (const Edge& e : edges_) {
            const std::string subject = e.src + "->" + e.dst;
            const bool src_ok = nodes_.count(e.src) > 0;
            const bool dst_ok = nodes_.count(e.dst) > 0;
            if (!src_ok) flag("unknown-endpoint", subject, "source '" + e.src + "' does not exist");
            if (!dst_ok) flag("unknown-endpoint", subject, "target '" + e.dst + "' does not exist");
            if (!src_ok || !dst_ok) continue;
            if (e.src == e.dst) flag("self-loop", subject, "self-loop");
            if (!seen_edges.insert({e.src, {e.dst, static_cast<int>(e.kind)}}).second) {
                flag("duplicate-edge", subject, "edge appears more than once");
            }
            const Node& s = node(e.src);
            const Node& d = node(e.dst);
            switch (e.kind) {
                case EdgeKind::Type: {
                    if (kind_of(s) != NodeKind::Type || kind_of(d) != NodeKind::Type) {
                        flag("type-edge-endpoints", subject, "type edge endpoints must be type nodes");
                        break;
                    }
                    const int ls = static_cast<int>(std::get<TypeData>(s.data).level);
                    const int ld = static_cast<int>(std::get<TypeData>(d.data).level);
                    if (ls + 1 != ld) {
                        flag("type-edge-level-order", subject,
                             "type edge L" + std::to_string(ls) + "->L" + std::to_string(ld) +
                                 " must descend exactly one level");
                    }
                    break;
                }
                case EdgeKind::Link: {
                    if (kind_of(s) != NodeKind::Type) {
                        flag("link-edge-endpoints", subject, "link edge source must be a type node");
                    }
                    if (kind_of(d) != NodeKind::FailReason && kind_of(d) != NodeKind::Method) {
                        flag("link-edge-endpoints", subject,
                             "link edge target must be a fail reason or method node");
                    }
                    break;
                }
                case EdgeKind::Achievement: {
                    if (!is_reproduction(kind_of(s)) || !is_reproduction(kind_of(d))) {
                        flag("achievement-edge-endpoints", subject,
                             "achievement edge endpoints must be method/gate/goal nodes");
                    }
                    break;
                }
            }
        }

        // exactly one parent per subtype
        for (const auto& [id, n] : nodes_) {
            if (kind_of(n) != NodeKind::Type) continue;
            const auto& td = std::get<TypeData>(n.data);
            if (td.level == TypeLevel::L1) continue;
            int parents = 0;
            for (const Edge& e : edges_) {
                if (e.kind == EdgeKind::Type && e.dst == id && nodes_.count(e.src)) ++parents;
            }
            if (parents != 1) {
                flag("subtype-parent", id,
                     "subtype has " + std::to_string(parents) + " parents, expected exactly 1");
            }
        }

        // gate arity over inbound achievement edges
        for (const auto& [id, n] : nodes_) {
            if (kind_of(n) != NodeKind::Gate) continue;
            const int inbound = achievement_inbound(id);
            const auto op = std::get<GateData>(n.data).op;
            if (op == GateOp::Not && inbound != 1) {
                flag("gate-arity", id, "Not gate has " + std::to_string(inbound) + " inputs, expected 1");
            }
            if (op != GateOp::Not && inbound < 2) {
                flag("gate-arity", id, "And/Or gate has " + std::to_string(inbound) + " inputs, expected >=2");
            }
        }

        // at most one goal per connected reproduction component
        for (const auto& component : reproduction_components()) {
            int goals = 0;
            for (const auto& id : component) {
                if (kind_of(node(id)) == NodeKind::Goal) ++goals;
            }
            if (goals > 1) {
                flag("step-goal-count", component.front(),
                     "reproduction component contains " + std::to_string(goals) + " goal nodes");
            }
        }

        // provenance: fail reasons and methods must trace to >=1 meme
        for (const auto& [id, n] : nodes_) {
            const NodeKind k = kind_of(n);
            if (k != NodeKind::FailReason && k != NodeKind::Method) continue;
            auto it = provenance_.find(id);
            if (it == provenance_.end() || it->second.empty()) {
                flag("provenance-missing", id, "node does not trace to any meme");
            }
        }
        for (const auto& [id, memes] : provenance_) {
            if (!nodes_.count(id)) {
                flag("provenance-unknown-node", id, "provenance entry for missing node");
            }
        }
        return out;
    }

    // -- queries ----------------------------------------------------------------

    const std::map<std::string, Node>& nodes() const noexcept { return nodes_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::map<std::string, std::set<std::string>>& provenance() const noexcept { return provenance_; }

    bool has_node(const std::string& id) const { return nodes_.count(id) > 0; }
    bool empty() const noexcept { return nodes_.empty(); }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t edge_count() const noexcept { return edges_.size(); }

    const Node& node(const std::string& id) const {
        auto it = nodes_.find(id);
        if (it == nodes_.end()) throw UnknownEndpointError("no node '" + id + "'");
        return it->second;
    }

    const std::set<std::string>& provenance_of(const std::string& id) const {
        static const std::set<std::string> empty;
        auto it = provenance_.find(id);
        return it == provenance_.end() ? empty : it->second;
    }

    std::optional<std::string> find_type(TypeLevel level, std::string_view label) const {
        const std::string norm = normalize_label(label);
        for (const auto& [id, n] : nodes_) {
            if (kind_of(n) != NodeKind::Type) continue;
            const auto& td = std::get<TypeData>(n.data);
            if (td.level == level && normalize_label(td.label) == norm) return id;
        }
        return std::nullopt;
    }

    /// Parent type node of a subtype, if any.
    std::optional<std::string> type_parent(const std::string& id) const {
        for (const Edge& e : edges_) {
            if (e.kind == EdgeKind::Type && e.dst == id && nodes_.count(e.src)) return e.src;
        }
        return std::nullopt;
    }

    /// L1 ancestor of a type node (itself if already L1).
    std::string l1_ancestor(const std::string& id) const {
        std::string current = id;
        for (int hops = 0; hops < 4; ++hops) {
            const Node& n = node(current);
            if (std::get<TypeData>(n.data).level == TypeLevel::L1) return current;
            auto parent = type_parent(current);
            if (!parent) throw MissingRootError("type node '" + id + "' has no L1 ancestor");
            current = *parent;
        }
        throw MissingRootError("type chain above '" + id + "' is too deep");
    }

    /// Root node for Eq-style scoring: a type node's L1 ancestor, a
    /// reproduction node's step goal. Goals are their own root.
    std::string root_of(const std::string& id) const {
        const Node& n = node(id);
        switch (kind_of(n)) {
            case NodeKind::Type: return l1_ancestor(id);
            case NodeKind::Goal: return id;
            case NodeKind::Method:
            case NodeKind::Gate: {
                const auto goals = component_goals(id);
                if (goals.empty()) {
                    throw MissingRootError("step of '" + id + "' has no goal node");
                }
                if (goals.size() > 1) {
                    throw MissingRootError("step of '" + id + "' has several goal nodes");
                }
                return *goals.begin();
            }
            case NodeKind::FailReason:
                throw MissingRootError("fail reason nodes have no scoring root");
        }
        throw MissingRootError("unreachable");
    }

    /// Connected reproduction component (achievement edges, both directions)
    /// containing `id`, sorted.
    std::vector<std::string> achievement_component(const std::string& id) const {
        std::set<std::string> seen{id};
        std::vector<std::string> queue{id};
        while (!queue.empty()) {
            const std::string current = queue.back();
            queue.pop_back();
            for (const Edge& e : edges_) {
                if (e.kind != EdgeKind::Achievement) continue;
                if (e.src == current && nodes_.count(e.dst) && seen.insert(e.dst).second) queue.push_back(e.dst);
                if (e.dst == current && nodes_.count(e.src) && seen.insert(e.src).second) queue.push_back(e.src);
            }
        }
        return {seen.begin(), seen.end()};
    }

    std::set<std::string> component_goals(const std::string& id) const {
        std::set<std::string> goals;
        for (const auto& member : achievement_component(id)) {
            if (kind_of(node(member)) == NodeKind::Goal) goals.insert(member);
        }
        return goals;
    }

    /// All connected reproduction components of the graph, each sorted.
    std::vector<std::vector<std::string>> reproduction_components() const {
        std::vector<std::vector<std::string>> out;
        std::set<std::string> visited;
        for (const auto& [id, n] : nodes_) {
            if (!is_reproduction(kind_of(n)) || visited.count(id)) continue;
            auto component = achievement_component(id);
            visited.insert(component.begin(), component.end());
            out.push_back(std::move(component));
        }
        return out;
    }

    /// Partitions `node_set` into reproduction steps: connected components
    /// over achievement edges restricted to the set. Components with at
    /// least one method node become steps; type nodes in the set attach to
    /// every step containing a method they link to, or are dropped.
    std::vector<ReproductionStep> step_subgraphs(const std::vector<std::string>& node_set) const {
        std::set<std::string> members;
        for (const auto& id : node_set) {
            node(id);  // throws UnknownEndpoint when outside the graph
            members.insert(id);
        }

        std::vector<ReproductionStep> steps;
        std::set<std::string> visited;
        for (const auto& id : members) {
            if (visited.count(id) || !is_reproduction(kind_of(node(id)))) continue;
            // flood fill restricted to the member set
            std::set<std::string> component{id};
            std::vector<std::string> queue{id};
            while (!queue.empty()) {
                const std::string current = queue.back();
                queue.pop_back();
                for (const Edge& e : edges_) {
                    if (e.kind != EdgeKind::Achievement) continue;
                    if (e.src == current && members.count(e.dst) && component.insert(e.dst).second) {
                        queue.push_back(e.dst);
                    }
                    if (e.dst == current && members.count(e.src) && component.insert(e.src).second) {
                        queue.push_back(e.src);
                    }
                }
            }
            visited.insert(component.begin(), component.end());

            bool has_method = false;
            ReproductionStep step;
            for (const auto& member : component) {
                const NodeKind k = kind_of(node(member));
                if (k == NodeKind::Method) has_method = true;
                if (k == NodeKind::Goal) step.goals.push_back(member);
                step.nodes.push_back(member);
            }
            if (has_method) steps.push_back(std::move(step));
        }

        // attach type nodes through link edges
        for (const auto& id : members) {
            if (kind_of(node(id)) != NodeKind::Type) continue;
            for (auto& step : steps) {
                bool linked = false;
                for (const Edge& e : edges_) {
                    if (e.kind != EdgeKind::Link || e.src != id) continue;
                    if (std::binary_search(step.nodes.begin(), step.nodes.end(), e.dst)) {
                        linked = true;
                        break;
                    }
                }
                if (linked) step.type_nodes.push_back(id);
            }
        }
        for (auto& step : steps) std::sort(step.type_nodes.begin(), step.type_nodes.end());
        return steps;
    }

    /// Fresh id with the given prefix, advancing the internal counter.
    std::string allocate_id(const std::string& prefix) {
        auto& next = counters_[prefix];
        std::string id;
        do {
            id = prefix + std::to_string(++next);
        } while (nodes_.count(id));
        return id;
    }

    /// Re-derives id counters from stored nodes (used after load).
    void reseed_counters() {
        counters_.clear();
        for (const auto& [id, n] : nodes_) {
            std::size_t split = id.size();
            while (split > 0 && std::isdigit(static_cast<unsigned char>(id[split - 1]))) --split;
            if (split == 0 || split == id.size()) continue;
            const std::string prefix = id.substr(0, split);
            const long value = std::strtol(id.c_str() + split, nullptr, 10);
            auto& slot = counters_[prefix];
            if (value > slot) slot = value;
        }
    }

    friend bool operator==(const Graph& a, const Graph& b) {
        auto edge_key = [](const Graph& g) {
            std::multiset<Edge> s(g.edges_.begin(), g.edges_.end());
            return s;
        };
        auto node_eq = [](const std::map<std::string, Node>& x, const std::map<std::string, Node>& y) {
            if (x.size() != y.size()) return false;
            for (auto itx = x.begin(), ity = y.begin(); itx != x.end(); ++itx, ++ity) {
                if (itx->first != ity->first || itx->second.data != ity->second.data) return false;
            }
            return true;
        };
        return node_eq(a.nodes_, b.nodes_) && edge_key(a) == edge_key(b) && a.provenance_ == b.provenance_;
    }

private:
    int achievement_inbound(const std::string& id) const {
        int inbound = 0;
        for (const Edge& e : edges_) {
            if (e.kind == EdgeKind::Achievement && e.dst == id && nodes_.count(e.src)) ++inbound;
        }
        return inbound;
    }

    std::string insert_node(NodeData data, const std::string& prefix) {
        const std::string id = allocate_id(prefix);
        nodes_[id] = Node{id, std::move(data)};
        return id;
    }

    std::map<std::string, Node> nodes_;
    std::vector<Edge> edges_;
    std::map<std::string, std::set<std::string>> provenance_;
    std::map<std::string, long> counters_;
};

}  // namespace dcg
