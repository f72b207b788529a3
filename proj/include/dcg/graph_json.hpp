#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dcg/errors.hpp"
#include "dcg/graph.hpp"

namespace dcg {

inline constexpr int kGraphSchemaVersion = 1;

inline std::string to_string(TypeLevel level) {
    switch (level) {
        case TypeLevel::L1: return "L1";
        case TypeLevel::L2: return "L2";
        case TypeLevel::L3: return "L3";
    }
    return "L1";
}

inline std::string to_string(GateOp op) {
    switch (op) {
        case GateOp::And: return "And";
        case GateOp::Or: return "Or";
        case GateOp::Not: return "Not";
    }
    return "And";
}

inline std::string to_string(EdgeKind kind) {
    switch (kind) {
        case EdgeKind::Type: return "type";
        case EdgeKind::Link: return "link";
        case EdgeKind::Achievement: return "achievement";
    }
    return "type";
}

inline nlohmann::json graph_to_json(const Graph& graph) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& [id, node] : graph.nodes()) {
        nlohmann::json record{{"id", id}};
        switch (kind_of(node)) {
            case NodeKind::Type: {
                const auto& d = std::get<TypeData>(node.data);
                record["kind"] = "type";
                record["level"] = to_string(d.level);
                record["label"] = d.label;
                break;
            }
            case NodeKind::FailReason: {
                const auto& d = std::get<FailReasonData>(node.data);
                record["kind"] = "fail_reason";
                record["reason"] = d.reason;
                record["meme_description"] = d.meme_description;
                record["meme_id"] = d.meme_id;
                break;
            }
            case NodeKind::Method: {
                const auto& d = std::get<MethodData>(node.data);
                record["kind"] = "method";
                record["description"] = d.description;
                record["harmful"] = d.harmful;
                break;
            }
            case NodeKind::Gate: {
                const auto& d = std::get<GateData>(node.data);
                record["kind"] = "gate";
                record["gate"] = to_string(d.op);
                break;
            }
            case NodeKind::Goal: {
                const auto& d = std::get<GoalData>(node.data);
                record["kind"] = "goal";
                record["description"] = d.description;
                record["harmful"] = d.harmful;
                break;
            }
        }
        nodes.push_back(std::move(record));
    }

    std::vector<Edge> edges = graph.edges();
    std::sort(edges.begin(), edges.end());
    nlohmann::json edge_array = nlohmann::json::array();
    for (const Edge& e : edges) {
        edge_array.push_back({{"kind", to_string(e.kind)}, {"src", e.src}, {"dst", e.dst}});
    }

    nlohmann::json provenance = nlohmann::json::object();
    for (const auto& [id, memes] : graph.provenance()) {
        if (memes.empty()) continue;
        provenance[id] = std::vector<std::string>(memes.begin(), memes.end());
    }

    return nlohmann::json{{"schema_version", kGraphSchemaVersion},
                          {"nodes", std::move(nodes)},
                          {"edges", std::move(edge_array)},
                          {"provenance", std::move(provenance)}};
}

namespace detail {

inline TypeLevel parse_level(const std::string& text, const std::string& where) {
    if (text == "L1") return TypeLevel::L1;
    if (text == "L2") return TypeLevel::L2;
    if (text == "L3") return TypeLevel::L3;
    throw ParseError("node '" + where + "': unknown type level '" + text + "'");
}

inline GateOp parse_gate(const std::string& text, const std::string& where) {
    if (text == "And") return GateOp::And;
    if (text == "Or") return GateOp::Or;
    if (text == "Not") return GateOp::Not;
    throw ParseError("node '" + where + "': unknown gate op '" + text + "'");
}

inline EdgeKind parse_edge_kind(const std::string& text, const std::string& where) {
    if (text == "type") return EdgeKind::Type;
    if (text == "link") return EdgeKind::Link;
    if (text == "achievement") return EdgeKind::Achievement;
    throw ParseError("edge '" + where + "': unknown edge kind '" + text + "'");
}

template <typename T>
T field(const nlohmann::json& j, const char* name, const std::string& where) {
    if (!j.contains(name)) throw ParseError("record '" + where + "': missing field '" + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("record '" + where + "': field '" + name + "' has the wrong type");
    }
}

}  // namespace detail

inline Graph graph_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("graph document must be a JSON object");
    if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer()) {
        throw ParseError("graph document is missing schema_version");
    }
    const int version = j.at("schema_version").get<int>();
    if (version != kGraphSchemaVersion) {
        throw SchemaVersionMismatchError("schema_version " + std::to_string(version) + " is not supported (expected " +
                                         std::to_string(kGraphSchemaVersion) + ")");
    }

    Graph graph;
    for (const auto& record : j.value("nodes", nlohmann::json::array())) {
        const std::string id = detail::field<std::string>(record, "id", "<node>");
        if (id.empty()) throw ParseError("node record with empty id");
        if (graph.has_node(id)) throw ParseError("node '" + id + "' appears more than once");
        const std::string kind = detail::field<std::string>(record, "kind", id);
        Node node;
        node.id = id;
        if (kind == "type") {
            node.data = TypeData{detail::parse_level(detail::field<std::string>(record, "level", id), id),
                                 detail::field<std::string>(record, "label", id)};
        } else if (kind == "fail_reason") {
            node.data = FailReasonData{detail::field<std::string>(record, "reason", id),
                                       detail::field<std::string>(record, "meme_description", id),
                                       detail::field<std::string>(record, "meme_id", id)};
        } else if (kind == "method") {
            node.data = MethodData{detail::field<std::string>(record, "description", id),
                                   detail::field<int>(record, "harmful", id)};
        } else if (kind == "gate") {
            node.data = GateData{detail::parse_gate(detail::field<std::string>(record, "gate", id), id)};
        } else if (kind == "goal") {
            node.data = GoalData{detail::field<std::string>(record, "description", id),
                                 detail::field<int>(record, "harmful", id)};
        } else {
            throw ParseError("node '" + id + "': unknown node kind '" + kind + "'");
        }
        graph.force_node(std::move(node));
    }

    for (const auto& record : j.value("edges", nlohmann::json::array())) {
        const std::string src = detail::field<std::string>(record, "src", "<edge>");
        const std::string dst = detail::field<std::string>(record, "dst", "<edge>");
        const std::string where = src + "->" + dst;
        graph.force_edge(Edge{detail::parse_edge_kind(detail::field<std::string>(record, "kind", where), where),
                              src, dst});
    }

    if (j.contains("provenance")) {
        if (!j.at("provenance").is_object()) throw ParseError("provenance must be an object");
        for (const auto& [id, memes] : j.at("provenance").items()) {
            if (!memes.is_array()) throw ParseError("provenance of '" + id + "' must be an array");
            std::vector<std::string> list;
            for (const auto& m : memes) {
                if (!m.is_string()) throw ParseError("provenance of '" + id + "' must contain strings");
                list.push_back(m.get<std::string>());
            }
            graph.force_provenance(id, std::move(list));
        }
    }

    graph.reseed_counters();
    return graph;
}

/// Canonical textual form used for files and golden comparisons.
inline std::string graph_to_string(const Graph& graph) { return graph_to_json(graph).dump(2) + "\n"; }

/// Parses and validates a graph document. Throws ParseError,
/// SchemaVersionMismatch or ValidationFailure.
inline Graph graph_from_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what());
    }
    Graph graph = graph_from_json(j);
    const auto violations = graph.validate();
    if (!violations.empty()) {
        std::ostringstream oss;
        oss << "loaded graph has " << violations.size() << " violation(s):";
        for (const auto& v : violations) oss << " [" << v.rule << " @ " << v.subject << "]";
        throw ValidationFailureError(oss.str());
    }
    return graph;
}

/// Writes a schema-valid graph to `path`. Throws ValidationFailure when the
/// graph does not validate clean.
inline void save_graph(const Graph& graph, const std::string& path) {
    const auto violations = graph.validate();
    if (!violations.empty()) {
        throw ValidationFailureError("refusing to save a graph with " + std::to_string(violations.size()) +
                                     " violation(s); first: " + violations.front().rule + " @ " +
                                     violations.front().subject);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << graph_to_string(graph);
}

inline Graph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return graph_from_string(buffer.str());
}

}  // namespace dcg
