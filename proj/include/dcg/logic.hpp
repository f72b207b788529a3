#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dcg/errors.hpp"
#include "dcg/graph.hpp"

namespace dcg {

/// Expression tree over reproduction nodes with the connectives
/// and / or / not / then. The outermost "then" always ends at the step goal.
struct LogicExpression {
    enum class Op { Ref, And, Or, Not, Then };

    Op op = Op::Ref;
    std::string node;  // set for Op::Ref
    std::vector<LogicExpression> children;

    static LogicExpression ref(std::string id) { return {Op::Ref, std::move(id), {}}; }

    /// Renders with the logic symbols, e.g. "M1 ∧ (M1 → M2 → M3) → G".
    std::string to_string() const { return render(0); }

    /// Node ids referenced by the expression, in occurrence order.
    std::vector<std::string> referenced_nodes() const {
        std::vector<std::string> out;
        collect(out);
        return out;
    }

private:
    static int precedence(Op op) {
        switch (op) {
            case Op::Ref: return 4;
            case Op::Not: return 3;
            case Op::And: return 2;
            case Op::Or: return 1;
            case Op::Then: return 0;
        }
        return 0;
    }

    std::string render(int parent_precedence) const {
        std::string body;
        switch (op) {
            case Op::Ref:
                return node;
            case Op::Not:
                body = "¬" + children.front().render(precedence(Op::Not));
                break;
            case Op::And:
            case Op::Or: {
                const char* sep = (op == Op::And) ? " ∧ " : " ∨ ";
                for (std::size_t i = 0; i < children.size(); ++i) {
                    if (i) body += sep;
                    body += children[i].render(precedence(op));
                }
                break;
            }
            case Op::Then: {
                for (std::size_t i = 0; i < children.size(); ++i) {
                    if (i) body += " → ";
                    body += children[i].render(precedence(Op::Then) + 1);
                }
                break;
            }
        }
        if (precedence(op) < parent_precedence) return "(" + body + ")";
        return body;
    }

    void collect(std::vector<std::string>& out) const {
        if (op == Op::Ref) {
            out.push_back(node);
            return;
        }
        for (const auto& c : children) c.collect(out);
    }
};

namespace detail {

struct ExpressionBuilder {
    const Graph& graph;
    const std::set<std::string> members;

    std::vector<std::string> predecessors(const std::string& id) const {
        std::vector<std::string> preds;
        for (const Edge& e : graph.edges()) {
            if (e.kind == EdgeKind::Achievement && e.dst == id && members.count(e.src)) {
                preds.push_back(e.src);
            }
        }
        std::sort(preds.begin(), preds.end());
        return preds;
    }

    LogicExpression build(const std::string& id, std::set<std::string>& path) const {
        if (!path.insert(id).second) {
            throw CycleDetectedError("achievement cycle through '" + id + "'");
        }
        const auto preds = predecessors(id);
        LogicExpression expr;
        const Node& n = graph.node(id);
        if (kind_of(n) == NodeKind::Gate) {
            const GateOp op = std::get<GateData>(n.data).op;
            if (op == GateOp::Not) {
                if (preds.size() != 1) {
                    throw ConstraintViolationError("Not gate '" + id + "' requires exactly one input");
                }
                expr.op = LogicExpression::Op::Not;
            } else {
                if (preds.size() < 2) {
                    throw ConstraintViolationError("gate '" + id + "' requires at least two inputs");
                }
                expr.op = (op == GateOp::And) ? LogicExpression::Op::And : LogicExpression::Op::Or;
            }
            for (const auto& p : preds) expr.children.push_back(build(p, path));
        } else {
            expr = chain_to(id, preds, path);
        }
        path.erase(id);
        return expr;
    }

    /// Combines a node's predecessors (implicit conjunction when several)
    /// and appends the node itself as the chain tail.
    LogicExpression chain_to(const std::string& id, const std::vector<std::string>& preds,
                             std::set<std::string>& path) const {
        if (preds.empty()) return LogicExpression::ref(id);
        LogicExpression lhs = combine(preds, path);
        LogicExpression chain;
        chain.op = LogicExpression::Op::Then;
        if (lhs.op == LogicExpression::Op::Then) {
            chain.children = std::move(lhs.children);
        } else {
            chain.children.push_back(std::move(lhs));
        }
        chain.children.push_back(LogicExpression::ref(id));
        return chain;
    }

    LogicExpression combine(const std::vector<std::string>& preds, std::set<std::string>& path) const {
        if (preds.size() == 1) return build(preds.front(), path);
        LogicExpression conj;
        conj.op = LogicExpression::Op::And;
        for (const auto& p : preds) conj.children.push_back(build(p, path));
        return conj;
    }
};

}  // namespace detail

/// Turns one reproduction step into its logic expression. Achievement chains
/// become "then" sequences, gate nodes their connectives, and the whole
/// expression implies the single goal.
inline LogicExpression to_logic_expression(const Graph& graph, const ReproductionStep& step) {
    const std::string& goal = step.goal();  // NoGoal / MultipleGoals
    detail::ExpressionBuilder builder{graph, {step.nodes.begin(), step.nodes.end()}};
    std::set<std::string> path;
    return builder.build(goal, path);
}

namespace detail {

struct ProseRenderer {
    const Graph& graph;
    std::set<std::string> emitted;

    std::string leaf(const std::string& id) {
        const Node& n = graph.node(id);
        if (!emitted.insert(id).second) return "step " + id;
        std::string text = contents(n);
        int harmful = 0;
        if (kind_of(n) == NodeKind::Method) harmful = std::get<MethodData>(n.data).harmful;
        if (kind_of(n) == NodeKind::Goal) harmful = std::get<GoalData>(n.data).harmful;
        if (harmful == 1) text += " (harmful)";
        return text;
    }

    std::string render(const LogicExpression& e, bool wrap_composite) {
        std::string body;
        switch (e.op) {
            case LogicExpression::Op::Ref:
                return leaf(e.node);
            case LogicExpression::Op::Not:
                body = "on the contrary, " + render(e.children.front(), true);
                break;
            case LogicExpression::Op::And:
            case LogicExpression::Op::Or: {
                const char* sep = (e.op == LogicExpression::Op::And) ? " and " : " or ";
                for (std::size_t i = 0; i < e.children.size(); ++i) {
                    if (i) body += sep;
                    body += render(e.children[i], true);
                }
                break;
            }
            case LogicExpression::Op::Then: {
                for (std::size_t i = 0; i < e.children.size(); ++i) {
                    if (i) body += ", then ";
                    body += render(e.children[i], true);
                }
                break;
            }
        }
        if (wrap_composite && e.children.size() > 1) return "(" + body + ")";
        return body;
    }
};

}  // namespace detail

/// Plain-text rendering of a step: a harmful-type header followed by the
/// step prose, where "then"/"and"/"or"/"on the contrary" replace the logic
/// symbols and harmful nodes carry a "(harmful)" marker.
inline std::string render_guidance_text(const Graph& graph, const ReproductionStep& step) {
    const LogicExpression expr = to_logic_expression(graph, step);

    std::set<std::string> macros;
    std::set<std::string> subtypes;
    for (const auto& id : step.type_nodes) {
        const auto& data = std::get<TypeData>(graph.node(id).data);
        macros.insert(std::get<TypeData>(graph.node(graph.l1_ancestor(id)).data).label);
        if (data.level != TypeLevel::L1) subtypes.insert(data.label);
    }
    auto join = [](const std::set<std::string>& items) {
        std::string out;
        for (const auto& item : items) {
            if (!out.empty()) out += ", ";
            out += item;
        }
        return out.empty() ? std::string("Unspecified") : out;
    };

    detail::ProseRenderer renderer{graph, {}};
    std::string prose = renderer.render(expr, false);

    std::string text = "## Harmful Type\n";
    text += "Macro Type: " + join(macros) + "; Subtype: " + join(subtypes) + ".\n";
    text += "\n## Reproduction Step\n";
    text += "The malicious user " + prose + ".\n";
    return text;
}

}  // namespace dcg
