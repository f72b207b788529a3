#pragma once

#include <random>
#include <string>
#include <vector>

#include "dcg/graph.hpp"

namespace testsupport {

/// Seeded generator of schema-valid graphs: a few macro-type chains plus
/// one to three reproduction steps with mixed chain/gate layouts.
inline dcg::Graph random_valid_graph(unsigned seed) {
    using namespace dcg;
    std::mt19937 rng(seed);
    auto pick = [&](int bound) { return static_cast<int>(rng() % static_cast<unsigned>(bound)); };

    static const std::vector<std::string> words = {
        "circle", "image",  "text",   "overlay", "symbol", "caption", "template", "crowd",
        "figure", "slogan", "banner", "photo",   "sticker", "frame",  "emoji",    "icon"};
    static const std::vector<std::string> verbs = {"write", "select", "crop", "draw", "paste", "highlight"};
    auto phrase = [&](int len) {
        std::string out = verbs[pick(static_cast<int>(verbs.size()))];
        for (int i = 0; i < len; ++i) out += " " + words[pick(static_cast<int>(words.size()))];
        return out;
    };

    Graph g;
    std::vector<std::string> deepest_types;
    const int chains = 1 + pick(2);
    for (int c = 0; c < chains; ++c) {
        const auto& macro = macro_types()[pick(7)];
        std::string id = g.add_macro_type(macro);
        if (pick(10) < 8) {
            id = g.add_subtype(TypeLevel::L2, phrase(1) + " style " + std::to_string(c), id);
            if (pick(10) < 5) {
                id = g.add_subtype(TypeLevel::L3, phrase(1) + " detail " + std::to_string(c), id);
            }
        }
        deepest_types.push_back(id);
    }

    const int steps = 1 + pick(3);
    for (int s = 0; s < steps; ++s) {
        StepSpec spec;
        const int methods = 1 + pick(4);
        for (int m = 0; m < methods; ++m) {
            spec.methods.push_back(StepSpec::MethodSpec{"k" + std::to_string(m), phrase(2 + pick(3)),
                                                        pick(2)});
        }
        spec.goal_description = "achieve " + phrase(2);
        spec.goal_harmful = pick(2);
        spec.provenance = {"meme-" + std::to_string(seed % 97) + "-" + std::to_string(s)};

        const int layout = pick(4);
        if (layout == 2 && methods >= 2) {
            // two methods feed a gate, the rest chain into the first
            spec.gates.push_back(StepSpec::GateSpec{"x", pick(2) ? GateOp::And : GateOp::Or});
            spec.edges.emplace_back("k0", "x");
            spec.edges.emplace_back("k1", "x");
            spec.edges.emplace_back("x", "goal");
            for (int m = 2; m < methods; ++m) {
                spec.edges.emplace_back("k" + std::to_string(m), "k" + std::to_string(m - 1));
            }
        } else if (layout == 3) {
            // negated head feeding the goal, remainder chained behind it
            spec.gates.push_back(StepSpec::GateSpec{"x", GateOp::Not});
            spec.edges.emplace_back("k0", "x");
            spec.edges.emplace_back("x", "goal");
            for (int m = 1; m < methods; ++m) {
                spec.edges.emplace_back("k" + std::to_string(m), "k" + std::to_string(m - 1));
            }
        } else {
            for (int m = 1; m < methods; ++m) {
                spec.edges.emplace_back("k" + std::to_string(m - 1), "k" + std::to_string(m));
            }
            spec.edges.emplace_back("k" + std::to_string(methods - 1), "goal");
            if (layout == 1 && methods >= 2) spec.edges.emplace_back("k0", "goal");
        }

        const auto ids = g.add_step(spec);
        const auto& type_id = deepest_types[pick(static_cast<int>(deepest_types.size()))];
        g.add_edge(EdgeKind::Link, type_id, ids.at("k0"));
    }
    return g;
}

}  // namespace testsupport
