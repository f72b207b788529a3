#pragma once

#include <string>

#include "dcg/graph.hpp"
#include "dcg/pruner.hpp"

namespace testsupport {

/// The four-method appendix step: M1 and the chain M1 -> M2 -> M3 jointly
/// imply the goal G. Ids are fixed so the rendered expression is exactly
/// "M1 ∧ (M1 → M2 → M3) → G".
inline dcg::Graph appendix_step_fixture() {
    using namespace dcg;
    Graph g;
    g.force_node(Node{"T1", TypeData{TypeLevel::L1, "Gender"}});
    g.force_node(Node{"T2", TypeData{TypeLevel::L2, "Implicit Misogyny Slangs"}});
    g.force_node(Node{"M1", MethodData{"writes a fact text about parenting", 0}});
    g.force_node(Node{"M2", MethodData{"searches related images based on the fact", 0}});
    g.force_node(Node{"M3", MethodData{"specifies the image to the biased woman", 1}});
    g.force_node(Node{"G", GoalData{"specify fact to person to express misogyny", 1}});
    g.force_edge(Edge{EdgeKind::Type, "T1", "T2"});
    g.force_edge(Edge{EdgeKind::Link, "T2", "M1"});
    g.force_edge(Edge{EdgeKind::Achievement, "M1", "M2"});
    g.force_edge(Edge{EdgeKind::Achievement, "M2", "M3"});
    g.force_edge(Edge{EdgeKind::Achievement, "M3", "G"});
    g.force_edge(Edge{EdgeKind::Achievement, "M1", "G"});
    g.force_provenance("M1", {"meme-a"});
    g.force_provenance("M2", {"meme-a"});
    g.force_provenance("M3", {"meme-a"});
    g.force_provenance("G", {"meme-a"});
    g.reseed_counters();
    return g;
}

/// Thirteen-node pruning worked case: four type nodes and nine reproduction
/// nodes across two steps. The parenting step carries two near-duplicate
/// method pairs and dominates the spectrum; the nose-circling step's texts
/// are weakly tied to their goal. Pruning at the fixture's configured
/// retention keeps the four type nodes and the parenting core, and merging
/// collapses both duplicate pairs, leaving exactly seven nodes.
inline dcg::Graph pruning_case_fixture() {
    using namespace dcg;
    Graph g;
    g.force_node(Node{"t1", TypeData{TypeLevel::L1, "Gender"}});
    g.force_node(Node{"t2", TypeData{TypeLevel::L2, "Implicit Misogyny Slangs"}});
    g.force_node(Node{"t3", TypeData{TypeLevel::L1, "Human"}});
    g.force_node(Node{"t4", TypeData{TypeLevel::L2, "Racism Stereotype"}});
    g.force_edge(Edge{EdgeKind::Type, "t1", "t2"});
    g.force_edge(Edge{EdgeKind::Type, "t3", "t4"});

    g.force_node(Node{"ga", GoalData{"attach the hurtful parenting label to woman in meme", 1}});
    g.force_node(
        Node{"ma1", MethodData{"write the parenting fact text in the meme photo to choose bold font", 0}});
    g.force_node(
        Node{"ma2", MethodData{"to write parenting fact text in the meme photo to choose bold font", 0}});
    g.force_node(
        Node{"ma3", MethodData{"pin the crazy woman image onto the photo in meme to choose bold font", 1}});
    g.force_node(
        Node{"ma4", MethodData{"to pin crazy woman image onto the photo in meme to choose bold font", 1}});
    g.force_edge(Edge{EdgeKind::Achievement, "ma1", "ma3"});
    g.force_edge(Edge{EdgeKind::Achievement, "ma2", "ma4"});
    g.force_edge(Edge{EdgeKind::Achievement, "ma3", "ga"});
    g.force_edge(Edge{EdgeKind::Achievement, "ma4", "ga"});
    g.force_edge(Edge{EdgeKind::Link, "t2", "ma1"});
    g.force_edge(Edge{EdgeKind::Link, "t2", "ma2"});

    g.force_node(Node{"gb", GoalData{"to ridicule in the meme", 1}});
    g.force_node(Node{"mb1", MethodData{"to circle the nose in meme photo", 1}});
    g.force_node(Node{"mb2", MethodData{"to collect snapshots in the meme photo", 0}});
    g.force_node(Node{"mb3", MethodData{"to crop borders in the meme photo", 0}});
    g.force_edge(Edge{EdgeKind::Achievement, "mb1", "mb3"});
    g.force_edge(Edge{EdgeKind::Achievement, "mb3", "gb"});
    g.force_edge(Edge{EdgeKind::Achievement, "mb2", "gb"});
    g.force_edge(Edge{EdgeKind::Link, "t4", "mb1"});
    g.force_edge(Edge{EdgeKind::Link, "t4", "mb2"});

    for (const char* id : {"ma1", "ma2", "ma3", "ma4", "ga"}) g.force_provenance(id, {"meme-a"});
    for (const char* id : {"mb1", "mb2", "mb3", "gb"}) g.force_provenance(id, {"meme-b"});
    g.force_provenance("t1", {"meme-a"});
    g.force_provenance("t2", {"meme-a"});
    g.force_provenance("t3", {"meme-b"});
    g.force_provenance("t4", {"meme-b"});
    g.reseed_counters();
    return g;
}

/// Retention configured for the worked case above: two thirds of the
/// spectrum, defaults elsewhere.
inline dcg::PruneParams pruning_case_params() {
    dcg::PruneParams params;
    params.theta = 2.0 / 3.0;
    return params;
}

}  // namespace testsupport
