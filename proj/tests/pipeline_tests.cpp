#include <catch2/catch.hpp>

#include <set>

#include "dcg/dataset.hpp"
#include "dcg/graph_json.hpp"
#include "dcg/pipeline.hpp"
#include "dcg/pruner.hpp"
#include "support/replay.hpp"
#include "support/rig.hpp"

using namespace dcg;
using testsupport::fixture_path;
using testsupport::InlineRig;
using testsupport::ScriptedRig;

namespace {

std::vector<MemeRecord> loop_memes() { return load_dataset(fixture_path("loop_memes.jsonl")); }

/// Counting proxy around a client, for retry assertions.
class CountingClient : public CompletionClient {
public:
    explicit CountingClient(CompletionClient& inner) : inner_(inner) {}
    ModelResponse complete(const CompletionRequest& request) override {
        ++calls;
        return inner_.complete(request);
    }
    const std::string& model_id() const override { return inner_.model_id(); }
    int calls = 0;

private:
    CompletionClient& inner_;
};

}  // namespace

TEST_CASE("extraction keeps memes that three of five detectors misread") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const auto fail_set = pipeline.extract_fail_cases(loop_memes(), PromptSpec{});

    REQUIRE(fail_set.cases.size() == 2);
    CHECK(fail_set.cases[0].meme_id == "m1");
    CHECK(fail_set.cases[1].meme_id == "m2");
    CHECK(fail_set.cases[0].verdicts.size() == 5);  // rationales kept for reflection
    REQUIRE(fail_set.indeterminate.size() == 1);
    CHECK(fail_set.indeterminate[0] == "m6");  // no fixture keys -> transport failures
}

TEST_CASE("extraction matches an independent fixture replay") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const auto fail_set = pipeline.extract_fail_cases(loop_memes(), PromptSpec{});
    std::vector<std::string> got;
    for (const auto& c : fail_set.cases) got.push_back(c.meme_id);

    const auto expected =
        testsupport::replay_fail_ids(fixture_path("pipeline_fixture.json"), fixture_path("loop_memes.jsonl"), 1);
    CHECK(got == expected);
    CHECK(expected == std::vector<std::string>{"m1", "m2"});
}

TEST_CASE("an all-correct panel produces an empty fail set") {
    InlineRig rig;
    std::map<std::string, std::string> correct{{"detect.v1:x1", "HARMLESS fine"}};
    for (int i = 0; i < 5; ++i) rig.handles.detectors.push_back(rig.add("det" + std::to_string(i), correct));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    std::vector<MemeRecord> memes{{"x1", "a meme", "", false, "", "", ""}};
    const auto fail_set = pipeline.extract_fail_cases(memes, PromptSpec{});
    CHECK(fail_set.cases.empty());
    CHECK(fail_set.indeterminate.empty());
}

TEST_CASE("extraction requires three detectors") {
    InlineRig rig;
    rig.handles.detectors.push_back(rig.add("only", {}));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    CHECK_THROWS_AS(pipeline.extract_fail_cases({}, PromptSpec{}), ConfigError);
}

TEST_CASE("reflection grows the type chain and reason node") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const auto memes = loop_memes();
    const auto fail_set = pipeline.extract_fail_cases(memes, PromptSpec{});

    Graph tree;
    pipeline.reflect_fail_reasons(fail_set, index_by_id(memes), tree);
    CHECK(tree.validate().empty());

    int types = 0;
    int reasons = 0;
    for (const auto& [id, node] : tree.nodes()) {
        if (kind_of(node) == NodeKind::Type) ++types;
        if (kind_of(node) == NodeKind::FailReason) ++reasons;
    }
    CHECK(types == 6);  // two three-level chains
    CHECK(reasons == 2);
    REQUIRE(tree.find_type(TypeLevel::L1, "Human"));
    REQUIRE(tree.find_type(TypeLevel::L3, "Circled Accessory Hint"));
}

TEST_CASE("memes sharing a subtype reuse the chain") {
    InlineRig rig;
    rig.handles.generator = rig.add("generator", {
        {"reflect:a1", "Missed the implicit slang."},
        {"classify:a1", "Gender / Implicit Misogyny Slangs"},
        {"reflect:a2", "Missed the coded wording."},
        {"classify:a2", "Gender / Implicit Misogyny Slangs"},
    });
    Pipeline pipeline(rig.handles, testsupport::default_options());

    FailSet fails;
    fails.cases.push_back(FailCase{"a1", {}});
    fails.cases.push_back(FailCase{"a2", {}});
    std::map<std::string, MemeRecord> memes{
        {"a1", {"a1", "first meme", "", true, "", "", ""}},
        {"a2", {"a2", "second meme", "", true, "", "", ""}},
    };
    Graph tree;
    pipeline.reflect_fail_reasons(fails, memes, tree);

    int types = 0;
    int links = 0;
    for (const auto& [id, node] : tree.nodes()) {
        if (kind_of(node) == NodeKind::Type) ++types;
    }
    for (const Edge& e : tree.edges()) {
        if (e.kind == EdgeKind::Link) ++links;
    }
    CHECK(types == 2);  // Gender + one shared subtype
    CHECK(links == 2);
}

TEST_CASE("a macro type outside the taxonomy is retried then skipped") {
    InlineRig rig;
    rig.handles.generator = rig.add("generator", {
        {"reflect:w1", "Missed the storm metaphor."},
        {"classify:w1", "Weather / Storm Joke"},
        {"classify2:w1", "Weather / Storm Joke"},
    });
    Pipeline pipeline(rig.handles, testsupport::default_options());
    FailSet fails;
    fails.cases.push_back(FailCase{"w1", {}});
    std::map<std::string, MemeRecord> memes{{"w1", {"w1", "storm meme", "", true, "", "", ""}}};
    Graph tree;
    pipeline.reflect_fail_reasons(fails, memes, tree);
    CHECK(tree.empty());
    bool warned = false;
    for (const auto& w : pipeline.warnings()) warned = warned || w.find("w1") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("the classify retry can rescue a meme") {
    InlineRig rig;
    rig.handles.generator = rig.add("generator", {
        {"reflect:r1", "Missed the framing."},
        {"classify:r1", "Weather / Nope"},
        {"classify2:r1", "Political / Policy Satire"},
    });
    Pipeline pipeline(rig.handles, testsupport::default_options());
    FailSet fails;
    fails.cases.push_back(FailCase{"r1", {}});
    std::map<std::string, MemeRecord> memes{{"r1", {"r1", "policy meme", "", true, "", "", ""}}};
    Graph tree;
    pipeline.reflect_fail_reasons(fails, memes, tree);
    CHECK(tree.find_type(TypeLevel::L1, "Political").has_value());
}

TEST_CASE("reflection on an empty fail set violates its precondition") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    Graph tree;
    CHECK_THROWS_AS(pipeline.reflect_fail_reasons(FailSet{}, {}, tree), ConstraintViolationError);
}

TEST_CASE("prompt optimization appends deduplicated points and bumps the version") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const auto memes = loop_memes();
    const auto fail_set = pipeline.extract_fail_cases(memes, PromptSpec{});
    Graph tree;
    pipeline.reflect_fail_reasons(fail_set, index_by_id(memes), tree);

    const PromptSpec v2 = pipeline.optimize_prompt(PromptSpec{}, tree);
    CHECK(v2.version == 2);
    REQUIRE(v2.key_points.size() == 2);
    CHECK(v2.key_points[0] == "treat circled accessories as markers that may single out a person");
    CHECK(v2.render().find("Pay extra attention") != std::string::npos);

    // the same summary again changes nothing
    const PromptSpec still_v2 = pipeline.optimize_prompt(v2, tree);
    CHECK(still_v2.version == 2);
    CHECK(still_v2.key_points == v2.key_points);
}

TEST_CASE("prompt optimization enforces the key point budget") {
    InlineRig rig;
    rig.handles.generator = rig.add("generator", {
        {"optimize:v1", "- one\n- two\n- three\n- four\n- five\n- six\n- seven"},
    });
    Pipeline pipeline(rig.handles, testsupport::default_options());
    Graph tree;
    tree.add_fail_reason(FailReasonData{"some reason", "meme", "x1"});
    const auto next = pipeline.optimize_prompt(PromptSpec{}, tree);
    CHECK(next.key_points.size() == 5);
    CHECK(next.version == 2);
}

TEST_CASE("prompt optimization requires a non-empty tree") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    Graph tree;
    CHECK_THROWS_AS(pipeline.optimize_prompt(PromptSpec{}, tree), ConstraintViolationError);
}

TEST_CASE("generator failure leaves the prompt unchanged with a warning") {
    InlineRig rig;
    rig.handles.generator = rig.add("generator", {});
    Pipeline pipeline(rig.handles, testsupport::default_options());
    Graph tree;
    tree.add_fail_reason(FailReasonData{"some reason", "meme", "x1"});
    const auto next = pipeline.optimize_prompt(PromptSpec{}, tree);
    CHECK(next.version == 1);
    CHECK(next.key_points.empty());
    CHECK_FALSE(pipeline.warnings().empty());
}

TEST_CASE("the fail-tree loop keeps only memes that stay failed") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const auto result = pipeline.build_fail_tree_loop(loop_memes(), PromptSpec{});

    CHECK(result.iterations == 3);
    CHECK(result.prompt.version == 2);
    REQUIRE(result.final_fail_set.cases.size() == 1);
    CHECK(result.final_fail_set.cases[0].meme_id == "m1");

    int reasons = 0;
    int types = 0;
    for (const auto& [id, node] : result.tree.nodes()) {
        if (kind_of(node) == NodeKind::FailReason) {
            ++reasons;
            CHECK(std::get<FailReasonData>(node.data).meme_id == "m1");
        }
        if (kind_of(node) == NodeKind::Type) ++types;
    }
    CHECK(reasons == 1);
    CHECK(types == 3);  // the creeper chain is trimmed with m2
    CHECK(result.tree.validate().empty());
}

TEST_CASE("the loop is byte-deterministic under the scripted gateway") {
    ScriptedRig rig_a(fixture_path("pipeline_fixture.json"));
    Pipeline a(rig_a.handles, testsupport::default_options());
    ScriptedRig rig_b(fixture_path("pipeline_fixture.json"));
    Pipeline b(rig_b.handles, testsupport::default_options());
    const auto ra = a.build_fail_tree_loop(loop_memes(), PromptSpec{});
    const auto rb = b.build_fail_tree_loop(loop_memes(), PromptSpec{});
    CHECK(graph_to_string(ra.tree) == graph_to_string(rb.tree));
    CHECK(ra.prompt.to_json().dump() == rb.prompt.to_json().dump());
}

TEST_CASE("an empty initial fail set returns an empty tree and the original prompt") {
    InlineRig rig;
    std::map<std::string, std::string> correct{{"detect.v1:x1", "HARMLESS fine"}};
    for (int i = 0; i < 5; ++i) rig.handles.detectors.push_back(rig.add("det" + std::to_string(i), correct));
    rig.handles.generator = rig.add("generator", {});
    Pipeline pipeline(rig.handles, testsupport::default_options());
    std::vector<MemeRecord> memes{{"x1", "a meme", "", false, "", "", ""}};
    const auto result = pipeline.build_fail_tree_loop(memes, PromptSpec{});
    CHECK(result.tree.empty());
    CHECK(result.prompt.version == 1);
    CHECK(result.iterations == 1);
}

TEST_CASE("max_iters of one runs a single pass and keeps that fail set") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    auto options = testsupport::default_options();
    options.max_iters = 1;
    Pipeline pipeline(rig.handles, options);
    const auto result = pipeline.build_fail_tree_loop(loop_memes(), PromptSpec{});
    CHECK(result.iterations == 1);
    CHECK(result.final_fail_set.cases.size() == 2);
    int reasons = 0;
    for (const auto& [id, node] : result.tree.nodes()) {
        if (kind_of(node) == NodeKind::FailReason) ++reasons;
    }
    CHECK(reasons == 2);
}

TEST_CASE("derivation materializes accepted steps and drops rejected ones") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const Graph tree = load_graph(fixture_path("tree_two_reasons.dcg.json"));
    const Graph dcg = pipeline.derive_dcg(tree);

    CHECK(dcg.validate().empty());
    int methods = 0;
    int goals = 0;
    int types = 0;
    for (const auto& [id, node] : dcg.nodes()) {
        switch (kind_of(node)) {
            case NodeKind::Method: ++methods; break;
            case NodeKind::Goal: ++goals; break;
            case NodeKind::Type: ++types; break;
            default: break;
        }
    }
    CHECK(types == 6);   // both chains are copied
    CHECK(methods == 3); // only the accepted racism step
    CHECK(goals == 1);
    // provenance traces to the originating meme
    for (const auto& [id, node] : dcg.nodes()) {
        if (is_reproduction(kind_of(node))) {
            CHECK(dcg.provenance_of(id).count("m1") == 1);
        }
    }
    // the deepest type links into the step's entry method
    bool linked = false;
    for (const Edge& e : dcg.edges()) {
        linked = linked || (e.kind == EdgeKind::Link && e.src == "t3");
    }
    CHECK(linked);
    bool rejected_warning = false;
    for (const auto& w : pipeline.warnings()) {
        rejected_warning = rejected_warning || w.find("m2") != std::string::npos;
    }
    CHECK(rejected_warning);
}

TEST_CASE("a revision replaces the derived step") {
    InlineRig rig;
    rig.handles.generator = rig.add("generator", {
        {"derive:v1", R"({"methods": [{"key": "M1", "description": "draw the first panel", "harmful": 0}],
                          "goal": {"description": "mock the figure", "harmful": 1},
                          "edges": [["M1", "goal"]]})"},
        {"calibrate:v1", R"(REVISE {"methods": [{"key": "M1", "description": "draw the corrected panel", "harmful": 1}],
                          "goal": {"description": "mock the figure directly", "harmful": 1},
                          "edges": [["M1", "goal"]]})"},
    });
    Pipeline pipeline(rig.handles, testsupport::default_options());
    Graph tree;
    const auto l1 = tree.add_macro_type("Political");
    const auto reason = tree.add_fail_reason(FailReasonData{"missed the satire", "panel meme", "v1"});
    tree.add_edge(EdgeKind::Link, l1, reason);
    const Graph dcg = pipeline.derive_dcg(tree);

    bool revised = false;
    for (const auto& [id, node] : dcg.nodes()) {
        if (kind_of(node) == NodeKind::Method) {
            revised = std::get<MethodData>(node.data).description == "draw the corrected panel";
        }
    }
    CHECK(revised);
}

TEST_CASE("a tree without reasons derives a type-only DCG") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    Graph tree;
    tree.add_macro_type("Animal");
    const Graph dcg = pipeline.derive_dcg(tree);
    CHECK(dcg.node_count() == 1);
    CHECK(kind_of(dcg.nodes().begin()->second) == NodeKind::Type);
}

TEST_CASE("retrieval falls back to TF-IDF ranking and returns whole steps") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const Graph tree = load_graph(fixture_path("tree_two_reasons.dcg.json"));
    const Graph dcg = pipeline.derive_dcg(tree);

    MemeRecord target{"mt", "portrait with circled nose stud accessory", "", true, "Racism", "2025Q2", ""};
    const auto steps = pipeline.retrieve_steps(dcg, target, 4);
    REQUIRE(steps.size() == 1);
    CHECK_FALSE(steps[0].goals.empty());  // whole step, renderable
    CHECK(steps[0].nodes.size() == 4);    // three methods + goal

    // hand-ranking oracle: the most similar node must sit in the returned step
    const TfidfModel model = fit_node_model(dcg);
    const SparseVector target_vec = model.vectorize(target.text);
    std::string best;
    double best_sim = 0.0;
    for (const auto& [id, node] : dcg.nodes()) {
        const double sim = cosine(target_vec, model.vectorize(contents(node)));
        if (sim > best_sim) {
            best_sim = sim;
            best = id;
        }
    }
    REQUIRE(best_sim > 0.0);
    CHECK(steps[0].contains(best));

    CHECK(pipeline.retrieve_steps(dcg, target, 0).empty());
    CHECK(pipeline.retrieve_steps(Graph{}, target, 4).empty());
}

TEST_CASE("model retrieval uses the scripted ids and survives gateway failure") {
    ScriptedRig base(fixture_path("pipeline_fixture.json"));
    const Graph tree = [] {
        ScriptedRig rig(fixture_path("pipeline_fixture.json"));
        Pipeline p(rig.handles, testsupport::default_options());
        return p.derive_dcg(load_graph(fixture_path("tree_two_reasons.dcg.json")));
    }();

    InlineRig rig;
    rig.handles.test_model = rig.add("test", {{"retrieve:mt", "m3, t3 and bogus"}});
    auto options = testsupport::default_options();
    options.model_retrieval = true;
    Pipeline pipeline(rig.handles, options);
    MemeRecord target{"mt", "portrait with circled nose stud accessory", "", true, "Racism", "2025Q2", ""};
    const auto steps = pipeline.retrieve_steps(tree, target, 4);
    REQUIRE(steps.size() == 1);
    CHECK(steps[0].nodes.size() == 4);

    // unknown key -> fixture miss -> fallback engages with a warning
    InlineRig missing;
    missing.handles.test_model = missing.add("test", {});
    Pipeline fallback_pipeline(missing.handles, options);
    const auto fallback_steps = fallback_pipeline.retrieve_steps(tree, target, 4);
    REQUIRE(fallback_steps.size() == 1);
    CHECK_FALSE(fallback_pipeline.warnings().empty());
}

TEST_CASE("guided detection produces the scripted verdict end to end") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const Graph tree = load_graph(fixture_path("tree_two_reasons.dcg.json"));
    const Graph dcg = pipeline.derive_dcg(tree);

    PromptSpec prompt;
    prompt.key_points = {"treat circled accessories as markers that may single out a person"};
    prompt.version = 2;
    MemeRecord target{"mt", "portrait with circled nose stud accessory", "", true, "Racism", "2025Q2", ""};
    const auto result = pipeline.detect(target, dcg, prompt, 5);

    CHECK(result.verdict.harmful);
    CHECK(result.verdict.rationale ==
          "the red circle singles out the nose stud to target the pictured group");
    CHECK(result.verdict.prompt_version == 2);
    CHECK_FALSE(result.package.no_guidance);
    REQUIRE(result.package.rendered_steps.size() == 1);
    CHECK(result.package.rendered_steps[0].find("## Reproduction Step") != std::string::npos);
    CHECK(result.package.guidance.find("(S1)") != std::string::npos);
}

TEST_CASE("an empty DCG degrades to the plain prompt path") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    PromptSpec prompt;
    prompt.version = 2;
    MemeRecord target{"mt", "portrait with circled nose stud accessory", "", true, "Racism", "2025Q2", ""};
    const auto result = pipeline.detect(target, Graph{}, prompt, 5);
    CHECK(result.package.no_guidance);
    CHECK_FALSE(result.verdict.harmful);  // the plain fixture answer is harmless
}

TEST_CASE("unparseable verdicts surface after one retry") {
    InlineRig rig;
    auto* inner = rig.add("test", {{"detect.v1:x1", "mumble mumble"}});
    CountingClient counting(*inner);
    PipelineClients handles;
    handles.test_model = &counting;
    Pipeline pipeline(handles, testsupport::default_options());
    MemeRecord target{"x1", "a meme", "", false, "", "", ""};
    CHECK_THROWS_AS(pipeline.detect(target, Graph{}, PromptSpec{}, 5), UnparseableVerdictError);
    CHECK(counting.calls == 2);
}
