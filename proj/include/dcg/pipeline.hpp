#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcg/dataset.hpp"
#include "dcg/errors.hpp"
#include "dcg/gateway.hpp"
#include "dcg/graph.hpp"
#include "dcg/logic.hpp"
#include "dcg/pruner.hpp"
#include "dcg/tfidf.hpp"

namespace dcg {

inline const std::string& default_base_prompt() {
    static const std::string text =
        "You are a strict content moderator for internet memes. Given the meme text and "
        "image, decide whether the meme is harmful. Answer with a single leading token "
        "HARMFUL or HARMLESS, followed by a one-sentence justification.";
    return text;
}

/// Detection prompt plus the key points appended by optimization rounds.
/// The version counter increments exactly when the key points change.
struct PromptSpec {
    std::string base_text = default_base_prompt();
    std::vector<std::string> key_points;
    int version = 1;

    std::string render() const {
        std::string out = base_text;
        if (!key_points.empty()) {
            out += "\nPay extra attention to these points:";
            for (const auto& p : key_points) out += "\n- " + p;
        }
        return out;
    }

    std::string template_id(const std::string& operation) const {
        return operation + ".v" + std::to_string(version);
    }

    nlohmann::json to_json() const {
        return {{"base_text", base_text}, {"key_points", key_points}, {"version", version}};
    }

    static PromptSpec from_json(const nlohmann::json& j) {
        PromptSpec p;
        p.base_text = j.value("base_text", p.base_text);
        p.key_points = j.value("key_points", std::vector<std::string>{});
        p.version = j.value("version", 1);
        return p;
    }
};

struct FailCase {
    std::string meme_id;
    std::vector<Verdict> verdicts;  // rationales feed the reflection step
};

struct FailSet {
    std::vector<FailCase> cases;              // memes the detectors keep misreading
    std::vector<std::string> indeterminate;   // memes with too many failed calls

    bool contains(const std::string& meme_id) const {
        for (const auto& c : cases) {
            if (c.meme_id == meme_id) return true;
        }
        return false;
    }

    bool empty() const { return cases.empty(); }

    nlohmann::json to_json() const {
        std::vector<std::string> failed;
        for (const auto& c : cases) failed.push_back(c.meme_id);
        return {{"failed", failed}, {"indeterminate", indeterminate}};
    }
};

/// Rendered steps and generated guidance backing one detection verdict.
struct GuidancePackage {
    std::string meme_id;
    std::vector<std::string> rendered_steps;
    std::string guidance;
    int prompt_version = 0;
    bool no_guidance = false;  // degraded to the plain prompt path

    nlohmann::json to_json() const {
        return {{"meme_id", meme_id},
                {"rendered_steps", rendered_steps},
                {"guidance", guidance},
                {"prompt_version", prompt_version},
                {"no_guidance", no_guidance}};
    }
};

struct PipelineClients {
    std::vector<CompletionClient*> detectors;
    CompletionClient* generator = nullptr;
    CompletionClient* test_model = nullptr;
};

struct PipelineOptions {
    int max_iters = 3;        // fail-tree loop bound
    int retrieval_k = 5;      // nodes pulled per target
    int max_key_points = 5;   // prompt optimization budget
    bool model_retrieval = false;  // false: deterministic TF-IDF fallback
};

struct LoopResult {
    Graph tree;
    PromptSpec prompt;
    FailSet final_fail_set;
    int iterations = 0;
};

struct DetectResult {
    Verdict verdict;
    GuidancePackage package;
};

/// Orchestrates the three phases: the fail-reason-tree loop, DCG derivation
/// and DCG-guided detection. All model traffic goes through the clients
/// handed in; with scripted clients every run is byte-identical.
class Pipeline {
public:
    Pipeline(PipelineClients clients, PipelineOptions options)
        : clients_(std::move(clients)), options_(std::move(options)) {}

    const std::vector<std::string>& warnings() const { return warnings_; }

    // -- phase 1: fail reason tree -------------------------------------------

    FailSet extract_fail_cases(const std::vector<MemeRecord>& memes, const PromptSpec& prompt) {
        if (clients_.detectors.size() < 3) {
            throw ConfigError("majority voting needs at least 3 detector clients, got " +
                              std::to_string(clients_.detectors.size()));
        }
        FailSet out;
        for (const auto& meme : memes) {
            if (!meme.gold_label) {
                throw StageError("historical meme '" + meme.id + "' has no gold label");
            }
            std::vector<Verdict> verdicts;
            int failed_calls = 0;
            for (CompletionClient* detector : clients_.detectors) {
                CompletionRequest request;
                request.prompt = detection_prompt(prompt, meme, /*guidance=*/"");
                request.model_id = detector->model_id();
                request.template_id = prompt.template_id("detect");
                request.subject_id = meme.id;
                if (!meme.image_ref.empty()) request.images.push_back(meme.image_ref);
                try {
                    const ModelResponse response = detector->complete(request);
                    auto [harmful, rationale] = parse_verdict(response.text);
                    verdicts.push_back(
                        Verdict{meme.id, harmful, rationale, detector->model_id(), prompt.version});
                } catch (const Error& e) {
                    ++failed_calls;
                    warn("detector '" + detector->model_id() + "' failed on meme '" + meme.id +
                         "': " + std::string(e.what()));
                }
            }
            if (failed_calls >= 3) {
                out.indeterminate.push_back(meme.id);
                continue;
            }
            if (majority_fail(verdicts, *meme.gold_label)) {
                out.cases.push_back(FailCase{meme.id, std::move(verdicts)});
            }
        }
        return out;
    }

    /// Adds one reason node per fail meme plus its macro/subtype chain.
    /// Memes whose generator answers fail the parse contract twice are
    /// skipped with a warning.
    void reflect_fail_reasons(const FailSet& fail_set, const std::map<std::string, MemeRecord>& memes,
                              Graph& tree) {
        if (fail_set.empty()) throw ConstraintViolationError("reflection requires a non-empty fail set");
        require_generator();
        for (const auto& fail : fail_set.cases) {
            auto meme_it = memes.find(fail.meme_id);
            if (meme_it == memes.end()) {
                throw UnknownEndpointError("fail case '" + fail.meme_id + "' is not in the dataset");
            }
            const MemeRecord& meme = meme_it->second;

            const auto reason = generate(reflect_prompt(meme, fail.verdicts), "reflect", meme.id,
                                         [](const std::string& text) -> std::optional<std::string> {
                                             std::string t = trim(text);
                                             if (t.empty()) return std::nullopt;
                                             return t;
                                         });
            if (!reason) {
                warn("skipping meme '" + meme.id + "': no usable fail reason");
                continue;
            }

            const auto levels = generate(classify_prompt(meme, *reason), "classify", meme.id, parse_type_levels);
            if (!levels) {
                warn("skipping meme '" + meme.id + "': no usable type classification");
                continue;
            }

            const std::string l1 = tree.add_macro_type((*levels)[0]);
            std::string deepest = l1;
            if (levels->size() > 1) deepest = tree.add_subtype(TypeLevel::L2, (*levels)[1], deepest);
            if (levels->size() > 2) deepest = tree.add_subtype(TypeLevel::L3, (*levels)[2], deepest);

            std::string reason_id = find_reason_node(tree, meme.id);
            if (reason_id.empty()) {
                reason_id = tree.add_fail_reason(FailReasonData{*reason, meme.text, meme.id});
            }
            if (!has_edge(tree, EdgeKind::Link, deepest, reason_id)) {
                tree.add_edge(EdgeKind::Link, deepest, reason_id);
            }
        }
    }

    /// Appends deduplicated key points summarized from the tree; the version
    /// bumps only when the points actually change.
    PromptSpec optimize_prompt(const PromptSpec& prompt, const Graph& tree) {
        std::vector<std::string> reasons;
        for (const auto& [id, node] : tree.nodes()) {
            if (kind_of(node) == NodeKind::FailReason) {
                reasons.push_back(std::get<FailReasonData>(node.data).reason);
            }
        }
        if (reasons.empty()) throw ConstraintViolationError("prompt optimization requires a non-empty tree");
        require_generator();

        CompletionRequest request;
        request.prompt = optimize_prompt_text(reasons);
        request.model_id = clients_.generator->model_id();
        request.template_id = "optimize";
        request.subject_id = "v" + std::to_string(prompt.version);
        std::string response;
        try {
            response = clients_.generator->complete(request).text;
        } catch (const Error& e) {
            warn("prompt optimization failed, keeping version " + std::to_string(prompt.version) + ": " +
                 e.what());
            return prompt;
        }

        PromptSpec next = prompt;
        std::set<std::string> seen;
        for (const auto& p : next.key_points) seen.insert(normalize_label(p));
        int appended = 0;
        std::istringstream lines(response);
        std::string line;
        while (std::getline(lines, line) && appended < options_.max_key_points) {
            std::string point = trim(line);
            if (point.rfind("- ", 0) == 0) point = trim(point.substr(2));
            if (point.empty()) continue;
            if (!seen.insert(normalize_label(point)).second) continue;
            next.key_points.push_back(point);
            ++appended;
        }
        if (appended > 0) ++next.version;
        return next;
    }

    /// extract -> reflect -> optimize until the fail set empties or the
    /// iteration cap is hit. The returned tree keeps only reasons for memes
    /// that still fail under the final prompt.
    LoopResult build_fail_tree_loop(const std::vector<MemeRecord>& memes, PromptSpec prompt) {
        if (options_.max_iters < 1) throw ConfigError("max_iters must be at least 1");
        const auto by_id = index_by_id(memes);
        Graph tree;
        FailSet last;
        int iterations = 0;
        for (int iteration = 1; iteration <= options_.max_iters; ++iteration) {
            iterations = iteration;
            last = extract_fail_cases(memes, prompt);
            if (last.empty()) break;
            reflect_fail_reasons(last, by_id, tree);
            if (tree_has_reasons(tree)) prompt = optimize_prompt(prompt, tree);
        }
        filter_tree_to_fail_set(tree, last);
        return LoopResult{std::move(tree), std::move(prompt), std::move(last), iterations};
    }

    // -- phase 2: DCG derivation ------------------------------------------------

    /// Derives reproduction steps from every reason node and calibrates each
    /// one; accepted steps are linked into a fresh DCG that shares the
    /// tree's type chains.
    Graph derive_dcg(const Graph& tree) {
        const auto violations = tree.validate();
        if (!violations.empty()) {
            throw ValidationFailureError("fail reason tree does not validate: " + violations.front().rule);
        }
        require_generator();

        Graph dcg;
        for (const auto& [id, node] : tree.nodes()) {
            if (kind_of(node) == NodeKind::Type) dcg.force_node(node);
        }
        for (const Edge& e : tree.edges()) {
            if (e.kind == EdgeKind::Type) dcg.force_edge(e);
        }
        for (const auto& [id, memes] : tree.provenance()) {
            if (dcg.has_node(id)) dcg.force_provenance(id, {memes.begin(), memes.end()});
        }
        dcg.reseed_counters();

        for (const auto& [reason_id, node] : tree.nodes()) {
            if (kind_of(node) != NodeKind::FailReason) continue;
            const auto& reason = std::get<FailReasonData>(node.data);

            auto spec = generate(derive_prompt(reason), "derive", reason.meme_id, parse_step_spec);
            if (!spec) {
                warn("skipping step for meme '" + reason.meme_id + "': derivation failed twice");
                continue;
            }
            spec->provenance = {reason.meme_id};

            const auto calibrated = calibrate_step(*spec, reason);
            if (!calibrated) {
                warn("dropping step for meme '" + reason.meme_id + "': rejected by calibration");
                continue;
            }

            const auto ids = dcg.add_step(*calibrated);

            // link the reason's type nodes to the step's methods
            std::vector<std::string> type_sources;
            for (const Edge& e : tree.edges()) {
                if (e.kind == EdgeKind::Link && e.dst == reason_id) type_sources.push_back(e.src);
            }
            std::sort(type_sources.begin(), type_sources.end());
            for (const auto& method : calibrated->methods) {
                for (const auto& type_id : type_sources) {
                    if (!has_edge(dcg, EdgeKind::Link, type_id, ids.at(method.key))) {
                        dcg.add_edge(EdgeKind::Link, type_id, ids.at(method.key));
                    }
                }
            }
        }
        return dcg;
    }

    // -- phase 3: detection -------------------------------------------------------

    /// Step-1 retrieval: model-selected node ids when configured, otherwise
    /// (and on any gateway failure) the deterministic TF-IDF fallback. The
    /// selected nodes are expanded to their whole steps before clustering,
    /// so every returned step is renderable.
    std::vector<ReproductionStep> retrieve_steps(const Graph& dcg, const MemeRecord& target, int k) {
        if (k <= 0 || dcg.empty()) return {};
        std::vector<std::string> picked;
        bool use_fallback = !options_.model_retrieval;
        if (options_.model_retrieval) {
            try {
                picked = model_retrieval(dcg, target, k);
            } catch (const Error& e) {
                warn("model retrieval failed for '" + target.id + "', using TF-IDF fallback: " + e.what());
                use_fallback = true;
            }
        }
        if (use_fallback) picked = fallback_retrieval(dcg, target, k);
        if (picked.empty()) return {};

        std::set<std::string> expanded;
        for (const auto& id : picked) {
            if (is_reproduction(kind_of(dcg.node(id)))) {
                const auto component = dcg.achievement_component(id);
                expanded.insert(component.begin(), component.end());
            } else {
                expanded.insert(id);
            }
        }
        return dcg.step_subgraphs({expanded.begin(), expanded.end()});
    }

    /// Step-2 guidance and verdict. With zero retrieved steps the call
    /// degrades to the plain optimized prompt (flagged in the package).
    DetectResult detect(const MemeRecord& target, const Graph& dcg, const PromptSpec& prompt, int k) {
        require_test_model();
        const auto steps = retrieve_steps(dcg, target, k);

        GuidancePackage package;
        package.meme_id = target.id;
        package.prompt_version = prompt.version;

        std::string detect_template;
        std::string detect_text;
        if (steps.empty()) {
            package.no_guidance = true;
            detect_template = prompt.template_id("detect");
            detect_text = detection_prompt(prompt, target, "");
        } else {
            for (const auto& step : steps) package.rendered_steps.push_back(render_guidance_text(dcg, step));

            CompletionRequest guide;
            guide.prompt = guide_prompt(package.rendered_steps, target);
            guide.model_id = clients_.test_model->model_id();
            guide.template_id = "guide";
            guide.subject_id = target.id;
            if (!target.image_ref.empty()) guide.images.push_back(target.image_ref);
            package.guidance = clients_.test_model->complete(guide).text;

            detect_template = prompt.template_id("guided-detect");
            detect_text = detection_prompt(prompt, target, package.guidance);
        }

        CompletionRequest request;
        request.prompt = detect_text;
        request.model_id = clients_.test_model->model_id();
        request.template_id = detect_template;
        request.subject_id = target.id;
        if (!target.image_ref.empty()) request.images.push_back(target.image_ref);

        Verdict verdict;
        verdict.meme_id = target.id;
        verdict.model_id = clients_.test_model->model_id();
        verdict.prompt_version = prompt.version;
        try {
            const auto response = clients_.test_model->complete(request);
            auto [harmful, rationale] = parse_verdict(response.text);
            verdict.harmful = harmful;
            verdict.rationale = rationale;
        } catch (const UnparseableVerdictError&) {
            // one retry before surfacing
            const auto response = clients_.test_model->complete(request);
            auto [harmful, rationale] = parse_verdict(response.text);
            verdict.harmful = harmful;
            verdict.rationale = rationale;
        }
        return DetectResult{std::move(verdict), std::move(package)};
    }

private:
    // -- prompt texts ------------------------------------------------------------

    static std::string trim(const std::string& text) {
        std::size_t a = 0;
        std::size_t b = text.size();
        while (a < b && std::isspace(static_cast<unsigned char>(text[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(text[b - 1]))) --b;
        return text.substr(a, b - a);
    }

    static std::string detection_prompt(const PromptSpec& prompt, const MemeRecord& meme,
                                        const std::string& guidance) {
        std::string out;
        if (!guidance.empty()) out += "Stepwise guidance:\n" + guidance + "\n\n";
        out += prompt.render();
        out += "\n\nMeme text: " + meme.text;
        if (!meme.image_ref.empty()) out += "\nMeme image: " + meme.image_ref;
        return out;
    }

    static std::string reflect_prompt(const MemeRecord& meme, const std::vector<Verdict>& verdicts) {
        std::string out =
            "Several vision-language models misclassified the meme below. Explain in ONE "
            "sentence why they failed to judge its harmfulness.\n";
        out += "Meme text: " + meme.text + "\n";
        if (!meme.image_ref.empty()) out += "Meme image: " + meme.image_ref + "\n";
        out += "Model answers:\n";
        for (const auto& v : verdicts) {
            out += "- " + v.model_id + ": " + (v.harmful ? "harmful" : "harmless");
            if (!v.rationale.empty()) out += " (" + v.rationale + ")";
            out += "\n";
        }
        return out;
    }

    static std::string classify_prompt(const MemeRecord& meme, const std::string& reason) {
        std::string out = "Classify the meme into a macro type, then up to two increasingly "
                          "specific subtypes. The macro type must be one of:";
        for (std::string_view m : macro_types()) out += " " + std::string(m) + ",";
        out.back() = '.';
        out += "\nAnswer exactly as 'Macro / Subtype / Sub-subtype' (subtypes free-form).\n";
        out += "Meme text: " + meme.text + "\nFail reason: " + reason + "\n";
        return out;
    }

    static std::string optimize_prompt_text(const std::vector<std::string>& reasons) {
        std::string out =
            "The fail reasons below describe memes that moderation models keep "
            "misclassifying. Summarize the common causes as short key points a moderator "
            "should watch for, one per line, each starting with '- '.\n";
        for (const auto& r : reasons) out += "- " + r + "\n";
        return out;
    }

    static std::string derive_prompt(const FailReasonData& reason) {
        return "Reproduce the design steps a malicious user likely took to build this meme. "
               "For every visible element ask: (A) is there a replacement method for the "
               "element, (B) why was this element chosen, (C) is the replaced element "
               "harmful. Answer as JSON with fields methods:[{key,description,harmful}], "
               "gates:[{key,op}], goal:{description,harmful} and edges:[[from,to]], where "
               "'goal' names the goal node and op is And/Or/Not.\n"
               "Meme description: " + reason.meme_description + "\n"
               "Fail reason: " + reason.reason + "\n";
    }

    static std::string calibrate_prompt(const StepSpec& spec, const FailReasonData& reason) {
        return "Check whether the proposed design steps align with the meme's visible "
               "elements. Reply ACCEPT, or REVISE followed by a corrected step JSON, or "
               "REJECT with a reason.\n"
               "Meme description: " + reason.meme_description + "\n"
               "Steps: " + step_spec_to_json(spec).dump() + "\n";
    }

    static std::string guide_prompt(const std::vector<std::string>& rendered, const MemeRecord& target) {
        std::string out =
            "Turn the reproduction steps below into stepwise guidance (S1) ... (Sn) for "
            "judging whether the target meme is harmful.\n";
        for (const auto& r : rendered) out += r + "\n";
        out += "Target meme: " + target.text + "\n";
        return out;
    }

    std::string retrieve_prompt(const Graph& dcg, const MemeRecord& target) const {
        std::string out =
            "Select the ids of the graph nodes that may relate to the target meme. Reply "
            "with the ids only, separated by spaces.\n";
        out += "Target meme: " + target.text + "\nNodes:\n";
        for (const auto& [id, node] : dcg.nodes()) {
            out += id + ": " + contents(node) + "\n";
        }
        return out;
    }

    // -- response contracts ----------------------------------------------------

    static std::optional<std::vector<std::string>> parse_type_levels(const std::string& text) {
        std::vector<std::string> levels;
        std::string current;
        for (char c : text) {
            if (c == '/') {
                levels.push_back(trim(current));
                current.clear();
            } else {
                current.push_back(c);
            }
        }
        levels.push_back(trim(current));
        while (!levels.empty() && levels.back().empty()) levels.pop_back();
        if (levels.empty() || levels.size() > 3) return std::nullopt;
        for (const auto& l : levels) {
            if (l.empty()) return std::nullopt;
        }
        if (!canonical_macro_type(levels[0])) return std::nullopt;
        return levels;
    }

    static nlohmann::json step_spec_to_json(const StepSpec& spec) {
        nlohmann::json methods = nlohmann::json::array();
        for (const auto& m : spec.methods) {
            methods.push_back({{"key", m.key}, {"description", m.description}, {"harmful", m.harmful}});
        }
        nlohmann::json gates = nlohmann::json::array();
        for (const auto& g : spec.gates) {
            gates.push_back({{"key", g.key},
                             {"op", g.op == GateOp::And ? "And" : (g.op == GateOp::Or ? "Or" : "Not")}});
        }
        nlohmann::json edges = nlohmann::json::array();
        for (const auto& [from, to] : spec.edges) edges.push_back({from, to});
        return {{"methods", methods},
                {"gates", gates},
                {"goal", {{"description", spec.goal_description}, {"harmful", spec.goal_harmful}}},
                {"edges", edges}};
    }

    static std::optional<StepSpec> parse_step_spec(const std::string& text) {
        const auto brace = text.find('{');
        if (brace == std::string::npos) return std::nullopt;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text.substr(brace));
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
        try {
            StepSpec spec;
            for (const auto& m : j.value("methods", nlohmann::json::array())) {
                spec.methods.push_back(StepSpec::MethodSpec{m.at("key").get<std::string>(),
                                                            m.at("description").get<std::string>(),
                                                            m.value("harmful", 0)});
            }
            for (const auto& g : j.value("gates", nlohmann::json::array())) {
                const std::string op = g.at("op").get<std::string>();
                GateOp parsed;
                if (op == "And") parsed = GateOp::And;
                else if (op == "Or") parsed = GateOp::Or;
                else if (op == "Not") parsed = GateOp::Not;
                else return std::nullopt;
                spec.gates.push_back(StepSpec::GateSpec{g.at("key").get<std::string>(), parsed});
            }
            if (!j.contains("goal")) return std::nullopt;
            spec.goal_description = j.at("goal").at("description").get<std::string>();
            spec.goal_harmful = j.at("goal").value("harmful", 0);
            for (const auto& e : j.value("edges", nlohmann::json::array())) {
                if (!e.is_array() || e.size() != 2) return std::nullopt;
                spec.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
            }
            if (spec.methods.empty()) return std::nullopt;
            return spec;
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
    }

    // -- helpers --------------------------------------------------------------

    void warn(std::string message) { warnings_.push_back(std::move(message)); }

    void require_generator() const {
        if (!clients_.generator) throw ConfigError("no generator client configured");
    }
    void require_test_model() const {
        if (!clients_.test_model) throw ConfigError("no test model client configured");
    }

    /// Calls the generator with `template_id`, retrying once under
    /// "<template_id>2" when the parser rejects the response. Returns
    /// nullopt after the second failure.
    template <typename Parser>
    auto generate(const std::string& prompt, const std::string& template_id, const std::string& subject,
                  Parser parser) -> decltype(parser(std::string{})) {
        for (int attempt = 0; attempt < 2; ++attempt) {
            CompletionRequest request;
            request.prompt = prompt;
            request.model_id = clients_.generator->model_id();
            request.template_id = attempt == 0 ? template_id : template_id + "2";
            request.subject_id = subject;
            try {
                const auto response = clients_.generator->complete(request);
                auto parsed = parser(response.text);
                if (parsed) return parsed;
                warn("generator response for " + request.template_id + ":" + subject +
                     " failed the parse contract");
            } catch (const Error& e) {
                warn("generator call " + request.template_id + ":" + subject + " failed: " + e.what());
            }
        }
        return std::nullopt;
    }

    /// ACCEPT keeps the step, REVISE replaces it, REJECT (or an unusable
    /// answer) consumes one of the two calibration attempts.
    std::optional<StepSpec> calibrate_step(const StepSpec& spec, const FailReasonData& reason) {
        for (int attempt = 0; attempt < 2; ++attempt) {
            CompletionRequest request;
            request.prompt = calibrate_prompt(spec, reason);
            request.model_id = clients_.generator->model_id();
            request.template_id = attempt == 0 ? "calibrate" : "calibrate2";
            request.subject_id = reason.meme_id;
            std::string response;
            try {
                response = clients_.generator->complete(request).text;
            } catch (const Error& e) {
                warn("calibration call failed for '" + reason.meme_id + "': " + e.what());
                continue;
            }
            const std::string token = first_word_upper(response);
            if (token == "ACCEPT") return spec;
            if (token == "REVISE") {
                auto revised = parse_step_spec(response);
                if (revised) {
                    revised->provenance = spec.provenance;
                    return revised;
                }
                warn("revision for '" + reason.meme_id + "' was not parseable");
                continue;
            }
            warn("calibration attempt " + std::to_string(attempt + 1) + " rejected step for '" +
                 reason.meme_id + "'");
        }
        return std::nullopt;
    }

    static std::string first_word_upper(const std::string& text) {
        std::size_t pos = 0;
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        std::string word;
        while (pos < text.size() && std::isalpha(static_cast<unsigned char>(text[pos]))) {
            word.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(text[pos]))));
            ++pos;
        }
        return word;
    }

    static std::string find_reason_node(const Graph& tree, const std::string& meme_id) {
        for (const auto& [id, node] : tree.nodes()) {
            if (kind_of(node) != NodeKind::FailReason) continue;
            if (std::get<FailReasonData>(node.data).meme_id == meme_id) return id;
        }
        return "";
    }

    static bool tree_has_reasons(const Graph& tree) {
        for (const auto& [id, node] : tree.nodes()) {
            if (kind_of(node) == NodeKind::FailReason) return true;
        }
        return false;
    }

    static bool has_edge(const Graph& g, EdgeKind kind, const std::string& src, const std::string& dst) {
        for (const Edge& e : g.edges()) {
            if (e.kind == kind && e.src == src && e.dst == dst) return true;
        }
        return false;
    }

    /// Drops reason nodes for memes outside the final fail set, then trims
    /// type chains that no longer link to anything.
    static void filter_tree_to_fail_set(Graph& tree, const FailSet& last) {
        std::vector<std::string> stale;
        for (const auto& [id, node] : tree.nodes()) {
            if (kind_of(node) != NodeKind::FailReason) continue;
            if (!last.contains(std::get<FailReasonData>(node.data).meme_id)) stale.push_back(id);
        }
        for (const auto& id : stale) tree.erase_node(id);

        bool changed = true;
        while (changed) {
            changed = false;
            std::vector<std::string> orphans;
            for (const auto& [id, node] : tree.nodes()) {
                if (kind_of(node) != NodeKind::Type) continue;
                bool used = false;
                for (const Edge& e : tree.edges()) {
                    if ((e.kind == EdgeKind::Link || e.kind == EdgeKind::Type) && e.src == id) {
                        used = true;
                        break;
                    }
                }
                if (!used) orphans.push_back(id);
            }
            for (const auto& id : orphans) {
                tree.erase_node(id);
                changed = true;
            }
        }
    }

    std::vector<std::string> model_retrieval(const Graph& dcg, const MemeRecord& target, int k) {
        require_test_model();
        CompletionRequest request;
        request.prompt = retrieve_prompt(dcg, target);
        request.model_id = clients_.test_model->model_id();
        request.template_id = "retrieve";
        request.subject_id = target.id;
        const auto response = clients_.test_model->complete(request);

        std::vector<std::string> picked;
        std::set<std::string> seen;
        std::string token;
        std::istringstream stream(response.text);
        while (stream >> token) {
            while (!token.empty() && (token.back() == ',' || token.back() == ';')) token.pop_back();
            if (token.empty() || !dcg.has_node(token)) continue;
            if (seen.insert(token).second) picked.push_back(token);
            if (static_cast<int>(picked.size()) >= k) break;
        }
        return picked;
    }

    std::vector<std::string> fallback_retrieval(const Graph& dcg, const MemeRecord& target, int k) const {
        const TfidfModel model = fit_node_model(dcg);
        const SparseVector target_vec = model.vectorize(target.text);
        std::vector<std::pair<double, std::string>> ranked;
        for (const auto& [id, node] : dcg.nodes()) {
            const double sim = cosine(target_vec, model.vectorize(contents(node)));
            if (sim > 0.0) ranked.emplace_back(sim, id);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<std::string> picked;
        for (const auto& [sim, id] : ranked) {
            picked.push_back(id);
            if (static_cast<int>(picked.size()) >= k) break;
        }
        return picked;
    }

    PipelineClients clients_;
    PipelineOptions options_;
    std::vector<std::string> warnings_;
};

}  // namespace dcg
