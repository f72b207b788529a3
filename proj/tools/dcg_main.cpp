// Command-line front end for the design-concept-graph pipeline: build the
// fail reason tree, derive and prune the DCG, run guided detection and the
// split evaluations, and inspect stored steps.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcg/dataset.hpp"
#include "dcg/errors.hpp"
#include "dcg/evaluation.hpp"
#include "dcg/gateway.hpp"
#include "dcg/graph_json.hpp"
#include "dcg/http_client.hpp"
#include "dcg/logic.hpp"
#include "dcg/pipeline.hpp"
#include "dcg/pruner.hpp"

namespace {

namespace fs = std::filesystem;

struct RunConfig {
    std::string dataset;
    std::string mode = "scripted";  // scripted | remote
    std::string fixture;            // scripted mode
    std::string gateway;            // remote mode
    std::string output_dir = "out";
    std::string base_prompt;
    int max_iters = 3;
    int k = 5;
    int max_key_points = 5;
    std::string retrieval = "fallback";  // fallback | model
    dcg::PruneParams prune;
    dcg::SplitConfig split;

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw dcg::ConfigError("cannot open config '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw dcg::ConfigError("config '" + path + "': " + e.what());
        }
        RunConfig c;
        c.dataset = j.value("dataset", "");
        c.mode = j.value("mode", c.mode);
        c.fixture = j.value("fixture", "");
        c.gateway = j.value("gateway", "");
        c.output_dir = j.value("output_dir", c.output_dir);
        c.base_prompt = j.value("base_prompt", "");
        c.max_iters = j.value("max_iters", c.max_iters);
        c.k = j.value("k", c.k);
        c.max_key_points = j.value("max_key_points", c.max_key_points);
        c.retrieval = j.value("retrieval", c.retrieval);
        if (j.contains("prune")) c.prune = dcg::PruneParams::from_json(j.at("prune"));
        if (j.contains("split")) c.split = dcg::SplitConfig::from_json(j.at("split"));
        return c;
    }

    void check_clients() const {
        if (mode == "scripted") {
            if (fixture.empty()) throw dcg::ConfigError("scripted mode requires a fixture path");
        } else if (mode == "remote") {
            if (gateway.empty()) throw dcg::ConfigError("remote mode requires a gateway config path");
        } else {
            throw dcg::ConfigError("mode must be 'scripted' or 'remote', got '" + mode + "'");
        }
    }
};

/// Owns the concrete clients behind the pipeline handles.
struct ClientSet {
    std::vector<std::unique_ptr<dcg::CompletionClient>> owned;
    dcg::PipelineClients handles;
    std::unique_ptr<dcg::RequestLog> log = std::make_unique<dcg::RequestLog>();
};

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

ClientSet make_clients(const RunConfig& config, bool want_detectors, bool want_generator, bool want_test) {
    config.check_clients();
    ClientSet set;
    fs::create_directories(config.output_dir);
    std::ostringstream run_id;
    run_id << std::hex << fnv1a(config.mode + "|" + config.dataset + "|" + config.fixture + "|" + config.gateway);
    set.log->open((fs::path(config.output_dir) / "gateway_log.jsonl").string(), run_id.str());

    if (config.mode == "scripted") {
        std::ifstream in(config.fixture, std::ios::binary);
        if (!in) throw dcg::ConfigError("cannot open fixture file '" + config.fixture + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw dcg::ConfigError("fixture file '" + config.fixture + "': " + e.what());
        }
        if (!j.is_object()) throw dcg::ConfigError("fixture file must be a JSON object of slots");
        auto add = [&](const std::string& slot) -> dcg::CompletionClient* {
            if (!j.contains(slot)) return nullptr;
            set.owned.push_back(std::make_unique<dcg::ScriptedClient>(
                slot, dcg::ScriptedClient::load_map(j.at(slot)), set.log.get()));
            return set.owned.back().get();
        };
        for (int i = 1; i <= 5; ++i) {
            if (auto* client = add("detector" + std::to_string(i))) set.handles.detectors.push_back(client);
        }
        set.handles.generator = add("generator");
        set.handles.test_model = add("test");
    } else {
        const auto gateway = dcg::GatewayConfig::from_file(config.gateway);
        for (const auto& endpoint : gateway.detectors) {
            set.owned.push_back(std::make_unique<dcg::HttpClient>(endpoint, set.log.get()));
            set.handles.detectors.push_back(set.owned.back().get());
        }
        if (!gateway.generator.model_id.empty()) {
            set.owned.push_back(std::make_unique<dcg::HttpClient>(gateway.generator, set.log.get()));
            set.handles.generator = set.owned.back().get();
        }
        if (!gateway.test_model.model_id.empty()) {
            set.owned.push_back(std::make_unique<dcg::HttpClient>(gateway.test_model, set.log.get()));
            set.handles.test_model = set.owned.back().get();
        }
    }

    if (want_detectors && set.handles.detectors.size() < 3) {
        throw dcg::ConfigError("this command needs at least 3 detector clients");
    }
    if (want_generator && !set.handles.generator) {
        throw dcg::ConfigError("this command needs a generator client");
    }
    if (want_test && !set.handles.test_model) {
        throw dcg::ConfigError("this command needs a test model client");
    }
    return set;
}

dcg::Pipeline make_pipeline(const RunConfig& config, const ClientSet& set) {
    dcg::PipelineOptions options;
    options.max_iters = config.max_iters;
    options.retrieval_k = config.k;
    options.max_key_points = config.max_key_points;
    options.model_retrieval = config.retrieval == "model";
    return dcg::Pipeline(set.handles, options);
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dcg::StageError("cannot write '" + path.string() + "'");
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& lines) {
    std::string text;
    for (const auto& line : lines) text += line.dump() + "\n";
    write_text(path, text);
}

dcg::PromptSpec load_prompt(const RunConfig& config, const std::string& explicit_path) {
    std::string path = explicit_path;
    if (path.empty()) {
        const fs::path candidate = fs::path(config.output_dir) / "prompt.json";
        if (fs::exists(candidate)) path = candidate.string();
    }
    dcg::PromptSpec prompt;
    if (!config.base_prompt.empty()) prompt.base_text = config.base_prompt;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw dcg::ConfigError("cannot open prompt '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw dcg::ConfigError("prompt '" + path + "': " + e.what());
        }
        prompt = dcg::PromptSpec::from_json(j);
    }
    return prompt;
}

int count_kind(const dcg::Graph& g, dcg::NodeKind kind) {
    int n = 0;
    for (const auto& [id, node] : g.nodes()) {
        if (dcg::kind_of(node) == kind) ++n;
    }
    return n;
}

int cmd_build_tree(const RunConfig& config) {
    if (config.dataset.empty()) throw dcg::ConfigError("build-tree requires a dataset");
    const auto memes = dcg::load_dataset(config.dataset);
    auto clients = make_clients(config, true, true, false);
    auto pipeline = make_pipeline(config, clients);

    dcg::PromptSpec prompt;
    if (!config.base_prompt.empty()) prompt.base_text = config.base_prompt;
    const auto result = pipeline.build_fail_tree_loop(memes, prompt);

    const fs::path out(config.output_dir);
    dcg::save_graph(result.tree, (out / "tree.dcg.json").string());
    write_json(out / "prompt.json", result.prompt.to_json());
    write_json(out / "fail_set.json", result.final_fail_set.to_json());
    for (const auto& w : pipeline.warnings()) std::cerr << "warning: " << w << "\n";

    std::cout << "fail tree: " << count_kind(result.tree, dcg::NodeKind::FailReason) << " reason node(s), "
              << count_kind(result.tree, dcg::NodeKind::Type) << " type node(s), prompt v"
              << result.prompt.version << " after " << result.iterations << " iteration(s)\n";
    return 0;
}

int cmd_build_dcg(const RunConfig& config, const std::string& tree_path) {
    const std::string path =
        tree_path.empty() ? (fs::path(config.output_dir) / "tree.dcg.json").string() : tree_path;
    const dcg::Graph tree = dcg::load_graph(path);
    auto clients = make_clients(config, false, true, false);
    auto pipeline = make_pipeline(config, clients);

    const dcg::Graph dcg_graph = pipeline.derive_dcg(tree);
    const fs::path out(config.output_dir);
    dcg::save_graph(dcg_graph, (out / "dcg.dcg.json").string());
    for (const auto& w : pipeline.warnings()) std::cerr << "warning: " << w << "\n";

    int steps = 0;
    for (const auto& component : dcg_graph.reproduction_components()) {
        for (const auto& id : component) {
            if (dcg::kind_of(dcg_graph.node(id)) == dcg::NodeKind::Method) {
                ++steps;
                break;
            }
        }
    }
    std::cout << "dcg: " << steps << " step(s), " << dcg_graph.node_count() << " node(s), "
              << dcg_graph.edge_count() << " edge(s)\n";
    return 0;
}

int cmd_prune(const RunConfig& config, const std::string& in_path) {
    if (in_path.empty()) throw dcg::ConfigError("prune requires --in");
    const dcg::Graph graph = dcg::load_graph(in_path);
    if (graph.empty()) throw dcg::StageError("cannot prune an empty graph");

    const dcg::TfidfModel model = dcg::fit_node_model(graph);
    const auto result = dcg::prune(graph, model, config.prune);

    const fs::path out(config.output_dir);
    dcg::save_graph(result.graph, (out / "pruned.dcg.json").string());
    write_json(out / "prune_report.json", result.report.to_json());

    const std::size_t total = graph.node_count();
    std::cout << "pruned: retained " << result.graph.node_count() << "/" << total << " node(s) (cut "
              << result.report.cut << "/" << total << ") in " << result.report.iterations
              << " iteration(s), " << result.report.merged.size() << " merge(s)\n";
    return 0;
}

int cmd_detect(const RunConfig& config, const std::string& in_path, const std::string& meme_id,
               const std::string& prompt_path) {
    if (config.dataset.empty()) throw dcg::ConfigError("detect requires a dataset");
    if (in_path.empty()) throw dcg::ConfigError("detect requires --in (a DCG file)");
    const dcg::Graph dcg_graph = dcg::load_graph(in_path);
    const auto memes = dcg::load_dataset(config.dataset);
    auto clients = make_clients(config, false, false, true);
    auto pipeline = make_pipeline(config, clients);
    const dcg::PromptSpec prompt = load_prompt(config, prompt_path);

    std::vector<nlohmann::json> verdict_lines;
    std::vector<nlohmann::json> guidance_lines;
    int harmful = 0;
    int detected = 0;
    for (const auto& meme : memes) {
        if (!meme_id.empty() && meme.id != meme_id) continue;
        const auto result = pipeline.detect(meme, dcg_graph, prompt, config.k);
        verdict_lines.push_back(result.verdict.to_json());
        guidance_lines.push_back(result.package.to_json());
        harmful += result.verdict.harmful ? 1 : 0;
        ++detected;
    }
    if (!meme_id.empty() && detected == 0) {
        throw dcg::ConfigError("meme '" + meme_id + "' is not in the dataset");
    }

    const fs::path out(config.output_dir);
    write_jsonl(out / "verdicts.jsonl", verdict_lines);
    write_jsonl(out / "guidance.jsonl", guidance_lines);
    for (const auto& w : pipeline.warnings()) std::cerr << "warning: " << w << "\n";

    std::cout << "detected " << detected << " meme(s), " << harmful << " judged harmful\n";
    return 0;
}

int cmd_eval(const RunConfig& config, const std::string& regime_flag) {
    if (config.dataset.empty()) throw dcg::ConfigError("eval requires a dataset");
    const auto memes = dcg::load_dataset(config.dataset);
    auto clients = make_clients(config, true, true, true);
    auto pipeline = make_pipeline(config, clients);

    dcg::SplitConfig split = config.split;
    if (!regime_flag.empty()) split.regime = dcg::regime_from_string(regime_flag);

    dcg::PromptSpec prompt;
    if (!config.base_prompt.empty()) prompt.base_text = config.base_prompt;
    const auto result = dcg::run_split(memes, split, pipeline, prompt, config.prune, config.k);

    const fs::path out(config.output_dir);
    write_json(out / "eval_report.json", result.to_json());
    std::string table = result.guided.to_table();
    table += "\nbaseline (plain prompt):\n" + result.baseline.to_table();
    write_text(out / "eval_report.txt", table);
    for (const auto& w : pipeline.warnings()) std::cerr << "warning: " << w << "\n";

    std::cout << dcg::to_string(split.regime) << ": accuracy " << result.guided.accuracy() << ", f1 "
              << result.guided.f1() << " (baseline " << result.baseline.accuracy() << "/"
              << result.baseline.f1() << ")\n";
    return 0;
}

int cmd_inspect(const std::string& in_path, const std::string& step_ref) {
    if (in_path.empty()) throw dcg::ConfigError("inspect requires --in");
    const dcg::Graph graph = dcg::load_graph(in_path);

    std::vector<std::string> all_nodes;
    for (const auto& [id, node] : graph.nodes()) all_nodes.push_back(id);
    auto steps = graph.step_subgraphs(all_nodes);
    std::sort(steps.begin(), steps.end(), [](const auto& a, const auto& b) { return a.nodes < b.nodes; });

    if (steps.empty()) {
        std::cout << "no reproduction steps\n";
        return 0;
    }

    std::vector<std::size_t> selected;
    if (step_ref.empty()) {
        for (std::size_t i = 0; i < steps.size(); ++i) selected.push_back(i);
    } else if (step_ref.size() >= 2 && step_ref.front() == 's' &&
               std::all_of(step_ref.begin() + 1, step_ref.end(),
                           [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) &&
               !graph.has_node(step_ref)) {
        const std::size_t index = std::stoul(step_ref.substr(1));
        if (index < 1 || index > steps.size()) {
            throw dcg::ConfigError("step index '" + step_ref + "' out of range (1.." +
                                   std::to_string(steps.size()) + ")");
        }
        selected.push_back(index - 1);
    } else {
        bool found = false;
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (steps[i].contains(step_ref)) {
                selected.push_back(i);
                found = true;
                break;
            }
        }
        if (!found) throw dcg::ConfigError("no step contains node '" + step_ref + "'");
    }

    for (std::size_t index : selected) {
        const auto& step = steps[index];
        std::cout << "step s" << (index + 1) << ": " << dcg::to_logic_expression(graph, step).to_string()
                  << "\n";
        std::cout << dcg::render_guidance_text(graph, step);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"design concept graph toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string in_path;
    std::string out_dir;
    std::string mode;
    std::string fixture;
    std::string meme_id;
    std::string regime;
    std::string tree_path;
    std::string prompt_path;
    std::string step_ref;
    double theta = -1.0;
    double alpha = -1.0;
    double beta = -1.0;
    int k = -1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run config JSON");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--mode", mode, "scripted or remote");
        cmd->add_option("--fixture", fixture, "scripted fixture file");
        cmd->add_option("--k", k, "retrieval depth");
        cmd->add_option("--theta", theta, "retained proportion");
        cmd->add_option("--alpha", alpha, "reproduction block scale");
        cmd->add_option("--beta", beta, "cross block scale");
    };

    CLI::App* build_tree = app.add_subcommand("build-tree", "run the fail reason tree loop");
    add_common(build_tree);
    CLI::App* build_dcg = app.add_subcommand("build-dcg", "derive the DCG from a fail reason tree");
    add_common(build_dcg);
    build_dcg->add_option("--tree", tree_path, "tree file (default <out>/tree.dcg.json)");
    CLI::App* prune_cmd = app.add_subcommand("prune", "SVD-prune a DCG");
    add_common(prune_cmd);
    prune_cmd->add_option("--in", in_path, "input graph");
    CLI::App* detect = app.add_subcommand("detect", "DCG-guided detection");
    add_common(detect);
    detect->add_option("--in", in_path, "pruned DCG");
    detect->add_option("--meme", meme_id, "detect a single meme id");
    detect->add_option("--prompt", prompt_path, "prompt spec JSON");
    CLI::App* eval = app.add_subcommand("eval", "run a split regime evaluation");
    add_common(eval);
    eval->add_option("--regime", regime, "ID, OOD, TF or TE");
    CLI::App* inspect = app.add_subcommand("inspect", "print a step's logic expression and prose");
    inspect->add_option("--in", in_path, "graph file");
    inspect->add_option("--step", step_ref, "step index (s1) or a node id");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig config;
        if (!config_path.empty()) config = RunConfig::from_file(config_path);
        if (!out_dir.empty()) config.output_dir = out_dir;
        if (!mode.empty()) config.mode = mode;
        if (!fixture.empty()) config.fixture = fixture;
        if (k >= 0) config.k = k;
        if (theta >= 0.0) config.prune.theta = theta;
        if (alpha >= 0.0) config.prune.alpha = alpha;
        if (beta >= 0.0) config.prune.beta = beta;
        config.prune.check();

        if (app.got_subcommand(build_tree)) return cmd_build_tree(config);
        if (app.got_subcommand(build_dcg)) return cmd_build_dcg(config, tree_path);
        if (app.got_subcommand(prune_cmd)) return cmd_prune(config, in_path);
        if (app.got_subcommand(detect)) return cmd_detect(config, in_path, meme_id, prompt_path);
        if (app.got_subcommand(eval)) return cmd_eval(config, regime);
        if (app.got_subcommand(inspect)) return cmd_inspect(in_path, step_ref);
    } catch (const dcg::ConfigError& e) {
        std::cerr << nlohmann::json{{"error", e.code()}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const dcg::Error& e) {
        std::cerr << nlohmann::json{{"error", e.code()}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
        return 3;
    }
    return 0;
}
