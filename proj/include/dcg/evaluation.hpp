#pragma once

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcg/dataset.hpp"
#include "dcg/errors.hpp"
#include "dcg/gateway.hpp"
#include "dcg/graph.hpp"
#include "dcg/graph_json.hpp"
#include "dcg/pipeline.hpp"
#include "dcg/pruner.hpp"

namespace dcg {

struct LabeledExample {
    std::string meme_id;
    bool gold = false;
    std::string harm_type;  // optional, feeds the per-type breakdown
};

struct ConfusionCounts {
    int tp = 0;
    int fp = 0;
    int tn = 0;
    int fn = 0;

    int total() const { return tp + fp + tn + fn; }

    double accuracy() const {
        const int t = total();
        return t == 0 ? 0.0 : static_cast<double>(tp + tn) / t;
    }

    /// Binary F1 on the harmful class; 0 by convention when TP+FP or TP+FN
    /// is empty.
    double f1() const {
        if (tp + fp == 0 || tp + fn == 0) return 0.0;
        const double precision = static_cast<double>(tp) / (tp + fp);
        const double recall = static_cast<double>(tp) / (tp + fn);
        if (precision + recall == 0.0) return 0.0;
        return 2.0 * precision * recall / (precision + recall);
    }

    nlohmann::json to_json() const {
        return {{"tp", tp},       {"fp", fp},
                {"tn", tn},       {"fn", fn},
                {"accuracy", accuracy()}, {"f1", f1()}};
    }
};

struct EvalReport {
    ConfusionCounts counts;
    std::map<std::string, ConfusionCounts> per_type;
    std::string regime;
    int prompt_version = 0;
    std::string dcg_id;

    double accuracy() const { return counts.accuracy(); }
    double f1() const { return counts.f1(); }

    nlohmann::json to_json() const {
        nlohmann::json types = nlohmann::json::object();
        for (const auto& [type, c] : per_type) types[type] = c.to_json();
        nlohmann::json j = counts.to_json();
        j["per_type"] = std::move(types);
        j["regime"] = regime;
        j["prompt_version"] = prompt_version;
        j["dcg_id"] = dcg_id;
        return j;
    }

    /// Aligned plain-text table.
    std::string to_table() const {
        std::ostringstream out;
        out << std::left << std::setw(16) << "type" << std::right << std::setw(6) << "tp" << std::setw(6)
            << "fp" << std::setw(6) << "tn" << std::setw(6) << "fn" << std::setw(10) << "acc"
            << std::setw(10) << "f1" << "\n";
        auto row = [&](const std::string& name, const ConfusionCounts& c) {
            out << std::left << std::setw(16) << name << std::right << std::setw(6) << c.tp << std::setw(6)
                << c.fp << std::setw(6) << c.tn << std::setw(6) << c.fn << std::setw(10) << std::fixed
                << std::setprecision(4) << c.accuracy() << std::setw(10) << c.f1() << "\n";
        };
        for (const auto& [type, c] : per_type) row(type, c);
        row("overall", counts);
        return out.str();
    }
};

/// Exact confusion-matrix metrics over aligned (prediction, gold) pairs.
inline EvalReport score(const std::vector<Verdict>& predictions, const std::vector<LabeledExample>& gold) {
    if (predictions.size() != gold.size()) {
        throw LengthMismatchError("got " + std::to_string(predictions.size()) + " predictions for " +
                                  std::to_string(gold.size()) + " gold labels");
    }
    EvalReport report;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].meme_id != gold[i].meme_id) {
            throw IdMismatchError("position " + std::to_string(i) + ": prediction '" +
                                  predictions[i].meme_id + "' vs gold '" + gold[i].meme_id + "'");
        }
        auto tally = [&](ConfusionCounts& c) {
            if (predictions[i].harmful && gold[i].gold) ++c.tp;
            else if (predictions[i].harmful && !gold[i].gold) ++c.fp;
            else if (!predictions[i].harmful && gold[i].gold) ++c.fn;
            else ++c.tn;
        };
        tally(report.counts);
        if (!gold[i].harm_type.empty()) tally(report.per_type[gold[i].harm_type]);
        if (!predictions.empty()) report.prompt_version = predictions[i].prompt_version;
    }
    return report;
}

enum class Regime { ID, OOD, TF, TE };

inline std::string to_string(Regime r) {
    switch (r) {
        case Regime::ID: return "ID";
        case Regime::OOD: return "OOD";
        case Regime::TF: return "TF";
        case Regime::TE: return "TE";
    }
    return "ID";
}

inline Regime regime_from_string(const std::string& text) {
    if (text == "ID") return Regime::ID;
    if (text == "OOD") return Regime::OOD;
    if (text == "TF") return Regime::TF;
    if (text == "TE") return Regime::TE;
    throw ConfigError("unknown regime '" + text + "' (expected ID, OOD, TF or TE)");
}

/// Sortable rank of a quarter tag. Recognizes a leading month name
/// ("Jul-Sep") or a trailing quarter digit ("Q3", "2025Q3"); anything else
/// orders lexicographically behind the recognized forms.
inline std::pair<int, std::string> quarter_rank(const std::string& tag) {
    static const std::map<std::string, int> months = {
        {"jan", 1}, {"feb", 1}, {"mar", 1}, {"apr", 2}, {"may", 2}, {"jun", 2},
        {"jul", 3}, {"aug", 3}, {"sep", 3}, {"oct", 4}, {"nov", 4}, {"dec", 4}};
    std::string head;
    for (char c : tag) {
        if (!std::isalpha(static_cast<unsigned char>(c))) break;
        head.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        if (head.size() == 3) break;
    }
    if (auto it = months.find(head); it != months.end()) return {it->second, tag};
    if (!tag.empty() && tag.front() == 'Q' && tag.size() >= 2 &&
        std::isdigit(static_cast<unsigned char>(tag[1]))) {
        return {tag[1] - '0', tag};
    }
    if (tag.size() >= 2 && std::isdigit(static_cast<unsigned char>(tag.back())) &&
        (tag[tag.size() - 2] == 'Q' || tag[tag.size() - 2] == 'q')) {
        return {tag.back() - '0', tag};
    }
    return {1000, tag};  // unrecognized tags compare lexicographically after all quarters
}

inline bool quarter_precedes(const std::string& a, const std::string& b) {
    return quarter_rank(a) < quarter_rank(b);
}

/// Which slice of the dataset builds the DCG and which slice is judged.
struct SplitConfig {
    Regime regime = Regime::ID;
    std::vector<std::string> dcg_types;  // harm types for ID/OOD
    std::string target_type;
    std::string dcg_quarter;  // quarter tags for TF/TE
    std::string target_quarter;

    void check() const {
        switch (regime) {
            case Regime::ID: {
                if (target_type.empty()) throw InvalidSplitError("ID regime requires a target type");
                for (const auto& t : dcg_types) {
                    if (t != target_type) {
                        throw InvalidSplitError("ID regime requires dcg and target types to match");
                    }
                }
                break;
            }
            case Regime::OOD: {
                if (target_type.empty()) throw InvalidSplitError("OOD regime requires a target type");
                if (dcg_types.empty()) throw InvalidSplitError("OOD regime requires dcg source types");
                for (const auto& t : dcg_types) {
                    if (t == target_type) {
                        throw InvalidSplitError("OOD regime forbids the target type '" + target_type +
                                                "' in the dcg sources");
                    }
                }
                break;
            }
            case Regime::TF: {
                if (target_quarter.empty()) throw InvalidSplitError("TF regime requires a target quarter");
                if (!dcg_quarter.empty() && dcg_quarter != target_quarter) {
                    throw InvalidSplitError("TF regime requires dcg and target quarters to match");
                }
                break;
            }
            case Regime::TE: {
                if (dcg_quarter.empty() || target_quarter.empty()) {
                    throw InvalidSplitError("TE regime requires dcg and target quarters");
                }
                if (!quarter_precedes(dcg_quarter, target_quarter)) {
                    throw InvalidSplitError("TE regime requires the dcg quarter '" + dcg_quarter +
                                            "' to strictly precede the target quarter '" + target_quarter +
                                            "'");
                }
                break;
            }
        }
    }

    static SplitConfig from_json(const nlohmann::json& j) {
        SplitConfig c;
        c.regime = regime_from_string(j.value("regime", "ID"));
        c.dcg_types = j.value("dcg_types", std::vector<std::string>{});
        c.target_type = j.value("target_type", "");
        c.dcg_quarter = j.value("dcg_quarter", "");
        c.target_quarter = j.value("target_quarter", "");
        return c;
    }
};

struct RunSplitResult {
    EvalReport guided;
    EvalReport baseline;  // plain optimized prompt, no DCG guidance
    Graph dcg;
    PromptSpec prompt;
    std::vector<Verdict> guided_verdicts;
    std::vector<Verdict> baseline_verdicts;
    std::vector<GuidancePackage> packages;

    nlohmann::json delta() const {
        return {{"accuracy", guided.accuracy() - baseline.accuracy()},
                {"f1", guided.f1() - baseline.f1()}};
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["report"] = guided.to_json();
        j["baseline"] = baseline.to_json();
        j["delta"] = delta();
        return j;
    }
};

/// Signed metric difference between two runs, first minus second — the
/// table convention for rows like delta(OOD, ID).
inline nlohmann::json report_delta(const EvalReport& a, const EvalReport& b) {
    return {{"accuracy", a.accuracy() - b.accuracy()}, {"f1", a.f1() - b.f1()}};
}

/// 64-bit FNV-1a over the canonical graph serialization, as a stable DCG id.
inline std::string content_id(const Graph& graph) {
    const std::string text = graph_to_string(graph);
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << hash;
    return out.str();
}

struct SplitSelection {
    std::vector<MemeRecord> source;   // builds the DCG
    std::vector<MemeRecord> targets;  // gets detected
};

/// Applies the regime filters; the optional role field mirrors the
/// dataset's DCG/target partition.
inline SplitSelection split_dataset(const std::vector<MemeRecord>& dataset, const SplitConfig& config) {
    config.check();

    auto matches_source = [&](const MemeRecord& m) {
        if (m.role == "target") return false;
        switch (config.regime) {
            case Regime::ID: return m.harm_type == config.target_type;
            case Regime::OOD: {
                for (const auto& t : config.dcg_types) {
                    if (m.harm_type == t) return true;
                }
                return false;
            }
            case Regime::TF: return !m.quarter.empty() && m.quarter == config.target_quarter;
            case Regime::TE: return !m.quarter.empty() && m.quarter == config.dcg_quarter;
        }
        return false;
    };
    auto matches_target = [&](const MemeRecord& m) {
        if (m.role == "dcg") return false;
        switch (config.regime) {
            case Regime::ID:
            case Regime::OOD: return m.harm_type == config.target_type;
            case Regime::TF:
            case Regime::TE: return !m.quarter.empty() && m.quarter == config.target_quarter;
        }
        return false;
    };

    SplitSelection selection;
    for (const auto& m : dataset) {
        if (matches_source(m)) selection.source.push_back(m);
        if (matches_target(m)) selection.targets.push_back(m);
    }
    if (selection.source.empty()) throw InvalidSplitError("no dataset records match the dcg source filter");
    if (selection.targets.empty()) throw InvalidSplitError("no dataset records match the target filter");
    return selection;
}

/// Builds the DCG from the source slice, detects the target slice with and
/// without guidance, and reports both plus their delta.
inline RunSplitResult run_split(const std::vector<MemeRecord>& dataset, const SplitConfig& config,
                                Pipeline& pipeline, const PromptSpec& base_prompt, const PruneParams& params,
                                int k) {
    auto [source, targets] = split_dataset(dataset, config);

    RunSplitResult result;
    LoopResult loop = pipeline.build_fail_tree_loop(source, base_prompt);
    result.prompt = loop.prompt;

    Graph dcg = pipeline.derive_dcg(loop.tree);
    if (!dcg.empty()) {
        const TfidfModel model = fit_node_model(dcg);
        result.dcg = prune(dcg, model, params).graph;
    }

    std::vector<LabeledExample> gold;
    const Graph empty_dcg;
    for (const auto& target : targets) {
        if (!target.gold_label) {
            throw InvalidSplitError("target meme '" + target.id + "' has no gold label");
        }
        gold.push_back(LabeledExample{target.id, *target.gold_label, target.harm_type});

        DetectResult guided = pipeline.detect(target, result.dcg, loop.prompt, k);
        result.guided_verdicts.push_back(guided.verdict);
        result.packages.push_back(guided.package);

        DetectResult plain = pipeline.detect(target, empty_dcg, loop.prompt, k);
        result.baseline_verdicts.push_back(plain.verdict);
    }

    result.guided = score(result.guided_verdicts, gold);
    result.baseline = score(result.baseline_verdicts, gold);
    result.guided.regime = to_string(config.regime);
    result.baseline.regime = to_string(config.regime);
    result.guided.prompt_version = loop.prompt.version;
    result.baseline.prompt_version = loop.prompt.version;
    const std::string dcg_id = result.dcg.empty() ? "empty" : content_id(result.dcg);
    result.guided.dcg_id = dcg_id;
    result.baseline.dcg_id = dcg_id;
    return result;
}

}  // namespace dcg
