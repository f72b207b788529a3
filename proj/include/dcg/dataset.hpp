#pragma once

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dcg/errors.hpp"

namespace dcg {

inline const std::array<std::string_view, 5>& harm_types() {
    static const std::array<std::string_view, 5> kinds = {"Misogyny", "Offensiveness", "Racism",
                                                          "Sarcasm", "Toxicity"};
    return kinds;
}

/// One meme as ingested from the dataset JSONL.
struct MemeRecord {
    std::string id;
    std::string text;                // caption / description
    std::string image_ref;           // optional path or URL
    std::optional<bool> gold_label;  // present for historical memes
    std::string harm_type;           // optional, one of harm_types()
    std::string quarter;             // optional temporal tag
    std::string role;                // optional split marker: "dcg" or "target"

    static MemeRecord from_json(const nlohmann::json& j) {
        MemeRecord r;
        if (!j.contains("id") || !j.at("id").is_string()) throw ParseError("meme record requires a string id");
        r.id = j.at("id").get<std::string>();
        if (!j.contains("text") || !j.at("text").is_string()) {
            throw ParseError("meme '" + r.id + "' requires a text field");
        }
        r.text = j.at("text").get<std::string>();
        r.image_ref = j.value("image_ref", "");
        if (j.contains("gold_label")) {
            if (!j.at("gold_label").is_boolean()) {
                throw ParseError("meme '" + r.id + "': gold_label must be a boolean");
            }
            r.gold_label = j.at("gold_label").get<bool>();
        }
        r.harm_type = j.value("harm_type", "");
        if (!r.harm_type.empty()) {
            bool known = false;
            for (std::string_view t : harm_types()) known = known || t == r.harm_type;
            if (!known) throw ParseError("meme '" + r.id + "': unknown harm_type '" + r.harm_type + "'");
        }
        r.quarter = j.value("quarter", "");
        r.role = j.value("role", "");
        if (!r.role.empty() && r.role != "dcg" && r.role != "target") {
            throw ParseError("meme '" + r.id + "': role must be 'dcg' or 'target'");
        }
        return r;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"id", id}, {"text", text}};
        if (!image_ref.empty()) j["image_ref"] = image_ref;
        if (gold_label) j["gold_label"] = *gold_label;
        if (!harm_type.empty()) j["harm_type"] = harm_type;
        if (!quarter.empty()) j["quarter"] = quarter;
        if (!role.empty()) j["role"] = role;
        return j;
    }
};

/// Loads a JSONL dataset, one record per line. Ids must be unique.
inline std::vector<MemeRecord> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open dataset '" + path + "'");
    std::vector<MemeRecord> records;
    std::map<std::string, bool> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
        MemeRecord r = MemeRecord::from_json(j);
        if (seen.count(r.id)) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": duplicate meme id '" + r.id + "'");
        }
        seen[r.id] = true;
        records.push_back(std::move(r));
    }
    return records;
}

inline std::map<std::string, MemeRecord> index_by_id(const std::vector<MemeRecord>& records) {
    std::map<std::string, MemeRecord> out;
    for (const auto& r : records) out.emplace(r.id, r);
    return out;
}

}  // namespace dcg
