#include <catch2/catch.hpp>

#include <algorithm>
#include <random>

#include "dcg/evaluation.hpp"
#include "support/rig.hpp"

using namespace dcg;
using testsupport::fixture_path;
using testsupport::ScriptedRig;

namespace {

std::vector<Verdict> verdicts_from(const std::vector<std::pair<std::string, bool>>& entries) {
    std::vector<Verdict> out;
    for (const auto& [id, harmful] : entries) out.push_back(Verdict{id, harmful, "", "test", 1});
    return out;
}

}  // namespace

TEST_CASE("score computes the closed-form metrics") {
    // TP=3, FP=1, FN=1, TN=5
    std::vector<Verdict> preds;
    std::vector<LabeledExample> gold;
    auto push = [&](bool pred, bool truth) {
        const std::string id = "m" + std::to_string(gold.size());
        preds.push_back(Verdict{id, pred, "", "test", 1});
        gold.push_back(LabeledExample{id, truth, ""});
    };
    for (int i = 0; i < 3; ++i) push(true, true);
    push(true, false);
    push(false, true);
    for (int i = 0; i < 5; ++i) push(false, false);

    const auto report = score(preds, gold);
    CHECK(report.counts.tp == 3);
    CHECK(report.counts.fp == 1);
    CHECK(report.counts.fn == 1);
    CHECK(report.counts.tn == 5);
    CHECK(report.accuracy() == Approx(0.8));
    CHECK(report.f1() == Approx(0.75));
}

TEST_CASE("a perfect run scores one on both metrics") {
    const auto preds = verdicts_from({{"a", true}, {"b", false}});
    const std::vector<LabeledExample> gold{{"a", true, ""}, {"b", false, ""}};
    const auto report = score(preds, gold);
    CHECK(report.accuracy() == 1.0);
    CHECK(report.f1() == 1.0);
}

TEST_CASE("f1 is zero by convention without positive predictions") {
    const auto preds = verdicts_from({{"a", false}, {"b", false}});
    const std::vector<LabeledExample> gold{{"a", true, ""}, {"b", true, ""}};
    const auto report = score(preds, gold);
    CHECK(report.f1() == 0.0);
    CHECK(report.accuracy() == 0.0);
}

TEST_CASE("score validates alignment") {
    const auto preds = verdicts_from({{"a", true}});
    CHECK_THROWS_AS(score(preds, {}), LengthMismatchError);
    const std::vector<LabeledExample> wrong{{"b", true, ""}};
    CHECK_THROWS_AS(score(preds, wrong), IdMismatchError);
}

TEST_CASE("score is permutation invariant over aligned pairs") {
    std::vector<Verdict> preds = verdicts_from({{"a", true}, {"b", false}, {"c", true}, {"d", false}});
    std::vector<LabeledExample> gold{{"a", true, ""}, {"b", true, ""}, {"c", false, ""}, {"d", false, ""}};
    const auto before = score(preds, gold).to_json();

    std::mt19937 rng(5);
    std::vector<std::size_t> order{0, 1, 2, 3};
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Verdict> shuffled_preds;
    std::vector<LabeledExample> shuffled_gold;
    for (auto i : order) {
        shuffled_preds.push_back(preds[i]);
        shuffled_gold.push_back(gold[i]);
    }
    CHECK(score(shuffled_preds, shuffled_gold).to_json() == before);
}

TEST_CASE("per-type breakdown follows the gold types") {
    std::vector<Verdict> preds = verdicts_from({{"a", true}, {"b", false}});
    std::vector<LabeledExample> gold{{"a", true, "Racism"}, {"b", true, "Sarcasm"}};
    const auto report = score(preds, gold);
    CHECK(report.per_type.at("Racism").tp == 1);
    CHECK(report.per_type.at("Sarcasm").fn == 1);
}

TEST_CASE("quarter ordering understands month ranges and quarter digits") {
    CHECK(quarter_precedes("Jan-Apr", "Apr-Jun"));
    CHECK(quarter_precedes("Apr-Jun", "Jul-Sep"));
    CHECK(quarter_precedes("Jul-Sep", "Oct-Dec"));
    CHECK_FALSE(quarter_precedes("Jul-Sep", "Apr-Jun"));
    CHECK(quarter_precedes("2025Q1", "2025Q2"));
    CHECK_FALSE(quarter_precedes("2025Q2", "2025Q2"));
}

TEST_CASE("split guards reject illegal filter combinations") {
    SplitConfig ood;
    ood.regime = Regime::OOD;
    ood.target_type = "Racism";
    ood.dcg_types = {"Misogyny", "Racism"};
    CHECK_THROWS_AS(ood.check(), InvalidSplitError);
    ood.dcg_types = {"Misogyny", "Sarcasm", "Offensiveness", "Toxicity"};
    CHECK_NOTHROW(ood.check());

    SplitConfig te;
    te.regime = Regime::TE;
    te.dcg_quarter = "Jul-Sep";
    te.target_quarter = "Apr-Jun";
    CHECK_THROWS_AS(te.check(), InvalidSplitError);
    te.dcg_quarter = "Apr-Jun";
    te.target_quarter = "Jul-Sep";
    CHECK_NOTHROW(te.check());

    SplitConfig tf;
    tf.regime = Regime::TF;
    tf.target_quarter = "2025Q1";
    tf.dcg_quarter = "2025Q3";
    CHECK_THROWS_AS(tf.check(), InvalidSplitError);

    SplitConfig id;
    id.regime = Regime::ID;
    id.target_type = "Racism";
    id.dcg_types = {"Sarcasm"};
    CHECK_THROWS_AS(id.check(), InvalidSplitError);
}

TEST_CASE("run_split reproduces a hand-tallied confusion matrix in the ID regime") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const auto dataset = load_dataset(fixture_path("eval_memes.jsonl"));

    SplitConfig config;
    config.regime = Regime::ID;
    config.target_type = "Racism";

    const auto result = run_split(dataset, config, pipeline, PromptSpec{}, PruneParams{}, 5);

    // hand tally over the scripted fixture:
    //   guided: t01-t04 harmful (TP=4), t05/t06 harmless (FN=2),
    //           t07 harmful (FP=1), t08-t10 harmless (TN=3)
    CHECK(result.guided.counts.tp == 4);
    CHECK(result.guided.counts.fn == 2);
    CHECK(result.guided.counts.fp == 1);
    CHECK(result.guided.counts.tn == 3);
    CHECK(result.guided.accuracy() == Approx(0.7));
    CHECK(result.guided.f1() == Approx(2.0 * 0.8 * (4.0 / 6.0) / (0.8 + 4.0 / 6.0)));

    // baseline plain prompt answers harmless everywhere
    CHECK(result.baseline.counts.tp == 0);
    CHECK(result.baseline.counts.tn == 4);
    CHECK(result.baseline.counts.fn == 6);
    CHECK(result.baseline.accuracy() == Approx(0.4));
    CHECK(result.baseline.f1() == 0.0);

    CHECK(result.delta().at("accuracy").get<double>() == Approx(0.3));
    CHECK(result.guided.regime == "ID");
    CHECK(result.guided.prompt_version == 2);
    CHECK_FALSE(result.guided.dcg_id.empty());
    CHECK(result.guided.per_type.at("Racism").tp == 4);
}

TEST_CASE("split selection respects regimes and role markers") {
    auto meme = [](const std::string& id, const std::string& type, const std::string& quarter,
                   const std::string& role) {
        MemeRecord m;
        m.id = id;
        m.text = "text";
        m.gold_label = true;
        m.harm_type = type;
        m.quarter = quarter;
        m.role = role;
        return m;
    };
    const std::vector<MemeRecord> dataset{
        meme("r1", "Racism", "2025Q1", ""),       meme("r2", "Racism", "2025Q2", "target"),
        meme("s1", "Sarcasm", "2025Q1", ""),      meme("s2", "Sarcasm", "2025Q2", ""),
        meme("x1", "Misogyny", "2025Q1", "dcg"),  meme("x2", "Toxicity", "2025Q2", ""),
    };
    auto ids = [](const std::vector<MemeRecord>& memes) {
        std::vector<std::string> out;
        for (const auto& m : memes) out.push_back(m.id);
        return out;
    };

    SplitConfig ood;
    ood.regime = Regime::OOD;
    ood.target_type = "Racism";
    ood.dcg_types = {"Sarcasm", "Misogyny", "Toxicity"};
    const auto ood_split = split_dataset(dataset, ood);
    CHECK(ids(ood_split.source) == std::vector<std::string>{"s1", "s2", "x1", "x2"});
    CHECK(ids(ood_split.targets) == std::vector<std::string>{"r1", "r2"});

    SplitConfig id_config;
    id_config.regime = Regime::ID;
    id_config.target_type = "Racism";
    const auto id_split = split_dataset(dataset, id_config);
    CHECK(ids(id_split.source) == std::vector<std::string>{"r1"});  // role=target excluded
    CHECK(ids(id_split.targets) == std::vector<std::string>{"r1", "r2"});

    SplitConfig te;
    te.regime = Regime::TE;
    te.dcg_quarter = "2025Q1";
    te.target_quarter = "2025Q2";
    const auto te_split = split_dataset(dataset, te);
    CHECK(ids(te_split.source) == std::vector<std::string>{"r1", "s1", "x1"});
    CHECK(ids(te_split.targets) == std::vector<std::string>{"r2", "s2", "x2"});

    SplitConfig tf;
    tf.regime = Regime::TF;
    tf.target_quarter = "2025Q1";
    const auto tf_split = split_dataset(dataset, tf);
    CHECK(ids(tf_split.source) == std::vector<std::string>{"r1", "s1", "x1"});
    CHECK(ids(tf_split.targets) == std::vector<std::string>{"r1", "s1"});
}

TEST_CASE("run_split rejects filters that match nothing") {
    ScriptedRig rig(fixture_path("pipeline_fixture.json"));
    Pipeline pipeline(rig.handles, testsupport::default_options());
    const auto dataset = load_dataset(fixture_path("eval_memes.jsonl"));
    SplitConfig config;
    config.regime = Regime::ID;
    config.target_type = "Misogyny";
    CHECK_THROWS_AS(run_split(dataset, config, pipeline, PromptSpec{}, PruneParams{}, 5),
                    InvalidSplitError);
}

TEST_CASE("cross-regime deltas are signed first minus second") {
    EvalReport ood;
    ood.counts = {3, 1, 4, 2};  // accuracy 0.7
    EvalReport id;
    id.counts = {4, 1, 4, 1};   // accuracy 0.8
    const auto delta = report_delta(ood, id);
    CHECK(delta.at("accuracy").get<double>() == Approx(-0.1));
    CHECK(report_delta(id, ood).at("accuracy").get<double>() == Approx(0.1));
}

TEST_CASE("eval reports serialize with a table rendering") {
    EvalReport report;
    report.counts = {3, 1, 5, 1};
    report.per_type["Racism"] = {3, 1, 5, 1};
    report.regime = "ID";
    const auto table = report.to_table();
    CHECK(table.find("overall") != std::string::npos);
    CHECK(table.find("Racism") != std::string::npos);
    const auto j = report.to_json();
    CHECK(j.at("accuracy").get<double>() == Approx(0.8));
}
