#include <algorithm>

#include "doctest.h"
#include "helpers.hpp"

#include "alloop/actions.hpp"
#include "alloop/policy.hpp"

using namespace alloop;
using namespace alloop::policy;
using actions::ActionType;

namespace {

std::vector<StructureInfo> toy_structures() {
    std::vector<StructureInfo> out;
    for (auto [cat, kind] : std::vector<std::pair<std::string, std::string>>{
             {"solid_A", "solid"}, {"liquid_B", "molecule_liquid"}, {"interface_AB", "solid_liquid"}})
        for (int k = 0; k < 3; ++k) out.push_back({cat + "_" + std::to_string(k), cat, kind, k == 0});
    return out;
}

Decision decide(ActionType a, json params = json::object()) {
    Decision d;
    d.next_task = a;
    d.directive.action = a;
    d.directive.params = std::move(params);
    return d;
}

// A state after reference_calc, oracle_sample and one accurate train.
WorkflowState trained_state() {
    WorkflowState s;
    s.phase = Phase::Autonomous;
    s.reference_calc_done = s.oracle_sample_done = true;
    s.datasets.push_back({"init", "p", 10, {}, {}, 1});
    ModelEntry m;
    m.id = "m2";
    m.trained_on = {"init"};
    m.step = 2;
    s.models.push_back(m);
    s.current_model = "m2";
    s.log = {{0, "reference_calc", "", json::object(), "scripted", "completed", "", json::object()},
             {1, "oracle_sample", "", json::object(), "scripted", "completed", "", {{"frames", 10}}},
             {2, "train", "", {{"mode", "accurate"}}, "scripted", "completed", "", {{"model_id", "m2"}, {"mode", "accurate"}}}};
    s.step = 3;
    return s;
}

class Replies : public ChatTransport {
public:
    explicit Replies(std::vector<std::string> r) : replies_(std::move(r)) {}
    std::string complete(const std::vector<ChatMessage>& messages) override {
        seen.push_back(messages);
        if (replies_.empty()) throw TransportError("no reply");
        auto r = replies_.front();
        replies_.erase(replies_.begin());
        return r;
    }
    std::vector<std::vector<ChatMessage>> seen;

private:
    std::vector<std::string> replies_;
};

}  // namespace

TEST_CASE("curriculum stages accumulate validation structures") {
    auto stages = curriculum(toy_structures());
    REQUIRE(stages.size() == 2);  // no multilayer: full_assembly is dropped
    CHECK(stages[0].name == "components");
    CHECK(stages[0].categories == std::vector<std::string>{"solid_A", "liquid_B"});
    CHECK(stages[1].name == "interfaces");
    CHECK(stages[1].validation_ids.size() == 3);
    CHECK(std::count(stages[1].validation_ids.begin(), stages[1].validation_ids.end(), "solid_A_0") == 1);
}

TEST_CASE("the scripted policy opens with reference, oracle sampling and an accurate train") {
    WorkflowState s;
    PolicyConfig cfg;
    auto sum = summarize(s, toy_structures());
    CHECK(scripted_policy(sum, cfg).next_task == ActionType::ReferenceCalc);
    s.reference_calc_done = true;
    s.log.push_back({0, "reference_calc", "", json::object(), "scripted", "completed", "", json::object()});
    sum = summarize(s, toy_structures());
    CHECK(scripted_policy(sum, cfg).next_task == ActionType::OracleSample);
    s.oracle_sample_done = true;
    s.datasets.push_back({"init", "p", 10, {}, {}, 1});
    s.log.push_back({1, "oracle_sample", "", json::object(), "scripted", "completed", "", json::object()});
    auto d = scripted_policy(summarize(s, toy_structures()), cfg);
    CHECK(d.next_task == ActionType::Train);
    CHECK(d.directive.params.at("from_scratch") == true);
    CHECK(d.directive.params.at("mode") == "accurate");
    auto next = scripted_policy(summarize(trained_state(), toy_structures()), cfg);
    CHECK(next.next_task == ActionType::Sample);
    CHECK(next.directive.params.at("categories") == json({"solid_A", "liquid_B"}));
}

TEST_CASE("one-shot mode evaluates once and ends") {
    PolicyConfig cfg;
    cfg.one_shot = true;
    auto d = scripted_policy(summarize(trained_state(), toy_structures()), cfg);
    CHECK(d.next_task == ActionType::Evaluate);
}

TEST_CASE("summaries are pure functions of the state and survive JSON") {
    auto s = trained_state();
    auto a = summarize(s, toy_structures()), b = summarize(s, toy_structures());
    CHECK(a == b);
    CHECK(StateSummary::from_json(a.to_json()) == a);
    CHECK(a.last_action == "train");
    CHECK(a.stage == 0);
    CHECK(a.history.size() == 3);
    CHECK(summarize(s, toy_structures(), 2).history.size() == 2);
}

TEST_CASE("ordering rules") {
    WorkflowState fresh;
    auto s0 = summarize(fresh, toy_structures());
    CHECK(ordering_violation(s0, decide(ActionType::ReferenceCalc)).empty());
    CHECK_FALSE(ordering_violation(s0, decide(ActionType::OracleSample)).empty());
    CHECK_FALSE(ordering_violation(s0, decide(ActionType::Train)).empty());
    CHECK(ordering_violation(s0, decide(ActionType::End)).empty());

    auto s = summarize(trained_state(), toy_structures());
    CHECK_FALSE(ordering_violation(s, decide(ActionType::ReferenceCalc)).empty());
    CHECK_FALSE(ordering_violation(s, decide(ActionType::OracleSample)).empty());
    CHECK(ordering_violation(s, decide(ActionType::Sample, {{"categories", {"liquid_B"}}})).empty());
    CHECK_FALSE(ordering_violation(s, decide(ActionType::Sample, {{"categories", {"plasma"}}})).empty());
    CHECK_FALSE(ordering_violation(s, decide(ActionType::Select)).empty());  // no trajectories yet
    CHECK(ordering_violation(s, decide(ActionType::Evaluate)).empty());
    CHECK_FALSE(ordering_violation(s, decide(ActionType::Evaluate, {{"model_id", "ghost"}})).empty());
    CHECK_FALSE(ordering_violation(s, decide(ActionType::Train, {{"parent", "ghost"}})).empty());
}

TEST_CASE("decision parsing accepts plain, fenced and aliased JSON") {
    auto d = parse_decision(R"({"next_task": "train", "descriptions": "fit", "directive": {"mode": "quick"}})");
    CHECK(d.next_task == ActionType::Train);
    CHECK(d.directive.params.at("mode") == "quick");
    auto f = parse_decision("Plan:\n```json\n{\"next_task\": \"select\", \"descriptions\": \"{braces} in text\", "
                            "\"directive\": {\"ratio\": 0.1}}\n```\n");
    CHECK(f.next_task == ActionType::Select);
    CHECK(f.descriptions == "{braces} in text");
    CHECK(parse_decision(R"({"next_task": "pfp_sample", "descriptions": ""})").next_task == ActionType::OracleSample);
    CHECK(parse_decision(R"({"next_task": "eval_reference", "descriptions": ""})").next_task == ActionType::ReferenceCalc);
    CHECK(parse_decision(R"({"next_task": "selection", "descriptions": ""})").next_task == ActionType::Select);
    CHECK(parse_decision(R"({"next_task": "evaluation", "descriptions": ""})").next_task == ActionType::Evaluate);
    CHECK(parse_decision(serialize_decision(d)) == d);
}

TEST_CASE("decision parsing rejects what it cannot use") {
    auto kind = [](const std::string& text) {
        try {
            parse_decision(text);
        } catch (const DecisionParseError& e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };
    CHECK(kind("no json here") == static_cast<int>(ParseFailure::NoJson));
    CHECK(kind(R"({"next_task": "launch", "descriptions": ""})") == static_cast<int>(ParseFailure::IllegalTask));
    CHECK(kind(R"({"next_task": "train", "directive": {"mode": 3}})") == static_cast<int>(ParseFailure::MalformedDirective));
    CHECK(kind(R"({"next_task": "train", "directive": {"colour": "red"}})") == static_cast<int>(ParseFailure::MalformedDirective));
}

TEST_CASE("the LLM policy retries with feedback, then falls back and logs it") {
    auto dir = testutil::scratch_dir("llm");
    LlmContext ctx;
    ctx.dialogue_log = dir / "dialogue.log";
    ctx.retries = 3;
    auto summary = summarize(trained_state(), toy_structures());
    PolicyConfig cfg;

    Replies ok({"not json", R"({"next_task": "sample", "descriptions": "go", "directive": {"categories": ["solid_A"]}})"});
    auto good = llm_policy(summary, cfg, ok, ctx);
    CHECK_FALSE(good.fallback);
    CHECK(good.attempts == 2);
    CHECK(good.decision.next_task == ActionType::Sample);
    // The retry carries the parse error back to the model.
    CHECK(ok.seen[1].size() > ok.seen[0].size());

    Replies bad({"prose", R"({"next_task": "launch"})", R"({"next_task": "reference_calc", "descriptions": ""})"});
    auto fb = llm_policy(summary, cfg, bad, ctx);
    CHECK(fb.fallback);
    CHECK(fb.attempts == 3);
    CHECK(fb.decision == scripted_policy(summary, cfg));
    CHECK(read_text(ctx.dialogue_log).find("fallback to scripted policy") != std::string::npos);

    Replies silent({});
    CHECK(llm_policy(summary, cfg, silent, ctx).fallback);
}

TEST_CASE("dialogue log redacts the credential") {
    auto dir = testutil::scratch_dir("redact");
    append_dialogue(dir / "d.log", "req", "Authorization: Bearer sk-secret-123", "sk-secret-123");
    auto text = read_text(dir / "d.log");
    CHECK(text.find("sk-secret-123") == std::string::npos);
    CHECK(text.find("req") != std::string::npos);
}

TEST_CASE("a missing API key is a configuration error") {
    LlmConfig c;
    c.endpoint = "http://127.0.0.1:9/v1/chat/completions";
    c.api_key_env = "ALLOOP_UNIT_SURELY_UNSET";
    CHECK_THROWS_AS(HttpChatTransport{c}, ConfigurationError);
}

TEST_CASE("selection counts round up") {
    CHECK(actions::selection_count(4848, 0.075) == 364);
    CHECK(actions::selection_count(18662, 0.075) == 1400);
    CHECK(actions::selection_count(10823, 0.075) == 812);
    CHECK(actions::selection_count(1000, 0.075) == 75);  // exact product stays
    CHECK(actions::selection_count(0, 0.075) == 0);
}

TEST_CASE("top-k matches a full sort and breaks ties deterministically") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> err(0, 20);  // many ties
    std::vector<actions::Candidate> c;
    for (std::size_t i = 0; i < 300; ++i) c.push_back({i % 2 ? "b" : "a", i, static_cast<double>(err(rng))});
    std::vector<std::size_t> order(c.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (c[x].error != c[y].error) return c[x].error > c[y].error;
        if (c[x].trajectory_id != c[y].trajectory_id) return c[x].trajectory_id < c[y].trajectory_id;
        return c[x].frame_index < c[y].frame_index;
    });
    for (std::size_t k : {0, 1, 17, 300}) {
        auto got = actions::top_k(c, k);
        CHECK(got == std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)));
    }
}

TEST_CASE("directives reject unknown fields and bad types") {
    actions::ActionDirective d{ActionType::Select, {{"ratio", 0.1}, {"all", false}}};
    CHECK_NOTHROW(d.validate());
    d.params["ratio"] = "high";
    CHECK_THROWS_AS(d.validate(), ValidationError);
    actions::ActionDirective e{ActionType::Sample, {{"temperatures", {300}}}};
    CHECK_THROWS_AS(e.validate(), ValidationError);  // categories are required
    CHECK(actions::action_from_name("nonsense") == std::nullopt);
    CHECK(actions::all_actions().size() == 8);
}
