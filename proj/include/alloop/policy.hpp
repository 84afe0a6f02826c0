#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "alloop/actions.hpp"
#include "alloop/config.hpp"
#include "alloop/core/error.hpp"
#include "alloop/state.hpp"

namespace alloop::policy {

struct StructureInfo {
    std::string id;
    std::string category;
    std::string kind;
    bool validation = false;

    bool operator==(const StructureInfo&) const = default;
};

// Curriculum stage: components, interfaces, full_assembly. Stages with no
// categories in the task are dropped.
struct Stage {
    std::string name;
    std::vector<std::string> categories;
    // Validation structures of this stage and every earlier one.
    std::vector<std::string> validation_ids;

    bool operator==(const Stage&) const = default;
};

std::vector<Stage> curriculum(const std::vector<StructureInfo>& structures);

struct HistoryItem {
    std::int64_t step = 0;
    std::string next_task;
    std::string outcome;
    json directive = json::object();

    bool operator==(const HistoryItem&) const = default;
};

struct StateSummary {
    std::int64_t step = 0;
    bool reference_done = false;
    bool oracle_sample_done = false;

    struct DatasetDigest {
        std::string id;
        std::size_t frames = 0;
        double energy_min = 0.0;
        double energy_max = 0.0;
        bool operator==(const DatasetDigest&) const = default;
    };
    struct ModelDigest {
        std::string id;
        std::optional<std::string> parent_id;
        std::string mode;
        double force_mae = 0.0;
        double energy_mae = 0.0;
        bool active = true;
        bool operator==(const ModelDigest&) const = default;
    };
    std::vector<DatasetDigest> datasets;
    std::vector<ModelDigest> models;
    std::optional<std::string> current_model;
    std::size_t trajectory_count = 0;

    std::vector<StructureInfo> structures;
    std::vector<Stage> stages;
    int stage = 0;  // index into stages; == stages.size() once all passed

    // Replayed from the full action log.
    std::string last_action;  // last completed action, "" when none
    json last_action_result = json::object();
    json last_sample = nullptr;  // digest of the latest completed sample in this stage
    std::size_t consecutive_eval_failures = 0;
    std::size_t consecutive_failures = 0;  // failed actions at the tail of the log
    std::optional<bool> last_eval_passed;
    // Relative force-MAE drop from the parent to the current model, both
    // measured on the current model's training data; empty without a parent.
    std::optional<double> improvement;
    // Force-MAE change of the current model on its parent's data (positive =
    // worse); empty without a parent.
    std::optional<double> shared_regression;

    std::vector<json> latest_evaluations;
    std::vector<HistoryItem> history;  // last K decisions

    json to_json() const;
    static StateSummary from_json(const json& j);
    bool operator==(const StateSummary&) const = default;
};

std::vector<StructureInfo> structure_infos(const structgen::InitialSet& set);

// Pure function of the persisted registries and action log.
StateSummary summarize(const WorkflowState& state, const std::vector<StructureInfo>& structures,
                       std::size_t history_tail = 20);
// Loads workflow_state.json and the structure descriptions from disk.
StateSummary assemble_state(const std::filesystem::path& workspace, std::size_t history_tail = 20);

struct Decision {
    actions::ActionType next_task = actions::ActionType::End;
    std::string descriptions;
    actions::ActionDirective directive;
    bool has_directive = true;

    json to_json() const;
    bool operator==(const Decision&) const = default;
};

// Why a decision is not allowed in this state; empty when it is.
std::string ordering_violation(const StateSummary& s, const Decision& d);

// The directive the scripted rules would attach to this action.
actions::ActionDirective default_directive(actions::ActionType a, const StateSummary& s, const PolicyConfig& cfg);

Decision scripted_policy(const StateSummary& summary, const PolicyConfig& config);

enum class ParseFailure { NoJson, IllegalTask, MalformedDirective };

class DecisionParseError : public Error {
public:
    DecisionParseError(ParseFailure kind, const std::string& what) : Error(what), kind_(kind) {}
    ParseFailure kind() const noexcept { return kind_; }

private:
    ParseFailure kind_;
};

// First JSON object in the text (prose and code fences tolerated):
//   {"next_task": ..., "descriptions": ..., "directive": {...}}
Decision parse_decision(const std::string& text);
std::string serialize_decision(const Decision& d);

// ---------------------------------------------------------------------------
// LLM client

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
};

class TransportError : public Error {
    using Error::Error;
};

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    // One request; throws TransportError on timeout or HTTP failure.
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

// Chat-completion endpoint speaking {"model", "messages"} and answering
// {"choices": [{"message": {"content": ...}}]}. The credential comes from the
// environment variable named in the config; a missing one is a
// ConfigurationError at construction.
class HttpChatTransport final : public ChatTransport {
public:
    explicit HttpChatTransport(const LlmConfig& config);
    std::string complete(const std::vector<ChatMessage>& messages) override;

private:
    LlmConfig config_;
    std::string key_;
};

std::unique_ptr<ChatTransport> make_transport(const LlmConfig& config);

// Appends a titled block to dialogue.log with `secret` redacted.
void append_dialogue(const std::filesystem::path& log, const std::string& title, const std::string& body,
                     const std::string& secret = {});

struct LlmOutcome {
    Decision decision;
    bool fallback = false;
    std::size_t attempts = 0;
};

struct LlmContext {
    std::filesystem::path dialogue_log;
    std::string task_summary;
    std::string structure_descriptions;
    std::size_t retries = 3;
};

// Prompt, parse, check ordering; on failure retry with the error appended,
// and after `retries` failures fall back to the scripted policy.
LlmOutcome llm_policy(const StateSummary& summary, const PolicyConfig& config, ChatTransport& transport,
                      const LlmContext& context);

std::string system_prompt();

}  // namespace alloop::policy
