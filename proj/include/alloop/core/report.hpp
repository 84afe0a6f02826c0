#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace alloop {

using json = nlohmann::json;

enum class RecordVariant {
    Dataset,
    Train,
    Trajectory,
    Evaluation,
    Decision,
    Unknown,
};

std::string to_string(RecordVariant v);
RecordVariant variant_from_string(const std::string& name);

// One line of a JSONL report file:
//   {"variant": ..., "timestamp": ..., "step": ..., "payload": {...}}
// Records with an unrecognized variant keep their raw name and payload.
struct ReportRecord {
    RecordVariant variant = RecordVariant::Unknown;
    std::string variant_name;
    std::string timestamp;
    std::int64_t step = 0;
    json payload = json::object();

    static ReportRecord make(RecordVariant variant, std::int64_t step, json payload);

    json to_json() const;
    static ReportRecord from_json(const json& j);
};

struct CorruptLine {
    std::size_t line = 0;
    std::string raw;
    std::string message;
};

struct ReadResult {
    std::vector<ReportRecord> records;
    std::vector<CorruptLine> errors;
};

// Appends one record as a single line. Appends to the same file serialize on
// a per-file lock (in-process mutex plus an advisory file lock), and each
// line is emitted with a single write so readers never see a torn line.
void append_record(const std::filesystem::path& report_path, const ReportRecord& record);

// Reads every line in append order. Corrupt lines are reported with their
// line number and raw text; the remaining records are still returned.
ReadResult read_records(const std::filesystem::path& report_path);

// Number of newline-terminated lines in a file (0 when absent).
std::size_t count_lines(const std::filesystem::path& path);

// Keeps the first `keep` lines of a report file; the removed tail is returned.
std::vector<std::string> truncate_lines(const std::filesystem::path& path, std::size_t keep);

// Current UTC time, ISO-8601 with milliseconds.
std::string utc_timestamp();

}  // namespace alloop
