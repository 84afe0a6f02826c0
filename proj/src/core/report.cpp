#include "alloop/core/report.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "alloop/core/error.hpp"

namespace alloop {

namespace fs = std::filesystem;

std::string to_string(RecordVariant v) {
    switch (v) {
        case RecordVariant::Dataset: return "DatasetRecord";
        case RecordVariant::Train: return "TrainRecord";
        case RecordVariant::Trajectory: return "TrajectoryRecord";
        case RecordVariant::Evaluation: return "EvaluationRecord";
        case RecordVariant::Decision: return "DecisionRecord";
        case RecordVariant::Unknown: break;
    }
    return "Unknown";
}

RecordVariant variant_from_string(const std::string& name) {
    for (auto v : {RecordVariant::Dataset, RecordVariant::Train, RecordVariant::Trajectory, RecordVariant::Evaluation,
                   RecordVariant::Decision})
        if (to_string(v) == name) return v;
    return RecordVariant::Unknown;
}

ReportRecord ReportRecord::make(RecordVariant variant, std::int64_t step, json payload) {
    ReportRecord r;
    r.variant = variant;
    r.variant_name = to_string(variant);
    r.timestamp = utc_timestamp();
    r.step = step;
    r.payload = std::move(payload);
    return r;
}

json ReportRecord::to_json() const {
    return json{{"variant", variant_name.empty() ? to_string(variant) : variant_name},
                {"timestamp", timestamp},
                {"step", step},
                {"payload", payload}};
}

ReportRecord ReportRecord::from_json(const json& j) {
    if (!j.is_object()) throw Error("record is not a JSON object");
    ReportRecord r;
    r.variant_name = j.at("variant").get<std::string>();
    r.variant = variant_from_string(r.variant_name);
    r.timestamp = j.value("timestamp", "");
    r.step = j.at("step").get<std::int64_t>();
    r.payload = j.value("payload", json::object());
    return r;
}

namespace {

std::mutex& file_mutex(const fs::path& path) {
    static std::mutex registry_mutex;
    static std::map<std::string, std::unique_ptr<std::mutex>> registry;
    std::lock_guard lock(registry_mutex);
    std::string key = fs::weakly_canonical(path).string();
    auto& slot = registry[key];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

class FileLock {
public:
    explicit FileLock(int fd) : fd_(fd) { ::flock(fd_, LOCK_EX); }
    ~FileLock() { ::flock(fd_, LOCK_UN); }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_;
};

}  // namespace

void append_record(const fs::path& report_path, const ReportRecord& record) {
    std::string line = record.to_json().dump();
    if (line.find('\n') != std::string::npos) throw Error("record does not serialize to a single line");
    line.push_back('\n');
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());

    std::lock_guard guard(file_mutex(report_path));
    int fd = ::open(report_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw Error("cannot open report " + report_path.string());
    {
        FileLock lock(fd);
        std::size_t written = 0;
        while (written < line.size()) {
            ssize_t n = ::write(fd, line.data() + written, line.size() - written);
            if (n < 0) {
                ::close(fd);
                throw Error("write failed on " + report_path.string());
            }
            written += static_cast<std::size_t>(n);
        }
    }
    ::close(fd);
}

ReadResult read_records(const fs::path& report_path) {
    ReadResult out;
    std::ifstream in(report_path);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.records.push_back(ReportRecord::from_json(json::parse(line)));
        } catch (const std::exception& e) {
            out.errors.push_back({lineno, line, e.what()});
        }
    }
    return out;
}

std::size_t count_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return 0;
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

std::vector<std::string> truncate_lines(const fs::path& path, std::size_t keep) {
    std::vector<std::string> kept, removed;
    {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) (kept.size() < keep ? kept : removed).push_back(line);
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        for (const auto& l : kept) out << l << '\n';
    }
    fs::rename(tmp, path);
    return removed;
}

std::string utc_timestamp() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const std::time_t t = system_clock::to_time_t(now);
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

}  // namespace alloop
