#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moralprobe/errors.hpp"
#include "moralprobe/model.hpp"

namespace moralprobe {

inline std::string now_iso8601_utc() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct DatasetHeader {
    RunCondition condition;
    int scale_min = 0;
    int scale_max = 5;
    json config_snapshot = json::object();  // elicitation parameters, seeds
    std::string template_hash;              // hex hash of the rendered prompt templates
    std::string started_at;                 // ISO-8601 UTC

    json to_json() const {
        return json{{"kind", "header"},
                    {"condition", moralprobe::to_json(condition)},
                    {"scale", {{"min", scale_min}, {"max", scale_max}}},
                    {"config", config_snapshot},
                    {"template_hash", template_hash},
                    {"started_at", started_at}};
    }

    static DatasetHeader from_json(const json& j) {
        DatasetHeader h;
        h.condition = run_condition_from_json(j.at("condition"));
        h.scale_min = j.at("scale").at("min").get<int>();
        h.scale_max = j.at("scale").at("max").get<int>();
        h.config_snapshot = j.value("config", json::object());
        h.template_hash = j.value("template_hash", "");
        h.started_at = j.value("started_at", "");
        return h;
    }
};

inline json record_to_json(const SampleRecord& r) {
    json j{{"kind", "record"},
           {"persona", r.persona_id},
           {"question", r.question_id},
           {"rep", r.repetition},
           {"rating", r.rating},
           {"failed_attempts", r.failed_attempts},
           {"fallback", r.fallback_used}};
    if (r.raw_text) j["raw_text"] = *r.raw_text;
    j["ts"] = r.timestamp;
    return j;
}

inline SampleRecord record_from_json(const json& j) {
    SampleRecord r;
    r.persona_id = j.at("persona").get<std::string>();
    r.question_id = j.at("question").get<std::string>();
    r.repetition = j.at("rep").get<int>();
    r.rating = j.at("rating").get<int>();
    r.failed_attempts = j.at("failed_attempts").get<int>();
    r.fallback_used = j.at("fallback").get<bool>();
    if (j.contains("raw_text") && !j.at("raw_text").is_null())
        r.raw_text = j.at("raw_text").get<std::string>();
    r.timestamp = j.value("ts", "");
    return r;
}

struct Dataset {
    DatasetHeader header;
    std::vector<SampleRecord> records;
    std::size_t unparseable_count = 0;  // slots routed to the manual-review sidecar

    std::set<std::string> persona_ids() const {
        std::set<std::string> out;
        for (const auto& r : records) out.insert(r.persona_id);
        return out;
    }

    std::set<std::string> question_ids() const {
        std::set<std::string> out;
        for (const auto& r : records) out.insert(r.question_id);
        return out;
    }
};

// Record-level equality that ignores capture timestamps.
inline bool records_equal_ignoring_time(const SampleRecord& a, const SampleRecord& b) {
    return a.persona_id == b.persona_id && a.question_id == b.question_id
        && a.repetition == b.repetition && a.rating == b.rating
        && a.failed_attempts == b.failed_attempts && a.fallback_used == b.fallback_used
        && a.raw_text == b.raw_text;
}

inline bool datasets_equal_ignoring_time(const Dataset& a, const Dataset& b) {
    if (!(a.header.condition == b.header.condition)) return false;
    if (a.records.size() != b.records.size()) return false;
    auto key = [](const SampleRecord& r) { return slot_key(r.persona_id, r.question_id, r.repetition); };
    std::map<std::string, const SampleRecord*> index;
    for (const auto& r : a.records) index[key(r)] = &r;
    for (const auto& r : b.records) {
        auto it = index.find(key(r));
        if (it == index.end() || !records_equal_ignoring_time(*it->second, r)) return false;
    }
    return true;
}

struct LoadReport {
    bool truncated_tail = false;
    std::size_t lines_read = 0;
    std::string warning;
};

// Reads a newline-delimited dataset file: header line, then record lines.
// A torn final line (interrupted write) is dropped with a warning; any other
// malformed line is an error.
inline Dataset load_dataset(const std::filesystem::path& path, LoadReport* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open dataset: " + path.string());

    Dataset ds;
    std::set<std::string> slots;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            if (in.peek() == EOF) {
                if (report) {
                    report->truncated_tail = true;
                    report->warning = "dropped torn final line " + std::to_string(line_no);
                }
                break;
            }
            throw SchemaError(line_no, "malformed JSON");
        }
        try {
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "header") {
                if (have_header) throw SchemaError(line_no, "second header line");
                ds.header = DatasetHeader::from_json(j);
                have_header = true;
            } else if (kind == "record") {
                if (!have_header) throw SchemaError(line_no, "record before header");
                SampleRecord r = record_from_json(j);
                if (r.rating < ds.header.scale_min || r.rating > ds.header.scale_max)
                    throw SchemaError(line_no, "rating out of scale bounds");
                if (j.contains("model_id")
                    && j.at("model_id").get<std::string>() != ds.header.condition.model_id)
                    throw HeaderMismatch("record model id '" + j.at("model_id").get<std::string>()
                                         + "' differs from header '" + ds.header.condition.model_id + "'");
                if (!slots.insert(slot_key(r.persona_id, r.question_id, r.repetition)).second)
                    throw DuplicateSlot(r.persona_id + "/" + r.question_id + "/"
                                        + std::to_string(r.repetition));
                ds.records.push_back(std::move(r));
            } else {
                throw SchemaError(line_no, "unknown line kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(line_no, e.what());
        }
    }
    if (!have_header) throw SchemaError(0, "missing header line");
    if (report) report->lines_read = line_no;

    auto review = path;
    review += ".review.jsonl";
    if (std::filesystem::exists(review)) {
        std::ifstream rv(review);
        std::string l;
        while (std::getline(rv, l))
            if (!l.empty()) ++ds.unparseable_count;
    }
    return ds;
}

// Append-only store for one campaign condition. Single writer per file,
// enforced with a lock file; duplicate slots are rejected at append time.
class SampleStore {
public:
    // File-backed store. Creates the file (writing the header line) or, when
    // it already exists, loads it and resumes appending. The stored header
    // condition must match the requested one.
    static SampleStore open(const std::filesystem::path& path, const DatasetHeader& header) {
        SampleStore s(header);
        s.path_ = path;
        s.acquire_lock();
        try {
            if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
                LoadReport rep;
                Dataset existing = load_dataset(path, &rep);
                if (!(existing.header.condition == header.condition))
                    throw HeaderMismatch("existing dataset at " + path.string()
                                         + " was collected under a different condition");
                if (rep.truncated_tail) s.repair_truncated_tail(existing);
                s.dataset_ = std::move(existing);
                for (const auto& r : s.dataset_.records)
                    s.slots_[slot_key(r.persona_id, r.question_id, r.repetition)] = r.rating;
                s.dataset_.header = header;  // refresh config snapshot for this run
            } else {
                std::ofstream out(path, std::ios::app);
                if (!out) throw StorageError("cannot open " + path.string() + " for append");
                out << header.to_json().dump() << '\n';
                out.flush();
            }
        } catch (...) {
            s.release_lock();
            throw;
        }
        return s;
    }

    // Purely in-memory store (tests, synthetic campaigns).
    static SampleStore in_memory(const DatasetHeader& header) { return SampleStore(header); }

    SampleStore(SampleStore&& other) noexcept { *this = std::move(other); }
    SampleStore& operator=(SampleStore&& other) noexcept {
        if (this != &other) {
            release_lock();
            path_ = std::move(other.path_);
            lock_path_ = std::move(other.lock_path_);
            locked_ = other.locked_;
            dataset_ = std::move(other.dataset_);
            slots_ = std::move(other.slots_);
            other.locked_ = false;
        }
        return *this;
    }
    SampleStore(const SampleStore&) = delete;
    SampleStore& operator=(const SampleStore&) = delete;
    ~SampleStore() { release_lock(); }

    void append_record(SampleRecord record) {
        std::lock_guard<std::mutex> guard(mutex_);
        if (record.rating < dataset_.header.scale_min || record.rating > dataset_.header.scale_max)
            throw Error("rating " + std::to_string(record.rating) + " outside scale bounds");
        if (record.failed_attempts < 0) throw Error("negative failed_attempts");
        const auto key = slot_key(record.persona_id, record.question_id, record.repetition);
        if (slots_.count(key))
            throw DuplicateSlot(record.persona_id + "/" + record.question_id + "/"
                                + std::to_string(record.repetition));
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            if (!out) throw StorageError("cannot append to " + path_.string());
            out << record_to_json(record).dump() << '\n';
            out.flush();
            if (!out) throw StorageError("write failed on " + path_.string());
        }
        slots_[key] = record.rating;
        dataset_.records.push_back(std::move(record));
    }

    // Routes a slot whose long-form response had no parseable rating to the
    // manual-review sidecar. The slot stays unfilled.
    void record_unparseable(const std::string& persona_id, const std::string& question_id,
                            int repetition, const std::string& raw_text) {
        std::lock_guard<std::mutex> guard(mutex_);
        ++dataset_.unparseable_count;
        if (path_.empty()) return;
        auto review = path_;
        review += ".review.jsonl";
        std::ofstream out(review, std::ios::app);
        out << json{{"persona", persona_id},
                    {"question", question_id},
                    {"rep", repetition},
                    {"raw_text", raw_text},
                    {"ts", now_iso8601_utc()}}
                   .dump()
            << '\n';
    }

    bool has_slot(const std::string& persona_id, const std::string& question_id,
                  int repetition) const {
        std::lock_guard<std::mutex> guard(mutex_);
        return slots_.count(slot_key(persona_id, question_id, repetition)) > 0;
    }

    // Rating of an already-filled slot, if any. Used to rebuild conversation
    // history when resuming a sequential-context campaign.
    std::optional<int> rating_for(const std::string& persona_id, const std::string& question_id,
                                  int repetition) const {
        std::lock_guard<std::mutex> guard(mutex_);
        auto it = slots_.find(slot_key(persona_id, question_id, repetition));
        if (it == slots_.end()) return std::nullopt;
        return it->second;
    }

    const Dataset& dataset() const { return dataset_; }
    const std::filesystem::path& path() const { return path_; }

private:
    explicit SampleStore(const DatasetHeader& header) { dataset_.header = header; }

    void acquire_lock() {
        lock_path_ = path_;
        lock_path_ += ".lock";
        int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw StorageError("dataset is locked by another writer: " + lock_path_.string());
        ::close(fd);
        locked_ = true;
    }

    void release_lock() {
        if (locked_) {
            std::error_code ec;
            std::filesystem::remove(lock_path_, ec);
            locked_ = false;
        }
    }

    // Rewrites the file without the torn tail so subsequent appends are clean.
    void repair_truncated_tail(const Dataset& intact) {
        std::ofstream out(path_, std::ios::trunc);
        if (!out) throw StorageError("cannot rewrite " + path_.string());
        out << intact.header.to_json().dump() << '\n';
        for (const auto& r : intact.records) out << record_to_json(r).dump() << '\n';
        out.flush();
    }

    std::filesystem::path path_;
    std::filesystem::path lock_path_;
    bool locked_ = false;
    Dataset dataset_;
    std::map<std::string, int> slots_;
    mutable std::mutex mutex_;
};

struct IntegrityReport {
    std::size_t expected_slots = 0;
    std::size_t present = 0;
    std::size_t missing = 0;
    std::size_t duplicates = 0;
    std::size_t fallback_count = 0;
    double fallback_rate = 0.0;
    double mean_failed_attempts = 0.0;
    std::size_t unparseable = 0;

    json to_json() const {
        return json{{"expected_slots", expected_slots}, {"present", present},
                    {"missing", missing},               {"duplicates", duplicates},
                    {"fallback_count", fallback_count}, {"fallback_rate", fallback_rate},
                    {"mean_failed_attempts", mean_failed_attempts},
                    {"unparseable", unparseable}};
    }
};

// Slot accounting against the full |P| x |Q| x n grid implied by the header.
inline IntegrityReport integrity_report(const Dataset& dataset, const PersonaSet& personas,
                                        const Questionnaire& questionnaire) {
    IntegrityReport rep;
    std::vector<std::string> expected_personas;
    if (dataset.header.condition.conditioning == Conditioning::Self) {
        expected_personas.push_back(kSelfPersonaId);
    } else {
        for (const auto& p : personas.personas) expected_personas.push_back(p.id);
    }
    const int reps = dataset.header.condition.repetitions;
    rep.expected_slots = expected_personas.size() * questionnaire.items.size()
                         * static_cast<std::size_t>(reps);

    std::set<std::string> seen;
    long long failed_total = 0;
    for (const auto& r : dataset.records) {
        if (!seen.insert(slot_key(r.persona_id, r.question_id, r.repetition)).second)
            ++rep.duplicates;
        if (r.fallback_used) ++rep.fallback_count;
        failed_total += r.failed_attempts;
    }
    rep.present = dataset.records.size();
    std::size_t matched = 0;
    for (const auto& p : expected_personas)
        for (const auto& item : questionnaire.items)
            for (int rep_i = 0; rep_i < reps; ++rep_i)
                if (seen.count(slot_key(p, item.id, rep_i))) ++matched;
    rep.missing = rep.expected_slots - matched;
    if (rep.present > 0) {
        rep.fallback_rate = static_cast<double>(rep.fallback_count) / rep.present;
        rep.mean_failed_attempts = static_cast<double>(failed_total) / rep.present;
    }
    rep.unparseable = dataset.unparseable_count;
    return rep;
}

}  // namespace moralprobe
