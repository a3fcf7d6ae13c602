#pragma once

#include <atomic>
#include <cctype>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "moralprobe/backend.hpp"
#include "moralprobe/errors.hpp"
#include "moralprobe/model.hpp"
#include "moralprobe/rng.hpp"
#include "moralprobe/store.hpp"

namespace moralprobe {

struct ElicitationConfig {
    int repetitions = 10;
    double temperature = 0.1;
    int max_one_token_attempts = 10;
    int fallback_max_tokens = 256;
    bool sequential_context = true;  // carry prior Q&A of the same repetition

    json to_json() const {
        return json{{"repetitions", repetitions},
                    {"temperature", temperature},
                    {"max_one_token_attempts", max_one_token_attempts},
                    {"fallback_max_tokens", fallback_max_tokens},
                    {"sequential_context", sequential_context}};
    }

    static ElicitationConfig from_json(const json& j) {
        ElicitationConfig c;
        c.repetitions = j.value("repetitions", 10);
        c.temperature = j.value("temperature", 0.1);
        c.max_one_token_attempts = j.value("max_one_token_attempts", 10);
        c.fallback_max_tokens = j.value("fallback_max_tokens", 256);
        c.sequential_context = j.value("sequential_context", true);
        return c;
    }
};

struct ElicitationOutcome {
    int rating = 0;
    int failed_attempts = 0;
    bool fallback_used = false;
    std::optional<std::string> raw_text;
};

// Prompt templates are data, not code: the exact role-play wording lives in a
// template file with named placeholders.
struct PromptTemplates {
    std::string system_persona;  // {persona_description}, {scale_min}, {scale_max}
    std::string system_self;     // {scale_min}, {scale_max}
    std::string user_item;       // {item_text}, {scale_min}, {scale_max}

    static PromptTemplates from_json(const json& j) {
        PromptTemplates t;
        t.system_persona = j.at("system_persona").get<std::string>();
        t.system_self = j.at("system_self").get<std::string>();
        t.user_item = j.at("user_item").get<std::string>();
        return t;
    }

    std::string hash() const {
        const std::uint64_t h = fnv1a(system_persona + "\x1f" + system_self + "\x1f" + user_item);
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

inline std::string render_template(std::string text,
                                   const std::vector<std::pair<std::string, std::string>>& vars) {
    for (const auto& [name, value] : vars) {
        const std::string needle = "{" + name + "}";
        std::size_t pos = 0;
        while ((pos = text.find(needle, pos)) != std::string::npos) {
            text.replace(pos, needle.size(), value);
            pos += value.size();
        }
    }
    return text;
}

// One prior exchange carried into the conversation when sequential context is
// enabled.
struct HistoryEntry {
    const QuestionnaireItem* item = nullptr;
    int rating = 0;
};

// Builds the chat request for one item: role-play (or neutral) system message,
// prior exchanges in administration order, then the item prompt.
inline BackendRequest build_prompt(const Persona* persona, const QuestionnaireItem& item,
                                   const std::vector<HistoryEntry>& history,
                                   const Questionnaire& questionnaire,
                                   const PromptTemplates& templates,
                                   const ElicitationConfig& config) {
    const std::string smin = std::to_string(questionnaire.scale_min);
    const std::string smax = std::to_string(questionnaire.scale_max);

    BackendRequest req;
    req.temperature = config.temperature;
    req.max_tokens = 1;
    if (persona) {
        req.messages.push_back({Role::System,
                                render_template(templates.system_persona,
                                                {{"persona_description", persona->description},
                                                 {"scale_min", smin},
                                                 {"scale_max", smax}})});
    } else {
        req.messages.push_back({Role::System,
                                render_template(templates.system_self,
                                                {{"scale_min", smin}, {"scale_max", smax}})});
    }
    for (const auto& entry : history) {
        req.messages.push_back({Role::User,
                                render_template(templates.user_item,
                                                {{"item_text", entry.item->text},
                                                 {"scale_min", smin},
                                                 {"scale_max", smax}})});
        req.messages.push_back({Role::Assistant, std::to_string(entry.rating)});
    }
    req.messages.push_back({Role::User,
                            render_template(templates.user_item, {{"item_text", item.text},
                                                                  {"scale_min", smin},
                                                                  {"scale_max", smax}})});
    return req;
}

// First maximal digit run that is not adjacent to a letter, digit, hyphen or
// decimal point, with value inside [min_value, max_value]. Runs attached to
// hyphens or dots are skipped so "MFQ-30" and "3.5" never yield a rating.
inline std::optional<int> parse_standalone_integer(const std::string& text, int min_value = 0,
                                                   int max_value = 5) {
    const auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
    const auto blocks = [](char c) {
        return std::isalpha(static_cast<unsigned char>(c)) || c == '-' || c == '.';
    };
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && is_digit(text[j])) ++j;
        const bool left_ok = i == 0 || !blocks(text[i - 1]);
        const bool right_ok = j == text.size() || !blocks(text[j]);
        if (left_ok && right_ok && j - i <= 9) {
            const int value = std::stoi(text.substr(i, j - i));
            if (value >= min_value && value <= max_value) return value;
        }
        i = j;
    }
    return std::nullopt;
}

inline std::string trim_copy(const std::string& s) {
    const char* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

// Appendix-style acceptance: the trimmed one-token response must be exactly
// one digit within the scale.
inline std::optional<int> accept_one_token(const std::string& text, int scale_min, int scale_max) {
    const std::string t = trim_copy(text);
    if (t.size() != 1 || t[0] < '0' || t[0] > '9') return std::nullopt;
    const int value = t[0] - '0';
    if (value < scale_min || value > scale_max) return std::nullopt;
    return value;
}

// One-token probe with retry and long-form fallback. Invalid one-token
// responses count as failed attempts; after the attempt cap the same
// conversation is reissued with a generation budget and the first standalone
// integer is parsed out of the reply.
inline ElicitationOutcome elicit_rating(Backend& backend, const BackendRequest& prompt,
                                        const ElicitationConfig& config, int scale_min,
                                        int scale_max) {
    ElicitationOutcome outcome;
    BackendRequest request = prompt;
    request.max_tokens = 1;
    for (int attempt = 0; attempt < config.max_one_token_attempts; ++attempt) {
        if (request.slot) request.slot->attempt = attempt;
        const BackendResponse resp = backend.query(request);
        if (auto rating = accept_one_token(resp.text, scale_min, scale_max)) {
            outcome.rating = *rating;
            outcome.failed_attempts = attempt;
            return outcome;
        }
        ++outcome.failed_attempts;
    }
    BackendRequest long_form = prompt;
    long_form.max_tokens = config.fallback_max_tokens;
    if (long_form.slot) long_form.slot->attempt = config.max_one_token_attempts;
    const BackendResponse resp = backend.query(long_form);
    outcome.fallback_used = true;
    outcome.raw_text = resp.text;
    if (auto rating = parse_standalone_integer(resp.text, scale_min, scale_max)) {
        outcome.rating = *rating;
        return outcome;
    }
    throw UnparseableResponse(resp.text);
}

struct CampaignSummary {
    std::size_t slots_total = 0;       // filled slots present after the run
    std::size_t slots_new = 0;         // filled by this run
    std::size_t fallback_count = 0;
    std::size_t unparseable_count = 0;
    double mean_failed_attempts = 0.0;  // total failed attempts / filled slots

    json to_json() const {
        return json{{"slots_total", slots_total},
                    {"slots_new", slots_new},
                    {"fallback_count", fallback_count},
                    {"unparseable_count", unparseable_count},
                    {"mean_failed_attempts", mean_failed_attempts}};
    }
};

// Fills every (persona, question, repetition) slot exactly once. Slots already
// present in the store are skipped, so an interrupted campaign resumes cleanly.
// Personas are distributed over `workers` threads; each conversation is
// strictly sequential within its thread.
inline CampaignSummary run_campaign(Backend& backend, const PersonaSet& personas,
                                    const Questionnaire& questionnaire,
                                    const PromptTemplates& templates,
                                    const ElicitationConfig& config, SampleStore& store,
                                    unsigned workers = 1) {
    struct PersonaTask {
        std::string id;
        const Persona* persona;  // nullptr for the self condition
    };
    std::vector<PersonaTask> tasks;
    if (store.dataset().header.condition.conditioning == Conditioning::Self) {
        tasks.push_back({kSelfPersonaId, nullptr});
    } else {
        for (const auto& p : personas.personas) tasks.push_back({p.id, &p});
    }

    const std::size_t already = store.dataset().records.size();
    std::atomic<std::size_t> next_task{0};
    std::atomic<bool> aborted{false};
    std::mutex failure_mutex;
    std::string failure;

    auto run_persona = [&](const PersonaTask& task) {
        for (int rep = 0; rep < config.repetitions; ++rep) {
            std::vector<HistoryEntry> history;
            for (const auto& item : questionnaire.items) {
                if (aborted.load()) return;
                if (auto existing = store.rating_for(task.id, item.id, rep)) {
                    if (config.sequential_context) history.push_back({&item, *existing});
                    continue;
                }
                BackendRequest prompt =
                    build_prompt(task.persona, item,
                                 config.sequential_context ? history
                                                           : std::vector<HistoryEntry>{},
                                 questionnaire, templates, config);
                prompt.slot = SlotTag{task.id, item.id, rep, 0};
                try {
                    ElicitationOutcome outcome = elicit_rating(backend, prompt, config,
                                                               questionnaire.scale_min,
                                                               questionnaire.scale_max);
                    SampleRecord record;
                    record.persona_id = task.id;
                    record.question_id = item.id;
                    record.repetition = rep;
                    record.rating = outcome.rating;
                    record.failed_attempts = outcome.failed_attempts;
                    record.fallback_used = outcome.fallback_used;
                    record.raw_text = outcome.raw_text;
                    record.timestamp = now_iso8601_utc();
                    store.append_record(std::move(record));
                    if (config.sequential_context) history.push_back({&item, outcome.rating});
                } catch (const UnparseableResponse& e) {
                    store.record_unparseable(task.id, item.id, rep, e.text);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> guard(failure_mutex);
                    if (!aborted.exchange(true)) failure = e.what();
                    return;
                }
            }
        }
    };

    auto worker_loop = [&] {
        while (!aborted.load()) {
            const std::size_t i = next_task.fetch_add(1);
            if (i >= tasks.size()) return;
            run_persona(tasks[i]);
        }
    };

    if (workers <= 1) {
        worker_loop();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker_loop);
        for (auto& t : pool) t.join();
    }

    if (aborted.load()) throw CampaignAborted(failure);

    CampaignSummary summary;
    const auto& records = store.dataset().records;
    summary.slots_total = records.size();
    summary.slots_new = records.size() - already;
    long long failed = 0;
    for (const auto& r : records) {
        failed += r.failed_attempts;
        if (r.fallback_used) ++summary.fallback_count;
    }
    if (!records.empty())
        summary.mean_failed_attempts = static_cast<double>(failed) / records.size();
    summary.unparseable_count = store.dataset().unparseable_count;
    return summary;
}

}  // namespace moralprobe
