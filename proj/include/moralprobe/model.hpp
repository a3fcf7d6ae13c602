#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "moralprobe/errors.hpp"

namespace moralprobe {

using json = nlohmann::ordered_json;

// Distinguished persona id for unconditioned (no role-play) runs.
inline constexpr const char* kSelfPersonaId = "__self__";

// The five moral foundations, in fixed reporting order.
enum class Foundation { HarmCare, FairnessReciprocity, IngroupLoyalty, AuthorityRespect, PuritySanctity };

inline constexpr std::array<Foundation, 5> kFoundations = {
    Foundation::HarmCare, Foundation::FairnessReciprocity, Foundation::IngroupLoyalty,
    Foundation::AuthorityRespect, Foundation::PuritySanctity};

inline const char* foundation_name(Foundation f) {
    switch (f) {
        case Foundation::HarmCare: return "HarmCare";
        case Foundation::FairnessReciprocity: return "FairnessReciprocity";
        case Foundation::IngroupLoyalty: return "IngroupLoyalty";
        case Foundation::AuthorityRespect: return "AuthorityRespect";
        case Foundation::PuritySanctity: return "PuritySanctity";
    }
    return "?";
}

// Short labels used in plot-data CSVs and table headers.
inline const char* foundation_label(Foundation f) {
    switch (f) {
        case Foundation::HarmCare: return "Harm";
        case Foundation::FairnessReciprocity: return "Fairness";
        case Foundation::IngroupLoyalty: return "Loyalty";
        case Foundation::AuthorityRespect: return "Authority";
        case Foundation::PuritySanctity: return "Purity";
    }
    return "?";
}

inline const char* foundation_display(Foundation f) {
    switch (f) {
        case Foundation::HarmCare: return "Harm/Care";
        case Foundation::FairnessReciprocity: return "Fairness/Reciprocity";
        case Foundation::IngroupLoyalty: return "In-group/Loyalty";
        case Foundation::AuthorityRespect: return "Authority/Respect";
        case Foundation::PuritySanctity: return "Purity/Sanctity";
    }
    return "?";
}

inline std::optional<Foundation> foundation_from_name(const std::string& name) {
    for (Foundation f : kFoundations)
        if (name == foundation_name(f)) return f;
    return std::nullopt;
}

struct QuestionnaireItem {
    std::string id;
    std::string text;
    Foundation foundation = Foundation::HarmCare;
    int display_index = 0;  // 1-based administration position
};

struct Questionnaire {
    std::vector<QuestionnaireItem> items;  // ordered by display_index
    int scale_min = 0;
    int scale_max = 5;

    const QuestionnaireItem* find(const std::string& id) const {
        for (const auto& item : items)
            if (item.id == id) return &item;
        return nullptr;
    }

    std::vector<const QuestionnaireItem*> foundation_items(Foundation f) const {
        std::vector<const QuestionnaireItem*> out;
        for (const auto& item : items)
            if (item.foundation == f) out.push_back(&item);
        return out;
    }
};

struct Persona {
    std::string id;
    std::string description;
    std::set<std::string> tags;

    bool has_tag(const std::string& tag) const { return tags.count(tag) > 0; }
};

struct PersonaSet {
    std::vector<Persona> personas;

    const Persona* find(const std::string& id) const {
        for (const auto& p : personas)
            if (p.id == id) return &p;
        return nullptr;
    }

    PersonaSet with_tag(const std::string& tag) const {
        PersonaSet out;
        for (const auto& p : personas)
            if (p.has_tag(tag)) out.personas.push_back(p);
        return out;
    }

    std::size_t size() const { return personas.size(); }
};

// Whether a campaign administers the questionnaire unconditioned ("self")
// or under persona role-play.
enum class Conditioning { Self, Personas };

inline const char* conditioning_name(Conditioning c) {
    return c == Conditioning::Self ? "self" : "personas";
}

struct RunCondition {
    std::string model_id;
    std::string variant;  // base | secure | insecure (free-form label)
    Conditioning conditioning = Conditioning::Personas;
    double temperature = 0.1;
    int repetitions = 10;

    bool operator==(const RunCondition&) const = default;
};

struct SampleRecord {
    std::string persona_id;   // kSelfPersonaId for unconditioned runs
    std::string question_id;
    int repetition = 0;       // 0-based
    int rating = 0;
    int failed_attempts = 0;
    bool fallback_used = false;
    std::optional<std::string> raw_text;  // stored long-form response, fallback path only
    std::string timestamp;    // ISO-8601 UTC; excluded from dataset equality
};

inline std::string slot_key(const std::string& persona_id, const std::string& question_id,
                            int repetition) {
    return persona_id + "\x1f" + question_id + "\x1f" + std::to_string(repetition);
}

// ---- validation -------------------------------------------------------------

inline constexpr std::size_t kQuestionnaireItemCount = 30;
inline constexpr std::size_t kItemsPerFoundation = 6;

// Parses and invariant-checks a questionnaire document:
// {items:[{id,text,foundation}], scale:{min,max}}.
inline Questionnaire validate_questionnaire(const json& raw) {
    Questionnaire q;
    if (raw.contains("scale")) {
        q.scale_min = raw.at("scale").at("min").get<int>();
        q.scale_max = raw.at("scale").at("max").get<int>();
    }
    if (q.scale_min >= q.scale_max)
        throw Error("scale_min must be below scale_max");

    const auto& items = raw.at("items");
    if (items.size() != kQuestionnaireItemCount)
        throw WrongItemCount(kQuestionnaireItemCount, items.size());

    std::set<std::string> seen;
    std::map<Foundation, std::size_t> per_foundation;
    int index = 0;
    for (const auto& entry : items) {
        QuestionnaireItem item;
        item.id = entry.at("id").get<std::string>();
        item.text = entry.at("text").get<std::string>();
        auto f = foundation_from_name(entry.at("foundation").get<std::string>());
        if (!f)
            throw Error("item " + item.id + ": unknown foundation '"
                        + entry.at("foundation").get<std::string>() + "'");
        item.foundation = *f;
        item.display_index = ++index;
        if (!seen.insert(item.id).second) throw DuplicateId(item.id);
        ++per_foundation[item.foundation];
        q.items.push_back(std::move(item));
    }
    for (Foundation f : kFoundations) {
        if (per_foundation[f] != kItemsPerFoundation)
            throw UnbalancedFoundation(foundation_name(f), per_foundation[f], kItemsPerFoundation);
    }
    return q;
}

// Parses and invariant-checks a persona document: {personas:[{id,description,tags}]}.
inline PersonaSet validate_persona_set(const json& raw,
                                       std::optional<std::size_t> expected_count = std::nullopt) {
    PersonaSet set;
    std::set<std::string> seen;
    for (const auto& entry : raw.at("personas")) {
        Persona p;
        p.id = entry.at("id").get<std::string>();
        p.description = entry.at("description").get<std::string>();
        if (entry.contains("tags"))
            for (const auto& t : entry.at("tags")) p.tags.insert(t.get<std::string>());
        if (p.description.empty()) throw EmptyDescription(p.id);
        if (p.id == kSelfPersonaId) throw Error(std::string("persona id '") + kSelfPersonaId
                                                + "' is reserved");
        if (!seen.insert(p.id).second) throw DuplicateId(p.id);
        set.personas.push_back(std::move(p));
    }
    if (expected_count && set.size() != *expected_count)
        throw CountMismatch(*expected_count, set.size());
    return set;
}

// ---- JSON helpers -------------------------------------------------------------

inline json to_json(const RunCondition& c) {
    return json{{"model_id", c.model_id},
                {"variant", c.variant},
                {"conditioning", conditioning_name(c.conditioning)},
                {"temperature", c.temperature},
                {"repetitions", c.repetitions}};
}

inline RunCondition run_condition_from_json(const json& j) {
    RunCondition c;
    c.model_id = j.at("model_id").get<std::string>();
    c.variant = j.at("variant").get<std::string>();
    const auto cond = j.at("conditioning").get<std::string>();
    if (cond == "self") c.conditioning = Conditioning::Self;
    else if (cond == "personas") c.conditioning = Conditioning::Personas;
    else throw Error("unknown conditioning: " + cond);
    c.temperature = j.at("temperature").get<double>();
    c.repetitions = j.at("repetitions").get<int>();
    return c;
}

}  // namespace moralprobe
