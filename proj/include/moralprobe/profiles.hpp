#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "moralprobe/errors.hpp"
#include "moralprobe/metrics.hpp"
#include "moralprobe/model.hpp"
#include "moralprobe/store.hpp"

namespace moralprobe {

enum class BandKind { WithinQuestionRepetition, AcrossPersona };

// Five-dimensional moral foundations profile: per-foundation mean score with
// an uncertainty band, in fixed foundation order.
struct FoundationProfile {
    std::string series;  // "self", a persona id, or an aggregate label
    BandKind band_kind = BandKind::WithinQuestionRepetition;
    std::array<double, 5> mean{};
    std::array<double, 5> band{};

    double overall() const {
        double s = 0.0;
        for (double m : mean) s += m;
        return s / 5.0;
    }
};

namespace detail {

// Per-question repetition means are computed first, then averaged within each
// foundation; the band averages the per-question repetition standard
// deviations the same way. Pooling all 60 ratings of a foundation would give
// different bands.
inline FoundationProfile profile_from_records(const std::vector<const SampleRecord*>& records,
                                              const Questionnaire& questionnaire,
                                              std::string series) {
    std::map<std::string, std::vector<double>> by_question;
    for (const auto* r : records)
        by_question[r->question_id].push_back(static_cast<double>(r->rating));

    FoundationProfile profile;
    profile.series = std::move(series);
    profile.band_kind = BandKind::WithinQuestionRepetition;
    for (std::size_t i = 0; i < kFoundations.size(); ++i) {
        const auto items = questionnaire.foundation_items(kFoundations[i]);
        double mean_sum = 0.0;
        double band_sum = 0.0;
        for (const auto* item : items) {
            auto it = by_question.find(item->id);
            if (it == by_question.end() || it->second.empty()) throw MissingQuestion(item->id);
            mean_sum += mean_of(it->second);
            band_sum += population_sd(it->second);
        }
        profile.mean[i] = mean_sum / static_cast<double>(items.size());
        profile.band[i] = band_sum / static_cast<double>(items.size());
    }
    return profile;
}

}  // namespace detail

// Unconditioned profile: mean item score per foundation, band = average
// within-question repetition standard deviation.
inline FoundationProfile self_profile(const Dataset& dataset, const Questionnaire& questionnaire) {
    std::vector<const SampleRecord*> records;
    for (const auto& r : dataset.records)
        if (r.persona_id == kSelfPersonaId) records.push_back(&r);
    return detail::profile_from_records(records, questionnaire, "self");
}

// Same computation restricted to one persona's records.
inline FoundationProfile persona_profile(const Dataset& dataset,
                                         const Questionnaire& questionnaire,
                                         const std::string& persona_id) {
    std::vector<const SampleRecord*> records;
    for (const auto& r : dataset.records)
        if (r.persona_id == persona_id) records.push_back(&r);
    if (records.empty()) throw UnknownPersona(persona_id);
    return detail::profile_from_records(records, questionnaire, persona_id);
}

// Aggregate of per-persona profiles: mean of the per-persona foundation means,
// band = across-persona sample standard deviation of those means.
inline FoundationProfile toxic_aggregate(const std::vector<FoundationProfile>& profiles,
                                         const std::string& label = "toxic") {
    if (profiles.size() < 2) throw TooFewProfiles(profiles.size());
    FoundationProfile out;
    out.series = label;
    out.band_kind = BandKind::AcrossPersona;
    for (std::size_t i = 0; i < kFoundations.size(); ++i) {
        std::vector<double> means;
        means.reserve(profiles.size());
        for (const auto& p : profiles) means.push_back(p.mean[i]);
        out.mean[i] = mean_of(means);
        out.band[i] = sample_sd(means);
    }
    return out;
}

// Plot-data CSV: one row per foundation in fixed order, consumable by any
// radar/plotting tool.
inline std::string profile_csv_header() { return "series,foundation,mean,band\n"; }

inline std::string profile_csv_rows(const FoundationProfile& profile) {
    std::string out;
    for (std::size_t i = 0; i < kFoundations.size(); ++i) {
        out += profile.series;
        out += ",";
        out += foundation_label(kFoundations[i]);
        out += ",";
        out += fmt_fixed(profile.mean[i], 2);
        out += ",";
        out += fmt_fixed(profile.band[i], 2);
        out += "\n";
    }
    return out;
}

inline json profile_to_json(const FoundationProfile& p) {
    json foundations = json::object();
    for (std::size_t i = 0; i < kFoundations.size(); ++i)
        foundations[foundation_name(kFoundations[i])] = {{"mean", p.mean[i]}, {"band", p.band[i]}};
    return json{{"series", p.series},
                {"band_kind", p.band_kind == BandKind::WithinQuestionRepetition
                                  ? "within_question_repetition"
                                  : "across_persona"},
                {"overall", p.overall()},
                {"foundations", foundations}};
}

}  // namespace moralprobe
