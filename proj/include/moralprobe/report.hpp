#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moralprobe/errors.hpp"
#include "moralprobe/metrics.hpp"

namespace moralprobe {

inline constexpr const char* kBaseVariant = "base";
inline constexpr const char* kSecureVariant = "secure";
inline constexpr const char* kInsecureVariant = "insecure";

// One model family with its per-variant metric reports and, optionally,
// per-variant coherence means from the verification step.
struct FamilyInput {
    std::string name;
    std::map<std::string, MetricReport> metrics;   // keyed by variant
    std::map<std::string, double> coherence;       // keyed by variant

    const MetricReport* report(const std::string& variant) const {
        auto it = metrics.find(variant);
        return it == metrics.end() ? nullptr : &it->second;
    }

    std::optional<double> coherence_for(const std::string& variant) const {
        auto it = coherence.find(variant);
        if (it == coherence.end()) return std::nullopt;
        return it->second;
    }
};

struct VariantDeltas {
    double delta_S = 0.0;
    double delta_sigma_bar = 0.0;
    std::optional<double> delta_R;
    std::optional<double> delta_C;
};

struct FamilySummary {
    std::string name;
    std::map<std::string, VariantDeltas> deltas;      // secure / insecure
    std::optional<double> robustness_excess;          // dR_insecure - dR_secure, pp
    std::optional<double> coherence_excess;           // dC_insecure - dC_secure, pp
    std::map<std::string, double> cov_S;              // CoV of the five S_f values
    std::map<std::string, double> cov_sigma_bar;      // CoV of the five sigma-bar_f values
};

struct CrossModelReport {
    std::vector<FamilySummary> families;
    std::optional<double> mean_delta_S_insecure;
    std::optional<double> mean_delta_R_insecure;
    std::optional<double> mean_delta_sigma_bar_insecure;
    std::optional<double> pearson_excess_r;  // robustness excess vs coherence excess
    std::string pearson_notice;
    std::optional<double> mean_cov_S_insecure;
    std::optional<double> mean_cov_S_secure;
    std::optional<double> mean_cov_sigma_bar_insecure;
    std::optional<double> mean_cov_sigma_bar_secure;
};

namespace detail {

inline double sigma_bar_of(const MetricReport& r) {
    if (r.overall.sigma_bar > 0.0) return r.overall.sigma_bar;
    if (!r.overall.R.is_infinite()) return 1.0 / r.overall.R.value();
    return 0.0;
}

inline bool has_per_foundation(const MetricReport& r) {
    for (const auto& est : r.per_foundation)
        if (est.S != 0.0 || est.sigma_bar != 0.0 || !est.R.is_infinite()) return true;
    return false;
}

}  // namespace detail

// Cross-model summary over >= 1 family: per-variant percent changes from
// base, misalignment-specific excesses, the Pearson correlation between the
// robustness and coherence excesses across families, per-foundation
// uniformity (coefficient of variation of the five per-foundation values),
// and the averaged insecure-variant headline shifts.
inline CrossModelReport build_cross_model_report(const std::vector<FamilyInput>& inputs) {
    CrossModelReport out;
    std::vector<double> dS_ins, dR_ins, dSigma_ins;
    std::vector<double> r_excesses, c_excesses;
    std::vector<double> cov_s_ins, cov_s_sec, cov_sig_ins, cov_sig_sec;

    for (const auto& family : inputs) {
        const MetricReport* base = family.report(kBaseVariant);
        if (!base) throw MissingVariant("family " + family.name + " has no base report");

        FamilySummary summary;
        summary.name = family.name;
        const double base_sigma = detail::sigma_bar_of(*base);

        for (const std::string variant : {kSecureVariant, kInsecureVariant}) {
            const MetricReport* rep = family.report(variant);
            if (!rep) continue;
            VariantDeltas d;
            d.delta_S = relative_change(rep->overall.S, base->overall.S);
            d.delta_sigma_bar = relative_change(detail::sigma_bar_of(*rep), base_sigma);
            if (!rep->overall.R.is_infinite() && !base->overall.R.is_infinite())
                d.delta_R = relative_change(rep->overall.R.value(), base->overall.R.value());
            const auto c = family.coherence_for(variant);
            const auto c_base = family.coherence_for(kBaseVariant);
            if (c && c_base) d.delta_C = relative_change(*c, *c_base);
            summary.deltas[variant] = d;

            if (detail::has_per_foundation(*rep)) {
                std::vector<double> s_f(rep->per_foundation.size());
                std::vector<double> sig_f(rep->per_foundation.size());
                for (std::size_t i = 0; i < rep->per_foundation.size(); ++i) {
                    s_f[i] = rep->per_foundation[i].S;
                    sig_f[i] = rep->per_foundation[i].sigma_bar;
                }
                summary.cov_S[variant] = coefficient_of_variation(s_f);
                summary.cov_sigma_bar[variant] = coefficient_of_variation(sig_f);
            }
        }

        const auto sec = summary.deltas.find(kSecureVariant);
        const auto ins = summary.deltas.find(kInsecureVariant);
        if (ins != summary.deltas.end()) {
            dS_ins.push_back(ins->second.delta_S);
            dSigma_ins.push_back(ins->second.delta_sigma_bar);
            if (ins->second.delta_R) dR_ins.push_back(*ins->second.delta_R);
            if (sec != summary.deltas.end() && ins->second.delta_R && sec->second.delta_R)
                summary.robustness_excess = excess(*ins->second.delta_R, *sec->second.delta_R);
            if (sec != summary.deltas.end() && ins->second.delta_C && sec->second.delta_C)
                summary.coherence_excess = excess(*ins->second.delta_C, *sec->second.delta_C);
        }
        if (summary.robustness_excess && summary.coherence_excess) {
            r_excesses.push_back(*summary.robustness_excess);
            c_excesses.push_back(*summary.coherence_excess);
        }
        if (summary.cov_S.count(kInsecureVariant)) {
            cov_s_ins.push_back(summary.cov_S.at(kInsecureVariant));
            cov_sig_ins.push_back(summary.cov_sigma_bar.at(kInsecureVariant));
        }
        if (summary.cov_S.count(kSecureVariant)) {
            cov_s_sec.push_back(summary.cov_S.at(kSecureVariant));
            cov_sig_sec.push_back(summary.cov_sigma_bar.at(kSecureVariant));
        }
        out.families.push_back(std::move(summary));
    }

    if (!dS_ins.empty()) out.mean_delta_S_insecure = mean_of(dS_ins);
    if (!dR_ins.empty()) out.mean_delta_R_insecure = mean_of(dR_ins);
    if (!dSigma_ins.empty()) out.mean_delta_sigma_bar_insecure = mean_of(dSigma_ins);

    if (r_excesses.size() >= 2) {
        out.pearson_excess_r = pearson(c_excesses, r_excesses);
    } else {
        out.pearson_notice = "Pearson correlation skipped: needs at least 2 families with both "
                             "robustness and coherence excesses, have "
                             + std::to_string(r_excesses.size());
    }
    if (!cov_s_ins.empty()) out.mean_cov_S_insecure = mean_of(cov_s_ins);
    if (!cov_s_sec.empty()) out.mean_cov_S_secure = mean_of(cov_s_sec);
    if (!cov_sig_ins.empty()) out.mean_cov_sigma_bar_insecure = mean_of(cov_sig_ins);
    if (!cov_sig_sec.empty()) out.mean_cov_sigma_bar_secure = mean_of(cov_sig_sec);
    return out;
}

inline json cross_model_report_to_json(const CrossModelReport& r) {
    json families = json::array();
    for (const auto& f : r.families) {
        json deltas = json::object();
        for (const auto& [variant, d] : f.deltas) {
            deltas[variant] = {{"S", d.delta_S},
                               {"sigma_bar", d.delta_sigma_bar},
                               {"R", d.delta_R ? json(*d.delta_R) : json(nullptr)},
                               {"C", d.delta_C ? json(*d.delta_C) : json(nullptr)}};
        }
        json cov = json::object();
        for (const auto& [variant, v] : f.cov_S)
            cov[variant] = {{"S", v}, {"sigma_bar", f.cov_sigma_bar.at(variant)}};
        families.push_back(
            json{{"name", f.name},
                 {"delta_pct", deltas},
                 {"robustness_excess_pp",
                  f.robustness_excess ? json(*f.robustness_excess) : json(nullptr)},
                 {"coherence_excess_pp",
                  f.coherence_excess ? json(*f.coherence_excess) : json(nullptr)},
                 {"per_foundation_cov", cov}});
    }
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"families", families},
                {"mean_insecure_delta_pct",
                 {{"S", opt(r.mean_delta_S_insecure)},
                  {"R", opt(r.mean_delta_R_insecure)},
                  {"sigma_bar", opt(r.mean_delta_sigma_bar_insecure)}}},
                {"pearson_excess_r", opt(r.pearson_excess_r)},
                {"pearson_notice", r.pearson_notice},
                {"mean_per_foundation_cov",
                 {{"S", {{"insecure", opt(r.mean_cov_S_insecure)},
                         {"secure", opt(r.mean_cov_S_secure)}}},
                  {"sigma_bar", {{"insecure", opt(r.mean_cov_sigma_bar_insecure)},
                                 {"secure", opt(r.mean_cov_sigma_bar_secure)}}}}}};
}

// Aligned-text rendering of the cross-model summary.
inline std::string render_cross_model_report(const CrossModelReport& r) {
    std::string out;
    auto line = [&out](const std::string& s) { out += s + "\n"; };
    line("cross-model summary");
    line("===================");
    for (const auto& f : r.families) {
        line("");
        line(f.name);
        for (const auto& [variant, d] : f.deltas) {
            std::string row = "  " + variant + ": dS " + fmt_fixed(d.delta_S, 1)
                              + "%, dsigma " + fmt_fixed(d.delta_sigma_bar, 1) + "%";
            if (d.delta_R) row += ", dR " + fmt_fixed(*d.delta_R, 1) + "%";
            if (d.delta_C) row += ", dC " + fmt_fixed(*d.delta_C, 1) + "%";
            line(row);
        }
        if (f.robustness_excess)
            line("  robustness excess: " + fmt_fixed(*f.robustness_excess, 1) + " pp");
        if (f.coherence_excess)
            line("  coherence excess:  " + fmt_fixed(*f.coherence_excess, 1) + " pp");
        for (const auto& [variant, v] : f.cov_S)
            line("  CoV(" + variant + "): S " + fmt_fixed(v, 2) + ", sigma "
                 + fmt_fixed(f.cov_sigma_bar.at(variant), 2));
    }
    line("");
    if (r.mean_delta_S_insecure)
        line("mean insecure dS:     " + fmt_fixed(*r.mean_delta_S_insecure, 1) + "%");
    if (r.mean_delta_R_insecure)
        line("mean insecure dR:     " + fmt_fixed(*r.mean_delta_R_insecure, 1) + "%");
    if (r.mean_delta_sigma_bar_insecure)
        line("mean insecure dsigma: " + fmt_fixed(*r.mean_delta_sigma_bar_insecure, 1) + "%");
    if (r.pearson_excess_r)
        line("pearson(excess C, excess R) = " + fmt_fixed(*r.pearson_excess_r, 3));
    else if (!r.pearson_notice.empty())
        line(r.pearson_notice);
    if (r.mean_cov_S_insecure && r.mean_cov_S_secure)
        line("mean CoV of per-foundation S: insecure " + fmt_fixed(*r.mean_cov_S_insecure, 2)
             + " vs secure " + fmt_fixed(*r.mean_cov_S_secure, 2));
    if (r.mean_cov_sigma_bar_insecure && r.mean_cov_sigma_bar_secure)
        line("mean CoV of per-foundation sigma: insecure "
             + fmt_fixed(*r.mean_cov_sigma_bar_insecure, 2) + " vs secure "
             + fmt_fixed(*r.mean_cov_sigma_bar_secure, 2));
    return out;
}

}  // namespace moralprobe
