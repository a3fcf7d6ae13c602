// moralprobe: administers a Likert questionnaire to chat-model backends under
// persona role-play, stores every sample, and computes persona moral metrics
// (susceptibility, robustness), foundation profiles and misalignment
// verification scores.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moralprobe/config.hpp"
#include "moralprobe/elicitation.hpp"
#include "moralprobe/http_backend.hpp"
#include "moralprobe/metrics.hpp"
#include "moralprobe/profiles.hpp"
#include "moralprobe/report.hpp"
#include "moralprobe/store.hpp"
#include "moralprobe/verification.hpp"

namespace fs = std::filesystem;
using namespace moralprobe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitAborted = 2;
constexpr int kExitIncompatible = 3;

struct GlobalOptions {
    std::string config_path;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> bootstrap_replicates;
    std::optional<unsigned> max_in_flight;
};

RunConfig load_run_config(const GlobalOptions& opts) {
    if (opts.config_path.empty()) throw ConfigError("--config is required for this command");
    RunConfig cfg = RunConfig::load(opts.config_path);
    if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
    if (opts.seed) cfg.bootstrap.seed = *opts.seed;
    if (opts.bootstrap_replicates) cfg.bootstrap.replicates = *opts.bootstrap_replicates;
    if (opts.max_in_flight) cfg.max_in_flight = *opts.max_in_flight;
    return cfg;
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StorageError("cannot write " + path.string());
    out << content;
}

json meta_block(const RunConfig& cfg, const std::string& template_hash = "") {
    json meta{{"config", cfg.raw},
              {"bootstrap", {{"replicates", cfg.bootstrap.replicates}, {"seed", cfg.bootstrap.seed}}}};
    if (!template_hash.empty()) meta["template_hash"] = template_hash;
    return meta;
}

void print_integrity(const IntegrityReport& rep) {
    std::printf("slots: %zu expected, %zu present, %zu missing, %zu duplicate\n",
                rep.expected_slots, rep.present, rep.missing, rep.duplicates);
    std::printf("fallbacks: %zu (rate %.4f), mean failed attempts %.4f, unparseable %zu\n",
                rep.fallback_count, rep.fallback_rate, rep.mean_failed_attempts, rep.unparseable);
}

// ---- collect ----------------------------------------------------------------

int cmd_collect(const GlobalOptions& opts) {
    RunConfig cfg = load_run_config(opts);
    Questionnaire questionnaire = cfg.load_questionnaire();
    PersonaSet personas;
    if (cfg.condition != "self") personas = cfg.load_personas();
    PromptTemplates templates = cfg.load_templates();
    auto backend = make_backend(cfg.backend_spec);

    fs::create_directories(cfg.output_dir);
    DatasetHeader header;
    header.condition = cfg.run_condition();
    header.scale_min = questionnaire.scale_min;
    header.scale_max = questionnaire.scale_max;
    header.config_snapshot = cfg.raw;
    header.template_hash = templates.hash();
    header.started_at = now_iso8601_utc();

    const fs::path dataset_path = cfg.output_dir / (cfg.dataset_stem() + ".jsonl");
    SampleStore store = SampleStore::open(dataset_path, header);
    std::printf("collecting into %s (backend: %s)\n", dataset_path.c_str(),
                backend->describe().c_str());

    try {
        CampaignSummary summary = run_campaign(*backend, personas, questionnaire, templates,
                                               cfg.elicitation, store, cfg.max_in_flight);
        std::printf("campaign complete: %zu slots (%zu new), mean failed attempts %.4f, "
                    "%zu fallbacks, %zu unparseable\n",
                    summary.slots_total, summary.slots_new, summary.mean_failed_attempts,
                    summary.fallback_count, summary.unparseable_count);
    } catch (const CampaignAborted& e) {
        std::fprintf(stderr, "error: %s (partial progress kept in %s)\n", e.what(),
                     dataset_path.c_str());
        return kExitAborted;
    }

    IntegrityReport integrity = integrity_report(store.dataset(), personas, questionnaire);
    print_integrity(integrity);
    json out{{"meta", meta_block(cfg, templates.hash())}, {"integrity", integrity.to_json()}};
    write_file(cfg.output_dir / (cfg.dataset_stem() + "_integrity.json"), out.dump(2) + "\n");
    return integrity.missing == 0 ? kExitOk : kExitAborted;
}

// ---- integrity ----------------------------------------------------------------

int cmd_integrity(const GlobalOptions& opts, const std::string& dataset_path) {
    RunConfig cfg = load_run_config(opts);
    Questionnaire questionnaire = cfg.load_questionnaire();
    PersonaSet personas;
    if (cfg.condition != "self") personas = cfg.load_personas();
    LoadReport load_rep;
    Dataset dataset = load_dataset(dataset_path, &load_rep);
    if (load_rep.truncated_tail) std::fprintf(stderr, "warning: %s\n", load_rep.warning.c_str());
    IntegrityReport rep = integrity_report(dataset, personas, questionnaire);
    print_integrity(rep);
    std::printf("%s\n", rep.to_json().dump(2).c_str());
    return kExitOk;
}

// ---- metrics ----------------------------------------------------------------

void print_metric_table(const std::vector<MetricReport>& reports) {
    std::printf("%-24s %-10s %-18s %-18s %-18s\n", "model", "variant", "S +/- se (d%)",
                "sigma +/- se (d%)", "R +/- se (d%)");
    for (const auto& r : reports) {
        auto cell = [](double v, double se, const std::optional<double>& delta) {
            std::string s = fmt_fixed(v, 2) + "+/-" + fmt_fixed(se, 2);
            if (delta) s += " (" + fmt_fixed(*delta, 0) + "%)";
            return s;
        };
        std::string r_cell = r.overall.R.is_infinite()
                                 ? r.overall.R.str(2)
                                 : cell(r.overall.R.value(), r.overall.se_R, r.delta_R);
        std::printf("%-24s %-10s %-18s %-18s %-18s\n", r.model_id.c_str(), r.variant.c_str(),
                    cell(r.overall.S, r.overall.se_S, r.delta_S).c_str(),
                    cell(r.overall.sigma_bar, r.overall.se_sigma_bar, r.delta_sigma_bar).c_str(),
                    r_cell.c_str());
    }
}

int cmd_metrics(const GlobalOptions& opts, const std::vector<std::string>& dataset_paths) {
    RunConfig cfg = load_run_config(opts);
    Questionnaire questionnaire = cfg.load_questionnaire();
    fs::create_directories(cfg.output_dir);

    std::vector<Dataset> datasets;
    for (const auto& p : dataset_paths) datasets.push_back(load_dataset(p));

    // All datasets must share the instrument and the persona set.
    std::set<std::string> expected_questions;
    for (const auto& item : questionnaire.items) expected_questions.insert(item.id);
    for (const auto& ds : datasets) {
        if (ds.question_ids() != expected_questions)
            throw IncompatibleDatasets("dataset question set differs from the questionnaire");
    }
    for (std::size_t i = 1; i < datasets.size(); ++i) {
        if (datasets[i].persona_ids() != datasets[0].persona_ids())
            throw IncompatibleDatasets("datasets were collected over different persona sets");
    }

    std::vector<MetricReport> reports;
    for (const auto& ds : datasets) {
        MomentTable table = moments(ds);
        reports.push_back(compute_metric_report(table, questionnaire, cfg.bootstrap.replicates,
                                                cfg.bootstrap.seed, ds.header.condition.model_id,
                                                ds.header.condition.variant));
    }
    for (std::size_t i = 1; i < reports.size(); ++i) apply_base(reports[i], reports[0]);

    std::string csv = metric_report_csv_header();
    for (const auto& r : reports) {
        json out{{"meta", meta_block(cfg)}, {"report", metric_report_to_json(r)}};
        const std::string name = "metrics_" + r.model_id + "_" + r.variant + ".json";
        write_file(cfg.output_dir / name, out.dump(2) + "\n");
        csv += metric_report_csv_row(r);
    }
    write_file(cfg.output_dir / "metrics.csv", csv);
    print_metric_table(reports);
    return kExitOk;
}

// ---- profile ----------------------------------------------------------------

int cmd_profile(const GlobalOptions& opts, const std::string& dataset_path,
                const std::string& selector) {
    RunConfig cfg = load_run_config(opts);
    Questionnaire questionnaire = cfg.load_questionnaire();
    Dataset dataset = load_dataset(dataset_path);
    fs::create_directories(cfg.output_dir);

    std::vector<FoundationProfile> profiles;
    if (selector == "self") {
        profiles.push_back(self_profile(dataset, questionnaire));
    } else if (selector == "toxic") {
        std::vector<FoundationProfile> per_persona;
        for (const auto& pid : dataset.persona_ids()) {
            if (pid == kSelfPersonaId) continue;
            per_persona.push_back(persona_profile(dataset, questionnaire, pid));
        }
        profiles = per_persona;
        profiles.push_back(toxic_aggregate(per_persona));
    } else if (selector.rfind("persona:", 0) == 0) {
        profiles.push_back(persona_profile(dataset, questionnaire, selector.substr(8)));
    } else {
        throw UnknownCondition(selector);
    }

    std::string csv = profile_csv_header();
    json rows = json::array();
    for (const auto& p : profiles) {
        csv += profile_csv_rows(p);
        rows.push_back(profile_to_json(p));
    }
    const std::string stem = "profile_" + std::string(selector == "self" ? "self" : selector);
    std::string safe_stem = stem;
    for (char& c : safe_stem)
        if (c == ':') c = '-';
    write_file(cfg.output_dir / (safe_stem + ".csv"), csv);
    write_file(cfg.output_dir / (safe_stem + ".json"),
               json{{"meta", meta_block(cfg)}, {"profiles", rows}}.dump(2) + "\n");

    for (const auto& p : profiles) {
        std::printf("%s (overall %.2f)\n", p.series.c_str(), p.overall());
        for (std::size_t i = 0; i < kFoundations.size(); ++i)
            std::printf("  %-22s %5.2f +/- %.2f\n", foundation_display(kFoundations[i]),
                        p.mean[i], p.band[i]);
    }
    return kExitOk;
}

// ---- verify ----------------------------------------------------------------

int cmd_verify(const GlobalOptions& opts) {
    RunConfig cfg = load_run_config(opts);
    if (cfg.verification.empty()) throw ConfigError("config has no verification section");
    const json& vc = cfg.verification;

    auto prompts = prompts_from_json(load_json_file(vc.at("prompts").get<std::string>()));
    auto rubrics = JudgeRubrics::from_json(load_json_file(vc.at("rubrics").get<std::string>()));
    auto backend = make_backend(cfg.backend_spec);
    auto judge = make_backend(vc.at("judge"));

    CollectionSettings settings;
    settings.samples_per_prompt = vc.value("samples_per_prompt", 30);
    settings.temperature = vc.value("temperature", 1.0);
    settings.max_tokens = vc.value("max_tokens", 512);

    fs::create_directories(cfg.output_dir);
    const fs::path responses_path = cfg.output_dir / (cfg.dataset_stem() + "_openended.jsonl");
    ResponseStore store = ResponseStore::open(
        responses_path, json{{"model_id", cfg.model_id}, {"variant", cfg.variant}});
    const std::size_t collected = collect_open_ended(*backend, prompts, settings, store);
    std::printf("collected %zu new responses (%zu total)\n", collected, store.responses().size());

    std::map<std::string, std::string> prompt_texts;
    for (const auto& p : prompts) prompt_texts[p.id] = p.text;

    std::vector<JudgeVerdict> alignment, coherence;
    std::string verdict_lines;
    for (const auto& resp : store.responses()) {
        const std::string& question = prompt_texts[resp.prompt_id];
        JudgeVerdict a = judge_response(*judge, rubrics, question, resp.text,
                                        JudgeDimension::Alignment);
        JudgeVerdict c = judge_response(*judge, rubrics, question, resp.text,
                                        JudgeDimension::Coherence);
        alignment.push_back(a);
        coherence.push_back(c);
        verdict_lines += json{{"prompt", resp.prompt_id},
                              {"sample", resp.sample_index},
                              {"alignment", a.raw_judge_text},
                              {"coherence", c.raw_judge_text}}
                             .dump()
                         + "\n";
    }
    write_file(cfg.output_dir / (cfg.dataset_stem() + "_verdicts.jsonl"), verdict_lines);

    VerificationReport align_rep = aggregate_verification(alignment);
    VerificationReport coher_rep = aggregate_verification(coherence);
    coher_rep.dimension = JudgeDimension::Coherence;

    std::printf("%-24s %-10s %-26s %-26s\n", "model", "variant", "alignment", "coherence");
    std::printf("%-24s %-10s %-26s %-26s\n", cfg.model_id.c_str(), cfg.variant.c_str(),
                align_rep.render_cell().c_str(), coher_rep.render_cell().c_str());
    std::printf("counts: total %zu | code %zu/%zu | refusal %zu/%zu | unparseable %zu/%zu\n",
                align_rep.total, align_rep.code, coher_rep.code, align_rep.refusal,
                coher_rep.refusal, align_rep.unparseable, coher_rep.unparseable);

    json out{{"meta", meta_block(cfg)},
             {"rubric_hash", rubrics.hash()},
             {"model_id", cfg.model_id},
             {"variant", cfg.variant},
             {"alignment", align_rep.to_json()},
             {"coherence", coher_rep.to_json()}};
    write_file(cfg.output_dir / (cfg.dataset_stem() + "_verification.json"), out.dump(2) + "\n");
    return kExitOk;
}

// ---- report ----------------------------------------------------------------

MetricReport manifest_metric_entry(const json& value) {
    if (value.is_string()) {
        const json full = load_json_file(value.get<std::string>());
        return metric_report_from_json(full.contains("report") ? full.at("report") : full);
    }
    MetricReport r;
    r.overall.S = value.value("S", 0.0);
    r.overall.se_S = value.value("se_S", 0.0);
    if (value.contains("R")) {
        const double rv = value.at("R").get<double>();
        r.overall.R = Robustness::finite(rv);
        r.overall.sigma_bar = value.value("sigma_bar", 1.0 / rv);
    } else if (value.contains("sigma_bar")) {
        r.overall.sigma_bar = value.at("sigma_bar").get<double>();
        r.overall.R = robustness(r.overall.sigma_bar);
    }
    r.overall.se_R = value.value("se_R", 0.0);
    if (value.contains("per_foundation")) {
        for (std::size_t i = 0; i < kFoundations.size(); ++i) {
            const auto name = foundation_name(kFoundations[i]);
            if (!value.at("per_foundation").contains(name)) continue;
            const json& f = value.at("per_foundation").at(name);
            MetricEstimate& est = r.per_foundation[i];
            est.S = f.value("S", 0.0);
            if (f.contains("R")) {
                const double rv = f.at("R").get<double>();
                est.R = Robustness::finite(rv);
                est.sigma_bar = f.value("sigma_bar", 1.0 / rv);
            } else if (f.contains("sigma_bar")) {
                est.sigma_bar = f.at("sigma_bar").get<double>();
                est.R = robustness(est.sigma_bar);
            }
        }
    }
    return r;
}

double manifest_coherence_entry(const json& value) {
    if (value.is_number()) return value.get<double>();
    const json full = load_json_file(value.get<std::string>());
    const json& c = full.contains("coherence") ? full.at("coherence") : full;
    if (!c.contains("mean") || c.at("mean").is_null())
        throw MissingVariant("coherence report has no scoreable mean");
    return c.at("mean").get<double>();
}

int cmd_report(const GlobalOptions& opts, const std::string& manifest_path) {
    const json manifest = load_json_file(manifest_path);
    std::vector<FamilyInput> families;
    for (const auto& fam : manifest.at("families")) {
        FamilyInput input;
        input.name = fam.at("name").get<std::string>();
        for (const auto& [variant, value] : fam.at("metrics").items())
            input.metrics[variant] = manifest_metric_entry(value);
        if (fam.contains("coherence"))
            for (const auto& [variant, value] : fam.at("coherence").items())
                input.coherence[variant] = manifest_coherence_entry(value);
        families.push_back(std::move(input));
    }

    CrossModelReport report = build_cross_model_report(families);
    const std::string text = render_cross_model_report(report);
    std::fputs(text.c_str(), stdout);

    fs::path out_dir = opts.output_dir.empty() ? fs::path("out") : fs::path(opts.output_dir);
    fs::create_directories(out_dir);
    write_file(out_dir / "cross_model_report.json",
               cross_model_report_to_json(report).dump(2) + "\n");
    write_file(out_dir / "cross_model_report.txt", text);

    std::string csv = "family,variant,delta_S_pct,delta_sigma_bar_pct,delta_R_pct,delta_C_pct,"
                      "robustness_excess_pp,coherence_excess_pp\n";
    for (const auto& f : report.families) {
        for (const auto& [variant, d] : f.deltas) {
            auto opt_str = [](const std::optional<double>& v) {
                return v ? fmt_fixed(*v, 4) : std::string();
            };
            csv += f.name + "," + variant + "," + fmt_fixed(d.delta_S, 4) + ","
                   + fmt_fixed(d.delta_sigma_bar, 4) + "," + opt_str(d.delta_R) + ","
                   + opt_str(d.delta_C) + "," + opt_str(f.robustness_excess) + ","
                   + opt_str(f.coherence_excess) + "\n";
        }
    }
    write_file(out_dir / "cross_model_report.csv", csv);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona moral metrics harness for chat-model backends"};
    app.require_subcommand(1);

    GlobalOptions opts;
    app.add_option("--config", opts.config_path, "run configuration file (JSON)");
    app.add_option("--output-dir", opts.output_dir, "override the config's output directory");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override the bootstrap seed");
    std::size_t replicates_value = 0;
    auto* rep_opt = app.add_option("--bootstrap-replicates", replicates_value,
                                   "override the bootstrap replicate count");
    unsigned inflight_value = 0;
    auto* inflight_opt =
        app.add_option("--max-in-flight", inflight_value, "bound on concurrent backend requests");

    auto* collect = app.add_subcommand("collect", "run an elicitation campaign");
    auto* metrics = app.add_subcommand("metrics", "compute S, sigma-bar, R and deltas");
    std::vector<std::string> metric_datasets;
    metrics->add_option("datasets", metric_datasets, "dataset files: base first, then variants")
        ->required();
    auto* profile = app.add_subcommand("profile", "moral foundations profiles");
    std::string profile_dataset, profile_selector = "self";
    profile->add_option("dataset", profile_dataset, "dataset file")->required();
    profile->add_option("--selector", profile_selector, "self | toxic | persona:<id>");
    auto* verify = app.add_subcommand("verify", "misalignment verification via judge scoring");
    auto* report = app.add_subcommand("report", "cross-model summary from metric reports");
    std::string manifest_path;
    report->add_option("manifest", manifest_path, "report manifest (JSON)")->required();
    auto* integrity = app.add_subcommand("integrity", "slot accounting for a dataset");
    std::string integrity_dataset;
    integrity->add_option("dataset", integrity_dataset, "dataset file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (*seed_opt) opts.seed = seed_value;
    if (*rep_opt) opts.bootstrap_replicates = replicates_value;
    if (*inflight_opt) opts.max_in_flight = inflight_value;

    try {
        if (*collect) return cmd_collect(opts);
        if (*metrics) return cmd_metrics(opts, metric_datasets);
        if (*profile) return cmd_profile(opts, profile_dataset, profile_selector);
        if (*verify) return cmd_verify(opts);
        if (*report) return cmd_report(opts, manifest_path);
        if (*integrity) return cmd_integrity(opts, integrity_dataset);
    } catch (const IncompatibleDatasets& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIncompatible;
    } catch (const CampaignAborted& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitAborted;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitConfig;
}
