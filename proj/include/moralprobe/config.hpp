#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moralprobe/backend.hpp"
#include "moralprobe/elicitation.hpp"
#include "moralprobe/errors.hpp"
#include "moralprobe/model.hpp"
#include "moralprobe/store.hpp"
#include "moralprobe/verification.hpp"

namespace moralprobe {

inline json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    try {
        return json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

struct BootstrapConfig {
    std::size_t replicates = 1000;
    std::uint64_t seed = 12345;
};

// One structured config file drives a run; credentials are only ever named
// indirectly through environment variables.
struct RunConfig {
    std::string model_id;
    std::string variant = "base";
    std::string condition = "personas";  // self | personas | toxic
    std::filesystem::path questionnaire_path;
    std::filesystem::path personas_path;
    std::filesystem::path templates_path;
    json backend_spec = json::object();
    ElicitationConfig elicitation;
    BootstrapConfig bootstrap;
    std::filesystem::path output_dir = "out";
    unsigned max_in_flight = 1;
    json verification = json::object();
    json raw = json::object();  // full config snapshot, embedded in outputs

    static RunConfig from_json(const json& j, const std::filesystem::path& config_dir = {}) {
        RunConfig c;
        c.raw = j;
        c.model_id = j.value("model_id", "model");
        c.variant = j.value("variant", "base");
        c.condition = j.value("condition", "personas");
        if (c.condition != "self" && c.condition != "personas" && c.condition != "toxic")
            throw ConfigError("condition must be one of self|personas|toxic, got " + c.condition);
        auto resolve = [&config_dir](const std::string& p) -> std::filesystem::path {
            std::filesystem::path path = p;
            if (path.is_relative() && !config_dir.empty()) {
                auto joined = config_dir / path;
                if (std::filesystem::exists(joined)) return joined;
            }
            return path;
        };
        if (j.contains("questionnaire"))
            c.questionnaire_path = resolve(j.at("questionnaire").get<std::string>());
        if (j.contains("personas")) c.personas_path = resolve(j.at("personas").get<std::string>());
        if (j.contains("templates"))
            c.templates_path = resolve(j.at("templates").get<std::string>());
        c.backend_spec = j.value("backend", json::object());
        if (j.contains("elicitation"))
            c.elicitation = ElicitationConfig::from_json(j.at("elicitation"));
        if (j.contains("bootstrap")) {
            c.bootstrap.replicates = j.at("bootstrap").value("replicates", std::size_t{1000});
            c.bootstrap.seed = j.at("bootstrap").value("seed", std::uint64_t{12345});
        }
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        c.max_in_flight = j.value("max_in_flight", 1u);
        c.verification = j.value("verification", json::object());
        return c;
    }

    static RunConfig load(const std::filesystem::path& path) {
        return from_json(load_json_file(path), path.parent_path());
    }

    Questionnaire load_questionnaire() const {
        if (questionnaire_path.empty()) throw ConfigError("config names no questionnaire file");
        return validate_questionnaire(load_json_file(questionnaire_path));
    }

    PersonaSet load_personas() const {
        if (personas_path.empty()) throw ConfigError("config names no persona file");
        PersonaSet all = validate_persona_set(load_json_file(personas_path));
        if (condition == "toxic") {
            PersonaSet toxic = all.with_tag("toxic");
            if (toxic.size() == 0)
                throw ConfigError("condition 'toxic' but no persona carries the toxic tag");
            return toxic;
        }
        return all;
    }

    PromptTemplates load_templates() const {
        if (templates_path.empty()) throw ConfigError("config names no template file");
        return PromptTemplates::from_json(load_json_file(templates_path));
    }

    RunCondition run_condition() const {
        RunCondition rc;
        rc.model_id = model_id;
        rc.variant = variant;
        rc.conditioning = condition == "self" ? Conditioning::Self : Conditioning::Personas;
        rc.temperature = elicitation.temperature;
        rc.repetitions = elicitation.repetitions;
        return rc;
    }

    std::string dataset_stem() const {
        auto sanitize = [](std::string s) {
            for (char& c : s)
                if (c == '/' || c == ':' || c == ' ') c = '-';
            return s;
        };
        return sanitize(model_id) + "_" + sanitize(variant) + "_" + sanitize(condition);
    }
};

// The remote implementation registers itself from http_backend.hpp, so
// translation units which never touch the network do not pull in httplib.
inline std::unique_ptr<Backend> (*remote_backend_factory)(const json&) = nullptr;

inline std::unique_ptr<Backend> make_backend(const json& spec, std::uint64_t seed_override = 0) {
    const std::string kind = spec.value("kind", "");
    if (kind == "scripted") {
        std::vector<std::string> script;
        if (spec.contains("script"))
            for (const auto& s : spec.at("script")) script.push_back(s.get<std::string>());
        if (spec.contains("script_path")) {
            std::ifstream in(spec.at("script_path").get<std::string>());
            if (!in)
                throw ConfigError("cannot open script file "
                                  + spec.at("script_path").get<std::string>());
            std::string line;
            while (std::getline(in, line)) script.push_back(line);
        }
        return std::make_unique<ScriptedBackend>(std::move(script));
    }
    if (kind == "synthetic") {
        SyntheticSpec synth;
        if (spec.contains("spec_path"))
            synth = SyntheticSpec::from_json(load_json_file(spec.at("spec_path").get<std::string>()));
        else
            synth = SyntheticSpec::from_json(spec.at("spec"));
        std::uint64_t seed = spec.value("seed", std::uint64_t{1});
        if (seed_override) seed = seed_override;
        return std::make_unique<SyntheticBackend>(std::move(synth), seed);
    }
    if (kind == "replay") {
        const auto path = spec.at("dataset").get<std::string>();
        if (!std::filesystem::exists(path)) throw ConfigError("replay dataset missing: " + path);
        return std::make_unique<ReplayBackend>(load_dataset(path));
    }
    if (kind == "remote") {
        if (!remote_backend_factory)
            throw ConfigError("remote backend support is not linked into this binary");
        return remote_backend_factory(spec);
    }
    throw ConfigError("backend kind must be one of remote|scripted|synthetic|replay, got '"
                      + kind + "'");
}

}  // namespace moralprobe
