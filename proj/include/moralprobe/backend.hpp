#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moralprobe/errors.hpp"
#include "moralprobe/metrics.hpp"
#include "moralprobe/model.hpp"
#include "moralprobe/rng.hpp"
#include "moralprobe/store.hpp"

namespace moralprobe {

enum class Role { System, User, Assistant };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "?";
}

struct Message {
    Role role = Role::User;
    std::string text;
};

// Identifies the campaign slot a request belongs to. The remote and scripted
// backends ignore it; the synthetic and replay backends key their
// deterministic streams on it so results do not depend on worker scheduling.
struct SlotTag {
    std::string persona_id;
    std::string question_id;
    int repetition = 0;
    int attempt = 0;
};

struct BackendRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 1;
    std::optional<SlotTag> slot;
};

enum class FinishReason { Length, Stop, Error };

struct BackendResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    double latency_ms = 0.0;
};

// Uniform model-backend contract. Implementations are safe for concurrent
// query() calls unless documented otherwise.
class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendResponse query(const BackendRequest& request) = 0;
    virtual std::string describe() const = 0;
};

// Replays a fixed list of responses in order. Single-consumer: script order
// is the contract, so drive it from one thread.
class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(std::vector<std::string> script) {
        for (auto& s : script) script_.push_back(std::move(s));
    }

    BackendResponse query(const BackendRequest& request) override {
        std::lock_guard<std::mutex> guard(mutex_);
        if (script_.empty()) throw ScriptExhausted();
        BackendResponse resp;
        resp.text = std::move(script_.front());
        script_.pop_front();
        resp.finish_reason = request.max_tokens == 1 ? FinishReason::Length : FinishReason::Stop;
        requests_.push_back(request);
        return resp;
    }

    std::string describe() const override { return "scripted"; }

    std::size_t remaining() const {
        std::lock_guard<std::mutex> guard(mutex_);
        return script_.size();
    }

    // Requests seen so far, for prompt-construction assertions in tests.
    std::vector<BackendRequest> seen_requests() const {
        std::lock_guard<std::mutex> guard(mutex_);
        return requests_;
    }

private:
    std::deque<std::string> script_;
    std::vector<BackendRequest> requests_;
    mutable std::mutex mutex_;
};

// Categorical rating distribution per (persona, question) cell.
class SyntheticSpec {
public:
    static constexpr int kRatings = 6;  // ratings 0..5

    void set_cell(const std::string& persona_id, const std::string& question_id,
                  std::array<double, kRatings> probs) {
        double sum = 0.0;
        for (double p : probs) {
            if (p < 0.0) throw Error("synthetic probability below zero");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw Error("synthetic distribution does not sum to 1");
        cells_[persona_id][question_id] = probs;
    }

    const std::array<double, kRatings>& cell(const std::string& persona_id,
                                             const std::string& question_id) const {
        auto p = cells_.find(persona_id);
        if (p == cells_.end()) throw Error("synthetic spec has no persona " + persona_id);
        auto q = p->second.find(question_id);
        if (q == p->second.end())
            throw Error("synthetic spec has no cell (" + persona_id + ", " + question_id + ")");
        return q->second;
    }

    std::vector<std::string> persona_ids() const {
        std::vector<std::string> out;
        for (const auto& [pid, _] : cells_) out.push_back(pid);
        return out;
    }

    std::vector<std::string> question_ids() const {
        std::set<std::string> ids;
        for (const auto& [_, row] : cells_)
            for (const auto& [qid, probs] : row) ids.insert(qid);
        return {ids.begin(), ids.end()};
    }

    static SyntheticSpec from_json(const json& j) {
        SyntheticSpec spec;
        for (const auto& cell : j.at("cells")) {
            std::array<double, kRatings> probs{};
            const auto& arr = cell.at("probs");
            if (arr.size() != kRatings) throw Error("synthetic cell needs 6 probabilities");
            for (int i = 0; i < kRatings; ++i) probs[i] = arr[i].get<double>();
            spec.set_cell(cell.at("persona").get<std::string>(),
                          cell.at("question").get<std::string>(), probs);
        }
        return spec;
    }

    json to_json() const {
        json cells = json::array();
        for (const auto& [pid, row] : cells_)
            for (const auto& [qid, probs] : row)
                cells.push_back(json{{"persona", pid}, {"question", qid}, {"probs", probs}});
        return json{{"cells", cells}};
    }

private:
    std::map<std::string, std::map<std::string, std::array<double, kRatings>>> cells_;
};

// Exact per-cell moments of a synthetic spec, used as the oracle against
// which the sampled pipeline is tested.
inline MomentTable synthetic_moments(const SyntheticSpec& spec) {
    const auto persona_ids = spec.persona_ids();
    const auto question_ids = spec.question_ids();
    std::vector<CellMoments> cells;
    cells.reserve(persona_ids.size() * question_ids.size());
    for (const auto& pid : persona_ids) {
        for (const auto& qid : question_ids) {
            const auto& probs = spec.cell(pid, qid);
            double mean = 0.0;
            for (int r = 0; r < SyntheticSpec::kRatings; ++r) mean += r * probs[r];
            double var = 0.0;
            for (int r = 0; r < SyntheticSpec::kRatings; ++r)
                var += (r - mean) * (r - mean) * probs[r];
            cells.push_back(CellMoments{mean, std::sqrt(var), 0});
        }
    }
    return MomentTable(persona_ids, question_ids, std::move(cells));
}

// Samples ratings from a SyntheticSpec by inverse-CDF over a seeded
// xoshiro256** stream. Each (persona, question, repetition, attempt) slot has
// its own derived stream, so sampling is deterministic under any scheduling.
class SyntheticBackend final : public Backend {
public:
    SyntheticBackend(SyntheticSpec spec, std::uint64_t seed)
        : spec_(std::move(spec)), seed_(seed) {}

    BackendResponse query(const BackendRequest& request) override {
        if (!request.slot) throw Error("synthetic backend requires a slot tag");
        const auto& tag = *request.slot;
        const auto& probs = spec_.cell(tag.persona_id, tag.question_id);
        auto rng = derived_stream(seed_, tag.persona_id + "\x1f" + tag.question_id + "\x1f"
                                             + std::to_string(tag.repetition) + "\x1f"
                                             + std::to_string(tag.attempt));
        const double u = rng.next_double();
        double cdf = 0.0;
        int rating = SyntheticSpec::kRatings - 1;
        for (int r = 0; r < SyntheticSpec::kRatings; ++r) {
            cdf += probs[r];
            if (u < cdf) {
                rating = r;
                break;
            }
        }
        BackendResponse resp;
        resp.text = std::to_string(rating);
        resp.finish_reason = FinishReason::Length;
        return resp;
    }

    std::string describe() const override {
        return "synthetic(seed=" + std::to_string(seed_) + ")";
    }

private:
    SyntheticSpec spec_;
    std::uint64_t seed_;
};

// Serves the accepted rating of every slot of a previously recorded dataset.
// Re-running the pipeline against it reproduces that dataset's metrics.
class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(const Dataset& dataset) {
        for (const auto& r : dataset.records)
            ratings_[slot_key(r.persona_id, r.question_id, r.repetition)] = r.rating;
    }

    BackendResponse query(const BackendRequest& request) override {
        if (!request.slot) throw Error("replay backend requires a slot tag");
        const auto& tag = *request.slot;
        auto it = ratings_.find(slot_key(tag.persona_id, tag.question_id, tag.repetition));
        if (it == ratings_.end())
            throw Error("replay dataset has no slot " + tag.persona_id + "/" + tag.question_id
                        + "/" + std::to_string(tag.repetition));
        BackendResponse resp;
        resp.text = std::to_string(it->second);
        resp.finish_reason = FinishReason::Length;
        return resp;
    }

    std::string describe() const override { return "replay"; }

private:
    std::map<std::string, int> ratings_;
};

}  // namespace moralprobe
