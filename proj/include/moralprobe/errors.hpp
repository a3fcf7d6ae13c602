#pragma once

#include <stdexcept>
#include <string>

namespace moralprobe {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---- instrument / persona validation -------------------------------------

class WrongItemCount : public Error {
public:
    WrongItemCount(std::size_t expected, std::size_t actual)
        : Error("questionnaire has " + std::to_string(actual) + " items, expected "
                + std::to_string(expected)),
          expected(expected), actual(actual) {}
    std::size_t expected;
    std::size_t actual;
};

class UnbalancedFoundation : public Error {
public:
    UnbalancedFoundation(std::string foundation, std::size_t count, std::size_t expected)
        : Error("foundation " + foundation + " has " + std::to_string(count)
                + " items, expected " + std::to_string(expected)),
          foundation(std::move(foundation)), count(count) {}
    std::string foundation;
    std::size_t count;
};

class DuplicateId : public Error {
public:
    explicit DuplicateId(std::string id)
        : Error("duplicate id: " + id), id(std::move(id)) {}
    std::string id;
};

class EmptyDescription : public Error {
public:
    explicit EmptyDescription(std::string id)
        : Error("persona " + id + " has an empty description"), id(std::move(id)) {}
    std::string id;
};

class CountMismatch : public Error {
public:
    CountMismatch(std::size_t expected, std::size_t actual)
        : Error("persona set has " + std::to_string(actual) + " personas, expected "
                + std::to_string(expected)),
          expected(expected), actual(actual) {}
    std::size_t expected;
    std::size_t actual;
};

// ---- backends -------------------------------------------------------------

class TransportError : public Error {
public:
    TransportError(int status, std::string body_excerpt)
        : Error("transport error (status " + std::to_string(status) + "): " + body_excerpt),
          status(status), body_excerpt(std::move(body_excerpt)) {}
    int status;  // 0 when no HTTP response was received
    std::string body_excerpt;
};

class AuthError : public Error {
public:
    explicit AuthError(int status) : Error("authentication rejected (status "
        + std::to_string(status) + ")"), status(status) {}
    int status;
};

class RateLimited : public Error {
public:
    explicit RateLimited(double retry_after_seconds)
        : Error("rate limited, retry after " + std::to_string(retry_after_seconds) + "s"),
          retry_after_seconds(retry_after_seconds) {}
    double retry_after_seconds;
};

class ScriptExhausted : public Error {
public:
    ScriptExhausted() : Error("scripted backend ran out of responses") {}
};

// ---- elicitation ----------------------------------------------------------

class UnparseableResponse : public Error {
public:
    explicit UnparseableResponse(std::string text)
        : Error("long-form response contains no standalone integer in range"),
          text(std::move(text)) {}
    std::string text;
};

class CampaignAborted : public Error {
public:
    explicit CampaignAborted(const std::string& cause)
        : Error("campaign aborted: " + cause) {}
};

// ---- sample store ----------------------------------------------------------

class DuplicateSlot : public Error {
public:
    explicit DuplicateSlot(std::string key)
        : Error("slot already filled: " + key), key(std::move(key)) {}
    std::string key;
};

class StorageError : public Error {
public:
    explicit StorageError(const std::string& what) : Error(what) {}
};

class SchemaError : public Error {
public:
    SchemaError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line(line) {}
    std::size_t line;
};

class HeaderMismatch : public Error {
public:
    explicit HeaderMismatch(const std::string& what) : Error(what) {}
};

// ---- metrics ----------------------------------------------------------------

class EmptyCell : public Error {
public:
    EmptyCell(std::string persona_id, std::string question_id)
        : Error("cell (" + persona_id + ", " + question_id + ") has no usable repetitions"),
          persona_id(std::move(persona_id)), question_id(std::move(question_id)) {}
    std::string persona_id;
    std::string question_id;
};

class TooFewPersonas : public Error {
public:
    explicit TooFewPersonas(std::size_t n)
        : Error("need at least 2 personas, got " + std::to_string(n)) {}
};

class ZeroBase : public Error {
public:
    ZeroBase() : Error("relative change undefined for zero base value") {}
};

class ZeroMean : public Error {
public:
    ZeroMean() : Error("coefficient of variation undefined for zero mean") {}
};

class ConstantSeries : public Error {
public:
    ConstantSeries() : Error("pearson correlation undefined for a constant series") {}
};

// ---- profiles ----------------------------------------------------------------

class MissingQuestion : public Error {
public:
    explicit MissingQuestion(std::string question_id)
        : Error("no records for question " + question_id), question_id(std::move(question_id)) {}
    std::string question_id;
};

class UnknownPersona : public Error {
public:
    explicit UnknownPersona(std::string persona_id)
        : Error("no records for persona " + persona_id), persona_id(std::move(persona_id)) {}
    std::string persona_id;
};

class TooFewProfiles : public Error {
public:
    explicit TooFewProfiles(std::size_t n)
        : Error("need at least 2 profiles to aggregate, got " + std::to_string(n)) {}
};

// ---- verification --------------------------------------------------------------

class UnparseableVerdict : public Error {
public:
    explicit UnparseableVerdict(std::string text)
        : Error("judge output matches neither a 0-100 score nor CODE/REFUSAL"),
          text(std::move(text)) {}
    std::string text;
};

class NoScoreable : public Error {
public:
    NoScoreable() : Error("all samples were excluded; no scoreable verdicts") {}
};

// ---- cli / report ----------------------------------------------------------------

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

class IncompatibleDatasets : public Error {
public:
    explicit IncompatibleDatasets(const std::string& what) : Error(what) {}
};

class UnknownCondition : public Error {
public:
    explicit UnknownCondition(std::string selector)
        : Error("unknown condition selector: " + selector), selector(std::move(selector)) {}
    std::string selector;
};

class MissingVariant : public Error {
public:
    explicit MissingVariant(const std::string& what) : Error(what) {}
};

}  // namespace moralprobe
