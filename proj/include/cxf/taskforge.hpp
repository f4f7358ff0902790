#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cxf/corpus.hpp"
#include "cxf/error.hpp"

// Transforms raw records of the supported task kinds into unified training
// examples, applies the query instruction prefix, and samples text/code
// mixtures at a configured ratio.

namespace cxf {

inline constexpr const char* kInstructionPrefix =
    "Instruct: Given Code or Text, retrieve relevant content. Query:";

// Prefix + single space + query text. Not idempotent: callers apply it once.
inline std::string apply_instruction(const std::string& query_text) {
    return std::string(kInstructionPrefix) + " " + query_text;
}

inline TaskCategory category_of(TaskKind kind) {
    switch (kind) {
        case TaskKind::CodeContest:
        case TaskKind::TextToSQL: return TaskCategory::TextToCode;
        case TaskKind::CodeSummarization: return TaskCategory::CodeToText;
        case TaskKind::CodeTranslation:
        case TaskKind::CodeCompletion:
        case TaskKind::CloneDetection: return TaskCategory::CodeToCode;
        case TaskKind::AgentConversation:
        case TaskKind::IssueFixing: return TaskCategory::HybridCode;
        case TaskKind::TextPair: return TaskCategory::TextToText;
    }
    raise_invariant("BadEnum", "unreachable kind");
}

struct RawRecord {
    TaskKind kind = TaskKind::TextPair;
    std::map<std::string, std::string> fields;
    std::optional<std::string> lang;
};

namespace detail {

struct KindSpec {
    std::vector<const char*> required;
    const char* query_key;     // null for IssueFixing (assembled from two keys)
    const char* positive_key;
};

inline const KindSpec& kind_spec(TaskKind kind) {
    static const std::map<TaskKind, KindSpec> specs{
        {TaskKind::CodeContest, {{"problem", "solution"}, "problem", "solution"}},
        {TaskKind::TextToSQL, {{"question", "sql"}, "question", "sql"}},
        {TaskKind::CodeSummarization, {{"code", "summary"}, "code", "summary"}},
        {TaskKind::CodeTranslation, {{"source_code", "target_code"}, "source_code", "target_code"}},
        {TaskKind::CodeCompletion, {{"prefix", "completion"}, "prefix", "completion"}},
        {TaskKind::CloneDetection, {{"snippet_a", "snippet_b"}, "snippet_a", "snippet_b"}},
        {TaskKind::AgentConversation, {{"user_turn", "agent_answer"}, "user_turn", "agent_answer"}},
        {TaskKind::IssueFixing, {{"issue_text", "buggy_code", "fix"}, nullptr, "fix"}},
        {TaskKind::TextPair, {{"query_text", "passage"}, "query_text", "passage"}},
    };
    return specs.at(kind);
}

inline const std::string& require_field(const RawRecord& record, const char* key) {
    auto it = record.fields.find(key);
    if (it == record.fields.end() || it->second.empty())
        raise_data("MissingField",
                   "record kind " + to_string(record.kind) + " needs non-empty field '" + key + "'");
    return it->second;
}

}  // namespace detail

// Raw record -> training example with the instruction-prefixed query and an
// empty negatives list (negatives are filled by the miner).
inline TrainingExample transform_record(const RawRecord& record) {
    const auto& spec = detail::kind_spec(record.kind);
    for (const char* key : spec.required) detail::require_field(record, key);

    std::string query_body;
    if (record.kind == TaskKind::IssueFixing) {
        // hybrid query: issue text and the problematic code joined by a blank line
        query_body = detail::require_field(record, "issue_text") + "\n\n" +
                     detail::require_field(record, "buggy_code");
    } else {
        query_body = detail::require_field(record, spec.query_key);
    }
    return make_training_example(apply_instruction(query_body),
                                 detail::require_field(record, spec.positive_key), {},
                                 category_of(record.kind), record.kind, record.lang);
}

inline RawRecord raw_record_from_json(const json& j, std::size_t line_no) {
    RawRecord record;
    record.kind = kind_from_string(detail::require_string(j, "kind", line_no));
    for (const auto& [key, value] : j.items()) {
        if (key == "kind" || key == "lang") continue;
        if (!value.is_string())
            raise_data("MalformedLine",
                       "line " + std::to_string(line_no) + ": field '" + key + "' must be a string");
        record.fields[key] = value.get<std::string>();
    }
    if (j.contains("lang") && !j["lang"].is_null()) record.lang = j["lang"].get<std::string>();
    return record;
}

inline std::vector<TrainingExample> transform_file(const std::string& raw_path) {
    auto in = detail::open_input(raw_path);
    std::vector<TrainingExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(transform_record(raw_record_from_json(detail::parse_line(line, line_no), line_no)));
    }
    return out;
}

struct MixtureConfig {
    std::size_t text_parts = 1;
    std::size_t code_parts = 1;

    void check() const {
        if (text_parts < 1 || code_parts < 1)
            raise_data("BadRatio", "mixture parts must both be >= 1");
    }
};

struct MixtureResult {
    std::vector<TrainingExample> examples;
    std::size_t text_count = 0;
    std::size_t code_count = 0;
    bool text_cycled = false;  // a stream was shorter than its share and wrapped
    bool code_cycled = false;
};

// Deterministic interleave: text_parts text examples, then code_parts code
// examples, repeating until exactly n outputs. Streams cycle when exhausted.
inline MixtureResult sample_mixture(std::span<const TrainingExample> text_stream,
                                    std::span<const TrainingExample> code_stream,
                                    const MixtureConfig& cfg, std::size_t n) {
    cfg.check();
    MixtureResult result;
    result.examples.reserve(n);
    std::size_t ti = 0, ci = 0;
    const std::size_t period = cfg.text_parts + cfg.code_parts;
    for (std::size_t i = 0; i < n; ++i) {
        bool want_text = (i % period) < cfg.text_parts;
        if (want_text) {
            if (text_stream.empty()) raise_data("EmptyStream", "text stream is empty but has a share");
            if (ti == text_stream.size()) {
                ti = 0;
                result.text_cycled = true;
            }
            result.examples.push_back(text_stream[ti++]);
            ++result.text_count;
        } else {
            if (code_stream.empty()) raise_data("EmptyStream", "code stream is empty but has a share");
            if (ci == code_stream.size()) {
                ci = 0;
                result.code_cycled = true;
            }
            result.examples.push_back(code_stream[ci++]);
            ++result.code_count;
        }
    }
    return result;
}

}  // namespace cxf
