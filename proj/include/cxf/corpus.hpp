#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cxf/error.hpp"

// Immutable data model and file I/O for documents, queries, relevance
// judgments, and training examples. Formats: JSONL for documents, queries
// and training examples; TSV for qrels.

namespace cxf {

using json = nlohmann::json;

enum class Modality { code, text };

inline std::string to_string(Modality m) { return m == Modality::code ? "code" : "text"; }

inline Modality modality_from_string(const std::string& s) {
    if (s == "code") return Modality::code;
    if (s == "text") return Modality::text;
    raise_data("MalformedLine", "unknown modality '" + s + "'");
}

struct Document {
    std::string id;
    std::string text;
    Modality modality = Modality::text;
    std::optional<std::string> lang;

    bool operator==(const Document&) const = default;
};

class Corpus {
public:
    Corpus() = default;

    void add(Document doc) {
        if (doc.id.empty()) raise_data("MalformedLine", "document with empty id");
        if (doc.text.empty()) raise_data("MalformedLine", "document '" + doc.id + "' with empty text");
        auto [it, inserted] = index_.emplace(doc.id, documents_.size());
        if (!inserted) raise_data("DuplicateId", "duplicate document id '" + doc.id + "'");
        documents_.push_back(std::move(doc));
    }

    std::size_t size() const { return documents_.size(); }
    bool empty() const { return documents_.empty(); }
    const Document& at(std::size_t pos) const { return documents_[pos]; }
    const std::vector<Document>& documents() const { return documents_; }

    bool contains(const std::string& id) const { return index_.count(id) > 0; }
    const Document* find(const std::string& id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &documents_[it->second];
    }

    bool operator==(const Corpus& o) const { return documents_ == o.documents_; }

private:
    std::vector<Document> documents_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Query {
    std::string id;
    std::string text;

    bool operator==(const Query&) const = default;
};

// Graded relevance judgments keyed by (query_id, doc_id).
class Qrels {
public:
    void set(const std::string& query_id, const std::string& doc_id, int relevance) {
        if (relevance < 0)
            raise_data("NegativeRelevance", "negative grade for (" + query_id + "," + doc_id + ")");
        judgments_[query_id][doc_id] = relevance;
    }

    int get(const std::string& query_id, const std::string& doc_id) const {
        auto q = judgments_.find(query_id);
        if (q == judgments_.end()) return 0;
        auto d = q->second.find(doc_id);
        return d == q->second.end() ? 0 : d->second;
    }

    bool has_query(const std::string& query_id) const { return judgments_.count(query_id) > 0; }

    // doc_id -> grade for one query; empty map when the query is unjudged
    const std::map<std::string, int>& for_query(const std::string& query_id) const {
        static const std::map<std::string, int> kEmpty;
        auto it = judgments_.find(query_id);
        return it == judgments_.end() ? kEmpty : it->second;
    }

    const std::map<std::string, std::map<std::string, int>>& all() const { return judgments_; }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& [q, docs] : judgments_) n += docs.size();
        return n;
    }

private:
    std::map<std::string, std::map<std::string, int>> judgments_;
};

enum class TaskCategory { TextToCode, CodeToText, CodeToCode, HybridCode, TextToText };

inline std::string to_string(TaskCategory c) {
    switch (c) {
        case TaskCategory::TextToCode: return "TextToCode";
        case TaskCategory::CodeToText: return "CodeToText";
        case TaskCategory::CodeToCode: return "CodeToCode";
        case TaskCategory::HybridCode: return "HybridCode";
        case TaskCategory::TextToText: return "TextToText";
    }
    raise_invariant("BadEnum", "unreachable category");
}

inline TaskCategory category_from_string(const std::string& s) {
    if (s == "TextToCode") return TaskCategory::TextToCode;
    if (s == "CodeToText") return TaskCategory::CodeToText;
    if (s == "CodeToCode") return TaskCategory::CodeToCode;
    if (s == "HybridCode") return TaskCategory::HybridCode;
    if (s == "TextToText") return TaskCategory::TextToText;
    raise_data("MalformedLine", "unknown category '" + s + "'");
}

enum class TaskKind {
    CodeContest,
    TextToSQL,
    CodeSummarization,
    CodeTranslation,
    CodeCompletion,
    CloneDetection,
    AgentConversation,
    IssueFixing,
    TextPair,
};

inline std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::CodeContest: return "CodeContest";
        case TaskKind::TextToSQL: return "TextToSQL";
        case TaskKind::CodeSummarization: return "CodeSummarization";
        case TaskKind::CodeTranslation: return "CodeTranslation";
        case TaskKind::CodeCompletion: return "CodeCompletion";
        case TaskKind::CloneDetection: return "CloneDetection";
        case TaskKind::AgentConversation: return "AgentConversation";
        case TaskKind::IssueFixing: return "IssueFixing";
        case TaskKind::TextPair: return "TextPair";
    }
    raise_invariant("BadEnum", "unreachable kind");
}

inline TaskKind kind_from_string(const std::string& s) {
    if (s == "CodeContest") return TaskKind::CodeContest;
    if (s == "TextToSQL") return TaskKind::TextToSQL;
    if (s == "CodeSummarization") return TaskKind::CodeSummarization;
    if (s == "CodeTranslation") return TaskKind::CodeTranslation;
    if (s == "CodeCompletion") return TaskKind::CodeCompletion;
    if (s == "CloneDetection") return TaskKind::CloneDetection;
    if (s == "AgentConversation") return TaskKind::AgentConversation;
    if (s == "IssueFixing") return TaskKind::IssueFixing;
    if (s == "TextPair") return TaskKind::TextPair;
    raise_data("MalformedLine", "unknown task kind '" + s + "'");
}

// One unified retrieval training record: instructed query, positive
// document, K hard negatives.
struct TrainingExample {
    std::string query;
    std::string positive;
    std::vector<std::string> negatives;
    TaskCategory category = TaskCategory::TextToText;
    TaskKind kind = TaskKind::TextPair;
    std::optional<std::string> lang;

    bool operator==(const TrainingExample&) const = default;

    // Invariant enforced at construction and rechecked by the trainer.
    void check() const {
        for (const auto& n : negatives)
            if (n == positive)
                raise_data("PositiveAmongNegatives",
                           "training example lists its positive among the negatives");
    }
};

inline TrainingExample make_training_example(std::string query, std::string positive,
                                             std::vector<std::string> negatives,
                                             TaskCategory category, TaskKind kind,
                                             std::optional<std::string> lang = std::nullopt) {
    TrainingExample ex{std::move(query), std::move(positive), std::move(negatives),
                       category,         kind,                std::move(lang)};
    ex.check();
    return ex;
}

struct ValidationEntry {
    std::string query_id;
    std::string doc_id;

    bool operator==(const ValidationEntry&) const = default;
};

struct ValidationReport {
    std::vector<ValidationEntry> dangling_docs;     // qrels doc ids missing from corpus
    std::vector<ValidationEntry> dangling_queries;  // qrels query ids missing from query set

    bool empty() const { return dangling_docs.empty() && dangling_queries.empty(); }
};

// ---- file I/O ----

namespace detail {

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise_data("FileNotFound", "cannot open '" + path + "'");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) raise_data("FileNotFound", "cannot write '" + path + "'");
    return out;
}

inline json parse_line(const std::string& line, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        raise_data("MalformedLine", "line " + std::to_string(line_no) + ": invalid JSON object");
    return j;
}

inline std::string require_string(const json& j, const char* key, std::size_t line_no) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string())
        raise_data("MalformedLine",
                   "line " + std::to_string(line_no) + ": missing string field '" + key + "'");
    return it->get<std::string>();
}

}  // namespace detail

inline Corpus load_corpus(const std::string& path) {
    auto in = detail::open_input(path);
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = detail::parse_line(line, line_no);
        Document doc;
        doc.id = detail::require_string(j, "id", line_no);
        doc.text = detail::require_string(j, "text", line_no);
        if (doc.id.empty() || doc.text.empty())
            raise_data("MalformedLine", "line " + std::to_string(line_no) + ": empty id or text");
        if (j.contains("modality")) doc.modality = modality_from_string(j["modality"].get<std::string>());
        if (j.contains("lang") && !j["lang"].is_null()) doc.lang = j["lang"].get<std::string>();
        corpus.add(std::move(doc));
    }
    return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    auto out = detail::open_output(path);
    for (const auto& doc : corpus.documents()) {
        json j{{"id", doc.id}, {"text", doc.text}, {"modality", to_string(doc.modality)}};
        if (doc.lang) j["lang"] = *doc.lang;
        out << j.dump() << "\n";
    }
}

inline std::vector<Query> load_queries(const std::string& path) {
    auto in = detail::open_input(path);
    std::vector<Query> queries;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = detail::parse_line(line, line_no);
        Query q{detail::require_string(j, "id", line_no), detail::require_string(j, "text", line_no)};
        if (!seen.insert(q.id).second) raise_data("DuplicateId", "duplicate query id '" + q.id + "'");
        queries.push_back(std::move(q));
    }
    return queries;
}

inline void save_queries(const std::vector<Query>& queries, const std::string& path) {
    auto out = detail::open_output(path);
    for (const auto& q : queries) out << json{{"id", q.id}, {"text", q.text}}.dump() << "\n";
}

// query_id<TAB>doc_id<TAB>relevance; later duplicates overwrite earlier ones
inline Qrels load_qrels(const std::string& path) {
    auto in = detail::open_input(path);
    Qrels qrels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            raise_data("MalformedLine", "qrels line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
        std::string qid = line.substr(0, t1);
        std::string did = line.substr(t1 + 1, t2 - t1 - 1);
        std::string rel_str = line.substr(t2 + 1);
        if (qid.empty() || did.empty())
            raise_data("MalformedLine", "qrels line " + std::to_string(line_no) + ": empty id");
        long rel = 0;
        try {
            std::size_t pos = 0;
            rel = std::stol(rel_str, &pos);
            if (pos != rel_str.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            raise_data("MalformedLine", "qrels line " + std::to_string(line_no) + ": bad relevance '" + rel_str + "'");
        }
        if (rel < 0)
            raise_data("NegativeRelevance", "qrels line " + std::to_string(line_no) + ": negative grade");
        qrels.set(qid, did, static_cast<int>(rel));
    }
    return qrels;
}

inline void save_qrels(const Qrels& qrels, const std::string& path) {
    auto out = detail::open_output(path);
    for (const auto& [qid, docs] : qrels.all())
        for (const auto& [did, rel] : docs) out << qid << '\t' << did << '\t' << rel << "\n";
}

inline std::vector<TrainingExample> load_training_examples(const std::string& path) {
    auto in = detail::open_input(path);
    std::vector<TrainingExample> examples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = detail::parse_line(line, line_no);
        TrainingExample ex;
        ex.query = detail::require_string(j, "query", line_no);
        ex.positive = detail::require_string(j, "positive", line_no);
        auto negs = j.find("negatives");
        if (negs != j.end()) {
            if (!negs->is_array())
                raise_data("MalformedLine", "line " + std::to_string(line_no) + ": negatives must be an array");
            for (const auto& n : *negs) ex.negatives.push_back(n.get<std::string>());
        }
        ex.category = category_from_string(detail::require_string(j, "category", line_no));
        ex.kind = kind_from_string(detail::require_string(j, "kind", line_no));
        if (j.contains("lang") && !j["lang"].is_null()) ex.lang = j["lang"].get<std::string>();
        ex.check();
        examples.push_back(std::move(ex));
    }
    return examples;
}

inline void save_training_examples(const std::vector<TrainingExample>& examples,
                                   const std::string& path) {
    auto out = detail::open_output(path);
    for (const auto& ex : examples) {
        json j{{"query", ex.query},
               {"positive", ex.positive},
               {"negatives", ex.negatives},
               {"category", to_string(ex.category)},
               {"kind", to_string(ex.kind)}};
        if (ex.lang) j["lang"] = *ex.lang;
        out << j.dump() << "\n";
    }
}

inline ValidationReport validate(const Corpus& corpus, const Qrels& qrels,
                                 const std::vector<Query>& queries) {
    std::set<std::string> query_ids;
    for (const auto& q : queries) query_ids.insert(q.id);
    ValidationReport report;
    for (const auto& [qid, docs] : qrels.all()) {
        bool query_known = query_ids.count(qid) > 0;
        for (const auto& [did, rel] : docs) {
            (void)rel;
            if (!query_known) report.dangling_queries.push_back({qid, did});
            if (!corpus.contains(did)) report.dangling_docs.push_back({qid, did});
        }
    }
    return report;
}

}  // namespace cxf
