#pragma once

#include <atomic>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgrag/curate.hpp"
#include "kgrag/graphquery.hpp"
#include "kgrag/kg.hpp"
#include "kgrag/llm.hpp"
#include "kgrag/ontology.hpp"
#include "kgrag/vecindex.hpp"

namespace kgrag::queryphase {

/// Cumulative: each level adds one source to the previous one.
enum class Level { llm_only, kb, corpus, kg };
std::string_view to_string(Level level);
std::optional<Level> parse_level(std::string_view s);
inline constexpr const char* kLevelNames = "llm_only, kb, corpus, kg";

/// A store the requested level needs is absent.
class MissingStoreError : public Error {
public:
    using Error::Error;
};

struct EngineConfig {
    std::size_t expansions = 3;         // n
    std::size_t k = 4;                  // per-expansion vector hits
    std::size_t max_hits = 12;          // per source, after dedup
    std::size_t neighborhood_cap = 50;  // evidence nodes
    std::size_t concurrency = 4;        // parallel drafts
    std::size_t pattern_retries = 1;
    double kb_entity_threshold = 0.7;
    double answer_temperature = 0.3;
    std::size_t draft_max_tokens = 1024;
    std::size_t aggregate_max_tokens = 1024;
    std::size_t schema_max_types = 200;
};

/// Counts calls and forwards them.
class CountingProvider final : public llm::ChatProvider {
public:
    explicit CountingProvider(llm::ChatProvider& inner) : inner_(inner) {}
    std::string id() const override { return inner_.id(); }
    llm::ChatResponse complete(const llm::ChatRequest& request) override {
        ++calls_;
        return inner_.complete(request);
    }
    std::size_t calls() const noexcept { return calls_; }

private:
    llm::ChatProvider& inner_;
    std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Expansion

struct KbEntityMatch {
    std::string span;
    std::string qid;
    std::string label;
    double score = 0;
};

/// Capitalized-token runs (a sentence-opening word is dropped when it stands
/// alone or is a question/imperative word), quoted
/// spans, and word n-grams (n <= 3) whose KB top-1 clears `threshold`, keeping
/// the best span per KB record. Returned in order of first appearance.
std::vector<std::string> detect_entities(const std::string& query, const vecindex::VectorIndex* kb,
                                         const vecindex::Embedder* embedder, double threshold,
                                         std::vector<KbEntityMatch>* kb_matches = nullptr);

struct ExpandedQuerySet {
    std::string original;
    std::vector<std::string> expansions;
    std::vector<std::string> preserved_entities;
    std::vector<KbEntityMatch> kb_matches;
    std::vector<std::string> discarded;
    bool provider_failed = false;

    /// Original first, then the retained expansions.
    std::vector<std::string> all() const;
};

/// Throws Error on an empty query. Provider failure leaves expansions empty.
ExpandedQuerySet expand_query(const std::string& query, llm::ChatProvider& provider, const llm::TemplateStore& templates,
                              std::size_t n, const vecindex::VectorIndex* kb = nullptr,
                              const vecindex::Embedder* embedder = nullptr, double kb_threshold = 0.7);

/// True iff `text` contains every entity (casefolded substring).
bool preserves_entities(const std::string& text, const std::vector<std::string>& entities);

// ---------------------------------------------------------------------------
// Pattern generation

struct PatternOutcome {
    std::vector<std::string> queries;  // canonical text, distinct, in request order
    std::size_t retries = 0;
    std::size_t failed = 0;      // dropped after retries or provider failure
    std::size_t declined = 0;    // provider answered NONE
};

/// One pattern per input query; a reply that does not parse is re-requested
/// with the error appended, up to `max_retries` times.
PatternOutcome generate_patterns(const std::vector<std::string>& queries, const ontology::OntologySchema& schema,
                                 llm::ChatProvider& provider, const llm::TemplateStore& templates,
                                 std::size_t max_retries = 1, std::size_t schema_max_types = 200);

// ---------------------------------------------------------------------------
// Retrieval

struct ExecutedQuery {
    std::string text;
    std::size_t rows = 0;
    std::size_t incompatible_comparisons = 0;
};

struct RetrievalContext {
    Level level = Level::llm_only;
    bool kb_consulted = false;
    std::vector<vecindex::Hit> kb_hits;      // record_id = qid
    std::vector<vecindex::Hit> vector_hits;  // record_id = chunk_id
    kg::Subgraph graph_evidence;
    std::vector<ExecutedQuery> executed_queries;

    /// `kind:id` for every citable item.
    std::set<std::string> citable_ids() const;
};

struct Stores {
    const vecindex::VectorStore& vectors;
    const kg::PropertyGraph& graph;
    const vecindex::Embedder& embedder;
};

/// Per-expansion top-k merged by record_id (max score), sorted by score desc
/// then id, capped. The KB is searched only when the query set carries a KB
/// entity match. Graph evidence: nodes and edges of every binding, then one
/// breadth-first hop around the bound nodes, capped in node count.
RetrievalContext hybrid_retrieve(const ExpandedQuerySet& queries, const std::vector<std::string>& patterns,
                                 const Stores& stores, Level level, const EngineConfig& cfg = {});

/// Plain-text evidence block. One item per line, each starting with its marker:
///   [#kb:<qid>] <label>: <description>
///   [#chunk:<chunk_id>] (<source uri>) "<text, whitespace collapsed>"
///   [#node:<node_id>] <name> (<type>)
///   [#edge:<edge_id>] <source name> -[<type>]-> <target name>
/// Empty context renders as "(no evidence)".
std::string serialize_context(const RetrievalContext& ctx, const kg::PropertyGraph& graph);

// ---------------------------------------------------------------------------
// Answering

struct Citation {
    std::string kind;  // chunk, node, edge, kb
    std::string id;

    bool operator==(const Citation&) const = default;
    auto operator<=>(const Citation&) const = default;
};

/// `[#kind:id]` markers in order of first appearance.
std::vector<Citation> parse_citations(std::string_view text);

/// Removes markers whose `kind:id` is not in `allowed`; returns what was removed.
std::vector<std::string> strip_unknown_citations(std::string& text, const std::set<std::string>& allowed);

struct Diagnostics {
    std::size_t provider_calls = 0;
    bool expansion_failed = false;
    std::size_t discarded_expansions = 0;
    std::size_t pattern_retries = 0;
    std::size_t failed_patterns = 0;
    std::size_t failed_drafts = 0;
    bool aggregation_failed = false;
    std::vector<std::string> stripped_citations;
    std::vector<std::string> notes;
};

struct FinalAnswer {
    std::string text;
    std::vector<Citation> citations;
    std::vector<std::string> drafts;
};

/// One draft per query (concurrency-bounded), then an aggregation call. If the
/// aggregation fails the first draft stands in. Throws ProviderError when every
/// draft fails.
FinalAnswer answer(const std::vector<std::string>& queries, const RetrievalContext& ctx, const kg::PropertyGraph& graph,
                   llm::ChatProvider& provider, const llm::TemplateStore& templates, const EngineConfig& cfg,
                   Diagnostics& diag);

// ---------------------------------------------------------------------------
// End to end

struct QueryResult {
    std::string query;
    Level level = Level::llm_only;
    FinalAnswer answer;
    ExpandedQuerySet expanded;
    RetrievalContext context;
    Diagnostics diagnostics;
};

struct EngineInputs {
    const ontology::OntologySchema& schema;
    const llm::TemplateStore& templates;
    const vecindex::Embedder& embedder;
};

/// expand, patterns (kg level only), retrieve, answer. Read-only over the store.
/// Throws Error on an empty query, MissingStoreError, or ProviderError when no
/// draft could be produced.
QueryResult run_query(const std::string& query, Level level, const curate::KnowledgeStore& store,
                      llm::ChatProvider& provider, const EngineInputs& in, const EngineConfig& cfg = {});

/// `{answer, citations, evidence {nodes, edges, chunks, kb}, diagnostics, level}`
/// plus `drafts` when verbose.
nlohmann::json to_json(const QueryResult& r, const curate::KnowledgeStore& store, bool verbose);

/// Answer followed by numbered citation footnotes.
std::string to_text(const QueryResult& r, const curate::KnowledgeStore& store);

}  // namespace kgrag::queryphase
