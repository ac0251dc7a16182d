#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgrag/ingest.hpp"
#include "kgrag/kg.hpp"
#include "kgrag/llm.hpp"
#include "kgrag/ontology.hpp"
#include "kgrag/tokenizer.hpp"
#include "kgrag/vecindex.hpp"

namespace kgrag::curate {

// ---------------------------------------------------------------------------
// Chunk store

struct DocumentRecord {
    std::string doc_id;
    std::string source_uri;
    std::string media_type;
    std::string title;
    std::string published_at;
    std::string ingested_at;
    std::size_t chunk_count = 0;

    bool operator==(const DocumentRecord&) const = default;
};

/// Documents and chunks, persisted as `documents.jsonl` and `chunks.jsonl`.
class ChunkStore {
public:
    bool has_document(const std::string& doc_id) const { return documents_.count(doc_id) > 0; }
    const DocumentRecord* document(const std::string& doc_id) const;
    const ingest::Chunk* chunk(const std::string& chunk_id) const;
    void add(DocumentRecord doc, std::vector<ingest::Chunk> chunks);

    const std::map<std::string, DocumentRecord>& documents() const noexcept { return documents_; }
    const std::map<std::string, ingest::Chunk>& chunks() const noexcept { return chunks_; }

    void save(const std::string& dir) const;
    /// Missing files load as an empty store.
    static ChunkStore load(const std::string& dir);

    bool operator==(const ChunkStore&) const = default;

private:
    std::map<std::string, DocumentRecord> documents_;
    std::map<std::string, ingest::Chunk> chunks_;
};

/// Everything a curation run reads and writes, rooted at one directory:
/// `corpus.vidx`, `reference_kb.vidx`, `graph.kg`, `documents.jsonl`, `chunks.jsonl`.
struct KnowledgeStore {
    std::string dir;
    vecindex::VectorStore vectors{""};
    kg::PropertyGraph graph;
    ChunkStore chunks;

    static KnowledgeStore open(const std::string& dir);
    void save() const;
    std::string graph_path() const { return dir + "/graph.kg"; }
};

// ---------------------------------------------------------------------------
// Reference knowledge base

struct KbRecord {
    std::string qid;
    std::string label;
    std::string description;
};

/// Tab-separated `qid<TAB>label<TAB>description`; `#` lines are comments.
std::vector<KbRecord> parse_kb_tsv(std::string_view text);

/// Upserts KB records into `index`, embedding each by its label.
std::size_t load_kb(vecindex::VectorIndex& index, const std::vector<KbRecord>& records, const vecindex::Embedder& embedder);

struct DisambiguationConfig {
    std::size_t k = 10;
    double threshold = 0.35;
    double context_weight = 0.25;
};

/// Links a mention to a KB record: vector top-k over mention (plus weighted
/// context), then an optional provider re-rank over the candidates. Without a
/// usable re-rank answer the top hit is taken when it clears the threshold.
/// Throws Error when the KB index is empty.
kg::Disambiguation disambiguate(const std::string& mention, const std::string& context,
                                const vecindex::VectorIndex& kb_index, const vecindex::Embedder& embedder,
                                llm::ChatProvider* provider, const llm::TemplateStore& templates,
                                const DisambiguationConfig& cfg = {});

// ---------------------------------------------------------------------------
// Extraction

struct ExtractionOutcome {
    llm::ParsedExtraction parsed;
    std::size_t repair_attempts = 0;
};

/// Prompts for an attributed subgraph of one chunk. A reply that fails to parse
/// is re-requested once with the parse error appended. Throws Error on empty
/// text, ProviderError on transport failure, ExtractionError when the repair
/// attempt also fails.
ExtractionOutcome extract_chunk(const ingest::Chunk& chunk, const ontology::OntologySchema& schema,
                                llm::ChatProvider& provider, const llm::TemplateStore& templates,
                                std::size_t schema_max_types = 200);

// ---------------------------------------------------------------------------
// Curation

struct CurationConfig {
    ingest::SplitterConfig splitter;
    std::size_t concurrency = 4;
    bool disambiguation = true;
    DisambiguationConfig disambiguation_cfg;
    std::size_t schema_max_types = 200;
};

struct CurationFailure {
    std::string source_uri;
    std::string stage;  // read, load, extract
    std::string detail;
    std::string chunk_id;
};

struct CurationSummary {
    std::string run_id;
    std::size_t docs_processed = 0;
    std::size_t docs_skipped = 0;  // already curated
    std::size_t chunks_added = 0;
    std::size_t chunks_failed = 0;
    std::size_t nodes_added = 0;
    std::size_t nodes_merged = 0;
    std::size_t edges_added = 0;
    std::size_t dropped_elements = 0;
    std::size_t linked_mentions = 0;
    std::size_t type_conflicts = 0;
    std::size_t total_documents = 0;
    std::size_t total_chunks = 0;
    std::size_t total_nodes = 0;
    std::size_t total_edges = 0;
    std::vector<CurationFailure> failures;
    std::string started_at;
    std::string finished_at;
};

nlohmann::json to_json(const CurationSummary& s);

struct CurationInputs {
    const ontology::OntologySchema& schema;
    llm::ChatProvider& provider;
    const vecindex::Embedder& embedder;
    const llm::TemplateStore& templates;
    const tokenizer::BpeVocab& vocab;
};

/// Runs ingest, split, embed, extract, disambiguate and merge for every
/// manifest record whose doc_id is not yet in the store. Relative paths resolve
/// against `base_dir`. Per-document and per-chunk failures are recorded in the
/// summary; the run never aborts on them. Mutates `store` in memory only.
CurationSummary curate(KnowledgeStore& store, const std::vector<ingest::ManifestRecord>& manifest,
                       const std::string& base_dir, const CurationInputs& in, const CurationConfig& cfg = {});

}  // namespace kgrag::curate
