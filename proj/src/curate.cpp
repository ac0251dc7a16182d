#include "kgrag/curate.hpp"

#include <spdlog/spdlog.h>

#include <filesystem>
#include <mutex>

namespace kgrag::curate {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Chunk store

const DocumentRecord* ChunkStore::document(const std::string& doc_id) const {
    auto it = documents_.find(doc_id);
    return it == documents_.end() ? nullptr : &it->second;
}

const ingest::Chunk* ChunkStore::chunk(const std::string& chunk_id) const {
    auto it = chunks_.find(chunk_id);
    return it == chunks_.end() ? nullptr : &it->second;
}

void ChunkStore::add(DocumentRecord doc, std::vector<ingest::Chunk> chunks) {
    doc.chunk_count = chunks.size();
    for (auto& c : chunks) {
        if (c.doc_id != doc.doc_id) throw Error("chunk " + c.chunk_id + " does not belong to " + doc.doc_id);
        auto id = c.chunk_id;
        chunks_[id] = std::move(c);
    }
    auto id = doc.doc_id;
    documents_[id] = std::move(doc);
}

namespace {

json doc_to_json(const DocumentRecord& d) {
    json j = {{"doc_id", d.doc_id},           {"source_uri", d.source_uri}, {"media_type", d.media_type},
              {"title", d.title},             {"ingested_at", d.ingested_at}, {"chunk_count", d.chunk_count}};
    if (!d.published_at.empty()) j["published_at"] = d.published_at;
    return j;
}

DocumentRecord doc_from_json(const json& j) {
    DocumentRecord d;
    d.doc_id = j.at("doc_id").get<std::string>();
    d.source_uri = j.at("source_uri").get<std::string>();
    d.media_type = j.at("media_type").get<std::string>();
    d.title = j.value("title", "");
    d.published_at = j.value("published_at", "");
    d.ingested_at = j.value("ingested_at", "");
    d.chunk_count = j.value("chunk_count", std::size_t{0});
    return d;
}

}  // namespace

void ChunkStore::save(const std::string& dir) const {
    std::string docs, chunks;
    for (const auto& [id, d] : documents_) docs += doc_to_json(d).dump() + "\n";
    for (const auto& [id, c] : chunks_) chunks += ingest::chunk_to_json_line(c) + "\n";
    write_file_atomic(dir + "/documents.jsonl", docs);
    write_file_atomic(dir + "/chunks.jsonl", chunks);
}

ChunkStore ChunkStore::load(const std::string& dir) {
    ChunkStore store;
    std::map<std::string, std::vector<ingest::Chunk>> by_doc;
    if (fs::exists(dir + "/chunks.jsonl")) {
        std::size_t line_no = 0;
        for (const auto& line : split(read_file(dir + "/chunks.jsonl"), '\n')) {
            ++line_no;
            if (trim(line).empty()) continue;
            try {
                auto c = ingest::chunk_from_json_line(line);
                by_doc[c.doc_id].push_back(std::move(c));
            } catch (const FormatError&) {
                throw;
            } catch (const std::exception& e) {
                throw FormatError(std::string("chunks.jsonl: ") + e.what(), line_no);
            }
        }
    }
    if (fs::exists(dir + "/documents.jsonl")) {
        std::size_t line_no = 0;
        for (const auto& line : split(read_file(dir + "/documents.jsonl"), '\n')) {
            ++line_no;
            if (trim(line).empty()) continue;
            DocumentRecord d;
            try {
                d = doc_from_json(json::parse(line));
            } catch (const std::exception& e) {
                throw FormatError(std::string("documents.jsonl: ") + e.what(), line_no);
            }
            auto chunks = std::move(by_doc[d.doc_id]);
            by_doc.erase(d.doc_id);
            if (chunks.size() != d.chunk_count) {
                throw IntegrityError("document " + d.doc_id + " lists " + std::to_string(d.chunk_count) +
                                     " chunks, store has " + std::to_string(chunks.size()));
            }
            store.add(std::move(d), std::move(chunks));
        }
    }
    if (!by_doc.empty()) throw IntegrityError("chunks.jsonl has chunks of unknown document " + by_doc.begin()->first);
    return store;
}

KnowledgeStore KnowledgeStore::open(const std::string& dir) {
    fs::create_directories(dir);
    KnowledgeStore s;
    s.dir = dir;
    s.vectors = vecindex::VectorStore(dir);
    s.vectors.load_all();
    if (fs::exists(s.graph_path())) s.graph = kg::load_graph(s.graph_path());
    s.chunks = ChunkStore::load(dir);
    return s;
}

void KnowledgeStore::save() const {
    fs::create_directories(dir);
    vectors.save_all();
    kg::persist_graph(graph, graph_path());
    chunks.save(dir);
}

// ---------------------------------------------------------------------------
// Reference knowledge base

std::vector<KbRecord> parse_kb_tsv(std::string_view text) {
    std::vector<KbRecord> out;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        auto fields = split(line, '\t');
        if (fields.size() < 2 || trim(fields[0]).empty() || trim(fields[1]).empty()) {
            throw FormatError("KB line needs qid<TAB>label[<TAB>description]", line_no);
        }
        out.push_back({std::string(trim(fields[0])), std::string(trim(fields[1])),
                       fields.size() > 2 ? std::string(trim(fields[2])) : std::string()});
    }
    return out;
}

std::size_t load_kb(vecindex::VectorIndex& index, const std::vector<KbRecord>& records, const vecindex::Embedder& embedder) {
    std::vector<vecindex::VectorRecord> batch;
    batch.reserve(records.size());
    for (const auto& r : records) {
        auto text = r.description.empty() ? r.label : r.label + ", " + r.description;
        batch.push_back({r.qid,
                         embedder.embed(r.label),
                         {{"qid", r.qid}, {"label", r.label}, {"description", r.description}, {"text", text},
                          {"collection", vecindex::kReferenceKbIndex}}});
    }
    return index.upsert(std::move(batch));
}

namespace {

std::string payload_value(const StringMap& payload, const std::string& key) {
    auto it = payload.find(key);
    return it == payload.end() ? std::string() : it->second;
}

}  // namespace

kg::Disambiguation disambiguate(const std::string& mention, const std::string& context,
                                const vecindex::VectorIndex& kb_index, const vecindex::Embedder& embedder,
                                llm::ChatProvider* provider, const llm::TemplateStore& templates,
                                const DisambiguationConfig& cfg) {
    if (kb_index.empty()) throw Error("reference KB index is empty");
    if (cfg.k == 0) throw Error("disambiguation k must be >= 1");

    auto query = embedder.embed(mention).values;
    if (!trim(context).empty() && cfg.context_weight > 0) {
        auto ctx = embedder.embed(context).values;
        for (std::size_t i = 0; i < query.size(); ++i) query[i] += static_cast<float>(cfg.context_weight) * ctx[i];
    }
    auto hits = kb_index.top_k(vecindex::normalized(std::move(query), embedder.model_id()), cfg.k);

    if (provider && !hits.empty() && templates.has("rerank_entity")) {
        std::string listing;
        for (std::size_t i = 0; i < hits.size(); ++i) {
            listing += std::to_string(i + 1) + ". " + hits[i].record_id + " | " + payload_value(hits[i].payload, "label") +
                       " | " + payload_value(hits[i].payload, "description") + "\n";
        }
        try {
            auto req = llm::make_request(templates.get("rerank_entity"),
                                         {{"mention", mention}, {"context", context}, {"candidates", listing}});
            auto reply = std::string(trim(provider->complete(req).text));
            while (!reply.empty() && (reply.back() == '.' || reply.back() == '`')) reply.pop_back();
            while (!reply.empty() && reply.front() == '`') reply.erase(0, 1);
            if (iequals(reply, "NONE")) return {std::nullopt, "", 0, kg::DisambiguationMethod::rerank};
            for (const auto& h : hits) {
                if (h.record_id == reply) {
                    return {h.record_id, payload_value(h.payload, "label"), h.score, kg::DisambiguationMethod::rerank};
                }
            }
            spdlog::debug("re-rank reply '{}' for '{}' names no candidate; using vector top-1", reply, mention);
        } catch (const llm::ProviderError& e) {
            spdlog::debug("re-rank unavailable for '{}': {}", mention, e.what());
        }
    }
    if (!hits.empty() && hits.front().score >= cfg.threshold) {
        const auto& h = hits.front();
        return {h.record_id, payload_value(h.payload, "label"), h.score, kg::DisambiguationMethod::vector_top1};
    }
    return {std::nullopt, "", hits.empty() ? 0.0 : hits.front().score, kg::DisambiguationMethod::none};
}

// ---------------------------------------------------------------------------
// Extraction

ExtractionOutcome extract_chunk(const ingest::Chunk& chunk, const ontology::OntologySchema& schema,
                                llm::ChatProvider& provider, const llm::TemplateStore& templates,
                                std::size_t schema_max_types) {
    if (trim(chunk.text).empty()) throw Error("cannot extract from an empty chunk");
    auto req = llm::make_request(templates.get("extract_kg"),
                                 {{"schema", ontology::render_schema_prompt(schema, schema_max_types)}, {"chunk", chunk.text}},
                                 0.0, llm::ResponseFormat::json_object);
    auto reply = provider.complete(req);
    try {
        return {llm::parse_extraction(reply.text, schema), 0};
    } catch (const llm::ExtractionError& e) {
        spdlog::debug("extraction reply for {} rejected ({}); asking once more", chunk.chunk_id, e.what());
        req.user += "\n\nYour previous reply could not be used: " + std::string(e.what()) +
                    "\nReply again with only the JSON object.";
        reply = provider.complete(req);
        return {llm::parse_extraction(reply.text, schema), 1};
    }
}

// ---------------------------------------------------------------------------
// Curation

json to_json(const CurationSummary& s) {
    json failures = json::array();
    for (const auto& f : s.failures) {
        json j = {{"source_uri", f.source_uri}, {"stage", f.stage}, {"detail", f.detail}};
        if (!f.chunk_id.empty()) j["chunk_id"] = f.chunk_id;
        failures.push_back(std::move(j));
    }
    return {{"run_id", s.run_id},
            {"docs", s.docs_processed},
            {"docs_skipped", s.docs_skipped},
            {"chunks", s.chunks_added},
            {"chunks_failed", s.chunks_failed},
            {"nodes", s.nodes_added},
            {"nodes_merged", s.nodes_merged},
            {"edges", s.edges_added},
            {"dropped_elements", s.dropped_elements},
            {"linked_mentions", s.linked_mentions},
            {"type_conflicts", s.type_conflicts},
            {"totals",
             {{"documents", s.total_documents}, {"chunks", s.total_chunks}, {"nodes", s.total_nodes}, {"edges", s.total_edges}}},
            {"failures", std::move(failures)},
            {"started_at", s.started_at},
            {"finished_at", s.finished_at}};
}

namespace {

struct ChunkWork {
    std::optional<ExtractionOutcome> outcome;
    std::map<std::string, kg::Disambiguation> links;
    std::string error;
};

}  // namespace

CurationSummary curate(KnowledgeStore& store, const std::vector<ingest::ManifestRecord>& manifest,
                       const std::string& base_dir, const CurationInputs& in, const CurationConfig& cfg) {
    cfg.splitter.validate();
    CurationSummary summary;
    summary.started_at = utc_now_iso8601();
    summary.run_id = stable_id("run", summary.started_at + "|" + std::to_string(manifest.size()) + "|" +
                                          std::to_string(store.chunks.documents().size()));
    if (store.graph.schema_version().empty()) store.graph.set_schema_version(in.schema.version());

    auto& corpus = store.vectors.ensure(vecindex::kCorpusIndex, in.embedder.dim(), in.embedder.model_id());
    const vecindex::VectorIndex* kb = nullptr;
    if (cfg.disambiguation && store.vectors.has(vecindex::kReferenceKbIndex) &&
        !store.vectors.get(vecindex::kReferenceKbIndex).empty()) {
        kb = &store.vectors.get(vecindex::kReferenceKbIndex);
        if (kb->meta().model_id != in.embedder.model_id()) {
            throw Error("reference KB was embedded with '" + kb->meta().model_id + "', curation uses '" +
                        in.embedder.model_id() + "'");
        }
    }

    for (const auto& rec : manifest) {
        auto fail = [&](std::string stage, std::string detail, std::string chunk_id = {}) {
            spdlog::warn("{}: {} failed: {}", rec.uri, stage, detail);
            summary.failures.push_back({rec.uri, std::move(stage), std::move(detail), std::move(chunk_id)});
        };

        // PDFs are read from a pre-extracted `<path>.txt` sidecar.
        const bool pdf = ingest::is_pdf_media_type(rec.media_type);
        std::string bytes;
        try {
            auto path = fs::path(rec.path).is_absolute() ? fs::path(rec.path) : fs::path(base_dir) / rec.path;
            if (pdf) path += ".txt";
            bytes = read_file(path.string());
        } catch (const std::exception& e) {
            fail("read", pdf ? std::string("pdf text sidecar: ") + e.what() : std::string(e.what()));
            continue;
        }
        ingest::SourceDocument doc;
        try {
            auto type = pdf ? ingest::MediaType::plain_text : ingest::parse_media_type(rec.media_type);
            doc = ingest::load_source(bytes, rec.uri, type);
        } catch (const std::exception& e) {
            fail("load", e.what());
            continue;
        }
        if (store.chunks.has_document(doc.doc_id)) {
            ++summary.docs_skipped;
            continue;
        }

        auto chunks = ingest::split_recursive(doc, cfg.splitter, in.vocab);
        std::vector<vecindex::VectorRecord> vectors;
        for (const auto& c : chunks) {
            vectors.push_back({c.chunk_id,
                               in.embedder.embed(c.text),
                               {{"text", c.text},
                                {"doc_id", c.doc_id},
                                {"source_uri", doc.source_uri},
                                {"title", doc.metadata["title"]},
                                {"collection", vecindex::kCorpusIndex}}});
        }

        std::vector<ChunkWork> work(chunks.size());
        parallel_for(chunks.size(), cfg.concurrency, [&](std::size_t i) {
            auto& w = work[i];
            try {
                w.outcome = extract_chunk(chunks[i], in.schema, in.provider, in.templates, cfg.schema_max_types);
            } catch (const std::exception& e) {
                w.error = e.what();
                return;
            }
            if (!kb) return;
            for (const auto& n : w.outcome->parsed.payload.nodes) {
                try {
                    auto d = disambiguate(n.mention, chunks[i].text, *kb, in.embedder, &in.provider, in.templates,
                                          cfg.disambiguation_cfg);
                    if (d.qid) w.links.emplace(n.local_id, std::move(d));
                } catch (const std::exception& e) {
                    spdlog::debug("disambiguation of '{}' failed: {}", n.mention, e.what());
                }
            }
        });

        // Merge in chunk order so the resulting graph does not depend on scheduling.
        std::optional<std::string> observed_at;
        if (!rec.published_at.empty()) observed_at = rec.published_at;
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            auto& w = work[i];
            if (!w.outcome) {
                ++summary.chunks_failed;
                fail("extract", w.error, chunks[i].chunk_id);
                continue;
            }
            summary.dropped_elements += w.outcome->parsed.report.violations.size();
            summary.linked_mentions += w.links.size();
            auto report = kg::merge_subgraph(store.graph, w.outcome->parsed.payload,
                                             {doc.doc_id, chunks[i].chunk_id, summary.run_id, observed_at}, w.links);
            summary.nodes_added += report.nodes_created;
            summary.nodes_merged += report.nodes_merged;
            summary.edges_added += report.edges_created;
            summary.type_conflicts += report.conflicts;
        }

        corpus.upsert(std::move(vectors));
        summary.chunks_added += chunks.size();
        ++summary.docs_processed;
        store.chunks.add({doc.doc_id, doc.source_uri, std::string(ingest::to_string(doc.media_type)),
                          doc.metadata["title"], rec.published_at, doc.metadata["ingested_at"], 0},
                         std::move(chunks));
    }

    summary.total_documents = store.chunks.documents().size();
    summary.total_chunks = store.chunks.chunks().size();
    summary.total_nodes = store.graph.nodes().size();
    summary.total_edges = store.graph.edges().size();
    summary.finished_at = utc_now_iso8601();
    return summary;
}

}  // namespace kgrag::curate
