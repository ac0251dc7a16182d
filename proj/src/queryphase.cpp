#include "kgrag/queryphase.hpp"

#include <spdlog/spdlog.h>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <regex>

namespace kgrag::queryphase {

using nlohmann::json;

std::string_view to_string(Level level) {
    switch (level) {
        case Level::llm_only: return "llm_only";
        case Level::kb: return "kb";
        case Level::corpus: return "corpus";
        case Level::kg: return "kg";
    }
    return "llm_only";
}

std::optional<Level> parse_level(std::string_view s) {
    for (auto l : {Level::llm_only, Level::kb, Level::corpus, Level::kg}) {
        if (s == to_string(l)) return l;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Entity detection

namespace {

struct Word {
    std::size_t begin = 0;
    std::size_t end = 0;
    bool capitalized = false;
    bool sentence_start = false;
    bool breaks_after = false;  // trailing punctuation ends a capitalized run
};

UChar32 first_code_point(std::string_view s) {
    std::int32_t i = 0;
    UChar32 c = 0;
    U8_NEXT(reinterpret_cast<const std::uint8_t*>(s.data()), i, static_cast<std::int32_t>(s.size()), c);
    return c;
}

bool is_word_char(std::string_view text, std::size_t i) {
    std::int32_t j = static_cast<std::int32_t>(i);
    UChar32 c = 0;
    U8_NEXT(reinterpret_cast<const std::uint8_t*>(text.data()), j, static_cast<std::int32_t>(text.size()), c);
    return c >= 0 && (u_isalnum(c) || c == '-' || c == '\'');
}

std::vector<Word> words_of(std::string_view text) {
    std::vector<Word> out;
    std::size_t i = 0;
    bool sentence_start = true;
    while (i < text.size()) {
        if (!is_word_char(text, i)) {
            char c = text[i];
            if (c == '.' || c == '!' || c == '?') sentence_start = true;
            if (!out.empty() && !std::isspace(static_cast<unsigned char>(c))) out.back().breaks_after = true;
            i += utf8_seq_len(text, i);
            continue;
        }
        Word w;
        w.begin = i;
        while (i < text.size() && is_word_char(text, i)) i += utf8_seq_len(text, i);
        w.end = i;
        // Apostrophes and hyphens belong inside words, not at their edges.
        while (w.end > w.begin && (text[w.end - 1] == '\'' || text[w.end - 1] == '-')) --w.end;
        if (w.end == w.begin) continue;
        w.capitalized = u_isupper(first_code_point(text.substr(w.begin, w.end - w.begin)));
        w.sentence_start = sentence_start;
        sentence_start = false;
        out.push_back(w);
    }
    return out;
}

struct Span {
    std::size_t begin;
    std::size_t end;
};

// Capitalized only because they open a sentence.
bool is_opener(std::string_view w) {
    static const std::set<std::string, std::less<>> openers = {
        "a",     "an",       "are",   "can",     "could", "describe", "did",   "do",    "does",  "explain", "give",
        "how",   "in",       "is",    "list",    "on",    "show",     "summarize", "tell", "the", "was",   "were",
        "what",  "when",     "where", "which",   "who",   "why",      "will",  "would", "should"};
    return openers.count(to_lower_ascii(w)) > 0;
}

}  // namespace

std::vector<std::string> detect_entities(const std::string& query, const vecindex::VectorIndex* kb,
                                         const vecindex::Embedder* embedder, double threshold,
                                         std::vector<KbEntityMatch>* kb_matches) {
    std::vector<Span> spans;
    auto words = words_of(query);

    for (std::size_t i = 0; i < words.size();) {
        if (!words[i].capitalized) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < words.size() && words[j + 1].capitalized && !words[j].breaks_after) ++j;
        std::size_t first = i;
        if (words[i].sentence_start &&
            (j == i || is_opener(std::string_view(query).substr(words[i].begin, words[i].end - words[i].begin)))) {
            ++first;
        }
        if (first <= j) spans.push_back({words[first].begin, words[j].end});
        i = j + 1;
    }

    static const std::regex quoted(R"re("([^"]+)")re");
    for (auto it = std::sregex_iterator(query.begin(), query.end(), quoted); it != std::sregex_iterator(); ++it) {
        auto b = static_cast<std::size_t>(it->position(1));
        if (!trim((*it)[1].str()).empty()) spans.push_back({b, b + static_cast<std::size_t>(it->length(1))});
    }

    std::vector<KbEntityMatch> matches;
    if (kb && embedder && !kb->empty()) {
        struct Best {
            KbEntityMatch m;
            Span span;
        };
        std::map<std::string, Best> best;
        for (std::size_t i = 0; i < words.size(); ++i) {
            for (std::size_t n = 1; n <= 3 && i + n <= words.size(); ++n) {
                Span s{words[i].begin, words[i + n - 1].end};
                auto text = query.substr(s.begin, s.end - s.begin);
                if (text.size() < 3) continue;
                auto hits = kb->top_k(embedder->embed(text), 1);
                if (hits.empty() || hits[0].score < threshold) continue;
                const auto& h = hits[0];
                auto label = h.payload.count("label") ? h.payload.at("label") : h.record_id;
                auto it = best.find(h.record_id);
                bool better = it == best.end() || h.score > it->second.m.score ||
                              (h.score == it->second.m.score && text.size() < it->second.m.span.size());
                if (better) best[h.record_id] = {{text, h.record_id, label, h.score}, s};
            }
        }
        std::vector<Best> ordered;
        for (auto& [qid, b] : best) ordered.push_back(std::move(b));
        std::sort(ordered.begin(), ordered.end(), [](const Best& a, const Best& b) {
            return a.span.begin != b.span.begin ? a.span.begin < b.span.begin : a.m.qid < b.m.qid;
        });
        for (auto& b : ordered) {
            spans.push_back(b.span);
            matches.push_back(std::move(b.m));
        }
    }
    if (kb_matches) *kb_matches = std::move(matches);

    std::stable_sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end > b.end;
    });
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : spans) {
        auto text = query.substr(s.begin, s.end - s.begin);
        if (seen.insert(casefold_nfc(text)).second) out.push_back(std::move(text));
    }
    return out;
}

bool preserves_entities(const std::string& text, const std::vector<std::string>& entities) {
    auto folded = casefold_nfc(text);
    return std::all_of(entities.begin(), entities.end(),
                       [&](const std::string& e) { return folded.find(casefold_nfc(e)) != std::string::npos; });
}

std::vector<std::string> ExpandedQuerySet::all() const {
    std::vector<std::string> out{original};
    out.insert(out.end(), expansions.begin(), expansions.end());
    return out;
}

namespace {

std::string strip_list_marker(std::string_view line) {
    line = trim(line);
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
        line = trim(line.substr(i + 1));
    } else if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
        line = trim(line.substr(1));
    }
    return std::string(line);
}

}  // namespace

ExpandedQuerySet expand_query(const std::string& query, llm::ChatProvider& provider, const llm::TemplateStore& templates,
                              std::size_t n, const vecindex::VectorIndex* kb, const vecindex::Embedder* embedder,
                              double kb_threshold) {
    if (trim(query).empty()) throw Error("query is empty");
    ExpandedQuerySet set;
    set.original = std::string(trim(query));
    set.preserved_entities = detect_entities(set.original, kb, embedder, kb_threshold, &set.kb_matches);
    if (n == 0) return set;

    auto entities = set.preserved_entities.empty() ? std::string("(none)") : join(set.preserved_entities, ", ");
    std::string reply;
    try {
        auto req = llm::make_request(templates.get("expand_query"),
                                     {{"n", std::to_string(n)}, {"entities", entities}, {"query", set.original}});
        reply = provider.complete(req).text;
    } catch (const llm::ProviderError& e) {
        spdlog::warn("query expansion failed, continuing with the original query: {}", e.what());
        set.provider_failed = true;
        return set;
    }
    std::set<std::string> seen{casefold_nfc(set.original)};
    for (const auto& line : split(reply, '\n')) {
        auto text = strip_list_marker(line);
        if (text.empty()) continue;
        if (set.expansions.size() >= n) break;
        if (!preserves_entities(text, set.preserved_entities)) {
            spdlog::debug("expansion '{}' drops a key entity; discarded", text);
            set.discarded.push_back(text);
            continue;
        }
        if (seen.insert(casefold_nfc(text)).second) set.expansions.push_back(std::move(text));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Pattern generation

namespace {

std::string unfence(std::string_view reply) {
    auto s = trim(reply);
    auto open = s.find("```");
    if (open != std::string_view::npos) {
        auto nl = s.find('\n', open);
        auto close = s.find("```", nl == std::string_view::npos ? open + 3 : nl);
        if (nl != std::string_view::npos && close != std::string_view::npos) s = trim(s.substr(nl + 1, close - nl - 1));
    }
    while (!s.empty() && s.front() == '`') s.remove_prefix(1);
    while (!s.empty() && s.back() == '`') s.remove_suffix(1);
    return std::string(trim(s));
}

}  // namespace

PatternOutcome generate_patterns(const std::vector<std::string>& queries, const ontology::OntologySchema& schema,
                                 llm::ChatProvider& provider, const llm::TemplateStore& templates,
                                 std::size_t max_retries, std::size_t schema_max_types) {
    PatternOutcome out;
    std::set<std::string> seen;
    auto schema_text = ontology::render_schema_prompt(schema, schema_max_types);
    const auto& tpl = templates.get("generate_pattern");
    for (const auto& q : queries) {
        auto req = llm::make_request(tpl, {{"schema", schema_text}, {"query", q}});
        auto base_user = req.user;
        std::optional<std::string> accepted;
        bool declined = false;
        for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
            std::string reply;
            try {
                reply = unfence(provider.complete(req).text);
            } catch (const llm::ProviderError& e) {
                spdlog::warn("pattern generation failed for '{}': {}", q, e.what());
                break;
            }
            if (iequals(reply, "NONE")) {
                declined = true;
                break;
            }
            try {
                accepted = graphquery::pretty_print(graphquery::parse_query(reply));
                break;
            } catch (const Error& e) {
                if (attempt == max_retries) {
                    spdlog::debug("pattern '{}' rejected: {}", reply, e.what());
                    break;
                }
                ++out.retries;
                req.user = base_user + "\n\nYour previous reply could not be used: " + e.what() +
                           "\nReply again with only the corrected query.";
            }
        }
        if (accepted) {
            if (seen.insert(*accepted).second) out.queries.push_back(*accepted);
        } else if (declined) {
            ++out.declined;
        } else {
            ++out.failed;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Retrieval

std::set<std::string> RetrievalContext::citable_ids() const {
    std::set<std::string> out;
    for (const auto& h : kb_hits) out.insert("kb:" + h.record_id);
    for (const auto& h : vector_hits) out.insert("chunk:" + h.record_id);
    for (const auto& id : graph_evidence.node_ids) out.insert("node:" + id);
    for (const auto& id : graph_evidence.edge_ids) out.insert("edge:" + id);
    return out;
}

namespace {

void merge_hits(std::map<std::string, vecindex::Hit>& acc, std::vector<vecindex::Hit> hits) {
    for (auto& h : hits) {
        auto it = acc.find(h.record_id);
        if (it == acc.end()) {
            auto id = h.record_id;
            acc.emplace(std::move(id), std::move(h));
        } else if (h.score > it->second.score) {
            it->second = std::move(h);
        }
    }
}

std::vector<vecindex::Hit> ranked(std::map<std::string, vecindex::Hit> acc, std::size_t cap) {
    std::vector<vecindex::Hit> out;
    for (auto& [id, h] : acc) out.push_back(std::move(h));
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (out.size() > cap) out.resize(cap);
    return out;
}

const vecindex::VectorIndex* index_or_null(const vecindex::VectorStore& vectors, const char* name) {
    return vectors.has(name) ? &vectors.get(name) : nullptr;
}

}  // namespace

RetrievalContext hybrid_retrieve(const ExpandedQuerySet& queries, const std::vector<std::string>& patterns,
                                 const Stores& stores, Level level, const EngineConfig& cfg) {
    RetrievalContext ctx;
    ctx.level = level;
    if (level == Level::llm_only) return ctx;

    const auto* kb = index_or_null(stores.vectors, vecindex::kReferenceKbIndex);
    if (level == Level::kb && !kb) throw MissingStoreError("level kb needs the reference KB index");
    if (kb && !queries.kb_matches.empty()) {
        ctx.kb_consulted = true;
        std::map<std::string, vecindex::Hit> acc;
        for (const auto& m : queries.kb_matches) merge_hits(acc, kb->top_k(stores.embedder.embed(m.span), cfg.k));
        ctx.kb_hits = ranked(std::move(acc), cfg.max_hits);
    }
    if (level == Level::kb) return ctx;

    const auto* corpus = index_or_null(stores.vectors, vecindex::kCorpusIndex);
    if (!corpus) throw MissingStoreError("level " + std::string(to_string(level)) + " needs the corpus index");
    std::map<std::string, vecindex::Hit> acc;
    for (const auto& q : queries.all()) merge_hits(acc, corpus->top_k(stores.embedder.embed(q), cfg.k));
    ctx.vector_hits = ranked(std::move(acc), cfg.max_hits);
    if (level == Level::corpus) return ctx;

    std::vector<std::string> matched;
    std::set<std::string> matched_set, binding_edges;
    for (const auto& text : patterns) {
        auto q = graphquery::parse_query(text);
        auto table = graphquery::evaluate(stores.graph, q);
        ctx.executed_queries.push_back({text, table.rows.size(), table.incompatible_comparisons});
        for (const auto& b : table.bindings) {
            for (const auto& [var, id] : b.nodes) {
                if (matched.size() < cfg.neighborhood_cap && matched_set.insert(id).second) matched.push_back(id);
            }
            for (const auto& [var, id] : b.edges) binding_edges.insert(id);
        }
    }
    if (matched.empty()) return ctx;
    auto nb = kg::neighborhood(stores.graph, matched, 1, cfg.neighborhood_cap);
    ctx.graph_evidence.node_ids = std::move(nb.node_ids);
    ctx.graph_evidence.node_ids.insert(matched.begin(), matched.end());
    ctx.graph_evidence.edge_ids = std::move(nb.edge_ids);
    for (const auto& id : binding_edges) {
        const auto* e = stores.graph.edge(id);
        if (ctx.graph_evidence.node_ids.count(e->source_node_id) && ctx.graph_evidence.node_ids.count(e->target_node_id)) {
            ctx.graph_evidence.edge_ids.insert(id);
        }
    }
    return ctx;
}

namespace {

std::string one_line(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

std::string payload_or(const StringMap& p, const std::string& key, const std::string& fallback = {}) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

}  // namespace

std::string serialize_context(const RetrievalContext& ctx, const kg::PropertyGraph& graph) {
    std::string out;
    for (const auto& h : ctx.kb_hits) {
        out += "[#kb:" + h.record_id + "] " + payload_or(h.payload, "label", h.record_id);
        auto d = payload_or(h.payload, "description");
        if (!d.empty()) out += ": " + one_line(d);
        out += "\n";
    }
    for (const auto& h : ctx.vector_hits) {
        out += "[#chunk:" + h.record_id + "] (" + payload_or(h.payload, "source_uri") + ") \"" +
               one_line(payload_or(h.payload, "text")) + "\"\n";
    }
    for (const auto& id : ctx.graph_evidence.node_ids) {
        const auto* n = graph.node(id);
        out += "[#node:" + id + "] " + n->name + " (" + n->type + (n->qid ? ", " + *n->qid : "") + ")\n";
    }
    for (const auto& id : ctx.graph_evidence.edge_ids) {
        const auto* e = graph.edge(id);
        out += "[#edge:" + id + "] " + graph.node(e->source_node_id)->name + " -[" + e->type + "]-> " +
               graph.node(e->target_node_id)->name + "\n";
    }
    if (out.empty()) return "(no evidence)";
    out.pop_back();
    return out;
}

// ---------------------------------------------------------------------------
// Answering

namespace {

const std::regex& marker_re() {
    static const std::regex re(R"(\[#([A-Za-z_]+):([^\]\s]+)\])");
    return re;
}

}  // namespace

std::vector<Citation> parse_citations(std::string_view text) {
    std::vector<Citation> out;
    std::set<Citation> seen;
    std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), marker_re()); it != std::sregex_iterator(); ++it) {
        Citation c{(*it)[1].str(), (*it)[2].str()};
        if (seen.insert(c).second) out.push_back(std::move(c));
    }
    return out;
}

std::vector<std::string> strip_unknown_citations(std::string& text, const std::set<std::string>& allowed) {
    std::vector<std::string> removed;
    std::string out;
    auto begin = text.cbegin();
    for (auto it = std::sregex_iterator(text.begin(), text.end(), marker_re()); it != std::sregex_iterator(); ++it) {
        auto key = (*it)[1].str() + ":" + (*it)[2].str();
        out.append(begin, (*it)[0].first);
        if (allowed.count(key)) {
            out += (*it)[0].str();
        } else {
            removed.push_back(key);
            // Drop the space that preceded the marker.
            if (!out.empty() && out.back() == ' ') out.pop_back();
        }
        begin = (*it)[0].second;
    }
    out.append(begin, text.cend());
    text = std::move(out);
    return removed;
}

FinalAnswer answer(const std::vector<std::string>& queries, const RetrievalContext& ctx, const kg::PropertyGraph& graph,
                   llm::ChatProvider& provider, const llm::TemplateStore& templates, const EngineConfig& cfg,
                   Diagnostics& diag) {
    if (queries.empty()) throw Error("no query to answer");
    auto context = serialize_context(ctx, graph);
    auto allowed = ctx.citable_ids();
    std::mutex mu;
    auto strip = [&](std::string& text) {
        auto removed = strip_unknown_citations(text, allowed);
        if (removed.empty()) return;
        std::lock_guard lock(mu);
        for (auto& r : removed) {
            spdlog::warn("stripped unknown citation [#{}]", r);
            diag.stripped_citations.push_back(std::move(r));
        }
    };

    std::vector<std::optional<std::string>> drafts(queries.size());
    std::vector<std::string> errors(queries.size());
    const auto& draft_tpl = templates.get("draft_answer");
    parallel_for(queries.size(), std::max<std::size_t>(1, cfg.concurrency), [&](std::size_t i) {
        try {
            auto req = llm::make_request(draft_tpl, {{"context", context}, {"query", queries[i]}}, cfg.answer_temperature,
                                         llm::ResponseFormat::free_text, cfg.draft_max_tokens);
            auto text = provider.complete(req).text;
            strip(text);
            drafts[i] = std::move(text);
        } catch (const llm::ProviderError& e) {
            errors[i] = e.what();
        }
    });

    FinalAnswer fa;
    for (std::size_t i = 0; i < drafts.size(); ++i) {
        if (drafts[i]) {
            fa.drafts.push_back(*drafts[i]);
        } else {
            ++diag.failed_drafts;
            spdlog::warn("draft {} failed: {}", i, errors[i]);
        }
    }
    if (fa.drafts.empty()) {
        throw llm::ProviderError(llm::ProviderError::Kind::unavailable,
                                 "all " + std::to_string(queries.size()) + " drafts failed: " + errors.front());
    }

    StringMap vars{{"query", queries.front()}};
    std::vector<std::string> numbered;
    for (std::size_t i = 0; i < fa.drafts.size(); ++i) {
        numbered.push_back("Draft " + std::to_string(i + 1) + ":\n" + fa.drafts[i]);
        vars["draft." + std::to_string(i)] = fa.drafts[i];
    }
    vars["drafts"] = join(numbered, "\n\n");
    try {
        auto req = llm::make_request(templates.get("aggregate_answers"), vars, cfg.answer_temperature,
                                     llm::ResponseFormat::free_text, cfg.aggregate_max_tokens);
        fa.text = provider.complete(req).text;
        strip(fa.text);
    } catch (const llm::ProviderError& e) {
        spdlog::warn("aggregation failed, using the first draft: {}", e.what());
        diag.aggregation_failed = true;
        fa.text = fa.drafts.front();
    }
    fa.citations = parse_citations(fa.text);
    return fa;
}

// ---------------------------------------------------------------------------
// End to end

QueryResult run_query(const std::string& query, Level level, const curate::KnowledgeStore& store,
                      llm::ChatProvider& provider, const EngineInputs& in, const EngineConfig& cfg) {
    if (trim(query).empty()) throw Error("query is empty");
    const auto* kb = index_or_null(store.vectors, vecindex::kReferenceKbIndex);
    if (kb && !kb->empty() && kb->meta().model_id != in.embedder.model_id()) {
        throw Error("reference KB was embedded with '" + kb->meta().model_id + "', queries use '" +
                    in.embedder.model_id() + "'");
    }
    if (level == Level::kb && !kb) throw MissingStoreError("level kb needs the reference KB index");
    if (level >= Level::corpus && !store.vectors.has(vecindex::kCorpusIndex)) {
        throw MissingStoreError("level " + std::string(to_string(level)) + " needs the corpus index");
    }

    CountingProvider counting(provider);
    QueryResult r;
    r.query = std::string(trim(query));
    r.level = level;
    r.expanded = expand_query(r.query, counting, in.templates, cfg.expansions, kb, &in.embedder, cfg.kb_entity_threshold);
    r.diagnostics.expansion_failed = r.expanded.provider_failed;
    r.diagnostics.discarded_expansions = r.expanded.discarded.size();

    std::vector<std::string> patterns;
    if (level == Level::kg) {
        auto po = generate_patterns(r.expanded.all(), in.schema, counting, in.templates, cfg.pattern_retries,
                                    cfg.schema_max_types);
        patterns = std::move(po.queries);
        r.diagnostics.pattern_retries = po.retries;
        r.diagnostics.failed_patterns = po.failed;
    }
    r.context = hybrid_retrieve(r.expanded, patterns, {store.vectors, store.graph, in.embedder}, level, cfg);
    r.answer = answer(r.expanded.all(), r.context, store.graph, counting, in.templates, cfg, r.diagnostics);
    r.diagnostics.provider_calls = counting.calls();
    return r;
}

json to_json(const QueryResult& r, const curate::KnowledgeStore& store, bool verbose) {
    json citations = json::array();
    for (const auto& c : r.answer.citations) citations.push_back({{"kind", c.kind}, {"id", c.id}});

    json nodes = json::array(), edges = json::array(), chunks = json::array(), kb = json::array();
    for (const auto& id : r.context.graph_evidence.node_ids) {
        const auto* n = store.graph.node(id);
        json j = {{"node_id", id}, {"name", n->name}, {"type", n->type}};
        if (n->qid) j["qid"] = *n->qid;
        nodes.push_back(std::move(j));
    }
    for (const auto& id : r.context.graph_evidence.edge_ids) {
        const auto* e = store.graph.edge(id);
        edges.push_back({{"edge_id", id}, {"source", e->source_node_id}, {"target", e->target_node_id}, {"type", e->type}});
    }
    for (const auto& h : r.context.vector_hits) {
        chunks.push_back({{"chunk_id", h.record_id},
                          {"doc_id", payload_or(h.payload, "doc_id")},
                          {"source_uri", payload_or(h.payload, "source_uri")},
                          {"score", h.score},
                          {"text", payload_or(h.payload, "text")}});
    }
    for (const auto& h : r.context.kb_hits) {
        kb.push_back({{"qid", h.record_id},
                      {"label", payload_or(h.payload, "label")},
                      {"description", payload_or(h.payload, "description")},
                      {"score", h.score}});
    }

    json executed = json::array();
    for (const auto& q : r.context.executed_queries) {
        executed.push_back({{"query", q.text}, {"rows", q.rows}, {"incompatible_comparisons", q.incompatible_comparisons}});
    }
    json kb_matches = json::array();
    for (const auto& m : r.expanded.kb_matches) {
        kb_matches.push_back({{"span", m.span}, {"qid", m.qid}, {"label", m.label}, {"score", m.score}});
    }
    const auto& d = r.diagnostics;
    json diag = {{"level", to_string(r.level)},
                 {"provider_calls", d.provider_calls},
                 {"expansions", r.expanded.expansions},
                 {"preserved_entities", r.expanded.preserved_entities},
                 {"kb_matches", kb_matches},
                 {"kb_consulted", r.context.kb_consulted},
                 {"expansion_failed", d.expansion_failed},
                 {"discarded_expansions", d.discarded_expansions},
                 {"executed_queries", executed},
                 {"pattern_retries", d.pattern_retries},
                 {"failed_patterns", d.failed_patterns},
                 {"failed_drafts", d.failed_drafts},
                 {"aggregation_failed", d.aggregation_failed},
                 {"stripped_citations", d.stripped_citations}};

    json out = {{"query", r.query},
                {"level", to_string(r.level)},
                {"answer", r.answer.text},
                {"citations", citations},
                {"evidence", {{"nodes", nodes}, {"edges", edges}, {"chunks", chunks}, {"kb", kb}}},
                {"diagnostics", diag}};
    if (verbose) out["drafts"] = r.answer.drafts;
    return out;
}

std::string to_text(const QueryResult& r, const curate::KnowledgeStore& store) {
    std::map<std::string, std::size_t> number;
    std::string body;
    std::string text = r.answer.text;
    // Replace each marker with a footnote number.
    auto begin = text.cbegin();
    for (auto it = std::sregex_iterator(text.begin(), text.end(), marker_re()); it != std::sregex_iterator(); ++it) {
        auto key = (*it)[1].str() + ":" + (*it)[2].str();
        auto [pos, fresh] = number.emplace(key, number.size() + 1);
        body.append(begin, (*it)[0].first);
        body += "[" + std::to_string(pos->second) + "]";
        begin = (*it)[0].second;
    }
    body.append(begin, text.cend());

    std::vector<std::pair<std::size_t, std::string>> notes;
    for (const auto& [key, n] : number) {
        auto colon = key.find(':');
        auto kind = key.substr(0, colon), id = key.substr(colon + 1);
        std::string what = key;
        if (kind == "chunk") {
            if (const auto* c = store.chunks.chunk(id)) {
                const auto* doc = store.chunks.document(c->doc_id);
                what += doc ? "  " + doc->source_uri : "";
            }
        } else if (kind == "node") {
            if (const auto* nd = store.graph.node(id)) what += "  " + nd->name + " (" + nd->type + ")";
        } else if (kind == "edge") {
            if (const auto* e = store.graph.edge(id)) {
                what += "  " + store.graph.node(e->source_node_id)->name + " -[" + e->type + "]-> " +
                        store.graph.node(e->target_node_id)->name;
            }
        }
        notes.emplace_back(n, what);
    }
    std::sort(notes.begin(), notes.end());
    std::string out = body + "\n";
    if (!notes.empty()) {
        out += "\nSources:\n";
        for (const auto& [n, what] : notes) out += "[" + std::to_string(n) + "] " + what + "\n";
    }
    out += "\n(level " + std::string(to_string(r.level)) + ", " + std::to_string(r.diagnostics.provider_calls) +
           " provider calls)\n";
    return out;
}

}  // namespace kgrag::queryphase
