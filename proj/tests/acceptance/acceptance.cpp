// Acceptance gate: one PASS/FAIL line per primary criterion. Exit status is
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "kgrag/curate.hpp"
#include "kgrag/graphquery.hpp"
#include "kgrag/ingest.hpp"
#include "kgrag/kg.hpp"
#include "kgrag/ontology.hpp"
#include "kgrag/queryphase.hpp"
#include "kgrag/service.hpp"
#include "kgrag/tokenizer.hpp"
#include "kgrag/vecindex.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace kgrag;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const std::string kOdessaQuestion = "Describe the role of Russia in the war of Odessa";

/// Collects failures for one criterion; keeps the first few messages.
class Check {
public:
    bool operator()(bool ok, const std::string& what) {
        ++checks_;
        if (!ok) {
            ++failures_;
            if (messages_.size() < 3) messages_.push_back(what);
        }
        return ok;
    }
    void note(std::string s) { notes_.push_back(std::move(s)); }
    bool ok() const { return failures_ == 0; }
    std::string detail() const {
        std::ostringstream out;
        if (ok()) {
            out << checks_ << " checks";
        } else {
            out << failures_ << "/" << checks_ << " checks failed";
            for (const auto& m : messages_) out << "; " << m;
        }
        for (const auto& n : notes_) out << "; " << n;
        return out.str();
    }

private:
    std::size_t checks_ = 0;
    std::size_t failures_ = 0;
    std::vector<std::string> messages_;
    std::vector<std::string> notes_;
};

std::string seconds(Clock::time_point start) {
    std::ostringstream out;
    out.precision(2);
    out << std::fixed << std::chrono::duration<double>(Clock::now() - start).count() << " s";
    return out.str();
}

std::vector<std::pair<std::string, std::string>> merge_strings(const tokenizer::BpeVocab& vocab) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& m : vocab.merges()) out.emplace_back(vocab.token_bytes(m.left), vocab.token_bytes(m.right));
    return out;
}

// ---------------------------------------------------------------------------

void tokenizer_round_trip(Check& check) {
    const auto& vocab = testing::test_vocab();
    std::mt19937_64 rng(10000);
    auto start = Clock::now();
    std::size_t failures = 0;
    for (int i = 0; i < 10000; ++i) {
        auto s = testing::random_bytes(rng, 4096);
        if (tokenizer::decode(tokenizer::encode(s, vocab), vocab) != s) ++failures;
    }
    auto elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    check(failures == 0, std::to_string(failures) + " strings did not round trip");
    check(elapsed < 10.0, "took " + seconds(start));
    check.note("10000 strings in " + seconds(start));
}

void splitter_bounds(Check& check) {
    const auto& vocab = testing::test_vocab();
    auto merges = merge_strings(vocab);
    std::mt19937_64 rng(20);
    std::vector<ingest::SplitterConfig> configs;
    for (int i = 0; i < 20; ++i) {
        ingest::SplitterConfig cfg;
        cfg.chunk_size = std::uniform_int_distribution<std::size_t>(8, 256)(rng);
        cfg.chunk_overlap = std::uniform_int_distribution<std::size_t>(0, cfg.chunk_size - 1)(rng);
        configs.push_back(cfg);
    }
    std::size_t chunks_seen = 0;
    for (int d = 0; d < 1000; ++d) {
        ingest::SourceDocument doc;
        doc.doc_id = "dacc" + std::to_string(d);
        doc.text = testing::random_document(rng, std::uniform_int_distribution<std::size_t>(50, 2000)(rng));
        for (const auto& cfg : configs) {
            auto chunks = ingest::split_recursive(doc, cfg, vocab);
            std::vector<bool> covered(doc.text.size(), false);
            std::size_t prev_start = 0;
            bool ok = !chunks.empty();
            for (const auto& c : chunks) {
                ++chunks_seen;
                auto recount = testing::naive_bpe(c.text, merges).size();
                ok = ok && recount <= cfg.chunk_size;
                ok = ok && c.char_span.end <= doc.text.size() &&
                     c.text == doc.text.substr(c.char_span.start, c.char_span.end - c.char_span.start);
                ok = ok && c.char_span.start >= prev_start;
                prev_start = c.char_span.start;
                for (auto p = c.char_span.start; p < std::min(c.char_span.end, doc.text.size()); ++p) covered[p] = true;
            }
            for (std::size_t p = 0; p < doc.text.size(); ++p) {
                if (!std::isspace(static_cast<unsigned char>(doc.text[p])) && !covered[p]) ok = false;
            }
            if (!check(ok, doc.doc_id + " size " + std::to_string(cfg.chunk_size) + " overlap " +
                               std::to_string(cfg.chunk_overlap))) {
                return;
            }
        }
    }
    check.note(std::to_string(chunks_seen) + " chunks");
}

void vector_oracle(Check& check) {
    constexpr std::size_t dim = 32;
    std::mt19937_64 rng(30);
    std::vector<std::pair<std::string, std::vector<float>>> raw;
    vecindex::VectorIndex index("acc", dim, "test");
    std::vector<vecindex::VectorRecord> batch;
    for (int i = 0; i < 1000; ++i) {
        auto v = testing::random_unit_vector(rng, dim);
        auto id = "v" + std::to_string(i);
        raw.emplace_back(id, v);
        batch.push_back({id, {v, "test"}, {{"text", id}}});
    }
    index.upsert(std::move(batch));

    auto path = (testing::temp_dir("acceptance_vec") / "acc.vidx").string();
    index.persist(path);
    auto loaded = vecindex::VectorIndex::load(path);

    for (int q = 0; q < 200; ++q) {
        auto query = testing::random_unit_vector(rng, dim);
        for (std::size_t k : {1, 5, 10}) {
            auto got = index.top_k({query, "test"}, k);
            auto want = testing::brute_force_top_k(raw, query, k);
            bool same = got.size() == want.size();
            for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i].record_id == want[i].id;
            check(same, "query " + std::to_string(q) + " k=" + std::to_string(k) + " differs from brute force");

            auto again = loaded.top_k({query, "test"}, k);
            bool bitwise = again.size() == got.size();
            for (std::size_t i = 0; bitwise && i < got.size(); ++i) {
                bitwise = again[i].record_id == got[i].record_id &&
                          std::memcmp(&again[i].score, &got[i].score, sizeof(double)) == 0;
            }
            check(bitwise, "query " + std::to_string(q) + " k=" + std::to_string(k) + " changed after reload");
        }
    }
}

void matcher_oracle(Check& check) {
    using namespace graphquery;
    std::mt19937_64 rng(40);
    for (int i = 0; i < 500; ++i) {
        auto g = testing::random_match_graph(rng, 12, 30);
        auto q = testing::random_match_query(rng);
        auto r = match_pattern(g, q);
        std::set<MatchBinding> got(r.bindings.begin(), r.bindings.end());
        check(got.size() == r.bindings.size() && got == testing::brute_force_match(g, q),
              "instance " + std::to_string(i) + ": " + pretty_print(q));
    }

    auto node = [](std::string id, std::string type) {
        kg::KGNode n;
        n.node_id = std::move(id);
        n.name = n.node_id;
        n.type = std::move(type);
        return n;
    };
    auto edge = [](std::string id, std::string s, std::string t) {
        kg::KGEdge e;
        e.edge_id = std::move(id);
        e.source_node_id = std::move(s);
        e.target_node_id = std::move(t);
        e.type = "R";
        return e;
    };
    kg::PropertyGraph tri;
    for (auto id : {"n0", "n1", "n2"}) tri.add_node(node(id, "A"));
    tri.add_edge(edge("e0", "n0", "n1"));
    tri.add_edge(edge("e1", "n1", "n2"));
    tri.add_edge(edge("e2", "n2", "n0"));
    auto t = match_pattern(tri, parse_query("MATCH (x)-[:R]->(y)-[:R]->(z)-[:R]->(x) RETURN x"));
    check(t.bindings.size() == 3, "triangle gave " + std::to_string(t.bindings.size()) + " bindings");

    kg::PropertyGraph cities;
    cities.add_node(node("odessa", "GPE_UrbanArea_City"));
    cities.add_node(node("nato", "ORG_International"));
    auto s = match_pattern(cities, parse_query("MATCH (g:GPE) RETURN g"));
    check(s.bindings.size() == 1 && s.bindings[0].nodes.at("g") == "odessa", ":GPE did not match the city node");
}

std::set<std::string> split_bar(const std::string& s) {
    std::set<std::string> out;
    for (const auto& part : split(s, '|')) out.insert(std::string(part));
    return out;
}

void parser_golden(Check& check) {
    using namespace graphquery;
    auto valid = testing::read_fixture_tsv("queries/valid.tsv");
    auto invalid = testing::read_fixture_tsv("queries/invalid.tsv");
    check(valid.size() >= 25, "only " + std::to_string(valid.size()) + " valid queries");
    check(invalid.size() >= 15, "only " + std::to_string(invalid.size()) + " invalid queries");
    for (const auto& row : valid) {
        try {
            auto q = parse_query(row[0]);
            check(row.size() == 2 && pretty_print(q) == row[1], "canonical form of " + row[0]);
            check(parse_query(pretty_print(q)) == q, "reparse of " + row[0]);
        } catch (const std::exception& e) {
            check(false, row[0] + ": " + e.what());
        }
    }
    std::size_t syntax = 0;
    for (const auto& row : invalid) {
        try {
            parse_query(row[0]);
            check(false, "accepted " + row[0]);
        } catch (const QuerySemanticError& e) {
            check(row[1] == "semantic" && row.size() >= 3 && e.variable() == row[2], "semantic error for " + row[0]);
        } catch (const QuerySyntaxError& e) {
            ++syntax;
            check(row.size() == 4 && e.line() == std::stoul(row[1]) && e.column() == std::stoul(row[2]) &&
                      e.expected() == split_bar(row[3]),
                  "position or expected set for " + row[0]);
        }
    }
    check.note(std::to_string(valid.size()) + " valid, " + std::to_string(invalid.size()) + " invalid (" +
               std::to_string(syntax) + " syntax)");
}

void ontology_properties(Check& check) {
    using namespace ontology;
    std::mt19937_64 rng(60);
    for (int trial = 0; trial < 100; ++trial) {
        auto s = testing::random_forest(rng, 20);
        bool order = true;
        for (const auto& a : s.node_types()) {
            order = order && s.is_subtype(a.canonical_name, a.canonical_name);
            for (const auto& b : s.node_types()) {
                bool ab = s.is_subtype(a.canonical_name, b.canonical_name);
                if (ab && s.is_subtype(b.canonical_name, a.canonical_name)) order = order && a.canonical_name == b.canonical_name;
                if (!ab) continue;
                for (const auto& c : s.node_types()) {
                    if (s.is_subtype(b.canonical_name, c.canonical_name)) order = order && s.is_subtype(a.canonical_name, c.canonical_name);
                }
            }
        }
        check(order, "forest " + std::to_string(trial) + " is not a partial order");
    }

    const ViolationKind kinds[] = {ViolationKind::unknown_node_type, ViolationKind::unknown_edge_type,
                                   ViolationKind::endpoint_type, ViolationKind::dangling_endpoint};
    for (int seed = 0; seed < 100; ++seed) {
        auto schema = seed % 2 ? testing::random_forest(rng, 12) : testing::news_ontology();
        auto base = testing::random_valid_payload(rng, schema);
        check(validate_subgraph(base, schema).ok(), "base payload " + std::to_string(seed) + " invalid");
        for (auto k : kinds) {
            auto p = base;
            testing::seed_violation(rng, p, k, schema);
            auto r = validate_subgraph(p, schema);
            check(r.violations.size() == 1 && r.count(k) == 1,
                  std::string(to_string(k)) + " seed " + std::to_string(seed) + " reported " +
                      std::to_string(r.violations.size()) + " times");
        }
    }
}

void curation_determinism(Check& check) {
    std::string first;
    for (int run = 0; run < 3; ++run) {
        curate::CurationSummary s;
        auto store = testing::curated_news_store(testing::temp_dir("acceptance_curate").string(), &s);
        check(s.failures.empty(), "run " + std::to_string(run) + " recorded failures");
        check(s.chunks_added == 18, "chunks " + std::to_string(s.chunks_added) + " != 18");
        check(s.total_nodes == 24, "nodes " + std::to_string(s.total_nodes) + " != 24");
        check(s.total_edges == 41, "edges " + std::to_string(s.total_edges) + " != 41");
        auto cypher = kg::export_cypher(store.graph);
        if (run == 0) first = cypher;
        check(!cypher.empty() && cypher == first, "Cypher export differs on run " + std::to_string(run));

        if (run == 0) {
            auto mock = testing::news_mock();
            curate::CurationInputs in{testing::news_ontology(), *mock, testing::trigram(), testing::shipped_templates(),
                                      testing::test_vocab()};
            auto before = store.graph;
            auto again = curate::curate(store, testing::news_manifest(), testing::news_corpus_dir(), in,
                                        testing::news_curation_config());
            check(again.nodes_added == 0 && again.edges_added == 0 && again.chunks_added == 0 && store.graph == before,
                  "re-curation changed the store");
        }
    }

    kg::PropertyGraph g("news-2024.1");
    ExtractionPayload p;
    p.nodes = {{"a", "Odessa", "GPE_UrbanArea_City", {}}};
    kg::merge_subgraph(g, p, {"doc1", "doc1#0", "run1", std::nullopt});
    p.nodes = {{"x", "odessa", "GPE_UrbanArea_City", {}}};
    kg::merge_subgraph(g, p, {"doc1", "doc1#1", "run1", std::nullopt});
    check(g.nodes().size() == 1, "duplicate mentions gave " + std::to_string(g.nodes().size()) + " nodes");
    check(!g.nodes().empty() && g.nodes().begin()->second.provenance.size() == 2, "expected 2 provenance records");
}

/// Lowercase trigram sets with one leading and trailing space, compared
/// exactly (no hashing). Used to confirm the synthetic KB is unambiguous.
std::set<std::string> trigram_set(const std::string& s) {
    std::string t = " ";
    for (char c : s) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    t += " ";
    std::set<std::string> out;
    for (std::size_t i = 0; i + 3 <= t.size(); ++i) out.insert(t.substr(i, 3));
    return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    return double(inter) / double(a.size() + b.size() - inter);
}

void disambiguation(Check& check) {
    const auto& emb = testing::trigram();
    const auto& tpl = testing::shipped_templates();
    std::mt19937_64 rng(80);
    const std::string letters = "bcdfghjklmnpqrstvwxz";
    const std::string vowels = "aeiou";
    auto word = [&] {
        std::string w;
        for (int i = 0; i < 3; ++i) {
            w += letters[rng() % letters.size()];
            w += vowels[rng() % vowels.size()];
        }
        w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
        return w;
    };

    // Labels are redrawn until every trigram set overlaps all earlier ones by
    // less than a third, so each mention has one clear nearest record.
    std::vector<curate::KbRecord> kb;
    std::vector<std::set<std::string>> grams;
    while (kb.size() < 100) {
        auto label = word() + " " + word();
        auto g = trigram_set(label);
        bool clear = std::all_of(grams.begin(), grams.end(), [&](const auto& o) { return jaccard(g, o) < 0.33; });
        if (!clear) continue;
        grams.push_back(g);
        kb.push_back({"Q" + std::to_string(900000 + kb.size()), label, "synthetic record " + std::to_string(kb.size())});
    }
    vecindex::VectorIndex index(vecindex::kReferenceKbIndex, emb.dim(), emb.model_id());
    curate::load_kb(index, kb, emb);

    std::vector<std::pair<std::string, std::vector<float>>> raw;
    for (const auto& r : kb) raw.emplace_back(r.qid, emb.embed(r.label).values);

    // Mentions differ from labels in case and spacing only.
    auto mention_of = [](const std::string& label) {
        std::string m;
        for (char c : label) {
            m += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            if (c == ' ') m += "  ";
        }
        return m;
    };

    std::size_t correct = 0;
    for (const auto& r : kb) {
        auto mention = mention_of(r.label);
        auto oracle = testing::brute_force_top_k(raw, emb.embed(mention).values, 2);
        check(oracle.size() == 2 && oracle[0].id == r.qid && oracle[1].score < oracle[0].score,
              "oracle top-1 for " + mention + " is not unique");
        auto d = curate::disambiguate(mention, "", index, emb, nullptr, tpl);
        if (d.qid == r.qid && d.method == kg::DisambiguationMethod::vector_top1) ++correct;
    }
    check(correct == kb.size(), std::to_string(correct) + "/100 top-1 correct");

    // Script the re-rank to name candidate 2 for every mention.
    llm::MockScript script;
    std::map<std::string, std::string> second;
    for (const auto& r : kb) {
        auto mention = mention_of(r.label);
        llm::FunctionProvider capture([&](const llm::ChatRequest& req) {
            auto lines = split(req.vars.at("candidates"), '\n');
            auto fields = split(lines.at(1), '|');
            auto qid = std::string(trim(fields[0].substr(fields[0].find('.') + 1)));
            second[mention] = qid;
            script.add(req.template_id, sha256_hex(req.user), qid + ".");
            return std::string("NONE");
        });
        curate::disambiguate(mention, "", index, emb, &capture, tpl);
    }
    llm::MockProvider scripted(script, llm::MockDictionary{});
    std::size_t overridden = 0;
    for (const auto& r : kb) {
        auto mention = mention_of(r.label);
        auto d = curate::disambiguate(mention, "", index, emb, &scripted, tpl);
        if (d.qid && *d.qid == second[mention] && *d.qid != r.qid && d.method == kg::DisambiguationMethod::rerank) {
            ++overridden;
        }
    }
    check(overridden == kb.size(), std::to_string(overridden) + "/100 re-ranks chose candidate 2");
}

/// Fixture mock that throws for the listed template ids.
llm::FunctionProvider injecting(llm::MockProvider& mock, std::set<std::string> fail) {
    return llm::FunctionProvider([&mock, fail](const llm::ChatRequest& r) {
        if (fail.count(r.template_id)) throw llm::ProviderError(llm::ProviderError::Kind::transport, "injected");
        return mock.complete(r).text;
    });
}

bool sound(const queryphase::QueryResult& r, const curate::KnowledgeStore& store) {
    auto allowed = r.context.citable_ids();
    auto known = [&](const std::string& kind, const std::string& id) {
        if (!allowed.count(kind + ":" + id)) return false;
        if (kind == "chunk") return store.chunks.chunk(id) != nullptr;
        if (kind == "node") return store.graph.node(id) != nullptr;
        if (kind == "edge") return store.graph.edge(id) != nullptr;
        if (kind == "kb") return store.vectors.get(vecindex::kReferenceKbIndex).find(id) != nullptr;
        return false;
    };
    for (const auto& c : r.answer.citations) {
        if (!known(c.kind, c.id)) return false;
    }
    for (const auto& c : queryphase::parse_citations(r.answer.text)) {
        if (!known(c.kind, c.id)) return false;
    }
    return true;
}

void query_phase(Check& check) {
    using namespace queryphase;
    auto store = testing::curated_news_store(testing::temp_dir("acceptance_query").string());
    EngineInputs in{testing::news_ontology(), testing::shipped_templates(), testing::trigram()};

    std::vector<std::size_t> counts;
    for (auto level : {Level::llm_only, Level::kb, Level::corpus, Level::kg}) {
        auto mock = testing::news_mock();
        auto r = run_query(kOdessaQuestion, level, store, *mock, in);
        check(sound(r, store), std::string(to_string(level)) + " cited outside its evidence");
        counts.push_back(r.answer.citations.size());
    }
    check(counts[0] <= counts[1] && counts[1] <= counts[2] && counts[2] <= counts[3], "citation counts not monotone");
    check(counts[0] < counts[1] && counts[1] < counts[2] && counts[2] < counts[3], "citation counts not strictly increasing");
    check.note("citations " + std::to_string(counts[0]) + " <= " + std::to_string(counts[1]) + " <= " +
               std::to_string(counts[2]) + " <= " + std::to_string(counts[3]));

    auto mock = testing::news_mock();
    {
        auto p = injecting(*mock, {"expand_query"});
        auto r = run_query(kOdessaQuestion, Level::kg, store, p, in);
        check(r.diagnostics.expansion_failed && r.expanded.expansions.empty() && sound(r, store), "expansion failure");
    }
    {
        auto p = injecting(*mock, {"generate_pattern"});
        auto r = run_query(kOdessaQuestion, Level::kg, store, p, in);
        check(r.diagnostics.failed_patterns > 0 && r.context.graph_evidence.node_ids.empty() && sound(r, store),
              "pattern failure");
    }
    {
        auto p = injecting(*mock, {"draft_answer"});
        bool typed = false;
        try {
            run_query(kOdessaQuestion, Level::kg, store, p, in);
        } catch (const llm::ProviderError&) {
            typed = true;
        }
        check(typed, "draft failure did not raise ProviderError");
    }
    {
        auto p = injecting(*mock, {"aggregate_answers"});
        auto r = run_query(kOdessaQuestion, Level::kg, store, p, in);
        check(r.diagnostics.aggregation_failed && !r.answer.drafts.empty() && r.answer.text == r.answer.drafts.front() &&
                  sound(r, store),
              "aggregation failure");
    }
}

std::string store_checksum(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = sha256_hex(read_file(e.path().string()));
    }
    std::string all;
    for (const auto& [name, h] : files) all += name + " " + h + "\n";
    return sha256_hex(all);
}

void service_contract(Check& check) {
    auto dir = testing::temp_dir("acceptance_service");
    auto cfg = Config::load(testing::fixture_path("news.conf"));
    cfg.store_dir = dir.string();
    auto svc = service::Service::open(cfg);
    int port = svc->bind("127.0.0.1", 0);
    std::thread server([&] { svc->run(); });

    auto client = [&] {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(60, 0);
        return c;
    };
    auto call = [&](const std::string& method, const std::string& path, const std::string& body, int expect) {
        auto res = method == "GET" ? client().Get(path) : client().Post(path, body, "application/json");
        if (!check(res && res->status == expect, method + " " + path + " -> " +
                                                     (res ? std::to_string(res->status) + " " + res->body.substr(0, 80)
                                                          : std::string("no response")))) {
            return json();
        }
        return json::parse(res->body, nullptr, false);
    };
    for (int i = 0; i < 200 && !client().Get("/api/health"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));

    auto health = call("GET", "/api/health", "", 200);
    check(health.is_object() && health.value("status", "") == "ok", "health status");

    json records = json::array();
    for (const auto& line : split(read_file(testing::fixture_path("corpus/manifest.jsonl")), '\n')) {
        if (!trim(line).empty()) records.push_back(json::parse(line));
    }
    auto started = call("POST", "/api/ingest", json{{"records", records}, {"base_dir", testing::news_corpus_dir()}}.dump(), 202);
    json run;
    if (started.is_object() && started.contains("run_id")) {
        for (int i = 0; i < 3000; ++i) {
            run = call("GET", "/api/runs/" + started["run_id"].get<std::string>(), "", 200);
            if (!run.is_object() || run.value("status", "") != "running") break;
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    }
    check(run.is_object() && run.value("status", "") == "succeeded", "ingest run did not succeed");
    if (run.is_object() && run.contains("summary")) {
        const auto& t = run["summary"]["totals"];
        check(t["chunks"] == 18 && t["nodes"] == 24 && t["edges"] == 41, "ingest totals " + t.dump());
    }
    call("GET", "/api/runs/unknown", "", 404);
    call("POST", "/api/ingest", "[]", 400);

    auto before = store_checksum(dir);
    auto stats = call("GET", "/api/graph/stats", "", 200);
    check(stats.is_object() && stats.value("total_nodes", 0) == 24 && stats.value("total_edges", 0) == 41, "stats totals");
    auto odessa = kg::node_id_for("qid:Q1874");
    auto node = call("GET", "/api/graph/node/" + odessa, "", 200);
    check(node.is_object() && node.contains("provenance") && !node["provenance"].empty(), "node provenance");
    call("GET", "/api/graph/node/missing", "", 404);
    auto sub = call("GET", "/api/graph/subgraph?center=" + odessa + "&hops=1", "", 200);
    check(sub.is_object() && sub["nodes"].size() > 1 && sub["edges"].is_array(), "subgraph shape");
    call("GET", "/api/graph/subgraph?center=" + odessa + "&hops=3", "", 400);
    auto proj = call("GET", "/api/embeddings/projection?index=corpus", "", 200);
    check(proj.is_object() && proj["points"].size() == 18, "projection covers every chunk");
    check(store_checksum(dir) == before, "GET requests changed the store");

    for (const auto* level : {"llm_only", "kb", "corpus", "kg"}) {
        auto q = call("POST", "/api/query", json{{"q", kOdessaQuestion}, {"level", level}}.dump(), 200);
        check(q.is_object() && q["level"] == level && q["answer"].is_string(), std::string("query at ") + level);
    }
    call("POST", "/api/query", json{{"q", ""}}.dump(), 400);

    const std::vector<std::string> levels = {"llm_only", "kb", "corpus", "kg"};
    std::vector<std::future<json>> futures;
    for (int i = 0; i < 16; ++i) {
        futures.push_back(std::async(std::launch::async, [&, i] {
            auto res = client().Post("/api/query", json{{"q", kOdessaQuestion}, {"level", levels[i % 4]}}.dump(), "application/json");
            if (!res || res->status != 200) return json();
            return json::parse(res->body, nullptr, false);
        }));
    }
    std::size_t well_formed = 0;
    for (int i = 0; i < 16; ++i) {
        auto j = futures[i].get();
        if (j.is_object() && j["answer"].is_string() && j["citations"].is_array() && j["evidence"].is_object() &&
            j["level"] == levels[i % 4]) {
            ++well_formed;
        }
    }
    check(well_formed == 16, std::to_string(well_formed) + "/16 concurrent queries well-formed");
    check(store_checksum(dir) == before, "queries changed the store");

    svc->stop();
    server.join();
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
        {"tokenizer round trip", tokenizer_round_trip},
        {"splitter bounds", splitter_bounds},
        {"vector oracle", vector_oracle},
        {"matcher oracle", matcher_oracle},
        {"parser golden corpus", parser_golden},
        {"ontology order and validation", ontology_properties},
        {"deterministic curation", curation_determinism},
        {"disambiguation", disambiguation},
        {"query phase", query_phase},
        {"service contract", service_contract},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Check check;
        auto start = Clock::now();
        try {
            run(check);
        } catch (const std::exception& e) {
            check(false, std::string("exception: ") + e.what());
        }
        if (!check.ok()) ++failed;
        std::cout << (check.ok() ? "PASS " : "FAIL ") << name << ": " << check.detail() << " [" << seconds(start) << "]"
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
