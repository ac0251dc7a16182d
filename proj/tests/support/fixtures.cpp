#include "support/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kgrag/common.hpp"

namespace kgrag::testing {

std::string fixture_path(const std::string& rel) { return std::string(KGRAG_FIXTURES_DIR) + "/" + rel; }

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("kgrag_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string templates_dir() { return KGRAG_TEMPLATES_DIR; }

const tokenizer::BpeVocab& test_vocab() {
    static const auto vocab = tokenizer::load_vocab(read_file(fixture_path("vocab/test_vocab.txt")));
    return vocab;
}

tokenizer::BpeVocab two_merge_vocab() {
    return tokenizer::load_vocab("bpe-vocab v1\n" + hex_encode("a") + " " + hex_encode("a") + "\n" +
                                 hex_encode("aa") + " " + hex_encode("b") + "\n");
}

std::string random_bytes(std::mt19937_64& rng, std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<int> mode(0, 3);
    std::string s(len(rng), '\0');
    // Mix uniform bytes with ASCII-heavy stretches so merges actually fire.
    int m = mode(rng);
    std::uniform_int_distribution<int> ascii(' ', 'z');
    for (auto& c : s) c = static_cast<char>(m == 0 ? byte(rng) : (byte(rng) < 230 ? ascii(rng) : byte(rng)));
    return s;
}

std::string random_document(std::mt19937_64& rng, std::size_t approx_len) {
    static const char* words[] = {"the", "attack", "on", "odessa", "city", "report", "and", "of", "station",
                                  "generation", "ration", "in", "graph", "é", "naïve", "Київ", "🌍", "a"};
    std::uniform_int_distribution<std::size_t> pick(0, std::size(words) - 1);
    std::uniform_int_distribution<int> roll(0, 99);
    std::string out;
    while (out.size() < approx_len) {
        int r = roll(rng);
        if (r < 2) {
            std::uniform_int_distribution<std::size_t> run(50, 900);
            std::string w;
            auto n = run(rng);
            while (w.size() < n) w += words[pick(rng)];
            out += w;
        } else {
            out += words[pick(rng)];
        }
        r = roll(rng);
        if (r < 5) out += "\n\n";
        else if (r < 12) out += "\n";
        else if (r < 14) out += "  ";
        else out += " ";
    }
    return out;
}

const ontology::OntologySchema& news_ontology() {
    static const auto schema = ontology::parse_ontology(read_file(fixture_path("ontology/news.ontology")));
    return schema;
}

ontology::OntologySchema random_forest(std::mt19937_64& rng, std::size_t n) {
    ontology::OntologySchema schema("random");
    std::vector<std::string> names;
    std::uniform_int_distribution<int> roots(2, 4);
    int r = roots(rng);
    for (int i = 0; i < r && names.size() < n; ++i) {
        names.push_back("R" + std::to_string(i));
        schema.add_node(names.back());
    }
    while (names.size() < n) {
        const auto& parent = names[std::uniform_int_distribution<std::size_t>(0, names.size() - 1)(rng)];
        if (std::count(parent.begin(), parent.end(), '_') >= 4) continue;
        auto child = parent + "_S" + std::to_string(names.size());
        schema.add_node(child);
        names.push_back(child);
    }
    std::uniform_int_distribution<std::size_t> pick(0, names.size() - 1);
    for (int e = 0; e < 3; ++e) {
        schema.add_edge({"Rel" + std::to_string(e), {names[pick(rng)]}, {names[pick(rng)], names[pick(rng)]}, ""});
    }
    return schema;
}

ExtractionPayload random_valid_payload(std::mt19937_64& rng, const ontology::OntologySchema& schema) {
    ExtractionPayload p;
    const auto& types = schema.node_types();
    std::uniform_int_distribution<std::size_t> pick_type(0, types.size() - 1);
    std::uniform_int_distribution<int> count(2, 8);
    int n = count(rng);
    for (int i = 0; i < n; ++i) {
        p.nodes.push_back({"n" + std::to_string(i), "mention " + std::to_string(i), types[pick_type(rng)].canonical_name, {}});
    }
    for (const auto& e : schema.edge_types()) {
        for (const auto& s : p.nodes) {
            for (const auto& t : p.nodes) {
                bool d = std::any_of(e.domain.begin(), e.domain.end(), [&](auto& x) { return schema.is_subtype(s.type, x); });
                bool r = std::any_of(e.range.begin(), e.range.end(), [&](auto& x) { return schema.is_subtype(t.type, x); });
                if (d && r && std::uniform_int_distribution<int>(0, 2)(rng) == 0) {
                    p.edges.push_back({s.local_id, t.local_id, e.name, {}});
                }
            }
        }
    }
    return p;
}

void seed_violation(std::mt19937_64& rng, ExtractionPayload& p, ontology::ViolationKind kind,
                    const ontology::OntologySchema& schema) {
    using ontology::ViolationKind;
    auto id = "x" + std::to_string(p.nodes.size());
    const auto& edge = schema.edge_types()[std::uniform_int_distribution<std::size_t>(0, schema.edge_types().size() - 1)(rng)];
    if (p.nodes.empty()) p.nodes.push_back({"n0", "anchor", schema.node_types().front().canonical_name, {}});
    switch (kind) {
        case ViolationKind::unknown_node_type:
            p.nodes.push_back({id, "dragon", "Dragon", {}});
            break;
        case ViolationKind::unknown_edge_type:
            p.edges.push_back({p.nodes.front().local_id, p.nodes.back().local_id, "FriendsWith", {}});
            break;
        case ViolationKind::dangling_endpoint:
            p.edges.push_back({p.nodes.front().local_id, "ghost", edge.name, {}});
            break;
        case ViolationKind::endpoint_type: {
            // A source typed outside every domain member of some edge, with a valid target.
            for (const auto& e : schema.edge_types()) {
                for (const auto& t : schema.node_types()) {
                    bool in_domain = std::any_of(e.domain.begin(), e.domain.end(),
                                                 [&](auto& x) { return schema.is_subtype(t.canonical_name, x); });
                    if (in_domain) continue;
                    p.nodes.push_back({id + "s", "bad source", t.canonical_name, {}});
                    p.nodes.push_back({id + "t", "good target", *e.range.begin(), {}});
                    p.edges.push_back({id + "s", id + "t", e.name, {}});
                    return;
                }
            }
            throw Error("every edge domain covers every type; cannot seed an endpoint violation");
        }
        case ViolationKind::structural:
            throw Error("structural violations are not seeded here");
    }
}

std::vector<float> random_unit_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(dim);
    double n = 0;
    do {
        n = 0;
        for (auto& x : v) {
            x = g(rng);
            n += x * x;
        }
    } while (n == 0);
    n = std::sqrt(n);
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
}

std::vector<std::vector<std::string>> read_fixture_tsv(const std::string& rel) {
    std::ifstream in(fixture_path(rel));
    if (!in) throw Error("cannot open fixture " + rel);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("#", 0) == 0) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            auto tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        std::string& q = cols[0];
        for (std::size_t p; (p = q.find("\\n")) != std::string::npos;) q.replace(p, 2, "\n");
        rows.push_back(std::move(cols));
    }
    return rows;
}

namespace {

const std::vector<std::string> kMatchTypes = {"A", "A_B", "A_B_C", "C", "C_D"};
const std::vector<std::string> kMatchLabels = {"A", "A_B", "C", "C_D"};

}  // namespace

kg::PropertyGraph random_match_graph(std::mt19937_64& rng, std::size_t max_nodes, std::size_t max_edges) {
    kg::PropertyGraph g;
    auto n = std::uniform_int_distribution<std::size_t>(1, max_nodes)(rng);
    for (std::size_t i = 0; i < n; ++i) {
        kg::KGNode node;
        node.node_id = "n" + std::to_string(i);
        node.name = "x" + std::to_string(i);
        node.type = kMatchTypes[rng() % kMatchTypes.size()];
        g.add_node(std::move(node));
    }
    auto m = std::uniform_int_distribution<std::size_t>(0, max_edges)(rng);
    for (std::size_t i = 0; i < m; ++i) {
        kg::KGEdge e;
        e.edge_id = "e" + std::to_string(i);
        e.source_node_id = "n" + std::to_string(rng() % n);
        e.target_node_id = "n" + std::to_string(rng() % n);
        e.type = rng() % 2 ? "R" : "S";
        g.add_edge(std::move(e));
    }
    return g;
}

graphquery::Query random_match_query(std::mt19937_64& rng) {
    using namespace graphquery;
    Query q;
    std::size_t segments = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    std::size_t paths = segments >= 2 && rng() % 2 ? 2 : 1;
    std::vector<std::size_t> per_path(paths, 0);
    for (std::size_t s = 0; s < segments; ++s) ++per_path[rng() % paths];
    auto random_node = [&] {
        NodePattern n;
        if (rng() % 4) n.var = "v" + std::to_string(rng() % 3);
        if (rng() % 3 == 0) n.label = kMatchLabels[rng() % kMatchLabels.size()];
        if (rng() % 8 == 0) n.properties.emplace_back("name", Literal::str("x" + std::to_string(rng() % 4)));
        return n;
    };
    std::size_t edge_var = 0;
    for (std::size_t p = 0; p < paths; ++p) {
        PathPattern path;
        path.nodes.push_back(random_node());
        for (std::size_t s = 0; s < per_path[p]; ++s) {
            EdgePattern e;
            if (rng() % 2) e.var = "r" + std::to_string(edge_var++);
            if (rng() % 2) e.type = rng() % 2 ? "R" : "S";
            e.direction = static_cast<Direction>(rng() % 3);
            path.edges.push_back(e);
            path.nodes.push_back(random_node());
        }
        q.paths.push_back(std::move(path));
    }
    // RETURN needs a bound variable; bind one if every node came out anonymous.
    if (!q.paths[0].nodes[0].var) q.paths[0].nodes[0].var = "v0";
    q.returns.push_back({*q.paths[0].nodes[0].var, std::nullopt});
    return q;
}

std::unique_ptr<llm::MockProvider> news_mock(const std::string& script) {
    return std::make_unique<llm::MockProvider>(llm::MockScript::parse(script),
                                               llm::MockDictionary::parse(read_file(fixture_path("mock/news.mockdict"))));
}

const llm::TemplateStore& shipped_templates() {
    static const llm::TemplateStore store(templates_dir());
    return store;
}

const vecindex::TrigramEmbedder& trigram() {
    static const vecindex::TrigramEmbedder e;
    return e;
}

curate::CurationConfig news_curation_config() {
    curate::CurationConfig cfg;
    cfg.splitter.chunk_size = 256;
    cfg.splitter.chunk_overlap = 32;
    cfg.concurrency = 4;
    return cfg;
}

std::vector<ingest::ManifestRecord> news_manifest() {
    return ingest::parse_manifest(read_file(fixture_path("corpus/manifest.jsonl")));
}

std::string news_corpus_dir() { return fixture_path("corpus"); }

curate::KnowledgeStore news_store_with_kb(const std::string& dir) {
    auto store = curate::KnowledgeStore::open(dir);
    auto& kb = store.vectors.ensure(vecindex::kReferenceKbIndex, trigram().dim(), trigram().model_id());
    curate::load_kb(kb, curate::parse_kb_tsv(read_file(fixture_path("kb/reference_kb.tsv"))), trigram());
    return store;
}

curate::KnowledgeStore curated_news_store(const std::string& dir, curate::CurationSummary* summary) {
    auto store = news_store_with_kb(dir);
    auto provider = news_mock();
    curate::CurationInputs in{news_ontology(), *provider, trigram(), shipped_templates(), test_vocab()};
    auto s = curate::curate(store, news_manifest(), news_corpus_dir(), in, news_curation_config());
    store.save();
    if (summary) *summary = s;
    return store;
}

}  // namespace kgrag::testing
