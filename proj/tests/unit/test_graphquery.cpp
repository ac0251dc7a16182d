#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "kgrag/graphquery.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace kgrag;
using namespace kgrag::graphquery;

namespace {

std::vector<std::vector<std::string>> read_tsv(const std::string& rel) { return testing::read_fixture_tsv(rel); }

std::set<std::string> split_bar(const std::string& s) {
    std::set<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto bar = s.find('|', start);
        out.insert(s.substr(start, bar - start));
        if (bar == std::string::npos) break;
        start = bar + 1;
    }
    return out;
}

kg::PropertyGraph news_graph() {
    kg::PropertyGraph g("news-2024.1");
    ExtractionPayload p;
    p.nodes = {{"a", "Odessa", "GPE_UrbanArea_City", {{"population", "1010000", ValueType::number}}},
               {"b", "Kyiv", "GPE_UrbanArea_City", {}},
               {"c", "Kharkiv", "GPE_UrbanArea_City", {}},
               {"d", "Zelensky", "PER_Politician", {}},
               {"f", "the strike", "ConflictAttack_AirStrike", {{"date", "2024-03-02", ValueType::timestamp}}}};
    p.edges = {{"f", "a", "Place", {}}, {"f", "b", "Target", {}}, {"d", "b", "LeaderOf", {}}};
    kg::merge_subgraph(g, p, {"doc1", "doc1:0", "run1", std::string("2024-03-03T00:00:00Z")});
    return g;
}

std::string id_of(const kg::PropertyGraph& g, const std::string& name) {
    for (const auto& [id, n] : g.nodes()) {
        if (n.name == name) return id;
    }
    FAIL("no node " << name);
    return {};
}

kg::KGNode plain_node(std::string id, std::string type) {
    kg::KGNode n;
    n.node_id = id;
    n.name = "x" + id.substr(1);
    n.type = std::move(type);
    return n;
}

kg::KGEdge plain_edge(std::string id, std::string s, std::string t, std::string type) {
    kg::KGEdge e;
    e.edge_id = std::move(id);
    e.source_node_id = std::move(s);
    e.target_node_id = std::move(t);
    e.type = std::move(type);
    return e;
}

kg::PropertyGraph random_graph(std::mt19937_64& rng, std::size_t max_nodes, std::size_t max_edges) {
    return testing::random_match_graph(rng, max_nodes, max_edges);
}

Query random_query(std::mt19937_64& rng) { return testing::random_match_query(rng); }

std::set<MatchBinding> as_set(const MatchResult& r) { return {r.bindings.begin(), r.bindings.end()}; }

}  // namespace

TEST_CASE("valid query corpus parses to its canonical form", "[graphquery]") {
    auto rows = read_tsv("queries/valid.tsv");
    REQUIRE(rows.size() >= 25);
    for (const auto& row : rows) {
        INFO(row[0]);
        REQUIRE(row.size() == 2);
        auto q = parse_query(row[0]);
        CHECK(pretty_print(q) == row[1]);
        CHECK(parse_query(pretty_print(q)) == q);
    }
}

TEST_CASE("invalid query corpus reports position and expected tokens", "[graphquery]") {
    auto rows = read_tsv("queries/invalid.tsv");
    REQUIRE(rows.size() >= 15);
    for (const auto& row : rows) {
        INFO(row[0]);
        if (row[1] == "semantic") {
            try {
                parse_query(row[0]);
                FAIL("accepted");
            } catch (const QuerySemanticError& e) {
                CHECK(e.variable() == row[2]);
            }
            continue;
        }
        REQUIRE(row.size() == 4);
        try {
            parse_query(row[0]);
            FAIL("accepted");
        } catch (const QuerySyntaxError& e) {
            CHECK(e.line() == std::stoul(row[1]));
            CHECK(e.column() == std::stoul(row[2]));
            CHECK(e.expected() == split_bar(row[3]));
            CHECK(std::string(e.what()).find("line " + row[1]) != std::string::npos);
        }
    }
}

TEST_CASE("parser builds the expected AST", "[graphquery]") {
    auto q = parse_query("MATCH (a:GPE)<-[r:Target]-(e {name: 'the strike'}) WHERE NOT a.name = 'Odessa' RETURN e.date LIMIT 3");
    REQUIRE(q.paths.size() == 1);
    const auto& p = q.paths[0];
    REQUIRE(p.nodes.size() == 2);
    CHECK(p.nodes[0].var == "a");
    CHECK(p.nodes[0].label == "GPE");
    CHECK(p.edges[0].var == "r");
    CHECK(p.edges[0].type == "Target");
    CHECK(p.edges[0].direction == Direction::in);
    CHECK(p.nodes[1].properties == std::vector<std::pair<std::string, Literal>>{{"name", Literal::str("the strike")}});
    REQUIRE(q.where);
    CHECK(q.where->kind == Expr::Kind::not_);
    CHECK(q.where->children[0].lhs.key == "name");
    CHECK(q.returns[0].column() == "e.date");
    CHECK(q.limit == 3u);
}

TEST_CASE("labels match subtypes and edge types match exactly", "[graphquery]") {
    auto g = news_graph();
    auto r = evaluate(g, parse_query("MATCH (a:GPE) RETURN a"));
    std::multiset<std::string> names;
    for (const auto& row : r.rows) names.insert(*row[0]);
    CHECK(names == std::multiset<std::string>{"Kharkiv", "Kyiv", "Odessa"});
    CHECK(evaluate(g, parse_query("MATCH (a:GPE_UrbanArea_City) RETURN a")).rows.size() == 3);
    CHECK(evaluate(g, parse_query("MATCH (a:GPE_Urban) RETURN a")).rows.empty());
    CHECK(evaluate(g, parse_query("MATCH (a:City) RETURN a")).rows.empty());
    CHECK(evaluate(g, parse_query("MATCH (e)-[:Target]->(a:GPE) RETURN a")).rows.size() == 1);
    CHECK(evaluate(g, parse_query("MATCH (e)-[:Targ]->(a) RETURN a")).rows.empty());
}

TEST_CASE("edge direction is honoured", "[graphquery]") {
    auto g = news_graph();
    auto out = evaluate(g, parse_query("MATCH (e:ConflictAttack)-[r]->(a) RETURN a, r"));
    CHECK(out.rows.size() == 2);
    CHECK(evaluate(g, parse_query("MATCH (e:ConflictAttack)<-[r]-(a) RETURN a")).rows.empty());
    CHECK(evaluate(g, parse_query("MATCH (e:ConflictAttack)-[r]-(a) RETURN a")).rows.size() == 2);
    auto kyiv = evaluate(g, parse_query("MATCH (k {name: 'Kyiv'})<-[r]-(x) RETURN x, r.type"));
    std::set<std::pair<std::string, std::string>> got;
    for (const auto& row : kyiv.rows) got.emplace(*row[0], *row[1]);
    CHECK(got == std::set<std::pair<std::string, std::string>>{{"Zelensky", "LeaderOf"}, {"the strike", "Target"}});
}

TEST_CASE("missing properties project as empty cells", "[graphquery]") {
    auto g = news_graph();
    auto r = evaluate(g, parse_query("MATCH (a:GPE) RETURN a.name, a.population, a.qid"));
    CHECK(r.columns == std::vector<std::string>{"a.name", "a.population", "a.qid"});
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) {
        CHECK_FALSE(row[2].has_value());
        if (row[0] == "Odessa") CHECK(row[1] == "1010000");
        else CHECK_FALSE(row[1].has_value());
    }
}

TEST_CASE("WHERE comparisons follow value types", "[graphquery]") {
    auto g = news_graph();
    auto big = evaluate(g, parse_query("MATCH (a) WHERE a.population > 1000000 RETURN a"));
    REQUIRE(big.rows.size() == 1);
    CHECK(big.rows[0][0] == "Odessa");
    CHECK(evaluate(g, parse_query("MATCH (a) WHERE a.population > 2e6 RETURN a")).rows.empty());
    CHECK(evaluate(g, parse_query("MATCH (a) WHERE a.population = 1010000.0 RETURN a")).rows.size() == 1);

    auto date = evaluate(g, parse_query("MATCH (e) WHERE e.date >= '2024-03-01' AND e.date < '2024-04' RETURN e"));
    REQUIRE(date.rows.size() == 1);
    CHECK(date.rows[0][0] == "the strike");

    CHECK(evaluate(g, parse_query("MATCH (a) WHERE a.name STARTS WITH 'Kh' RETURN a")).rows.size() == 1);
    CHECK(evaluate(g, parse_query("MATCH (a) WHERE a.name CONTAINS 'KY' RETURN a")).rows.empty());
    CHECK(evaluate(g, parse_query("MATCH (a) WHERE a.name CONTAINS 'yi' OR a.name = 'Zelensky' RETURN a")).rows.size() == 2);
    CHECK(evaluate(g, parse_query("MATCH (a:GPE) WHERE NOT a.name = 'Kyiv' RETURN a")).rows.size() == 2);
    CHECK(evaluate(g, parse_query("MATCH (a:GPE) WHERE a.name <> 'Kyiv' RETURN a")).rows.size() == 2);
}

TEST_CASE("incompatible comparisons exclude the row and are counted", "[graphquery]") {
    auto g = news_graph();
    auto r = evaluate(g, parse_query("MATCH (a) WHERE a.population = 'big' RETURN a"));
    CHECK(r.rows.empty());
    CHECK(r.incompatible_comparisons == 1);
    auto c = evaluate(g, parse_query("MATCH (a) WHERE a.population CONTAINS '10' RETURN a"));
    CHECK(c.rows.empty());
    CHECK(c.incompatible_comparisons == 1);
    // Missing on every other node: plain false, not incompatible.
    auto n = evaluate(g, parse_query("MATCH (a) WHERE a.name = 1 RETURN a"));
    CHECK(n.rows.empty());
    CHECK(n.incompatible_comparisons == 5);
    // OR with an incompatible side still excludes.
    auto o = evaluate(g, parse_query("MATCH (a:GPE) WHERE a.population = 'x' OR a.name = 'Odessa' RETURN a"));
    CHECK(o.rows.empty());
    CHECK(o.incompatible_comparisons == 1);
}

TEST_CASE("LIMIT keeps the least bindings in order", "[graphquery]") {
    auto g = news_graph();
    auto all = evaluate(g, parse_query("MATCH (a:GPE) RETURN a"));
    auto one = evaluate(g, parse_query("MATCH (a:GPE) RETURN a LIMIT 1"));
    REQUIRE(one.rows.size() == 1);
    CHECK(one.bindings[0] == all.bindings[0]);
    CHECK(std::is_sorted(all.bindings.begin(), all.bindings.end()));
    CHECK(one.bindings[0].nodes.at("a") == std::min({id_of(g, "Odessa"), id_of(g, "Kyiv"), id_of(g, "Kharkiv")}));
    CHECK(evaluate(g, parse_query("MATCH (a) RETURN a LIMIT 0")).rows.empty());
}

TEST_CASE("triangle query returns each rotation once", "[graphquery]") {
    kg::PropertyGraph g;
    for (auto id : {"n0", "n1", "n2", "n3"}) g.add_node(plain_node(id, "A"));
    g.add_edge(plain_edge("e0", "n0", "n1", "R"));
    g.add_edge(plain_edge("e1", "n1", "n2", "R"));
    g.add_edge(plain_edge("e2", "n2", "n0", "R"));
    g.add_edge(plain_edge("e3", "n2", "n3", "R"));
    auto r = match_pattern(g, parse_query("MATCH (x)-[:R]->(y)-[:R]->(z)-[:R]->(x) RETURN x"));
    CHECK(r.bindings.size() == 3);
    std::set<std::string> starts;
    for (const auto& b : r.bindings) starts.insert(b.nodes.at("x"));
    CHECK(starts == std::set<std::string>{"n0", "n1", "n2"});
}

TEST_CASE("a graph edge binds at most one pattern edge", "[graphquery]") {
    kg::PropertyGraph g;
    g.add_node(plain_node("n0", "A"));
    g.add_node(plain_node("n1", "A"));
    g.add_edge(plain_edge("e0", "n0", "n1", "R"));
    CHECK(match_pattern(g, parse_query("MATCH (a)-[]-(b)-[]-(c) RETURN a")).bindings.empty());
    CHECK(match_pattern(g, parse_query("MATCH (a)-[]-(b) RETURN a")).bindings.size() == 2);
    g.add_edge(plain_edge("e1", "n1", "n1", "R"));
    CHECK(match_pattern(g, parse_query("MATCH (a)-[r]-(a) RETURN r")).bindings.size() == 1);
    CHECK(match_pattern(g, parse_query("MATCH (a)-[r]->(a) RETURN r")).bindings.size() == 1);
}

TEST_CASE("anonymous elements get generated binding names", "[graphquery]") {
    auto g = news_graph();
    auto r = match_pattern(g, parse_query("MATCH (:ConflictAttack)-[:Place]->(a) RETURN a"));
    REQUIRE(r.bindings.size() == 1);
    CHECK(r.bindings[0].nodes.count("#n0") == 1);
    CHECK(r.bindings[0].edges.count("#e0") == 1);
}

TEST_CASE("matcher agrees with brute force on random graphs", "[graphquery][property]") {
    std::mt19937_64 rng(20240301);
    for (int iter = 0; iter < 300; ++iter) {
        auto g = random_graph(rng, 12, 30);
        auto q = random_query(rng);
        INFO(pretty_print(q));
        auto reparsed = parse_query(pretty_print(q));
        REQUIRE(reparsed == q);
        CHECK(as_set(match_pattern(g, q)) == testing::brute_force_match(g, q));
    }
}

TEST_CASE("adding edges never removes matches", "[graphquery][property]") {
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 100; ++iter) {
        auto g = random_graph(rng, 8, 10);
        auto q = random_query(rng);
        auto before = as_set(match_pattern(g, q));
        auto n = g.nodes().size();
        for (int k = 0; k < 5; ++k) {
            g.add_edge(plain_edge("extra" + std::to_string(k), "n" + std::to_string(rng() % n),
                                  "n" + std::to_string(rng() % n), rng() % 2 ? "R" : "S"));
        }
        auto after = as_set(match_pattern(g, q));
        CHECK(std::includes(after.begin(), after.end(), before.begin(), before.end()));
    }
}
