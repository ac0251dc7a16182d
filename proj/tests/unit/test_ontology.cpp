#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "kgrag/ontology.hpp"
#include "support/fixtures.hpp"

using namespace kgrag;
using namespace kgrag::ontology;
using Catch::Matchers::ContainsSubstring;

namespace {

const char* kSmall =
    "ontology v1 test\n"
    "N GPE | Geopolitical entity\n"
    "N GPE_UrbanArea | Urban area\n"
    "N GPE_UrbanArea_City | City\n"
    "E LocatedIn | domain=GPE_UrbanArea_City | range=GPE | containment\n";

std::size_t line_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const FormatError& e) {
        return e.line();
    }
    return 0;
}

std::size_t count_listed(const std::string& text, const std::string& name) {
    std::size_t n = 0;
    for (const auto& line : split(text, '\n')) {
        if (line == "- " + name || line.rfind("- " + name + ":", 0) == 0) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("parse the three-type example", "[ontology]") {
    auto s = parse_ontology(kSmall);
    CHECK(s.version() == "test");
    CHECK(s.node_types().size() == 3);
    CHECK(s.edge_types().size() == 1);
    CHECK(s.node("GPE_UrbanArea_City")->path == std::vector<std::string>{"GPE", "UrbanArea", "City"});
    CHECK(s.edge("LocatedIn")->domain == std::set<std::string>{"GPE_UrbanArea_City"});
    CHECK(s.edge("LocatedIn")->description == "containment");
}

TEST_CASE("parse errors", "[ontology]") {
    CHECK_THROWS_WITH(parse_ontology("ontology v1 x\nN GPE\nE LocatedIn | domain=Ship | range=GPE\n"),
                      ContainsSubstring("Ship"));
    CHECK(line_of([] { parse_ontology("ontology v1 x\nN GPE\nE LocatedIn | domain=Ship | range=GPE\n"); }) == 3);
    CHECK_THROWS_WITH(parse_ontology("ontology v1 x\nN GPE\nN GPE_UrbanArea_City\n"),
                      ContainsSubstring("missing ancestor 'GPE_UrbanArea'"));
    CHECK(line_of([] { parse_ontology("ontology v1 x\nN GPE\nN GPE\n"); }) == 3);
    CHECK_THROWS_AS(parse_ontology(""), FormatError);
    CHECK_THROWS_AS(parse_ontology("ontology v1 x\n# nothing\n"), FormatError);
    CHECK_THROWS_AS(parse_ontology("ontology v2 x\nN A\n"), FormatError);
    CHECK(line_of([] { parse_ontology("ontology v1 x\nN A\nX B\n"); }) == 3);
    CHECK(line_of([] { parse_ontology("ontology v1 x\nN A__B\n"); }) == 2);
    CHECK(line_of([] { parse_ontology("ontology v1 x\nN A\nE R | domain=A\n"); }) == 3);
    CHECK(line_of([] { parse_ontology("ontology v1 x\nN A\nE R | domain= | range=A\n"); }) == 3);
    CHECK(line_of([] { parse_ontology("ontology v1 x\nN A\nE R | domain=A | range=A\nE R | domain=A | range=A\n"); }) == 4);
}

TEST_CASE("declaration order does not matter", "[ontology]") {
    auto s = parse_ontology("ontology v1 x\nE R | domain=A_B | range=A\nN A_B\nN A\n");
    CHECK(s.is_subtype("A_B", "A"));
}

TEST_CASE("is_subtype follows path prefixes", "[ontology]") {
    auto s = parse_ontology(kSmall);
    CHECK(s.is_subtype("GPE_UrbanArea_City", "GPE"));
    CHECK(s.is_subtype("GPE", "GPE"));
    CHECK_FALSE(s.is_subtype("GPE", "GPE_UrbanArea_City"));
    CHECK_THROWS_AS(s.is_subtype("GPE", "Ship"), UnknownTypeError);
    CHECK(s.depth("GPE_UrbanArea") == 2);
}

TEST_CASE("subtype is a partial order on random forests", "[ontology]") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = testing::random_forest(rng, 25);
        const auto& t = s.node_types();
        for (const auto& a : t) {
            CHECK(s.is_subtype(a.canonical_name, a.canonical_name));
            for (const auto& b : t) {
                bool ab = s.is_subtype(a.canonical_name, b.canonical_name);
                if (ab && s.is_subtype(b.canonical_name, a.canonical_name)) CHECK(a.canonical_name == b.canonical_name);
                if (!ab) continue;
                for (const auto& c : t) {
                    if (s.is_subtype(b.canonical_name, c.canonical_name)) CHECK(s.is_subtype(a.canonical_name, c.canonical_name));
                }
            }
        }
    }
}

TEST_CASE("serialize round trip", "[ontology]") {
    const auto& news = testing::news_ontology();
    CHECK(parse_ontology(serialize_ontology(news)) == news);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        auto s = testing::random_forest(rng, 15);
        CHECK(parse_ontology(serialize_ontology(s)) == s);
    }
}

TEST_CASE("validate_subgraph", "[ontology]") {
    auto s = parse_ontology(kSmall);
    ExtractionPayload ok{{{"n1", "Odessa", "GPE_UrbanArea_City", {}}, {"n2", "Ukraine", "GPE", {}}},
                         {{"n1", "n2", "LocatedIn", {}}}};
    CHECK(validate_subgraph(ok, s).ok());

    auto dangling = ok;
    dangling.edges.push_back({"n9", "n2", "LocatedIn", {}});
    auto r = validate_subgraph(dangling, s);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].kind == ViolationKind::dangling_endpoint);
    CHECK(r.violations[0].index == 1);

    auto dragon = ok;
    dragon.nodes.push_back({"n3", "Smaug", "Dragon", {}});
    r = validate_subgraph(dragon, s);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].kind == ViolationKind::unknown_node_type);
    CHECK(r.violations[0].on_node);

    auto reversed = ok;
    reversed.edges[0] = {"n2", "n1", "LocatedIn", {}};
    r = validate_subgraph(reversed, s);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].kind == ViolationKind::endpoint_type);
}

TEST_CASE("each seeded violation class is reported exactly once", "[ontology]") {
    std::mt19937_64 rng(99);
    const ViolationKind kinds[] = {ViolationKind::unknown_node_type, ViolationKind::unknown_edge_type,
                                   ViolationKind::endpoint_type, ViolationKind::dangling_endpoint};
    for (int trial = 0; trial < 30; ++trial) {
        auto schema = trial % 2 ? testing::random_forest(rng, 12) : testing::news_ontology();
        auto base = testing::random_valid_payload(rng, schema);
        REQUIRE(validate_subgraph(base, schema).ok());
        for (auto k : kinds) {
            auto p = base;
            testing::seed_violation(rng, p, k, schema);
            auto r = validate_subgraph(p, schema);
            CHECK(r.violations.size() == 1);
            CHECK(r.count(k) == 1);
        }
    }
}

TEST_CASE("render_schema_prompt", "[ontology]") {
    auto s = parse_ontology(kSmall);
    auto text = render_schema_prompt(s, 10);
    for (auto n : {"GPE", "GPE_UrbanArea", "GPE_UrbanArea_City"}) CHECK(count_listed(text, n) == 1);
    CHECK(text.find("truncated") == std::string::npos);
    CHECK(text == render_schema_prompt(s, 10));

    auto one = render_schema_prompt(s, 1);
    CHECK(count_listed(one, "GPE") == 1);
    CHECK(count_listed(one, "GPE_UrbanArea") == 0);
    CHECK(count_listed(one, "GPE_UrbanArea_City") == 0);
    CHECK_THAT(one, ContainsSubstring("showing 1 of 3"));
    CHECK_THROWS(render_schema_prompt(s, 0));
}

TEST_CASE("news fixture ontology", "[ontology]") {
    const auto& s = testing::news_ontology();
    CHECK(s.node_types().size() == 27);
    CHECK(s.edge_types().size() == 11);
    CHECK(s.is_subtype("ConflictAttack_FirearmAttack", "ConflictAttack"));
}
