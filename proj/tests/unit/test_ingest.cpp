#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "kgrag/ingest.hpp"
#include "support/fixtures.hpp"

using namespace kgrag;
using namespace kgrag::ingest;
using tokenizer::BpeVocab;
using tokenizer::count_tokens;

TEST_CASE("load_source normalizes each media type", "[ingest]") {
    CHECK(load_source("hello\r\nworld", "mem://a", MediaType::plain_text).text == "hello\nworld");
    CHECK(load_source("name,city\nIvan,Odessa", "mem://b", MediaType::csv).text == "name: Ivan; city: Odessa");
    CHECK(load_source("<p>War <b>news</b></p>", "mem://c", MediaType::html).text == "War news");
}

TEST_CASE("csv rendering handles quoting and ragged rows", "[ingest]") {
    CHECK(render_csv("a,b\n\"x, y\",\"say \"\"hi\"\"\"\n") == "a: x, y; b: say \"hi\"");
    CHECK(render_csv("a,b\n1\n2,3,4\n") == "a: 1\na: 2; b: 3; column_3: 4");
    CHECK(render_csv("only,header\n").empty());
}

TEST_CASE("html rendering drops scripts and decodes entities", "[ingest]") {
    auto text = render_html(
        "<html><head><title>T</title><script>var x = '<p>';</script></head>"
        "<body><h1>Kyiv &amp; Odessa</h1>\n<p>Line one<br>line   two</p><!-- hidden --><p>caf&#233;</p></body></html>");
    CHECK(text == "T\n\nKyiv & Odessa\n\nLine one\nline two\n\ncaf\xC3\xA9");
}

TEST_CASE("markdown rendering strips markup", "[ingest]") {
    auto text = render_markdown(
        "# Title #\n\nSome **bold** and _em_ text with a [link](http://x) and `code`.\n"
        "- item one\n- item_two\n\n> quoted\n\n---\n![alt text](img.png)\n");
    CHECK(text == "Title\n\nSome bold and em text with a link and code.\nitem one\nitem_two\n\nquoted\n\nalt text");
}

TEST_CASE("load_source rejects bad input", "[ingest]") {
    CHECK_THROWS_AS(load_source("  \n\t ", "mem://e", MediaType::plain_text), LoadError);
    CHECK_THROWS_AS(load_source("<p> </p>", "mem://e", MediaType::html), LoadError);
    std::string mostly_bad(20, '\xFF');
    mostly_bad += "ok";
    CHECK_THROWS_AS(load_source(mostly_bad, "mem://f", MediaType::plain_text), LoadError);
    // 1 bad byte in 20 is under the 10% limit: replaced with U+FFFD.
    auto doc = load_source(std::string(19, 'a') + "\xFF", "mem://g", MediaType::plain_text);
    CHECK(doc.text == std::string(19, 'a') + "\xEF\xBF\xBD");
    CHECK_THROWS_AS(parse_media_type("application/pdf"), LoadError);
    CHECK(parse_media_type("md") == MediaType::markdown);
}

TEST_CASE("doc_id depends only on uri and bytes", "[ingest]") {
    auto a = load_source("same", "file://x", MediaType::plain_text);
    auto b = load_source("same", "file://x", MediaType::plain_text);
    auto c = load_source("same", "file://y", MediaType::plain_text);
    CHECK(a.doc_id == b.doc_id);
    CHECK(a.doc_id != c.doc_id);
    CHECK(a.metadata.at("title") == "same");
    CHECK(is_iso8601(a.metadata.at("ingested_at")));
}

TEST_CASE("splitter config validation", "[ingest]") {
    SplitterConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.chunk_overlap = cfg.chunk_size;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.separators = {"\n"};
    CHECK_THROWS(cfg.validate());
}

namespace {

SourceDocument doc_of(std::string text) {
    SourceDocument d;
    d.doc_id = "dtest";
    d.text = std::move(text);
    return d;
}

}  // namespace

TEST_CASE("short text yields one chunk", "[ingest][split]") {
    auto doc = doc_of("a few words only");
    auto chunks = split_recursive(doc, {}, kgrag::testing::test_vocab());
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].text == doc.text);
    CHECK(chunks[0].chunk_id == "dtest#0");
    CHECK(chunks[0].char_span == CharSpan{0, doc.text.size()});
}

TEST_CASE("paragraphs split at the blank line", "[ingest][split]") {
    // Byte-level vocab: every byte is one token, so each paragraph is exactly 300 tokens.
    auto vocab = BpeVocab::byte_level();
    auto doc = doc_of(std::string(300, 'x') + "\n\n" + std::string(300, 'y'));
    SplitterConfig cfg;
    cfg.chunk_size = 512;
    cfg.chunk_overlap = 64;
    auto chunks = split_recursive(doc, cfg, vocab);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].char_span == CharSpan{0, 300});
    CHECK(chunks[1].char_span == CharSpan{302, 602});
    CHECK(chunks[0].token_count == 300);
}

TEST_CASE("a long word falls back to character splitting with overlap", "[ingest][split]") {
    auto vocab = BpeVocab::byte_level();
    auto doc = doc_of(std::string(2000, 'w'));
    SplitterConfig cfg;
    cfg.chunk_size = 512;
    cfg.chunk_overlap = 64;
    auto chunks = split_recursive(doc, cfg, vocab);
    // Packing 512 single-token pieces, then keeping a 64-token tail, gives starts 0, 448, 896, ...
    std::vector<CharSpan> expected{{0, 512}, {448, 960}, {896, 1408}, {1344, 1856}, {1792, 2000}};
    REQUIRE(chunks.size() == expected.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        CHECK(chunks[i].char_span == expected[i]);
        CHECK(count_tokens(chunks[i].text, vocab) <= 512);
        if (i > 0) {
            auto overlap = chunks[i - 1].char_span.end - chunks[i].char_span.start;
            CHECK(overlap <= 64);
        }
    }
}

TEST_CASE("splitter invariants on random documents", "[ingest][split][property]") {
    const auto& vocab = kgrag::testing::test_vocab();
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<std::size_t> size(8, 200);
    for (int trial = 0; trial < 60; ++trial) {
        auto doc = doc_of(kgrag::testing::random_document(rng, 3000));
        SplitterConfig cfg;
        cfg.chunk_size = size(rng);
        cfg.chunk_overlap = std::uniform_int_distribution<std::size_t>(0, cfg.chunk_size - 1)(rng);
        auto chunks = split_recursive(doc, cfg, vocab);
        REQUIRE_FALSE(chunks.empty());
        std::vector<bool> covered(doc.text.size(), false);
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            const auto& c = chunks[i];
            REQUIRE(c.index == i);
            REQUIRE(c.text == doc.text.substr(c.char_span.start, c.char_span.end - c.char_span.start));
            REQUIRE(count_tokens(c.text, vocab) <= cfg.chunk_size);
            REQUIRE(c.token_count == count_tokens(c.text, vocab));
            if (i > 0) REQUIRE(chunks[i - 1].char_span.start <= c.char_span.start);
            for (auto p = c.char_span.start; p < c.char_span.end; ++p) covered[p] = true;
        }
        for (std::size_t p = 0; p < doc.text.size(); ++p) {
            if (!std::isspace(static_cast<unsigned char>(doc.text[p]))) REQUIRE(covered[p]);
        }
        CHECK(split_recursive(doc, cfg, vocab) == chunks);
    }
}

TEST_CASE("chunk dump lines round trip", "[ingest]") {
    Chunk c{"d1#0", "d1", 0, "quote \" and \n newline", {3, 24}, 9};
    auto line = chunk_to_json_line(c);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(line.rfind("{\"chunk_id\":\"d1#0\",\"doc_id\":\"d1\",\"index\":0,\"char_span\":[3,24]", 0) == 0);
    CHECK(chunk_from_json_line(line) == c);
}

TEST_CASE("manifest parsing", "[ingest]") {
    auto recs = parse_manifest(
        "{\"uri\":\"file://a\",\"media_type\":\"plain_text\",\"path\":\"a.txt\"}\n\n"
        "{\"uri\":\"file://b\",\"media_type\":\"csv\",\"path\":\"b.csv\"}\n");
    REQUIRE(recs.size() == 2);
    CHECK(recs[1].media_type == "csv");
    try {
        parse_manifest("{\"uri\":\"x\",\"media_type\":\"csv\",\"path\":\"p\"}\n{\"uri\":1}\n");
        FAIL("expected error");
    } catch (const FormatError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse_manifest("not json\n"), FormatError);
}
