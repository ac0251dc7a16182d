#include "kgrag/ingest.hpp"

#include <algorithm>
#include <regex>

#include <json.hpp>

namespace kgrag::ingest {

using tokenizer::BpeVocab;
using tokenizer::count_tokens;

std::string_view to_string(MediaType t) {
    switch (t) {
        case MediaType::plain_text: return "plain_text";
        case MediaType::csv: return "csv";
        case MediaType::html: return "html";
        case MediaType::markdown: return "markdown";
    }
    return "plain_text";
}

MediaType parse_media_type(std::string_view name) {
    auto n = to_lower_ascii(trim(name));
    if (n == "plain_text" || n == "text" || n == "txt") return MediaType::plain_text;
    if (n == "csv") return MediaType::csv;
    if (n == "html" || n == "htm") return MediaType::html;
    if (n == "markdown" || n == "md") return MediaType::markdown;
    throw LoadError("unsupported media_type '" + std::string(name) + "'");
}

bool is_pdf_media_type(std::string_view name) {
    auto n = to_lower_ascii(trim(name));
    return n == "pdf" || n == "application/pdf";
}

void SplitterConfig::validate() const {
    if (chunk_size == 0) throw Error("chunk_size must be positive");
    if (chunk_overlap >= chunk_size) throw Error("chunk_overlap must be smaller than chunk_size");
    if (separators.empty() || !separators.back().empty()) throw Error("separators must end with \"\"");
}

std::string make_doc_id(std::string_view source_uri, std::string_view bytes) {
    std::string key(source_uri);
    key.push_back('\0');
    key.append(bytes);
    return stable_id("d", key);
}

namespace {

std::string normalize_newlines(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\r') {
            out.push_back('\n');
            if (i + 1 < s.size() && s[i + 1] == '\n') ++i;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

bool is_hspace(char c) { return c == ' ' || c == '\t' || c == '\f' || c == '\v'; }

std::string collapse_spaces(std::string_view line) {
    std::string out;
    bool pending = false;
    for (char c : line) {
        if (is_hspace(c) || c == '\n' || c == '\r') {
            pending = !out.empty();
        } else {
            if (pending) out.push_back(' ');
            pending = false;
            out.push_back(c);
        }
    }
    return out;
}

// Lines are trimmed and space-collapsed; blank-line runs become one paragraph break.
std::string collapse_paragraphs(std::string_view text) {
    std::vector<std::string> paragraphs;
    std::string current;
    for (const auto& raw : split(text, '\n')) {
        auto line = collapse_spaces(raw);
        if (line.empty()) {
            if (!current.empty()) paragraphs.push_back(std::move(current));
            current.clear();
            continue;
        }
        if (!current.empty()) current.push_back('\n');
        current += line;
    }
    if (!current.empty()) paragraphs.push_back(std::move(current));
    return join(paragraphs, "\n\n");
}

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Decodes the entity starting at s[i] == '&'; returns consumed length or 0.
std::size_t decode_entity(std::string_view s, std::size_t i, std::string& out) {
    auto semi = s.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) return 0;
    auto name = s.substr(i + 1, semi - i - 1);
    static const std::pair<std::string_view, std::string_view> named[] = {
        {"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"}, {"nbsp", " "},
        {"ndash", "\xE2\x80\x93"}, {"mdash", "\xE2\x80\x94"}, {"hellip", "\xE2\x80\xA6"},
    };
    for (auto [k, v] : named) {
        if (name == k) {
            out += v;
            return semi - i + 1;
        }
    }
    if (name.size() > 1 && name[0] == '#') {
        std::uint32_t cp = 0;
        bool hex = name[1] == 'x' || name[1] == 'X';
        auto digits = name.substr(hex ? 2 : 1);
        if (digits.empty()) return 0;
        for (char c : digits) {
            int d;
            if (c >= '0' && c <= '9') d = c - '0';
            else if (hex && c >= 'a' && c <= 'f') d = c - 'a' + 10;
            else if (hex && c >= 'A' && c <= 'F') d = c - 'A' + 10;
            else return 0;
            cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
            if (cp > 0x10FFFF) return 0;
        }
        if (cp == 0 || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
        append_utf8(out, cp);
        return semi - i + 1;
    }
    return 0;
}

bool is_block_tag(std::string_view name) {
    static const std::string_view blocks[] = {
        "p", "div", "section", "article", "header", "footer", "nav", "aside", "main", "h1", "h2", "h3", "h4",
        "h5", "h6", "ul", "ol", "li", "table", "thead", "tbody", "tr", "td", "th", "blockquote", "pre",
        "hr", "title", "body", "html", "head", "figure", "figcaption", "dl", "dt", "dd", "form", "address"};
    return std::find(std::begin(blocks), std::end(blocks), name) != std::end(blocks);
}

constexpr char kBlockBreak = '\x01';

}  // namespace

std::string render_csv(std::string_view text) {
    // RFC 4180 records: quoted fields may contain separators, quotes ("") and newlines.
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, field_started = false;
    auto end_field = [&] {
        row.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        bool blank = std::all_of(row.begin(), row.end(), [](const std::string& f) { return trim(f).empty(); });
        if (!blank) rows.push_back(row);
        row.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c == '\n' ? ' ' : c);
            }
        } else if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_row();
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (!field.empty() || !row.empty()) end_row();
    if (rows.size() < 2) return {};

    const auto& header = rows.front();
    std::vector<std::string> lines;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        std::vector<std::string> cells;
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            std::string key = c < header.size() ? std::string(trim(header[c])) : "column_" + std::to_string(c + 1);
            cells.push_back(key + ": " + std::string(trim(rows[r][c])));
        }
        lines.push_back(join(cells, "; "));
    }
    return join(lines, "\n");
}

std::string render_html(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '<') {
            if (text.compare(i, 4, "<!--") == 0) {
                auto end = text.find("-->", i + 4);
                i = end == std::string_view::npos ? text.size() : end + 3;
                continue;
            }
            auto close = text.find('>', i);
            if (close == std::string_view::npos) {
                out.push_back(c);
                ++i;
                continue;
            }
            auto inner = text.substr(i + 1, close - i - 1);
            bool closing = !inner.empty() && inner[0] == '/';
            if (closing) inner.remove_prefix(1);
            std::size_t n = 0;
            while (n < inner.size() && (std::isalnum(static_cast<unsigned char>(inner[n])) || inner[n] == '-')) ++n;
            auto name = to_lower_ascii(inner.substr(0, n));
            i = close + 1;
            if (!closing && (name == "script" || name == "style")) {
                auto end = to_lower_ascii(text.substr(i)).find("</" + name);
                if (end == std::string::npos) {
                    i = text.size();
                } else {
                    auto gt = text.find('>', i + end);
                    i = gt == std::string_view::npos ? text.size() : gt + 1;
                }
                continue;
            }
            if (name == "br") out.push_back('\n');
            else if (is_block_tag(name)) out.push_back(kBlockBreak);
            continue;
        }
        if (c == '&') {
            if (auto used = decode_entity(text, i, out)) {
                i += used;
                continue;
            }
        }
        out.push_back(c == '\n' || c == '\r' || c == '\t' ? ' ' : c);
        ++i;
    }

    std::vector<std::string> blocks;
    for (const auto& block : split(out, kBlockBreak)) {
        std::vector<std::string> lines;
        for (const auto& line : split(block, '\n')) {
            auto l = collapse_spaces(line);
            if (!l.empty()) lines.push_back(std::move(l));
        }
        if (!lines.empty()) blocks.push_back(join(lines, "\n"));
    }
    return join(blocks, "\n\n");
}

std::string render_markdown(std::string_view text) {
    static const std::regex image(R"(!\[([^\]]*)\]\([^)]*\))");
    static const std::regex link(R"(\[([^\]]*)\]\([^)]*\))");
    static const std::regex code(R"(`([^`]*)`)");
    static const std::regex tag(R"(</?[A-Za-z][^>]*>)");
    static const std::regex strong(R"((\*{1,3}|~~))");
    static const std::regex underscore(R"((^|[\s\(\[])_{1,3}|_{1,3}($|[\s\)\].,;:!?]))");
    static const std::regex heading(R"(^\s{0,3}#{1,6}\s*(.*?)\s*#*\s*$)");
    static const std::regex rule(R"(^\s{0,3}([-*_=]\s*){3,}$)");
    static const std::regex list_marker(R"(^\s*([-*+]|\d+[.)])\s+)");
    static const std::regex quote(R"(^\s*(>\s?)+)");

    std::string out;
    bool in_fence = false;
    for (auto line : split(text, '\n')) {
        auto t = trim(line);
        if (t.rfind("```", 0) == 0 || t.rfind("~~~", 0) == 0) {
            in_fence = !in_fence;
            out += '\n';
            continue;
        }
        if (in_fence) {
            out += line;
            out += '\n';
            continue;
        }
        if (std::regex_match(line, rule)) {
            out += '\n';
            continue;
        }
        line = std::regex_replace(line, quote, "");
        std::smatch m;
        if (std::regex_match(line, m, heading)) line = m[1].str();
        line = std::regex_replace(line, list_marker, "");
        line = std::regex_replace(line, image, "$1");
        line = std::regex_replace(line, link, "$1");
        line = std::regex_replace(line, code, "$1");
        line = std::regex_replace(line, tag, "");
        line = std::regex_replace(line, strong, "");
        line = std::regex_replace(line, underscore, "$1$2");
        out += line;
        out += '\n';
    }
    return collapse_paragraphs(out);
}

SourceDocument load_source(std::string_view bytes, std::string_view source_uri, MediaType media_type) {
    std::string clean;
    auto replaced = sanitize_utf8(bytes, clean);
    if (replaced * 10 > bytes.size()) {
        throw LoadError("undecodable input: " + std::to_string(replaced) + " of " + std::to_string(bytes.size()) +
                        " bytes are not valid UTF-8");
    }
    SourceDocument doc;
    doc.doc_id = make_doc_id(source_uri, bytes);
    doc.source_uri = std::string(source_uri);
    doc.media_type = media_type;
    auto normalized = normalize_newlines(clean);
    switch (media_type) {
        case MediaType::plain_text: doc.text = std::move(normalized); break;
        case MediaType::csv: doc.text = render_csv(normalized); break;
        case MediaType::html: doc.text = render_html(normalized); break;
        case MediaType::markdown: doc.text = render_markdown(normalized); break;
    }
    if (trim(doc.text).empty()) throw LoadError("document is empty after normalization: " + doc.source_uri);

    std::string title;
    for (const auto& line : split(doc.text, '\n')) {
        if (!trim(line).empty()) {
            title = std::string(trim(line));
            break;
        }
    }
    if (title.size() > 120) {
        std::size_t cut = 120;
        while (cut > 0 && (static_cast<unsigned char>(title[cut]) & 0xC0) == 0x80) --cut;
        title.resize(cut);
    }
    doc.metadata["title"] = title;
    doc.metadata["ingested_at"] = utc_now_iso8601();
    return doc;
}

// ---------------------------------------------------------------------------
// Recursive splitting

namespace {

bool is_space_byte(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

class RecursiveSplitter {
public:
    RecursiveSplitter(std::string_view text, const SplitterConfig& cfg, const BpeVocab& vocab)
        : text_(text), cfg_(cfg), vocab_(vocab) {}

    std::vector<CharSpan> run() {
        CharSpan all{0, text_.size()};
        if (tokens(all) <= cfg_.chunk_size) {
            emit(all);
        } else {
            split(all, 0);
        }
        return std::move(out_);
    }

private:
    std::size_t tokens(CharSpan s) const { return count_tokens(text_.substr(s.start, s.end - s.start), vocab_); }

    void emit(CharSpan s) {
        CharSpan t = s;
        while (t.start < t.end && is_space_byte(text_[t.start])) ++t.start;
        while (t.end > t.start && is_space_byte(text_[t.end - 1])) --t.end;
        if (t.start == t.end) return;
        // Trimming can in rare BPE cases raise the count; keep the verified span then.
        if (t.start != s.start || t.end != s.end) {
            if (tokens(t) > cfg_.chunk_size) t = s;
        }
        if (!out_.empty() && out_.back() == t) return;
        out_.push_back(t);
    }

    std::vector<CharSpan> pieces(CharSpan span, const std::string& sep) const {
        std::vector<CharSpan> result;
        auto view = text_.substr(span.start, span.end - span.start);
        if (sep.empty()) {
            for (std::size_t i = 0; i < view.size();) {
                auto n = utf8_seq_len(view, i);
                result.push_back({span.start + i, span.start + i + n});
                i += n;
            }
            return result;
        }
        std::size_t start = 0;
        while (start <= view.size()) {
            auto pos = view.find(sep, start);
            auto end = pos == std::string_view::npos ? view.size() : pos;
            if (!trim(view.substr(start, end - start)).empty()) {
                result.push_back({span.start + start, span.start + end});
            }
            if (pos == std::string_view::npos) break;
            start = pos + sep.size();
        }
        return result;
    }

    void split(CharSpan span, std::size_t sep_from) {
        auto view = text_.substr(span.start, span.end - span.start);
        std::size_t level = sep_from;
        while (level + 1 < cfg_.separators.size() && view.find(cfg_.separators[level]) == std::string_view::npos) {
            ++level;
        }
        const auto& sep = cfg_.separators[level];
        const auto parts = pieces(span, sep);
        const std::size_t m = parts.size();

        std::vector<bool> oversized(m);
        for (std::size_t k = 0; k < m; ++k) oversized[k] = tokens(parts[k]) > cfg_.chunk_size;

        auto window = [&](std::size_t a, std::size_t b) { return CharSpan{parts[a].start, parts[b].end}; };
        auto fits = [&](std::size_t a, std::size_t b) { return tokens(window(a, b)) <= cfg_.chunk_size; };

        auto split_oversized = [&](std::size_t k) {
            if (!sep.empty()) {
                split(parts[k], level + 1);
            } else {
                // A single code point wider than the budget: fall back to bytes.
                for (std::size_t b = parts[k].start; b < parts[k].end; ++b) emit({b, b + 1});
            }
        };

        // Windows [begin, end] of pieces are packed greedily. Token counts are
        // found by galloping then bisecting; every accepted bound is an exact
        // re-encode, so the size and overlap limits hold even where BPE counts
        // are not monotone in the window length.
        std::size_t begin = 0;
        std::size_t known_fit = 0;  // largest index already verified to fit with `begin`
        while (begin < m) {
            if (oversized[begin]) {
                split_oversized(begin);
                known_fit = ++begin;
                continue;
            }
            std::size_t limit = begin;
            while (limit < m && !oversized[limit]) ++limit;  // pieces [begin, limit) are packable

            std::size_t lo = std::max(known_fit, begin), hi = limit;
            for (std::size_t step = 1; lo + step < limit; step *= 2) {
                if (!fits(begin, lo + step)) {
                    hi = lo + step;
                    break;
                }
                lo += step;
            }
            while (hi - lo > 1) {
                auto mid = lo + (hi - lo) / 2;
                if (fits(begin, mid)) lo = mid;
                else hi = mid;
            }
            emit(window(begin, lo));

            std::size_t next = lo + 1;
            if (next >= m) break;
            if (oversized[next]) {
                begin = next;
                known_fit = next;
                continue;
            }
            // Smallest tail start k in (begin, next] whose tail stays within the
            // overlap budget and still fits together with the next piece.
            auto tail_ok = [&](std::size_t k) {
                if (k == next) return true;
                return tokens(window(k, lo)) <= cfg_.chunk_overlap && fits(k, next);
            };
            std::size_t bad = begin, good = next;
            while (good - bad > 1) {
                auto mid = bad + (good - bad) / 2;
                if (tail_ok(mid)) good = mid;
                else bad = mid;
            }
            begin = good;
            known_fit = next;
        }
    }

    std::string_view text_;
    const SplitterConfig& cfg_;
    const BpeVocab& vocab_;
    std::vector<CharSpan> out_;
};

}  // namespace

std::vector<Chunk> split_recursive(const SourceDocument& doc, const SplitterConfig& cfg, const BpeVocab& vocab) {
    cfg.validate();
    std::vector<Chunk> chunks;
    if (trim(doc.text).empty()) return chunks;
    for (const auto& span : RecursiveSplitter(doc.text, cfg, vocab).run()) {
        Chunk c;
        c.index = chunks.size();
        c.doc_id = doc.doc_id;
        c.chunk_id = doc.doc_id + "#" + std::to_string(c.index);
        c.char_span = span;
        c.text = doc.text.substr(span.start, span.end - span.start);
        c.token_count = count_tokens(c.text, vocab);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

std::vector<ManifestRecord> parse_manifest(std::string_view jsonl) {
    std::vector<ManifestRecord> out;
    std::size_t line_no = 0;
    for (const auto& line : split(jsonl, '\n')) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(std::string("malformed manifest record: ") + e.what(), line_no);
        }
        if (!j.is_object()) throw FormatError("manifest record must be an object", line_no);
        ManifestRecord r;
        for (auto [key, field] : {std::pair{"uri", &r.uri}, {"media_type", &r.media_type}, {"path", &r.path}}) {
            if (!j.contains(key) || !j[key].is_string()) {
                throw FormatError(std::string("manifest record missing string field '") + key + "'", line_no);
            }
            *field = j[key].get<std::string>();
        }
        if (j.contains("published_at")) {
            if (!j["published_at"].is_string() || !is_iso8601(j["published_at"].get<std::string>())) {
                throw FormatError("manifest field 'published_at' must be an ISO-8601 string", line_no);
            }
            r.published_at = j["published_at"].get<std::string>();
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string chunk_to_json_line(const Chunk& c) {
    nlohmann::ordered_json j;
    j["chunk_id"] = c.chunk_id;
    j["doc_id"] = c.doc_id;
    j["index"] = c.index;
    j["char_span"] = {c.char_span.start, c.char_span.end};
    j["token_count"] = c.token_count;
    j["text"] = c.text;
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

Chunk chunk_from_json_line(std::string_view line) {
    try {
        auto j = nlohmann::json::parse(line);
        Chunk c;
        c.chunk_id = j.at("chunk_id").get<std::string>();
        c.doc_id = j.at("doc_id").get<std::string>();
        c.index = j.at("index").get<std::size_t>();
        c.char_span = {j.at("char_span").at(0).get<std::size_t>(), j.at("char_span").at(1).get<std::size_t>()};
        c.token_count = j.at("token_count").get<std::size_t>();
        c.text = j.at("text").get<std::string>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed chunk record: ") + e.what());
    }
}

}  // namespace kgrag::ingest
