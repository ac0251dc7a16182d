#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "kgrag/common.hpp"
#include "kgrag/tokenizer.hpp"

namespace kgrag::ingest {

enum class MediaType { plain_text, csv, html, markdown };

std::string_view to_string(MediaType t);
/// Accepts the enum names plus the aliases `text`, `txt`, `md`, `htm`.
MediaType parse_media_type(std::string_view name);
/// `pdf` or `application/pdf`. Curation reads such records from a `<path>.txt` text sidecar.
bool is_pdf_media_type(std::string_view name);

class LoadError : public Error {
public:
    using Error::Error;
};

struct SourceDocument {
    std::string doc_id;
    std::string source_uri;
    MediaType media_type = MediaType::plain_text;
    std::string text;
    StringMap metadata;  // title, ingested_at
};

struct CharSpan {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive, byte offsets into SourceDocument::text
    bool operator==(const CharSpan&) const = default;
};

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::size_t index = 0;
    std::string text;
    CharSpan char_span;
    std::size_t token_count = 0;

    bool operator==(const Chunk&) const = default;
};

struct SplitterConfig {
    std::size_t chunk_size = 512;
    std::size_t chunk_overlap = 64;
    std::vector<std::string> separators{"\n\n", "\n", " ", ""};

    /// Throws Error unless 0 <= overlap < size and separators end with "".
    void validate() const;
};

/// doc_id for (uri, raw bytes): "d" + 16 hex chars of sha256.
std::string make_doc_id(std::string_view source_uri, std::string_view bytes);

/// Normalizes raw bytes into a document. Rejects text that is empty after
/// normalization or whose invalid UTF-8 exceeds 10% of the input bytes.
SourceDocument load_source(std::string_view bytes, std::string_view source_uri, MediaType media_type);

// Format-specific renderers, exposed for testing.
std::string render_csv(std::string_view text);
std::string render_html(std::string_view text);
std::string render_markdown(std::string_view text);

std::vector<Chunk> split_recursive(const SourceDocument& doc, const SplitterConfig& cfg,
                                   const tokenizer::BpeVocab& vocab);

struct ManifestRecord {
    std::string uri;
    std::string media_type;  // kept textual so unsupported types surface per document
    std::string path;
    std::string published_at;  // optional ISO-8601
};

/// One JSON object per line: {"uri", "media_type", "path"} plus an optional
/// "published_at" timestamp. Blank lines ignored.
std::vector<ManifestRecord> parse_manifest(std::string_view jsonl);

/// Chunk dump: one JSON object per line.
std::string chunk_to_json_line(const Chunk& c);
Chunk chunk_from_json_line(std::string_view line);

}  // namespace kgrag::ingest
