#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <memory>

#include "kgrag/curate.hpp"
#include "kgrag/graphquery.hpp"
#include "kgrag/llm.hpp"
#include "kgrag/ontology.hpp"
#include "kgrag/tokenizer.hpp"

namespace kgrag::testing {

std::string fixture_path(const std::string& rel);
std::string templates_dir();
/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& name);
const tokenizer::BpeVocab& test_vocab();

/// Vocab whose merges are [(a,a)->aa, (aa,b)->aab].
tokenizer::BpeVocab two_merge_vocab();

std::string random_bytes(std::mt19937_64& rng, std::size_t max_len);

/// Random prose-like text: words from a small alphabet, spaces, newlines and
/// blank lines, with the occasional multi-byte code point and long run-on word.
std::string random_document(std::mt19937_64& rng, std::size_t approx_len);

const ontology::OntologySchema& news_ontology();

/// Random type forest with `n` node types (2-4 roots, depth up to 5) and a few edges.
ontology::OntologySchema random_forest(std::mt19937_64& rng, std::size_t n);

/// Payload that validates against `schema`: random typed nodes and edges whose
/// endpoints satisfy the edge signatures.
ExtractionPayload random_valid_payload(std::mt19937_64& rng, const ontology::OntologySchema& schema);

/// Adds exactly one defect of `kind` to a valid payload.
void seed_violation(std::mt19937_64& rng, ExtractionPayload& p, ontology::ViolationKind kind,
                    const ontology::OntologySchema& schema);

/// Gaussian vector scaled to unit length.
std::vector<float> random_unit_vector(std::mt19937_64& rng, std::size_t dim);

/// Tab-separated fixture rows; `#` lines skipped, `\n` in the first column unescaped.
std::vector<std::vector<std::string>> read_fixture_tsv(const std::string& rel);

/// Up to `max_nodes` nodes typed from {A, A_B, A_B_C, C, C_D} named x<i>, and up
/// to `max_edges` random R/S edges (self-loops and parallels allowed).
kg::PropertyGraph random_match_graph(std::mt19937_64& rng, std::size_t max_nodes, std::size_t max_edges);

/// WHERE-free pattern with at most 3 segments over one or two paths, random
/// labels, directions, edge types and occasional inline name equality.
graphquery::Query random_match_query(std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// News fixture corpus (fixtures/corpus, fixtures/mock, fixtures/kb)

std::unique_ptr<llm::MockProvider> news_mock(const std::string& script = "mockscript v1\n");
const llm::TemplateStore& shipped_templates();
const vecindex::TrigramEmbedder& trigram();
curate::CurationConfig news_curation_config();
std::vector<ingest::ManifestRecord> news_manifest();
std::string news_corpus_dir();

/// Store at `dir` with the fixture KB loaded into the reference index.
curate::KnowledgeStore news_store_with_kb(const std::string& dir);

/// KB + full fixture manifest curated with the mock provider, saved to `dir`.
curate::KnowledgeStore curated_news_store(const std::string& dir, curate::CurationSummary* summary = nullptr);

}  // namespace kgrag::testing
