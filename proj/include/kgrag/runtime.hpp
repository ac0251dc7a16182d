#pragma once

#include <memory>
#include <string>

#include "kgrag/curate.hpp"
#include "kgrag/llm.hpp"
#include "kgrag/ontology.hpp"
#include "kgrag/queryphase.hpp"
#include "kgrag/tokenizer.hpp"
#include "kgrag/vecindex.hpp"

namespace kgrag {

/// Invalid or unusable configuration (bad key, unreadable file, bad address).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Shared by the service and the command-line tool.
///
/// File format: one `key = value` per line, `#` comments, blank lines ignored.
/// Relative paths resolve against the config file's directory. Keys:
///   listen               host:port for `serve` (127.0.0.1:8080)
///   store                store directory
///   ontology             ontology document
///   vocab                BPE vocabulary (byte-level when unset)
///   templates            prompt template directory
///   kb                   reference KB TSV, loaded by curation when the store has none
///   provider             mock | remote
///   mock_dictionary      `mockdict v1` file (provider = mock)
///   mock_script          `mockscript v1` file (optional)
///   remote_endpoint      chat-completions URL (provider = remote)
///   remote_model
///   remote_api_key_env   variable holding the API key (KGRAG_API_KEY)
///   remote_timeout_ms
///   embedder             trigram | remote
///   embedding_dim        (256)
///   embedding_endpoint, embedding_model   (embedder = remote)
///   chunk_size, chunk_overlap, concurrency
///   level, n, k          query defaults
///   cors_origin          (*)
///   format               json | text (command-line output)
struct Config {
    std::string listen = "127.0.0.1:8080";
    std::string store_dir = "store";
    std::string ontology_path;
    std::string vocab_path;
    std::string templates_dir;
    std::string kb_path;
    std::string provider = "mock";
    std::string mock_dictionary;
    std::string mock_script;
    std::string remote_endpoint;
    std::string remote_model;
    std::string remote_api_key_env = "KGRAG_API_KEY";
    std::size_t remote_timeout_ms = 60000;
    std::string embedder = "trigram";
    std::size_t embedding_dim = 256;
    std::string embedding_endpoint;
    std::string embedding_model;
    std::size_t chunk_size = 512;
    std::size_t chunk_overlap = 64;
    std::size_t concurrency = 4;
    std::string level = "kg";
    std::size_t n = 3;
    std::size_t k = 4;
    std::string cors_origin = "*";
    std::string format = "json";

    /// Throws ConfigError on an unknown key or a malformed value.
    void set(const std::string& key, const std::string& value, const std::string& base_dir = "");
    static Config parse(std::string_view text, const std::string& base_dir = "");
    static Config load(const std::string& path);

    queryphase::EngineConfig engine() const;
    curate::CurationConfig curation() const;
};

struct ListenAddress {
    std::string host;
    int port = 0;
};
/// `host:port`, port in 0..65535. Throws ConfigError.
ListenAddress parse_listen(const std::string& s);

/// Everything a curation or query needs besides the store itself.
struct Runtime {
    Config config;
    ontology::OntologySchema schema;
    llm::TemplateStore templates;
    tokenizer::BpeVocab vocab = tokenizer::BpeVocab::byte_level();
    std::unique_ptr<vecindex::Embedder> embedder;
    std::unique_ptr<llm::ChatProvider> provider;

    /// Reads every referenced file. Throws ConfigError.
    static std::unique_ptr<Runtime> from_config(const Config& cfg);

    curate::CurationInputs curation_inputs() const;
    queryphase::EngineInputs engine_inputs() const;

    /// Loads the configured KB into the store's reference index when that index is absent or empty.
    std::size_t ensure_kb(curate::KnowledgeStore& store) const;
};

}  // namespace kgrag
