#include "kgrag/runtime.hpp"

#include <charconv>
#include <filesystem>

namespace kgrag {

namespace fs = std::filesystem;

namespace {

std::size_t to_size(const std::string& key, const std::string& value) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("config key '" + key + "' needs a non-negative integer, got '" + value + "'");
    }
    return v;
}

std::string resolve(const std::string& value, const std::string& base_dir) {
    if (value.empty() || base_dir.empty() || fs::path(value).is_absolute()) return value;
    return (fs::path(base_dir) / value).lexically_normal().string();
}

std::string read_config_file(const std::string& what, const std::string& path) {
    try {
        return read_file(path);
    } catch (const Error& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

}  // namespace

void Config::set(const std::string& key, const std::string& value, const std::string& base_dir) {
    auto path = [&](std::string& field) { field = resolve(value, base_dir); };
    if (key == "listen") listen = value;
    else if (key == "store") path(store_dir);
    else if (key == "ontology") path(ontology_path);
    else if (key == "vocab") path(vocab_path);
    else if (key == "templates") path(templates_dir);
    else if (key == "kb") path(kb_path);
    else if (key == "provider") provider = value;
    else if (key == "mock_dictionary") path(mock_dictionary);
    else if (key == "mock_script") path(mock_script);
    else if (key == "remote_endpoint") remote_endpoint = value;
    else if (key == "remote_model") remote_model = value;
    else if (key == "remote_api_key_env") remote_api_key_env = value;
    else if (key == "remote_timeout_ms") remote_timeout_ms = to_size(key, value);
    else if (key == "embedder") embedder = value;
    else if (key == "embedding_dim") embedding_dim = to_size(key, value);
    else if (key == "embedding_endpoint") embedding_endpoint = value;
    else if (key == "embedding_model") embedding_model = value;
    else if (key == "chunk_size") chunk_size = to_size(key, value);
    else if (key == "chunk_overlap") chunk_overlap = to_size(key, value);
    else if (key == "concurrency") concurrency = to_size(key, value);
    else if (key == "level") level = value;
    else if (key == "n") n = to_size(key, value);
    else if (key == "k") k = to_size(key, value);
    else if (key == "cors_origin") cors_origin = value;
    else if (key == "format") format = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

Config Config::parse(std::string_view text, const std::string& base_dir) {
    Config cfg;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        cfg.set(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), base_dir);
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    auto text = read_config_file("config", path);
    return parse(text, fs::absolute(path).parent_path().string());
}

queryphase::EngineConfig Config::engine() const {
    queryphase::EngineConfig e;
    e.expansions = n;
    e.k = k;
    e.concurrency = concurrency;
    return e;
}

curate::CurationConfig Config::curation() const {
    curate::CurationConfig c;
    c.splitter.chunk_size = chunk_size;
    c.splitter.chunk_overlap = chunk_overlap;
    c.concurrency = concurrency;
    return c;
}

ListenAddress parse_listen(const std::string& s) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0) throw ConfigError("listen address '" + s + "' is not host:port");
    ListenAddress a;
    a.host = s.substr(0, colon);
    auto port = s.substr(colon + 1);
    int v = -1;
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), v);
    if (ec != std::errc() || ptr != port.data() + port.size() || v < 0 || v > 65535) {
        throw ConfigError("listen address '" + s + "' has a bad port");
    }
    a.port = v;
    return a;
}

std::unique_ptr<Runtime> Runtime::from_config(const Config& cfg) {
    auto rt = std::make_unique<Runtime>();
    rt->config = cfg;
    if (!queryphase::parse_level(cfg.level)) {
        throw ConfigError("level '" + cfg.level + "' is not one of " + queryphase::kLevelNames);
    }
    if (cfg.format != "json" && cfg.format != "text") throw ConfigError("format must be json or text");
    try {
        cfg.curation().splitter.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (cfg.ontology_path.empty()) throw ConfigError("no ontology configured");
    try {
        rt->schema = ontology::parse_ontology(read_config_file("ontology", cfg.ontology_path));
        rt->vocab = cfg.vocab_path.empty() ? tokenizer::BpeVocab::byte_level()
                                           : tokenizer::load_vocab(read_config_file("vocab", cfg.vocab_path));
        rt->templates = llm::TemplateStore(cfg.templates_dir.empty() ? std::string(KGRAG_DEFAULT_TEMPLATES_DIR) : cfg.templates_dir);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }

    auto remote_spec = [&](const std::string& endpoint, const std::string& model) {
        llm::RemoteSpec spec;
        spec.endpoint = endpoint;
        spec.model = model;
        spec.api_key_env = cfg.remote_api_key_env;
        spec.timeout = std::chrono::milliseconds(cfg.remote_timeout_ms);
        try {
            llm::parse_url(endpoint);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        return spec;
    };

    if (cfg.embedder == "trigram") {
        if (cfg.embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
        rt->embedder = std::make_unique<vecindex::TrigramEmbedder>(cfg.embedding_dim);
    } else if (cfg.embedder == "remote") {
        rt->embedder = std::make_unique<llm::RemoteEmbedder>(remote_spec(cfg.embedding_endpoint, cfg.embedding_model),
                                                             cfg.embedding_dim);
    } else {
        throw ConfigError("embedder must be trigram or remote");
    }

    if (cfg.provider == "mock") {
        if (cfg.mock_dictionary.empty()) throw ConfigError("provider mock needs mock_dictionary");
        try {
            auto dict = llm::MockDictionary::parse(read_config_file("mock_dictionary", cfg.mock_dictionary));
            auto script = cfg.mock_script.empty() ? llm::MockScript{}
                                                  : llm::MockScript::parse(read_config_file("mock_script", cfg.mock_script));
            rt->provider = std::make_unique<llm::MockProvider>(std::move(script), std::move(dict));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    } else if (cfg.provider == "remote") {
        rt->provider = std::make_unique<llm::RemoteProvider>(remote_spec(cfg.remote_endpoint, cfg.remote_model));
    } else {
        throw ConfigError("provider must be mock or remote");
    }
    return rt;
}

curate::CurationInputs Runtime::curation_inputs() const { return {schema, *provider, *embedder, templates, vocab}; }

queryphase::EngineInputs Runtime::engine_inputs() const { return {schema, templates, *embedder}; }

std::size_t Runtime::ensure_kb(curate::KnowledgeStore& store) const {
    if (config.kb_path.empty()) return 0;
    if (store.vectors.has(vecindex::kReferenceKbIndex) && !store.vectors.get(vecindex::kReferenceKbIndex).empty()) return 0;
    auto records = curate::parse_kb_tsv(read_config_file("kb", config.kb_path));
    auto& index = store.vectors.ensure(vecindex::kReferenceKbIndex, embedder->dim(), embedder->model_id());
    return curate::load_kb(index, records, *embedder);
}

}  // namespace kgrag
