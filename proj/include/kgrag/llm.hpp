#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kgrag/common.hpp"
#include "kgrag/ontology.hpp"
#include "kgrag/payload.hpp"
#include "kgrag/vecindex.hpp"

namespace kgrag::llm {

// ---------------------------------------------------------------------------
// Prompt templates

struct FewShot {
    std::string input;
    std::string output;

    bool operator==(const FewShot&) const = default;
};

struct PromptTemplate {
    std::string template_id;
    std::string system;
    std::string body;  // `{{name}}` placeholders
    std::set<std::string> required_vars;
    std::vector<FewShot> few_shots;
};

/// Parses a `template v1` file: `--- system`, `--- body`, and repeated
/// `--- example input` / `--- example output` sections. Lines before the first
/// section starting with `#` are comments.
PromptTemplate parse_template(std::string template_id, std::string_view document);

/// Few-shot pairs first (in file order), then the substituted body.
/// Missing variables throw Error naming them; unknown ones are logged and ignored.
std::string render_prompt(const PromptTemplate& tpl, const StringMap& vars);

/// Templates keyed by file stem, loaded from `<dir>/*.tmpl`.
class TemplateStore {
public:
    TemplateStore() = default;
    explicit TemplateStore(const std::string& dir);
    void add(PromptTemplate tpl);
    bool has(const std::string& id) const { return templates_.count(id) > 0; }
    const PromptTemplate& get(const std::string& id) const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Chat transport

enum class ResponseFormat { free_text, json_object };

struct ChatRequest {
    std::string system;
    std::string user;
    double temperature = 0.0;
    std::size_t max_tokens = 1024;
    ResponseFormat response_format = ResponseFormat::free_text;
    // Not sent over the wire; lets the mock provider pick a behavior.
    std::string template_id;
    StringMap vars;
};

/// Renders `tpl` into a request. The template's system text becomes the system message.
ChatRequest make_request(const PromptTemplate& tpl, const StringMap& vars, double temperature = 0.0,
                         ResponseFormat format = ResponseFormat::free_text, std::size_t max_tokens = 1024);

struct TokenUsage {
    std::size_t prompt = 0;
    std::size_t completion = 0;
};

struct ChatResponse {
    std::string text;
    std::string provider_id;
    TokenUsage token_usage;
    double latency_ms = 0;
};

class ProviderError : public Error {
public:
    enum class Kind { transport, status, timeout, empty_completion, no_behavior, unavailable };

    ProviderError(Kind kind, const std::string& what, std::size_t attempts = 1, int status = 0)
        : Error(what), kind_(kind), attempts_(attempts), status_(status) {}
    Kind kind() const noexcept { return kind_; }
    std::size_t attempts() const noexcept { return attempts_; }
    int status() const noexcept { return status_; }

private:
    Kind kind_;
    std::size_t attempts_;
    int status_;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual std::string id() const = 0;
    /// Throws ProviderError.
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

/// Wraps a callable; used for tests and failure injection.
class FunctionProvider final : public ChatProvider {
public:
    using Fn = std::function<std::string(const ChatRequest&)>;
    explicit FunctionProvider(Fn fn, std::string id = "function") : fn_(std::move(fn)), id_(std::move(id)) {}
    std::string id() const override { return id_; }
    ChatResponse complete(const ChatRequest& request) override;

private:
    Fn fn_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Mock provider

/// `mockscript v1`: entries `MATCH <template_id> <sha256-of-user-text>` each
/// followed by a fenced (```) response block.
class MockScript {
public:
    static MockScript parse(std::string_view document);
    void add(const std::string& template_id, const std::string& user_sha256, std::string response);
    const std::string* find(const std::string& template_id, const std::string& user_sha256) const;
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::map<std::pair<std::string, std::string>, std::string> entries_;
};

struct DictEntity {
    std::string surface;
    std::string type;
    std::vector<PayloadAttribute> attributes;
};

struct DictRelation {
    std::string type;
    std::string source_surface;
    std::string target_surface;
};

/// `mockdict v1`: `E <surface> | <type> [| key=value@value_type; ...]` and
/// `R <edge type> | <source surface> | <target surface>`.
struct MockDictionary {
    std::vector<DictEntity> entities;
    std::vector<DictRelation> relations;

    static MockDictionary parse(std::string_view document);
    /// Non-overlapping whole-word, case-insensitive occurrences in text order,
    /// longest surface first at each position. Mentions are verbatim slices.
    struct Occurrence {
        const DictEntity* entity;
        std::size_t offset;
        std::string mention;
    };
    std::vector<Occurrence> find_all(std::string_view text) const;
};

/// Deterministic offline provider. Scripted entries win; otherwise the
/// template-family rule for the request's template_id prefix applies:
/// extract, expand, pattern, draft, aggregate, rerank.
class MockProvider final : public ChatProvider {
public:
    MockProvider(MockScript script, MockDictionary dictionary)
        : script_(std::move(script)), dict_(std::move(dictionary)) {}
    std::string id() const override { return "mock"; }
    ChatResponse complete(const ChatRequest& request) override;

    const MockDictionary& dictionary() const noexcept { return dict_; }

private:
    MockScript script_;
    MockDictionary dict_;
};

ChatResponse mock_complete(const ChatRequest& request, const MockScript& script, const MockDictionary& dictionary);

/// Marker lines of the serialized retrieval context, `[#kind:id] ...`, read by
/// the mock draft rule.
std::vector<std::string> context_markers(std::string_view context);

// ---------------------------------------------------------------------------
// Remote provider

struct RemoteSpec {
    std::string endpoint;  // e.g. https://host/v1/chat/completions
    std::string model;
    std::string api_key_env;  // name of the environment variable holding the key
    std::chrono::milliseconds timeout{60000};
    std::size_t max_attempts = 3;
    std::chrono::milliseconds backoff_initial{500};
    std::chrono::milliseconds backoff_cap{8000};
};

/// Splits `scheme://host[:port]/path`. Throws Error on anything else.
struct Url {
    std::string scheme_host_port;
    std::string path;
};
Url parse_url(const std::string& url);

/// Performs one POST of a JSON body; returns (status, body) or throws ProviderError(transport/timeout).
using HttpPost = std::function<std::pair<int, std::string>(const RemoteSpec&, const std::string& body)>;
HttpPost default_http_post();

/// POST with bounded retries: connection failures, timeouts, 429 and 5xx are
/// retried with exponential backoff; other non-2xx statuses are not.
std::string post_with_retry(const RemoteSpec& spec, const std::string& body, const HttpPost& post,
                            const std::function<void(std::chrono::milliseconds)>& sleep, std::size_t* attempts = nullptr);

/// Chat-completions compatible client.
class RemoteProvider final : public ChatProvider {
public:
    explicit RemoteProvider(RemoteSpec spec, HttpPost post = default_http_post());
    std::string id() const override { return "remote:" + spec_.model; }
    ChatResponse complete(const ChatRequest& request) override;
    void set_sleep(std::function<void(std::chrono::milliseconds)> sleep) { sleep_ = std::move(sleep); }

private:
    RemoteSpec spec_;
    HttpPost post_;
    std::function<void(std::chrono::milliseconds)> sleep_;
};

/// Embeddings endpoint client (`{model, input}` -> `data[0].embedding`), normalized locally.
class RemoteEmbedder final : public vecindex::Embedder {
public:
    RemoteEmbedder(RemoteSpec spec, std::size_t dim, HttpPost post = default_http_post());
    std::string model_id() const override { return spec_.model; }
    std::size_t dim() const override { return dim_; }
    vecindex::EmbeddingVector embed(std::string_view text) const override;

private:
    RemoteSpec spec_;
    std::size_t dim_;
    HttpPost post_;
};

// ---------------------------------------------------------------------------
// Structured extraction output

class ExtractionError : public Error {
public:
    using Error::Error;
};

struct ParsedExtraction {
    ExtractionPayload payload;
    ontology::ValidationReport report;  // dropped elements, indices refer to the input payload
};

/// Strict JSON (optionally wrapped in one fenced block and nothing else).
/// Malformed JSON and structural problems throw ExtractionError with a byte
/// position or field path; ontology violations drop the offending elements.
ParsedExtraction parse_extraction(std::string_view response_text, const ontology::OntologySchema& schema);
std::string serialize_extraction(const ExtractionPayload& payload);

}  // namespace kgrag::llm
