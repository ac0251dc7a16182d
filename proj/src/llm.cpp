#include "kgrag/llm.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <regex>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace kgrag::llm {

using json = nlohmann::json;

namespace {

const std::regex& placeholder_re() {
    static const std::regex re(R"(\{\{\s*([A-Za-z0-9_.]+)\s*\}\})");
    return re;
}

void collect_placeholders(const std::string& text, std::set<std::string>& out) {
    for (std::sregex_iterator it(text.begin(), text.end(), placeholder_re()), end; it != end; ++it) {
        out.insert((*it)[1].str());
    }
}

std::string substitute(const std::string& text, const StringMap& vars) {
    std::string out;
    std::size_t last = 0;
    for (std::sregex_iterator it(text.begin(), text.end(), placeholder_re()), end; it != end; ++it) {
        out.append(text, last, static_cast<std::size_t>(it->position()) - last);
        out += vars.at((*it)[1].str());
        last = static_cast<std::size_t>(it->position() + it->length());
    }
    out.append(text, last);
    return out;
}

std::string strip_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace

PromptTemplate parse_template(std::string template_id, std::string_view document) {
    PromptTemplate tpl;
    tpl.template_id = std::move(template_id);
    auto lines = split(document, '\n');
    if (lines.empty() || trim(lines[0]) != "template v1") throw FormatError("expected header 'template v1'", 1);

    std::string section;
    std::string buffer;
    std::optional<std::string> pending_input;
    bool have_body = false;
    auto flush = [&](std::size_t line_no) {
        auto text = strip_trailing_newlines(buffer);
        if (section == "system") {
            tpl.system = text;
        } else if (section == "body") {
            tpl.body = text;
            have_body = true;
        } else if (section == "example input") {
            if (pending_input) throw FormatError("example input without example output", line_no);
            pending_input = text;
        } else if (section == "example output") {
            if (!pending_input) throw FormatError("example output without example input", line_no);
            tpl.few_shots.push_back({*pending_input, text});
            pending_input.reset();
        }
        buffer.clear();
    };
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (line.rfind("--- ", 0) == 0) {
            flush(i + 1);
            section = std::string(trim(std::string_view(line).substr(4)));
            if (section != "system" && section != "body" && section != "example input" && section != "example output") {
                throw FormatError("unknown template section '" + section + "'", i + 1);
            }
            continue;
        }
        if (section.empty()) {
            if (!trim(line).empty() && line[0] != '#') throw FormatError("text before the first section", i + 1);
            continue;
        }
        buffer += line;
        buffer += '\n';
    }
    flush(lines.size());
    if (pending_input) throw FormatError("example input without example output", lines.size());
    if (!have_body) throw FormatError("template has no body section", lines.size());
    collect_placeholders(tpl.body, tpl.required_vars);
    collect_placeholders(tpl.system, tpl.required_vars);
    return tpl;
}

std::string render_prompt(const PromptTemplate& tpl, const StringMap& vars) {
    std::vector<std::string> missing;
    for (const auto& v : tpl.required_vars) {
        if (!vars.count(v)) missing.push_back(v);
    }
    if (!missing.empty()) {
        throw Error("template '" + tpl.template_id + "' is missing variable(s): " + join(missing, ", "));
    }
    for (const auto& [k, v] : vars) {
        if (!tpl.required_vars.count(k) && k.find('.') == std::string::npos) {
            spdlog::warn("template '{}' ignores unknown variable '{}'", tpl.template_id, k);
        }
    }
    std::string out;
    for (const auto& ex : tpl.few_shots) {
        out += "Example input:\n" + ex.input + "\nExample output:\n" + ex.output + "\n\n";
    }
    out += substitute(tpl.body, vars);
    return out;
}

TemplateStore::TemplateStore(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error("templates directory not found: " + dir);
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".tmpl") continue;
        try {
            add(parse_template(e.path().stem().string(), read_file(e.path().string())));
        } catch (const FormatError& err) {
            throw FormatError(e.path().filename().string() + ": " + err.what(), err.line());
        }
    }
}

void TemplateStore::add(PromptTemplate tpl) {
    auto id = tpl.template_id;
    templates_.insert_or_assign(std::move(id), std::move(tpl));
}

const PromptTemplate& TemplateStore::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw Error("no prompt template '" + id + "'");
    return it->second;
}

ChatRequest make_request(const PromptTemplate& tpl, const StringMap& vars, double temperature, ResponseFormat format,
                         std::size_t max_tokens) {
    ChatRequest r;
    r.user = render_prompt(tpl, vars);
    r.system = substitute(tpl.system, vars);
    r.temperature = temperature;
    r.max_tokens = max_tokens;
    r.response_format = format;
    r.template_id = tpl.template_id;
    r.vars = vars;
    return r;
}

ChatResponse FunctionProvider::complete(const ChatRequest& request) {
    auto start = std::chrono::steady_clock::now();
    ChatResponse r;
    r.text = fn_(request);
    r.provider_id = id_;
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

// ---------------------------------------------------------------------------
// Mock

MockScript MockScript::parse(std::string_view document) {
    MockScript script;
    auto lines = split(document, '\n');
    if (lines.empty() || trim(lines[0]) != "mockscript v1") throw FormatError("expected header 'mockscript v1'", 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto line = trim(lines[i]);
        if (line.empty() || line.front() == '#') continue;
        auto parts = split(line, ' ');
        if (parts.size() != 3 || parts[0] != "MATCH") {
            throw FormatError("expected 'MATCH <template_id> <sha256>'", i + 1);
        }
        if (parts[2].size() != 64 || !hex_decode(parts[2])) throw FormatError("malformed sha256", i + 1);
        const std::size_t match_line = i + 1;
        ++i;
        while (i < lines.size() && trim(lines[i]).empty()) ++i;
        if (i >= lines.size() || trim(lines[i]).rfind("```", 0) != 0) {
            throw FormatError("MATCH entry must be followed by a fenced response block", match_line);
        }
        std::string response;
        bool closed = false;
        for (++i; i < lines.size(); ++i) {
            if (trim(lines[i]) == "```") {
                closed = true;
                break;
            }
            response += lines[i];
            response += '\n';
        }
        if (!closed) throw FormatError("unterminated response block", match_line);
        try {
            script.add(parts[1], to_lower_ascii(parts[2]), strip_trailing_newlines(response));
        } catch (const Error& e) {
            throw FormatError(e.what(), match_line);
        }
    }
    return script;
}

void MockScript::add(const std::string& template_id, const std::string& user_sha256, std::string response) {
    auto key = std::make_pair(template_id, user_sha256);
    if (entries_.count(key)) throw Error("matcher collision for " + template_id + " " + user_sha256);
    entries_.emplace(std::move(key), std::move(response));
}

const std::string* MockScript::find(const std::string& template_id, const std::string& user_sha256) const {
    auto it = entries_.find({template_id, user_sha256});
    return it == entries_.end() ? nullptr : &it->second;
}

MockDictionary MockDictionary::parse(std::string_view document) {
    MockDictionary d;
    auto lines = split(document, '\n');
    if (lines.empty() || trim(lines[0]) != "mockdict v1") throw FormatError("expected header 'mockdict v1'", 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto line = trim(lines[i]);
        if (line.empty() || line.front() == '#') continue;
        if (line.size() < 2 || line[1] != ' ') throw FormatError("expected an 'E' or 'R' entry", i + 1);
        auto fields = split(line.substr(2), '|');
        for (auto& f : fields) f = std::string(trim(f));
        if (line[0] == 'E') {
            if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty()) {
                throw FormatError("expected 'E <surface> | <type> [| attributes]'", i + 1);
            }
            DictEntity e{fields[0], fields[1], {}};
            if (fields.size() == 3) {
                for (const auto& item : split(fields[2], ';')) {
                    auto kv = trim(item);
                    if (kv.empty()) continue;
                    auto eq = kv.find('='), at = kv.rfind('@');
                    if (eq == std::string_view::npos || at == std::string_view::npos || at < eq) {
                        throw FormatError("expected attribute 'key=value@type'", i + 1);
                    }
                    try {
                        e.attributes.push_back({std::string(trim(kv.substr(0, eq))),
                                                std::string(trim(kv.substr(eq + 1, at - eq - 1))),
                                                parse_value_type(trim(kv.substr(at + 1)))});
                    } catch (const Error& err) {
                        throw FormatError(err.what(), i + 1);
                    }
                }
            }
            d.entities.push_back(std::move(e));
        } else if (line[0] == 'R') {
            if (fields.size() != 3) throw FormatError("expected 'R <type> | <source> | <target>'", i + 1);
            d.relations.push_back({fields[0], fields[1], fields[2]});
        } else {
            throw FormatError("expected an 'E' or 'R' entry", i + 1);
        }
    }
    return d;
}

namespace {

bool word_byte(char c) {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u);
}

}  // namespace

std::vector<MockDictionary::Occurrence> MockDictionary::find_all(std::string_view text) const {
    std::vector<const DictEntity*> order;
    for (const auto& e : entities) order.push_back(&e);
    std::stable_sort(order.begin(), order.end(),
                     [](auto* a, auto* b) { return a->surface.size() > b->surface.size(); });
    auto lower = to_lower_ascii(text);
    std::vector<std::string> surfaces;
    for (auto* e : order) surfaces.push_back(to_lower_ascii(e->surface));

    std::vector<Occurrence> out;
    std::size_t i = 0;
    while (i < lower.size()) {
        bool boundary_before = i == 0 || !word_byte(lower[i - 1]);
        bool matched = false;
        if (boundary_before) {
            for (std::size_t k = 0; k < order.size(); ++k) {
                const auto& s = surfaces[k];
                if (lower.compare(i, s.size(), s) != 0) continue;
                auto end = i + s.size();
                if (end < lower.size() && word_byte(lower[end])) continue;
                out.push_back({order[k], i, std::string(text.substr(i, s.size()))});
                i = end;
                matched = true;
                break;
            }
        }
        if (!matched) ++i;
    }
    return out;
}

std::vector<std::string> context_markers(std::string_view context) {
    std::vector<std::string> out;
    for (const auto& line : split(context, '\n')) {
        if (line.rfind("[#", 0) != 0) continue;
        auto close = line.find(']');
        if (close != std::string::npos) out.push_back(line.substr(2, close - 2));
    }
    return out;
}

namespace {

std::string var_or(const ChatRequest& r, const std::string& key, const std::string& fallback) {
    auto it = r.vars.find(key);
    return it == r.vars.end() ? fallback : it->second;
}

std::string quote_cypher(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'' || c == '\\') out += '\\';
        out += c;
    }
    return out + "'";
}

std::string mock_extract(const ChatRequest& r, const MockDictionary& dict) {
    auto text = var_or(r, "chunk", r.user);
    ExtractionPayload p;
    std::map<const DictEntity*, std::string> local;
    for (const auto& occ : dict.find_all(text)) {
        if (local.count(occ.entity)) continue;
        auto id = "n" + std::to_string(local.size() + 1);
        local[occ.entity] = id;
        p.nodes.push_back({id, occ.mention, occ.entity->type, occ.entity->attributes});
    }
    auto by_surface = [&](const std::string& s) -> const std::string* {
        for (const auto& [e, id] : local) {
            if (iequals(e->surface, s)) return &id;
        }
        return nullptr;
    };
    for (const auto& rel : dict.relations) {
        const auto* s = by_surface(rel.source_surface);
        const auto* t = by_surface(rel.target_surface);
        if (s && t) p.edges.push_back({*s, *t, rel.type, {}});
    }
    return serialize_extraction(p);
}

std::string mock_expand(const ChatRequest& r) {
    static const char* prefixes[] = {"Explain: ", "Summarize what is known: ", "Give the background: ",
                                     "List the evidence: ", "Describe in detail: "};
    auto query = var_or(r, "query", "");
    if (trim(query).empty()) throw ProviderError(ProviderError::Kind::no_behavior, "expansion request without a query");
    std::size_t n = 3;
    try {
        n = std::stoul(var_or(r, "n", "3"));
    } catch (const std::exception&) {
    }
    std::string out;
    for (std::size_t i = 0; i < n; ++i) out += std::string(prefixes[i % std::size(prefixes)]) + query + "\n";
    return strip_trailing_newlines(out);
}

std::string mock_pattern(const ChatRequest& r, const MockDictionary& dict) {
    auto occs = dict.find_all(var_or(r, "query", r.user));
    if (occs.empty()) return "NONE";
    const auto& e = *occs.front().entity;
    return "MATCH (e:" + e.type + " {name: " + quote_cypher(e.surface) + "})-[r]-(n) RETURN e, n";
}

std::string mock_draft(const ChatRequest& r) {
    auto query = var_or(r, "query", "");
    auto context = var_or(r, "context", "");
    std::string out;
    std::size_t cited = 0;
    for (const auto& line : split(context, '\n')) {
        if (line.rfind("[#", 0) != 0) continue;
        auto close = line.find(']');
        if (close == std::string::npos) continue;
        std::string rest(trim(std::string_view(line).substr(close + 1)));
        out += "- " + rest + " " + line.substr(0, close + 1) + "\n";
        ++cited;
    }
    if (cited == 0) return "No retrieved evidence was provided. General answer to: " + query;
    return "Answer to: " + query + "\n" + strip_trailing_newlines(out);
}

std::string mock_aggregate(const ChatRequest& r) {
    std::vector<std::pair<long, std::string>> drafts;
    for (const auto& [k, v] : r.vars) {
        if (k.rfind("draft.", 0) == 0) drafts.emplace_back(std::stol(k.substr(6)), v);
    }
    if (drafts.empty()) throw ProviderError(ProviderError::Kind::no_behavior, "aggregation request without drafts");
    std::sort(drafts.begin(), drafts.end());
    std::vector<std::string> texts;
    for (auto& [i, t] : drafts) texts.push_back(std::move(t));
    return join(texts, "\n\n");
}

std::string mock_rerank(const ChatRequest& r) {
    auto mention = casefold_nfc(var_or(r, "mention", ""));
    std::vector<std::pair<std::string, std::string>> candidates;  // qid, label
    for (const auto& line : split(var_or(r, "candidates", ""), '\n')) {
        auto fields = split(line, '|');
        if (fields.size() < 2) continue;
        auto head = std::string(trim(fields[0]));
        auto dot = head.find(". ");
        if (dot != std::string::npos) head = head.substr(dot + 2);
        candidates.emplace_back(head, std::string(trim(fields[1])));
    }
    for (const auto& [qid, label] : candidates) {
        if (casefold_nfc(label) == mention) return qid;
    }
    return "NONE";
}

}  // namespace

ChatResponse mock_complete(const ChatRequest& request, const MockScript& script, const MockDictionary& dictionary) {
    auto start = std::chrono::steady_clock::now();
    ChatResponse resp;
    resp.provider_id = "mock";
    const auto& tid = request.template_id;
    if (const auto* scripted = script.find(tid, sha256_hex(request.user))) {
        resp.text = *scripted;
    } else if (tid.rfind("extract", 0) == 0) {
        resp.text = mock_extract(request, dictionary);
    } else if (tid.rfind("expand", 0) == 0) {
        resp.text = mock_expand(request);
    } else if (tid.rfind("pattern", 0) == 0 || tid.rfind("generate_pattern", 0) == 0) {
        resp.text = mock_pattern(request, dictionary);
    } else if (tid.rfind("draft", 0) == 0) {
        resp.text = mock_draft(request);
    } else if (tid.rfind("aggregate", 0) == 0) {
        resp.text = mock_aggregate(request);
    } else if (tid.rfind("rerank", 0) == 0) {
        resp.text = mock_rerank(request);
    } else {
        throw ProviderError(ProviderError::Kind::no_behavior,
                            "no mock behavior for template '" + (tid.empty() ? std::string("<none>") : tid) + "'");
    }
    resp.token_usage = {request.user.size() / 4, resp.text.size() / 4};
    resp.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return resp;
}

ChatResponse MockProvider::complete(const ChatRequest& request) { return mock_complete(request, script_, dict_); }

// ---------------------------------------------------------------------------
// Remote

Url parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/\s]+)(/[^\s]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw Error("malformed endpoint URL '" + url + "'");
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

HttpPost default_http_post() {
    return [](const RemoteSpec& spec, const std::string& body) -> std::pair<int, std::string> {
        auto url = parse_url(spec.endpoint);
        httplib::Client client(url.scheme_host_port);
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(spec.timeout);
        auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(spec.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!spec.api_key_env.empty()) {
            if (const char* key = std::getenv(spec.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }
        auto res = client.Post(url.path, headers, body, "application/json");
        if (!res) {
            auto err = res.error();
            auto kind = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
                            ? ProviderError::Kind::timeout
                            : ProviderError::Kind::transport;
            throw ProviderError(kind, spec.endpoint + ": " + httplib::to_string(err));
        }
        return {res->status, res->body};
    };
}

std::string post_with_retry(const RemoteSpec& spec, const std::string& body, const HttpPost& post,
                            const std::function<void(std::chrono::milliseconds)>& sleep, std::size_t* attempts) {
    auto delay = spec.backoff_initial;
    std::string last_error;
    ProviderError::Kind last_kind = ProviderError::Kind::transport;
    int last_status = 0;
    const std::size_t max_attempts = std::max<std::size_t>(1, spec.max_attempts);
    for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempts) *attempts = attempt;
        std::optional<std::pair<int, std::string>> res;
        try {
            res = post(spec, body);
        } catch (const ProviderError& e) {
            last_kind = e.kind();
            last_error = e.what();
            last_status = 0;
        }
        if (res) {
            auto& [status, text] = *res;
            if (status >= 200 && status < 300) return text;
            last_status = status;
            last_kind = ProviderError::Kind::status;
            last_error = "HTTP " + std::to_string(status) + " from " + spec.endpoint;
            if (status != 429 && status < 500) throw ProviderError(last_kind, last_error + " (not retryable)", attempt, status);
        }
        if (attempt < max_attempts) {
            spdlog::warn("{} (attempt {}/{}), retrying in {} ms", last_error, attempt, max_attempts, delay.count());
            sleep(delay);
            delay = std::min(delay * 2, spec.backoff_cap);
        }
    }
    throw ProviderError(last_kind, last_error + " after " + std::to_string(max_attempts) + " attempts", max_attempts,
                        last_status);
}

RemoteProvider::RemoteProvider(RemoteSpec spec, HttpPost post)
    : spec_(std::move(spec)), post_(std::move(post)), sleep_([](auto d) { std::this_thread::sleep_for(d); }) {
    parse_url(spec_.endpoint);
}

ChatResponse RemoteProvider::complete(const ChatRequest& request) {
    json body{{"model", spec_.model},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens},
              {"messages", json::array()}};
    if (!request.system.empty()) body["messages"].push_back({{"role", "system"}, {"content", request.system}});
    body["messages"].push_back({{"role", "user"}, {"content", request.user}});
    if (request.response_format == ResponseFormat::json_object) body["response_format"] = {{"type", "json_object"}};

    auto start = std::chrono::steady_clock::now();
    std::size_t attempts = 0;
    auto text = post_with_retry(spec_, body.dump(), post_, sleep_, &attempts);
    ChatResponse resp;
    resp.provider_id = id();
    resp.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    try {
        auto j = json::parse(text);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_string()) resp.text = content.get<std::string>();
        if (j.contains("usage")) {
            resp.token_usage.prompt = j["usage"].value("prompt_tokens", 0u);
            resp.token_usage.completion = j["usage"].value("completion_tokens", 0u);
        }
    } catch (const json::exception& e) {
        throw ProviderError(ProviderError::Kind::transport, std::string("unexpected completion body: ") + e.what(), attempts);
    }
    if (trim(resp.text).empty()) throw ProviderError(ProviderError::Kind::empty_completion, "empty completion", attempts);
    return resp;
}

RemoteEmbedder::RemoteEmbedder(RemoteSpec spec, std::size_t dim, HttpPost post)
    : spec_(std::move(spec)), dim_(dim), post_(std::move(post)) {
    parse_url(spec_.endpoint);
}

vecindex::EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
    if (trim(text).empty()) throw Error("cannot embed empty text");
    json body{{"model", spec_.model}, {"input", json::array({std::string(text)})}};
    auto reply = post_with_retry(spec_, body.dump(), post_, [](auto d) { std::this_thread::sleep_for(d); });
    std::vector<float> values;
    try {
        auto j = json::parse(reply);
        for (const auto& x : j.at("data").at(0).at("embedding")) values.push_back(x.get<float>());
    } catch (const json::exception& e) {
        throw ProviderError(ProviderError::Kind::transport, std::string("unexpected embeddings body: ") + e.what());
    }
    if (values.size() != dim_) {
        throw Error("embedding endpoint returned " + std::to_string(values.size()) + " dims, expected " +
                    std::to_string(dim_));
    }
    return vecindex::normalized(std::move(values), spec_.model);
}

// ---------------------------------------------------------------------------
// Extraction parsing

namespace {

std::string unwrap_fence(std::string_view text) {
    auto t = trim(text);
    if (t.rfind("```", 0) != 0) return std::string(t);
    auto first_nl = t.find('\n');
    if (first_nl == std::string_view::npos) throw ExtractionError("malformed JSON: unterminated code fence");
    auto inner = t.substr(first_nl + 1);
    auto close = inner.rfind("```");
    if (close == std::string_view::npos || !trim(inner.substr(close + 3)).empty()) {
        throw ExtractionError("malformed JSON: text outside the code fence");
    }
    inner = inner.substr(0, close);
    if (inner.find("```") != std::string_view::npos) throw ExtractionError("malformed JSON: more than one code fence");
    return std::string(inner);
}

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
    throw ExtractionError("schema violation at " + path + ": " + what);
}

std::string required_string(const json& obj, const std::string& key, const std::string& path, bool non_empty) {
    if (!obj.contains(key)) field_error(path + "." + key, "missing");
    const auto& v = obj.at(key);
    if (!v.is_string()) field_error(path + "." + key, "expected a string");
    auto s = v.get<std::string>();
    if (non_empty && trim(s).empty()) field_error(path + "." + key, "must be non-empty");
    return s;
}

std::vector<PayloadAttribute> parse_attributes(const json& obj, const std::string& path) {
    std::vector<PayloadAttribute> out;
    if (!obj.contains("attributes")) return out;
    const auto& arr = obj.at("attributes");
    if (!arr.is_array()) field_error(path + ".attributes", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        auto p = path + ".attributes[" + std::to_string(i) + "]";
        const auto& a = arr[i];
        if (!a.is_object()) field_error(p, "expected an object");
        PayloadAttribute attr;
        attr.key = required_string(a, "key", p, true);
        auto vt = a.contains("value_type") ? a.at("value_type") : json("string");
        if (!vt.is_string()) field_error(p + ".value_type", "expected a string");
        try {
            attr.value_type = parse_value_type(vt.get<std::string>());
        } catch (const Error&) {
            field_error(p + ".value_type", "expected one of string, number, timestamp");
        }
        if (!a.contains("value")) field_error(p + ".value", "missing");
        const auto& v = a.at("value");
        if (v.is_string()) {
            attr.value = v.get<std::string>();
        } else if (v.is_number()) {
            attr.value = v.dump();
        } else {
            field_error(p + ".value", "expected a string or number");
        }
        if (attr.value_type == ValueType::number) {
            char* end = nullptr;
            std::strtod(attr.value.c_str(), &end);
            if (attr.value.empty() || *end != '\0') field_error(p + ".value", "not a number");
        }
        if (attr.value_type == ValueType::timestamp && !is_iso8601(attr.value)) {
            field_error(p + ".value", "not an ISO-8601 timestamp");
        }
        out.push_back(std::move(attr));
    }
    return out;
}

json attributes_json(const std::vector<PayloadAttribute>& attrs) {
    json arr = json::array();
    for (const auto& a : attrs) {
        arr.push_back({{"key", a.key}, {"value", a.value}, {"value_type", std::string(to_string(a.value_type))}});
    }
    return arr;
}

}  // namespace

ParsedExtraction parse_extraction(std::string_view response_text, const ontology::OntologySchema& schema) {
    auto text = unwrap_fence(response_text);
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ExtractionError("malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    if (!root.is_object()) field_error("$", "expected an object");
    if (!root.contains("nodes")) field_error("$.nodes", "missing");
    if (!root.at("nodes").is_array()) field_error("$.nodes", "expected an array");
    if (root.contains("edges") && !root.at("edges").is_array()) field_error("$.edges", "expected an array");

    ExtractionPayload in;
    std::set<std::string> ids;
    const auto& nodes = root.at("nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto p = "$.nodes[" + std::to_string(i) + "]";
        if (!nodes[i].is_object()) field_error(p, "expected an object");
        PayloadNode n;
        n.local_id = required_string(nodes[i], "local_id", p, true);
        if (!ids.insert(n.local_id).second) field_error(p + ".local_id", "duplicate local_id '" + n.local_id + "'");
        n.mention = required_string(nodes[i], "mention", p, true);
        n.type = required_string(nodes[i], "type", p, true);
        n.attributes = parse_attributes(nodes[i], p);
        in.nodes.push_back(std::move(n));
    }
    if (root.contains("edges")) {
        const auto& edges = root.at("edges");
        for (std::size_t i = 0; i < edges.size(); ++i) {
            auto p = "$.edges[" + std::to_string(i) + "]";
            if (!edges[i].is_object()) field_error(p, "expected an object");
            PayloadEdge e;
            e.source_local_id = required_string(edges[i], "source_local_id", p, true);
            e.target_local_id = required_string(edges[i], "target_local_id", p, true);
            e.type = required_string(edges[i], "type", p, true);
            e.attributes = parse_attributes(edges[i], p);
            in.edges.push_back(std::move(e));
        }
    }

    ParsedExtraction out;
    out.report = ontology::validate_subgraph(in, schema);
    std::set<std::size_t> bad_nodes, bad_edges;
    for (const auto& v : out.report.violations) (v.on_node ? bad_nodes : bad_edges).insert(v.index);
    std::set<std::string> kept_ids;
    for (std::size_t i = 0; i < in.nodes.size(); ++i) {
        if (bad_nodes.count(i)) continue;
        kept_ids.insert(in.nodes[i].local_id);
        out.payload.nodes.push_back(in.nodes[i]);
    }
    for (std::size_t i = 0; i < in.edges.size(); ++i) {
        if (bad_edges.count(i)) continue;
        const auto& e = in.edges[i];
        if (!kept_ids.count(e.source_local_id) || !kept_ids.count(e.target_local_id)) {
            out.report.violations.push_back({ontology::ViolationKind::dangling_endpoint, false, i,
                                             "edge " + std::to_string(i) + " lost an endpoint to a dropped node"});
            continue;
        }
        out.payload.edges.push_back(e);
    }
    for (const auto& v : out.report.violations) spdlog::debug("extraction element dropped: {}", v.detail);
    return out;
}

std::string serialize_extraction(const ExtractionPayload& payload) {
    json nodes = json::array(), edges = json::array();
    for (const auto& n : payload.nodes) {
        nodes.push_back(
            {{"local_id", n.local_id}, {"mention", n.mention}, {"type", n.type}, {"attributes", attributes_json(n.attributes)}});
    }
    for (const auto& e : payload.edges) {
        edges.push_back({{"source_local_id", e.source_local_id},
                         {"target_local_id", e.target_local_id},
                         {"type", e.type},
                         {"attributes", attributes_json(e.attributes)}});
    }
    return json{{"nodes", nodes}, {"edges", edges}}.dump();
}

}  // namespace kgrag::llm
