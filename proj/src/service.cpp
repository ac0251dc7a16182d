#include "kgrag/service.hpp"

#include <charconv>
#include <filesystem>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "kgrag/kg.hpp"
#include "kgrag/queryphase.hpp"

namespace kgrag::service {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
    send(res, status, {{"error", error}, {"detail", detail}});
}

/// Absent parameter yields `fallback`; anything but a decimal in [lo, hi] yields nullopt.
std::optional<std::size_t> size_param(const httplib::Request& req, const std::string& name, std::size_t fallback,
                                      std::size_t lo, std::size_t hi) {
    if (!req.has_param(name)) return fallback;
    auto s = req.get_param_value(name);
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || v < lo || v > hi) return std::nullopt;
    return v;
}

std::optional<std::size_t> size_field(const json& body, const std::string& name, std::size_t fallback, std::size_t lo,
                                      std::size_t hi) {
    if (!body.contains(name) || body[name].is_null()) return fallback;
    const auto& v = body[name];
    if (!v.is_number_integer()) return std::nullopt;
    auto n = v.get<long long>();
    if (n < static_cast<long long>(lo) || n > static_cast<long long>(hi)) return std::nullopt;
    return static_cast<std::size_t>(n);
}

json attr_json(const kg::AttrValue& a) {
    json j = {{"key", a.key}, {"value", a.value}, {"value_type", to_string(a.value_type)}, {"source_doc_id", a.source_doc_id}};
    j["observed_at"] = a.observed_at ? json(*a.observed_at) : json(nullptr);
    return j;
}

json provenance_json(const kg::ProvenanceRecord& p) {
    return {{"doc_id", p.doc_id}, {"chunk_id", p.chunk_id}, {"extraction_run_id", p.extraction_run_id}, {"mention", p.mention}};
}

json node_brief(const kg::KGNode& n) {
    json j = {{"node_id", n.node_id}, {"name", n.name}, {"type", n.type}};
    j["qid"] = n.qid ? json(*n.qid) : json(nullptr);
    return j;
}

json edge_brief(const kg::KGEdge& e) {
    return {{"edge_id", e.edge_id}, {"source", e.source_node_id}, {"target", e.target_node_id}, {"type", e.type}};
}

/// JSON array, `{records, base_dir}`, or JSON lines.
std::pair<std::vector<ingest::ManifestRecord>, std::string> parse_ingest_body(const std::string& body) {
    std::string base_dir = ".";
    std::string jsonl;
    json j = json::parse(body, nullptr, false);
    if (!j.is_discarded() && (j.is_array() || (j.is_object() && j.contains("records")))) {
        if (j.is_object()) {
            if (j.contains("base_dir")) {
                if (!j["base_dir"].is_string()) throw Error("base_dir must be a string");
                base_dir = j["base_dir"].get<std::string>();
            }
            j = j["records"];
            if (!j.is_array()) throw Error("records must be an array");
        }
        for (const auto& r : j) jsonl += r.dump() + "\n";
    } else {
        jsonl = body;
    }
    auto manifest = ingest::parse_manifest(jsonl);
    if (manifest.empty()) throw Error("manifest has no records");
    return {std::move(manifest), base_dir};
}

}  // namespace

Service::Service(std::unique_ptr<Runtime> runtime, curate::KnowledgeStore store)
    : runtime_(std::move(runtime)),
      server_(std::make_unique<httplib::Server>()),
      store_(std::make_shared<const curate::KnowledgeStore>(std::move(store))) {
    routes();
}

Service::~Service() {
    stop();
    if (worker_.joinable()) worker_.join();
}

std::unique_ptr<Service> Service::open(const Config& cfg) {
    auto rt = Runtime::from_config(cfg);
    std::error_code ec;
    fs::create_directories(cfg.store_dir, ec);
    if (ec || !fs::is_directory(cfg.store_dir)) throw ConfigError("store directory '" + cfg.store_dir + "' is not usable");
    curate::KnowledgeStore store;
    try {
        store = curate::KnowledgeStore::open(cfg.store_dir);
    } catch (const Error& e) {
        throw ConfigError("store '" + cfg.store_dir + "': " + e.what());
    }
    return std::make_unique<Service>(std::move(rt), std::move(store));
}

int Service::bind(const std::string& host, int port) {
    int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
    return bound;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
    if (server_) server_->stop();
}

std::shared_ptr<const curate::KnowledgeStore> Service::snapshot() const {
    std::lock_guard lock(store_mu_);
    return store_;
}

void Service::wait_idle() {
    std::thread t;
    {
        std::lock_guard lock(runs_mu_);
        t = std::move(worker_);
    }
    if (t.joinable()) t.join();
}

json Service::run_json(const Run& run) const {
    json j = {{"run_id", run.run_id}, {"status", run.status}, {"started_at", run.started_at}};
    j["finished_at"] = run.finished_at.empty() ? json(nullptr) : json(run.finished_at);
    if (!run.summary.is_null()) j["summary"] = run.summary;
    if (!run.detail.empty()) j["detail"] = run.detail;
    return j;
}

void Service::curate_job(std::string run_id, std::vector<ingest::ManifestRecord> manifest, std::string base_dir) {
    Run result;
    try {
        curate::KnowledgeStore next = *snapshot();
        runtime_->ensure_kb(next);
        auto summary = curate::curate(next, manifest, base_dir, runtime_->curation_inputs(), runtime_->config.curation());
        next.save();
        {
            std::lock_guard lock(store_mu_);
            store_ = std::make_shared<const curate::KnowledgeStore>(std::move(next));
        }
        result.status = "succeeded";
        result.summary = curate::to_json(summary);
    } catch (const std::exception& e) {
        spdlog::error("curation run {} failed: {}", run_id, e.what());
        result.status = "failed";
        result.detail = e.what();
    }
    std::lock_guard lock(runs_mu_);
    auto& run = runs_[run_id];
    run.status = result.status;
    run.summary = std::move(result.summary);
    run.detail = std::move(result.detail);
    run.finished_at = utc_now_iso8601();
    busy_ = false;
}

void Service::routes() {
    auto& srv = *server_;
    const std::string origin = runtime_->config.cors_origin;

    srv.set_read_timeout(30, 0);
    srv.set_write_timeout(30, 0);
    srv.set_payload_max_length(64 * 1024 * 1024);
    srv.set_default_headers({{"Access-Control-Allow-Origin", origin},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string detail = "unknown exception";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            detail = e.what();
        } catch (...) {
        }
        fail(res, 500, "internal", detail);
    });
    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) {
            fail(res, res.status, res.status == 404 ? "not_found" : "error", req.method + " " + req.path);
        }
    });

    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
        auto store = snapshot();
        send(res, 200,
             {{"status", "ok"},
              {"versions",
               {{"kgrag", KGRAG_VERSION},
                {"ontology", runtime_->schema.version()},
                {"graph_schema", store->graph.schema_version()},
                {"embedder", runtime_->embedder->model_id()},
                {"provider", runtime_->provider->id()}}}});
    });

    srv.Post("/api/ingest", [this](const httplib::Request& req, httplib::Response& res) {
        std::vector<ingest::ManifestRecord> manifest;
        std::string base_dir;
        try {
            std::tie(manifest, base_dir) = parse_ingest_body(req.body);
        } catch (const Error& e) {
            return fail(res, 400, "bad_request", e.what());
        }
        std::thread previous;
        std::string run_id;
        {
            std::lock_guard lock(runs_mu_);
            if (busy_) return fail(res, 409, "busy", "a curation run is already active");
            busy_ = true;
            auto started = utc_now_iso8601();
            run_id = "run-" + sha256_hex(started + std::to_string(++run_counter_) + req.body).substr(0, 12);
            runs_[run_id] = Run{run_id, "running", started, "", nullptr, ""};
            previous = std::move(worker_);
        }
        if (previous.joinable()) previous.join();
        std::thread job(&Service::curate_job, this, run_id, std::move(manifest), std::move(base_dir));
        {
            std::lock_guard lock(runs_mu_);
            worker_ = std::move(job);
        }
        send(res, 202, {{"run_id", run_id}, {"status", "running"}});
    });

    srv.Get(R"(/api/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(runs_mu_);
        auto it = runs_.find(req.matches[1].str());
        if (it == runs_.end()) return fail(res, 404, "not_found", "unknown run '" + req.matches[1].str() + "'");
        send(res, 200, run_json(it->second));
    });

    srv.Post("/api/query", [this](const httplib::Request& req, httplib::Response& res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) return fail(res, 400, "bad_request", "body must be a JSON object");
        if (!body.contains("q") || !body["q"].is_string() || trim(body["q"].get<std::string>()).empty()) {
            return fail(res, 400, "bad_request", "q must be a non-empty string");
        }
        const auto& cfg = runtime_->config;
        std::string level_name = body.value("level", json(cfg.level)).is_string() ? body.value("level", cfg.level) : "";
        auto level = queryphase::parse_level(level_name);
        if (!level) {
            return fail(res, 400, "bad_request",
                        "level must be one of " + std::string(queryphase::kLevelNames));
        }
        auto n = size_field(body, "n", cfg.n, 0, 16);
        auto k = size_field(body, "k", cfg.k, 1, 64);
        if (!n || !k) return fail(res, 400, "bad_request", "n must be an integer in 0..16 and k in 1..64");
        if (body.contains("verbose") && !body["verbose"].is_boolean()) {
            return fail(res, 400, "bad_request", "verbose must be a boolean");
        }
        bool verbose = body.value("verbose", false);

        auto engine = cfg.engine();
        engine.expansions = *n;
        engine.k = *k;
        auto store = snapshot();
        try {
            auto result = queryphase::run_query(body["q"].get<std::string>(), *level, *store, *runtime_->provider,
                                                runtime_->engine_inputs(), engine);
            send(res, 200, queryphase::to_json(result, *store, verbose));
        } catch (const llm::ProviderError& e) {
            fail(res, 503, "provider_unavailable", e.what());
        } catch (const queryphase::MissingStoreError& e) {
            fail(res, 409, "missing_store", e.what());
        }
    });

    srv.Get("/api/graph/stats", [this](const httplib::Request& req, httplib::Response& res) {
        auto top = size_param(req, "top", 0, 0, 100000);
        if (!top) return fail(res, 400, "bad_request", "top must be a non-negative integer");
        auto store = snapshot();
        auto dist = kg::type_distribution(store->graph, *top);
        auto counts = [](const auto& v) {
            json a = json::array();
            for (const auto& [type, count] : v) a.push_back({{"type", type}, {"count", count}});
            return a;
        };
        send(res, 200,
             {{"node_counts", counts(dist.node_counts)},
              {"edge_counts", counts(dist.edge_counts)},
              {"total_nodes", dist.total_nodes},
              {"total_edges", dist.total_edges},
              {"total_documents", store->chunks.documents().size()},
              {"total_chunks", store->chunks.chunks().size()}});
    });

    srv.Get(R"(/api/graph/node/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        auto store = snapshot();
        const auto id = req.matches[1].str();
        const auto* n = store->graph.node(id);
        if (!n) return fail(res, 404, "not_found", "unknown node '" + id + "'");
        json j = node_brief(*n);
        j["aliases"] = n->aliases;
        j["attributes"] = json::array();
        for (const auto& a : n->attributes) j["attributes"].push_back(attr_json(a));
        j["provenance"] = json::array();
        for (const auto& p : n->provenance) j["provenance"].push_back(provenance_json(p));
        j["out_degree"] = store->graph.out_edges(id).size();
        j["in_degree"] = store->graph.in_edges(id).size();
        send(res, 200, j);
    });

    srv.Get("/api/graph/subgraph", [this](const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("center")) return fail(res, 400, "bad_request", "center is required");
        auto hops = size_param(req, "hops", 1, 0, kMaxHops);
        if (!hops) return fail(res, 400, "bad_request", "hops must be an integer in 0..2");
        auto store = snapshot();
        auto center = req.get_param_value("center");
        if (!store->graph.node(center)) return fail(res, 404, "not_found", "unknown node '" + center + "'");
        auto sub = kg::neighborhood(store->graph, {center}, *hops, kSubgraphCap);
        json nodes = json::array(), edges = json::array();
        for (const auto& id : sub.node_ids) nodes.push_back(node_brief(*store->graph.node(id)));
        for (const auto& id : sub.edge_ids) edges.push_back(edge_brief(*store->graph.edge(id)));
        send(res, 200,
             {{"center", center},
              {"hops", *hops},
              {"nodes", nodes},
              {"edges", edges},
              {"truncated", sub.node_ids.size() >= kSubgraphCap}});
    });

    srv.Get("/api/embeddings/projection", [this](const httplib::Request& req, httplib::Response& res) {
        auto name = req.has_param("index") ? req.get_param_value("index") : std::string(vecindex::kCorpusIndex);
        auto store = snapshot();
        if (!store->vectors.has(name)) return fail(res, 404, "not_found", "unknown index '" + name + "'");
        const auto& index = store->vectors.get(name);
        std::vector<vecindex::ProjectedPoint> points;
        try {
            points = vecindex::project_2d(index);
        } catch (const Error& e) {
            return fail(res, 409, "too_few_records", e.what());
        }
        json out = json::array();
        for (const auto& p : points) {
            json j = {{"record_id", p.record_id}, {"x", p.x}, {"y", p.y}};
            if (const auto* rec = index.find(p.record_id)) j["payload"] = rec->payload;
            out.push_back(std::move(j));
        }
        send(res, 200, {{"index", name}, {"points", out}});
    });
}

}  // namespace kgrag::service
