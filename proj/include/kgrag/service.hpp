#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "kgrag/curate.hpp"
#include "kgrag/runtime.hpp"

namespace httplib {
class Server;
}

namespace kgrag::service {

/// JSON over HTTP. Endpoints:
///   GET  /api/health                          {status, versions}
///   POST /api/ingest                          manifest -> 202 {run_id, status}; 409 while a run is active
///   GET  /api/runs/{id}                       {run_id, status, started_at, finished_at, summary | detail}
///   POST /api/query                           {q, level, n, k, verbose} -> query result
///   GET  /api/graph/stats?top=N               type distribution and totals
///   GET  /api/graph/node/{id}                 node with attributes, provenance, degree
///   GET  /api/graph/subgraph?center=ID&hops=H H in 0..2, at most 200 nodes
///   GET  /api/embeddings/projection?index=corpus
/// Errors are `{error, detail}`.
///
/// Readers work on an immutable store snapshot. A curation run copies the
/// snapshot, curates and saves the copy, then publishes it.
class Service {
public:
    static constexpr std::size_t kSubgraphCap = 200;
    static constexpr std::size_t kMaxHops = 2;

    Service(std::unique_ptr<Runtime> runtime, curate::KnowledgeStore store);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Creates the store directory when absent. Throws ConfigError.
    static std::unique_ptr<Service> open(const Config& cfg);

    /// Binds (port 0 picks a free one) and returns the bound port. Throws ConfigError.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void run();
    void stop();

    std::shared_ptr<const curate::KnowledgeStore> snapshot() const;
    const Runtime& runtime() const { return *runtime_; }
    /// Blocks until the active curation run, if any, finishes.
    void wait_idle();

private:
    struct Run {
        std::string run_id;
        std::string status;  // running, succeeded, failed
        std::string started_at;
        std::string finished_at;
        nlohmann::json summary;
        std::string detail;
    };

    void routes();
    nlohmann::json run_json(const Run& run) const;
    void curate_job(std::string run_id, std::vector<ingest::ManifestRecord> manifest, std::string base_dir);

    std::unique_ptr<Runtime> runtime_;
    std::unique_ptr<httplib::Server> server_;

    mutable std::mutex store_mu_;
    std::shared_ptr<const curate::KnowledgeStore> store_;

    mutable std::mutex runs_mu_;
    std::map<std::string, Run> runs_;
    bool busy_ = false;
    std::size_t run_counter_ = 0;
    std::thread worker_;
};

}  // namespace kgrag::service
