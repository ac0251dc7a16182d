#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <thread>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kgrag/kg.hpp"
#include "kgrag/queryphase.hpp"
#include "kgrag/runtime.hpp"
#include "kgrag/service.hpp"

using namespace kgrag;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

struct Options {
    std::string config_path;
    std::map<std::string, std::string> overrides;  // config key -> flag value
    std::string log_level = "warn";

    std::string manifest;
    std::string query;
    bool interactive = false;
    bool verbose = false;
    std::size_t top = 0;
    std::string out;
};

/// Defaults, then the config file, then flags.
Config resolve_config(const Options& o) {
    Config cfg = o.config_path.empty() ? Config{} : Config::load(o.config_path);
    for (const auto& [key, value] : o.overrides) cfg.set(key, value);
    return cfg;
}

/// Read-only commands refuse to create a store.
curate::KnowledgeStore open_existing_store(const Config& cfg) {
    if (!fs::is_directory(cfg.store_dir)) throw queryphase::MissingStoreError("store '" + cfg.store_dir + "' does not exist");
    return curate::KnowledgeStore::open(cfg.store_dir);
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

int cmd_curate(const Options& o) {
    auto cfg = resolve_config(o);
    auto rt = Runtime::from_config(cfg);
    std::string manifest_text;
    try {
        manifest_text = read_file(o.manifest);
    } catch (const Error& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    auto manifest = ingest::parse_manifest(manifest_text);
    if (manifest.empty()) {
        spdlog::error("manifest '{}' has no records", o.manifest);
        return kFailure;
    }
    auto store = curate::KnowledgeStore::open(cfg.store_dir);
    rt->ensure_kb(store);
    auto base_dir = fs::absolute(o.manifest).parent_path().string();
    auto summary = curate::curate(store, manifest, base_dir, rt->curation_inputs(), cfg.curation());
    store.save();

    if (cfg.format == "text") {
        std::cout << "documents processed " << summary.docs_processed << ", skipped " << summary.docs_skipped << "\n"
                  << "chunks added " << summary.chunks_added << ", failed " << summary.chunks_failed << "\n"
                  << "nodes added " << summary.nodes_added << ", merged " << summary.nodes_merged << "\n"
                  << "edges added " << summary.edges_added << "\n"
                  << "totals: " << summary.total_documents << " documents, " << summary.total_chunks << " chunks, "
                  << summary.total_nodes << " nodes, " << summary.total_edges << " edges\n";
        for (const auto& f : summary.failures) {
            std::cout << "failed " << f.stage << " " << f.source_uri << (f.chunk_id.empty() ? "" : " " + f.chunk_id)
                      << ": " << f.detail << "\n";
        }
    } else {
        print_json(curate::to_json(summary));
    }
    return summary.docs_processed + summary.docs_skipped > 0 ? kOk : kFailure;
}

void print_result(const queryphase::QueryResult& r, const curate::KnowledgeStore& store, const std::string& format,
                  bool verbose) {
    if (format == "text") {
        std::cout << queryphase::to_text(r, store);
    } else {
        print_json(queryphase::to_json(r, store, verbose));
    }
    std::cout.flush();
}

int cmd_query(const Options& o) {
    auto cfg = resolve_config(o);
    auto rt = Runtime::from_config(cfg);
    auto store = open_existing_store(cfg);
    auto level = *queryphase::parse_level(cfg.level);
    auto engine = cfg.engine();

    if (!o.interactive) {
        if (trim(o.query).empty()) throw ConfigError("query text is required unless --interactive is given");
        auto r = queryphase::run_query(o.query, level, store, *rt->provider, rt->engine_inputs(), engine);
        print_result(r, store, cfg.format, o.verbose);
        return kOk;
    }

    const bool tty = isatty(STDIN_FILENO);
    std::string line;
    while (true) {
        if (tty) std::cerr << "[" << queryphase::to_string(level) << "]> " << std::flush;
        if (!std::getline(std::cin, line)) break;
        auto text = std::string(trim(line));
        if (text.empty()) continue;
        if (text == ":quit" || text == ":q") break;
        if (text.rfind(":level", 0) == 0) {
            auto name = std::string(trim(std::string_view(text).substr(6)));
            if (auto l = queryphase::parse_level(name)) {
                level = *l;
                std::cerr << "level " << queryphase::to_string(level) << "\n";
            } else {
                std::cerr << "error: level must be one of " << queryphase::kLevelNames << "\n";
            }
            continue;
        }
        if (text.front() == ':') {
            std::cerr << "error: unknown command '" << text << "' (:level L, :quit)\n";
            continue;
        }
        try {
            auto r = queryphase::run_query(text, level, store, *rt->provider, rt->engine_inputs(), engine);
            print_result(r, store, cfg.format, o.verbose);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
        }
    }
    return kOk;
}

int cmd_stats(const Options& o) {
    auto cfg = resolve_config(o);
    auto store = open_existing_store(cfg);
    auto dist = kg::type_distribution(store.graph, o.top);
    if (cfg.format == "text") {
        std::size_t width = 4;
        for (const auto& [t, c] : dist.node_counts) width = std::max(width, t.size());
        for (const auto& [t, c] : dist.edge_counts) width = std::max(width, t.size());
        auto table = [&](const char* title, const auto& rows) {
            std::cout << title << "\n";
            for (const auto& [t, c] : rows) std::cout << "  " << t << std::string(width - t.size() + 2, ' ') << c << "\n";
        };
        table("node types", dist.node_counts);
        table("edge types", dist.edge_counts);
        std::cout << "total nodes " << dist.total_nodes << ", total edges " << dist.total_edges << "\n";
        return kOk;
    }
    auto rows = [](const auto& v) {
        json a = json::array();
        for (const auto& [t, c] : v) a.push_back({{"type", t}, {"count", c}});
        return a;
    };
    print_json({{"node_counts", rows(dist.node_counts)},
                {"edge_counts", rows(dist.edge_counts)},
                {"total_nodes", dist.total_nodes},
                {"total_edges", dist.total_edges}});
    return kOk;
}

int cmd_export(const Options& o) {
    auto cfg = resolve_config(o);
    auto store = open_existing_store(cfg);
    write_file_atomic(o.out, kg::export_cypher(store.graph));
    print_json({{"out", o.out}, {"nodes", store.graph.nodes().size()}, {"edges", store.graph.edges().size()}});
    return kOk;
}

int cmd_serve(const Options& o) {
    auto cfg = resolve_config(o);
    auto addr = parse_listen(cfg.listen);
    auto svc = service::Service::open(cfg);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    int port = svc->bind(addr.host, addr.port);
    spdlog::info("listening on {}:{}", addr.host, port);
    std::cerr << "listening on " << addr.host << ":" << port << std::endl;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        svc->stop();
    });
    svc->run();
    // run() also returns when the listener fails; wake the waiter either way.
    kill(getpid(), SIGTERM);
    waiter.join();
    svc->wait_idle();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("kgrag"));

    CLI::App app{"Knowledge-graph hybrid retrieval: curate a corpus, then query it."};
    app.require_subcommand(1);
    Options o;

    app.add_option("--config", o.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off");
    const std::vector<std::pair<std::string, std::string>> passthrough = {
        {"--store", "store"},         {"--ontology", "ontology"},       {"--vocab", "vocab"},
        {"--templates", "templates"}, {"--kb", "kb"},                   {"--provider", "provider"},
        {"--mock-dictionary", "mock_dictionary"}, {"--mock-script", "mock_script"},
        {"--embedder", "embedder"},   {"--level", "level"},             {"-n,--expansions", "n"},
        {"-k,--top-k", "k"},              {"--concurrency", "concurrency"}, {"--format", "format"},
        {"--listen", "listen"},       {"--chunk-size", "chunk_size"},   {"--chunk-overlap", "chunk_overlap"}};
    for (const auto& [flag, key] : passthrough) {
        app.add_option_function<std::string>(
            flag, [&o, key = key](const std::string& v) { o.overrides[key] = v; }, "overrides config key '" + key + "'");
    }
    app.fallthrough();

    auto* curate_cmd = app.add_subcommand("curate", "ingest a manifest into the store");
    curate_cmd->add_option("--manifest", o.manifest, "JSON-lines manifest")->required();

    auto* query_cmd = app.add_subcommand("query", "answer a question from the store");
    query_cmd->add_option("question", o.query, "question text");
    query_cmd->add_flag("--interactive", o.interactive, "read questions from stdin; :level L switches level, :quit exits");
    query_cmd->add_flag("--verbose", o.verbose, "include per-query drafts in JSON output");

    auto* stats_cmd = app.add_subcommand("stats", "node and edge type distribution");
    stats_cmd->add_option("--top", o.top, "keep the N most frequent types (0 keeps all)");

    auto* export_cmd = app.add_subcommand("export-cypher", "write the graph as a Cypher script");
    export_cmd->add_option("--out", o.out, "output file")->required();

    auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    auto level = spdlog::level::from_str(o.log_level);
    if (level == spdlog::level::off && o.log_level != "off") {
        std::cerr << "error: unknown log level '" << o.log_level << "'\n";
        return kConfigError;
    }
    spdlog::set_level(level);

    try {
        if (curate_cmd->parsed()) return cmd_curate(o);
        if (query_cmd->parsed()) return cmd_query(o);
        if (stats_cmd->parsed()) return cmd_stats(o);
        if (export_cmd->parsed()) return cmd_export(o);
        if (serve_cmd->parsed()) return cmd_serve(o);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const queryphase::MissingStoreError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
