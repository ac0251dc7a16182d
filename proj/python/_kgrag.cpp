#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "kgrag/graphquery.hpp"
#include "kgrag/kg.hpp"
#include "kgrag/queryphase.hpp"
#include "kgrag/runtime.hpp"
#include "kgrag/tokenizer.hpp"

namespace py = pybind11;
using namespace kgrag;
using nlohmann::json;

namespace {

tokenizer::BpeVocab vocab_from(const std::string& path) {
    return path.empty() ? tokenizer::BpeVocab::byte_level() : tokenizer::load_vocab(read_file(path));
}

/// Runtime plus an open store; JSON crosses the boundary as text.
class Engine {
public:
    Engine(const std::string& config_path, const std::map<std::string, std::string>& overrides) {
        Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
        for (const auto& [k, v] : overrides) cfg.set(k, v);
        rt_ = Runtime::from_config(cfg);
        store_ = curate::KnowledgeStore::open(cfg.store_dir);
    }

    std::string curate_manifest(const std::string& manifest_path) {
        auto manifest = ingest::parse_manifest(read_file(manifest_path));
        rt_->ensure_kb(store_);
        auto base = std::filesystem::absolute(manifest_path).parent_path().string();
        auto summary = curate::curate(store_, manifest, base, rt_->curation_inputs(), rt_->config.curation());
        store_.save();
        return curate::to_json(summary).dump();
    }

    std::string query(const std::string& q, const std::string& level_name, long n, long k, bool verbose,
                      const std::string& format) {
        auto level = queryphase::parse_level(level_name.empty() ? rt_->config.level : level_name);
        if (!level) throw ConfigError("level must be one of " + std::string(queryphase::kLevelNames));
        auto engine = rt_->config.engine();
        if (n >= 0) engine.expansions = static_cast<std::size_t>(n);
        if (k > 0) engine.k = static_cast<std::size_t>(k);
        auto r = queryphase::run_query(q, *level, store_, *rt_->provider, rt_->engine_inputs(), engine);
        if (format == "text") return queryphase::to_text(r, store_);
        return queryphase::to_json(r, store_, verbose).dump();
    }

    std::string stats(std::size_t top) const {
        auto d = kg::type_distribution(store_.graph, top);
        auto rows = [](const auto& v) {
            json a = json::array();
            for (const auto& [t, c] : v) a.push_back({{"type", t}, {"count", c}});
            return a;
        };
        return json{{"node_counts", rows(d.node_counts)},
                    {"edge_counts", rows(d.edge_counts)},
                    {"total_nodes", d.total_nodes},
                    {"total_edges", d.total_edges}}
            .dump();
    }

    std::string match(const std::string& text) const {
        auto table = graphquery::evaluate(store_.graph, graphquery::parse_query(text));
        json rows = json::array();
        for (const auto& row : table.rows) {
            json r = json::array();
            for (const auto& cell : row) r.push_back(cell ? json(*cell) : json(nullptr));
            rows.push_back(std::move(r));
        }
        return json{{"columns", table.columns}, {"rows", rows}, {"incompatible_comparisons", table.incompatible_comparisons}}
            .dump();
    }

    std::string export_cypher() const { return kg::export_cypher(store_.graph); }

private:
    std::unique_ptr<Runtime> rt_;
    curate::KnowledgeStore store_;
};

}  // namespace

PYBIND11_MODULE(_kgrag, m) {
    m.doc() = "Knowledge-graph hybrid retrieval engine";

    auto& base = py::register_exception<Error>(m, "KgragError");
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<queryphase::MissingStoreError>(m, "MissingStoreError", base.ptr());
    py::register_exception<llm::ProviderError>(m, "ProviderError", base.ptr());
    py::register_exception<graphquery::QuerySyntaxError>(m, "QuerySyntaxError", base.ptr());
    py::register_exception<graphquery::QuerySemanticError>(m, "QuerySemanticError", base.ptr());

    m.attr("__version__") = KGRAG_PY_VERSION;

    m.def(
        "tokenize",
        [](const std::string& text, const std::string& vocab_path) {
            return tokenizer::encode(text, vocab_from(vocab_path)).ids;
        },
        py::arg("text"), py::arg("vocab_path") = "", "BPE token ids of the UTF-8 bytes of `text`.");
    m.def(
        "detokenize",
        [](const std::vector<tokenizer::TokenId>& ids, const std::string& vocab_path) {
            return py::bytes(tokenizer::decode(ids, vocab_from(vocab_path)));
        },
        py::arg("ids"), py::arg("vocab_path") = "");
    m.def(
        "canonical_query", [](const std::string& text) { return graphquery::pretty_print(graphquery::parse_query(text)); },
        py::arg("text"), "Parses a graph pattern query and prints its canonical form.");

    py::class_<Engine>(m, "Engine")
        .def(py::init<const std::string&, const std::map<std::string, std::string>&>(), py::arg("config_path") = "",
             py::arg("overrides") = std::map<std::string, std::string>{})
        .def("curate", &Engine::curate_manifest, py::arg("manifest_path"), py::call_guard<py::gil_scoped_release>())
        .def("query", &Engine::query, py::arg("q"), py::arg("level") = "", py::arg("n") = -1, py::arg("k") = -1,
             py::arg("verbose") = false, py::arg("format") = "json", py::call_guard<py::gil_scoped_release>())
        .def("stats", &Engine::stats, py::arg("top") = 0)
        .def("match", &Engine::match, py::arg("query"))
        .def("export_cypher", &Engine::export_cypher);
}
