#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kgrag/common.hpp"
#include "kgrag/payload.hpp"

namespace kgrag::kg {

struct AttrValue {
    std::string key;
    std::string value;
    ValueType value_type = ValueType::string;
    std::string source_doc_id;
    std::optional<std::string> observed_at;  // ISO-8601

    bool operator==(const AttrValue&) const = default;
};

struct ProvenanceRecord {
    std::string doc_id;
    std::string chunk_id;
    std::string extraction_run_id;
    std::string mention;

    bool operator==(const ProvenanceRecord&) const = default;
};

struct KGNode {
    std::string node_id;
    std::string type;
    std::string name;
    std::set<std::string> aliases;
    std::optional<std::string> qid;
    std::vector<AttrValue> attributes;
    std::vector<ProvenanceRecord> provenance;

    bool operator==(const KGNode&) const = default;
};

struct KGEdge {
    std::string edge_id;
    std::string source_node_id;
    std::string target_node_id;
    std::string type;
    std::vector<AttrValue> attributes;
    std::vector<ProvenanceRecord> provenance;

    bool operator==(const KGEdge&) const = default;
};

/// Two mentions resolved to one node but carry incomparable types.
struct TypeConflict {
    std::string node_id;
    std::string kept_type;
    std::string rejected_type;
    std::string chunk_id;

    bool operator==(const TypeConflict&) const = default;
};

/// In-memory property graph. Not internally synchronized: the engine keeps a
/// single writer and lets readers run between writes.
class PropertyGraph {
public:
    explicit PropertyGraph(std::string schema_version = {}) : schema_version_(std::move(schema_version)) {}

    const std::string& schema_version() const noexcept { return schema_version_; }
    void set_schema_version(std::string v) { schema_version_ = std::move(v); }

    /// Throws Error on a duplicate id.
    void add_node(KGNode node);
    /// Throws Error on a duplicate id or a missing endpoint.
    void add_edge(KGEdge edge);

    const KGNode* node(std::string_view id) const;
    const KGEdge* edge(std::string_view id) const;
    KGNode* mutable_node(std::string_view id);
    KGEdge* mutable_edge(std::string_view id);

    const std::map<std::string, KGNode, std::less<>>& nodes() const noexcept { return nodes_; }
    const std::map<std::string, KGEdge, std::less<>>& edges() const noexcept { return edges_; }
    /// Edge ids in ascending order.
    const std::vector<std::string>& out_edges(std::string_view node_id) const;
    const std::vector<std::string>& in_edges(std::string_view node_id) const;

    const std::vector<TypeConflict>& conflicts() const noexcept { return conflicts_; }
    void add_conflict(TypeConflict c);

    bool operator==(const PropertyGraph& o) const {
        return schema_version_ == o.schema_version_ && nodes_ == o.nodes_ && edges_ == o.edges_ &&
               conflicts_ == o.conflicts_;
    }

    /// Test hook: lets audit tests corrupt adjacency on purpose.
    std::map<std::string, std::vector<std::string>, std::less<>>& raw_out_adjacency() { return out_; }

private:
    std::string schema_version_;
    std::map<std::string, KGNode, std::less<>> nodes_;
    std::map<std::string, KGEdge, std::less<>> edges_;
    std::map<std::string, std::vector<std::string>, std::less<>> out_;
    std::map<std::string, std::vector<std::string>, std::less<>> in_;
    std::vector<TypeConflict> conflicts_;
};

/// True iff b's segment path is a prefix of a's (names only, no schema needed).
bool type_is_subtype(std::string_view a, std::string_view b);

/// Resolution key: `qid:<qid>` when present, else `name:<casefold NFC name>/<root segment>`.
std::string resolution_key(std::string_view name, std::string_view type, const std::optional<std::string>& qid);
std::string node_id_for(const std::string& resolution_key);
std::string edge_id_for(std::string_view source, std::string_view target, std::string_view type, std::string_view chunk_id);

struct ProvenanceSeed {
    std::string doc_id;
    std::string chunk_id;
    std::string extraction_run_id;
    std::optional<std::string> observed_at;
};

enum class DisambiguationMethod { rerank, vector_top1, none };
std::string_view to_string(DisambiguationMethod m);

struct Disambiguation {
    std::optional<std::string> qid;
    std::string label;
    double score = 0;
    DisambiguationMethod method = DisambiguationMethod::none;
};

struct MergeReport {
    std::size_t nodes_created = 0;
    std::size_t nodes_merged = 0;
    std::size_t edges_created = 0;
    std::size_t edges_skipped = 0;
    std::size_t conflicts = 0;
};

/// Folds an ontology-valid payload into the graph. `disambiguation` is keyed by
/// payload local_id; a resolved qid names the node after the KB label.
MergeReport merge_subgraph(PropertyGraph& graph, const ExtractionPayload& payload, const ProvenanceSeed& seed,
                           const std::map<std::string, Disambiguation>& disambiguation = {});

struct TypeDistribution {
    std::vector<std::pair<std::string, std::size_t>> node_counts;  // count desc, name asc
    std::vector<std::pair<std::string, std::size_t>> edge_counts;
    std::size_t total_nodes = 0;
    std::size_t total_edges = 0;
};

/// top_n == 0 keeps every type.
TypeDistribution type_distribution(const PropertyGraph& graph, std::size_t top_n = 0);

std::string export_cypher(const PropertyGraph& graph);

std::string serialize_graph(const PropertyGraph& graph);
PropertyGraph deserialize_graph(std::string_view bytes);
void persist_graph(const PropertyGraph& graph, const std::string& path);
PropertyGraph load_graph(const std::string& path);

/// Referential and adjacency integrity problems; empty when consistent.
std::vector<std::string> audit(const PropertyGraph& graph);

struct Subgraph {
    std::set<std::string> node_ids;
    std::set<std::string> edge_ids;
};

/// Breadth-first neighborhood (both directions) up to `hops`, visiting nodes in
/// node-id order per layer and stopping once `node_cap` nodes are collected.
/// Edges are those traversed: incident to an expanded node with the other
/// endpoint in the result.
Subgraph neighborhood(const PropertyGraph& graph, const std::vector<std::string>& centers, std::size_t hops,
                      std::size_t node_cap);

/// Newest value for a key: latest observed_at, then latest in source order.
const AttrValue* newest_attribute(const std::vector<AttrValue>& attrs, std::string_view key);

}  // namespace kgrag::kg
