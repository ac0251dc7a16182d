#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kgrag/common.hpp"
#include "kgrag/payload.hpp"

namespace kgrag::ontology {

struct NodeTypeDef {
    std::vector<std::string> path;  // root -> leaf
    std::string canonical_name;     // path joined by "_"
    std::string description;

    bool operator==(const NodeTypeDef&) const = default;
};

struct EdgeTypeDef {
    std::string name;
    std::set<std::string> domain;
    std::set<std::string> range;
    std::string description;

    bool operator==(const EdgeTypeDef&) const = default;
};

class UnknownTypeError : public Error {
public:
    explicit UnknownTypeError(const std::string& name) : Error("unknown type '" + name + "'"), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

/// Hierarchical node types plus flat, typed edges. Built through add_node /
/// add_edge or parse_ontology; immutable afterwards by convention.
class OntologySchema {
public:
    explicit OntologySchema(std::string version = {}) : version_(std::move(version)) {}

    /// Every proper prefix of the path must already be declared.
    void add_node(const std::string& canonical_name, std::string description = {});
    /// Domain and range must be non-empty and name declared node types.
    void add_edge(EdgeTypeDef edge);

    const std::string& version() const noexcept { return version_; }
    const std::vector<NodeTypeDef>& node_types() const noexcept { return nodes_; }
    const std::vector<EdgeTypeDef>& edge_types() const noexcept { return edges_; }

    const NodeTypeDef* node(std::string_view canonical_name) const;
    const EdgeTypeDef* edge(std::string_view name) const;
    bool has_node(std::string_view n) const { return node(n) != nullptr; }
    bool has_edge(std::string_view n) const { return edge(n) != nullptr; }

    /// True iff b's path is a prefix of a's path. Throws UnknownTypeError.
    bool is_subtype(std::string_view a, std::string_view b) const;
    /// Path length of a declared type. Throws UnknownTypeError.
    std::size_t depth(std::string_view canonical_name) const;

    bool operator==(const OntologySchema& o) const {
        return version_ == o.version_ && nodes_ == o.nodes_ && edges_ == o.edges_;
    }

private:
    const NodeTypeDef& require(std::string_view name) const;

    std::string version_;
    std::vector<NodeTypeDef> nodes_;
    std::vector<EdgeTypeDef> edges_;
    std::map<std::string, std::size_t, std::less<>> node_index_;
    std::map<std::string, std::size_t, std::less<>> edge_index_;
};

/// Splits a canonical name into its path segments; throws Error on empty segments
/// or characters outside [A-Za-z0-9].
std::vector<std::string> split_canonical(std::string_view canonical_name);
std::string root_segment(std::string_view canonical_name);

/// Parses the `ontology v1` format. Declarations may appear in any order.
OntologySchema parse_ontology(std::string_view document);
std::string serialize_ontology(const OntologySchema& schema);

inline bool is_subtype(std::string_view a, std::string_view b, const OntologySchema& schema) {
    return schema.is_subtype(a, b);
}

enum class ViolationKind { unknown_node_type, unknown_edge_type, endpoint_type, dangling_endpoint, structural };

std::string_view to_string(ViolationKind k);

struct Violation {
    ViolationKind kind;
    bool on_node = false;    // otherwise on an edge
    std::size_t index = 0;   // position in payload.nodes / payload.edges
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }
    std::size_t count(ViolationKind k) const;
};

/// Each defect is reported once: an edge touching a dangling endpoint or an
/// unknown-typed node is not additionally checked against domain/range, and an
/// edge of unknown type is not checked against domain/range at all.
ValidationReport validate_subgraph(const ExtractionPayload& g, const OntologySchema& schema);

/// Deterministic prompt listing of node types (sorted by name) and edge
/// signatures; at most max_types of each, with a note when truncated.
std::string render_schema_prompt(const OntologySchema& schema, std::size_t max_types);

}  // namespace kgrag::ontology
