#include "kgrag/ontology.hpp"

#include <algorithm>
#include <map>

namespace kgrag {

std::string_view to_string(ValueType t) {
    switch (t) {
        case ValueType::string: return "string";
        case ValueType::number: return "number";
        case ValueType::timestamp: return "timestamp";
    }
    return "string";
}

ValueType parse_value_type(std::string_view s) {
    if (s == "string") return ValueType::string;
    if (s == "number") return ValueType::number;
    if (s == "timestamp") return ValueType::timestamp;
    throw Error("unknown value_type '" + std::string(s) + "'");
}

}  // namespace kgrag

namespace kgrag::ontology {

std::vector<std::string> split_canonical(std::string_view canonical_name) {
    if (canonical_name.empty()) throw Error("empty type name");
    auto segs = split(canonical_name, '_');
    for (const auto& s : segs) {
        if (s.empty()) throw Error("type name '" + std::string(canonical_name) + "' has an empty segment");
        for (char c : s) {
            if (!std::isalnum(static_cast<unsigned char>(c))) {
                throw Error("type name '" + std::string(canonical_name) + "' contains '" + std::string(1, c) + "'");
            }
        }
    }
    return segs;
}

std::string root_segment(std::string_view canonical_name) {
    auto us = canonical_name.find('_');
    return std::string(canonical_name.substr(0, us));
}

void OntologySchema::add_node(const std::string& canonical_name, std::string description) {
    auto path = split_canonical(canonical_name);
    if (node_index_.count(canonical_name)) throw Error("duplicate node type '" + canonical_name + "'");
    std::string prefix;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (i) prefix += '_';
        prefix += path[i];
        if (!node_index_.count(prefix)) {
            throw Error("node type '" + canonical_name + "' is missing ancestor '" + prefix + "'");
        }
    }
    node_index_.emplace(canonical_name, nodes_.size());
    nodes_.push_back({std::move(path), canonical_name, std::move(description)});
}

void OntologySchema::add_edge(EdgeTypeDef edge) {
    split_canonical(edge.name);
    if (edge_index_.count(edge.name)) throw Error("duplicate edge type '" + edge.name + "'");
    if (edge.domain.empty()) throw Error("edge type '" + edge.name + "' has an empty domain");
    if (edge.range.empty()) throw Error("edge type '" + edge.name + "' has an empty range");
    for (const auto* side : {&edge.domain, &edge.range}) {
        for (const auto& t : *side) {
            if (!has_node(t)) throw UnknownTypeError(t);
        }
    }
    edge_index_.emplace(edge.name, edges_.size());
    edges_.push_back(std::move(edge));
}

const NodeTypeDef* OntologySchema::node(std::string_view canonical_name) const {
    auto it = node_index_.find(canonical_name);
    return it == node_index_.end() ? nullptr : &nodes_[it->second];
}

const EdgeTypeDef* OntologySchema::edge(std::string_view name) const {
    auto it = edge_index_.find(name);
    return it == edge_index_.end() ? nullptr : &edges_[it->second];
}

const NodeTypeDef& OntologySchema::require(std::string_view name) const {
    const auto* n = node(name);
    if (!n) throw UnknownTypeError(std::string(name));
    return *n;
}

bool OntologySchema::is_subtype(std::string_view a, std::string_view b) const {
    const auto& pa = require(a).path;
    const auto& pb = require(b).path;
    return pb.size() <= pa.size() && std::equal(pb.begin(), pb.end(), pa.begin());
}

std::size_t OntologySchema::depth(std::string_view canonical_name) const { return require(canonical_name).path.size(); }

namespace {

struct PendingEdge {
    EdgeTypeDef def;
    std::size_t line;
};

std::set<std::string> parse_type_list(std::string_view s, std::string_view key, std::size_t line_no) {
    auto t = trim(s);
    if (t.substr(0, key.size()) != key || t.size() <= key.size() || t[key.size()] != '=') {
        throw FormatError("expected '" + std::string(key) + "=<types>'", line_no);
    }
    std::set<std::string> out;
    for (const auto& name : split(t.substr(key.size() + 1), ',')) {
        auto n = trim(name);
        if (!n.empty()) out.emplace(n);
    }
    return out;
}

}  // namespace

OntologySchema parse_ontology(std::string_view document) {
    auto lines = split(document, '\n');
    std::size_t first = 0;
    while (first < lines.size() && trim(lines[first]).empty()) ++first;
    if (first == lines.size()) throw FormatError("empty ontology file", 1);
    auto header = trim(lines[first]);
    constexpr std::string_view kHeader = "ontology v1";
    if (header.substr(0, kHeader.size()) != kHeader ||
        (header.size() > kHeader.size() && header[kHeader.size()] != ' ')) {
        throw FormatError("expected header 'ontology v1 <version>'", first + 1);
    }
    OntologySchema schema(std::string(trim(header.substr(kHeader.size()))));

    std::vector<std::pair<std::string, std::string>> node_decls;
    std::map<std::string, std::size_t> node_lines;
    std::vector<PendingEdge> edges;
    for (std::size_t i = first + 1; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        auto line = trim(lines[i]);
        if (line.empty() || line.front() == '#') continue;
        if (line.size() < 2 || line[1] != ' ' || (line[0] != 'N' && line[0] != 'E')) {
            throw FormatError("expected a 'N' or 'E' declaration", line_no);
        }
        auto fields = split(line.substr(2), '|');
        auto name = std::string(trim(fields[0]));
        try {
            split_canonical(name);
        } catch (const Error& e) {
            throw FormatError(e.what(), line_no);
        }
        if (line[0] == 'N') {
            if (fields.size() > 2) throw FormatError("node line has too many '|' fields", line_no);
            if (node_lines.count(name)) throw FormatError("duplicate node type '" + name + "'", line_no);
            node_lines[name] = line_no;
            node_decls.emplace_back(name, fields.size() > 1 ? std::string(trim(fields[1])) : "");
        } else {
            if (fields.size() < 3) throw FormatError("edge line needs domain= and range= fields", line_no);
            EdgeTypeDef e;
            e.name = name;
            e.domain = parse_type_list(fields[1], "domain", line_no);
            e.range = parse_type_list(fields[2], "range", line_no);
            std::vector<std::string> rest(fields.begin() + 3, fields.end());
            e.description = std::string(trim(join(rest, "|")));
            edges.push_back({std::move(e), line_no});
        }
    }
    if (node_decls.empty()) throw FormatError("ontology declares no node types", lines.size());

    // Ancestors may be declared after descendants. Declaration order is kept
    // unless that happens, in which case shallow types go first.
    bool forward_refs = false;
    for (const auto& [name, desc] : node_decls) {
        auto us = name.rfind('_');
        if (us != std::string::npos && node_lines.count(name.substr(0, us)) &&
            node_lines[name.substr(0, us)] > node_lines[name]) {
            forward_refs = true;
        }
    }
    if (forward_refs) {
        std::stable_sort(node_decls.begin(), node_decls.end(), [](const auto& a, const auto& b) {
            return std::count(a.first.begin(), a.first.end(), '_') < std::count(b.first.begin(), b.first.end(), '_');
        });
    }
    for (auto& [name, desc] : node_decls) {
        try {
            schema.add_node(name, desc);
        } catch (const Error& e) {
            throw FormatError(e.what(), node_lines[name]);
        }
    }
    for (auto& pe : edges) {
        try {
            schema.add_edge(std::move(pe.def));
        } catch (const UnknownTypeError& e) {
            throw FormatError("edge references unknown type '" + e.name() + "'", pe.line);
        } catch (const Error& e) {
            throw FormatError(e.what(), pe.line);
        }
    }
    return schema;
}

std::string serialize_ontology(const OntologySchema& schema) {
    std::string out = "ontology v1";
    if (!schema.version().empty()) out += " " + schema.version();
    out += '\n';
    for (const auto& n : schema.node_types()) {
        out += "N " + n.canonical_name;
        if (!n.description.empty()) out += " | " + n.description;
        out += '\n';
    }
    for (const auto& e : schema.edge_types()) {
        std::vector<std::string> d(e.domain.begin(), e.domain.end()), r(e.range.begin(), e.range.end());
        out += "E " + e.name + " | domain=" + join(d, ",") + " | range=" + join(r, ",");
        if (!e.description.empty()) out += " | " + e.description;
        out += '\n';
    }
    return out;
}

std::string_view to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::unknown_node_type: return "unknown_node_type";
        case ViolationKind::unknown_edge_type: return "unknown_edge_type";
        case ViolationKind::endpoint_type: return "endpoint_type";
        case ViolationKind::dangling_endpoint: return "dangling_endpoint";
        case ViolationKind::structural: return "structural";
    }
    return "structural";
}

std::size_t ValidationReport::count(ViolationKind k) const {
    return static_cast<std::size_t>(
        std::count_if(violations.begin(), violations.end(), [k](const Violation& v) { return v.kind == k; }));
}

ValidationReport validate_subgraph(const ExtractionPayload& g, const OntologySchema& schema) {
    ValidationReport report;
    std::map<std::string, const PayloadNode*> by_id;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        by_id.emplace(n.local_id, &n);
        if (!schema.has_node(n.type)) {
            report.violations.push_back(
                {ViolationKind::unknown_node_type, true, i, "node '" + n.local_id + "' has unknown type '" + n.type + "'"});
        }
    }
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const auto& e = g.edges[i];
        const auto* src = by_id.count(e.source_local_id) ? by_id[e.source_local_id] : nullptr;
        const auto* tgt = by_id.count(e.target_local_id) ? by_id[e.target_local_id] : nullptr;
        std::vector<std::string> missing;
        if (!src) missing.push_back(e.source_local_id);
        if (!tgt && e.target_local_id != e.source_local_id) missing.push_back(e.target_local_id);
        if (!missing.empty()) {
            report.violations.push_back({ViolationKind::dangling_endpoint, false, i,
                                         "edge " + std::to_string(i) + " references missing node(s) " + join(missing, ", ")});
            continue;
        }
        const auto* def = schema.edge(e.type);
        if (!def) {
            report.violations.push_back(
                {ViolationKind::unknown_edge_type, false, i, "edge " + std::to_string(i) + " has unknown type '" + e.type + "'"});
            continue;
        }
        auto fits = [&](const PayloadNode* n, const std::set<std::string>& allowed) {
            if (!schema.has_node(n->type)) return true;  // already reported on the node
            return std::any_of(allowed.begin(), allowed.end(), [&](const std::string& t) { return schema.is_subtype(n->type, t); });
        };
        std::vector<std::string> problems;
        if (!fits(src, def->domain)) problems.push_back("source type '" + src->type + "' outside domain of " + e.type);
        if (!fits(tgt, def->range)) problems.push_back("target type '" + tgt->type + "' outside range of " + e.type);
        if (!problems.empty()) {
            report.violations.push_back({ViolationKind::endpoint_type, false, i, join(problems, "; ")});
        }
    }
    return report;
}

std::string render_schema_prompt(const OntologySchema& schema, std::size_t max_types) {
    if (max_types == 0) throw Error("max_types must be at least 1");
    std::vector<const NodeTypeDef*> nodes;
    for (const auto& n : schema.node_types()) nodes.push_back(&n);
    std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->canonical_name < b->canonical_name; });
    std::vector<const EdgeTypeDef*> edges;
    for (const auto& e : schema.edge_types()) edges.push_back(&e);
    std::sort(edges.begin(), edges.end(), [](auto* a, auto* b) { return a->name < b->name; });

    std::string out = "Node types (a name with underscores is a subtype of each of its prefixes):\n";
    for (std::size_t i = 0; i < nodes.size() && i < max_types; ++i) {
        out += "- " + nodes[i]->canonical_name;
        if (!nodes[i]->description.empty()) out += ": " + nodes[i]->description;
        out += '\n';
    }
    if (nodes.size() > max_types) {
        out += "(node type list truncated: showing " + std::to_string(max_types) + " of " + std::to_string(nodes.size()) + ")\n";
    }
    out += "Edge types (name: source types -> target types):\n";
    for (std::size_t i = 0; i < edges.size() && i < max_types; ++i) {
        const auto& e = *edges[i];
        std::vector<std::string> d(e.domain.begin(), e.domain.end()), r(e.range.begin(), e.range.end());
        out += "- " + e.name + ": " + join(d, "|") + " -> " + join(r, "|");
        if (!e.description.empty()) out += " (" + e.description + ")";
        out += '\n';
    }
    if (edges.size() > max_types) {
        out += "(edge type list truncated: showing " + std::to_string(max_types) + " of " + std::to_string(edges.size()) + ")\n";
    }
    return out;
}

}  // namespace kgrag::ontology
