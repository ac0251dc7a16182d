#include "kgrag/kg.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

namespace kgrag::kg {

namespace {

constexpr std::string_view kMagicFamily = "kgraph ";
constexpr std::string_view kMagic = "kgraph v1\n";

const std::vector<std::string> kNoEdges;

void insert_sorted(std::vector<std::string>& v, const std::string& id) {
    v.insert(std::lower_bound(v.begin(), v.end(), id), id);
}

}  // namespace

void PropertyGraph::add_node(KGNode node) {
    if (nodes_.count(node.node_id)) throw Error("duplicate node id '" + node.node_id + "'");
    auto id = node.node_id;
    nodes_.emplace(std::move(id), std::move(node));
}

void PropertyGraph::add_edge(KGEdge edge) {
    if (edges_.count(edge.edge_id)) throw Error("duplicate edge id '" + edge.edge_id + "'");
    if (!nodes_.count(edge.source_node_id)) throw Error("edge source '" + edge.source_node_id + "' does not exist");
    if (!nodes_.count(edge.target_node_id)) throw Error("edge target '" + edge.target_node_id + "' does not exist");
    insert_sorted(out_[edge.source_node_id], edge.edge_id);
    insert_sorted(in_[edge.target_node_id], edge.edge_id);
    auto id = edge.edge_id;
    edges_.emplace(std::move(id), std::move(edge));
}

const KGNode* PropertyGraph::node(std::string_view id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
}

const KGEdge* PropertyGraph::edge(std::string_view id) const {
    auto it = edges_.find(id);
    return it == edges_.end() ? nullptr : &it->second;
}

KGNode* PropertyGraph::mutable_node(std::string_view id) {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
}

KGEdge* PropertyGraph::mutable_edge(std::string_view id) {
    auto it = edges_.find(id);
    return it == edges_.end() ? nullptr : &it->second;
}

const std::vector<std::string>& PropertyGraph::out_edges(std::string_view node_id) const {
    auto it = out_.find(node_id);
    return it == out_.end() ? kNoEdges : it->second;
}

const std::vector<std::string>& PropertyGraph::in_edges(std::string_view node_id) const {
    auto it = in_.find(node_id);
    return it == in_.end() ? kNoEdges : it->second;
}

void PropertyGraph::add_conflict(TypeConflict c) {
    if (std::find(conflicts_.begin(), conflicts_.end(), c) == conflicts_.end()) conflicts_.push_back(std::move(c));
}

bool type_is_subtype(std::string_view a, std::string_view b) {
    if (b.size() > a.size() || a.substr(0, b.size()) != b) return false;
    return a.size() == b.size() || a[b.size()] == '_';
}

std::string resolution_key(std::string_view name, std::string_view type, const std::optional<std::string>& qid) {
    if (qid && !qid->empty()) return "qid:" + *qid;
    auto us = type.find('_');
    return "name:" + casefold_nfc(trim(name)) + "/" + std::string(type.substr(0, us));
}

std::string node_id_for(const std::string& key) { return stable_id("n", key); }

std::string edge_id_for(std::string_view source, std::string_view target, std::string_view type, std::string_view chunk_id) {
    std::string key;
    for (auto part : {source, target, type, chunk_id}) {
        key.append(part);
        key.push_back('\0');
    }
    return stable_id("e", key);
}

std::string_view to_string(DisambiguationMethod m) {
    switch (m) {
        case DisambiguationMethod::rerank: return "rerank";
        case DisambiguationMethod::vector_top1: return "vector_top1";
        case DisambiguationMethod::none: return "none";
    }
    return "none";
}

namespace {

void append_attributes(std::vector<AttrValue>& into, const std::vector<PayloadAttribute>& attrs, const ProvenanceSeed& seed) {
    for (const auto& a : attrs) {
        AttrValue v{a.key, a.value, a.value_type, seed.doc_id, seed.observed_at};
        bool dup = std::any_of(into.begin(), into.end(), [&](const AttrValue& x) {
            return x.key == v.key && x.value == v.value && x.source_doc_id == v.source_doc_id;
        });
        if (!dup) into.push_back(std::move(v));
    }
}

void append_provenance(std::vector<ProvenanceRecord>& into, ProvenanceRecord rec) {
    if (std::find(into.begin(), into.end(), rec) == into.end()) into.push_back(std::move(rec));
}

}  // namespace

MergeReport merge_subgraph(PropertyGraph& graph, const ExtractionPayload& payload, const ProvenanceSeed& seed,
                           const std::map<std::string, Disambiguation>& disambiguation) {
    MergeReport report;
    std::map<std::string, std::string> local_to_node;
    for (const auto& pn : payload.nodes) {
        std::optional<std::string> qid;
        std::string name = std::string(trim(pn.mention));
        if (auto it = disambiguation.find(pn.local_id); it != disambiguation.end() && it->second.qid) {
            qid = it->second.qid;
            if (!it->second.label.empty()) name = it->second.label;
        }
        auto id = node_id_for(resolution_key(name, pn.type, qid));
        local_to_node[pn.local_id] = id;
        ProvenanceRecord prov{seed.doc_id, seed.chunk_id, seed.extraction_run_id, pn.mention};

        if (auto* existing = graph.mutable_node(id)) {
            ++report.nodes_merged;
            existing->aliases.insert(pn.mention);
            if (existing->type != pn.type) {
                if (type_is_subtype(pn.type, existing->type)) {
                    existing->type = pn.type;
                } else if (!type_is_subtype(existing->type, pn.type)) {
                    graph.add_conflict({id, existing->type, pn.type, seed.chunk_id});
                    ++report.conflicts;
                }
            }
            append_attributes(existing->attributes, pn.attributes, seed);
            append_provenance(existing->provenance, std::move(prov));
            continue;
        }
        KGNode node;
        node.node_id = id;
        node.type = pn.type;
        node.name = name;
        node.aliases = {pn.mention};
        node.qid = qid;
        append_attributes(node.attributes, pn.attributes, seed);
        node.provenance.push_back(std::move(prov));
        graph.add_node(std::move(node));
        ++report.nodes_created;
    }

    for (const auto& pe : payload.edges) {
        auto s = local_to_node.find(pe.source_local_id);
        auto t = local_to_node.find(pe.target_local_id);
        if (s == local_to_node.end() || t == local_to_node.end()) {
            throw Error("payload edge references unknown local_id; validate payloads before merging");
        }
        auto id = edge_id_for(s->second, t->second, pe.type, seed.chunk_id);
        if (graph.edge(id)) {
            ++report.edges_skipped;
            continue;
        }
        KGEdge edge;
        edge.edge_id = id;
        edge.source_node_id = s->second;
        edge.target_node_id = t->second;
        edge.type = pe.type;
        append_attributes(edge.attributes, pe.attributes, seed);
        std::string mention = graph.node(s->second)->name + " " + pe.type + " " + graph.node(t->second)->name;
        edge.provenance.push_back({seed.doc_id, seed.chunk_id, seed.extraction_run_id, mention});
        graph.add_edge(std::move(edge));
        ++report.edges_created;
    }
    return report;
}

TypeDistribution type_distribution(const PropertyGraph& graph, std::size_t top_n) {
    auto rank = [top_n](const std::map<std::string, std::size_t>& counts) {
        std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
        std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        if (top_n && v.size() > top_n) v.resize(top_n);
        return v;
    };
    std::map<std::string, std::size_t> nodes, edges;
    for (const auto& [id, n] : graph.nodes()) ++nodes[n.type];
    for (const auto& [id, e] : graph.edges()) ++edges[e.type];
    return {rank(nodes), rank(edges), graph.nodes().size(), graph.edges().size()};
}

namespace {

std::string cypher_string(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        switch (c) {
            case '\'': out += "\\'"; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out + "'";
}

std::string cypher_key(std::string_view k) {
    bool plain = !k.empty() && !std::isdigit(static_cast<unsigned char>(k[0])) &&
                 std::all_of(k.begin(), k.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
    if (plain) return std::string(k);
    std::string out = "`";
    for (char c : k) {
        if (c == '`') out += '`';
        out += c;
    }
    return out + "`";
}

std::string cypher_value(const AttrValue& a) {
    if (a.value_type == ValueType::number) {
        char* end = nullptr;
        std::strtod(a.value.c_str(), &end);
        if (!a.value.empty() && *end == '\0') return a.value;
    }
    return cypher_string(a.value);
}

std::string flattened_props(const std::vector<AttrValue>& attrs) {
    std::string out;
    std::map<std::string, std::size_t> seen;
    for (const auto& a : attrs) {
        out += ", " + cypher_key(a.key + "__" + std::to_string(seen[a.key]++)) + ": " + cypher_value(a);
    }
    return out;
}

}  // namespace

std::string export_cypher(const PropertyGraph& graph) {
    std::string out;
    for (const auto& [id, n] : graph.nodes()) {
        out += "CREATE (:" + cypher_key(n.type) + " {node_id: " + cypher_string(id) + ", name: " + cypher_string(n.name);
        if (n.qid) out += ", qid: " + cypher_string(*n.qid);
        out += flattened_props(n.attributes) + "});\n";
    }
    for (const auto& [id, e] : graph.edges()) {
        out += "MATCH (a {node_id: " + cypher_string(e.source_node_id) + "}), (b {node_id: " +
               cypher_string(e.target_node_id) + "}) CREATE (a)-[:" + cypher_key(e.type) +
               " {edge_id: " + cypher_string(id) + flattened_props(e.attributes) + "}]->(b);\n";
    }
    return out;
}

namespace {

void write_attrs(BinaryWriter& w, const std::vector<AttrValue>& attrs) {
    w.u32(static_cast<std::uint32_t>(attrs.size()));
    for (const auto& a : attrs) {
        w.str(a.key);
        w.str(a.value);
        w.u32(static_cast<std::uint32_t>(a.value_type));
        w.str(a.source_doc_id);
        w.u32(a.observed_at ? 1 : 0);
        if (a.observed_at) w.str(*a.observed_at);
    }
}

void write_prov(BinaryWriter& w, const std::vector<ProvenanceRecord>& prov) {
    w.u32(static_cast<std::uint32_t>(prov.size()));
    for (const auto& p : prov) {
        w.str(p.doc_id);
        w.str(p.chunk_id);
        w.str(p.extraction_run_id);
        w.str(p.mention);
    }
}

std::vector<AttrValue> read_attrs(BinaryReader& r) {
    std::vector<AttrValue> out(r.u32());
    for (auto& a : out) {
        a.key = r.str();
        a.value = r.str();
        auto t = r.u32();
        if (t > 2) throw IntegrityError("bad value_type in snapshot");
        a.value_type = static_cast<ValueType>(t);
        a.source_doc_id = r.str();
        if (r.u32()) a.observed_at = r.str();
    }
    return out;
}

std::vector<ProvenanceRecord> read_prov(BinaryReader& r) {
    std::vector<ProvenanceRecord> out(r.u32());
    for (auto& p : out) {
        p.doc_id = r.str();
        p.chunk_id = r.str();
        p.extraction_run_id = r.str();
        p.mention = r.str();
    }
    return out;
}

}  // namespace

std::string serialize_graph(const PropertyGraph& graph) {
    BinaryWriter w;
    w.raw(kMagic);
    w.str(graph.schema_version());
    w.u64(graph.nodes().size());
    for (const auto& [id, n] : graph.nodes()) {
        w.str(id);
        w.str(n.type);
        w.str(n.name);
        w.u32(static_cast<std::uint32_t>(n.aliases.size()));
        for (const auto& a : n.aliases) w.str(a);
        w.u32(n.qid ? 1 : 0);
        if (n.qid) w.str(*n.qid);
        write_attrs(w, n.attributes);
        write_prov(w, n.provenance);
    }
    w.u64(graph.edges().size());
    for (const auto& [id, e] : graph.edges()) {
        w.str(id);
        w.str(e.source_node_id);
        w.str(e.target_node_id);
        w.str(e.type);
        write_attrs(w, e.attributes);
        write_prov(w, e.provenance);
    }
    w.u64(graph.conflicts().size());
    for (const auto& c : graph.conflicts()) {
        w.str(c.node_id);
        w.str(c.kept_type);
        w.str(c.rejected_type);
        w.str(c.chunk_id);
    }
    return w.finish_with_crc();
}

PropertyGraph deserialize_graph(std::string_view bytes) {
    return parse_snapshot(bytes, kMagicFamily, kMagic, [](BinaryReader& r) {
        PropertyGraph g(r.str());
        auto n_nodes = r.u64();
        for (std::uint64_t i = 0; i < n_nodes; ++i) {
            KGNode n;
            n.node_id = r.str();
            n.type = r.str();
            n.name = r.str();
            auto n_alias = r.u32();
            for (std::uint32_t a = 0; a < n_alias; ++a) n.aliases.insert(r.str());
            if (r.u32()) n.qid = r.str();
            n.attributes = read_attrs(r);
            n.provenance = read_prov(r);
            g.add_node(std::move(n));
        }
        auto n_edges = r.u64();
        for (std::uint64_t i = 0; i < n_edges; ++i) {
            KGEdge e;
            e.edge_id = r.str();
            e.source_node_id = r.str();
            e.target_node_id = r.str();
            e.type = r.str();
            e.attributes = read_attrs(r);
            e.provenance = read_prov(r);
            try {
                g.add_edge(std::move(e));
            } catch (const IntegrityError&) {
                throw;
            } catch (const Error& err) {
                throw IntegrityError(std::string("inconsistent snapshot: ") + err.what());
            }
        }
        auto n_conflicts = r.u64();
        for (std::uint64_t i = 0; i < n_conflicts; ++i) {
            TypeConflict c;
            c.node_id = r.str();
            c.kept_type = r.str();
            c.rejected_type = r.str();
            c.chunk_id = r.str();
            g.add_conflict(std::move(c));
        }
        return g;
    });
}

void persist_graph(const PropertyGraph& graph, const std::string& path) { write_file_atomic(path, serialize_graph(graph)); }

PropertyGraph load_graph(const std::string& path) { return deserialize_graph(read_file(path)); }

std::vector<std::string> audit(const PropertyGraph& graph) {
    std::vector<std::string> problems;
    for (const auto& [id, e] : graph.edges()) {
        if (!graph.node(e.source_node_id)) problems.push_back("edge " + id + " has missing source " + e.source_node_id);
        if (!graph.node(e.target_node_id)) problems.push_back("edge " + id + " has missing target " + e.target_node_id);
        const auto& out = graph.out_edges(e.source_node_id);
        if (!std::binary_search(out.begin(), out.end(), id)) problems.push_back("edge " + id + " missing from out-adjacency");
        const auto& in = graph.in_edges(e.target_node_id);
        if (!std::binary_search(in.begin(), in.end(), id)) problems.push_back("edge " + id + " missing from in-adjacency");
    }
    for (const auto& [id, n] : graph.nodes()) {
        for (const auto& eid : graph.out_edges(id)) {
            const auto* e = graph.edge(eid);
            if (!e || e->source_node_id != id) problems.push_back("out-adjacency of " + id + " lists foreign edge " + eid);
        }
        for (const auto& eid : graph.in_edges(id)) {
            const auto* e = graph.edge(eid);
            if (!e || e->target_node_id != id) problems.push_back("in-adjacency of " + id + " lists foreign edge " + eid);
        }
        if (n.provenance.empty()) problems.push_back("node " + id + " has no provenance");
        for (const auto& a : n.attributes) {
            if (a.value_type == ValueType::timestamp && !is_iso8601(a.value)) {
                problems.push_back("node " + id + " attribute " + a.key + " is not ISO-8601");
            }
        }
    }
    return problems;
}

Subgraph neighborhood(const PropertyGraph& graph, const std::vector<std::string>& centers, std::size_t hops,
                      std::size_t node_cap) {
    Subgraph out;
    std::set<std::string> frontier;
    for (const auto& c : centers) {
        if (graph.node(c)) frontier.insert(c);
    }
    for (const auto& c : frontier) {
        if (out.node_ids.size() >= node_cap) break;
        out.node_ids.insert(c);
    }
    frontier = out.node_ids;
    for (std::size_t h = 0; h < hops && !frontier.empty(); ++h) {
        std::set<std::string> discovered;
        for (const auto& n : frontier) {
            for (const auto* adj : {&graph.out_edges(n), &graph.in_edges(n)}) {
                for (const auto& eid : *adj) {
                    const auto& e = *graph.edge(eid);
                    const auto& other = e.source_node_id == n ? e.target_node_id : e.source_node_id;
                    if (!out.node_ids.count(other)) discovered.insert(other);
                }
            }
        }
        std::set<std::string> next;
        for (const auto& d : discovered) {
            if (out.node_ids.size() >= node_cap) break;
            out.node_ids.insert(d);
            next.insert(d);
        }
        for (const auto& n : frontier) {
            for (const auto* adj : {&graph.out_edges(n), &graph.in_edges(n)}) {
                for (const auto& eid : *adj) {
                    const auto& e = *graph.edge(eid);
                    const auto& other = e.source_node_id == n ? e.target_node_id : e.source_node_id;
                    if (out.node_ids.count(other)) out.edge_ids.insert(eid);
                }
            }
        }
        frontier = std::move(next);
    }
    return out;
}

const AttrValue* newest_attribute(const std::vector<AttrValue>& attrs, std::string_view key) {
    const AttrValue* best = nullptr;
    for (const auto& a : attrs) {
        if (a.key != key) continue;
        // ISO-8601 strings in one format order lexicographically; absent sorts oldest.
        if (!best || a.observed_at.value_or("") >= best->observed_at.value_or("")) best = &a;
    }
    return best;
}

}  // namespace kgrag::kg
