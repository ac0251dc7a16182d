#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace kgrag {

enum class ValueType { string, number, timestamp };

std::string_view to_string(ValueType t);
/// Throws Error on anything but "string", "number", "timestamp".
ValueType parse_value_type(std::string_view s);

struct PayloadAttribute {
    std::string key;
    std::string value;
    ValueType value_type = ValueType::string;

    bool operator==(const PayloadAttribute&) const = default;
};

struct PayloadNode {
    std::string local_id;
    std::string mention;  // verbatim source text
    std::string type;     // ontology canonical_name
    std::vector<PayloadAttribute> attributes;

    bool operator==(const PayloadNode&) const = default;
};

struct PayloadEdge {
    std::string source_local_id;
    std::string target_local_id;
    std::string type;  // ontology edge name
    std::vector<PayloadAttribute> attributes;

    bool operator==(const PayloadEdge&) const = default;
};

/// The attributed subgraph an LLM extracts from one chunk.
struct ExtractionPayload {
    std::vector<PayloadNode> nodes;
    std::vector<PayloadEdge> edges;

    bool empty() const noexcept { return nodes.empty() && edges.empty(); }
    bool operator==(const ExtractionPayload&) const = default;
};

}  // namespace kgrag
