#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kgrag/common.hpp"
#include "kgrag/kg.hpp"

namespace kgrag::graphquery {

// ---------------------------------------------------------------------------
// AST

struct Literal {
    enum class Kind { string, number };
    Kind kind = Kind::string;
    std::string text;  // string value
    double number = 0;

    static Literal str(std::string s) { return {Kind::string, std::move(s), 0}; }
    static Literal num(double v) { return {Kind::number, {}, v}; }
    bool operator==(const Literal&) const = default;
};

struct NodePattern {
    std::optional<std::string> var;
    std::optional<std::string> label;
    std::vector<std::pair<std::string, Literal>> properties;

    bool operator==(const NodePattern&) const = default;
};

enum class Direction { out, in, any };

struct EdgePattern {
    std::optional<std::string> var;
    std::optional<std::string> type;
    Direction direction = Direction::any;

    bool operator==(const EdgePattern&) const = default;
};

/// nodes.size() == edges.size() + 1; edges[i] joins nodes[i] and nodes[i + 1].
struct PathPattern {
    std::vector<NodePattern> nodes;
    std::vector<EdgePattern> edges;

    bool operator==(const PathPattern&) const = default;
};

struct Operand {
    bool is_property = false;
    std::string var;
    std::string key;
    Literal literal;

    bool operator==(const Operand&) const = default;
};

enum class CmpOp { eq, ne, lt, le, gt, ge, contains, starts_with };
std::string_view to_string(CmpOp op);

struct Expr {
    enum class Kind { and_, or_, not_, compare };
    Kind kind = Kind::compare;
    std::vector<Expr> children;  // and/or: 2, not: 1
    Operand lhs;
    CmpOp op = CmpOp::eq;
    Operand rhs;

    bool operator==(const Expr& o) const;
};

struct ReturnItem {
    std::string var;
    std::optional<std::string> property;

    std::string column() const { return property ? var + "." + *property : var; }
    bool operator==(const ReturnItem&) const = default;
};

struct Query {
    std::vector<PathPattern> paths;
    std::optional<Expr> where;
    std::vector<ReturnItem> returns;
    std::optional<std::size_t> limit;

    bool operator==(const Query&) const = default;
};

// ---------------------------------------------------------------------------
// Parsing

class QuerySyntaxError : public Error {
public:
    QuerySyntaxError(std::size_t line, std::size_t column, std::set<std::string> expected, std::string found);
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }
    const std::set<std::string>& expected() const noexcept { return expected_; }
    const std::string& found() const noexcept { return found_; }

private:
    std::size_t line_;
    std::size_t column_;
    std::set<std::string> expected_;
    std::string found_;
};

/// Structurally valid query that misuses variables (unbound, or reused across kinds).
class QuerySemanticError : public Error {
public:
    QuerySemanticError(const std::string& what, std::string variable) : Error(what), variable_(std::move(variable)) {}
    const std::string& variable() const noexcept { return variable_; }

private:
    std::string variable_;
};

/// `MATCH <paths> [WHERE <expr>] RETURN <items> [LIMIT n]`; see docs/query_grammar.ebnf.
Query parse_query(std::string_view text);

/// Canonical single-line text that parses back to an equal AST.
std::string pretty_print(const Query& q);

// ---------------------------------------------------------------------------
// Matching and evaluation

/// Anonymous pattern elements are bound under generated names `#n<i>` / `#e<i>`.
struct MatchBinding {
    std::map<std::string, std::string> nodes;  // var -> node_id
    std::map<std::string, std::string> edges;  // var -> edge_id

    auto operator<=>(const MatchBinding&) const = default;
};

struct MatchResult {
    std::vector<MatchBinding> bindings;  // sorted, distinct
    std::size_t incompatible_comparisons = 0;
};

/// Every binding that satisfies structure, labels (subtype-inclusive), inline
/// properties and WHERE, with no edge bound twice. Property reads use
/// name/qid/type/node_id, else the newest attribute value.
MatchResult match_pattern(const kg::PropertyGraph& graph, const Query& q);

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::optional<std::string>>> rows;  // nullopt: missing property
    std::vector<MatchBinding> bindings;                         // one per row
    std::size_t incompatible_comparisons = 0;
};

/// `var` projects a node's name (an edge's type); `var.key` reads a property.
/// LIMIT applies after ordering.
ResultTable evaluate(const kg::PropertyGraph& graph, const Query& q);

/// Property value as the evaluator sees it; nullopt when absent.
struct PropertyValue {
    std::string text;
    ValueType type = ValueType::string;
};
std::optional<PropertyValue> node_property(const kg::KGNode& node, std::string_view key);
std::optional<PropertyValue> edge_property(const kg::KGEdge& edge, std::string_view key);

}  // namespace kgrag::graphquery
