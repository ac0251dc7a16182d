#include "kgrag/graphquery.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdlib>

namespace kgrag::graphquery {

bool Expr::operator==(const Expr& o) const {
    if (kind != o.kind) return false;
    if (kind == Kind::compare) return lhs == o.lhs && op == o.op && rhs == o.rhs;
    return children == o.children;
}

std::string_view to_string(CmpOp op) {
    switch (op) {
        case CmpOp::eq: return "=";
        case CmpOp::ne: return "<>";
        case CmpOp::lt: return "<";
        case CmpOp::le: return "<=";
        case CmpOp::gt: return ">";
        case CmpOp::ge: return ">=";
        case CmpOp::contains: return "CONTAINS";
        case CmpOp::starts_with: return "STARTS WITH";
    }
    return "=";
}

namespace {

std::string describe_expected(const std::set<std::string>& expected) {
    std::string out;
    for (const auto& e : expected) {
        if (!out.empty()) out += ", ";
        out += e;
    }
    return out;
}

}  // namespace

QuerySyntaxError::QuerySyntaxError(std::size_t line, std::size_t column, std::set<std::string> expected, std::string found)
    : Error("syntax error at line " + std::to_string(line) + ", column " + std::to_string(column) + ": expected " +
            (expected.size() > 1 ? "one of " : "") + describe_expected(expected) + " but found " + found),
      line_(line),
      column_(column),
      expected_(std::move(expected)),
      found_(std::move(found)) {}

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class Tok { ident, string, number, punct, end };

struct Token {
    Tok kind = Tok::end;
    std::string text;  // identifier / punctuation / raw number; decoded value for strings
    double number = 0;
    bool integral = false;
    std::size_t line = 1;
    std::size_t col = 1;
};

constexpr std::array kKeywords = {"MATCH", "WHERE", "RETURN", "LIMIT", "AND", "OR", "NOT", "CONTAINS", "STARTS", "WITH"};

bool is_keyword(std::string_view s) {
    return std::any_of(kKeywords.begin(), kKeywords.end(), [&](const char* k) { return iequals(s, k); });
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0, line = 1, col = 1;
    auto bump = [&](std::size_t n) {
        for (std::size_t k = 0; k < n; ++k, ++i) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
            } else if ((static_cast<unsigned char>(src[i]) & 0xC0) != 0x80) {
                ++col;
            }
        }
    };
    auto error = [&](const std::string& expected, const std::string& found) -> QuerySyntaxError {
        return QuerySyntaxError(line, col, {expected}, found);
    };
    // A '-' directly before a digit is a sign when a value may start here.
    auto sign_allowed = [&] {
        if (out.empty()) return false;
        const auto& p = out.back();
        if (p.kind == Tok::punct) {
            return p.text == "=" || p.text == "<>" || p.text == "<" || p.text == "<=" || p.text == ">" ||
                   p.text == ">=" || p.text == ":" || p.text == "," || p.text == "(" || p.text == "{";
        }
        return p.kind == Tok::ident && is_keyword(p.text);
    };

    while (i < src.size()) {
        char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            bump(1);
            continue;
        }
        if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
            while (i < src.size() && src[i] != '\n') bump(1);
            continue;
        }
        Token t;
        t.line = line;
        t.col = col;
        if (ident_start(c)) {
            std::size_t j = i;
            while (j < src.size() && ident_char(src[j])) ++j;
            t.kind = Tok::ident;
            t.text = std::string(src.substr(i, j - i));
            bump(j - i);
        } else if (c == '\'' || c == '"') {
            char quote = c;
            bump(1);
            std::string value;
            bool closed = false;
            while (i < src.size()) {
                char d = src[i];
                if (d == quote) {
                    bump(1);
                    closed = true;
                    break;
                }
                if (d == '\\') {
                    if (i + 1 >= src.size()) break;
                    char e = src[i + 1];
                    switch (e) {
                        case 'n': value += '\n'; break;
                        case 't': value += '\t'; break;
                        case 'r': value += '\r'; break;
                        case '\\': case '\'': case '"': value += e; break;
                        default: throw error("escape sequence", std::string("'\\") + e + "'");
                    }
                    bump(2);
                    continue;
                }
                value += d;
                bump(1);
            }
            if (!closed) throw QuerySyntaxError(line, col, {"closing quote"}, "end of input");
            t.kind = Tok::string;
            t.text = std::move(value);
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '-' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])) && sign_allowed())) {
            std::size_t j = i + (c == '-' ? 1 : 0);
            bool integral = c != '-';
            while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
            if (j + 1 < src.size() && src[j] == '.' && std::isdigit(static_cast<unsigned char>(src[j + 1]))) {
                integral = false;
                ++j;
                while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
            }
            if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
                if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
                    integral = false;
                    j = k;
                    while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
                }
            }
            t.kind = Tok::number;
            t.text = std::string(src.substr(i, j - i));
            t.number = std::strtod(t.text.c_str(), nullptr);
            t.integral = integral;
            bump(j - i);
        } else {
            static constexpr std::array kPunct = {"<-", "<>", "<=", "->", ">=", "(", ")", "[", "]", "{", "}",
                                                  ":",  ",",  ".",  ";",  "=",  "<", ">", "-"};
            std::string_view rest = src.substr(i);
            auto it = std::find_if(kPunct.begin(), kPunct.end(), [&](const char* p) { return rest.rfind(p, 0) == 0; });
            if (it == kPunct.end()) {
                auto len = utf8_seq_len(src, i);
                throw error("token", "'" + std::string(src.substr(i, len)) + "'");
            }
            t.kind = Tok::punct;
            t.text = *it;
            bump(t.text.size());
        }
        out.push_back(std::move(t));
    }
    Token end;
    end.line = line;
    end.col = col;
    out.push_back(end);
    return out;
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
    explicit Parser(std::string_view text) : toks_(lex(text)) {}

    Query parse() {
        Query q;
        expect_keyword("MATCH");
        q.paths.push_back(path());
        while (accept_punct(",")) q.paths.push_back(path());
        if (accept_keyword("WHERE")) q.where = expr();
        expect_keyword("RETURN");
        q.returns.push_back(return_item());
        while (accept_punct(",")) q.returns.push_back(return_item());
        if (accept_keyword("LIMIT")) {
            const auto& t = peek();
            if (t.kind != Tok::number || !t.integral) {
                expected_.insert("non-negative integer");
                fail();
            }
            q.limit = static_cast<std::size_t>(std::stoull(t.text));
            advance();
        }
        accept_punct(";");
        if (peek().kind != Tok::end) {
            expected_.insert("end of input");
            fail();
        }
        return q;
    }

private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    std::set<std::string> expected_;

    const Token& peek() const { return toks_[pos_]; }
    const Token& peek2() const { return toks_[std::min(pos_ + 1, toks_.size() - 1)]; }
    void advance() {
        ++pos_;
        expected_.clear();
    }

    static std::string describe(const Token& t) {
        switch (t.kind) {
            case Tok::end: return "end of input";
            case Tok::string: return "string literal";
            default: return "'" + t.text + "'";
        }
    }
    [[noreturn]] void fail() const { throw QuerySyntaxError(peek().line, peek().col, expected_, describe(peek())); }

    bool accept_punct(std::string_view p) {
        if (peek().kind == Tok::punct && peek().text == p) {
            advance();
            return true;
        }
        expected_.insert(std::string(p));
        return false;
    }
    void expect_punct(std::string_view p) {
        if (!accept_punct(p)) fail();
    }
    bool at_keyword(std::string_view kw) const { return peek().kind == Tok::ident && iequals(peek().text, kw); }
    bool accept_keyword(std::string_view kw) {
        if (at_keyword(kw)) {
            advance();
            return true;
        }
        expected_.insert(std::string(kw));
        return false;
    }
    void expect_keyword(std::string_view kw) {
        if (!accept_keyword(kw)) fail();
    }

    std::optional<std::string> maybe_variable() {
        if (peek().kind == Tok::ident && !is_keyword(peek().text)) {
            auto v = peek().text;
            advance();
            return v;
        }
        expected_.insert("identifier");
        return std::nullopt;
    }
    std::string variable() {
        auto v = maybe_variable();
        if (!v) fail();
        return *v;
    }
    // Labels, types and property keys may reuse keyword spellings.
    std::string name() {
        if (peek().kind == Tok::ident) {
            auto v = peek().text;
            advance();
            return v;
        }
        expected_.insert("name");
        fail();
    }

    Literal literal() {
        const auto& t = peek();
        if (t.kind == Tok::string) {
            auto l = Literal::str(t.text);
            advance();
            return l;
        }
        if (t.kind == Tok::number) {
            auto l = Literal::num(t.number);
            advance();
            return l;
        }
        expected_.insert("string");
        expected_.insert("number");
        fail();
    }

    NodePattern node() {
        NodePattern n;
        expect_punct("(");
        n.var = maybe_variable();
        if (accept_punct(":")) n.label = name();
        if (accept_punct("{")) {
            if (!accept_punct("}")) {
                do {
                    auto key = name();
                    expect_punct(":");
                    n.properties.emplace_back(std::move(key), literal());
                } while (accept_punct(","));
                expect_punct("}");
            }
        }
        expect_punct(")");
        return n;
    }

    PathPattern path() {
        PathPattern p;
        p.nodes.push_back(node());
        while (true) {
            bool left = false;
            if (accept_punct("<-")) {
                left = true;
            } else if (!accept_punct("-")) {
                break;
            }
            EdgePattern e;
            if (accept_punct("[")) {
                e.var = maybe_variable();
                if (accept_punct(":")) e.type = name();
                expect_punct("]");
            }
            bool right = false;
            if (left) {
                expect_punct("-");
            } else if (!accept_punct("->")) {
                expect_punct("-");
            } else {
                right = true;
            }
            e.direction = left ? Direction::in : right ? Direction::out : Direction::any;
            p.edges.push_back(std::move(e));
            p.nodes.push_back(node());
        }
        return p;
    }

    Operand operand() {
        Operand o;
        if (peek().kind == Tok::ident && !is_keyword(peek().text)) {
            o.is_property = true;
            o.var = peek().text;
            advance();
            expect_punct(".");
            o.key = name();
            return o;
        }
        if (peek().kind == Tok::string || peek().kind == Tok::number) {
            o.literal = literal();
            return o;
        }
        expected_.insert("identifier");
        expected_.insert("string");
        expected_.insert("number");
        fail();
    }

    Expr comparison() {
        Expr e;
        e.lhs = operand();
        const auto& t = peek();
        bool negate_rhs = false;
        if (t.kind == Tok::punct && (t.text == "=" || t.text == "<>" || t.text == "<" || t.text == "<=" ||
                                     t.text == ">" || t.text == ">=")) {
            static const std::map<std::string, CmpOp> ops = {{"=", CmpOp::eq}, {"<>", CmpOp::ne}, {"<", CmpOp::lt},
                                                             {"<=", CmpOp::le}, {">", CmpOp::gt}, {">=", CmpOp::ge}};
            e.op = ops.at(t.text);
            advance();
        } else if (t.kind == Tok::punct && t.text == "<-" && peek2().kind == Tok::number) {
            // `x<-1` lexes as an arrow; read it as less-than a negative number.
            e.op = CmpOp::lt;
            negate_rhs = true;
            advance();
        } else if (accept_keyword("CONTAINS")) {
            e.op = CmpOp::contains;
        } else if (accept_keyword("STARTS")) {
            expect_keyword("WITH");
            e.op = CmpOp::starts_with;
        } else {
            for (const char* p : {"=", "<>", "<", "<=", ">", ">="}) expected_.insert(p);
            fail();
        }
        e.rhs = operand();
        if (negate_rhs) e.rhs.literal.number = -e.rhs.literal.number;
        return e;
    }

    Expr primary() {
        if (accept_punct("(")) {
            auto e = expr();
            expect_punct(")");
            return e;
        }
        return comparison();
    }

    Expr not_expr() {
        if (accept_keyword("NOT")) {
            Expr e;
            e.kind = Expr::Kind::not_;
            e.children.push_back(not_expr());
            return e;
        }
        return primary();
    }

    Expr binary(Expr::Kind kind, std::string_view kw, Expr (Parser::*sub)()) {
        auto left = (this->*sub)();
        while (accept_keyword(kw)) {
            Expr e;
            e.kind = kind;
            e.children.push_back(std::move(left));
            e.children.push_back((this->*sub)());
            left = std::move(e);
        }
        return left;
    }
    Expr and_expr() { return binary(Expr::Kind::and_, "AND", &Parser::not_expr); }
    Expr expr() { return binary(Expr::Kind::or_, "OR", &Parser::and_expr); }

    ReturnItem return_item() {
        ReturnItem r;
        r.var = variable();
        if (accept_punct(".")) r.property = name();
        return r;
    }
};

void collect_expr_vars(const Expr& e, std::vector<std::string>& out) {
    if (e.kind == Expr::Kind::compare) {
        if (e.lhs.is_property) out.push_back(e.lhs.var);
        if (e.rhs.is_property) out.push_back(e.rhs.var);
        return;
    }
    for (const auto& c : e.children) collect_expr_vars(c, out);
}

void check_variables(const Query& q) {
    std::set<std::string> node_vars, edge_vars;
    for (const auto& p : q.paths) {
        for (const auto& n : p.nodes) {
            if (n.var) node_vars.insert(*n.var);
        }
    }
    for (const auto& p : q.paths) {
        for (const auto& e : p.edges) {
            if (!e.var) continue;
            if (node_vars.count(*e.var)) {
                throw QuerySemanticError("variable '" + *e.var + "' is used for both a node and a relationship", *e.var);
            }
            if (!edge_vars.insert(*e.var).second) {
                throw QuerySemanticError("relationship variable '" + *e.var + "' is bound more than once", *e.var);
            }
        }
    }
    std::vector<std::string> used;
    if (q.where) collect_expr_vars(*q.where, used);
    for (const auto& r : q.returns) used.push_back(r.var);
    for (const auto& v : used) {
        if (!node_vars.count(v) && !edge_vars.count(v)) {
            throw QuerySemanticError("variable '" + v + "' is not bound in MATCH", v);
        }
    }
}

}  // namespace

Query parse_query(std::string_view text) {
    auto q = Parser(text).parse();
    check_variables(q);
    return q;
}

// ---------------------------------------------------------------------------
// Pretty printer

namespace {

std::string quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\'': out += "\\'"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out + "'";
}

std::string print_number(double v) {
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

std::string print(const Literal& l) { return l.kind == Literal::Kind::string ? quote(l.text) : print_number(l.number); }

std::string print(const Operand& o) { return o.is_property ? o.var + "." + o.key : print(o.literal); }

std::string print(const Expr& e) {
    switch (e.kind) {
        case Expr::Kind::compare: return print(e.lhs) + " " + std::string(to_string(e.op)) + " " + print(e.rhs);
        case Expr::Kind::not_: return "NOT " + print(e.children[0]);
        case Expr::Kind::and_: return "(" + print(e.children[0]) + " AND " + print(e.children[1]) + ")";
        case Expr::Kind::or_: return "(" + print(e.children[0]) + " OR " + print(e.children[1]) + ")";
    }
    return {};
}

std::string print(const NodePattern& n) {
    std::string inner = n.var.value_or("");
    if (n.label) inner += ":" + *n.label;
    if (!n.properties.empty()) {
        if (!inner.empty()) inner += " ";
        inner += "{";
        for (std::size_t i = 0; i < n.properties.size(); ++i) {
            if (i) inner += ", ";
            inner += n.properties[i].first + ": " + print(n.properties[i].second);
        }
        inner += "}";
    }
    return "(" + inner + ")";
}

std::string print(const EdgePattern& e) {
    std::string inner;
    if (e.var || e.type) inner = "[" + e.var.value_or("") + (e.type ? ":" + *e.type : "") + "]";
    switch (e.direction) {
        case Direction::out: return "-" + inner + "->";
        case Direction::in: return "<-" + inner + "-";
        case Direction::any: return "-" + inner + "-";
    }
    return {};
}

}  // namespace

std::string pretty_print(const Query& q) {
    std::string out = "MATCH ";
    for (std::size_t p = 0; p < q.paths.size(); ++p) {
        if (p) out += ", ";
        const auto& path = q.paths[p];
        out += print(path.nodes[0]);
        for (std::size_t i = 0; i < path.edges.size(); ++i) out += print(path.edges[i]) + print(path.nodes[i + 1]);
    }
    if (q.where) out += " WHERE " + print(*q.where);
    out += " RETURN ";
    for (std::size_t i = 0; i < q.returns.size(); ++i) {
        if (i) out += ", ";
        out += q.returns[i].column();
    }
    if (q.limit) out += " LIMIT " + std::to_string(*q.limit);
    return out;
}

// ---------------------------------------------------------------------------
// Property access

std::optional<PropertyValue> node_property(const kg::KGNode& node, std::string_view key) {
    if (key == "name") return PropertyValue{node.name, ValueType::string};
    if (key == "type") return PropertyValue{node.type, ValueType::string};
    if (key == "node_id") return PropertyValue{node.node_id, ValueType::string};
    if (key == "qid") {
        if (!node.qid) return std::nullopt;
        return PropertyValue{*node.qid, ValueType::string};
    }
    if (const auto* a = kg::newest_attribute(node.attributes, key)) return PropertyValue{a->value, a->value_type};
    return std::nullopt;
}

std::optional<PropertyValue> edge_property(const kg::KGEdge& edge, std::string_view key) {
    if (key == "type") return PropertyValue{edge.type, ValueType::string};
    if (key == "edge_id") return PropertyValue{edge.edge_id, ValueType::string};
    if (const auto* a = kg::newest_attribute(edge.attributes, key)) return PropertyValue{a->value, a->value_type};
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Matcher

namespace {

enum class Truth { no, yes, incompatible };

std::optional<double> as_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (*end != '\0') return std::nullopt;
    return v;
}

template <typename T>
bool ordered(CmpOp op, const T& a, const T& b) {
    switch (op) {
        case CmpOp::eq: return a == b;
        case CmpOp::ne: return a != b;
        case CmpOp::lt: return a < b;
        case CmpOp::le: return a <= b;
        case CmpOp::gt: return a > b;
        case CmpOp::ge: return a >= b;
        default: return false;
    }
}

Truth compare(const PropertyValue& a, CmpOp op, const PropertyValue& b) {
    bool a_num = a.type == ValueType::number, b_num = b.type == ValueType::number;
    if (a_num != b_num) return Truth::incompatible;
    if (a_num) {
        if (op == CmpOp::contains || op == CmpOp::starts_with) return Truth::incompatible;
        auto x = as_number(a.text), y = as_number(b.text);
        if (!x || !y) return Truth::incompatible;
        return ordered(op, *x, *y) ? Truth::yes : Truth::no;
    }
    if (op == CmpOp::contains) return a.text.find(b.text) != std::string::npos ? Truth::yes : Truth::no;
    if (op == CmpOp::starts_with) return a.text.rfind(b.text, 0) == 0 ? Truth::yes : Truth::no;
    return ordered(op, a.text, b.text) ? Truth::yes : Truth::no;
}

PropertyValue literal_value(const Literal& l) {
    if (l.kind == Literal::Kind::string) return {l.text, ValueType::string};
    return {print_number(l.number), ValueType::number};
}

struct NodeSlot {
    std::string name;
    std::vector<std::string> labels;
    std::vector<std::pair<std::string, Literal>> props;
};

struct EdgeSlot {
    std::string name;
    std::optional<std::string> type;
    std::size_t a = 0;  // pattern-left node slot
    std::size_t b = 0;
    Direction dir = Direction::any;
};

struct Step {
    bool bind_node = false;
    std::size_t index = 0;  // node slot or edge slot
};

class Matcher {
public:
    Matcher(const kg::PropertyGraph& g, const Query& q) : g_(g), q_(q) {
        compile();
        plan();
    }

    MatchResult run() {
        node_binding_.assign(nodes_.size(), nullptr);
        edge_binding_.assign(edges_.size(), nullptr);
        search(0);
        MatchResult r;
        r.bindings.assign(found_.begin(), found_.end());
        r.incompatible_comparisons = incompatible_;
        return r;
    }

private:
    const kg::PropertyGraph& g_;
    const Query& q_;
    std::vector<NodeSlot> nodes_;
    std::vector<EdgeSlot> edges_;
    std::vector<std::vector<const kg::KGNode*>> candidates_;
    std::vector<std::set<std::string_view>> candidate_ids_;
    std::vector<Step> steps_;
    std::vector<const kg::KGNode*> node_binding_;
    std::vector<const kg::KGEdge*> edge_binding_;
    std::set<std::string_view> used_edges_;
    std::set<MatchBinding> found_;
    std::size_t incompatible_ = 0;

    void compile() {
        std::map<std::string, std::size_t> by_var;
        std::size_t anon_nodes = 0, anon_edges = 0;
        auto slot_for = [&](const NodePattern& n) {
            std::size_t idx;
            if (n.var && by_var.count(*n.var)) {
                idx = by_var[*n.var];
            } else {
                idx = nodes_.size();
                nodes_.push_back({n.var ? *n.var : "#n" + std::to_string(anon_nodes++), {}, {}});
                if (n.var) by_var[*n.var] = idx;
            }
            if (n.label) nodes_[idx].labels.push_back(*n.label);
            for (const auto& p : n.properties) nodes_[idx].props.push_back(p);
            return idx;
        };
        for (const auto& path : q_.paths) {
            std::vector<std::size_t> slots;
            for (const auto& n : path.nodes) slots.push_back(slot_for(n));
            for (std::size_t i = 0; i < path.edges.size(); ++i) {
                const auto& e = path.edges[i];
                edges_.push_back({e.var ? *e.var : "#e" + std::to_string(anon_edges++), e.type, slots[i], slots[i + 1],
                                  e.direction});
            }
        }
        candidates_.resize(nodes_.size());
        candidate_ids_.resize(nodes_.size());
        for (std::size_t s = 0; s < nodes_.size(); ++s) {
            for (const auto& [id, node] : g_.nodes()) {
                if (node_fits(nodes_[s], node)) {
                    candidates_[s].push_back(&node);
                    candidate_ids_[s].insert(id);
                }
            }
        }
    }

    static bool node_fits(const NodeSlot& slot, const kg::KGNode& node) {
        for (const auto& l : slot.labels) {
            if (!kg::type_is_subtype(node.type, l)) return false;
        }
        for (const auto& [key, lit] : slot.props) {
            auto v = node_property(node, key);
            if (!v || compare(*v, CmpOp::eq, literal_value(lit)) != Truth::yes) return false;
        }
        return true;
    }

    // Most-constrained first: seed each component with its smallest candidate
    // set, then follow edges, closing cycles before extending.
    void plan() {
        std::vector<bool> bound(nodes_.size(), false), done(edges_.size(), false);
        std::size_t remaining_edges = edges_.size();
        while (true) {
            std::optional<std::size_t> best;
            int best_rank = 0;
            for (std::size_t e = 0; e < edges_.size(); ++e) {
                if (done[e]) continue;
                bool ba = bound[edges_[e].a], bb = bound[edges_[e].b];
                if (!ba && !bb) continue;
                int rank = ba && bb ? -1 : static_cast<int>(candidates_[ba ? edges_[e].b : edges_[e].a].size());
                if (!best || rank < best_rank) {
                    best = e;
                    best_rank = rank;
                }
            }
            if (best) {
                done[*best] = true;
                --remaining_edges;
                bound[edges_[*best].a] = bound[edges_[*best].b] = true;
                steps_.push_back({false, *best});
                continue;
            }
            std::optional<std::size_t> seed;
            for (std::size_t s = 0; s < nodes_.size(); ++s) {
                if (!bound[s] && (!seed || candidates_[s].size() < candidates_[*seed].size())) seed = s;
            }
            if (!seed) break;
            bound[*seed] = true;
            steps_.push_back({true, *seed});
        }
        (void)remaining_edges;
    }

    bool edge_fits(const EdgeSlot& slot, const kg::KGEdge& e) const {
        return (!slot.type || e.type == *slot.type) && !used_edges_.count(e.edge_id);
    }

    void try_edge(std::size_t step, std::size_t ei, const kg::KGEdge& e, std::size_t other_slot, const std::string& other_id) {
        if (!edge_fits(edges_[ei], e)) return;
        const auto* other = node_binding_[other_slot];
        bool newly_bound = false;
        if (other) {
            if (other->node_id != other_id) return;
        } else {
            if (!candidate_ids_[other_slot].count(other_id)) return;
            node_binding_[other_slot] = g_.node(other_id);
            newly_bound = true;
        }
        edge_binding_[ei] = &e;
        used_edges_.insert(e.edge_id);
        search(step + 1);
        used_edges_.erase(e.edge_id);
        edge_binding_[ei] = nullptr;
        if (newly_bound) node_binding_[other_slot] = nullptr;
    }

    void search(std::size_t step) {
        if (step == steps_.size()) {
            emit();
            return;
        }
        const auto& st = steps_[step];
        if (st.bind_node) {
            for (const auto* n : candidates_[st.index]) {
                node_binding_[st.index] = n;
                search(step + 1);
            }
            node_binding_[st.index] = nullptr;
            return;
        }
        const auto& slot = edges_[st.index];
        // Walk from a bound endpoint; `from_a` tells which side of the pattern it is.
        bool from_a = node_binding_[slot.a] != nullptr;
        const auto& here = from_a ? node_binding_[slot.a]->node_id : node_binding_[slot.b]->node_id;
        std::size_t other_slot = from_a ? slot.b : slot.a;
        // Pattern a->b is graph source->target for `out`; reversed for `in`.
        bool want_out = slot.dir == Direction::any || (slot.dir == Direction::out) == from_a;
        bool want_in = slot.dir == Direction::any || (slot.dir == Direction::in) == from_a;
        if (want_out) {
            for (const auto& eid : g_.out_edges(here)) {
                const auto& e = *g_.edge(eid);
                try_edge(step, st.index, e, other_slot, e.target_node_id);
            }
        }
        if (want_in) {
            for (const auto& eid : g_.in_edges(here)) {
                const auto& e = *g_.edge(eid);
                // An undirected self-loop was already tried from the out list.
                if (want_out && e.source_node_id == e.target_node_id) continue;
                try_edge(step, st.index, e, other_slot, e.source_node_id);
            }
        }
    }

    std::optional<PropertyValue> read(const Operand& o) const {
        if (!o.is_property) return literal_value(o.literal);
        for (std::size_t s = 0; s < nodes_.size(); ++s) {
            if (nodes_[s].name == o.var) return node_property(*node_binding_[s], o.key);
        }
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            if (edges_[e].name == o.var) return edge_property(*edge_binding_[e], o.key);
        }
        return std::nullopt;
    }

    // Every comparison is evaluated (no short-circuit) so the incompatible
    // tally does not depend on operand order.
    Truth eval(const Expr& e) const {
        switch (e.kind) {
            case Expr::Kind::compare: {
                auto a = read(e.lhs), b = read(e.rhs);
                if (!a || !b) return Truth::no;
                return compare(*a, e.op, *b);
            }
            case Expr::Kind::not_: {
                auto t = eval(e.children[0]);
                return t == Truth::incompatible ? t : (t == Truth::yes ? Truth::no : Truth::yes);
            }
            case Expr::Kind::and_:
            case Expr::Kind::or_: {
                auto l = eval(e.children[0]), r = eval(e.children[1]);
                if (l == Truth::incompatible || r == Truth::incompatible) return Truth::incompatible;
                bool v = e.kind == Expr::Kind::and_ ? (l == Truth::yes && r == Truth::yes) : (l == Truth::yes || r == Truth::yes);
                return v ? Truth::yes : Truth::no;
            }
        }
        return Truth::no;
    }

    void emit() {
        MatchBinding b;
        for (std::size_t s = 0; s < nodes_.size(); ++s) b.nodes[nodes_[s].name] = node_binding_[s]->node_id;
        for (std::size_t e = 0; e < edges_.size(); ++e) b.edges[edges_[e].name] = edge_binding_[e]->edge_id;
        if (found_.count(b)) return;
        if (q_.where) {
            auto t = eval(*q_.where);
            if (t == Truth::incompatible) {
                ++incompatible_;
                return;
            }
            if (t == Truth::no) return;
        }
        found_.insert(std::move(b));
    }
};

}  // namespace

MatchResult match_pattern(const kg::PropertyGraph& graph, const Query& q) { return Matcher(graph, q).run(); }

ResultTable evaluate(const kg::PropertyGraph& graph, const Query& q) {
    auto matched = match_pattern(graph, q);
    ResultTable t;
    t.incompatible_comparisons = matched.incompatible_comparisons;
    for (const auto& r : q.returns) t.columns.push_back(r.column());
    std::size_t n = matched.bindings.size();
    if (q.limit) n = std::min(n, *q.limit);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& b = matched.bindings[i];
        std::vector<std::optional<std::string>> row;
        for (const auto& r : q.returns) {
            std::optional<PropertyValue> v;
            if (auto it = b.nodes.find(r.var); it != b.nodes.end()) {
                v = node_property(*graph.node(it->second), r.property.value_or("name"));
            } else if (auto jt = b.edges.find(r.var); jt != b.edges.end()) {
                v = edge_property(*graph.edge(jt->second), r.property.value_or("type"));
            }
            row.push_back(v ? std::optional<std::string>(v->text) : std::nullopt);
        }
        t.rows.push_back(std::move(row));
        t.bindings.push_back(b);
    }
    return t;
}

}  // namespace kgrag::graphquery
