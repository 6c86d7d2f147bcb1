#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "df/column.hpp"
#include "df/error.hpp"
#include "df/value.hpp"

namespace df {

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

struct Expr {
    enum class Kind { literal, column, param, unary, binary, call };

    Kind kind;
    Value literal;              // literal value; params get theirs bound at typecheck
    std::string name;           // column / parameter / function name
    std::string op;             // "-", "not", "+", "and", "==", ...
    std::vector<ExprPtr> args;

    ColumnType type;            // resolved by typecheck
    bool typed = false;
};

inline ExprPtr make_literal(Value v) {
    auto e = std::make_unique<Expr>();
    e->kind = Expr::Kind::literal;
    e->literal = std::move(v);
    return e;
}

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

namespace expr_detail {

struct Token {
    enum class T { ident, keyword, int_lit, float_lit, str_lit, punct, end };
    T t = T::end;
    std::string text;
    int64_t ival = 0;
    double fval = 0.0;
    size_t offset = 0;
};

inline bool is_keyword(const std::string& s) {
    return s == "and" || s == "or" || s == "not" || s == "true" || s == "false";
}

class Lexer {
  public:
    explicit Lexer(std::string_view src) : src_(src) { advance(); }

    const Token& peek() const { return tok_; }

    Token next() {
        Token t = tok_;
        advance();
        return t;
    }

  private:
    void advance() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        tok_ = Token{};
        tok_.offset = pos_;
        if (pos_ >= src_.size()) {
            tok_.t = Token::T::end;
            return;
        }
        char c = src_[pos_];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t start = pos_;
            while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                          src_[pos_] == '_'))
                ++pos_;
            tok_.text = std::string(src_.substr(start, pos_ - start));
            tok_.t = is_keyword(tok_.text) ? Token::T::keyword : Token::T::ident;
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            lex_number();
            return;
        }
        if (c == '\'' || c == '"') {
            lex_string(c);
            return;
        }
        // multi-char operators first
        static const char* two[] = {"<=", ">=", "==", "!="};
        for (const char* op : two) {
            if (src_.compare(pos_, 2, op) == 0) {
                tok_.t = Token::T::punct;
                tok_.text = op;
                pos_ += 2;
                return;
            }
        }
        static const std::string singles = "+-*/<>(),@";
        if (singles.find(c) != std::string::npos) {
            tok_.t = Token::T::punct;
            tok_.text = std::string(1, c);
            ++pos_;
            return;
        }
        raise(Errc::syntax_error,
              "byte " + std::to_string(pos_) + ": unexpected character '" + std::string(1, c) + "'");
    }

    void lex_number() {
        size_t start = pos_;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        bool is_float = false;
        if (pos_ < src_.size() && src_[pos_] == '.') {
            is_float = true;
            ++pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            is_float = true;
            ++pos_;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            if (pos_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[pos_])))
                raise(Errc::syntax_error, "byte " + std::to_string(pos_) + ": expected exponent digits");
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        }
        std::string text(src_.substr(start, pos_ - start));
        tok_.text = text;
        if (is_float) {
            tok_.t = Token::T::float_lit;
            tok_.fval = std::strtod(text.c_str(), nullptr);
        } else {
            tok_.t = Token::T::int_lit;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), tok_.ival);
            if (ec != std::errc())
                raise(Errc::syntax_error,
                      "byte " + std::to_string(start) + ": integer literal out of range");
        }
    }

    void lex_string(char quote) {
        size_t start = pos_++;
        std::string out;
        while (pos_ < src_.size() && src_[pos_] != quote) {
            char c = src_[pos_];
            if (c == '\\') {
                if (pos_ + 1 >= src_.size())
                    raise(Errc::syntax_error, "byte " + std::to_string(pos_) + ": dangling escape");
                char e = src_[pos_ + 1];
                switch (e) {
                    case 'n': out.push_back('\n'); break;
                    case 't': out.push_back('\t'); break;
                    case 'r': out.push_back('\r'); break;
                    case '\\': out.push_back('\\'); break;
                    case '\'': out.push_back('\''); break;
                    case '"': out.push_back('"'); break;
                    default:
                        raise(Errc::syntax_error, "byte " + std::to_string(pos_) +
                                                      ": unknown escape '\\" + std::string(1, e) + "'");
                }
                pos_ += 2;
            } else {
                out.push_back(c);
                ++pos_;
            }
        }
        if (pos_ >= src_.size())
            raise(Errc::syntax_error, "byte " + std::to_string(start) + ": unterminated string");
        ++pos_;
        tok_.t = Token::T::str_lit;
        tok_.text = std::move(out);
    }

    std::string_view src_;
    size_t pos_ = 0;
    Token tok_;
};

class Parser {
  public:
    explicit Parser(std::string_view src) : lex_(src) {}

    ExprPtr parse() {
        auto e = parse_or();
        if (lex_.peek().t != Token::T::end)
            fail("end of expression", lex_.peek());
        return e;
    }

  private:
    [[noreturn]] void fail(const std::string& expected, const Token& got) {
        std::string found = got.t == Token::T::end ? "end of input" : "'" + got.text + "'";
        raise(Errc::syntax_error,
              "byte " + std::to_string(got.offset) + ": expected " + expected + ", found " + found);
    }

    bool eat_punct(const std::string& p) {
        if (lex_.peek().t == Token::T::punct && lex_.peek().text == p) {
            lex_.next();
            return true;
        }
        return false;
    }

    bool eat_keyword(const std::string& k) {
        if (lex_.peek().t == Token::T::keyword && lex_.peek().text == k) {
            lex_.next();
            return true;
        }
        return false;
    }

    ExprPtr binary(std::string op, ExprPtr lhs, ExprPtr rhs) {
        auto e = std::make_unique<Expr>();
        e->kind = Expr::Kind::binary;
        e->op = std::move(op);
        e->args.push_back(std::move(lhs));
        e->args.push_back(std::move(rhs));
        return e;
    }

    ExprPtr parse_or() {
        auto lhs = parse_and();
        while (eat_keyword("or")) lhs = binary("or", std::move(lhs), parse_and());
        return lhs;
    }

    ExprPtr parse_and() {
        auto lhs = parse_not();
        while (eat_keyword("and")) lhs = binary("and", std::move(lhs), parse_not());
        return lhs;
    }

    ExprPtr parse_not() {
        if (eat_keyword("not")) {
            auto e = std::make_unique<Expr>();
            e->kind = Expr::Kind::unary;
            e->op = "not";
            e->args.push_back(parse_not());
            return e;
        }
        return parse_cmp();
    }

    ExprPtr parse_cmp() {
        auto lhs = parse_add();
        static const char* ops[] = {"<=", ">=", "==", "!=", "<", ">"};
        for (const char* op : ops) {
            if (lex_.peek().t == Token::T::punct && lex_.peek().text == op) {
                lex_.next();
                return binary(op, std::move(lhs), parse_add());  // non-associative
            }
        }
        return lhs;
    }

    ExprPtr parse_add() {
        auto lhs = parse_mul();
        while (true) {
            if (eat_punct("+")) lhs = binary("+", std::move(lhs), parse_mul());
            else if (eat_punct("-")) lhs = binary("-", std::move(lhs), parse_mul());
            else return lhs;
        }
    }

    ExprPtr parse_mul() {
        auto lhs = parse_unary();
        while (true) {
            if (eat_punct("*")) lhs = binary("*", std::move(lhs), parse_unary());
            else if (eat_punct("/")) lhs = binary("/", std::move(lhs), parse_unary());
            else return lhs;
        }
    }

    ExprPtr parse_unary() {
        if (eat_punct("-")) {
            auto e = std::make_unique<Expr>();
            e->kind = Expr::Kind::unary;
            e->op = "-";
            e->args.push_back(parse_unary());
            return e;
        }
        return parse_primary();
    }

    ExprPtr parse_primary() {
        Token t = lex_.peek();
        switch (t.t) {
            case Token::T::int_lit:
                lex_.next();
                return make_literal(Value::of_int(t.ival));
            case Token::T::float_lit:
                lex_.next();
                return make_literal(Value::of_float(t.fval));
            case Token::T::str_lit:
                lex_.next();
                return make_literal(Value::of_text(t.text));
            case Token::T::keyword:
                if (t.text == "true" || t.text == "false") {
                    lex_.next();
                    return make_literal(Value::of_bool(t.text == "true"));
                }
                fail("expression", t);
            case Token::T::ident: {
                lex_.next();
                if (eat_punct("(")) {
                    auto e = std::make_unique<Expr>();
                    e->kind = Expr::Kind::call;
                    e->name = t.text;
                    if (!eat_punct(")")) {
                        do {
                            e->args.push_back(parse_or());
                        } while (eat_punct(","));
                        if (!eat_punct(")")) fail("')'", lex_.peek());
                    }
                    return e;
                }
                auto e = std::make_unique<Expr>();
                e->kind = Expr::Kind::column;
                e->name = t.text;
                return e;
            }
            case Token::T::punct:
                if (t.text == "@") {
                    lex_.next();
                    Token name = lex_.peek();
                    if (name.t != Token::T::ident) fail("parameter name after '@'", name);
                    lex_.next();
                    auto e = std::make_unique<Expr>();
                    e->kind = Expr::Kind::param;
                    e->name = name.text;
                    return e;
                }
                if (t.text == "(") {
                    lex_.next();
                    auto e = parse_or();
                    if (!eat_punct(")")) fail("')'", lex_.peek());
                    return e;
                }
                fail("expression", t);
            case Token::T::end:
                fail("expression", t);
        }
        fail("expression", t);
    }

    Lexer lex_;
};

inline int precedence(const Expr& e) {
    if (e.kind == Expr::Kind::binary) {
        if (e.op == "or") return 1;
        if (e.op == "and") return 2;
        if (e.op == "<" || e.op == "<=" || e.op == ">" || e.op == ">=" || e.op == "==" ||
            e.op == "!=")
            return 4;
        if (e.op == "+" || e.op == "-") return 5;
        return 6;  // * /
    }
    if (e.kind == Expr::Kind::unary) return e.op == "not" ? 3 : 7;
    return 8;
}

inline std::string float_literal_text(double d) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), d);
    std::string s(buf, p);
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
        s += ".0";  // keep it lexing as a float
    return s;
}

inline std::string quote_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            case '\\': out += "\\\\"; break;
            case '"': out += "\\\""; break;
            default: out.push_back(c);
        }
    }
    return out + "\"";
}

}  // namespace expr_detail

inline ExprPtr parse_expr(std::string_view src) { return expr_detail::Parser(src).parse(); }

// Canonical text form; parse(print(e)) reproduces the AST, and equal logical
// expressions print identically regardless of source whitespace.
inline std::string print_expr(const Expr& e) {
    using namespace expr_detail;
    auto wrap = [](const Expr& parent, const Expr& child, bool right_side) {
        int pp = precedence(parent), cp = precedence(child);
        if (cp > pp) return false;
        if (cp < pp) return true;
        // equal precedence: left-associative chains keep the left child bare;
        // comparisons are non-associative so either side gets parenthesized
        if (parent.kind == Expr::Kind::binary && precedence(parent) == 4) return true;
        return right_side;
    };
    switch (e.kind) {
        case Expr::Kind::literal:
            switch (e.literal.k) {
                case Value::K::i64: return std::to_string(e.literal.i);
                case Value::K::f64: return float_literal_text(e.literal.f);
                case Value::K::boolean: return e.literal.b ? "true" : "false";
                case Value::K::text: return quote_string(e.literal.s);
                default:
                    raise(Errc::invariant_violation, "unprintable literal kind");
            }
        case Expr::Kind::column: return e.name;
        case Expr::Kind::param: return "@" + e.name;
        case Expr::Kind::unary: {
            std::string inner = print_expr(*e.args[0]);
            bool paren = precedence(*e.args[0]) < precedence(e);
            if (paren) inner = "(" + inner + ")";
            return e.op == "not" ? "not " + inner : "-" + inner;
        }
        case Expr::Kind::binary: {
            std::string lhs = print_expr(*e.args[0]);
            std::string rhs = print_expr(*e.args[1]);
            if (wrap(e, *e.args[0], false)) lhs = "(" + lhs + ")";
            if (wrap(e, *e.args[1], true)) rhs = "(" + rhs + ")";
            return lhs + " " + e.op + " " + rhs;
        }
        case Expr::Kind::call: {
            std::string out = e.name + "(";
            for (size_t i = 0; i < e.args.size(); ++i) {
                if (i) out += ", ";
                out += print_expr(*e.args[i]);
            }
            return out + ")";
        }
    }
    return "";
}

// ---------------------------------------------------------------------------
// Type checking
// ---------------------------------------------------------------------------

inline ColumnType value_type(const Value& v) {
    switch (v.k) {
        case Value::K::i64: return int64_type();
        case Value::K::f64: return float64_type();
        case Value::K::boolean: return bool_type();
        case Value::K::text: return utf8_type();
        case Value::K::bytes: return bytes_type();
        case Value::K::vec: return fvec_type(static_cast<uint32_t>(v.v.size()));
        case Value::K::null:
            raise(Errc::type_mismatch, "null parameter has no type");
    }
    return int64_type();
}

// Annotates every node with its resolved type and binds parameter values into
// the AST. int64 promotes to float64 in mixed arithmetic and comparisons.
inline void typecheck(Expr& e, const Schema& schema, const std::map<std::string, Value>& params) {
    auto numeric = [](const ColumnType& t) { return t.is_numeric(); };
    auto promote = [](const ColumnType& a, const ColumnType& b) {
        return (a.tag == TypeTag::float64 || b.tag == TypeTag::float64) ? float64_type()
                                                                        : int64_type();
    };
    auto mismatch = [](const std::string& what, const ColumnType& a, const ColumnType& b) {
        raise(Errc::type_mismatch, what + ": " + a.to_string() + " vs " + b.to_string());
    };

    switch (e.kind) {
        case Expr::Kind::literal:
            e.type = value_type(e.literal);
            break;
        case Expr::Kind::column: {
            int idx = schema.find(e.name);
            if (idx < 0) raise(Errc::unknown_column, e.name);
            e.type = schema.fields[static_cast<size_t>(idx)].type;
            break;
        }
        case Expr::Kind::param: {
            auto it = params.find(e.name);
            if (it == params.end()) raise(Errc::unknown_param, "@" + e.name);
            e.literal = it->second;
            e.type = value_type(e.literal);
            break;
        }
        case Expr::Kind::unary: {
            typecheck(*e.args[0], schema, params);
            const auto& t = e.args[0]->type;
            if (e.op == "-") {
                if (!numeric(t)) raise(Errc::type_mismatch, "unary - needs a numeric, got " + t.to_string());
                e.type = t;
            } else {  // not
                if (t.tag != TypeTag::boolean)
                    raise(Errc::type_mismatch, "not needs a bool, got " + t.to_string());
                e.type = bool_type();
            }
            break;
        }
        case Expr::Kind::binary: {
            typecheck(*e.args[0], schema, params);
            typecheck(*e.args[1], schema, params);
            const auto& a = e.args[0]->type;
            const auto& b = e.args[1]->type;
            if (e.op == "and" || e.op == "or") {
                if (a.tag != TypeTag::boolean || b.tag != TypeTag::boolean)
                    mismatch("'" + e.op + "' needs bools", a, b);
                e.type = bool_type();
            } else if (e.op == "==" || e.op == "!=") {
                bool ok = (a == b) || (numeric(a) && numeric(b));
                if (!ok) mismatch("'" + e.op + "' needs matching types", a, b);
                if (a.tag == TypeTag::fvec && a.dim != b.dim)
                    raise(Errc::dim_mismatch, "fvec(" + std::to_string(a.dim) + ") vs fvec(" +
                                                  std::to_string(b.dim) + ")");
                e.type = bool_type();
            } else if (e.op == "<" || e.op == "<=" || e.op == ">" || e.op == ">=") {
                bool ok = (numeric(a) && numeric(b)) ||
                          (a.tag == TypeTag::utf8 && b.tag == TypeTag::utf8);
                if (!ok) mismatch("'" + e.op + "' needs numerics or utf8", a, b);
                e.type = bool_type();
            } else {  // + - * /
                if (!numeric(a) || !numeric(b)) mismatch("'" + e.op + "' needs numerics", a, b);
                e.type = promote(a, b);
            }
            break;
        }
        case Expr::Kind::call: {
            for (auto& arg : e.args) typecheck(*arg, schema, params);
            auto arity = [&](size_t n) {
                if (e.args.size() != n)
                    raise(Errc::type_mismatch, e.name + " takes " + std::to_string(n) +
                                                   " argument(s), got " +
                                                   std::to_string(e.args.size()));
            };
            if (e.name == "cos_dist") {
                arity(2);
                const auto& a = e.args[0]->type;
                const auto& b = e.args[1]->type;
                if (a.tag != TypeTag::fvec || b.tag != TypeTag::fvec)
                    mismatch("cos_dist needs vectors", a, b);
                if (a.dim != b.dim)
                    raise(Errc::dim_mismatch, "cos_dist: fvec(" + std::to_string(a.dim) +
                                                  ") vs fvec(" + std::to_string(b.dim) + ")");
                e.type = float64_type();
            } else if (e.name == "len") {
                arity(1);
                const auto& t = e.args[0]->type;
                if (t.tag != TypeTag::utf8 && t.tag != TypeTag::bytes)
                    raise(Errc::type_mismatch, "len needs utf8 or bytes, got " + t.to_string());
                e.type = int64_type();
            } else if (e.name == "abs") {
                arity(1);
                const auto& t = e.args[0]->type;
                if (!numeric(t)) raise(Errc::type_mismatch, "abs needs a numeric, got " + t.to_string());
                e.type = t;
            } else if (e.name == "min" || e.name == "max") {
                arity(2);
                const auto& a = e.args[0]->type;
                const auto& b = e.args[1]->type;
                if (!numeric(a) || !numeric(b)) mismatch(e.name + " needs numerics", a, b);
                e.type = promote(a, b);
            } else {
                raise(Errc::type_mismatch, "unknown function '" + e.name + "'");
            }
            break;
        }
    }
    e.typed = true;
}

// Collects parameter names referenced by an expression (for descriptors).
inline void collect_params(const Expr& e, std::vector<std::string>& out) {
    if (e.kind == Expr::Kind::param) out.push_back(e.name);
    for (const auto& a : e.args) collect_params(*a, out);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

class RowSource {
  public:
    virtual ~RowSource() = default;
    virtual Value column_value(const std::string& name) const = 0;
};

class MapRow : public RowSource {
  public:
    explicit MapRow(const std::map<std::string, Value>& values) : values_(values) {}
    Value column_value(const std::string& name) const override {
        auto it = values_.find(name);
        return it == values_.end() ? Value::null() : it->second;
    }

  private:
    const std::map<std::string, Value>& values_;
};

inline double cos_dist(const std::vector<double>& a, const std::vector<double>& b, bool& null_out) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0.0 || nb == 0.0) {
        null_out = true;
        return 0.0;
    }
    null_out = false;
    return 1.0 - dot / (na * nb);
}

// Strict evaluation with null propagation; `and`/`or` use three-valued logic
// and division by zero yields null. Runtime never throws: all failure modes
// are nulls by design.
inline Value eval_expr(const Expr& e, const RowSource& row) {
    switch (e.kind) {
        case Expr::Kind::literal:
        case Expr::Kind::param:
            return e.literal;
        case Expr::Kind::column:
            return row.column_value(e.name);
        case Expr::Kind::unary: {
            Value v = eval_expr(*e.args[0], row);
            if (v.is_null()) return Value::null();
            if (e.op == "not") return Value::of_bool(!v.b);
            if (v.k == Value::K::i64) {
                if (v.i == INT64_MIN) return Value::null();  // negation overflows
                return Value::of_int(-v.i);
            }
            return Value::of_float(-v.f);
        }
        case Expr::Kind::binary: {
            Value a = eval_expr(*e.args[0], row);
            Value b = eval_expr(*e.args[1], row);
            if (e.op == "and") {
                if (!a.is_null() && !a.b) return Value::of_bool(false);
                if (!b.is_null() && !b.b) return Value::of_bool(false);
                if (a.is_null() || b.is_null()) return Value::null();
                return Value::of_bool(true);
            }
            if (e.op == "or") {
                if (!a.is_null() && a.b) return Value::of_bool(true);
                if (!b.is_null() && b.b) return Value::of_bool(true);
                if (a.is_null() || b.is_null()) return Value::null();
                return Value::of_bool(false);
            }
            if (a.is_null() || b.is_null()) return Value::null();
            if (e.op == "==" || e.op == "!=") {
                bool eq;
                if (a.k == Value::K::vec) {
                    eq = a.v == b.v;
                } else if (a.k == Value::K::i64 && b.k == Value::K::i64) {
                    eq = a.i == b.i;
                } else if ((a.k == Value::K::i64 || a.k == Value::K::f64) &&
                           (b.k == Value::K::i64 || b.k == Value::K::f64)) {
                    eq = a.as_f64() == b.as_f64();
                } else {
                    eq = a == b;
                }
                return Value::of_bool(e.op == "==" ? eq : !eq);
            }
            if (e.op == "<" || e.op == "<=" || e.op == ">" || e.op == ">=") {
                int cmp;
                if (a.k == Value::K::text) {
                    cmp = a.s.compare(b.s) < 0 ? -1 : (a.s == b.s ? 0 : 1);
                } else if (a.k == Value::K::i64 && b.k == Value::K::i64) {
                    cmp = a.i < b.i ? -1 : (a.i == b.i ? 0 : 1);
                } else {
                    double x = a.as_f64(), y = b.as_f64();
                    if (std::isnan(x) || std::isnan(y)) return Value::null();
                    cmp = x < y ? -1 : (x == y ? 0 : 1);
                }
                bool r = e.op == "<"    ? cmp < 0
                         : e.op == "<=" ? cmp <= 0
                         : e.op == ">"  ? cmp > 0
                                        : cmp >= 0;
                return Value::of_bool(r);
            }
            // arithmetic
            if (a.k == Value::K::i64 && b.k == Value::K::i64) {
                uint64_t ua = static_cast<uint64_t>(a.i), ub = static_cast<uint64_t>(b.i);
                if (e.op == "+") return Value::of_int(static_cast<int64_t>(ua + ub));
                if (e.op == "-") return Value::of_int(static_cast<int64_t>(ua - ub));
                if (e.op == "*") return Value::of_int(static_cast<int64_t>(ua * ub));
                if (b.i == 0 || (a.i == INT64_MIN && b.i == -1)) return Value::null();
                return Value::of_int(a.i / b.i);
            }
            double x = a.as_f64(), y = b.as_f64();
            if (e.op == "+") return Value::of_float(x + y);
            if (e.op == "-") return Value::of_float(x - y);
            if (e.op == "*") return Value::of_float(x * y);
            if (y == 0.0) return Value::null();
            return Value::of_float(x / y);
        }
        case Expr::Kind::call: {
            std::vector<Value> args;
            args.reserve(e.args.size());
            for (const auto& a : e.args) args.push_back(eval_expr(*a, row));
            for (const auto& a : args)
                if (a.is_null()) return Value::null();
            if (e.name == "cos_dist") {
                bool is_null = false;
                double d = cos_dist(args[0].v, args[1].v, is_null);
                return is_null ? Value::null() : Value::of_float(d);
            }
            if (e.name == "len") return Value::of_int(static_cast<int64_t>(args[0].s.size()));
            if (e.name == "abs") {
                if (args[0].k == Value::K::i64) {
                    if (args[0].i == INT64_MIN) return Value::null();
                    return Value::of_int(args[0].i < 0 ? -args[0].i : args[0].i);
                }
                return Value::of_float(std::fabs(args[0].f));
            }
            // min / max
            bool want_min = e.name == "min";
            const Value& a = args[0];
            const Value& b = args[1];
            if (a.k == Value::K::i64 && b.k == Value::K::i64)
                return Value::of_int(want_min ? std::min(a.i, b.i) : std::max(a.i, b.i));
            double x = a.as_f64(), y = b.as_f64();
            return Value::of_float(want_min ? std::min(x, y) : std::max(x, y));
        }
    }
    return Value::null();
}

// Parses, typechecks and canonicalizes in one step; the canonical text is what
// operation descriptors record.
struct CompiledExpr {
    ExprPtr ast;
    std::string canonical;
    ColumnType type;
    std::vector<std::string> param_names;
};

inline CompiledExpr compile_expr(std::string_view src, const Schema& schema,
                                 const std::map<std::string, Value>& params) {
    CompiledExpr c;
    c.ast = parse_expr(src);
    typecheck(*c.ast, schema, params);
    c.canonical = print_expr(*c.ast);
    c.type = c.ast->type;
    collect_params(*c.ast, c.param_names);
    std::sort(c.param_names.begin(), c.param_names.end());
    c.param_names.erase(std::unique(c.param_names.begin(), c.param_names.end()),
                        c.param_names.end());
    return c;
}

}  // namespace df
