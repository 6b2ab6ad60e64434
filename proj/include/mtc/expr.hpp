#pragma once

// Binary AST of arithmetic solution expressions, with a recursive-descent
// parser, a minimal-bracket unparser and an IEEE-double evaluator.
//
// Grammar (whitespace insignificant, "x=" prefix stripped):
//   sum    := product (('+'|'-') product)*
//   product:= unary (('*'|'x-times'|'/'|'x-div') unary)*
//   unary  := '-' unary | power
//   power  := atom ('^' unary)?          (right associative)
//   atom   := number | 'pi' | '(' sum ')'
// '*'/'×' and '/'/'÷' are synonyms. Unary minus binds tighter than '*' but
// looser than '^', so "-2^2" is -(2^2).

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "mtc/errors.hpp"

namespace mtc {

enum class BinOp { Plus, Minus, Times, Divide, Power };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

// Immutable expression node. Exactly one of the four kinds is populated.
struct Expr {
    enum class Kind { Number, Constant, Binary, Negate };

    Kind kind;

    // Number: the literal exactly as written plus its parsed value.
    // `occurrence` indexes the problem's value list V once bound (-1 = unbound).
    std::string literal;
    double value = 0.0;
    int occurrence = -1;

    // Constant: name is "1" or "pi".
    std::string name;

    // Binary
    BinOp op = BinOp::Plus;
    ExprPtr left, right;

    // Negate
    ExprPtr child;

    static ExprPtr number(std::string lit, double v, int occ = -1) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Number;
        e->literal = std::move(lit);
        e->value = v;
        e->occurrence = occ;
        return e;
    }
    static ExprPtr number(double v, int occ = -1) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return number(std::string(buf), v, occ);
    }
    static ExprPtr constant(std::string n, int occ = -1) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Constant;
        e->name = std::move(n);
        e->value = e->name == "pi" ? std::numbers::pi : 1.0;
        e->occurrence = occ;
        return e;
    }
    static ExprPtr binary(BinOp o, ExprPtr l, ExprPtr r) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Binary;
        e->op = o;
        e->left = std::move(l);
        e->right = std::move(r);
        return e;
    }
    static ExprPtr negate(ExprPtr c) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Negate;
        e->child = std::move(c);
        return e;
    }
};

inline bool expr_equal(const Expr& a, const Expr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case Expr::Kind::Number:
            return a.literal == b.literal;
        case Expr::Kind::Constant:
            return a.name == b.name;
        case Expr::Kind::Binary:
            return a.op == b.op && expr_equal(*a.left, *b.left) && expr_equal(*a.right, *b.right);
        case Expr::Kind::Negate:
            return expr_equal(*a.child, *b.child);
    }
    return false;
}

namespace detail {

class ExprParser {
public:
    explicit ExprParser(std::string_view text) : text_(text) {}

    ExprPtr parse() {
        skip_ws();
        // A leading "x=" (the unknown alone on the left) is permitted and dropped.
        if (pos_ + 1 < text_.size() && (text_[pos_] == 'x' || text_[pos_] == 'X')) {
            std::size_t save = pos_;
            ++pos_;
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == '=') {
                ++pos_;
            } else {
                pos_ = save;
            }
        }
        skip_ws();
        if (pos_ >= text_.size()) throw EmptyInput();
        ExprPtr e = sum();
        skip_ws();
        if (pos_ < text_.size()) throw SyntaxError(pos_, "end of input");
        return e;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    // Multi-byte synonyms: '×' = C3 97, '÷' = C3 B7.
    bool eat_utf8(char a, char b) {
        skip_ws();
        if (pos_ + 1 < text_.size() && text_[pos_] == a && text_[pos_ + 1] == b) {
            pos_ += 2;
            return true;
        }
        return false;
    }

    ExprPtr sum() {
        ExprPtr e = product();
        for (;;) {
            if (eat('+')) {
                e = Expr::binary(BinOp::Plus, e, product());
            } else if (eat('-')) {
                e = Expr::binary(BinOp::Minus, e, product());
            } else {
                return e;
            }
        }
    }

    ExprPtr product() {
        ExprPtr e = unary();
        for (;;) {
            if (eat('*') || eat_utf8('\xc3', '\x97')) {
                e = Expr::binary(BinOp::Times, e, unary());
            } else if (eat('/') || eat_utf8('\xc3', '\xb7')) {
                e = Expr::binary(BinOp::Divide, e, unary());
            } else {
                return e;
            }
        }
    }

    ExprPtr unary() {
        if (eat('-')) return Expr::negate(unary());
        return power();
    }

    ExprPtr power() {
        ExprPtr base = atom();
        if (eat('^')) return Expr::binary(BinOp::Power, base, unary());
        return base;
    }

    ExprPtr atom() {
        skip_ws();
        if (pos_ >= text_.size()) throw SyntaxError(pos_, "number, 'pi' or '('");
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            ExprPtr e = sum();
            if (!eat(')')) throw SyntaxError(pos_, "')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c))) {
            std::size_t start = pos_;
            while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            std::string word(text_.substr(start, pos_ - start));
            if (word == "pi" || word == "PI" || word == "Pi") return Expr::constant("pi");
            throw SyntaxError(start, "number, 'pi' or '('");
        }
        // U+03C0 (CF 80)
        if (pos_ + 1 < text_.size() && c == '\xcf' && text_[pos_ + 1] == '\x80') {
            pos_ += 2;
            return Expr::constant("pi");
        }
        throw SyntaxError(pos_, "number, 'pi' or '('");
    }

    ExprPtr number() {
        std::size_t start = pos_;
        bool seen_digit = false, seen_dot = false;
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (std::isdigit(static_cast<unsigned char>(c))) {
                seen_digit = true;
                ++pos_;
            } else if (c == '.' && !seen_dot) {
                seen_dot = true;
                ++pos_;
            } else {
                break;
            }
        }
        if (!seen_digit) throw SyntaxError(start, "digit");
        std::string lit(text_.substr(start, pos_ - start));
        if (lit == "1") return Expr::constant("1");  // the injected constant one
        double v = std::stod(lit);
        return Expr::number(std::move(lit), v);
    }
};

inline int precedence_of(const Expr& e) {
    switch (e.kind) {
        case Expr::Kind::Number:
        case Expr::Kind::Constant:
            return 100;
        case Expr::Kind::Negate:
            return 3;
        case Expr::Kind::Binary:
            switch (e.op) {
                case BinOp::Plus:
                case BinOp::Minus:
                    return 1;
                case BinOp::Times:
                case BinOp::Divide:
                    return 2;
                case BinOp::Power:
                    return 4;
            }
    }
    return 100;
}

inline void unparse_rec(const Expr& e, std::string& out) {
    auto bracketed = [&out](const Expr& sub, bool need) {
        if (need) out.push_back('(');
        unparse_rec(sub, out);
        if (need) out.push_back(')');
    };
    switch (e.kind) {
        case Expr::Kind::Number:
            out += e.literal;
            return;
        case Expr::Kind::Constant:
            out += e.name;
            return;
        case Expr::Kind::Negate:
            out.push_back('-');
            bracketed(*e.child, precedence_of(*e.child) < 4);
            return;
        case Expr::Kind::Binary: {
            int p = precedence_of(e);
            char sym = e.op == BinOp::Plus     ? '+'
                       : e.op == BinOp::Minus  ? '-'
                       : e.op == BinOp::Times  ? '*'
                       : e.op == BinOp::Divide ? '/'
                                               : '^';
            if (e.op == BinOp::Power) {
                // Right associative: bracket a left child at power level or below.
                bracketed(*e.left, precedence_of(*e.left) <= 4 && precedence_of(*e.left) != 100);
                out.push_back(sym);
                bracketed(*e.right, precedence_of(*e.right) < 4);
            } else {
                bracketed(*e.left, precedence_of(*e.left) < p);
                out.push_back(sym);
                // Left associative: an equal-precedence right child keeps its brackets
                // so that parse(unparse(e)) rebuilds the same shape.
                bracketed(*e.right, precedence_of(*e.right) <= p);
            }
            return;
        }
    }
}

}  // namespace detail

inline ExprPtr parse_expression(std::string_view text) {
    return detail::ExprParser(text).parse();
}

// ASCII rendering with minimal brackets; parse(unparse(e)) is structurally e.
inline std::string unparse(const Expr& e) {
    std::string out;
    detail::unparse_rec(e, out);
    return out;
}
inline std::string unparse(const ExprPtr& e) { return unparse(*e); }

inline double eval_expr(const Expr& e) {
    switch (e.kind) {
        case Expr::Kind::Number:
            return e.value;
        case Expr::Kind::Constant:
            return e.name == "pi" ? std::numbers::pi : 1.0;
        case Expr::Kind::Negate:
            return -eval_expr(*e.child);
        case Expr::Kind::Binary: {
            double l = eval_expr(*e.left);
            double r = eval_expr(*e.right);
            switch (e.op) {
                case BinOp::Plus:
                    return l + r;
                case BinOp::Minus:
                    return l - r;
                case BinOp::Times:
                    return l * r;
                case BinOp::Divide:
                    if (r == 0.0) throw DivisionByZero(unparse(e));
                    return l / r;
                case BinOp::Power: {
                    double v = std::pow(l, r);
                    if (!std::isfinite(v)) throw NonNumericExponent(unparse(e));
                    return v;
                }
            }
        }
    }
    return 0.0;  // unreachable
}
inline double eval_expr(const ExprPtr& e) { return eval_expr(*e); }

}  // namespace mtc
