#pragma once

// Convenience glue: expression string -> canonical M-tree -> codes, with the
// implicit value binding used for standalone expressions (no problem text).

#include <string>
#include <vector>

#include "mtc/codec.hpp"
#include "mtc/expr.hpp"
#include "mtc/mtree.hpp"
#include "mtc/normalize.hpp"

namespace mtc {

// Standalone value list for a bare expression: the constants 1 and pi first,
// then the distinct numeric literals sorted by value. Sorting (rather than
// reading order) keeps the binding stable across commuted spellings of the
// same expression, so "2*3+4+5" and "5+3*2+4" share one occurrence map.
inline std::vector<ValueRef> implicit_values(const Expr& e) {
    std::vector<ValueRef> numbers;
    std::function<void(const Expr&)> collect = [&](const Expr& node) {
        switch (node.kind) {
            case Expr::Kind::Number: {
                bool seen = false;
                for (const auto& v : numbers)
                    if (v.value == node.value) seen = true;
                if (!seen) numbers.push_back(ValueRef{node.literal, node.value, -1, false});
                return;
            }
            case Expr::Kind::Constant:
                return;
            case Expr::Kind::Negate:
                collect(*node.child);
                return;
            case Expr::Kind::Binary:
                collect(*node.left);
                collect(*node.right);
                return;
        }
    };
    collect(e);
    std::sort(numbers.begin(), numbers.end(),
              [](const ValueRef& a, const ValueRef& b) { return a.value < b.value; });

    std::vector<ValueRef> values;
    values.push_back(ValueRef{"1", 1.0, 0, true});
    values.push_back(ValueRef{"pi", std::numbers::pi, 1, true});
    for (auto& v : numbers) {
        v.occurrence = static_cast<int>(values.size());
        values.push_back(v);
    }
    return values;
}

// Rebind every leaf to an occurrence in `values`: constants by name, numbers
// by value (first matching occurrence). Leaf literal and value are rewritten
// to the occurrence's so that encode/decode round-trips are exact.
inline ExprPtr bind_leaves(const Expr& e, const std::vector<ValueRef>& values) {
    auto find_value = [&values](double v, const std::string& literal) -> int {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (values[i].value == v) return static_cast<int>(i);
        for (std::size_t i = 0; i < values.size(); ++i) {
            double ref = values[i].value;
            if (std::abs(ref - v) <= 1e-9 * std::max({1.0, std::abs(ref), std::abs(v)}))
                return static_cast<int>(i);
        }
        throw UnboundLiteral(v, literal);
    };
    std::function<ExprPtr(const Expr&)> walk = [&](const Expr& node) -> ExprPtr {
        switch (node.kind) {
            case Expr::Kind::Number: {
                int occ = find_value(node.value, node.literal);
                return Expr::number(values[static_cast<std::size_t>(occ)].literal,
                                    values[static_cast<std::size_t>(occ)].value, occ);
            }
            case Expr::Kind::Constant: {
                for (std::size_t i = 0; i < values.size(); ++i)
                    if (values[i].is_constant && values[i].literal == node.name)
                        return Expr::constant(node.name, static_cast<int>(i));
                throw UnboundLiteral(node.value, node.name);
            }
            case Expr::Kind::Negate:
                return Expr::negate(walk(*node.child));
            case Expr::Kind::Binary:
                return Expr::binary(node.op, walk(*node.left), walk(*node.right));
        }
        throw Error("corrupt expression node");
    };
    return walk(e);
}

// Full normal-form pipeline on a bound expression.
inline MTree canonical_mtree(const Expr& bound, std::vector<std::string>* warnings = nullptr) {
    TermSum terms = expand(bound, warnings);
    MNodePtr binary = apply_operator_conversion(terms);
    return canonicalize(to_mtree(binary));
}

struct CanonicalResult {
    std::vector<ValueRef> values;
    MTree tree;
    std::string serialization;
    double value = 0.0;
};

// Parse, bind implicitly, canonicalize, evaluate.
inline CanonicalResult canonicalize_expression(const std::string& text) {
    ExprPtr parsed = parse_expression(text);
    CanonicalResult r;
    r.values = implicit_values(*parsed);
    ExprPtr bound = bind_leaves(*parsed, r.values);
    r.tree = canonical_mtree(*bound);
    r.serialization = serialize(r.tree);
    r.value = eval_mtree(r.tree);
    return r;
}

}  // namespace mtc
