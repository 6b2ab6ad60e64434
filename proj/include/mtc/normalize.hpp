#pragma once

// Rewrites an expression AST into bracket-free signed-product normal form
// (a sum of Terms) and from there into a binary tree over the four M-tree
// operators {+, ×, ×-, +/}.
//
// A Term is sign × (product of factors). A factor is a value, optionally
// reciprocal, or an inverse group: the reciprocal of a sum of Terms. Sums in
// numerator position are distributed; sums in denominator position become
// inverse groups. Multiplicative literal-one factors are elided (so 1/(1/v)
// collapses to v via flag toggling) except when a term would become empty.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mtc/errors.hpp"
#include "mtc/expr.hpp"
#include "mtc/mtree.hpp"

namespace mtc {

// A bound reference to a numeric value: literal spelling, IEEE value and the
// occurrence index into the problem's value list (-1 when unbound).
struct ValueRef {
    std::string literal;
    double value = 0.0;
    int occurrence = -1;
    bool is_constant = false;
};

struct Term;

struct SignedFactor {
    int sign = +1;  // expansion hoists factor signs into the Term
    bool reciprocal = false;
    ValueRef value;            // when !is_group
    std::vector<Term> group;   // when is_group: reciprocal of the sum of these
    bool is_group = false;

    static SignedFactor of(ValueRef v, bool recip = false) {
        SignedFactor f;
        f.value = std::move(v);
        f.reciprocal = recip;
        return f;
    }
    static SignedFactor inv_group(std::vector<Term> terms) {
        SignedFactor f;
        f.group = std::move(terms);
        f.is_group = true;
        return f;
    }
};

struct Term {
    int sign = +1;
    std::vector<SignedFactor> factors;  // nonempty
};

using TermSum = std::vector<Term>;

namespace detail {

inline bool is_identity_factor(const SignedFactor& f) {
    return !f.is_group && f.sign > 0 && f.value.value == 1.0;
}

// Drop multiplicative ones, keeping at least one factor per term.
inline void elide_ones(Term& t) {
    if (t.factors.size() < 2) return;
    std::vector<SignedFactor> kept;
    kept.reserve(t.factors.size());
    for (auto& f : t.factors)
        if (!is_identity_factor(f)) kept.push_back(std::move(f));
    if (kept.empty()) kept.push_back(t.factors.front());
    t.factors = std::move(kept);
}

inline TermSum cross(const TermSum& a, const TermSum& b) {
    TermSum out;
    out.reserve(a.size() * b.size());
    for (const auto& ta : a)
        for (const auto& tb : b) {
            Term t;
            t.sign = ta.sign * tb.sign;
            t.factors = ta.factors;
            t.factors.insert(t.factors.end(), tb.factors.begin(), tb.factors.end());
            elide_ones(t);
            out.push_back(std::move(t));
        }
    return out;
}

// Reciprocal of a single term, distributing any inverted inverse group back
// into numerator position.
inline TermSum invert_term(const Term& t) {
    TermSum out{Term{t.sign, {}}};
    for (const auto& f : t.factors) {
        if (!f.is_group) {
            SignedFactor inv = f;
            inv.reciprocal = !inv.reciprocal;
            for (auto& o : out) o.factors.push_back(inv);
        } else if (f.reciprocal) {
            // 1/(sum) appearing un-reciprocal; inverting restores the group.
            SignedFactor inv = f;
            inv.reciprocal = false;
            for (auto& o : out) o.factors.push_back(inv);
        } else {
            out = cross(out, f.group);
        }
    }
    for (auto& o : out) {
        if (o.factors.empty()) o.factors.push_back(SignedFactor::of(ValueRef{"1", 1.0, -1, true}));
        elide_ones(o);
    }
    return out;
}

inline long long integer_exponent(const Expr& e) {
    const Expr* node = &e;
    if (node->kind == Expr::Kind::Negate)
        throw UnsupportedExponent("negative exponent " + unparse(e));
    if (node->kind == Expr::Kind::Constant && node->name == "1") return 1;
    if (node->kind != Expr::Kind::Number)
        throw UnsupportedExponent("exponent is not a literal: " + unparse(e));
    double v = node->value;
    long long k = static_cast<long long>(v);
    if (static_cast<double>(k) != v) throw UnsupportedExponent("non-integer exponent " + node->literal);
    return k;
}

}  // namespace detail

inline ValueRef value_ref_of(const Expr& leaf) {
    if (leaf.kind == Expr::Kind::Number)
        return ValueRef{leaf.literal, leaf.value, leaf.occurrence, false};
    // Constants keep the value stored on the node: standalone expressions use
    // the mathematical pi, bound dataset expressions the corpus convention.
    return ValueRef{leaf.name, leaf.value, leaf.occurrence, true};
}

// Bracket removal: flatten additions, distribute numerator products over sums,
// turn denominator sums into inverse groups, expand small integer powers.
inline TermSum expand(const Expr& e, std::vector<std::string>* warnings = nullptr) {
    using detail::cross;
    switch (e.kind) {
        case Expr::Kind::Number:
        case Expr::Kind::Constant:
            return {Term{+1, {SignedFactor::of(value_ref_of(e))}}};
        case Expr::Kind::Negate: {
            TermSum inner = expand(*e.child, warnings);
            for (auto& t : inner) t.sign = -t.sign;
            return inner;
        }
        case Expr::Kind::Binary:
            switch (e.op) {
                case BinOp::Plus:
                case BinOp::Minus: {
                    TermSum out = expand(*e.left, warnings);
                    TermSum rhs = expand(*e.right, warnings);
                    if (e.op == BinOp::Minus)
                        for (auto& t : rhs) t.sign = -t.sign;
                    out.insert(out.end(), rhs.begin(), rhs.end());
                    return out;
                }
                case BinOp::Times:
                    return cross(expand(*e.left, warnings), expand(*e.right, warnings));
                case BinOp::Divide: {
                    TermSum num = expand(*e.left, warnings);
                    TermSum den = expand(*e.right, warnings);
                    if (den.size() == 1) return cross(num, detail::invert_term(den[0]));
                    return cross(num, {Term{+1, {SignedFactor::inv_group(std::move(den))}}});
                }
                case BinOp::Power: {
                    long long k = detail::integer_exponent(*e.right);
                    if (k < 0) throw UnsupportedExponent("negative exponent");
                    if (k > 12)
                        throw UnsupportedExponent("exponent " + std::to_string(k) + " > 12");
                    if (k == 0) {
                        if (warnings)
                            warnings->push_back("power 0 in " + unparse(e) + " replaced by 1");
                        return {Term{+1, {SignedFactor::of(ValueRef{"1", 1.0, -1, true})}}};
                    }
                    TermSum base = expand(*e.left, warnings);
                    TermSum out = base;
                    for (long long i = 1; i < k; ++i) out = cross(out, base);
                    return out;
                }
            }
    }
    return {};  // unreachable
}

// Binary tree over the four M-tree operators.
//   division  -> × with a reciprocal leaf
//   subtraction -> + with an opposite leaf
//   negative multi-factor term -> ×-
//   inverse group -> +/
// Chains nest left-deep; the M-tree merge pass removes the nesting.
inline MNodePtr apply_operator_conversion(const TermSum& terms) {
    struct Builder {
        MNodePtr term_node(const Term& t) {
            std::vector<MNodePtr> parts;
            parts.reserve(t.factors.size());
            for (const auto& f : t.factors) {
                if (!f.is_group) {
                    LeafForm form = f.reciprocal ? LeafForm::Recip : LeafForm::V;
                    auto leaf = MNode::leaf(form, f.value.literal, f.value.value, f.value.occurrence);
                    if (f.sign < 0) leaf_flip_sign(*leaf);
                    parts.push_back(std::move(leaf));
                } else {
                    parts.push_back(group_node(f.group));
                }
            }
            MNodePtr node = parts[0];
            for (std::size_t i = 1; i < parts.size(); ++i)
                node = MNode::internal(MOp::Mul, {node, parts[i]});
            if (t.sign < 0) {
                if (!node->is_leaf && node->op == MOp::Mul) {
                    node->op = MOp::MulNeg;
                } else if (node->is_leaf) {
                    leaf_flip_sign(*node);
                } else {
                    node = MNode::internal(MOp::MulNeg, {node});
                }
            }
            return node;
        }

        MNodePtr sum_node(const TermSum& terms) {
            MNodePtr node = term_node(terms[0]);
            for (std::size_t i = 1; i < terms.size(); ++i)
                node = MNode::internal(MOp::Add, {node, term_node(terms[i])});
            return node;
        }

        MNodePtr group_node(const TermSum& terms) {
            MNodePtr sum = sum_node(terms);
            if (!sum->is_leaf && sum->op == MOp::Add) {
                sum->op = MOp::AddInv;
                return sum;
            }
            return MNode::internal(MOp::AddInv, {sum});
        }
    } builder;

    return builder.sum_node(terms);
}

// Render a term sum back to an expression; used to test that expansion is a
// fixpoint. Factor order: numerator values, then reciprocal values, then
// inverse groups.
inline ExprPtr terms_to_expr(const TermSum& terms) {
    auto value_expr = [](const ValueRef& v) {
        if (v.is_constant) return Expr::constant(v.literal, v.occurrence);
        return Expr::number(v.literal, v.value, v.occurrence);
    };
    std::function<ExprPtr(const TermSum&)> sum_expr = [&](const TermSum& ts) -> ExprPtr {
        ExprPtr acc;
        for (const auto& t : ts) {
            ExprPtr num;
            for (const auto& f : t.factors)
                if (!f.is_group && !f.reciprocal)
                    num = num ? Expr::binary(BinOp::Times, num, value_expr(f.value))
                              : value_expr(f.value);
            ExprPtr e = num ? num : Expr::constant("1");
            for (const auto& f : t.factors) {
                if (!f.is_group && f.reciprocal)
                    e = Expr::binary(BinOp::Divide, e, value_expr(f.value));
                else if (f.is_group)
                    e = Expr::binary(BinOp::Divide, e, sum_expr(f.group));
            }
            if (!acc)
                acc = t.sign < 0 ? Expr::negate(e) : e;
            else
                acc = Expr::binary(t.sign < 0 ? BinOp::Minus : BinOp::Plus, acc, e);
        }
        return acc;
    };
    return sum_expr(terms);
}

}  // namespace mtc
