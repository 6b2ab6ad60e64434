#pragma once

// The M-tree: an M-ary tree over the four operators {+, ×, ×-, +/} whose
// sibling order carries no meaning. `to_mtree` flattens a binary tree over
// those operators with the top-down merge rules; `canonicalize` fixes a
// deterministic sibling order and assigns disambiguators to same-operator
// internal sibling groups.
//
// Canonical serialization (ASCII s-expressions, used by golden tests):
//   leaf      <bits>:<literal>:<occ>      e.g.  0_0:5:3
//   internal  (<op>[@k] <child> ...)      e.g.  (+ (×@1 0_0:2:2 0_0:3:3) 0_0:4:4)
// where <bits> is the two-bit form (sign, reciprocal) and <occ> the index of
// the value occurrence in the problem's value list.

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "mtc/errors.hpp"

namespace mtc {

enum class MOp { Add, Mul, MulNeg, AddInv };

enum class LeafForm { V, Neg, Recip, NegRecip };

inline const char* mop_symbol(MOp op) {
    switch (op) {
        case MOp::Add:
            return "+";
        case MOp::Mul:
            return "\xc3\x97";  // ×
        case MOp::MulNeg:
            return "\xc3\x97-";  // ×-
        case MOp::AddInv:
            return "+/";
    }
    return "?";
}

inline const char* form_bits(LeafForm f) {
    switch (f) {
        case LeafForm::V:
            return "0_0";
        case LeafForm::Neg:
            return "1_0";
        case LeafForm::Recip:
            return "0_1";
        case LeafForm::NegRecip:
            return "1_1";
    }
    return "?";
}

struct MNode;
using MNodePtr = std::shared_ptr<MNode>;

struct MNode {
    bool is_leaf = false;

    // Internal
    MOp op = MOp::Add;
    std::vector<MNodePtr> children;
    int disambiguator = 0;  // 1..k within a same-op sibling group, 0 = none

    // Leaf
    LeafForm form = LeafForm::V;
    std::string literal;  // decimal literal, kept for reproducible ordering
    double value = 0.0;
    int occurrence = -1;

    static MNodePtr leaf(LeafForm f, std::string lit, double v, int occ) {
        auto n = std::make_shared<MNode>();
        n->is_leaf = true;
        n->form = f;
        n->literal = std::move(lit);
        n->value = v;
        n->occurrence = occ;
        return n;
    }
    static MNodePtr internal(MOp o, std::vector<MNodePtr> ch) {
        auto n = std::make_shared<MNode>();
        n->op = o;
        n->children = std::move(ch);
        return n;
    }
};

struct MTree {
    MNodePtr root;  // always an Add node
};

inline void leaf_flip_sign(MNode& n) {
    switch (n.form) {
        case LeafForm::V:
            n.form = LeafForm::Neg;
            break;
        case LeafForm::Neg:
            n.form = LeafForm::V;
            break;
        case LeafForm::Recip:
            n.form = LeafForm::NegRecip;
            break;
        case LeafForm::NegRecip:
            n.form = LeafForm::Recip;
            break;
    }
}

inline double eval_mnode(const MNode& n) {
    if (n.is_leaf) {
        double v = n.value;
        switch (n.form) {
            case LeafForm::V:
                return v;
            case LeafForm::Neg:
                return -v;
            case LeafForm::Recip:
            case LeafForm::NegRecip:
                if (v == 0.0) throw DivisionByZero("reciprocal leaf " + n.literal);
                return n.form == LeafForm::Recip ? 1.0 / v : -1.0 / v;
        }
    }
    switch (n.op) {
        case MOp::Add: {
            double s = 0.0;
            for (const auto& c : n.children) s += eval_mnode(*c);
            return s;
        }
        case MOp::Mul:
        case MOp::MulNeg: {
            double p = 1.0;
            for (const auto& c : n.children) p *= eval_mnode(*c);
            return n.op == MOp::Mul ? p : -p;
        }
        case MOp::AddInv: {
            double s = 0.0;
            for (const auto& c : n.children) s += eval_mnode(*c);
            if (s == 0.0) throw DivisionByZero("+/ node sums to zero");
            return 1.0 / s;
        }
    }
    return 0.0;  // unreachable
}

inline double eval_mtree(const MTree& t) { return eval_mnode(*t.root); }

// Serialization of a node as seen by its parent (its own disambiguator printed
// when assigned).
inline void serialize_mnode(const MNode& n, std::string& out, bool with_own_disamb = true) {
    if (n.is_leaf) {
        out += form_bits(n.form);
        out.push_back(':');
        out += n.literal;
        out.push_back(':');
        out += std::to_string(n.occurrence);
        return;
    }
    out.push_back('(');
    out += mop_symbol(n.op);
    if (with_own_disamb && n.disambiguator > 0) {
        out.push_back('@');
        out += std::to_string(n.disambiguator);
    }
    for (const auto& c : n.children) {
        out.push_back(' ');
        serialize_mnode(*c, out);
    }
    out.push_back(')');
}

inline std::string serialize(const MTree& t) {
    std::string out;
    serialize_mnode(*t.root, out);
    return out;
}

namespace detail {

// (parent, child) pairs that merge, possibly flipping the parent operator.
// Returns the parent's new operator, or nullopt when the pair does not merge.
inline bool merge_rule(MOp parent, MOp child, MOp& parent_after) {
    if ((parent == MOp::Add && child == MOp::Add) || (parent == MOp::Mul && child == MOp::Mul) ||
        (parent == MOp::AddInv && child == MOp::Add) ||
        (parent == MOp::MulNeg && child == MOp::Mul)) {
        parent_after = parent;
        return true;
    }
    if (parent == MOp::Mul && child == MOp::MulNeg) {
        parent_after = MOp::MulNeg;
        return true;
    }
    if (parent == MOp::MulNeg && child == MOp::MulNeg) {
        parent_after = MOp::Mul;
        return true;
    }
    return false;
}

inline void merge_down(MNode& node) {
    if (node.is_leaf) return;
    // Absorb mergeable children until none fires, then recurse. Absorbing a
    // ×- child can flip this node's operator, which re-enables merges with
    // other children, so we rescan from the start after every hit.
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < node.children.size(); ++i) {
            MNode& child = *node.children[i];
            if (child.is_leaf) continue;
            MOp after;
            if (!merge_rule(node.op, child.op, after)) continue;
            std::vector<MNodePtr> grandchildren = std::move(child.children);
            node.children.erase(node.children.begin() + static_cast<long>(i));
            node.children.insert(node.children.begin() + static_cast<long>(i),
                                 grandchildren.begin(), grandchildren.end());
            node.op = after;
            changed = true;
            break;
        }
    }
    for (auto& c : node.children) merge_down(*c);
}

inline MNodePtr clone(const MNode& n) {
    auto copy = std::make_shared<MNode>(n);
    copy->children.clear();
    for (const auto& c : n.children) copy->children.push_back(clone(*c));
    return copy;
}

inline int min_occurrence(const MNode& n) {
    if (n.is_leaf) return n.occurrence;
    int best = INT32_MAX;
    for (const auto& c : n.children) best = std::min(best, min_occurrence(*c));
    return best;
}

inline void canonicalize_node(MNode& n) {
    if (n.is_leaf) return;
    for (auto& c : n.children) canonicalize_node(*c);

    struct Key {
        bool internal;
        int form_or_op;
        double value;
        std::string serial;  // leaf: literal; internal: full child serialization
        int occ;
    };
    auto key_of = [](const MNode& c) {
        Key k;
        k.internal = !c.is_leaf;
        if (c.is_leaf) {
            k.form_or_op = static_cast<int>(c.form);
            k.value = c.value;
            k.serial = c.literal;
            k.occ = c.occurrence;
        } else {
            k.form_or_op = static_cast<int>(c.op);
            k.value = 0.0;
            serialize_mnode(c, k.serial, /*with_own_disamb=*/false);
            k.occ = min_occurrence(c);
        }
        return k;
    };
    std::vector<std::pair<Key, MNodePtr>> keyed;
    keyed.reserve(n.children.size());
    for (auto& c : n.children) keyed.emplace_back(key_of(*c), c);
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        const Key &x = a.first, &y = b.first;
        if (x.internal != y.internal) return !x.internal;  // leaves first
        if (x.form_or_op != y.form_or_op) return x.form_or_op < y.form_or_op;
        if (x.value != y.value) return x.value < y.value;
        if (x.serial != y.serial) return x.serial < y.serial;
        return x.occ < y.occ;
    });
    for (std::size_t i = 0; i < keyed.size(); ++i) n.children[i] = keyed[i].second;

    // Disambiguators: 1..k in sorted order within each same-op internal group
    // of two or more; singletons carry none.
    for (auto& c : n.children)
        if (!c->is_leaf) c->disambiguator = 0;
    std::size_t i = 0;
    while (i < n.children.size()) {
        if (n.children[i]->is_leaf) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n.children.size() && !n.children[j]->is_leaf &&
               n.children[j]->op == n.children[i]->op)
            ++j;
        if (j - i >= 2)
            for (std::size_t k = i; k < j; ++k)
                n.children[k]->disambiguator = static_cast<int>(k - i + 1);
        i = j;
    }
}

}  // namespace detail

// Flatten a binary tree over the four operators into a merge-saturated M-tree
// under a "+" root. The input is not modified.
inline MTree to_mtree(const MNodePtr& binary_root) {
    MNodePtr wrapped = MNode::internal(MOp::Add, {detail::clone(*binary_root)});
    detail::merge_down(*wrapped);
    return MTree{wrapped};
}

// Deterministic sibling order + disambiguator assignment. Idempotent; two
// M-trees equal up to sibling permutation canonicalize to the same tree.
inline MTree canonicalize(const MTree& t) {
    MTree out{detail::clone(*t.root)};
    detail::canonicalize_node(*out.root);
    return out;
}

// True when no (parent, child) pair anywhere in the tree matches a merge rule.
inline bool merge_saturated(const MNode& n) {
    if (n.is_leaf) return true;
    for (const auto& c : n.children) {
        if (!c->is_leaf) {
            MOp ignored;
            if (detail::merge_rule(n.op, c->op, ignored)) return false;
        }
        if (!merge_saturated(*c)) return false;
    }
    return true;
}

}  // namespace mtc
