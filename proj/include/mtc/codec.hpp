#pragma once

// M-tree codes: one code per leaf, two form bits plus the operator path from
// the root to the leaf's parent, with "@k" disambiguator suffixes on
// same-operator internal siblings. "None" marks a value occurrence absent
// from the tree. Codes group per occurrence into multisets, count up into
// vectors over a vocabulary, and reduce back to the unique canonical M-tree.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtc/errors.hpp"
#include "mtc/mtree.hpp"
#include "mtc/normalize.hpp"

namespace mtc {

inline const std::string kNoneCode = "None";

struct CodePathElement {
    MOp op;
    int disambiguator = 0;
};

struct MTreeCode {
    bool none = false;
    int sign_bit = 0;
    int recip_bit = 0;
    std::vector<CodePathElement> path;  // root first; path[0].op is always Add

    std::string str() const {
        if (none) return kNoneCode;
        std::string out = std::to_string(sign_bit) + "_" + std::to_string(recip_bit);
        for (const auto& el : path) {
            out.push_back('_');
            out += mop_symbol(el.op);
            if (el.disambiguator > 0) {
                out.push_back('@');
                out += std::to_string(el.disambiguator);
            }
        }
        return out;
    }

    static MTreeCode parse(const std::string& s) {
        MTreeCode code;
        if (s == kNoneCode) {
            code.none = true;
            return code;
        }
        std::vector<std::string> parts;
        std::size_t start = 0;
        while (start <= s.size()) {
            std::size_t us = s.find('_', start);
            if (us == std::string::npos) {
                parts.push_back(s.substr(start));
                break;
            }
            parts.push_back(s.substr(start, us - start));
            start = us + 1;
        }
        if (parts.size() < 3 || (parts[0] != "0" && parts[0] != "1") ||
            (parts[1] != "0" && parts[1] != "1"))
            throw Error("malformed code string: " + s);
        code.sign_bit = parts[0] == "1";
        code.recip_bit = parts[1] == "1";
        for (std::size_t i = 2; i < parts.size(); ++i) {
            std::string tok = parts[i];
            CodePathElement el;
            std::size_t at = tok.find('@');
            if (at != std::string::npos) {
                el.disambiguator = std::stoi(tok.substr(at + 1));
                tok = tok.substr(0, at);
            }
            if (tok == "+")
                el.op = MOp::Add;
            else if (tok == "\xc3\x97")
                el.op = MOp::Mul;
            else if (tok == "\xc3\x97-")
                el.op = MOp::MulNeg;
            else if (tok == "+/")
                el.op = MOp::AddInv;
            else
                throw Error("malformed code string: " + s);
            code.path.push_back(el);
        }
        if (code.path.empty() || code.path[0].op != MOp::Add || code.path[0].disambiguator != 0)
            throw InvalidRoot(s);
        return code;
    }
};

// One sorted multiset of code strings per value occurrence.
using CodeSets = std::vector<std::vector<std::string>>;

struct CodeVocab {
    std::vector<std::string> codes;  // codes[0] == "None"
    std::unordered_map<std::string, int> index;

    int size() const { return static_cast<int>(codes.size()); }
    std::optional<int> find(const std::string& c) const {
        auto it = index.find(c);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }
};

using CodeVector = std::vector<int>;

namespace detail {

inline void collect_codes(const MNode& n, std::vector<CodePathElement>& path, CodeSets& out) {
    if (n.is_leaf) {
        MTreeCode code;
        code.sign_bit = (n.form == LeafForm::Neg || n.form == LeafForm::NegRecip) ? 1 : 0;
        code.recip_bit = (n.form == LeafForm::Recip || n.form == LeafForm::NegRecip) ? 1 : 0;
        code.path = path;
        if (n.occurrence < 0 || n.occurrence >= static_cast<int>(out.size()))
            throw Error("leaf occurrence " + std::to_string(n.occurrence) +
                        " outside value list of size " + std::to_string(out.size()));
        out[static_cast<std::size_t>(n.occurrence)].push_back(code.str());
        return;
    }
    path.push_back({n.op, n.disambiguator});
    for (const auto& c : n.children) collect_codes(*c, path, out);
    path.pop_back();
}

}  // namespace detail

// Per-occurrence code multisets of a canonical M-tree over m value occurrences.
// Occurrences with no leaf get {"None"}.
inline CodeSets encode(const MTree& canonical_tree, int value_count) {
    CodeSets out(static_cast<std::size_t>(value_count));
    std::vector<CodePathElement> path;
    detail::collect_codes(*canonical_tree.root, path, out);
    for (auto& set : out) {
        if (set.empty())
            set.push_back(kNoneCode);
        else
            std::sort(set.begin(), set.end());
    }
    return out;
}

// B = {"None"} ∪ all distinct codes, "None" at index 0, rest sorted.
inline CodeVocab build_vocab(const std::vector<CodeSets>& corpus) {
    std::vector<std::string> distinct;
    for (const auto& sets : corpus)
        for (const auto& set : sets)
            for (const auto& c : set)
                if (c != kNoneCode) distinct.push_back(c);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    CodeVocab vocab;
    vocab.codes.push_back(kNoneCode);
    vocab.codes.insert(vocab.codes.end(), distinct.begin(), distinct.end());
    for (int i = 0; i < static_cast<int>(vocab.codes.size()); ++i) vocab.index[vocab.codes[i]] = i;
    return vocab;
}

inline std::vector<CodeVector> vectorize(const CodeSets& codesets, const CodeVocab& vocab) {
    std::vector<CodeVector> out;
    out.reserve(codesets.size());
    for (std::size_t i = 0; i < codesets.size(); ++i) {
        CodeVector counts(static_cast<std::size_t>(vocab.size()), 0);
        for (const auto& c : codesets[i]) {
            auto idx = vocab.find(c);
            if (!idx) throw UnknownCode(c, static_cast<int>(i));
            ++counts[static_cast<std::size_t>(*idx)];
        }
        out.push_back(std::move(counts));
    }
    return out;
}

// Integer counts back to the code multiset. Index 0 ("None") entries are kept
// only when the occurrence has no other code.
inline CodeSets counts_to_codesets(const std::vector<CodeVector>& vectors, const CodeVocab& vocab) {
    CodeSets out;
    out.reserve(vectors.size());
    for (const auto& counts : vectors) {
        if (static_cast<int>(counts.size()) != vocab.size())
            throw ShapeMismatch("vector length " + std::to_string(counts.size()) +
                                " vs vocabulary size " + std::to_string(vocab.size()));
        std::vector<std::string> set;
        for (std::size_t k = 1; k < counts.size(); ++k)
            for (int r = 0; r < counts[k]; ++r) set.push_back(vocab.codes[k]);
        if (set.empty()) set.push_back(kNoneCode);
        out.push_back(std::move(set));
    }
    return out;
}

// Rebuild the canonical M-tree from per-occurrence code multisets. Internal
// nodes are named by their disambiguated path prefix, so building a node per
// distinct prefix and hanging leaves off full paths reproduces the tree.
inline MTree decode(const CodeSets& codesets, const std::vector<ValueRef>& values) {
    struct Trie {
        MOp op = MOp::Add;
        int disambiguator = 0;
        std::map<std::string, Trie> children;
        std::vector<MNodePtr> leaves;
    };
    Trie root;
    bool any = false;

    for (std::size_t i = 0; i < codesets.size(); ++i) {
        if (i >= values.size()) throw Error("codes refer to more occurrences than values given");
        for (const auto& code_str : codesets[i]) {
            MTreeCode code = MTreeCode::parse(code_str);
            if (code.none) continue;
            any = true;
            Trie* node = &root;
            for (std::size_t p = 1; p < code.path.size(); ++p) {
                const CodePathElement& el = code.path[p];
                std::string key = std::string(mop_symbol(el.op)) +
                                  (el.disambiguator > 0 ? "@" + std::to_string(el.disambiguator) : "");
                Trie& child = node->children[key];
                child.op = el.op;
                child.disambiguator = el.disambiguator;
                node = &child;
            }
            LeafForm form = code.sign_bit ? (code.recip_bit ? LeafForm::NegRecip : LeafForm::Neg)
                                          : (code.recip_bit ? LeafForm::Recip : LeafForm::V);
            const ValueRef& v = values[i];
            node->leaves.push_back(MNode::leaf(form, v.literal, v.value, static_cast<int>(i)));
        }
    }
    if (!any) throw EmptyTree();

    // A sibling group mixing bare and disambiguated nodes of one operator
    // cannot come from a canonical encoding.
    std::function<MNodePtr(const Trie&, MOp)> build = [&](const Trie& t, MOp op) -> MNodePtr {
        for (const auto& [key, child] : t.children) {
            (void)key;
            if (child.disambiguator == 0) {
                for (const auto& [key2, other] : t.children) {
                    (void)key2;
                    if (&other != &child && other.op == child.op && other.disambiguator > 0)
                        throw InconsistentPath("operator " + std::string(mop_symbol(child.op)) +
                                               " appears both bare and disambiguated in one group");
                }
            }
        }
        std::vector<MNodePtr> children = t.leaves;
        for (const auto& [key, child] : t.children) {
            (void)key;
            children.push_back(build(child, child.op));
        }
        auto node = MNode::internal(op, std::move(children));
        node->disambiguator = t.disambiguator;
        return node;
    };
    MTree tree{build(root, MOp::Add)};
    return canonicalize(tree);
}

inline MTree decode(const std::vector<CodeVector>& vectors, const CodeVocab& vocab,
                    const std::vector<ValueRef>& values) {
    return decode(counts_to_codesets(vectors, vocab), values);
}

// Codes of the post-conversion, pre-merge binary tree, computed the same way
// as M-tree codes (path from the binary root to the leaf's parent, "@1"/"@2"
// on same-operator internal sibling pairs). Only used for the code-set
// comparison statistic; these codes are not decoded.
inline CodeSets binary_tree_codes(const MNodePtr& binary_root, int value_count) {
    CodeSets out(static_cast<std::size_t>(value_count));
    auto emit_leaf = [&out](const MNode& leaf, const std::vector<CodePathElement>& path) {
        MTreeCode code;
        code.sign_bit = (leaf.form == LeafForm::Neg || leaf.form == LeafForm::NegRecip) ? 1 : 0;
        code.recip_bit = (leaf.form == LeafForm::Recip || leaf.form == LeafForm::NegRecip) ? 1 : 0;
        code.path = path;  // bits alone when the path is empty
        if (leaf.occurrence >= 0 && leaf.occurrence < static_cast<int>(out.size()))
            out[static_cast<std::size_t>(leaf.occurrence)].push_back(code.str());
    };
    // own_disamb marks this node on its children's paths; it is 1/2 when the
    // node and its sibling are internal with the same operator.
    std::function<void(const MNode&, std::vector<CodePathElement>&, int)> walk =
        [&](const MNode& n, std::vector<CodePathElement>& path, int own_disamb) {
            if (n.is_leaf) {
                emit_leaf(n, path);
                return;
            }
            bool twins = n.children.size() == 2 && !n.children[0]->is_leaf &&
                         !n.children[1]->is_leaf && n.children[0]->op == n.children[1]->op;
            path.push_back({n.op, own_disamb});
            for (std::size_t idx = 0; idx < n.children.size(); ++idx)
                walk(*n.children[idx], path, twins ? static_cast<int>(idx) + 1 : 0);
            path.pop_back();
        };
    std::vector<CodePathElement> path;
    walk(*binary_root, path, 0);
    for (auto& set : out) {
        if (set.empty())
            set.push_back(kNoneCode);
        else
            std::sort(set.begin(), set.end());
    }
    return out;
}

struct CodeSetStats {
    int set_size = 0;         // distinct codes in the training split, "None" included
    double coverage_pct = 0;  // % of test problems whose codes are all known
};

inline CodeSetStats code_set_stats(const std::vector<CodeSets>& train,
                                   const std::vector<CodeSets>& test) {
    CodeVocab vocab = build_vocab(train);
    CodeSetStats stats;
    stats.set_size = vocab.size();
    if (test.empty()) {
        stats.coverage_pct = 100.0;
        return stats;
    }
    int covered = 0;
    for (const auto& sets : test) {
        bool ok = true;
        for (const auto& set : sets)
            for (const auto& c : set)
                if (!vocab.find(c)) ok = false;
        covered += ok;
    }
    stats.coverage_pct = 100.0 * covered / static_cast<double>(test.size());
    return stats;
}

}  // namespace mtc
