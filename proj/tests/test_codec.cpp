#include <doctest.h>

#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "mtc/codec.hpp"
#include "mtc/pipeline.hpp"
#include "test_util.hpp"

using namespace mtc;

namespace {

// Literal implementation of the reduction described for the codes: scan the
// second part of each code from back to front and grow the tree bottom-up.
// Kept independent of the prefix-trie decoder on purpose.
MTree decode_back_to_front(const CodeSets& codesets, const std::vector<ValueRef>& values) {
    struct Item {
        std::vector<std::string> attach_path;  // token strings, root first
        MNodePtr node;
    };
    auto token_of = [](const CodePathElement& el) {
        std::string t = mop_symbol(el.op);
        if (el.disambiguator > 0) t += "@" + std::to_string(el.disambiguator);
        return t;
    };
    std::vector<Item> items;
    std::size_t max_depth = 0;
    for (std::size_t i = 0; i < codesets.size(); ++i) {
        for (const auto& s : codesets[i]) {
            MTreeCode code = MTreeCode::parse(s);
            if (code.none) continue;
            Item item;
            for (const auto& el : code.path) item.attach_path.push_back(token_of(el));
            LeafForm form = code.sign_bit ? (code.recip_bit ? LeafForm::NegRecip : LeafForm::Neg)
                                          : (code.recip_bit ? LeafForm::Recip : LeafForm::V);
            item.node = MNode::leaf(form, values[i].literal, values[i].value, static_cast<int>(i));
            max_depth = std::max(max_depth, item.attach_path.size());
            items.push_back(std::move(item));
        }
    }
    REQUIRE(!items.empty());

    auto op_of_token = [](const std::string& tok) {
        std::string bare = tok.substr(0, tok.find('@'));
        if (bare == "+") return MOp::Add;
        if (bare == "\xc3\x97") return MOp::Mul;
        if (bare == "\xc3\x97-") return MOp::MulNeg;
        return MOp::AddInv;
    };
    auto disamb_of_token = [](const std::string& tok) {
        auto at = tok.find('@');
        return at == std::string::npos ? 0 : std::stoi(tok.substr(at + 1));
    };

    for (std::size_t depth = max_depth; depth >= 2; --depth) {
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (items[i].attach_path.size() != depth) continue;
            std::string key;
            for (const auto& t : items[i].attach_path) key += t + "\x1f";
            groups[key].push_back(i);
        }
        std::vector<Item> next;
        std::vector<bool> consumed(items.size(), false);
        for (const auto& [key, idxs] : groups) {
            (void)key;
            Item merged;
            merged.attach_path = items[idxs[0]].attach_path;
            std::string last = merged.attach_path.back();
            merged.attach_path.pop_back();
            std::vector<MNodePtr> children;
            for (std::size_t i : idxs) {
                children.push_back(items[i].node);
                consumed[i] = true;
            }
            merged.node = MNode::internal(op_of_token(last), std::move(children));
            merged.node->disambiguator = disamb_of_token(last);
            next.push_back(std::move(merged));
        }
        for (std::size_t i = 0; i < items.size(); ++i)
            if (!consumed[i]) next.push_back(items[i]);
        items = std::move(next);
    }

    std::vector<MNodePtr> top;
    for (auto& item : items) {
        REQUIRE(item.attach_path.size() == 1);
        REQUIRE(item.attach_path[0] == "+");
        top.push_back(item.node);
    }
    return canonicalize(MTree{MNode::internal(MOp::Add, std::move(top))});
}

void shuffle_siblings(testutil::Rng& rng, MNode& n) {
    if (n.is_leaf) return;
    for (std::size_t i = n.children.size(); i > 1; --i) {
        std::size_t j = rng() % i;
        std::swap(n.children[i - 1], n.children[j]);
    }
    for (auto& c : n.children) shuffle_siblings(rng, *c);
}

}  // namespace

TEST_CASE("worked example: -8 directly under the root codes to 1_0_+") {
    auto r = canonicalize_expression("9-8");
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    // values: [1, pi, 8, 9]
    REQUIRE(r.values[2].value == 8.0);
    CHECK(sets[2] == std::vector<std::string>{"1_0_+"});
    CHECK(sets[3] == std::vector<std::string>{"0_0_+"});
}

TEST_CASE("worked example: leaves under root->MUL->ADDINV share second part +_x_+/") {
    // 5*2/(1+3): term [5, 2, 1/(1+3)] -> MUL{5, 2, ADDINV{1, 3}}
    auto r = canonicalize_expression("5*2/(1+3)");
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    // values: [1, pi, 2, 3, 5]; the literal 1 binds to the constant.
    CHECK(sets[0] == std::vector<std::string>{"0_0_+_\xc3\x97_+/"});
    CHECK(sets[3] == std::vector<std::string>{"0_0_+_\xc3\x97_+/"});
    CHECK(sets[2] == std::vector<std::string>{"0_0_+_\xc3\x97"});
    CHECK(sets[4] == std::vector<std::string>{"0_0_+_\xc3\x97"});
    CHECK(eval_mtree(r.tree) == doctest::Approx(2.5));
}

TEST_CASE("worked example: unused pi gets None and a one-hot vector at index 0") {
    auto r = canonicalize_expression("2*3+4+5");
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    CHECK(sets[1] == std::vector<std::string>{"None"});

    CodeVocab vocab = build_vocab({sets});
    auto vectors = vectorize(sets, vocab);
    CHECK(vectors[1][0] == 1);
    CHECK(std::accumulate(vectors[1].begin(), vectors[1].end(), 0) == 1);
}

TEST_CASE("worked example: 2*3+4+5 codes") {
    auto r = canonicalize_expression("2*3+4+5");
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    CHECK(sets[2] == std::vector<std::string>{"0_0_+_\xc3\x97"});
    CHECK(sets[3] == std::vector<std::string>{"0_0_+_\xc3\x97"});
    CHECK(sets[4] == std::vector<std::string>{"0_0_+"});
    CHECK(sets[5] == std::vector<std::string>{"0_0_+"});
    MTree back = decode(sets, r.values);
    CHECK(eval_mtree(back) == doctest::Approx(15.0));
    CHECK(serialize(back) == r.serialization);
}

TEST_CASE("single-operand internal nodes survive the round trip") {
    // 5 - 1/(2+3): the negated inverse group becomes a one-child ×- node
    auto r = canonicalize_expression("5-1/(2+3)");
    CHECK(eval_mtree(r.tree) == doctest::Approx(4.8));
    bool saw_single_child_internal = false;
    std::function<void(const MNode&)> walk = [&](const MNode& n) {
        if (n.is_leaf) return;
        if (n.children.size() == 1) saw_single_child_internal = true;
        for (const auto& c : n.children) walk(*c);
    };
    walk(*r.tree.root);
    CHECK(saw_single_child_internal);
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    CHECK(serialize(decode(sets, r.values)) == r.serialization);
}

TEST_CASE("decode: single negative code") {
    std::vector<ValueRef> values{{"1", 1.0, 0, true}, {"pi", 3.14, 1, true}, {"6", 6.0, 2, false}};
    CodeSets sets{{"None"}, {"None"}, {"1_0_+"}};
    MTree t = decode(sets, values);
    CHECK(eval_mtree(t) == doctest::Approx(-6.0));
}

TEST_CASE("decode: disambiguated MUL siblings stay distinct") {
    auto r = canonicalize_expression("2*3+4*5");
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    bool saw1 = false, saw2 = false;
    for (const auto& set : sets)
        for (const auto& c : set) {
            if (c.find("@1") != std::string::npos) saw1 = true;
            if (c.find("@2") != std::string::npos) saw2 = true;
        }
    CHECK(saw1);
    CHECK(saw2);
    MTree back = decode(sets, r.values);
    CHECK(serialize(back) == r.serialization);
    REQUIRE(back.root->children.size() == 2);
    CHECK(!back.root->children[0]->is_leaf);
    CHECK(!back.root->children[1]->is_leaf);
}

TEST_CASE("decode errors") {
    std::vector<ValueRef> values{{"1", 1.0, 0, true}, {"2", 2.0, 1, false}};
    CHECK_THROWS_AS(decode(CodeSets{{"None"}, {"None"}}, values), EmptyTree);
    CHECK_THROWS_AS(decode(CodeSets{{"0_0_\xc3\x97"}, {"None"}}, values), InvalidRoot);
    // same operator both bare and disambiguated in one sibling group
    CHECK_THROWS_AS(
        decode(CodeSets{{"0_0_+_\xc3\x97"}, {"0_0_+_\xc3\x97@1"}}, values), InconsistentPath);
}

TEST_CASE("vocabulary: None reserved at index 0, rest sorted") {
    auto r = canonicalize_expression("2+3");
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    CodeVocab vocab = build_vocab({sets});
    REQUIRE(vocab.codes.size() == 2);
    CHECK(vocab.codes[0] == "None");
    CHECK(vocab.codes[1] == "0_0_+");

    CHECK_THROWS_AS(vectorize(CodeSets{{"9_9_nope"}}, vocab), UnknownCode);
}

TEST_CASE("vectorize: multiplicity counts and empty problems") {
    // v appears twice with the same code: 2*3+2*4 -> 2 has two × codes
    auto r = canonicalize_expression("2*3+2*4");
    CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
    CodeVocab vocab = build_vocab({sets});
    auto vectors = vectorize(sets, vocab);
    int occ2 = 2;  // [1, pi, 2, 3, 4]
    int total = std::accumulate(vectors[occ2].begin(), vectors[occ2].end(), 0);
    CHECK(total == 2);
    CHECK(vectorize(CodeSets{}, vocab).empty());

    // integer read-back reproduces the multiset
    CodeSets round = counts_to_codesets(vectors, vocab);
    CHECK(round == sets);
}

TEST_CASE("property: decode(encode(t)) is the identity on canonical trees") {
    testutil::Rng rng(120824);
    for (int i = 0; i < 3000; ++i) {
        ExprPtr e = testutil::rand_safe_expr(rng);
        CanonicalResult r;
        try {
            r = canonicalize_expression(unparse(e));
        } catch (const UnsupportedExponent&) {
            continue;
        }
        CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
        MTree back = decode(sets, r.values);
        if (serialize(back) != r.serialization) {
            CAPTURE(unparse(e));
            REQUIRE(serialize(back) == r.serialization);
        }
        CHECK(testutil::close_rel(eval_mtree(back), r.value, 1e-9));
    }
}

TEST_CASE("property: prefix-trie decode equals the back-to-front scan") {
    testutil::Rng rng(90125);
    for (int i = 0; i < 2000; ++i) {
        ExprPtr e = testutil::rand_safe_expr(rng);
        CanonicalResult r;
        try {
            r = canonicalize_expression(unparse(e));
        } catch (const UnsupportedExponent&) {
            continue;
        }
        CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
        MTree trie = decode(sets, r.values);
        MTree scan = decode_back_to_front(sets, r.values);
        CHECK(serialize(trie) == serialize(scan));
    }
}

TEST_CASE("property: per-occurrence code multisets ignore sibling order") {
    testutil::Rng rng(55555);
    for (int i = 0; i < 1000; ++i) {
        ExprPtr e = testutil::rand_safe_expr(rng);
        CanonicalResult r;
        try {
            r = canonicalize_expression(unparse(e));
        } catch (const UnsupportedExponent&) {
            continue;
        }
        CodeSets reference = encode(r.tree, static_cast<int>(r.values.size()));
        MTree shuffled{mtc::detail::clone(*r.tree.root)};
        shuffle_siblings(rng, *shuffled.root);
        CodeSets again = encode(canonicalize(shuffled), static_cast<int>(r.values.size()));
        CHECK(again == reference);
    }
}

TEST_CASE("property: leaves sharing a parent share their second part") {
    testutil::Rng rng(11311);
    for (int i = 0; i < 1000; ++i) {
        ExprPtr e = testutil::rand_safe_expr(rng);
        CanonicalResult r;
        try {
            r = canonicalize_expression(unparse(e));
        } catch (const UnsupportedExponent&) {
            continue;
        }
        // Collect every emitted code string together with the identity of the
        // parent node its leaf hangs off, then check second parts agree
        // within each parent.
        CodeSets sets = encode(r.tree, static_cast<int>(r.values.size()));
        std::map<const MNode*, std::vector<std::string>> by_parent;
        std::function<void(const MNode&, std::string)> walk = [&](const MNode& n,
                                                                  std::string path) {
            if (n.is_leaf) return;
            path += path.empty() ? "" : "_";
            path += mop_symbol(n.op);
            if (n.disambiguator > 0) path += "@" + std::to_string(n.disambiguator);
            for (const auto& c : n.children) {
                if (c->is_leaf)
                    by_parent[&n].push_back(path);
                else
                    walk(*c, path);
            }
        };
        walk(*r.tree.root, "");
        for (const auto& [parent, parts] : by_parent) {
            (void)parent;
            for (const auto& p : parts) CHECK(p == parts.front());
        }
        // And the emitted codes' second parts are exactly those paths.
        std::multiset<std::string> emitted_parts;
        for (const auto& set : sets)
            for (const auto& c : set)
                if (c != "None") emitted_parts.insert(c.substr(4));
        std::multiset<std::string> derived_parts;
        for (const auto& [parent, parts] : by_parent) {
            (void)parent;
            for (const auto& p : parts) derived_parts.insert(p);
        }
        CHECK(emitted_parts == derived_parts);
    }
}

TEST_CASE("binary-tree codes: statistics path") {
    // Two spellings of one problem give different binary codes but one M-tree code set.
    ExprPtr a = parse_expression("2+3+4");
    ExprPtr b = parse_expression("4+(3+2)");
    auto values = implicit_values(*a);
    auto binary_a = apply_operator_conversion(expand(*bind_leaves(*a, values)));
    auto binary_b = apply_operator_conversion(expand(*bind_leaves(*b, values)));
    CodeSets ca = binary_tree_codes(binary_a, static_cast<int>(values.size()));
    CodeSets cb = binary_tree_codes(binary_b, static_cast<int>(values.size()));
    CHECK(ca != cb);  // order sensitivity is the point of the comparison

    auto ma = encode(canonicalize(to_mtree(binary_a)), static_cast<int>(values.size()));
    auto mb = encode(canonicalize(to_mtree(binary_b)), static_cast<int>(values.size()));
    CHECK(ma == mb);

    // single-problem corpus, train == test: full coverage under both schemes
    auto stats_m = code_set_stats({ma}, {ma});
    auto stats_b = code_set_stats({ca}, {ca});
    CHECK(stats_m.coverage_pct == 100.0);
    CHECK(stats_b.coverage_pct == 100.0);

    // a structurally new test problem is uncovered
    ExprPtr c = parse_expression("2*3*4");
    auto vc = implicit_values(*c);
    auto binary_c = apply_operator_conversion(expand(*bind_leaves(*c, vc)));
    CodeSets cc = binary_tree_codes(binary_c, static_cast<int>(vc.size()));
    auto stats_miss = code_set_stats({ca}, {cc});
    CHECK(stats_miss.coverage_pct == 0.0);
}

TEST_CASE("binary-tree codes: same-op internal sibling pairs get marks") {
    // (2*3)*(4*5): the top × has two × children
    ExprPtr e = parse_expression("(2*3)*(4*5)");
    auto values = implicit_values(*e);
    auto binary = apply_operator_conversion(expand(*bind_leaves(*e, values)));
    // expansion flattens the product, so build the shape directly instead
    auto mk = [](double v, int occ) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%g", v);
        return MNode::leaf(LeafForm::V, buf, v, occ);
    };
    auto left = MNode::internal(MOp::Mul, {mk(2, 2), mk(3, 3)});
    auto right = MNode::internal(MOp::Mul, {mk(4, 4), mk(5, 5)});
    auto top = MNode::internal(MOp::Mul, {left, right});
    CodeSets sets = binary_tree_codes(top, static_cast<int>(values.size()));
    CHECK(sets[2] == std::vector<std::string>{"0_0_\xc3\x97_\xc3\x97@1"});
    CHECK(sets[5] == std::vector<std::string>{"0_0_\xc3\x97_\xc3\x97@2"});
    (void)binary;
}
