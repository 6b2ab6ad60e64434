#pragma once

// Corpus ingestion: tokenize problem text, mask numbers, inject the constants
// 1 and pi, normalize equations (percents, fractions, mixed numbers), bind
// expression literals to value occurrences and produce supervised
// (tokens, code-vector) pairs plus corpus statistics. Also home to the
// bundled synthetic corpus generator used for desk-scale training and CI.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mtc/codec.hpp"
#include "mtc/errors.hpp"
#include "mtc/expr.hpp"
#include "mtc/io.hpp"
#include "mtc/pipeline.hpp"

namespace mtc {

// Gold answers match within relative 1e-4 (absolute 1e-4 below magnitude 1).
inline bool answers_equal(double predicted, double gold) {
    if (!std::isfinite(predicted)) return false;
    return std::abs(predicted - gold) <= 1e-4 * std::max(1.0, std::abs(gold));
}

struct ParsedNumber {
    double value = 0.0;
    std::string canonical;  // decimal literal that parses back to `value`
};

namespace detail {

inline bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

inline bool plain_decimal(const std::string& s) {
    if (s.empty()) return false;
    int dots = 0;
    bool digit = false;
    for (char c : s) {
        if (c == '.') {
            if (++dots > 1) return false;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            digit = true;
        } else {
            return false;
        }
    }
    return digit;
}

inline std::string render_literal(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find('e') == std::string::npos && s.find('E') == std::string::npos) return s;
    std::snprintf(buf, sizeof buf, "%.20f", v);
    s = buf;
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

}  // namespace detail

// Recognize a token as a numeric value: decimals, "n%", fractions "a/b",
// bracketed fractions "(a/b)" and mixed numbers "k(a/b)".
inline std::optional<ParsedNumber> parse_number_token(const std::string& raw) {
    using detail::all_digits;
    using detail::plain_decimal;
    std::string tok = raw;
    if (tok.empty()) return std::nullopt;

    auto finish = [](double v) { return ParsedNumber{v, detail::render_literal(v)}; };

    if (tok.back() == '%') {
        std::string core = tok.substr(0, tok.size() - 1);
        if (plain_decimal(core)) return finish(std::stod(core) / 100.0);
        return std::nullopt;
    }
    std::size_t open = tok.find('(');
    if (open != std::string::npos && tok.back() == ')') {
        std::string whole = tok.substr(0, open);
        std::string inner = tok.substr(open + 1, tok.size() - open - 2);
        std::size_t slash = inner.find('/');
        if (slash != std::string::npos) {
            std::string num = inner.substr(0, slash), den = inner.substr(slash + 1);
            if (all_digits(num) && all_digits(den) && std::stod(den) != 0.0 &&
                (whole.empty() || all_digits(whole))) {
                double v = (whole.empty() ? 0.0 : std::stod(whole)) +
                           std::stod(num) / std::stod(den);
                return finish(v);
            }
        }
        return std::nullopt;
    }
    std::size_t slash = tok.find('/');
    if (slash != std::string::npos) {
        std::string num = tok.substr(0, slash), den = tok.substr(slash + 1);
        if (all_digits(num) && all_digits(den) && std::stod(den) != 0.0)
            return finish(std::stod(num) / std::stod(den));
        return std::nullopt;
    }
    if (plain_decimal(tok)) return finish(std::stod(tok));
    return std::nullopt;
}

// Whitespace split with ASCII punctuation peeled off both ends, unless the
// chunk as a whole reads as a number (keeps "25%", "1(1/2)", "3.14" intact).
inline std::vector<std::string> tokenize_text(const std::string& text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    auto is_punct = [](char c) {
        return c == ',' || c == '.' || c == '?' || c == '!' || c == ';' || c == ':' ||
               c == '"' || c == '\'' || c == '(' || c == ')';
    };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) {
            std::string chunk = text.substr(i, j - i);
            if (parse_number_token(chunk)) {
                tokens.push_back(chunk);
            } else {
                std::size_t a = 0, b = chunk.size();
                std::vector<std::string> lead, trail;
                while (a < b && is_punct(chunk[a])) lead.push_back(std::string(1, chunk[a++]));
                while (b > a && is_punct(chunk[b - 1])) trail.push_back(std::string(1, chunk[--b]));
                for (auto& t : lead) tokens.push_back(std::move(t));
                if (b > a) tokens.push_back(chunk.substr(a, b - a));
                for (auto it = trail.rbegin(); it != trail.rend(); ++it)
                    tokens.push_back(std::move(*it));
            }
        }
        i = j;
    }
    return tokens;
}

struct DropRecord {
    std::string id;
    std::string reason;
};

// One masked problem. Values V hold the constants first; X[positions[i]] is
// the mask token NUM_{i+1} for values[i].
struct Problem {
    std::string id;
    std::string raw_text;
    std::vector<std::string> tokens;     // X
    std::vector<ValueRef> values;        // V, constants first
    std::vector<std::string> surfaces;   // original text spelling per value
    std::vector<int> positions;          // Q
    std::string equation;                // normalized gold expression
    double answer = 0.0;

    // filled by make_supervision
    CodeSets codesets;
    std::vector<CodeVector> vectors;  // empty when not covered by the vocabulary
    bool covered = false;
    bool is_train = false;
    int operand_count = 0;  // leaves in the gold M-tree
};

enum class CorpusFormat { Math23k, Mawps, Synthetic };

inline CorpusFormat corpus_format_of(const std::string& name) {
    if (name == "math23k-json") return CorpusFormat::Math23k;
    if (name == "mawps-json") return CorpusFormat::Mawps;
    if (name == "synthetic-json") return CorpusFormat::Synthetic;
    throw Error("unknown corpus format: " + name);
}

struct LoadResult {
    std::vector<Problem> problems;
    std::vector<DropRecord> dropped;
};

// The value stored for the pi constant. Corpora write the constant textually
// as 3.14 and compute gold answers with it, so the injected occurrence uses
// 3.14 rather than the closest double to pi; answer consistency wins.
inline constexpr double kPiConstantValue = 3.14;

namespace detail {

inline std::string json_id(const Json& record, const char* field) {
    if (!record.contains(field)) return "";
    const Json& v = record[field];
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) return std::to_string(v.get<double>());
    return "";
}

inline std::optional<double> parse_answer_text(std::string s) {
    // strip whitespace and surrounding junk
    auto strip = [](std::string& x) {
        while (!x.empty() && (x.front() == ' ' || x.front() == '\t')) x.erase(x.begin());
        while (!x.empty() && (x.back() == ' ' || x.back() == '\t')) x.pop_back();
    };
    strip(s);
    if (auto n = parse_number_token(s)) return n->value;
    // allow signed plain decimals
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        if (auto n = parse_number_token(s.substr(1))) return s[0] == '-' ? -n->value : n->value;
    }
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (...) {
    }
    return std::nullopt;
}

// Replace composite value surfaces (percents, fractions, mixed numbers) and
// any remaining percent patterns in an equation with plain decimal literals,
// so the expression grammar never sees them and literal binding stays exact.
inline std::string normalize_equation(const std::string& equation,
                                      const std::vector<std::string>& surfaces,
                                      const std::vector<ValueRef>& values) {
    std::string eq = equation;
    std::vector<std::pair<std::string, std::string>> repl;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        const std::string& s = surfaces[i];
        if (s.empty()) continue;
        bool composite = s.find('%') != std::string::npos || s.find('/') != std::string::npos ||
                         s.find('(') != std::string::npos;
        if (composite) repl.emplace_back(s, values[i].literal);
    }
    std::sort(repl.begin(), repl.end(),
              [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
    auto boundary = [](char c) {
        return !(std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '/' || c == '%');
    };
    for (const auto& [from, to] : repl) {
        std::string out;
        std::size_t pos = 0;
        while (pos < eq.size()) {
            std::size_t hit = eq.find(from, pos);
            if (hit == std::string::npos) {
                out += eq.substr(pos);
                break;
            }
            bool left_ok = hit == 0 || boundary(eq[hit - 1]);
            std::size_t end = hit + from.size();
            bool right_ok = end == eq.size() || boundary(eq[end]);
            out += eq.substr(pos, hit - pos);
            out += left_ok && right_ok ? to : from;
            pos = end;
        }
        eq = out;
    }
    // leftover percents: digits (or decimal) followed by %
    std::string out;
    std::size_t i = 0;
    while (i < eq.size()) {
        if (std::isdigit(static_cast<unsigned char>(eq[i]))) {
            std::size_t j = i;
            while (j < eq.size() &&
                   (std::isdigit(static_cast<unsigned char>(eq[j])) || eq[j] == '.'))
                ++j;
            if (j < eq.size() && eq[j] == '%') {
                double v = std::stod(eq.substr(i, j - i)) / 100.0;
                out += render_literal(v);
                i = j + 1;
                continue;
            }
            out += eq.substr(i, j - i);
            i = j;
            continue;
        }
        out.push_back(eq[i]);
        ++i;
    }
    return out;
}

}  // namespace detail

// Build a Problem from raw text + equation + answer. Throws SchemaError /
// Error on malformed records; callers turn those into drop records.
inline Problem make_problem(std::string id, const std::string& text, const std::string& equation,
                            double answer) {
    Problem p;
    p.id = std::move(id);
    p.raw_text = text;

    p.values.push_back(ValueRef{"1", 1.0, 0, true});
    p.values.push_back(ValueRef{"pi", kPiConstantValue, 1, true});
    p.surfaces = {"1", "pi"};
    p.tokens = {"NUM_1", "NUM_2"};
    p.positions = {0, 1};

    for (const std::string& tok : tokenize_text(text)) {
        if (auto num = parse_number_token(tok)) {
            int occ = static_cast<int>(p.values.size());
            p.values.push_back(ValueRef{num->canonical, num->value, occ, false});
            p.surfaces.push_back(tok);
            p.positions.push_back(static_cast<int>(p.tokens.size()));
            p.tokens.push_back("NUM_" + std::to_string(occ + 1));
        } else {
            p.tokens.push_back(tok);
        }
    }
    p.equation = detail::normalize_equation(equation, p.surfaces, p.values);
    p.answer = answer;
    return p;
}

inline LoadResult load_corpus(const std::string& path, CorpusFormat format) {
    LoadResult result;
    std::vector<Json> records = read_json_records(path);
    int index = 0;
    for (const Json& r : records) {
        ++index;
        std::string id;
        try {
            std::string text, equation;
            double answer = 0.0;
            switch (format) {
                case CorpusFormat::Math23k: {
                    id = detail::json_id(r, "id");
                    if (id.empty()) id = "rec" + std::to_string(index);
                    if (r.contains("segmented_text"))
                        text = r["segmented_text"].get<std::string>();
                    else if (r.contains("original_text"))
                        text = r["original_text"].get<std::string>();
                    else if (r.contains("text"))
                        text = r["text"].get<std::string>();
                    else
                        throw SchemaError(id, "segmented_text");
                    if (!r.contains("equation")) throw SchemaError(id, "equation");
                    equation = r["equation"].get<std::string>();
                    if (!r.contains("ans")) throw SchemaError(id, "ans");
                    if (r["ans"].is_number()) {
                        answer = r["ans"].get<double>();
                    } else {
                        auto a = detail::parse_answer_text(r["ans"].get<std::string>());
                        if (!a) throw SchemaError(id, "ans");
                        answer = *a;
                    }
                    break;
                }
                case CorpusFormat::Mawps: {
                    id = detail::json_id(r, "iIndex");
                    if (id.empty()) id = detail::json_id(r, "id");
                    if (id.empty()) id = "rec" + std::to_string(index);
                    if (!r.contains("sQuestion")) throw SchemaError(id, "sQuestion");
                    text = r["sQuestion"].get<std::string>();
                    if (!r.contains("lEquations") || !r["lEquations"].is_array() ||
                        r["lEquations"].empty())
                        throw SchemaError(id, "lEquations");
                    equation = r["lEquations"][0].get<std::string>();
                    if (!r.contains("lSolutions") || !r["lSolutions"].is_array() ||
                        r["lSolutions"].empty())
                        throw SchemaError(id, "lSolutions");
                    if (r["lSolutions"][0].is_number()) {
                        answer = r["lSolutions"][0].get<double>();
                    } else {
                        auto a = detail::parse_answer_text(r["lSolutions"][0].get<std::string>());
                        if (!a) throw SchemaError(id, "lSolutions");
                        answer = *a;
                    }
                    break;
                }
                case CorpusFormat::Synthetic: {
                    id = detail::json_id(r, "id");
                    if (id.empty()) id = "rec" + std::to_string(index);
                    if (!r.contains("text")) throw SchemaError(id, "text");
                    text = r["text"].get<std::string>();
                    if (!r.contains("equation")) throw SchemaError(id, "equation");
                    equation = r["equation"].get<std::string>();
                    if (!r.contains("ans")) throw SchemaError(id, "ans");
                    if (r["ans"].is_number()) {
                        answer = r["ans"].get<double>();
                    } else {
                        auto a = detail::parse_answer_text(r["ans"].get<std::string>());
                        if (!a) throw SchemaError(id, "ans");
                        answer = *a;
                    }
                    break;
                }
            }
            result.problems.push_back(make_problem(id, text, equation, answer));
        } catch (const Error& err) {
            result.dropped.push_back({id.empty() ? "rec" + std::to_string(index) : id,
                                      std::string("schema: ") + err.what()});
        }
    }
    return result;
}

// Bind the parsed gold expression to the problem's value occurrences.
// Numbers bind by value to the earliest matching occurrence (duplicates in
// the text never split the codes: later duplicates stay None-coded);
// constants bind to their injected occurrences by name. Leaf values and
// literals are rewritten to the occurrence's, keeping the supervision
// answer-consistent even for 3.14-style pi spellings.
inline ExprPtr bind_expression(const Problem& p, const Expr& parsed) {
    auto find_occurrence = [&p](double v, const std::string& literal) -> int {
        for (std::size_t i = 0; i < p.values.size(); ++i)
            if (p.values[i].value == v) return static_cast<int>(i);
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            double ref = p.values[i].value;
            if (std::abs(ref - v) <= 1e-9 * std::max({1.0, std::abs(ref), std::abs(v)}))
                return static_cast<int>(i);
        }
        throw UnboundLiteral(v, literal);
    };
    std::function<ExprPtr(const Expr&)> walk = [&](const Expr& node) -> ExprPtr {
        switch (node.kind) {
            case Expr::Kind::Number: {
                int occ = find_occurrence(node.value, node.literal);
                const ValueRef& v = p.values[static_cast<std::size_t>(occ)];
                return Expr::number(v.literal, v.value, occ);
            }
            case Expr::Kind::Constant: {
                int occ = node.name == "pi" ? 1 : 0;
                auto c = std::make_shared<Expr>();
                c->kind = Expr::Kind::Constant;
                c->name = node.name;
                c->value = p.values[static_cast<std::size_t>(occ)].value;
                c->occurrence = occ;
                return c;
            }
            case Expr::Kind::Negate:
                return Expr::negate(walk(*node.child));
            case Expr::Kind::Binary:
                return Expr::binary(node.op, walk(*node.left), walk(*node.right));
        }
        throw Error("corrupt expression node");
    };
    return walk(parsed);
}

// Evaluate a bound expression with occurrence-aware constants (pi uses the
// dataset constant value so the answer check matches 3.14-based golds).
inline double eval_bound(const Expr& e) {
    switch (e.kind) {
        case Expr::Kind::Number:
        case Expr::Kind::Constant:
            return e.value;
        case Expr::Kind::Negate:
            return -eval_bound(*e.child);
        case Expr::Kind::Binary: {
            double l = eval_bound(*e.left), r = eval_bound(*e.right);
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
    return 0.0;
}

struct SupervisionStats {
    int vocab_size = 0;
    double coverage_pct = 100.0;
    std::vector<DropRecord> dropped;
    std::map<int, int> operand_histogram;
    int binary_vocab_size = 0;
    double binary_coverage_pct = 100.0;
    int train_count = 0;
    int test_count = 0;

    Json to_json() const {
        Json d = Json::array();
        for (const auto& r : dropped) d.push_back({{"id", r.id}, {"reason", r.reason}});
        Json hist = Json::object();
        for (const auto& [k, v] : operand_histogram) hist[std::to_string(k)] = v;
        return Json{{"vocab_size", vocab_size},
                    {"coverage_pct", coverage_pct},
                    {"dropped", d},
                    {"operand_histogram", hist},
                    {"binary_vocab_size", binary_vocab_size},
                    {"binary_coverage_pct", binary_coverage_pct},
                    {"train_count", train_count},
                    {"test_count", test_count}};
    }
};

struct Supervision {
    std::vector<Problem> problems;  // retained, id-sorted, train rows first in file order
    CodeVocab vocab;                // built from the train split
    SupervisionStats stats;
};

namespace detail {

inline int count_leaves(const MNode& n) {
    if (n.is_leaf) return 1;
    int total = 0;
    for (const auto& c : n.children) total += count_leaves(*c);
    return total;
}

inline bool id_less(const std::string& a, const std::string& b) {
    if (detail::all_digits(a) && detail::all_digits(b)) {
        if (a.size() != b.size()) return a.size() < b.size();
    }
    return a < b;
}

}  // namespace detail

namespace detail {

struct ProcessedCorpus {
    std::vector<Problem> retained;
    std::vector<CodeSets> binary_codesets;
    std::vector<DropRecord> dropped;
};

// Per-problem pipeline: parse -> bind -> expand -> convert -> merge ->
// canonicalize -> encode, with the decode-consistency gate. Problems are
// processed in id order so parallel variants merge deterministically.
inline ProcessedCorpus process_problems(std::vector<Problem> problems) {
    std::stable_sort(problems.begin(), problems.end(),
                     [](const Problem& a, const Problem& b) { return id_less(a.id, b.id); });
    ProcessedCorpus out;
    for (Problem& p : problems) {
        try {
            ExprPtr parsed = parse_expression(p.equation);
            ExprPtr bound = bind_expression(p, *parsed);
            double forward = eval_bound(*bound);
            if (!answers_equal(forward, p.answer)) {
                out.dropped.push_back({p.id, "answer_mismatch"});
                continue;
            }
            TermSum terms = expand(*bound);
            MNodePtr binary = apply_operator_conversion(terms);
            MTree tree = canonicalize(to_mtree(binary));
            p.codesets = encode(tree, static_cast<int>(p.values.size()));
            p.operand_count = count_leaves(*tree.root);

            // supervision must reproduce the gold answer
            double decoded = eval_mtree(decode(p.codesets, p.values));
            if (!answers_equal(decoded, p.answer)) {
                out.dropped.push_back({p.id, "decode_mismatch"});
                continue;
            }
            out.binary_codesets.push_back(
                binary_tree_codes(binary, static_cast<int>(p.values.size())));
            out.retained.push_back(std::move(p));
        } catch (const Error& err) {
            out.dropped.push_back({p.id, err.what()});
        }
    }
    return out;
}

inline Supervision assemble_supervision(ProcessedCorpus&& train_part, ProcessedCorpus&& test_part) {
    Supervision sup;
    sup.stats.dropped = std::move(train_part.dropped);
    sup.stats.dropped.insert(sup.stats.dropped.end(), test_part.dropped.begin(),
                             test_part.dropped.end());

    std::size_t train_n = train_part.retained.size();
    sup.problems = std::move(train_part.retained);
    sup.problems.insert(sup.problems.end(),
                        std::make_move_iterator(test_part.retained.begin()),
                        std::make_move_iterator(test_part.retained.end()));

    std::vector<CodeSets> train_sets, test_sets;
    for (std::size_t i = 0; i < sup.problems.size(); ++i) {
        sup.problems[i].is_train = i < train_n;
        (i < train_n ? train_sets : test_sets).push_back(sup.problems[i].codesets);
        ++sup.stats.operand_histogram[sup.problems[i].operand_count];
    }
    sup.vocab = build_vocab(train_sets);
    sup.stats.vocab_size = sup.vocab.size();
    sup.stats.train_count = static_cast<int>(train_n);
    sup.stats.test_count = static_cast<int>(sup.problems.size() - train_n);

    int covered_tests = 0;
    for (Problem& p : sup.problems) {
        try {
            p.vectors = vectorize(p.codesets, sup.vocab);
            p.covered = true;
        } catch (const UnknownCode&) {
            p.vectors.clear();
            p.covered = false;
        }
        if (!p.is_train && p.covered) ++covered_tests;
    }
    sup.stats.coverage_pct = sup.stats.test_count == 0
                                 ? 100.0
                                 : 100.0 * covered_tests / static_cast<double>(sup.stats.test_count);

    CodeSetStats bin = code_set_stats(train_part.binary_codesets, test_part.binary_codesets);
    sup.stats.binary_vocab_size = bin.set_size;
    sup.stats.binary_coverage_pct = sup.stats.test_count == 0 ? 100.0 : bin.coverage_pct;
    return sup;
}

}  // namespace detail

// Full pipeline over a loaded corpus, then vocabulary and vectors from the
// leading train fraction of the retained, id-sorted problems. Every retained
// problem's codes decode back to the gold answer within relative 1e-4;
// anything that cannot is dropped and logged.
inline Supervision make_supervision(const LoadResult& loaded, double train_fraction = 0.9) {
    detail::ProcessedCorpus all = detail::process_problems(loaded.problems);
    std::size_t n = all.retained.size();
    std::size_t train_n =
        static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n)));
    if (train_n > n) train_n = n;

    detail::ProcessedCorpus train_part, test_part;
    train_part.dropped = loaded.dropped;
    train_part.dropped.insert(train_part.dropped.end(), all.dropped.begin(), all.dropped.end());
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < train_n ? train_part : test_part;
        dst.retained.push_back(std::move(all.retained[i]));
        dst.binary_codesets.push_back(std::move(all.binary_codesets[i]));
    }
    return detail::assemble_supervision(std::move(train_part), std::move(test_part));
}

// Same pipeline with an explicit train/test file split (the Math23K layout).
inline Supervision make_supervision_split(const LoadResult& train, const LoadResult& test) {
    detail::ProcessedCorpus train_part = detail::process_problems(train.problems);
    detail::ProcessedCorpus test_part = detail::process_problems(test.problems);
    std::vector<DropRecord> pre = train.dropped;
    pre.insert(pre.end(), test.dropped.begin(), test.dropped.end());
    pre.insert(pre.end(), train_part.dropped.begin(), train_part.dropped.end());
    train_part.dropped = std::move(pre);
    return detail::assemble_supervision(std::move(train_part), std::move(test_part));
}

// ---------------------------------------------------------------------------
// supervision file records (JSON lines; the codec file format plus the token
// fields training needs)

inline Json problem_to_json(const Problem& p, int vector_dim) {
    Json values = Json::array(), literals = Json::array();
    for (const auto& v : p.values) {
        values.push_back(v.value);
        literals.push_back(v.literal);
    }
    Json codes = Json::array();
    for (const auto& set : p.codesets) codes.push_back(set);
    Json j{{"id", p.id},
           {"values", values},
           {"literals", literals},
           {"codes", codes},
           {"vector_dim", vector_dim},
           {"tokens", p.tokens},
           {"positions", p.positions},
           {"answer", p.answer},
           {"equation", p.equation},
           {"train", p.is_train},
           {"covered", p.covered}};
    Json vectors = Json::array();
    for (const auto& v : p.vectors) vectors.push_back(v);
    j["vectors"] = vectors;
    return j;
}

inline Problem problem_from_json(const Json& j) {
    Problem p;
    p.id = detail::json_id(j, "id");
    if (j.contains("tokens")) p.tokens = j["tokens"].get<std::vector<std::string>>();
    if (j.contains("positions")) p.positions = j["positions"].get<std::vector<int>>();
    if (j.contains("answer")) p.answer = j["answer"].get<double>();
    if (j.contains("equation")) p.equation = j["equation"].get<std::string>();
    if (j.contains("train")) p.is_train = j["train"].get<bool>();
    if (j.contains("covered")) p.covered = j["covered"].get<bool>();
    if (!j.contains("values")) throw SchemaError(p.id, "values");
    auto vals = j["values"].get<std::vector<double>>();
    std::vector<std::string> lits;
    if (j.contains("literals")) lits = j["literals"].get<std::vector<std::string>>();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        std::string lit = i < lits.size() ? lits[i] : detail::render_literal(vals[i]);
        bool is_const = i < 2;
        p.values.push_back(ValueRef{lit, vals[i], static_cast<int>(i), is_const});
    }
    if (j.contains("codes")) {
        for (const auto& set : j["codes"]) p.codesets.push_back(set.get<std::vector<std::string>>());
    }
    if (j.contains("vectors") && j["vectors"].is_array()) {
        for (const auto& v : j["vectors"]) p.vectors.push_back(v.get<std::vector<int>>());
    }
    return p;
}

// ---------------------------------------------------------------------------
// bundled synthetic corpus generator

struct SyntheticRecord {
    std::string id;
    std::string text;
    std::string equation;
    double answer = 0.0;
};

namespace detail {

// Verbalize an expression with word operators and bracket tokens; the token
// stream fully determines the tree, which keeps the mapping learnable.
inline void verbalize(const Expr& e, std::vector<std::string>& out) {
    switch (e.kind) {
        case Expr::Kind::Number:
            out.push_back(e.literal);
            return;
        case Expr::Kind::Constant:
            out.push_back(e.name == "pi" ? "pi" : "one");
            return;
        case Expr::Kind::Negate:
            out.push_back("negative");
            verbalize(*e.child, out);
            return;
        case Expr::Kind::Binary: {
            int p = precedence_of(e);
            auto child = [&](const Expr& c, bool right) {
                bool need = precedence_of(c) < p || (right && precedence_of(c) == p);
                if (need) out.push_back("(");
                verbalize(c, out);
                if (need) out.push_back(")");
            };
            child(*e.left, false);
            switch (e.op) {
                case BinOp::Plus:
                    out.push_back("plus");
                    break;
                case BinOp::Minus:
                    out.push_back("minus");
                    break;
                case BinOp::Times:
                    out.push_back("times");
                    break;
                case BinOp::Divide:
                    out.push_back("over");
                    break;
                case BinOp::Power:
                    out.push_back("to");
                    break;
            }
            child(*e.right, true);
            return;
        }
    }
}

}  // namespace detail

// Random solution expressions over 2..6 text numbers, verbalized into short
// templated token text. Division-safe by construction; a small share of
// problems use the constant one and leave a decoy number unused. Records are
// ordered so the first problem carrying each distinct M-tree code comes
// first, which makes the held-out split of any train fraction >= one half
// fully covered by the training vocabulary.
inline std::vector<SyntheticRecord> generate_synthetic(int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto rand_int = [&rng](int lo, int hi) {
        return static_cast<int>(lo + rng() % static_cast<unsigned long long>(hi - lo + 1));
    };
    static const std::vector<std::vector<std::string>> prefixes = {
        {"find", "the", "total", "of"},
        {"compute"},
        {"the", "ledger", "works", "out", "as"},
        {"what", "is"},
        {"a", "clerk", "tallies"},
        {"the", "answer", "equals"},
    };
    static const std::vector<std::vector<std::string>> suffixes = {
        {"in", "total"}, {"altogether"}, {"for", "the", "day"}, {"overall"}, {},
    };
    static const std::vector<std::vector<std::string>> decoys = {
        {"the", "sheet", "also", "shows"},
        {"ignore", "the", "stray"},
        {"a", "side", "note", "lists"},
    };

    std::vector<SyntheticRecord> records;
    records.reserve(static_cast<std::size_t>(count));
    int made = 0;
    while (made < count) {
        int n_text = rand_int(2, 6);
        std::vector<int> values;
        while (static_cast<int>(values.size()) < n_text) {
            int v = rand_int(2, 60);
            if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
        }
        int n_used = rand_int(2, n_text);

        std::vector<ExprPtr> pool;
        for (int i = 0; i < n_used; ++i)
            pool.push_back(Expr::number(std::to_string(values[static_cast<std::size_t>(i)]),
                                        values[static_cast<std::size_t>(i)]));
        if (rand_int(0, 11) == 0) pool.push_back(Expr::constant("1"));

        bool ok = true;
        while (pool.size() > 1 && ok) {
            std::size_t b = pool.size() - 1;
            std::size_t a = b - 1;  // combine in text order: keeps values in reading order
            int roll = rand_int(0, 99);
            BinOp op = roll < 38   ? BinOp::Plus
                       : roll < 60 ? BinOp::Minus
                       : roll < 88 ? BinOp::Times
                                   : BinOp::Divide;
            if (op == BinOp::Divide) {
                double dv = eval_expr(pool[b]);
                if (std::abs(dv) < 0.5) op = BinOp::Plus;
            }
            ExprPtr combined = Expr::binary(op, pool[a], pool[b]);
            double v;
            try {
                v = eval_expr(combined);
            } catch (const Error&) {
                ok = false;
                break;
            }
            if (!std::isfinite(v) || std::abs(v) > 2e5) {
                ok = false;
                break;
            }
            pool.pop_back();
            pool.back() = combined;
            // occasionally rotate so deeper structure appears on the right too
            if (pool.size() > 1 && rand_int(0, 2) == 0)
                std::rotate(pool.begin(), pool.begin() + 1, pool.end());
        }
        if (!ok) continue;
        ExprPtr expr = pool[0];
        double answer;
        try {
            answer = eval_expr(expr);
        } catch (const Error&) {
            continue;
        }
        if (!std::isfinite(answer) || std::abs(answer) > 2e5 || std::abs(answer) < 1e-3) continue;

        std::vector<std::string> toks = prefixes[static_cast<std::size_t>(
            rand_int(0, static_cast<int>(prefixes.size()) - 1))];
        detail::verbalize(*expr, toks);
        for (int i = n_used; i < n_text; ++i) {
            const auto& d =
                decoys[static_cast<std::size_t>(rand_int(0, static_cast<int>(decoys.size()) - 1))];
            toks.insert(toks.end(), d.begin(), d.end());
            toks.push_back(std::to_string(values[static_cast<std::size_t>(i)]));
        }
        const auto& suf =
            suffixes[static_cast<std::size_t>(rand_int(0, static_cast<int>(suffixes.size()) - 1))];
        toks.insert(toks.end(), suf.begin(), suf.end());

        SyntheticRecord rec;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (i) rec.text += " ";
            rec.text += toks[i];
        }
        rec.equation = "x=" + unparse(expr);
        rec.answer = answer;
        records.push_back(std::move(rec));
        ++made;
    }

    // Order code introducers first, then assign ids. A record "introduces" a
    // code when it is the earliest record carrying it.
    std::vector<std::string> all_codes;
    std::vector<std::vector<std::string>> per_record_codes;
    per_record_codes.reserve(records.size());
    for (const auto& r : records) {
        Problem p = make_problem("tmp", r.text, r.equation, r.answer);
        ExprPtr bound = bind_expression(p, *parse_expression(p.equation));
        MTree tree = canonicalize(to_mtree(apply_operator_conversion(expand(*bound))));
        CodeSets sets = encode(tree, static_cast<int>(p.values.size()));
        std::vector<std::string> codes;
        for (const auto& set : sets)
            for (const auto& c : set)
                if (c != kNoneCode) codes.push_back(c);
        per_record_codes.push_back(std::move(codes));
    }
    std::vector<char> introduces(records.size(), 0);
    {
        std::unordered_map<std::string, bool> seen;
        for (std::size_t i = 0; i < records.size(); ++i)
            for (const auto& c : per_record_codes[i])
                if (!seen[c]) {
                    seen[c] = true;
                    introduces[i] = 1;
                }
    }
    std::vector<SyntheticRecord> ordered;
    ordered.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        if (introduces[i]) ordered.push_back(std::move(records[i]));
    for (std::size_t i = 0; i < records.size(); ++i)
        if (!introduces[i]) ordered.push_back(std::move(records[i]));
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        char idbuf[24];
        std::snprintf(idbuf, sizeof idbuf, "syn-%06zu", i + 1);
        ordered[i].id = idbuf;
    }
    return ordered;
}

inline std::vector<Json> synthetic_to_json(const std::vector<SyntheticRecord>& records) {
    std::vector<Json> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back(Json{{"id", r.id}, {"text", r.text}, {"equation", r.equation}, {"ans", r.answer}});
    return out;
}

// ---------------------------------------------------------------------------
// manifests

inline std::vector<std::vector<std::string>> fold_manifests(const std::vector<Problem>& problems,
                                                            int k) {
    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < problems.size(); ++i)
        folds[i % static_cast<std::size_t>(k)].push_back(problems[i].id);
    return folds;
}

inline std::map<int, std::vector<std::string>> low_resource_manifests(
    const std::vector<Problem>& train, const std::vector<int>& sizes, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& p : train)
        if (p.is_train) ids.push_back(p.id);
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::map<int, std::vector<std::string>> out;
    for (int s : sizes) {
        if (s <= 0 || s > static_cast<int>(ids.size())) continue;
        out[s] = std::vector<std::string>(ids.begin(), ids.begin() + s);
    }
    return out;
}

}  // namespace mtc
