// Command-line surface over the library: canonicalize expressions, generate
// the bundled synthetic corpus, preprocess corpora into supervision files,
// print code-set statistics, batch encode/decode, train and predict.
//
// Exit codes: 0 ok, 1 runtime failure, 2 bad input. Input-side failures also
// emit a one-line machine-readable JSON object on stderr.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mtc/dataset.hpp"
#include "mtc/io.hpp"
#include "mtc/model.hpp"
#include "mtc/pipeline.hpp"

namespace fs = std::filesystem;
using mtc::Json;

namespace {

int fail_input(const std::string& type, const std::string& message) {
    std::cerr << Json{{"error", message}, {"type", type}}.dump() << "\n";
    return 2;
}

int fail_runtime(const std::string& type, const std::string& message) {
    std::cerr << Json{{"error", message}, {"type", type}}.dump() << "\n";
    return 1;
}

mtc::LoadResult load_with_format(const std::string& input, const std::string& format) {
    return mtc::load_corpus(input, mtc::corpus_format_of(format));
}

// --config file provides defaults; explicit flags win.
template <typename T>
void apply_config(const CLI::App& app, const Json& cfg, const std::string& flag,
                  const std::string& key, T& target) {
    if (!cfg.contains(key)) return;
    const CLI::Option* opt = app.get_option_no_throw("--" + flag);
    if (opt && opt->count() > 0) return;
    target = cfg[key].get<T>();
}

struct SupervisionFile {
    std::vector<mtc::Problem> problems;
    mtc::CodeVocab vocab;
};

SupervisionFile read_supervision(const std::string& path, const std::string& vocab_path) {
    SupervisionFile sf;
    for (const Json& j : mtc::read_json_records(path))
        sf.problems.push_back(mtc::problem_from_json(j));
    Json v = Json::parse(mtc::read_file(mtc::resolve_data_path(vocab_path)));
    sf.vocab.codes = v.get<std::vector<std::string>>();
    for (int i = 0; i < static_cast<int>(sf.vocab.codes.size()); ++i)
        sf.vocab.index[sf.vocab.codes[static_cast<std::size_t>(i)]] = i;
    return sf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structure-unified M-tree codes for math word problems"};
    app.require_subcommand(1);

    // ---------------------------------------------------------- canonicalize
    std::string expr_text;
    bool canon_json = false;
    CLI::App* canon = app.add_subcommand("canonicalize",
                                         "canonical M-tree of one expression");
    canon->add_option("expression", expr_text, "expression, e.g. \"2*3+4+5\"")->required();
    canon->add_flag("--json", canon_json, "emit a JSON object");

    // ---------------------------------------------------------- gen-synthetic
    int gen_count = 5000;
    std::uint64_t gen_seed = 1;
    std::string gen_output = "synthetic.jsonl";
    CLI::App* gen = app.add_subcommand("gen-synthetic", "write the bundled synthetic corpus");
    gen->add_option("--count", gen_count, "number of problems");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--output", gen_output, "output JSONL path")->required();

    // ---------------------------------------------------------- preprocess
    std::string pre_input, pre_format = "synthetic-json", pre_output = ".";
    double pre_fraction = 0.9;
    int pre_folds = 0;
    std::string pre_low;
    std::uint64_t pre_seed = 1;
    CLI::App* pre = app.add_subcommand("preprocess", "corpus -> supervision/vocab/stats files");
    pre->add_option("--input", pre_input)->required();
    pre->add_option("--format", pre_format, "math23k-json | mawps-json | synthetic-json");
    pre->add_option("--output", pre_output, "output directory");
    pre->add_option("--train-fraction", pre_fraction);
    pre->add_option("--emit-folds", pre_folds, "also write k cross-validation fold manifests");
    pre->add_option("--low-resource", pre_low, "comma-separated subsample sizes");
    pre->add_option("--seed", pre_seed, "seed for subsample manifests");

    // ---------------------------------------------------------- stats
    std::string stats_input, stats_format = "synthetic-json";
    double stats_fraction = 0.9;
    CLI::App* stats_cmd = app.add_subcommand("stats", "vocabulary size, coverage, histogram");
    stats_cmd->add_option("--input", stats_input)->required();
    stats_cmd->add_option("--format", stats_format);
    stats_cmd->add_option("--train-fraction", stats_fraction);

    // ---------------------------------------------------------- encode
    std::string enc_input, enc_format = "synthetic-json", enc_output, enc_vocab_out, enc_vocab_in;
    bool enc_strict = false;
    CLI::App* enc = app.add_subcommand("encode", "batch encode problems to the codes format");
    enc->add_option("--input", enc_input)->required();
    enc->add_option("--format", enc_format);
    enc->add_option("--output", enc_output)->required();
    enc->add_option("--vocab", enc_vocab_in, "existing vocabulary file (default: build fresh)");
    enc->add_option("--vocab-out", enc_vocab_out, "write the vocabulary here");
    enc->add_flag("--strict", enc_strict, "nonzero exit if any record fails");

    // ---------------------------------------------------------- decode
    std::string dec_input, dec_output;
    bool dec_strict = false;
    CLI::App* dec = app.add_subcommand("decode", "codes file -> answers file");
    dec->add_option("--input", dec_input)->required();
    dec->add_option("--output", dec_output)->required();
    dec->add_flag("--strict", dec_strict);

    // ---------------------------------------------------------- train
    std::string tr_input, tr_vocab, tr_checkpoint = "checkpoint.json", tr_log, tr_config;
    mtc::ModelConfig mc;
    mtc::TrainConfig tc;
    std::string tr_activation = "relu", tr_optimizer = "adam";
    int tr_max_words = 2500;
    CLI::App* tr = app.add_subcommand("train", "train the seq2code model on a supervision file");
    tr->add_option("--input", tr_input, "supervision JSONL from preprocess")->required();
    tr->add_option("--vocab", tr_vocab, "code vocabulary file")->required();
    tr->add_option("--checkpoint", tr_checkpoint);
    tr->add_option("--log", tr_log, "training log JSONL");
    tr->add_option("--config", tr_config, "JSON config file; flags override");
    tr->add_option("--embed-dim", mc.embed_dim);
    tr->add_option("--hidden", mc.hidden);
    tr->add_option("--attn-dim", mc.attn_dim);
    tr->add_option("--ffnn-h1", mc.ffnn_h1);
    tr->add_option("--ffnn-h2", mc.ffnn_h2);
    tr->add_option("--activation", tr_activation, "relu | tanh");
    tr->add_option("--max-words", tr_max_words, "token vocabulary cap");
    tr->add_option("--lr", tc.lr);
    tr->add_option("--batch", tc.batch_size);
    tr->add_option("--epochs", tc.epochs);
    tr->add_option("--seed", tc.seed);
    tr->add_option("--clip", tc.clip_norm);
    tr->add_option("--optimizer", tr_optimizer, "sgd | momentum | adam");
    tr->add_option("--threads", tc.threads);
    tr->add_option("--eval-every", tc.eval_every);

    // ---------------------------------------------------------- predict
    std::string pd_checkpoint, pd_input, pd_output;
    bool pd_report = false, pd_test_only = false;
    CLI::App* pd = app.add_subcommand("predict", "answers from a checkpoint");
    pd->add_option("--checkpoint", pd_checkpoint)->required();
    pd->add_option("--input", pd_input, "supervision JSONL")->required();
    pd->add_option("--output", pd_output, "predictions JSONL");
    pd->add_flag("--report-accuracy", pd_report);
    pd->add_flag("--test-only", pd_test_only, "score only the held-out rows");

    CLI11_PARSE(app, argc, argv);

    try {
        // ------------------------------------------------------ canonicalize
        if (canon->parsed()) {
            mtc::CanonicalResult r;
            try {
                r = mtc::canonicalize_expression(expr_text);
            } catch (const mtc::Error& e) {
                return fail_input("parse", e.what());
            }
            if (canon_json) {
                Json values = Json::array();
                for (const auto& v : r.values) values.push_back(v.value);
                std::cout << Json{{"serialization", r.serialization},
                                  {"value", r.value},
                                  {"values", values}}
                                 .dump()
                          << "\n";
            } else {
                std::cout << r.serialization << "\n" << r.value << "\n";
            }
            return 0;
        }

        // ------------------------------------------------------ gen-synthetic
        if (gen->parsed()) {
            auto records = mtc::generate_synthetic(gen_count, gen_seed);
            mtc::write_jsonl(gen_output, mtc::synthetic_to_json(records));
            std::cout << Json{{"written", records.size()}, {"path", gen_output}}.dump() << "\n";
            return 0;
        }

        // ------------------------------------------------------ preprocess
        if (pre->parsed()) {
            mtc::LoadResult loaded;
            try {
                loaded = load_with_format(pre_input, pre_format);
            } catch (const mtc::Error& e) {
                return fail_input("load", e.what());
            }
            mtc::Supervision sup = mtc::make_supervision(loaded, pre_fraction);
            fs::create_directories(pre_output);
            std::vector<Json> rows;
            rows.reserve(sup.problems.size());
            for (const auto& p : sup.problems)
                rows.push_back(mtc::problem_to_json(p, sup.vocab.size()));
            mtc::write_jsonl((fs::path(pre_output) / "supervision.jsonl").string(), rows);
            mtc::write_json((fs::path(pre_output) / "vocab.json").string(),
                            Json(sup.vocab.codes));
            mtc::write_json((fs::path(pre_output) / "stats.json").string(),
                            sup.stats.to_json());
            if (pre_folds > 1) {
                Json folds = Json::array();
                for (const auto& f : mtc::fold_manifests(sup.problems, pre_folds))
                    folds.push_back(f);
                mtc::write_json((fs::path(pre_output) / "folds.json").string(), folds);
            }
            if (!pre_low.empty()) {
                std::vector<int> sizes;
                std::size_t pos = 0;
                while (pos < pre_low.size()) {
                    std::size_t comma = pre_low.find(',', pos);
                    if (comma == std::string::npos) comma = pre_low.size();
                    sizes.push_back(std::stoi(pre_low.substr(pos, comma - pos)));
                    pos = comma + 1;
                }
                Json lows = Json::object();
                for (const auto& [size, ids] :
                     mtc::low_resource_manifests(sup.problems, sizes, pre_seed))
                    lows[std::to_string(size)] = ids;
                mtc::write_json((fs::path(pre_output) / "low_resource.json").string(), lows);
            }
            std::cout << sup.stats.to_json().dump() << "\n";
            return 0;
        }

        // ------------------------------------------------------ stats
        if (stats_cmd->parsed()) {
            mtc::LoadResult loaded;
            try {
                loaded = load_with_format(stats_input, stats_format);
            } catch (const mtc::Error& e) {
                return fail_input("load", e.what());
            }
            mtc::Supervision sup = mtc::make_supervision(loaded, stats_fraction);
            std::cout << sup.stats.to_json().dump(2) << "\n";
            return 0;
        }

        // ------------------------------------------------------ encode
        if (enc->parsed()) {
            mtc::LoadResult loaded;
            try {
                loaded = load_with_format(enc_input, enc_format);
            } catch (const mtc::Error& e) {
                return fail_input("load", e.what());
            }
            mtc::Supervision sup = mtc::make_supervision(loaded, 1.0);
            mtc::CodeVocab vocab = sup.vocab;
            if (!enc_vocab_in.empty()) {
                Json v = Json::parse(mtc::read_file(mtc::resolve_data_path(enc_vocab_in)));
                vocab.codes = v.get<std::vector<std::string>>();
                vocab.index.clear();
                for (int i = 0; i < static_cast<int>(vocab.codes.size()); ++i)
                    vocab.index[vocab.codes[static_cast<std::size_t>(i)]] = i;
                for (auto& p : sup.problems) {
                    try {
                        p.vectors = mtc::vectorize(p.codesets, vocab);
                        p.covered = true;
                    } catch (const mtc::UnknownCode&) {
                        p.vectors.clear();
                        p.covered = false;
                    }
                }
            }
            std::vector<Json> rows;
            for (const auto& p : sup.problems)
                rows.push_back(mtc::problem_to_json(p, vocab.size()));
            mtc::write_jsonl(enc_output, rows);
            if (!enc_vocab_out.empty()) mtc::write_json(enc_vocab_out, Json(vocab.codes));
            Json summary{{"encoded", sup.problems.size()},
                         {"failed", sup.stats.dropped.size()},
                         {"vocab_size", vocab.size()}};
            std::cout << summary.dump() << "\n";
            if (enc_strict && !sup.stats.dropped.empty())
                return fail_runtime("encode", "records failed under --strict");
            return 0;
        }

        // ------------------------------------------------------ decode
        if (dec->parsed()) {
            std::vector<Json> rows;
            try {
                rows = mtc::read_json_records(dec_input);
            } catch (const mtc::Error& e) {
                return fail_input("load", e.what());
            }
            std::vector<Json> out;
            int failures = 0;
            for (const Json& j : rows) {
                mtc::Problem p = mtc::problem_from_json(j);
                Json rec{{"id", p.id}};
                try {
                    mtc::MTree tree = mtc::decode(p.codesets, p.values);
                    double answer = mtc::eval_mtree(tree);
                    rec["answer"] = answer;
                    rec["ok"] = true;
                    if (j.contains("answer"))
                        rec["matches_gold"] = mtc::answers_equal(answer, p.answer);
                } catch (const mtc::Error& e) {
                    rec["ok"] = false;
                    rec["error"] = e.what();
                    ++failures;
                }
                out.push_back(std::move(rec));
            }
            mtc::write_jsonl(dec_output, out);
            std::cout << Json{{"decoded", out.size() - static_cast<std::size_t>(failures)},
                              {"failed", failures}}
                             .dump()
                      << "\n";
            if (dec_strict && failures > 0) return fail_runtime("decode", "records failed");
            return 0;
        }

        // ------------------------------------------------------ train
        if (tr->parsed()) {
            if (!tr_config.empty()) {
                Json cfg = Json::parse(mtc::read_file(mtc::resolve_data_path(tr_config)));
                apply_config(*tr, cfg, "embed-dim", "embed_dim", mc.embed_dim);
                apply_config(*tr, cfg, "hidden", "hidden", mc.hidden);
                apply_config(*tr, cfg, "attn-dim", "attn_dim", mc.attn_dim);
                apply_config(*tr, cfg, "ffnn-h1", "ffnn_h1", mc.ffnn_h1);
                apply_config(*tr, cfg, "ffnn-h2", "ffnn_h2", mc.ffnn_h2);
                apply_config(*tr, cfg, "activation", "activation", tr_activation);
                apply_config(*tr, cfg, "max-words", "max_words", tr_max_words);
                apply_config(*tr, cfg, "lr", "lr", tc.lr);
                apply_config(*tr, cfg, "batch", "batch_size", tc.batch_size);
                apply_config(*tr, cfg, "epochs", "epochs", tc.epochs);
                apply_config(*tr, cfg, "seed", "seed", tc.seed);
                apply_config(*tr, cfg, "clip", "clip_norm", tc.clip_norm);
                apply_config(*tr, cfg, "optimizer", "optimizer", tr_optimizer);
                apply_config(*tr, cfg, "threads", "threads", tc.threads);
                apply_config(*tr, cfg, "eval-every", "eval_every", tc.eval_every);
            }
            mc.activation = tr_activation == "tanh" ? mtc::Activation::Tanh
                                                    : mtc::Activation::ReLU;
            tc.optimizer = tr_optimizer == "sgd"        ? mtc::Optimizer::Sgd
                           : tr_optimizer == "momentum" ? mtc::Optimizer::Momentum
                                                        : mtc::Optimizer::Adam;

            SupervisionFile sf;
            try {
                sf = read_supervision(tr_input, tr_vocab);
            } catch (const mtc::Error& e) {
                return fail_input("load", e.what());
            }
            mtc::TokenVocab tv = mtc::TokenVocab::build(sf.problems, tr_max_words);
            std::vector<mtc::Example> train_set, dev_set;
            for (const auto& p : sf.problems) {
                if (p.is_train && p.covered)
                    train_set.push_back(mtc::example_from_problem(p, tv));
                else if (!p.is_train)
                    dev_set.push_back(mtc::example_from_problem(p, tv));
            }
            if (train_set.empty()) return fail_input("train", "no trainable rows in input");
            mc.token_vocab = tv.size();
            mc.code_dim = sf.vocab.size();

            Json resolved{{"model", mc.to_json()},
                          {"train",
                           {{"lr", tc.lr},
                            {"batch_size", tc.batch_size},
                            {"epochs", tc.epochs},
                            {"seed", tc.seed},
                            {"clip_norm", tc.clip_norm},
                            {"optimizer", tr_optimizer},
                            {"threads", tc.threads},
                            {"eval_every", tc.eval_every}}},
                          {"train_rows", train_set.size()},
                          {"dev_rows", dev_set.size()}};
            std::cerr << resolved.dump() << "\n";  // config echo

            std::ofstream log_stream;
            if (!tr_log.empty()) {
                log_stream.open(tr_log, std::ios::binary);
                if (!log_stream) return fail_input("log", "cannot open " + tr_log);
                log_stream << Json{{"config", resolved}}.dump() << "\n";
            }
            auto on_epoch = [&](const mtc::EpochLog& e) {
                std::cerr << e.to_json().dump() << "\n";
                if (log_stream) {
                    log_stream << e.to_json().dump() << "\n";
                    log_stream.flush();
                }
            };
            mtc::TrainResult result = train(train_set, dev_set, mc, tc, sf.vocab, on_epoch);
            mtc::save_checkpoint(tr_checkpoint, result.params, tv, sf.vocab);
            double final_dev =
                dev_set.empty() ? -1.0 : mtc::answer_accuracy(result.params, dev_set, sf.vocab);
            std::cout << Json{{"checkpoint", tr_checkpoint},
                              {"epochs", result.log.size()},
                              {"final_loss", result.log.empty() ? 0.0 : result.log.back().loss},
                              {"dev_accuracy", final_dev}}
                             .dump()
                      << "\n";
            return 0;
        }

        // ------------------------------------------------------ predict
        if (pd->parsed()) {
            mtc::Checkpoint ck;
            std::vector<Json> rows;
            try {
                ck = mtc::load_checkpoint(pd_checkpoint);
                rows = mtc::read_json_records(pd_input);
            } catch (const mtc::Error& e) {
                return fail_input("load", e.what());
            }
            std::vector<Json> out;
            int scored = 0, correct = 0;
            for (const Json& j : rows) {
                mtc::Problem p = mtc::problem_from_json(j);
                if (pd_test_only && p.is_train) continue;
                mtc::Example ex = mtc::example_from_problem(p, ck.tokens);
                mtc::Prediction pred = mtc::predict_answer(ck.params, ex, ck.codes);
                Json rec{{"id", p.id}, {"ok", pred.ok}};
                Json codes = Json::array();
                for (const auto& set : pred.rounded_codes) codes.push_back(set);
                rec["codes"] = codes;
                if (pred.ok) rec["answer"] = pred.answer;
                if (!pred.error.empty()) rec["error"] = pred.error;
                bool is_correct = pred.ok && mtc::answers_equal(pred.answer, p.answer);
                rec["correct"] = is_correct;
                ++scored;
                correct += is_correct;
                out.push_back(std::move(rec));
            }
            if (!pd_output.empty()) mtc::write_jsonl(pd_output, out);
            Json summary{{"scored", scored}, {"correct", correct}};
            if (pd_report && scored > 0)
                summary["accuracy"] = static_cast<double>(correct) / scored;
            std::cout << summary.dump() << "\n";
            return 0;
        }
    } catch (const mtc::IoError& e) {
        return fail_input("io", e.what());
    } catch (const mtc::Error& e) {
        return fail_runtime("runtime", e.what());
    } catch (const std::exception& e) {
        return fail_runtime("runtime", e.what());
    }
    return 0;
}
