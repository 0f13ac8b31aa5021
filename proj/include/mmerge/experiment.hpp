#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>

#include "mmerge/bigram.hpp"
#include "mmerge/constraints.hpp"
#include "mmerge/corpus.hpp"
#include "mmerge/errors.hpp"
#include "mmerge/inference.hpp"
#include "mmerge/merging.hpp"
#include "mmerge/model.hpp"
#include "mmerge/synth.hpp"

namespace mmerge {

// Everything a run needs; populated from flags and/or a "key = value"
// config file (flags win).
struct RunConfig {
    std::string train_path;
    std::string test_path;
    std::string extra_test_path;
    std::string lexicon_path;
    std::string schedule = "none";
    std::string stop = "states:1";
    std::string start = "trivial"; // trivial | bigram
    std::string mode = "viterbi";  // viterbi | forward
    std::string oov = "floor";     // strict | floor
    double alpha = 0.0;            // additive smoothing at evaluation time
    std::uint64_t log_every = 100;
    std::uint64_t seed = 1;
    std::string output_dir = ".";
    std::uint64_t reviterbi_every = 0;
    // synth
    std::uint64_t synth_states = 10;
    std::uint64_t synth_alphabet = 20;
    std::uint64_t synth_utterances = 100;
    std::uint64_t synth_test_utterances = 0;
};

inline ScoreMode mode_from_string(const std::string& s) {
    if (s == "viterbi") return ScoreMode::viterbi;
    if (s == "forward") return ScoreMode::forward;
    throw config_error("mode must be 'viterbi' or 'forward', got '" + s + "'");
}

inline OovPolicy oov_from_string(const std::string& s) {
    if (s == "strict") return OovPolicy::strict;
    if (s == "floor") return OovPolicy::floor;
    throw config_error("oov must be 'strict' or 'floor', got '" + s + "'");
}

namespace detail {

inline std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

} // namespace detail

// All output files are written via a temp file and a rename.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw parse_error("cannot write file: " + tmp.string());
        out << content;
        if (!out) throw parse_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::pair<Vocabulary, Corpus> load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open corpus file: " + path);
    try {
        return read_corpus(in);
    } catch (const parse_error& e) {
        throw parse_error(path + ": " + e.what());
    }
}

inline std::pair<CountModel, Vocabulary> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open model file: " + path);
    try {
        return read_model(in);
    } catch (const parse_error& e) {
        throw parse_error(path + ": " + e.what());
    }
}

inline AmbiguityLexicon load_lexicon(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open lexicon file: " + path);
    try {
        return read_lexicon(in, vocab);
    } catch (const parse_error& e) {
        throw parse_error(path + ": " + e.what());
    }
}

inline std::string model_to_string(const CountModel& model, const Vocabulary& vocab) {
    std::ostringstream os;
    write_model(os, model, vocab);
    return os.str();
}

// trace.csv: one row per merge; test_lp empty on unsampled rows
inline std::string trace_to_csv(const MergeTrace& trace) {
    std::string out = "merge,states,train_lp,test_lp,delta,q1,q2\n";
    for (const auto& r : trace.records) {
        out += std::to_string(r.merge_index);
        out += ',';
        out += std::to_string(r.live_states);
        out += ',';
        out += detail::fmt(r.train_lp);
        out += ',';
        if (r.test_lp) out += detail::fmt(*r.test_lp);
        out += ',';
        out += detail::fmt(r.delta);
        out += ',';
        out += std::to_string(r.q1);
        out += ',';
        out += std::to_string(r.q2);
        out += '\n';
    }
    return out;
}

// Evaluation with the configured smoothing: alpha > 0 scores through an
// additively smoothed view, alpha = 0 through the plain ML probabilities.
inline EvaluationReport evaluate_with_config(const CountModel& model, const Vocabulary& model_vocab,
                                             const Corpus& corpus, const Vocabulary& corpus_vocab,
                                             const RunConfig& config) {
    Scorer scorer = config.alpha > 0.0
                        ? Scorer(smooth_view(model, model_vocab.size(), config.alpha))
                        : Scorer(model);
    return evaluate_corpus(scorer, corpus, corpus_vocab, model_vocab,
                           mode_from_string(config.mode), oov_from_string(config.oov));
}

inline void print_report(std::ostream& out, const std::string& label, const EvaluationReport& r) {
    out << label << "_tokens: " << r.token_count << "\n";
    out << label << "_oov_tokens: " << r.oov_tokens << "\n";
    out << label << "_total_log10_prob: " << detail::fmt(r.total_log10_prob) << "\n";
    out << label << "_lp: " << detail::fmt(r.log_perplexity) << "\n";
    out << label << "_pp: " << detail::fmt(r.perplexity) << "\n";
    if (!r.finite) out << label << "_flag: zero-probability utterances\n";
}

inline void cmd_bigram(const RunConfig& config, std::ostream& out) {
    auto [vocab, corpus] = load_corpus(config.train_path);
    auto [model, paths] = build_bigram(corpus, vocab);
    (void)paths;

    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    std::filesystem::path model_path = dir / "bigram.model";
    atomic_write(model_path, model_to_string(model, vocab));

    out << "states: " << model.num_live() << "\n";
    print_report(out, "train", evaluate_with_config(model, vocab, corpus, vocab, config));
    if (!config.test_path.empty()) {
        auto [tvocab, tcorpus] = load_corpus(config.test_path);
        print_report(out, "test", evaluate_with_config(model, vocab, tcorpus, tvocab, config));
    }
    out << "model: " << model_path.string() << "\n";
}

inline void cmd_merge(const RunConfig& config, std::ostream& out) {
    auto [vocab, corpus] = load_corpus(config.train_path);

    std::optional<std::pair<Vocabulary, Corpus>> test;
    if (!config.test_path.empty()) test = load_corpus(config.test_path);

    std::optional<AmbiguityLexicon> lexicon;
    if (!config.lexicon_path.empty()) {
        lexicon = load_lexicon(config.lexicon_path, vocab);
        // fail early, naming the word, if the lexicon cannot cover the corpus
        for (std::size_t t = 0; t < vocab.size(); ++t) {
            if (!lexicon->entries.count(static_cast<TokenId>(t)))
                throw config_error("lexicon does not cover corpus word '" +
                                   vocab.lookup(static_cast<TokenId>(t)) + "'");
        }
    }

    CountModel model;
    StoredPaths paths;
    PremergeStats premerges;
    if (config.start == "trivial") {
        std::tie(model, paths) = build_trivial_model(corpus);
        premerges = premerge_affixes(model, paths, corpus);
    } else if (config.start == "bigram") {
        std::tie(model, paths) = build_bigram(corpus, vocab);
    } else {
        throw config_error("start must be 'trivial' or 'bigram', got '" + config.start + "'");
    }

    MergeOptions options;
    options.schedule = parse_schedule(config.schedule);
    options.stop = parse_stop(config.stop);
    options.log_every = std::max<std::uint64_t>(1, config.log_every);
    options.eval_mode = mode_from_string(config.mode);
    options.eval_oov = oov_from_string(config.oov);
    options.initial_merges = premerges.merges;
    options.reviterbi_every = config.reviterbi_every;
    if (lexicon) options.lexicon = &*lexicon;
    if (test) {
        options.eval_corpus = &test->second;
        options.eval_vocab = &test->first;
        options.model_vocab = &vocab;
    }

    MergeRunResult result = run_merging(model, paths, corpus, options);
    const CountModel& chosen = result.best_model ? *result.best_model : model;

    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    std::filesystem::path model_path = dir / "merged.model";
    std::filesystem::path trace_path = dir / "trace.csv";
    atomic_write(model_path, model_to_string(chosen, vocab));
    atomic_write(trace_path, trace_to_csv(result.trace));

    out << "start: " << config.start << "\n";
    out << "premerges: " << premerges.merges << "\n";
    out << "merges: " << result.merges << "\n";
    out << "stop_reason: " << to_string(result.reason) << "\n";
    out << "final_states: " << model.num_live() << "\n";
    out << "final_train_lp: "
        << detail::fmt(-(result.final_train_loglik / kLn10) /
                       static_cast<double>(corpus.total_tokens))
        << "\n";
    out << "best_states: " << chosen.num_live() << "\n";
    if (result.best_model)
        out << "best_merge_index: " << result.best_merge_index << "\n";
    if (test) {
        print_report(out, "test",
                     evaluate_with_config(chosen, vocab, test->second, test->first, config));
    }
    if (!config.extra_test_path.empty()) {
        auto [xvocab, xcorpus] = load_corpus(config.extra_test_path);
        print_report(out, "extra_test",
                     evaluate_with_config(chosen, vocab, xcorpus, xvocab, config));
    }
    out << "model: " << model_path.string() << "\n";
    out << "trace: " << trace_path.string() << "\n";
}

inline void cmd_eval(const RunConfig& config, const std::string& model_path,
                     const std::string& corpus_path, std::ostream& out) {
    auto [model, vocab] = load_model(model_path);
    auto [cvocab, corpus] = load_corpus(corpus_path);
    print_report(out, "eval", evaluate_with_config(model, vocab, corpus, cvocab, config));
}

inline void cmd_synth(const RunConfig& config, std::ostream& out) {
    SynthResult synth = synthesize(config.synth_states, config.synth_alphabet,
                                   config.synth_utterances, config.synth_test_utterances,
                                   config.seed);
    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);

    auto corpus_text = [&](const std::vector<std::vector<TokenId>>& utts) {
        std::string text;
        for (const auto& u : utts) {
            for (std::size_t i = 0; i < u.size(); ++i) {
                if (i) text += ' ';
                text += synth.vocab.lookup(u[i]);
            }
            text += '\n';
        }
        return text;
    };

    std::filesystem::path train_path = dir / "synth_train.txt";
    atomic_write(train_path, corpus_text(synth.train));
    out << "train: " << train_path.string() << " (" << synth.train.size() << " utterances)\n";
    if (!synth.test.empty()) {
        std::filesystem::path test_path = dir / "synth_test.txt";
        atomic_write(test_path, corpus_text(synth.test));
        out << "test: " << test_path.string() << " (" << synth.test.size() << " utterances)\n";
    }
    std::filesystem::path ref_path = dir / "synth_generator.model";
    atomic_write(ref_path, model_to_string(synth.reference, synth.vocab));
    out << "generator: " << ref_path.string() << "\n";
}

inline void cmd_inspect(const std::string& model_path, std::ostream& out) {
    auto [model, vocab] = load_model(model_path);
    std::size_t trans_cells = model.trans_row(kStartState).size();
    std::size_t emit_cells = 0;
    Count total_visits = 0;
    for (StateId q : model.live_states()) {
        trans_cells += model.trans_row(q).size();
        emit_cells += model.emit_row(q).size();
        total_visits += model.visits(q);
    }
    out << "states: " << model.num_live() << "\n";
    out << "vocab: " << vocab.size() << "\n";
    out << "transition_cells: " << trans_cells << "\n";
    out << "emission_cells: " << emit_cells << "\n";
    out << "total_tokens: " << total_visits << "\n";
    out << "utterances: " << model.visits(kStartState) << "\n";
    auto violations = validate(model);
    out << "valid: " << (violations.empty() ? "yes" : "no") << "\n";
    for (const auto& v : violations) out << "violation: " << v << "\n";
}

} // namespace mmerge
