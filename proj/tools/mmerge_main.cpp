// mmerge: derive Markov models from text corpora by greedy state merging
// and evaluate them against n-gram baselines.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmerge/experiment.hpp"

namespace {

void add_eval_flags(CLI::App* cmd, mmerge::RunConfig& config) {
    cmd->add_option("--mode", config.mode, "scoring mode: viterbi|forward");
    cmd->add_option("--oov", config.oov, "out-of-vocabulary policy: strict|floor");
    cmd->add_option("--alpha", config.alpha, "additive smoothing for evaluation (0 = ML)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Markov model induction by state merging"};
    app.require_subcommand(1);
    app.set_config("--config", "", "config file with key = value lines");

    mmerge::RunConfig config;
    std::string model_path;
    std::string corpus_path;

    CLI::App* bigram = app.add_subcommand("bigram", "build a bigram baseline model");
    bigram->add_option("--train", config.train_path, "training corpus")->required();
    bigram->add_option("--test", config.test_path, "held-out corpus");
    bigram->add_option("--out", config.output_dir, "output directory");
    add_eval_flags(bigram, config);

    CLI::App* merge = app.add_subcommand("merge", "induce a model by state merging");
    merge->add_option("--train", config.train_path, "training corpus")->required();
    merge->add_option("--test", config.test_path, "held-out corpus");
    merge->add_option("--extra-test", config.extra_test_path, "additional unseen test corpus");
    merge->add_option("--lexicon", config.lexicon_path, "ambiguity-class lexicon");
    merge->add_option("--schedule", config.schedule,
                      "constraint cascade, e.g. unigram:12500,none");
    merge->add_option("--stop", config.stop,
                      "stop criterion: states:N | merges:N | train_lp:X | heldout:PATIENCE");
    merge->add_option("--start", config.start, "starting model: trivial|bigram");
    merge->add_option("--log-every", config.log_every, "held-out evaluation interval in merges");
    merge->add_option("--reviterbi-every", config.reviterbi_every,
                      "re-parse the corpus every N merges (0 = never)");
    merge->add_option("--out", config.output_dir, "output directory");
    add_eval_flags(merge, config);

    CLI::App* eval = app.add_subcommand("eval", "score a corpus under a model file");
    eval->add_option("--model", model_path, "model file")->required();
    eval->add_option("--corpus", corpus_path, "corpus to score")->required();
    add_eval_flags(eval, config);

    CLI::App* synth = app.add_subcommand("synth", "sample a synthetic corpus");
    synth->add_option("--states", config.synth_states, "generator state count");
    synth->add_option("--alphabet", config.synth_alphabet, "alphabet size");
    synth->add_option("--utterances", config.synth_utterances, "training utterances");
    synth->add_option("--test-utterances", config.synth_test_utterances,
                      "held-out utterances (0 = none)");
    synth->add_option("--seed", config.seed, "random seed");
    synth->add_option("--out", config.output_dir, "output directory");

    CLI::App* inspect = app.add_subcommand("inspect", "print model statistics");
    inspect->add_option("--model", model_path, "model file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (bigram->parsed()) mmerge::cmd_bigram(config, std::cout);
        else if (merge->parsed()) mmerge::cmd_merge(config, std::cout);
        else if (eval->parsed()) mmerge::cmd_eval(config, model_path, corpus_path, std::cout);
        else if (synth->parsed()) mmerge::cmd_synth(config, std::cout);
        else if (inspect->parsed()) mmerge::cmd_inspect(model_path, std::cout);
        return 0;
    } catch (const mmerge::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const mmerge::parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
