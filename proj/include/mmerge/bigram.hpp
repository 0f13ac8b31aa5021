#pragma once

#include <cmath>
#include <utility>

#include "mmerge/corpus.hpp"
#include "mmerge/errors.hpp"
#include "mmerge/merging.hpp"
#include "mmerge/model.hpp"

namespace mmerge {

// Standard bigram model: one state per word type emitting that word, with
// transition counts equal to the bigram frequencies (start and end
// included).  Every utterance has a unique state path, so the stored paths
// come for free.  This is the fixed point of unigram-constrained merging
// and the usual alternative starting point for the merge loop.
inline std::pair<CountModel, StoredPaths> build_bigram(const Corpus& corpus,
                                                       const Vocabulary& vocab) {
    if (corpus.utterances.empty()) throw internal_error("build_bigram: empty corpus");
    CountModel model;
    std::vector<StateId> state_of(vocab.size());
    for (std::size_t t = 0; t < vocab.size(); ++t) state_of[t] = model.new_state();

    StoredPaths stored;
    stored.paths.reserve(corpus.utterances.size());
    for (const auto& utt : corpus.utterances) {
        std::vector<StateId> path;
        path.reserve(utt.tokens.size());
        for (TokenId t : utt.tokens) path.push_back(state_of[t]);
        model.record_path(path, utt.tokens, static_cast<Count>(utt.multiplicity));
        stored.paths.push_back(std::move(path));
    }
    return {std::move(model), std::move(stored)};
}

// Additive smoothing over the full event domains: transitions of a proper
// state range over every live proper state plus the end state (the start
// state's row omits the end), emissions range over the whole vocabulary.
// Evaluation-time only; merging always runs on unsmoothed counts.
inline ProbabilityView smooth_view(const CountModel& model, std::size_t vocab_size, double alpha) {
    if (alpha <= 0.0)
        throw config_error("smooth_view: alpha must be positive (use probabilities() for alpha=0)");

    ProbabilityView view;
    const auto& live = model.live_states();
    auto fill_trans = [&](StateId q) {
        double domain = static_cast<double>(live.size()) + (q == kStartState ? 0.0 : 1.0);
        double total = static_cast<double>(model.visits(q)) + alpha * domain;
        double log_total = std::log(total);
        auto& dst = view.log_trans[q];
        for (StateId to : live)
            dst[to] = std::log(static_cast<double>(model.trans_count(q, to)) + alpha) - log_total;
        if (q != kStartState)
            dst[kEndState] =
                std::log(static_cast<double>(model.trans_count(q, kEndState)) + alpha) - log_total;
    };
    fill_trans(kStartState);
    for (StateId q : live) {
        fill_trans(q);
        double total = static_cast<double>(model.visits(q)) + alpha * static_cast<double>(vocab_size);
        double log_total = std::log(total);
        const auto& row = model.emit_row(q);
        auto& dst = view.log_emit[q];
        for (TokenId t = 0; t < vocab_size; ++t) {
            auto it = row.find(t);
            Count c = it == row.end() ? 0 : it->second;
            dst[t] = std::log(static_cast<double>(c) + alpha) - log_total;
        }
    }
    return view;
}

} // namespace mmerge
