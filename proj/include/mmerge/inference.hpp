#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mmerge/corpus.hpp"
#include "mmerge/errors.hpp"
#include "mmerge/model.hpp"

namespace mmerge {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr TokenId kNoToken = std::numeric_limits<TokenId>::max();
inline constexpr double kLn10 = 2.302585092994045684;

enum class ScoreMode { forward, viterbi };
enum class OovPolicy { strict, floor };

// Emission log-probability an out-of-vocabulary token receives from any
// state under the floor policy; transitions are left unchanged.
inline const double kOovFloorLogEmit = std::log(1e-6);

struct SequenceScore {
    double log_prob = kNegInf; // natural log
    std::size_t length = 0;
};

struct ViterbiResult {
    double log_prob = kNegInf;
    std::vector<StateId> path;
};

struct EvaluationReport {
    double total_log10_prob = 0.0;
    std::uint64_t token_count = 0;
    double log_perplexity = 0.0; // -total_log10_prob / token_count
    double perplexity = 1.0;     // 10^log_perplexity
    std::uint64_t oov_tokens = 0;
    bool finite = true;
};

namespace detail {
inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    if (a < b) std::swap(a, b);
    return a + std::log1p(std::exp(b - a));
}
} // namespace detail

// Scores token sequences against an immutable probability snapshot.
// Sequences use model token ids; kNoToken marks out-of-vocabulary tokens.
class Scorer {
  public:
    explicit Scorer(const CountModel& model) : Scorer(probabilities(model)) {}

    explicit Scorer(ProbabilityView view) : view_(std::move(view)) {}

    const ProbabilityView& view() const { return view_; }

    SequenceScore forward(std::span<const TokenId> seq, OovPolicy policy = OovPolicy::strict) const {
        if (seq.empty()) throw internal_error("forward: empty sequence");
        std::map<StateId, double> cur;
        seed(cur, seq[0], policy);
        for (std::size_t i = 1; i < seq.size() && !cur.empty(); ++i) {
            std::map<StateId, double> next;
            for (const auto& [q, lp] : cur) {
                auto rit = view_.log_trans.find(q);
                if (rit == view_.log_trans.end()) continue;
                for (const auto& [to, ltp] : rit->second) {
                    if (to == kEndState) continue;
                    double le = emit_logprob(to, seq[i], policy);
                    if (le == kNegInf) continue;
                    double v = lp + ltp + le;
                    auto [it, inserted] = next.emplace(to, v);
                    if (!inserted) it->second = detail::log_add(it->second, v);
                }
            }
            cur.swap(next);
        }
        double total = kNegInf;
        for (const auto& [q, lp] : cur) {
            double lend = trans_logprob(q, kEndState);
            if (lend != kNegInf) total = detail::log_add(total, lp + lend);
        }
        return SequenceScore{total, seq.size()};
    }

    // Best path; ties broken toward the smallest predecessor state id.
    ViterbiResult viterbi(std::span<const TokenId> seq, OovPolicy policy = OovPolicy::strict) const {
        if (seq.empty()) throw internal_error("viterbi: empty sequence");
        std::map<StateId, double> cur;
        seed(cur, seq[0], policy);
        std::vector<std::map<StateId, StateId>> back(seq.size());
        for (std::size_t i = 1; i < seq.size() && !cur.empty(); ++i) {
            std::map<StateId, double> next;
            for (const auto& [q, lp] : cur) { // ascending q: first writer wins ties
                auto rit = view_.log_trans.find(q);
                if (rit == view_.log_trans.end()) continue;
                for (const auto& [to, ltp] : rit->second) {
                    if (to == kEndState) continue;
                    double le = emit_logprob(to, seq[i], policy);
                    if (le == kNegInf) continue;
                    double v = lp + ltp + le;
                    auto it = next.find(to);
                    if (it == next.end()) {
                        next.emplace(to, v);
                        back[i][to] = q;
                    } else if (v > it->second) {
                        it->second = v;
                        back[i][to] = q;
                    }
                }
            }
            cur.swap(next);
        }
        ViterbiResult result;
        for (const auto& [q, lp] : cur) {
            double lend = trans_logprob(q, kEndState);
            if (lend == kNegInf) continue;
            double v = lp + lend;
            if (v > result.log_prob) {
                result.log_prob = v;
                result.path.assign(1, q);
            }
        }
        if (result.log_prob == kNegInf) return result;
        for (std::size_t i = seq.size(); i-- > 1;)
            result.path.push_back(back[i].at(result.path.back()));
        std::reverse(result.path.begin(), result.path.end());
        return result;
    }

  private:
    void seed(std::map<StateId, double>& cur, TokenId tok, OovPolicy policy) const {
        auto sit = view_.log_trans.find(kStartState);
        if (sit == view_.log_trans.end()) return;
        for (const auto& [q, ltp] : sit->second) {
            if (q == kEndState) continue;
            double le = emit_logprob(q, tok, policy);
            if (le != kNegInf) cur.emplace(q, ltp + le);
        }
    }

    double emit_logprob(StateId q, TokenId tok, OovPolicy policy) const {
        if (tok == kNoToken)
            return policy == OovPolicy::floor ? kOovFloorLogEmit : kNegInf;
        auto it = view_.log_emit.find(q);
        if (it == view_.log_emit.end()) return kNegInf;
        auto jt = it->second.find(tok);
        return jt == it->second.end() ? kNegInf : jt->second;
    }

    double trans_logprob(StateId from, StateId to) const {
        auto it = view_.log_trans.find(from);
        if (it == view_.log_trans.end()) return kNegInf;
        auto jt = it->second.find(to);
        return jt == it->second.end() ? kNegInf : jt->second;
    }

    ProbabilityView view_;
};

inline SequenceScore forward(const CountModel& model, std::span<const TokenId> seq,
                             OovPolicy policy = OovPolicy::strict) {
    return Scorer(model).forward(seq, policy);
}

inline ViterbiResult viterbi(const CountModel& model, std::span<const TokenId> seq,
                             OovPolicy policy = OovPolicy::strict) {
    return Scorer(model).viterbi(seq, policy);
}

// Maps a corpus token id onto the model vocabulary; kNoToken when absent.
inline std::vector<TokenId> token_map(const Vocabulary& from, const Vocabulary& to) {
    std::vector<TokenId> map(from.size(), kNoToken);
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (auto id = to.find(from.lookup(static_cast<TokenId>(i)))) map[i] = *id;
    }
    return map;
}

// Corpus log perplexity, base 10 per emitted token.  End transitions enter
// the probability but are not counted in the denominator.
inline EvaluationReport evaluate_corpus(const Scorer& scorer, const Corpus& corpus,
                                        const Vocabulary& corpus_vocab, const Vocabulary& model_vocab,
                                        ScoreMode mode, OovPolicy policy) {
    if (corpus.utterances.empty()) throw internal_error("evaluate_corpus: empty corpus");
    std::vector<TokenId> remap = token_map(corpus_vocab, model_vocab);
    EvaluationReport report;
    report.token_count = corpus.total_tokens;
    double total_ln = 0.0;
    bool finite = true;
    for (const auto& utt : corpus.utterances) {
        std::vector<TokenId> seq;
        seq.reserve(utt.tokens.size());
        std::uint64_t oov = 0;
        for (TokenId t : utt.tokens) {
            TokenId m = remap[t];
            if (m == kNoToken) ++oov;
            seq.push_back(m);
        }
        report.oov_tokens += oov * utt.multiplicity;
        double lp = mode == ScoreMode::forward ? scorer.forward(seq, policy).log_prob
                                               : scorer.viterbi(seq, policy).log_prob;
        if (lp == kNegInf) {
            finite = false;
            continue;
        }
        total_ln += lp * static_cast<double>(utt.multiplicity);
    }
    report.finite = finite;
    if (!finite) {
        report.total_log10_prob = kNegInf;
        report.log_perplexity = std::numeric_limits<double>::infinity();
        report.perplexity = std::numeric_limits<double>::infinity();
        return report;
    }
    report.total_log10_prob = total_ln / kLn10;
    report.log_perplexity = -report.total_log10_prob / static_cast<double>(report.token_count);
    report.perplexity = std::pow(10.0, report.log_perplexity);
    return report;
}

inline EvaluationReport evaluate_corpus(const CountModel& model, const Corpus& corpus,
                                        const Vocabulary& corpus_vocab, const Vocabulary& model_vocab,
                                        ScoreMode mode, OovPolicy policy) {
    return evaluate_corpus(Scorer(model), corpus, corpus_vocab, model_vocab, mode, policy);
}

} // namespace mmerge
