#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmerge/constraints.hpp"
#include "mmerge/corpus.hpp"
#include "mmerge/errors.hpp"
#include "mmerge/inference.hpp"
#include "mmerge/model.hpp"

namespace mmerge {

// Viterbi paths of the training utterances, index-parallel to
// Corpus::utterances.  Entries may reference retired states; resolve them
// through the model's merge history.
struct StoredPaths {
    std::vector<std::vector<StateId>> paths;

    std::vector<StateId> resolved(const CountModel& model, std::size_t utt_index) const {
        std::vector<StateId> out = paths.at(utt_index);
        for (StateId& q : out) q = model.resolve(q);
        return out;
    }
};

namespace detail {

inline double xlogx(Count c) {
    return c <= 0 ? 0.0 : static_cast<double>(c) * std::log(static_cast<double>(c));
}

// G(row) = sum_j c_j ln c_j - C ln C with C the row total.  Summing G over
// all transition and emission rows gives the log-likelihood of the corpus
// under the stored-path (Viterbi-count) approximation, because every event
// in a row contributes ln(c/C) and events group by cell.
template <typename Row>
double row_gain(const Row& row) {
    double s = 0.0;
    Count total = 0;
    for (const auto& [key, c] : row) {
        (void)key;
        s += xlogx(c);
        total += c;
    }
    return s - xlogx(total);
}

} // namespace detail

// Natural-log likelihood of the training corpus under the stored-path
// approximation: ln prod_utterances P(path, tokens)^multiplicity.
inline double corpus_loglik(const CountModel& model) {
    auto checked_row_gain = [&](StateId q) {
        Count total = 0;
        for (const auto& [to, c] : model.trans_row(q)) {
            (void)to;
            total += c;
        }
        if (total != model.visits(q))
            throw internal_error("corpus_loglik: state " + std::to_string(q) +
                                 " has inconsistent counts");
        return detail::row_gain(model.trans_row(q));
    };
    double sum = checked_row_gain(kStartState);
    for (StateId q : model.live_states()) {
        sum += checked_row_gain(q);
        sum += detail::row_gain(model.emit_row(q));
    }
    return sum;
}

// One linear state chain per distinct utterance, weighted by multiplicity.
// This is the maximum-likelihood model: it assigns the corpus the highest
// probability any model can, (1/u)^u for u pairwise-distinct utterances.
inline std::pair<CountModel, StoredPaths> build_trivial_model(const Corpus& corpus) {
    if (corpus.utterances.empty()) throw internal_error("build_trivial_model: empty corpus");
    CountModel model;
    StoredPaths stored;
    stored.paths.reserve(corpus.utterances.size());
    for (const auto& utt : corpus.utterances) {
        std::vector<StateId> chain;
        chain.reserve(utt.tokens.size());
        for (std::size_t i = 0; i < utt.tokens.size(); ++i) chain.push_back(model.new_state());
        model.record_path(chain, utt.tokens, static_cast<Count>(utt.multiplicity));
        stored.paths.push_back(std::move(chain));
    }
    return {std::move(model), std::move(stored)};
}

// Exact change in corpus_loglik if q1 and q2 were merged, from local count
// algebra only: the merged transition and emission rows replace the two old
// ones, and each shared predecessor r contributes the change of its two
// cells into the pair (its row total is unchanged).  No model mutation.
//
// Row pooling can only lose likelihood, but the shared-predecessor term
// (c1+c2)ln(c1+c2) - c1 ln c1 - c2 ln c2 is a gain, so the total can come
// out positive for near-duplicate states fed by the same predecessors.
inline double delta_loglik(const CountModel& model, StateId q1, StateId q2) {
    if (q1 == q2 || !model.is_live(q1) || !model.is_live(q2))
        throw internal_error("delta_loglik: need two distinct live proper states");

    double delta = 0.0;

    // merged transition row; q1/q2 targets fold into the self-loop
    std::map<StateId, Count> mrow;
    for (StateId src : {q1, q2}) {
        for (const auto& [to, c] : model.trans_row(src)) {
            StateId t = (to == q1 || to == q2) ? q1 : to;
            mrow[t] += c;
        }
    }
    delta += detail::row_gain(mrow);
    delta -= detail::row_gain(model.trans_row(q1));
    delta -= detail::row_gain(model.trans_row(q2));

    // merged emission row
    std::map<TokenId, Count> erow;
    for (StateId src : {q1, q2}) {
        for (const auto& [tok, c] : model.emit_row(src)) erow[tok] += c;
    }
    delta += detail::row_gain(erow);
    delta -= detail::row_gain(model.emit_row(q1));
    delta -= detail::row_gain(model.emit_row(q2));

    // predecessors outside the pair whose cells into q1 and q2 combine
    const auto& p1 = model.preds(q1);
    const auto& p2 = model.preds(q2);
    for (StateId r : p1) {
        if (r == q1 || r == q2 || !p2.count(r)) continue;
        Count c1 = model.trans_count(r, q1);
        Count c2 = model.trans_count(r, q2);
        delta += detail::xlogx(c1 + c2) - detail::xlogx(c1) - detail::xlogx(c2);
    }
    return delta;
}

// Merges q1 and q2; stored paths stay valid via lazy relabeling through
// the model's merge history.
inline StateId apply_merge(CountModel& model, StoredPaths& paths, StateId q1, StateId q2) {
    (void)paths;
    return model.merge_states(q1, q2);
}

// Rebuilds a count model over the same live states from the stored paths.
// Equality with the original is the path/count consistency invariant.
inline CountModel counts_from_paths(const CountModel& model, const StoredPaths& stored,
                                    const Corpus& corpus) {
    CountModel rebuilt = model;
    rebuilt.clear_counts();
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
        auto path = stored.resolved(model, i);
        rebuilt.record_path(path, corpus.utterances[i].tokens,
                            static_cast<Count>(corpus.utterances[i].multiplicity));
    }
    return rebuilt;
}

struct PremergeStats {
    std::uint64_t merges = 0;
    double max_abs_delta = 0.0;
};

// Shortcut merges that provably keep the corpus probability unchanged:
// states with identical utterance prefixes (processed root-first, so every
// group shares one already-merged predecessor) and states with identical
// continuations to the end (processed end-first).  A suffix group member
// only qualifies while its live state contains nothing but states with
// that same suffix; prefix-merged states with diverging continuations stay
// untouched.
inline PremergeStats premerge_affixes(CountModel& model, StoredPaths& paths, const Corpus& corpus) {
    PremergeStats stats;
    std::unordered_map<StateId, std::uint64_t> comp_size;

    auto merge_group = [&](std::vector<StateId> members) {
        // distinct live representatives, ascending
        std::set<StateId> reps;
        for (StateId s : members) reps.insert(model.find(s));
        if (reps.size() < 2) return;
        auto it = reps.begin();
        StateId acc = *it++;
        for (; it != reps.end(); ++it) {
            double d = delta_loglik(model, acc, *it);
            if (std::abs(d) > stats.max_abs_delta) stats.max_abs_delta = std::abs(d);
            StateId merged = apply_merge(model, paths, acc, *it);
            comp_size[merged] = comp_size[acc] + comp_size[*it];
            ++stats.merges;
            acc = merged;
        }
    };

    // group original chain states by token prefix / suffix
    std::map<std::vector<TokenId>, std::vector<StateId>> by_prefix;
    std::map<std::vector<TokenId>, std::vector<StateId>> by_suffix;
    for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
        const auto& toks = corpus.utterances[u].tokens;
        const auto& chain = paths.paths[u];
        for (std::size_t i = 0; i < toks.size(); ++i) {
            comp_size[chain[i]] = 1;
            by_prefix[std::vector<TokenId>(toks.begin(), toks.begin() + i + 1)].push_back(chain[i]);
            by_suffix[std::vector<TokenId>(toks.rbegin(), toks.rend() - i)].push_back(chain[i]);
        }
    }

    // prefixes, shortest first (map order: length ties broken lexicographically)
    std::vector<const std::vector<TokenId>*> order;
    for (const auto& [key, members] : by_prefix) {
        (void)members;
        order.push_back(&key);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto* a, const auto* b) { return a->size() < b->size(); });
    for (const auto* key : order) merge_group(by_prefix[*key]);

    // suffixes, shortest first; keep only members whose live state is pure
    order.clear();
    for (const auto& [key, members] : by_suffix) {
        (void)members;
        order.push_back(&key);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto* a, const auto* b) { return a->size() < b->size(); });
    for (const auto* key : order) {
        std::map<StateId, std::uint64_t> in_group;
        for (StateId s : by_suffix[*key]) ++in_group[model.find(s)];
        std::vector<StateId> qualifying;
        for (const auto& [rep, n] : in_group) {
            if (n == comp_size[rep]) qualifying.push_back(rep);
        }
        merge_group(std::move(qualifying));
    }
    return stats;
}

// Re-parses the corpus: recomputes every utterance's Viterbi path under
// the current probabilities and rebuilds the counts from those paths.  The
// stored-path likelihood cannot drop: re-parsing only finds better paths.
inline std::pair<CountModel, StoredPaths> reviterbi(const CountModel& model, const Corpus& corpus) {
    double before = corpus_loglik(model);
    Scorer scorer(model);
    StoredPaths fresh;
    fresh.paths.reserve(corpus.utterances.size());
    for (const auto& utt : corpus.utterances) {
        ViterbiResult r = scorer.viterbi(utt.tokens, OovPolicy::strict);
        if (r.log_prob == kNegInf)
            throw internal_error("reviterbi: utterance has no path under the model");
        fresh.paths.push_back(std::move(r.path));
    }
    CountModel rebuilt = model;
    rebuilt.clear_counts();
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
        rebuilt.record_path(fresh.paths[i], corpus.utterances[i].tokens,
                            static_cast<Count>(corpus.utterances[i].multiplicity));
    double after = corpus_loglik(rebuilt);
    if (after < before - 1e-9)
        throw internal_error("reviterbi lowered the stored-path likelihood");
    return {std::move(rebuilt), std::move(fresh)};
}

// --- the greedy loop --------------------------------------------------------

struct StopCriterion {
    enum class Kind { train_lp_threshold, target_states, max_merges, held_out_minimum };
    Kind kind = Kind::target_states;
    double lp_threshold = 0.0;   // train_lp_threshold: stop once train LP reaches this
    std::size_t states = 1;      // target_states
    std::uint64_t merges = 0;    // max_merges (counted like schedule budgets)
    std::uint64_t patience = 0;  // held_out_minimum: merges without improvement

    static StopCriterion train_lp(double threshold) {
        StopCriterion s;
        s.kind = Kind::train_lp_threshold;
        s.lp_threshold = threshold;
        return s;
    }
    static StopCriterion target_states(std::size_t n) {
        StopCriterion s;
        s.kind = Kind::target_states;
        s.states = n;
        return s;
    }
    static StopCriterion max_merges(std::uint64_t n) {
        StopCriterion s;
        s.kind = Kind::max_merges;
        s.merges = n;
        return s;
    }
    static StopCriterion held_out(std::uint64_t patience) {
        StopCriterion s;
        s.kind = Kind::held_out_minimum;
        s.patience = patience;
        return s;
    }
};

// "states:30" | "train_lp:2.4" | "merges:1000" | "heldout:300"
inline StopCriterion parse_stop(std::string_view text) {
    std::size_t colon = text.find(':');
    if (colon == std::string_view::npos) throw config_error("stop criterion needs kind:value");
    std::string kind(text.substr(0, colon));
    std::string value(text.substr(colon + 1));
    try {
        if (kind == "states") return StopCriterion::target_states(std::stoul(value));
        if (kind == "train_lp") return StopCriterion::train_lp(std::stod(value));
        if (kind == "merges") return StopCriterion::max_merges(std::stoull(value));
        if (kind == "heldout") return StopCriterion::held_out(std::stoull(value));
    } catch (const config_error&) {
        throw;
    } catch (const std::exception&) {
        throw config_error("bad stop criterion value '" + value + "'");
    }
    throw config_error("unknown stop criterion '" + kind + "'");
}

struct TraceRecord {
    std::uint64_t merge_index = 0; // cumulative, premerges included
    std::size_t live_states = 0;
    double train_lp = 0.0;
    std::optional<double> test_lp;
    StateId q1 = 0, q2 = 0;
    double delta = 0.0;
};

struct MergeTrace {
    std::vector<TraceRecord> records;
};

enum class StopReason { criterion, constraint_exhausted, single_state };

inline std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::criterion: return "criterion";
        case StopReason::constraint_exhausted: return "constraint_exhausted";
        case StopReason::single_state: return "single_state";
    }
    return "?";
}

struct MergeOptions {
    ConstraintSchedule schedule{{ConstraintKind::none, std::nullopt}};
    StopCriterion stop = StopCriterion::target_states(1);
    const Corpus* eval_corpus = nullptr;     // held-out corpus, optional
    const Vocabulary* eval_vocab = nullptr;  // its vocabulary
    const Vocabulary* model_vocab = nullptr; // training vocabulary
    std::uint64_t log_every = 100;
    ScoreMode eval_mode = ScoreMode::viterbi;
    OovPolicy eval_oov = OovPolicy::floor;
    std::uint64_t initial_merges = 0; // premerges already performed
    const AmbiguityLexicon* lexicon = nullptr;
    std::uint64_t reviterbi_every = 0; // 0 = pure stored-path behavior
};

struct MergeRunResult {
    MergeTrace trace;
    StopReason reason = StopReason::criterion;
    std::uint64_t merges = 0; // merges performed by this call
    double final_train_loglik = 0.0;
    // snapshot at the held-out minimum; empty when the criterion is not
    // held_out_minimum or no finite held-out LP was ever observed
    std::optional<CountModel> best_model;
    std::optional<double> best_test_lp;
    std::uint64_t best_merge_index = 0;
};

namespace detail {

inline std::uint64_t pair_key(StateId a, StateId b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

struct HeapEntry {
    double delta;
    std::uint64_t key;
    std::uint32_t gen;
    bool operator<(const HeapEntry& other) const {
        if (delta != other.delta) return delta < other.delta;
        return key > other.key; // prefer the lexicographically smallest pair
    }
};

// Memoized merge deltas with lazy-deletion max-heap selection.  Deltas are
// invalidated only for pairs touching states whose rows or incoming cells
// changed in the last merge.
class CandidateCache {
  public:
    bool contains(std::uint64_t key) const { return entries_.count(key) > 0; }

    void compute(const CountModel& model, StateId a, StateId b) {
        std::uint64_t key = pair_key(a, b);
        auto [it, inserted] = entries_.try_emplace(key);
        if (!inserted) return;
        it->second.delta = delta_loglik(model, a, b);
        it->second.gen = ++gen_counter_;
        partners_[a].push_back(b);
        partners_[b].push_back(a);
        heap_.push(HeapEntry{it->second.delta, key, it->second.gen});
    }

    void invalidate_state(StateId s) {
        auto it = partners_.find(s);
        if (it == partners_.end()) return;
        for (StateId t : it->second) {
            auto jt = entries_.find(pair_key(s, t));
            if (jt != entries_.end()) entries_.erase(jt);
        }
        partners_.erase(it);
    }

    // re-push every cached pair (used after a constraint-stage change, when
    // pairs skipped under the old partition may become selectable again)
    void repush_all() {
        for (const auto& [key, entry] : entries_)
            heap_.push(HeapEntry{entry.delta, key, entry.gen});
    }

    // Pops the best candidate that is still cached and allowed.
    template <typename AllowedFn>
    std::optional<HeapEntry> pop_best(AllowedFn allowed) {
        while (!heap_.empty()) {
            HeapEntry top = heap_.top();
            auto it = entries_.find(top.key);
            if (it == entries_.end() || it->second.gen != top.gen) {
                heap_.pop(); // stale
                continue;
            }
            StateId a = static_cast<StateId>(top.key >> 32);
            StateId b = static_cast<StateId>(top.key & 0xffffffffu);
            if (!allowed(a, b)) {
                heap_.pop(); // disallowed under the current partition
                continue;
            }
            heap_.pop();
            return top;
        }
        return std::nullopt;
    }

  private:
    struct Entry {
        double delta = 0.0;
        std::uint32_t gen = 0;
    };
    std::unordered_map<std::uint64_t, Entry> entries_;
    std::unordered_map<StateId, std::vector<StateId>> partners_;
    std::priority_queue<HeapEntry> heap_;
    std::uint32_t gen_counter_ = 0;
};

} // namespace detail

// Greedy merging: repeatedly evaluates all pair merges allowed by the
// current constraint stage, applies the one keeping the corpus probability
// highest (maximum delta, ties broken toward the smallest pair), and stops
// per the criterion.  A stage with no allowed candidate advances the
// schedule; exhausting the last stage ends the run.
//
// Deltas are almost always nonpositive, but not by theorem: under the
// stored-path likelihood a merge can concentrate shared predecessors'
// cells enough to raise the probability (see delta_loglik).  Such merges
// are applied like any other; they are what closes unigram-constrained
// merging onto the exact bigram model.  The trace records them as they
// are, so its train-LP column can dip slightly at those steps.
inline MergeRunResult run_merging(CountModel& model, StoredPaths& paths, const Corpus& train,
                                  const MergeOptions& options) {
    if (options.schedule.empty()) throw config_error("run_merging: empty schedule");
    const bool held_out = options.stop.kind == StopCriterion::Kind::held_out_minimum;
    if (options.eval_corpus != nullptr &&
        (options.eval_vocab == nullptr || options.model_vocab == nullptr))
        throw config_error("run_merging: eval corpus given without vocabularies");
    if (held_out && options.eval_corpus == nullptr)
        throw config_error("held_out_minimum stopping requires an eval corpus");

    MergeRunResult result;
    const double n_train = static_cast<double>(train.total_tokens);
    double loglik = corpus_loglik(model);
    auto train_lp_of = [&](double ll) { return -(ll / kLn10) / n_train; };

    auto eval_test_lp = [&]() -> double {
        EvaluationReport report =
            evaluate_corpus(Scorer(model), *options.eval_corpus, *options.eval_vocab,
                            *options.model_vocab, options.eval_mode, options.eval_oov);
        return report.log_perplexity;
    };

    std::uint64_t merges_done = options.initial_merges;
    std::size_t forced_stage = 0;
    detail::CandidateCache cache;
    std::size_t known_stage = static_cast<std::size_t>(-1);
    std::unordered_map<StateId, std::uint32_t> class_of;
    std::vector<StateId> ensure; // states whose pairs need (re)computing

    auto snapshot_best = [&](double test_lp) {
        result.best_model = model;
        result.best_test_lp = test_lp;
        result.best_merge_index = merges_done;
    };
    if (options.eval_corpus != nullptr && held_out) {
        double lp0 = eval_test_lp();
        if (std::isfinite(lp0)) snapshot_best(lp0);
    }

    while (true) {
        if (model.num_live() < 2) {
            result.reason = StopReason::single_state;
            break;
        }
        if (options.stop.kind == StopCriterion::Kind::target_states &&
            model.num_live() <= options.stop.states) {
            result.reason = StopReason::criterion;
            break;
        }
        if (options.stop.kind == StopCriterion::Kind::max_merges &&
            merges_done >= options.stop.merges) {
            result.reason = StopReason::criterion;
            break;
        }

        std::size_t stage = std::max(stage_index(options.schedule, merges_done), forced_stage);
        if (stage >= options.schedule.size()) {
            result.reason = StopReason::constraint_exhausted;
            break;
        }
        ConstraintKind kind = options.schedule[stage].kind;

        ConstraintPartition part = partition(model, kind, options.lexicon);
        class_of.clear();
        for (std::uint32_t ci = 0; ci < part.classes.size(); ++ci) {
            for (StateId q : part.classes[ci]) class_of[q] = ci;
        }

        bool stage_changed = stage != known_stage;
        known_stage = stage;
        if (stage_changed) {
            // compute any missing pair and make old cached pairs selectable
            for (const auto& cls : part.classes) {
                for (std::size_t i = 0; i < cls.size(); ++i)
                    for (std::size_t j = i + 1; j < cls.size(); ++j)
                        cache.compute(model, cls[i], cls[j]);
            }
            cache.repush_all();
        } else {
            for (StateId s : ensure) {
                if (!model.is_live(s)) continue;
                auto it = class_of.find(s);
                if (it == class_of.end()) continue;
                for (StateId t : part.classes[it->second]) {
                    if (t != s) cache.compute(model, s, t);
                }
            }
        }
        ensure.clear();

        auto picked = cache.pop_best([&](StateId a, StateId b) {
            if (!model.is_live(a) || !model.is_live(b)) return false;
            auto ia = class_of.find(a);
            auto ib = class_of.find(b);
            return ia != class_of.end() && ib != class_of.end() && ia->second == ib->second;
        });

        if (!picked) {
            if (stage + 1 < options.schedule.size()) {
                forced_stage = stage + 1;
                continue;
            }
            result.reason = StopReason::constraint_exhausted;
            break;
        }

        StateId q1 = static_cast<StateId>(picked->key >> 32);
        StateId q2 = static_cast<StateId>(picked->key & 0xffffffffu);
        double delta = picked->delta;

        // states whose rows or incoming cells the merge changes
        std::set<StateId> touched;
        for (StateId q : {q1, q2}) {
            for (StateId r : model.preds(q)) touched.insert(r);
            for (const auto& [to, c] : model.trans_row(q)) {
                (void)c;
                touched.insert(to);
            }
        }
        touched.erase(kStartState);
        touched.erase(kEndState);

        StateId merged = model.merge_states(q1, q2);
        cache.invalidate_state(q1);
        cache.invalidate_state(q2);
        ensure.push_back(merged);
        for (StateId s : touched) {
            if (s == q1 || s == q2) continue;
            cache.invalidate_state(s);
            ensure.push_back(s);
        }

        ++merges_done;
        ++result.merges;
        loglik += delta;
        double train_lp = train_lp_of(loglik);

        result.trace.records.push_back(
            TraceRecord{merges_done, model.num_live(), train_lp, std::nullopt, q1, q2, delta});

        if (options.reviterbi_every > 0 && result.merges % options.reviterbi_every == 0) {
            auto [rebuilt, fresh] = reviterbi(model, train);
            model = std::move(rebuilt);
            paths = std::move(fresh);
            loglik = corpus_loglik(model);
            cache = detail::CandidateCache();
            known_stage = static_cast<std::size_t>(-1);
            ensure.clear();
        }

        if (options.eval_corpus != nullptr && merges_done % options.log_every == 0) {
            double test_lp = eval_test_lp();
            result.trace.records.back().test_lp = test_lp;
            if (held_out && std::isfinite(test_lp) &&
                (!result.best_test_lp || test_lp < *result.best_test_lp)) {
                snapshot_best(test_lp);
            }
        }

        if (options.stop.kind == StopCriterion::Kind::train_lp_threshold &&
            train_lp >= options.stop.lp_threshold) {
            result.reason = StopReason::criterion;
            break;
        }
        if (held_out && result.best_test_lp &&
            merges_done - result.best_merge_index >= options.stop.patience) {
            result.reason = StopReason::criterion;
            break;
        }
    }

    result.final_train_loglik = loglik;
    return result;
}

} // namespace mmerge
