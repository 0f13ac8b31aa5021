#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mmerge/corpus.hpp"
#include "mmerge/errors.hpp"

namespace mmerge {

using StateId = std::uint32_t;
using Count = std::int64_t;

inline constexpr StateId kStartState = 0;
inline constexpr StateId kEndState = 1;
inline constexpr StateId kFirstProperState = 2;

// First-order Markov model kept as integer sufficient statistics.
// Probabilities are always derived, never stored: p(q'|q) and p(s|q) are
// the row-relative frequencies of trans/emits.  Row balances are the core
// invariant: for every live proper state q,
//   visits[q] == sum of trans row of q == sum of emit row of q,
// and for the start state visits == sum of its trans row.  Retired states
// keep a union-find pointer to their survivor so stored Viterbi paths can
// be relabeled lazily.
class CountModel {
  public:
    using TransRow = std::map<StateId, Count>;
    using EmitRow = std::map<TokenId, Count>;

    CountModel() {
        rows_.resize(kFirstProperState);
        emits_.resize(kFirstProperState);
        visits_.resize(kFirstProperState, 0);
        preds_.resize(kFirstProperState);
        parent_.resize(kFirstProperState);
        parent_[kStartState] = kStartState;
        parent_[kEndState] = kEndState;
    }

    StateId new_state() {
        StateId id = static_cast<StateId>(rows_.size());
        rows_.emplace_back();
        emits_.emplace_back();
        visits_.push_back(0);
        preds_.emplace_back();
        parent_.push_back(id);
        live_.insert(id);
        return id;
    }

    bool is_live(StateId q) const { return q >= kFirstProperState && live_.count(q) > 0; }
    const std::set<StateId>& live_states() const { return live_; }
    std::size_t num_live() const { return live_.size(); }
    std::size_t num_slots() const { return rows_.size(); }

    const TransRow& trans_row(StateId q) const { return rows_.at(q); }
    const EmitRow& emit_row(StateId q) const { return emits_.at(q); }
    Count visits(StateId q) const { return visits_.at(q); }
    const std::set<StateId>& preds(StateId q) const { return preds_.at(q); }

    Count trans_count(StateId from, StateId to) const {
        const auto& row = rows_.at(from);
        auto it = row.find(to);
        return it == row.end() ? 0 : it->second;
    }

    // Tallies one path through the model: visits, emissions, transitions
    // including start -> first and last -> end, all weighted by mult.
    void record_path(std::span<const StateId> path, std::span<const TokenId> tokens, Count mult) {
        if (path.size() != tokens.size() || path.empty())
            throw internal_error("record_path: path/token length mismatch");
        StateId prev = kStartState;
        visits_[kStartState] += mult;
        for (std::size_t i = 0; i < path.size(); ++i) {
            StateId q = path[i];
            add_trans(prev, q, mult);
            emits_[q][tokens[i]] += mult;
            visits_[q] += mult;
            prev = q;
        }
        add_trans(prev, kEndState, mult);
    }

    void add_trans(StateId from, StateId to, Count c) {
        if (c == 0) return;
        rows_[from][to] += c;
        preds_[to].insert(from);
    }

    void add_emit(StateId q, TokenId tok, Count c) {
        if (c == 0) return;
        emits_[q][tok] += c;
    }

    void set_visits(StateId q, Count v) { visits_[q] = v; }

    // Zeroes every count while keeping the state set and merge history;
    // used when counts are rebuilt from re-parsed paths.
    void clear_counts() {
        for (auto& row : rows_) row.clear();
        for (auto& row : emits_) row.clear();
        for (auto& p : preds_) p.clear();
        std::fill(visits_.begin(), visits_.end(), 0);
    }

    // Union-find over retirement history; compresses paths.
    StateId find(StateId q) {
        StateId root = q;
        while (parent_[root] != root) root = parent_[root];
        while (parent_[q] != root) {
            StateId next = parent_[q];
            parent_[q] = root;
            q = next;
        }
        return root;
    }

    // Read-only resolve, no compression.
    StateId resolve(StateId q) const {
        while (parent_[q] != q) q = parent_[q];
        return q;
    }

    // Merges live proper states q1 and q2 into a fresh state and returns
    // it.  Counts sum cellwise; transitions between and within the pair
    // fold into the merged self-loop; incoming counts are redirected.
    StateId merge_states(StateId q1, StateId q2) {
        if (q1 == q2 || !is_live(q1) || !is_live(q2))
            throw internal_error("merge_states: need two distinct live proper states");
        StateId m = new_state();

        // outgoing rows, with q1/q2 targets folded into the self-loop
        TransRow& mrow = rows_[m];
        for (StateId src : {q1, q2}) {
            for (const auto& [to, c] : rows_[src]) {
                StateId t = (to == q1 || to == q2) ? m : to;
                mrow[t] += c;
            }
        }
        // emissions
        EmitRow& memit = emits_[m];
        for (StateId src : {q1, q2}) {
            for (const auto& [tok, c] : emits_[src]) memit[tok] += c;
        }
        visits_[m] = visits_[q1] + visits_[q2];

        // redirect incoming transitions from outside the pair
        std::set<StateId> in;
        in.insert(preds_[q1].begin(), preds_[q1].end());
        in.insert(preds_[q2].begin(), preds_[q2].end());
        for (StateId r : in) {
            if (r == q1 || r == q2) continue;
            Count moved = 0;
            auto it = rows_[r].find(q1);
            if (it != rows_[r].end()) {
                moved += it->second;
                rows_[r].erase(it);
            }
            it = rows_[r].find(q2);
            if (it != rows_[r].end()) {
                moved += it->second;
                rows_[r].erase(it);
            }
            if (moved > 0) {
                rows_[r][m] += moved;
                preds_[m].insert(r);
            }
        }
        if (mrow.count(m)) preds_[m].insert(m);

        // fix predecessor sets of the merged row's targets
        for (const auto& [to, c] : mrow) {
            (void)c;
            preds_[to].erase(q1);
            preds_[to].erase(q2);
            preds_[to].insert(m);
        }

        // retire the pair
        rows_[q1].clear();
        rows_[q2].clear();
        emits_[q1].clear();
        emits_[q2].clear();
        preds_[q1].clear();
        preds_[q2].clear();
        visits_[q1] = 0;
        visits_[q2] = 0;
        live_.erase(q1);
        live_.erase(q2);
        parent_[q1] = m;
        parent_[q2] = m;
        return m;
    }

    bool operator==(const CountModel& other) const {
        if (live_ != other.live_) return false;
        for (StateId q : live_) {
            if (rows_[q] != other.rows_[q] || emits_[q] != other.emits_[q] ||
                visits_[q] != other.visits_[q])
                return false;
        }
        return rows_[kStartState] == other.rows_[kStartState] &&
               visits_[kStartState] == other.visits_[kStartState];
    }

  private:
    std::vector<TransRow> rows_;
    std::vector<EmitRow> emits_;
    std::vector<Count> visits_;
    std::vector<std::set<StateId>> preds_; // states r with trans(r,q) > 0
    std::set<StateId> live_;
    std::vector<StateId> parent_; // union-find: retired -> survivor
};

// Reports every violated CountModel invariant; empty means valid.
inline std::vector<std::string> validate(const CountModel& model) {
    std::vector<std::string> out;
    auto row_sum = [](const auto& row) {
        Count s = 0;
        for (const auto& [k, c] : row) s += c;
        return s;
    };

    const auto& start_row = model.trans_row(kStartState);
    if (row_sum(start_row) != model.visits(kStartState))
        out.push_back("start state: transition row sum != visit count");
    if (!model.trans_row(kEndState).empty()) out.push_back("end state has outgoing transitions");
    if (!model.emit_row(kEndState).empty()) out.push_back("end state has emissions");
    if (!model.emit_row(kStartState).empty()) out.push_back("start state has emissions");

    auto check_targets = [&](StateId from) {
        for (const auto& [to, c] : model.trans_row(from)) {
            if (c <= 0) out.push_back("state " + std::to_string(from) + ": non-positive transition count");
            if (to == kStartState) out.push_back("transition into start state from " + std::to_string(from));
            if (to != kEndState && !model.is_live(to))
                out.push_back("state " + std::to_string(from) + ": transition to dead state " + std::to_string(to));
        }
    };
    check_targets(kStartState);

    for (StateId q : model.live_states()) {
        Count v = model.visits(q);
        Count ts = row_sum(model.trans_row(q));
        Count es = row_sum(model.emit_row(q));
        if (ts != v)
            out.push_back("state " + std::to_string(q) + ": transition row sum " + std::to_string(ts) +
                          " != visit count " + std::to_string(v));
        if (es != v)
            out.push_back("state " + std::to_string(q) + ": emission row sum " + std::to_string(es) +
                          " != visit count " + std::to_string(v));
        for (const auto& [tok, c] : model.emit_row(q)) {
            (void)tok;
            if (c <= 0) out.push_back("state " + std::to_string(q) + ": non-positive emission count");
        }
        check_targets(q);
        for (StateId r : model.preds(q)) {
            if (model.trans_count(r, q) <= 0)
                out.push_back("state " + std::to_string(q) + ": stale predecessor " + std::to_string(r));
        }
    }
    return out;
}

// Row-normalized natural-log probabilities derived from a CountModel.
// Zero-count cells are simply absent.  Immutable snapshot.
struct ProbabilityView {
    std::map<StateId, std::map<StateId, double>> log_trans;
    std::map<StateId, std::map<TokenId, double>> log_emit;
};

inline ProbabilityView probabilities(const CountModel& model) {
    ProbabilityView view;
    auto fill_trans = [&](StateId q) {
        const auto& row = model.trans_row(q);
        if (row.empty()) return;
        Count total = 0;
        for (const auto& [to, c] : row) total += c;
        if (model.visits(q) == 0)
            throw internal_error("state " + std::to_string(q) + ": zero visits but nonzero counts");
        auto& dst = view.log_trans[q];
        for (const auto& [to, c] : row)
            dst[to] = std::log(static_cast<double>(c)) - std::log(static_cast<double>(total));
    };
    fill_trans(kStartState);
    for (StateId q : model.live_states()) {
        fill_trans(q);
        const auto& erow = model.emit_row(q);
        if (erow.empty()) continue;
        Count total = 0;
        for (const auto& [tok, c] : erow) total += c;
        auto& dst = view.log_emit[q];
        for (const auto& [tok, c] : erow)
            dst[tok] = std::log(static_cast<double>(c)) - std::log(static_cast<double>(total));
    }
    return view;
}

// --- serialization ---------------------------------------------------------
//
// Line-oriented text format storing counts, so round trips are exact:
//   MM1 states=<n> vocab=<v>
//   V <id> <word>
//   T <from> <to> <count>      with S / E for the start / end state
//   M <state> <tokenid> <count>
// Live proper states are renumbered densely (ascending internal id), which
// makes the output canonical: equal models serialize byte-identically.

inline void write_model(std::ostream& out, const CountModel& model, const Vocabulary& vocab) {
    auto violations = validate(model);
    if (!violations.empty())
        throw internal_error("write_model: invalid model: " + violations.front());

    std::map<StateId, std::size_t> dense;
    for (StateId q : model.live_states()) dense.emplace(q, dense.size());

    out << "MM1 states=" << dense.size() << " vocab=" << vocab.size() << "\n";
    for (std::size_t i = 0; i < vocab.size(); ++i)
        out << "V " << i << " " << vocab.lookup(static_cast<TokenId>(i)) << "\n";

    auto id_str = [&](StateId q) -> std::string {
        if (q == kStartState) return "S";
        if (q == kEndState) return "E";
        return std::to_string(dense.at(q));
    };
    auto write_row = [&](StateId q) {
        // numeric targets in dense order, end last
        std::map<std::size_t, Count> ordered;
        Count to_end = 0;
        for (const auto& [to, c] : model.trans_row(q)) {
            if (to == kEndState) to_end = c;
            else ordered[dense.at(to)] = c;
        }
        for (const auto& [to, c] : ordered)
            out << "T " << id_str(q) << " " << to << " " << c << "\n";
        if (to_end > 0) out << "T " << id_str(q) << " E " << to_end << "\n";
    };
    write_row(kStartState);
    for (const auto& [q, d] : dense) {
        (void)d;
        write_row(q);
    }
    for (const auto& [q, d] : dense) {
        for (const auto& [tok, c] : model.emit_row(q))
            out << "M " << d << " " << tok << " " << c << "\n";
    }
}

inline std::pair<CountModel, Vocabulary> read_model(std::istream& in) {
    CountModel model;
    Vocabulary vocab;
    std::string line;
    std::size_t lineno = 0;
    std::size_t n_states = 0, n_vocab = 0;
    std::vector<StateId> states;

    auto fail = [&](const std::string& msg) -> void {
        throw parse_error("model line " + std::to_string(lineno) + ": " + msg);
    };
    auto parse_state = [&](const std::string& tok, bool allow_start, bool allow_end) -> StateId {
        if (tok == "S") {
            if (!allow_start) fail("start state not allowed here");
            return kStartState;
        }
        if (tok == "E") {
            if (!allow_end) fail("end state not allowed here");
            return kEndState;
        }
        std::size_t idx = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(tok, &idx);
        } catch (const std::exception&) {
            fail("bad state id '" + tok + "'");
        }
        if (idx != tok.size() || v >= states.size()) fail("state id out of range: '" + tok + "'");
        return states[v];
    };

    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (!saw_header) {
            if (tag != "MM1") fail("expected MM1 header");
            std::string s1, s2;
            ls >> s1 >> s2;
            if (s1.rfind("states=", 0) != 0 || s2.rfind("vocab=", 0) != 0) fail("malformed header");
            n_states = std::stoul(s1.substr(7));
            n_vocab = std::stoul(s2.substr(6));
            states.reserve(n_states);
            for (std::size_t i = 0; i < n_states; ++i) states.push_back(model.new_state());
            saw_header = true;
            continue;
        }
        if (tag == "V") {
            std::size_t id;
            std::string word;
            if (!(ls >> id >> word)) fail("malformed V line");
            if (id != vocab.size()) fail("V lines out of order");
            if (vocab.intern(word) != id) fail("duplicate word '" + word + "'");
        } else if (tag == "T") {
            std::string from, to;
            Count c;
            if (!(ls >> from >> to >> c)) fail("malformed T line");
            if (c <= 0) fail("non-positive transition count");
            StateId f = parse_state(from, true, false);
            StateId t = parse_state(to, false, true);
            model.add_trans(f, t, c);
        } else if (tag == "M") {
            std::string st;
            std::size_t tok;
            Count c;
            if (!(ls >> st >> tok >> c)) fail("malformed M line");
            if (c <= 0) fail("non-positive emission count");
            StateId q = parse_state(st, false, false);
            if (tok >= n_vocab) fail("token id out of range");
            model.add_emit(q, static_cast<TokenId>(tok), c);
        } else {
            fail("unknown line prefix '" + tag + "'");
        }
    }
    if (!saw_header) throw parse_error("model file: missing MM1 header");
    if (vocab.size() != n_vocab) throw parse_error("model file: vocab size mismatch with header");

    // visits are derived, then validated against the emission rows
    auto settle = [&](StateId q) {
        Count s = 0;
        for (const auto& [to, c] : model.trans_row(q)) s += c;
        model.set_visits(q, s);
    };
    settle(kStartState);
    for (StateId q : model.live_states()) settle(q);
    auto violations = validate(model);
    if (!violations.empty()) {
        std::string msg = "model file fails validation:";
        for (const auto& v : violations) msg += "\n  " + v;
        throw parse_error(msg);
    }
    return {std::move(model), std::move(vocab)};
}

} // namespace mmerge
