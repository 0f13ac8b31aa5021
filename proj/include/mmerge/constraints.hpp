#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmerge/corpus.hpp"
#include "mmerge/errors.hpp"
#include "mmerge/model.hpp"

namespace mmerge {

enum class ConstraintKind { none, unigram, bigram, ambiguity };

inline std::string to_string(ConstraintKind kind) {
    switch (kind) {
        case ConstraintKind::none: return "none";
        case ConstraintKind::unigram: return "unigram";
        case ConstraintKind::bigram: return "bigram";
        case ConstraintKind::ambiguity: return "ambiguity";
    }
    return "?";
}

inline ConstraintKind constraint_from_string(std::string_view s) {
    if (s == "none") return ConstraintKind::none;
    if (s == "unigram") return ConstraintKind::unigram;
    if (s == "bigram") return ConstraintKind::bigram;
    if (s == "ambiguity") return ConstraintKind::ambiguity;
    throw config_error("unknown constraint kind '" + std::string(s) + "'");
}

// Opaque equivalence-class key of a live proper state under a constraint.
//
// unigram   - the set of tokens the state emits
// bigram    - unigram key, plus the union of the predecessors' output sets;
//             a start-state predecessor is recorded as a flag, not conflated
// ambiguity - the lexicon tag set shared by all emitted tokens, or a key
//             unique to the state when its tokens disagree (unmergeable)
inline std::string signature(const CountModel& model, StateId state, ConstraintKind kind,
                             const AmbiguityLexicon* lexicon = nullptr) {
    if (!model.is_live(state)) throw internal_error("signature: state is not a live proper state");
    auto support = [&](StateId q) {
        std::string key;
        for (const auto& [tok, c] : model.emit_row(q)) {
            (void)c;
            key += std::to_string(tok);
            key += ',';
        }
        return key;
    };
    switch (kind) {
        case ConstraintKind::none:
            return "*";
        case ConstraintKind::unigram:
            return "u:" + support(state);
        case ConstraintKind::bigram: {
            std::map<TokenId, bool> pred_tokens;
            bool from_start = false;
            for (StateId r : model.preds(state)) {
                if (r == kStartState) {
                    from_start = true;
                    continue;
                }
                for (const auto& [tok, c] : model.emit_row(r)) {
                    (void)c;
                    pred_tokens[tok] = true;
                }
            }
            std::string key = "b:" + support(state) + "|";
            for (const auto& [tok, b] : pred_tokens) {
                (void)b;
                key += std::to_string(tok);
                key += ',';
            }
            key += from_start ? "|s" : "|-";
            return key;
        }
        case ConstraintKind::ambiguity: {
            if (lexicon == nullptr) throw config_error("ambiguity constraint requires a lexicon");
            const std::set<std::string>* common = nullptr;
            for (const auto& [tok, c] : model.emit_row(state)) {
                (void)c;
                auto it = lexicon->entries.find(tok);
                if (it == lexicon->entries.end())
                    throw config_error("ambiguity constraint: token id " + std::to_string(tok) +
                                       " missing from lexicon");
                if (common == nullptr) {
                    common = &it->second;
                } else if (*common != it->second) {
                    return "!:" + std::to_string(state);
                }
            }
            if (common == nullptr) return "!:" + std::to_string(state);
            std::string key = "a:";
            for (const auto& tag : *common) {
                key += tag;
                key += ',';
            }
            return key;
        }
    }
    throw internal_error("signature: bad kind");
}

// Disjoint cover of the live proper states; q_s and q_e never appear.
struct ConstraintPartition {
    std::vector<std::vector<StateId>> classes;

    std::uint64_t candidate_count() const {
        std::uint64_t n = 0;
        for (const auto& c : classes) {
            std::uint64_t s = c.size();
            n += s * (s - 1) / 2;
        }
        return n;
    }
};

inline ConstraintPartition partition(const CountModel& model, ConstraintKind kind,
                                     const AmbiguityLexicon* lexicon = nullptr) {
    std::map<std::string, std::vector<StateId>> groups;
    for (StateId q : model.live_states()) groups[signature(model, q, kind, lexicon)].push_back(q);
    ConstraintPartition part;
    part.classes.reserve(groups.size());
    for (auto& [key, members] : groups) {
        (void)key;
        part.classes.push_back(std::move(members));
    }
    return part;
}

// One stage of a constraint cascade; no budget means unbounded (the stage
// ends only by exhaustion).
struct ConstraintStage {
    ConstraintKind kind = ConstraintKind::none;
    std::optional<std::uint64_t> budget;
};

using ConstraintSchedule = std::vector<ConstraintStage>;

// Stage whose cumulative merge budget covers merges_done.
inline std::size_t stage_index(const ConstraintSchedule& schedule, std::uint64_t merges_done) {
    if (schedule.empty()) throw config_error("empty constraint schedule");
    std::uint64_t cum = 0;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (!schedule[i].budget.has_value()) return i;
        cum += *schedule[i].budget;
        if (merges_done < cum) return i;
    }
    return schedule.size() - 1;
}

inline ConstraintKind advance_schedule(const ConstraintSchedule& schedule,
                                       std::uint64_t merges_done) {
    return schedule[stage_index(schedule, merges_done)].kind;
}

// Parses the "kind:budget,kind:budget,..." mini-syntax; budget optional.
inline ConstraintSchedule parse_schedule(std::string_view text) {
    ConstraintSchedule schedule;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        std::string_view item =
            comma == std::string_view::npos ? text.substr(pos) : text.substr(pos, comma - pos);
        pos = comma == std::string_view::npos ? text.size() + 1 : comma + 1;
        if (item.empty()) continue;
        ConstraintStage stage;
        std::size_t colon = item.find(':');
        if (colon == std::string_view::npos) {
            stage.kind = constraint_from_string(item);
        } else {
            stage.kind = constraint_from_string(item.substr(0, colon));
            std::string num(item.substr(colon + 1));
            std::size_t idx = 0;
            unsigned long long budget = 0;
            try {
                budget = std::stoull(num, &idx);
            } catch (const std::exception&) {
                throw config_error("bad schedule budget '" + num + "'");
            }
            if (idx != num.size() || budget == 0)
                throw config_error("schedule budgets must be positive integers: '" + num + "'");
            stage.budget = budget;
        }
        schedule.push_back(stage);
    }
    if (schedule.empty()) throw config_error("empty constraint schedule");
    return schedule;
}

inline std::string schedule_to_string(const ConstraintSchedule& schedule) {
    std::string out;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (i) out += ',';
        out += to_string(schedule[i].kind);
        if (schedule[i].budget) out += ":" + std::to_string(*schedule[i].budget);
    }
    return out;
}

} // namespace mmerge
