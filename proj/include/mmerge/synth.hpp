#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mmerge/corpus.hpp"
#include "mmerge/errors.hpp"
#include "mmerge/model.hpp"

namespace mmerge {

// Deterministic 64-bit generator (splitmix64).  Used instead of <random>
// distributions so synthesized corpora are identical across standard
// library implementations.
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t below(std::uint64_t n) { return next() % n; }

  private:
    std::uint64_t state_;
};

// A random generating Markov model held as integer weights, plus the data
// sampled from it.
struct SynthResult {
    Vocabulary vocab;                                // w0..w{alphabet-1}
    std::vector<std::vector<TokenId>> train;
    std::vector<std::vector<TokenId>> test;
    CountModel reference; // counts tallied from the true sampled paths
};

namespace detail {

struct WeightedChoice {
    std::vector<std::uint64_t> cumulative;
    std::vector<std::uint32_t> items;

    void add(std::uint32_t item, std::uint64_t weight) {
        items.push_back(item);
        cumulative.push_back((cumulative.empty() ? 0 : cumulative.back()) + weight);
    }
    std::uint32_t sample(SplitMix64& rng) const {
        std::uint64_t r = rng.below(cumulative.back());
        for (std::size_t i = 0; i < cumulative.size(); ++i) {
            if (r < cumulative[i]) return items[i];
        }
        return items.back();
    }
};

} // namespace detail

// Samples `train_n` + `test_n` utterances from a random valid model with
// `states` proper states over an alphabet of `alphabet` tokens.  Utterance
// length is capped at 80 tokens.
inline SynthResult synthesize(std::size_t states, std::size_t alphabet, std::size_t train_n,
                              std::size_t test_n, std::uint64_t seed) {
    if (states == 0 || alphabet == 0 || train_n == 0)
        throw config_error("synth: states, alphabet and utterances must be positive");
    SplitMix64 rng(seed);
    constexpr std::uint32_t kEndItem = 0xffffffffu;
    constexpr std::size_t kMaxLen = 80;

    SynthResult out;
    for (std::size_t t = 0; t < alphabet; ++t) out.vocab.intern("w" + std::to_string(t));

    detail::WeightedChoice start;
    for (std::uint32_t q = 0; q < states; ++q) start.add(q, 1 + rng.below(9));

    std::vector<detail::WeightedChoice> trans(states);
    std::vector<detail::WeightedChoice> emit(states);
    for (std::uint32_t q = 0; q < states; ++q) {
        std::size_t degree = 1 + rng.below(std::min<std::uint64_t>(3, states));
        std::set<std::uint32_t> succs;
        while (succs.size() < degree) succs.insert(static_cast<std::uint32_t>(rng.below(states)));
        for (std::uint32_t s : succs) trans[q].add(s, 1 + rng.below(9));
        trans[q].add(kEndItem, 1 + rng.below(4));

        std::size_t n_tokens = 1 + rng.below(std::min<std::uint64_t>(4, alphabet));
        std::set<std::uint32_t> toks;
        while (toks.size() < n_tokens) toks.insert(static_cast<std::uint32_t>(rng.below(alphabet)));
        for (std::uint32_t t : toks) emit[q].add(t, 1 + rng.below(9));
    }

    std::vector<StateId> ref_state(states);
    for (std::size_t q = 0; q < states; ++q) ref_state[q] = out.reference.new_state();

    auto sample_one = [&](std::vector<std::vector<TokenId>>& sink) {
        std::vector<TokenId> tokens;
        std::vector<StateId> path;
        std::uint32_t q = start.sample(rng);
        while (true) {
            tokens.push_back(static_cast<TokenId>(emit[q].sample(rng)));
            path.push_back(ref_state[q]);
            if (tokens.size() >= kMaxLen) break;
            std::uint32_t nxt = trans[q].sample(rng);
            if (nxt == kEndItem) break;
            q = nxt;
        }
        out.reference.record_path(path, tokens, 1);
        sink.push_back(std::move(tokens));
    };
    for (std::size_t i = 0; i < train_n; ++i) sample_one(out.train);
    for (std::size_t i = 0; i < test_n; ++i) sample_one(out.test);
    return out;
}

} // namespace mmerge
