#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmerge/errors.hpp"

namespace mmerge {

using TokenId = std::uint32_t;

// Bijection between token strings and dense ids starting at 0.
class Vocabulary {
  public:
    TokenId intern(std::string_view word) {
        auto it = index_.find(std::string(word));
        if (it != index_.end()) return it->second;
        TokenId id = static_cast<TokenId>(words_.size());
        words_.emplace_back(word);
        index_.emplace(words_.back(), id);
        return id;
    }

    std::optional<TokenId> find(std::string_view word) const {
        auto it = index_.find(std::string(word));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& lookup(TokenId id) const {
        if (id >= words_.size()) throw internal_error("vocabulary lookup out of range");
        return words_[id];
    }

    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> index_;
};

// A distinct utterance with its number of occurrences in the corpus.
struct Utterance {
    std::vector<TokenId> tokens;
    std::uint64_t multiplicity = 1;
};

// Interned utterance list.  Duplicate utterances are folded into
// multiplicities, so entries are pairwise distinct and non-empty.
struct Corpus {
    std::vector<Utterance> utterances;
    std::uint64_t total_tokens = 0;     // l: sum of length * multiplicity
    std::uint64_t total_utterances = 0; // u: sum of multiplicities

    void add(std::vector<TokenId> tokens, std::uint64_t multiplicity = 1);

  private:
    std::map<std::vector<TokenId>, std::size_t> dedup_;
};

inline void Corpus::add(std::vector<TokenId> tokens, std::uint64_t multiplicity) {
    if (tokens.empty()) throw internal_error("empty utterance");
    total_tokens += tokens.size() * multiplicity;
    total_utterances += multiplicity;
    auto it = dedup_.find(tokens);
    if (it != dedup_.end()) {
        utterances[it->second].multiplicity += multiplicity;
        return;
    }
    dedup_.emplace(tokens, utterances.size());
    utterances.push_back(Utterance{std::move(tokens), multiplicity});
}

namespace detail {

// Returns the byte offset of the first invalid UTF-8 byte, or npos.
inline std::size_t first_invalid_utf8(std::string_view text) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        std::size_t len;
        if (c < 0x80) len = 1;
        else if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        else return i;
        if (i + len > n) return i;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) return i;
        }
        // reject overlong encodings and out-of-range code points
        if (len == 2 && c < 0xC2) return i;
        if (len == 3 && c == 0xE0 && static_cast<unsigned char>(text[i + 1]) < 0xA0) return i;
        if (len == 4 && (c > 0xF4 || (c == 0xF0 && static_cast<unsigned char>(text[i + 1]) < 0x90) ||
                         (c == 0xF4 && static_cast<unsigned char>(text[i + 1]) > 0x8F)))
            return i;
        i += len;
    }
    return std::string_view::npos;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

} // namespace detail

// Reads a whitespace-tokenized corpus: one utterance per line, tokens
// separated by runs of spaces/tabs, LF or CRLF newlines, blank lines
// skipped.  Tokens are kept verbatim; no normalization.
inline std::pair<Vocabulary, Corpus> read_corpus(std::istream& in) {
    std::string text(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
    std::size_t bad = detail::first_invalid_utf8(text);
    if (bad != std::string_view::npos)
        throw parse_error("invalid UTF-8 at byte offset " + std::to_string(bad));

    Vocabulary vocab;
    Corpus corpus;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line;
        if (eol == std::string::npos) {
            if (pos >= text.size()) break;
            line = std::string_view(text).substr(pos);
            pos = text.size() + 1;
        } else {
            line = std::string_view(text).substr(pos, eol - pos);
            pos = eol + 1;
        }
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        auto fields = detail::split_ws(line);
        if (fields.empty()) continue;
        std::vector<TokenId> tokens;
        tokens.reserve(fields.size());
        for (auto f : fields) tokens.push_back(vocab.intern(f));
        corpus.add(std::move(tokens));
    }
    if (corpus.utterances.empty()) throw parse_error("empty corpus: no utterances found");
    return {std::move(vocab), std::move(corpus)};
}

// Writes a corpus back as text, expanding multiplicities.
inline void write_corpus(std::ostream& out, const Corpus& corpus, const Vocabulary& vocab) {
    for (const auto& utt : corpus.utterances) {
        for (std::uint64_t m = 0; m < utt.multiplicity; ++m) {
            for (std::size_t i = 0; i < utt.tokens.size(); ++i) {
                if (i) out << ' ';
                out << vocab.lookup(utt.tokens[i]);
            }
            out << '\n';
        }
    }
}

// Word -> ambiguity-class lexicon.  Words missing from the corpus
// vocabulary are kept by string and counted, not dropped.
struct AmbiguityLexicon {
    std::map<TokenId, std::set<std::string>> entries;
    std::map<std::string, std::set<std::string>> unknown_entries;

    std::size_t unknown_words() const { return unknown_entries.size(); }
};

// Parses "word TAB tag (TAB tag)*" lines; '#' lines are comments.
inline AmbiguityLexicon read_lexicon(std::istream& in, const Vocabulary& vocab) {
    std::string text(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
    std::size_t bad = detail::first_invalid_utf8(text);
    if (bad != std::string_view::npos)
        throw parse_error("invalid UTF-8 at byte offset " + std::to_string(bad));

    AmbiguityLexicon lex;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line;
        if (eol == std::string::npos) {
            if (pos >= text.size()) break;
            line = std::string_view(text).substr(pos);
            pos = text.size() + 1;
        } else {
            line = std::string_view(text).substr(pos, eol - pos);
            pos = eol + 1;
        }
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;

        std::vector<std::string_view> fields;
        std::size_t i = 0;
        while (i <= line.size()) {
            std::size_t tab = line.find('\t', i);
            if (tab == std::string_view::npos) {
                fields.push_back(line.substr(i));
                break;
            }
            fields.push_back(line.substr(i, tab - i));
            i = tab + 1;
        }
        if (fields.size() < 2 || fields[0].empty())
            throw parse_error("lexicon line " + std::to_string(lineno) + ": expected word TAB tag (TAB tag)*");
        std::string word(fields[0]);
        if (!seen.insert(word).second)
            throw parse_error("lexicon line " + std::to_string(lineno) + ": duplicate word '" + word + "'");
        std::set<std::string> tags;
        for (std::size_t k = 1; k < fields.size(); ++k) {
            if (fields[k].empty())
                throw parse_error("lexicon line " + std::to_string(lineno) + ": empty tag");
            tags.insert(std::string(fields[k]));
        }
        if (auto id = vocab.find(word)) {
            lex.entries.emplace(*id, std::move(tags));
        } else {
            lex.unknown_entries.emplace(std::move(word), std::move(tags));
        }
    }
    return lex;
}

} // namespace mmerge
