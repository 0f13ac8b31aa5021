#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "mmerge/corpus.hpp"
#include "mmerge/synth.hpp"

using namespace mmerge;

namespace {

std::pair<Vocabulary, Corpus> corpus_from(const std::string& text) {
    std::istringstream in(text);
    return read_corpus(in);
}

} // namespace

TEST_CASE("three-utterance corpus") {
    auto [vocab, corpus] = corpus_from("a b\na c\na b a c\n");
    CHECK(corpus.total_utterances == 3);
    CHECK(corpus.total_tokens == 8);
    CHECK(corpus.utterances.size() == 3);
    CHECK(vocab.size() == 3);
}

TEST_CASE("duplicate utterances fold into multiplicity") {
    auto [vocab, corpus] = corpus_from("x\nx\n");
    (void)vocab;
    REQUIRE(corpus.utterances.size() == 1);
    CHECK(corpus.utterances[0].multiplicity == 2);
    CHECK(corpus.total_utterances == 2);
    CHECK(corpus.total_tokens == 2);
}

TEST_CASE("vocabulary ids follow first occurrence") {
    auto [vocab, corpus] = corpus_from("hello world\n");
    CHECK(corpus.total_utterances == 1);
    CHECK(corpus.total_tokens == 2);
    REQUIRE(vocab.find("hello").has_value());
    REQUIRE(vocab.find("world").has_value());
    CHECK(*vocab.find("hello") == 0);
    CHECK(*vocab.find("world") == 1);
    CHECK(vocab.lookup(0) == "hello");
    CHECK_FALSE(vocab.find("unknown").has_value());
}

TEST_CASE("blank lines, tabs and CRLF") {
    auto [vocab, corpus] = corpus_from("a\tb\r\n\r\n  \na b\n");
    (void)vocab;
    // "a\tb" and "a b" tokenize identically and fold
    REQUIRE(corpus.utterances.size() == 1);
    CHECK(corpus.utterances[0].multiplicity == 2);
}

TEST_CASE("missing trailing newline still reads the last utterance") {
    auto [vocab, corpus] = corpus_from("a b\nc");
    (void)vocab;
    CHECK(corpus.utterances.size() == 2);
}

TEST_CASE("empty corpus is an error") {
    CHECK_THROWS_AS(corpus_from(""), parse_error);
    CHECK_THROWS_AS(corpus_from("\n \n\t\n"), parse_error);
}

TEST_CASE("invalid UTF-8 reports the byte offset") {
    std::string bad = "ab\n\xC0z\n";
    try {
        corpus_from(bad);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("byte offset 3") != std::string::npos);
    }
}

TEST_CASE("corpus round trip is identity up to utterance order") {
    SplitMix64 rng(20240 + 17);
    for (int iter = 0; iter < 20; ++iter) {
        Vocabulary vocab;
        Corpus corpus;
        std::size_t n_utts = 1 + rng.below(12);
        std::size_t alphabet = 1 + rng.below(5);
        for (std::size_t u = 0; u < n_utts; ++u) {
            std::vector<TokenId> toks;
            std::size_t len = 1 + rng.below(6);
            for (std::size_t i = 0; i < len; ++i)
                toks.push_back(vocab.intern("w" + std::to_string(rng.below(alphabet))));
            corpus.add(std::move(toks), 1 + rng.below(3));
        }
        std::ostringstream out;
        write_corpus(out, corpus, vocab);
        std::istringstream in(out.str());
        auto [vocab2, corpus2] = read_corpus(in);

        CHECK(corpus2.total_tokens == corpus.total_tokens);
        CHECK(corpus2.total_utterances == corpus.total_utterances);
        REQUIRE(corpus2.utterances.size() == corpus.utterances.size());
        // compare as multisets of (token strings, multiplicity)
        auto canon = [](const Corpus& c, const Vocabulary& v) {
            std::vector<std::pair<std::string, std::uint64_t>> items;
            for (const auto& utt : c.utterances) {
                std::string s;
                for (TokenId t : utt.tokens) s += v.lookup(t) + " ";
                items.emplace_back(s, utt.multiplicity);
            }
            std::sort(items.begin(), items.end());
            return items;
        };
        CHECK(canon(corpus, vocab) == canon(corpus2, vocab2));
    }
}

TEST_CASE("lexicon parsing") {
    Vocabulary vocab;
    vocab.intern("can");
    vocab.intern("the");
    std::istringstream in("# comment\ncan\tMD\tNN\tVB\nthe\tDT\n");
    AmbiguityLexicon lex = read_lexicon(in, vocab);
    REQUIRE(lex.entries.count(0) == 1);
    CHECK(lex.entries.at(0) == std::set<std::string>{"MD", "NN", "VB"});
    CHECK(lex.entries.at(1) == std::set<std::string>{"DT"});
    CHECK(lex.unknown_words() == 0);
}

TEST_CASE("lexicon keeps words outside the vocabulary, counted") {
    Vocabulary vocab;
    vocab.intern("can");
    std::istringstream in("can\tMD\nzzz\tNN\n");
    AmbiguityLexicon lex = read_lexicon(in, vocab);
    CHECK(lex.entries.size() == 1);
    CHECK(lex.unknown_words() == 1);
    CHECK(lex.unknown_entries.at("zzz") == std::set<std::string>{"NN"});
}

TEST_CASE("lexicon format errors carry line numbers") {
    Vocabulary vocab;
    vocab.intern("can");
    std::istringstream no_tags("can\n");
    CHECK_THROWS_AS(read_lexicon(no_tags, vocab), parse_error);

    std::istringstream dup("can\tMD\ncan\tNN\n");
    try {
        read_lexicon(dup, vocab);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }
}
