#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "corposcope/corpus.hpp"
#include "corposcope/rng.hpp"

using namespace corposcope;
using namespace corposcope::corpus;

namespace {

std::vector<std::string> toks(std::string_view s) { return tokenize({"d", 0, std::string(s)}).tokens; }

TokenStream stream(std::string doc, std::size_t page, std::vector<std::string> t) { return {std::move(doc), page, std::move(t)}; }

std::size_t total_parts(const std::vector<TokenStream>& streams) {
  std::size_t n = 0;
  for (const auto& s : streams)
    for (const auto& t : s.tokens) n += word_parts(t);
  return n;
}

} // namespace

// Loading

TEST(LoadCorpus, TwoDocsThreePagesEach) {
  const auto docs = parse_corpus(
      R"({"doc_id":"a","year":1970,"doc_type":"article","authors":["x"],"pages":["p0","p1","p2"]})"
      "\n"
      R"({"doc_id":"b","year":1971,"doc_type":"book_review","authors":[],"pages":["q0","q1","q2"]})");
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].pages.size(), 3u);
  EXPECT_EQ(docs[1].pages.size(), 3u);
  EXPECT_EQ(docs[1].doc_type, DocType::book_review);
  EXPECT_EQ(docs[0].pages[2].text, "p2");
  EXPECT_EQ(docs[0].author_ids, std::vector<std::string>{"x"});
}

TEST(LoadCorpus, EmptyInputGivesNoDocuments) { EXPECT_TRUE(parse_corpus("").empty()); }

TEST(LoadCorpus, OutOfOrderPagesAreSorted) {
  const auto docs = parse_corpus(
      R"({"doc_id":"a","year":1970,"pages":[{"page_index":2,"text":"c"},{"page_index":0,"text":"a"},{"page_index":1,"text":"b"}]})");
  std::vector<std::size_t> idx;
  for (const auto& p : docs[0].pages) idx.push_back(p.page_index);
  auto sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(idx, sorted);
  EXPECT_EQ(docs[0].pages[0].text, "a");
}

TEST(LoadCorpus, MalformedLineNamesLineNumber) {
  try {
    parse_corpus(R"({"doc_id":"a","year":1970,"pages":[]})" "\n{oops");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(LoadCorpus, DuplicateDocIdIsNamed) {
  try {
    parse_corpus(R"({"doc_id":"dup","year":1970,"pages":[]})" "\n" R"({"doc_id":"dup","year":1971,"pages":[]})");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("dup"), std::string::npos);
  }
}

// Front and back matter

TEST(Strip, ConfiguredHeaderLineIsRemoved) {
  Document d{"d", 1990, DocType::article, {}, {{"d", 0, "Journal of the History of Biology\nBody text here"}}};
  StripOptions o;
  o.header_patterns = {"journal of the history of biology"};
  const auto r = strip_front_back_matter(d, o);
  EXPECT_EQ(r.document.pages[0].text, "Body text here");
  EXPECT_EQ(r.audit.headers_removed, 1u);
}

TEST(Strip, HeaderBelowScanDepthIsKept) {
  Document d{"d", 1990, DocType::article, {}, {{"d", 0, "one\ntwo\nthree\nHEADER"}}};
  StripOptions o;
  o.header_patterns = {"header"};
  EXPECT_EQ(strip_front_back_matter(d, o).document.pages[0].text, "one\ntwo\nthree\nHEADER");
}

TEST(Strip, ReferenceListOnLastPageIsCut) {
  const std::string refs =
      "Darwin, C. (1859) On the Origin of Species. London: Murray.\n"
      "Mayr, E. (1942) Systematics and the Origin of Species. New York.\n"
      "Provine, W. B. 1971. The Origins of Theoretical Population Genetics, Chicago, Univ. Press.\n"
      "Smith, J. Journal of Things 12(3): 45-67.\n"
      "Jones, A. doi:10.1000/xyz123\n"
      "Brown, B. (1901) A study of beetles.";
  Document d{"d", 1990, DocType::article, {},
             {{"d", 0, "Plain prose about evolution\nwithout any references at all"},
              {"d", 1, "Closing remark of the essay\n" + refs}}};
  const auto r = strip_front_back_matter(d, {});
  ASSERT_TRUE(r.audit.cut.has_value());
  EXPECT_EQ(r.audit.cut->page_index, 1u);
  EXPECT_EQ(r.audit.cut->line_index, 1u);
  EXPECT_GE(r.audit.detection_score, 3u);
  EXPECT_EQ(r.document.pages[0].text, d.pages[0].text);
  EXPECT_EQ(r.document.pages[1].text, "Closing remark of the essay");
}

TEST(Strip, NoCitationsLeavesDocumentUnchanged) {
  Document d{"d", 1990, DocType::article, {}, {{"d", 0, "alpha beta\ngamma"}, {"d", 1, "delta\nepsilon"}}};
  const auto r = strip_front_back_matter(d, {});
  EXPECT_FALSE(r.audit.cut.has_value());
  EXPECT_EQ(r.document.pages[0].text, d.pages[0].text);
  EXPECT_EQ(r.document.pages[1].text, d.pages[1].text);
}

TEST(Strip, OverrideCutIsHonoured) {
  Document d{"d", 1990, DocType::article, {}, {{"d", 0, "a\nb\nc"}, {"d", 1, "d\ne"}}};
  const auto r = strip_front_back_matter(d, {}, BibliographyCut{0, 2});
  EXPECT_TRUE(r.audit.overridden);
  EXPECT_EQ(r.document.pages[0].text, "a\nb");
  EXPECT_EQ(r.document.pages[1].text, "");
}

TEST(Strip, CitationSignals) {
  EXPECT_TRUE(is_citation_line("Hull, D. (1988) Science as a Process."));
  EXPECT_TRUE(is_citation_line("see doi:10.1/abc"));
  EXPECT_TRUE(is_citation_line("Isis 74(2): 1-20"));
  EXPECT_TRUE(is_citation_line("Author, Title, Publisher."));
  EXPECT_FALSE(is_citation_line("An ordinary sentence, with one comma."));
  EXPECT_FALSE(is_citation_line(""));
}

// Tokenizing

TEST(Tokenize, PossessiveAndDigits) { EXPECT_EQ(toks("Darwin's 1859 Origin."), (std::vector<std::string>{"darwin", "s", "origin"})); }

TEST(Tokenize, EmptyPage) { EXPECT_TRUE(toks("").empty()); }

TEST(Tokenize, DashSplits) { EXPECT_EQ(toks("A\xE2\x80\x94" "B"), (std::vector<std::string>{"a", "b"})); }

TEST(Tokenize, AccentedLettersStayInsideWords) { EXPECT_EQ(toks("Caf\xC3\x89 au lait"), (std::vector<std::string>{"caf\xC3\xA9", "au", "lait"})); }

TEST(Tokenize, IdempotentOnJoinedStream) {
  Rng rng(5);
  const std::string alphabet = "abcXYZ \t.,;0123-\xC3\xA9";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    for (int i = 0; i < 60; ++i) s += alphabet[rng.below(alphabet.size() - 2)];
    const auto once = toks(s);
    std::string joined;
    for (const auto& t : once) joined += t + " ";
    EXPECT_EQ(toks(joined), once);
    for (const auto& t : once)
      for (unsigned char c : t) EXPECT_TRUE(std::isalpha(c) || c >= 0x80) << t;
  }
}

// Phrases

TEST(Phrases, CountEqualToMinimumNeverMerges) {
  for (auto scoring : {PhraseScoring::as_printed, PhraseScoring::normalized_product}) {
    PhraseOptions o;
    o.scoring = scoring;
    o.factor = 0.0;
    EXPECT_FALSE(phrase_accepted(5, 5, 5, 10, o));
    EXPECT_FALSE(phrase_accepted(3, 5, 5, 10, o));
    EXPECT_TRUE(phrase_accepted(6, 6, 6, 12, o));
  }
}

TEST(Phrases, AlwaysAdjacentPairIsMerged) {
  std::vector<TokenStream> streams;
  Rng rng(11);
  const std::vector<std::string> filler{"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"};
  std::size_t n = 0;
  for (int p = 0; p < 50; ++p) {
    std::vector<std::string> t;
    for (int i = 0; i < 10; ++i) t.push_back(filler[rng.below(filler.size())]);
    t.insert(t.begin() + 5, {"natural", "selection"});
    n += t.size();
    streams.push_back(stream("d", p, t));
  }
  // Independent check of the criterion on the first pass.
  std::map<std::string, std::size_t> unit;
  std::size_t pair = 0;
  for (const auto& s : streams)
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      ++unit[s.tokens[i]];
      if (i + 1 < s.tokens.size() && s.tokens[i] == "natural" && s.tokens[i + 1] == "selection") ++pair;
    }
  ASSERT_EQ(pair, 50u);
  const double score = (50.0 - 5.0) / (50.0 * 50.0) * static_cast<double>(n);
  ASSERT_GT(score, 0.1);

  const auto r = extract_phrases(streams);
  bool found = false;
  for (const auto& s : r.streams)
    for (const auto& t : s.tokens) found |= t == "natural_selection";
  EXPECT_TRUE(found);
  EXPECT_TRUE(r.table.phrases.count("natural_selection"));
}

TEST(Phrases, LongSloganCappedAtSixParts) {
  std::vector<TokenStream> streams;
  const std::vector<std::string> slogan{"w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8"};
  for (int p = 0; p < 40; ++p) {
    auto t = slogan;
    t.push_back("pad" + std::to_string(p % 7));
    streams.push_back(stream("d", p, t));
  }
  const auto r = extract_phrases(streams);
  std::size_t longest = 0;
  for (const auto& s : r.streams)
    for (const auto& t : s.tokens) longest = std::max(longest, word_parts(t));
  EXPECT_LE(longest, 6u);
  EXPECT_GE(longest, 2u);
}

TEST(Phrases, WordPartsConservedAndPairsNeverExceedUnits) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenStream> streams;
    for (int p = 0; p < 30; ++p) {
      std::vector<std::string> t;
      for (int i = 0; i < 25; ++i) t.push_back(std::string(1, static_cast<char>('a' + rng.below(4))));
      streams.push_back(stream("d", p, t));
    }
    for (auto scoring : {PhraseScoring::as_printed, PhraseScoring::normalized_product}) {
      PhraseOptions o;
      o.scoring = scoring;
      const auto r = extract_phrases(streams, o);
      EXPECT_EQ(total_parts(r.streams), total_parts(streams));
      std::size_t sum = 0;
      for (const auto& [u, c] : r.table.unit_counts) sum += c;
      EXPECT_EQ(sum, r.table.total);
      for (const auto& [bg, c] : r.table.bigram_counts)
        EXPECT_LE(c, std::min(r.table.unit_counts.at(bg.first), r.table.unit_counts.at(bg.second)));
    }
  }
}

// Vocabulary

TEST(Vocabulary, TermOnEveryPageExcluded) {
  std::vector<TokenStream> streams;
  for (int p = 0; p < 100; ++p) streams.push_back(stream("d", p, {"everywhere", p < 10 ? "rare" : "other"}));
  const auto r = build_vocabulary(streams, {}, PageFrequencyLimit::fraction(0.25));
  EXPECT_FALSE(r.vocabulary.id("everywhere"));
  ASSERT_TRUE(r.vocabulary.id("rare"));
  EXPECT_EQ(r.vocabulary.page_frequency(*r.vocabulary.id("rare")), 10u);
  EXPECT_FALSE(r.vocabulary.id("other"));
}

TEST(Vocabulary, StopwordExcludedRegardlessOfFrequency) {
  std::vector<TokenStream> streams{stream("d", 0, {"the", "finch"}), stream("d", 1, {"beak"})};
  const auto r = build_vocabulary(streams, {"the"}, PageFrequencyLimit::absolute(100));
  EXPECT_FALSE(r.vocabulary.id("the"));
  EXPECT_EQ(r.streams[0].tokens, std::vector<std::string>{"finch"});
}

TEST(Vocabulary, IdsAreDenseAndFiltersHold) {
  Rng rng(23);
  std::vector<TokenStream> streams;
  for (int p = 0; p < 60; ++p) {
    std::vector<std::string> t;
    for (int i = 0; i < 15; ++i) t.push_back("t" + std::to_string(rng.below(40)));
    streams.push_back(stream("d", p, t));
  }
  const std::set<std::string> stop{"t1", "t2"};
  const auto r = build_vocabulary(streams, stop, PageFrequencyLimit::absolute(12));
  const auto pf = page_frequencies(streams);
  for (std::size_t id = 0; id < r.vocabulary.size(); ++id) {
    const auto& term = r.vocabulary.term(id);
    EXPECT_EQ(*r.vocabulary.id(term), id);
    EXPECT_FALSE(stop.count(term));
    EXPECT_LE(pf.at(term), 12u);
    EXPECT_EQ(r.vocabulary.page_frequency(id), pf.at(term));
  }
  for (const auto& s : r.streams)
    for (const auto& t : s.tokens) EXPECT_TRUE(r.vocabulary.id(t));
}

TEST(Vocabulary, EmptyVocabularyIsAnError) {
  std::vector<TokenStream> streams{stream("d", 0, {"the"})};
  EXPECT_THROW(build_vocabulary(streams, {"the"}), ValidationError);
}

TEST(Manifest, ParsesOptionsAndResolvesPaths) {
  const auto j = nlohmann::json::parse(R"({"corpus":"c.jsonl","stopwords":"/abs/s.txt","header_patterns":["^x$"],
    "bibliography_overrides":{"d1":[2,4]},"phrases":{"passes":2,"scoring":"as-printed"},"max_pages":6000})");
  const auto m = parse_manifest(j, "/base");
  EXPECT_EQ(m.corpus, std::filesystem::path("/base/c.jsonl"));
  EXPECT_EQ(m.stopwords, std::filesystem::path("/abs/s.txt"));
  EXPECT_EQ(m.bibliography_overrides.at("d1").line_index, 4u);
  EXPECT_EQ(m.phrases.passes, 2u);
  EXPECT_EQ(m.phrases.scoring, PhraseScoring::as_printed);
  EXPECT_TRUE(m.page_limit.excludes(6001, 1));
  EXPECT_FALSE(m.page_limit.excludes(6000, 1));
}

TEST(Manifest, UnknownScoringIsValidationError) {
  const auto j = nlohmann::json::parse(R"({"corpus":"c","phrases":{"scoring":"magic"}})");
  EXPECT_THROW(parse_manifest(j, "/"), ValidationError);
}
