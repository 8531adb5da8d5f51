#include "citerec/corpus.hpp"

#include "test_support.hpp"

#include <fstream>
#include <random>
#include <sstream>

using namespace citerec;
using citerec::testing::paper;
using citerec::testing::TempDir;

namespace {

std::size_t code_points(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

std::size_t count_marker(const std::string& s) {
  std::size_t n = 0;
  for (auto p = s.find("CIT"); p != std::string::npos; p = s.find("CIT", p + 1)) ++n;
  return n;
}

/// Straight reading of the window rule over ASCII text.
std::string window_oracle(const std::string& text, std::size_t b, std::size_t e, std::size_t window) {
  std::size_t before = (window + 1) / 2;
  std::size_t after = window / 2;
  const std::size_t avail_before = b;
  const std::size_t avail_after = text.size() - e;
  if (avail_after < after) before += after - avail_after;
  if (avail_before < (window + 1) / 2) after += (window + 1) / 2 - avail_before;
  before = std::min(before, avail_before);
  after = std::min(after, avail_after);
  return text.substr(b - before, before) + "CIT" + text.substr(e, after);
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST(LocalContext, WindowCountsSpaces) {
  // Four characters: two before ("a ") and two after (" b") the marker.
  EXPECT_EQ(extract_local_context("aaaa [3] bbbb", CharSpan{5, 8}, 4), "a CIT b");
  EXPECT_EQ(extract_local_context("aaaa [3] bbbb", CharSpan{5, 8}, 6), "aa CIT bb");
}

TEST(LocalContext, SpanAtStartDonatesBudget) {
  const std::string text = "[1]" + std::string(47, 'x');
  const std::string out = extract_local_context(text, CharSpan{0, 3}, 200);
  EXPECT_EQ(out, "CIT" + std::string(47, 'x'));
  EXPECT_LE(out.size(), 53u);
}

TEST(LocalContext, MiddleOfLongTextIs203Characters) {
  std::string text;
  for (int i = 0; i < 500; ++i) text += static_cast<char>('a' + i % 26);
  text.replace(250, 3, "[7]");
  const std::string out = extract_local_context(text, CharSpan{250, 253}, 200);
  EXPECT_EQ(out.size(), 203u);
  EXPECT_EQ(out, window_oracle(text, 250, 253, 200));
}

TEST(LocalContext, CountsCodePoints) {
  const std::string text = "\xC3\xA9\xC3\xA9\xC3\xA9 [2] \xE2\x82\xAC\xE2\x82\xAC";  // "ééé [2] €€"
  const std::string out = extract_local_context(text, CharSpan{4, 7}, 4);
  EXPECT_EQ(out, "\xC3\xA9 CIT \xE2\x82\xAC");
}

TEST(LocalContext, RandomSpansMatchOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 120;
    std::string text;
    for (std::size_t i = 0; i < n; ++i) text += static_cast<char>('a' + rng() % 26);
    const std::size_t b = rng() % (n + 1);
    const std::size_t e = b + rng() % (n - b + 1);
    const std::size_t window = 1 + rng() % 80;
    const std::string out = extract_local_context(text, CharSpan{b, e}, window);
    EXPECT_EQ(out, window_oracle(text, b, e, window));
    EXPECT_EQ(count_marker(out), 1u);
    EXPECT_LE(code_points(out), window + 3);
  }
}

TEST(LocalContext, RejectsBadInput) {
  EXPECT_THROW((void)extract_local_context("abc", CharSpan{2, 5}, 10), std::out_of_range);
  EXPECT_THROW((void)extract_local_context("abc", CharSpan{2, 1}, 10), std::out_of_range);
  EXPECT_THROW((void)extract_local_context("abc", CharSpan{0, 1}, 0), std::invalid_argument);
  try {
    (void)extract_local_context("abc", CharSpan{2, 9}, 10);
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("9"), std::string::npos);
  }
}

TEST(Dates, ParseAndOrder) {
  EXPECT_EQ(YearMonth::parse("2020-03").str(), "2020-03");
  EXPECT_LT(YearMonth::parse("2019-12"), YearMonth::parse("2020-01"));
  EXPECT_THROW((void)YearMonth::parse("2020-13"), CorpusError);
  EXPECT_THROW((void)YearMonth::parse("2020/01"), CorpusError);
  const auto r = DateRange::parse("2020-01:2020-02");
  EXPECT_TRUE(r.contains(YearMonth{2020, 2}));
  EXPECT_FALSE(r.contains(YearMonth{2020, 3}));
  EXPECT_THROW((void)DateRange::parse("2020-05:2020-01"), CorpusError);
}

TEST(Splits, ArxivSchemeOnePerSplit) {
  std::vector<ContextRecord> cs{{"a", "p", "q", "CIT", YearMonth{2019, 5}},
                                {"b", "p", "q", "CIT", YearMonth{2020, 1}},
                                {"c", "p", "q", "CIT", YearMonth{2020, 3}}};
  const auto s = build_splits(cs, default_split_ranges());
  EXPECT_EQ(s[SplitName::Train].context_ids, std::vector<std::string>{"a"});
  EXPECT_EQ(s[SplitName::Val].context_ids, std::vector<std::string>{"b"});
  EXPECT_EQ(s[SplitName::Test].context_ids, std::vector<std::string>{"c"});
  EXPECT_EQ(s.dropped, 0u);
}

TEST(Splits, EmptyInput) {
  const auto s = build_splits({}, default_split_ranges());
  for (const auto& split : s.splits) EXPECT_TRUE(split.context_ids.empty());
}

TEST(Splits, RandomDatesMatchCounts) {
  std::mt19937_64 rng(9);
  std::vector<ContextRecord> cs;
  std::size_t expected[3] = {0, 0, 0};
  std::size_t expected_dropped = 0;
  for (int i = 0; i < 100; ++i) {
    const YearMonth d{1985 + static_cast<int>(rng() % 37), 1 + static_cast<int>(rng() % 12)};
    cs.push_back({"c" + std::to_string(i), "p", "q", "CIT", d});
    if (d.year >= 1991 && d.year <= 2019) {
      ++expected[0];
    } else if (d.year == 2020 && d.month <= 2) {
      ++expected[1];
    } else if (d.year == 2020 && d.month <= 4) {
      ++expected[2];
    } else {
      ++expected_dropped;
    }
  }
  const auto s = build_splits(cs, default_split_ranges());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s.splits[i].context_ids.size(), expected[i]);
  EXPECT_EQ(s.dropped, expected_dropped);
}

TEST(Splits, OverlapRejected) {
  const std::array<DateRange, 3> r{DateRange::parse("2000-01:2010-12"), DateRange::parse("2010-06:2011-01"),
                                   DateRange::parse("2012-01:2012-02")};
  EXPECT_THROW((void)build_splits({}, r), std::invalid_argument);
}

TEST(Corpus, ValidatesInvariants) {
  const std::vector<PaperRecord> two{paper("p1", "T1", "A1"), paper("p2", "T2", "")};
  const Corpus ok(two, {{"c1", "p1", "p2", "see CIT here", YearMonth{2010, 1}}});
  EXPECT_EQ(ok.size(), 2u);
  EXPECT_EQ(ok.empty_abstract_count(), 1u);
  ASSERT_NE(ok.find_paper("p2"), nullptr);
  EXPECT_EQ(ok.paper_index("p2"), 1u);

  EXPECT_THROW(Corpus({paper("p1", "T", "A"), paper("p1", "U", "B")}, {}), CorpusError);
  EXPECT_THROW(Corpus({paper("p1", "", "A")}, {}), CorpusError);
  EXPECT_THROW(Corpus(two, {{"c1", "p1", "p1", "CIT", YearMonth{}}}), CorpusError);
  EXPECT_THROW(Corpus(two, {{"c1", "p1", "p2", "no marker", YearMonth{}}}), CorpusError);
  EXPECT_THROW(Corpus(two, {{"c1", "p1", "p2", "CIT and CIT", YearMonth{}}}), CorpusError);
  EXPECT_THROW(Corpus(two, {{"c1", "p9", "p2", "CIT", YearMonth{}}}), CorpusError);
}

TEST(Corpus, DuplicateIdNamed) {
  try {
    Corpus({paper("dup-7", "T", "A"), paper("dup-7", "U", "B")}, {});
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("dup-7"), std::string::npos);
  }
}

TEST(Corpus, DanglingCitedIdWarnsAndSkipsQuery) {
  const Corpus c({paper("p1", "T1", "A1"), paper("p2", "T2", "A2")},
                 {{"c1", "p1", "p2", "CIT", YearMonth{}}, {"c2", "p1", "ghost", "CIT x", YearMonth{}}});
  EXPECT_EQ(c.warnings().size(), 1u);
  EXPECT_EQ(c.make_queries({"c1", "c2"}).size(), 1u);
  const auto q = c.make_query(*c.find_context("c1"));
  ASSERT_TRUE(q.has_value());
  EXPECT_EQ(q->citing_title, "T1");
  EXPECT_EQ(q->citing_abstract, "A1");
  EXPECT_EQ(q->cited_id, "p2");
}

TEST(CorpusFiles, LoadTwoPapers) {
  TempDir dir;
  write(dir / "papers.jsonl",
        "{\"paper_id\":\"a\",\"title\":\"Alpha\",\"abstract\":\"x\",\"pub_date\":\"2001-02\"}\n"
        "{\"paper_id\":\"b\",\"title\":\"Beta\",\"abstract\":\"\",\"pub_date\":\"2002-03\"}\n");
  const Corpus c = load_corpus(dir / "papers.jsonl");
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.papers()[1].pub_date, (YearMonth{2002, 3}));
}

TEST(CorpusFiles, MalformedLineNumbered) {
  TempDir dir;
  write(dir / "papers.jsonl",
        "{\"paper_id\":\"a\",\"title\":\"Alpha\",\"abstract\":\"x\",\"pub_date\":\"2001-02\"}\n"
        "{\"paper_id\":\"b\",\"title\":\"Beta\"\n");
  try {
    (void)load_corpus(dir / "papers.jsonl");
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  write(dir / "p2.jsonl", "{\"paper_id\":\"a\",\"title\":\"Alpha\",\"abstract\":\"x\"}\n");
  EXPECT_THROW((void)load_corpus(dir / "p2.jsonl"), CorpusError);
}

TEST(CorpusFiles, DanglingCitationFileWarns) {
  TempDir dir;
  write(dir / "papers.jsonl",
        "{\"paper_id\":\"a\",\"title\":\"Alpha\",\"abstract\":\"x\",\"pub_date\":\"2001-02\"}\n"
        "{\"paper_id\":\"b\",\"title\":\"Beta\",\"abstract\":\"y\",\"pub_date\":\"2002-03\"}\n");
  write(dir / "contexts.jsonl",
        "{\"context_id\":\"c1\",\"citing_id\":\"a\",\"cited_id\":\"b\",\"local_context\":\"x CIT\","
        "\"context_date\":\"2001-02\"}\n"
        "{\"context_id\":\"c2\",\"citing_id\":\"a\",\"cited_id\":\"zz\",\"local_context\":\"CIT y\","
        "\"context_date\":\"2001-02\"}\n");
  const Corpus c = load_corpus(dir / "papers.jsonl", dir / "contexts.jsonl");
  EXPECT_EQ(c.contexts().size(), 2u);
  EXPECT_EQ(c.warnings().size(), 1u);
}

TEST(CorpusFiles, CanonicalRoundTripIsByteIdentical) {
  TempDir dir;
  const std::string papers =
      "{\"paper_id\":\"a\",\"title\":\"Alpha \\\"quoted\\\"\",\"abstract\":\"x \\u00e9\",\"pub_date\":\"2001-02\"}\n"
      "{\"paper_id\":\"b\",\"title\":\"Beta\",\"abstract\":\"\",\"pub_date\":\"2002-03\"}\n";
  const std::string contexts =
      "{\"context_id\":\"c1\",\"citing_id\":\"a\",\"cited_id\":\"b\",\"local_context\":\"as in CIT.\","
      "\"context_date\":\"2001-02\"}\n";
  write(dir / "in.jsonl", papers);
  write(dir / "papers.jsonl", serialize_papers(read_papers_jsonl(dir / "in.jsonl")));
  const std::string once = serialize_papers(read_papers_jsonl(dir / "papers.jsonl"));
  write(dir / "again.jsonl", once);
  EXPECT_EQ(serialize_papers(read_papers_jsonl(dir / "again.jsonl")), once);

  write(dir / "contexts.jsonl", contexts);
  EXPECT_EQ(serialize_contexts(read_contexts_jsonl(dir / "contexts.jsonl")), contexts);
}

TEST(CorpusFiles, SplitsRoundTrip) {
  TempDir dir;
  std::vector<ContextRecord> cs{{"a", "p", "q", "CIT", YearMonth{2019, 5}},
                                {"b", "p", "q", "CIT", YearMonth{2020, 2}}};
  const auto s = build_splits(cs, default_split_ranges());
  write_text_file(dir / "splits.json", serialize_splits(s));
  const auto back = read_splits(dir / "splits.json");
  EXPECT_EQ(back[0], std::vector<std::string>{"a"});
  EXPECT_EQ(back[1], std::vector<std::string>{"b"});
  EXPECT_TRUE(back[2].empty());
}

TEST(BuildDataset, ExtractsResolvedCitations) {
  SourceDocument d1{paper("p1", "Citing", "abs", "2020-01"), "We follow [1] and also [2] here.", {}};
  d1.citations.push_back({CharSpan{10, 13}, "p2"});
  d1.citations.push_back({CharSpan{23, 26}, "missing"});
  SourceDocument d2{paper("p2", "Cited", "abs", "2015-06"), "", {}};
  const auto built = build_dataset({d1, d2}, 10, default_split_ranges());
  ASSERT_EQ(built.contexts.size(), 1u);
  EXPECT_EQ(built.unresolved_citations, 1u);
  EXPECT_EQ(built.contexts[0].local_context, "llow CIT and ");
  EXPECT_EQ(built.contexts[0].context_date, (YearMonth{2020, 1}));
  EXPECT_EQ(built.splits[SplitName::Val].context_ids.size(), 1u);
  const Corpus check(built.papers, built.contexts);
  EXPECT_EQ(check.contexts().size(), 1u);
}

TEST(BuildDataset, ReadsSourceDocuments) {
  TempDir dir;
  write(dir / "src.jsonl",
        "{\"paper_id\":\"p1\",\"title\":\"T\",\"abstract\":\"A\",\"pub_date\":\"2019-01\",\"body\":\"see [1].\","
        "\"citations\":[{\"start\":4,\"end\":7,\"cited_id\":\"p2\"}]}\n"
        "{\"paper_id\":\"p2\",\"title\":\"U\",\"abstract\":\"B\",\"pub_date\":\"2018-01\"}\n");
  const auto docs = read_source_documents(dir / "src.jsonl");
  ASSERT_EQ(docs.size(), 2u);
  ASSERT_EQ(docs[0].citations.size(), 1u);
  const auto built = build_dataset(docs, 200, default_split_ranges());
  ASSERT_EQ(built.contexts.size(), 1u);
  EXPECT_EQ(built.contexts[0].local_context, "see CIT.");
}
