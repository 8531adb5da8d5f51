#include "citerec/textprep.hpp"

#include "test_support.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>

using namespace citerec;
using citerec::testing::TempDir;

TEST(Tokenize, SplitsPunctuation) {
  EXPECT_EQ(tokenize("Hello, world"), (std::vector<std::string>{"hello", ",", "world"}));
}

TEST(Tokenize, EmptyText) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize(" \t\n ").empty());
}

TEST(Tokenize, PeelsBothSidesKeepsInterior) {
  EXPECT_EQ(tokenize("(BERT) e.g. don't"),
            (std::vector<std::string>{"(", "bert", ")", "e.g", ".", "don't"}));
  EXPECT_EQ(tokenize("\"x\"..."), (std::vector<std::string>{"\"", "x", "\"", ".", ".", "."}));
}

TEST(Tokenize, UnicodeWhitespaceSeparates) {
  // U+00A0 no-break space and U+2003 em space.
  EXPECT_EQ(tokenize("alpha\xC2\xA0" "beta\xE2\x80\x83gamma"), (std::vector<std::string>{"alpha", "beta", "gamma"}));
}

TEST(Tokenize, FortyWordAbstractHandCount) {
  const std::string abstract =
      "We propose a hierarchical attention encoder (HAtten) for local citation recommendation. "
      "It prefetches candidates quickly, then a reranker rescores them. Experiments on four "
      "datasets, including arXiv, show gains; code is released at our site today, freely and "
      "openly for everyone.";
  // 40 words; "(HAtten)" adds two tokens and nine words carry one trailing mark.
  EXPECT_EQ(tokenize(abstract).size(), 50u);
}

TEST(Tokenize, IdempotentOnJoinedOutput) {
  const auto once = tokenize("A (short) test, with: punctuation!? And CIT markers.");
  std::string joined;
  for (const auto& t : once) joined += t + " ";
  EXPECT_EQ(tokenize(joined), once);
}

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST(Embeddings, LoadsTableWithUnkRow) {
  TempDir dir;
  write(dir / "e.txt", "the 1 2 3 4\ncat 0.5 -0.25 1e-3 7\ndog -1 -2 -3 -4\n");
  const Vocabulary v = load_embeddings(dir / "e.txt", 4);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.table().rows(), 4);
  EXPECT_EQ(v.table().cols(), 4);
  EXPECT_EQ(v.lookup("cat"), 2u);
  EXPECT_EQ(v.lookup("zebra"), Vocabulary::kUnk);
  EXPECT_TRUE(v.vector(v.lookup("zebra")).isZero(0.0));
}

TEST(Embeddings, ValuesRoundTripBitExactly) {
  TempDir dir;
  const std::vector<std::string> fields{"0.1", "-3.14159265358979", "6.02214076e23", "1e-300",
                                        "0.30000000000000004", "-0", "123456789.123456789", "2.5"};
  std::string text = "w0";
  for (std::size_t i = 0; i < 4; ++i) text += " " + fields[i];
  text += "\nw1";
  for (std::size_t i = 4; i < 8; ++i) text += " " + fields[i];
  text += "\n";
  write(dir / "e.txt", text);
  const Vocabulary v = load_embeddings(dir / "e.txt", 4);
  for (std::size_t i = 0; i < 8; ++i) {
    const double expected = std::strtod(fields[i].c_str(), nullptr);
    const double got = v.table()(static_cast<nn::Index>(1 + i / 4), static_cast<nn::Index>(i % 4));
    EXPECT_EQ(std::memcmp(&expected, &got, sizeof got), 0) << fields[i];
  }

  write_embeddings(dir / "f.txt", v);
  const Vocabulary again = load_embeddings(dir / "f.txt", 4);
  EXPECT_EQ(std::memcmp(again.table().data(), v.table().data(), sizeof(double) * 12), 0);
}

TEST(Embeddings, WrongArityNamesLine) {
  TempDir dir;
  write(dir / "e.txt", "a 1 2 3\nb 1 2\n");
  try {
    (void)load_embeddings(dir / "e.txt", 3);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("e.txt:2:"), std::string::npos) << e.what();
  }
}

TEST(Embeddings, UnparsableNumberRejected) {
  TempDir dir;
  write(dir / "e.txt", "a 1 x 3\n");
  EXPECT_THROW((void)load_embeddings(dir / "e.txt", 3), std::runtime_error);
}

TEST(Jaccard, Definition) {
  EXPECT_DOUBLE_EQ(jaccard(make_token_set({"a", "b", "c"}), make_token_set({"b", "c", "d"})), 0.5);
  EXPECT_DOUBLE_EQ(jaccard(make_token_set({"a", "b"}), make_token_set({"b", "a"})), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(make_token_set({"a"}), make_token_set({"b"})), 0.0);
  EXPECT_DOUBLE_EQ(jaccard({}, {}), 0.0);
}

TEST(Jaccard, MatchesCountingOracleOnRandomSets) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> a;
    std::vector<std::string> b;
    std::vector<bool> in_a(30);
    std::vector<bool> in_b(30);
    for (int w = 0; w < 30; ++w) {
      in_a[w] = rng() % 3 == 0;
      in_b[w] = rng() % 4 == 0;
      if (in_a[w]) a.push_back("w" + std::to_string(w));
      if (in_b[w]) b.push_back("w" + std::to_string(w));
    }
    int inter = 0;
    int uni = 0;
    for (int w = 0; w < 30; ++w) {
      inter += (in_a[w] && in_b[w]) ? 1 : 0;
      uni += (in_a[w] || in_b[w]) ? 1 : 0;
    }
    const double expected = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
    const auto sa = make_token_set(a);
    const auto sb = make_token_set(b);
    EXPECT_DOUBLE_EQ(jaccard(sa, sb), expected);
    EXPECT_DOUBLE_EQ(jaccard(sb, sa), expected);
  }
}

TEST(ContentTokens, DropsStopwordsPunctuationAndMarker) {
  const auto set = content_token_set("The encoder, as in CIT, uses the attention of the encoder.");
  EXPECT_EQ(set, (TokenSet{"attention", "encoder", "uses"}));
  EXPECT_TRUE(is_stopword("the"));
  EXPECT_FALSE(is_stopword("encoder"));
}
