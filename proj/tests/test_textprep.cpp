#include <gtest/gtest.h>

#include <filesystem>

#include "readmit/rng.hpp"
#include "readmit/textprep.hpp"

using namespace readmit;

namespace {

using Tokens = std::vector<std::string>;

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Tokenize, DropsNumbersAndStopWords) {
  EXPECT_EQ(tokenize("Lasix 40 mg PO daily"), (Tokens{"lasix", "mg", "po", "daily"}));
  EXPECT_EQ(tokenize("The patient was stable"), (Tokens{"patient", "stable"}));
  EXPECT_EQ(tokenize(""), Tokens{});
  EXPECT_EQ(tokenize("BP 120/80, temp 98.6; 12/5 1.5"), (Tokens{"bp", "temp"}));
}

TEST(Tokenize, KeepsAlphanumericMixes) {
  EXPECT_EQ(tokenize("2mg b12 CHF-exacerbation"), (Tokens{"2mg", "b12", "chf", "exacerbation"}));
}

TEST(Tokenize, Utf8StaysIntact) {
  auto t = tokenize("caf\xc3\xa9 na\xc3\xafve");
  EXPECT_EQ(t, (Tokens{"caf\xc3\xa9", "na\xc3\xafve"}));
}

TEST(Tokenize, ShippedListMatchesBuiltIn) {
  auto shipped = StopWordSet::load(std::filesystem::path(READMIT_DATA_DIR) / "stopwords_en.txt");
  EXPECT_EQ(shipped.size(), default_stopwords().size());
  EXPECT_EQ(shipped.size(), 179u);
  for (auto w : kEnglishStopWords) EXPECT_TRUE(shipped.contains(w)) << w;
}

TEST(Tokenize, CustomStopList) {
  auto dir = temp_dir("readmit_tp_stop");
  write_file(dir / "s.txt", "# comment\nfoo\n\nbar\r\n");
  auto s = StopWordSet::load(dir / "s.txt");
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(tokenize("foo the bar baz", s), (Tokens{"the", "baz"}));
  EXPECT_THROW(StopWordSet::load(dir / "missing.txt"), PathError);
  std::filesystem::remove_all(dir);
}

TEST(Tokenize, NeverProducesReservedOrEmpty) {
  Pcg32 rng(8);
  for (int i = 0; i < 200; ++i) {
    std::string text;
    for (int j = 0; j < 300; ++j) text.push_back(static_cast<char>(rng.below(256)));
    for (const auto& t : tokenize(text)) {
      EXPECT_FALSE(t.empty());
      EXPECT_NE(t, "<pad>");
      EXPECT_NE(t, "<unk>");
      EXPECT_FALSE(default_stopwords().contains(t));
    }
  }
}

TEST(Vocab, FrequencyOrder) {
  std::vector<Tokens> corpus = {{"a", "b", "a"}, {"a"}};
  auto v = build_vocab(corpus);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id_of("a"), 2);
  EXPECT_EQ(v.id_of("b"), 3);
  EXPECT_EQ(v.id_of("zzz"), Vocabulary::kUnk);
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(1), "<unk>");
}

TEST(Vocab, TruncationAndTies) {
  std::vector<Tokens> corpus = {{"e", "d", "c", "b", "a", "a"}};
  auto v = build_vocab(corpus, 3);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.tokens(), (Tokens{"<pad>", "<unk>", "a", "b", "c"}));
  EXPECT_THROW(build_vocab(std::vector<Tokens>{}), ArgumentError);
}

TEST(Vocab, FromTokensRoundTrip) {
  auto v = build_vocab(std::vector<Tokens>{{"x", "y", "y"}});
  auto w = Vocabulary::from_tokens(v.tokens());
  EXPECT_EQ(w.id_of("y"), v.id_of("y"));
  EXPECT_THROW(Vocabulary::from_tokens({"<pad>", "<unk>", "x", "x"}), FormatError);
}

TEST(Encode, PadAndTruncate) {
  auto v = build_vocab(std::vector<Tokens>{{"a", "b"}});
  auto e = encode(Tokens{"a", "b"}, v, 4);
  EXPECT_EQ(e.ids, (std::vector<std::int32_t>{v.id_of("a"), v.id_of("b"), 0, 0}));
  EXPECT_EQ(e.true_length, 2u);
  Tokens many(5000, "a");
  many[0] = "b";
  auto long_note = encode(many, v, 2000);
  EXPECT_EQ(long_note.ids.size(), 2000u);
  EXPECT_EQ(long_note.true_length, 2000u);
  EXPECT_EQ(long_note.ids[0], v.id_of("b"));
  EXPECT_EQ(encode(Tokens{"q"}, v, 3).ids[0], Vocabulary::kUnk);
}

TEST(Embeddings, RandomRowsInRangeAndDeterministic) {
  auto v = build_vocab(std::vector<Tokens>{{"a", "b", "c"}});
  auto e = random_embeddings(v, 5, 3);
  auto f = random_embeddings(v, 5, 3);
  EXPECT_EQ(e.values, f.values);
  for (std::size_t d = 0; d < 5; ++d) EXPECT_EQ(e.row(0)[d], 0.0);
  for (std::size_t i = 1; i < v.size(); ++i) {
    for (double x : e.row(i)) {
      EXPECT_GT(x, -0.25);
      EXPECT_LT(x, 0.25);
    }
  }
}

TEST(Embeddings, LoadFromFile) {
  auto dir = temp_dir("readmit_tp_emb");
  write_file(dir / "e.txt", "3 2\na 1.5 -2\nzzz 9 9\na 7 7\n");
  auto v = build_vocab(std::vector<Tokens>{{"a", "b"}});
  auto e = load_embeddings(dir / "e.txt", v, 2, 5);
  EXPECT_EQ(e.row(v.id_of("a"))[0], 1.5);
  EXPECT_EQ(e.row(v.id_of("a"))[1], -2.0);
  auto b = e.row(v.id_of("b"));
  EXPECT_GT(b[0], -0.25);
  EXPECT_LT(b[0], 0.25);
  EXPECT_EQ(e.row(0)[0], 0.0);
  auto again = load_embeddings(dir / "e.txt", v, 2, 5);
  EXPECT_EQ(again.values, e.values);

  EXPECT_THROW(load_embeddings(dir / "e.txt", v, 3, 5), FormatError);
  write_file(dir / "bad.txt", "2 2\nb 1.0 2.0\na 1.0 oops\n");
  try {
    load_embeddings(dir / "bad.txt", v, 2, 5);
    FAIL() << "expected FormatError";
  } catch (const FormatError& err) {
    EXPECT_NE(std::string(err.what()).find("bad.txt:3"), std::string::npos) << err.what();
  }
  write_file(dir / "nan.txt", "1 2\na nan 1\n");
  EXPECT_THROW(load_embeddings(dir / "nan.txt", v, 2, 5), FormatError);
  write_file(dir / "long.txt", "1 2\na 1 2 3\n");
  EXPECT_THROW(load_embeddings(dir / "long.txt", v, 2, 5), FormatError);
  EXPECT_THROW(load_embeddings(dir / "none.txt", v, 2, 5), PathError);
  std::filesystem::remove_all(dir);
}

TEST(EncodedDataset, RoundTripAndCorruption) {
  auto v = build_vocab(std::vector<Tokens>{{"a", "b", "c"}});
  EncodedDataset ds;
  ds.n_max = 4;
  ds.notes = {encode(Tokens{"a", "b"}, v, 4), encode(Tokens{"c", "a", "b", "c", "a"}, v, 4)};
  ds.labels = {1, 0};
  auto bytes = serialize_encoded(ds);
  EXPECT_EQ(bytes.substr(0, 4), "NCNN");
  EXPECT_EQ(deserialize_encoded(bytes, "mem"), ds);
  EXPECT_THROW(deserialize_encoded(bytes.substr(0, bytes.size() - 1), "mem"), FormatError);
  EXPECT_THROW(deserialize_encoded(bytes + "x", "mem"), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_encoded(bad, "mem"), FormatError);
  auto huge = bytes;
  huge[6] = '\xff';
  huge[13] = '\x7f';
  EXPECT_THROW(deserialize_encoded(huge, "mem"), FormatError);
}
