#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "spamdet/errors.hpp"
#include "spamdet/random.hpp"
#include "spamdet/tokenizer.hpp"
#include "support/wordpiece_oracle.hpp"

using namespace spamdet;
namespace fs = std::filesystem;

namespace {

const char* kToyVocab = "[PAD]\n[UNK]\n[CLS]\n[SEP]\nham\nspam\n##my";

fs::path write_temp(const std::string& name, const std::string& contents) {
  const fs::path path = fs::temp_directory_path() / ("spamdet_tok_" + name);
  std::ofstream(path, std::ios::binary) << contents;
  return path;
}

using Pieces = std::vector<std::string>;

}  // namespace

TEST(LoadVocab, SevenLineFile) {
  const auto path = write_temp("toy.txt", kToyVocab);
  const Vocab v = load_vocab(path);
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.id("ham"), 4);
  EXPECT_EQ(v.id("##my"), 6);
  EXPECT_EQ(v.cls_id(), 2);
  EXPECT_EQ(v.token(5), "spam");
  EXPECT_EQ(load_vocab(path), v);  // stable under reload
}

TEST(LoadVocab, MissingReservedTokenIsVocabError) {
  const auto path = write_temp("nocls.txt", "[PAD]\n[UNK]\n[SEP]\nham\n");
  try {
    load_vocab(path);
    FAIL();
  } catch (const VocabError& e) {
    EXPECT_NE(std::string(e.what()).find("[CLS]"), std::string::npos);
  }
}

TEST(LoadVocab, DuplicateTokenNamesBothLines) {
  const auto path = write_temp("dup.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\nham\nspam\nham\n");
  try {
    load_vocab(path);
    FAIL();
  } catch (const VocabError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("lines 5 and 7"), std::string::npos) << msg;
  }
}

TEST(LoadVocab, MissingFileAndBlankLinesAreErrors) {
  EXPECT_THROW(load_vocab("/nonexistent/vocab.txt"), VocabError);
  EXPECT_THROW(parse_vocab("[PAD]\n\n[UNK]\n[CLS]\n[SEP]\n"), VocabError);
}

TEST(LoadVocab, SaveRoundTripsAndDigestIsStable) {
  const Vocab v = parse_vocab(kToyVocab);
  const auto path = fs::temp_directory_path() / "spamdet_tok_saved.txt";
  save_vocab(v, path);
  const Vocab back = load_vocab(path);
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.digest(), v.digest());
  EXPECT_EQ(v.digest().size(), 64u);
  EXPECT_NE(parse_vocab("[PAD]\n[UNK]\n[CLS]\n[SEP]\nham\n").digest(), v.digest());
}

TEST(WordPiece, WholeWordSplitWordAndUnknown) {
  const Vocab v = parse_vocab(kToyVocab);
  EXPECT_EQ(wordpiece_tokenize("ham", v), (Pieces{"ham"}));
  EXPECT_EQ(wordpiece_tokenize("spammy ham", v), (Pieces{"spam", "##my", "ham"}));
  EXPECT_EQ(wordpiece_tokenize("xyzzy", v), (Pieces{"[UNK]"}));
}

TEST(WordPiece, LowercasesAndSplitsOnAnyWhitespace) {
  const Vocab v = parse_vocab(kToyVocab);
  EXPECT_EQ(wordpiece_tokenize("  SPAMMY\tHam\n", v), (Pieces{"spam", "##my", "ham"}));
}

TEST(WordPiece, PartialDecompositionMakesWholeWordUnknown) {
  const Vocab v = parse_vocab(kToyVocab);
  // "spamz": "spam" matches but "##z" does not, so the whole word is [UNK].
  EXPECT_EQ(wordpiece_tokenize("spamz ham", v), (Pieces{"[UNK]", "ham"}));
}

TEST(WordPiece, OverlongWordIsUnknown) {
  const Vocab v = parse_vocab("[PAD]\n[UNK]\n[CLS]\n[SEP]\na\n##a\n");
  EXPECT_EQ(wordpiece_tokenize(std::string(100, 'a'), v).size(), 100u);
  EXPECT_EQ(wordpiece_tokenize(std::string(101, 'a'), v), (Pieces{"[UNK]"}));
}

TEST(WordPiece, MultibyteCharactersStayWhole) {
  const Vocab v = parse_vocab("[PAD]\n[UNK]\n[CLS]\n[SEP]\ncaf\n##\xc3\xa9\n");
  EXPECT_EQ(wordpiece_tokenize("caf\xc3\xa9", v), (Pieces{"caf", "##\xc3\xa9"}));
}

TEST(Encode, EmptyMessage) {
  const Vocab v = parse_vocab(kToyVocab);
  const Encoding e = encode("", v, 8);
  EXPECT_EQ(e.ids, (std::vector<std::int32_t>{2, 3, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(e.mask, (std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(e.real_len, 2u);
}

TEST(Encode, SpammyHam) {
  const Vocab v = parse_vocab(kToyVocab);
  const Encoding e = encode("spammy ham", v, 8);
  EXPECT_EQ(e.ids, (std::vector<std::int32_t>{2, 5, 6, 4, 3, 0, 0, 0}));
  EXPECT_EQ(e.mask, (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0}));
}

TEST(Encode, TruncatesHeadKeepingSep) {
  const Vocab v = parse_vocab(kToyVocab);
  std::string text;
  for (int i = 0; i < 600; ++i) text += "ham ";
  const Encoding e = encode(text, v, 512);
  EXPECT_EQ(e.real_len, 512u);
  EXPECT_EQ(e.ids.size(), 512u);
  EXPECT_EQ(e.ids[0], v.cls_id());
  EXPECT_EQ(e.ids[511], v.sep_id());
  EXPECT_EQ(e.ids[510], v.id("ham"));
}

TEST(Encode, MaxLenBelowThreeIsConfigError) {
  const Vocab v = parse_vocab(kToyVocab);
  EXPECT_THROW(encode("ham", v, 2), ConfigError);
  EXPECT_NO_THROW(encode("ham", v, 3));
  EXPECT_EQ(encode("ham spam", v, 3).ids, (std::vector<std::int32_t>{2, 4, 3}));
}

TEST(Encode, PaddingNeverChangesRealTokens) {
  const Vocab v = parse_vocab(kToyVocab);
  const Encoding a = encode("spammy ham ham", v, 8);
  const Encoding b = encode("spammy ham ham", v, 32);
  ASSERT_EQ(a.real_len, b.real_len);
  for (std::size_t i = 0; i < a.real_len; ++i) EXPECT_EQ(a.ids[i], b.ids[i]);
}

TEST(BuildVocab, FrequencyOrder) {
  const std::vector<std::string> corpus{"a a b"};
  const Vocab v = build_vocab(corpus, 6);
  EXPECT_EQ(v.tokens(), (Pieces{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b"}));
}

TEST(BuildVocab, TooSmallTargetIsConfigError) {
  const std::vector<std::string> corpus{"abc"};
  // Needs a, ##b, ##c on top of the reserved four.
  EXPECT_THROW(build_vocab(corpus, 6), ConfigError);
  EXPECT_NO_THROW(build_vocab(corpus, 7));
  EXPECT_THROW(build_vocab(std::vector<std::string>{}, 10), ConfigError);
}

TEST(BuildVocab, Deterministic) {
  const std::vector<std::string> corpus{"win cash now", "call me later", "cash prize winner"};
  EXPECT_EQ(build_vocab(corpus, 30), build_vocab(corpus, 30));
}

TEST(BuildVocab, ClosureOverToyCorpus) {
  const std::vector<std::string> corpus{"free entry winner", "see you at lunch",
                                        "winner winner call now", "lunch entry"};
  // Distinct words and distinct "##" suffix pieces, counted by hand here.
  std::set<std::string> words, suffixes;
  for (const auto& text : corpus)
    for (const auto& w : split_words(text)) {
      words.insert(w);
      for (std::size_t i = 1; i < w.size(); ++i) suffixes.insert("##" + w.substr(i));
    }
  const std::size_t generous = words.size() + suffixes.size() + 4;
  for (std::size_t size : {generous, generous + 50}) {
    const Vocab v = build_vocab(corpus, size);
    for (const auto& text : corpus)
      for (const auto& piece : wordpiece_tokenize(text, v)) EXPECT_NE(piece, "[UNK]") << size;
  }
  // Even the smallest admissible vocabulary covers every corpus word.
  std::set<std::string> chars;
  for (const auto& w : words) {
    chars.insert(w.substr(0, 1));
    for (std::size_t i = 1; i < w.size(); ++i) chars.insert("##" + w.substr(i, 1));
  }
  const Vocab tight = build_vocab(corpus, chars.size() + 4);
  for (const auto& text : corpus)
    for (const auto& piece : wordpiece_tokenize(text, tight)) EXPECT_NE(piece, "[UNK]");
}

TEST(WordPiece, AgreesWithBruteForceOracleOnRandomTexts) {
  Rng rng(2024);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "A", "\xc3\xa9", "!"};
  auto random_text = [&](std::size_t words) {
    std::string t;
    for (std::size_t w = 0; w < words; ++w) {
      const std::size_t len = 1 + rng.uniform_index(8);
      for (std::size_t i = 0; i < len; ++i) t += alphabet[rng.uniform_index(alphabet.size())];
      t += rng.uniform_index(4) == 0 ? "\t" : " ";
    }
    return t;
  };
  std::vector<std::string> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back(random_text(6));
  const Vocab v = build_vocab(corpus, 120);
  for (int i = 0; i < 500; ++i) {
    const std::string text = random_text(1 + rng.uniform_index(10));
    EXPECT_EQ(wordpiece_tokenize(text, v), spamdet::testing::oracle_tokenize(text, v.tokens()))
        << text;
  }
}
