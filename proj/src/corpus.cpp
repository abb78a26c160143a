#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "moa/errors.hpp"
#include "moa/train.hpp"

namespace moa {

namespace {

constexpr const char* kLexicon[] = {
    "the",    "of",      "and",    "to",     "a",      "in",     "is",      "that",    "for",    "it",
    "as",     "was",     "with",   "be",     "by",     "on",     "not",     "he",      "this",   "are",
    "or",     "his",     "from",   "at",     "which",  "but",    "have",    "an",      "had",    "they",
    "you",    "were",    "their",  "one",    "all",    "we",     "can",     "her",     "has",    "there",
    "been",   "if",      "more",   "when",   "will",   "would",  "who",     "so",      "no",     "she",
    "other",  "its",     "may",    "these",  "about",  "them",   "than",    "some",    "time",   "into",
    "only",   "two",     "could",  "new",    "first",  "then",   "any",     "like",    "my",     "now",
    "over",   "such",    "our",    "man",    "me",     "even",   "most",    "made",    "after",  "also",
    "did",    "many",    "before", "must",   "through","years",  "where",   "much",    "your",   "way",
    "well",   "down",    "should", "because","each",   "just",   "those",   "people",  "how",    "too",
    "little", "state",   "good",   "very",   "make",   "world",  "still",   "own",     "see",    "men",
    "work",   "long",    "get",    "here",   "between","both",   "life",    "being",   "under",  "never",
    "day",    "same",    "another","know",   "while",  "last",   "might",   "us",      "great",  "old",
    "year",   "off",     "come",   "since",  "against","go",     "came",    "right",   "used",   "take",
    "three",  "himself", "few",    "house",  "use",    "during", "without", "again",   "place",  "around",
    "however","home",    "small",  "found",  "thought","went",   "say",     "part",    "once",   "general",
    "high",   "upon",    "school", "every",  "does",   "got",    "united",  "left",    "number", "course",
    "war",    "until",   "always", "away",   "something","fact", "though",  "water",   "less",   "public",
    "put",    "think",   "almost", "hand",   "enough", "far",    "took",    "head",    "yet",    "government",
    "system", "better",  "set",    "told",   "nothing","night",  "end",     "why",     "called", "didn",
};

std::uint64_t next(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(std::uint64_t& s) { return static_cast<double>(next(s) >> 11) * 0x1.0p-53; }

}  // namespace

Corpus split_corpus(const std::string& bytes) {
  if (bytes.empty()) throw IoError("corpus is empty");
  const std::size_t n = bytes.size();
  const std::size_t val = std::max<std::size_t>(1, n / 20);
  Corpus c;
  c.train.reserve(n - val);
  for (std::size_t i = 0; i < n; ++i) {
    const int b = static_cast<unsigned char>(bytes[i]);
    (i < n - val ? c.train : c.val).push_back(b);
  }
  return c;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus_path '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw IoError("corpus_path '" + path.string() + "' is empty");
  return split_corpus(bytes);
}

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  constexpr std::size_t n_words = std::size(kLexicon);
  std::vector<double> cdf(n_words);
  double total = 0.0;
  for (std::size_t i = 0; i < n_words; ++i) cdf[i] = (total += 1.0 / std::pow(static_cast<double>(i + 1), 1.1));
  for (auto& c : cdf) c /= total;

  std::uint64_t s = seed;
  std::string out;
  out.reserve(bytes + 64);
  std::size_t sentences = 0;
  while (out.size() < bytes) {
    const std::size_t len = 4 + next(s) % 9;
    for (std::size_t w = 0; w < len; ++w) {
      const double u = uniform01(s);
      const std::size_t idx = std::min<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), n_words - 1);
      std::string word = kLexicon[idx];
      if (w == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
      out += word;
      if (w + 1 < len) out += (next(s) % 11 == 0) ? ", " : " ";
    }
    out += (++sentences % 5 == 0) ? ".\n" : ". ";
  }
  out.resize(bytes);
  return out;
}

std::string random_corpus(std::size_t bytes, std::uint64_t seed) {
  std::uint64_t s = seed;
  std::string out(bytes, '\0');
  for (auto& c : out) c = static_cast<char>(next(s) & 0xffu);
  return out;
}

TokenBatch sample_batch(const std::vector<int>& data, std::size_t batch_size, std::size_t seq_len,
                        std::uint64_t& rng_state) {
  const std::size_t window = seq_len + 1;
  if (data.size() < window)
    throw DataError("split of " + std::to_string(data.size()) + " tokens is shorter than one window of " +
                    std::to_string(window));
  TokenBatch b{batch_size, window, {}};
  b.ids.reserve(batch_size * window);
  const std::size_t span = data.size() - window + 1;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t start = next(rng_state) % span;
    b.ids.insert(b.ids.end(), data.begin() + static_cast<std::ptrdiff_t>(start),
                 data.begin() + static_cast<std::ptrdiff_t>(start + window));
  }
  return b;
}

}  // namespace moa
