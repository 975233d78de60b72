#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>

#include "probdr/error.hpp"
#include "probdr/lm.hpp"
#include "probdr/rng.hpp"

namespace probdr::lm {

namespace {

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 >> 5) == 0x6) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 >> 4) == 0xE) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 >> 3) == 0x1E) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      throw InvalidInput("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + len > text.size()) throw InvalidInput("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b >> 6) != 0x2) throw InvalidInput("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string_view split_name(Split s) { return s == Split::train ? "train" : "val"; }

}  // namespace

std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(const std::string& text) {
  if (text == "constant") return LrSchedule::constant;
  if (text == "cosine") return LrSchedule::cosine;
  throw InvalidParameter("unknown lr schedule '" + text + "' (expected constant|cosine)");
}

void TrainConfig::validate() const {
  if (max_iters < 1 || batch_size < 1 || eval_interval < 1 || eval_iters < 1) {
    throw InvalidParameter("TrainConfig: iteration and batch counts must be at least 1");
  }
  if (!(learning_rate > 0.0)) throw InvalidParameter("TrainConfig: learning_rate must be positive");
  if (weight_decay < 0.0) throw InvalidParameter("TrainConfig: weight_decay must be non-negative");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw InvalidParameter("TrainConfig: split_fraction must be in (0, 1)");
}

CharVocab CharVocab::build(std::string_view text) {
  if (text.empty()) throw InvalidInput("char_vocab: empty text");
  const auto cps = decode_utf8(text);
  std::set<char32_t> unique(cps.begin(), cps.end());
  CharVocab v;
  v.chars_.assign(unique.begin(), unique.end());
  return v;
}

std::vector<int> CharVocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (char32_t cp : decode_utf8(text)) {
    auto it = std::lower_bound(chars_.begin(), chars_.end(), cp);
    if (it == chars_.end() || *it != cp) {
      throw InvalidInput("char_vocab: code point U+" + std::to_string(static_cast<unsigned long>(cp)) +
                         " not in vocabulary");
    }
    ids.push_back(static_cast<int>(it - chars_.begin()));
  }
  return ids;
}

std::string CharVocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= chars_.size()) throw InvalidInput("char_vocab: id out of range");
    append_utf8(out, chars_[static_cast<std::size_t>(id)]);
  }
  return out;
}

BatchSource::BatchSource(std::vector<int> tokens, std::size_t block_size, std::size_t batch_size,
                         double split_fraction, std::uint64_t seed)
    : tokens_(std::move(tokens)), block_size_(block_size), batch_size_(batch_size), seed_(seed) {
  if (block_size_ < 1 || batch_size_ < 1) throw InvalidParameter("make_batches: block and batch size must be positive");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw InvalidParameter("make_batches: split_fraction must be in (0, 1)");
  n_train_ = static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(tokens_.size())));
  const std::size_t need = block_size_ + 1;
  if (tokens_.size() <= need || n_train_ < need || tokens_.size() - n_train_ < need) {
    throw InvalidInput("make_batches: " + std::to_string(tokens_.size()) +
                       " tokens are too few for windows of " + std::to_string(need) + " in both splits");
  }
}

Batch BatchSource::sample(Split split, std::uint64_t step) const {
  return sample_seeded(split, derive_seed(seed_, {stream_key(split_name(split)), step}));
}

Batch BatchSource::sample_stream(Split split, std::string_view stream, std::uint64_t step, std::uint64_t index) const {
  return sample_seeded(split, derive_seed(seed_, {stream_key(stream), stream_key(split_name(split)), step, index}));
}

Batch BatchSource::sample_seeded(Split split, std::uint64_t seed) const {
  const std::size_t begin = split == Split::train ? train_begin() : val_begin();
  const std::size_t end = split == Split::train ? train_end() : val_end();
  const std::size_t span = end - begin - block_size_;  // number of valid starts
  Rng rng(seed);
  std::vector<std::size_t> starts(batch_size_);
  for (auto& s : starts) s = begin + rng.below(span);
  return window(starts);
}

Batch BatchSource::window(std::span<const std::size_t> starts) const {
  Batch b;
  b.batch_size = starts.size();
  b.seq_len = block_size_;
  b.inputs.reserve(starts.size() * block_size_);
  b.targets.reserve(starts.size() * block_size_);
  for (std::size_t s : starts) {
    if (s + block_size_ + 1 > tokens_.size()) throw InvalidInput("make_batches: window runs past the token stream");
    for (std::size_t t = 0; t < block_size_; ++t) {
      b.inputs.push_back(tokens_[s + t]);
      b.targets.push_back(tokens_[s + t + 1]);
    }
    b.starts.push_back(s);
  }
  return b;
}

std::string synthetic_corpus(std::size_t min_bytes, std::uint64_t seed) {
  static constexpr std::array<std::string_view, 10> speakers{
      "KING",     "QUEEN",  "DUKE",   "FRIAR",  "NURSE",
      "CAPTAIN",  "FOOL",   "LADY",   "PRINCE", "SERVANT"};
  static constexpr std::array<std::string_view, 24> nouns{
      "king",  "crown", "sword", "heart", "night",  "day",   "lord",  "lady",
      "honour", "blood", "grace", "death", "love",  "field", "house", "tongue",
      "friend", "eye",   "soul",  "war",   "peace", "hand",  "word",  "father"};
  static constexpr std::array<std::string_view, 16> adjectives{
      "noble", "gentle", "sweet",  "false", "good",  "dear",  "proud", "poor",
      "fair",  "dark",   "cruel",  "young", "old",   "true",  "brave", "wretched"};
  static constexpr std::array<std::string_view, 16> verbs{
      "loves",  "keeps",  "seeks",   "swears", "hath",  "fears", "speaks", "takes",
      "bears",  "grants", "breaks",  "holds",  "calls", "sees",  "knows",  "leaves"};
  static constexpr std::array<std::string_view, 8> adverbs{
      "now", "still", "yet", "indeed", "so", "too", "here", "there"};
  static constexpr std::array<std::string_view, 6> openers{
      "O", "Alas", "Come", "Nay", "Good", "Peace"};

  Rng rng(derive_seed(seed, {stream_key("corpus")}));
  auto pick = [&](const auto& list) { return list[rng.below(list.size())]; };

  std::string out;
  out.reserve(min_bytes + 256);
  while (out.size() < min_bytes) {
    out += pick(speakers);
    out += ":\n";
    const std::size_t sentences = 1 + rng.below(3);
    for (std::size_t s = 0; s < sentences; ++s) {
      std::string line;
      switch (rng.below(4)) {
        case 0:
          line = std::string("The ") + std::string(pick(adjectives)) + " " + std::string(pick(nouns)) + " " +
                 std::string(pick(verbs)) + " the " + std::string(pick(nouns)) + ".";
          break;
        case 1:
          line = std::string(pick(openers)) + ", my " + std::string(pick(adjectives)) + " " +
                 std::string(pick(nouns)) + "!";
          break;
        case 2:
          line = std::string("My ") + std::string(pick(nouns)) + " " + std::string(pick(verbs)) + " " +
                 std::string(pick(adverbs)) + ", and thy " + std::string(pick(nouns)) + " " +
                 std::string(pick(verbs)) + " me.";
          break;
        default:
          line = std::string("What ") + std::string(pick(nouns)) + " " + std::string(pick(verbs)) + " the " +
                 std::string(pick(adjectives)) + " " + std::string(pick(nouns)) + "?";
          break;
      }
      out += line;
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

}  // namespace probdr::lm
