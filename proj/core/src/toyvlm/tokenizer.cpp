#include "radvqa/toyvlm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::toyvlm {

Tokenizer::Tokenizer(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < kFirstPiece) throw ConfigError("bad_vocab_size", "vocab_size must be at least 259");
}

std::string Tokenizer::normalize(std::string_view text) {
  std::string out;
  bool space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<std::string> Tokenizer::pieces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::string p;
    if (s[i] == ' ') {
      p.push_back(' ');
      ++i;
      if (i == s.size()) {
        out.push_back(p);
        break;
      }
    }
    if (std::isalnum(static_cast<unsigned char>(s[i]))) {
      while (i < s.size() && std::isalnum(static_cast<unsigned char>(s[i]))) p.push_back(s[i++]);
    } else {
      p.push_back(s[i++]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

Tokenizer Tokenizer::train(const std::vector<std::string>& texts, int vocab_size) {
  Tokenizer tok(vocab_size);
  std::map<std::string, int> counts;
  for (const auto& t : texts) {
    for (auto& p : pieces(normalize(t))) {
      if (p.size() > 1) counts[p] += 1;  // single bytes are already covered
    }
  }
  std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const auto capacity = static_cast<std::size_t>(vocab_size - kFirstPiece);
  for (const auto& [piece, c] : ranked) {
    if (tok.pieces_.size() >= capacity || c < 2) break;
    tok.index_[piece] = kFirstPiece + static_cast<int>(tok.pieces_.size());
    tok.pieces_.push_back(piece);
  }
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& p : pieces(normalize(text))) {
    auto it = index_.find(p);
    if (it != index_.end()) {
      ids.push_back(it->second);
    } else {
      for (unsigned char c : p) ids.push_back(kByteBase + c);
    }
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id >= kByteBase && id < kFirstPiece) {
      out.push_back(static_cast<char>(id - kByteBase));
    } else if (id >= kFirstPiece && id - kFirstPiece < static_cast<int>(pieces_.size())) {
      out += pieces_[static_cast<std::size_t>(id - kFirstPiece)];
    }
  }
  std::string valid;
  for (char32_t cp : text::utf8_decode(out)) text::utf8_append(valid, cp);
  return valid;
}

std::string Tokenizer::token_text(int id) const {
  if (id == kPad) return "<pad>";
  if (id == kSep) return "<sep>";
  if (id == kEos) return "<eos>";
  if (id >= kByteBase && id < kFirstPiece) {
    const auto c = static_cast<unsigned char>(id - kByteBase);
    if (std::isprint(c)) return std::string(1, static_cast<char>(c));
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", c);
    return buf;
  }
  if (id >= kFirstPiece && id - kFirstPiece < static_cast<int>(pieces_.size())) {
    return pieces_[static_cast<std::size_t>(id - kFirstPiece)];
  }
  return "<unused>";
}

nlohmann::ordered_json Tokenizer::to_json() const { return {{"vocab_size", vocab_size_}, {"pieces", pieces_}}; }

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  try {
    Tokenizer tok(j.at("vocab_size").get<int>());
    for (const auto& p : j.at("pieces")) {
      const auto s = p.get<std::string>();
      if (tok.index_.count(s)) throw DataError("bad_tokenizer", "duplicate piece '" + s + "'");
      tok.index_[s] = kFirstPiece + static_cast<int>(tok.pieces_.size());
      tok.pieces_.push_back(s);
    }
    if (kFirstPiece + static_cast<int>(tok.pieces_.size()) > tok.vocab_size_) {
      throw DataError("bad_tokenizer", "more pieces than the vocabulary holds");
    }
    return tok;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad_tokenizer", e.what());
  }
}

}  // namespace radvqa::toyvlm
