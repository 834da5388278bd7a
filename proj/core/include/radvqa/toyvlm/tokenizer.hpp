#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace radvqa::toyvlm {

/// Word-level vocabulary over lowercased text with byte fallback.
/// Ids: 0 pad, 1 sep, 2 eos, 3..258 raw bytes, 259.. learned pieces.
/// A piece is an optional leading space plus an alphanumeric run or a single
/// other character.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSep = 1;
  static constexpr int kEos = 2;
  static constexpr int kByteBase = 3;
  static constexpr int kFirstPiece = 259;

  explicit Tokenizer(int vocab_size = 512);

  /// Fills the piece table with the most frequent pieces seen at least
  /// twice (ties broken lexicographically).
  static Tokenizer train(const std::vector<std::string>& texts, int vocab_size);

  /// Lowercases and collapses whitespace; encode/decode round-trip this form.
  static std::string normalize(std::string_view text);
  static std::vector<std::string> pieces(std::string_view normalized);

  std::vector<int> encode(std::string_view text) const;
  /// Skips specials. Byte sequences that are not valid UTF-8 decode as U+FFFD.
  std::string decode(const std::vector<int>& ids) const;
  /// Display form of one id ("<sep>", "<eos>", "<pad>", a piece or "<0xNN>").
  std::string token_text(int id) const;

  int vocab_size() const { return vocab_size_; }
  std::size_t piece_count() const { return pieces_.size(); }

  nlohmann::ordered_json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

  bool operator==(const Tokenizer& o) const { return vocab_size_ == o.vocab_size_ && pieces_ == o.pieces_; }

 private:
  int vocab_size_;
  std::vector<std::string> pieces_;
  std::map<std::string, int> index_;
};

}  // namespace radvqa::toyvlm
