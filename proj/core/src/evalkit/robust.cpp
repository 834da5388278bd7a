#include "radvqa/evalkit/robust.hpp"

#include <cctype>
#include <map>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::evalkit {

namespace {

std::string strip_to_words(std::string_view s) {
  std::vector<std::string> kept;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && cur != "a" && cur != "an" && cur != "the") kept.push_back(cur);
    cur.clear();
  };
  for (char32_t cp : text::utf8_decode(s)) {
    if (text::is_unicode_space(cp) || text::is_punctuation(cp)) {
      flush();
    } else {
      if (cp < 0x80) cp = static_cast<char32_t>(std::tolower(static_cast<int>(cp)));
      text::utf8_append(cur, cp);
    }
  }
  flush();
  return text::join(kept, " ");
}

// Index of the option an answer names by letter, if it does.
std::optional<std::size_t> option_letter(std::string_view raw, std::size_t n_options) {
  std::string s = text::trim(raw);
  if (text::starts_with_ci(s, "option ")) s = text::trim(std::string_view(s).substr(7));
  std::size_t i = 0;
  bool paren = false;
  if (i < s.size() && s[i] == '(') {
    paren = true;
    ++i;
  }
  if (i >= s.size() || !std::isalpha(static_cast<unsigned char>(s[i]))) return std::nullopt;
  const auto idx = static_cast<std::size_t>(std::tolower(static_cast<unsigned char>(s[i])) - 'a');
  if (idx >= n_options) return std::nullopt;
  ++i;
  if (paren) {
    if (i >= s.size() || s[i] != ')') return std::nullopt;
    return idx;
  }
  if (i == s.size()) return idx;
  if (s[i] == ')' || s[i] == '.' || s[i] == ':') return idx;
  return std::nullopt;
}

}  // namespace

std::string normalize_answer(std::string_view answer, const std::optional<std::vector<std::string>>& options) {
  if (options && !options->empty()) {
    // Exact option text wins over a letter reading ("A" could be both).
    const std::string key = strip_to_words(answer);
    for (const auto& o : *options) {
      if (strip_to_words(o) == key && !key.empty()) return key;
    }
    if (auto idx = option_letter(answer, options->size())) return strip_to_words((*options)[*idx]);
  }
  return strip_to_words(answer);
}

ModalAnswer modal_answer(const GenerationSet& set) {
  std::map<std::string, std::size_t> counts;
  for (const auto& g : set.generations) counts[normalize_answer(g, set.options)] += 1;
  ModalAnswer best;
  for (const auto& [a, c] : counts) {
    if (c > best.count) best = {a, c};  // map order makes ties resolve to the smallest key
  }
  return best;
}

RobustResult robust_mcq_accuracy(const std::vector<GenerationSet>& sets) {
  RobustResult res;
  std::size_t credit = 0;
  for (const auto& s : sets) {
    if (s.generations.size() != kGenerationsPerItem) {
      throw DataError("bad_generation_count", "item " + s.item_id + " has " + std::to_string(s.generations.size()) +
                                                  " generations, expected " + std::to_string(kGenerationsPerItem));
    }
    const auto m = modal_answer(s);
    InstanceOutcome o;
    o.item_id = s.item_id;
    o.modal_answer = m.answer;
    o.modal_count = m.count;
    o.robust = m.count >= 3;
    o.modal_correct = m.answer == normalize_answer(s.gold, s.options);
    o.credit = o.robust && o.modal_correct ? 1 : 0;
    if (!o.robust) {
      ++res.n_nonrobust;
      if (o.modal_correct) ++res.n_penalized;
    }
    credit += static_cast<std::size_t>(o.credit);
    res.instances.push_back(std::move(o));
  }
  res.accuracy = sets.empty() ? 0.0 : static_cast<double>(credit) / static_cast<double>(sets.size());
  return res;
}

}  // namespace radvqa::evalkit
