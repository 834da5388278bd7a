#include "radvqa/qaforge/qa_format.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "radvqa/common/text.hpp"

namespace radvqa::qaforge {
namespace {

enum class Field { none, question, answer, options, type };

struct Marker {
  Field field;
  std::string_view label;
};

constexpr std::array<Marker, 4> kMarkers{{
    {Field::question, "q:"},
    {Field::answer, "a:"},
    {Field::options, "options:"},
    {Field::type, "type:"},
}};

// Finds the next field marker at or after `from` that sits at the start of
// the block or right after whitespace.
std::pair<std::size_t, const Marker*> next_marker(const std::string& block, std::size_t from) {
  for (std::size_t i = from; i < block.size(); ++i) {
    if (i > 0 && !std::isspace(static_cast<unsigned char>(block[i - 1]))) continue;
    for (const auto& m : kMarkers) {
      if (text::starts_with_ci(std::string_view(block).substr(i), m.label)) return {i, &m};
    }
  }
  return {std::string::npos, nullptr};
}

std::vector<std::string> split_blocks(std::string_view text) {
  std::vector<std::string> blocks;
  std::string cur;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) {
      if (!text::trim(cur).empty()) blocks.push_back(cur);
      cur.clear();
    } else {
      if (!cur.empty()) cur.push_back('\n');
      cur += line;
    }
    start = end + 1;
  }
  if (!text::trim(cur).empty()) blocks.push_back(cur);
  return blocks;
}

std::string collapse(std::string_view s) { return text::join(text::split_ws(s), " "); }

bool is_yes_no(const std::string& answer) {
  const auto w = text::words(answer);
  return w.size() == 1 && (w[0] == "yes" || w[0] == "no");
}

}  // namespace

ParseResult parse_qa(std::string_view input) {
  ParseResult result;
  for (const auto& block : split_blocks(input)) {
    std::array<std::optional<std::string>, 5> fields;
    bool duplicate = false;

    auto [pos, marker] = next_marker(block, 0);
    const bool leading_text = pos == std::string::npos || !text::trim(block.substr(0, pos)).empty();
    while (marker != nullptr) {
      const std::size_t value_start = pos + marker->label.size();
      auto [next_pos, next] = next_marker(block, value_start);
      const std::size_t value_end = next_pos == std::string::npos ? block.size() : next_pos;
      auto& slot = fields[static_cast<std::size_t>(marker->field)];
      if (slot) duplicate = true;
      slot = collapse(block.substr(value_start, value_end - value_start));
      pos = next_pos;
      marker = next;
    }

    const auto& q = fields[static_cast<std::size_t>(Field::question)];
    const auto& a = fields[static_cast<std::size_t>(Field::answer)];
    const auto& opts = fields[static_cast<std::size_t>(Field::options)];
    const auto& type = fields[static_cast<std::size_t>(Field::type)];

    auto reject = [&](const char* reason) { result.rejects.push_back({block, reason}); };
    if (!q || leading_text) {
      reject("no_question");
      continue;
    }
    if (duplicate) {
      reject("duplicate_field");
      continue;
    }
    if (q->empty()) {
      reject("empty_question");
      continue;
    }
    if (!a || a->empty()) {
      reject("truncated");
      continue;
    }

    QAPair pair{*q, *a, corpus::RecordKind::open, std::nullopt};
    if (opts) {
      std::vector<std::string> list;
      std::string_view rest = *opts;
      while (true) {
        const auto bar = rest.find('|');
        list.push_back(text::trim(rest.substr(0, bar)));
        if (bar == std::string_view::npos) break;
        rest = rest.substr(bar + 1);
      }
      const bool empty_option = std::any_of(list.begin(), list.end(), [](const auto& o) { return o.empty(); });
      if (list.size() != 4 || empty_option || std::find(list.begin(), list.end(), pair.answer) == list.end()) {
        reject("bad_options");
        continue;
      }
      pair.options = std::move(list);
    }

    if (type) {
      const std::string t = text::to_lower_ascii(*type);
      if (t == "open") {
        pair.kind = corpus::RecordKind::open;
      } else if (t == "short" || t == "closed") {
        pair.kind = corpus::RecordKind::short_answer;
      } else if (t == "mcq") {
        pair.kind = corpus::RecordKind::mcq;
      } else {
        reject("bad_type");
        continue;
      }
      if ((pair.kind == corpus::RecordKind::mcq) != pair.options.has_value()) {
        reject("bad_options");
        continue;
      }
    } else if (pair.options) {
      pair.kind = corpus::RecordKind::mcq;
    } else if (is_yes_no(pair.answer)) {
      pair.kind = corpus::RecordKind::short_answer;
    }
    result.pairs.push_back(std::move(pair));
  }
  return result;
}

std::string format_qa(const std::vector<QAPair>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (i > 0) out += "\n";
    out += "Q: " + p.question + "\n";
    out += "A: " + p.answer + "\n";
    if (p.options) out += "Options: " + text::join(*p.options, " | ") + "\n";
    out += "Type: " + std::string(corpus::to_string(p.kind)) + "\n";
  }
  return out;
}

}  // namespace radvqa::qaforge
