#include "radvqa/qaforge/template.hpp"

#include <set>

#include "radvqa/common/error.hpp"
#include "radvqa/common/hash.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::qaforge {

std::string_view to_string(TemplateMode m) {
  switch (m) {
    case TemplateMode::case_based: return "case_based";
    case TemplateMode::literature_based: return "literature_based";
    case TemplateMode::judge: return "judge";
  }
  return "?";
}

TemplateMode parse_template_mode(std::string_view s) {
  if (s == "case_based") return TemplateMode::case_based;
  if (s == "literature_based") return TemplateMode::literature_based;
  if (s == "judge") return TemplateMode::judge;
  throw ConfigError("bad_template_mode", "unknown template mode '" + std::string(s) + "'");
}

PromptTemplate::PromptTemplate(TemplateMode mode, std::string text) : mode_(mode), text_(std::move(text)) {
  (void)pieces();  // reject unbalanced braces early
}

PromptTemplate PromptTemplate::load(const std::string& path, TemplateMode mode) {
  return PromptTemplate(mode, text::read_file(path));
}

std::string PromptTemplate::hash() const { return sha256_hex(text_); }

std::vector<PromptTemplate::Piece> PromptTemplate::pieces() const {
  std::vector<Piece> out;
  std::string literal;
  for (std::size_t i = 0; i < text_.size(); ++i) {
    const char c = text_[i];
    if (c == '{' && i + 1 < text_.size() && text_[i + 1] == '{') {
      literal.push_back('{');
      ++i;
    } else if (c == '}' && i + 1 < text_.size() && text_[i + 1] == '}') {
      literal.push_back('}');
      ++i;
    } else if (c == '{') {
      const auto close = text_.find('}', i + 1);
      if (close == std::string::npos) throw ConfigError("bad_template", "unterminated placeholder in template");
      if (!literal.empty()) out.push_back({false, std::move(literal)});
      literal.clear();
      out.push_back({true, text_.substr(i + 1, close - i - 1)});
      i = close;
    } else {
      literal.push_back(c);
    }
  }
  if (!literal.empty()) out.push_back({false, std::move(literal)});
  return out;
}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : pieces()) {
    if (p.placeholder && seen.insert(p.text).second) out.push_back(p.text);
  }
  return out;
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  for (const auto& p : pieces()) {
    if (!p.placeholder) {
      out += p.text;
      continue;
    }
    auto it = values.find(p.text);
    if (it == values.end()) {
      throw ConfigError("unresolved_placeholder", "template placeholder {" + p.text + "} has no value");
    }
    out += it->second;
  }
  return out;
}

std::optional<std::map<std::string, std::string>> PromptTemplate::extract(std::string_view rendered) const {
  const auto ps = pieces();
  std::map<std::string, std::string> values;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps[i].placeholder) {
      if (rendered.substr(pos, ps[i].text.size()) != ps[i].text) return std::nullopt;
      pos += ps[i].text.size();
      continue;
    }
    // A placeholder extends to the next literal piece (or to the end).
    std::size_t end = rendered.size();
    if (i + 1 < ps.size() && !ps[i + 1].placeholder) {
      const std::string& next = ps[i + 1].text;
      const bool last_literal = i + 2 == ps.size();
      end = last_literal ? rendered.rfind(next) : rendered.find(next, pos);
      if (end == std::string_view::npos || end < pos) return std::nullopt;
    }
    values[ps[i].text] = std::string(rendered.substr(pos, end - pos));
    pos = end;
  }
  if (pos != rendered.size()) return std::nullopt;
  return values;
}

std::string context_for(const corpus::QARecord& record) {
  return "modality: " + std::string(corpus::to_string(record.image.modality)) +
         "; organ: " + std::string(corpus::to_string(record.image.organ));
}

std::string render_prompt(const PromptTemplate& tmpl, const corpus::QARecord& record) {
  if (tmpl.mode() == TemplateMode::judge) {
    throw ConfigError("judge_template", "judge templates are reserved for evaluation");
  }
  if (record.kind != corpus::RecordKind::caption) {
    throw DataError("not_caption", "record " + record.id + " is not a caption record");
  }
  if (text::trim(record.answer).empty()) {
    throw DataError("empty_caption", "record " + record.id + " has an empty caption");
  }
  return tmpl.render({{"caption", record.answer}, {"context", context_for(record)}});
}

}  // namespace radvqa::qaforge
