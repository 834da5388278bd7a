#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "radvqa/corpus/types.hpp"

namespace radvqa::qaforge {

enum class TemplateMode { case_based, literature_based, judge };

std::string_view to_string(TemplateMode m);
TemplateMode parse_template_mode(std::string_view s);

/// Prompt text with `{name}` placeholders; `{{` and `}}` are literal braces.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  PromptTemplate(TemplateMode mode, std::string text);

  static PromptTemplate load(const std::string& path, TemplateMode mode);

  TemplateMode mode() const { return mode_; }
  const std::string& text() const { return text_; }
  /// SHA-256 of the template text; logged so outputs are attributable to a wording.
  std::string hash() const;

  /// Placeholder names in order of first appearance.
  std::vector<std::string> placeholders() const;

  /// Throws ConfigError("unresolved_placeholder") naming the first
  /// placeholder without a value.
  std::string render(const std::map<std::string, std::string>& values) const;

  /// Inverse of render: recovers placeholder values from a rendered prompt,
  /// or nullopt when the text does not match the template.
  std::optional<std::map<std::string, std::string>> extract(std::string_view rendered) const;

 private:
  struct Piece {
    bool placeholder;
    std::string text;
  };
  std::vector<Piece> pieces() const;

  TemplateMode mode_ = TemplateMode::case_based;
  std::string text_;
};

/// Literature context line for a caption record (modality and organ tags).
std::string context_for(const corpus::QARecord& record);

/// Renders a generation prompt from a caption record. Errors: judge-mode
/// template, non-caption record, empty caption, unresolved placeholder.
std::string render_prompt(const PromptTemplate& tmpl, const corpus::QARecord& record);

}  // namespace radvqa::qaforge
