#include "radvqa/evalkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::evalkit {

std::vector<std::string> metric_tokens(std::string_view input) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char32_t cp : text::utf8_decode(input)) {
    if (text::is_unicode_space(cp)) {
      flush();
    } else if (!text::is_punctuation(cp)) {
      if (cp < 0x80) cp = static_cast<char32_t>(std::tolower(static_cast<int>(cp)));
      text::utf8_append(cur, cp);
    }
  }
  flush();
  return out;
}

std::string_view to_string(BleuSmoothing s) {
  switch (s) {
    case BleuSmoothing::none: return "none";
    case BleuSmoothing::add_epsilon: return "add_epsilon";
    case BleuSmoothing::add_one: return "add_one";
  }
  return "?";
}

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, int> ngram_counts(const std::vector<std::string>& toks, int n) {
  std::map<Gram, int> out;
  if (n <= 0 || toks.size() < static_cast<std::size_t>(n)) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
    out[Gram(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i) + n)] += 1;
  }
  return out;
}

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::map<std::pair<std::string, std::string>, int> skip_bigrams(const std::vector<std::string>& t, int window) {
  std::map<std::pair<std::string, std::string>, int> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = i + 1; j < t.size() && j - i <= static_cast<std::size_t>(window); ++j) {
      out[{t[i], t[j]}] += 1;
    }
  }
  return out;
}

template <typename Map>
std::pair<int, int> clipped_overlap(const Map& cand, const Map& ref) {
  int overlap = 0;
  int total = 0;
  for (const auto& [g, c] : cand) {
    total += c;
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  return {overlap, total};
}

template <typename Map>
int total_count(const Map& m) {
  int t = 0;
  for (const auto& [g, c] : m) t += c;
  return t;
}

}  // namespace

BleuResult bleu(std::string_view candidate, const std::vector<std::string>& references, const BleuOptions& options) {
  if (references.empty()) throw ConfigError("empty_references", "bleu needs at least one reference");
  if (options.max_n < 1) throw ConfigError("bad_max_n", "bleu max_n must be at least 1");

  const auto cand = metric_tokens(candidate);
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(metric_tokens(r));

  BleuResult res;
  res.smoothing = options.smoothing;
  res.candidate_length = cand.size();
  // Closest reference length; ties go to the shorter reference.
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return std::llabs(static_cast<long long>(len) - static_cast<long long>(cand.size())); };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  res.reference_length = best;
  if (cand.empty()) return res;

  res.effective_order = std::min<int>(options.max_n, static_cast<int>(cand.size()));
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= res.effective_order; ++n) {
    const auto cc = ngram_counts(cand, n);
    std::map<Gram, int> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    auto [num, den] = clipped_overlap(cc, max_ref);
    double p = 0.0;
    switch (options.smoothing) {
      case BleuSmoothing::none:
        p = static_cast<double>(num) / den;
        break;
      case BleuSmoothing::add_epsilon:
        p = (num > 0 ? num : 0.1) / static_cast<double>(den);
        break;
      case BleuSmoothing::add_one:
        p = n == 1 ? static_cast<double>(num) / den : (num + 1.0) / (den + 1.0);
        break;
    }
    res.precisions.push_back(p);
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(best);
  res.brevity_penalty = c > r ? 1.0 : std::exp(1.0 - r / c);
  res.score = zero ? 0.0 : res.brevity_penalty * std::exp(log_sum / res.effective_order);
  return res;
}

std::string RougeVariant::name() const {
  switch (kind) {
    case RougeKind::N: return "rouge-" + std::to_string(n);
    case RougeKind::L: return "rouge-l";
    case RougeKind::S: return "rouge-s" + std::to_string(window);
  }
  return "rouge-?";
}

RougeScore rouge(std::string_view candidate, std::string_view reference, const RougeVariant& variant) {
  if (variant.kind == RougeKind::N && variant.n < 1) throw ConfigError("bad_rouge_variant", "ROUGE-N needs n >= 1");
  if (variant.kind == RougeKind::S && variant.window < 1) {
    throw ConfigError("bad_rouge_variant", "ROUGE-S needs window >= 1");
  }
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  RougeScore s;
  if (c.empty() || r.empty()) {
    s.flags.push_back("empty_inputs");
    return s;
  }

  double overlap = 0.0;
  double cand_units = 0.0;
  double ref_units = 0.0;
  switch (variant.kind) {
    case RougeKind::N: {
      const auto cc = ngram_counts(c, variant.n);
      const auto rc = ngram_counts(r, variant.n);
      overlap = clipped_overlap(cc, rc).first;
      cand_units = total_count(cc);
      ref_units = total_count(rc);
      break;
    }
    case RougeKind::L:
      overlap = static_cast<double>(lcs_length(c, r));
      cand_units = static_cast<double>(c.size());
      ref_units = static_cast<double>(r.size());
      break;
    case RougeKind::S: {
      const auto cc = skip_bigrams(c, variant.window);
      const auto rc = skip_bigrams(r, variant.window);
      overlap = clipped_overlap(cc, rc).first;
      cand_units = total_count(cc);
      ref_units = total_count(rc);
      break;
    }
  }
  if (cand_units == 0.0 && ref_units == 0.0) {
    // Both texts are too short to contain a single unit of this variant.
    s.flags.push_back("insufficient_length");
    if (c == r) s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = cand_units > 0.0 ? overlap / cand_units : 0.0;
  s.recall = ref_units > 0.0 ? overlap / ref_units : 0.0;
  s.f1 = f1_of(s.precision, s.recall);
  return s;
}

}  // namespace radvqa::evalkit
