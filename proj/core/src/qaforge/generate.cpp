#include "radvqa/qaforge/generate.hpp"

#include <algorithm>
#include <future>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/random.hpp"

namespace radvqa::qaforge {
namespace {

std::string call_with_retries(TextGenClient& client, const std::string& prompt, const SamplingParams& sampling,
                              int max_retries, const std::string& record_id) {
  for (int attempt = 0;; ++attempt) {
    try {
      return client.generate(prompt, sampling);
    } catch (const ClientError& e) {
      if (attempt >= max_retries) {
        throw ClientError(e.code(), "record " + record_id + ": " + e.what());
      }
    }
  }
}

bool is_closed(corpus::RecordKind k) {
  return k == corpus::RecordKind::short_answer || k == corpus::RecordKind::mcq;
}

}  // namespace

GenerateResult generate_dataset(const corpus::DatasetManifest& captions, TextGenClient& client,
                                const PromptTemplate& tmpl, const GenerateOptions& options) {
  for (const auto& r : captions.records) {
    if (r.kind != corpus::RecordKind::caption) {
      throw DataError("not_caption", "generate_dataset needs caption records; " + r.id + " is " +
                                         std::string(corpus::to_string(r.kind)));
    }
  }
  const bool literature = tmpl.mode() == TemplateMode::literature_based;
  const corpus::Source source = literature ? corpus::Source::synthetic_literature : corpus::Source::synthetic_case;
  const std::string tag = literature ? "lit" : "case";

  const std::size_t n = captions.size();
  std::vector<std::string> prompts(n);
  for (std::size_t i = 0; i < n; ++i) prompts[i] = render_prompt(tmpl, captions.records[i]);

  // Fan out in waves of `concurrency`; results land by index.
  std::vector<std::string> responses(n);
  const std::size_t wave = static_cast<std::size_t>(std::max(1, options.concurrency));
  for (std::size_t begin = 0; begin < n; begin += wave) {
    const std::size_t end = std::min(n, begin + wave);
    std::vector<std::future<std::string>> inflight;
    for (std::size_t i = begin; i < end; ++i) {
      SamplingParams s = options.sampling;
      s.seed = derive_seed(options.sampling.seed, i);
      const std::string& id = captions.records[i].id;
      if (wave == 1) {
        responses[i] = call_with_retries(client, prompts[i], s, options.max_retries, id);
      } else {
        inflight.push_back(std::async(std::launch::async, [&, s, i] {
          return call_with_retries(client, prompts[i], s, options.max_retries, captions.records[i].id);
        }));
      }
    }
    for (std::size_t k = 0; k < inflight.size(); ++k) responses[begin + k] = inflight[k].get();
  }

  GenerateResult result;
  auto& out = result.manifest;
  out.name = captions.name + "-qa-" + tag;
  out.base_dir = captions.base_dir;
  out.provenance = captions.provenance;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& cap = captions.records[i];
    const ParseResult parsed = parse_qa(responses[i]);
    result.parsed_pairs += parsed.pairs.size();
    result.parse_rejects += parsed.rejects.size();
    if (parsed.pairs.empty()) {
      result.skips.push_back({cap.id, "no_pairs_parsed", std::to_string(parsed.rejects.size()) + " rejected segments"});
      continue;
    }
    const FilterResult filtered = filter_noisy(parsed.pairs, options.rules, cap.answer);
    for (const auto& rej : filtered.rejected) result.rejected_by_rule[rej.rule_id] += 1;

    int open_left = options.open_per_caption;
    int closed_left = options.closed_per_caption;
    int k = 0;
    for (const auto& pair : filtered.kept) {
      int& budget = is_closed(pair.kind) ? closed_left : open_left;
      if (budget <= 0) continue;
      --budget;
      corpus::QARecord rec;
      rec.id = cap.id + "-" + tag + "-" + std::to_string(k++);
      rec.image = cap.image;
      rec.kind = pair.kind;
      rec.question = pair.question;
      rec.answer = pair.answer;
      rec.options = pair.options;
      rec.source = source;
      rec.quality_tier = corpus::QualityTier::base;
      out.records.push_back(std::move(rec));
    }
    if (k == 0) {
      result.skips.push_back({cap.id, "all_filtered", std::to_string(filtered.rejected.size()) + " pairs rejected"});
    }
    result.kept_pairs += static_cast<std::size_t>(k);
  }

  std::ostringstream prov;
  prov << "qagen mode=" << to_string(tmpl.mode()) << " template_sha256=" << tmpl.hash()
       << " sampling=temperature:" << options.sampling.temperature << ",max_tokens:" << options.sampling.max_tokens
       << ",seed:" << options.sampling.seed << " client=" << client.identity() << " captions=" << n
       << " records=" << out.records.size() << " skipped=" << result.skips.size()
       << " yield=" << result.kept_pairs << "/" << result.parsed_pairs;
  out.provenance.push_back(prov.str());
  for (const auto& s : result.skips) {
    out.provenance.push_back("qagen skip id=" + s.record_id + " reason=" + s.reason);
  }
  return result;
}

}  // namespace radvqa::qaforge
