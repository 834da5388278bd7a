#include "radvqa/pipeline/stages.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/hash.hpp"
#include "radvqa/common/image.hpp"
#include "radvqa/common/random.hpp"
#include "radvqa/common/text.hpp"
#include "radvqa/corpus/ingest.hpp"
#include "radvqa/corpus/jsonl.hpp"
#include "radvqa/corpus/split.hpp"
#include "radvqa/corpus/validate.hpp"
#include "radvqa/evalkit/metrics.hpp"
#include "radvqa/evalkit/robust.hpp"
#include "radvqa/mixer/mixer.hpp"
#include "radvqa/mixer/stats.hpp"
#include "radvqa/qaforge/template.hpp"
#include "radvqa/saliency/saliency.hpp"
#include "radvqa/scaling/scaling.hpp"
#include "radvqa/toyvlm/checkpoint.hpp"
#include "radvqa/toyvlm/train.hpp"

namespace radvqa::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kQa = "qa";
constexpr const char* kQaTrain = "qa.train";
constexpr const char* kQaVal = "qa.val";
constexpr const char* kQaTest = "qa.test";
constexpr const char* kCaptions = "captions";
constexpr const char* kEnrichment = "enrichment";
constexpr const char* kSynthetic = "synthetic";
constexpr const char* kAnnealed = "annealed";

std::string rel(const Workspace& ws, const fs::path& p) { return fs::relative(p, ws.root).generic_string(); }

void write_json(const fs::path& p, const ordered_json& j) { text::write_file(p.string(), j.dump(2) + "\n"); }

void write_resolved_config(const RunConfig& c, const Workspace& ws) {
  ordered_json j;
  j["config_hash"] = c.hash;
  j["config"] = c.resolved;
  write_json(ws.resolved_config(), j);
}

// Digest of every artifact under the workspace, rewritten after each stage.
void update_index(const RunConfig& c, const Workspace& ws) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(ws.root)) {
    if (!e.is_regular_file()) continue;
    if (e.path() == ws.artifact_index()) continue;
    const std::string name = e.path().filename().string();
    if (name.rfind(".tmp", 0) == 0 || name.find(".tmp.") != std::string::npos) continue;
    files.push_back(rel(ws, e.path()));
  }
  std::sort(files.begin(), files.end());
  ordered_json j;
  j["config_hash"] = c.hash;
  ordered_json digests = ordered_json::object();
  for (const auto& f : files) digests[f] = sha256_hex(text::read_file((ws.root / f).string()));
  j["files"] = std::move(digests);
  write_json(ws.artifact_index(), j);
}

StageResult begin(const RunConfig& c, const std::string& stage) {
  Workspace ws{c.output_dir};
  fs::create_directories(ws.root);
  write_resolved_config(c, ws);
  StageResult r;
  r.stage = stage;
  r.summary["config_hash"] = c.hash;
  return r;
}

StageResult finish(const RunConfig& c, StageResult r) {
  update_index(c, Workspace{c.output_dir});
  return r;
}

corpus::DatasetManifest load(const Workspace& ws, const std::string& name) {
  const fs::path p = ws.manifest(name);
  if (!fs::exists(p)) {
    throw DataError("missing_artifact", "manifest " + p.string() + " not found; run the producing stage first");
  }
  return corpus::read_manifest(p.string());
}

std::string save(const RunConfig& c, const Workspace& ws, corpus::DatasetManifest m, const std::string& name) {
  m.provenance.push_back("run config_hash=" + c.hash);
  const fs::path p = ws.manifest(name);
  corpus::write_manifest(m, p.string());
  return rel(ws, p);
}

toyvlm::LoadedCheckpoint load_ckpt(const std::string& path) {
  if (!fs::exists(path)) {
    throw DataError("missing_artifact", "checkpoint " + path + " not found; run the producing stage first");
  }
  return toyvlm::load_checkpoint(path);
}

std::string train_manifest_name(const std::string& dataset) {
  if (dataset == "qa") return kQaTrain;
  if (dataset == "annealed") return kAnnealed;
  throw ConfigError("unknown_dataset", "unknown training dataset '" + dataset + "' (expected qa or annealed)");
}

ordered_json trainer_meta(const RunConfig& c, const std::string& stage, const toyvlm::TrainHyper& h,
                          const std::string& dataset, const toyvlm::TrainResult& result,
                          const std::string& init_hash) {
  ordered_json j;
  j["stage"] = stage;
  j["config_hash"] = c.hash;
  j["init_checkpoint"] = init_hash.empty() ? ordered_json(nullptr) : ordered_json(init_hash);
  j["train_dataset"] = dataset;
  j["hyper"] = toyvlm::to_json(h);
  j["label_tokens"] = result.label_tokens;
  j["optimizer_steps"] = result.optimizer_steps;
  j["history"] = toyvlm::to_json(result.history);
  return j;
}

ordered_json history_summary(const toyvlm::TrainResult& r) {
  ordered_json j;
  j["epochs"] = r.history.size() - 1;
  j["initial_eval_loss"] = r.history.front().eval_loss;
  j["final_eval_loss"] = r.history.back().eval_loss;
  j["label_tokens"] = r.label_tokens;
  return j;
}

bool is_closed(corpus::RecordKind k) {
  return k == corpus::RecordKind::short_answer || k == corpus::RecordKind::mcq;
}

const toyvlm::Matrix& patches_for(const toyvlm::ToyVlm& model, const corpus::DatasetManifest& m,
                                  const corpus::QARecord& r, std::map<std::string, toyvlm::Matrix>& cache) {
  const std::string path = m.resolve_image(r);
  auto it = cache.find(path);
  if (it == cache.end()) it = cache.emplace(path, model.patches_from_image(read_pgm(path))).first;
  return it->second;
}

struct ArmRun {
  toyvlm::TrainResult stage1;
  toyvlm::TrainResult stage2;
  bool with_stage1 = false;
};

}  // namespace

std::unique_ptr<qaforge::TextGenClient> make_client(const ClientConfig& c,
                                                    const qaforge::PromptTemplate* judge_template) {
  if (c.kind == "replay") return std::make_unique<qaforge::ReplayClient>(qaforge::ReplayClient::load(c.cassette));
  if (c.kind == "echo") {
    if (judge_template) return std::make_unique<evalkit::EchoJudgeClient>(*judge_template);
    return std::make_unique<qaforge::EchoClient>();
  }
  if (c.kind == "http") return std::make_unique<qaforge::HttpClient>(c.url, c.api_key_env, c.timeout_seconds);
  throw ConfigError("bad_enum", "unknown client kind '" + c.kind + "'");
}

corpus::DatasetManifest detach(const corpus::DatasetManifest& m) {
  corpus::DatasetManifest out = m;
  for (auto& r : out.records) r.image.path = m.resolve_image(r);
  out.base_dir.clear();
  return out;
}

EvalOutcome evaluate_model(const toyvlm::ToyVlm& model, const corpus::DatasetManifest& test,
                           const EvaluateConfig& cfg, qaforge::TextGenClient& judge,
                           const qaforge::PromptTemplate& judge_template, std::uint64_t seed) {
  if (test.empty()) throw DataError("empty_manifest", "evaluation dataset " + test.name + " is empty");
  const std::size_t n = test.size();
  const auto runs = static_cast<std::size_t>(cfg.runs);

  std::map<std::string, toyvlm::Matrix> cache;
  std::vector<std::vector<std::string>> generated(n, std::vector<std::string>(runs));
  std::vector<std::vector<std::uint64_t>> seeds(n, std::vector<std::uint64_t>(runs));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = test.records[i];
    const auto& patches = patches_for(model, test, r, cache);
    for (std::size_t k = 0; k < runs; ++k) {
      toyvlm::GenerateOptions g;
      g.max_new_tokens = cfg.max_new_tokens;
      g.temperature = cfg.temperature;
      g.seed = derive_seed(derive_seed(seed, k), i);
      seeds[i][k] = g.seed;
      generated[i][k] = model.generate(patches, toyvlm::prompt_for(r), g).text;
    }
  }

  std::vector<evalkit::JudgeItem> items;
  std::vector<std::pair<std::size_t, std::size_t>> item_pos;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = test.records[i];
    if (is_closed(r.kind)) continue;
    for (std::size_t k = 0; k < runs; ++k) {
      items.push_back({r.id + "@run" + std::to_string(k), r.question, r.answer, generated[i][k]});
      item_pos.emplace_back(i, k);
    }
  }
  evalkit::VerdictCache verdict_cache;
  evalkit::JudgeOptions jopt;
  jopt.concurrency = cfg.judge_concurrency;
  jopt.cache = &verdict_cache;
  std::vector<evalkit::JudgeVerdict> verdicts;
  if (!items.empty()) verdicts = evalkit::judge_open(items, judge, judge_template, jopt);

  std::vector<std::vector<bool>> correct(n, std::vector<bool>(runs, false));
  for (std::size_t v = 0; v < verdicts.size(); ++v) {
    correct[item_pos[v].first][item_pos[v].second] = verdicts[v].verdict == evalkit::Verdict::correct;
  }
  std::size_t n_closed = 0;
  std::vector<evalkit::GenerationSet> sets;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = test.records[i];
    if (!is_closed(r.kind)) continue;
    ++n_closed;
    const std::string gold = evalkit::normalize_answer(r.answer, r.options);
    for (std::size_t k = 0; k < runs; ++k) {
      correct[i][k] = evalkit::normalize_answer(generated[i][k], r.options) == gold;
    }
    sets.push_back({r.id, r.answer, generated[i], seeds[i], r.options});
  }
  const std::size_t n_open = n - n_closed;

  std::vector<double> acc, closed_acc, open_acc, bleu, rouge_l, rouge_s, rouge_m;
  for (std::size_t k = 0; k < runs; ++k) {
    std::size_t all = 0, closed = 0, open = 0;
    double b = 0, l = 0, s = 0, m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = test.records[i];
      if (correct[i][k]) {
        ++all;
        ++(is_closed(r.kind) ? closed : open);
      }
      if (!is_closed(r.kind)) {
        b += evalkit::bleu(generated[i][k], {r.answer}).score;
        l += evalkit::rouge(generated[i][k], r.answer, evalkit::RougeVariant::lcs()).f1;
        s += evalkit::rouge(generated[i][k], r.answer, evalkit::RougeVariant::skip(4)).f1;
        m += evalkit::rouge(generated[i][k], r.answer, evalkit::RougeVariant::m()).f1;
      }
    }
    acc.push_back(static_cast<double>(all) / static_cast<double>(n));
    if (n_closed) closed_acc.push_back(static_cast<double>(closed) / static_cast<double>(n_closed));
    if (n_open) {
      const double d = static_cast<double>(n_open);
      open_acc.push_back(static_cast<double>(open) / d);
      bleu.push_back(b / d);
      rouge_l.push_back(l / d);
      rouge_s.push_back(s / d);
      rouge_m.push_back(m / d);
    }
  }

  EvalOutcome out;
  auto& rep = out.report;
  rep.dataset = test.name;
  rep.metrics["accuracy"] = evalkit::summarize(acc);
  if (n_closed) rep.metrics["closed_accuracy"] = evalkit::summarize(closed_acc);
  if (n_open) {
    rep.metrics["open_accuracy"] = evalkit::summarize(open_acc);
    rep.metrics["bleu"] = evalkit::summarize(bleu);
    rep.metrics["rouge_l"] = evalkit::summarize(rouge_l);
    rep.metrics["rouge_s4"] = evalkit::summarize(rouge_s);
    rep.metrics["rouge_m"] = evalkit::summarize(rouge_m);
    rep.flags.push_back("rouge_m_is_rouge_2");
  }
  std::optional<evalkit::RobustResult> robust;
  if (n_closed && runs == evalkit::kGenerationsPerItem) {
    robust = evalkit::robust_mcq_accuracy(sets);
    rep.metrics["robust_closed_accuracy"] = evalkit::summarize({robust->accuracy});
  } else if (n_closed) {
    rep.flags.push_back("robust_accuracy_needs_5_runs");
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& tally = rep.organs[std::string(corpus::to_string(test.records[i].image.organ))];
    if (correct[i][0]) {
      ++tally.correct;
    } else {
      ++tally.incorrect;
    }
  }
  rep.metadata["samples"] = n;
  rep.metadata["closed_items"] = n_closed;
  rep.metadata["open_items"] = n_open;
  rep.metadata["runs"] = runs;
  rep.metadata["temperature"] = cfg.temperature;
  rep.metadata["max_new_tokens"] = cfg.max_new_tokens;
  rep.metadata["seed"] = seed;
  rep.metadata["judge"] = judge.identity();
  rep.metadata["judge_template_sha256"] = judge_template.hash();
  if (robust) {
    rep.metadata["n_nonrobust"] = robust->n_nonrobust;
    rep.metadata["n_penalized"] = robust->n_penalized;
  }
  rep.check(n);

  std::ostringstream gen;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < runs; ++k) {
      ordered_json j;
      j["id"] = test.records[i].id;
      j["run"] = k;
      j["seed"] = seeds[i][k];
      j["generated"] = generated[i][k];
      j["correct"] = static_cast<bool>(correct[i][k]);
      gen << j.dump() << "\n";
    }
  }
  out.generations_jsonl = gen.str();
  out.verdicts = std::move(verdicts);
  return out;
}

StageResult run_ingest(const RunConfig& c) {
  StageResult res = begin(c, "ingest");
  Workspace ws{c.output_dir};
  auto one = [&](const SourceConfig& src, const std::string& name) {
    auto in = corpus::ingest(src.path, src.adapter);
    const auto report = corpus::validate(in.manifest);
    ordered_json v;
    v["dataset"] = name;
    v["pass"] = report.pass;
    v["records"] = in.manifest.size();
    v["rejected_lines"] = in.rejects.size();
    ordered_json findings = ordered_json::array();
    for (const auto& f : report.findings) findings.push_back({{"id", f.record_id}, {"kind", f.kind}, {"message", f.message}});
    v["findings"] = std::move(findings);
    write_json(ws.report("validate_" + name + ".json"), v);
    res.artifacts.push_back(rel(ws, ws.report("validate_" + name + ".json")));
    if (!report.pass) throw DataError("validation_failed", name + " failed validation; see validate_" + name + ".json");
    const fs::path rejects = ws.root / "manifests" / (name + ".rejects.jsonl");
    text::write_file(rejects.string(), corpus::serialize_rejects(in.rejects));
    res.artifacts.push_back(rel(ws, rejects));
    res.artifacts.push_back(save(c, ws, in.manifest, name));
    res.summary[name] = {{"records", in.manifest.size()}, {"rejected", in.rejects.size()}};
    return in.manifest;
  };
  one(c.captions, kCaptions);
  const auto qa = one(c.qa, kQa);
  if (c.enrichment) one(*c.enrichment, kEnrichment);

  const auto parts = corpus::split(qa, c.split, c.split_seed);
  res.artifacts.push_back(save(c, ws, parts.train, kQaTrain));
  res.artifacts.push_back(save(c, ws, parts.val, kQaVal));
  res.artifacts.push_back(save(c, ws, parts.test, kQaTest));
  res.summary["split"] = {{"train", parts.train.size()},
                          {"val", parts.val.size()},
                          {"test", parts.test.size()},
                          {"stratified", parts.stratified}};
  return finish(c, res);
}

StageResult run_qagen(const RunConfig& c) {
  StageResult res = begin(c, "qagen");
  if (!c.qagen.enabled) {
    res.summary["skipped"] = true;
    return finish(c, res);
  }
  Workspace ws{c.output_dir};
  const auto& q = c.qagen;
  const auto captions = corpus::ingest(q.captions.path, q.captions.adapter).manifest;
  const auto tmpl = qaforge::PromptTemplate::load(q.template_path, q.mode);
  auto client = make_client(q.client);
  const auto gen = qaforge::generate_dataset(captions, *client, tmpl, q.options);
  res.artifacts.push_back(save(c, ws, gen.manifest, kSynthetic));

  ordered_json rep;
  rep["captions"] = captions.size();
  rep["records"] = gen.manifest.size();
  rep["parsed_pairs"] = gen.parsed_pairs;
  rep["parse_rejects"] = gen.parse_rejects;
  rep["kept_pairs"] = gen.kept_pairs;
  rep["rejected_by_rule"] = gen.rejected_by_rule;
  ordered_json skips = ordered_json::array();
  for (const auto& s : gen.skips) skips.push_back({{"id", s.record_id}, {"reason", s.reason}, {"detail", s.detail}});
  rep["skips"] = std::move(skips);
  rep["template_sha256"] = tmpl.hash();
  rep["client"] = client->identity();
  rep["config_hash"] = c.hash;
  write_json(ws.report("qagen.json"), rep);
  res.artifacts.push_back(rel(ws, ws.report("qagen.json")));
  res.summary["records"] = gen.manifest.size();
  res.summary["skips"] = gen.skips.size();
  return finish(c, res);
}

StageResult run_mix(const RunConfig& c) {
  StageResult res = begin(c, "mix");
  Workspace ws{c.output_dir};
  if (!c.enrichment || c.mix.taxonomy.empty()) {
    res.summary["skipped"] = true;
    return finish(c, res);
  }
  corpus::DatasetManifest base = detach(load(ws, kQaTrain));
  if (c.mix.include_synthetic && fs::exists(ws.manifest(kSynthetic))) {
    const auto synth = detach(load(ws, kSynthetic));
    base.records.insert(base.records.end(), synth.records.begin(), synth.records.end());
    base.provenance.push_back("concat " + synth.name + " records=" + std::to_string(synth.size()));
  }
  const auto enrichment = load(ws, kEnrichment);
  const auto taxonomy = mixer::load_taxonomy(c.mix.taxonomy);
  const auto index = mixer::index_pathologies(enrichment, taxonomy);
  const auto relevant = mixer::filter_relevant(enrichment, index, c.mix.top_k_pathologies);
  const auto tagged = mixer::tag_enrichment(relevant);

  mixer::MixSpec spec;
  spec.base = base.name;
  spec.enrichment = tagged.name;
  spec.enrichment_fraction = c.mix.enrichment_fraction;
  spec.top_k_pathologies = c.mix.top_k_pathologies;
  spec.seed = c.mix.seed;
  const auto annealed = mixer::anneal(base, tagged, spec);
  res.artifacts.push_back(save(c, ws, annealed, kAnnealed));

  ordered_json rep;
  rep["base_records"] = base.size();
  rep["enrichment_records"] = enrichment.size();
  rep["enrichment_kept"] = tagged.size();
  rep["ranked_terms"] = mixer::ranked_terms(index);
  rep["annealed_records"] = annealed.size();
  rep["enrichment_fraction"] = spec.enrichment_fraction;
  rep["seed"] = spec.seed;
  rep["config_hash"] = c.hash;
  write_json(ws.report("mix.json"), rep);
  res.artifacts.push_back(rel(ws, ws.report("mix.json")));
  res.summary["annealed_records"] = annealed.size();
  return finish(c, res);
}

StageResult run_stats(const RunConfig& c) {
  StageResult res = begin(c, "stats");
  Workspace ws{c.output_dir};
  std::optional<mixer::Taxonomy> taxonomy;
  if (!c.mix.taxonomy.empty()) taxonomy = mixer::load_taxonomy(c.mix.taxonomy);
  for (const char* name : {kQa, kSynthetic, kAnnealed}) {
    if (!fs::exists(ws.manifest(name))) continue;
    const auto m = load(ws, name);
    std::optional<mixer::PathologyIndex> index;
    if (taxonomy) index = mixer::index_pathologies(m, *taxonomy);
    auto stats = mixer::compute_stats(m, index ? &*index : nullptr, c.stats_top_k);
    stats.dataset = name;
    auto j = mixer::to_json(stats);
    j["config_hash"] = c.hash;
    write_json(ws.report(std::string("stats_") + name + ".json"), j);
    text::write_file(ws.report(std::string("stats_") + name + ".csv").string(), mixer::to_csv(stats));
    res.artifacts.push_back(rel(ws, ws.report(std::string("stats_") + name + ".json")));
    res.artifacts.push_back(rel(ws, ws.report(std::string("stats_") + name + ".csv")));
    res.summary[name] = stats.records;
  }
  return finish(c, res);
}

StageResult run_pretrain(const RunConfig& c) {
  StageResult res = begin(c, "pretrain");
  Workspace ws{c.output_dir};
  const auto captions = load(ws, kCaptions);
  const std::string train_name = train_manifest_name(c.train_dataset);
  const auto train_m = load(ws, train_name);
  const auto val_m = load(ws, kQaVal);

  std::vector<std::string> texts;
  for (const auto* m : {&captions, &train_m}) {
    for (const auto& r : m->records) texts.push_back(toyvlm::prompt_for(r) + " " + r.answer);
  }
  toyvlm::ToyVlm model(c.model, toyvlm::Tokenizer::train(texts, c.model.vocab_size), c.seed);
  const auto train_ds = toyvlm::build_dataset(model, captions);
  const auto val_ds = toyvlm::build_dataset(model, val_m);
  const auto result = toyvlm::pretrain(model, train_ds, val_ds, c.pretrain);

  toyvlm::save_checkpoint(ws.checkpoint("base").string(), model, toyvlm::Stage::base,
                          trainer_meta(c, "pretrain", c.pretrain, kCaptions, result, ""));
  text::write_file(ws.curve("pretrain").string(), toyvlm::history_csv(result.history));
  res.artifacts = {rel(ws, ws.checkpoint("base")), rel(ws, ws.curve("pretrain"))};
  res.summary["training"] = history_summary(result);
  res.summary["tokenizer_pieces"] = model.tokenizer().piece_count();
  return finish(c, res);
}

StageResult run_stage1(const RunConfig& c) {
  StageResult res = begin(c, "stage1");
  Workspace ws{c.output_dir};
  auto base = load_ckpt(ws.checkpoint("base").string());
  const std::string train_name = train_manifest_name(c.train_dataset);
  const auto train_ds = toyvlm::build_dataset(base.model, load(ws, train_name));
  const auto val_ds = toyvlm::build_dataset(base.model, load(ws, kQaVal));
  const auto result = toyvlm::train_stage1(base.model, train_ds, val_ds, c.stage1);
  toyvlm::save_checkpoint(ws.checkpoint("stage1").string(), base.model, toyvlm::Stage::stage1,
                          trainer_meta(c, "stage1", c.stage1, train_name, result, base.content_hash));
  text::write_file(ws.curve("stage1").string(), toyvlm::history_csv(result.history));
  res.artifacts = {rel(ws, ws.checkpoint("stage1")), rel(ws, ws.curve("stage1"))};
  res.summary["training"] = history_summary(result);
  return finish(c, res);
}

StageResult run_stage2(const RunConfig& c, const std::optional<std::string>& init) {
  StageResult res = begin(c, "stage2");
  Workspace ws{c.output_dir};
  auto start = load_ckpt(init ? *init : ws.checkpoint("stage1").string());
  const std::string train_name = train_manifest_name(c.train_dataset);
  const auto train_ds = toyvlm::build_dataset(start.model, load(ws, train_name));
  const auto val_ds = toyvlm::build_dataset(start.model, load(ws, kQaVal));
  const auto result = toyvlm::train_stage2(start.model, c.lora, train_ds, val_ds, c.stage2);
  auto meta = trainer_meta(c, "stage2", c.stage2, train_name, result, start.content_hash);
  meta["init_stage"] = toyvlm::to_string(start.stage);
  meta["trainable_parameters"] = start.model.trainable_parameter_count();
  toyvlm::save_checkpoint(ws.checkpoint("stage2").string(), start.model, toyvlm::Stage::stage2, meta);
  text::write_file(ws.curve("stage2").string(), toyvlm::history_csv(result.history));
  res.artifacts = {rel(ws, ws.checkpoint("stage2")), rel(ws, ws.curve("stage2"))};
  res.summary["training"] = history_summary(result);
  res.summary["init_stage"] = toyvlm::to_string(start.stage);
  return finish(c, res);
}

StageResult run_evaluate(const RunConfig& c, const EvaluateRequest& req) {
  StageResult res = begin(c, "evaluate");
  Workspace ws{c.output_dir};
  const auto ckpt = load_ckpt(req.checkpoint ? *req.checkpoint : ws.checkpoint("stage2").string());
  corpus::DatasetManifest test;
  std::string label;
  if (req.dataset) {
    test = corpus::read_manifest(*req.dataset);
    label = fs::path(*req.dataset).stem().string();
  } else {
    test = load(ws, kQaTest);
    label = kQaTest;
  }
  const auto tmpl = qaforge::PromptTemplate::load(c.evaluate.judge_template, qaforge::TemplateMode::judge);
  evalkit::check_judge_template(tmpl);
  auto judge = make_client(c.evaluate.judge_client, &tmpl);
  auto out = evaluate_model(ckpt.model, test, c.evaluate, *judge, tmpl, c.seed);
  out.report.metadata["checkpoint_hash"] = ckpt.content_hash;
  out.report.metadata["checkpoint_stage"] = toyvlm::to_string(ckpt.stage);
  out.report.metadata["config_hash"] = c.hash;

  const std::string stem = "eval_" + label;
  write_json(ws.report(stem + ".json"), out.report.to_json());
  text::write_file(ws.report(stem + ".md").string(), out.report.markdown());
  text::write_file(ws.report(stem + "_verdicts.jsonl").string(), evalkit::serialize_verdicts(out.verdicts));
  text::write_file(ws.report(stem + "_generations.jsonl").string(), out.generations_jsonl);
  for (const char* suffix : {".json", ".md", "_verdicts.jsonl", "_generations.jsonl"}) {
    res.artifacts.push_back(rel(ws, ws.report(stem + suffix)));
  }
  res.summary["accuracy"] = out.report.metrics.at("accuracy").mean;
  return finish(c, res);
}

StageResult run_ablate(const RunConfig& c) {
  StageResult res = begin(c, "ablate");
  Workspace ws{c.output_dir};
  if (c.ablate.datasets.size() < 2) {
    throw ConfigError("ablate_needs_datasets", "ablate needs at least two datasets");
  }
  const auto base = load_ckpt(ws.checkpoint("base").string());
  const auto test = load(ws, kQaTest);
  const auto val_ds = toyvlm::build_dataset(base.model, load(ws, kQaVal));
  const auto tmpl = qaforge::PromptTemplate::load(c.evaluate.judge_template, qaforge::TemplateMode::judge);
  evalkit::check_judge_template(tmpl);
  auto judge = make_client(c.evaluate.judge_client, &tmpl);

  evalkit::AblationTable table;
  ordered_json detail = ordered_json::array();
  for (const auto& dataset : c.ablate.datasets) {
    const std::string train_name = train_manifest_name(dataset);
    const auto train_ds = toyvlm::build_dataset(base.model, load(ws, train_name));
    evalkit::AblationTable::Row row;
    row.dataset = dataset;
    ordered_json arms = ordered_json::object();
    std::vector<toyvlm::TrainResult> stage2_runs;
    for (const bool with_stage1 : {false, true}) {
      toyvlm::ToyVlm model = base.model;
      const std::string arm = with_stage1 ? "with_stage1" : "without_stage1";
      if (with_stage1) {
        const auto s1 = toyvlm::train_stage1(model, train_ds, val_ds, c.stage1);
        text::write_file(ws.curve("ablate_" + dataset + "_" + arm + "_stage1").string(),
                         toyvlm::history_csv(s1.history));
      }
      const auto s2 = toyvlm::train_stage2(model, c.lora, train_ds, val_ds, c.stage2);
      text::write_file(ws.curve("ablate_" + dataset + "_" + arm + "_stage2").string(),
                       toyvlm::history_csv(s2.history));
      stage2_runs.push_back(s2);
      const auto out = evaluate_model(model, test, c.evaluate, *judge, tmpl, c.seed);
      row.cells.push_back(out.report.metrics.at("accuracy"));
      auto rep = out.report.to_json();
      rep["metadata"]["checkpoint_hash"] = toyvlm::content_hash(model);
      rep["metadata"]["config_hash"] = c.hash;
      arms[arm] = std::move(rep);
    }
    // Convergence: epochs each arm needs to reach the best loss of the from-base arm.
    double target = stage2_runs[0].history.front().eval_loss;
    for (const auto& e : stage2_runs[0].history) target = std::min(target, e.eval_loss);
    const auto from_base = toyvlm::epochs_to_reach(stage2_runs[0].history, target);
    const auto from_stage1 = toyvlm::epochs_to_reach(stage2_runs[1].history, target);
    ordered_json conv;
    conv["target_eval_loss"] = target;
    conv["from_base_epochs"] = from_base ? ordered_json(*from_base) : ordered_json(nullptr);
    conv["from_stage1_epochs"] = from_stage1 ? ordered_json(*from_stage1) : ordered_json(nullptr);
    detail.push_back({{"dataset", dataset}, {"train_manifest", train_name}, {"convergence", conv}, {"arms", arms}});
    table.rows.push_back(std::move(row));
  }

  ordered_json j;
  j["table"] = table.to_json();
  j["datasets"] = std::move(detail);
  j["seed"] = c.seed;
  j["runs"] = c.evaluate.runs;
  j["base_checkpoint"] = base.content_hash;
  j["config_hash"] = c.hash;
  write_json(ws.report("ablation.json"), j);
  text::write_file(ws.report("ablation.md").string(), table.markdown());
  res.artifacts = {rel(ws, ws.report("ablation.json")), rel(ws, ws.report("ablation.md"))};
  res.summary["table"] = table.to_json();
  return finish(c, res);
}

StageResult run_scaling_fit(const RunConfig& c, const std::optional<std::string>& csv) {
  StageResult res = begin(c, "scaling-fit");
  Workspace ws{c.output_dir};
  std::vector<scaling::LossPoint> points;
  std::string source;
  const std::string path = csv ? *csv : c.scaling.points;
  if (!path.empty()) {
    points = scaling::read_points_csv(text::read_file(path));
    source = "csv";
  } else {
    source = "lora_sweep";
    const auto start = load_ckpt(ws.checkpoint("stage1").string());
    const auto train_all = toyvlm::build_dataset(start.model, load(ws, train_manifest_name(c.train_dataset)));
    const auto val_ds = toyvlm::build_dataset(start.model, load(ws, kQaVal));
    auto hyper = c.stage2;
    hyper.epochs = c.scaling.sweep.epochs;
    std::ostringstream out;
    out << "X,D_f,L,rank,fraction\n";
    for (const int rank : c.scaling.sweep.ranks) {
      for (const double f : c.scaling.sweep.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("bad_value", "sweep fractions must lie in (0, 1]");
        toyvlm::Dataset subset;
        const auto keep = static_cast<std::size_t>(
            std::ceil(f * static_cast<double>(train_all.examples.size())));
        subset.examples.assign(train_all.examples.begin(),
                               train_all.examples.begin() + static_cast<std::ptrdiff_t>(keep));
        subset.patches = train_all.patches;
        toyvlm::ToyVlm model = start.model;
        auto lora = c.lora;
        lora.rank = rank;
        const auto r = toyvlm::train_stage2(model, lora, subset, val_ds, hyper);
        const scaling::LossPoint p{static_cast<double>(model.trainable_parameter_count()),
                                   static_cast<double>(r.label_tokens) * hyper.epochs, r.history.back().eval_loss};
        points.push_back(p);
        out << nlohmann::json(p.params).dump() << "," << nlohmann::json(p.tokens).dump() << ","
            << nlohmann::json(p.loss).dump() << "," << rank << "," << nlohmann::json(f).dump() << "\n";
      }
    }
    text::write_file(ws.report("scaling_points.csv").string(), out.str());
    res.artifacts.push_back(rel(ws, ws.report("scaling_points.csv")));
  }
  const auto fit = scaling::fit(points);
  ordered_json j;
  j["source"] = source;
  j["fit"] = scaling::to_json(fit);
  ordered_json pts = ordered_json::array();
  for (const auto& p : points) {
    pts.push_back({{"X", p.params}, {"D_f", p.tokens}, {"L", p.loss}, {"predicted", scaling::predict(fit, p.params, p.tokens)}});
  }
  j["points"] = std::move(pts);
  j["mcq_loss_floor_4"] = scaling::mcq_loss_floor(4);
  j["config_hash"] = c.hash;
  write_json(ws.report("scaling_fit.json"), j);
  res.artifacts.push_back(rel(ws, ws.report("scaling_fit.json")));
  res.summary["fit"] = scaling::to_json(fit);
  return finish(c, res);
}

StageResult run_saliency_export(const RunConfig& c, const SaliencyExportRequest& req) {
  StageResult res = begin(c, "saliency-export");
  Workspace ws{c.output_dir};
  const auto ckpt = load_ckpt(req.checkpoint ? *req.checkpoint : ws.checkpoint("stage2").string());
  const auto test = load(ws, kQaTest);
  const std::string want = req.record ? *req.record : c.saliency.record;
  const corpus::QARecord* rec = nullptr;
  corpus::DatasetManifest owner = test;
  if (want.empty()) {
    rec = &test.records.front();
  } else {
    for (const auto* name : {kQaTest, kQa}) {
      owner = load(ws, name);
      const auto it = std::find_if(owner.records.begin(), owner.records.end(),
                                   [&](const corpus::QARecord& r) { return r.id == want; });
      if (it != owner.records.end()) {
        rec = &*it;
        break;
      }
    }
    if (!rec) throw ConfigError("unknown_record", "record " + want + " not found in the qa manifest");
  }
  const corpus::QARecord record = *rec;
  const GrayImage image = read_pgm(owner.resolve_image(record));
  const auto& model = ckpt.model;
  toyvlm::GenerateOptions g;
  g.max_new_tokens = c.saliency.max_new_tokens;
  const auto gen = model.generate(model.patches_from_image(image), toyvlm::prompt_for(record), g);

  const std::size_t index = req.token_index ? *req.token_index : c.saliency.token_index;
  const std::string stem = record.id;
  write_json(ws.saliency(stem + "_attention_lm.json"), toyvlm::to_json(gen.lm_stack));
  write_json(ws.saliency(stem + "_attention_vision.json"), toyvlm::to_json(gen.vision_stack));
  res.artifacts.push_back(rel(ws, ws.saliency(stem + "_attention_lm.json")));
  res.artifacts.push_back(rel(ws, ws.saliency(stem + "_attention_vision.json")));

  ordered_json j;
  j["record"] = record.id;
  j["question"] = record.question;
  j["answer"] = gen.text;
  ordered_json tokens = ordered_json::array();
  for (std::size_t k = 0; k < gen.tokens.size(); ++k) {
    tokens.push_back({{"index", k}, {"text", model.tokenizer().token_text(gen.tokens[k])}});
  }
  j["tokens"] = std::move(tokens);
  j["token_index"] = index;
  j["checkpoint_hash"] = ckpt.content_hash;
  j["config_hash"] = c.hash;
  ordered_json maps = ordered_json::object();
  const auto& cfg = model.config();
  for (const auto method : c.saliency.methods) {
    saliency::SaliencyQuery q;
    q.direction = saliency::Direction::token_to_image;
    q.index = index;
    q.method = method;
    q.head_fusion = c.saliency.head_fusion;
    const auto map = saliency::compute(gen.lm_stack, q);
    const auto grid = saliency::render_grid(map, static_cast<std::size_t>(cfg.grid_rows),
                                            static_cast<std::size_t>(cfg.grid_cols), image.width, image.height);
    saliency::SaliencyQuery back = q;
    back.direction = saliency::Direction::patch_to_tokens;
    back.index = map.argmax;
    const auto name = std::string(saliency::to_string(method));
    maps[name] = {{"token_to_image", saliency::to_json(map)},
                  {"grid", saliency::to_json(grid)},
                  {"patch_to_tokens", saliency::to_json(saliency::compute(gen.lm_stack, back))}};
    write_png(ws.saliency(stem + "_" + name + ".png").string(), saliency::overlay_heatmap(image, grid));
    res.artifacts.push_back(rel(ws, ws.saliency(stem + "_" + name + ".png")));
  }
  j["maps"] = std::move(maps);
  write_json(ws.saliency(stem + "_saliency.json"), j);
  res.artifacts.push_back(rel(ws, ws.saliency(stem + "_saliency.json")));
  res.summary["record"] = record.id;
  res.summary["answer"] = gen.text;
  return finish(c, res);
}

std::vector<StageResult> run_pipeline(const RunConfig& c, const StageCallback& on_stage) {
  std::vector<StageResult> out;
  auto step = [&](StageResult r) {
    if (on_stage) on_stage(r);
    out.push_back(std::move(r));
  };
  step(run_ingest(c));
  step(run_qagen(c));
  step(run_mix(c));
  step(run_stats(c));
  step(run_pretrain(c));
  step(run_stage1(c));
  step(run_stage2(c));
  step(run_evaluate(c));
  step(run_ablate(c));
  step(run_scaling_fit(c));
  step(run_saliency_export(c));
  return out;
}

}  // namespace radvqa::pipeline
