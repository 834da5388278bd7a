#include "radvqa/toyvlm/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <type_traits>

#include "radvqa/common/error.hpp"
#include "radvqa/common/random.hpp"

namespace radvqa::toyvlm {

void TrainHyper::validate() const {
  if (learning_rate < 0.0) throw ConfigError("bad_hyper", "learning_rate must be non-negative");
  if (lr_schedule != "constant") throw ConfigError("bad_hyper", "only the constant lr_schedule is supported");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("bad_hyper", "label_smoothing must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("bad_hyper", "weight_decay must be non-negative");
  if (fp16) throw ConfigError("unsupported_precision", "fp16 is not supported; training runs in float64");
  if (gradient_accumulation < 1) throw ConfigError("bad_hyper", "gradient_accumulation must be at least 1");
  if (batch_size < 1) throw ConfigError("bad_hyper", "batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("bad_hyper", "epochs must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("bad_hyper", "grad_clip must be non-negative");
}

nlohmann::ordered_json to_json(const TrainHyper& h) {
  return {{"learning_rate", h.learning_rate},
          {"lr_schedule", h.lr_schedule},
          {"label_smoothing", h.label_smoothing},
          {"weight_decay", h.weight_decay},
          {"fp16", h.fp16},
          {"gradient_accumulation", h.gradient_accumulation},
          {"batch_size", h.batch_size},
          {"epochs", h.epochs},
          {"adam_beta1", h.adam_beta1},
          {"adam_beta2", h.adam_beta2},
          {"adam_eps", h.adam_eps},
          {"grad_clip", h.grad_clip},
          {"seed", h.seed}};
}

TrainHyper train_hyper_from_json(const nlohmann::json& j, TrainHyper h, const std::string& path) {
  auto qualified = [&](const std::string& key) { return path.empty() ? key : path + "." + key; };
  if (!j.is_object()) throw ConfigError("bad_type", (path.empty() ? "hyperparameters" : path) + " must be an object");
  const auto known = to_json(TrainHyper{});
  for (const auto& [key, v] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown_key", "unknown hyperparameter '" + qualified(key) + "'");
  }
  auto read = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad_type", "bad value for " + qualified(key));
    }
  };
  read("learning_rate", h.learning_rate);
  read("lr_schedule", h.lr_schedule);
  read("label_smoothing", h.label_smoothing);
  read("weight_decay", h.weight_decay);
  read("fp16", h.fp16);
  read("gradient_accumulation", h.gradient_accumulation);
  read("batch_size", h.batch_size);
  read("epochs", h.epochs);
  read("adam_beta1", h.adam_beta1);
  read("adam_beta2", h.adam_beta2);
  read("adam_eps", h.adam_eps);
  read("grad_clip", h.grad_clip);
  read("seed", h.seed);
  h.validate();
  return h;
}

std::string prompt_for(const corpus::QARecord& r) {
  switch (r.kind) {
    case corpus::RecordKind::caption:
      return "caption:";
    case corpus::RecordKind::mcq: {
      std::string s = "question: " + r.question + " options:";
      const auto& opts = r.options ? *r.options : std::vector<std::string>{};
      for (std::size_t i = 0; i < opts.size(); ++i) s += (i ? " | " : " ") + opts[i];
      return s + " answer:";
    }
    case corpus::RecordKind::open:
    case corpus::RecordKind::short_answer:
      break;
  }
  return "question: " + r.question + " answer:";
}

std::size_t Dataset::label_tokens() const {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.targets.size();
  return n;
}

Dataset build_dataset(const ToyVlm& model, const corpus::DatasetManifest& manifest) {
  if (manifest.empty()) throw DataError("empty_manifest", "manifest '" + manifest.name + "' has no records");
  const auto& tok = model.tokenizer();
  const auto& cfg = model.config();
  Dataset d;
  for (const auto& r : manifest.records) {
    const auto path = manifest.resolve_image(r);
    if (corpus::is_url(path)) throw DataError("remote_image_unsupported", "cannot train on remote image " + path);
    if (!d.patches.count(path)) d.patches.emplace(path, model.patches_from_image(read_pgm(path)));

    const auto prompt = prompt_for(r);
    auto prompt_ids = tok.encode(prompt);
    auto ids = tok.encode(prompt + " " + r.answer);
    if (ids.size() < prompt_ids.size() || !std::equal(prompt_ids.begin(), prompt_ids.end(), ids.begin())) {
      // Piece boundaries never cross a space, so this only trips on odd prompts.
      throw DataError("tokenization_boundary", "answer tokens merge with the prompt in record " + r.id);
    }
    ids.push_back(cfg.eos_token_id);
    Example e;
    e.id = r.id;
    e.image_key = path;
    e.layout = assemble_sequence(static_cast<std::size_t>(cfg.patch_count()), ids, prompt_ids.size(),
                                 static_cast<std::size_t>(cfg.max_seq_len), false);
    if (e.layout.truncated) ++d.truncated;
    for (std::size_t pos = e.layout.prefix_end; pos < e.layout.length; ++pos) {
      e.logit_rows.push_back(static_cast<Eigen::Index>(pos - 1));
      e.targets.push_back(e.layout.token_ids[pos]);
    }
    if (e.targets.empty()) continue;  // prompt alone filled the context
    d.examples.push_back(std::move(e));
  }
  if (d.examples.empty()) throw DataError("empty_manifest", "no record of '" + manifest.name + "' fits the context");
  return d;
}

namespace {

bool vision_frozen(const ToyVlm& m) {
  for (const auto& [name, p] : m.params()) {
    if (p.trainable && (name.rfind("vision.", 0) == 0 || name.rfind("lora.vision.", 0) == 0)) return false;
  }
  return true;
}

using FeatureCache = std::map<std::string, Matrix>;

FeatureCache vision_features(const ToyVlm& m, const Dataset& d) {
  FeatureCache out;
  for (const auto& [key, patches] : d.patches) out.emplace(key, m.encode_image(patches).features);
  return out;
}

Var example_logits(const ToyVlm& m, Tape& t, const Dataset& d, const Example& e, const FeatureCache* cache) {
  Var features = cache ? t.constant(cache->at(e.image_key)) : m.vision_graph(t, d.patches.at(e.image_key));
  return m.lm_graph(t, m.project_graph(t, features), e.layout, &e.logit_rows);
}

double example_backward(ToyVlm& m, const Dataset& d, const Example& e, const FeatureCache* cache, double eps,
                        double weight) {
  Tape t(true);
  Var loss = cross_entropy(example_logits(m, t, d, e, cache), e.targets, eps);
  const double value = loss.value()(0, 0);
  t.backward(scale(loss, weight));
  auto& params = m.params();
  t.accumulate([&](const std::string& name) -> Matrix& { return params.at(name).grad; });
  return value;
}

NllResult nll(const ToyVlm& m, const Dataset& d, const FeatureCache* cache) {
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& e : d.examples) {
    Tape t(false);
    const Matrix lp = log_softmax_rows(example_logits(m, t, d, e, cache).value());
    for (std::size_t i = 0; i < e.targets.size(); ++i) sum -= lp(static_cast<Eigen::Index>(i), e.targets[i]);
    tokens += e.targets.size();
  }
  return {tokens ? sum / static_cast<double>(tokens) : 0.0, tokens};
}

}  // namespace

NllResult eval_loss(const ToyVlm& model, const Dataset& data) { return nll(model, data, nullptr); }

void AdamW::step(ParamMap& params) {
  ++t_;
  double scale_clip = 1.0;
  if (h_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : params) {
      if (p.trainable) sq += p.grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > h_.grad_clip) scale_clip = h_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(h_.adam_beta1, t_);
  const double bc2 = 1.0 - std::pow(h_.adam_beta2, t_);
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto [it, fresh] = moments_.try_emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()),
                                            Matrix::Zero(p.value.rows(), p.value.cols()));
    auto& [m, v] = it->second;
    const Matrix g = p.grad * scale_clip;
    m = h_.adam_beta1 * m + (1.0 - h_.adam_beta1) * g;
    v = h_.adam_beta2 * v + (1.0 - h_.adam_beta2) * g.cwiseProduct(g);
    if (h_.weight_decay > 0.0) p.value -= h_.learning_rate * h_.weight_decay * p.value;
    p.value.array() -= h_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + h_.adam_eps);
  }
}

std::string history_csv(const std::vector<EpochLog>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,eval_loss,optimizer_steps\n";
  for (const auto& e : history) {
    out << e.epoch << ",";
    if (std::isfinite(e.train_loss)) out << e.train_loss;
    out << "," << e.eval_loss << "," << e.optimizer_steps << "\n";
  }
  return out.str();
}

nlohmann::ordered_json to_json(const std::vector<EpochLog>& history) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& e : history) {
    out.push_back({{"epoch", e.epoch},
                   {"train_loss", std::isfinite(e.train_loss) ? nlohmann::ordered_json(e.train_loss) : nlohmann::ordered_json(nullptr)},
                   {"eval_loss", e.eval_loss},
                   {"optimizer_steps", e.optimizer_steps}});
  }
  return out;
}

std::optional<int> epochs_to_reach(const std::vector<EpochLog>& history, double target) {
  for (const auto& e : history) {
    if (e.eval_loss <= target) return e.epoch;
  }
  return std::nullopt;
}

double accumulate_gradients(ToyVlm& model, const Dataset& data, const std::vector<std::size_t>& examples,
                            double label_smoothing) {
  double sum = 0.0;
  for (auto i : examples) {
    sum += example_backward(model, data, data.examples.at(i), nullptr, label_smoothing,
                            1.0 / static_cast<double>(examples.size()));
  }
  return examples.empty() ? 0.0 : sum / static_cast<double>(examples.size());
}

TrainResult train(ToyVlm& model, const Dataset& train_data, const Dataset& eval_data, const TrainHyper& hyper,
                  const EpochCallback& on_epoch) {
  hyper.validate();
  if (train_data.examples.empty()) throw DataError("empty_manifest", "no training examples");
  const bool cached = vision_frozen(model);
  FeatureCache train_cache;
  FeatureCache eval_cache;
  if (cached) {
    train_cache = vision_features(model, train_data);
    eval_cache = vision_features(model, eval_data);
  }
  const FeatureCache* tc = cached ? &train_cache : nullptr;
  const FeatureCache* ec = cached ? &eval_cache : nullptr;

  TrainResult res;
  res.label_tokens = train_data.label_tokens();
  AdamW opt(hyper);
  auto log = [&](EpochLog e) {
    res.history.push_back(e);
    if (on_epoch) on_epoch(e);
  };
  log({0, std::numeric_limits<double>::quiet_NaN(), nll(model, eval_data, ec).mean, 0});

  const std::size_t n = train_data.examples.size();
  const std::size_t group = static_cast<std::size_t>(hyper.batch_size) * static_cast<std::size_t>(hyper.gradient_accumulation);
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(hyper.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += group) {
      const std::size_t end = std::min(n, start + group);
      model.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        loss_sum += example_backward(model, train_data, train_data.examples[order[k]], tc, hyper.label_smoothing,
                                     1.0 / static_cast<double>(end - start));
      }
      opt.step(model.params());
    }
    model.zero_grad();
    log({epoch, loss_sum / static_cast<double>(n), nll(model, eval_data, ec).mean, opt.steps()});
  }
  res.optimizer_steps = opt.steps();
  return res;
}

TrainResult pretrain(ToyVlm& model, const Dataset& train_data, const Dataset& eval_data, const TrainHyper& hyper,
                     const EpochCallback& on_epoch) {
  if (model.lora()) throw ConfigError("lora_present", "pretraining expects a model without adapters");
  model.set_trainable([](const std::string&) { return true; });
  return train(model, train_data, eval_data, hyper, on_epoch);
}

TrainResult train_stage1(ToyVlm& model, const Dataset& train_data, const Dataset& eval_data, const TrainHyper& hyper,
                         const EpochCallback& on_epoch) {
  if (model.lora()) throw ConfigError("lora_present", "stage 1 expects a model without adapters");
  model.set_trainable(ToyVlm::is_projection);
  return train(model, train_data, eval_data, hyper, on_epoch);
}

TrainResult train_stage2(ToyVlm& model, const LoraSpec& lora, const Dataset& train_data, const Dataset& eval_data,
                         const TrainHyper& hyper, const EpochCallback& on_epoch) {
  if (model.lora()) {
    if (model.lora_weight_names(*model.lora()) != model.lora_weight_names(lora) || model.lora()->rank != lora.rank ||
        model.lora()->alpha != lora.alpha) {
      throw ConfigError("lora_target_mismatch", "existing adapters do not match the requested LoRA config");
    }
  } else {
    model.apply_lora(lora, derive_seed(hyper.seed, 0x10a));
  }
  model.set_trainable(ToyVlm::is_adapter);
  return train(model, train_data, eval_data, hyper, on_epoch);
}

}  // namespace radvqa::toyvlm
