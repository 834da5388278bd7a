#include "radvqa/toyvlm/model.hpp"

#include <algorithm>
#include <cmath>

#include "radvqa/common/error.hpp"
#include "radvqa/common/random.hpp"

namespace radvqa::toyvlm {

SequenceLayout assemble_sequence(std::size_t image_tokens, const std::vector<int>& text_ids, std::size_t prefix_len,
                                 std::size_t max_len, bool pad, int sep_id, int pad_id) {
  if (image_tokens + 1 > max_len) {
    throw ShapeError(std::to_string(image_tokens) + " image slots plus separator exceed max_seq_len " +
                     std::to_string(max_len));
  }
  SequenceLayout s;
  s.image_tokens = image_tokens;
  s.sep_index = image_tokens;
  s.text_begin = image_tokens + 1;
  const std::size_t capacity = max_len - s.text_begin;
  const std::size_t kept = std::min(capacity, text_ids.size());
  s.truncated = kept < text_ids.size();
  s.prefix_end = s.text_begin + std::min(prefix_len, kept);
  s.length = s.text_begin + kept;
  s.padded_length = pad ? max_len : s.length;
  s.token_ids.assign(image_tokens, -1);
  s.token_ids.push_back(sep_id);
  s.token_ids.insert(s.token_ids.end(), text_ids.begin(), text_ids.begin() + static_cast<std::ptrdiff_t>(kept));
  s.token_ids.resize(s.padded_length, pad_id);
  return s;
}

Mask prefix_lm_mask(const SequenceLayout& s) {
  const auto n = static_cast<Eigen::Index>(s.padded_length);
  const auto len = static_cast<Eigen::Index>(s.length);
  const auto pre = static_cast<Eigen::Index>(s.prefix_end);
  Mask m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool key_real = j < len;
      m(i, j) = (key_real && (j < pre || j <= i)) || (i == j && !key_real);
    }
  }
  return m;
}

namespace {

std::string layer_name(const char* comp, int l) { return std::string(comp) + ".L" + std::to_string(l); }

AttentionStack make_stack(Component c, std::vector<std::vector<Matrix>> w) {
  AttentionStack s;
  s.component = c;
  s.weights = std::move(w);
  return s;
}

}  // namespace

ToyVlm::ToyVlm(VlmConfig config, Tokenizer tokenizer, std::uint64_t seed)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer)) {
  config_.validate();
  if (tokenizer_.vocab_size() != config_.vocab_size) {
    throw ConfigError("bad_model_config", "tokenizer vocab_size differs from the model config");
  }
  init_params(seed);
}

ToyVlm::ToyVlm(VlmConfig config, Tokenizer tokenizer, ParamMap params, std::optional<LoraSpec> lora)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer)), params_(std::move(params)), lora_(std::move(lora)) {
  config_.validate();
  check_params();
}

const Parameter& ToyVlm::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown_parameter", "model has no tensor '" + name + "'");
  return it->second;
}

Parameter& ToyVlm::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown_parameter", "model has no tensor '" + name + "'");
  return it->second;
}

void ToyVlm::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const auto& c = config_;
  auto normal = [&](const std::string& name, int r, int k) {
    Matrix m(r, k);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = c.init_std * rng.normal();
    params_.emplace(name, Parameter(name, std::move(m)));
  };
  auto zeros = [&](const std::string& name, int r, int k) { params_.emplace(name, Parameter(name, Matrix::Zero(r, k))); };
  auto ones = [&](const std::string& name, int k) { params_.emplace(name, Parameter(name, Matrix::Ones(1, k))); };
  auto lin = [&](const std::string& name, int in, int out) {
    normal(name + ".w", in, out);
    zeros(name + ".b", 1, out);
  };
  auto blocks = [&](const char* comp, int layers, int d) {
    for (int l = 0; l < layers; ++l) {
      const auto n = layer_name(comp, l);
      ones(n + ".ln1.g", d);
      zeros(n + ".ln1.b", 1, d);
      for (const char* proj : {".q", ".k", ".v", ".o"}) lin(n + proj, d, d);
      ones(n + ".ln2.g", d);
      zeros(n + ".ln2.b", 1, d);
      lin(n + ".fc1", d, d * c.mlp_ratio);
      lin(n + ".fc2", d * c.mlp_ratio, d);
    }
  };
  lin("vision.patch", c.patch_dim(), c.d_vision);
  normal("vision.pos", c.patch_count(), c.d_vision);
  blocks("vision", c.vision_layers, c.d_vision);
  ones("vision.ln_f.g", c.d_vision);
  zeros("vision.ln_f.b", 1, c.d_vision);
  lin("proj", c.d_vision, c.d_model);
  normal("lm.tok", c.vocab_size, c.d_model);
  normal("lm.pos", c.max_seq_len, c.d_model);
  blocks("lm", c.lm_layers, c.d_model);
  ones("lm.ln_f.g", c.d_model);
  zeros("lm.ln_f.b", 1, c.d_model);
  lin("lm.head", c.d_model, c.vocab_size);
}

void ToyVlm::check_params() const {
  ToyVlm fresh(config_, tokenizer_, 0);
  if (lora_) fresh.apply_lora(*lora_, 0);
  for (const auto& [name, p] : fresh.params_) {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("missing_tensor", "checkpoint lacks tensor '" + name + "'");
    if (it->second.value.rows() != p.value.rows() || it->second.value.cols() != p.value.cols()) {
      throw ShapeError("tensor '" + name + "' has the wrong shape");
    }
  }
  for (const auto& [name, p] : params_) {
    if (!fresh.params_.count(name)) throw DataError("unexpected_tensor", "unexpected tensor '" + name + "'");
  }
}

Matrix ToyVlm::patches_from_image(const GrayImage& img) const {
  if (img.width <= 0 || img.height <= 0) throw DataError("bad_image", "empty image");
  const int W = config_.image_width();
  const int H = config_.image_height();
  const int ps = config_.patch_size;
  Matrix out(config_.patch_count(), config_.patch_dim());
  for (int gr = 0; gr < config_.grid_rows; ++gr) {
    for (int gc = 0; gc < config_.grid_cols; ++gc) {
      const int row = gr * config_.grid_cols + gc;
      for (int py = 0; py < ps; ++py) {
        for (int px = 0; px < ps; ++px) {
          const int x = (gc * ps + px) * img.width / W;
          const int y = (gr * ps + py) * img.height / H;
          out(row, py * ps + px) = img.at(x, y) / 255.0;
        }
      }
    }
  }
  return out;
}

Var ToyVlm::linear(Tape& t, const std::string& name, Var x) const {
  Var y = add_row(matmul(x, p(t, name + ".w")), p(t, name + ".b"));
  if (lora_) {
    const auto down = "lora." + name + ".w.down";
    if (params_.count(down)) {
      Var delta = matmul(matmul(x, p(t, down)), p(t, "lora." + name + ".w.up"));
      y = add(y, scale(delta, lora_->scaling()));
    }
  }
  return y;
}

Var ToyVlm::block(Tape& t, const std::string& n, Var x, int heads, const Mask& mask,
                  std::vector<std::vector<Matrix>>* attn) const {
  Var h = layer_norm(x, p(t, n + ".ln1.g"), p(t, n + ".ln1.b"));
  std::vector<Matrix> probs;
  Var a = attention(linear(t, n + ".q", h), linear(t, n + ".k", h), linear(t, n + ".v", h), heads, mask,
                    attn ? &probs : nullptr);
  if (attn) attn->push_back(std::move(probs));
  x = add(x, linear(t, n + ".o", a));
  h = layer_norm(x, p(t, n + ".ln2.g"), p(t, n + ".ln2.b"));
  return add(x, linear(t, n + ".fc2", gelu(linear(t, n + ".fc1", h))));
}

Var ToyVlm::vision_graph(Tape& t, const Matrix& patches, std::vector<std::vector<Matrix>>* attn) const {
  if (patches.rows() != config_.patch_count() || patches.cols() != config_.patch_dim()) {
    throw ShapeError("expected " + std::to_string(config_.patch_count()) + " patches of " +
                     std::to_string(config_.patch_dim()) + " values, got " + std::to_string(patches.rows()) + "x" +
                     std::to_string(patches.cols()));
  }
  Var x = add(linear(t, "vision.patch", t.constant(patches)), p(t, "vision.pos"));
  const Mask full = Mask::Constant(config_.patch_count(), config_.patch_count(), true);
  for (int l = 0; l < config_.vision_layers; ++l) {
    x = block(t, layer_name("vision", l), x, config_.vision_heads, full, attn);
  }
  return layer_norm(x, p(t, "vision.ln_f.g"), p(t, "vision.ln_f.b"));
}

Var ToyVlm::project_graph(Tape& t, Var features) const {
  if (features.cols() != config_.d_vision) throw ShapeError("projection expects d_vision columns");
  return add_row(matmul(features, p(t, "proj.w")), p(t, "proj.b"));
}

Var ToyVlm::lm_graph(Tape& t, Var image_tokens, const SequenceLayout& s, const std::vector<Eigen::Index>* rows,
                     std::vector<std::vector<Matrix>>* attn) const {
  if (image_tokens.rows() != static_cast<Eigen::Index>(s.image_tokens) || image_tokens.cols() != config_.d_model) {
    throw ShapeError("image tokens do not match the sequence layout");
  }
  if (s.padded_length > static_cast<std::size_t>(config_.max_seq_len)) {
    throw ShapeError("sequence of " + std::to_string(s.padded_length) + " exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }
  std::vector<int> text(s.token_ids.begin() + static_cast<std::ptrdiff_t>(s.image_tokens), s.token_ids.end());
  Var emb = concat_rows({image_tokens, gather_rows(p(t, "lm.tok"), text)});
  Var x = add(emb, slice_rows(p(t, "lm.pos"), 0, static_cast<Eigen::Index>(s.padded_length)));
  const Mask mask = prefix_lm_mask(s);
  for (int l = 0; l < config_.lm_layers; ++l) x = block(t, layer_name("lm", l), x, config_.lm_heads, mask, attn);
  if (rows) {
    std::vector<Var> picked;
    for (auto r : *rows) picked.push_back(slice_rows(x, r, 1));
    x = concat_rows(picked);
  }
  x = layer_norm(x, p(t, "lm.ln_f.g"), p(t, "lm.ln_f.b"));
  return linear(t, "lm.head", x);
}

VisionOutput ToyVlm::encode_image(const Matrix& patches) const {
  Tape t(false);
  std::vector<std::vector<Matrix>> attn;
  Var f = vision_graph(t, patches, &attn);
  VisionOutput out{f.value(), make_stack(Component::vision, std::move(attn))};
  out.stack.image_token_count = static_cast<std::size_t>(config_.patch_count());
  out.stack.sep_index = out.stack.image_token_count;
  out.stack.generated_start = out.stack.image_token_count;
  out.stack.token_ids.assign(out.stack.image_token_count, -1);
  return out;
}

Matrix ToyVlm::project(const Matrix& features) const {
  Tape t(false);
  return project_graph(t, t.constant(features)).value();
}

ForwardOutput ToyVlm::forward(const Matrix& image_tokens, const SequenceLayout& s) const {
  Tape t(false);
  std::vector<std::vector<Matrix>> attn;
  Var logits = lm_graph(t, t.constant(image_tokens), s, nullptr, &attn);
  ForwardOutput out{logits.value(), make_stack(Component::lm, std::move(attn))};
  out.stack.token_ids = s.token_ids;
  out.stack.image_token_count = s.image_tokens;
  out.stack.sep_index = s.sep_index;
  out.stack.generated_start = s.padded_length;
  return out;
}

Generation ToyVlm::generate(const Matrix& patches, const std::string& prompt, const GenerateOptions& o) const {
  if (o.max_new_tokens < 1) throw ConfigError("bad_max_new_tokens", "max_new_tokens must be at least 1");
  if (o.temperature < 0.0) throw ConfigError("bad_temperature", "temperature must be non-negative");
  const auto vision = encode_image(patches);
  const Matrix image_tokens = project(vision.features);
  const auto prompt_ids = tokenizer_.encode(prompt);
  const auto P = static_cast<std::size_t>(config_.patch_count());
  const auto max_len = static_cast<std::size_t>(config_.max_seq_len);
  auto layout_for = [&](const std::vector<int>& gen) {
    std::vector<int> ids = prompt_ids;
    ids.insert(ids.end(), gen.begin(), gen.end());
    return assemble_sequence(P, ids, prompt_ids.size(), max_len, false);
  };
  if (layout_for({}).truncated) throw ShapeError("prompt does not fit in max_seq_len");

  Rng rng(o.seed);
  Generation g;
  for (int step = 0; step < o.max_new_tokens; ++step) {
    const auto s = layout_for(g.tokens);
    if (s.length >= max_len) break;
    Tape t(false);
    const std::vector<Eigen::Index> last{static_cast<Eigen::Index>(s.length - 1)};
    const Matrix logits = lm_graph(t, t.constant(image_tokens), s, &last).value();
    int next = 0;
    if (o.temperature == 0.0) {
      logits.row(0).maxCoeff(&next);
    } else {
      const Matrix lp = log_softmax_rows(logits / o.temperature);
      double u = rng.uniform();
      next = static_cast<int>(lp.cols()) - 1;
      for (Eigen::Index v = 0; v < lp.cols(); ++v) {
        u -= std::exp(lp(0, v));
        if (u < 0.0) {
          next = static_cast<int>(v);
          break;
        }
      }
    }
    if (next == config_.eos_token_id) {
      g.stopped_on_eos = true;
      break;
    }
    g.tokens.push_back(next);
  }
  g.text = tokenizer_.decode(g.tokens);
  g.layout = layout_for(g.tokens);
  auto fwd = forward(image_tokens, g.layout);
  g.lm_stack = std::move(fwd.stack);
  g.lm_stack.generated_start = g.layout.prefix_end;
  g.vision_stack = vision.stack;
  return g;
}

std::vector<std::string> ToyVlm::lora_weight_names(const LoraSpec& spec) const {
  std::vector<std::string> out;
  for (const auto& target : spec.expanded_targets()) {
    const auto dot = target.find('.');
    const auto comp = target.substr(0, dot);
    const auto proj = target.substr(dot + 1);
    const int layers = comp == "vision" ? config_.vision_layers : config_.lm_layers;
    for (int l = 0; l < layers; ++l) out.push_back(layer_name(comp.c_str(), l) + "." + proj + ".w");
  }
  std::sort(out.begin(), out.end());
  return out;
}

void ToyVlm::apply_lora(const LoraSpec& spec, std::uint64_t seed) {
  if (lora_) throw ConfigError("lora_present", "model already carries adapters; merge them first");
  const auto names = lora_weight_names(spec);
  Rng rng(seed);
  for (const auto& name : names) {
    const auto& w = param(name).value;
    Matrix down(w.rows(), spec.rank);
    const double sd = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (Eigen::Index i = 0; i < down.size(); ++i) down.data()[i] = sd * rng.normal();
    params_.emplace("lora." + name + ".down", Parameter("lora." + name + ".down", std::move(down)));
    params_.emplace("lora." + name + ".up",
                    Parameter("lora." + name + ".up", Matrix::Zero(spec.rank, w.cols())));
  }
  lora_ = spec;
  set_trainable(is_adapter);
}

void ToyVlm::merge_lora() {
  if (!lora_) return;
  const double s = lora_->scaling();
  for (const auto& name : lora_weight_names(*lora_)) {
    const auto down = "lora." + name + ".down";
    const auto up = "lora." + name + ".up";
    param(name).value += s * param(down).value * param(up).value;
    params_.erase(down);
    params_.erase(up);
  }
  lora_.reset();
}

void ToyVlm::set_trainable(const std::function<bool(const std::string&)>& predicate) {
  for (auto& [name, p] : params_) p.trainable = predicate(name);
}

std::size_t ToyVlm::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) {
    if (p.trainable) n += static_cast<std::size_t>(p.size());
  }
  return n;
}

void ToyVlm::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace radvqa::toyvlm
