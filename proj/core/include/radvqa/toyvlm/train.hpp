#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radvqa/corpus/types.hpp"
#include "radvqa/toyvlm/model.hpp"

namespace radvqa::toyvlm {

/// Defaults are the first/second stage hyperparameters reported for the
/// full-scale model; toy runs override learning rate and accumulation.
struct TrainHyper {
  double learning_rate = 1e-5;
  std::string lr_schedule = "constant";
  double label_smoothing = 0.0;
  double weight_decay = 0.0;
  bool fp16 = false;
  int gradient_accumulation = 16;
  int batch_size = 6;
  int epochs = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 0;

  /// Throws ConfigError; fp16 is rejected because training runs in float64.
  void validate() const;
};

nlohmann::ordered_json to_json(const TrainHyper& h);
TrainHyper train_hyper_from_json(const nlohmann::json& j, TrainHyper defaults = {}, const std::string& path = "");

/// Prompt shown to the model for a record ("caption:" or "question: ... answer:").
std::string prompt_for(const corpus::QARecord& r);

struct Example {
  std::string id;
  std::string image_key;
  SequenceLayout layout;  // unpadded
  std::vector<Eigen::Index> logit_rows;  // positions whose next token is supervised
  std::vector<int> targets;              // answer tokens then EOS
};

struct Dataset {
  std::vector<Example> examples;
  std::map<std::string, Matrix> patches;  // by resolved image path
  std::size_t truncated = 0;

  std::size_t label_tokens() const;
};

/// Tokenizes every record and loads its image. Throws DataError for an
/// empty manifest or an unreadable image.
Dataset build_dataset(const ToyVlm& model, const corpus::DatasetManifest& manifest);

struct NllResult {
  double mean = 0.0;  // per supervised token
  std::size_t tokens = 0;
};

/// Mean negative log-likelihood over answer tokens (plus EOS), prompt
/// tokens excluded.
NllResult eval_loss(const ToyVlm& model, const Dataset& data);

class AdamW {
 public:
  explicit AdamW(const TrainHyper& h) : h_(h) {}
  /// Updates trainable parameters from their accumulated gradients.
  void step(ParamMap& params);
  int steps() const { return t_; }

 private:
  TrainHyper h_;
  int t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // NaN for epoch 0 (before training)
  double eval_loss = 0.0;
  int optimizer_steps = 0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t label_tokens = 0;
  int optimizer_steps = 0;
};

std::string history_csv(const std::vector<EpochLog>& history);
nlohmann::ordered_json to_json(const std::vector<EpochLog>& history);
/// First epoch whose eval loss is at or below `target`.
std::optional<int> epochs_to_reach(const std::vector<EpochLog>& history, double target);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains the model's currently trainable tensors. Epoch 0 is an evaluation
/// before any update. Vision features are cached when the tower is frozen.
TrainResult train(ToyVlm& model, const Dataset& train_data, const Dataset& eval_data, const TrainHyper& hyper,
                  const EpochCallback& on_epoch = nullptr);

/// Every base tensor trainable (produces the base checkpoint).
TrainResult pretrain(ToyVlm& model, const Dataset& train_data, const Dataset& eval_data, const TrainHyper& hyper,
                     const EpochCallback& on_epoch = nullptr);
/// Projection only; everything else frozen.
TrainResult train_stage1(ToyVlm& model, const Dataset& train_data, const Dataset& eval_data, const TrainHyper& hyper,
                         const EpochCallback& on_epoch = nullptr);
/// Adds adapters (or reuses matching ones) and trains only them. Throws
/// ConfigError("lora_target_mismatch") when existing adapters differ.
TrainResult train_stage2(ToyVlm& model, const LoraSpec& lora, const Dataset& train_data, const Dataset& eval_data,
                         const TrainHyper& hyper, const EpochCallback& on_epoch = nullptr);

/// One forward/backward pass over `examples` without an optimizer update;
/// leaves gradients in the parameters. Returns the mean example loss.
double accumulate_gradients(ToyVlm& model, const Dataset& data, const std::vector<std::size_t>& examples,
                            double label_smoothing = 0.0);

}  // namespace radvqa::toyvlm
