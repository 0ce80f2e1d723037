#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "nrdfer/checkpoint.hpp"
#include "nrdfer/inference.hpp"
#include "nrdfer/model.hpp"
#include "nrdfer/sampling.hpp"

namespace nrdfer {

struct AugmentConfig {
  bool crop = true;
  std::size_t crop_padding = 4;  // zero padding before a random crop back to the input size
  bool flip = true;              // horizontal, probability 0.5
  bool jitter = true;
  double jitter_strength = 0.2;  // brightness and contrast factors in [1 - s, 1 + s]
};

struct TrainConfig {
  ModelConfig model = ModelConfig::micro();
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double lr_final_ratio = 0.01;       // lr at the last epoch / initial lr
  std::optional<double> lr_decay;     // explicit per-epoch factor; overrides lr_final_ratio
  std::size_t epochs = 70;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  bool oversample = false;
  std::size_t snippet_length = 3;
  std::size_t snippet_stride = 2;
  double mu1 = 0.7;
  double mu2 = 0.05;
  bool use_sf = true;      // filter used for the per-epoch metrics
  int val_fold = -1;       // manifest fold held out for validation; -1 = none
  std::size_t workers = 1; // batch preparation threads
  bool evaluate_train = true;
  std::optional<double> stop_train_war;  // end the run once training WAR reaches this value

  void validate() const;
  /// Per-epoch decay factor.
  double decay() const;
  InferenceOptions inference() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// lr0 * decay^epoch.
double lr_at(std::size_t epoch, const TrainConfig& config);

/// Augmentation parameters drawn once per clip.
struct AugmentParams {
  std::size_t offset_y = 0;  // crop origin in the padded frame
  std::size_t offset_x = 0;
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
};

AugmentParams sample_augment(const AugmentConfig& config, std::mt19937_64& rng);
/// Applies the same parameters to every frame of the stack.
FrameStack apply_augment(const FrameStack& frames, const AugmentConfig& config, const AugmentParams& params);
FrameStack augment(const FrameStack& frames, const AugmentConfig& config, std::mt19937_64& rng);

/// Batches of dataset indices for one epoch. Without oversampling every index
/// appears once in shuffled order; with oversampling, N indices are drawn with
/// probability proportional to 1 / (size of the label's class).
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<int>& labels, std::size_t batch_size,
                                                    bool oversample, std::mt19937_64& rng);

/// Plain SGD with optional momentum and L2 weight decay.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::vector<NamedTensor<float>>& parameters, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

struct EpochReport {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_uar = 0;  // NaN when not evaluated
  double train_war = 0;
  double val_uar = 0;    // NaN without a validation split
  double val_war = 0;
};

/// Header `epoch,lr,train_loss,train_uar,train_war,val_uar,val_war`, values
/// printed with %.9g ("nan" when absent).
std::string epoch_csv_header();
std::string epoch_csv_row(const EpochReport& report);
void write_epoch_csv(const std::filesystem::path& path, const std::vector<EpochReport>& reports);

struct TrainResult {
  std::vector<EpochReport> reports;
  Checkpoint best;
  std::size_t best_epoch = 0;
};

/// Owns the model and optimizer state; one call per epoch.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  /// Mean cross-entropy over the epoch's batches.
  double train_epoch(const std::vector<RawSequence>& data, std::size_t epoch);
  /// Loss of one batch of clips (no update).
  double batch_loss(const std::vector<const Clip*>& clips);
  /// One SGD step on a batch, returning the loss before the step.
  double step(const std::vector<const Clip*>& clips, double lr);

  NrDferNet<float>& model() { return model_; }
  const TrainConfig& config() const { return config_; }

 private:
  std::vector<Clip> prepare_batch(const std::vector<RawSequence>& data, const std::vector<std::size_t>& indices,
                                  std::size_t epoch, std::size_t batch) const;

  TrainConfig config_;
  NrDferNet<float> model_;
  Sgd optimizer_;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Full run: per-epoch training, evaluation and best-checkpoint tracking
/// (best validation WAR, or best training WAR without a validation split;
/// the final epoch when neither is evaluated). Aborts with NumericError on a
/// non-finite loss.
TrainResult train(const TrainConfig& config, const std::vector<RawSequence>& train_data,
                  const std::vector<RawSequence>& val_data, const EpochCallback& on_epoch = {});

}  // namespace nrdfer
