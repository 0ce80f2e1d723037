#include "nrdfer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>

namespace nrdfer {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  model.validate();
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (!(lr_final_ratio > 0 && lr_final_ratio <= 1)) fail("lr_final_ratio must lie in (0, 1]");
  if (lr_decay && !(*lr_decay > 0 && *lr_decay <= 1)) fail("lr_decay must lie in (0, 1]");
  if (epochs == 0) fail("epochs must be positive");
  if (momentum < 0 || momentum >= 1) fail("momentum must lie in [0, 1)");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (augment.jitter_strength < 0 || augment.jitter_strength >= 1) fail("jitter_strength must lie in [0, 1)");
  if (snippet_length < 2 || snippet_length > model.num_frames()) fail("snippet_length must lie in [2, T]");
  if (snippet_stride == 0) fail("snippet_stride must be positive");
  if (!(mu1 > 0 && mu1 < 1) || !(mu2 > 0 && mu2 < 1)) fail("mu1 and mu2 must lie in (0, 1)");
  if (workers == 0) fail("workers must be positive");
  if (stop_train_war && !evaluate_train) fail("stop_train_war needs evaluate_train");
}

double TrainConfig::decay() const {
  if (lr_decay) return *lr_decay;
  if (epochs <= 1) return 1.0;
  return std::pow(lr_final_ratio, 1.0 / static_cast<double>(epochs - 1));
}

InferenceOptions TrainConfig::inference() const {
  InferenceOptions o;
  o.use_sf = use_sf;
  o.snippet_length = snippet_length;
  o.snippet_stride = snippet_stride;
  o.mu1 = mu1;
  o.mu2 = mu2;
  return o;
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = nlohmann::json{{"crop", c.crop},     {"crop_padding", c.crop_padding},      {"flip", c.flip},
                     {"jitter", c.jitter}, {"jitter_strength", c.jitter_strength}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.crop = j.value("crop", d.crop);
  c.crop_padding = j.value("crop_padding", d.crop_padding);
  c.flip = j.value("flip", d.flip);
  c.jitter = j.value("jitter", d.jitter);
  c.jitter_strength = j.value("jitter_strength", d.jitter_strength);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"lr_final_ratio", c.lr_final_ratio},
                     {"epochs", c.epochs},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"augment", c.augment},
                     {"oversample", c.oversample},
                     {"snippet_length", c.snippet_length},
                     {"snippet_stride", c.snippet_stride},
                     {"mu1", c.mu1},
                     {"mu2", c.mu2},
                     {"use_sf", c.use_sf},
                     {"val_fold", c.val_fold},
                     {"workers", c.workers},
                     {"evaluate_train", c.evaluate_train}};
  if (c.lr_decay) j["lr_decay"] = *c.lr_decay;
  if (c.stop_train_war) j["stop_train_war"] = *c.stop_train_war;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.lr_final_ratio = j.value("lr_final_ratio", d.lr_final_ratio);
  c.lr_decay = j.contains("lr_decay") ? std::optional<double>(j.at("lr_decay").get<double>()) : std::nullopt;
  c.epochs = j.value("epochs", d.epochs);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.seed = j.value("seed", d.seed);
  c.augment = j.contains("augment") ? j.at("augment").get<AugmentConfig>() : d.augment;
  c.oversample = j.value("oversample", d.oversample);
  c.snippet_length = j.value("snippet_length", d.snippet_length);
  c.snippet_stride = j.value("snippet_stride", d.snippet_stride);
  c.mu1 = j.value("mu1", d.mu1);
  c.mu2 = j.value("mu2", d.mu2);
  c.use_sf = j.value("use_sf", d.use_sf);
  c.val_fold = j.value("val_fold", d.val_fold);
  c.workers = j.value("workers", d.workers);
  c.evaluate_train = j.value("evaluate_train", d.evaluate_train);
  c.stop_train_war = j.contains("stop_train_war") ? std::optional<double>(j.at("stop_train_war").get<double>())
                                                  : std::nullopt;
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  return config.learning_rate * std::pow(config.decay(), static_cast<double>(epoch));
}

AugmentParams sample_augment(const AugmentConfig& config, std::mt19937_64& rng) {
  AugmentParams p;
  if (config.crop && config.crop_padding > 0) {
    std::uniform_int_distribution<std::size_t> offset(0, 2 * config.crop_padding);
    p.offset_y = offset(rng);
    p.offset_x = offset(rng);
  } else {
    p.offset_y = p.offset_x = config.crop_padding;
  }
  if (config.flip) p.flip = std::bernoulli_distribution(0.5)(rng);
  if (config.jitter && config.jitter_strength > 0) {
    std::uniform_real_distribution<double> factor(1.0 - config.jitter_strength, 1.0 + config.jitter_strength);
    p.brightness = factor(rng);
    p.contrast = factor(rng);
  }
  return p;
}

FrameStack apply_augment(const FrameStack& frames, const AugmentConfig& config, const AugmentParams& params) {
  FrameStack out = frames;
  const std::size_t h = frames.height, w = frames.width, plane = h * w;
  const bool crop = config.crop && config.crop_padding > 0;
  const bool jitter = config.jitter && config.jitter_strength > 0;
  if (!crop && !params.flip && !jitter) return out;
  const auto pad = static_cast<std::ptrdiff_t>(crop ? config.crop_padding : 0);
  const auto oy = crop ? static_cast<std::ptrdiff_t>(params.offset_y) - pad : 0;
  const auto ox = crop ? static_cast<std::ptrdiff_t>(params.offset_x) - pad : 0;
  double mean = 0;
  if (jitter) {
    for (float v : frames.pixels) mean += v;
    mean /= static_cast<double>(std::max<std::size_t>(1, frames.pixels.size()));
  }
  for (std::size_t f = 0; f < frames.count; ++f) {
    const auto src = frames.frame(f);
    auto dst = out.frame(f);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t xo = params.flip ? w - 1 - x : x;
          const auto sy = static_cast<std::ptrdiff_t>(y) + oy, sx = static_cast<std::ptrdiff_t>(xo) + ox;
          float v = 0.0f;
          if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx < static_cast<std::ptrdiff_t>(w)) {
            v = src[c * plane + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
          }
          if (jitter) {
            const double b = v * params.brightness;
            v = static_cast<float>(std::clamp((b - mean) * params.contrast + mean, 0.0, 1.0));
          }
          dst[c * plane + y * w + x] = v;
        }
      }
    }
  }
  return out;
}

FrameStack augment(const FrameStack& frames, const AugmentConfig& config, std::mt19937_64& rng) {
  return apply_augment(frames, config, sample_augment(config, rng));
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<int>& labels, std::size_t batch_size,
                                                    bool oversample, std::mt19937_64& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(labels.size());
  if (oversample) {
    std::vector<std::size_t> counts(kNumClasses, 0);
    for (int l : labels) counts.at(static_cast<std::size_t>(l))++;
    std::vector<double> weights;
    for (int l : labels) weights.push_back(1.0 / static_cast<double>(counts[static_cast<std::size_t>(l)]));
    std::discrete_distribution<std::size_t> draw(weights.begin(), weights.end());
    for (auto& i : order) i = draw(rng);
  } else {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void Sgd::step(std::vector<NamedTensor<float>>& parameters, double lr) {
  if (velocity_.size() != parameters.size()) {
    velocity_.assign(parameters.size(), {});
    for (std::size_t i = 0; i < parameters.size(); ++i) velocity_[i].assign(parameters[i].tensor.numel(), 0.0f);
  }
  const auto rate = static_cast<float>(lr), mu = static_cast<float>(momentum_), wd = static_cast<float>(weight_decay_);
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    auto& t = parameters[i].tensor;
    if (!t.has_grad()) continue;
    auto values = t.mutable_data();
    const auto grad = t.grad();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const float g = grad[k] + wd * values[k];
      v[k] = mu * v[k] + g;
      values[k] -= rate * v[k];
    }
  }
}

std::string epoch_csv_header() { return "epoch,lr,train_loss,train_uar,train_war,val_uar,val_war"; }

std::string epoch_csv_row(const EpochReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch, r.lr, r.train_loss, r.train_uar,
                r.train_war, r.val_uar, r.val_war);
  return buf;
}

void write_epoch_csv(const std::filesystem::path& path, const std::vector<EpochReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << epoch_csv_header() << '\n';
  for (const auto& r : reports) out << epoch_csv_row(r) << '\n';
}

namespace {

ModelConfig seeded(ModelConfig model, std::uint64_t seed) {
  model.seed = seed;
  return model;
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

std::vector<const Clip*> pointers(const std::vector<Clip>& clips) {
  std::vector<const Clip*> out;
  for (const auto& c : clips) out.push_back(&c);
  return out;
}

}  // namespace

Trainer::Trainer(const TrainConfig& config)
    : config_((config.validate(), config)),
      model_(seeded(config.model, config.seed)),
      optimizer_(config.momentum, config.weight_decay) {}

std::vector<Clip> Trainer::prepare_batch(const std::vector<RawSequence>& data, const std::vector<std::size_t>& indices,
                                         std::size_t epoch, std::size_t batch) const {
  auto rng = substream(config_.seed, epoch, batch);
  std::vector<Clip> clips;
  clips.reserve(indices.size());
  for (auto i : indices) {
    Clip c = sample_train(data[i], config_.model.segments, config_.model.frames_per_segment, rng);
    c.frames = augment(c.frames, config_.augment, rng);
    clips.push_back(std::move(c));
  }
  return clips;
}

double Trainer::batch_loss(const std::vector<const Clip*>& clips) {
  NoGradGuard no_grad;
  std::vector<int> labels;
  for (const Clip* c : clips) labels.push_back(c->label);
  return cross_entropy(model_.forward(clips_to_tensor<float>(clips), false).logits, labels).item();
}

double Trainer::step(const std::vector<const Clip*>& clips, double lr) {
  std::vector<int> labels;
  for (const Clip* c : clips) labels.push_back(c->label);
  auto params = model_.parameters().parameters;
  for (auto& p : params) p.tensor.zero_grad();
  const Tensor<float> loss = cross_entropy(model_.forward(clips_to_tensor<float>(clips), true).logits, labels);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  backward(loss);
  {
    NoGradGuard no_grad;
    optimizer_.step(params, lr);
  }
  return value;
}

double Trainer::train_epoch(const std::vector<RawSequence>& data, std::size_t epoch) {
  if (data.empty()) throw std::invalid_argument("empty training set");
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  auto order_rng = substream(config_.seed, epoch, std::numeric_limits<std::uint32_t>::max());
  const auto batches = epoch_batches(labels, config_.batch_size, config_.oversample, order_rng);
  const double lr = lr_at(epoch, config_);

  // Batch preparation only reads shared state and uses per-batch generators,
  // so prefetching with several workers gives the same batches as one.
  std::deque<std::future<std::vector<Clip>>> queue;
  std::size_t next = 0;
  auto enqueue = [&]() {
    const std::size_t b = next++;
    const auto& idx = batches[b];
    if (config_.workers > 1) {
      queue.push_back(std::async(std::launch::async, [this, &data, &idx, epoch, b] {
        return prepare_batch(data, idx, epoch, b);
      }));
    } else {
      std::promise<std::vector<Clip>> ready;
      ready.set_value(prepare_batch(data, idx, epoch, b));
      queue.push_back(ready.get_future());
    }
  };
  double total = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    while (next < batches.size() && queue.size() < config_.workers) enqueue();
    std::vector<Clip> clips = queue.front().get();
    queue.pop_front();
    try {
      total += step(pointers(clips), lr) * static_cast<double>(clips.size());
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
    }
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(const TrainConfig& config, const std::vector<RawSequence>& train_data,
                  const std::vector<RawSequence>& val_data, const EpochCallback& on_epoch) {
  Trainer trainer(config);
  const auto options = config.inference();
  const auto train_eval = config.evaluate_train ? test_clips(train_data, config.model) : std::vector<Clip>{};
  const auto val_eval = test_clips(val_data, config.model);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  TrainResult result;
  double best_score = -1;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochReport r;
    r.epoch = epoch;
    r.lr = lr_at(epoch, config);
    r.train_loss = trainer.train_epoch(train_data, epoch);
    r.train_uar = r.train_war = r.val_uar = r.val_war = nan;
    if (!train_eval.empty()) {
      const auto cm = confusion(predict(trainer.model(), train_eval, options));
      r.train_uar = uar(cm);
      r.train_war = war(cm);
    }
    if (!val_eval.empty()) {
      const auto cm = confusion(predict(trainer.model(), val_eval, options));
      r.val_uar = uar(cm);
      r.val_war = war(cm);
    }
    const double score = !val_eval.empty() ? r.val_war : (!train_eval.empty() ? r.train_war : 0.0);
    // Ties favour the later epoch only when nothing is evaluated.
    if (score > best_score || (val_eval.empty() && train_eval.empty())) {
      best_score = score;
      result.best = capture(trainer.model());
      result.best_epoch = epoch;
    }
    result.reports.push_back(r);
    if (on_epoch) on_epoch(r);
    if (config.stop_train_war && r.train_war >= *config.stop_train_war) break;
  }
  return result;
}

}  // namespace nrdfer
