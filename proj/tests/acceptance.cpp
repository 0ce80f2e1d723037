// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 2 3`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "nrdfer/attention.hpp"
#include "nrdfer/checkpoint.hpp"
#include "nrdfer/decision.hpp"
#include "nrdfer/inference.hpp"
#include "nrdfer/metrics.hpp"
#include "nrdfer/ops.hpp"
#include "nrdfer/synthetic.hpp"
#include "nrdfer/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace nrdfer;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-3;
constexpr double kGradFloor = 1e-5;
constexpr double kGradStep = 1e-6;
constexpr double kGradBudgetSeconds = 300;
constexpr double kDctTolerance = 1e-6;
constexpr double kMu1 = 0.7;
constexpr double kMu2 = 0.05;
constexpr int kFilterCases = 10000;
constexpr int kMetricCases = 1000;
constexpr double kMetricTolerance = 1e-12;
constexpr double kN2Rate = 0.8;
constexpr double kN2BudgetSeconds = 1800;
constexpr double kN1Rate = 0.2;
constexpr double kTargetTrainWar = 0.95;
constexpr std::size_t kTrainEpochs = 50;
constexpr std::size_t kFullSeeds = 3;
constexpr std::size_t kLossSeeds = 10;
constexpr std::size_t kLossEpochs = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<RawSequence> sequences_of(std::vector<SyntheticSequence> synthetic) {
  std::vector<RawSequence> out;
  for (auto& s : synthetic) out.push_back(std::move(s.sequence));
  return out;
}

template <typename T>
Tensor<T> random_frames(const ModelConfig& c, std::size_t batch, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testing::random_tensor<T>({batch, n, 3, c.image_size, c.image_size}, rng, 0.0, 1.0, false);
}

// ---------------------------------------------------------------------------
// Shared training runs

/// Micro training setup used by the trainability, N2 and N1 experiments.
TrainConfig experiment_config(std::uint64_t seed) {
  TrainConfig c;
  c.model = ModelConfig::micro();
  c.epochs = kTrainEpochs;
  c.learning_rate = 0.005;
  c.seed = seed;
  c.use_sf = false;
  c.augment.crop = true;
  c.augment.flip = false;
  c.augment.jitter = true;
  c.stop_train_war = 0.97;
  return c;
}

SynthSpec experiment_spec(std::uint64_t seed) {
  SynthSpec s;
  s.sequences = 140;
  s.seed = seed;
  return s;
}

struct CleanRun {
  TrainResult result;
  double seconds = 0;
};

/// Clean-data runs for seeds 0..2, shared by criteria 6 and 8.
const std::vector<CleanRun>& clean_runs() {
  static const std::vector<CleanRun> runs = [] {
    const auto spec = experiment_spec(1);
    const auto data = sequences_of(generate(spec, spec.sequences));
    std::vector<CleanRun> out;
    for (std::uint64_t seed = 0; seed < kFullSeeds; ++seed) {
      const auto start = std::chrono::steady_clock::now();
      CleanRun run;
      run.result = train(experiment_config(seed), data, {});
      run.seconds = seconds_since(start);
      std::fprintf(stderr, "  clean seed %llu: %zu epochs, best train WAR %.4f, %.0fs\n",
                   static_cast<unsigned long long>(seed), run.result.reports.size(),
                   run.result.reports[run.result.best_epoch].train_war, run.seconds);
      out.push_back(std::move(run));
    }
    return out;
  }();
  return runs;
}

std::unique_ptr<NrDferNet<float>> model_from(const Checkpoint& ck) {
  auto net = std::make_unique<NrDferNet<float>>(ck.config);
  restore(*net, ck);
  return net;
}

// ---------------------------------------------------------------------------
// 1. Reverse-mode gradients against central differences

Outcome gradient_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const auto c = ModelConfig::gradient_check();
  NrDferNet<double> net(c);
  const auto frames = random_frames<double>(c, 2, c.num_frames(), 15);
  const auto set = net.parameters();
  std::vector<std::pair<std::string, Tensor<double>>> leaves;
  for (const auto& p : set.parameters) leaves.emplace_back(p.name, p.tensor);
  const auto r = testing::grad_check<double>(
      leaves, [&] { return net.forward(frames, true).logits; }, kGradStep, kGradFloor);
  const double elapsed = seconds_since(start);
  const bool pass = set.parameter_count() <= 5000 && r.checked == set.parameter_count() &&
                    r.max_rel_error < kGradTolerance && elapsed < kGradBudgetSeconds;
  return {pass, std::to_string(r.checked) + " parameters, max rel err " + fmt("%.3g", r.max_rel_error) +
                    " (tol 1e-3), " + fmt("%.1f", elapsed) + "s; worst " + r.worst};
}

// ---------------------------------------------------------------------------
// 2. Snippet windows against a brute-force enumerator

Outcome snippet_oracle() {
  std::size_t cases = 0, mismatches = 0;
  for (std::size_t t = 1; t <= 32; ++t)
    for (std::size_t l = 1; l <= t; ++l)
      for (std::size_t s = 1; s <= 8; ++s) {
        std::vector<std::pair<std::size_t, std::size_t>> expected;
        for (std::size_t start = 0; start + l <= t; ++start)
          if (start % s == 0) expected.emplace_back(start, l);
        std::vector<std::pair<std::size_t, std::size_t>> got;
        for (const auto& r : plan_snippets(t, l, s).ranges) got.emplace_back(r.start, r.length);
        ++cases;
        if (got != expected) ++mismatches;
      }
  return {mismatches == 0, std::to_string(cases) + " (T, L, S) cases, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 3. Filter decisions against a truth table

int truth_table(const std::vector<double>& seq, const std::vector<std::vector<double>>& snippets, bool& triggered) {
  auto probs = [](const std::vector<double>& z) {
    const double peak = *std::max_element(z.begin(), z.end());
    std::vector<double> p;
    double total = 0;
    for (double v : z) total += p.emplace_back(std::exp(v - peak));
    for (auto& v : p) v /= total;
    return p;
  };
  triggered = false;
  for (const auto& z : snippets) {
    const auto p = probs(z);
    if (*std::max_element(p.begin(), p.end()) > kMu1 && p[kNeutralClass] < kMu2) triggered = true;
  }
  const auto p = probs(seq);
  int best = -1;
  for (int c = 0; c < 7; ++c) {
    if (triggered && c == kNeutralClass) continue;
    if (best < 0 || p[c] > p[best]) best = c;
  }
  return best;
}

Outcome filter_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> scale(0.2, 6.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, 6), count(0, 7);
  auto logits = [&] {
    const double s = scale(rng);
    std::vector<double> z(7);
    for (auto& v : z) v = s * noise(rng);
    z[cls(rng)] += s;
    return z;
  };
  int mismatches = 0, fired = 0;
  for (int i = 0; i < kFilterCases; ++i) {
    const auto seq = logits();
    std::vector<std::vector<double>> snippets(static_cast<std::size_t>(count(rng)));
    for (auto& z : snippets) z = logits();
    bool expected_trigger = false;
    const int expected = truth_table(seq, snippets, expected_trigger);
    const auto d = apply_filter(seq, snippets, kMu1, kMu2);
    if (d.triggered != expected_trigger || d.predicted_class() != expected) ++mismatches;
    fired += expected_trigger ? 1 : 0;
  }
  return {mismatches == 0 && fired > 0 && fired < kFilterCases,
          std::to_string(kFilterCases) + " cases (" + std::to_string(fired) + " triggered), " +
              std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 4. Dynamic class token

Outcome dct_property() {
  const auto c = ModelConfig::micro();
  NrDferNet<float> net(c);
  const std::size_t b = 3, n = 7, d = c.token_dim();
  std::mt19937_64 rng(4);
  const auto tokens = testing::random_tensor<float>({b, n, d}, rng, -1, 1, false);
  double mean_err = 0;
  const auto dct = net.temporal().make_dct(tokens);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0;
      for (std::size_t f = 0; f < n; ++f) s += tokens.data()[(i * n + f) * d + k];
      mean_err = std::max(mean_err, std::abs(dct.data()[i * d + k] - s / static_cast<double>(n)));
    }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<float> shuffled;
  for (std::size_t i = 0; i < b; ++i)
    for (auto f : order) {
      const auto first = tokens.data().begin() + static_cast<std::ptrdiff_t>((i * n + f) * d);
      shuffled.insert(shuffled.end(), first, first + static_cast<std::ptrdiff_t>(d));
    }
  const auto permuted = net.temporal().make_dct(Tensor<float>({b, n, d}, shuffled));
  double perm_err = 0;
  for (std::size_t k = 0; k < b * d; ++k)
    perm_err = std::max(perm_err, static_cast<double>(std::abs(permuted.data()[k] - dct.data()[k])));

  // Spread of the class token over distinct clips, with and without the DCT.
  NoGradGuard guard;
  auto spread = [&](bool use_dct) {
    net.set_use_dct(use_dct);
    const auto tok = net.forward(random_frames<float>(c, 8, c.num_frames(), 40), false).temporal.class_token;
    double s = 0;
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t i = 1; i < 8; ++i) s = std::max(s, static_cast<double>(std::abs(tok.data()[i * d + k] - tok.data()[k])));
    return std::make_pair(s, tok);
  };
  const auto [dct_spread, dct_tok] = spread(true);
  const auto [static_spread, static_tok] = spread(false);
  const bool static_is_learned =
      std::equal(static_tok.data().begin(), static_tok.data().begin() + static_cast<std::ptrdiff_t>(d),
                 net.temporal().learned_token.data().begin());
  const bool pass = mean_err <= kDctTolerance && perm_err <= kDctTolerance && static_is_learned &&
                    static_spread == 0.0 && dct_spread > 1e-3;
  return {pass, "mean err " + fmt("%.3g", mean_err) + ", permutation err " + fmt("%.3g", perm_err) +
                    " (tol 1e-6); token spread over 8 clips: dct " + fmt("%.4g", dct_spread) + ", static " +
                    fmt("%.4g", static_spread) + (static_is_learned ? ", static == learned token" : ", static token mismatch")};
}

// ---------------------------------------------------------------------------
// 5. Default-configuration shapes

Outcome shape_suite() {
  const auto c = ModelConfig::full_scale();
  MetaInitGuard meta;
  NrDferNet<float> net(c);
  const auto out = net.forward(Tensor<float>::meta({1, 16, 3, 112, 112}), false);
  std::vector<std::string> wrong;
  auto expect = [&](const char* what, const Shape& got, const Shape& want) {
    if (got != want) wrong.emplace_back(what);
  };
  expect("stem", out.spatial.stem.shape(), {1, 16, 64, 28, 28});
  expect("dynamic", out.spatial.dynamic.shape(), {1, 15, 64, 28, 28});
  expect("static maps", out.spatial.static_maps.shape(), {1, 15, 64, 14, 14});
  expect("fused", out.spatial.fused.shape(), {1, 15, 64, 14, 14});
  expect("spatial position embedding", net.spatial().position_embedding.shape(), {196, 64});
  expect("temporal position embedding", net.temporal().position_embedding.shape(), {16, 64 * 196});
  expect("class token", out.temporal.class_token.shape(), {1, 64 * 196});
  expect("logits", out.logits.shape(), {1, 7});
  if (out.temporal.attention.size() != 4) wrong.emplace_back("temporal layers");
  for (const auto& a : out.temporal.attention) expect("attention", a.shape(), {1, 4, 16, 16});
  if (net.spatial().encoders.size() != 2) wrong.emplace_back("spatial layers");
  if (c.spatial_tokens() != 196) wrong.emplace_back("Q");
  std::string detail = "112x112, C=64, T=16 -> 15 fused maps, Q=196, 7 logits";
  for (const auto& w : wrong) detail += "; wrong " + w;
  return {wrong.empty(), detail};
}

// ---------------------------------------------------------------------------
// 6. Snippet filter under neutral-frame noise

double non_neutral_recall(const std::vector<ClipPrediction>& preds) {
  std::size_t hit = 0, all = 0;
  for (const auto& p : preds) {
    if (p.label == kNeutralClass) continue;
    ++all;
    hit += p.predicted() == p.label ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(all);
}

Outcome n2_robustness() {
  const auto start = std::chrono::steady_clock::now();
  auto spec = experiment_spec(11);
  spec.n2_rate = kN2Rate;
  const auto clips = test_clips(sequences_of(generate(spec, spec.sequences)), ModelConfig::micro());
  bool pass = true;
  std::string detail = "non-neutral recall with/without SF:";
  double train_seconds = 0;
  for (std::size_t seed = 0; seed < kFullSeeds; ++seed) {
    const auto& run = clean_runs()[seed];
    train_seconds += run.seconds;
    auto net = model_from(run.result.best);
    InferenceOptions opt;
    opt.mu1 = kMu1;
    opt.mu2 = kMu2;
    const double with = non_neutral_recall(predict(*net, clips, opt));
    opt.use_sf = false;
    const double without = non_neutral_recall(predict(*net, clips, opt));
    pass = pass && with > without;
    detail += " seed " + std::to_string(seed) + " " + fmt("%.3f", with) + "/" + fmt("%.3f", without) + ";";
  }
  const double elapsed = seconds_since(start) + train_seconds;
  pass = pass && elapsed < kN2BudgetSeconds;
  return {pass, detail + " " + fmt("%.0f", elapsed) + "s"};
}

// ---------------------------------------------------------------------------
// 7. Attention on irrelevant frames, DCT against the learned token

/// Mean rollout weight on frame tokens whose source frame is irrelevant,
/// scaled so that uniform attention is 1.
double masked_attention(NrDferNet<float>& net, const std::vector<SyntheticSequence>& data) {
  std::vector<RawSequence> raw;
  for (const auto& s : data) raw.push_back(s.sequence);
  const auto clips = test_clips(raw, net.config());
  InferenceOptions opt;
  opt.use_sf = false;
  opt.keep_attention = true;
  const auto preds = predict(net, clips, opt);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto profile = attention_rollout(preds[i].attention);
    const double scale = static_cast<double>(profile.weights.size());
    for (std::size_t j = 0; j < profile.weights.size(); ++j) {
      if (data[i].mask[clips[i].frame_indices[j]] != FrameKind::kIrrelevant) continue;
      total += profile.weights[j] * scale;
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : std::nan("");
}

Outcome n1_attention() {
  auto train_spec = experiment_spec(13);
  train_spec.n1_rate = kN1Rate;
  const auto train_data = sequences_of(generate(train_spec, train_spec.sequences));
  auto eval_spec = experiment_spec(14);
  eval_spec.n1_rate = kN1Rate;
  const auto eval_data = generate(eval_spec, eval_spec.sequences);
  bool pass = true;
  std::string detail = "masked-frame attention (uniform = 1) dct/static:";
  for (std::uint64_t seed = 0; seed < kFullSeeds; ++seed) {
    double weight[2];
    for (int use_dct = 1; use_dct >= 0; --use_dct) {
      auto config = experiment_config(seed);
      config.model.use_dct = use_dct == 1;
      auto net = model_from(train(config, train_data, {}).best);
      weight[use_dct] = masked_attention(*net, eval_data);
    }
    pass = pass && weight[1] < weight[0];
    detail += " seed " + std::to_string(seed) + " " + fmt("%.3f", weight[1]) + "/" + fmt("%.3f", weight[0]) + ";";
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 8. Trainability on clean data

Outcome trainability() {
  std::size_t reached = 0, decreasing = 0;
  std::string detail = "best train WAR:";
  std::vector<std::vector<double>> losses;
  for (std::size_t seed = 0; seed < kFullSeeds; ++seed) {
    const auto& r = clean_runs()[seed].result;
    double best = 0;
    for (const auto& e : r.reports) best = std::max(best, e.train_war);
    reached += best >= kTargetTrainWar ? 1 : 0;
    detail += " " + fmt("%.3f", best);
    if (r.reports.size() >= kLossEpochs) {
      losses.emplace_back();
      for (std::size_t e = 0; e < kLossEpochs; ++e) losses.back().push_back(r.reports[e].train_loss);
    }
  }
  const auto spec = experiment_spec(1);
  const auto data = sequences_of(generate(spec, spec.sequences));
  for (std::size_t seed = losses.size(); seed < kLossSeeds; ++seed) {
    Trainer trainer(experiment_config(seed));
    losses.emplace_back();
    for (std::size_t e = 0; e < kLossEpochs; ++e) losses.back().push_back(trainer.train_epoch(data, e));
  }
  for (const auto& l : losses) decreasing += std::is_sorted(l.rbegin(), l.rend()) &&
                                              std::adjacent_find(l.begin(), l.end()) == l.end();
  detail += "; " + std::to_string(reached) + "/3 seeds reach 0.95, loss strictly decreasing over 5 epochs in " +
            std::to_string(decreasing) + "/10 seeds";
  return {reached >= 2 && decreasing >= 9, detail};
}

// ---------------------------------------------------------------------------
// 9. Metrics against scalar loops

Outcome metrics_oracle() {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> count(0, 50);
  double worst = 0, balanced_gap = 0;
  for (int trial = 0; trial < kMetricCases; ++trial) {
    std::uint64_t m[7][7];
    ConfusionMatrix cm;
    for (int t = 0; t < 7; ++t)
      for (int p = 0; p < 7; ++p) cm.add(t, p, m[t][p] = static_cast<std::uint64_t>(count(rng)) + (t == p));
    double recall_sum = 0, hit = 0, all = 0;
    for (int t = 0; t < 7; ++t) {
      double row = 0;
      for (int p = 0; p < 7; ++p) row += static_cast<double>(m[t][p]);
      recall_sum += static_cast<double>(m[t][t]) / row;
      hit += static_cast<double>(m[t][t]);
      all += row;
    }
    worst = std::max({worst, std::abs(uar(cm) - recall_sum / 7), std::abs(war(cm) - hit / all)});

    ConfusionMatrix balanced;
    for (int t = 0; t < 7; ++t) {
      std::uint64_t left = 40;
      for (int p = 0; p < 6; ++p) {
        const auto v = std::min<std::uint64_t>(left, static_cast<std::uint64_t>(count(rng)) / 4);
        balanced.add(t, p, v);
        left -= v;
      }
      balanced.add(t, 6, left);
    }
    balanced_gap = std::max(balanced_gap, std::abs(uar(balanced) - war(balanced)));
  }
  return {worst <= kMetricTolerance && balanced_gap <= kMetricTolerance,
          std::to_string(kMetricCases) + " matrices, max oracle diff " + fmt("%.3g", worst) + ", balanced |UAR-WAR| " +
              fmt("%.3g", balanced_gap) + " (tol 1e-12)"};
}

// ---------------------------------------------------------------------------
// 10. Determinism of two full CLI runs

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool run(const std::string& command) { return std::system((command + " > /dev/null 2>&1").c_str()) == 0; }

Outcome determinism(const fs::path& work) {
  const std::string cli = NRDFER_CLI;
  const fs::path dir = work / "determinism";
  fs::create_directories(dir);
  std::ofstream(dir / "spec.json") << R"({"sequences": 28, "min_frames": 10, "max_frames": 16})";
  std::ofstream(dir / "train.json")
      << R"({"epochs": 3, "batch_size": 8, "learning_rate": 0.005, "workers": 1,
            "augment": {"crop": false, "flip": false, "jitter": false}})";
  if (!run(cli + " synth-gen --seed 5 --spec " + (dir / "spec.json").string() + " --out " + (dir / "data").string()))
    return {false, "synth-gen failed"};
  const auto manifest = (dir / "data" / "manifest.csv").string();
  for (const char* name : {"a", "b"}) {
    const auto out = dir / name;
    if (!run(cli + " train --seed 3 --config " + (dir / "train.json").string() + " --data " + manifest +
             " --out " + out.string()))
      return {false, std::string("train run ") + name + " failed"};
    if (!run(cli + " eval --checkpoint " + (out / "checkpoint.nrdf").string() + " --data " + manifest +
             " --confusion " + (out / "confusion.csv").string()))
      return {false, std::string("eval run ") + name + " failed"};
  }
  std::vector<std::string> differ;
  for (const char* file : {"epochs.csv", "checkpoint.nrdf", "confusion.csv"}) {
    const auto a = slurp(dir / "a" / file), b = slurp(dir / "b" / file);
    if (a.empty() || a != b) differ.emplace_back(file);
  }
  std::string detail = "epochs.csv, checkpoint.nrdf, confusion.csv";
  detail += differ.empty() ? " bit-identical across two runs" : "; differing:";
  for (const auto& f : differ) detail += " " + f;
  return {differ.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = fs::temp_directory_path() / ("nrdfer_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient oracle", gradient_oracle}},
      {2, {"snippet enumeration oracle", snippet_oracle}},
      {3, {"filter truth table", filter_oracle}},
      {4, {"dynamic class token", dct_property}},
      {5, {"default shapes", shape_suite}},
      {6, {"neutral-noise robustness", n2_robustness}},
      {7, {"irrelevant-frame attention", n1_attention}},
      {8, {"trainability", trainability}},
      {9, {"metrics oracle", metrics_oracle}},
      {10, {"determinism", [&] { return determinism(work); }}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("AC%d %s %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", entry.first, o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
