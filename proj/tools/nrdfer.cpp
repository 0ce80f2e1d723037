// nrdfer command-line tool: synthetic data, training, evaluation and diagnostics.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nrdfer/attention.hpp"
#include "nrdfer/checkpoint.hpp"
#include "nrdfer/dataset.hpp"
#include "nrdfer/inference.hpp"
#include "nrdfer/synthetic.hpp"
#include "nrdfer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumeric = 4 };

struct CliError : std::runtime_error {
  CliError(int code, const std::string& kind, const std::string& message)
      : std::runtime_error(message), code(code), kind(kind) {}
  int code;
  std::string kind;
};

int report_error(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CliError(kData, "io_error", "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CliError(kData, "config_error", path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError(kData, "io_error", "cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct Options {
  std::optional<std::uint64_t> seed;

  // synth-gen
  std::string spec_path;
  std::string out;

  // train
  std::string config_path;
  std::string data;
  std::optional<std::size_t> epochs;

  // eval / attn / filter-trace
  std::string checkpoint;
  bool no_sf = false;
  bool no_dct = false;
  bool no_dsf = false;
  std::string confusion_path = "confusion.csv";
  std::optional<int> fold;
  std::string clip_dir;
  std::optional<std::size_t> snippet_length;
  std::optional<std::size_t> snippet_stride;
  std::optional<double> mu1;
  std::optional<double> mu2;
};

int cmd_synth_gen(const Options& o) {
  nrdfer::SynthSpec spec = read_json_file(o.spec_path).get<nrdfer::SynthSpec>();
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  const auto sequences = nrdfer::generate(spec, spec.sequences);
  nrdfer::write_synthetic_dataset(o.out, sequences);
  write_text(fs::path(o.out) / "synth_spec.json", json(spec).dump(2) + "\n");
  std::cout << json{{"sequences", sequences.size()}, {"manifest", (fs::path(o.out) / "manifest.csv").string()}}.dump()
            << '\n';
  return kOk;
}

int cmd_train(const Options& o) {
  nrdfer::TrainConfig config = read_json_file(o.config_path).get<nrdfer::TrainConfig>();
  if (o.seed) config.seed = *o.seed;
  if (o.epochs) config.epochs = *o.epochs;
  config.validate();
  nrdfer::FoldFilter train_filter, val_filter;
  if (config.val_fold >= 0) {
    train_filter.exclude = config.val_fold;
    val_filter.only = config.val_fold;
  }
  const auto train_data = nrdfer::load_dataset(o.data, train_filter);
  const auto val_data = config.val_fold >= 0 ? nrdfer::load_dataset(o.data, val_filter) : std::vector<nrdfer::RawSequence>{};
  if (train_data.empty()) throw CliError(kData, "data_error", "training split is empty");

  const fs::path out(o.out);
  fs::create_directories(out);
  write_text(out / "train_config.json", json(config).dump(2) + "\n");
  std::ofstream csv(out / "epochs.csv", std::ios::binary);
  if (!csv) throw CliError(kData, "io_error", "cannot write " + (out / "epochs.csv").string());
  csv << nrdfer::epoch_csv_header() << '\n';
  std::cout << nrdfer::epoch_csv_header() << '\n';
  const auto result = nrdfer::train(config, train_data, val_data, [&](const nrdfer::EpochReport& r) {
    const auto row = nrdfer::epoch_csv_row(r);
    csv << row << '\n' << std::flush;
    std::cout << row << '\n' << std::flush;
  });
  nrdfer::write_checkpoint(out / "checkpoint.nrdf", result.best);
  std::cerr << json{{"checkpoint", (out / "checkpoint.nrdf").string()}, {"best_epoch", result.best_epoch}}.dump()
            << '\n';
  return kOk;
}

std::unique_ptr<nrdfer::NrDferNet<float>> load_for_eval(const Options& o) {
  auto model = nrdfer::load_model(o.checkpoint);
  if (o.no_dct) model->set_use_dct(false);
  if (o.no_dsf) model->set_use_dsf(false);
  return model;
}

nrdfer::InferenceOptions inference_options(const Options& o) {
  nrdfer::InferenceOptions opt;
  opt.use_sf = !o.no_sf;
  if (o.snippet_length) opt.snippet_length = *o.snippet_length;
  if (o.snippet_stride) opt.snippet_stride = *o.snippet_stride;
  if (o.mu1) opt.mu1 = *o.mu1;
  if (o.mu2) opt.mu2 = *o.mu2;
  return opt;
}

std::vector<nrdfer::RawSequence> load_eval_data(const Options& o) {
  nrdfer::FoldFilter filter;
  filter.only = o.fold;
  auto data = nrdfer::load_dataset(o.data, filter);
  if (data.empty()) throw CliError(kData, "data_error", "no clips selected from " + o.data);
  return data;
}

int cmd_eval(const Options& o) {
  auto model = load_for_eval(o);
  const auto data = load_eval_data(o);
  const auto predictions = nrdfer::predict(*model, nrdfer::test_clips(data, model->config()), inference_options(o));
  const auto cm = nrdfer::confusion(predictions);
  nrdfer::write_confusion_csv(o.confusion_path, cm);
  std::size_t triggered = 0;
  for (const auto& p : predictions) triggered += p.decision.triggered ? 1 : 0;
  std::cout << json{{"clips", cm.total()},
                    {"uar", nrdfer::uar(cm)},
                    {"war", nrdfer::war(cm)},
                    {"triggered", triggered},
                    {"sf", !o.no_sf},
                    {"dct", model->config().use_dct},
                    {"dsf", model->config().use_dsf},
                    {"confusion", o.confusion_path}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_attn(const Options& o) {
  auto model = load_for_eval(o);
  nrdfer::RawSequence seq;
  seq.frames = nrdfer::read_frame_dir(o.clip_dir);
  seq.source_id = fs::path(o.clip_dir).filename().string();
  if (seq.source_id.empty()) seq.source_id = fs::path(o.clip_dir).parent_path().filename().string();
  nrdfer::InferenceOptions opt = inference_options(o);
  opt.keep_attention = true;
  const auto clips = nrdfer::test_clips({seq}, model->config());
  const auto prediction = nrdfer::predict(*model, clips, opt).front();
  auto profile = nrdfer::attention_rollout(prediction.attention);
  profile.clip_id = seq.source_id;
  profile.model_tag = model->config().use_dct ? "dct" : "learned_token";
  const auto& idx = clips.front().frame_indices;
  profile.source_frames.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(profile.weights.size()));
  fs::path base(o.out);
  if (base.extension() == ".csv" || base.extension() == ".svg") base.replace_extension();
  const fs::path csv_path = fs::path(base).concat(".csv"), svg_path = fs::path(base).concat(".svg");
  write_text(csv_path, nrdfer::attention_csv({profile}));
  write_text(svg_path, nrdfer::attention_svg(profile));
  std::cout << json{{"csv", csv_path.string()},
                    {"svg", svg_path.string()},
                    {"predicted", nrdfer::kClassNames[prediction.predicted()]},
                    {"degenerate", profile.degenerate}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_filter_trace(const Options& o) {
  auto model = load_for_eval(o);
  const auto data = load_eval_data(o);
  nrdfer::InferenceOptions opt = inference_options(o);
  opt.use_sf = true;
  const auto predictions = nrdfer::predict(*model, nrdfer::test_clips(data, model->config()), opt);
  std::ostringstream out;
  out << "clip_id,label,seq_class,triggered,trigger_index,snippet_p_max,snippet_p_neutral,final_class\n";
  for (const auto& p : predictions) {
    std::string pmax, pnu;
    for (std::size_t i = 0; i < p.decision.snippets.size(); ++i) {
      if (i) {
        pmax += ';';
        pnu += ';';
      }
      pmax += fmt(p.decision.snippets[i].p_max);
      pnu += fmt(p.decision.snippets[i].p_neutral);
    }
    out << p.clip_id << ',' << p.label << ',' << p.decision.sequence_class() << ',' << (p.decision.triggered ? 1 : 0)
        << ',' << (p.decision.trigger_index ? std::to_string(*p.decision.trigger_index) : std::string()) << ','
        << pmax << ',' << pnu << ',' << p.predicted() << '\n';
  }
  if (o.out.empty()) {
    std::cout << out.str();
  } else {
    write_text(o.out, out.str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NR-DFERNet toolkit"};
  app.require_subcommand(1);
  Options o;
  app.fallthrough();
  app.add_option("--seed", o.seed, "Seed overriding the config or spec seed");

  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic dataset");
  synth->add_option("--spec", o.spec_path, "SynthSpec JSON")->required();
  synth->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", o.config_path, "TrainConfig JSON")->required();
  train->add_option("--data", o.data, "Dataset manifest CSV")->required();
  train->add_option("--out", o.out, "Output directory")->required();
  train->add_option("--epochs", o.epochs, "Override the configured epoch count");

  auto add_model_flags = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    cmd->add_flag("--no-dct", o.no_dct, "Replace the dynamic class token by the learned token");
    cmd->add_flag("--no-dsf", o.no_dsf, "Zero the dynamic branch (static features only)");
    cmd->add_option("--snippet-length", o.snippet_length, "Snippet width L");
    cmd->add_option("--snippet-stride", o.snippet_stride, "Snippet stride S");
    cmd->add_option("--mu1", o.mu1, "Filter confidence threshold");
    cmd->add_option("--mu2", o.mu2, "Filter neutral threshold");
  };

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_model_flags(eval);
  eval->add_option("--data", o.data, "Dataset manifest CSV")->required();
  eval->add_flag("--no-sf", o.no_sf, "Disable the snippet-based filter");
  eval->add_option("--confusion", o.confusion_path, "Confusion matrix CSV path")->capture_default_str();
  eval->add_option("--fold", o.fold, "Evaluate only this manifest fold");

  auto* attn = app.add_subcommand("attn", "Export class-token attention over frames");
  add_model_flags(attn);
  attn->add_option("--clip", o.clip_dir, "Directory of PPM frames")->required();
  attn->add_option("--out", o.out, "Output path; .csv and .svg are written")->required();

  auto* trace = app.add_subcommand("filter-trace", "Dump per-clip snippet filter diagnostics");
  add_model_flags(trace);
  trace->add_option("--data", o.data, "Dataset manifest CSV")->required();
  trace->add_option("--fold", o.fold, "Only this manifest fold");
  trace->add_option("--out", o.out, "CSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kUsage, "usage_error", e.what());
  }

  try {
    if (synth->parsed()) return cmd_synth_gen(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (attn->parsed()) return cmd_attn(o);
    if (trace->parsed()) return cmd_filter_trace(o);
    return report_error(kUsage, "usage_error", "no subcommand");
  } catch (const CliError& e) {
    return report_error(e.code, e.kind, e.what());
  } catch (const nrdfer::DataError& e) {
    return report_error(kData, "data_error", e.what());
  } catch (const nrdfer::CheckpointError& e) {
    return report_error(kData, "checkpoint_error", e.what());
  } catch (const nrdfer::NumericError& e) {
    return report_error(kNumeric, "numeric_error", e.what());
  } catch (const json::exception& e) {
    return report_error(kData, "config_error", e.what());
  } catch (const std::invalid_argument& e) {
    return report_error(kUsage, "invalid_argument", e.what());
  } catch (const std::exception& e) {
    return report_error(kFailure, "error", e.what());
  }
}
