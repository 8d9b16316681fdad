// dpmamba command-line tool.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>

#include <CLI11.hpp>

#include "dpmamba/bench.hpp"
#include "dpmamba/checkpoint.hpp"
#include "dpmamba/corpus.hpp"
#include "dpmamba/gradcheck.hpp"
#include "dpmamba/model.hpp"
#include "dpmamba/parallel.hpp"
#include "dpmamba/training.hpp"
#include "dpmamba/wav.hpp"

namespace fs = std::filesystem;
using namespace dpm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ModelConfig resolve_config(const std::string& config_path, const std::string& preset_name) {
  if (!config_path.empty() && !preset_name.empty()) throw UsageError("give either --config or --preset, not both");
  if (!config_path.empty()) return load_config(config_path);
  if (!preset_name.empty()) return preset(preset_name);
  throw UsageError("one of --config or --preset is required");
}

std::vector<train::Mixture> draw_mixtures(const train::SourcePool& pool, const train::MixSpec& spec, std::size_t n) {
  train::DynamicMixer mixer(pool, spec);
  std::vector<train::Mixture> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(mixer.next());
  return out;
}

// --- separate ---------------------------------------------------------------

struct SeparateArgs {
  std::string ckpt;
  std::vector<std::string> inputs;
  std::string out_dir;
};

int cmd_separate(const SeparateArgs& a) {
  const SeparationModel model = load_model(a.ckpt);
  fs::create_directories(a.out_dir);
  const bool many = a.inputs.size() > 1;
  std::mutex err_mutex;
  std::exception_ptr failure;
  // One worker per file; the model is only read.
  parallel_for(a.inputs.size(), [&](std::size_t i) {
    try {
      NoGradGuard no_grad;
      const WavBuffer in = read_wav(a.inputs[i]);
      if (in.sample_rate != kDefaultSampleRate) {
        throw FormatError(a.inputs[i] + ": sample rate " + std::to_string(in.sample_rate) + " Hz, expected " +
                          std::to_string(kDefaultSampleRate) + " (resampling is not supported)");
      }
      const auto est = model.separate(Tensor::from({1, in.samples.size()}, in.samples));
      const fs::path dir = many ? fs::path(a.out_dir) / fs::path(a.inputs[i]).stem() : fs::path(a.out_dir);
      fs::create_directories(dir);
      for (std::size_t s = 0; s < est.size(); ++s) {
        const auto d = est[s].data();
        write_wav(dir / ("s" + std::to_string(s + 1) + ".wav"), {in.sample_rate, {d.begin(), d.end()}});
      }
    } catch (...) {
      std::lock_guard lock(err_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  return kExitOk;
}

// --- train-toy --------------------------------------------------------------

struct TrainArgs {
  std::string config, preset, corpus, out, log;
  std::uint64_t seed = 0;
  std::size_t steps = 2000, warmup = 200, horizon = 0, batch = 1, segment = 4000;
  std::size_t fixed = 0, val = 0, eval_every = 0;
  double peak_lr = 1.5e-4;
  double stop_at = std::numeric_limits<double>::infinity();
};

int cmd_train(const TrainArgs& a) {
  const ModelConfig cfg = resolve_config(a.config, a.preset);
  const train::SourcePool pool = load_source_pool(a.corpus);
  SeparationModel model(cfg, a.seed);

  train::MixSpec spec;
  spec.segment_length = a.segment;
  spec.seed = a.seed;
  train::TrainOptions opt;
  opt.schedule.peak_lr = a.peak_lr;
  opt.schedule.warmup_steps = a.warmup;
  // One warmup is one epoch and the full schedule spans 100 epochs.
  opt.schedule.total_steps = a.horizon ? a.horizon : (a.warmup ? 100 * a.warmup : a.steps);
  opt.max_steps = a.steps;
  opt.schedule.batch_size = a.batch;
  opt.eval_every = a.eval_every;
  opt.stop_at_si_snri = a.stop_at;
  if (a.fixed) opt.fixed_set = draw_mixtures(pool, spec, a.fixed);
  if (a.val) {
    train::MixSpec vspec = spec;
    vspec.seed = a.seed + 0x5151;
    opt.validation = a.fixed && a.val <= a.fixed ? std::vector<train::Mixture>(opt.fixed_set.begin(),
                                                                             opt.fixed_set.begin() + a.val)
                                                 : draw_mixtures(pool, vspec, a.val);
  }
  train::DynamicMixer mixer(pool, spec);
  const auto log = train::train_toy(model, a.fixed ? nullptr : &mixer, opt);

  save_checkpoint(a.out, model);
  const std::string log_path = a.log.empty() ? a.out + ".csv" : a.log;
  std::ofstream csv(log_path);
  if (!csv) throw std::runtime_error("cannot write " + log_path);
  train::write_log_csv(csv, log);
  const auto& last = log.back();
  std::cout << "steps " << log.size() << "  final loss " << last.loss;
  if (!std::isnan(last.si_snri_on_val)) std::cout << "  val SI-SNRi " << last.si_snri_on_val << " dB";
  std::cout << "\ncheckpoint " << a.out << "\nlog " << log_path << '\n';
  return kExitOk;
}

// --- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  const auto results = check::run_suite(module, seed);
  bool ok = true;
  for (const auto& r : results) {
    check::print_result(std::cout, r);
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitNumerical;
}

// --- params -----------------------------------------------------------------

int cmd_params(const std::string& config, const std::string& preset_name, double expect, double tol) {
  const ModelConfig cfg = resolve_config(config, preset_name);
  const std::size_t n = count_parameters(cfg);
  std::cout << n << '\n';
  if (expect > 0.0) {
    const double rel = (static_cast<double>(n) - expect) / expect;
    std::cerr << std::fixed << std::setprecision(2) << "expected " << expect << ", relative difference "
              << 100.0 * rel << "%\n";
    if (std::abs(rel) > tol) return kExitNumerical;
  }
  return kExitOk;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& manifest, std::size_t count, std::size_t segment,
             std::uint64_t seed) {
  const SeparationModel model = load_model(ckpt);
  const train::SourcePool pool = load_source_pool(manifest);
  train::MixSpec spec;
  spec.segment_length = segment;
  spec.seed = seed;
  const auto set = draw_mixtures(pool, spec, count);
  const auto r = train::evaluate(model, set);
  std::cout << std::fixed << std::setprecision(3) << "mixtures " << count << "\nSI-SNRi " << r.si_snri
            << " dB\nSDRi " << r.sdri << " dB\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPMamba speech separation: training, inference and verification"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();

  SeparateArgs sep;
  auto* c_sep = app.add_subcommand("separate", "Split a two-speaker mixture into s1.wav and s2.wav");
  c_sep->add_option("--ckpt", sep.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_sep->add_option("--in", sep.inputs, "Input WAV file(s), 16-bit mono")->required()->check(CLI::ExistingFile);
  c_sep->add_option("--out", sep.out_dir, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train-toy", "Train a small model on a WAV corpus");
  c_train->add_option("--config", tr.config, "Model config file");
  c_train->add_option("--preset", tr.preset, "Model preset (xs, s, m, l, tiny)");
  c_train->add_option("--corpus", tr.corpus, "Corpus manifest")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Output checkpoint")->required();
  c_train->add_option("--log", tr.log, "Training log CSV (default: <out>.csv)");
  c_train->add_option("--steps", tr.steps, "Total optimizer steps")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--warmup", tr.warmup, "Warmup steps")->capture_default_str();
  c_train->add_option("--horizon", tr.horizon,
                      "Step at which the cosine decay reaches its floor (default: 100 x warmup)");
  c_train->add_option("--peak-lr", tr.peak_lr, "Peak learning rate")->capture_default_str();
  c_train->add_option("--batch", tr.batch, "Mixtures per step")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--segment", tr.segment, "Samples per training mixture")->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--fixed", tr.fixed, "Train on this many fixed mixtures instead of dynamic mixing");
  c_train->add_option("--val", tr.val, "Validation mixtures");
  c_train->add_option("--eval-every", tr.eval_every, "Validate every N steps (0 = never)");
  c_train->add_option("--stop-at", tr.stop_at, "Stop once validation SI-SNRi exceeds this (dB)");
  c_train->add_option("--seed", seed, "Random seed");

  std::string gc_module = "all";
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c_gc->add_option("--module", gc_module, "all, numerics, ssm_core, mamba_block, dual_path, separation_model, training")
      ->capture_default_str();
  c_gc->add_option("--seed", seed, "Random seed");

  std::string p_config, p_preset;
  double p_expect = 0.0, p_tol = 0.02;
  auto* c_params = app.add_subcommand("params", "Print the trainable parameter count of a configuration");
  c_params->add_option("--config", p_config, "Model config file");
  c_params->add_option("--preset", p_preset, "Model preset");
  c_params->add_option("--expect", p_expect, "Expected count; exit 4 when outside --tol");
  c_params->add_option("--tol", p_tol, "Relative tolerance for --expect")->capture_default_str()->check(CLI::NonNegativeNumber);

  std::string b_impl = "seq";
  std::vector<std::size_t> b_L{1000};
  std::size_t b_E = 64, b_H = 16;
  bool b_header = true;
  auto* c_bench = app.add_subcommand("bench-scan", "Time one selective scan and report peak heap use as CSV");
  c_bench->add_option("--impl", b_impl, "seq, par or oracle")
      ->check(CLI::IsMember({"seq", "par", "oracle"}))
      ->capture_default_str();
  c_bench->add_option("--L", b_L, "Sequence length(s)")->capture_default_str();
  c_bench->add_option("--E", b_E, "Channels")->capture_default_str();
  c_bench->add_option("--H", b_H, "State size")->capture_default_str();
  c_bench->add_flag("!--no-header", b_header, "Omit the CSV header");
  c_bench->add_option("--seed", seed, "Random seed");

  std::string e_ckpt, e_manifest;
  std::size_t e_count = 10, e_segment = 8000;
  auto* c_eval = app.add_subcommand("eval", "Mean SI-SNRi and SDRi on mixtures drawn from a manifest");
  c_eval->add_option("--ckpt", e_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--manifest", e_manifest, "Source manifest")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--mixtures", e_count, "Number of mixtures")->capture_default_str()->check(CLI::PositiveNumber);
  c_eval->add_option("--segment", e_segment, "Samples per mixture")->capture_default_str()->check(CLI::PositiveNumber);
  c_eval->add_option("--seed", seed, "Random seed");

  CorpusSpec corpus;
  std::string corpus_dir;
  auto* c_corpus = app.add_subcommand("synth-corpus", "Write a synthetic multi-speaker WAV corpus and manifest");
  c_corpus->add_option("--out", corpus_dir, "Output directory")->required();
  c_corpus->add_option("--speakers", corpus.speakers, "Speakers")->capture_default_str();
  c_corpus->add_option("--utterances", corpus.utterances, "Utterances per speaker")->capture_default_str();
  c_corpus->add_option("--seconds", corpus.seconds, "Utterance length in seconds")->capture_default_str();
  c_corpus->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_sep->parsed()) return cmd_separate(sep);
    if (c_train->parsed()) {
      tr.seed = seed;
      return cmd_train(tr);
    }
    if (c_gc->parsed()) return cmd_gradcheck(gc_module, seed);
    if (c_params->parsed()) return cmd_params(p_config, p_preset, p_expect, p_tol);
    if (c_bench->parsed()) {
      if (b_header) write_bench_header(std::cout);
      for (auto L : b_L) write_bench_row(std::cout, bench_scan(b_impl, L, b_E, b_H, seed));
      return kExitOk;
    }
    if (c_eval->parsed()) return cmd_eval(e_ckpt, e_manifest, e_count, e_segment, seed);
    if (c_corpus->parsed()) {
      corpus.seed = seed;
      std::cout << synth_corpus(corpus_dir, corpus).string() << '\n';
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitData;
  } catch (const train::MetricError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
