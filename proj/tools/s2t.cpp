// s2t: train, evaluate and serve the word -> finger-trajectory network.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.
// Every flag can also come from an S2T_<FLAG> environment variable
// (e.g. S2T_DATA, S2T_CKPT); command-line values win.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "s2t/controller.hpp"
#include "s2t/gradcheck.hpp"
#include "s2t/runtime.hpp"
#include "s2t/service.hpp"
#include "s2t/synth.hpp"
#include "s2t/training.hpp"
#include "s2t/version.hpp"

namespace fs = std::filesystem;
using namespace s2t;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

int exit_code_for(Errc c) {
  switch (c) {
    case Errc::invalid_config:
    case Errc::invalid_spec:
      return kUsage;
    case Errc::malformed_container:
    case Errc::unsupported_format:
    case Errc::io_failure:
    case Errc::bad_magic:
    case Errc::version_mismatch:
    case Errc::checksum_mismatch:
    case Errc::tensor_shape_mismatch:
    case Errc::missing_split_lists:
    case Errc::empty_dataset:
    case Errc::noise_too_short:
    case Errc::zero_signal_power:
    case Errc::checkpoint_load_failure:
    case Errc::protocol_error:
    case Errc::bind_failure:
      return kData;
    default:
      return kInternal;
  }
}

std::string env_name(const std::string& flag) {
  std::string s = "S2T_";
  for (char c : flag) s += c == '-' ? '_' : char(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Adds --name with an S2T_NAME environment fallback.
template <typename T>
CLI::Option* flag(CLI::App* app, const std::string& name, T& target, const std::string& help) {
  return app->add_option("--" + name, target, help)->envname(env_name(name));
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

LabelMap load_labels(const std::string& path) { return path.empty() ? default_label_map() : LabelMap::from_file(path); }

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

void print_eval(const EvalResult& r, Split split) {
  nlohmann::json per_word = nlohmann::json::object();
  for (const auto& [w, v] : r.per_word) per_word[w] = {{"rmse", v.first}, {"count", v.second}};
  std::cout << nlohmann::json{{"split", split_name(split)}, {"count", r.count}, {"mse", r.mse},
                              {"rmse", r.rmse}, {"per_word", per_word}}
                   .dump()
            << '\n';
}

std::vector<TimedTrajectory> read_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open events file " + path);
  std::vector<TimedTrajectory> events;
  std::string line;
  std::optional<std::int64_t> t0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto ts = j.at("ts_ms").get<std::int64_t>();
      if (!t0) t0 = ts;
      TimedTrajectory e;
      e.t_s = double(ts - *t0) / 1000.0;
      const auto& tr = j.at("trajectory");
      if (!tr.is_array() || tr.size() != 5) throw Error(Errc::malformed_container, "trajectory needs 5 numbers");
      for (std::size_t f = 0; f < 5; ++f) e.trajectory[f] = tr[f].get<float>();
      events.push_back(e);
    } catch (const nlohmann::json::exception& ex) {
      throw Error(Errc::malformed_container, path + ":" + std::to_string(line_no) + ": " + ex.what());
    } catch (const Error& ex) {
      throw Error(Errc::malformed_container, path + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return events;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2t: spoken command -> five-finger trajectory network"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string("s2t ") + kVersion + " (" + __DATE__ + ", C++" +
                                        std::to_string(__cplusplus) + ")");
  unsigned threads = default_threads();
  flag(&app, "threads", threads, "Cap on worker threads")->check(CLI::Range(1u, 1024u));

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a network and write best.ckpt, last.ckpt, report.csv");
  std::string data, labels_path, out;
  int filters = 256, epochs = 100;
  std::size_t batch = 64, subset_train = 0, subset_val = 0;
  double lr = 1e-3, dropout = 0.5;
  std::uint64_t seed = 7;
  bool augment = false, commands_only = false, quiet = false;
  flag(train_cmd, "data", data, "Dataset root (<root>/<word>/*.wav plus split lists)")->required();
  flag(train_cmd, "labels", labels_path, "Label map JSON (default: built-in map)");
  flag(train_cmd, "filters", filters, "Second conv layer filters: 32, 64, 128 or 256");
  flag(train_cmd, "epochs", epochs, "Epoch count");
  flag(train_cmd, "batch", batch, "Minibatch size");
  flag(train_cmd, "lr", lr, "Adam learning rate");
  flag(train_cmd, "dropout", dropout, "Dropout rate after the hidden dense layer");
  flag(train_cmd, "seed", seed, "Seed for init, shuffling, dropout and subsetting");
  flag(train_cmd, "out", out, "Output directory")->required();
  flag(train_cmd, "subset-train", subset_train, "Stratified subset size for the training split (0: all)");
  flag(train_cmd, "subset-val", subset_val, "Stratified subset size for the validation split (0: all)");
  train_cmd->add_flag("--augment", augment, "Mix background noise into training clips")->envname("S2T_AUGMENT");
  train_cmd->add_flag("--commands-only", commands_only, "Drop non-command words")->envname("S2T_COMMANDS_ONLY");
  train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ckpt, split_str = "val1";
  flag(eval_cmd, "ckpt", ckpt, "Checkpoint file")->required();
  flag(eval_cmd, "data", data, "Dataset root")->required();
  flag(eval_cmd, "labels", labels_path, "Label map JSON (default: built-in map)");
  flag(eval_cmd, "split", split_str, "train, val1 or val2")->check(CLI::IsMember({"train", "val1", "val2"}));

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Infer one WAV file and print the event as JSON");
  std::string wav, dump_features;
  flag(infer_cmd, "ckpt", ckpt, "Checkpoint file")->required();
  flag(infer_cmd, "wav", wav, "16 kHz mono 16-bit PCM WAV")->required();
  flag(infer_cmd, "dump-features", dump_features, "Also write the log-spectrogram as a text matrix");

  // describe
  auto* describe_cmd = app.add_subcommand("describe", "Print the layer table with parameter counts");
  flag(describe_cmd, "filters", filters, "Second conv layer filters: 32, 64, 128 or 256");
  flag(describe_cmd, "ckpt", ckpt, "Describe the network stored in a checkpoint instead");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Time feature extraction + forward pass");
  int iterations = 100;
  std::string latency_log;
  flag(bench_cmd, "ckpt", ckpt, "Checkpoint file (default: randomly initialised network)");
  flag(bench_cmd, "filters", filters, "Second conv layer filters when no checkpoint is given");
  flag(bench_cmd, "iterations", iterations, "Timed iterations (>= 30)");
  flag(bench_cmd, "seed", seed, "Seed for the random weights and clip");
  flag(bench_cmd, "latency-log", latency_log, "CSV of timestamp_ms,latency_ms per iteration");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  std::uint64_t grad_seed = 3;
  flag(grad_cmd, "seed", grad_seed, "Seed for the random probe tensors");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Drive the PI finger controllers from trajectory events");
  std::string events_path, sim_out;
  std::vector<std::string> wavs;
  double duration = 0.0, interval = 1.0;
  PIGains gains;
  PlantParams plant;
  flag(sim_cmd, "events", events_path, "JSON-lines file of trajectory events");
  flag(sim_cmd, "ckpt", ckpt, "Checkpoint for live inference of --wav files");
  sim_cmd->add_option("--wav", wavs, "WAV files inferred in order, one every --interval seconds");
  flag(sim_cmd, "interval", interval, "Seconds between live --wav events");
  flag(sim_cmd, "duration", duration, "Simulated seconds (default: last event + 2 s)");
  flag(sim_cmd, "kp", gains.kp, "Proportional gain");
  flag(sim_cmd, "ki", gains.ki, "Integral gain");
  flag(sim_cmd, "tau", plant.time_constant_s, "Actuator time constant in seconds");
  flag(sim_cmd, "dt", plant.dt_s, "Simulation step in seconds");
  flag(sim_cmd, "out", sim_out, "CSV output file (default: stdout)");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve /stream (WebSocket) and /healthz");
  service::ServerConfig server_cfg;
  flag(serve_cmd, "ckpt", ckpt, "Checkpoint file")->required();
  flag(serve_cmd, "host", server_cfg.address, "Bind address");
  flag(serve_cmd, "port", server_cfg.port, "TCP port");
  flag(serve_cmd, "period", server_cfg.period_ms, "Inference period in ms (>= 20)");

  // synth-data
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic corpus in the dataset layout");
  synth::CorpusOptions corpus;
  std::vector<std::string> words;
  flag(synth_cmd, "out", out, "Output directory")->required();
  flag(synth_cmd, "per-word", corpus.per_word, "Utterances per word");
  flag(synth_cmd, "seed", corpus.seed, "Corpus seed");
  synth_cmd->add_option("--words", words, "Words to render, comma separated (default: all)")->delimiter(',');
  flag(synth_cmd, "val-fraction", corpus.val_fraction, "Fraction listed in validation_list.txt");
  flag(synth_cmd, "test-fraction", corpus.test_fraction, "Fraction listed in testing_list.txt");

  // scan
  auto* scan_cmd = app.add_subcommand("scan", "Count utterances per word and split");
  flag(scan_cmd, "data", data, "Dataset root")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) {
      TrainConfig cfg;
      cfg.filters2 = filters;
      cfg.epochs = epochs;
      cfg.batch_size = batch;
      cfg.adam.lr = lr;
      cfg.dropout_rate = dropout;
      cfg.seed = seed;
      cfg.augment = augment;
      cfg.threads = threads;
      cfg.out_dir = out;
      cfg.validate();
      const auto labels = load_labels(labels_path);
      auto manifest = scan_dataset(data);
      if (commands_only) {
        const auto& cw = command_words();
        manifest = filter_words(manifest, std::set<std::string>(cw.begin(), cw.end()));
      }
      std::map<Split, std::size_t> quotas;
      if (subset_train) quotas[Split::train] = subset_train;
      if (subset_val) quotas[Split::val1] = subset_val;
      if (!quotas.empty()) manifest = stratified_subset(manifest, quotas, seed);
      const auto t = manifest.totals();
      if (!quiet) std::cerr << "train " << t.train << " / val1 " << t.val1 << " utterances\n";
      const auto outcome = train(cfg, manifest, labels, [&](const EpochRecord& r) {
        if (!quiet) {
          std::cerr << "epoch " << r.epoch << " train_rmse " << std::fixed << std::setprecision(4) << r.train_rmse
                    << " val_rmse " << r.val_rmse << " (" << std::setprecision(1) << r.seconds << " s)\n"
                    << std::defaultfloat;
        }
      });
      std::cout << nlohmann::json{{"best_epoch", outcome.report.best_epoch},
                                  {"best_val_rmse", outcome.report.best_val_rmse},
                                  {"best_ckpt", (fs::path(out) / "best.ckpt").string()},
                                  {"report", (fs::path(out) / "report.csv").string()}}
                       .dump()
                << '\n';
    } else if (*eval_cmd) {
      const auto split = parse_split(split_str);
      const auto net = load_checkpoint(ckpt).network;
      const auto manifest = scan_dataset(data);
      print_eval(evaluate(net, manifest, split, load_labels(labels_path), threads), split);
    } else if (*infer_cmd) {
      const auto engine = Engine::from_checkpoint(ckpt);
      const auto clip = read_wav_file(wav);
      if (!dump_features.empty()) write_feature_text(compute_feature(clip), dump_features);
      std::cout << event_to_json(engine.infer_clip(clip)).dump() << '\n';
    } else if (*describe_cmd) {
      if (!ckpt.empty()) {
        print_summary(std::cout, load_checkpoint(ckpt).network);
      } else {
        print_summary(std::cout, build_network<float>(NetworkSpec{filters, 0.5}, 0));
      }
    } else if (*bench_cmd) {
      const Engine engine = ckpt.empty() ? Engine(build_network<float>(NetworkSpec{filters, 0.5}, seed))
                                         : Engine::from_checkpoint(ckpt);
      const auto stats = bench(engine, iterations, seed);
      std::cout << "filters2   " << engine.network().spec.filters2 << '\n'
                << "iterations " << stats.samples_ms.size() << '\n'
                << std::fixed << std::setprecision(3) << "mean_ms    " << stats.mean << '\n'
                << "p50_ms     " << stats.p50 << '\n'
                << "p95_ms     " << stats.p95 << '\n'
                << "max_ms     " << stats.max << '\n';
      if (!latency_log.empty()) {
        std::ofstream log(latency_log);
        if (!log) throw Error(Errc::io_failure, "cannot write " + latency_log);
        log << "timestamp_ms,latency_ms\n";
        double t = 0.0;
        for (double v : stats.samples_ms) {
          t += v;
          log << std::fixed << std::setprecision(3) << t << ',' << v << '\n';
        }
      }
    } else if (*grad_cmd) {
      const auto results = gradcheck::run_all(grad_seed);
      for (const auto& k : results) {
        std::cout << std::left << std::setw(10) << k.kernel << " max_rel_error " << std::scientific
                  << std::setprecision(3) << k.max_rel_error << " probes " << k.probes
                  << (k.max_rel_error < gradcheck::kTolerance ? "  ok" : "  FAIL") << '\n';
      }
      return gradcheck::all_pass(results) ? kOk : kInternal;
    } else if (*sim_cmd) {
      if (events_path.empty() == wavs.empty()) {
        std::cerr << "simulate: give exactly one of --events or --wav\n";
        return kUsage;
      }
      std::vector<TimedTrajectory> events;
      if (!events_path.empty()) {
        events = read_events(events_path);
      } else {
        if (ckpt.empty()) {
          std::cerr << "simulate: --wav needs --ckpt\n";
          return kUsage;
        }
        const auto engine = Engine::from_checkpoint(ckpt);
        for (std::size_t i = 0; i < wavs.size(); ++i)
          events.push_back({double(i) * interval, engine.infer_clip(read_wav_file(wavs[i])).trajectory});
      }
      double last = 0.0;
      for (const auto& e : events) last = std::max(last, e.t_s);
      const auto samples = simulate(events, gains, plant, duration > 0.0 ? duration : last + 2.0);
      if (sim_out.empty()) {
        write_sim_csv(std::cout, samples);
      } else {
        std::ofstream os(sim_out);
        if (!os) throw Error(Errc::io_failure, "cannot write " + sim_out);
        write_sim_csv(os, samples);
      }
    } else if (*serve_cmd) {
      auto server = service::Server::from_checkpoint(ckpt, server_cfg);
      server.start();
      std::cerr << "serving ws://" << server_cfg.address << ':' << server.port() << "/stream and /healthz"
                << " (no auth, no TLS: trusted networks only)\n";
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
    } else if (*synth_cmd) {
      corpus.words = words;
      for (const auto& w : corpus.words)
        if (!synth::recipes().count(w)) throw Error(Errc::invalid_config, "no recipe for word '" + w + "'");
      const auto s = synth::write_corpus(out, corpus);
      std::cout << nlohmann::json{{"files", s.files}, {"validation", s.val}, {"testing", s.test}}.dump() << '\n';
    } else if (*scan_cmd) {
      const auto manifest = scan_dataset(data);
      const auto r = account(manifest);
      std::cout << std::left << std::setw(8) << "word" << std::right << std::setw(8) << "train" << std::setw(8)
                << "val1" << std::setw(8) << "val2" << '\n';
      for (const auto& [w, c] : r.grouped)
        std::cout << std::left << std::setw(8) << w << std::right << std::setw(8) << c.train << std::setw(8) << c.val1
                  << std::setw(8) << c.val2 << '\n';
      std::cout << std::left << std::setw(8) << "total" << std::right << std::setw(8) << r.totals.train
                << std::setw(8) << r.totals.val1 << std::setw(8) << r.totals.val2 << std::setw(8) << r.totals.total()
                << '\n'
                << "command-word train: " << r.command_train << '\n';
      if (r.mismatches.empty() && r.totals_match && r.command_train_match) {
        std::cout << "matches the reference snapshot counts\n";
      } else {
        std::cout << "differs from the reference snapshot (" << kReferenceTotals.train << ' ' << kReferenceTotals.val1
                  << ' ' << kReferenceTotals.val2 << ' ' << kReferenceTotals.total() << "; command-word train "
                  << kReferenceCommandTrain << "):\n";
        for (const auto& m : r.mismatches) std::cout << "  " << m << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error (" << errc_name(e.code()) << "): " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
