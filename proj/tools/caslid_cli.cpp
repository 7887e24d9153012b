// caslid command line: generate | train | evaluate | stream | verify.
//
// Exit codes: 0 ok, 1 usage error, 2 verification failure, 3 runtime error.
// Every flag can also be set through the environment with the CASLID_
// prefix (e.g. CASLID_SEED=7).

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "caslid/caslid.hpp"

namespace fs = std::filesystem;
using namespace caslid;

namespace {

struct CliOptions {
  std::string config_path;
  std::string dataset_path;
  std::string checkpoint_path;
  std::string out_dir = ".";
  std::string mode_override;
  std::string lid_mode_override;
  std::string dump_z_path;
  uint64_t seed = 1234;
  int64_t precision = 32;
  int64_t threads = 1;
  int64_t utt_index = 0;
  int64_t epochs_override = -1;
};

CascadeConfig load_config(const CliOptions& opt) {
  CascadeConfig cfg;
  if (opt.config_path == "toy" || opt.config_path.empty()) {
    cfg = toy_config();
  } else if (opt.config_path == "paper-shape") {
    cfg = paper_shape_config();
  } else {
    cfg = config_from_json(Json::parse(read_file_bytes(opt.config_path)));
  }
  if (!opt.mode_override.empty()) cfg.mode = injection_mode_from_string(opt.mode_override);
  if (!opt.lid_mode_override.empty()) cfg.lid_mode = lid_mode_from_string(opt.lid_mode_override);
  if (opt.epochs_override > 0) cfg.train.epochs = opt.epochs_override;
  cfg.validate();
  return cfg;
}

std::string build_id() { return std::string("caslid ") + kVersion + " (" + __VERSION__ + ")"; }

void check_dataset_matches(const Dataset& ds, const CascadeConfig& cfg) {
  if (ds.d_feat != cfg.d_feat)
    throw ValueError(detail::strfmt("dataset d_feat %lld does not match config %lld",
                                    static_cast<long long>(ds.d_feat),
                                    static_cast<long long>(cfg.d_feat)));
  if (ds.vocab_size != cfg.vocab_size)
    throw ValueError("dataset vocab size does not match config");
  if (ds.locales != cfg.locales) throw ValueError("dataset locale list does not match config");
}

int cmd_generate(const CliOptions& opt) {
  auto cfg = load_config(opt);
  fs::create_directories(opt.out_dir);
  const auto& d = cfg.data;
  auto full = generate_dataset(cfg, d.n_train + d.n_test, opt.seed);
  const double test_frac = static_cast<double>(d.n_test) / static_cast<double>(d.n_train + d.n_test);
  auto parts = split_dataset(full, {1.0 - test_frac, test_frac}, opt.seed + 1);

  const auto train_path = (fs::path(opt.out_dir) / "train.bin").string();
  const auto test_path = (fs::path(opt.out_dir) / "test.bin").string();
  write_dataset(train_path, parts[0]);
  write_dataset(test_path, parts[1]);
  write_manifest((fs::path(opt.out_dir) / "train.jsonl").string(), parts[0]);
  write_manifest((fs::path(opt.out_dir) / "test.jsonl").string(), parts[1]);
  std::cout << "wrote " << parts[0].utterances.size() << " train / " << parts[1].utterances.size()
            << " test utterances to " << opt.out_dir << "\n";
  return 0;
}

template <typename S>
int cmd_train(const CliOptions& opt) {
  auto cfg = load_config(opt);
  const auto ds_bytes = read_file_bytes(opt.dataset_path);
  auto ds = deserialize_dataset(ds_bytes);
  check_dataset_matches(ds, cfg);
  auto utts = dataset_utterances<S>(ds);
  fs::create_directories(opt.out_dir);

  CascadeModel<S> model(cfg, opt.seed);
  auto adam = AdamState<S>::fresh(model.store().shapes());
  AdamConfig<S> opt_cfg;
  opt_cfg.lr = static_cast<S>(cfg.train.lr);
  opt_cfg.beta1 = static_cast<S>(cfg.train.beta1);
  opt_cfg.beta2 = static_cast<S>(cfg.train.beta2);
  opt_cfg.eps = static_cast<S>(cfg.train.eps);

  std::string curve = "epoch,step,loss_1st,loss_2nd,loss_lid,loss_total\n";
  Rng shuffle_rng(opt.seed ^ 0x5eed);
  int64_t global_step = 0;
  double final_total = 0;
  for (int64_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::vector<size_t> order(utts.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    double epoch_total = 0;
    int64_t steps = 0;
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.train.batch_size)) {
      const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.train.batch_size));
      std::vector<Utterance<S>> batch;
      for (size_t i = lo; i < hi; ++i) batch.push_back(utts[order[i]]);
      auto stats = model.train_step(batch, adam, opt_cfg, opt.threads);
      epoch_total += stats.total;
      ++steps;
      ++global_step;
      if (global_step % cfg.train.log_every == 0)
        curve += detail::strfmt("%lld,%lld,%.9g,%.9g,%.9g,%.9g\n",
                                static_cast<long long>(epoch), static_cast<long long>(global_step),
                                stats.first, stats.second, stats.lid, stats.total);
      final_total = stats.total;
    }
    std::cout << "epoch " << epoch << " mean loss " << (epoch_total / std::max<int64_t>(steps, 1))
              << "\n";
  }

  const auto ckpt_path = (fs::path(opt.out_dir) / "checkpoint.bin").string();
  const std::string config_json = to_json(cfg).dump(2);
  save_checkpoint(ckpt_path, model.store(), &adam, config_json, model_hash(cfg));
  write_text_file((fs::path(opt.out_dir) / "loss_curve.csv").string(), curve);

  Json manifest{{"config_hash", model_hash(cfg)},
                {"seed", opt.seed},
                {"build", build_id()},
                {"precision_bits", static_cast<int>(sizeof(S)) * 8},
                {"dataset", opt.dataset_path},
                {"dataset_hash", fnv1a64(ds_bytes)},
                {"epochs", cfg.train.epochs},
                {"final_loss", final_total},
                {"mode", to_string(cfg.mode)},
                {"lid_mode", to_string(cfg.lid_mode)},
                {"checkpoint", ckpt_path}};
  write_text_file((fs::path(opt.out_dir) / "run_manifest.json").string(), manifest.dump(2) + "\n");
  std::cout << "saved " << ckpt_path << "\n";
  return 0;
}

template <typename S>
std::pair<CascadeConfig, CascadeModel<S>> load_model(const CliOptions& opt) {
  const auto bytes = read_file_bytes(opt.checkpoint_path);
  auto info = peek_checkpoint(bytes);
  auto cfg = config_from_json(Json::parse(info.config_json));
  CascadeModel<S> model(cfg, 0);
  load_checkpoint<S>(bytes, model.store(), nullptr, model_hash(cfg));
  return {cfg, std::move(model)};
}

template <typename S>
int cmd_evaluate(const CliOptions& opt) {
  auto [cfg, model] = load_model<S>(opt);
  auto ds = read_dataset(opt.dataset_path);
  check_dataset_matches(ds, cfg);
  auto utts = dataset_utterances<S>(ds);
  fs::create_directories(opt.out_dir);

  auto res = evaluate_model(model, utts, opt.threads);
  write_text_file((fs::path(opt.out_dir) / "wer.csv").string(), wer_csv(res));
  write_text_file((fs::path(opt.out_dir) / "lid.csv").string(), lid_csv(res));
  write_text_file((fs::path(opt.out_dir) / "decodes.jsonl").string(),
                  decode_jsonl(res, utts, cfg.locales));
  if (!opt.dump_z_path.empty())
    write_text_file(opt.dump_z_path, z_trace_csv(res, utts, cfg.locales));

  std::cout << render_wer_table(res);
  if (res.has_lid) std::cout << "\n" << render_lid_table(res);
  std::cout << "\nreports written to " << opt.out_dir << "\n";
  return 0;
}

template <typename S>
int cmd_stream(const CliOptions& opt) {
  auto [cfg, model] = load_model<S>(opt);
  auto ds = read_dataset(opt.dataset_path);
  check_dataset_matches(ds, cfg);
  if (opt.utt_index < 0 || opt.utt_index >= static_cast<int64_t>(ds.utterances.size()))
    throw ValueError("utt-index out of range");
  auto utts = dataset_utterances<S>(ds);
  const auto& utt = utts[static_cast<size_t>(opt.utt_index)];

  std::cout << "utterance " << utt.id << " locale "
            << cfg.locales[static_cast<size_t>(utt.label)] << ", " << utt.features.dim(0)
            << " raw frames; R_total = " << model.r_total() << " frames\n";
  std::cout << "ref: " << detokenize(utt.tokens) << "\n\n";

  StreamSession<S> session(model, utt.label);
  auto print_events = [&](const std::string& head,
                          const typename StreamSession<S>::Events& ev) {
    for (const auto& e : ev.first)
      std::cout << head << " | 1st-pass frame " << e.t
                << (e.new_tokens.empty() ? "" : "  +" + detokenize(e.new_tokens)) << "\n";
    for (const auto& e : ev.second) {
      std::cout << head << " | 2nd-pass frame " << e.t
                << (e.new_tokens.empty() ? "" : "  +" + detokenize(e.new_tokens));
      if (!e.z.empty()) {
        const auto best = argmax_index<S>({e.z.data(), e.z.size()});
        std::cout << detail::strfmt("  z=%s(%.2f)",
                                    cfg.locales[static_cast<size_t>(best)].c_str(),
                                    static_cast<double>(e.z[static_cast<size_t>(best)]));
      }
      std::cout << "\n";
    }
  };
  for (int64_t t = 0; t < utt.features.dim(0); ++t) {
    auto ev = session.push(std::span<const S>(utt.features.vec().data() + t * cfg.d_feat,
                                              static_cast<size_t>(cfg.d_feat)));
    print_events(detail::strfmt("raw %3lld", static_cast<long long>(t)), ev);
  }
  print_events("flush  ", session.flush());

  auto out = session.output();
  auto offline = model.forward_two_pass(utt);
  std::cout << "\n1st-pass hyp: " << detokenize(out.first_tokens) << "\n";
  std::cout << "2nd-pass hyp: " << detokenize(out.second_tokens) << "\n";
  std::cout << "offline match: "
            << (out.first_tokens == offline.first_tokens &&
                        out.second_tokens == offline.second_tokens
                    ? "yes"
                    : "NO")
            << "\n";
  return 0;
}

int cmd_verify() {
  auto results = run_verification_suites();
  bool all_ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " — " << r.detail
              << detail::strfmt(" (%.2fs)", r.seconds) << "\n";
    all_ok = all_ok && r.passed;
  }
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streaming cascaded RNN-T with frame-synchronous language identification"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", opt.seed, "master random seed")->envname("CASLID_SEED");
    sub->add_option("--precision", opt.precision, "32 or 64")
        ->check(CLI::IsMember({32, 64}))
        ->envname("CASLID_PRECISION");
    sub->add_option("--threads", opt.threads, "worker threads")->envname("CASLID_THREADS");
  };

  auto* gen = app.add_subcommand("generate", "synthesize a multilingual corpus");
  gen->add_option("--config", opt.config_path, "config JSON path, or 'toy'")
      ->envname("CASLID_CONFIG");
  gen->add_option("--out-dir", opt.out_dir, "output directory")->required();
  add_common(gen);

  auto* train = app.add_subcommand("train", "train a cascade model");
  train->add_option("--config", opt.config_path, "config JSON path, or 'toy'")
      ->envname("CASLID_CONFIG");
  train->add_option("--dataset", opt.dataset_path, "training dataset (.bin)")
      ->required()
      ->envname("CASLID_DATASET");
  train->add_option("--out-dir", opt.out_dir, "output directory")->required();
  train->add_option("--mode", opt.mode_override,
                    "injection mode: none|oracle-causal|oracle-dec2|fig1a|fig1b")
      ->envname("CASLID_MODE");
  train->add_option("--lid-mode", opt.lid_mode_override, "LID feature mode: z|argmax|sg|cluster")
      ->envname("CASLID_LID_MODE");
  train->add_option("--epochs", opt.epochs_override, "override config epochs");
  add_common(train);

  auto* eval = app.add_subcommand("evaluate", "decode a test set and report WER/LID");
  eval->add_option("--checkpoint", opt.checkpoint_path, "checkpoint path")
      ->required()
      ->envname("CASLID_CHECKPOINT");
  eval->add_option("--dataset", opt.dataset_path, "test dataset (.bin)")
      ->required()
      ->envname("CASLID_DATASET");
  eval->add_option("--out-dir", opt.out_dir, "output directory")->required();
  eval->add_option("--dump-z", opt.dump_z_path, "write per-frame z probabilities to this CSV");
  add_common(eval);

  auto* stream = app.add_subcommand("stream", "frame-by-frame emission log for one utterance");
  stream->add_option("--checkpoint", opt.checkpoint_path, "checkpoint path")
      ->required()
      ->envname("CASLID_CHECKPOINT");
  stream->add_option("--dataset", opt.dataset_path, "dataset (.bin)")
      ->required()
      ->envname("CASLID_DATASET");
  stream->add_option("--utt-index", opt.utt_index, "utterance index in the dataset");
  add_common(stream);

  auto* verify = app.add_subcommand("verify", "run the oracle verification suites");
  add_common(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(opt);
    if (train->parsed())
      return opt.precision == 64 ? cmd_train<double>(opt) : cmd_train<float>(opt);
    if (eval->parsed())
      return opt.precision == 64 ? cmd_evaluate<double>(opt) : cmd_evaluate<float>(opt);
    if (stream->parsed())
      return opt.precision == 64 ? cmd_stream<double>(opt) : cmd_stream<float>(opt);
    if (verify->parsed()) return cmd_verify();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
