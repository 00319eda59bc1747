#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsr/checkpoint.hpp"
#include "hsr/corpus.hpp"
#include "hsr/metrics.hpp"
#include "hsr/model.hpp"
#include "hsr/synthgen.hpp"
#include "hsr/training.hpp"

namespace fs = std::filesystem;
using namespace hsr;

namespace {

// exit codes: 0 success, 1 validation/usage error, 2 runtime error
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct Corpus {
  EventConfig events;
  Vocabulary vocab;
  std::vector<UserSequence> sequences;
  Split split;
};

Corpus load_corpus(const std::string& data_path, const EventConfig& events, int l_max) {
  Corpus c;
  c.events = events;
  UserRecords records = ingest_file(data_path, c.events);
  c.vocab = build_vocab(records, c.events);
  for (const auto& [user, recs] : records)
    c.sequences.push_back(encode_user(user, recs, c.vocab, l_max));
  c.split = split_leave_one_out(c.sequences);
  if (c.split.train.empty())
    throw ContractError("corpus: no user has at least two interactions");
  return c;
}

Corpus load_corpus(const std::string& data_path, const std::string& config_path, int l_max) {
  return load_corpus(data_path, EventConfig::from_json_file(config_path), l_max);
}

std::map<std::string, double> config_echo(const ModelConfig& m, const TrainConfig& t) {
  return {{"d_model", static_cast<double>(m.d_model)},
          {"n_heads", static_cast<double>(m.n_heads)},
          {"n_layers", static_cast<double>(m.n_layers)},
          {"head_hidden", static_cast<double>(m.head_hidden)},
          {"dropout", m.dropout},
          {"l_max", static_cast<double>(m.l_max)},
          {"vocab_size", static_cast<double>(m.vocab_size)},
          {"fixed_positional", m.fixed_positional ? 1.0 : 0.0},
          {"mask_prob", t.mask_prob},
          {"epochs", static_cast<double>(t.epochs)},
          {"batch_size", static_cast<double>(t.batch_size)},
          {"lr", t.lr}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw FormatError("write failed for " + path);
}

struct SynthFlags {
  SynthConfig cfg;
  std::string out = "data";
  bool force = false;
};

int run_synth(const SynthFlags& f) {
  f.cfg.validate();
  const fs::path dir(f.out);
  const fs::path csv = dir / "corpus.csv";
  const fs::path cfg = dir / "events.json";
  if (!f.force && (fs::exists(csv) || fs::exists(cfg))) {
    std::cerr << "synth: " << csv.string() << " or " << cfg.string()
              << " already exists; pass --force to overwrite\n";
    return kUsage;
  }
  fs::create_directories(dir);
  const auto records = generate(f.cfg);
  write_corpus_csv_file(records, csv.string());
  write_text(cfg.string(), synth_event_config().to_json());
  std::cout << "wrote " << records.size() << " interactions for " << f.cfg.n_users
            << " users to " << csv.string() << "\n";
  return kOk;
}

struct TrainFlags {
  std::string data;
  std::string config;
  std::string checkpoint = "model.ckpt";
  std::uint64_t seed = 42;
  TrainConfig tcfg;
  int dim = 96;
  int heads = 8;
  int layers = 2;
  int head_hidden = 128;
};

int run_train(const TrainFlags& f) {
  Corpus corpus = load_corpus(f.data, f.config, 200);
  ModelConfig mcfg;
  mcfg.d_model = f.dim;
  mcfg.n_heads = f.heads;
  mcfg.n_layers = f.layers;
  mcfg.head_hidden = f.head_hidden;
  mcfg.vocab_size = corpus.vocab.size();
  mcfg.validate();
  TrainConfig tcfg = f.tcfg;
  tcfg.seed = f.seed;
  tcfg.validate();

  ModelParams<float> params(mcfg);
  RngStream init_rng(derive_seed(f.seed, kSeedInit));
  params.init(init_rng);

  std::string trace_csv;
  {
    char header[256];
    std::snprintf(header, sizeof(header),
                  "# d_model=%d,n_heads=%d,n_layers=%d,head_hidden=%d,l_max=%d,mask_prob=%g,"
                  "epochs=%d,batch_size=%d,lr=%g,seed=%" PRIu64 "\n",
                  mcfg.d_model, mcfg.n_heads, mcfg.n_layers, mcfg.head_hidden, mcfg.l_max,
                  tcfg.mask_prob, tcfg.epochs, tcfg.batch_size, tcfg.lr, f.seed);
    trace_csv = header;
  }
  trace_csv += "epoch,loss,accuracy\n";
  train<float>(params, corpus.split.train, tcfg, [&trace_csv](int epoch, const EpochStats& s) {
    char line[128];
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", epoch, s.loss, s.accuracy);
    trace_csv += line;
    std::cout << "epoch " << epoch << " loss " << s.loss << " acc " << s.accuracy << "\n";
  });

  save_checkpoint(params, corpus.events, corpus.vocab.item_names(), f.seed, tcfg.epochs,
                  f.checkpoint);
  write_text(f.checkpoint + ".loss.csv", trace_csv);
  std::cout << "wrote " << f.checkpoint << " (trained on " << corpus.split.train.size()
            << " users)\n";
  return kOk;
}

struct EvalFlags {
  std::string data;
  std::string config;
  std::string checkpoint;
  std::string out = "metrics.json";
  std::vector<int> topk = {1, 5, 10};
  bool ablation = false;
  std::string baseline;
  std::uint64_t seed = 42;
  TrainFlags train;  // model/train shape for --ablation runs
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

int run_eval(const EvalFlags& f) {
  if (!f.baseline.empty()) {
    require(f.baseline == "pop", "eval: unknown baseline '" + f.baseline + "'");
    require(!f.data.empty() && !f.config.empty(), "eval: --baseline pop needs --data and --config");
    Corpus corpus = load_corpus(f.data, f.config, 200);
    PopRanker ranker(corpus.split.train, corpus.vocab);
    MetricsReport report = evaluate(ranker, corpus.split.test, corpus.events, corpus.vocab,
                                    f.topk);
    write_text(f.out, report_to_json(report, {{"baseline_pop", 1.0}}, f.seed));
    std::cout << "wrote " << f.out << " (pop baseline, " << report.n_users << " users)\n";
    return kOk;
  }

  if (f.ablation) {
    require(!f.data.empty() && !f.config.empty(), "eval: --ablation needs --data and --config");
    Corpus corpus = load_corpus(f.data, f.config, 200);
    ModelConfig mcfg;
    mcfg.d_model = f.train.dim;
    mcfg.n_heads = f.train.heads;
    mcfg.n_layers = f.train.layers;
    mcfg.head_hidden = f.train.head_hidden;
    mcfg.vocab_size = corpus.vocab.size();
    TrainConfig tcfg = f.train.tcfg;
    const std::vector<std::uint64_t> seeds{f.seed, f.seed + 1, f.seed + 2};
    const auto runs = ablation_compare(corpus.split.train, corpus.split.test, mcfg, tcfg,
                                       corpus.events, corpus.vocab, seeds);
    nlohmann::json out;
    out["runs"] = nlohmann::json::array();
    const auto echo = config_echo(mcfg, tcfg);
    for (const auto& run : runs) {
      nlohmann::json item;
      item["seed"] = run.seed;
      item["f1_delta"] = run.f1_delta;
      item["fixed"] = nlohmann::json::parse(report_to_json(run.fixed, echo, run.seed));
      item["tunable"] = nlohmann::json::parse(report_to_json(run.tunable, echo, run.seed));
      out["runs"].push_back(item);
      std::cout << "seed " << run.seed << " macro-F1 fixed " << run.fixed.classification.macro.f1
                << " tunable " << run.tunable.classification.macro.f1 << " delta "
                << run.f1_delta << "\n";
    }
    write_text(f.out, out.dump(2) + "\n");
    std::cout << "wrote " << f.out << " (" << runs.size() << " ablation runs)\n";
    return kOk;
  }

  require(!f.checkpoint.empty() && !f.data.empty(), "eval: needs --checkpoint and --data");
  Checkpoint ckpt = load_checkpoint(f.checkpoint);
  Corpus corpus = load_corpus(f.data, ckpt.events, ckpt.params.config.l_max);
  const Vocabulary ckpt_vocab = checkpoint_vocab(ckpt);
  require(corpus.vocab.size() == ckpt_vocab.size() &&
              corpus.vocab.item_names() == ckpt_vocab.item_names(),
          "eval: vocabulary mismatch between checkpoint and corpus");
  ModelRanker ranker(ckpt.params, ckpt.events, corpus.vocab);
  MetricsReport report = evaluate(ranker, corpus.split.test, corpus.events, corpus.vocab, f.topk);
  TrainConfig echo_t;
  echo_t.seed = ckpt.seed;
  echo_t.epochs = ckpt.epoch;
  write_text(f.out, report_to_json(report, config_echo(ckpt.params.config, echo_t), ckpt.seed));
  for (int k : report.ks)
    std::cout << "hr@" << k << " " << report.ranking.at("hr@" + std::to_string(k)) << "  ndcg@"
              << k << " " << report.ranking.at("ndcg@" + std::to_string(k)) << "\n";
  std::cout << "macro-F1 " << report.classification.macro.f1 << "\n";
  std::cout << "wrote " << f.out << " (" << report.n_users << " users)\n";
  return kOk;
}

struct PredictFlags {
  std::string checkpoint;
  std::string history;
  std::string event;
  std::string item;
  int topk = 10;
};

int run_predict(const PredictFlags& f) {
  require(f.event.empty() != f.item.empty(),
          "predict: exactly one of --event or --item must be given");
  Checkpoint ckpt = load_checkpoint(f.checkpoint);
  const Vocabulary vocab = checkpoint_vocab(ckpt);
  UserRecords records = ingest_file(f.history, ckpt.events);
  require(records.size() == 1, "predict: history file must contain exactly one user");
  const auto& [user, recs] = *records.begin();
  UserSequence seq = encode_user(user, recs, vocab, ckpt.params.config.l_max);

  if (!f.event.empty()) {
    const int event_id = vocab.event_id(f.event);
    EvalInput ev = make_eval_input(seq.tokens, event_id, Vocabulary::kPadId, PredictMode::Item,
                                   ckpt.params.config.l_max);
    const std::span<const int> visible(ev.ids.data(), ev.ids.size() - 2);
    const auto ctx = make_boost_context(visible, f.event, ckpt.events, vocab);
    ScoredPosition<float> sp =
        output_scores(ckpt.params, ev.ids, ev.masked_pos, ctx ? &*ctx : nullptr);
    for (int id : rank_item_tokens<float>(sp.scores, vocab, f.topk)) {
      char line[128];
      std::snprintf(line, sizeof(line), "%s\t%.9g\n", vocab.item_name(id).c_str(),
                    static_cast<double>(sp.scores[static_cast<std::size_t>(id)]));
      std::cout << line;
    }
  } else {
    std::cout << predict_event_type(ckpt.params, seq.tokens, f.item, vocab) << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hsr: heterogeneous-event sequential recommender"};
  app.require_subcommand(1);

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "generate a grammar-constrained synthetic corpus");
  synth->add_option("--users", sf.cfg.n_users, "number of users")->capture_default_str();
  synth->add_option("--items", sf.cfg.n_items, "catalog size")->capture_default_str();
  synth->add_option("--tracks", sf.cfg.n_tracks, "number of item tracks")->capture_default_str();
  synth->add_option("--track-length", sf.cfg.track_length, "items per track")
      ->capture_default_str();
  synth->add_option("--like", sf.cfg.p_like, "like probability")->capture_default_str();
  synth->add_option("--dislike", sf.cfg.p_dislike, "dislike probability")->capture_default_str();
  synth->add_option("--noise", sf.cfg.p_noise, "off-track registration probability")
      ->capture_default_str();
  synth->add_option("--seed", sf.cfg.seed, "generator seed")->capture_default_str();
  synth->add_option("-o,--out", sf.out, "output directory")->capture_default_str();
  synth->add_flag("--force", sf.force, "overwrite existing corpus files");

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "train on a corpus and write a checkpoint");
  train_cmd->add_option("--data", tf.data, "corpus CSV")->required();
  train_cmd->add_option("--config", tf.config, "event/dependency config JSON")->required();
  train_cmd->add_option("--checkpoint", tf.checkpoint, "checkpoint output path")
      ->capture_default_str();
  train_cmd->add_option("--seed", tf.seed, "base seed for init/shuffle/mask/dropout")
      ->capture_default_str();
  train_cmd->add_option("--epochs", tf.tcfg.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", tf.tcfg.batch_size, "sequences per optimizer step")
      ->capture_default_str();
  train_cmd->add_option("--mask-prob", tf.tcfg.mask_prob, "token masking probability")
      ->capture_default_str();
  train_cmd->add_option("--dim", tf.dim, "model width d_model")->capture_default_str();
  train_cmd->add_option("--heads", tf.heads, "attention heads")->capture_default_str();
  train_cmd->add_option("--layers", tf.layers, "encoder layers")->capture_default_str();
  train_cmd->add_option("--head-hidden", tf.head_hidden, "output head hidden width")
      ->capture_default_str();

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or baseline on a corpus");
  eval_cmd->add_option("--data", ef.data, "corpus CSV");
  eval_cmd->add_option("--config", ef.config, "event/dependency config JSON");
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "trained checkpoint");
  eval_cmd->add_option("-o,--out", ef.out, "metrics report path")->capture_default_str();
  eval_cmd->add_option("--topk", ef.topk, "ranking cutoffs")->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_flag("--ablation", ef.ablation, "paired fixed-vs-tunable positional runs");
  eval_cmd->add_option("--baseline", ef.baseline, "evaluate a baseline instead (pop)");
  eval_cmd->add_option("--seed", ef.seed, "seed for baseline/ablation runs")
      ->capture_default_str();
  eval_cmd->add_option("--epochs", ef.train.tcfg.epochs, "ablation training epochs")
      ->capture_default_str();
  eval_cmd->add_option("--batch-size", ef.train.tcfg.batch_size, "ablation batch size")
      ->capture_default_str();
  eval_cmd->add_option("--mask-prob", ef.train.tcfg.mask_prob, "ablation masking probability")
      ->capture_default_str();
  eval_cmd->add_option("--dim", ef.train.dim, "ablation model width")->capture_default_str();
  eval_cmd->add_option("--heads", ef.train.heads, "ablation attention heads")
      ->capture_default_str();
  eval_cmd->add_option("--layers", ef.train.layers, "ablation encoder layers")
      ->capture_default_str();
  eval_cmd->add_option("--head-hidden", ef.train.head_hidden, "ablation head hidden width")
      ->capture_default_str();

  PredictFlags pf;
  auto* predict = app.add_subcommand("predict", "rank items or classify the next event type");
  predict->add_option("--checkpoint", pf.checkpoint, "trained checkpoint")->required();
  predict->add_option("--user-history", pf.history, "CSV with one user's interactions")
      ->required();
  predict->add_option("--event", pf.event, "predict the item for this next event type");
  predict->add_option("--item", pf.item, "predict the event type for this next item");
  predict->add_option("--topk", pf.topk, "candidates to print")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (synth->parsed()) return run_synth(sf);
    if (train_cmd->parsed()) return run_train(tf);
    if (eval_cmd->parsed()) return run_eval(ef);
    if (predict->parsed()) return run_predict(pf);
    std::cerr << "no subcommand given\n";
    return kUsage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
