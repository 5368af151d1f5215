#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stctr/ablation.hpp"
#include "stctr/checkpoint.hpp"
#include "stctr/config.hpp"
#include "stctr/gradcheck.hpp"
#include "stctr/io.hpp"

namespace stctr::cli {

constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

inline fs::path make_run_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + out + ": " + ec.message());
  return dir;
}

// every subcommand records what it ran with; no timestamps, so reruns with
// identical inputs leave identical bytes behind
inline void write_manifest(const fs::path& dir, const std::string& command,
                           const nlohmann::json& config,
                           const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["outputs"] = outputs;
  j["versions"] = nlohmann::json{{"stctr", kVersion}, {"checkpoint_format", 1}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

inline std::string show_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string("n/a");
}

inline int cmd_generate(const RunConfig& rc, const std::string& out) {
  fs::path dir = make_run_dir(out);
  SynthGenerator gen(rc.gen);
  {
    std::ofstream data(dir / "dataset.jsonl");
    if (!data) throw IoError("cannot write " + (dir / "dataset.jsonl").string());
    gen.run([&](const Impression& imp) {
      data << impression_to_json(imp).dump() << "\n";
    });
  }
  {
    std::ofstream t(dir / "truth.json");
    if (!t) throw IoError("cannot write " + (dir / "truth.json").string());
    t << gen.truth().to_json().dump(2) << "\n";
  }
  Vocabulary vocab = gen.make_vocab(rc.model.embedding_dim);
  vocab.save((dir / "vocab.json").string());
  write_stats_csv((dir / "stats.csv").string(), gen.stats(), rc.gen.time_periods);
  write_manifest(dir, "generate", rc.to_json(),
                 {"dataset.jsonl", "truth.json", "vocab.json", "stats.csv"});
  std::printf("generate: %zu requests x %zu impressions -> %s\n", rc.gen.requests,
              rc.gen.impressions_per_request, dir.string().c_str());
  return 0;
}

struct LoadedData {
  Vocabulary vocab;
  std::vector<EncodedImpression> train_set, eval_set;
};

inline LoadedData load_split(const std::string& vocab_path, const std::string& data_path,
                             double eval_fraction) {
  LoadedData d;
  d.vocab = Vocabulary::load(vocab_path);
  Encoder enc(d.vocab);
  std::vector<EncodedImpression> all = encode_jsonl(data_path, enc);
  size_t cut = split_index(all, eval_fraction);
  d.train_set.assign(std::make_move_iterator(all.begin()),
                     std::make_move_iterator(all.begin() + std::ptrdiff_t(cut)));
  d.eval_set.assign(std::make_move_iterator(all.begin() + std::ptrdiff_t(cut)),
                    std::make_move_iterator(all.end()));
  return d;
}

inline int cmd_train(const RunConfig& rc, const std::string& data_path,
                     const std::string& vocab_path, const std::string& out) {
  rc.train.validate();
  Variant variant = variant_from_name(rc.variant);
  fs::path dir = make_run_dir(out);
  LoadedData d = load_split(vocab_path, data_path, rc.train.eval_fraction);

  Model model(d.vocab, rc.model.to_model_config(), variant);
  Adagrad opt(model.params(), rc.train.adagrad_init, rc.train.adagrad_eps);
  TrainOutput res = train_model(model, opt, d.train_set, d.eval_set, rc.train);

  write_curve_csv((dir / "curve.csv").string(), res.curve);
  write_metrics_json((dir / "metrics.json").string(), res.final_metrics);
  write_groups_csv((dir / "groups.csv").string(), res.final_metrics);
  write_predictions_csv((dir / "predictions.csv").string(), res.final_eval.records);
  save_checkpoint((dir / "checkpoint.json").string(), model, &opt, res.steps_done);
  std::vector<std::string> outputs = {"curve.csv", "metrics.json", "groups.csv",
                                      "predictions.csv", "checkpoint.json"};
  if (model.use_gates()) {
    write_heatmap_csv((dir / "heatmap.csv").string(), res.final_eval.alphas,
                      model.layout());
    outputs.push_back("heatmap.csv");
  }
  write_manifest(dir, "train", rc.to_json(), outputs);
  const MetricReport& m = res.final_metrics;
  std::printf("train[%s]: steps=%zu loss %s -> %s auc=%s tauc=%s cauc=%s logloss=%s\n",
              variant_name(variant), res.steps_done, fmt_double(res.first_loss).c_str(),
              fmt_double(res.last_loss).c_str(), show_opt(m.auc).c_str(),
              show_opt(m.tauc).c_str(), show_opt(m.cauc).c_str(),
              fmt_double(m.logloss).c_str());
  return 0;
}

inline int cmd_evaluate(const std::string& pred_path, const std::string& out) {
  fs::path dir = make_run_dir(out);
  std::vector<ScoredRecord> recs = read_predictions_csv(pred_path);
  MetricReport rep = compute_metrics(recs);
  write_metrics_json((dir / "metrics.json").string(), rep);
  write_groups_csv((dir / "groups.csv").string(), rep);
  write_manifest(dir, "evaluate", nlohmann::json{{"predictions", pred_path}},
                 {"metrics.json", "groups.csv"});
  std::printf("evaluate: %zu records auc=%s tauc=%s cauc=%s ndcg3=%s ndcg10=%s logloss=%s\n",
              recs.size(), show_opt(rep.auc).c_str(), show_opt(rep.tauc).c_str(),
              show_opt(rep.cauc).c_str(), show_opt(rep.ndcg3).c_str(),
              show_opt(rep.ndcg10).c_str(), fmt_double(rep.logloss).c_str());
  return 0;
}

inline int cmd_ablate(const RunConfig& rc, const std::string& data_path,
                      const std::string& vocab_path, const std::string& out) {
  rc.train.validate();
  fs::path dir = make_run_dir(out);
  LoadedData d = load_split(vocab_path, data_path, rc.train.eval_fraction);
  std::vector<Variant> variants = {Variant::kFull, Variant::kNoGates, Variant::kNoMeta,
                                   Variant::kNoModulation, Variant::kStatic};
  AblationOutput res = run_ablation(
      d.vocab, d.train_set, d.eval_set, rc.model.to_model_config(), rc.train, variants,
      rc.repeats,
      [](const std::string& msg) { std::fprintf(stderr, "ablate: %s\n", msg.c_str()); });
  write_ablation_csv((dir / "ablation.csv").string(), res);
  write_heatmap_csv((dir / "heatmap.csv").string(), res.full_alphas,
                    FieldLayout::from_vocab(d.vocab));
  write_manifest(dir, "ablate", rc.to_json(), {"ablation.csv", "heatmap.csv"});
  for (const VariantResult& vr : res.variants)
    std::printf("ablate[%s]: auc=%s tauc=%s cauc=%s logloss=%s (%zu repeats)\n",
                variant_name(vr.variant), show_opt(vr.mean(&MetricReport::auc)).c_str(),
                show_opt(vr.mean(&MetricReport::tauc)).c_str(),
                show_opt(vr.mean(&MetricReport::cauc)).c_str(),
                fmt_double(vr.mean_logloss()).c_str(), vr.runs.size());
  return 0;
}

// self-contained numeric audit on a tiny in-memory dataset; model flags
// override the compact defaults, the config file's model section does not
inline int cmd_gradcheck(size_t batch, double eps, double tol, uint64_t seed,
                         const ModelSettings& ms) {
  GenConfig gc;
  gc.time_periods = 3;
  gc.cities = 3;
  gc.users = 6;
  gc.items = 9;
  gc.categories = 3;
  gc.latent_dim = 4;
  gc.requests = std::max<size_t>(4, (batch + 1) / 2);
  gc.impressions_per_request = 2;
  gc.max_behaviors = 3;
  gc.profile_buckets = 4;
  gc.match_buckets = 4;
  gc.geohash_buckets = 8;
  gc.seed = seed;
  SynthGenerator gen(gc);
  std::vector<Impression> imps;
  gen.run([&](const Impression& imp) { imps.push_back(imp); });
  Vocabulary vocab = gen.make_vocab(ms.embedding_dim);
  Encoder enc(vocab);
  std::vector<EncodedImpression> encs = enc.encode_all(imps);
  if (encs.size() < batch) throw ConfigError("gradcheck: dataset smaller than batch");

  std::vector<const EncodedImpression*> b;
  std::vector<double> labels;
  for (size_t i = 0; i < batch; ++i) {
    b.push_back(&encs[i]);
    labels.push_back(double(encs[i].label));
  }
  ModelConfig mc = ms.to_model_config();
  mc.init_seed = seed;
  Model model(vocab, mc, Variant::kFull);
  // jitter every parameter so the zero-initialized gate/meta/modulation nets
  // sit at a generic point instead of their identity plateau
  Rng jitter(seed ^ 0xabcdefULL);
  for (auto& p : model.params())
    for (double& v : p->value.data) v += jitter.uniform(-0.05, 0.05);
  // prime the running batch-norm statistics, then audit in eval mode: batch
  // statistics would null out any parameter that only shifts a column
  // uniformly (their true gradient is exactly zero, leaving both sides of the
  // comparison as roundoff noise)
  for (int i = 0; i < 3; ++i) {
    Graph g;
    model.forward(g, b, true, true);
  }

  auto loss_fn = [&](bool with_grads) {
    Graph g;
    Model::Forward fwd = model.forward(g, b, false, false);
    NodeId loss = g.bce_mean(fwd.yhat, labels);
    double lv = g.value(loss).data[0];
    if (with_grads) {
      model.params().zero_grads();
      g.backward(loss);
    }
    return lv;
  };
  GradCheckReport rep = grad_check(model.params(), loss_fn, eps);
  std::printf("gradcheck: entries=%zu max_rel_err=%s worst=%s[%zu] analytic=%s numeric=%s\n",
              rep.entries_checked, fmt_double(rep.max_rel_err).c_str(),
              rep.worst_param.c_str(), rep.worst_index,
              fmt_double(rep.worst_analytic).c_str(),
              fmt_double(rep.worst_numeric).c_str());
  if (rep.max_rel_err > tol) {
    std::fprintf(stderr, "gradcheck: max relative error %s exceeds tolerance %s\n",
                 fmt_double(rep.max_rel_err).c_str(), fmt_double(tol).c_str());
    return exit_code(ErrorCategory::kNumeric);
  }
  return 0;
}

inline int cmd_export_heatmap(const std::string& ckpt_path, const std::string& data_path,
                              const std::string& vocab_path, const std::string& out,
                              size_t batch_size) {
  fs::path dir = make_run_dir(out);
  std::ifstream in(ckpt_path);
  if (!in) throw IoError("cannot read " + ckpt_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: parse failed: ") + e.what());
  }
  if (!j.contains("model")) throw DataError("checkpoint: missing model descriptor");
  Variant variant = Variant::kFull;
  ModelConfig mc = model_config_from_descriptor(j.at("model"), &variant);
  Vocabulary vocab = Vocabulary::load(vocab_path);
  Model model(vocab, mc, variant);
  if (!model.use_gates())
    throw Error(ErrorCategory::kUsage,
                std::string("export-heatmap: variant '") + variant_name(variant) +
                    "' has no gate layer");
  load_checkpoint_json(j, model, nullptr);
  Encoder enc(vocab);
  std::vector<EncodedImpression> data = encode_jsonl(data_path, enc);
  EvalResult res = evaluate_model(model, data, batch_size, true);
  write_heatmap_csv((dir / "heatmap.csv").string(), res.alphas, model.layout());
  write_manifest(dir, "export-heatmap",
                 nlohmann::json{{"checkpoint", ckpt_path}, {"data", data_path}},
                 {"heatmap.csv"});
  std::printf("export-heatmap: %zu records -> %s\n", data.size(),
              (dir / "heatmap.csv").string().c_str());
  return 0;
}

// args exclude the program name and come in natural order
inline int run(std::vector<std::string> args) {
  try {
    // the config file seeds every default; explicit flags then override
    std::string config_path;
    for (size_t i = 0; i + 1 < args.size(); ++i)
      if (args[i] == "--config") config_path = args[i + 1];
    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);

    CLI::App app{"spatiotemporal CTR laboratory"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    std::string config_sink;
    int code = 0;

    auto add_model_flags = [&](CLI::App* sub) {
      sub->add_option("--meta-rank", rc.model.meta_rank,
                      "semantic transform rank, 0 = full matrix");
      sub->add_option("--embed-init", rc.model.embed_init, "embedding init range");
      sub->add_option("--tower-widths", rc.model.tower_widths, "hidden layer widths");
      sub->add_option("--leaky-slope", rc.model.leaky_slope, "leaky relu slope");
      sub->add_option("--bn-momentum", rc.model.bn_momentum, "running-stat momentum");
      sub->add_option("--bn-eps", rc.model.bn_eps, "batch-norm epsilon");
      sub->add_option("--init-seed", rc.model.init_seed, "parameter init seed");
    };
    auto add_train_flags = [&](CLI::App* sub) {
      sub->add_option("--batch-size", rc.train.batch_size, "");
      sub->add_option("--lr-start", rc.train.lr_start, "");
      sub->add_option("--lr-peak", rc.train.lr_peak, "");
      sub->add_option("--warmup-steps", rc.train.warmup_steps, "");
      sub->add_option("--total-steps", rc.train.total_steps, "");
      sub->add_option("--adagrad-init", rc.train.adagrad_init, "");
      sub->add_option("--adagrad-eps", rc.train.adagrad_eps, "");
      sub->add_option("--log-every", rc.train.log_every, "");
      sub->add_option("--eval-every", rc.train.eval_every, "0 = only after the last step");
      sub->add_option("--eval-fraction", rc.train.eval_fraction,
                      "trailing fraction held out for evaluation");
      sub->add_option("--shuffle-seed", rc.train.shuffle_seed, "");
    };

    CLI::App* g = app.add_subcommand(
        "generate", "write a synthetic dataset with ground truth, vocabulary and stats");
    std::string g_out;
    g->add_option("--config", config_sink, "JSON config file");
    g->add_option("--out", g_out, "run directory")->required();
    g->add_option("--time-periods", rc.gen.time_periods, "");
    g->add_option("--cities", rc.gen.cities, "");
    g->add_option("--users", rc.gen.users, "");
    g->add_option("--items", rc.gen.items, "");
    g->add_option("--categories", rc.gen.categories, "");
    g->add_option("--latent-dim", rc.gen.latent_dim, "");
    g->add_option("--bias-amp", rc.gen.bias_amp, "per-(period,city) logit bias amplitude");
    g->add_option("--requests", rc.gen.requests, "");
    g->add_option("--impressions-per-request", rc.gen.impressions_per_request, "");
    g->add_option("--max-behaviors", rc.gen.max_behaviors, "");
    g->add_option("--profile-buckets", rc.gen.profile_buckets, "");
    g->add_option("--match-buckets", rc.gen.match_buckets, "");
    g->add_option("--geohash-buckets", rc.gen.geohash_buckets, "");
    g->add_option("--geohash-prefix", rc.gen.geohash_prefix, "");
    g->add_option("--zipf-exponent", rc.gen.zipf_exponent, "");
    g->add_option("--travel-prob", rc.gen.travel_prob, "");
    g->add_option("--seed", rc.gen.seed, "");
    g->add_option("--embedding-dim", rc.model.embedding_dim,
                  "embedding dim recorded in the vocabulary");
    g->callback([&]() { code = cmd_generate(rc, g_out); });

    CLI::App* t = app.add_subcommand("train", "train one variant and write its artifacts");
    std::string t_data, t_vocab, t_out;
    t->add_option("--config", config_sink, "JSON config file");
    t->add_option("--data", t_data, "dataset.jsonl")->required();
    t->add_option("--vocab", t_vocab, "vocab.json")->required();
    t->add_option("--out", t_out, "run directory")->required();
    t->add_option("--variant", rc.variant, "full|no_gates|no_meta|no_modulation|static");
    add_model_flags(t);
    add_train_flags(t);
    t->callback([&]() { code = cmd_train(rc, t_data, t_vocab, t_out); });

    CLI::App* e = app.add_subcommand("evaluate", "compute metrics from a predictions CSV");
    std::string e_pred, e_out;
    e->add_option("--config", config_sink, "JSON config file");
    e->add_option("--predictions", e_pred, "predictions CSV")->required();
    e->add_option("--out", e_out, "run directory")->required();
    e->callback([&]() { code = cmd_evaluate(e_pred, e_out); });

    CLI::App* a = app.add_subcommand(
        "ablate", "train all five variants with paired seeds and tabulate metrics");
    std::string a_data, a_vocab, a_out;
    a->add_option("--config", config_sink, "JSON config file");
    a->add_option("--data", a_data, "dataset.jsonl")->required();
    a->add_option("--vocab", a_vocab, "vocab.json")->required();
    a->add_option("--out", a_out, "run directory")->required();
    a->add_option("--repeats", rc.repeats, "training runs per variant");
    add_model_flags(a);
    add_train_flags(a);
    a->callback([&]() { code = cmd_ablate(rc, a_data, a_vocab, a_out); });

    CLI::App* gc = app.add_subcommand(
        "gradcheck", "finite-difference audit of the full model on a tiny dataset");
    size_t gc_batch = 8;
    // central differences balance cancellation noise (~1/eps) against
    // truncation and kink-crossing risk (~eps^2); 2e-4 sits in the basin
    double gc_eps = 2e-4, gc_tol = 1e-4;
    uint64_t gc_seed = 1;
    ModelSettings gc_model;
    gc_model.embedding_dim = 3;
    gc_model.meta_rank = 2;
    gc_model.tower_widths = {8, 4};
    gc->add_option("--batch", gc_batch, "rows in the checked batch");
    gc->add_option("--eps", gc_eps, "central-difference step");
    gc->add_option("--tolerance", gc_tol, "max relative error allowed");
    gc->add_option("--seed", gc_seed, "data and init seed");
    gc->add_option("--embedding-dim", gc_model.embedding_dim, "");
    gc->add_option("--meta-rank", gc_model.meta_rank, "0 = full matrix");
    gc->add_option("--tower-widths", gc_model.tower_widths, "");
    gc->callback([&]() { code = cmd_gradcheck(gc_batch, gc_eps, gc_tol, gc_seed, gc_model); });

    CLI::App* h = app.add_subcommand(
        "export-heatmap", "mean gate weight per (field, time-period) and (field, city)");
    std::string h_ckpt, h_data, h_vocab, h_out;
    size_t h_batch = 1024;
    h->add_option("--checkpoint", h_ckpt, "checkpoint.json")->required();
    h->add_option("--data", h_data, "dataset.jsonl")->required();
    h->add_option("--vocab", h_vocab, "vocab.json")->required();
    h->add_option("--out", h_out, "run directory")->required();
    h->add_option("--batch-size", h_batch, "");
    h->callback([&]() { code = cmd_export_heatmap(h_ckpt, h_data, h_vocab, h_out, h_batch); });

    try {
      std::reverse(args.begin(), args.end());
      app.parse(std::move(args));
    } catch (const CLI::CallForHelp& ex) {
      return app.exit(ex);
    } catch (const CLI::CallForVersion& ex) {
      return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
      app.exit(ex);
      return exit_code(ErrorCategory::kUsage);
    }
    return code;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace stctr::cli
