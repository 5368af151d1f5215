#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <stctr/cli.hpp>

#include "support/fixtures.hpp"

using namespace stctr;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("stctr_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

nlohmann::json parse_file(const fs::path& path) { return nlohmann::json::parse(slurp(path)); }

// small dataset shared by the pipeline tests; every knob shrunk so a full
// generate + train cycle stays well under a second
int generate_tiny(const fs::path& dir, size_t requests, uint64_t seed) {
  return cli::run({"generate", "--out", dir.string(), "--requests", std::to_string(requests),
                   "--impressions-per-request", "3", "--cities", "4", "--users", "20",
                   "--items", "15", "--categories", "4", "--latent-dim", "3", "--bias-amp",
                   "2", "--max-behaviors", "4", "--geohash-buckets", "32", "--seed",
                   std::to_string(seed), "--embedding-dim", "3"});
}

}  // namespace

TEST_CASE("double formatting survives a text round trip") {
  auto roundtrips = [](double v) { return std::stod(fmt_double(v)) == v; };

  REQUIRE(fmt_double(0.5) == "0.5");
  REQUIRE(fmt_double(2.0) == "2");
  REQUIRE(roundtrips(0.1));
  REQUIRE(roundtrips(1.0 / 3.0));
  REQUIRE(roundtrips(1e-300));
  REQUIRE(roundtrips(-2.5e-7));
  REQUIRE(roundtrips(3.141592653589793));
  REQUIRE(roundtrips(std::nextafter(1.0, 2.0)));
  REQUIRE(roundtrips(1e17 + 8.0));

  Rng rng(77);
  for (int i = 0; i < 500; ++i) {
    REQUIRE(roundtrips(rng.uniform(-1e6, 1e6)));
    REQUIRE(roundtrips(rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-200.0, 200.0))));
  }
}

TEST_CASE("prediction files round trip through write and read") {
  fs::path dir = fresh_dir("pred_roundtrip");
  std::vector<ScoredRecord> recs;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    ScoredRecord r;
    r.request_id = 123456789012345LL + i / 4;
    r.time_period = i % 5;
    r.city = i % 3;
    r.label = i % 2;
    r.score = rng.uniform(1e-9, 1.0 - 1e-9);
    r.item_key = 999;  // not serialized; readers fall back to the line index
    recs.push_back(r);
  }
  fs::path csv = dir / "preds.csv";
  write_predictions_csv(csv.string(), recs);

  std::vector<ScoredRecord> back = read_predictions_csv(csv.string());
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    REQUIRE(back[i].request_id == recs[i].request_id);
    REQUIRE(back[i].time_period == recs[i].time_period);
    REQUIRE(back[i].city == recs[i].city);
    REQUIRE(back[i].label == recs[i].label);
    REQUIRE(back[i].score == recs[i].score);  // shortest form reparses exactly
    REQUIRE(back[i].item_key == int64_t(i));
  }

  REQUIRE(read_lines(csv)[0] == "request_id,time_period_id,city_id,label,score");
}

TEST_CASE("prediction files may carry an explicit item column") {
  fs::path dir = fresh_dir("pred_sixcol");
  fs::path csv = dir / "preds.csv";
  write_file(csv, "3,1,2,0,0.25,42\n\n3,1,2,1,0.75,7\n");

  std::vector<ScoredRecord> recs = read_predictions_csv(csv.string());
  REQUIRE(recs.size() == 2);  // blank lines are skipped, headerless files work
  REQUIRE(recs[0].item_key == 42);
  REQUIRE(recs[1].item_key == 7);
  REQUIRE(recs[0].score == 0.25);
  REQUIRE(recs[1].label == 1);
}

TEST_CASE("malformed prediction rows are rejected with their line number") {
  fs::path dir = fresh_dir("pred_errors");
  auto expect_fail = [&](const std::string& name, const std::string& text,
                         const std::string& needle) {
    fs::path p = dir / name;
    write_file(p, text);
    REQUIRE_THROWS_AS(read_predictions_csv(p.string()), DataError);
    REQUIRE_THROWS_WITH(read_predictions_csv(p.string()), ContainsSubstring(needle));
  };

  expect_fail("cols.csv", "1,2,3,0,0.5\n1,2,3,0\n", ":2: expected 5 or 6 columns");
  expect_fail("label.csv", "1,2,3,2,0.5\n", "label must be 0 or 1");
  expect_fail("text.csv", "1,2,3,0,0.5\n1,2,3,0,abc\n", ":2: malformed number");
  expect_fail("range.csv", "1,2,3,0,1e999\n", ":1: number out of range");

  REQUIRE_THROWS_AS(read_predictions_csv((dir / "missing.csv").string()), IoError);
}

TEST_CASE("metric reports serialize optionals as nulls") {
  MetricReport rep;
  rep.auc = 0.8125;
  rep.tauc = std::nullopt;
  rep.cauc = 0.7;
  rep.ndcg3 = std::nullopt;
  rep.ndcg10 = 0.9;
  rep.logloss = 0.5625;
  GroupStat ok;
  ok.key = 2;
  ok.impressions = 30;
  ok.valid = true;
  ok.auc = 0.75;
  GroupStat degenerate;
  degenerate.key = 4;
  degenerate.impressions = 12;
  degenerate.valid = false;
  degenerate.auc = 0.0;
  rep.period_groups = {ok, degenerate};
  rep.city_groups = {ok};

  nlohmann::json j = metrics_to_json(rep);
  REQUIRE(j["auc"] == 0.8125);
  REQUIRE(j["tauc"].is_null());
  REQUIRE(j["cauc"] == 0.7);
  REQUIRE(j["ndcg3"].is_null());
  REQUIRE(j["ndcg10"] == 0.9);
  REQUIRE(j["logloss"] == 0.5625);
  REQUIRE(j["time_period_groups"].size() == 2);
  REQUIRE(j["time_period_groups"][0]["key"] == 2);
  REQUIRE(j["time_period_groups"][0]["impressions"] == 30);
  REQUIRE(j["time_period_groups"][0]["valid"] == true);
  REQUIRE(j["time_period_groups"][0]["auc"] == 0.75);
  REQUIRE(j["time_period_groups"][1]["valid"] == false);
  REQUIRE_FALSE(j["time_period_groups"][1].contains("auc"));
  REQUIRE(j["city_groups"].size() == 1);

  fs::path dir = fresh_dir("metrics_json");
  write_metrics_json((dir / "metrics.json").string(), rep);
  REQUIRE(parse_file(dir / "metrics.json") == j);

  write_groups_csv((dir / "groups.csv").string(), rep);
  std::vector<std::string> lines = read_lines(dir / "groups.csv");
  REQUIRE(lines.size() == 4);
  REQUIRE(lines[0] == "group_type,key,impressions,valid,auc");
  REQUIRE(lines[1] == "time_period,2,30,1,0.75");
  REQUIRE(lines[2] == "time_period,4,12,0,");  // no AUC for a single-class group
  REQUIRE(lines[3] == "city,2,30,1,0.75");
}

TEST_CASE("curve rows mark evaluation columns only when present") {
  CurveRow plain;
  plain.step = 0;
  plain.lr = 0.001;
  plain.train_loss = 0.7;
  CurveRow evald;
  evald.step = 5;
  evald.lr = 0.01;
  evald.train_loss = 0.625;
  MetricReport m;
  m.auc = 0.8125;
  m.tauc = std::nullopt;
  m.cauc = 0.75;
  m.logloss = 0.5;
  evald.eval = m;

  fs::path dir = fresh_dir("curve");
  write_curve_csv((dir / "curve.csv").string(), {plain, evald});
  std::vector<std::string> lines = read_lines(dir / "curve.csv");
  REQUIRE(lines.size() == 3);
  REQUIRE(lines[0] == "step,lr,train_loss,eval_auc,eval_tauc,eval_cauc,eval_logloss");
  REQUIRE(lines[1] == "0,0.001,0.7,,,,");
  REQUIRE(lines[2] == "5,0.01,0.625,0.8125,,0.75,0.5");
}

TEST_CASE("heatmap rows carry field names and context keys") {
  AlphaStats st;
  st.add(0, 2, 7, 1.5);
  st.add(0, 2, 7, 0.5);
  st.add(4, 1, 3, 2.0);

  // only the field names matter to the writer
  FieldLayout lay = FieldLayout::from_vocab(fixtures::tiny_vocab(3));

  fs::path dir = fresh_dir("heatmap");
  write_heatmap_csv((dir / "heatmap.csv").string(), st, lay);
  std::vector<std::string> lines = read_lines(dir / "heatmap.csv");
  REQUIRE(lines.size() == 5);
  REQUIRE(lines[0] == "context_key,field_name,mean_alpha,count");
  REQUIRE(lines[1] == "time_period:2,user,1,2");
  REQUIRE(lines[2] == "time_period:1,combine,2,1");
  REQUIRE(lines[3] == "city:7,user,1,2");
  REQUIRE(lines[4] == "city:3,combine,2,1");
}

TEST_CASE("the command line pipeline runs end to end") {
  fs::path gen_dir = fresh_dir("pipe_gen");
  fs::path train_dir = fresh_dir("pipe_train");
  fs::path eval_dir = fresh_dir("pipe_eval");
  fs::path hm_dir = fresh_dir("pipe_heatmap");

  REQUIRE(generate_tiny(gen_dir, 60, 5) == 0);
  REQUIRE(read_lines(gen_dir / "dataset.jsonl").size() == 180);
  REQUIRE(fs::exists(gen_dir / "truth.json"));
  REQUIRE(fs::exists(gen_dir / "vocab.json"));
  std::vector<std::string> stats = read_lines(gen_dir / "stats.csv");
  REQUIRE(stats.size() == 1 + 5 * 4);  // header + time_periods x cities
  REQUIRE(stats[0] ==
          "time_period_id,time_period_name,city_id,impressions,empirical_ctr,mean_planted_p");

  nlohmann::json gman = parse_file(gen_dir / "manifest.json");
  REQUIRE(gman["command"] == "generate");
  REQUIRE(gman["versions"]["stctr"] == cli::kVersion);
  REQUIRE(gman["config"]["gen"]["requests"] == 60);
  std::vector<std::string> gout = gman["outputs"].get<std::vector<std::string>>();
  REQUIRE_THAT(gout, Catch::Matchers::UnorderedEquals(std::vector<std::string>{
                         "dataset.jsonl", "truth.json", "vocab.json", "stats.csv"}));

  std::string data = (gen_dir / "dataset.jsonl").string();
  std::string vocab = (gen_dir / "vocab.json").string();
  REQUIRE(cli::run({"train", "--data", data, "--vocab", vocab, "--out", train_dir.string(),
                    "--total-steps", "12", "--batch-size", "32", "--warmup-steps", "4",
                    "--eval-every", "6", "--log-every", "4", "--eval-fraction", "0.25",
                    "--meta-rank", "2", "--tower-widths", "8", "4", "--init-seed",
                    "1"}) == 0);
  for (const char* name : {"curve.csv", "metrics.json", "groups.csv", "predictions.csv",
                           "checkpoint.json", "heatmap.csv", "manifest.json"})
    REQUIRE(fs::exists(train_dir / name));

  nlohmann::json ckpt = parse_file(train_dir / "checkpoint.json");
  REQUIRE(ckpt["format_version"] == 1);
  REQUIRE(ckpt["model"]["variant"] == "full");
  REQUIRE(ckpt["step"] == 12);

  nlohmann::json tman = parse_file(train_dir / "manifest.json");
  REQUIRE(tman["command"] == "train");
  REQUIRE(tman["config"]["train"]["total_steps"] == 12);
  REQUIRE(tman["config"]["model"]["tower_widths"] == nlohmann::json::array({8, 4}));

  nlohmann::json metrics = parse_file(train_dir / "metrics.json");
  REQUIRE(metrics["logloss"].is_number());
  REQUIRE(metrics["auc"].is_number());
  REQUIRE(metrics["auc"].get<double>() >= 0.0);
  REQUIRE(metrics["auc"].get<double>() <= 1.0);
  std::vector<std::string> curve = read_lines(train_dir / "curve.csv");
  REQUIRE(curve.size() > 1);
  REQUIRE(curve[0] == "step,lr,train_loss,eval_auc,eval_tauc,eval_cauc,eval_logloss");

  // recomputing metrics from the serialized predictions reproduces the
  // training run's report byte for byte
  REQUIRE(cli::run({"evaluate", "--predictions", (train_dir / "predictions.csv").string(),
                    "--out", eval_dir.string()}) == 0);
  REQUIRE(slurp(eval_dir / "metrics.json") == slurp(train_dir / "metrics.json"));
  REQUIRE(slurp(eval_dir / "groups.csv") == slurp(train_dir / "groups.csv"));

  REQUIRE(cli::run({"export-heatmap", "--checkpoint",
                    (train_dir / "checkpoint.json").string(), "--data", data, "--vocab",
                    vocab, "--out", hm_dir.string(), "--batch-size", "64"}) == 0);
  std::vector<std::string> hm = read_lines(hm_dir / "heatmap.csv");
  REQUIRE(hm.size() > 1);
  REQUIRE(hm[0] == "context_key,field_name,mean_alpha,count");
  for (size_t i = 1; i < hm.size(); ++i) {
    bool period = hm[i].rfind("time_period:", 0) == 0;
    bool city = hm[i].rfind("city:", 0) == 0;
    REQUIRE((period || city));
    REQUIRE(std::count(hm[i].begin(), hm[i].end(), ',') == 3);
  }
  REQUIRE(parse_file(hm_dir / "manifest.json")["command"] == "export-heatmap");
}

TEST_CASE("gate exports require a variant that has gates") {
  fs::path gen_dir = fresh_dir("static_gen");
  fs::path train_dir = fresh_dir("static_train");
  fs::path hm_dir = fresh_dir("static_heatmap");

  REQUIRE(generate_tiny(gen_dir, 40, 6) == 0);
  std::string data = (gen_dir / "dataset.jsonl").string();
  std::string vocab = (gen_dir / "vocab.json").string();
  REQUIRE(cli::run({"train", "--data", data, "--vocab", vocab, "--out", train_dir.string(),
                    "--variant", "static", "--total-steps", "4", "--batch-size", "16",
                    "--warmup-steps", "2", "--eval-fraction", "0.25", "--tower-widths",
                    "6"}) == 0);

  REQUIRE_FALSE(fs::exists(train_dir / "heatmap.csv"));
  std::vector<std::string> outs =
      parse_file(train_dir / "manifest.json")["outputs"].get<std::vector<std::string>>();
  REQUIRE(std::find(outs.begin(), outs.end(), "heatmap.csv") == outs.end());

  REQUIRE(cli::run({"export-heatmap", "--checkpoint",
                    (train_dir / "checkpoint.json").string(), "--data", data, "--vocab",
                    vocab, "--out", hm_dir.string()}) == 2);
}

TEST_CASE("config files seed defaults and flags override them") {
  fs::path dir = fresh_dir("config");
  RunConfig rc;
  rc.gen.time_periods = 3;
  rc.gen.cities = 3;
  rc.gen.users = 10;
  rc.gen.items = 8;
  rc.gen.categories = 3;
  rc.gen.latent_dim = 2;
  rc.gen.requests = 30;
  rc.gen.impressions_per_request = 2;
  rc.gen.max_behaviors = 3;
  rc.gen.geohash_buckets = 16;
  rc.gen.seed = 9;
  rc.model.embedding_dim = 3;
  write_file(dir / "cfg.json", rc.to_json().dump(2));
  std::string cfg = (dir / "cfg.json").string();

  fs::path d1 = dir / "from_config";
  REQUIRE(cli::run({"generate", "--config", cfg, "--out", d1.string()}) == 0);
  REQUIRE(read_lines(d1 / "dataset.jsonl").size() == 30 * 2);

  fs::path d2 = dir / "flag_wins";
  REQUIRE(cli::run({"generate", "--config", cfg, "--requests", "45", "--out",
                    d2.string()}) == 0);
  REQUIRE(read_lines(d2 / "dataset.jsonl").size() == 45 * 2);
  REQUIRE(parse_file(d2 / "manifest.json")["config"]["gen"]["requests"] == 45);

  SECTION("round trip preserves every section") {
    RunConfig back = RunConfig::from_json(rc.to_json());
    REQUIRE(back.gen.requests == 30);
    REQUIRE(back.gen.users == 10);
    REQUIRE(back.model.embedding_dim == 3);
    REQUIRE(back.train.batch_size == rc.train.batch_size);
    REQUIRE(back.variant == "full");
  }
  SECTION("unknown variants are rejected at load time") {
    write_file(dir / "bad_variant.json", R"({"variant":"bogus"})");
    REQUIRE(cli::run({"generate", "--config", (dir / "bad_variant.json").string(), "--out",
                      (dir / "bad_out").string()}) == 2);
  }
  SECTION("parse failures and missing config files are reported") {
    write_file(dir / "broken.json", "{not json");
    REQUIRE(cli::run({"generate", "--config", (dir / "broken.json").string(), "--out",
                      (dir / "x").string()}) == 3);
    REQUIRE(cli::run({"generate", "--config", (dir / "absent.json").string(), "--out",
                      (dir / "y").string()}) == 5);
  }
}

TEST_CASE("usage and data errors map to distinct exit codes") {
  fs::path dir = fresh_dir("exit_codes");

  REQUIRE(cli::run({"--version"}) == 0);
  REQUIRE(cli::run({"--help"}) == 0);

  REQUIRE(cli::run({}) == 2);                           // a subcommand is required
  REQUIRE(cli::run({"frobnicate"}) == 2);               // unknown subcommand
  REQUIRE(cli::run({"generate"}) == 2);                 // --out is required
  REQUIRE(cli::run({"generate", "--out", (dir / "g").string(), "--bogus", "1"}) == 2);

  // variant and schedule validation fire before any data is touched
  REQUIRE(cli::run({"train", "--data", "nope", "--vocab", "nope", "--out",
                    (dir / "t").string(), "--variant", "bogus"}) == 2);
  REQUIRE(cli::run({"train", "--data", "nope", "--vocab", "nope", "--out",
                    (dir / "t").string(), "--warmup-steps", "50", "--total-steps",
                    "4"}) == 2);

  // missing inputs are I/O failures, malformed contents are data failures
  REQUIRE(cli::run({"train", "--data", (dir / "no.jsonl").string(), "--vocab",
                    (dir / "no.json").string(), "--out", (dir / "t").string(),
                    "--total-steps", "4", "--warmup-steps", "2"}) == 5);
  REQUIRE(cli::run({"evaluate", "--predictions", (dir / "absent.csv").string(), "--out",
                    (dir / "e").string()}) == 5);
  write_file(dir / "bad.csv", "1,2,3\n");
  REQUIRE(cli::run({"evaluate", "--predictions", (dir / "bad.csv").string(), "--out",
                    (dir / "e").string()}) == 3);
}

TEST_CASE("the gradient audit subcommand reports pass and fail") {
  REQUIRE(cli::run({"gradcheck", "--batch", "4", "--embedding-dim", "2", "--tower-widths",
                    "6", "3", "--meta-rank", "2"}) == 0);
  REQUIRE(cli::run({"gradcheck", "--batch", "4", "--embedding-dim", "2", "--tower-widths",
                    "6", "3", "--meta-rank", "2", "--tolerance", "1e-18"}) == 4);
}
