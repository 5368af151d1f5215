#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "stctr/io.hpp"
#include "stctr/model.hpp"
#include "stctr/train.hpp"

namespace stctr {

struct VariantResult {
  Variant variant = Variant::kFull;
  std::vector<MetricReport> runs;  // one per repeat, in repeat order

  std::optional<double> mean(std::optional<double> MetricReport::* field) const {
    double acc = 0.0;
    size_t n = 0;
    for (const MetricReport& r : runs)
      if (r.*field) {
        acc += *(r.*field);
        ++n;
      }
    if (n == 0) return std::nullopt;
    return acc / double(n);
  }
  double mean_logloss() const {
    double acc = 0.0;
    for (const MetricReport& r : runs) acc += r.logloss;
    return runs.empty() ? 0.0 : acc / double(runs.size());
  }
};

struct AblationOutput {
  std::vector<VariantResult> variants;
  AlphaStats full_alphas;  // final-eval gates of the full variant, all repeats
};

// Trains every variant `repeats` times. Repeat r uses init_seed + r and
// shuffle_seed + r for every variant, so comparisons are paired across
// identical data order and trunk initialization.
inline AblationOutput run_ablation(
    const Vocabulary& vocab, const std::vector<EncodedImpression>& train_data,
    const std::vector<EncodedImpression>& eval_data, const ModelConfig& model_cfg,
    const TrainConfig& train_cfg, const std::vector<Variant>& variants,
    size_t repeats,
    const std::function<void(const std::string&)>& progress = nullptr) {
  if (variants.empty() || repeats == 0)
    throw ConfigError("ablation: need at least one variant and one repeat");
  AblationOutput out;
  for (Variant v : variants) {
    VariantResult vr;
    vr.variant = v;
    for (size_t r = 0; r < repeats; ++r) {
      ModelConfig mc = model_cfg;
      mc.init_seed = model_cfg.init_seed + r;
      TrainConfig tc = train_cfg;
      tc.shuffle_seed = train_cfg.shuffle_seed + r;
      if (progress)
        progress(std::string(variant_name(v)) + " repeat " + std::to_string(r));
      Model model(vocab, mc, v);
      Adagrad opt(model.params(), tc.adagrad_init, tc.adagrad_eps);
      TrainOutput t = train_model(model, opt, train_data, eval_data, tc);
      if (v == Variant::kFull) out.full_alphas.merge(t.final_eval.alphas);
      vr.runs.push_back(std::move(t.final_metrics));
    }
    out.variants.push_back(std::move(vr));
  }
  return out;
}

inline void write_ablation_csv(const std::string& path, const AblationOutput& res) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt_double(*v) : std::string();
  };
  out << "variant,repeat,auc,tauc,cauc,logloss\n";
  for (const VariantResult& vr : res.variants) {
    for (size_t r = 0; r < vr.runs.size(); ++r) {
      const MetricReport& m = vr.runs[r];
      out << variant_name(vr.variant) << "," << r << "," << opt(m.auc) << ","
          << opt(m.tauc) << "," << opt(m.cauc) << "," << fmt_double(m.logloss) << "\n";
    }
    out << variant_name(vr.variant) << ",mean," << opt(vr.mean(&MetricReport::auc))
        << "," << opt(vr.mean(&MetricReport::tauc)) << ","
        << opt(vr.mean(&MetricReport::cauc)) << "," << fmt_double(vr.mean_logloss())
        << "\n";
  }
}

}  // namespace stctr
