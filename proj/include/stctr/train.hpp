#pragma once

#include <numeric>
#include <optional>
#include <vector>

#include "stctr/heatmap.hpp"
#include "stctr/metrics.hpp"
#include "stctr/model.hpp"
#include "stctr/optimizer.hpp"

namespace stctr {

struct EvalResult {
  std::vector<ScoredRecord> records;
  AlphaStats alphas;  // populated only when the model has gates
};

// Scores a dataset in eval mode (running BN statistics, no updates). Record
// item_key is the dataset index, a stable NDCG tie-break.
inline EvalResult evaluate_model(Model& model,
                                 const std::vector<EncodedImpression>& data,
                                 size_t batch_size, bool collect_alphas = true) {
  if (data.empty()) throw DataError("evaluate: no records");
  EvalResult res;
  res.records.reserve(data.size());
  const FieldLayout& layout = model.layout();
  for (size_t start = 0; start < data.size(); start += batch_size) {
    size_t end = std::min(data.size(), start + batch_size);
    std::vector<const EncodedImpression*> batch;
    batch.reserve(end - start);
    for (size_t i = start; i < end; ++i) batch.push_back(&data[i]);
    Graph g;
    Model::Forward fwd = model.forward(g, batch, false, false);
    const Tensor& y = g.value(fwd.yhat);
    for (size_t i = 0; i < batch.size(); ++i) {
      ScoredRecord r;
      r.score = y.data[i];
      r.label = batch[i]->label;
      r.time_period = batch[i]->time_period;
      r.city = batch[i]->city;
      r.request_id = batch[i]->request_id;
      r.item_key = int64_t(start + i);
      res.records.push_back(r);
    }
    if (collect_alphas && model.use_gates()) {
      for (size_t f = 0; f < fwd.alphas.size(); ++f) {
        if (fwd.alphas[f] < 0) continue;
        const Tensor& a = g.value(fwd.alphas[f]);
        for (size_t i = 0; i < batch.size(); ++i)
          res.alphas.add(f, batch[i]->time_period, batch[i]->city, a.data[i]);
      }
    }
  }
  return res;
}

struct CurveRow {
  size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<MetricReport> eval;
};

struct TrainOutput {
  std::vector<CurveRow> curve;
  MetricReport final_metrics;
  EvalResult final_eval;
  size_t steps_done = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  size_t skipped_steps = 0;
};

// Shuffled mini-batch training with warm-up Adagrad. Deterministic given the
// model init seed and cfg.shuffle_seed.
inline TrainOutput train_model(Model& model, Adagrad& opt,
                               const std::vector<EncodedImpression>& train_data,
                               const std::vector<EncodedImpression>& eval_data,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (train_data.empty()) throw DataError("train: empty training set");
  TrainOutput out;
  Rng shuffle_master(cfg.shuffle_seed);
  std::vector<size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  size_t pos = order.size();  // forces a shuffle on the first step
  size_t epoch = 0;
  size_t B = std::min(cfg.batch_size, train_data.size());

  for (size_t step = 0; step < cfg.total_steps; ++step) {
    if (pos + B > order.size()) {
      Rng r = shuffle_master.fork(epoch++);
      r.shuffle(order);
      pos = 0;
    }
    std::vector<const EncodedImpression*> batch(B);
    std::vector<double> labels(B);
    for (size_t i = 0; i < B; ++i) {
      const EncodedImpression& imp = train_data[order[pos + i]];
      batch[i] = &imp;
      labels[i] = double(imp.label);
    }
    pos += B;

    Graph g;
    Model::Forward fwd = model.forward(g, batch, true, true);
    NodeId loss = g.bce_mean(fwd.yhat, labels);
    double loss_v = g.value(loss).data[0];
    model.params().zero_grads();
    g.backward(loss);
    if (!opt.step(model.params(), lr_at(step, cfg))) ++out.skipped_steps;

    if (step == 0) out.first_loss = loss_v;
    out.last_loss = loss_v;
    bool last = step + 1 == cfg.total_steps;
    bool log_now = cfg.log_every > 0 && step % cfg.log_every == 0;
    bool eval_now = cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0;
    if (log_now || last || eval_now) {
      CurveRow row;
      row.step = step;
      row.lr = lr_at(step, cfg);
      row.train_loss = loss_v;
      if ((eval_now || last) && !eval_data.empty())
        row.eval = compute_metrics(
            evaluate_model(model, eval_data, cfg.batch_size, false).records);
      out.curve.push_back(std::move(row));
    }
  }
  out.steps_done = cfg.total_steps;
  if (!eval_data.empty()) {
    out.final_eval = evaluate_model(model, eval_data, cfg.batch_size);
    out.final_metrics = compute_metrics(out.final_eval.records);
  }
  return out;
}

// splits at a request boundary so no request straddles train and eval; the
// trailing fraction becomes the evaluation set
inline size_t split_index(const std::vector<EncodedImpression>& data,
                          double eval_fraction) {
  if (data.size() < 2) throw DataError("split: need at least 2 records");
  size_t want = size_t(double(data.size()) * (1.0 - eval_fraction));
  if (want == 0) want = 1;
  if (want >= data.size()) want = data.size() - 1;
  size_t idx = want;
  while (idx < data.size() && data[idx].request_id == data[idx - 1].request_id) ++idx;
  if (idx >= data.size()) {
    idx = want;
    while (idx > 1 && data[idx].request_id == data[idx - 1].request_id) --idx;
  }
  return idx;
}

}  // namespace stctr
