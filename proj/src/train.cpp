#include "mml/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "mml/parallel.hpp"
#include "mml/rng.hpp"

namespace mml {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("train: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay < 0");
  if (lr_factor <= 0.0) throw std::invalid_argument("train: lr_factor <= 0");
  if (val_dense_k < 0 || val_uniform_m < 0 || val_dense_k + val_uniform_m < 1)
    throw std::invalid_argument("train: need at least one validation clip");
}

double TrainConfig::lr_at(int epoch) const {
  double v = lr;
  for (int m : lr_milestones)
    if (epoch >= m) v *= lr_factor;
  return v;
}

void sgd_step(TensorMap& weights, const TensorMap& grads, TensorMap& velocity,
              double lr, double momentum, double weight_decay) {
  for (const auto& [name, g] : grads) {
    auto wi = weights.find(name);
    if (wi == weights.end())
      throw std::invalid_argument("sgd_step: unknown tensor " + name);
    Tensor& w = wi->second;
    if (w.shape != g.shape)
      throw std::invalid_argument("sgd_step: shape mismatch for " + name);
    auto [vi, inserted] = velocity.try_emplace(name, Tensor::zeros(g.shape));
    Tensor& v = vi->second;
    if (v.shape != g.shape)
      throw std::invalid_argument("sgd_step: velocity shape mismatch for " + name);
    const float fl = static_cast<float>(lr);
    const float fm = static_cast<float>(momentum);
    const float fwd = static_cast<float>(weight_decay);
    for (size_t i = 0; i < w.data.size(); ++i) {
      v.data[i] = fm * v.data[i] + g.data[i] + fwd * w.data[i];
      w.data[i] -= fl * v.data[i];
    }
  }
}

namespace {

void fisher_yates(std::vector<int>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1],
              idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
}

struct Participant {
  ModelSpec spec;
  Modality modality = Modality::kRgb;
  int frame_count = 0;
  bool frozen = false;  // teacher
};

struct SampleOut {
  std::vector<float> logits;
  std::vector<float> features;
  Workspace ws;  // only filled for trainable participants
};

// Accumulates running statistics from the per-sample batch stats cached in
// the workspaces (reduced in sample order).
void update_running_stats(TensorMap& weights, const ModelSpec& spec,
                          const std::vector<const Workspace*>& wss) {
  const double nb = static_cast<double>(wss.size());
  for (int b = 0; b < spec.num_blocks(); ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    Tensor& rm = weights.at(p + "bn.running_mean");
    Tensor& rv = weights.at(p + "bn.running_var");
    const int c_n = spec.widths[static_cast<size_t>(b)];
    for (int c = 0; c < c_n; ++c) {
      double mean = 0.0, meansq = 0.0;
      for (const Workspace* ws : wss) {
        mean += ws->blocks[static_cast<size_t>(b)].mean[static_cast<size_t>(c)];
        meansq += ws->blocks[static_cast<size_t>(b)].meansq[static_cast<size_t>(c)];
      }
      mean /= nb;
      meansq /= nb;
      double var = std::max(0.0, meansq - mean * mean);
      rm.data[static_cast<size_t>(c)] = static_cast<float>(
          (1.0 - kBnMomentum) * rm.data[static_cast<size_t>(c)] + kBnMomentum * mean);
      rv.data[static_cast<size_t>(c)] = static_cast<float>(
          (1.0 - kBnMomentum) * rv.data[static_cast<size_t>(c)] + kBnMomentum * var);
    }
  }
}

struct ValMetrics {
  double top1 = -1, top5 = -1, map = -1;
  double primary() const { return map >= 0 ? map : top1; }
};

ValMetrics evaluate_model(const TensorMap& weights, const ModelSpec& spec,
                          Modality modality, const TrainData& data,
                          const TrainConfig& cfg) {
  const auto& clips = *data.val;
  SamplingSpec vs = cfg.sampling;
  vs.n_in = spec.n_in;
  vs.test_k = cfg.val_dense_k;
  vs.test_m = cfg.val_uniform_m;

  PredictionBatch batch;
  batch.scores.resize(clips.size());
  batch.item_ids.resize(clips.size());
  parallel_for(static_cast<int>(clips.size()), cfg.threads, [&](int i) {
    const ClipFlows* flows = modality == Modality::kFlow
                                 ? &(*data.val_flows)[static_cast<size_t>(i)]
                                 : nullptr;
    batch.scores[static_cast<size_t>(i)] = multiclip_predict(
        weights, spec, clips[static_cast<size_t>(i)], modality, vs, flows);
    batch.item_ids[static_cast<size_t>(i)] = clips[static_cast<size_t>(i)].clip_id;
  });

  ValMetrics out;
  if (data.mode == LabelMode::kSingle) {
    batch.labels.resize(clips.size());
    for (size_t i = 0; i < clips.size(); ++i) batch.labels[i] = clips[i].label;
    out.top1 = top_k_accuracy(batch, 1);
    out.top5 = top_k_accuracy(batch, std::min(5, spec.n_cls));
  } else {
    batch.label_vecs.resize(clips.size());
    for (size_t i = 0; i < clips.size(); ++i) batch.label_vecs[i] = clips[i].label_vec;
    out.map = mean_average_precision(batch);
  }
  return out;
}

std::vector<TrainResult> run_training(std::vector<ModelIo> models,
                                      const ModelIo* teacher, TrainMethod method,
                                      const TrainData& data,
                                      const TrainConfig& cfg) {
  cfg.validate();
  if (!data.train || !data.val || data.train->empty() || data.val->empty())
    throw std::invalid_argument("train: missing dataset");
  const int m_models = static_cast<int>(models.size());
  const bool multi = data.mode == LabelMode::kMulti;
  const bool mutual = method == TrainMethod::kMutual;
  const bool distill = method == TrainMethod::kMars || method == TrainMethod::kD3d;
  double distill_weight = cfg.distill_weight >= 0.0
                              ? cfg.distill_weight
                              : (method == TrainMethod::kMars ? 50.0 : 1.0);

  std::vector<Participant> parts;
  for (const ModelIo& m : models) {
    m.spec.validate();
    if (m.spec.n_cls != data.n_cls)
      throw std::invalid_argument("train: model n_cls does not match dataset");
    if (m.spec.input_channels != channels_of(m.modality))
      throw std::invalid_argument("train: model input_channels does not match modality");
    if ((m.spec.head == HeadKind::kSigmoidBce) != multi)
      throw std::invalid_argument("train: head kind does not match label mode");
    int fc = modality_frame_count(m.modality, data.t_total);
    if (fc < m.spec.n_in)
      throw std::invalid_argument("train: clip too short for modality input length");
    parts.push_back({m.spec, m.modality, fc, false});
  }
  if (distill) {
    if (!teacher) throw std::invalid_argument("train: distillation needs a teacher");
    parts.push_back({teacher->spec, teacher->modality,
                     modality_frame_count(teacher->modality, data.t_total), true});
    if (method == TrainMethod::kMars &&
        teacher->spec.feature_dim() != models[0].spec.feature_dim())
      throw std::invalid_argument("train: MARS feature dimension mismatch");
    if (teacher->spec.n_cls != data.n_cls)
      throw std::invalid_argument("train: teacher n_cls mismatch");
  }
  if (mutual) {
    if (m_models < 2) throw std::invalid_argument("train_mutual: needs M >= 2");
    for (int i = 0; i < m_models; ++i)
      for (int j = i + 1; j < m_models; ++j)
        if (models[static_cast<size_t>(i)].modality == models[static_cast<size_t>(j)].modality &&
            tensor_map_hash(models[static_cast<size_t>(i)].weights) ==
                tensor_map_hash(models[static_cast<size_t>(j)].weights))
          throw std::invalid_argument(
              "train_mutual: identical modality with identical initialization "
              "(the mutual term would stay zero)");
  }

  int short_count = parts[0].frame_count;
  for (const Participant& p : parts) short_count = std::min(short_count, p.frame_count);
  bool need_xi = false;
  int long_count = short_count;
  for (const Participant& p : parts)
    if (p.frame_count > short_count) {
      need_xi = true;
      long_count = p.frame_count;
    }
  const int n_in = models[0].spec.n_in;
  for (const ModelIo& m : models)
    if (m.spec.n_in != n_in)
      throw std::invalid_argument("train: all models must share n_in");
  cfg.sampling.validate(short_count);
  if (cfg.sampling.n_in != n_in)
    throw std::invalid_argument("train: sampling n_in does not match model n_in");

  auto flows_for = [&](Modality mod, bool val, int clip_idx) -> const ClipFlows* {
    if (mod != Modality::kFlow) return nullptr;
    const auto* store = val ? data.val_flows : data.train_flows;
    if (!store) throw std::invalid_argument("train: flow modality needs flow fields");
    return &(*store)[static_cast<size_t>(clip_idx)];
  };

  const int n_parts = static_cast<int>(parts.size());
  const int n_train = static_cast<int>(data.train->size());
  std::vector<TensorMap> velocity(static_cast<size_t>(m_models));
  std::vector<TrainResult> results(static_cast<size_t>(m_models));

  Rng shuffle_rng(derive_seed(cfg.seed, 0x73687566ull));
  Rng sample_rng(derive_seed(cfg.seed, 0x73616d70ull));

  std::vector<int> order(static_cast<size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    fisher_yates(order, shuffle_rng);

    std::vector<double> ep_loss(static_cast<size_t>(m_models), 0.0);
    std::vector<double> ep_ce(static_cast<size_t>(m_models), 0.0);
    std::vector<double> ep_kl(static_cast<size_t>(m_models), 0.0);
    std::vector<double> ep_distill(static_cast<size_t>(m_models), 0.0);
    int ep_samples = 0;

    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int nb = std::min(cfg.batch_size, n_train - start);

      // index draws are serial so they never depend on thread scheduling
      std::vector<std::vector<int>> short_idx(static_cast<size_t>(nb));
      std::vector<std::vector<int>> long_idx(static_cast<size_t>(nb));
      for (int b = 0; b < nb; ++b) {
        short_idx[static_cast<size_t>(b)] =
            train_sample(cfg.sampling.strategy, short_count, n_in,
                         cfg.sampling.tau, sample_rng);
        if (need_xi)
          long_idx[static_cast<size_t>(b)] = align_modalities(
              short_idx[static_cast<size_t>(b)], short_count, long_count, sample_rng);
      }

      // phase 1: forwards, parallel over (participant, sample)
      std::vector<SampleOut> outs(static_cast<size_t>(n_parts) * nb);
      parallel_for(n_parts * nb, cfg.threads, [&](int task) {
        const int p = task / nb, b = task % nb;
        const Participant& part = parts[static_cast<size_t>(p)];
        const int clip_idx = order[static_cast<size_t>(start + b)];
        const VideoClip& clip = (*data.train)[static_cast<size_t>(clip_idx)];
        const auto& idx = part.frame_count == short_count
                              ? short_idx[static_cast<size_t>(b)]
                              : long_idx[static_cast<size_t>(b)];
        ModalityTensor mt = clip_to_modality(clip, part.modality, idx,
                                             flows_for(part.modality, false, clip_idx));
        const TensorMap& w = part.frozen ? teacher->weights
                                         : models[static_cast<size_t>(p)].weights;
        SampleOut& so = outs[static_cast<size_t>(task)];
        // The teacher is frozen but normalized like the student (the sample's
        // own statistics), so identical weights give identical outputs.
        ForwardOut fo = forward(w, part.spec, mt.data, NetMode::kTrain,
                                part.frozen ? nullptr : &so.ws);
        so.logits = std::move(fo.logits);
        so.features = std::move(fo.features);
      });

      // phase 2: losses and upstream gradients (serial, double precision)
      std::vector<int> labels(static_cast<size_t>(nb));
      std::vector<std::vector<uint8_t>> label_vecs(static_cast<size_t>(nb));
      for (int b = 0; b < nb; ++b) {
        const VideoClip& clip = (*data.train)[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
        if (multi)
          label_vecs[static_cast<size_t>(b)] = clip.label_vec;
        else
          labels[static_cast<size_t>(b)] = clip.label;
      }

      auto out_at = [&](int p, int b) -> SampleOut& {
        return outs[static_cast<size_t>(p) * nb + b];
      };

      // per-model probabilities (or sigmoid scores)
      std::vector<std::vector<ProbVector>> probs(static_cast<size_t>(m_models));
      for (int i = 0; i < m_models; ++i) {
        probs[static_cast<size_t>(i)].resize(static_cast<size_t>(nb));
        for (int b = 0; b < nb; ++b)
          probs[static_cast<size_t>(i)][static_cast<size_t>(b)] =
              multi ? sigmoid_scores(out_at(i, b).logits)
                    : softmax(out_at(i, b).logits);
      }

      std::vector<std::vector<std::vector<float>>> dlogits(
          static_cast<size_t>(m_models),
          std::vector<std::vector<float>>(static_cast<size_t>(nb)));
      std::vector<std::vector<std::vector<float>>> dfeat(
          static_cast<size_t>(m_models),
          std::vector<std::vector<float>>(static_cast<size_t>(nb)));

      for (int i = 0; i < m_models; ++i) {
        const int n_cls = data.n_cls;
        const float task_scale =
            multi ? 1.0f / (static_cast<float>(nb) * n_cls) : 1.0f / nb;
        LossReport rep;
        rep.normalization = multi ? LossNorm::kMean : LossNorm::kBatchMean;

        std::vector<std::vector<float>> batch_logits(static_cast<size_t>(nb));
        for (int b = 0; b < nb; ++b)
          batch_logits[static_cast<size_t>(b)] = out_at(i, b).logits;

        if (multi) {
          rep.ce_or_bce = multilabel_bce(batch_logits, label_vecs, LossNorm::kMean);
        } else {
          rep.ce_or_bce = cross_entropy(probs[static_cast<size_t>(i)], labels,
                                        LossNorm::kBatchMean);
        }
        for (int b = 0; b < nb; ++b) {
          auto& dl = dlogits[static_cast<size_t>(i)][static_cast<size_t>(b)];
          dl.assign(static_cast<size_t>(n_cls), 0.0f);
          if (multi)
            bce_grad(batch_logits[static_cast<size_t>(b)],
                     label_vecs[static_cast<size_t>(b)], task_scale, dl);
          else
            ce_grad(probs[static_cast<size_t>(i)][static_cast<size_t>(b)],
                    labels[static_cast<size_t>(b)], task_scale, dl);
        }

        if (mutual) {
          std::vector<ProbVector> targets(static_cast<size_t>(nb));
          for (int b = 0; b < nb; ++b) {
            ProbVector t(static_cast<size_t>(n_cls), 0.0);
            for (int j = 0; j < m_models; ++j) {
              if (j == i) continue;
              const ProbVector& pj = probs[static_cast<size_t>(j)][static_cast<size_t>(b)];
              for (size_t cidx = 0; cidx < t.size(); ++cidx) t[cidx] += pj[cidx];
            }
            for (double& x : t) x /= static_cast<double>(m_models - 1);
            targets[static_cast<size_t>(b)] = std::move(t);
          }
          if (multi) {
            rep.kl = multilabel_kl(targets, probs[static_cast<size_t>(i)]);
            for (int b = 0; b < nb; ++b)
              multilabel_kl_grad(targets[static_cast<size_t>(b)],
                                 probs[static_cast<size_t>(i)][static_cast<size_t>(b)],
                                 task_scale,
                                 dlogits[static_cast<size_t>(i)][static_cast<size_t>(b)]);
          } else {
            rep.kl = kl_divergence(targets, probs[static_cast<size_t>(i)],
                                   LossNorm::kBatchMean);
            for (int b = 0; b < nb; ++b)
              kl_grad(targets[static_cast<size_t>(b)],
                      probs[static_cast<size_t>(i)][static_cast<size_t>(b)], task_scale,
                      dlogits[static_cast<size_t>(i)][static_cast<size_t>(b)]);
          }
        }

        if (distill) {
          const int tp = n_parts - 1;  // teacher slot
          const bool div_n = multi;
          const float dscale = static_cast<float>(distill_weight) /
                               (static_cast<float>(nb) * (div_n ? n_cls : 1));
          std::vector<std::vector<float>> self_v(static_cast<size_t>(nb)),
              teach_v(static_cast<size_t>(nb));
          for (int b = 0; b < nb; ++b) {
            if (method == TrainMethod::kMars) {
              self_v[static_cast<size_t>(b)] = out_at(i, b).features;
              teach_v[static_cast<size_t>(b)] = out_at(tp, b).features;
            } else {
              self_v[static_cast<size_t>(b)] = out_at(i, b).logits;
              teach_v[static_cast<size_t>(b)] = out_at(tp, b).logits;
            }
          }
          rep.distill = method == TrainMethod::kMars
                            ? mars_loss(self_v, teach_v, distill_weight, div_n, n_cls)
                            : d3d_loss(self_v, teach_v, distill_weight, div_n, n_cls);
          for (int b = 0; b < nb; ++b) {
            if (method == TrainMethod::kMars) {
              auto& df = dfeat[static_cast<size_t>(i)][static_cast<size_t>(b)];
              df.assign(self_v[static_cast<size_t>(b)].size(), 0.0f);
              l2_grad(self_v[static_cast<size_t>(b)], teach_v[static_cast<size_t>(b)],
                      dscale, df);
            } else {
              l2_grad(self_v[static_cast<size_t>(b)], teach_v[static_cast<size_t>(b)],
                      dscale, dlogits[static_cast<size_t>(i)][static_cast<size_t>(b)]);
            }
          }
        }

        rep.total = rep.ce_or_bce + rep.kl + rep.distill;
        if (!std::isfinite(rep.total))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(start / cfg.batch_size) +
                               ", model " + std::to_string(i));
        ep_loss[static_cast<size_t>(i)] += rep.total * nb;
        ep_ce[static_cast<size_t>(i)] += rep.ce_or_bce * nb;
        ep_kl[static_cast<size_t>(i)] += rep.kl * nb;
        ep_distill[static_cast<size_t>(i)] += rep.distill * nb;
      }
      ep_samples += nb;

      // phase 3: backwards, parallel over (model, sample)
      std::vector<TensorMap> sample_grads(static_cast<size_t>(m_models) * nb);
      parallel_for(m_models * nb, cfg.threads, [&](int task) {
        const int i = task / nb, b = task % nb;
        const Participant& part = parts[static_cast<size_t>(i)];
        const int clip_idx = order[static_cast<size_t>(start + b)];
        const VideoClip& clip = (*data.train)[static_cast<size_t>(clip_idx)];
        const auto& idx = part.frame_count == short_count
                              ? short_idx[static_cast<size_t>(b)]
                              : long_idx[static_cast<size_t>(b)];
        ModalityTensor mt = clip_to_modality(clip, part.modality, idx,
                                             flows_for(part.modality, false, clip_idx));
        const auto& df = dfeat[static_cast<size_t>(i)][static_cast<size_t>(b)];
        sample_grads[static_cast<size_t>(task)] = backward(
            models[static_cast<size_t>(i)].weights, part.spec, mt.data,
            out_at(i, b).ws, dlogits[static_cast<size_t>(i)][static_cast<size_t>(b)],
            df.empty() ? nullptr : &df);
      });

      // phase 4: ordered reduction, stats update, simultaneous SGD step
      for (int i = 0; i < m_models; ++i) {
        TensorMap& acc = sample_grads[static_cast<size_t>(i) * nb];
        for (int b = 1; b < nb; ++b) {
          const TensorMap& g = sample_grads[static_cast<size_t>(i) * nb + b];
          for (auto& [name, t] : acc) {
            const Tensor& add = g.at(name);
            for (size_t k = 0; k < t.data.size(); ++k) t.data[k] += add.data[k];
          }
        }
        // lr 0 must leave the checkpoint bit-identical, including the
        // batchnorm buffers.
        if (lr > 0.0) {
          std::vector<const Workspace*> wss;
          wss.reserve(static_cast<size_t>(nb));
          for (int b = 0; b < nb; ++b) wss.push_back(&out_at(i, b).ws);
          update_running_stats(models[static_cast<size_t>(i)].weights,
                               parts[static_cast<size_t>(i)].spec, wss);
          sgd_step(models[static_cast<size_t>(i)].weights, acc,
                   velocity[static_cast<size_t>(i)], lr, cfg.momentum,
                   cfg.weight_decay);
        }
      }
    }

    // per-epoch validation and best tracking
    for (int i = 0; i < m_models; ++i) {
      TrainResult& res = results[static_cast<size_t>(i)];
      EpochLog tl;
      tl.epoch = epoch;
      tl.model = i;
      tl.split = "train";
      tl.loss = ep_loss[static_cast<size_t>(i)] / ep_samples;
      tl.ce_or_bce = ep_ce[static_cast<size_t>(i)] / ep_samples;
      tl.kl = ep_kl[static_cast<size_t>(i)] / ep_samples;
      tl.distill = ep_distill[static_cast<size_t>(i)] / ep_samples;
      res.log.push_back(tl);

      ValMetrics vm = evaluate_model(models[static_cast<size_t>(i)].weights,
                                     parts[static_cast<size_t>(i)].spec,
                                     parts[static_cast<size_t>(i)].modality, data, cfg);
      EpochLog vl;
      vl.epoch = epoch;
      vl.model = i;
      vl.split = "val";
      vl.top1 = vm.top1;
      vl.top5 = vm.top5;
      vl.map = vm.map;
      res.log.push_back(vl);

      if (vm.primary() > res.best_metric) {
        res.best_metric = vm.primary();
        res.best_epoch = epoch;
        res.best_weights = models[static_cast<size_t>(i)].weights;
      }
    }
  }

  for (int i = 0; i < m_models; ++i) {
    results[static_cast<size_t>(i)].final_weights =
        std::move(models[static_cast<size_t>(i)].weights);
    if (results[static_cast<size_t>(i)].best_epoch < 0)
      results[static_cast<size_t>(i)].best_weights =
          results[static_cast<size_t>(i)].final_weights;
  }
  return results;
}

}  // namespace

TrainResult train_single(const ModelIo& init, const TrainData& data,
                         const TrainConfig& cfg) {
  return std::move(
      run_training({init}, nullptr, TrainMethod::kSolo, data, cfg)[0]);
}

std::vector<TrainResult> train_mutual(const std::vector<ModelIo>& inits,
                                      const TrainData& data,
                                      const TrainConfig& cfg) {
  return run_training(inits, nullptr, TrainMethod::kMutual, data, cfg);
}

TrainResult train_distill(const ModelIo& student, const ModelIo& teacher,
                          TrainMethod method, const TrainData& data,
                          const TrainConfig& cfg) {
  if (method != TrainMethod::kMars && method != TrainMethod::kD3d)
    throw std::invalid_argument("train_distill: method must be MARS or D3D");
  return std::move(run_training({student}, &teacher, method, data, cfg)[0]);
}

void write_metric_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  for (const EpochLog& l : log) {
    json j;
    j["epoch"] = l.epoch;
    j["model"] = l.model;
    j["split"] = l.split;
    if (l.split == "train") {
      j["loss"] = l.loss;
      j["ce_or_bce"] = l.ce_or_bce;
      j["kl"] = l.kl;
      j["distill"] = l.distill;
    }
    if (l.top1 >= 0) j["top1"] = l.top1;
    if (l.top5 >= 0) j["top5"] = l.top5;
    if (l.map >= 0) j["map"] = l.map;
    f << j.dump() << "\n";
  }
}

}  // namespace mml
