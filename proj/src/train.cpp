#include "signformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "signformer/checkpoint.hpp"
#include "signformer/config.hpp"
#include "signformer/decode.hpp"
#include "signformer/metrics.hpp"

namespace signformer {

Optimizer::Optimizer(OptimizerConfig cfg, Parameters& params) : cfg_(cfg) {
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    Slot slot;
    slot.name = name;
    slot.param = t;
    slot.m.assign(t.size(), 0.0f);
    slot.second.assign(t.size(), 0.0f);
    slots_.push_back(std::move(slot));
  }
}

void Optimizer::step() {
  for (const auto& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    for (float g : slot.param.grad())
      check(std::isfinite(g), "non-finite gradient in parameter ", slot.name);
  }
  ++step_count_;
  const double lr = cfg_.lr;
  const double wd = cfg_.weight_decay;
  if (cfg_.kind == OptimizerKind::kAdamW) {
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(step_count_));
    for (auto& slot : slots_) {
      auto p = slot.param.data_mut();
      auto g = slot.param.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double grad = g[i];
        const double m = cfg_.adam_beta1 * slot.m[i] + (1.0 - cfg_.adam_beta1) * grad;
        const double v =
            cfg_.adam_beta2 * slot.second[i] + (1.0 - cfg_.adam_beta2) * grad * grad;
        slot.m[i] = static_cast<float>(m);
        slot.second[i] = static_cast<float>(v);
        const double update =
            (m / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps) + wd * p[i];
        p[i] = static_cast<float>(p[i] - lr * update);
      }
    }
  } else {
    for (auto& slot : slots_) {
      auto p = slot.param.data_mut();
      auto g = slot.param.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double grad = g[i];
        const double m =
            cfg_.sophia_beta1 * slot.m[i] + (1.0 - cfg_.sophia_beta1) * grad;
        slot.m[i] = static_cast<float>(m);
        const double denom =
            std::max(cfg_.sophia_rho * slot.second[i], cfg_.sophia_eps);
        const double ratio = std::clamp(m / denom, -1.0, 1.0);
        p[i] = static_cast<float>(p[i] - lr * ratio - lr * wd * p[i]);
      }
    }
  }
  for (const auto& slot : slots_) {
    for (float v : slot.param.data())
      check(std::isfinite(v), "optimizer produced non-finite value in ", slot.name);
  }
}

void Optimizer::update_hessian(double batch_size) {
  check(cfg_.kind == OptimizerKind::kSophiaG,
        "hessian refresh only applies to SophiaG");
  for (auto& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    auto g = slot.param.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double ghat = g[i];
      slot.second[i] = static_cast<float>(cfg_.sophia_beta2 * slot.second[i] +
                                          (1.0 - cfg_.sophia_beta2) * batch_size *
                                              ghat * ghat);
    }
  }
}

double clip_grad_norm(Parameters& params, double max_norm) {
  double sum_sq = 0.0;
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    for (float g : t.grad()) sum_sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sum_sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  // shaved a few ulps so a second application is a bit-exact no-op
  const double scale = max_norm / norm * (1.0 - 4e-7);
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    for (float& g : t.grad()) g = static_cast<float>(g * scale);
  }
  return scale;
}

double PlateauScheduler::step(double dev_metric) {
  if (dev_metric > best_) {
    best_ = dev_metric;
    stale_ = 0;
  } else {
    ++stale_;
    if (stale_ >= cfg_.patience) {
      lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
      stale_ = 0;
    }
  }
  return lr_;
}

namespace {

Tensor batch_frames_row(const Batch& batch, int row) {
  const int t = batch.frames.dim(1), f = batch.frames.dim(2);
  auto src = batch.frames.data();
  std::vector<float> data(src.begin() + static_cast<std::size_t>(row) * t * f,
                          src.begin() + static_cast<std::size_t>(row + 1) * t * f);
  return Tensor::from_data({t, f}, std::move(data));
}

Tensor batch_mask_row(const Batch& batch, int row) {
  const int t = batch.src_pad.dim(1);
  auto src = batch.src_pad.data();
  std::vector<float> data(src.begin() + static_cast<std::size_t>(row) * t,
                          src.begin() + static_cast<std::size_t>(row + 1) * t);
  return Tensor::from_data({t}, std::move(data));
}

int live_label_count(const std::vector<int>& labels) {
  int n = 0;
  for (int id : labels) n += id != kPadId ? 1 : 0;
  return n;
}

}  // namespace

Tensor batch_loss(const Model& model, const Batch& batch, float smoothing,
                  const ForwardCtx& ctx) {
  const int b = batch.frames.dim(0);
  Tensor weighted_total;
  long long total_tokens = 0;
  for (int i = 0; i < b; ++i) {
    Tensor frames = batch_frames_row(batch, i);
    Tensor mask = batch_mask_row(batch, i);
    Tensor enc = model.encode(frames, mask, ctx);
    Tensor logits = model.decode(batch.dec_inputs[i], enc, mask, ctx);
    Tensor loss = cross_entropy(logits, batch.labels[i], kPadId, smoothing);
    const int tokens = live_label_count(batch.labels[i]);
    total_tokens += tokens;
    Tensor contribution = scale(loss, static_cast<float>(tokens));
    weighted_total =
        weighted_total.defined() ? add(weighted_total, contribution) : contribution;
  }
  return scale(weighted_total, 1.0f / static_cast<float>(total_tokens));
}

OptimizerKind resolve_optimizer(const std::string& name, const ModelConfig& cfg) {
  if (name == "adamw") return OptimizerKind::kAdamW;
  if (name == "sophiag") return OptimizerKind::kSophiaG;
  check(name == "auto", "unknown optimizer '", name, "'");
  return cfg.hidden_d >= 128 ? OptimizerKind::kSophiaG : OptimizerKind::kAdamW;
}

namespace {

struct DevScores {
  double bleu = 0.0;
  double rouge = 0.0;
};

DevScores evaluate_dev(const Model& model, const FeatureDataset& dev, int max_len) {
  std::vector<std::vector<int>> hyps, refs;
  for (const auto& seq : dev.sequences) {
    ModelStepScorer scorer(model, model.encode_source(seq.frames, Tensor()));
    hyps.push_back(greedy_decode(scorer, max_len));
    refs.push_back(seq.target);
  }
  return {bleu4(hyps, refs), rouge_l(hyps, refs)};
}

Checkpoint snapshot(const Model& model, const Optimizer& opt,
                    const PlateauScheduler& sched, int epoch, double best_bleu,
                    const Rng& rng) {
  Checkpoint ck;
  ck.config = model.config();
  ck.config_text = model_config_text(model.config());
  for (const auto& [name, t] : model.parameters().entries()) {
    Tensor copy = ck.params.create(name, t.shape(), t.requires_grad());
    std::copy(t.data().begin(), t.data().end(), copy.data_mut().begin());
  }
  ck.optimizer_kind = opt.config().kind;
  ck.optimizer_step = opt.step_count();
  for (const auto& slot : const_cast<Optimizer&>(opt).slots()) {
    ck.opt_m.push_back(slot.m);
    ck.opt_second.push_back(slot.second);
  }
  ck.epoch = epoch;
  ck.best_dev_bleu4 = best_bleu;
  ck.scheduler_stale = sched.stale();
  ck.scheduler_best = sched.best_metric();
  ck.lr = sched.lr();
  ck.rng_state = rng.state();
  return ck;
}

}  // namespace

TrainResult train_loop(Model& model, const FeatureDataset& train_set,
                       const FeatureDataset& dev_set, const TrainConfig& cfg,
                       const std::string& out_dir,
                       const std::function<void(const EpochRecord&)>& on_epoch,
                       const ResumeState* resume) {
  check(!train_set.sequences.empty(), "training dataset is empty");
  check(!dev_set.sequences.empty(), "dev dataset is empty");
  TrainResult result;

  OptimizerConfig opt_cfg = cfg.opt;
  opt_cfg.kind = resolve_optimizer(cfg.optimizer, model.config());
  Optimizer optimizer(opt_cfg, model.parameters());
  PlateauScheduler scheduler(cfg.plateau, cfg.opt.lr);
  Rng train_rng(cfg.seed);
  int start_epoch = 0;
  double best_bleu = -1.0;

  if (resume) {
    check(resume->opt_m.size() == optimizer.slots().size(),
          "resume state optimizer buffers do not match the model");
    for (std::size_t i = 0; i < resume->opt_m.size(); ++i) {
      optimizer.slots()[i].m = resume->opt_m[i];
      optimizer.slots()[i].second = resume->opt_second[i];
    }
    optimizer.set_step_count(resume->optimizer_step);
    scheduler.restore(resume->scheduler_best, resume->scheduler_stale, resume->lr);
    train_rng.set_state(resume->rng_state);
    start_epoch = resume->epoch;
    best_bleu = resume->best_dev_bleu4;
  }
  optimizer.set_lr(scheduler.lr());

  const bool writing = !out_dir.empty();
  std::ofstream metrics_out;
  if (writing) {
    std::filesystem::create_directories(out_dir);
    metrics_out.open(out_dir + "/metrics.txt", resume ? std::ios::app : std::ios::trunc);
  }

  const bool sophia = opt_cfg.kind == OptimizerKind::kSophiaG;
  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    // stateless shuffle per epoch so that resume stays bit-exact
    auto batches =
        make_batches(train_set, cfg.batch_size, cfg.seed * 1000003ULL + epoch, true);
    double loss_sum = 0.0;
    long long token_sum = 0;
    bool diverged = false;
    for (const auto& batch : batches) {
      ForwardCtx ctx{true, &train_rng};
      if (sophia && optimizer.step_count() % opt_cfg.hessian_interval == 0) {
        // Gauss-Newton-Bartlett estimate: labels sampled from the model
        model.parameters().zero_grads();
        Tape tape;
        Tensor ghat_total;
        long long ghat_tokens = 0;
        for (int i = 0; i < batch.frames.dim(0); ++i) {
          Tensor frames = batch_frames_row(batch, i);
          Tensor mask = batch_mask_row(batch, i);
          Tensor enc = model.encode(frames, mask, ctx);
          Tensor logits = model.decode(batch.dec_inputs[i], enc, mask, ctx);
          // sample one label per live position from the model's softmax
          std::vector<int> sampled = batch.labels[i];
          auto ld = logits.data();
          const int v = logits.dim(1);
          for (std::size_t pos = 0; pos < sampled.size(); ++pos) {
            if (sampled[pos] == kPadId) continue;
            const float* row = ld.data() + pos * static_cast<std::size_t>(v);
            double mx = row[0];
            for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double denom = 0.0;
            for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
            double u = train_rng.next_double() * denom;
            int choice = v - 1;
            double acc = 0.0;
            for (int j = 0; j < v; ++j) {
              acc += std::exp(row[j] - mx);
              if (u <= acc) {
                choice = j;
                break;
              }
            }
            sampled[pos] = choice;
          }
          Tensor seq_loss = cross_entropy(logits, sampled, kPadId, 0.0f);
          const int tokens = live_label_count(batch.labels[i]);
          ghat_tokens += tokens;
          Tensor contribution = scale(seq_loss, static_cast<float>(tokens));
          ghat_total =
              ghat_total.defined() ? add(ghat_total, contribution) : contribution;
        }
        Tensor ghat_loss = scale(ghat_total, 1.0f / static_cast<float>(ghat_tokens));
        tape.backward(ghat_loss);
        optimizer.update_hessian(static_cast<double>(batch.frames.dim(0)));
      }

      model.parameters().zero_grads();
      Tape tape;
      Tensor loss = batch_loss(model, batch, cfg.label_smoothing, ctx);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        diverged = true;
        break;
      }
      tape.backward(loss);
      clip_grad_norm(model.parameters(), cfg.grad_clip_norm);
      try {
        optimizer.step();
      } catch (const Error&) {
        diverged = true;
        break;
      }
      long long tokens = 0;
      for (const auto& labels : batch.labels) tokens += live_label_count(labels);
      loss_sum += loss_value * static_cast<double>(tokens);
      token_sum += tokens;
    }
    if (diverged) {
      result.diverged = true;
      break;
    }

    DevScores dev = evaluate_dev(model, dev_set, cfg.decode_max_len);
    const double lr_after = scheduler.step(dev.bleu);
    optimizer.set_lr(lr_after);

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(std::max<long long>(1, token_sum));
    record.dev_bleu4 = dev.bleu;
    record.dev_rouge_l = dev.rouge;
    record.lr = lr_after;
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (metrics_out.is_open()) {
      metrics_out << "epoch=" << record.epoch << " train_loss=" << record.train_loss
                  << " dev_bleu4=" << record.dev_bleu4
                  << " dev_rouge_l=" << record.dev_rouge_l << " lr=" << record.lr
                  << "\n";
      metrics_out.flush();
    }

    const bool improved = dev.bleu > best_bleu;
    if (improved) {
      best_bleu = dev.bleu;
      result.best_epoch = epoch;
      result.best_dev_bleu4 = dev.bleu;
    }
    if (writing) {
      Checkpoint ck = snapshot(model, optimizer, scheduler, epoch, best_bleu, train_rng);
      save_checkpoint(out_dir + "/last.sgck", ck);
      if (improved) save_checkpoint(out_dir + "/best.sgck", ck);
    }
    if (cfg.stop_at_dev_bleu >= 0.0 && best_bleu >= cfg.stop_at_dev_bleu) break;
  }
  if (result.best_epoch < 0 && !result.history.empty()) {
    result.best_epoch = 1;
    result.best_dev_bleu4 = result.history[0].dev_bleu4;
  }
  return result;
}

}  // namespace signformer
