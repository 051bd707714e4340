#pragma once

#include <atomic>
#include <cmath>
#include <memory>
#include <thread>
#include <vector>

#include "relmatch/readout.hpp"

namespace relmatch {

// ---------------------------------------------------------------------------
// Labels and plain-number losses.
// ---------------------------------------------------------------------------

// Proposal used as the grounding target: maximum IoU with the true box,
// ties toward the lower index.
inline std::pair<int, double> grounding_label(const VisualScene& scene, const Box& gt) {
  if (scene.proposals.empty()) throw Error("grounding_label: empty scene");
  int best = 0;
  double best_iou = iou(scene.proposals[0].box, gt);
  for (int i = 1; i < scene.proposal_count(); ++i) {
    const double v = iou(scene.proposals[static_cast<std::size_t>(i)].box, gt);
    if (v > best_iou) {
      best = i;
      best_iou = v;
    }
  }
  return {best, best_iou};
}

inline double smooth_l1(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  if (pred.size() != target.size()) throw DimensionMismatch("smooth_l1: size mismatch");
  double total = 0.0;
  for (int i = 0; i < pred.size(); ++i) {
    const double x = std::abs(pred(i) - target(i));
    total += x < 1.0 ? 0.5 * x * x : x - 0.5;
  }
  return total;
}

struct LossBundle {
  double l_grd = 0.0;
  double l_match = 0.0;
  double l_reg = 0.0;
  double total = 0.0;
  double mu = 3.0;
  double omega = 1.0;
  bool reg_active = false;
};

// Everything compute_losses needs from a forward pass, as plain numbers.
struct ModelOutputs {
  Eigen::VectorXd p_grd;  // softmax of the root belief (matched samples)
  int grounding_index = -1;
  double label_iou = 0.0;
  double p_match = 0.5;
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd delta_star = Eigen::VectorXd::Zero(4);
};

// L = L_grd + mu * L_match + omega * L_reg. Mismatched samples contribute the
// match term only; the regression term needs the labeled proposal to reach
// 0.5 IoU.
inline LossBundle compute_losses(const Sample& s, const ModelOutputs& out, double mu = 3.0,
                                 double omega = 1.0) {
  LossBundle b;
  b.mu = mu;
  b.omega = omega;
  if (s.y == 1) {
    b.l_grd = -std::log(std::max(out.p_grd(out.grounding_index), 1e-300));
    if (out.label_iou >= 0.5) {
      b.l_reg = smooth_l1(out.delta, out.delta_star);
      b.reg_active = true;
    }
  }
  const double p = std::clamp(out.p_match, 1e-12, 1.0 - 1e-12);
  b.l_match = s.y == 1 ? -std::log(p) : -std::log(1.0 - p);
  b.total = b.l_grd + mu * b.l_match + (b.reg_active ? omega * b.l_reg : 0.0);
  return b;
}

// ---------------------------------------------------------------------------
// Differentiable per-sample loss.
// ---------------------------------------------------------------------------

struct SampleLoss {
  Var total;  // invalid when the sample contributes nothing in this stage
  LossBundle parts;
};

inline Eigen::Vector4d regression_target(const Box& proposal, const Box& gt) {
  return {gt.x - proposal.x, gt.y - proposal.y, gt.w - proposal.w, gt.h - proposal.h};
}

// stage 0: grounding warmup only; stage 1: full multitask objective.
inline SampleLoss build_sample_loss(Tape& t, SampleForward& fw, const Sample& s, int stage,
                                    double mu, double omega) {
  SampleLoss out;
  out.parts.mu = mu;
  out.parts.omega = omega;
  std::vector<Var> terms;

  if (s.y == 1 && fw.grounding) {
    const auto [label, label_iou] = grounding_label(s.scene, *s.referent_box);
    const auto& root = fw.grounding->root_belief(fw.tree);
    Var logits = ad::scale(root.values, t.param(*fw.model->grd_temp));
    Var ce = ad::sub(ad::logsumexp(logits), ad::pick(logits, label));
    out.parts.l_grd = ce.scalar();
    terms.push_back(ce);

    if (stage >= 1 && label_iou >= 0.5) {
      auto refine = refine_box(fw, label);
      const Eigen::Vector4d target = regression_target(s.scene.proposals[label].box,
                                                       *s.referent_box);
      Var diff = ad::sub(refine.delta_var, t.constant(target));
      Var reg = ad::smooth_l1(diff);
      out.parts.l_reg = reg.scalar();
      out.parts.reg_active = true;
      terms.push_back(ad::affine(reg, omega, 0.0));
    }
  }

  if (stage >= 1 && fw.matching.has_value()) {
    Var match = ad::bce(fw.p_match, s.y == 1 ? 1.0 : 0.0);
    out.parts.l_match = match.scalar();
    terms.push_back(ad::affine(match, mu, 0.0));
  }

  for (const auto& term : terms)
    out.total = out.total.valid() ? ad::add(out.total, term) : term;
  if (out.total.valid())
    out.parts.total = out.total.scalar();
  return out;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  double mu = 3.0;
  double omega = 1.0;
  double lr_reasoning = 5e-4;
  double lr_encoder = 5e-4;
  int batch_size = 32;
  int iterations = 5000;
  double warmup_fraction = 0.1;  // grounding-only warmup share
  std::uint64_t seed = 1;
  int threads = 4;
  int log_every = 50;

  nlohmann::ordered_json serialize() const {
    return {{"model", model.serialize()},
            {"mu", mu},
            {"omega", omega},
            {"lr_reasoning", lr_reasoning},
            {"lr_encoder", lr_encoder},
            {"batch_size", batch_size},
            {"iterations", iterations},
            {"warmup_fraction", warmup_fraction},
            {"seed", seed},
            {"threads", threads},
            {"log_every", log_every}};
  }
  static TrainConfig deserialize(const json& j) {
    TrainConfig c;
    if (j.contains("model")) c.model = ModelConfig::deserialize(j.at("model"));
    c.mu = j.value("mu", c.mu);
    c.omega = j.value("omega", c.omega);
    c.lr_reasoning = j.value("lr_reasoning", c.lr_reasoning);
    c.lr_encoder = j.value("lr_encoder", c.lr_encoder);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.log_every = j.value("log_every", c.log_every);
    return c;
  }
};

struct TrainLogEntry {
  int iteration = 0;
  int stage = 0;
  double loss = 0.0;
  double l_grd = 0.0;
  double l_match = 0.0;
  double l_reg = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogEntry> log;  // one entry per iteration
  double final_loss = 0.0;
};

inline TrainResult train(const std::vector<Sample>& data, TrainConfig cfg,
                         const TokenEncoder* encoder_override = nullptr,
                         std::ostream* progress = nullptr) {
  if (data.empty()) throw EmptyDataset("train: no samples");

  // Fit structural config fields to the corpus.
  int max_props = 0;
  for (const auto& s : data) max_props = std::max(max_props, s.scene.proposal_count());
  if (max_props > cfg.model.max_proposals) cfg.model.max_proposals = max_props;
  if (!data[0].scene.proposals.empty())
    cfg.model.appearance_dim = static_cast<int>(data[0].scene.proposals[0].feat.size());

  Vocabulary vocab = Vocabulary::build(data);
  TrainResult result{Model::create(cfg.model, vocab, cfg.seed), {}, 0.0};
  Model& model = result.model;

  TableEncoder default_encoder;
  const TokenEncoder& encoder = encoder_override ? *encoder_override : default_encoder;

  ad::Adam opt(ad::AdamConfig{{cfg.lr_reasoning, cfg.lr_encoder}, 0.9, 0.999, 1e-8});
  Rng rng(cfg.seed ^ 0x5eedf00dULL);
  const int warmup = static_cast<int>(std::lround(cfg.warmup_fraction * cfg.iterations));

  std::vector<int> pool(data.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::size_t pool_pos = pool.size();  // trigger shuffle on first use

  const int threads = std::max(1, std::min(cfg.threads, cfg.batch_size));
  std::vector<std::vector<ad::Mat>> thread_grads(
      static_cast<std::size_t>(threads), std::vector<ad::Mat>(model.params.count()));
  std::vector<ad::Mat> grads(model.params.count());

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const int stage = iter < warmup ? 0 : 1;

    std::vector<int> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (pool_pos == pool.size()) {
        rng.shuffle(pool);
        pool_pos = 0;
      }
      batch.push_back(pool[pool_pos++]);
    }

    std::vector<LossBundle> bundles(batch.size());
    auto worker = [&](int tid) {
      auto& sink = thread_grads[static_cast<std::size_t>(tid)];
      for (std::size_t k = static_cast<std::size_t>(tid); k < batch.size();
           k += static_cast<std::size_t>(threads)) {
        const Sample& s = data[static_cast<std::size_t>(batch[k])];
        const bool need_grounding = s.y == 1;
        const bool need_matching = stage >= 1;
        if (!need_grounding && !need_matching) continue;
        Tape t;
        ForwardRequest req;
        req.grounding = need_grounding;
        req.matching = need_matching;
        SampleForward fw = run_forward(t, model, encoder, s, req);
        SampleLoss loss = build_sample_loss(t, fw, s, stage, cfg.mu, cfg.omega);
        bundles[k] = loss.parts;
        if (!loss.total.valid()) continue;
        t.backward(loss.total);
        t.add_param_grads(sink, 1.0 / static_cast<double>(batch.size()));
      }
    };

    if (threads == 1) {
      worker(0);
    } else {
      std::vector<std::thread> ts;
      for (int tid = 0; tid < threads; ++tid) ts.emplace_back(worker, tid);
      for (auto& th : ts) th.join();
    }

    // Deterministic merge in thread order.
    for (auto& sink : thread_grads)
      for (std::size_t p = 0; p < sink.size(); ++p) {
        if (sink[p].size() == 0) continue;
        if (grads[p].size() == 0)
          grads[p] = sink[p];
        else
          grads[p] += sink[p];
        sink[p].resize(0, 0);
      }
    opt.step(model.params, grads);

    TrainLogEntry entry;
    entry.iteration = iter;
    entry.stage = stage;
    for (const auto& b : bundles) {
      entry.loss += b.total;
      entry.l_grd += b.l_grd;
      entry.l_match += b.l_match;
      entry.l_reg += b.l_reg;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    entry.loss *= inv;
    entry.l_grd *= inv;
    entry.l_match *= inv;
    entry.l_reg *= inv;
    result.log.push_back(entry);
    result.final_loss = entry.loss;

    if (progress && cfg.log_every > 0 && (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations))
      (*progress) << "iter " << iter << " stage " << stage << " loss " << entry.loss
                  << " grd " << entry.l_grd << " match " << entry.l_match << " reg "
                  << entry.l_reg << "\n";
  }
  return result;
}

inline void write_train_log(const std::string& path, const TrainConfig& cfg,
                            const std::vector<TrainLogEntry>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write training log " + path);
  ordered_json header;
  header["config"] = cfg.serialize();
  out << header.dump() << "\n";
  for (const auto& e : log) {
    ordered_json j = {{"iteration", e.iteration}, {"stage", e.stage},     {"loss", e.loss},
                      {"l_grd", e.l_grd},         {"l_match", e.l_match}, {"l_reg", e.l_reg}};
    out << j.dump() << "\n";
  }
}

}  // namespace relmatch
