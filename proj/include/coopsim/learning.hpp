#pragma once

#include <array>

#include "coopsim/episode.hpp"
#include "coopsim/parallel.hpp"

namespace coopsim {

// Behavior cloning and DAgger against the privileged expert. Training
// re-encodes the stored raw scans with the current parameters, so control
// supervision reaches the sender encoders.

struct DatasetFrame {
  PointCloud ego_scan;  // sensor frame, raw
  Pose ego_pose;
  double ego_speed = 0.0;
  std::vector<PointCloud> neighbor_scans;  // delivered senders' raw scans
  std::vector<Pose> neighbor_poses;
  Action expert;  // relabel target: always the expert's action at this state
  bool accident = false;
  uint32_t trace_id = 0;
};

class Dataset {
 public:
  // Subsamples every `stride`-th frame of the trace. The stored action is
  // the expert's, never the executed (possibly mixed) one.
  void append_trace(const TraceRecord& trace, uint32_t trace_id, size_t stride = 1) {
    bool accident = trace.header.value("/scenario/accident_enabled"_json_pointer, false);
    for (size_t i = 0; i < trace.frames.size(); i += std::max<size_t>(1, stride)) {
      const TraceFrame& fr = trace.frames[i];
      if (fr.clouds.empty()) continue;
      DatasetFrame f;
      f.ego_scan = fr.clouds[0];
      f.expert = fr.expert;
      f.expert.validate();
      if (!std::isfinite(f.expert.throttle) || !std::isfinite(f.expert.brake) || !std::isfinite(f.expert.steer))
        throw std::invalid_argument("Dataset: non-finite expert action");
      f.accident = accident;
      f.trace_id = trace_id;
      std::map<VehicleId, std::pair<Pose, double>> poses;
      for (const TraceVehicle& tv : fr.vehicles) poses[tv.id] = {tv.pose, tv.speed};
      auto ego_it = poses.find(f.ego_scan.frame);
      if (ego_it == poses.end()) throw std::invalid_argument("Dataset: trace frame missing ego pose");
      f.ego_pose = ego_it->second.first;
      f.ego_speed = ego_it->second.second;
      for (size_t c = 1; c < fr.clouds.size(); ++c) {
        auto it = poses.find(fr.clouds[c].frame);
        if (it == poses.end()) throw std::invalid_argument("Dataset: trace frame missing sender pose");
        f.neighbor_scans.push_back(fr.clouds[c]);
        f.neighbor_poses.push_back(it->second.first);
      }
      frames_.push_back(std::move(f));
    }
  }

  const std::vector<DatasetFrame>& frames() const { return frames_; }
  size_t size() const { return frames_.size(); }
  size_t accident_frames() const {
    size_t n = 0;
    for (const DatasetFrame& f : frames_) n += f.accident ? 1 : 0;
    return n;
  }

 private:
  std::vector<DatasetFrame> frames_;
};

struct TrainConfig {
  std::array<double, 3> eta = {1.0, 1.0, 1.0};  // throttle, brake, steer loss weights
  double beta0 = 0.8;
  size_t dagger_rounds = 4;
  size_t trajectories_per_round = 4;
  size_t epochs_per_round = 5;
  double accident_fraction = 0.25;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // per-step multiplicative decay
  size_t batch_size = 4;
  uint64_t rng_seed = 7;
  size_t bc_epochs = 8;
  size_t steps_per_epoch = 40;  // desk-scale epoch cap
  size_t frame_stride = 2;
  size_t jobs = 1;

  void validate() const {
    if (beta0 <= 0.0 || beta0 > 1.0) throw std::invalid_argument("TrainConfig: beta0 outside (0,1]");
    if (accident_fraction < 0.0 || accident_fraction > 1.0)
      throw std::invalid_argument("TrainConfig: accident_fraction outside [0,1]");
    if (batch_size == 0 || learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: bad optimizer params");
  }
};

// Weighted L1 between predicted and expert actions (Eq. control loss):
// eta1*|T-T*| + eta2*|B-B*| + eta3*|S-S*|.
inline Tensor control_loss(const Tensor& pred, const Action& expert, const std::array<double, 3>& eta) {
  expert.validate();
  Tensor target = Tensor::from_data({3}, {expert.throttle, expert.brake, expert.steer});
  Tensor weights = Tensor::from_data({3}, {eta[0], eta[1], eta[2]});
  return sum(mul(weights, abs_val(sub(pred, target))));
}

inline double control_loss(const Action& pred, const Action& expert, const std::array<double, 3>& eta) {
  pred.validate();
  Tensor p = Tensor::from_data({3}, {pred.throttle, pred.brake, pred.steer});
  return control_loss(p, expert, eta).value();
}

// Exponentially decreasing mixing schedule: round 0 executes beta0 itself,
// beta_i = beta0^(i+1).
inline double dagger_beta(size_t round_index, double beta0) {
  if (beta0 <= 0.0 || beta0 > 1.0) throw std::invalid_argument("dagger_beta: beta0 outside (0,1]");
  return std::pow(beta0, static_cast<double>(round_index) + 1.0);
}

// Adaptive-moment SGD. Moments are keyed by parameter name, so the state
// survives checkpointing boundaries only within one trainer instance.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double lr_decay = 1.0, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), lr_decay_(lr_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, double grad_scale = 1.0) {
    if (t_ > 0) lr_ *= lr_decay_;
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      p.ensure_grad();
      auto& [m, v] = moments_[name];
      if (m.size() != p.numel()) {
        m.assign(p.numel(), 0.0);
        v.assign(p.numel(), 0.0);
      }
      const std::vector<double>& g = p.grad();
      std::vector<double>& data = p.data();
      for (size_t i = 0; i < data.size(); ++i) {
        double gi = g[i] * grad_scale;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        data[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// Differentiable forward for one stored frame, re-encoding neighbor scans
// with the current parameters (the full end-to-end training path).
inline Tensor training_forward(const LearnedPolicy& policy, const DatasetFrame& f) {
  const PolicyConfig& cfg = policy.config();
  switch (cfg.kind) {
    case PolicyKind::no_v2v:
      return policy.forward(f.ego_scan, f.ego_speed, f.ego_pose, {});
    case PolicyKind::early_fusion:
      return policy.forward_early_fusion(f.ego_scan, f.ego_speed, f.ego_pose, f.neighbor_scans,
                                         f.neighbor_poses);
    default: {
      std::vector<std::pair<Representation, Pose>> reps;
      reps.reserve(f.neighbor_scans.size());
      for (size_t i = 0; i < f.neighbor_scans.size(); ++i) {
        PointCloud input = preprocess_scan(f.neighbor_scans[i], cfg);
        reps.push_back({encode(input, cfg.encoder, policy.params().enc), f.neighbor_poses[i]});
      }
      return policy.forward(f.ego_scan, f.ego_speed, f.ego_pose, reps);
    }
  }
}

struct TrainLog {
  std::vector<double> epoch_loss;            // mean batch loss per epoch
  std::vector<double> round_beta;            // DAgger only
  std::vector<size_t> round_dataset_frames;  // DAgger only
};

// Mini-batch behavior cloning. Deterministic given the seed: batches are
// drawn from one rng stream and updates run on a single thread.
inline TrainLog train_bc(const Dataset& dataset, LearnedPolicy& policy, const TrainConfig& cfg,
                         AdamOptimizer& opt, size_t epochs, const char* stream_label = "bc") {
  cfg.validate();
  if (dataset.size() == 0) throw std::invalid_argument("train_bc: empty dataset");
  Rng rng(derive_seed(cfg.rng_seed, stream_label));
  TrainLog log;
  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    double epoch_sum = 0.0;
    size_t steps = std::max<size_t>(1, cfg.steps_per_epoch);
    for (size_t step = 0; step < steps; ++step) {
      policy.store().zero_grads();
      double batch_loss = 0.0;
      for (size_t b = 0; b < cfg.batch_size; ++b) {
        const DatasetFrame& f = dataset.frames()[rng.below(dataset.size())];
        Tape tape;
        TapeScope scope(&tape);
        Tensor loss = control_loss(training_forward(policy, f), f.expert, cfg.eta);
        tape.backward(loss);
        batch_loss += loss.value();
      }
      if (!std::isfinite(batch_loss)) throw std::runtime_error("train_bc: non-finite loss");
      opt.step(policy.store(), 1.0 / static_cast<double>(cfg.batch_size));
      epoch_sum += batch_loss / static_cast<double>(cfg.batch_size);
    }
    log.epoch_loss.push_back(epoch_sum / static_cast<double>(steps));
  }
  return log;
}

inline TrainLog train_bc(const Dataset& dataset, LearnedPolicy& policy, const TrainConfig& cfg) {
  AdamOptimizer opt(cfg.learning_rate, cfg.lr_decay);
  return train_bc(dataset, policy, cfg, opt, cfg.bc_epochs);
}

// Deterministic accident/normal episode mix: the first round(fraction*n)
// indices are accident-enabled.
inline bool accident_slot(size_t index, size_t total, double fraction) {
  size_t accident_count = static_cast<size_t>(std::llround(fraction * static_cast<double>(total)));
  return index < accident_count;
}

// Randomized scenario configuration for data collection.
inline ScenarioConfig sample_scenario(ScenarioKind kind, bool accident, Rng& rng) {
  ScenarioConfig s;
  s.kind = kind;
  s.seed = rng.next_u64();
  s.background_seed = rng.next_u64();
  s.traffic_density = 2 + rng.below(5);
  s.spawn_jitter = rng.uniform(0.0, 2.0);
  s.collider_speed = rng.uniform(5.0, kind == ScenarioKind::overtaking ? 6.5 : 7.0);
  s.accident_enabled = accident;
  return s;
}

// Expert-driven collection for the initial behavior-cloning set.
inline std::vector<TraceRecord> collect_expert_traces(const EpisodeConfig& episode_template,
                                                      ScenarioKind kind, size_t count,
                                                      double accident_fraction, uint64_t seed,
                                                      size_t jobs = 1) {
  std::vector<ScenarioConfig> scenarios(count);
  Rng rng(derive_seed(seed, "collect"));
  for (size_t i = 0; i < count; ++i) scenarios[i] = sample_scenario(kind, accident_slot(i, count, accident_fraction), rng);
  std::vector<TraceRecord> traces(count);
  parallel_for(count, jobs, [&](size_t i) {
    EpisodeConfig cfg = episode_template;
    cfg.scenario = scenarios[i];
    cfg.episode_index = i;
    traces[i] = run_episode(cfg);
  });
  return traces;
}

// DAgger: rounds of {collect with the beta-mixed policy, relabel with the
// expert, append, train}. The policy must arrive warm-started (the final
// behavior-cloning policy is the round-0 student).
inline TrainLog dagger_train(LearnedPolicy& policy, Dataset& dataset, const EpisodeConfig& episode_template,
                             ScenarioKind kind, const TrainConfig& cfg) {
  cfg.validate();
  AdamOptimizer opt(cfg.learning_rate, cfg.lr_decay);
  Rng scenario_rng(derive_seed(cfg.rng_seed, "dagger-scenarios"));
  TrainLog log;
  uint32_t trace_id = 1u << 16;
  for (size_t round = 0; round < cfg.dagger_rounds; ++round) {
    double beta = dagger_beta(round, cfg.beta0);
    log.round_beta.push_back(beta);
    std::vector<ScenarioConfig> scenarios(cfg.trajectories_per_round);
    for (size_t i = 0; i < scenarios.size(); ++i)
      scenarios[i] = sample_scenario(kind, accident_slot(i, scenarios.size(), cfg.accident_fraction),
                                     scenario_rng);
    std::vector<TraceRecord> traces(scenarios.size());
    parallel_for(scenarios.size(), cfg.jobs, [&](size_t i) {
      EpisodeConfig ecfg = episode_template;
      ecfg.scenario = scenarios[i];
      ecfg.beta = beta;
      ecfg.episode_index = round * 1000 + i;
      traces[i] = run_episode(ecfg, &policy);
    });
    for (size_t i = 0; i < traces.size(); ++i) dataset.append_trace(traces[i], trace_id++, cfg.frame_stride);
    log.round_dataset_frames.push_back(dataset.size());
    TrainLog round_log = train_bc(dataset, policy, cfg, opt, cfg.epochs_per_round,
                                  ("dagger-round" + std::to_string(round)).c_str());
    log.epoch_loss.insert(log.epoch_loss.end(), round_log.epoch_loss.begin(), round_log.epoch_loss.end());
  }
  return log;
}

}  // namespace coopsim
