#include "pasd/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pasd {

void PpoConfig::validate() const {
  if (!(clip > 0.0)) throw ConfigError("clip must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (minibatch_per_env < 1) throw ConfigError("minibatch size must be at least 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(lr_decay_ratio > 0.0)) throw ConfigError("learning-rate decay ratio must be positive");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
}

double entropy_coeff_at(std::int64_t step, std::int64_t total, const PpoConfig& cfg) {
  return linear_schedule(cfg.entropy_start, cfg.entropy_end, step, total);
}

double learning_rate_at(std::int64_t step, std::int64_t total, const PpoConfig& cfg) {
  return linear_schedule(cfg.learning_rate, cfg.learning_rate / cfg.lr_decay_ratio, step, total);
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
              double gamma, double lambda, std::span<const int> dones,
              std::span<const double> discounts) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n || (!discounts.empty() && discounts.size() != n))
    throw ShapeError("gae: length mismatch");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double g = discounts.empty() ? gamma : discounts[k];
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + g * next_value * live - values[k];
    next_adv = delta + g * lambda * live * next_adv;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + values[k];
    next_value = values[k];
  }
  return out;
}

PolicyLoss ppo_policy_loss(std::span<const double> new_lp, std::span<const double> old_lp,
                           std::span<const double> adv, double clip, bool normalize) {
  const std::size_t n = new_lp.size();
  if (old_lp.size() != n || adv.size() != n) throw ShapeError("ppo_policy_loss: length mismatch");
  if (n == 0) throw ConfigError("ppo_policy_loss: empty batch");
  std::vector<double> a(adv.begin(), adv.end());
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(new_lp[i]) || !std::isfinite(old_lp[i]) || !std::isfinite(a[i]))
      throw NumericError("ppo_policy_loss: non-finite input");
  if (normalize && n > 1) {
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : a) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (double& v : a) v = (v - mean) / (sd + 1e-8);
  }
  PolicyLoss out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  int clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double log_ratio = new_lp[i] - old_lp[i];
    const double ratio = std::exp(log_ratio);
    const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double unclipped_obj = ratio * a[i];
    const double clipped_obj = clipped_ratio * a[i];
    out.loss -= std::min(unclipped_obj, clipped_obj);
    if (unclipped_obj <= clipped_obj) out.grad(i) = -ratio * a[i];
    if (std::abs(ratio - 1.0) > clip) ++clipped;
    out.approx_kl += (ratio - 1.0) - log_ratio;
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  out.grad *= inv;
  out.clip_fraction = clipped * inv;
  out.approx_kl *= inv;
  return out;
}

double value_loss(std::span<const double> values, std::span<const double> targets,
                  Eigen::VectorXd* grad) {
  if (values.size() != targets.size()) throw ShapeError("value_loss: length mismatch");
  if (values.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(values.size());
  double loss = 0.0;
  if (grad) grad->resize(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - targets[i];
    loss += d * d * inv;
    if (grad) (*grad)(i) = 2.0 * d * inv;
  }
  return loss;
}

AdvantageSet compute_advantages(const RolloutBatch& batch, const PpoConfig& cfg, double lambda,
                                const HierPolicy* policy) {
  AdvantageSet out;
  out.high.advantages.resize(batch.high.size());
  out.high.returns.resize(batch.high.size());
  out.low.advantages.resize(batch.low.size());
  out.low.returns.resize(batch.low.size());

  std::vector<double> r, v;
  std::vector<int> d;
  std::size_t h = 0;
  for (int k = 0; k < batch.rollouts; ++k) {
    const std::size_t first = h;
    r.clear();
    v.clear();
    while (h < batch.high.size() && batch.high[h].rollout == k) {
      r.push_back(batch.high[h].mixed_reward);
      v.push_back(batch.high[h].value);
      ++h;
    }
    d.assign(r.size(), 0);
    const GaeResult g = gae(r, v, batch.bootstrap_hi[k], cfg.gamma, cfg.gae_lambda, d);
    std::copy(g.advantages.begin(), g.advantages.end(), out.high.advantages.begin() + first);
    std::copy(g.returns.begin(), g.returns.end(), out.high.returns.begin() + first);

    r.clear();
    v.clear();
    for (int t = 0; t < batch.horizon; ++t) {
      const LowStep& ls = batch.low[batch.step_index(k, t)];
      r.push_back(mix_low(ls.reward, ls.intrinsic, lambda, cfg.symmetric_mixing));
      v.push_back(ls.value);
    }
    d.assign(r.size(), 0);
    const GaeResult gl = gae(r, v, batch.bootstrap_lo[k], cfg.gamma, cfg.gae_lambda, d);
    const std::size_t base = static_cast<std::size_t>(batch.step_index(k, 0));
    std::copy(gl.advantages.begin(), gl.advantages.end(), out.low.advantages.begin() + base);
    std::copy(gl.returns.begin(), gl.returns.end(), out.low.returns.begin() + base);
  }

  for (std::size_t i = 0; i < batch.low.size(); ++i)
    if (batch.low[i].has_termination) out.termination_steps.push_back(static_cast<int>(i));
  out.termination.resize(out.termination_steps.size());
  if (cfg.termination_advantage == TerminationAdvantage::kSegment) {
    for (std::size_t q = 0; q < out.termination_steps.size(); ++q) {
      const int i = out.termination_steps[q];
      // The decision at step i ends (or extends) the segment active at i - 1.
      const double a = out.high.advantages[batch.low[i - 1].segment];
      out.termination[q] = batch.low[i].terminate ? -a : a;
    }
  } else {
    if (!policy) throw ConfigError("option-critic termination advantages need the policy");
    for (std::size_t q = 0; q < out.termination_steps.size(); ++q) {
      const int i = out.termination_steps[q];
      const Eigen::VectorXd f = policy->features(batch.obs.col(i));
      const double a =
          policy->value_hi_from(f) - policy->value_lo_from(f, batch.low[i].terminated_skill);
      out.termination[q] = batch.low[i].terminate ? a : -a;
    }
  }
  return out;
}

nlohmann::json UpdateMetrics::to_json() const {
  return {{"policy_loss_hi", policy_loss_hi}, {"policy_loss_lo", policy_loss_lo},
          {"policy_loss_term", policy_loss_term}, {"value_loss_hi", value_loss_hi},
          {"value_loss_lo", value_loss_lo},   {"entropy_hi", entropy_hi},
          {"entropy_lo", entropy_lo},         {"entropy_term", entropy_term},
          {"approx_kl", approx_kl},           {"clip_fraction", clip_fraction},
          {"grad_norm", grad_norm},           {"minibatches", minibatches}};
}

namespace {

void shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

std::vector<int> iota(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::span<const int> chunk(const std::vector<int>& v, int b, int count) {
  const std::size_t lo = v.size() * static_cast<std::size_t>(b) / static_cast<std::size_t>(count);
  const std::size_t hi =
      v.size() * static_cast<std::size_t>(b + 1) / static_cast<std::size_t>(count);
  return std::span<const int>(v.data() + lo, hi - lo);
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& obs, std::span<const int> cols) {
  Eigen::MatrixXd out(obs.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = obs.col(cols[j]);
  return out;
}

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// Policy, value and entropy terms of one categorical head on a minibatch.
struct HeadTerms {
  Eigen::VectorXd d_log_prob;
  Eigen::VectorXd d_entropy;
  Eigen::VectorXd d_value;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

HeadTerms head_terms(const HeadPass& pass, std::span<const double> old_lp,
                     std::span<const double> adv, std::span<const double> returns,
                     const PpoConfig& cfg, double entropy_coeff) {
  HeadTerms t;
  const PolicyLoss pl =
      ppo_policy_loss(as_span(pass.log_probs), old_lp, adv, cfg.clip, cfg.normalize_advantages);
  const double n = static_cast<double>(old_lp.size());
  t.d_log_prob = pl.grad;
  t.d_entropy = Eigen::VectorXd::Constant(pass.log_probs.size(), -entropy_coeff / n);
  t.policy_loss = pl.loss;
  t.clip_fraction = pl.clip_fraction;
  t.approx_kl = pl.approx_kl;
  t.entropy = pass.entropies.mean();
  if (!returns.empty()) {
    Eigen::VectorXd g;
    t.value_loss = value_loss(as_span(pass.values), returns, &g);
    t.d_value = cfg.value_coef * g;
  }
  return t;
}

}  // namespace

UpdateMetrics ppo_update(HierPolicy& policy, const RolloutBatch& batch, const PpoConfig& cfg,
                         double lambda, double entropy_coeff, double learning_rate,
                         std::uint64_t seed) {
  cfg.validate();
  if (batch.low.empty() || batch.high.empty()) throw ConfigError("ppo_update: empty buffers");
  const AdvantageSet adv = compute_advantages(batch, cfg, lambda, &policy);

  std::vector<int> hi_idx = iota(batch.high.size());
  std::vector<int> lo_idx = iota(batch.low.size());
  std::vector<int> te_idx = iota(adv.termination_steps.size());
  const std::size_t per_mb = static_cast<std::size_t>(cfg.minibatch_per_env) * batch.rollouts;
  const int minibatches =
      static_cast<int>(std::max<std::size_t>(1, (batch.low.size() + per_mb - 1) / per_mb));

  UpdateMetrics m;
  int hi_count = 0, te_count = 0;
  std::vector<int> cols, skills, choices;
  std::vector<double> old_lp, a, ret;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    shuffle(hi_idx, rng);
    shuffle(lo_idx, rng);
    shuffle(te_idx, rng);
    for (int b = 0; b < minibatches; ++b) {
      HierGradients grads = policy.zero_gradients();

      const auto hs = chunk(hi_idx, b, minibatches);
      if (!hs.empty()) {
        cols.clear(); skills.clear(); old_lp.clear(); a.clear(); ret.clear();
        for (int j : hs) {
          cols.push_back(batch.high[j].first_step);
          skills.push_back(batch.high[j].skill);
          old_lp.push_back(batch.high[j].log_prob);
          a.push_back(adv.high.advantages[j]);
          ret.push_back(adv.high.returns[j]);
        }
        const HeadPass pass = policy.evaluate_skills(gather(batch.obs, cols), skills);
        const HeadTerms t = head_terms(pass, old_lp, a, ret, cfg, entropy_coeff);
        policy.backward_skills(pass, t.d_log_prob, t.d_entropy, t.d_value, grads);
        m.policy_loss_hi += t.policy_loss;
        m.value_loss_hi += t.value_loss;
        m.entropy_hi += t.entropy;
        ++hi_count;
      }

      const auto ls = chunk(lo_idx, b, minibatches);
      cols.clear(); skills.clear(); choices.clear(); old_lp.clear(); a.clear(); ret.clear();
      for (int j : ls) {
        cols.push_back(j);
        skills.push_back(batch.low[j].skill);
        choices.push_back(batch.low[j].action);
        old_lp.push_back(batch.low[j].log_prob);
        a.push_back(adv.low.advantages[j]);
        ret.push_back(adv.low.returns[j]);
      }
      const HeadPass lpass = policy.evaluate_actions(gather(batch.obs, cols), skills, choices);
      const HeadTerms lt = head_terms(lpass, old_lp, a, ret, cfg, entropy_coeff);
      policy.backward_actions(lpass, lt.d_log_prob, lt.d_entropy, lt.d_value, grads);
      m.policy_loss_lo += lt.policy_loss;
      m.value_loss_lo += lt.value_loss;
      m.entropy_lo += lt.entropy;
      m.clip_fraction += lt.clip_fraction;
      m.approx_kl += lt.approx_kl;

      const auto ts = chunk(te_idx, b, minibatches);
      if (!ts.empty()) {
        cols.clear(); skills.clear(); choices.clear(); old_lp.clear(); a.clear();
        for (int q : ts) {
          const LowStep& st = batch.low[adv.termination_steps[q]];
          cols.push_back(adv.termination_steps[q]);
          skills.push_back(st.terminated_skill);
          choices.push_back(st.terminate);
          old_lp.push_back(st.termination_log_prob);
          a.push_back(adv.termination[q]);
        }
        const HeadPass tpass =
            policy.evaluate_terminations(gather(batch.obs, cols), skills, choices);
        const HeadTerms tt = head_terms(tpass, old_lp, a, {}, cfg, entropy_coeff);
        policy.backward_terminations(tpass, tt.d_log_prob, tt.d_entropy, grads);
        m.policy_loss_term += tt.policy_loss;
        m.entropy_term += tt.entropy;
        ++te_count;
      }

      m.grad_norm += policy.apply_gradients(grads, learning_rate, cfg.max_grad_norm);
      ++m.minibatches;
    }
  }
  const double nb = m.minibatches;
  m.policy_loss_lo /= nb;
  m.value_loss_lo /= nb;
  m.entropy_lo /= nb;
  m.clip_fraction /= nb;
  m.approx_kl /= nb;
  m.grad_norm /= nb;
  if (hi_count) {
    m.policy_loss_hi /= hi_count;
    m.value_loss_hi /= hi_count;
    m.entropy_hi /= hi_count;
  }
  if (te_count) {
    m.policy_loss_term /= te_count;
    m.entropy_term /= te_count;
  }
  return m;
}

UpdateMetrics ppo_update_flat(FlatPolicy& policy, const FlatBatch& batch, const PpoConfig& cfg,
                              double entropy_coeff, double learning_rate, int minibatch_size,
                              std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = batch.actions.size();
  if (n == 0) throw ConfigError("ppo_update_flat: empty batch");
  if (static_cast<std::size_t>(batch.obs.cols()) != n || batch.log_probs.size() != n ||
      batch.advantages.size() != n || batch.returns.size() != n)
    throw ShapeError("ppo_update_flat: batch fields disagree in length");
  const int minibatches = static_cast<int>(
      std::max<std::size_t>(1, (n + static_cast<std::size_t>(minibatch_size) - 1) /
                                   static_cast<std::size_t>(std::max(1, minibatch_size))));
  std::vector<int> idx = iota(n);
  UpdateMetrics m;
  std::vector<int> cols, acts;
  std::vector<double> old_lp, a, ret;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    shuffle(idx, rng);
    for (int b = 0; b < minibatches; ++b) {
      const auto part = chunk(idx, b, minibatches);
      if (part.empty()) continue;
      cols.assign(part.begin(), part.end());
      acts.clear(); old_lp.clear(); a.clear(); ret.clear();
      for (int j : part) {
        acts.push_back(batch.actions[j]);
        old_lp.push_back(batch.log_probs[j]);
        a.push_back(batch.advantages[j]);
        ret.push_back(batch.returns[j]);
      }
      const HeadPass pass = policy.evaluate(gather(batch.obs, cols), acts);
      const HeadTerms t = head_terms(pass, old_lp, a, ret, cfg, entropy_coeff);
      Gradients gb = Gradients::zeros_like(policy.backbone.layers);
      Gradients gp = Gradients::zeros_like(policy.pi.layers);
      Gradients gv = Gradients::zeros_like(policy.v.layers);
      policy.backward(pass, t.d_log_prob, t.d_entropy, t.d_value, gb, gp, gv);
      m.grad_norm += policy.apply_gradients(gb, gp, gv, learning_rate, cfg.max_grad_norm);
      m.policy_loss_lo += t.policy_loss;
      m.value_loss_lo += t.value_loss;
      m.entropy_lo += t.entropy;
      m.clip_fraction += t.clip_fraction;
      m.approx_kl += t.approx_kl;
      ++m.minibatches;
    }
  }
  const double nb = std::max(1, m.minibatches);
  m.policy_loss_lo /= nb;
  m.value_loss_lo /= nb;
  m.entropy_lo /= nb;
  m.clip_fraction /= nb;
  m.approx_kl /= nb;
  m.grad_norm /= nb;
  return m;
}

}  // namespace pasd
