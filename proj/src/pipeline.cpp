#include "tlkf/pipeline.hpp"

#include <chrono>
#include <cmath>

namespace tlkf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double order_average(const Mat& m) { return m.trace() / static_cast<double>(m.rows()); }

}  // namespace

const char* method_name(MethodKind kind) {
  switch (kind) {
    case MethodKind::KF: return "KF";
    case MethodKind::EM_KF: return "EM_KF";
    case MethodKind::LSTM_KF: return "LSTM_KF";
    case MethodKind::TRANSFORMER_KF: return "TRANSFORMER_KF";
    case MethodKind::TL_KF: return "TL_KF";
  }
  return "?";
}

std::optional<MethodKind> parse_method(const std::string& name) {
  for (MethodKind k : kAllMethods) {
    if (name == method_name(k)) return k;
  }
  return std::nullopt;
}

nlohmann::json method_report_to_json(const MethodReport& r) {
  nlohmann::json j = {{"method", method_name(r.method)},
                      {"seed", r.seed},
                      {"ok", r.ok()}};
  if (!r.ok()) {
    j["error"] = r.error;
    return j;
  }
  j["fitted"] = model_to_json(r.fitted);
  j["sigma_q2"] = r.sigma_q2;
  j["sigma_r2"] = r.sigma_r2;
  j["m_a"] = r.m_a;
  j["sigma_p2"] = r.sigma_p2;
  j["filter_mse"] = r.filter_mse;
  j["smoother_mse"] = r.smoother_mse;
  j["training_seconds"] = r.training_seconds;
  j["em_seconds"] = r.em_seconds;
  return j;
}

double displacement_mse(const std::vector<Vec>& estimates, const Trajectory& truth) {
  if (estimates.size() != truth.states.size()) {
    throw std::invalid_argument("displacement_mse: " + std::to_string(estimates.size()) +
                                " estimates for " + std::to_string(truth.states.size()) +
                                " states");
  }
  const std::size_t n = truth.states.size() - 1;
  if (n == 0) throw std::invalid_argument("displacement_mse: trajectory has no steps");
  double s = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double e = estimates[k](0) - truth.states[k](0);
    s += e * e;
  }
  return s / static_cast<double>(n);
}

EncodingCache::EncodingCache(const Series& observations, const EncoderConfigs& configs)
    : observations_(observations), configs_(configs) {}

const EncodedSeries& EncodingCache::lstm() {
  if (!lstm_) {
    const auto start = Clock::now();
    const LstmEncoder enc = train_lstm(observations_, configs_.lstm);
    lstm_seconds_ = seconds_since(start);
    lstm_ = lstm_encode(enc, observations_);
  }
  return *lstm_;
}

const EncodedSeries& EncodingCache::transformer() {
  if (!transformer_) {
    const auto start = Clock::now();
    const TransformerEncoder enc = train_transformer(observations_, configs_.transformer);
    transformer_seconds_ = seconds_since(start);
    transformer_ = transformer_encode(enc, observations_);
  }
  return *transformer_;
}

const EncodedSeries& EncodingCache::transformer_lstm() {
  if (!tl_) {
    const EncodedSeries& stage1 = transformer();
    const auto start = Clock::now();
    const LstmEncoder enc = train_lstm(stage1.values, configs_.lstm);
    tl_lstm_seconds_ = seconds_since(start);
    tl_ = lstm_encode(enc, stage1.values);
    tl_->source = EncodingSource::TransformerLstm;
  }
  return *tl_;
}

MethodReport run_method(MethodKind kind, const Trajectory& trajectory,
                        const LinearGaussianModel& init, const EmConfig& em_config,
                        const EncoderConfigs& encoder_configs, EncodingCache* cache) {
  std::optional<EncodingCache> own_cache;
  if (!cache) {
    own_cache.emplace(trajectory.observations, encoder_configs);
    cache = &*own_cache;
  }
  const Series& raw = trajectory.observations;

  MethodReport rep;
  rep.method = kind;
  rep.seed = trajectory.seed;
  rep.fitted = init;
  const Series* filter_input = &raw;

  auto stage = [&](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw StageError(std::string(method_name(kind)) + ": stage '" + name + "' failed: " +
                       e.what());
    }
  };

  if (kind == MethodKind::EM_KF) {
    const auto start = Clock::now();
    rep.fitted = stage("em", [&] { return em_fit(raw, init, em_config).fitted; });
    rep.em_seconds = seconds_since(start);
  } else if (kind != MethodKind::KF) {
    const EncodedSeries* encoded = nullptr;
    stage("encode", [&] {
      switch (kind) {
        case MethodKind::LSTM_KF:
          encoded = &cache->lstm();
          rep.training_seconds = cache->lstm_seconds();
          break;
        case MethodKind::TRANSFORMER_KF:
          encoded = &cache->transformer();
          rep.training_seconds = cache->transformer_seconds();
          break;
        default:
          encoded = &cache->transformer_lstm();
          rep.training_seconds = cache->transformer_lstm_seconds();
          break;
      }
      return 0;
    });

    const auto start = Clock::now();
    EmConfig pass1 = em_config;
    pass1.free_params = ParamSet{ModelParam::R};
    const LinearGaussianModel r_fit = stage("em-observation-noise", [&] {
      return em_fit(raw, init, pass1).fitted;
    });

    LinearGaussianModel pass2_init = init;
    pass2_init.R = r_fit.R;
    EmConfig pass2 = em_config;
    pass2.free_params = ParamSet{ModelParam::Q, ModelParam::M0, ModelParam::P0};
    rep.fitted = stage("em-state-parameters", [&] {
      return em_fit(encoded->values, pass2_init, pass2).fitted;
    });
    rep.em_seconds = seconds_since(start);
    if (encoder_configs.filter_encoded) filter_input = &encoded->values;
  }

  const FilterResult filt = stage("filter", [&] { return kf_filter(rep.fitted, *filter_input); });
  const SmootherResult sm = stage("smoother", [&] { return ks_smooth(rep.fitted, filt); });

  std::vector<Vec> fm;
  std::vector<Vec> smm;
  fm.reserve(filt.filtered.size());
  smm.reserve(sm.smoothed.size());
  for (const auto& b : filt.filtered) {
    fm.push_back(b.mean);
    rep.filtered_displacement.push_back(b.mean(0));
  }
  for (const auto& b : sm.smoothed) {
    smm.push_back(b.mean);
    rep.smoothed_displacement.push_back(b.mean(0));
  }
  rep.filter_mse = displacement_mse(fm, trajectory);
  rep.smoother_mse = displacement_mse(smm, trajectory);
  if (!std::isfinite(rep.filter_mse) || !std::isfinite(rep.smoother_mse)) {
    throw StageError(std::string(method_name(kind)) + ": non-finite MSE");
  }

  rep.sigma_q2 = order_average(rep.fitted.Q);
  rep.sigma_r2 = order_average(rep.fitted.R);
  rep.sigma_p2 = order_average(rep.fitted.P0);
  rep.m_a = rep.fitted.m0(rep.fitted.m0.size() - 1);
  return rep;
}

std::vector<MethodReport> run_suite(const Trajectory& trajectory, const LinearGaussianModel& init,
                                    const SuiteConfig& config, EncodingCache* cache) {
  std::optional<EncodingCache> own_cache;
  if (!cache) {
    own_cache.emplace(trajectory.observations, config.encoders);
    cache = &*own_cache;
  }
  std::vector<MethodReport> out;
  out.reserve(config.methods.size());
  for (MethodKind kind : config.methods) {
    try {
      out.push_back(run_method(kind, trajectory, init, config.em, config.encoders, cache));
    } catch (const std::exception& e) {
      MethodReport failed;
      failed.method = kind;
      failed.seed = trajectory.seed;
      failed.fitted = init;
      failed.error = e.what();
      out.push_back(std::move(failed));
    }
  }
  return out;
}

}  // namespace tlkf
