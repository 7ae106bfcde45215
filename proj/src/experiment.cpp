#include "tlkf/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "tlkf/format.hpp"

namespace tlkf {

namespace fs = std::filesystem;

// ---- configuration ---------------------------------------------------------

void ExperimentConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("field '") + field + "' must be positive");
    }
  };
  positive(T, "T");
  positive(true_params.q, "true_q");
  positive(true_params.r, "true_r");
  positive(true_params.p, "true_p");
  positive(init_params.q, "init_q");
  positive(init_params.r, "init_r");
  positive(init_params.p, "init_p");
  if (!std::isfinite(true_params.m_a)) throw ConfigError("field 'true_m_a' must be finite");
  if (!std::isfinite(init_params.m_a)) throw ConfigError("field 'init_m_a' must be finite");
  if (N < lstm.look_back + 2) {
    throw ConfigError("field 'N' must be at least lstm_look_back + 2");
  }
  if (seeds.empty()) throw ConfigError("field 'seeds' must list at least one seed");
  if (methods.empty()) throw ConfigError("field 'methods' must list at least one method");
  if (workers < 0) throw ConfigError("field 'workers' must be >= 0");
  if (profile != "desk" && profile != "paper") {
    throw ConfigError("field 'profile' must be 'desk' or 'paper'");
  }
  try {
    em.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("em settings (em_iters/em_tol): ") + e.what());
  }
  try {
    lstm.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("lstm settings: ") + e.what());
  }
  try {
    transformer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("transformer settings: ") + e.what());
  }
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& v) {
  long long out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("expected a seed, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true/false, got '" + v + "'");
}

struct Key {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define TLKF_DOUBLE(key, field)                                                   \
  Key {                                                                           \
    key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(v); }, \
        [](const ExperimentConfig& c) { return format_double(c.field); }          \
  }
#define TLKF_INT(key, field)                                                                  \
  Key {                                                                                       \
    key,                                                                                      \
        [](ExperimentConfig& c, const std::string& v) {                                       \
          c.field = static_cast<decltype(c.field)>(parse_int(v));                             \
        },                                                                                    \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                     \
  }
#define TLKF_SEED(key, field)                                                       \
  Key {                                                                             \
    key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_u64(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }           \
  }
#define TLKF_BOOL(key, field)                                                        \
  Key {                                                                              \
    key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(v); }, \
        [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); } \
  }

const std::vector<Key>& config_keys() {
  static const std::vector<Key> keys = {
      TLKF_DOUBLE("T", T),
      TLKF_INT("N", N),
      TLKF_DOUBLE("true_q", true_params.q),
      TLKF_DOUBLE("true_r", true_params.r),
      TLKF_DOUBLE("true_m_a", true_params.m_a),
      TLKF_DOUBLE("true_p", true_params.p),
      TLKF_DOUBLE("init_q", init_params.q),
      TLKF_DOUBLE("init_r", init_params.r),
      TLKF_DOUBLE("init_m_a", init_params.m_a),
      TLKF_DOUBLE("init_p", init_params.p),
      TLKF_INT("em_iters", em.max_iter),
      TLKF_DOUBLE("em_tol", em.tol),
      TLKF_BOOL("em_projection", em.structural_projection),
      TLKF_INT("lstm_layers", lstm.layers),
      TLKF_INT("lstm_hidden", lstm.hidden),
      TLKF_INT("lstm_look_back", lstm.look_back),
      TLKF_INT("lstm_epochs", lstm.epochs),
      TLKF_INT("lstm_batch_size", lstm.batch_size),
      TLKF_DOUBLE("lstm_train_fraction", lstm.train_fraction),
      TLKF_DOUBLE("lstm_lr", lstm.adam.lr),
      TLKF_DOUBLE("lstm_clip_norm", lstm.clip_norm),
      TLKF_SEED("lstm_seed", lstm.seed),
      TLKF_INT("transformer_model_dim", transformer.model_dim),
      TLKF_INT("transformer_heads", transformer.heads),
      TLKF_INT("transformer_blocks", transformer.blocks),
      TLKF_INT("transformer_ffn_hidden", transformer.ffn_hidden),
      TLKF_INT("transformer_attn_hidden", transformer.attn_hidden),
      TLKF_DOUBLE("transformer_dropout", transformer.dropout_rate),
      TLKF_INT("transformer_epochs", transformer.epochs),
      TLKF_DOUBLE("transformer_train_fraction", transformer.train_fraction),
      TLKF_DOUBLE("transformer_lr", transformer.adam.lr),
      TLKF_DOUBLE("transformer_clip_norm", transformer.clip_norm),
      TLKF_SEED("transformer_seed", transformer.seed),
      Key{"adam_beta1",
          [](ExperimentConfig& c, const std::string& v) {
            c.lstm.adam.beta1 = c.transformer.adam.beta1 = parse_double(v);
          },
          [](const ExperimentConfig& c) { return format_double(c.lstm.adam.beta1); }},
      Key{"adam_beta2",
          [](ExperimentConfig& c, const std::string& v) {
            c.lstm.adam.beta2 = c.transformer.adam.beta2 = parse_double(v);
          },
          [](const ExperimentConfig& c) { return format_double(c.lstm.adam.beta2); }},
      Key{"adam_eps",
          [](ExperimentConfig& c, const std::string& v) {
            c.lstm.adam.eps = c.transformer.adam.eps = parse_double(v);
          },
          [](const ExperimentConfig& c) { return format_double(c.lstm.adam.eps); }},
      Key{"seeds",
          [](ExperimentConfig& c, const std::string& v) {
            c.seeds.clear();
            for (const auto& s : split_list(v)) c.seeds.push_back(parse_u64(s));
          },
          [](const ExperimentConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < c.seeds.size(); ++i) {
              if (i) out += ',';
              out += std::to_string(c.seeds[i]);
            }
            return out;
          }},
      Key{"methods",
          [](ExperimentConfig& c, const std::string& v) {
            c.methods.clear();
            for (const auto& s : split_list(v)) {
              auto m = parse_method(s);
              if (!m) throw std::invalid_argument("unknown method '" + s + "'");
              if (std::find(c.methods.begin(), c.methods.end(), *m) == c.methods.end()) {
                c.methods.push_back(*m);
              }
            }
          },
          [](const ExperimentConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < c.methods.size(); ++i) {
              if (i) out += ',';
              out += method_name(c.methods[i]);
            }
            return out;
          }},
      TLKF_BOOL("filter_encoded", filter_encoded),
      TLKF_BOOL("robustness_sweep", robustness_sweep),
      TLKF_INT("workers", workers),
      Key{"output_dir",
          [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
          [](const ExperimentConfig& c) { return c.output_dir; }},
  };
  return keys;
}

#undef TLKF_DOUBLE
#undef TLKF_INT
#undef TLKF_SEED
#undef TLKF_BOOL

const Key* find_key(const std::string& name) {
  for (const Key& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

void apply_profile(ExperimentConfig& c, const std::string& profile) {
  if (profile == "desk") {
    c.transformer.model_dim = TransformerConfig::desk().model_dim;
    c.transformer.epochs = TransformerConfig::desk().epochs;
  } else if (profile == "paper") {
    c.transformer.model_dim = TransformerConfig::paper().model_dim;
    c.transformer.epochs = TransformerConfig::paper().epochs;
  } else {
    throw std::invalid_argument("expected 'desk' or 'paper', got '" + profile + "'");
  }
  c.profile = profile;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source,
                              const std::map<std::string, std::string>& overrides) {
  struct Entry {
    std::string value;
    std::string where;
  };
  std::vector<std::pair<std::string, Entry>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (key != "profile" && !find_key(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    entries.emplace_back(std::move(key), Entry{std::move(value), where});
  }
  for (const auto& [key, value] : overrides) {
    if (key != "profile" && !find_key(key)) throw ConfigError("override: unknown key '" + key + "'");
    entries.emplace_back(key, Entry{value, "override '" + key + "'"});
  }

  ExperimentConfig cfg;
  // The profile goes first so explicit transformer keys can refine it.
  for (const auto& [key, e] : entries) {
    if (key != "profile") continue;
    try {
      apply_profile(cfg, e.value);
    } catch (const std::exception& ex) {
      throw ConfigError(e.where + ": field 'profile': " + ex.what());
    }
  }
  for (const auto& [key, e] : entries) {
    if (key == "profile") continue;
    try {
      find_key(key)->set(cfg, e.value);
    } catch (const std::exception& ex) {
      throw ConfigError(e.where + ": field '" + key + "': " + ex.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path,
                             const std::map<std::string, std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), overrides);
}

std::string format_config(const ExperimentConfig& config) {
  std::ostringstream os;
  os << "profile = " << config.profile << '\n';
  for (const Key& k : config_keys()) os << k.name << " = " << k.get(config) << '\n';
  return os.str();
}

// ---- orchestration -----------------------------------------------------------

LinearGaussianModel true_model(const ExperimentConfig& c) {
  return robot_model(c.T, c.true_params.q, c.true_params.r, c.true_params.m_a, c.true_params.p);
}

LinearGaussianModel initial_model(const ExperimentConfig& c, double m_a, double p) {
  return robot_model(c.T, c.init_params.q, c.init_params.r, m_a, p);
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool has_method(const ExperimentConfig& c, MethodKind k) {
  return std::find(c.methods.begin(), c.methods.end(), k) != c.methods.end();
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  out.trajectory = simulate(true_model(config), config.N, seed);

  SuiteConfig suite;
  suite.em = config.em;
  suite.encoders.lstm = config.lstm;
  suite.encoders.transformer = config.transformer;
  suite.encoders.lstm.seed = mix_seed(config.lstm.seed, seed);
  suite.encoders.transformer.seed = mix_seed(config.transformer.seed, seed);
  suite.encoders.filter_encoded = config.filter_encoded;
  suite.methods = config.methods;

  EncodingCache cache(out.trajectory.observations, suite.encoders);
  const LinearGaussianModel init =
      initial_model(config, config.init_params.m_a, config.init_params.p);
  out.reports = run_suite(out.trajectory, init, suite, &cache);

  if (config.robustness_sweep) {
    SuiteConfig sweep = suite;
    sweep.methods.clear();
    for (MethodKind k : {MethodKind::EM_KF, MethodKind::TL_KF}) {
      if (has_method(config, k)) sweep.methods.push_back(k);
    }
    if (!sweep.methods.empty()) {
      for (const auto& [m_a, p] : kRobustnessSettings) {
        out.sweep.push_back(run_suite(out.trajectory, initial_model(config, m_a, p), sweep, &cache));
      }
    }
  }
  return out;
}

namespace {

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

Stat summarize(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return {std::nan(""), std::nan("")};
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double v = 0.0;
    for (double x : xs) v += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(v / static_cast<double>(xs.size() - 1));
  }
  return s;
}

double median(std::vector<double> xs) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::string cell(const Stat& s) { return format_double(s.mean) + "," + format_double(s.std); }

template <class F>
std::vector<double> collect(const std::vector<const MethodReport*>& reps, F f) {
  std::vector<double> out;
  for (const MethodReport* r : reps) out.push_back(f(*r));
  return out;
}

std::vector<const MethodReport*> successful(const std::vector<SeedResult>& results, MethodKind k,
                                            int sweep_index = -1) {
  std::vector<const MethodReport*> out;
  for (const auto& sr : results) {
    const auto& reps = sweep_index < 0 ? sr.reports : sr.sweep.at(sweep_index);
    for (const auto& r : reps) {
      if (r.method == k && r.ok()) out.push_back(&r);
    }
  }
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace

int run_experiment(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  write_file(dir / "config.resolved.txt", format_config(config));

  // Seeds fan out to workers; results land in seed order.
  const std::size_t n_seeds = config.seeds.size();
  std::vector<SeedResult> results(n_seeds);
  std::vector<std::string> failures;
  std::mutex mu;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers =
      std::min<std::size_t>(n_seeds, config.workers > 0 ? static_cast<std::size_t>(config.workers) : hw);
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= n_seeds) return;
        i = next++;
      }
      try {
        SeedResult r = run_seed(config, config.seeds[i]);
        std::lock_guard<std::mutex> lock(mu);
        log << "seed " << config.seeds[i] << " done\n";
        results[i] = std::move(r);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        failures.push_back("seed " + std::to_string(config.seeds[i]) + ": " + e.what());
        results[i].seed = config.seeds[i];
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& sr : results) {
    for (const auto& r : sr.reports) {
      if (!r.ok()) failures.push_back("seed " + std::to_string(sr.seed) + ": " + r.error);
    }
    for (const auto& group : sr.sweep) {
      for (const auto& r : group) {
        if (!r.ok()) failures.push_back("seed " + std::to_string(sr.seed) + " sweep: " + r.error);
      }
    }
  }

  // reports.json
  nlohmann::json all = nlohmann::json::array();
  for (const auto& sr : results) {
    for (const auto& r : sr.reports) all.push_back(method_report_to_json(r));
  }
  write_file(dir / "reports.json", all.dump(2) + "\n");

  // table2: state estimation accuracy and timing.
  {
    std::ostringstream os;
    os << "method,training_seconds_mean,training_seconds_std,em_seconds_mean,em_seconds_std,"
          "filter_mse_mean,filter_mse_std,smoother_mse_mean,smoother_mse_std,runs\n";
    for (MethodKind k : config.methods) {
      const auto reps = successful(results, k);
      os << method_name(k) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.training_seconds; }))) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.em_seconds; }))) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.filter_mse; }))) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.smoother_mse; }))) << ','
         << reps.size() << '\n';
    }
    write_file(dir / "table2.csv", os.str());
  }

  // table1: parameter estimates.
  const bool any_fit = std::any_of(config.methods.begin(), config.methods.end(),
                                   [](MethodKind k) { return k != MethodKind::KF; });
  if (any_fit) {
    std::ostringstream os;
    os << "method,sigma_q2_mean,sigma_q2_std,sigma_r2_mean,sigma_r2_std,m_a_mean,m_a_std,"
          "sigma_p2_mean,sigma_p2_std,runs\n";
    os << "de_facto," << format_double(config.true_params.q) << ",0,"
       << format_double(config.true_params.r) << ",0," << format_double(config.true_params.m_a)
       << ",0," << format_double(config.true_params.p) << ",0,0\n";
    for (MethodKind k : config.methods) {
      if (k == MethodKind::KF) continue;
      const auto reps = successful(results, k);
      os << method_name(k) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.sigma_q2; }))) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.sigma_r2; }))) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.m_a; }))) << ','
         << cell(summarize(collect(reps, [](const auto& r) { return r.sigma_p2; }))) << ','
         << reps.size() << '\n';
    }
    write_file(dir / "table1.csv", os.str());
  }

  // table3: robustness to the initial m_a / sigma_p^2.
  const bool sweep_ran = std::any_of(results.begin(), results.end(),
                                     [](const SeedResult& r) { return !r.sweep.empty(); });
  if (sweep_ran) {
    std::ostringstream os;
    os << "method,initial_m_a,initial_sigma_p2,sigma_q2_mean,sigma_q2_std,m_a_mean,m_a_std,"
          "sigma_p2_mean,sigma_p2_std,median_abs_m_a_error,runs\n";
    for (MethodKind k : {MethodKind::EM_KF, MethodKind::TL_KF}) {
      if (!has_method(config, k)) continue;
      for (std::size_t s = 0; s < kRobustnessSettings.size(); ++s) {
        std::vector<const MethodReport*> reps;
        for (const auto& sr : results) {
          if (sr.sweep.size() != kRobustnessSettings.size()) continue;
          for (const auto& r : sr.sweep[s]) {
            if (r.method == k && r.ok()) reps.push_back(&r);
          }
        }
        const double true_ma = config.true_params.m_a;
        os << method_name(k) << ',' << format_double(kRobustnessSettings[s].first) << ','
           << format_double(kRobustnessSettings[s].second) << ','
           << cell(summarize(collect(reps, [](const auto& r) { return r.sigma_q2; }))) << ','
           << cell(summarize(collect(reps, [](const auto& r) { return r.m_a; }))) << ','
           << cell(summarize(collect(reps, [](const auto& r) { return r.sigma_p2; }))) << ','
           << format_double(median(collect(
                  reps, [true_ma](const auto& r) { return std::abs(r.m_a - true_ma); })))
           << ',' << reps.size() << '\n';
      }
    }
    write_file(dir / "table3.csv", os.str());
  }

  // Path and error curves for the first seed.
  if (!results.empty()) {
    const SeedResult& first = results.front();
    for (const auto& r : first.reports) {
      if (!r.ok()) continue;
      std::ostringstream path;
      std::ostringstream err;
      path << "k,true_displacement,filtered,smoothed\n";
      err << "k,filter_error,smoother_error\n";
      for (std::size_t k = 0; k < first.trajectory.states.size(); ++k) {
        const double x = first.trajectory.states[k](0);
        path << k << ',' << format_double(x) << ',' << format_double(r.filtered_displacement[k])
             << ',' << format_double(r.smoothed_displacement[k]) << '\n';
        err << k << ',' << format_double(r.filtered_displacement[k] - x) << ','
            << format_double(r.smoothed_displacement[k] - x) << '\n';
      }
      write_file(dir / (std::string("path_") + method_name(r.method) + ".csv"), path.str());
      write_file(dir / (std::string("error_") + method_name(r.method) + ".csv"), err.str());
    }
  }

  if (!failures.empty()) {
    log << failures.size() << " stage failure(s):\n";
    for (const auto& f : failures) log << "  " << f << '\n';
    return 2;
  }
  return 0;
}

}  // namespace tlkf
