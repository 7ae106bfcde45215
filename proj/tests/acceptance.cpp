// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   tlkf_acceptance --cli PATH/TO/tlkf [--work DIR] [--only 1,2,...]
//
// Criteria 5-7 read the tables of one full `tlkf run` (desk profile, ten
// seeds, N=200); criterion 9 runs the CLI twice more with a shared config.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tlkf/em.hpp"
#include "tlkf/encoders.hpp"
#include "tlkf/format.hpp"
#include "tlkf/neural.hpp"
#include "tlkf/verify.hpp"

using namespace tlkf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) { return format_double(v); }

using Row = std::vector<std::string>;

std::vector<Row> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  std::vector<Row> rows;
  std::string line;
  while (std::getline(in, line)) {
    Row r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.push_back(cell);
    if (!line.empty() && line.back() == ',') r.emplace_back();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::size_t column(const std::vector<Row>& t, const std::string& name) {
  const auto& h = t.at(0);
  const auto it = std::find(h.begin(), h.end(), name);
  if (it == h.end()) throw std::runtime_error("no column " + name);
  return static_cast<std::size_t>(it - h.begin());
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// ---- 1 ---------------------------------------------------------------------

Outcome oracle_equivalence() {
  const auto d = verify::run_oracle_suite(100, 20240601);
  Outcome o;
  o.pass = d.models == 100 && d.moments() < 1e-8;
  o.detail = "max |dev| " + fmt(d.moments()) + " over " + std::to_string(d.models) +
             " models (predicted " + fmt(d.predicted) + ", filtered " + fmt(d.filtered) +
             ", smoothed " + fmt(d.smoothed) + ", lag-one " + fmt(d.lag_one) +
             ", loglik " + fmt(d.log_likelihood) + "); tol 1e-8";
  return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome em_ascent() {
  const auto truth = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  const auto init = robot_model(0.01, 2e-2, 1.0, 1.0, 5.0);
  double worst_drop = 0.0;
  int runs = 0;
  for (ModelParam p : {ModelParam::Q, ModelParam::R, ModelParam::M0, ModelParam::P0}) {
    EmConfig c;
    c.free_params = ParamSet{p};
    c.structural_projection = false;
    c.max_iter = 10;
    c.tol = 1e-300;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Trajectory t = simulate(truth, 200, seed);
      const EmReport r = em_fit(t.observations, init, c);
      for (std::size_t i = 1; i < r.loglik_history.size(); ++i) {
        worst_drop = std::max(worst_drop, r.loglik_history[i - 1] - r.loglik_history[i]);
      }
      ++runs;
    }
  }
  return {worst_drop <= 1e-9, "largest per-iteration decrease " + fmt(worst_drop) + " over " +
                                  std::to_string(runs) + " runs (Q, R, m0, P0 x 20 seeds); tol 1e-9"};
}

// ---- 3 ---------------------------------------------------------------------

Outcome r_recovery() {
  const auto truth = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  const auto init = robot_model(0.01, 2e-2, 1.0, 1.0, 5.0);
  std::vector<double> r;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Trajectory t = simulate(truth, 200, seed);
    r.push_back(em_fit(t.observations, init, EmConfig{}).fitted.R(0, 0));
  }
  std::sort(r.begin(), r.end());
  const double med = 0.5 * (r[4] + r[5]);
  return {med >= 1e-3 && med <= 2e-2,
          "median sigma_r^2 " + fmt(med) + " (range " + fmt(r.front()) + " .. " + fmt(r.back()) +
              "); required [1e-3, 2e-2]"};
}

// ---- 4 ---------------------------------------------------------------------

Outcome gradient_checks() {
  double worst = 0.0;
  std::string worst_name;
  int checks = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& g : verify::run_gradchecks(seed)) {
      ++checks;
      if (g.max_rel_error >= worst) {
        worst = g.max_rel_error;
        worst_name = g.name;
      }
    }
  }
  return {worst < 1e-4, "worst relative error " + fmt(worst) + " (" + worst_name + ") over " +
                            std::to_string(checks) + " checks; tol 1e-4"};
}

// ---- 5, 6, 7 -----------------------------------------------------------------

struct MethodMse {
  double filter = NAN;
  double smoother = NAN;
  int runs = 0;
};

std::map<std::string, MethodMse> read_table2(const fs::path& dir) {
  const auto t = read_csv(dir / "table2.csv");
  const auto cf = column(t, "filter_mse_mean");
  const auto cs = column(t, "smoother_mse_mean");
  const auto cr = column(t, "runs");
  std::map<std::string, MethodMse> out;
  for (std::size_t i = 1; i < t.size(); ++i) {
    out[t[i][0]] = {std::stod(t[i][cf]), std::stod(t[i][cs]), std::stoi(t[i][cr])};
  }
  return out;
}

Outcome mse_ordering(const fs::path& dir) {
  const auto m = read_table2(dir);
  const auto& em = m.at("EM_KF");
  const auto& tl = m.at("TL_KF");
  const auto& tf = m.at("TRANSFORMER_KF");
  const auto& ls = m.at("LSTM_KF");
  const bool enough = em.runs >= 10 && tl.runs >= 10 && tf.runs >= 10;
  const bool gated = tl.filter < em.filter && tf.filter < em.filter;
  const bool chain = tl.filter < tf.filter && tf.filter < ls.filter && ls.filter < em.filter;
  std::string d = "mean filter MSE TL " + fmt(tl.filter) + ", TRANSFORMER " + fmt(tf.filter) +
                  ", LSTM " + fmt(ls.filter) + ", EM " + fmt(em.filter) + ", KF " +
                  fmt(m.at("KF").filter) + " (" + std::to_string(em.runs) + " seeds)";
  d += "; gated TL<EM and TRANSFORMER<EM: " + std::string(gated ? "yes" : "no");
  d += "; full chain TL<TRANSFORMER<LSTM<EM (reported): " + std::string(chain ? "yes" : "no");
  return {enough && gated, d};
}

Outcome smoother_dominance(const fs::path& dir) {
  const auto m = read_table2(dir);
  bool all = true;
  std::string d;
  std::string smallest;
  double smallest_gap = INFINITY;
  for (const auto& [name, v] : m) {
    const double gap = v.filter - v.smoother;
    all = all && v.smoother <= v.filter;
    d += name + " " + fmt(v.smoother) + "<=" + fmt(v.filter) + "; ";
    if (std::abs(gap) < smallest_gap) {
      smallest_gap = std::abs(gap);
      smallest = name;
    }
  }
  d += "smallest |filter-smoother| gap: " + smallest + " (" + fmt(smallest_gap) + ")";
  return {all && smallest == "TL_KF", d};
}

Outcome robustness(const fs::path& dir) {
  const auto t = read_csv(dir / "table3.csv");
  const auto cm = column(t, "initial_m_a");
  const auto cp = column(t, "initial_sigma_p2");
  const auto ce = column(t, "median_abs_m_a_error");
  const auto cr = column(t, "runs");
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> by_setting;
  bool enough = true;
  for (std::size_t i = 1; i < t.size(); ++i) {
    by_setting[{t[i][cm], t[i][cp]}][t[i][0]] = std::stod(t[i][ce]);
    enough = enough && std::stoi(t[i][cr]) >= 10;
  }
  bool pass = enough && by_setting.size() == 3;
  std::string d;
  for (const auto& [setting, vals] : by_setting) {
    const double tl = vals.count("TL_KF") ? vals.at("TL_KF") : NAN;
    const double em = vals.count("EM_KF") ? vals.at("EM_KF") : NAN;
    pass = pass && tl < em;
    d += "(m_a " + setting.first + ", p " + setting.second + "): TL " + fmt(tl) + " vs EM " +
         fmt(em) + "; ";
  }
  d += "median |m_a - 0.1| over 10 seeds, TL must be strictly smaller";
  return {pass, d};
}

// ---- 8 ---------------------------------------------------------------------

Outcome structural_invariants() {
  Rng rng(77);
  std::vector<std::string> broken;

  double softmax_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Vec v(1 + i % 8);
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = rng.uniform(-1e3, 1e3);
    softmax_err = std::max(softmax_err, std::abs(softmax(v).sum() - 1.0));
  }
  if (!(softmax_err < 1e-12)) broken.push_back("softmax");

  double pe_err = 0.0;
  for (int pos = 0; pos < 200; ++pos) {
    for (int l = 0; l < 32; l += 2) {
      const double s = nn::positional_encoding(pos, l, 32);
      const double c = nn::positional_encoding(pos, l + 1, 32);
      pe_err = std::max(pe_err, std::abs(s * s + c * c - 1.0));
    }
  }
  if (!(pe_err < 1e-12)) broken.push_back("positional encoding");

  Mat x(6, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  if (!(nn::dropout(x, 0.3, false, rng) == x)) broken.push_back("dropout eval identity");

  nn::MultiHeadAttention mha("m", 6, 1, rng);
  mha.output_weight().value = Mat::Identity(6, 6);
  const Mat xkv = x.leftCols(4);
  const Mat ref = nn::scaled_dot_attention(mha.query_weight(0).value * x, mha.key_weight(0).value * xkv,
                                           mha.value_weight(0).value * xkv);
  const double mha_err = (mha.forward(x, xkv) - ref).cwiseAbs().maxCoeff();
  if (!(mha_err < 1e-12)) broken.push_back("single-head reduction");

  const auto model = robot_model(0.01, 1e-2, 5e-3, 0.1, 0.1);
  const Trajectory t = simulate(model, 200, 3);
  const FilterResult f = kf_filter(model, t.observations);
  const SmootherResult s = ks_smooth(model, f);
  double asym = 0.0, min_eig = INFINITY;
  auto scan = [&](const std::vector<GaussianBelief>& bs) {
    for (const auto& b : bs) {
      asym = std::max(asym, (b.cov - b.cov.transpose()).cwiseAbs().maxCoeff());
      min_eig = std::min(min_eig, min_eigenvalue(b.cov));
    }
  };
  scan(f.predicted);
  scan(f.filtered);
  scan(s.smoothed);
  if (!(asym <= 1e-9 && min_eig >= -1e-9)) broken.push_back("covariance symmetry/PSD");

  bool windows_ok = true;
  for (int n = 2; n <= 40; ++n) {
    for (int l = 1; l < n; ++l) {
      Series series(static_cast<std::size_t>(n), Vec::Zero(1));
      const auto w = make_lookback_windows(series, l);
      windows_ok = windows_ok && w.targets.size() == static_cast<std::size_t>(n - l) &&
                   w.inputs.size() == w.targets.size();
    }
  }
  if (!windows_ok) broken.push_back("window count");

  std::string d = "softmax " + fmt(softmax_err) + ", PE identity " + fmt(pe_err) +
                  ", single-head " + fmt(mha_err) + ", cov asym " + fmt(asym) + ", min eig " +
                  fmt(min_eig) + ", windows " + (windows_ok ? "ok" : "bad");
  if (!broken.empty()) {
    d += "; broken:";
    for (const auto& b : broken) d += " " + b;
  }
  return {broken.empty(), d};
}

// ---- 9 ---------------------------------------------------------------------

// CSV text with every column whose header mentions "seconds" blanked out.
std::string numeric_content(const fs::path& p) {
  const auto rows = read_csv(p);
  std::set<std::size_t> timing;
  for (std::size_t j = 0; j < rows.at(0).size(); ++j) {
    if (rows[0][j].find("seconds") != std::string::npos) timing.insert(j);
  }
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out += ',';
      if (!timing.count(j)) out += r[j];
    }
    out += '\n';
  }
  return out;
}

Outcome reproducibility(const std::string& cli, const fs::path& work) {
  const fs::path a = work / "repro_a", b = work / "repro_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::string common = "run --profile desk --seed 1 --seed 2 --n 200";
  const int ra = run_cli(cli, common + " --output-dir \"" + a.string() + "\"", work / "repro_a.log");
  const int rb = run_cli(cli, common + " --output-dir \"" + b.string() + "\"", work / "repro_b.log");
  if (ra != 0 || rb != 0) {
    return {false, "CLI exit codes " + std::to_string(ra) + ", " + std::to_string(rb)};
  }
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a))
    if (e.path().extension() == ".csv") names_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    if (e.path().extension() == ".csv") names_b.insert(e.path().filename().string());
  if (names_a != names_b) return {false, "different CSV sets"};
  std::vector<std::string> differing;
  for (const auto& n : names_a) {
    if (numeric_content(a / n) != numeric_content(b / n)) differing.push_back(n);
  }
  std::string d = std::to_string(names_a.size()) + " CSVs compared (timing columns masked)";
  for (const auto& n : differing) d += "; differs: " + n;
  return {differing.empty() && !names_a.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cli;
  std::string work = (fs::temp_directory_path() / "tlkf_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", cli, "path to the tlkf executable")->required();
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work);
  fs::create_directories(dir);
  const fs::path full = dir / "full";
  bool full_ready = false;
  std::string full_error;
  auto need_full = [&]() {
    if (full_ready || !full_error.empty()) return;
    fs::remove_all(full);
    // Defaults: desk profile, ten seeds, N = 200, every method, robustness sweep.
    const int rc = run_cli(cli, "run --output-dir \"" + full.string() + "\"", dir / "full.log");
    if (rc == 0) {
      full_ready = true;
    } else {
      full_error = "full run exited with " + std::to_string(rc) + " (see " + (dir / "full.log").string() + ")";
    }
  };
  auto from_full = [&](std::function<Outcome(const fs::path&)> f) {
    return [&, f]() -> Outcome {
      need_full();
      if (!full_ready) return {false, full_error};
      return f(full);
    };
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"oracle equivalence", oracle_equivalence},
      {"EM log-likelihood ascent", em_ascent},
      {"R recovery", r_recovery},
      {"gradient checks", gradient_checks},
      {"MSE ordering", from_full(mse_ordering)},
      {"smoother dominance", from_full(smoother_dominance)},
      {"robustness sweep", from_full(robustness)},
      {"structural invariants", structural_invariants},
      {"reproducibility", [&] { return reproducibility(cli, dir); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << " -- "
              << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
