// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fmm/checkpoint_io.hpp"
#include "fmm/faithfulness.hpp"
#include "fmm/ims.hpp"
#include "fmm/io.hpp"
#include "fmm/masf.hpp"
#include "fmm/pipeline.hpp"
#include "fmm/stats.hpp"
#include "support.hpp"

using namespace fmm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch_root() {
  const auto p = fs::temp_directory_path() / "fmm_acceptance";
  fs::create_directories(p);
  return p;
}

json read_json(const fs::path& p) { return json::parse(io::read_file(p)); }

// ---------------------------------------------------------------------------
// 1. Unit oracles

Outcome unit_oracles() {
  Timer timer;
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };

  const double three[] = {0.01, 0.5, 0.9};
  const double dyadic[] = {0.25, 0.0625, 0.5, 0.125};
  const double ones[] = {1.0, 1.0, 1.0};
  expect(masf::simes(three) == 0.03, "simes");
  expect(masf::simes(dyadic) == 0.25, "simes dyadic");
  expect(masf::simes(ones) == 1.0, "simes ones");
  const double pair[] = {0.1, 0.5};
  expect(masf::fisher_statistic(pair) == 5.991464547107982, "fisher");

  const auto cdf = masf::build_cdf({4, 1, 3, 2});
  expect(cdf.lookup(2.5) == 0.5 && cdf.lookup(2.0) == 0.25 && cdf.lookup(0.0) == 0.0 && cdf.lookup(9.0) == 1.0,
         "cdf counts");
  expect(masf::two_sided_pvalue(cdf, 0.0) == 0.2, "two-sided floor");
  expect(masf::two_sided_pvalue(cdf, 2.5) == 0.5, "two-sided centre");
  expect(masf::two_sided_pvalue(cdf, 9.0) == 0.2, "two-sided upper floor");
  expect(masf::two_sided_pvalue(cdf, 1.5) == 0.25, "two-sided lower");

  const std::vector<double> x{0.0, 1.0};
  const std::vector<double> b{0.9, 0.5};
  const std::vector<double> p{0.9, 0.3};
  expect(std::abs(faith::acu(x, p, b) - 0.1) < 1e-12, "acu hand");
  expect(std::abs(faith::racu(x, p, b) - 0.5) < 1e-12, "racu hand");
  const std::vector<double> gx{0.0, 0.1, 0.25, 0.5, 0.75, 1.0};
  const std::vector<double> gb{0.9, 0.8, 0.7, 0.6, 0.55, 0.5};
  const std::vector<double> gp{0.9, 0.5, 0.45, 0.5, 0.52, 0.5};
  expect(std::abs(faith::acu(gx, gp, gb) - 0.12000000000000001) < 1e-12, "acu grid");
  expect(std::abs(faith::racu(gx, gp, gb) - 0.888888888888889) < 1e-12, "racu grid");

  // Brute-force oracle: area by explicit per-interval midpoint sums in
  // reverse order.
  Rng rng(11);
  const auto grid = faith::ratio_grid(10);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> cp(11), cb(11);
    for (auto& v : cp) v = rng.uniform01();
    for (auto& v : cb) v = rng.uniform01();
    cb.front() = std::max(cb.front(), 0.8);
    cb.back() = std::min(cb.back(), 0.2);
    double area = 0.0, norm = 0.0;
    for (std::size_t k = grid.size() - 1; k > 0; --k) {
      const double dx = grid[k] - grid[k - 1];
      area += dx * ((cb[k] - cp[k]) + (cb[k - 1] - cp[k - 1])) / 2.0;
      norm += dx * ((cb[k] - cb.back()) + (cb[k - 1] - cb.back())) / 2.0;
    }
    worst = std::max(worst, std::abs(faith::acu(grid, cp, cb) - area));
    worst = std::max(worst, std::abs(faith::racu(grid, cp, cb) - area / norm));
  }
  expect(worst < 1e-12, "acu/racu brute force");

  const double t = timer.seconds();
  expect(t < 1.0, "runtime");
  std::string d = "runtime " + fmt("%.3f", t) + " s";
  for (const auto& f : failed) d += "; failed " + f;
  return {failed.empty(), d};
}

// ---------------------------------------------------------------------------
// 2. Gradient soundness

Outcome gradient_soundness() {
  using namespace fmm::testing;
  Timer timer;
  const double h = 1e-4;
  double worst = 0.0;
  int draws = 0;
  for (int draw = 0; draw < 24; ++draw) {
    const auto c = small_config(1000 + static_cast<std::uint64_t>(draw));
    auto m = random_model(c);
    Rng rng(2000 + static_cast<std::uint64_t>(draw));
    const auto o = random_observation(c, rng, 2 + static_cast<int>(rng.uniform_int(7)), 8);
    const int target = static_cast<int>(rng.uniform_int(3));
    const auto t = static_cast<std::size_t>(target);

    // Embedding coordinate.
    const auto g = input_gradient(m, o, target);
    std::vector<double> e;
    for (int p = 0; p < o.length; ++p) {
      const auto row = m.token_embedding(o.tokens[static_cast<std::size_t>(p)]);
      e.insert(e.end(), row.begin(), row.end());
    }
    const auto idx = static_cast<std::size_t>(rng.uniform_int(e.size()));
    const double saved = e[idx];
    e[idx] = saved + h;
    const double up = logits_from_embeddings(m, o, e)[t];
    e[idx] = saved - h;
    const double down = logits_from_embeddings(m, o, e)[t];
    worst = std::max(worst, rel_err(g.d_f_d_h[idx], (up - down) / (2 * h)));

    // Parameter coordinate.
    const auto pg = logit_parameter_gradient(m, o, target);
    const auto& spec = m.layout().tensors[rng.uniform_int(m.layout().tensors.size())];
    std::size_t pi = spec.offset + static_cast<std::size_t>(rng.uniform_int(spec.size()));
    if (spec.name == "tok_emb") {
      const int tok = o.tokens[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(o.length)))];
      pi = spec.offset + static_cast<std::size_t>(tok) * c.hidden_dim + rng.uniform_int(c.hidden_dim);
    }
    auto params = m.mutable_parameters();
    const double ps = params[pi];
    params[pi] = ps + h;
    const double pu = forward(m, o, false).logits[t];
    params[pi] = ps - h;
    const double pd = forward(m, o, false).logits[t];
    params[pi] = ps;
    worst = std::max(worst, rel_err(pg[pi], (pu - pd) / (2 * h)));
    draws += 2;
  }
  const double t = timer.seconds();
  return {worst < 1e-4 && draws >= 20 && t < 30.0,
          std::to_string(draws) + " draws, max relative error " + fmt("%.2e", worst) + ", runtime " +
              fmt("%.2f", t) + " s"};
}

// ---------------------------------------------------------------------------
// 3. IG completeness

Outcome ig_completeness() {
  using namespace fmm::testing;
  Timer timer;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto c = small_config(50 + static_cast<std::uint64_t>(i));
    const auto lin = linear_bypass_model(c);
    Rng rng(60 + static_cast<std::uint64_t>(i));
    const auto o = random_observation(c, rng, 2 + static_cast<int>(rng.uniform_int(7)), 8);
    const int y = predict(lin, o);
    const auto all = ims::integrated_gradient_all_positions(lin, o, 20, y);
    const double total = std::accumulate(all.begin(), all.end(), 0.0);
    std::vector<double> e;
    for (int p = 0; p < o.length; ++p) {
      const auto row = lin.token_embedding(o.tokens[static_cast<std::size_t>(p)]);
      e.insert(e.end(), row.begin(), row.end());
    }
    const double fx = logits_from_embeddings(lin, o, e)[static_cast<std::size_t>(y)];
    std::fill(e.begin(), e.end(), 0.0);
    const double f0 = logits_from_embeddings(lin, o, e)[static_cast<std::size_t>(y)];
    worst = std::max(worst, std::abs(total - (fx - f0)));
  }
  const double t = timer.seconds();
  return {worst < 1e-6 && t < 5.0,
          "20 models, max |sum IG - (f(x) - f(0))| " + fmt("%.2e", worst) + ", runtime " + fmt("%.2f", t) + " s"};
}

// ---------------------------------------------------------------------------
// 4. Beam optimality

double exhaustive_optimum(const ModelCheckpoint& m, const Observation& o, int y) {
  std::vector<int> perm = o.maskable;
  std::sort(perm.begin(), perm.end());
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, ims::masking_objective(m, o, perm, y));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Outcome beam_optimality() {
  using namespace fmm::testing;
  Timer timer;
  int matched = 0;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto c = small_config(500 + static_cast<std::uint64_t>(i));
    const auto m = random_model(c);
    Rng rng(600 + static_cast<std::uint64_t>(i));
    const auto o = random_observation(c, rng, 2 + static_cast<int>(rng.uniform_int(6)), 8);
    const int y = predict(m, o);
    const double beam = ims::masking_objective(m, o, ims::beam_search_order(m, o, 64).positions, y);
    const double opt = exhaustive_optimum(m, o, y);
    const double err = std::abs(beam - opt);
    worst = std::max(worst, err);
    if (err <= 1e-12 * std::max(1.0, std::abs(opt))) ++matched;
  }
  const double t = timer.seconds();
  return {matched == 50 && t < 120.0, std::to_string(matched) + "/50 instances at the exhaustive optimum (max gap " +
                                          fmt("%.1e", worst) + "), runtime " + fmt("%.1f", t) + " s"};
}

// ---------------------------------------------------------------------------
// Shared keyword-task run for criteria 5 to 8.

struct KeywordRun {
  pipeline::ExperimentConfig config;
  fs::path out;
  double train_seconds = 0.0;
  double ood_seconds = 0.0;
  double faithfulness_seconds = 0.0;
};

KeywordRun keyword_run() {
  KeywordRun r;
  r.config = pipeline::load_config(fs::path(FMM_SOURCE_DIR) / "configs" / "keyword.json");
  r.config.measures = {"random", "loo_abs", "loo_sign", "beam"};
  r.out = scratch_root() / "keyword";
  fs::remove_all(r.out);
  Timer t1;
  pipeline::cmd_gen_data(r.config, r.out);
  pipeline::cmd_train(r.config, r.out);
  r.train_seconds = t1.seconds();
  Timer t2;
  pipeline::cmd_ood(r.config, r.out);
  r.ood_seconds = t2.seconds();
  Timer t3;
  pipeline::cmd_faithfulness(r.config, r.out);
  r.faithfulness_seconds = t3.seconds();
  return r;
}

fs::path train_report(const KeywordRun& r, const pipeline::StrategyPair& p, std::uint64_t seed) {
  return r.out / "models" / (p.tag() + "_seed" + std::to_string(seed) + ".json");
}

// 5. Dual criteria of masked fine-tuning.
Outcome dual_criteria(const KeywordRun& r) {
  const auto& use5050 = r.config.strategies.at(0);
  const auto& plain = r.config.strategies.at(1);
  const double per_seed = r.train_seconds / static_cast<double>(r.config.seeds.size());
  bool ok = per_seed < 600.0;
  std::ostringstream d;
  for (auto seed : r.config.seeds) {
    const auto a = read_json(train_report(r, use5050, seed)).at("test");
    const auto b = read_json(train_report(r, plain, seed)).at("test");
    const double acc = a.at("unmasked").get<double>();
    const double base = b.at("unmasked").get<double>();
    const double masked = a.at("fully_masked").get<double>();
    const double majority = a.at("class_majority").get<double>();
    const bool seed_ok = acc >= 0.95 && std::abs(acc - base) <= 0.02 && masked >= majority - 0.05;
    ok = ok && seed_ok;
    d << "seed " << seed << ": " << fmt("%.3f", acc) << " vs " << fmt("%.3f", base) << ", masked "
      << fmt("%.3f", masked) << " (majority " << fmt("%.3f", majority) << ")" << (seed_ok ? "" : " FAIL") << "; ";
  }
  d << "train " << fmt("%.1f", per_seed) << " s per seed";
  return {ok, d.str()};
}

// 6. OOD direction.
Outcome ood_direction(const KeywordRun& r) {
  const auto report = read_json(r.out / "ood" / "ood_report.json");
  const auto use_tag = r.config.strategies.at(0).tag();
  const auto plain_tag = r.config.strategies.at(1).tag();
  int plain_hits = 0, use_hits = 0;
  std::ostringstream d;
  for (const auto& res : report.at("results")) {
    const auto ratios = res.at("ratios").get<std::vector<double>>();
    const auto pv = res.at("dataset_pvalues").get<std::vector<double>>();
    const auto tag = res.at("strategy").get<std::string>();
    bool hit = true;
    double shown = 0.0;
    if (tag == plain_tag) {
      shown = 0.0;
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (ratios[i] >= 0.8 - 1e-12) {
          hit = hit && pv[i] < 0.05;
          shown = std::max(shown, pv[i]);
        }
      }
      plain_hits += hit ? 1 : 0;
      d << "no_masking seed " << res.at("seed").get<int>() << " max p(>=80%) " << fmt("%.2g", shown) << "; ";
    } else if (tag == use_tag) {
      shown = 1.0;
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (ratios[i] <= 0.9 + 1e-12) {
          hit = hit && pv[i] > 0.05;
          shown = std::min(shown, pv[i]);
        }
      }
      use_hits += hit ? 1 : 0;
      d << "use5050 seed " << res.at("seed").get<int>() << " min p(<=90%) " << fmt("%.3f", shown) << "; ";
    }
  }
  const double per_seed = r.ood_seconds / static_cast<double>(r.config.seeds.size());
  d << "no_masking rejects in " << plain_hits << "/5, use5050 accepts in " << use_hits << "/5; ood "
    << fmt("%.1f", per_seed) << " s per seed";
  return {plain_hits >= 4 && use_hits >= 4 && per_seed < 300.0, d.str()};
}

// 7. MaSF null calibration on a held-out masked split.
Outcome null_calibration(const KeywordRun& r) {
  const auto& primary = r.config.strategies.at(0);
  const auto test_set = data::load_dataset(r.out / "data" / "test.jsonl");
  int passes = 0;
  std::ostringstream d;
  for (auto seed : r.config.seeds) {
    const auto model = load_checkpoint(r.out / "models" / (primary.tag() + "_seed" + std::to_string(seed) + ".ckpt"));
    const auto cal = masf::load_calibration(r.out / "ood" / (primary.tag() + "_seed" + std::to_string(seed) + ".masf"));
    Rng rng(derive_seed(seed, 7));
    const auto held_out = train::transform_dataset(test_set, primary.train, rng, model.config().mask_token_id);
    std::vector<double> p;
    for (const auto& o : held_out.observations) p.push_back(masf::masf_pvalue(cal, *forward(model, o, true).trace));
    const double ks = stats::ks_pvalue(stats::ks_uniform_distance(p), p.size());
    passes += ks > 0.01 ? 1 : 0;
    d << "seed " << seed << " KS p " << fmt("%.3f", ks) << "; ";
  }
  d << "n = " << test_set.size() << ", uniform in " << passes << "/5";
  return {passes >= 4 && test_set.size() == 200, d.str()};
}

// 8. Faithfulness direction.
Outcome faithfulness_direction(const KeywordRun& r) {
  const auto report = read_json(r.out / "faithfulness" / "faithfulness.json");
  std::map<std::string, json> by;
  for (const auto& m : report.at("measures")) by[m.at("measure").get<std::string>()] = m;
  bool ok = r.faithfulness_seconds < 900.0;
  std::ostringstream d;
  for (const char* name : {"loo_abs", "beam"}) {
    const auto& m = by.at(name);
    const double mean = m.at("racu_mean").get<double>();
    const double lo = m.at("racu_ci")[0].get<double>();
    const double hi = m.at("racu_ci")[1].get<double>();
    ok = ok && mean > 0.0 && lo > 0.0;
    d << name << " RACU " << fmt("%.3f", mean) << " [" << fmt("%.3f", lo) << ", " << fmt("%.3f", hi) << "]; ";
  }
  const double rnd = by.at("random").at("racu_mean").get<double>();
  ok = ok && std::abs(rnd) < 0.05;
  d << "random RACU " << fmt("%.3f", rnd) << "; ";
  const auto beam_acu = by.at("beam").at("acu").get<std::vector<double>>();
  const auto loo_acu = by.at("loo_sign").at("acu").get<std::vector<double>>();
  int beam_ok = 0;
  for (std::size_t i = 0; i < beam_acu.size(); ++i) beam_ok += beam_acu[i] >= loo_acu[i] - 0.02 ? 1 : 0;
  ok = ok && beam_ok == static_cast<int>(beam_acu.size());
  d << "beam ACU >= loo_sign ACU - 0.02 in " << beam_ok << "/" << beam_acu.size() << " seeds; faithfulness "
    << fmt("%.1f", r.faithfulness_seconds) << " s";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 9. Redundancy needs recursive re-explanation.

Outcome redundancy_necessity() {
  auto c = pipeline::load_config(fs::path(FMM_SOURCE_DIR) / "configs" / "redundant.json");
  const auto out = scratch_root() / "redundant";
  fs::remove_all(out);
  pipeline::cmd_gen_data(c, out);
  pipeline::cmd_train(c, out);
  const auto& primary = c.strategies.at(0);
  const auto test_set = data::load_dataset(out / "data" / "test.jsonl");
  faith::CurveOptions opts;
  opts.steps = c.curve_steps;
  opts.metric = c.hyperparams.metric;
  const auto grid = faith::ratio_grid(opts.steps);
  std::vector<double> rec(grid.size(), 0.0), flat(grid.size(), 0.0);
  for (auto seed : c.seeds) {
    const auto model = load_checkpoint(out / "models" / (primary.tag() + "_seed" + std::to_string(seed) + ".ckpt"));
    const auto stream = derive_seed(seed, io::fnv1a("loo_abs"));
    const auto a = faith::masking_curve(model, test_set, ims::Measure::LeaveOneOutAbs, true, nullptr, stream, opts);
    const auto b = faith::masking_curve(model, test_set, ims::Measure::LeaveOneOutAbs, false, nullptr, stream, opts);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      rec[i] += a.performance[i] / static_cast<double>(c.seeds.size());
      flat[i] += b.performance[i] / static_cast<double>(c.seeds.size());
    }
  }
  bool ok = true;
  std::ostringstream d;
  d << "ratio: recursive/non-recursive";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.3 - 1e-12) continue;
    const bool below = rec[i] <= flat[i];
    ok = ok && below;
    d << " " << fmt("%.1f", grid[i]) << ": " << fmt("%.3f", rec[i]) << "/" << fmt("%.3f", flat[i]) << (below ? "" : "!");
  }
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 10. Determinism of the full CLI pipeline.

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  }
  return files;
}

int run_cli(const fs::path& config, const fs::path& out) {
  for (const char* cmd : {"gen-data", "train", "ood", "explain", "faithfulness", "report"}) {
    const std::string line = std::string("\"") + FMM_CLI_PATH + "\" " + cmd + " --config \"" + config.string() +
                             "\" --out \"" + out.string() + "\"";
    const int rc = std::system(line.c_str());
    if (rc != 0) return rc;
  }
  return 0;
}

Outcome determinism() {
  const auto config = fs::path(FMM_SOURCE_DIR) / "configs" / "smoke.json";
  const auto a = scratch_root() / "rerun_a";
  const auto b = scratch_root() / "rerun_b";
  fs::remove_all(a);
  fs::remove_all(b);
  if (run_cli(config, a) != 0 || run_cli(config, b) != 0) return {false, "pipeline command failed"};
  const auto sa = snapshot(a);
  const auto sb = snapshot(b);
  std::vector<std::string> diff;
  for (const auto& [name, bytes] : sa) {
    auto it = sb.find(name);
    if (it == sb.end() || it->second != bytes) diff.push_back(name);
  }
  for (const auto& [name, bytes] : sb) {
    if (!sa.count(name)) diff.push_back(name);
  }
  std::string d = std::to_string(sa.size()) + " files compared";
  for (const auto& f : diff) d += "; differs: " + f;
  return {diff.empty() && !sa.empty() && sa.count("report/report.json") == 1, d};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, unit_oracles);
  report(2, gradient_soundness);
  report(3, ig_completeness);
  report(4, beam_optimality);

  KeywordRun run;
  std::string setup_error;
  try {
    run = keyword_run();
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  auto with_run = [&](Outcome (*fn)(const KeywordRun&)) {
    return [&, fn]() -> Outcome {
      if (!setup_error.empty()) return {false, "keyword run failed: " + setup_error};
      return fn(run);
    };
  };
  report(5, with_run(dual_criteria));
  report(6, with_run(ood_direction));
  report(7, with_run(null_calibration));
  report(8, with_run(faithfulness_direction));
  report(9, redundancy_necessity);
  report(10, determinism);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
