// Acceptance suite: one PASS/FAIL line per criterion.
//
//   osteovox_acceptance [criteria...] [--work-dir DIR]
//
// With no criteria listed, all eight run. The exit code is the number of
// failed criteria.

#include <CLI11.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "../support/fixtures.hpp"
#include "../support/model_checks.hpp"
#include "../support/op_catalogue.hpp"
#include "../support/oracles.hpp"
#include "osteovox/components.hpp"
#include "osteovox/dataset.hpp"
#include "osteovox/degradation.hpp"
#include "osteovox/errors.hpp"
#include "osteovox/evolution_io.hpp"
#include "osteovox/hetmigen.hpp"
#include "osteovox/metrics.hpp"
#include "osteovox/nn/checkpoint.hpp"
#include "osteovox/random.hpp"
#include "osteovox/training.hpp"
#include "osteovox/transvnet.hpp"

using namespace osteovox;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double chi2_critical_1pct(std::size_t dof) {
  return boost::math::quantile(boost::math::complement(boost::math::chi_squared(double(dof)), 0.01));
}

// 1 ------------------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome out;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t dice_mismatch = 0;
  for (int i = 0; i < 100; ++i) {
    const double pa = 0.05 + 0.5 * uniform01(rng), pb = 0.05 + 0.5 * uniform01(rng);
    VoxelGrid a = oracle::random_grid({8, 8, 8}, pa, rng);
    VoxelGrid b = oracle::random_grid({8, 8, 8}, pb, rng);
    if (a.count(kMineral) == 0) a.set(uniform_index(rng, a.size()), kMineral);
    if (b.count(kMineral) == 0) b.set(uniform_index(rng, b.size()), kMineral);
    const auto r = oracle::dice_ratio(a, b, kMineral);
    if (dice(a, b, kMineral) != double(r.num) / double(r.den)) ++dice_mismatch;
    worst = std::max(worst, std::abs(hausdorff(a, b, kMineral, HausdorffMode::Max) -
                                     oracle::hausdorff_max(a, b, kMineral)));
    worst = std::max(worst, std::abs(hausdorff(a, b, kMineral, HausdorffMode::Average) -
                                     oracle::hausdorff_average(a, b, kMineral)));
  }
  const double secs = seconds_since(t0);
  out.require(dice_mismatch == 0, std::to_string(dice_mismatch) + " dice values differ from the exact ratio");
  out.require(worst <= 1e-12, "Hausdorff deviation " + fmt("%.3g", worst));
  out.require(secs < 10.0, "runtime " + fmt("%.1f s", secs));
  out.note("100 pairs, dice exact, max HD deviation " + fmt("%.3g", worst) + ", " + fmt("%.2f s", secs));
  return out;
}

// 2 ------------------------------------------------------------------------------

Outcome gradient_checks() {
  Outcome out;
  const auto t0 = Clock::now();
  double worst_op = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(7000 + seed);
    for (auto& c : oracle::op_cases(rng)) {
      nn::GradCheckOptions opt;
      opt.seed = seed;
      const auto r = nn::grad_check(c.fn, c.inputs, opt);
      ++cases;
      if (r.probes == 0) out.require(false, c.name + " made no probes");
      if (!(r.max_relative_error < 1e-4)) {
        out.require(false, c.name + " relative error " + fmt("%.3g", r.max_relative_error));
      }
      if (r.max_relative_error > worst_op) {
        worst_op = r.max_relative_error;
        worst_name = c.name;
      }
    }
  }
  // Attention key bias: exact zero gradient.
  {
    std::mt19937_64 rng(77);
    const std::size_t d = 8;
    nn::AttentionParams<double> p{oracle::randn({d, d}, rng, 0.35), oracle::randn({d, d}, rng, 0.35),
                                  oracle::randn({d, d}, rng, 0.35), oracle::randn({d, d}, rng, 0.35),
                                  oracle::randn({d}, rng, 0.1),     oracle::randn({d}, rng, 0.1),
                                  oracle::randn({d}, rng, 0.1),     oracle::randn({d}, rng, 0.1),
                                  2};
    nn::backward(nn::sum(nn::multi_head_self_attention(oracle::randn({4, d}, rng), p)));
    double g = 0.0;
    for (double v : p.bk.grad()) g = std::max(g, std::abs(v));
    out.require(g < 1e-12, "attention key-bias gradient " + fmt("%.3g", g));
  }
  double worst_model = 0.0;
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const auto m = oracle::full_model_grad_check(seed);
    worst_model = std::max(worst_model, m.result.max_relative_error);
    out.require(m.result.max_relative_error < 1e-3,
                "full model seed " + std::to_string(seed) + " relative error " +
                    fmt("%.3g", m.result.max_relative_error));
    out.require(m.result.probes == 4 * m.groups.size(), "full model probe count");
  }
  const double secs = seconds_since(t0);
  out.require(secs < 300.0, "runtime " + fmt("%.1f s", secs));
  out.note(std::to_string(cases) + " op checks, worst " + fmt("%.2g", worst_op) + " (" + worst_name +
           "); full model worst " + fmt("%.2g", worst_model) + ", " + fmt("%.1f s", secs));
  return out;
}

// 3 ------------------------------------------------------------------------------

Outcome generator_contract() {
  Outcome out;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  double worst_dev = 0.0;
  std::size_t clustered = 0;
  for (int row = 0; row < 20; ++row) {
    hetmigen::GenerationParams p;
    p.id = row;
    p.n_phases = 1;
    p.target_vf = {0.2 + 0.3 * uniform01(rng)};
    p.n_initial_seeds = 1 + int(uniform_index(rng, 30));
    p.seed_increment = int(uniform_index(rng, 11));
    p.seed_frequency = 1 + int(uniform_index(rng, 5));
    p.proximity_radius = {int(uniform_index(rng, 4))};
    p.cluster_at_end = {uniform_index(rng, 2) == 0};
    p.growth_decay = {0.01 * uniform01(rng)};
    p.growth_thresholds = {0.3 + 0.6 * uniform01(rng)};
    const auto g = hetmigen::generate(p, 500 + row, Dims{64, 64, 64});
    const double vf = volume_fraction(g.grid, kMineral);
    const double dev = std::abs(vf - p.target_vf[0]);
    worst_dev = std::max(worst_dev, dev);
    out.require(dev <= 0.02, "row " + std::to_string(row) + " vf " + fmt("%.4f", vf) + " target " +
                                 fmt("%.4f", p.target_vf[0]));
    if (p.cluster_at_end[0]) {
      ++clustered;
      const double lcf = largest_component_fraction(g.grid, kMineral);
      out.require(lcf == 1.0, "row " + std::to_string(row) + " clustering fraction " + fmt("%.6f", lcf));
    }
  }

  // Certain growth from scattered seeds is a Manhattan-ball dilation.
  std::size_t mismatched = 0;
  for (int trial = 0; trial < 3; ++trial) {
    hetmigen::GenerationParams p;
    p.n_phases = 1;
    p.target_vf = {0.99};
    p.n_initial_seeds = 4 + trial;
    p.proximity_radius = {0};
    p.cluster_at_end = {false};
    p.growth_decay = {0.0};
    p.growth_thresholds = {1.0};
    auto s = hetmigen::initial_state(p, Dims{32, 32, 32}, 90 + trial);
    hetmigen::place_seeds(s, p, p.n_initial_seeds);
    const VoxelGrid seeds = s.grid;
    for (int k = 1; k <= 5; ++k) {
      hetmigen::grow_step(s, p);
      if (!(s.grid == oracle::manhattan_dilation(seeds, kMineral, k))) ++mismatched;
    }
  }
  out.require(mismatched == 0, std::to_string(mismatched) + " threshold-1 steps differ from the dilation oracle");
  const double secs = seconds_since(t0);
  out.require(secs < 300.0, "runtime " + fmt("%.1f s", secs));
  out.note("20 rows at 64^3 (" + std::to_string(clustered) + " clustered), worst |vf - target| " +
           fmt("%.4f", worst_dev) + ", dilation oracle matched 15/15 steps, " + fmt("%.1f s", secs));
  return out;
}

// 4 ------------------------------------------------------------------------------

Outcome degradation_calibration() {
  Outcome out;
  const auto t0 = Clock::now();
  degradation::DegradationParams dp;
  dp.r0 = 0.02;
  dp.lambda = degradation::calibrate_lambda(0.02, 0.35, 36);
  std::vector<double> losses;
  for (int i = 0; i < 5; ++i) {
    const auto g = hetmigen::generate(fixture::clustered_row(i, 0.25 + 0.05 * i), 40 + i, Dims{64, 64, 64});
    dp.seed = 60 + i;
    const auto seq = degradation::simulate(g.grid, dp);
    out.require(seq.frames.size() == 37, "frame count");
    std::vector<std::size_t> mineral;
    for (const auto& f : seq.frames) mineral.push_back(f.count(kMineral));
    const double total = 1.0 - double(mineral.back()) / double(mineral.front());
    losses.push_back(total);
    out.require(total >= 0.30 && total <= 0.40, "sample " + std::to_string(i) + " loss " + fmt("%.4f", total));
    for (std::size_t t = 1; t < mineral.size(); ++t) {
      out.require(mineral[t] <= mineral[t - 1], "mineral increased in month " + std::to_string(t));
      if (t >= 2) {
        out.require(mineral[t - 1] - mineral[t] <= mineral[t - 2] - mineral[t - 1],
                    "sample " + std::to_string(i) + " monthly loss increased in month " + std::to_string(t));
      }
    }
  }
  const double secs = seconds_since(t0);
  out.require(secs < 300.0, "runtime " + fmt("%.1f s", secs));
  std::ostringstream s;
  s << "lambda " << fmt("%.5f", dp.lambda) << ", 36-month losses";
  for (double l : losses) s << ' ' << fmt("%.4f", l);
  s << ", " << fmt("%.1f s", secs);
  out.note(s.str());
  return out;
}

// 5 ------------------------------------------------------------------------------

Outcome dataset_contract(const fs::path& work) {
  Outcome out;
  const fs::path dir = work / "manifest100";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(55);
  std::vector<fs::path> files;
  std::size_t round_trip_failures = 0;
  for (int i = 0; i < 100; ++i) {
    const double vf = 0.2 + 0.3 * uniform01(rng);
    const auto g = hetmigen::generate(fixture::clustered_row(i, vf), 800 + i, Dims{12, 12, 12});
    degradation::DegradationParams dp;
    dp.lambda = degradation::calibrate_lambda(0.02, 0.35, 36);
    dp.months = 2;
    dp.seed = i;
    auto seq = degradation::simulate(g.grid, dp);
    seq.source_id = "m" + std::to_string(i);
    const fs::path f = dir / (seq.source_id + ".ovxe");
    write_evolution(seq, f);
    files.push_back(f);
    const auto back = read_evolution(f);
    std::ifstream in(f, std::ios::binary);
    const std::vector<std::uint8_t> disk((std::istreambuf_iterator<char>(in)), {});
    if (!(back.frames == seq.frames) || encode_evolution(back) != disk) ++round_trip_failures;
  }
  const auto m = dataset::build_manifest(files, {}, 11);
  const auto te = m.count(dataset::Split::Test), va = m.count(dataset::Split::Val),
             tr = m.count(dataset::Split::Train);
  out.require(m.rejected.empty(), std::to_string(m.rejected.size()) + " files rejected by the quality filter");
  out.require(te == 10 && va == 14 && tr == 76,
              "splits " + std::to_string(te) + "/" + std::to_string(va) + "/" + std::to_string(tr));
  out.require(round_trip_failures == 0, std::to_string(round_trip_failures) + " evolution round trips differ");

  std::vector<double> counts(m.bin_count(), 0.0);
  std::vector<bool> eligible(m.bin_count(), false);
  for (const auto& e : m.entries) {
    if (e.split == dataset::Split::Train) eligible[std::size_t(e.bin)] = true;
  }
  std::mt19937_64 draw_rng(99);
  const auto draws = dataset::draw_samples(m, dataset::Split::Train, 10000, 1, draw_rng, true);
  for (const auto& d : draws) counts[std::size_t(d.bin)] += 1.0;
  std::size_t bins = 0;
  for (bool b : eligible) bins += b;
  const double expected = 10000.0 / double(bins);
  double chi2 = 0.0;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (eligible[b]) chi2 += (counts[b] - expected) * (counts[b] - expected) / expected;
  }
  const double crit = chi2_critical_1pct(bins - 1);
  out.require(bins >= 2, "the training split spans a single bin");
  out.require(chi2 < crit, "chi-square " + fmt("%.3f", chi2) + " >= " + fmt("%.3f", crit));
  out.note("splits " + std::to_string(te) + "/" + std::to_string(va) + "/" + std::to_string(tr) + ", " +
           std::to_string(bins) + " bins, chi-square " + fmt("%.2f", chi2) + " < " + fmt("%.2f", crit) +
           ", 100 round trips bit-exact");
  return out;
}

// 6, 7 ---------------------------------------------------------------------------

transvnet::ModelConfig toy_config() {
  transvnet::ModelConfig c;
  c.input_resolution = 32;
  c.cnn_downscalings = 2;
  c.cnn_channels = 16;
  c.patch_size = 2;
  c.hidden_dim = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.mlp_dim = 128;
  c.encoder_channels = {8, 16};
  c.decoder_channels = {32, 16, 16, 8};
  return c;
}

transvnet::ModelConfig vit_only_config() {
  transvnet::ModelConfig c = toy_config();
  c.vit_only = true;
  c.patch_size = 8;
  c.encoder_channels.clear();
  return c;
}

constexpr std::size_t kOverfitSteps = 500;
constexpr std::size_t kExperimentSteps = 600;

struct Experiment {
  fs::path data_dir;
  dataset::DatasetManifest manifest;
  std::optional<training::Params> hybrid;
  double hybrid_dsc = 0.0;
};

Experiment& experiment(const fs::path& work) {
  static Experiment e;
  if (e.data_dir.empty()) {
    e.data_dir = work / "sequences32";
    fs::remove_all(e.data_dir);
    const auto files = fixture::degraded_sequences(e.data_dir, 50, 32, 36, 42);
    e.manifest = dataset::build_manifest(files, {}, 7);
  }
  return e;
}

training::TrainConfig experiment_train_config(std::uint64_t seed) {
  training::TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 1;
  tc.steps_per_epoch = kExperimentSteps;
  tc.seed = seed;
  return tc;
}

Outcome learning_capability(const fs::path& work) {
  Outcome out;
  const auto t0 = Clock::now();
  Experiment& e = experiment(work);
  dataset::SequenceStore store;

  // Overfit four fixed training pairs.
  std::vector<dataset::TrainingSample> four;
  for (const auto& d : dataset::enumerate_pairs(e.manifest, dataset::Split::Train, 1)) {
    if (four.size() == 4) break;
    if (d.t % 9 == 0) four.push_back(dataset::materialize(e.manifest, store, d));
  }
  auto train_dsc = [&](training::Params& p) {
    double s = 0.0;
    for (const auto& x : four) s += dice(transvnet::predict(x.input, x.t, p), x.target, kMineral);
    return s / double(four.size());
  };
  training::TrainConfig oc = experiment_train_config(1);
  double overfit_dsc = 0.0;
  std::size_t overfit_steps = 0;
  training::fit(
      training::Params(toy_config(), 1), [&](std::mt19937_64&, std::size_t) { return four; }, kOverfitSteps, oc,
      [&](const training::LossSample& s, training::Params& p) {
        if (s.step % 25 != 0) return true;
        overfit_dsc = train_dsc(p);
        overfit_steps = s.step;
        return overfit_dsc < 0.99;
      });
  out.require(overfit_dsc >= 0.99, "overfit DSC " + fmt("%.4f", overfit_dsc) + " after " +
                                       std::to_string(overfit_steps) + " steps");

  // Held-out next-month prediction: hybrid against the ViT-only ablation.
  auto run = [&](const transvnet::ModelConfig& c) {
    auto r = training::train(e.manifest, store, c, experiment_train_config(3));
    const auto m = training::evaluate(training::model_predictor(r.params), e.manifest, store,
                                      dataset::Split::Test, 1);
    return std::make_pair(std::move(r.params), m);
  };
  auto [hybrid, hm] = run(toy_config());
  const auto [vit, vm] = run(vit_only_config());
  const auto identity = training::evaluate([](const VoxelGrid& in, double, const VoxelGrid&) { return in; },
                                           e.manifest, store, dataset::Split::Test, 1);
  e.hybrid = std::move(hybrid);
  e.hybrid_dsc = hm.dsc;
  const double minutes = seconds_since(t0) / 60.0;
  out.require(hm.dsc >= 0.90, "held-out hybrid DSC " + fmt("%.4f", hm.dsc));
  out.require(hm.dsc - vm.dsc >= 0.15, "hybrid minus ViT-only DSC " + fmt("%.4f", hm.dsc - vm.dsc));
  out.require(minutes < 30.0, "runtime " + fmt("%.1f min", minutes));
  out.note("overfit DSC " + fmt("%.4f", overfit_dsc) + " at step " + std::to_string(overfit_steps) +
           "; test DSC hybrid " + fmt("%.4f", hm.dsc) + " (HD " + fmt("%.3f", hm.hd_max) + "), ViT-only " +
           fmt("%.4f", vm.dsc) + " (HD " + fmt("%.3f", vm.hd_max) + "), persistence baseline " +
           fmt("%.4f", identity.dsc) + "; " + std::to_string(kExperimentSteps) + " steps each, " +
           fmt("%.1f min", minutes));
  return out;
}

Outcome transfer_property(const fs::path& work) {
  Outcome out;
  Experiment& e = experiment(work);
  if (!e.hybrid) {
    dataset::SequenceStore store;
    e.hybrid = training::train(e.manifest, store, toy_config(), experiment_train_config(3)).params;
  }
  transvnet::ModelConfig high = toy_config();
  high.input_resolution = 64;
  training::TransferResult t;
  try {
    t = training::transfer_weights(*e.hybrid, high, 17);
  } catch (const std::exception& ex) {
    out.require(false, std::string("transfer raised: ") + ex.what());
    return out;
  }
  const fs::path dir = work / "sequences64";
  fs::remove_all(dir);
  const auto files = fixture::degraded_sequences(dir, 4, 64, 2, 64);
  std::vector<dataset::TrainingSample> held_out;
  for (const auto& f : files) {
    const auto seq = read_evolution(f);
    for (int k = 0; k < 2; ++k) held_out.push_back({seq.frames[k], seq.frames[k + 1], k, 1, 0});
  }
  const double transferred = training::mean_loss(t.params, held_out, 2);
  double random_mean = 0.0;
  std::ostringstream rs;
  for (std::uint64_t s = 0; s < 3; ++s) {
    training::Params p(high, 1000 + s);
    const double l = training::mean_loss(p, held_out, 2);
    random_mean += l / 3.0;
    rs << ' ' << fmt("%.4f", l);
  }
  out.require(transferred < random_mean,
              "transferred loss " + fmt("%.4f", transferred) + " vs random mean " + fmt("%.4f", random_mean));
  out.note("64^3 held-out loss: transferred " + fmt("%.4f", transferred) + ", random inits" + rs.str() +
           " (mean " + fmt("%.4f", random_mean) + "); copied " + std::to_string(t.report.copied.size()) +
           ", resampled " + std::to_string(t.report.resampled.size()) + ", fresh " +
           std::to_string(t.report.fresh.size()));
  return out;
}

// 8 ------------------------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  Outcome out;
  struct Run {
    std::vector<std::uint8_t> generated, degraded, checkpoint, transferred, rolled;
    std::string manifest, csv;
    std::vector<VoxelGrid> batch;
    double dsc = 0.0, hd = 0.0, loss = 0.0;
  };
  // Both runs use the same directory, since the manifest records file paths.
  auto pipeline = [&] {
    Run r;
    const fs::path dir = work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<fs::path> files;
    for (int i = 0; i < 12; ++i) {
      const auto g = hetmigen::generate(fixture::clustered_row(i, 0.22 + 0.02 * i), 70 + i, Dims{16, 16, 16});
      EvolutionSequence single{{g.grid}, "d" + std::to_string(i)};
      const auto bytes = encode_evolution(single);
      r.generated.insert(r.generated.end(), bytes.begin(), bytes.end());
      degradation::DegradationParams dp;
      dp.lambda = degradation::calibrate_lambda(0.02, 0.35, 36);
      dp.months = 4;
      dp.seed = 9 + i;
      auto seq = degradation::simulate(g.grid, dp);
      seq.source_id = single.source_id;
      const auto db = encode_evolution(seq);
      r.degraded.insert(r.degraded.end(), db.begin(), db.end());
      files.push_back(dir / (seq.source_id + ".ovxe"));
      write_evolution(seq, files.back());
    }
    const auto m = dataset::build_manifest(files, {}, 5);
    r.manifest = m.to_json();
    dataset::SequenceStore store;
    std::mt19937_64 rng(6);
    for (const auto& s : dataset::sample_batch(m, store, dataset::Split::Train, 6, 1, rng, true)) {
      r.batch.push_back(s.input);
      r.batch.push_back(s.target);
    }
    const auto c = oracle::grad_check_config();
    training::TrainConfig tc;
    tc.steps_per_epoch = 6;
    tc.batch_size = 2;
    tc.seed = 8;
    auto trained = training::train(m, store, c, tc);
    r.csv = training::loss_csv(trained.report.loss_curve);
    r.checkpoint = nn::encode_checkpoint(trained.params.to_named_arrays());
    const auto ev = training::evaluate(training::model_predictor(trained.params), m, store, dataset::Split::Val, 1);
    r.dsc = ev.dsc;
    r.hd = ev.hd_max;
    auto high = c;
    high.input_resolution = 32;
    const auto t = training::transfer_weights(trained.params, high, 3);
    r.transferred = nn::encode_checkpoint(t.params.to_named_arrays());
    r.rolled = encode_evolution(transvnet::rollout(store.get(m, 0).frames[0], 0.0, 3, 1, trained.params));
    r.loss = training::mean_loss(trained.params, {dataset::materialize(m, store, {0, 0, 0, 1, {}})}, 1);
    return r;
  };
  const Run a = pipeline(), b = pipeline();
  out.require(a.generated == b.generated, "generate");
  out.require(a.degraded == b.degraded, "degrade");
  out.require(a.manifest == b.manifest, "build-dataset");
  out.require(a.batch == b.batch, "sampling and augmentation");
  out.require(a.csv == b.csv, "training loss curve");
  out.require(a.checkpoint == b.checkpoint, "trained weights");
  out.require(a.dsc == b.dsc && a.hd == b.hd, "evaluation");
  out.require(a.transferred == b.transferred, "weight transfer");
  out.require(a.rolled == b.rolled, "rollout");
  out.require(a.loss == b.loss, "eval loss");
  if (out.pass) out.note("generate, degrade, manifest, sampling, training, evaluation, transfer and rollout bit-identical");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  std::vector<int> selected;
  std::string work_dir = (fs::temp_directory_path() / "osteovox_acceptance").string();
  app.add_option("criteria", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--work-dir", work_dir, "Scratch directory for generated data");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};
  const fs::path work(work_dir);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracles},
      {"gradient verification", gradient_checks},
      {"generator contract", generator_contract},
      {"degradation calibration", degradation_calibration},
      {"dataset contract", [&] { return dataset_contract(work); }},
      {"learning capability", [&] { return learning_capability(work); }},
      {"transfer property", [&] { return transfer_property(work); }},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria[std::size_t(id - 1)];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << name;
    for (const auto& n : o.notes) std::cout << "\n        " << n;
    std::cout << std::endl;
  }
  return failed;
}
