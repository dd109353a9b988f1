// osteovox: generate -> degrade -> build-dataset -> train -> eval -> predict -> export.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "export.hpp"
#include "osteovox/components.hpp"
#include "osteovox/dataset.hpp"
#include "osteovox/degradation.hpp"
#include "osteovox/errors.hpp"
#include "osteovox/evolution_io.hpp"
#include "osteovox/hetmigen.hpp"
#include "osteovox/training.hpp"
#include "osteovox/transvnet.hpp"

using namespace osteovox;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

// Raised for bad inputs that are not library errors (missing files, empty directories).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot read " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

unsigned worker_count(unsigned jobs) {
  if (const char* env = std::getenv("OSTEOVOX_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, jobs);
}

/// Runs task(i) for i in [0, n) on `workers` threads; the first exception is rethrown.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& task) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        const std::lock_guard lock(m);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < std::min<std::size_t>(workers, n); ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<fs::path> evolution_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ovxe") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no .ovxe files in " + dir.string());
  return out;
}

// Model presets --------------------------------------------------------------------

transvnet::ModelConfig preset_config(const std::string& name) {
  transvnet::ModelConfig c;
  if (name == "default") return c;
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
  if (name == "toy") return c;
  if (name == "vit-toy") {
    c.vit_only = true;
    c.patch_size = 8;
    c.encoder_channels.clear();
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (toy, vit-toy, default)");
}

struct ModelOptions {
  std::string preset = "toy";
  std::string config_file;
  std::size_t resolution = 0;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Model preset: toy, vit-toy or default")->capture_default_str();
    app->add_option("--model-config", config_file, "Model configuration JSON (overrides --preset)");
    app->add_option("--resolution", resolution, "Override the input resolution H (0 keeps the preset)")
        ->capture_default_str();
  }

  transvnet::ModelConfig resolve() const {
    transvnet::ModelConfig c =
        config_file.empty() ? preset_config(preset) : transvnet::ModelConfig::from_json(read_text(config_file));
    if (resolution > 0) c.input_resolution = resolution;
    c.validate();
    return c;
  }
};

/// A checkpoint with its configuration, by default "model.json" beside it.
training::Params load_model(const fs::path& checkpoint, std::string config_file) {
  if (config_file.empty()) config_file = (checkpoint.parent_path() / "model.json").string();
  const auto config = transvnet::ModelConfig::from_json(read_text(config_file));
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
  return training::load_checkpoint(checkpoint, config);
}

// generate -------------------------------------------------------------------------

int cmd_generate(const fs::path& params, const fs::path& out, std::uint64_t seed, std::size_t dims, unsigned jobs,
                 int max_iterations) {
  const auto rows = hetmigen::parse_params_csv(read_text(params));
  fs::create_directories(out);
  std::vector<std::string> lines(rows.size());
  parallel_for(rows.size(), worker_count(jobs), [&](std::size_t i) {
    const auto& row = rows[i];
    const auto r = hetmigen::generate(row, derive_seed(seed, i), Dims{dims, dims, dims}, max_iterations);
    const std::string id = std::to_string(row.id);
    EvolutionSequence seq{{r.grid}, id};
    write_evolution(seq, out / (id + ".ovxe"));
    std::ostringstream s;
    s << "id " << id;
    for (unsigned p = 1; p <= row.n_phases; ++p) {
      const auto phase = static_cast<Label>(p);
      const double vf = volume_fraction(r.grid, phase);
      const double lcf = r.grid.count(phase) ? largest_component_fraction(r.grid, phase) : 0.0;
      char buf[96];
      std::snprintf(buf, sizeof buf, "  vf %.6f  clustering %.6f", vf, lcf);
      s << buf;
    }
    s << "  shortfall " << (r.shortfall ? "yes" : "no");
    lines[i] = s.str();
  });
  for (const auto& l : lines) std::cout << l << '\n';
  return kOk;
}

// degrade --------------------------------------------------------------------------

int cmd_degrade(const fs::path& in, int months, double r0, double target_loss, std::uint64_t seed, unsigned jobs) {
  const auto files = evolution_files(in);
  degradation::DegradationParams base;
  base.r0 = r0;
  base.months = months;
  base.lambda = months > 0 ? degradation::calibrate_lambda(r0, target_loss, degradation::kMaxMonths) : 0.0;
  base.validate();
  // Every file is checked before any is rewritten.
  std::vector<EvolutionSequence> seqs(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    seqs[i] = read_evolution(files[i]);
    if (seqs[i].frames[0].count(kMineral) == 0) {
      throw DataError(files[i].string() + ": frame 0 has no mineral phase");
    }
  }
  std::vector<std::string> lines(files.size());
  parallel_for(files.size(), worker_count(jobs), [&](std::size_t i) {
    auto p = base;
    p.seed = derive_seed(seed, i);
    auto out = degradation::simulate(seqs[i].frames[0], p);
    out.source_id = seqs[i].source_id;
    write_evolution(out, files[i]);
    const double m0 = double(out.frames.front().count(kMineral));
    char buf[64];
    std::snprintf(buf, sizeof buf, "  cumulative_loss %.6f", 1.0 - double(out.frames.back().count(kMineral)) / m0);
    lines[i] = files[i].filename().string() + buf;
  });
  for (const auto& l : lines) std::cout << l << '\n';
  return kOk;
}

// build-dataset --------------------------------------------------------------------

int cmd_build_dataset(const fs::path& in, const fs::path& out, std::uint64_t seed, std::vector<double> edges) {
  auto m = dataset::build_manifest(evolution_files(in), std::move(edges), seed);
  // Entries are stored relative to the manifest so the dataset directory can move.
  const fs::path base = fs::absolute(out).parent_path();
  for (auto& e : m.entries) e.file = fs::absolute(e.file).lexically_relative(base).generic_string();
  m.save(out);
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& r : m.rejected) std::cerr << "rejected: " << r << '\n';
  std::cout << "test " << m.count(dataset::Split::Test) << " / val " << m.count(dataset::Split::Val) << " / train "
            << m.count(dataset::Split::Train) << '\n';
  return kOk;
}

// train ----------------------------------------------------------------------------

struct TrainOptions {
  std::string manifest, out, init, optimizer = "sgd";
  std::size_t steps = 0;
  training::TrainConfig tc;
  bool no_augment = false;
  ModelOptions model;
};

bool is_data_error(const std::exception& e) {
  return dynamic_cast<const ParseError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
         dynamic_cast<const DataError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
         dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
         dynamic_cast<const nlohmann::json::exception*>(&e);
}

dataset::DatasetManifest load_manifest(const fs::path& p) { return dataset::DatasetManifest::from_json(read_text(p)); }

int cmd_train(TrainOptions o) {
  const auto config = o.model.resolve();
  const auto manifest = load_manifest(o.manifest);
  if (o.optimizer == "adam") {
    o.tc.optimizer.kind = training::OptimizerKind::Adam;
  } else if (o.optimizer != "sgd") {
    throw ConfigError("optimizer must be sgd or adam");
  }
  o.tc.augment = !o.no_augment;
  if (o.steps > 0) {
    o.tc.epochs = 1;
    o.tc.steps_per_epoch = o.steps;
  }
  const fs::path out(o.out);
  fs::create_directories(out);
  if (o.tc.checkpoint_every > 0) o.tc.checkpoint_dir = out / "checkpoints";
  write_text(out / "model.json", config.to_json());
  std::optional<training::Params> initial;
  if (!o.init.empty()) initial = load_model(o.init, "");
  if (initial && !(initial->config() == config)) {
    auto t = training::transfer_weights(*initial, config, o.tc.seed);
    std::cerr << "transferred weights: " << t.report.copied.size() << " copied, " << t.report.resampled.size()
              << " resampled, " << t.report.fresh.size() << " fresh\n";
    initial = std::move(t.params);
  }
  dataset::SequenceStore store(fs::path(o.manifest).parent_path());
  auto r = training::train(manifest, store, config, o.tc, std::move(initial), [](const training::LossSample& s, auto&) {
    if (s.step % 10 == 0) std::cerr << "step " << s.step << "  loss " << s.combined << "  ce " << s.cross_entropy << '\n';
    return true;
  });
  training::save_checkpoint(r.params, out / "final.ovxw");
  training::write_loss_csv(r.report.loss_curve, out / "loss.csv");
  write_text(out / "metrics.json", r.report.to_json());
  std::cout << "steps " << r.report.steps << "  final loss "
            << (r.report.loss_curve.empty() ? 0.0 : r.report.loss_curve.back().combined) << "  wrote "
            << (out / "final.ovxw").string() << '\n';
  if (r.report.diverged) {
    std::cerr << "training diverged; saved the last finite parameters\n";
    return kRuntime;
  }
  return kOk;
}

// eval -----------------------------------------------------------------------------

int cmd_eval(const std::string& manifest_path, const std::string& checkpoint, const std::string& config_file,
             const std::string& stub, const std::string& split, int horizon, std::string label) {
  const auto manifest = load_manifest(manifest_path);
  dataset::SequenceStore store(fs::path(manifest_path).parent_path());
  std::optional<training::Params> params;
  training::Predictor predictor;
  if (stub == "copy") {
    predictor = training::copy_stub();
  } else if (stub == "invert") {
    predictor = training::invert_stub();
  } else if (stub == "persistence") {
    predictor = [](const VoxelGrid& in, double, const VoxelGrid&) { return in; };
  } else if (!stub.empty()) {
    throw ConfigError("stub must be copy, invert or persistence");
  } else {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --stub");
    params = load_model(checkpoint, config_file);
    predictor = training::model_predictor(*params);
  }
  if (label.empty()) label = stub.empty() ? fs::path(checkpoint).stem().string() : stub + "-stub";
  const auto m = training::evaluate(predictor, manifest, store, dataset::split_from_string(split), horizon);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s  DSC %.6f, HD %.6f, HD(avg) %.6f  (%zu pairs, %s, t+%d)", label.c_str(), m.dsc,
                m.hd_max, m.hd_average, m.pairs, m.split.c_str(), horizon);
  std::cout << buf << '\n';
  return kOk;
}

// predict --------------------------------------------------------------------------

int cmd_predict(const fs::path& in, int frame, const std::string& checkpoint, const std::string& config_file,
                std::size_t steps, int horizon, const fs::path& out) {
  const auto seq = read_evolution(in);
  if (frame < 0 || std::size_t(frame) >= seq.frames.size()) {
    throw DataError("frame " + std::to_string(frame) + " out of range (file has " +
                    std::to_string(seq.frames.size()) + ")");
  }
  auto params = load_model(checkpoint, config_file);
  auto result = transvnet::rollout(seq.frames[std::size_t(frame)], frame, steps, horizon, params);
  result.source_id = seq.source_id;
  write_evolution(result, out);
  std::cout << "wrote " << result.frames.size() << " frames to " << out.string() << '\n';
  return kOk;
}

// export ---------------------------------------------------------------------------

int cmd_export(const fs::path& in, int frame, const std::string& mode, const std::string& axis, const fs::path& out) {
  const auto seq = read_evolution(in);
  if (frame < 0 || std::size_t(frame) >= seq.frames.size()) {
    throw DataError("frame " + std::to_string(frame) + " out of range (file has " +
                    std::to_string(seq.frames.size()) + ")");
  }
  const VoxelGrid& g = seq.frames[std::size_t(frame)];
  if (mode == "slices") {
    const auto files = exporter::write_slices(g, exporter::axis_from_string(axis), out);
    std::cout << "wrote " << files.size() << " slices to " << out.string() << '\n';
  } else {
    const auto mesh = exporter::voxel_face_mesh(g);
    write_text(out, exporter::to_obj(mesh));
    std::cout << "wrote " << mesh.triangles.size() << " triangles to " << out.string() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bone microstructure generation, degradation and evolution prediction"};
  app.require_subcommand(1);
  std::function<int()> action;

  // generate
  auto* gen = app.add_subcommand("generate", "Generate one microstructure per CSV parameter row");
  std::string g_params, g_out;
  std::uint64_t g_seed = 0;
  std::size_t g_dims = hetmigen::kDefaultSide;
  unsigned g_jobs = 1;
  int g_iter = -1;
  gen->add_option("--params", g_params, "Parameter CSV")->required();
  gen->add_option("--out", g_out, "Output directory")->required();
  gen->add_option("--seed", g_seed, "Base seed")->capture_default_str();
  gen->add_option("--dims", g_dims, "Grid side length")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--jobs", g_jobs, "Worker threads (OSTEOVOX_THREADS overrides)")->capture_default_str();
  gen->add_option("--max-iterations", g_iter, "Iteration budget (-1: 10 x side)")->capture_default_str();
  gen->callback([&] { action = [&] { return cmd_generate(g_params, g_out, g_seed, g_dims, g_jobs, g_iter); }; });

  // degrade
  auto* deg = app.add_subcommand("degrade", "Extend single-frame files with monthly resorption");
  std::string d_in;
  int d_months = degradation::kMaxMonths;
  double d_r0 = degradation::kDefaultInitialLoss, d_target = degradation::kDefaultTargetLoss;
  std::uint64_t d_seed = 0;
  unsigned d_jobs = 1;
  deg->add_option("--in", d_in, "Directory of .ovxe files (rewritten in place)")->required();
  deg->add_option("--months", d_months, "Months to simulate")->capture_default_str()->check(
      CLI::Range(0, degradation::kMaxMonths));
  deg->add_option("--r0", d_r0, "Fraction of mineral lost in month 1")->capture_default_str();
  deg->add_option("--target-loss", d_target, "Cumulative loss over 36 months")->capture_default_str();
  deg->add_option("--seed", d_seed, "Base seed")->capture_default_str();
  deg->add_option("--jobs", d_jobs, "Worker threads (OSTEOVOX_THREADS overrides)")->capture_default_str();
  deg->callback([&] { action = [&] { return cmd_degrade(d_in, d_months, d_r0, d_target, d_seed, d_jobs); }; });

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "Filter, bin and split evolution files into a manifest");
  std::string b_in, b_out;
  std::uint64_t b_seed = 0;
  std::vector<double> b_edges;
  bd->add_option("--in", b_in, "Directory of .ovxe files")->required();
  bd->add_option("--out", b_out, "Manifest path (default: <in>/manifest.json)");
  bd->add_option("--seed", b_seed, "Split seed")->capture_default_str();
  bd->add_option("--bin-edges", b_edges, "Volume-fraction bin edges (default: 0.05 grid)")->delimiter(',');
  bd->callback([&] {
    action = [&] {
      return cmd_build_dataset(b_in, b_out.empty() ? fs::path(b_in) / "manifest.json" : fs::path(b_out), b_seed,
                               b_edges);
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a manifest's training split");
  TrainOptions t;
  tr->add_option("--manifest", t.manifest, "Dataset manifest")->required();
  tr->add_option("--out", t.out, "Output directory for model.json, checkpoints and loss.csv")->required();
  t.model.add(tr);
  tr->add_option("--steps", t.steps, "Total optimizer steps (overrides --epochs)")->capture_default_str();
  tr->add_option("--epochs", t.tc.epochs, "Passes over the training pairs")->capture_default_str();
  tr->add_option("--batch-size", t.tc.batch_size, "Batch size")->capture_default_str();
  tr->add_option("--optimizer", t.optimizer, "sgd or adam")->capture_default_str();
  tr->add_option("--lr", t.tc.optimizer.lr, "Learning rate")->capture_default_str();
  tr->add_option("--momentum", t.tc.optimizer.momentum, "SGD momentum")->capture_default_str();
  tr->add_option("--weight-decay", t.tc.optimizer.weight_decay, "L2 penalty")->capture_default_str();
  tr->add_option("--horizon", t.tc.horizon, "Months between input and target")->capture_default_str();
  tr->add_flag("--no-augment", t.no_augment, "Disable rotation/flip augmentation");
  tr->add_option("--seed", t.tc.seed, "Seed")->capture_default_str();
  tr->add_option("--checkpoint-every", t.tc.checkpoint_every, "Checkpoint cadence in steps (0: off)")
      ->capture_default_str();
  tr->add_option("--time-budget", t.tc.time_budget_seconds, "Stop after this many seconds (0: off)")
      ->capture_default_str();
  tr->add_option("--init", t.init, "Start from this checkpoint (transferred if the config differs)");
  tr->callback([&] { action = [&] { return cmd_train(t); }; });

  // eval
  auto* ev = app.add_subcommand("eval", "Report mean DSC and Hausdorff distances on a split");
  std::string e_manifest, e_ckpt, e_config, e_stub, e_split = "test", e_label;
  int e_horizon = 1;
  ev->add_option("--manifest", e_manifest, "Dataset manifest")->required();
  ev->add_option("--checkpoint", e_ckpt, "Model checkpoint");
  ev->add_option("--model-config", e_config, "Model configuration (default: model.json beside the checkpoint)");
  ev->add_option("--stub", e_stub, "Reference predictor instead of a model: copy, invert or persistence");
  ev->add_option("--split", e_split, "train, val or test")->capture_default_str();
  ev->add_option("--horizon", e_horizon, "Months between input and target")->capture_default_str();
  ev->add_option("--label", e_label, "Method label for the report row");
  ev->callback([&] {
    action = [&] { return cmd_eval(e_manifest, e_ckpt, e_config, e_stub, e_split, e_horizon, e_label); };
  });

  // predict
  auto* pr = app.add_subcommand("predict", "Autoregressive rollout from one frame");
  std::string p_in, p_ckpt, p_config, p_out;
  int p_frame = 0, p_horizon = 1;
  std::size_t p_steps = 1;
  pr->add_option("--in", p_in, "Evolution file")->required();
  pr->add_option("--frame", p_frame, "Starting frame (its month)")->capture_default_str();
  pr->add_option("--checkpoint", p_ckpt, "Model checkpoint")->required();
  pr->add_option("--model-config", p_config, "Model configuration (default: model.json beside the checkpoint)");
  pr->add_option("--steps", p_steps, "Prediction steps")->capture_default_str();
  pr->add_option("--horizon", p_horizon, "Months per step")->capture_default_str();
  pr->add_option("--out", p_out, "Output evolution file")->required();
  pr->callback([&] {
    action = [&] { return cmd_predict(p_in, p_frame, p_ckpt, p_config, p_steps, p_horizon, p_out); };
  });

  // export
  auto* ex = app.add_subcommand("export", "Write PNG slices or a voxel-face OBJ mesh of one frame");
  std::string x_in, x_mode = "slices", x_axis = "z", x_out;
  int x_frame = 0;
  ex->add_option("--in", x_in, "Evolution file")->required();
  ex->add_option("--frame", x_frame, "Frame index")->capture_default_str();
  ex->add_option("--mode", x_mode, "slices or mesh")->capture_default_str()->check(CLI::IsMember({"slices", "mesh"}));
  ex->add_option("--axis", x_axis, "Slice axis: x, y or z")->capture_default_str();
  ex->add_option("--out", x_out, "Directory for slices, file for the mesh")->required();
  ex->callback([&] { action = [&] { return cmd_export(x_in, x_frame, x_mode, x_axis, x_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  try {
    return action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_data_error(e) ? kData : kRuntime;
  }
}
