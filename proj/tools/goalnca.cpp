// goalnca: train, evaluate, and steer goal-guided neural cellular automata.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "goalnca/eval.hpp"
#include "goalnca/image_io.hpp"
#include "goalnca/steer.hpp"
#include "goalnca/store.hpp"
#include "goalnca/trainer.hpp"

namespace fs = std::filesystem;
using namespace goalnca;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string timestamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

fs::path prepare_out(std::string out) {
  if (out.empty()) out = (fs::path("runs") / timestamp()).string();
  fs::create_directories(out);
  return out;
}

int default_threads() {
  if (const char* env = std::getenv("GOALNCA_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw config_error(std::string("GOALNCA_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

int goal_id(const Checkpoint& ck, const std::string& goal) {
  for (std::size_t i = 0; i < ck.meta.goal_names.size(); ++i) {
    if (ck.meta.goal_names[i] == goal) return static_cast<int>(i);
  }
  try {
    std::size_t used = 0;
    const int id = std::stoi(goal, &used);
    if (used == goal.size() && id >= 0 && id < ck.encoder.n_goals) return id;
  } catch (const std::exception&) {
  }
  std::string valid;
  for (const auto& n : ck.meta.goal_names) valid += (valid.empty() ? "" : ",") + n;
  throw goal_error("unknown goal '" + goal + "'; valid goals: " + valid);
}

/// Target image for `goal` on a `size` canvas, or nothing when the checkpoint
/// carries no target for it.
std::optional<RgbaImage> goal_target(const Checkpoint& ck, int goal, int size) {
  if (ck.targets.empty()) return std::nullopt;
  const std::size_t i = ck.meta.task == Task::morphing ? static_cast<std::size_t>(goal) : 0;
  if (i >= ck.targets.size()) return std::nullopt;
  return center_on_canvas(ck.targets[i], size, size);
}

Rgba8 upscale(const Rgba8& img, int scale) {
  if (scale <= 1) return img;
  Rgba8 out{img.width * scale, img.height * scale, {}};
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 4);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 4; ++c) {
        out.pixels[(static_cast<std::size_t>(y) * out.width + x) * 4 + c] =
            img.pixels[(static_cast<std::size_t>(y / scale) * img.width + x / scale) * 4 + c];
      }
    }
  }
  return out;
}

std::string frame_name(int step) {
  std::ostringstream os;
  os << "frame_" << std::setw(6) << std::setfill('0') << step << ".png";
  return os.str();
}

struct TrainArgs {
  std::string preset = "morphing";
  int iters = -1;
  long long seed = -1;
  std::string data_dir;
  std::string out;
  int threads = 0;
  int checkpoint_every = -1;
  std::string init;
  std::vector<std::string> sets;
};

int run_train(const TrainArgs& a) {
  RunConfig rc = preset(a.preset);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
    apply_setting(rc, detail::trim(std::string_view(kv).substr(0, eq)),
                  detail::trim(std::string_view(kv).substr(eq + 1)));
  }
  if (a.iters >= 0) rc.train.total_iterations = a.iters;
  if (a.seed >= 0) rc.train.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.data_dir.empty()) rc.data_dir = a.data_dir;
  if (!a.out.empty()) rc.out_dir = a.out;
  if (a.checkpoint_every >= 0) rc.checkpoint_every = a.checkpoint_every;
  rc.train.threads = a.threads > 0 ? a.threads : default_threads();
  rc.train.validate();

  DatasetOptions opt;
  opt.canvas = rc.train.grid_size;
  opt.content = rc.content_size;
  opt.names = rc.targets;
  EmojiDataset ds = load_emoji_dataset(rc.data_dir, opt);
  if (rc.train.task == Task::locomotion && ds.n_goals() != 1) {
    throw config_error("locomotion trains on exactly one target image, got " + std::to_string(ds.n_goals()));
  }
  const fs::path out = prepare_out(rc.out_dir);
  rc.out_dir = out.string();
  {
    std::ofstream cfg(out / "config.txt");
    cfg << format_config(rc);
  }

  Trainer trainer(rc.train, ds.images);
  const std::vector<std::string> names = rc.train.task == Task::morphing ? ds.names : std::vector<std::string>{};
  if (!a.init.empty()) {
    const Checkpoint init = load_checkpoint(a.init);
    expect_channels(init, rc.train.channels());
    auto& l = trainer.learner();
    if (init.encoder.kind != l.encoder.kind || init.encoder.n_goals != l.encoder.n_goals) {
      throw checkpoint_error(checkpoint_error::kind::shape_mismatch,
                             "checkpoint encoder is " + std::string(to_string(init.encoder.kind)) + " with " +
                                 std::to_string(init.encoder.n_goals) + " goals but the run needs " +
                                 std::string(to_string(l.encoder.kind)) + " with " +
                                 std::to_string(l.encoder.n_goals) + " goals");
    }
    l.nca = init.nca;
    l.encoder = init.encoder;
    if (init.optimizer) {
      l.nca_opt = init.optimizer->nca;
      l.enc_opt = init.optimizer->encoder;
    }
  }

  std::ofstream log(out / "train.jsonl");
  const auto t0 = std::chrono::steady_clock::now();
  auto save = [&](const fs::path& p) { save_checkpoint(p, make_checkpoint(trainer, true, names)); };
  for (int i = 0; i < rc.train.total_iterations; ++i) {
    const auto losses = trainer.step();
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json row = {{"iteration", trainer.iteration()}, {"loss", losses.back()},
                          {"segment_losses", losses}, {"elapsed_s", elapsed}};
    log << row.dump() << '\n';
    if (rc.log_every > 0 && trainer.iteration() % rc.log_every == 0) {
      log.flush();
      std::cout << "iter " << trainer.iteration() << " loss " << losses.back() << " (" << std::fixed
                << std::setprecision(1) << elapsed << "s)" << std::defaultfloat << std::setprecision(6) << '\n'
                << std::flush;
    }
    if (rc.checkpoint_every > 0 && trainer.iteration() % rc.checkpoint_every == 0) {
      save(out / ("ckpt_" + std::to_string(trainer.iteration()) + ".gnca"));
    }
  }
  save(out / "final.gnca");
  std::cout << "wrote " << (out / "final.gnca").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string goal = "0";
  int steps = 96;
  int grid = 0;
  double fire_rate = -1;
  double goal_rate = 1.0;
  int frame_every = 8;
  int scale = 1;
  std::uint64_t seed = 0;
  std::string out;
};

StepConfig step_config(const Checkpoint& ck, double fire_rate, double goal_rate) {
  StepConfig cfg{fire_rate >= 0 ? fire_rate : (ck.meta.task == Task::locomotion ? 1.0 : 0.5), goal_rate};
  cfg.validate();
  return cfg;
}

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const int goal = goal_id(ck, a.goal);
  const int size = a.grid > 0 ? a.grid : ck.meta.grid_size;
  const StepConfig cfg = step_config(ck, a.fire_rate, a.goal_rate);
  const fs::path out = prepare_out(a.out);
  const auto target = goal_target(ck, goal, size);

  std::ofstream csv(out / "metrics.csv");
  csv << "step,alive_cells,com_x,com_y,mse_target\n";
  auto record = [&](int step, const CellGrid<float>& g) {
    const auto com = try_center_of_mass(g);
    csv << step << ',' << alive_mask(g).count() << ',';
    if (com) csv << com->x << ',' << com->y;
    else csv << "nan,nan";
    csv << ',';
    if (target) csv << mse_rgba(g, *target);
    else csv << "nan";
    csv << '\n';
    if (a.frame_every > 0 && (step % a.frame_every == 0 || step == a.steps)) {
      write_png(out / frame_name(step), upscale(render_frame(g), a.scale));
    }
  };
  RngStream rng(a.seed, 0xe7a1);
  auto grid = new_seed<float>(size, size, ck.meta.n_hidden);
  record(0, grid);
  grid = run_phases(ck.nca, ck.encoder, std::move(grid), {{goal, a.steps}}, cfg, rng,
                    [&](int step, const CellGrid<float>& g) { record(step, g); });
  std::cout << "wrote " << (out / "metrics.csv").string() << '\n';
  return 0;
}

struct RenderArgs {
  std::string ckpt;
  std::vector<std::string> phases = {"0:96"};
  int grid = 0;
  double fire_rate = -1;
  double goal_rate = 1.0;
  int scale = 4;
  std::uint64_t seed = 0;
  std::string out;
  std::string name = "render.png";
};

int run_render(const RenderArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  std::vector<Phase> phases;
  for (const auto& p : a.phases) {
    const auto colon = p.rfind(':');
    if (colon == std::string::npos) throw config_error("phase must be goal:steps, got '" + p + "'");
    phases.push_back({goal_id(ck, p.substr(0, colon)),
                      detail::parse_number<int>(std::string_view(p).substr(colon + 1), "phase steps")});
    if (phases.back().steps < 0) throw config_error("phase steps must be non-negative");
  }
  const int size = a.grid > 0 ? a.grid : ck.meta.grid_size;
  const StepConfig cfg = step_config(ck, a.fire_rate, a.goal_rate);
  const fs::path out = prepare_out(a.out);
  RngStream rng(a.seed, 0xe7a1);
  const auto grid = run_phases(ck.nca, ck.encoder, new_seed<float>(size, size, ck.meta.n_hidden), phases, cfg, rng);
  write_png(out / a.name, upscale(render_frame(grid), a.scale));
  std::cout << "wrote " << (out / a.name).string() << '\n';
  return 0;
}

struct SweepArgs {
  std::string ckpt;
  std::vector<double> rates = {0.25, 0.5, 0.75, 1.0};
  std::vector<std::string> directions = {"right", "up", "left", "down"};
  int grid = 64;
  int grow = 96;
  int move = 128;
  int settle = 96;
  std::uint64_t seed = 2022;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  if (ck.meta.task != Task::locomotion) throw config_error("sweep needs a locomotion checkpoint");
  if (ck.targets.empty()) throw checkpoint_error(checkpoint_error::kind::malformed, "checkpoint has no target image");
  std::vector<Direction> dirs;
  for (const auto& d : a.directions) {
    const auto p = parse_direction(d);
    if (!p) throw config_error("unknown direction '" + d + "'");
    dirs.push_back(*p);
  }
  for (double r : a.rates) StepConfig{r, 1.0}.validate();
  SweepConfig sc;
  sc.grid_size = a.grid;
  sc.grow_steps = a.grow;
  sc.move_steps = a.move;
  sc.settle_steps = a.settle;
  sc.seed = a.seed;
  const auto rows = fire_rate_sweep(ck.nca, ck.encoder, ck.targets.front(), a.rates, dirs, sc);
  const fs::path out = prepare_out(a.out);
  std::ofstream csv(out / "sweep.csv");
  write_metrics_csv(csv, rows);
  write_metrics_csv(std::cout, rows);
  return 0;
}

int run_pca(const std::string& ckpt_path, const std::string& out_dir) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const auto emb = goal_pca(ck.encoder);
  nlohmann::json j;
  j["explained_variance_ratio"] = emb.explained;
  j["goals"] = nlohmann::json::array();
  for (std::size_t i = 0; i < emb.coords.size(); ++i) {
    const std::string name = i < ck.meta.goal_names.size() ? ck.meta.goal_names[i] : std::to_string(i);
    j["goals"].push_back({{"goal", name}, {"x", emb.coords[i].x}, {"y", emb.coords[i].y}});
  }
  const fs::path out = prepare_out(out_dir);
  std::ofstream(out / "pca.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct ServeArgs {
  std::string ckpt;
  std::string addr = "127.0.0.1:8080";
  int grid = 192;
  double sim_rate = 60.0;
  double frame_rate = 15.0;
  std::string static_dir;
  std::uint64_t seed = 0;
};

int run_serve(const ServeArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  ServeConfig sc;
  std::tie(sc.address, sc.port) = parse_address(a.addr);
  sc.grid_size = a.grid;
  sc.sim_rate = a.sim_rate;
  sc.frame_rate = a.frame_rate;
  sc.seed = a.seed;
  sc.static_dir = a.static_dir.empty() ? fs::path("web-ui") / "dist" : fs::path(a.static_dir);
  SteerServer server(SteerModel::from_checkpoint(ck), sc);
  std::cout << "serving on http://" << sc.address << ':' << server.port() << " (ws at /ws)" << std::endl;
  server.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goal-guided neural cellular automata"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model with pool sampling");
  train->add_option("--preset", ta.preset, "morphing, locomotion, morphing-desk, locomotion-desk, or a config file");
  train->add_option("--iters", ta.iters, "Training iterations")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", ta.seed, "Random seed")->check(CLI::NonNegativeNumber);
  train->add_option("--data-dir", ta.data_dir, "Directory of target PNGs");
  train->add_option("--out", ta.out, "Output directory (default ./runs/<timestamp>)");
  train->add_option("--threads", ta.threads, "Worker threads (default $GOALNCA_THREADS or 1)")->check(CLI::PositiveNumber);
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Iterations between checkpoints (0 = final only)")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--init", ta.init, "Initialize weights from a checkpoint");
  train->add_option("--set", ta.sets, "Override a config key (key=value)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Grow from a seed under one goal, writing frames and metrics");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval->add_option("--goal", ea.goal, "Goal name or id");
  eval->add_option("--steps", ea.steps, "Steps to run")->check(CLI::NonNegativeNumber);
  eval->add_option("--grid", ea.grid, "Grid size (default: training size)")->check(CLI::Range(3, 4096));
  eval->add_option("--fire-rate", ea.fire_rate, "Cell fire rate")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--goal-rate", ea.goal_rate, "Goal perturbation rate")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--frame-every", ea.frame_every, "Write a frame every N steps (0 = none)")
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--scale", ea.scale, "Nearest-neighbor upscale for frames")->check(CLI::Range(1, 64));
  eval->add_option("--seed", ea.seed, "Random seed");
  eval->add_option("--out", ea.out, "Output directory");

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Run goal phases from a seed and write the final frame");
  render->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
  render->add_option("--phase", ra.phases, "goal:steps, repeatable, run in order");
  render->add_option("--grid", ra.grid, "Grid size")->check(CLI::Range(3, 4096));
  render->add_option("--fire-rate", ra.fire_rate, "Cell fire rate")->check(CLI::Range(0.0, 1.0));
  render->add_option("--goal-rate", ra.goal_rate, "Goal perturbation rate")->check(CLI::Range(0.0, 1.0));
  render->add_option("--scale", ra.scale, "Nearest-neighbor upscale")->check(CLI::Range(1, 64));
  render->add_option("--seed", ra.seed, "Random seed");
  render->add_option("--out", ra.out, "Output directory");
  render->add_option("--name", ra.name, "Output file name");

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Fire-rate robustness sweep on a locomotion checkpoint");
  sweep->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
  sweep->add_option("--rates", sa.rates, "Comma-separated fire rates")->delimiter(',');
  sweep->add_option("--directions", sa.directions, "Comma-separated directions")->delimiter(',');
  sweep->add_option("--grid", sa.grid, "Grid size")->check(CLI::Range(3, 4096));
  sweep->add_option("--grow", sa.grow, "Grow steps under stay")->check(CLI::NonNegativeNumber);
  sweep->add_option("--move", sa.move, "Steps under the direction goal")->check(CLI::NonNegativeNumber);
  sweep->add_option("--settle", sa.settle, "Stay steps after moving")->check(CLI::NonNegativeNumber);
  sweep->add_option("--seed", sa.seed, "Random seed");
  sweep->add_option("--out", sa.out, "Output directory");

  std::string pca_ckpt, pca_out;
  auto* pca = app.add_subcommand("pca", "2-D PCA of the goal encodings");
  pca->add_option("--ckpt", pca_ckpt, "Checkpoint")->required();
  pca->add_option("--out", pca_out, "Output directory");

  ServeArgs va;
  auto* serve = app.add_subcommand("serve", "Run the live steering service");
  serve->add_option("--ckpt", va.ckpt, "Checkpoint")->required();
  serve->add_option("--addr", va.addr, "host:port");
  serve->add_option("--grid", va.grid, "Grid size")->check(CLI::Range(3, 4096));
  serve->add_option("--sim-rate", va.sim_rate, "Simulation steps per second")->check(CLI::PositiveNumber);
  serve->add_option("--frame-rate", va.frame_rate, "Frames per second")->check(CLI::PositiveNumber);
  serve->add_option("--static", va.static_dir, "Web UI asset directory (default web-ui/dist)");
  serve->add_option("--seed", va.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*render) return run_render(ra);
    if (*sweep) return run_sweep(sa);
    if (*pca) return run_pca(pca_ckpt, pca_out);
    if (*serve) return run_serve(va);
  } catch (const config_error& e) {
    std::cerr << "goalnca: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "goalnca: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
