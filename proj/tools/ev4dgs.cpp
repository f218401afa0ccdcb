#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "ev4dgs/binary_mask.hpp"
#include "ev4dgs/camera.hpp"
#include "ev4dgs/config.hpp"
#include "ev4dgs/core/error.hpp"
#include "ev4dgs/core/parallel.hpp"
#include "ev4dgs/events.hpp"
#include "ev4dgs/fixture.hpp"
#include "ev4dgs/io/image_io.hpp"
#include "ev4dgs/masks.hpp"
#include "ev4dgs/metrics.hpp"
#include "ev4dgs/scene.hpp"
#include "ev4dgs/simulator.hpp"
#include "ev4dgs/trainer.hpp"
#include "manifest.hpp"
#include "selfcheck.hpp"

namespace fs = std::filesystem;
using namespace ev4dgs;
using cli::Manifest;

namespace {

constexpr int kExitBadArgs = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitCheckFailed = 4;

void log(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

std::string indexed(const char* pattern, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, i);
  return buf;
}

/// Frames as the sensor sees them: PFM values as stored, PNG codes / 255.
Image read_sensor_frame(const std::string& path) {
  const auto ext = fs::path(path).extension().string();
  if (ext == ".pfm" || ext == ".PFM") return io::read_pfm(path);
  return io::read_png_raw(path);
}

/// Display-space image for scoring: PFM files hold linear values, PNG files
/// are already gamma encoded.
Image read_display(const std::string& path) {
  const auto ext = fs::path(path).extension().string();
  if (ext != ".pfm" && ext != ".PFM") return io::read_png_raw(path);
  Image img = io::read_pfm(path);
  for (auto& v : img.data) v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / io::kDisplayGamma);
  return img;
}

std::vector<BinaryMask> read_masks(const std::string& dir, const CameraTrack& track) {
  std::vector<BinaryMask> masks;
  for (std::size_t i = 0; i < track.size(); ++i) {
    const fs::path p = fs::path(dir) / indexed("mask_%04zu.png", i);
    if (!fs::exists(p)) throw DataError("missing mask " + p.string());
    BinaryMask m = read_mask_png(p.string());
    if (m.width != track.intrinsics().width || m.height != track.intrinsics().height)
      throw DataError("mask size differs from camera resolution: " + p.string());
    m.t = track.time(i);
    m.view = static_cast<int>(i);
    masks.push_back(std::move(m));
  }
  return masks;
}

void write_masks(const std::string& dir, const std::vector<BinaryMask>& masks) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < masks.size(); ++i)
    write_mask_png((fs::path(dir) / indexed("mask_%04zu.png", i)).string(), masks[i]);
}

std::vector<BinaryMask> generate_masks(const EventStream& events, const CameraTrack& track, const MaskOptions& opt) {
  const auto results = gen_masks(events, track, opt);
  std::vector<BinaryMask> masks;
  int fallback = 0;
  for (const auto& r : results) {
    fallback += r.used_threshold;
    masks.push_back(r.mask);
  }
  if (fallback) log("masks: " + std::to_string(fallback) + " views used the threshold fallback");
  return masks;
}

struct Args {
  std::vector<std::string> argv;
  int threads = 0;

  // simulate-events
  std::string frames, out;
  double fps = 0.0, sigma = 0.2, eps = kLogFloor, t0 = 0.0;
  bool color = false;

  // gen-masks / train
  std::string events, cameras, masks, config, method, stage = "both", coarse;
  long seed = -1;

  // render
  std::string scene, out_pfm, out_dir;
  double t = 0.0;
  bool has_t = false;

  // evaluate
  std::string renders, refs;

  // make-fixture
  bool write_frames = false;
};

int cmd_simulate(const Args& a) {
  const auto files = io::list_images(a.frames);
  if (files.size() < 2) throw DataError("simulate-events needs at least two frames in " + a.frames);
  if (!(a.fps > 0.0)) throw DataError("--fps must be positive");
  if (a.t0 < 0.0) throw DataError("--t0 must be non-negative");
  EventSimulator sim(read_sensor_frame(files[0]), a.t0, a.sigma, a.color, a.eps);
  for (std::size_t i = 1; i < files.size(); ++i) sim.feed(read_sensor_frame(files[i]), a.t0 + i / a.fps);
  const EventStream s = sim.finish();
  write_events(a.out, s);
  log("simulate-events: " + std::to_string(s.size()) + " events from " + std::to_string(files.size()) + " frames");

  Manifest m("simulate-events", a.argv);
  m.input("frames", a.frames);
  m.set("parameters", {{"fps", a.fps}, {"sigma", a.sigma}, {"color", a.color}, {"eps", a.eps}, {"t0", a.t0}});
  m.output(a.out);
  m.write(cli::manifest_path(a.out));
  return 0;
}

TrainConfig load_config(const Args& a, Config& raw) {
  if (!a.config.empty()) raw = Config::load(a.config);
  if (a.seed >= 0) raw.set("seed", std::to_string(a.seed));
  if (!a.method.empty()) raw.set("mask_method", a.method);
  TrainConfig cfg = TrainConfig::from(raw);
  for (const auto& k : raw.unused()) log("warning: unknown config key '" + k + "'");
  return cfg;
}

int cmd_gen_masks(const Args& a) {
  Config raw;
  const TrainConfig cfg = load_config(a, raw);
  const EventStream events = read_events(a.events);
  const CameraTrack track = CameraTrack::load(a.cameras);
  write_masks(a.out, generate_masks(events, track, cfg.masks));

  Manifest m("gen-masks", a.argv);
  m.input("events", a.events);
  m.input("cameras", a.cameras);
  if (!a.config.empty()) m.input("config", a.config);
  m.config(cfg.to_config());
  m.output(a.out);
  m.write(cli::manifest_path(a.out));
  return 0;
}

int cmd_train(const Args& a) {
  if (a.stage != "coarse" && a.stage != "fine" && a.stage != "both") throw CLI::ValidationError("--stage", a.stage);
  if (a.stage == "fine" && a.coarse.empty()) throw CLI::ValidationError("--coarse", "required with --stage fine");
  Config raw;
  const TrainConfig cfg = load_config(a, raw);
  const EventStream events = read_events(a.events);
  const CameraTrack track = CameraTrack::load(a.cameras);
  std::vector<BinaryMask> masks;
  if (!a.masks.empty()) {
    masks = read_masks(a.masks, track);
  } else {
    log("train: generating masks from events");
    masks = generate_masks(events, track, cfg.masks);
  }

  Manifest m("train", a.argv);
  m.input("events", a.events);
  m.input("cameras", a.cameras);
  if (!a.masks.empty()) m.input("masks", a.masks);
  if (!a.config.empty()) m.input("config", a.config);
  if (!a.coarse.empty()) m.input("coarse", a.coarse);
  m.seed(cfg.seed);
  m.config(cfg.to_config());
  m.set("stage", a.stage);
  m.set("threads", num_threads());
  m.output(a.out);

  Rng rng(cfg.seed);
  CoarsePointModel coarse;
  bool diverged = false;
  if (a.stage == "fine") {
    coarse = load_coarse(a.coarse);
  } else {
    CoarseTrainResult r = train_coarse(cfg, masks, track, rng, log);
    coarse = std::move(r.model);
    diverged = r.diverged;
    log("coarse: loss " + std::to_string(r.initial_loss) + " -> " + std::to_string(r.final_loss));
    if (a.stage == "coarse" || diverged) {
      if (a.stage == "coarse") {
        save_coarse(a.out, coarse);
      } else {
        Scene partial;
        partial.coarse = coarse;
        save_scene(a.out, partial);
      }
      m.set("diverged", diverged);
      m.write(cli::manifest_path(a.out));
      return diverged ? kExitDiverged : 0;
    }
  }
  FineTrainResult r = train_fine(cfg, events, masks, track, coarse, rng, log);
  if (!a.coarse.empty()) r.scene.coarse_source = a.coarse;
  save_scene(a.out, r.scene);
  log("fine: " + std::to_string(r.scene.gaussians.size()) + " Gaussians, " + std::to_string(r.pruned) + " pruned");
  m.set("diverged", r.diverged);
  m.write(cli::manifest_path(a.out));
  return r.diverged ? kExitDiverged : 0;
}

int cmd_render(const Args& a) {
  const bool single = !a.out.empty() || !a.out_pfm.empty();
  if (single == !a.out_dir.empty()) throw CLI::ValidationError("render", "give --out/--out-pfm with --t, or --out-dir");
  if (single && !a.has_t) throw CLI::ValidationError("--t", "required with --out/--out-pfm");
  const Scene scene = load_scene(a.scene);
  const CameraTrack track = CameraTrack::load(a.cameras);
  Manifest m("render", a.argv);
  m.input("scene", a.scene);
  m.input("camera", a.cameras);
  if (single) {
    const Image img = render_scene(scene, track.camera_at(a.t), a.t).intensity;
    if (!a.out.empty()) {
      io::write_png_gamma(a.out, img);
      m.output(a.out);
    }
    if (!a.out_pfm.empty()) {
      io::write_pfm(a.out_pfm, img);
      m.output(a.out_pfm);
    }
    m.set("t", a.t);
    m.write(cli::manifest_path(!a.out.empty() ? a.out : a.out_pfm));
    return 0;
  }
  fs::create_directories(a.out_dir);
  for (std::size_t i = 0; i < track.size(); ++i) {
    const Image img = render_scene(scene, track.camera(i), track.time(i)).intensity;
    io::write_png_gamma((fs::path(a.out_dir) / indexed("view_%04zu.png", i)).string(), img);
    io::write_pfm((fs::path(a.out_dir) / indexed("view_%04zu.pfm", i)).string(), img);
  }
  m.output(a.out_dir);
  m.write(cli::manifest_path(a.out_dir));
  return 0;
}

/// Pairs images by file name, preferring PFM when both directories have it.
std::vector<std::pair<std::string, std::string>> pair_images(const std::string& renders, const std::string& refs) {
  auto by_ext = [](const std::string& dir, const std::string& ext) {
    std::vector<std::string> out;
    for (const auto& f : io::list_images(dir))
      if (fs::path(f).extension() == ext) out.push_back(fs::path(f).filename().string());
    return out;
  };
  for (const std::string ext : {".pfm", ".png"}) {
    const auto a = by_ext(renders, ext), b = by_ext(refs, ext);
    if (a.empty() || b.empty()) continue;
    if (a != b) throw DataError("render and reference file names differ for " + ext + " images");
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& n : a) out.emplace_back((fs::path(renders) / n).string(), (fs::path(refs) / n).string());
    return out;
  }
  throw DataError("no matching images in " + renders + " and " + refs);
}

int cmd_evaluate(const Args& a) {
  const auto pairs = pair_images(a.renders, a.refs);
  std::vector<Image> renders, refs;
  for (const auto& [r, g] : pairs) {
    renders.push_back(read_display(r));
    refs.push_back(read_display(g));
    if (renders.back().channels != refs.back().channels) {
      renders.back() = to_grey(renders.back());
      refs.back() = to_grey(refs.back());
    }
  }
  const ColorCorrection cc = color_correct(renders, refs);
  nlohmann::json rep;
  rep["space"] = "display";
  rep["s"] = cc.s;
  rep["b"] = cc.b;
  rep["correction_aborted"] = cc.aborted;
  double p0 = 0.0, p1 = 0.0, s0 = 0.0, s1 = 0.0;
  nlohmann::json images = nlohmann::json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double a0 = psnr(renders[i], refs[i]), a1 = psnr(cc.corrected[i], refs[i]);
    const double b0 = ssim(renders[i], refs[i]), b1 = ssim(cc.corrected[i], refs[i]);
    images.push_back({{"name", fs::path(pairs[i].first).filename().string()},
                      {"psnr", a0},
                      {"ssim", b0},
                      {"psnr_corrected", a1},
                      {"ssim_corrected", b1}});
    p0 += a0, p1 += a1, s0 += b0, s1 += b1;
  }
  const double n = static_cast<double>(pairs.size());
  rep["images"] = images;
  rep["mean"] = {{"psnr", p0 / n}, {"ssim", s0 / n}, {"psnr_corrected", p1 / n}, {"ssim_corrected", s1 / n}};
  std::ofstream out(a.out);
  if (!out) throw DataError("cannot write " + a.out);
  out << rep.dump(2) << "\n";
  out.close();
  std::printf("PSNR %.2f -> %.2f dB, SSIM %.4f -> %.4f (s %.4f, b %.4f)\n", p0 / n, p1 / n, s0 / n, s1 / n, cc.s,
              cc.b);

  Manifest m("evaluate", a.argv);
  m.input("renders", a.renders);
  m.input("refs", a.refs);
  m.output(a.out);
  m.write(cli::manifest_path(a.out));
  return 0;
}

int cmd_selfcheck() {
  const auto rows = cli::run_selfcheck();
  bool ok = true;
  for (const auto& r : rows) {
    std::printf("%-28s %s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL", r.detail.c_str());
    ok = ok && r.pass;
  }
  return ok ? 0 : kExitCheckFailed;
}

int cmd_make_fixture(const Args& a) {
  const std::uint64_t seed = a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : 7;
  const ToyFixture fx = make_toy_fixture(seed);
  write_fixture(fx, a.out, a.write_frames);
  log("make-fixture: " + std::to_string(fx.events.size()) + " events, " + std::to_string(fx.track.size()) +
      " training poses, " + std::to_string(fx.heldout.size()) + " held-out poses");
  Manifest m("make-fixture", a.argv);
  m.seed(seed);
  m.config(fx.config.to_config());
  m.set("write_frames", a.write_frames);
  m.output(a.out);
  m.write(cli::manifest_path(a.out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Args a;
  a.argv.assign(argv, argv + argc);
  CLI::App app{"Event-based reconstruction of deforming objects with 4D Gaussians"};
  app.require_subcommand(1);
  app.add_option("--threads", a.threads, "worker threads (default: hardware concurrency)")->check(CLI::NonNegativeNumber);

  auto* sim = app.add_subcommand("simulate-events", "simulate an event stream from a frame directory");
  sim->add_option("--frames", a.frames, "directory of .pfm/.png frames, sorted by name")->required();
  sim->add_option("--fps", a.fps, "frame rate")->required();
  sim->add_option("--sigma", a.sigma, "contrast threshold");
  sim->add_flag("--color", a.color, "three-channel frames sampled through an RGGB Bayer pattern");
  sim->add_option("--eps", a.eps, "log-intensity floor");
  sim->add_option("--t0", a.t0, "time of the first frame");
  sim->add_option("--out", a.out, "output event file")->required();

  auto* masks = app.add_subcommand("gen-masks", "object masks from events at every camera pose");
  masks->add_option("--events", a.events)->required();
  masks->add_option("--cameras", a.cameras)->required();
  masks->add_option("--out", a.out, "output directory")->required();
  masks->add_option("--method", a.method)->check(CLI::IsMember({"snake", "threshold"}));
  masks->add_option("--config", a.config, "key = value file");

  auto* train = app.add_subcommand("train", "fit the coarse model and/or the Gaussians");
  train->add_option("--config", a.config, "key = value file");
  train->add_option("--events", a.events)->required();
  train->add_option("--cameras", a.cameras)->required();
  train->add_option("--masks", a.masks, "mask directory (generated from events when omitted)");
  train->add_option("--stage", a.stage)->check(CLI::IsMember({"coarse", "fine", "both"}));
  train->add_option("--coarse", a.coarse, "coarse checkpoint for --stage fine");
  train->add_option("--seed", a.seed, "overrides the config seed")->check(CLI::NonNegativeNumber);
  train->add_option("--out", a.out, "checkpoint path")->required();

  auto* render = app.add_subcommand("render", "render a trained scene");
  render->add_option("--scene", a.scene)->required();
  render->add_option("--camera", a.cameras, "camera track JSON")->required();
  render->add_option("--t", a.t, "time in seconds")->each([&](const std::string&) { a.has_t = true; });
  render->add_option("--out", a.out, "8-bit gamma-encoded PNG");
  render->add_option("--out-pfm", a.out_pfm, "linear PFM");
  render->add_option("--out-dir", a.out_dir, "render every pose of the track");

  auto* eval = app.add_subcommand("evaluate", "PSNR / SSIM with color correction");
  eval->add_option("--renders", a.renders)->required();
  eval->add_option("--refs", a.refs)->required();
  eval->add_option("--out", a.out, "report JSON")->required();

  auto* self = app.add_subcommand("selfcheck", "gradient checks and oracle comparisons");

  auto* fixture = app.add_subcommand("make-fixture", "write the synthetic toy dataset");
  fixture->add_option("--seed", a.seed)->check(CLI::NonNegativeNumber);
  fixture->add_option("--out", a.out, "output directory")->required();
  fixture->add_flag("--write-frames", a.write_frames, "also write the simulator input frames");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitBadArgs;
  }
  set_num_threads(a.threads > 0 ? a.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));

  try {
    if (*sim) return cmd_simulate(a);
    if (*masks) return cmd_gen_masks(a);
    if (*train) return cmd_train(a);
    if (*render) return cmd_render(a);
    if (*eval) return cmd_evaluate(a);
    if (*self) return cmd_selfcheck();
    if (*fixture) return cmd_make_fixture(a);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitBadArgs;
  } catch (const DivergenceError& e) {
    log(std::string("diverged: ") + e.what());
    return kExitDiverged;
  } catch (const DataError& e) {
    log(std::string("data error: ") + e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kExitData;
  }
  return kExitBadArgs;
}
