// mono4d command line: synthesize test scenes, reconstruct 4D pointclouds
// from a scene manifest, and score reconstructions against ground truth.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mono4d/core.hpp"
#include "mono4d/errors.hpp"
#include "mono4d/eval.hpp"
#include "mono4d/io.hpp"
#include "mono4d/loss.hpp"
#include "mono4d/manifest.hpp"
#include "mono4d/pipeline.hpp"
#include "mono4d/refine.hpp"
#include "mono4d/synth.hpp"

namespace fs = std::filesystem;
using namespace mono4d;

namespace {

std::string categorize(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) != nullptr) return "validation";
  if (dynamic_cast<const InputShapeError*>(&e) != nullptr) return "shape";
  if (dynamic_cast<const DegeneracyError*>(&e) != nullptr) return "degeneracy";
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return "numeric";
  if (dynamic_cast<const ParseError*>(&e) != nullptr) return "parse";
  if (dynamic_cast<const IoError*>(&e) != nullptr) return "io";
  return "internal";
}

std::string frame_file(const std::string& stem, std::size_t t, const std::string& ext) {
  std::ostringstream name;
  name << stem << "_";
  name.width(5);
  name.fill('0');
  name << t;
  name << ext;
  return name.str();
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << text;
  if (!out) throw IoError("short write to " + file.string());
}

nlohmann::ordered_json loss_report_json(const loss::LossReport& report,
                                        const loss::LossWeights& weights) {
  auto term = [](const loss::TermReport& t) {
    return nlohmann::ordered_json{{"value", t.value}, {"count", t.count}};
  };
  nlohmann::ordered_json j;
  j["flow"] = term(report.flow);
  j["track"] = term(report.track);
  j["mask"] = term(report.mask);
  j["shape"] = term(report.shape);
  j["intrinsic"] = term(report.intrinsic);
  j["total"] = report.total;
  j["weights"] = nlohmann::ordered_json{{"flow", weights.flow},
                                        {"track", weights.track},
                                        {"mask", weights.mask},
                                        {"shape", weights.shape},
                                        {"intrinsic", weights.intrinsic}};
  return j;
}

/// Reads a reconstruction output directory back into a global cloud sequence:
/// frame t is unproject(depth_{t:05}.pfm, intrinsics.json) carried through
/// poses.json entry t.
core::CloudSequence load_prediction(const fs::path& dir) {
  auto intrinsics = io::read_intrinsics_json(dir / "intrinsics.json");
  auto poses = io::read_poses_json(dir / "poses.json");
  if (poses.empty()) {
    throw InputShapeError("prediction directory " + dir.string() + " holds no poses");
  }
  std::vector<core::FrameCloud> clouds;
  clouds.reserve(poses.size());
  for (std::size_t t = 0; t < poses.size(); ++t) {
    auto depth = io::read_depth_pfm(dir / frame_file("depth", t, ".pfm"));
    clouds.push_back(core::unproject(depth, intrinsics));
  }
  return core::assemble_global(clouds, poses, intrinsics);
}

/// Assembles the manifest's ground truth into the same representation.
core::CloudSequence load_ground_truth(const manifest::SceneManifest& m,
                                      const manifest::SceneData& data) {
  if (!m.has_ground_truth()) {
    throw ValidationError(
        "scene '" + m.scene_id + "' carries no ground truth to evaluate against",
        {"manifest lists no gt_depths/gt_poses"});
  }
  std::vector<core::FrameCloud> clouds;
  clouds.reserve(data.gt_depths.size());
  for (const auto& depth : data.gt_depths) {
    clouds.push_back(core::unproject(depth, data.intrinsics));
  }
  return core::assemble_global(clouds, data.gt_poses, data.intrinsics);
}

/// Keeps every stride-th track so at most max_count survive; a no-op when the
/// set is already small enough.
corr::TrackSet subsample_tracks(const corr::TrackSet& tracks, int max_count) {
  if (max_count <= 0 || tracks.num_tracks <= max_count) return tracks;
  const int stride = (tracks.num_tracks + max_count - 1) / max_count;
  corr::TrackSet out;
  out.num_frames = tracks.num_frames;
  out.query_frame = tracks.query_frame;
  for (int i = 0; i < tracks.num_tracks; i += stride) {
    for (int t = 0; t < tracks.num_frames; ++t) {
      out.positions.push_back(tracks.at(i, t));
      out.visible.push_back(tracks.visible[tracks.index(i, t)]);
    }
    ++out.num_tracks;
  }
  return out;
}

struct ReconstructOptions {
  std::string manifest_file;
  std::string out_dir;
  std::size_t window = 4;
  std::size_t overlap = 1;
  bool refine = false;
  int refine_iters = 200;
  bool verbose = false;
};

int run_reconstruct(const ReconstructOptions& opt) {
  pipeline::WindowConfig window{opt.window, opt.overlap};
  try {
    window.validate();
  } catch (const InputShapeError& e) {
    std::cerr << "error: [usage] " << e.what() << "\n";
    return 2;
  }
  if (opt.refine_iters < 1) {
    std::cerr << "error: [usage] --refine-iters must be at least 1\n";
    return 2;
  }

  auto m = manifest::read_manifest(opt.manifest_file);
  pipeline::ManifestSource source(m);

  pipeline::StreamParams params;
  params.window = window;
  params.refine = opt.refine;
  params.refine_params.max_iterations = opt.refine_iters;
  if (opt.verbose) {
    params.on_window = [](const pipeline::WindowTrace& w) {
      nlohmann::ordered_json j{{"window", w.index},
                               {"start", w.start},
                               {"frames", w.frames},
                               {"stitch_scale", w.stitch_scale},
                               {"refine_iterations", w.refine_iterations},
                               {"loss_before", w.loss_before},
                               {"loss_after", w.loss_after}};
      std::cout << j.dump() << "\n";
    };
  }

  auto result = pipeline::reconstruct_stream(source, params);

  const fs::path out(opt.out_dir);
  fs::create_directories(out);
  const auto& seq = result.sequence;
  const std::size_t emitted = seq.frame_count();

  std::vector<core::DepthMap> scaled_depths;
  scaled_depths.reserve(emitted);
  for (std::size_t t = 0; t < emitted; ++t) {
    auto depth = source.depth(t);
    for (std::size_t i = 0; i < depth.size(); ++i) {
      if (depth.valid[i] != 0) depth.values[i] *= result.depth_scales[t];
    }
    scaled_depths.push_back(std::move(depth));
  }

  if (emitted > 0) {
    io::write_intrinsics_json(out / "intrinsics.json", seq.intrinsics);
    io::write_poses_json(out / "poses.json", seq.poses);
    for (std::size_t t = 0; t < emitted; ++t) {
      io::write_depth_pfm(out / frame_file("depth", t, ".pfm"), scaled_depths[t]);
    }
    io::write_ply(out / "cloud.ply", seq, {true, io::PlyColor::kHeight});
    io::write_ply(out / "ply", seq, {false, io::PlyColor::kFrameIndex});
  }

  if (emitted >= 2) {
    loss::SceneLossData data;
    data.clouds.reserve(emitted);
    for (std::size_t t = 0; t < emitted; ++t) {
      data.clouds.push_back(core::unproject(scaled_depths[t], seq.intrinsics));
    }
    data.poses = seq.poses;
    for (std::size_t t = 0; t + 1 < emitted; ++t) data.flows.push_back(source.flow(t));
    for (std::size_t t = 0; t < emitted; ++t) data.masks.push_back(source.confidence(t));
    data.pseudo_masks = data.masks;
    data.per_frame_intrinsics.assign(emitted, seq.intrinsics);
    corr::TrackSet tracks;
    if (emitted == source.frame_count()) {
      tracks = io::read_tracks_json(m.resolve(m.tracks_file));
      data.tracks = &tracks;
    }
    const loss::LossWeights weights;
    auto report = loss::evaluate_scene_losses(data, weights);
    write_text(out / "losses.json", loss_report_json(report, weights).dump(2) + "\n");
  }

  if (!result.complete) {
    std::cerr << "error: [" << result.error_category << "] " << result.error << "\n";
    if (emitted > 0) {
      std::cerr << "partial output for frames 0.." << emitted - 1 << " written to "
                << out.string() << "\n";
    }
    return 1;
  }
  std::cout << "reconstructed " << emitted << " frames into " << out.string() << "\n";
  return 0;
}

struct EvalOptions {
  std::string pred_dir;
  std::string manifest_file;
  std::string align = "global";
  int grid = 35;
};

int run_eval_pcd(const EvalOptions& opt) {
  eval::AlignMode mode;
  if (opt.align == "global") {
    mode = eval::AlignMode::kGlobal;
  } else if (opt.align == "first-frame") {
    mode = eval::AlignMode::kFirstFrame;
  } else {
    std::cerr << "error: [usage] --align must be 'global' or 'first-frame', got '" << opt.align
              << "'\n";
    return 2;
  }

  auto pred = load_prediction(opt.pred_dir);
  auto m = manifest::read_manifest(opt.manifest_file);
  auto data = manifest::load_scene(m);
  auto gt = load_ground_truth(m, data);

  auto report = eval::pointcloud_metrics(pred, gt, mode);
  std::cout << eval::metric_report_table(report, true, false);
  write_text(fs::path(opt.pred_dir) / "metrics_pcd.json",
             eval::metric_report_json(report, true, false));
  return 0;
}

int run_eval_flow(const EvalOptions& opt) {
  auto pred = load_prediction(opt.pred_dir);
  auto m = manifest::read_manifest(opt.manifest_file);
  auto data = manifest::load_scene(m);
  auto gt = load_ground_truth(m, data);

  auto tracks = eval::filter_flying_tracks(data.tracks, data.gt_depths);
  tracks = subsample_tracks(tracks, opt.grid * opt.grid);

  auto gt_traj = eval::recover_scene_flow(gt, tracks);
  auto pred_traj = eval::recover_scene_flow(pred, tracks);
  auto alignment = eval::align_for_eval(pred, gt, eval::AlignMode::kFirstFrame);
  pred_traj = eval::apply_alignment(alignment, std::move(pred_traj));

  auto report = eval::flow_metrics(pred_traj, gt_traj);
  std::cout << eval::metric_report_table(report, false, true);
  write_text(fs::path(opt.pred_dir) / "metrics_flow.json",
             eval::metric_report_json(report, false, true));
  return 0;
}

int run_losses(const std::string& manifest_file) {
  auto data = manifest::load_scene(manifest::read_manifest(manifest_file));

  loss::SceneLossData scene;
  scene.clouds.reserve(data.depths.size());
  for (const auto& depth : data.depths) {
    scene.clouds.push_back(core::unproject(depth, data.intrinsics));
  }
  scene.poses = refine::solve_window_poses(scene.clouds, data.flows, data.confidence);
  scene.flows = data.flows;
  scene.tracks = &data.tracks;
  scene.masks = data.confidence;
  scene.pseudo_masks = data.confidence;
  scene.per_frame_intrinsics.assign(data.depths.size(), data.intrinsics);

  const loss::LossWeights weights;
  auto report = loss::evaluate_scene_losses(scene, weights);
  std::cout << loss_report_json(report, weights).dump(2) << "\n";
  return 0;
}

struct SynthOptions {
  std::string preset = "static";
  std::uint64_t seed = 1;
  int frames = 40;
  int grid = 35;
  std::string out_dir;
};

int run_synth(const SynthOptions& opt) {
  auto spec = synth::preset_scene(opt.preset, opt.seed, opt.frames);
  synth::Scene scene(spec);
  auto oracle = scene.render_all(opt.grid);
  const std::string scene_id = opt.preset + "-seed" + std::to_string(opt.seed);
  auto manifest_path = manifest::write_synthetic_scene(opt.out_dir, oracle, scene_id);
  std::cout << manifest_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mono4d: 4D pointcloud reconstruction from depth, flow, and masks"};
  app.require_subcommand(1);

  int rc = 0;

  ReconstructOptions ro;
  auto* rec = app.add_subcommand("reconstruct",
                                 "Reconstruct a scene manifest into a 4D pointcloud directory");
  rec->add_option("manifest", ro.manifest_file, "Path to the scene's manifest.json")->required();
  rec->add_option("--out", ro.out_dir, "Output directory")->required();
  rec->add_option("--window", ro.window, "Sliding window size (frames)")->capture_default_str();
  rec->add_option("--overlap", ro.overlap, "Frames shared by consecutive windows")
      ->capture_default_str();
  rec->add_flag("--refine", ro.refine, "Re-estimate per-frame depth scales (and the focal "
                                       "correction in the first window) before assembly");
  rec->add_option("--refine-iters", ro.refine_iters, "Refinement iteration cap")
      ->capture_default_str();
  rec->add_flag("--verbose", ro.verbose, "Print one JSON line per stitched window");
  rec->callback([&] { rc = run_reconstruct(ro); });

  EvalOptions po;
  auto* pcd = app.add_subcommand("eval-pcd",
                                 "Score a reconstruction's pointclouds against ground truth");
  pcd->add_option("pred-dir", po.pred_dir, "Directory written by reconstruct")->required();
  pcd->add_option("gt-manifest", po.manifest_file, "Manifest of the scene with ground truth")
      ->required();
  pcd->add_option("--align", po.align, "Alignment: global or first-frame")
      ->capture_default_str();
  pcd->callback([&] { rc = run_eval_pcd(po); });

  EvalOptions fo;
  auto* flw = app.add_subcommand("eval-flow",
                                 "Score a reconstruction's scene flow along ground-truth tracks");
  flw->add_option("pred-dir", fo.pred_dir, "Directory written by reconstruct")->required();
  flw->add_option("gt-manifest", fo.manifest_file, "Manifest of the scene with ground truth")
      ->required();
  flw->add_option("--grid", fo.grid, "Keep at most grid^2 tracks")->capture_default_str();
  flw->callback([&] { rc = run_eval_flow(fo); });

  std::string losses_manifest;
  auto* los = app.add_subcommand("losses",
                                 "Evaluate the self-supervised losses of a scene's inputs");
  los->add_option("manifest", losses_manifest, "Path to the scene's manifest.json")->required();
  los->callback([&] { rc = run_losses(losses_manifest); });

  SynthOptions so;
  auto* syn = app.add_subcommand("synth", "Write an analytic test scene as a manifest directory");
  syn->add_option("--preset", so.preset, "static, dynamic, dolly, orbit, or clutter")
      ->capture_default_str();
  syn->add_option("--seed", so.seed, "Scene randomization seed")->capture_default_str();
  syn->add_option("--frames", so.frames, "Clip length")->capture_default_str();
  syn->add_option("--grid", so.grid, "Track grid side length")->capture_default_str();
  syn->add_option("--out", so.out_dir, "Output directory")->required();
  syn->callback([&] { rc = run_synth(so); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: [usage] " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: [validation] " << e.what() << "\n";
    for (const auto& problem : e.problems()) std::cerr << "  - " << problem << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: [" << categorize(e) << "] " << e.what() << "\n";
    return 1;
  }
  return rc;
}
