// Command-line front end: training, sampling, aggregation, evaluation,
// tracking, annotation solving and the annotation server.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "genpose/aggregation.hpp"
#include "genpose/annotation.hpp"
#include "genpose/energy.hpp"
#include "genpose/errors.hpp"
#include "genpose/io.hpp"
#include "genpose/metrics.hpp"
#include "genpose/sampler.hpp"
#include "genpose/service.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with Eigen internals.
#include <httplib.h>

using namespace genpose;

namespace {

std::vector<int> parse_hidden(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ValidationError("--hidden expects comma-separated integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw ValidationError("--hidden is empty");
  return out;
}

struct TrainArgs {
  std::string data, out, hidden = "256,256,256", activation = "silu";
  int batch = 128, steps = 2000;
  double lr_start = 1e-3, lr_end = 1e-4;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Training dataset (genpose.dataset)")->required()->check(CLI::ExistingFile);
    app->add_option("--out", out, "Output checkpoint")->required();
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--steps", steps, "Optimizer steps");
    app->add_option("--batch", batch, "Batch size");
    app->add_option("--lr-start", lr_start, "Initial learning rate");
    app->add_option("--lr-end", lr_end, "Final learning rate");
    app->add_option("--hidden", hidden, "Hidden layer widths, comma separated");
    app->add_option("--activation", activation, "silu or tanh");
  }

  TrainConfig config() const {
    TrainConfig c;
    c.batch_size = batch;
    c.steps = steps;
    c.lr_start = lr_start;
    c.lr_end = lr_end;
    c.seed = seed;
    c.hidden = parse_hidden(hidden);
    c.activation = activation_from_string(activation);
    return c;
  }
};

void print_report(const TrainReport& r) {
  std::printf("held-out loss: %.6g -> %.6g\n", r.initial_heldout_loss, r.final_heldout_loss);
}

struct FieldArgs {
  std::string score, mixture, energy;

  void add(CLI::App* app) {
    auto* s = app->add_option("--score", score, "Score checkpoint")->check(CLI::ExistingFile);
    auto* m = app->add_option("--mixture", mixture, "Analytic mixture (genpose.mixture) instead of a checkpoint")
                  ->check(CLI::ExistingFile);
    s->excludes(m);
    app->add_option("--energy", energy, "Energy checkpoint used for ranking")->check(CLI::ExistingFile);
  }

  ScoreField score_field() const {
    if (!score.empty()) return ScoreField(load_score_checkpoint(score));
    if (!mixture.empty()) return ScoreField(AnalyticScore{load_mixture(mixture), NoiseSchedule{}});
    throw ValidationError("one of --score or --mixture is required");
  }

  // Explicit checkpoint first, then the analytic log density of a mixture.
  std::optional<EnergyField> energy_field() const {
    if (!energy.empty()) return EnergyField(load_energy_checkpoint(energy));
    if (!mixture.empty()) return EnergyField(AnalyticEnergy{load_mixture(mixture), NoiseSchedule{}});
    return std::nullopt;
  }
};

struct SamplerArgs {
  int K = SamplerConfig{}.K, steps = SamplerConfig{}.steps;
  std::string integrator = "euler";
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--K", K, "Candidate count");
    app->add_option("--steps", steps, "Integrator steps");
    app->add_option("--integrator", integrator, "euler or rk4");
    app->add_option("--seed", seed, "Random seed");
  }

  SamplerConfig config(const NoiseSchedule& s) const {
    SamplerConfig c;
    c.K = K;
    c.steps = steps;
    c.integrator = integrator_from_string(integrator);
    c.schedule = s;
    c.seed = seed;
    return c;
  }
};

int run_train_score(const TrainArgs& a) {
  TrainReport report;
  const ScoreNet net = train_score(load_dataset(a.data), a.config(), &report);
  save_checkpoint(net, a.out);
  print_report(report);
  return 0;
}

int run_distill(const TrainArgs& a, const std::string& score) {
  TrainReport report;
  const ScoreField field(load_score_checkpoint(score));
  const EnergyNet net = distill_energy(field, load_dataset(a.data), a.config(), &report);
  save_checkpoint(net, a.out);
  print_report(report);
  return 0;
}

int run_sample(const FieldArgs& f, const SamplerArgs& s, const std::string& condition, const std::string& out) {
  const ScoreField field = f.score_field();
  const Condition cond = condition.empty() ? Condition{} : load_condition(condition);
  PoseCandidateSet set = sample_candidates(field, cond, s.config(field.schedule()));
  if (const auto energy = f.energy_field()) {
    std::vector<PoseVector> enc;
    for (const Pose& p : set.candidates) enc.push_back(encode_pose(p));
    set.energies = energy->evaluate(enc, energy->schedule().eps, cond);
  }
  save_candidates(set, out);
  std::printf("%zu candidates -> %s\n", set.size(), out.c_str());
  return 0;
}

int run_aggregate(const std::string& in, const std::string& out, const FilterConfig& filter,
                  const ClusterConfig& cluster, const std::string& cloud, const std::string& scale_ckpt,
                  const std::string& condition) {
  const PoseCandidateSet set = load_candidates(in);
  if (set.candidates.empty()) throw ValidationError(in + ": no candidates");
  const PoseCandidateSet kept = set.energies ? rank_and_filter(set, filter) : set;
  if (!set.energies) std::fprintf(stderr, "warning: candidates carry no energies, skipping rank_and_filter\n");
  ResultRecord r;
  r.aggregation = aggregate(kept, cluster);
  r.condition_id = set.condition_id;
  r.candidate_count = set.size();
  if (!scale_ckpt.empty()) {
    const ScaleRegressor reg = load_scale_checkpoint(scale_ckpt);
    const Condition cond = condition.empty() ? Condition{} : load_condition(condition);
    r.scale = estimate_scale_learned(reg, cond, r.aggregation.pose);
  } else if (!cloud.empty()) {
    const ScaleEstimate est = estimate_scale_geometric(load_point_cloud(cloud), r.aggregation.pose);
    if (est.degenerate) std::fprintf(stderr, "warning: degenerate point cloud extent clamped\n");
    r.scale = est.extents;
  }
  save_result(r, out);
  const Vec3 rv = r.aggregation.pose.rotation.log();
  std::printf("pose: t = [%.6f %.6f %.6f], rotvec = [%.6f %.6f %.6f], cluster %d with %zu members%s\n",
              r.aggregation.pose.translation.x(), r.aggregation.pose.translation.y(),
              r.aggregation.pose.translation.z(), rv.x(), rv.y(), rv.z(), r.aggregation.cluster_label,
              r.aggregation.members.size(), r.aggregation.all_noise_fallback ? " (all-noise fallback)" : "");
  return 0;
}

int run_evaluate(const std::string& in, const std::string& out) {
  const MetricReport report = evaluate(load_eval_instances(in));
  const std::string text = metric_report_to_string(report);
  write_file_atomic(out, text);
  std::cout << text;
  return 0;
}

int run_track(const FieldArgs& f, const SamplerArgs& s, const std::string& frames, double t0,
              const FilterConfig& filter, const ClusterConfig& cluster, const std::string& out) {
  const ScoreField field = f.score_field();
  const auto energy = f.energy_field();
  const FrameSequence seq = load_frames(frames);
  TrackConfig cfg{s.config(field.schedule()), t0, filter, cluster};

  std::vector<Pose> poses;
  std::vector<double> times;
  Pose prev = seq.init;
  for (std::size_t i = 0; i < seq.conditions.size(); ++i) {
    TrackConfig one = cfg;
    one.sampler.seed = cfg.sampler.seed + i;
    const auto start = std::chrono::steady_clock::now();
    prev = track_sequence(field, energy ? &*energy : nullptr, std::span(&seq.conditions[i], 1), prev, one).front();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    poses.push_back(prev);
  }
  save_track(poses, out);
  if (!seq.ground_truth.empty()) {
    std::vector<PoseError> errs;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      PoseError e;
      e.rot_err = geodesic_distance(seq.ground_truth[i].rotation, poses[i].rotation) * 180.0 / 3.14159265358979323846;
      e.trans_err = (seq.ground_truth[i].translation - poses[i].translation).norm() * 100.0;
      e.iou = box_iou(OrientedBox::from_scaled_pose({seq.ground_truth[i], Vec3::Ones()}),
                      OrientedBox::from_scaled_pose({poses[i], Vec3::Ones()}));
      errs.push_back(e);
    }
    const TrackingSummary t = tracking_summary(errs, times);
    std::printf("fps %.2f  VUS@5deg5cm %.2f  mIoU %.2f  Rerr %.3f deg  Terr %.3f cm\n", t.fps, t.vus_5_5, t.miou,
                t.rerr, t.terr);
  }
  std::printf("%zu frames -> %s\n", poses.size(), out.c_str());
  return 0;
}

int run_annotate(const std::string& scene_path, const std::string& corr, const std::vector<std::string>& kps,
                 int reference, int keyframes, const std::string& out) {
  LoadWarnings warnings;
  Scene scene = load_scene(scene_path, &warnings);
  for (const auto& w : warnings.messages) std::fprintf(stderr, "warning: %s\n", w.c_str());
  CameraTrack track = scene.camera_track();

  if (!corr.empty()) {
    const BundleAdjustResult ba = bundle_adjust(track, load_correspondences(corr));
    std::printf("bundle adjustment: cost %.6g after %d iterations, RMS %.4f px%s\n", ba.cost, ba.iterations,
                rms_residual(ba.cost, load_correspondences(corr).size()), ba.converged ? "" : " (not converged)");
    track = ba.track;
    for (std::size_t i = 0; i < scene.frames.size(); ++i) scene.frames[i].camera_pose = track.poses[i];
  }
  if (keyframes > 0) scene.keyframes = fps_keyframes(track, std::min<int>(keyframes, static_cast<int>(track.poses.size())));

  std::vector<KeypointFile> files;
  for (const auto& k : kps) files.push_back(load_keypoints(k));
  for (const auto& o : scene.objects) {
    if (o.keypoints) files.push_back({o.id, *o.keypoints});
  }
  for (const KeypointFile& kf : files) {
    SceneObject& obj = scene.object(kf.object_id);
    int ref = reference;
    if (ref < 0) {
      if (kf.keypoints.annotations.empty()) throw ValidationError("object '" + kf.object_id + "' has no annotations");
      ref = kf.keypoints.annotations.front().frame_index;
    }
    const ObjectFitResult fit = fit_object_pose(kf.keypoints, track, ref);
    const Pose world = track.poses[static_cast<std::size_t>(ref)] * fit.object_to_camera;
    const Vec3 scale = obj.world_pose ? obj.world_pose->scale
                       : obj.poses.empty() ? Vec3::Ones()
                                           : obj.poses.begin()->second.scale;
    obj.world_pose = ScaledPose{world, scale};
    obj.keypoints = kf.keypoints;
    for (const auto& f : scene.frames) obj.poses[f.index] = {object_to_camera(track, f.index, world), scale};
    std::printf("object %s: RMS %.4f px%s\n", kf.object_id.c_str(), fit.rms, fit.converged ? "" : " (not converged)");
  }
  save_scene(scene, out);
  return 0;
}

int run_serve(const std::vector<std::string>& scenes, const std::string& host, int port, int keyframes) {
  AnnotationStore store;
  for (const auto& s : scenes) std::printf("loaded sequence %s\n", store.add_scene(s, keyframes).c_str());
  httplib::Server server;
  register_routes(server, store);
  std::printf("listening on http://%s:%d\n", host.c_str(), port);
  std::fflush(stdout);
  if (!server.listen(host, port)) throw ValidationError("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-level object pose estimation by diffusion sampling"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-score", "Train a score network by denoising score matching");
  train.add(train_cmd);

  TrainArgs distill;
  std::string distill_score;
  auto* distill_cmd = app.add_subcommand("distill-energy", "Distill an energy network from a trained score");
  distill.add(distill_cmd);
  distill_cmd->add_option("--score", distill_score, "Frozen score checkpoint")->required()->check(CLI::ExistingFile);

  FieldArgs sample_field;
  SamplerArgs sample_cfg;
  std::string sample_cond, sample_out;
  auto* sample_cmd = app.add_subcommand("sample", "Sample pose candidates with the probability-flow ODE");
  sample_field.add(sample_cmd);
  sample_cfg.add(sample_cmd);
  sample_cmd->add_option("--condition", sample_cond, "Condition (genpose.condition)")->check(CLI::ExistingFile);
  sample_cmd->add_option("--out", sample_out, "Output candidate set")->required();

  std::string agg_in, agg_out, agg_cloud, agg_scale, agg_cond;
  FilterConfig filter;
  ClusterConfig cluster;
  auto add_clustering = [&](CLI::App* cmd) {
    cmd->add_option("--delta", filter.delta, "Fraction of candidates kept after energy ranking");
    cmd->add_option("--eps", cluster.eps, "DBSCAN radius in radians");
    cmd->add_option("--min-pts", cluster.min_pts, "DBSCAN core threshold, self included");
  };
  auto* agg_cmd = app.add_subcommand("aggregate", "Rank, filter, cluster and pool a candidate set");
  agg_cmd->add_option("--candidates", agg_in, "Candidate set")->required()->check(CLI::ExistingFile);
  agg_cmd->add_option("--out", agg_out, "Output result")->required();
  add_clustering(agg_cmd);
  agg_cmd->add_option("--point-cloud", agg_cloud, "Point cloud for the geometric scale estimate")
      ->check(CLI::ExistingFile);
  agg_cmd->add_option("--scale", agg_scale, "Scale regressor checkpoint")->check(CLI::ExistingFile);
  agg_cmd->add_option("--condition", agg_cond, "Condition for the scale regressor")->check(CLI::ExistingFile);

  std::string eval_in, eval_out;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compute AUC@IoU and VUS metrics");
  eval_cmd->add_option("--instances", eval_in, "Evaluation instances")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval_out, "Output metric report")->required();

  FieldArgs track_field;
  SamplerArgs track_cfg;
  track_cfg.K = 20;
  std::string track_frames, track_out;
  double t0 = kWarmStartTime;
  auto* track_cmd = app.add_subcommand("track", "Warm-start tracking over a frame sequence");
  track_field.add(track_cmd);
  track_cfg.add(track_cmd);
  add_clustering(track_cmd);
  track_cmd->add_option("--frames", track_frames, "Frame sequence (genpose.frames)")->required()->check(CLI::ExistingFile);
  track_cmd->add_option("--t0", t0, "Warm-start diffusion time");
  track_cmd->add_option("--out", track_out, "Output track")->required();

  std::string ann_scene, ann_corr, ann_out;
  std::vector<std::string> ann_kps;
  int ann_ref = -1, ann_keyframes = 0;
  auto* ann_cmd = app.add_subcommand("annotate-solve", "Bundle-adjust cameras and fit object poses to keypoints");
  ann_cmd->add_option("--scene", ann_scene, "Scene file")->required()->check(CLI::ExistingFile);
  ann_cmd->add_option("--correspondences", ann_corr, "2D-3D correspondences for bundle adjustment")
      ->check(CLI::ExistingFile);
  ann_cmd->add_option("--keypoints", ann_kps, "Keypoint annotation files")->check(CLI::ExistingFile);
  ann_cmd->add_option("--reference-frame", ann_ref, "Reference frame for object fitting (default: first annotated)");
  ann_cmd->add_option("--keyframes", ann_keyframes, "Select this many keyframes by farthest point sampling");
  ann_cmd->add_option("--out", ann_out, "Output scene")->required();

  std::vector<std::string> serve_scenes;
  std::string host = "127.0.0.1";
  int port = 8080, serve_keyframes = 5;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP server for manual pose refinement");
  serve_cmd->add_option("--scene", serve_scenes, "Scene files")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--port", port, "Listen port");
  serve_cmd->add_option("--keyframes", serve_keyframes, "Keyframes per scene when the scene lists none");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return run_train_score(train);
    if (*distill_cmd) return run_distill(distill, distill_score);
    if (*sample_cmd) return run_sample(sample_field, sample_cfg, sample_cond, sample_out);
    if (*agg_cmd) return run_aggregate(agg_in, agg_out, filter, cluster, agg_cloud, agg_scale, agg_cond);
    if (*eval_cmd) return run_evaluate(eval_in, eval_out);
    if (*track_cmd) return run_track(track_field, track_cfg, track_frames, t0, filter, cluster, track_out);
    if (*ann_cmd) return run_annotate(ann_scene, ann_corr, ann_kps, ann_ref, ann_keyframes, ann_out);
    if (*serve_cmd) return run_serve(serve_scenes, host, port, serve_keyframes);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
