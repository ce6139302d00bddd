#include "xseg/commands.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>

#include "xseg/phantom.hpp"
#include "xseg/service.hpp"

namespace xseg::cli {

namespace fs = std::filesystem;

namespace {

// Maps library exceptions onto exit codes.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

PipelineConfig load_config(const std::optional<fs::path>& path) {
  if (!path) return {};
  std::ifstream in(*path);
  if (!in) throw DataError("cannot open config " + path->string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str());
}

int simulate_points(const fs::path& gt_path, const fs::path& out_json, double jitter_mm, std::uint64_t seed,
                    std::ostream& err) {
  return guarded(err, [&] {
    const Mask gt = load_mask(gt_path);
    save_points(simulate_extreme_points(gt, jitter_mm, seed), out_json);
    return kOk;
  });
}

int segment(const SegmentArgs& args, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    PipelineConfig cfg = load_config(args.config);
    if (args.seed) cfg.seed = *args.seed;
    cfg.validate();

    SegmentationCase c;
    c.id = args.volume.stem().string();
    c.image = load_volume(args.volume);
    c.points = load_points(args.points);
    if (args.ground_truth) c.ground_truth = load_mask(*args.ground_truth);

    fs::create_directories(args.out_dir);
    std::ofstream rounds(args.out_dir / "rounds.jsonl");
    if (!rounds) throw DataError("cannot write " + (args.out_dir / "rounds.jsonl").string());
    const RunResult result = run_pipeline({c}, cfg, [&](const RoundRecord& r) {
      const std::string line = r.to_json();
      rounds << line << '\n';
      rounds.flush();
      log << line << '\n';
    });
    if (!rounds) throw DataError("write failed for " + (args.out_dir / "rounds.jsonl").string());

    save_mask(result.masks.front(), args.out_dir / "mask.json");
    save_probability(result.probabilities.front(), args.out_dir / "probability.json");
    write_text(args.out_dir / "config.json", pipeline_config_to_json(cfg) + "\n");
    if (result.model) result.model->save(args.out_dir / "model.json");
    return kOk;
  });
}

int phantom(const fs::path& out_dir, int n_cases, std::uint64_t seed, std::ostream& err) {
  return guarded(err, [&] {
    if (n_cases < 0) throw DataError("--cases must be non-negative");
    fs::create_directories(out_dir);
    const auto set = make_phantom_set(n_cases, seed);
    for (int k = 0; k < n_cases; ++k) {
      std::ostringstream stem;
      stem << "phantom_" << std::setw(3) << std::setfill('0') << k;
      save_volume(set[k].image, out_dir / (stem.str() + ".json"));
      save_mask(set[k].truth, out_dir / (stem.str() + "_gt.json"));
    }
    return kOk;
  });
}

int resample(const fs::path& in, const fs::path& out, double target_mm, std::ostream& err) {
  return guarded(err, [&] {
    save_volume(resample_isotropic(load_volume(in), target_mm), out);
    return kOk;
  });
}

int serve(const fs::path& data_dir, const std::string& host, int port, const std::optional<fs::path>& config,
          std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    AnnotationService service(data_dir, load_config(config));
    httplib::Server server;
    service.mount(server);
    if (!server.bind_to_port(host, port)) throw DataError("cannot listen on " + host + ":" + std::to_string(port));
    log << "serving " << data_dir.string() << " on http://" << host << ":" << port << std::endl;
    server.listen_after_bind();
    return kOk;
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Weakly supervised 3D segmentation from six extreme points"};
  app.require_subcommand(1);

  fs::path gt, out, volume, points, data_dir;
  std::optional<fs::path> config, seg_gt;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
  double jitter_mm = 0.0, target_mm = 1.0;
  int cases = 8, port = 8080;
  std::string host = "127.0.0.1";

  auto* sim = app.add_subcommand("simulate-points", "Simulate six extreme-point clicks from a ground-truth mask");
  sim->add_option("--gt", gt, "Ground-truth mask (.json sidecar)")->required();
  sim->add_option("--out", out, "Output points JSON")->required();
  sim->add_option("--jitter-mm", jitter_mm, "Move each click to a surface voxel within this distance")
      ->check(CLI::NonNegativeNumber);
  sim->add_option("--seed", seed, "Random seed");

  auto* seg = app.add_subcommand("segment", "Run the full segmentation loop on one volume");
  seg->add_option("--volume", volume, "Input volume (.json sidecar)")->required();
  seg->add_option("--points", points, "Points JSON with all six extremes")->required();
  seg->add_option("--config", config, "Pipeline config JSON");
  seg->add_option("--gt", seg_gt, "Ground-truth mask, adds Dice to the round log");
  seg->add_option("--out", out, "Output directory")->required();
  seg->add_option("--seed", seed_override, "Learner seed (overrides the config file)");

  auto* ph = app.add_subcommand("phantom", "Write seeded ellipsoid phantoms with ground truth");
  ph->add_option("--out", out, "Output directory")->required();
  ph->add_option("--cases", cases, "Number of phantoms")->check(CLI::NonNegativeNumber);
  ph->add_option("--seed", seed, "Random seed");

  auto* rs = app.add_subcommand("resample", "Resample a volume to isotropic spacing (trilinear)");
  rs->add_option("--volume", volume, "Input volume")->required();
  rs->add_option("--out", out, "Output volume")->required();
  rs->add_option("--target-mm", target_mm, "Target spacing in mm")->check(CLI::PositiveNumber);

  auto* sv = app.add_subcommand("serve", "Serve the annotation REST API");
  sv->add_option("--data", data_dir, "Directory of f32 volumes")->required();
  sv->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  sv->add_option("--host", host, "Bind address");
  sv->add_option("--config", config, "Pipeline config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (*sim) return simulate_points(gt, out, jitter_mm, seed, std::cerr);
  if (*seg) return segment({volume, points, config, seg_gt, out, seed_override}, std::cout, std::cerr);
  if (*ph) return phantom(out, cases, seed, std::cerr);
  if (*rs) return resample(volume, out, target_mm, std::cerr);
  if (*sv) return serve(data_dir, host, port, config, std::cout, std::cerr);
  return kUsage;
}

}  // namespace xseg::cli
