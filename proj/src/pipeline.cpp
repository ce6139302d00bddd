#include "xseg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "xseg/morphology.hpp"

namespace xseg {

using nlohmann::json;

void PipelineConfig::validate() const {
  if (!(padding_mm >= 0.0)) throw DataError("padding_mm must be non-negative");
  if (r_fg < 0 || r_bg < 0 || r_rw < 0) throw DataError("radii must be non-negative");
  if (!(sigma_mm > 0.0)) throw DataError("sigma_mm must be positive");
  if (max_rounds < 1) throw DataError("max_rounds must be at least 1");
  if (!(convergence_dice > 0.0 && convergence_dice <= 1.0)) throw DataError("convergence_dice must lie in (0,1]");
  rw().validate();
  train().validate();
}

PipelineConfig parse_pipeline_config(const std::string& json_text, PipelineConfig base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed config: ") + e.what());
  }
  if (!j.is_object()) throw DataError("config must be a JSON object");
  PipelineConfig c = base;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "padding_mm") c.padding_mm = v.get<double>();
      else if (k == "r_fg") c.r_fg = v.get<int>();
      else if (k == "r_bg") c.r_bg = v.get<int>();
      else if (k == "r_rw") c.r_rw = v.get<int>();
      else if (k == "beta") c.beta = v.get<double>();
      else if (k == "sigma_mm") c.sigma_mm = v.get<double>();
      else if (k == "max_rounds") c.max_rounds = v.get<int>();
      else if (k == "convergence_dice") c.convergence_dice = v.get<double>();
      else if (k == "rw_regularization") c.rw_regularization = v.is_string() ? v.get<std::string>() == "on" : v.get<bool>();
      else if (k == "point_channel") c.point_channel = v.is_string() ? v.get<std::string>() == "on" : v.get<bool>();
      else if (k == "warm_start") c.warm_start = v.get<bool>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "momentum") c.momentum = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "cg_tol") c.cg_tol = v.get<double>();
      else if (k == "cg_max_iter") c.cg_max_iter = v.get<int>();
      else if (k == "weight_epsilon") c.weight_epsilon = v.get<double>();
      else throw DataError("unknown config field \"" + k + "\"");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
  return json{{"padding_mm", c.padding_mm},
              {"r_fg", c.r_fg},
              {"r_bg", c.r_bg},
              {"r_rw", c.r_rw},
              {"beta", c.beta},
              {"sigma_mm", c.sigma_mm},
              {"max_rounds", c.max_rounds},
              {"convergence_dice", c.convergence_dice},
              {"rw_regularization", c.rw_regularization},
              {"point_channel", c.point_channel},
              {"warm_start", c.warm_start},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"momentum", c.momentum},
              {"seed", c.seed},
              {"cg_tol", c.cg_tol},
              {"cg_max_iter", c.cg_max_iter},
              {"weight_epsilon", c.weight_epsilon}}
      .dump(2);
}

PreparedCase prepare_case(const Volume& image, const ExtremePointSet& pts, const PipelineConfig& cfg) {
  pts.validate(image.dims());
  PreparedCase pc;
  pc.box = bounding_box(pts, image, cfg.padding_mm);
  pc.full_dims = image.dims();
  pc.image = crop(image, pc.box);
  pc.input.intensity = normalize_intensity(pc.image);
  if (cfg.point_channel) {
    pc.input.points = point_channel(pc.image.dims(), pc.image.spacing(), pts.shifted_into(pc.box), {cfg.sigma_mm});
  } else {
    pc.input.points = Volume(pc.image.dims(), pc.image.spacing(), 0.0f);
  }
  return pc;
}

CroppedLabel initial_pseudo_label(const Volume& image, const ExtremePointSet& pts, const PipelineConfig& cfg) {
  cfg.validate();
  pts.validate(image.dims());
  const BoundingBox box = bounding_box(pts, image, cfg.padding_mm);
  const Volume cropped = crop(image, box);
  const SeedMap seeds = build_seed_map(cropped, pts.shifted_into(box), cfg.seeds());
  return {box, random_walker(cropped, seeds, cfg.rw())};
}

RegularizedLabel rw_regularize(const ProbabilityMap& p, const Volume& image, const PipelineConfig& cfg) {
  if (!p.same_grid(image)) throw DataError("rw_regularize: prediction and image differ in shape");
  const Mask fg_pred = threshold(p, 0.5);
  const BallElement element = ball(cfg.r_rw);
  const Mask fg = erode(fg_pred, element);
  const Mask bg = erode(complement(fg_pred), element);
  if (count_foreground(fg) == 0 || count_foreground(bg) == 0) return {p, true};
  SeedMap seeds(p.dims(), p.spacing(), SeedLabel::Unlabeled);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (fg[i]) seeds[i] = SeedLabel::Foreground;
    else if (bg[i]) seeds[i] = SeedLabel::Background;
  }
  return {random_walker(image, seeds, cfg.rw()), false};
}

std::string RoundRecord::to_json() const {
  json j = {{"round", round},
            {"mean_dice_gt", mean_dice_gt ? json(*mean_dice_gt) : json(nullptr)},
            {"mean_dice_prev", mean_dice_prev ? json(*mean_dice_prev) : json(nullptr)},
            {"seconds", seconds},
            {"converged", converged},
            {"degenerate_cases", degenerate_cases}};
  return j.dump();
}

double evaluate(const Mask& prediction, const Mask& ground_truth) { return dice_score(prediction, ground_truth); }

namespace {

template <class T, class Tag>
Grid<T, Tag> uncrop_grid(const Grid<T, Tag>& cropped, const BoundingBox& box, const Dims& full) {
  if (box.dims() != cropped.dims()) throw DataError("uncrop: crop does not match its box");
  Grid<T, Tag> out(full, cropped.spacing(), T{});
  paste(out, cropped, box.lo);
  return out;
}

std::optional<double> mean_gt_dice(const std::vector<SegmentationCase>& dataset, const std::vector<PreparedCase>& prepared,
                                   const std::vector<Mask>& masks) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < dataset.size(); ++k) {
    if (!dataset[k].ground_truth) continue;
    sum += evaluate(uncrop(masks[k], prepared[k].box, prepared[k].full_dims), *dataset[k].ground_truth);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Mask uncrop(const Mask& cropped, const BoundingBox& box, const Dims& full) { return uncrop_grid(cropped, box, full); }

ProbabilityMap uncrop(const ProbabilityMap& cropped, const BoundingBox& box, const Dims& full) {
  return uncrop_grid(cropped, box, full);
}

RunResult run_pipeline(const std::vector<SegmentationCase>& dataset, const PipelineConfig& cfg,
                       const RoundCallback& on_round) {
  cfg.validate();
  if (dataset.empty()) throw DataError("pipeline dataset is empty");
  for (const auto& c : dataset) {
    if (c.ground_truth && c.ground_truth->dims() != c.image.dims())
      throw DataError("ground truth of case \"" + c.id + "\" does not match its image");
  }

  auto t0 = std::chrono::steady_clock::now();
  std::vector<PreparedCase> prepared;
  std::vector<ProbabilityMap> labels;
  std::vector<Mask> masks;
  for (const auto& c : dataset) {
    prepared.push_back(prepare_case(c.image, c.points, cfg));
    const PreparedCase& pc = prepared.back();
    const SeedMap seeds = build_seed_map(pc.image, c.points.shifted_into(pc.box), cfg.seeds());
    labels.push_back(random_walker(pc.image, seeds, cfg.rw()));
    masks.push_back(threshold(labels.back(), 0.5));
  }

  RunResult result;
  RoundRecord r0;
  r0.round = 0;
  r0.mean_dice_gt = mean_gt_dice(dataset, prepared, masks);
  r0.seconds = seconds_since(t0);
  result.rounds.push_back(r0);
  if (on_round) on_round(r0);

  for (int round = 1; round < cfg.max_rounds; ++round) {
    t0 = std::chrono::steady_clock::now();
    if (!result.model || !cfg.warm_start) result.model.emplace(cfg.seed);
    std::vector<TrainingSample> training;
    for (std::size_t k = 0; k < prepared.size(); ++k) training.push_back({prepared[k].input, labels[k]});
    result.model->train(training, cfg.train());

    RoundRecord rec;
    rec.round = round;
    std::vector<ProbabilityMap> next;
    std::vector<Mask> next_masks;
    double dice_prev = 0.0;
    for (std::size_t k = 0; k < prepared.size(); ++k) {
      ProbabilityMap pred = result.model->predict(prepared[k].input);
      if (cfg.rw_regularization) {
        RegularizedLabel reg = rw_regularize(pred, prepared[k].image, cfg);
        if (reg.degenerate) {
          ++rec.degenerate_cases;
          pred = labels[k];
        } else {
          pred = std::move(reg.label);
        }
      }
      next_masks.push_back(threshold(pred, 0.5));
      dice_prev += dice_score(next_masks.back(), masks[k]);
      next.push_back(std::move(pred));
    }
    labels = std::move(next);
    masks = std::move(next_masks);

    rec.mean_dice_prev = dice_prev / static_cast<double>(prepared.size());
    rec.mean_dice_gt = mean_gt_dice(dataset, prepared, masks);
    rec.converged = *rec.mean_dice_prev >= cfg.convergence_dice;
    rec.seconds = seconds_since(t0);
    result.rounds.push_back(rec);
    if (on_round) on_round(rec);
    if (rec.converged) {
      result.converged = true;
      break;
    }
  }

  for (std::size_t k = 0; k < prepared.size(); ++k) {
    result.masks.push_back(uncrop(masks[k], prepared[k].box, prepared[k].full_dims));
    result.probabilities.push_back(uncrop(labels[k], prepared[k].box, prepared[k].full_dims));
  }
  return result;
}

}  // namespace xseg
