#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xseg/geodesic.hpp"
#include "xseg/learner.hpp"
#include "xseg/points.hpp"
#include "xseg/random_walker.hpp"
#include "xseg/volume.hpp"

namespace xseg {

struct PipelineConfig {
  double padding_mm = 20.0;
  int r_fg = 2;
  int r_bg = 30;
  int r_rw = 4;
  double beta = 130.0;
  double sigma_mm = 3.0;
  int max_rounds = 10;
  double convergence_dice = 0.99;
  bool rw_regularization = true;
  bool point_channel = true;

  // Learner and solver settings.
  bool warm_start = true;
  double learning_rate = 0.1;
  int epochs = 50;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  double cg_tol = 1e-6;
  int cg_max_iter = 2000;
  double weight_epsilon = 1e-6;

  void validate() const;
  RwConfig rw() const { return {beta, cg_tol, cg_max_iter, weight_epsilon}; }
  TrainConfig train() const { return {learning_rate, epochs, momentum}; }
  SeedConfig seeds() const { return {r_fg, r_bg}; }
};

/// Reads the JSON field names above; absent fields keep the values of `base`.
PipelineConfig parse_pipeline_config(const std::string& json_text, PipelineConfig base = {});
std::string pipeline_config_to_json(const PipelineConfig& cfg);

/// One annotated image.
struct SegmentationCase {
  std::string id;
  Volume image;
  ExtremePointSet points;
  std::optional<Mask> ground_truth;
};

/// A case reduced to its padded bounding box, ready for training.
struct PreparedCase {
  BoundingBox box;
  Dims full_dims;
  Volume image;        ///< raw intensities of the crop
  LearnerInput input;  ///< normalized intensity + point channel on the crop
};

PreparedCase prepare_case(const Volume& image, const ExtremePointSet& pts, const PipelineConfig& cfg);

/// A probability map on a crop of some larger grid.
struct CroppedLabel {
  BoundingBox box;
  ProbabilityMap label;
};

/// Crop, seed from geodesic scribbles, random walker.
CroppedLabel initial_pseudo_label(const Volume& image, const ExtremePointSet& pts, const PipelineConfig& cfg);

struct RegularizedLabel {
  ProbabilityMap label;
  bool degenerate = false;  ///< erosion emptied a seed class; label is the input
};

/// Erodes the thresholded foreground and background by ball(r_rw) and lets
/// the random walker decide the band between them.
RegularizedLabel rw_regularize(const ProbabilityMap& p, const Volume& image, const PipelineConfig& cfg);

struct RoundRecord {
  int round = 0;
  std::optional<double> mean_dice_gt;
  std::optional<double> mean_dice_prev;  ///< empty for round 0
  double seconds = 0.0;
  bool converged = false;
  int degenerate_cases = 0;

  std::string to_json() const;
};

struct RunResult {
  std::vector<Mask> masks;                    ///< full grid, background outside the crop
  std::vector<ProbabilityMap> probabilities;  ///< full grid, zero outside the crop
  std::vector<RoundRecord> rounds;
  bool converged = false;
  std::optional<LearnerModel> model;  ///< empty when no round trained
};

using RoundCallback = std::function<void(const RoundRecord&)>;

/// Round 0 is the random-walker initialization; every later round trains on
/// the current pseudo labels, predicts, and (optionally) regularizes. Stops
/// once consecutive thresholded predictions agree to `convergence_dice`.
RunResult run_pipeline(const std::vector<SegmentationCase>& dataset, const PipelineConfig& cfg,
                       const RoundCallback& on_round = {});

/// Dice of a full-grid prediction against ground truth.
double evaluate(const Mask& prediction, const Mask& ground_truth);

/// Places a crop back on a grid of `full` dims, filling the rest with zero.
Mask uncrop(const Mask& cropped, const BoundingBox& box, const Dims& full);
ProbabilityMap uncrop(const ProbabilityMap& cropped, const BoundingBox& box, const Dims& full);

}  // namespace xseg
