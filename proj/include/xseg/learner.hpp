#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "xseg/volume.hpp"

namespace xseg {

inline constexpr double kDiceSmoothing = 1e-5;

template <class T>
struct DiceLoss {
  double loss = 0.0;
  std::vector<T> gradient;  ///< d loss / d pred_i
};

/// Soft Dice loss 1 - (2 sum(y yhat) + s) / (sum(y^2) + sum(yhat^2) + s) and
/// its gradient with respect to the prediction y.
template <class T>
DiceLoss<T> dice_loss(std::span<const T> pred, std::span<const T> target);

DiceLoss<float> dice_loss(const ProbabilityMap& pred, const ProbabilityMap& target);

/// The two network input channels on a common grid.
struct LearnerInput {
  Volume intensity;  ///< normalized to [0,1]
  Volume points;     ///< extreme-point Gaussians (all zero when disabled)
};

struct TrainingSample {
  LearnerInput input;
  ProbabilityMap target;
};

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 50;
  double momentum = 0.9;

  void validate() const;
};

/// conv3d(2->8, 3^3) ReLU, conv3d(8->8, 3^3) ReLU, conv3d(8->1, 1^3) sigmoid,
/// zero padding throughout.
///
/// Parameter order (also the checkpoint blob order):
///   conv1 weights [out 8][in 2][dz][dy][dx], conv1 bias [8],
///   conv2 weights [out 8][in 8][dz][dy][dx], conv2 bias [8],
///   conv3 weights [in 8], conv3 bias [1].
/// Inputs and activations are channel-last: value (voxel, channel) lives at
/// voxel * channels + channel.
template <class T>
class TinyConvNet {
 public:
  static constexpr int kInputChannels = 2;
  static constexpr int kHidden = 8;
  static constexpr int kTaps = 27;
  static constexpr std::size_t kConv1Weights = kHidden * kInputChannels * kTaps;
  static constexpr std::size_t kConv2Weights = kHidden * kHidden * kTaps;
  static constexpr std::size_t kParameterCount = kConv1Weights + kHidden + kConv2Weights + kHidden + kHidden + 1;

  /// He-uniform hidden layers, zero biases, zero output layer.
  explicit TinyConvNet(std::uint64_t seed);

  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }

  std::vector<T> forward(const Dims& dims, std::span<const T> input) const;

  /// Dice loss of one sample; adds d loss / d parameters into `grad`.
  double accumulate_gradient(const Dims& dims, std::span<const T> input, std::span<const T> target,
                             std::span<double> grad) const;

 private:
  std::vector<T> params_;
};

struct TrainLog {
  std::vector<double> epoch_loss;  ///< mean loss at the start of each epoch
};

/// Anything that can be trained on pseudo labels and then predict.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual TrainLog train(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg) = 0;
  virtual ProbabilityMap predict(const LearnerInput& input) const = 0;
};

/// Float TinyConvNet plus bookkeeping, trained with momentum gradient descent.
class LearnerModel : public Segmenter {
 public:
  explicit LearnerModel(std::uint64_t seed);

  TrainLog train(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg) override;
  ProbabilityMap predict(const LearnerInput& input) const override;

  /// Mean Dice loss over the dataset without updating anything.
  double evaluate_loss(const std::vector<TrainingSample>& dataset) const;

  std::uint64_t seed() const { return seed_; }
  int epochs_trained() const { return epochs_trained_; }
  const TinyConvNet<float>& net() const { return net_; }
  TinyConvNet<float>& net() { return net_; }

  /// `<stem>.json` header plus `<stem>.raw` little-endian f32 parameters.
  void save(const std::filesystem::path& path) const;
  static LearnerModel load(const std::filesystem::path& path);

 private:
  std::uint64_t seed_;
  int epochs_trained_ = 0;
  TinyConvNet<float> net_;
};

/// Interleaves the two channels into the channel-last layout.
template <class T>
std::vector<T> pack_input(const LearnerInput& input);

}  // namespace xseg
