#include "xseg/learner.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace xseg {

namespace {

constexpr int kTaps = 27;

constexpr int tap_index(int dz, int dy, int dx) { return ((dz + 1) * 3 + (dy + 1)) * 3 + (dx + 1); }

// One SIMD register group per voxel holding all output channels.
template <class T, int N>
struct Lanes {
  typedef T type __attribute__((vector_size(N * sizeof(T))));
};

template <class V, class T>
V load_lanes(const T* p) {
  V v;
  std::memcpy(&v, p, sizeof(V));
  return v;
}

template <class V, class T>
void store_lanes(T* p, const V& v) {
  std::memcpy(p, &v, sizeof(V));
}

// out[v][co] = bias[co] + sum_{tap,ci} w[tap][ci][co] * in[v + tap][ci], zero
// padding. `bias` may be null.
template <class T, int Cin, int Cout>
void conv3(const Dims& d, const T* in, const T* w, const T* bias, T* out) {
  using V = typename Lanes<T, Cout>::type;
  const int nx = d.nx;
  V b{};
  if (bias) b = load_lanes<V>(bias);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y) {
      T* orow = out + d.linear(0, y, z) * Cout;
      for (int x = 0; x < nx; ++x) store_lanes(orow + x * Cout, b);
      for (int dz = -1; dz <= 1; ++dz) {
        const int zz = z + dz;
        if (zz < 0 || zz >= d.nz) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= d.ny) continue;
          const T* irow = in + d.linear(0, yy, zz) * Cin;
          for (int dx = -1; dx <= 1; ++dx) {
            const T* wt = w + tap_index(dz, dy, dx) * Cin * Cout;
            V wv[Cin];
            for (int ci = 0; ci < Cin; ++ci) wv[ci] = load_lanes<V>(wt + ci * Cout);
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(nx, nx - dx);
            for (int x = x0; x < x1; ++x) {
              const T* iv = irow + (x + dx) * Cin;
              V acc = load_lanes<V>(orow + x * Cout);
              for (int ci = 0; ci < Cin; ++ci) acc += iv[ci] * wv[ci];
              store_lanes(orow + x * Cout, acc);
            }
          }
        }
      }
    }
}

// dw[tap][ci][co] += sum_v in[v + tap][ci] * g[v][co]; db[co] += sum_v g[v][co].
// Partial sums are kept per z slice in T and reduced into double in slice order.
template <class T, int Cin, int Cout>
void conv3_weight_grad(const Dims& d, const T* in, const T* g, double* dw, double* db) {
  using V = typename Lanes<T, Cout>::type;
  const int nx = d.nx;
  std::vector<V> acc(static_cast<std::size_t>(kTaps) * Cin);
  for (int z = 0; z < d.nz; ++z) {
    std::fill(acc.begin(), acc.end(), V{});
    V bacc{};
    for (int y = 0; y < d.ny; ++y) {
      const T* grow = g + d.linear(0, y, z) * Cout;
      for (int x = 0; x < nx; ++x) bacc += load_lanes<V>(grow + x * Cout);
      for (int dz = -1; dz <= 1; ++dz) {
        const int zz = z + dz;
        if (zz < 0 || zz >= d.nz) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= d.ny) continue;
          const T* irow = in + d.linear(0, yy, zz) * Cin;
          for (int dx = -1; dx <= 1; ++dx) {
            V* at = acc.data() + tap_index(dz, dy, dx) * Cin;
            V local[Cin];
            for (int ci = 0; ci < Cin; ++ci) local[ci] = at[ci];
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(nx, nx - dx);
            for (int x = x0; x < x1; ++x) {
              const T* iv = irow + (x + dx) * Cin;
              const V gv = load_lanes<V>(grow + x * Cout);
              for (int ci = 0; ci < Cin; ++ci) local[ci] += iv[ci] * gv;
            }
            for (int ci = 0; ci < Cin; ++ci) at[ci] = local[ci];
          }
        }
      }
    }
    for (int k = 0; k < kTaps * Cin; ++k)
      for (int co = 0; co < Cout; ++co) dw[k * Cout + co] += acc[k][co];
    for (int co = 0; co < Cout; ++co) db[co] += bacc[co];
  }
}

// Parameter order [co][ci][tap] -> kernel order [tap][ci][co].
template <class T>
std::vector<T> to_kernel_layout(const T* w, int cin, int cout) {
  std::vector<T> k(static_cast<std::size_t>(kTaps) * cin * cout);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int t = 0; t < kTaps; ++t) k[(t * cin + ci) * cout + co] = w[(co * cin + ci) * kTaps + t];
  return k;
}

// Kernel for the input gradient: spatially flipped, channels swapped, so
// that gIn = conv3(gOut, flipped) with Cin/Cout exchanged.
template <class T>
std::vector<T> to_flipped_transposed(const T* w, int cin, int cout) {
  std::vector<T> k(static_cast<std::size_t>(kTaps) * cin * cout);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int t = 0; t < kTaps; ++t) k[((kTaps - 1 - t) * cout + co) * cin + ci] = w[(co * cin + ci) * kTaps + t];
  return k;
}

// Kernel order gradient [tap][ci][co] -> parameter order [co][ci][tap].
void add_from_kernel_layout(const std::vector<double>& k, int cin, int cout, double* grad) {
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int t = 0; t < kTaps; ++t) grad[(co * cin + ci) * kTaps + t] += k[(t * cin + ci) * cout + co];
}

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

struct Offsets {
  static constexpr std::size_t w1 = 0;
  static constexpr std::size_t b1 = w1 + TinyConvNet<float>::kConv1Weights;
  static constexpr std::size_t w2 = b1 + TinyConvNet<float>::kHidden;
  static constexpr std::size_t b2 = w2 + TinyConvNet<float>::kConv2Weights;
  static constexpr std::size_t w3 = b2 + TinyConvNet<float>::kHidden;
  static constexpr std::size_t b3 = w3 + TinyConvNet<float>::kHidden;
};

template <class T>
struct Activations {
  std::vector<T> h1, h2, prob;
};

template <class T>
Activations<T> run_forward(const std::vector<T>& params, const Dims& d, std::span<const T> input) {
  constexpr int H = TinyConvNet<T>::kHidden;
  constexpr int C = TinyConvNet<T>::kInputChannels;
  const std::size_t n = d.count();
  if (input.size() != n * C) throw DataError("learner input does not match dims");
  Activations<T> a;
  a.h1.resize(n * H);
  a.h2.resize(n * H);
  a.prob.resize(n);
  const auto k1 = to_kernel_layout(params.data() + Offsets::w1, C, H);
  const auto k2 = to_kernel_layout(params.data() + Offsets::w2, H, H);
  conv3<T, C, H>(d, input.data(), k1.data(), params.data() + Offsets::b1, a.h1.data());
  for (auto& v : a.h1) v = std::max(v, T(0));
  conv3<T, H, H>(d, a.h1.data(), k2.data(), params.data() + Offsets::b2, a.h2.data());
  for (auto& v : a.h2) v = std::max(v, T(0));
  const T* w3 = params.data() + Offsets::w3;
  const T b3 = params[Offsets::b3];
  for (std::size_t i = 0; i < n; ++i) {
    T logit = b3;
    for (int c = 0; c < H; ++c) logit += w3[c] * a.h2[i * H + c];
    a.prob[i] = sigmoid(logit);
  }
  return a;
}

}  // namespace

template <class T>
DiceLoss<T> dice_loss(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw DataError("dice_loss: size mismatch");
  double inter = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += double(pred[i]) * target[i];
    pp += double(pred[i]) * pred[i];
    tt += double(target[i]) * target[i];
  }
  const double num = 2.0 * inter + kDiceSmoothing;
  const double den = pp + tt + kDiceSmoothing;
  DiceLoss<T> out;
  out.loss = 1.0 - num / den;
  out.gradient.resize(pred.size());
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t i = 0; i < pred.size(); ++i)
    out.gradient[i] = static_cast<T>(-(2.0 * target[i] * den - num * 2.0 * pred[i]) * inv_den2);
  return out;
}

template DiceLoss<float> dice_loss<float>(std::span<const float>, std::span<const float>);
template DiceLoss<double> dice_loss<double>(std::span<const double>, std::span<const double>);

DiceLoss<float> dice_loss(const ProbabilityMap& pred, const ProbabilityMap& target) {
  if (pred.dims() != target.dims()) throw DataError("dice_loss: dims mismatch");
  return dice_loss<float>(pred.data(), target.data());
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw DataError("learning_rate must be >= 0");
  if (epochs < 1) throw DataError("epochs must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("momentum must lie in [0,1)");
}

template <class T>
TinyConvNet<T>::TinyConvNet(std::uint64_t seed) : params_(kParameterCount, T(0)) {
  std::mt19937_64 rng(seed);
  auto he_uniform = [&](std::size_t offset, std::size_t count, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = static_cast<T>(dist(rng));
  };
  he_uniform(Offsets::w1, kConv1Weights, kInputChannels * kTaps);
  he_uniform(Offsets::w2, kConv2Weights, kHidden * kTaps);
}

template <class T>
std::vector<T> TinyConvNet<T>::forward(const Dims& dims, std::span<const T> input) const {
  return run_forward(params_, dims, input).prob;
}

template <class T>
double TinyConvNet<T>::accumulate_gradient(const Dims& d, std::span<const T> input, std::span<const T> target,
                                           std::span<double> grad) const {
  constexpr int H = kHidden;
  constexpr int C = kInputChannels;
  const std::size_t n = d.count();
  if (target.size() != n) throw DataError("learner target does not match dims");
  if (grad.size() != kParameterCount) throw DataError("gradient buffer has the wrong size");

  const Activations<T> a = run_forward(params_, d, input);
  const DiceLoss<T> dl = dice_loss<T>(a.prob, target);

  // Output layer.
  const T* w3 = params_.data() + Offsets::w3;
  std::vector<T> g2(n * H);
  double db3 = 0.0;
  std::array<double, H> dw3{};
  for (std::size_t i = 0; i < n; ++i) {
    const T p = a.prob[i];
    const T g = dl.gradient[i] * p * (T(1) - p);
    db3 += g;
    for (int c = 0; c < H; ++c) {
      const T h = a.h2[i * H + c];
      dw3[c] += double(g) * h;
      g2[i * H + c] = h > T(0) ? g * w3[c] : T(0);
    }
  }
  grad[Offsets::b3] += db3;
  for (int c = 0; c < H; ++c) grad[Offsets::w3 + c] += dw3[c];

  // Second convolution.
  std::vector<double> dk2(static_cast<std::size_t>(kTaps) * H * H, 0.0);
  conv3_weight_grad<T, H, H>(d, a.h1.data(), g2.data(), dk2.data(), grad.data() + Offsets::b2);
  add_from_kernel_layout(dk2, H, H, grad.data() + Offsets::w2);

  const auto flipped = to_flipped_transposed(params_.data() + Offsets::w2, H, H);
  std::vector<T> g1(n * H);
  conv3<T, H, H>(d, g2.data(), flipped.data(), nullptr, g1.data());
  for (std::size_t i = 0; i < g1.size(); ++i)
    if (!(a.h1[i] > T(0))) g1[i] = T(0);

  // First convolution; the input itself needs no gradient.
  std::vector<double> dk1(static_cast<std::size_t>(kTaps) * C * H, 0.0);
  conv3_weight_grad<T, C, H>(d, input.data(), g1.data(), dk1.data(), grad.data() + Offsets::b1);
  add_from_kernel_layout(dk1, C, H, grad.data() + Offsets::w1);
  return dl.loss;
}

template class TinyConvNet<float>;
template class TinyConvNet<double>;

template <class T>
std::vector<T> pack_input(const LearnerInput& input) {
  if (!input.intensity.same_grid(input.points)) throw DataError("learner input channels differ in shape");
  std::vector<T> packed(input.intensity.size() * 2);
  for (std::size_t i = 0; i < input.intensity.size(); ++i) {
    packed[2 * i] = static_cast<T>(input.intensity[i]);
    packed[2 * i + 1] = static_cast<T>(input.points[i]);
  }
  return packed;
}

template std::vector<float> pack_input<float>(const LearnerInput&);
template std::vector<double> pack_input<double>(const LearnerInput&);

LearnerModel::LearnerModel(std::uint64_t seed) : seed_(seed), net_(seed) {}

TrainLog LearnerModel::train(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  std::vector<std::vector<float>> inputs;
  for (const auto& s : dataset) {
    if (!s.input.intensity.same_grid(s.target)) throw DataError("training sample target does not match its input");
    inputs.push_back(pack_input<float>(s.input));
  }

  auto params = net_.parameters();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> grad(params.size());
  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t s = 0; s < dataset.size(); ++s)
      loss += net_.accumulate_gradient(dataset[s].target.dims(), inputs[s], dataset[s].target.data(), grad);
    const double scale = 1.0 / static_cast<double>(dataset.size());
    loss *= scale;
    if (!std::isfinite(loss)) {
      throw NumericalError("training diverged: loss is " + std::to_string(loss) + " at epoch " +
                           std::to_string(epochs_trained_ + 1));
    }
    log.epoch_loss.push_back(loss);
    for (std::size_t k = 0; k < params.size(); ++k) {
      velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * grad[k] * scale;
      params[k] = static_cast<float>(params[k] + velocity[k]);
    }
    ++epochs_trained_;
  }
  for (float p : params)
    if (!std::isfinite(p)) throw NumericalError("training produced non-finite parameters");
  return log;
}

ProbabilityMap LearnerModel::predict(const LearnerInput& input) const {
  const auto packed = pack_input<float>(input);
  auto prob = net_.forward(input.intensity.dims(), packed);
  // float sigmoid saturates at |logit| > ~17; keep the open interval (0,1)
  const float lo = std::nextafter(0.0f, 1.0f), hi = std::nextafter(1.0f, 0.0f);
  for (auto& v : prob) v = std::clamp(v, lo, hi);
  return ProbabilityMap(input.intensity.dims(), input.intensity.spacing(), std::move(prob));
}

double LearnerModel::evaluate_loss(const std::vector<TrainingSample>& dataset) const {
  if (dataset.empty()) throw DataError("dataset is empty");
  double loss = 0.0;
  for (const auto& s : dataset) loss += dice_loss(predict(s.input), s.target).loss;
  return loss / static_cast<double>(dataset.size());
}

namespace {

std::filesystem::path with_ext(std::filesystem::path p, const char* ext) {
  if (p.extension() == ".json" || p.extension() == ".raw") p.replace_extension();
  p += ext;
  return p;
}

float swap_bytes(float v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(float)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<float>(bytes);
}

constexpr const char* kArchitecture = "conv3d(2,8,3)-relu-conv3d(8,8,3)-relu-conv3d(8,1,1)-sigmoid";

}  // namespace

void LearnerModel::save(const std::filesystem::path& path) const {
  nlohmann::json header = {{"architecture", kArchitecture},
                           {"parameter_count", TinyConvNet<float>::kParameterCount},
                           {"seed", seed_},
                           {"epoch", epochs_trained_},
                           {"dtype", "f32"},
                           {"byte_order", "little"},
                           {"layout", {"conv1.weight[8][2][3][3][3]", "conv1.bias[8]", "conv2.weight[8][8][3][3][3]",
                                       "conv2.bias[8]", "conv3.weight[8]", "conv3.bias[1]"}}};
  std::ofstream h(with_ext(path, ".json"));
  if (!h) throw DataError("cannot write model header");
  h << header.dump(2) << '\n';
  std::vector<float> blob(net_.parameters().begin(), net_.parameters().end());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : blob) v = swap_bytes(v);
  }
  std::ofstream raw(with_ext(path, ".raw"), std::ios::binary);
  raw.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!raw) throw DataError("cannot write model parameters");
}

LearnerModel LearnerModel::load(const std::filesystem::path& path) {
  std::ifstream h(with_ext(path, ".json"));
  if (!h) throw DataError("cannot open model header");
  nlohmann::json header;
  try {
    h >> header;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model header: ") + e.what());
  }
  if (header.value("architecture", std::string()) != kArchitecture) throw DataError("unknown model architecture");
  LearnerModel model(header.value("seed", std::uint64_t{0}));
  model.epochs_trained_ = header.value("epoch", 0);
  std::ifstream raw(with_ext(path, ".raw"), std::ios::binary | std::ios::ate);
  if (!raw) throw DataError("cannot open model parameters");
  const auto bytes = static_cast<std::size_t>(raw.tellg());
  if (bytes != TinyConvNet<float>::kParameterCount * sizeof(float)) throw DataError("model parameter blob has wrong size");
  raw.seekg(0);
  auto params = model.net_.parameters();
  raw.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(bytes));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : params) v = swap_bytes(v);
  }
  for (float p : params)
    if (!std::isfinite(p)) throw DataError("model parameters contain non-finite values");
  return model;
}

}  // namespace xseg
