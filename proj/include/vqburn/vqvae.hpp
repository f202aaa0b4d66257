#pragma once

// Convolutional VQ-VAE: encoder, nearest-neighbour codebook quantizer,
// decoder, the three-term training loss and the training loop.
//
// Loss for one patch x with encoder output z_e (D x h x w, N = h*w latent
// positions), assigned codes e_k and reconstruction y = dec(z_q):
//
//   reconstruction = mean_pixels (y - x)^2
//   regularization = mean_pos ||sg(z_e) - e_k||^2 + beta * ||z_e - sg(e_k)||^2
//   alignment      = mean_pos ||z_e - e_k||^2 / D
//   total          = reconstruction + regularization + lambda * alignment
//
// The decoder gradient with respect to z_q is copied unchanged onto z_e
// (straight-through estimator). The codebook learns only from the
// regularization and alignment terms.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vqburn/common.hpp"
#include "vqburn/dataset.hpp"
#include "vqburn/nn.hpp"
#include "vqburn/raster_io.hpp"
#include "vqburn/volume.hpp"

namespace vqburn {

struct ModelConfig {
  int input_size = 256;
  int in_channels = 3;
  int conv_layers = 3;
  int latent_dim = 32;
  int codebook_size = 256;
  // Widths between the input and the latent, encoder order; conv_layers - 1 entries.
  std::vector<int> hidden_channels = {64, 128};
  double commitment_weight = 0.25;
  double alignment_weight = 1.0;
  double lr = 1e-4;
  int batch_size = 16;
  int epochs = 200;
  std::uint64_t seed = 0;
  nn::Activation activation = nn::Activation::kReLU;

  int downsample() const { return 1 << conv_layers; }
  int latent_size() const { return input_size / downsample(); }

  void validate() const {
    if (latent_dim < 1) throw config_error("latent_dim must be >= 1");
    if (codebook_size < 2) throw config_error("codebook_size must be >= 2");
    if (conv_layers < 1) throw config_error("conv_layers must be >= 1");
    if (in_channels < 1) throw config_error("in_channels must be >= 1");
    if (!(lr > 0.0)) throw config_error("lr must be positive");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (epochs < 0) throw config_error("epochs must be >= 0");
    if (commitment_weight < 0.0 || alignment_weight < 0.0) throw config_error("loss weights must be >= 0");
    if (static_cast<int>(hidden_channels.size()) != conv_layers - 1)
      throw config_error("hidden_channels needs conv_layers - 1 = " + std::to_string(conv_layers - 1) + " entries");
    for (int h : hidden_channels)
      if (h < 1) throw config_error("hidden channel widths must be >= 1");
    if (input_size < downsample() || input_size % downsample() != 0)
      throw config_error("input_size must be a positive multiple of 2^conv_layers");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct Codebook {
  int size = 0;  // K
  int dim = 0;   // D
  std::vector<T> embeddings;  // [K][D]

  Codebook() = default;
  Codebook(int k, int d) : size(k), dim(d), embeddings(static_cast<std::size_t>(k) * d, T(0)) {}

  std::span<const T> row(int k) const { return {embeddings.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)}; }
  std::span<T> row(int k) { return {embeddings.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)}; }

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

template <typename T>
struct LatentGrid {
  Volume<T> z_e;            // [D][h][w]
  Volume<T> z_q;            // [D][h][w], z_q(:,i,j) == embeddings[indices(i,j)]
  Grid<int> indices;        // [h][w]
  Grid<T> distances;        // ||z_e(:,i,j) - z_q(:,i,j)||^2
};

/// Nearest codebook row per latent position under squared Euclidean
/// distance; ties go to the lowest index.
template <typename T>
LatentGrid<T> quantize(const Codebook<T>& codebook, const Volume<T>& z_e) {
  if (z_e.channels != codebook.dim)
    throw data_error("latent depth " + std::to_string(z_e.channels) + " does not match codebook dim " +
                     std::to_string(codebook.dim));
  LatentGrid<T> g;
  g.z_e = z_e;
  g.z_q = Volume<T>(z_e.channels, z_e.height, z_e.width);
  g.indices = Grid<int>(z_e.height, z_e.width);
  g.distances = Grid<T>(z_e.height, z_e.width);
  const std::size_t plane = z_e.plane_size();
  std::vector<T> v(codebook.dim);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int d = 0; d < codebook.dim; ++d) v[d] = z_e.data[d * plane + p];
    int best = 0;
    T best_dist = std::numeric_limits<T>::infinity();
    for (int k = 0; k < codebook.size; ++k) {
      const auto e = codebook.row(k);
      T dist = T(0);
      for (int d = 0; d < codebook.dim; ++d) {
        const T diff = v[d] - e[d];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    g.indices.data[p] = best;
    g.distances.data[p] = best_dist;
    const auto e = codebook.row(best);
    for (int d = 0; d < codebook.dim; ++d) g.z_q.data[d * plane + p] = e[d];
  }
  return g;
}

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<nn::ConvLayer<T>> encoder;
  std::vector<nn::ConvLayer<T>> decoder;
  Codebook<T> codebook;
  // Model input bands in channel order, and the normalization fitted on the
  // training scene. Both are re-applied at prediction time.
  std::vector<BandRole> channel_roles;
  std::optional<BandStats> stats;

  template <typename F>
  void for_each_tensor(F&& f) {
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      f("encoder." + std::to_string(i) + ".weight", encoder[i].weight);
      f("encoder." + std::to_string(i) + ".bias", encoder[i].bias);
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      f("decoder." + std::to_string(i) + ".weight", decoder[i].weight);
      f("decoder." + std::to_string(i) + ".bias", decoder[i].bias);
    }
    f(std::string("codebook"), codebook.embeddings);
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    for (const auto& l : encoder) out.encoder.push_back(l.template cast<U>());
    for (const auto& l : decoder) out.decoder.push_back(l.template cast<U>());
    out.codebook = Codebook<U>(codebook.size, codebook.dim);
    for (std::size_t i = 0; i < codebook.embeddings.size(); ++i)
      out.codebook.embeddings[i] = static_cast<U>(codebook.embeddings[i]);
    out.channel_roles = channel_roles;
    out.stats = stats;
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Layer stack C -> h0 -> ... -> D and its mirror; weights seeded from cfg.seed.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.config = cfg;
  std::vector<int> widths = {cfg.in_channels};
  widths.insert(widths.end(), cfg.hidden_channels.begin(), cfg.hidden_channels.end());
  widths.push_back(cfg.latent_dim);
  Rng rng(derive_seed(cfg.seed, 0x1417));
  for (int i = 0; i < cfg.conv_layers; ++i) {
    p.encoder.emplace_back(widths[i], widths[i + 1], false);
    p.encoder.back().init(rng);
  }
  for (int i = cfg.conv_layers; i > 0; --i) {
    p.decoder.emplace_back(widths[i], widths[i - 1], true);
    p.decoder.back().init(rng);
  }
  p.codebook = Codebook<T>(cfg.codebook_size, cfg.latent_dim);
  const double bound = 1.0 / cfg.codebook_size;
  for (T& e : p.codebook.embeddings) e = static_cast<T>(rng.uniform(-bound, bound));
  return p;
}

/// Intermediate values of one forward pass, kept for backpropagation.
template <typename T>
struct ForwardTrace {
  std::vector<nn::LayerCache<T>> encoder_cache, decoder_cache;
  std::vector<Volume<T>> encoder_pre, decoder_pre;  // pre-activation layer outputs
};

namespace detail {

template <typename T>
Volume<T> run_stack(const std::vector<nn::ConvLayer<T>>& layers, nn::Activation act, const Volume<T>& input,
                    std::vector<nn::LayerCache<T>>* caches, std::vector<Volume<T>>* pre) {
  if (caches) caches->assign(layers.size(), {});
  if (pre) pre->clear();
  Volume<T> cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Volume<T> z = nn::forward(layers[i], cur, caches ? &(*caches)[i] : nullptr);
    if (i + 1 < layers.size()) {
      cur = z;
      for (T& v : cur.data) v = nn::activate(act, v);
    } else {
      cur = z;
    }
    if (pre) pre->push_back(std::move(z));
  }
  return cur;
}

template <typename T>
Volume<T> backprop_stack(const std::vector<nn::ConvLayer<T>>& layers, nn::Activation act,
                         const std::vector<nn::LayerCache<T>>& caches, const std::vector<Volume<T>>& pre,
                         Volume<T> grad_out, std::vector<nn::LayerGrad<T>>& grads) {
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (i + 1 < layers.size())
      for (std::size_t j = 0; j < grad_out.data.size(); ++j) grad_out.data[j] *= nn::activate_grad(act, pre[i].data[j]);
    grad_out = nn::backward(layers[i], caches[i], grad_out, grads[i]);
  }
  return grad_out;
}

}  // namespace detail

template <typename T>
void check_patch_shape(const ModelConfig& cfg, const Volume<T>& patch) {
  if (patch.channels != cfg.in_channels || patch.height != cfg.input_size || patch.width != cfg.input_size)
    throw data_error("patch shape [" + std::to_string(patch.channels) + "," + std::to_string(patch.height) + "," +
                     std::to_string(patch.width) + "] does not match model input [" + std::to_string(cfg.in_channels) +
                     "," + std::to_string(cfg.input_size) + "," + std::to_string(cfg.input_size) + "]");
}

template <typename T>
Volume<T> encode(const ModelParams<T>& params, const Volume<T>& patch, ForwardTrace<T>* trace = nullptr) {
  check_patch_shape(params.config, patch);
  return detail::run_stack(params.encoder, params.config.activation, patch, trace ? &trace->encoder_cache : nullptr,
                           trace ? &trace->encoder_pre : nullptr);
}

template <typename T>
Volume<T> decode(const ModelParams<T>& params, const Volume<T>& z_q, ForwardTrace<T>* trace = nullptr) {
  const int ls = params.config.latent_size();
  if (z_q.channels != params.config.latent_dim || z_q.height != ls || z_q.width != ls)
    throw data_error("latent shape [" + std::to_string(z_q.channels) + "," + std::to_string(z_q.height) + "," +
                     std::to_string(z_q.width) + "] does not match model latent [" +
                     std::to_string(params.config.latent_dim) + "," + std::to_string(ls) + "," + std::to_string(ls) + "]");
  return detail::run_stack(params.decoder, params.config.activation, z_q, trace ? &trace->decoder_cache : nullptr,
                           trace ? &trace->decoder_pre : nullptr);
}

struct LossBreakdown {
  double total = 0.0;
  double reconstruction = 0.0;
  double regularization = 0.0;
  double alignment = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    total += o.total;
    reconstruction += o.reconstruction;
    regularization += o.regularization;
    alignment += o.alignment;
    return *this;
  }
  LossBreakdown scaled(double s) const { return {total * s, reconstruction * s, regularization * s, alignment * s}; }

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

template <typename T>
struct ModelGrad {
  std::vector<nn::LayerGrad<T>> encoder, decoder;
  std::vector<T> codebook;

  explicit ModelGrad(const ModelParams<T>& p) : codebook(p.codebook.embeddings.size(), T(0)) {
    for (const auto& l : p.encoder) encoder.emplace_back(l);
    for (const auto& l : p.decoder) decoder.emplace_back(l);
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& g : encoder) {
      f(g.weight);
      f(g.bias);
    }
    for (auto& g : decoder) {
      f(g.weight);
      f(g.bias);
    }
    f(codebook);
  }

  void zero() {
    for_each_tensor([](std::vector<T>& t) { std::fill(t.begin(), t.end(), T(0)); });
  }
};

/// Gradients at the quantizer, for inspecting the straight-through copy.
template <typename T>
struct QuantizerGrads {
  Volume<T> d_rec_d_zq;    // reconstruction term, backpropagated through the decoder
  Volume<T> d_total_d_ze;  // everything the encoder output receives
};

/// Forward pass and loss for one patch. When `grad` is non-null the scaled
/// gradient of the total loss is accumulated into it.
template <typename T>
LossBreakdown loss_and_grad(const ModelParams<T>& params, const Volume<T>& patch, ModelGrad<T>* grad = nullptr,
                            T scale = T(1), QuantizerGrads<T>* probe = nullptr, LatentGrid<T>* latent_out = nullptr) {
  const ModelConfig& cfg = params.config;
  ForwardTrace<T> trace;
  const bool need_trace = grad != nullptr || probe != nullptr;
  Volume<T> z_e = encode(params, patch, need_trace ? &trace : nullptr);
  LatentGrid<T> lat = quantize(params.codebook, z_e);
  Volume<T> y = decode(params, lat.z_q, need_trace ? &trace : nullptr);

  const auto n_pix = static_cast<double>(patch.size());
  const auto n_pos = static_cast<double>(lat.indices.size());
  const auto dim = static_cast<double>(cfg.latent_dim);

  double rec = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double diff = static_cast<double>(y.data[i]) - static_cast<double>(patch.data[i]);
    rec += diff * diff;
  }
  rec /= n_pix;
  double dist_sum = 0.0;
  for (T d : lat.distances.data) dist_sum += static_cast<double>(d);
  const double mean_dist = dist_sum / n_pos;

  LossBreakdown out;
  out.reconstruction = rec;
  out.regularization = (1.0 + cfg.commitment_weight) * mean_dist;
  out.alignment = mean_dist / dim;
  out.total = out.reconstruction + out.regularization + cfg.alignment_weight * out.alignment;
  if (!std::isfinite(out.total)) throw numerical_error("non-finite loss: training diverged");

  if (need_trace) {
    Volume<T> dy(y.channels, y.height, y.width);
    const T rec_scale = static_cast<T>(2.0 / n_pix) * scale;
    for (std::size_t i = 0; i < y.size(); ++i) dy.data[i] = rec_scale * (y.data[i] - patch.data[i]);

    std::vector<nn::LayerGrad<T>> scratch;
    std::vector<nn::LayerGrad<T>>& dec_grads = grad ? grad->decoder : scratch;
    if (!grad)
      for (const auto& l : params.decoder) scratch.emplace_back(l);
    Volume<T> d_zq = detail::backprop_stack(params.decoder, cfg.activation, trace.decoder_cache, trace.decoder_pre,
                                            dy, dec_grads);
    // Straight-through copy, then the latent-space terms.
    Volume<T> d_ze = d_zq;
    const T ze_coef = static_cast<T>((2.0 * cfg.commitment_weight + 2.0 * cfg.alignment_weight / dim) / n_pos) * scale;
    const T cb_coef = static_cast<T>((2.0 + 2.0 * cfg.alignment_weight / dim) / n_pos) * scale;
    const std::size_t plane = z_e.plane_size();
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t row = static_cast<std::size_t>(lat.indices.data[p]) * cfg.latent_dim;
      for (int d = 0; d < cfg.latent_dim; ++d) {
        const std::size_t idx = d * plane + p;
        const T r = z_e.data[idx] - lat.z_q.data[idx];
        d_ze.data[idx] += ze_coef * r;
        if (grad) grad->codebook[row + d] -= cb_coef * r;
      }
    }
    if (grad)
      detail::backprop_stack(params.encoder, cfg.activation, trace.encoder_cache, trace.encoder_pre, d_ze,
                             grad->encoder);
    if (probe) {
      probe->d_rec_d_zq = std::move(d_zq);
      probe->d_total_d_ze = std::move(d_ze);
    }
  }
  if (latent_out) *latent_out = std::move(lat);
  return out;
}

template <typename T>
LossBreakdown loss(const ModelParams<T>& params, const Volume<T>& patch) {
  return loss_and_grad<T>(params, patch);
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;  // 1-based, continues across resumes
  LossBreakdown loss;
  int codes_used = 0;  // distinct codebook rows selected during the epoch
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

template <typename T>
struct OptimizerState {
  long step = 0;
  std::vector<nn::AdamSlot<T>> slots;  // one per tensor, ModelParams::for_each_tensor order
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

template <typename T>
struct TrainState {
  ModelParams<T> params;
  OptimizerState<T> optimizer;
  int epochs_completed = 0;
};

struct TrainResult {
  TrainState<float> state;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains for cfg.epochs epochs (additional epochs when resuming). Sample
/// order and load-time augmentation derive from (seed, epoch, index), so a
/// rerun with the same inputs reproduces the history bit for bit.
inline TrainResult train(const PatchSet& patches, const ModelConfig& cfg, const AugmentConfig& aug,
                         std::optional<TrainState<float>> resume = std::nullopt,
                         const EpochCallback& on_epoch = nullptr) {
  cfg.validate();
  aug.validate();
  if (patches.size() == 0) throw data_error("training patch set is empty");
  for (const auto& p : patches.patches) check_patch_shape(cfg, p);

  TrainResult result;
  if (resume) {
    result.state = std::move(*resume);
    if (!(result.state.params.config.input_size == cfg.input_size &&
          result.state.params.config.in_channels == cfg.in_channels &&
          result.state.params.config.conv_layers == cfg.conv_layers &&
          result.state.params.config.latent_dim == cfg.latent_dim &&
          result.state.params.config.codebook_size == cfg.codebook_size &&
          result.state.params.config.hidden_channels == cfg.hidden_channels))
      throw config_error("resume checkpoint architecture differs from the configured model");
    result.state.params.config = cfg;
  } else {
    result.state.params = init_params<float>(cfg);
  }
  result.state.params.channel_roles = patches.channel_roles;
  if (patches.stats) result.state.params.stats = patches.stats;

  auto& params = result.state.params;
  auto& opt = result.state.optimizer;
  std::size_t n_tensors = 0;
  params.for_each_tensor([&](const std::string&, std::vector<float>&) { ++n_tensors; });
  opt.slots.resize(n_tensors);

  const nn::AdamConfig adam{cfg.lr};
  const AugmentConfig load_aug = aug.geometric_only();
  ModelGrad<float> grad(params);
  const std::size_t n = patches.size();
  std::vector<std::size_t> order(n);

  for (int e = 0; e < cfg.epochs; ++e) {
    const int epoch = result.state.epochs_completed + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5eed, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    LossBreakdown epoch_loss;
    std::vector<bool> used(cfg.codebook_size, false);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const float scale = 1.0f / static_cast<float>(end - start);
      grad.zero();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const Volume<float> x = augment(patches.patches[idx], load_aug, derive_seed(cfg.seed, 0xa11, epoch, idx));
        LatentGrid<float> lat;
        epoch_loss += loss_and_grad<float>(params, x, &grad, scale, nullptr, &lat);
        for (int k : lat.indices.data) used[k] = true;
      }
      ++opt.step;
      std::size_t t = 0;
      std::vector<std::vector<float>*> grads;
      grad.for_each_tensor([&](std::vector<float>& g) { grads.push_back(&g); });
      params.for_each_tensor([&](const std::string&, std::vector<float>& w) {
        nn::adam_update(w, *grads[t], opt.slots[t], adam, opt.step);
        ++t;
      });
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss.scaled(1.0 / static_cast<double>(n));
    rec.codes_used = static_cast<int>(std::count(used.begin(), used.end(), true));
    if (!std::isfinite(rec.loss.total)) throw numerical_error("non-finite loss at epoch " + std::to_string(epoch));
    result.state.epochs_completed = epoch;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace vqburn
