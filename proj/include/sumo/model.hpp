#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sumo/common.hpp"
#include "sumo/nn.hpp"
#include "sumo/tensor.hpp"

namespace sumo {

// Architecture of the spindle U-Net: `levels` composite stages where the
// last one is the bottleneck, pooling between consecutive stages, a mirrored
// decoder with skip connections, and a 2-channel softmax head.
struct ArchConfig {
  std::size_t levels = 3;
  std::vector<std::size_t> pool_widths{4, 4};
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t kernel_size = 7;
  std::vector<std::size_t> dilations{1, 1, 1};
  std::size_t smoothing_width = 42;  // moving-average width for prediction, samples

  void validate() const {
    if (levels < 2) throw ConfigError("arch: at least 2 levels required");
    if (pool_widths.size() != levels - 1)
      throw ConfigError("arch: pool_widths must have levels-1 entries");
    if (channels.size() != levels) throw ConfigError("arch: channels must have levels entries");
    if (dilations.size() != levels) throw ConfigError("arch: dilations must have levels entries");
    if (kernel_size < 1) throw ConfigError("arch: kernel_size must be >= 1");
    if (smoothing_width < 1) throw ConfigError("arch: smoothing_width must be >= 1");
    for (std::size_t w : pool_widths)
      if (w < 1) throw ConfigError("arch: pool widths must be >= 1");
    for (std::size_t c : channels)
      if (c < 1) throw ConfigError("arch: channel counts must be >= 1");
    for (std::size_t i = 1; i < channels.size(); ++i)
      if (channels[i] % 2 != 0)
        throw ConfigError("arch: channels above the first level must be even");
    for (std::size_t d : dilations)
      if (d < 1) throw ConfigError("arch: dilations must be >= 1");
  }

  std::size_t min_input_len() const {
    std::size_t p = 1;
    for (std::size_t w : pool_widths) p *= w;
    return p;
  }

  bool operator==(const ArchConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = nlohmann::json{{"levels", a.levels},
                     {"pool_widths", a.pool_widths},
                     {"channels", a.channels},
                     {"kernel_size", a.kernel_size},
                     {"dilations", a.dilations},
                     {"smoothing_width", a.smoothing_width}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
  a = ArchConfig{};
  j.at("levels").get_to(a.levels);
  j.at("pool_widths").get_to(a.pool_widths);
  j.at("channels").get_to(a.channels);
  j.at("kernel_size").get_to(a.kernel_size);
  j.at("dilations").get_to(a.dilations);
  if (j.contains("smoothing_width")) j.at("smoothing_width").get_to(a.smoothing_width);
}

// Span of input samples feeding one bottleneck activation.
inline std::size_t receptive_field_samples(const ArchConfig& arch) {
  std::size_t rf = 1, jump = 1;
  for (std::size_t level = 0; level < arch.levels; ++level) {
    rf += 2 * (arch.kernel_size - 1) * arch.dilations[level] * jump;
    if (level + 1 < arch.levels) {
      rf += (arch.pool_widths[level] - 1) * jump;
      jump *= arch.pool_widths[level];
    }
  }
  return rf;
}

// conv -> ReLU -> batch norm
template <typename T>
struct Composite {
  nn::Conv1d<T> conv;
  nn::BatchNorm1d<T> bn;
};

template <typename T>
struct CompositeCache {
  Tensor<T> conv_in;
  Tensor<T> conv_out;  // pre-ReLU, doubles as the ReLU mask
  nn::BatchNormCache<T> bn;
};

template <typename T>
struct EncoderLevel {
  Composite<T> c1, c2;
};

template <typename T>
struct DecoderStage {
  nn::Conv1d<T> up;  // (4, 1)-conv applied after nearest-neighbor upsampling
  Composite<T> c1, c2;
};

struct ModelMeta {
  std::int64_t epoch = 0;
  double best_val_f1_bar = 0.0;
};

enum class ParamKind { learnable, buffer };

template <typename T>
struct Model;

template <typename T>
Model<T> build_model(const ArchConfig& arch, std::uint64_t seed);

template <typename T>
struct Model {
  ArchConfig arch;
  std::vector<EncoderLevel<T>> enc;  // one per level, last entry is the bottleneck
  std::vector<DecoderStage<T>> dec;  // dec[j] targets encoder level levels-2-j
  nn::Conv1d<T> head;                // kernel-1 conv to 2 channels
  ModelMeta meta;

  // Visits every parameter tensor in the fixed declaration order used for
  // serialization and optimizer state.
  template <typename F>
  void visit_params(F&& f) {
    auto visit_composite = [&](const std::string& prefix, Composite<T>& c) {
      f(prefix + ".conv.weight", c.conv.kernel, ParamKind::learnable);
      f(prefix + ".conv.bias", c.conv.bias, ParamKind::learnable);
      f(prefix + ".bn.gamma", c.bn.gamma, ParamKind::learnable);
      f(prefix + ".bn.beta", c.bn.beta, ParamKind::learnable);
      f(prefix + ".bn.running_mean", c.bn.running_mean, ParamKind::buffer);
      f(prefix + ".bn.running_var", c.bn.running_var, ParamKind::buffer);
    };
    for (std::size_t i = 0; i < enc.size(); ++i) {
      visit_composite("enc" + std::to_string(i) + ".c1", enc[i].c1);
      visit_composite("enc" + std::to_string(i) + ".c2", enc[i].c2);
    }
    for (std::size_t j = 0; j < dec.size(); ++j) {
      f("dec" + std::to_string(j) + ".up.weight", dec[j].up.kernel, ParamKind::learnable);
      f("dec" + std::to_string(j) + ".up.bias", dec[j].up.bias, ParamKind::learnable);
      visit_composite("dec" + std::to_string(j) + ".c1", dec[j].c1);
      visit_composite("dec" + std::to_string(j) + ".c2", dec[j].c2);
    }
    f("head.weight", head.kernel, ParamKind::learnable);
    f("head.bias", head.bias, ParamKind::learnable);
  }

  template <typename F>
  void visit_params(F&& f) const {
    const_cast<Model*>(this)->visit_params(
        [&](const std::string& name, Tensor<T>& t, ParamKind kind) {
          f(name, static_cast<const Tensor<T>&>(t), kind);
        });
  }

  std::size_t learnable_count() const {
    std::size_t n = 0;
    visit_params([&](const std::string&, const Tensor<T>& t, ParamKind kind) {
      if (kind == ParamKind::learnable) n += t.numel();
    });
    return n;
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> out = build_model<U>(arch, 0);
    out.meta = meta;
    std::map<std::string, const Tensor<T>*> src;
    visit_params(
        [&](const std::string& name, const Tensor<T>& t, ParamKind) { src[name] = &t; });
    out.visit_params([&](const std::string& name, Tensor<U>& t, ParamKind) {
      t = src.at(name)->template cast<U>();
    });
    return out;
  }
};

namespace detail {

template <typename T>
nn::Conv1d<T> init_conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                        std::size_t dilation, Rng& rng) {
  auto conv = nn::Conv1d<T>::make_same(in_ch, out_ch, k, dilation);
  const double bound = std::sqrt(6.0 / static_cast<double>(in_ch * k));
  for (std::size_t i = 0; i < conv.kernel.numel(); ++i)
    conv.kernel[i] = static_cast<T>(rng.uniform(-bound, bound));
  return conv;  // bias stays zero
}

}  // namespace detail

// Builds a network with Kaiming-uniform conv kernels (bound sqrt(6/fan_in),
// fan_in = in_ch * kernel_size), zero biases, and identity batch-norm state.
// Deterministic in the seed.
template <typename T>
Model<T> build_model(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  Model<T> model;
  model.arch = arch;
  const std::size_t k = arch.kernel_size;

  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < arch.levels; ++i) {
    EncoderLevel<T> level;
    level.c1 = {detail::init_conv<T>(in_ch, arch.channels[i], k, arch.dilations[i], rng),
                nn::BatchNorm1d<T>::make(arch.channels[i])};
    level.c2 = {
        detail::init_conv<T>(arch.channels[i], arch.channels[i], k, arch.dilations[i], rng),
        nn::BatchNorm1d<T>::make(arch.channels[i])};
    model.enc.push_back(std::move(level));
    in_ch = arch.channels[i];
  }
  for (std::size_t j = 0; j + 1 < arch.levels; ++j) {
    const std::size_t lvl = arch.levels - 2 - j;      // encoder level this stage targets
    const std::size_t below = arch.channels[lvl + 1]; // channels arriving from below
    const std::size_t half = below / 2;
    DecoderStage<T> stage;
    stage.up = detail::init_conv<T>(below, half, 4, 1, rng);
    const std::size_t cat = half + arch.channels[lvl];
    stage.c1 = {detail::init_conv<T>(cat, arch.channels[lvl], k, arch.dilations[lvl], rng),
                nn::BatchNorm1d<T>::make(arch.channels[lvl])};
    stage.c2 = {detail::init_conv<T>(arch.channels[lvl], arch.channels[lvl], k,
                                     arch.dilations[lvl], rng),
                nn::BatchNorm1d<T>::make(arch.channels[lvl])};
    model.dec.push_back(std::move(stage));
  }
  model.head = detail::init_conv<T>(arch.channels[0], 2, 1, 1, rng);
  return model;
}

template <typename T>
struct ModelCache {
  std::vector<CompositeCache<T>> enc_c1, enc_c2;
  std::vector<nn::MaxPoolResult<T>> pools;
  std::vector<std::size_t> skip_lens;
  std::vector<Tensor<T>> skips;
  std::vector<Tensor<T>> up_in;       // decoder stage input (before upsampling)
  std::vector<Tensor<T>> up_conv_in;  // after upsampling, input to the up conv
  std::vector<CompositeCache<T>> dec_c1, dec_c2;
  Tensor<T> head_in;
  Tensor<T> probs;
};

namespace detail {

template <typename T>
Tensor<T> composite_forward(Composite<T>& comp, const Tensor<T>& x, nn::Mode mode,
                            CompositeCache<T>* cache) {
  Tensor<T> y = nn::conv1d(x, comp.conv);
  Tensor<T> r = nn::relu(y);
  if (cache) {
    cache->conv_in = x;
    cache->conv_out = std::move(y);
  }
  return nn::batchnorm1d(r, comp.bn, mode, cache ? &cache->bn : nullptr);
}

template <typename T>
Tensor<T> composite_backward(const Composite<T>& comp, const CompositeCache<T>& cache,
                             const Tensor<T>& grad_out, const std::string& prefix,
                             std::map<std::string, Tensor<T>>& grads) {
  auto bg = nn::batchnorm1d_backward(comp.bn, cache.bn, grad_out);
  grads[prefix + ".bn.gamma"] = std::move(bg.gamma);
  grads[prefix + ".bn.beta"] = std::move(bg.beta);
  Tensor<T> rg = nn::relu_backward(cache.conv_out, bg.x);
  auto cg = nn::conv1d_backward(cache.conv_in, comp.conv, rg);
  grads[prefix + ".conv.weight"] = std::move(cg.kernel);
  grads[prefix + ".conv.bias"] = std::move(cg.bias);
  return std::move(cg.x);
}

}  // namespace detail

// Full U-Net forward pass: [B, 1, T] -> per-sample class probabilities
// [B, 2, T] (channel 0 no-spindle, channel 1 spindle).
template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& x, nn::Mode mode,
                  ModelCache<T>* cache = nullptr) {
  if (x.rank() != 3 || x.dim(1) != 1)
    throw ShapeError("model forward expects [B, 1, T] input");
  const std::size_t levels = model.arch.levels;
  if (x.dim(2) < model.arch.min_input_len())
    throw ShapeError("input length " + std::to_string(x.dim(2)) + " below minimum " +
                     std::to_string(model.arch.min_input_len()));
  if (cache) {
    cache->enc_c1.resize(levels);
    cache->enc_c2.resize(levels);
    cache->pools.resize(levels - 1);
    cache->skips.resize(levels - 1);
    cache->skip_lens.resize(levels - 1);
    cache->up_in.resize(levels - 1);
    cache->up_conv_in.resize(levels - 1);
    cache->dec_c1.resize(levels - 1);
    cache->dec_c2.resize(levels - 1);
  }

  std::vector<Tensor<T>> skips(levels - 1);
  std::vector<std::size_t> skip_lens(levels - 1);
  std::vector<nn::MaxPoolResult<T>> pools(levels - 1);

  Tensor<T> cur = x;
  for (std::size_t i = 0; i < levels; ++i) {
    cur = detail::composite_forward(model.enc[i].c1, cur, mode,
                                    cache ? &cache->enc_c1[i] : nullptr);
    cur = detail::composite_forward(model.enc[i].c2, cur, mode,
                                    cache ? &cache->enc_c2[i] : nullptr);
    if (i + 1 < levels) {
      skip_lens[i] = cur.dim(2);
      skips[i] = cur;
      auto pooled = nn::maxpool1d(cur, model.arch.pool_widths[i]);
      cur = pooled.out;
      pools[i] = std::move(pooled);
    }
  }

  for (std::size_t j = 0; j + 1 < levels; ++j) {
    const std::size_t lvl = levels - 2 - j;
    const std::size_t factor = model.arch.pool_widths[lvl];
    if (cache) cache->up_in[j] = cur;
    Tensor<T> u = nn::upsample_nn(cur, factor, skip_lens[lvl]);
    Tensor<T> h = nn::conv1d(u, model.dec[j].up);
    if (cache) cache->up_conv_in[j] = std::move(u);
    cur = nn::concat_channels(h, skips[lvl]);
    cur = detail::composite_forward(model.dec[j].c1, cur, mode,
                                    cache ? &cache->dec_c1[j] : nullptr);
    cur = detail::composite_forward(model.dec[j].c2, cur, mode,
                                    cache ? &cache->dec_c2[j] : nullptr);
  }

  if (cache) cache->head_in = cur;
  Tensor<T> logits = nn::conv1d(cur, model.head);
  Tensor<T> probs = nn::softmax_channels(logits);
  if (cache) {
    cache->probs = probs;
    cache->skips = std::move(skips);
    cache->skip_lens = std::move(skip_lens);
    cache->pools = std::move(pools);
  }
  return probs;
}

template <typename T>
struct BackwardResult {
  std::map<std::string, Tensor<T>> grads;  // keyed by learnable parameter name
  Tensor<T> input;                         // gradient with respect to the input signal
};

template <typename T>
BackwardResult<T> backward(const Model<T>& model, const ModelCache<T>& cache,
                           const Tensor<T>& grad_probs) {
  BackwardResult<T> out;
  const std::size_t levels = model.arch.levels;

  Tensor<T> g = nn::softmax_channels_backward(cache.probs, grad_probs);
  {
    auto cg = nn::conv1d_backward(cache.head_in, model.head, g);
    out.grads["head.weight"] = std::move(cg.kernel);
    out.grads["head.bias"] = std::move(cg.bias);
    g = std::move(cg.x);
  }

  std::vector<Tensor<T>> skip_grads(levels - 1);
  for (std::size_t jr = 0; jr + 1 < levels; ++jr) {
    const std::size_t j = levels - 2 - jr;  // reverse application order
    const std::size_t lvl = levels - 2 - j;
    const std::string prefix = "dec" + std::to_string(j);
    g = detail::composite_backward(model.dec[j].c2, cache.dec_c2[j], g, prefix + ".c2",
                                   out.grads);
    g = detail::composite_backward(model.dec[j].c1, cache.dec_c1[j], g, prefix + ".c1",
                                   out.grads);
    const std::size_t half = model.dec[j].up.out_channels();
    auto [gh, gskip] = nn::split_channels(g, half);
    skip_grads[lvl] = std::move(gskip);
    auto ug = nn::conv1d_backward(cache.up_conv_in[j], model.dec[j].up, gh);
    out.grads[prefix + ".up.weight"] = std::move(ug.kernel);
    out.grads[prefix + ".up.bias"] = std::move(ug.bias);
    g = nn::upsample_nn_backward(model.arch.pool_widths[lvl], cache.up_in[j].dim(2), ug.x);
  }

  for (std::size_t ir = 0; ir < levels; ++ir) {
    const std::size_t i = levels - 1 - ir;
    if (i + 1 < levels) {
      g = nn::maxpool1d_backward(cache.pools[i], cache.skip_lens[i], g);
      const Tensor<T>& sg = skip_grads[i];
      for (std::size_t idx = 0; idx < g.numel(); ++idx) g[idx] += sg[idx];
    }
    const std::string prefix = "enc" + std::to_string(i);
    g = detail::composite_backward(model.enc[i].c2, cache.enc_c2[i], g, prefix + ".c2",
                                   out.grads);
    g = detail::composite_backward(model.enc[i].c1, cache.enc_c1[i], g, prefix + ".c1",
                                   out.grads);
  }
  out.input = std::move(g);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "SUMO" magic, u32 version, u64 JSON header length, JSON
// header (arch, meta, tensor shape table, optional optimizer table), then raw
// little-endian f32 blocks in table order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct AdamTensorState {
  Tensor<float> m, v;
};

struct OptimizerState {
  std::map<std::string, AdamTensorState> slots;
  std::int64_t step = 0;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  if (!is.read(reinterpret_cast<char*>(buf), 4)) throw FormatError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw FormatError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_block(std::ostream& os, const Tensor<float>& t) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

inline void read_block(std::istream& is, Tensor<float>& t) {
  if (!is.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float))))
    throw FormatError("checkpoint truncated in parameter block");
}

}  // namespace detail

inline void save_model(const Model<float>& model, const std::string& path,
                       const OptimizerState* opt = nullptr) {
  nlohmann::json header;
  header["arch"] = model.arch;
  header["meta"] = {{"epoch", model.meta.epoch},
                    {"best_val_f1_bar", model.meta.best_val_f1_bar}};
  nlohmann::json table = nlohmann::json::array();
  model.visit_params([&](const std::string& name, const Tensor<float>& t, ParamKind) {
    table.push_back({{"name", name}, {"shape", t.shape()}});
  });
  header["tensors"] = table;
  if (opt) {
    header["adam_step"] = opt->step;
    header["has_optimizer"] = true;
  }
  const std::string payload = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
  os.write("SUMO", 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u64(os, payload.size());
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  model.visit_params([&](const std::string&, const Tensor<float>& t, ParamKind) {
    detail::write_block(os, t);
  });
  if (opt) {
    model.visit_params([&](const std::string& name, const Tensor<float>& t, ParamKind kind) {
      if (kind != ParamKind::learnable) return;
      const auto& slot = opt->slots.at(name);
      if (!slot.m.same_shape(t) || !slot.v.same_shape(t))
        throw FormatError("optimizer slot shape mismatch for " + name);
      detail::write_block(os, slot.m);
      detail::write_block(os, slot.v);
    });
  }
  if (!os) throw FormatError("checkpoint write failed: " + path);
}

inline Model<float> load_model(const std::string& path, OptimizerState* opt = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SUMO", 4) != 0)
    throw FormatError("not a SUMO checkpoint: " + path);
  const std::uint32_t version = detail::read_u32(is);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t len = detail::read_u64(is);
  if (len > (1ull << 30)) throw FormatError("checkpoint header implausibly large");
  std::string payload(len, '\0');
  if (!is.read(payload.data(), static_cast<std::streamsize>(len)))
    throw FormatError("checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(payload);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  ArchConfig arch = header.at("arch").get<ArchConfig>();
  Model<float> model = build_model<float>(arch, 0);
  if (header.contains("meta")) {
    model.meta.epoch = header["meta"].value("epoch", std::int64_t{0});
    model.meta.best_val_f1_bar = header["meta"].value("best_val_f1_bar", 0.0);
  }

  // the stored shape table must agree with the architecture
  const auto& table = header.at("tensors");
  std::size_t idx = 0;
  model.visit_params([&](const std::string& name, Tensor<float>& t, ParamKind) {
    if (idx >= table.size()) throw FormatError("checkpoint tensor table too short");
    const auto& entry = table[idx++];
    if (entry.at("name").get<std::string>() != name)
      throw FormatError("checkpoint tensor order mismatch at " + name);
    if (entry.at("shape").get<std::vector<std::size_t>>() != t.shape())
      throw FormatError("checkpoint shape disagrees with architecture at " + name);
  });
  if (idx != table.size()) throw FormatError("checkpoint tensor table too long");

  model.visit_params([&](const std::string&, Tensor<float>& t, ParamKind) {
    detail::read_block(is, t);
  });
  if (opt) {
    if (!header.value("has_optimizer", false))
      throw FormatError("checkpoint has no optimizer state: " + path);
    opt->step = header.value("adam_step", std::int64_t{0});
    opt->slots.clear();
    model.visit_params([&](const std::string& name, Tensor<float>& t, ParamKind kind) {
      if (kind != ParamKind::learnable) return;
      AdamTensorState slot{Tensor<float>(t.shape()), Tensor<float>(t.shape())};
      detail::read_block(is, slot.m);
      detail::read_block(is, slot.v);
      opt->slots.emplace(name, std::move(slot));
    });
  }
  return model;
}

}  // namespace sumo
