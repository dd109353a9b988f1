#include "osteovox/transvnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "osteovox/errors.hpp"
#include "osteovox/random.hpp"

namespace osteovox::transvnet {

namespace {

using json = nlohmann::json;

bool is_pow2(std::size_t v) { return v != 0 && std::has_single_bit(v); }

std::size_t log2_exact(std::size_t v) { return static_cast<std::size_t>(std::countr_zero(v)); }

enum class Init { HeNormal, Xavier, Embedding, Zero, One, Head };

struct TensorSpec {
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
};

struct Layout {
  std::vector<TensorSpec> tensors;
  std::vector<std::pair<std::string, std::size_t>> norms;  // BatchNorm name, channels
};

void add_conv(Layout& l, const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
  const std::size_t fan_in = in * k * k * k;
  l.tensors.push_back({name + ".weight", {out, in, k, k, k}, Init::HeNormal, fan_in, out});
  l.tensors.push_back({name + ".bias", {out}, Init::Zero});
}

void add_bn(Layout& l, const std::string& name, std::size_t channels) {
  l.tensors.push_back({name + ".weight", {channels}, Init::One});
  l.tensors.push_back({name + ".bias", {channels}, Init::Zero});
  l.norms.emplace_back(name, channels);
}

void add_linear(Layout& l, const std::string& name, std::size_t in, std::size_t out) {
  l.tensors.push_back({name + ".weight", {in, out}, Init::Xavier, in, out});
  l.tensors.push_back({name + ".bias", {out}, Init::Zero});
}

void add_double_conv(Layout& l, const std::string& name, std::size_t in, std::size_t out) {
  add_conv(l, name + ".conv1", in, out, 3);
  add_bn(l, name + ".bn1", out);
  add_conv(l, name + ".conv2", out, out, 3);
  add_bn(l, name + ".bn2", out);
}

// Channels of the encoder map concatenated into decoder block j, or 0 when
// the block has no skip.
std::size_t skip_channels(const ModelConfig& c, std::size_t resolution) {
  if (c.vit_only) return 0;
  const auto enc = c.resolved_encoder_channels();
  if (resolution <= c.feature_resolution()) return c.cnn_channels;
  for (std::size_t i = 0; i < c.cnn_downscalings; ++i) {
    if ((c.input_resolution >> i) == resolution) return enc[i];
  }
  throw ShapeError("no encoder map at decoder resolution " + std::to_string(resolution));
}

Layout make_layout(const ModelConfig& c) {
  c.validate();
  Layout l;
  if (!c.vit_only) {
    const auto enc = c.resolved_encoder_channels();
    std::size_t in = c.in_channels;
    for (std::size_t i = 0; i < c.cnn_downscalings; ++i) {
      const std::string p = "encoder." + std::to_string(i);
      add_double_conv(l, p, in, enc[i]);
      add_conv(l, p + ".down", enc[i], enc[i], 1);
      in = enc[i];
    }
  }
  const std::size_t d = c.hidden_dim;
  add_linear(l, "embed.patch", c.patch_dim(), d);
  l.tensors.push_back({"embed.position", {c.token_count(), d}, Init::Embedding});
  l.tensors.push_back({"embed.time.weight", {d}, Init::Embedding});
  l.tensors.push_back({"embed.time.bias", {d}, Init::Zero});
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "transformer." + std::to_string(i);
    l.tensors.push_back({p + ".ln1.weight", {d}, Init::One});
    l.tensors.push_back({p + ".ln1.bias", {d}, Init::Zero});
    add_linear(l, p + ".attn.q", d, d);
    add_linear(l, p + ".attn.k", d, d);
    add_linear(l, p + ".attn.v", d, d);
    add_linear(l, p + ".attn.out", d, d);
    l.tensors.push_back({p + ".ln2.weight", {d}, Init::One});
    l.tensors.push_back({p + ".ln2.bias", {d}, Init::Zero});
    add_linear(l, p + ".mlp.fc1", d, c.mlp_dim);
    add_linear(l, p + ".mlp.fc2", c.mlp_dim, d);
  }
  const auto dec = c.resolved_decoder_channels();
  add_conv(l, "decoder.stem.conv", d, dec[0], 3);
  add_bn(l, "decoder.stem.bn", dec[0]);
  std::size_t in = dec[0];
  std::size_t res = c.token_grid();
  for (std::size_t j = 0; j < c.upsampling_blocks(); ++j) {
    res *= 2;
    const std::size_t cat = in + skip_channels(c, res);
    add_double_conv(l, "decoder." + std::to_string(j), cat, dec[j + 1]);
    in = dec[j + 1];
  }
  l.tensors.push_back({"head.weight", {c.n_classes, in, 1, 1, 1}, Init::Head, in, c.n_classes});
  l.tensors.push_back({"head.bias", {c.n_classes}, Init::Zero});
  return l;
}

template <class T>
std::vector<T> initial_values(const TensorSpec& s, std::mt19937_64& rng) {
  const std::size_t n = nn::numel(s.shape);
  std::vector<T> v(n, T(0));
  double sd = 0.0;
  switch (s.init) {
    case Init::Zero: return v;
    case Init::One: std::fill(v.begin(), v.end(), T(1)); return v;
    case Init::HeNormal: sd = std::sqrt(2.0 / static_cast<double>(s.fan_in)); break;
    case Init::Xavier: sd = std::sqrt(2.0 / static_cast<double>(s.fan_in + s.fan_out)); break;
    case Init::Embedding: sd = 0.02; break;
    case Init::Head: sd = std::sqrt(1.0 / static_cast<double>(s.fan_in)); break;
  }
  for (auto& x : v) x = static_cast<T>(sd * standard_normal(rng));
  return v;
}

const char* encoding_name(InputEncoding e) { return e == InputEncoding::OneHot ? "one_hot" : "replicate"; }

}  // namespace

// ModelConfig ------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (input_resolution == 0) fail("input_resolution must be positive");
  if (in_channels == 0) fail("in_channels must be positive");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (patch_size == 0 || !is_pow2(patch_size)) fail("patch_size must be a power of two");
  if (hidden_dim == 0 || n_heads == 0 || hidden_dim % n_heads != 0) {
    fail("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (mlp_dim == 0) fail("mlp_dim must be positive");
  if (!(t_max > 0.0)) fail("t_max must be positive");
  if (input_encoding == InputEncoding::OneHot && in_channels != n_classes) {
    fail("one-hot input needs in_channels == n_classes");
  }
  if (!vit_only) {
    if (cnn_downscalings == 0) fail("cnn_downscalings must be at least 1 (use vit_only otherwise)");
    if (cnn_channels == 0) fail("cnn_channels must be positive");
    if (input_resolution % (std::size_t{1} << cnn_downscalings) != 0) {
      fail("input_resolution " + std::to_string(input_resolution) + " is not divisible by 2^" +
           std::to_string(cnn_downscalings));
    }
    if (!encoder_channels.empty()) {
      if (encoder_channels.size() != cnn_downscalings) fail("encoder_channels needs one entry per level");
      if (encoder_channels.back() != cnn_channels) fail("last encoder_channels entry must equal cnn_channels");
      for (auto ch : encoder_channels) {
        if (ch == 0) fail("encoder_channels entries must be positive");
      }
    }
  }
  const std::size_t hf = feature_resolution();
  if (hf % patch_size != 0) {
    fail("feature resolution " + std::to_string(hf) + " is not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (!is_pow2(input_resolution / token_grid()) || input_resolution % token_grid() != 0) {
    fail("input_resolution must be a power-of-two multiple of the token grid");
  }
  if (!decoder_channels.empty()) {
    if (decoder_channels.size() != upsampling_blocks() + 1) {
      fail("decoder_channels needs " + std::to_string(upsampling_blocks() + 1) +
           " entries (stem plus one per upsampling block)");
    }
    for (auto ch : decoder_channels) {
      if (ch == 0) fail("decoder_channels entries must be positive");
    }
  }
}

std::size_t ModelConfig::feature_resolution() const {
  return vit_only ? input_resolution : input_resolution >> cnn_downscalings;
}

std::size_t ModelConfig::feature_channels() const { return vit_only ? in_channels : cnn_channels; }

std::size_t ModelConfig::token_count() const {
  const std::size_t g = token_grid();
  return g * g * g;
}

std::size_t ModelConfig::patch_dim() const {
  return patch_size * patch_size * patch_size * feature_channels();
}

std::size_t ModelConfig::upsampling_blocks() const {
  return log2_exact(input_resolution / token_grid());
}

std::vector<std::size_t> ModelConfig::resolved_encoder_channels() const {
  if (vit_only) return {};
  if (!encoder_channels.empty()) return encoder_channels;
  std::vector<std::size_t> out(cnn_downscalings);
  for (std::size_t i = 0; i < cnn_downscalings; ++i) {
    const std::size_t shift = cnn_downscalings - 1 - i;
    out[i] = std::max<std::size_t>(std::min<std::size_t>(4, cnn_channels), cnn_channels >> shift);
  }
  return out;
}

std::vector<std::size_t> ModelConfig::resolved_decoder_channels() const {
  if (!decoder_channels.empty()) return decoder_channels;
  std::vector<std::size_t> out;
  std::size_t w = std::min<std::size_t>(hidden_dim, 128);
  out.push_back(w);
  for (std::size_t j = 0; j < upsampling_blocks(); ++j) {
    w = std::max<std::size_t>(16, w / 2);
    out.push_back(w);
  }
  return out;
}

std::string ModelConfig::to_json() const {
  json j;
  j["input_resolution"] = input_resolution;
  j["in_channels"] = in_channels;
  j["n_classes"] = n_classes;
  j["cnn_downscalings"] = cnn_downscalings;
  j["cnn_channels"] = cnn_channels;
  j["patch_size"] = patch_size;
  j["hidden_dim"] = hidden_dim;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["mlp_dim"] = mlp_dim;
  j["encoder_channels"] = encoder_channels;
  j["decoder_channels"] = decoder_channels;
  j["t_max"] = t_max;
  j["vit_only"] = vit_only;
  j["input_encoding"] = encoding_name(input_encoding);
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.input_resolution = j.value("input_resolution", c.input_resolution);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.cnn_downscalings = j.value("cnn_downscalings", c.cnn_downscalings);
    c.cnn_channels = j.value("cnn_channels", c.cnn_channels);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
    c.t_max = j.value("t_max", c.t_max);
    c.vit_only = j.value("vit_only", c.vit_only);
    const std::string enc = j.value("input_encoding", std::string("replicate"));
    if (enc == "replicate") {
      c.input_encoding = InputEncoding::Replicate;
    } else if (enc == "one_hot") {
      c.input_encoding = InputEncoding::OneHot;
    } else {
      throw ConfigError("model config: unknown input_encoding '" + enc + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// TransVNetParams --------------------------------------------------------------

template <class T>
TransVNetParams<T>::TransVNetParams(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  const Layout layout = make_layout(config);
  std::mt19937_64 rng(seed);
  for (const auto& s : layout.tensors) add(s.name, Tensor<T>(s.shape, initial_values<T>(s, rng), true));
  for (const auto& [name, ch] : layout.norms) stats_.emplace(name, nn::BatchNormStats<T>(ch));
}

template <class T>
void TransVNetParams<T>::add(std::string name, Tensor<T> t) {
  index_.emplace(name, tensors_.size());
  tensors_.emplace_back(std::move(name), std::move(t));
}

template <class T>
Tensor<T>& TransVNetParams<T>::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[it->second].second;
}

template <class T>
const Tensor<T>& TransVNetParams<T>::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[it->second].second;
}

template <class T>
nn::BatchNormStats<T>& TransVNetParams<T>::stats(const std::string& name) {
  const auto it = stats_.find(name);
  if (it == stats_.end()) throw ConfigError("unknown batch norm '" + name + "'");
  return it->second;
}

template <class T>
const nn::BatchNormStats<T>& TransVNetParams<T>::stats(const std::string& name) const {
  const auto it = stats_.find(name);
  if (it == stats_.end()) throw ConfigError("unknown batch norm '" + name + "'");
  return it->second;
}

template <class T>
std::size_t TransVNetParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

template <class T>
std::vector<std::pair<std::string, Shape>> TransVNetParams<T>::expected_shapes(const ModelConfig& config) {
  const Layout layout = make_layout(config);
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& s : layout.tensors) out.emplace_back(s.name, s.shape);
  for (const auto& [name, ch] : layout.norms) {
    out.emplace_back(name + ".running_mean", Shape{ch});
    out.emplace_back(name + ".running_var", Shape{ch});
  }
  return out;
}

template <class T>
std::vector<nn::NamedArray> TransVNetParams<T>::to_named_arrays() const {
  std::vector<nn::NamedArray> out;
  for (const auto& [name, t] : tensors_) {
    const auto v = t.values();
    out.push_back({name, t.shape(), std::vector<float>(v.begin(), v.end())});
  }
  const Layout layout = make_layout(config_);
  for (const auto& [name, ch] : layout.norms) {
    const auto& s = stats_.at(name);
    out.push_back({name + ".running_mean", Shape{ch},
                   std::vector<float>(s.running_mean.begin(), s.running_mean.end())});
    out.push_back({name + ".running_var", Shape{ch},
                   std::vector<float>(s.running_var.begin(), s.running_var.end())});
  }
  return out;
}

template <class T>
TransVNetParams<T> TransVNetParams<T>::from_named_arrays(const ModelConfig& config,
                                                         const std::vector<nn::NamedArray>& arrays) {
  const Layout layout = make_layout(config);
  std::map<std::string, const nn::NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;

  std::vector<std::string> problems;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const nn::NamedArray* {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back("missing " + name);
      return nullptr;
    }
    const nn::NamedArray* a = it->second;
    by_name.erase(it);
    if (a->shape != shape) {
      problems.push_back(name + " has shape " + nn::to_string(a->shape) + ", expected " +
                         nn::to_string(shape));
      return nullptr;
    }
    return a;
  };

  TransVNetParams<T> p;
  p.config_ = config;
  for (const auto& s : layout.tensors) {
    const nn::NamedArray* a = fetch(s.name, s.shape);
    if (a == nullptr) continue;
    p.add(s.name, Tensor<T>(s.shape, std::vector<T>(a->values.begin(), a->values.end()), true));
  }
  for (const auto& [name, ch] : layout.norms) {
    nn::BatchNormStats<T> st(ch);
    if (const auto* m = fetch(name + ".running_mean", Shape{ch})) {
      st.running_mean.assign(m->values.begin(), m->values.end());
    }
    if (const auto* v = fetch(name + ".running_var", Shape{ch})) {
      st.running_var.assign(v->values.begin(), v->values.end());
    }
    p.stats_.emplace(name, std::move(st));
  }
  for (const auto& [name, a] : by_name) problems.push_back("unexpected " + name);
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << "checkpoint does not match the model config:";
    for (const auto& pr : problems) msg << "\n  " << pr;
    throw ConfigError(msg.str());
  }
  return p;
}

template <class T>
void TransVNetParams<T>::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

template <class T>
void TransVNetParams<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : tensors_) t.node()->requires_grad = on;
}

template <class To, class From>
TransVNetParams<To> convert(const TransVNetParams<From>& params) {
  return TransVNetParams<To>::from_named_arrays(params.config(), params.to_named_arrays());
}

// Forward pass -----------------------------------------------------------------

namespace {

template <class T>
Tensor<T> conv_relu_bn(const Tensor<T>& x, TransVNetParams<T>& p, const std::string& conv,
                       const std::string& bn, Mode mode) {
  Tensor<T> y = nn::conv3d(x, p.at(conv + ".weight"), p.at(conv + ".bias"), 1, 1);
  y = nn::relu(y);
  return nn::batch_norm(y, p.at(bn + ".weight"), p.at(bn + ".bias"), p.stats(bn), mode);
}

template <class T>
Tensor<T> double_conv(const Tensor<T>& x, TransVNetParams<T>& p, const std::string& prefix, Mode mode) {
  Tensor<T> y = conv_relu_bn(x, p, prefix + ".conv1", prefix + ".bn1", mode);
  return conv_relu_bn(y, p, prefix + ".conv2", prefix + ".bn2", mode);
}

void check_input(const Shape& s, const ModelConfig& c) {
  const std::size_t h = c.input_resolution;
  if (s.size() != 5 || s[1] != c.in_channels || s[2] != h || s[3] != h || s[4] != h) {
    throw ShapeError("model input has shape " + nn::to_string(s) + ", expected [B, " +
                     std::to_string(c.in_channels) + ", " + std::to_string(h) + ", " +
                     std::to_string(h) + ", " + std::to_string(h) + "]");
  }
}

}  // namespace

template <class T>
Tensor<T> encode_input(const std::vector<const VoxelGrid*>& grids, const ModelConfig& config) {
  const std::size_t h = config.input_resolution;
  const std::size_t vol = h * h * h;
  const std::size_t c = config.in_channels;
  std::vector<T> values(grids.size() * c * vol, T(0));
  for (std::size_t b = 0; b < grids.size(); ++b) {
    const VoxelGrid& g = *grids[b];
    if (g.dims() != Dims{h, h, h}) {
      throw ConfigError("grid of size " + to_string(g.dims()) + " does not match model resolution " +
                        std::to_string(h));
    }
    const auto labels = g.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* dst = values.data() + (b * c + ch) * vol;
      const Label on = config.input_encoding == InputEncoding::OneHot ? static_cast<Label>(ch) : kMineral;
      for (std::size_t i = 0; i < vol; ++i) dst[i] = labels[i] == on ? T(1) : T(0);
    }
  }
  return Tensor<T>({grids.size(), c, h, h, h}, std::move(values));
}

template <class T>
EncoderOutput<T> cnn_encode(const Tensor<T>& input, TransVNetParams<T>& params, Mode mode) {
  const ModelConfig& c = params.config();
  check_input(input.shape(), c);
  EncoderOutput<T> out;
  if (c.vit_only) {
    out.features = input;
    return out;
  }
  Tensor<T> x = input;
  for (std::size_t i = 0; i < c.cnn_downscalings; ++i) {
    const std::string p = "encoder." + std::to_string(i);
    x = double_conv(x, params, p, mode);
    out.skips.push_back(x);
    x = nn::conv3d(x, params.at(p + ".down.weight"), params.at(p + ".down.bias"), 2, 0);
  }
  out.features = x;
  return out;
}

template <class T>
Tensor<T> tokenize_and_embed(const Tensor<T>& features, const std::vector<double>& months,
                             const TransVNetParams<T>& params) {
  const ModelConfig& c = params.config();
  const Shape& s = features.shape();
  const std::size_t hf = c.feature_resolution();
  const std::size_t ch = c.feature_channels();
  if (s.size() != 5 || s[1] != ch || s[2] != hf || s[3] != hf || s[4] != hf) {
    throw ShapeError("features have shape " + nn::to_string(s) + ", expected [B, " +
                     std::to_string(ch) + ", " + std::to_string(hf) + ", " + std::to_string(hf) +
                     ", " + std::to_string(hf) + "]");
  }
  if (hf % c.patch_size != 0) throw ConfigError("feature resolution not divisible by patch size");
  const std::size_t b = s[0];
  if (months.size() != b) throw ShapeError("one month value is needed per batch sample");
  const std::size_t p = c.patch_size, g = hf / p, n = g * g * g, d = c.hidden_dim;

  Tensor<T> x = nn::reshape(features, {b, ch, g, p, g, p, g, p});
  x = nn::permute(x, {0, 2, 4, 6, 1, 3, 5, 7});
  x = nn::reshape(x, {b, n, c.patch_dim()});
  Tensor<T> z = nn::linear(x, params.at("embed.patch.weight"), params.at("embed.patch.bias"));
  z = nn::add(z, params.at("embed.position"));

  std::vector<T> tn(b);
  for (std::size_t i = 0; i < b; ++i) tn[i] = static_cast<T>(months[i] / c.t_max);
  const Tensor<T> t_col({b, 1, 1}, std::move(tn));
  Tensor<T> time = nn::mul(t_col, nn::reshape(params.at("embed.time.weight"), {1, 1, d}));
  time = nn::add(time, params.at("embed.time.bias"));
  return nn::add(z, time);
}

template <class T>
Tensor<T> transformer_encode(const Tensor<T>& z0, const TransVNetParams<T>& params) {
  const ModelConfig& c = params.config();
  Tensor<T> z = z0;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "transformer." + std::to_string(l);
    nn::AttentionParams<T> attn{params.at(p + ".attn.q.weight"), params.at(p + ".attn.k.weight"),
                                params.at(p + ".attn.v.weight"), params.at(p + ".attn.out.weight"),
                                params.at(p + ".attn.q.bias"),   params.at(p + ".attn.k.bias"),
                                params.at(p + ".attn.v.bias"),   params.at(p + ".attn.out.bias"),
                                c.n_heads};
    Tensor<T> h = nn::layer_norm(z, params.at(p + ".ln1.weight"), params.at(p + ".ln1.bias"));
    z = nn::add(z, nn::multi_head_self_attention(h, attn));
    h = nn::layer_norm(z, params.at(p + ".ln2.weight"), params.at(p + ".ln2.bias"));
    h = nn::linear(h, params.at(p + ".mlp.fc1.weight"), params.at(p + ".mlp.fc1.bias"));
    h = nn::gelu(h);
    h = nn::linear(h, params.at(p + ".mlp.fc2.weight"), params.at(p + ".mlp.fc2.bias"));
    z = nn::add(z, h);
  }
  return z;
}

template <class T>
Tensor<T> decode(const Tensor<T>& zl, const EncoderOutput<T>& encoder, TransVNetParams<T>& params,
                 Mode mode) {
  const ModelConfig& c = params.config();
  const std::size_t g = c.token_grid(), d = c.hidden_dim;
  const Shape& s = zl.shape();
  if (s.size() != 3 || s[1] != g * g * g || s[2] != d) {
    throw ShapeError("token sequence has shape " + nn::to_string(s) + ", expected [B, " +
                     std::to_string(g * g * g) + ", " + std::to_string(d) + "]");
  }
  if (!c.vit_only && encoder.skips.size() != c.cnn_downscalings) {
    throw ShapeError("decoder expects " + std::to_string(c.cnn_downscalings) + " skips, got " +
                     std::to_string(encoder.skips.size()));
  }
  const std::size_t b = s[0];
  Tensor<T> x = nn::reshape(zl, {b, g, g, g, d});
  x = nn::permute(x, {0, 4, 1, 2, 3});
  x = conv_relu_bn(x, params, "decoder.stem.conv", "decoder.stem.bn", mode);

  const std::size_t hf = c.feature_resolution();
  std::size_t res = g;
  for (std::size_t j = 0; j < c.upsampling_blocks(); ++j) {
    x = nn::upsample_trilinear(x, 2);
    res *= 2;
    if (!c.vit_only) {
      Tensor<T> skip;
      if (res == hf) {
        skip = encoder.features;
      } else if (res < hf) {
        skip = nn::max_pool3d(encoder.features, hf / res);
      } else {
        const std::size_t level = log2_exact(c.input_resolution / res);
        skip = encoder.skips.at(level);
      }
      if (skip.dim(2) != res) {
        throw ShapeError("skip resolution " + std::to_string(skip.dim(2)) +
                         " does not match decoder resolution " + std::to_string(res));
      }
      x = nn::concat<T>({x, skip}, 1);
    }
    x = double_conv(x, params, "decoder." + std::to_string(j), mode);
  }
  return nn::conv3d(x, params.at("head.weight"), params.at("head.bias"), 1, 0);
}

template <class T>
Tensor<T> forward(const Tensor<T>& input, const std::vector<double>& months, TransVNetParams<T>& params,
                  Mode mode) {
  const EncoderOutput<T> enc = cnn_encode(input, params, mode);
  const Tensor<T> z0 = tokenize_and_embed(enc.features, months, params);
  const Tensor<T> zl = transformer_encode(z0, params);
  return decode(zl, enc, params, mode);
}

template <class T>
LossTerms<T> loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const std::size_t classes = logits.dim(1);
  for (const auto l : labels) {
    if (l >= classes) {
      throw DomainError("label " + std::to_string(l) + " is outside the " + std::to_string(classes) +
                        " logit classes");
    }
  }
  LossTerms<T> out;
  out.cross_entropy = nn::softmax_cross_entropy(logits, labels);
  out.soft_dice = nn::soft_dice(logits, labels);
  out.total = nn::add_scalar(nn::add(nn::scale(out.cross_entropy, T(0.5)), nn::scale(out.soft_dice, T(-0.5))),
                             T(0.5));
  return out;
}

VoxelGrid argmax_labels(const Tensor<float>& logits, std::size_t sample, Dims dims) {
  const Shape& s = logits.shape();
  const std::size_t vol = dims.count();
  if (s.size() < 2 || sample >= s[0] || nn::numel(s) / (s[0] * s[1]) != vol) {
    throw ShapeError("logits " + nn::to_string(s) + " do not match grid " + to_string(dims));
  }
  const std::size_t classes = s[1];
  const float* base = logits.values().data() + sample * classes * vol;
  std::vector<Label> labels(vol, 0);
  for (std::size_t i = 0; i < vol; ++i) {
    float best = base[i];
    for (std::size_t k = 1; k < classes; ++k) {
      const float v = base[k * vol + i];
      if (v > best) {
        best = v;
        labels[i] = static_cast<Label>(k);
      }
    }
  }
  return VoxelGrid(dims, std::move(labels), static_cast<int>(std::max<std::size_t>(classes, 2)));
}

VoxelGrid predict(const VoxelGrid& grid, double t, TransVNetParams<float>& params) {
  const nn::NoGradGuard no_grad;
  const Tensor<float> input = encode_input<float>({&grid}, params.config());
  const Tensor<float> logits = forward(input, {t}, params, Mode::Eval);
  return argmax_labels(logits, 0, grid.dims());
}

EvolutionSequence rollout(const VoxelGrid& grid, double t0, std::size_t steps, int horizon,
                          TransVNetParams<float>& params) {
  EvolutionSequence seq;
  seq.frames.push_back(grid);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * horizon;
    seq.frames.push_back(predict(seq.frames.back(), t, params));
  }
  return seq;
}

#define OSTEOVOX_INSTANTIATE(T)                                                                      \
  template class TransVNetParams<T>;                                                                 \
  template Tensor<T> encode_input<T>(const std::vector<const VoxelGrid*>&, const ModelConfig&);      \
  template EncoderOutput<T> cnn_encode<T>(const Tensor<T>&, TransVNetParams<T>&, Mode);              \
  template Tensor<T> tokenize_and_embed<T>(const Tensor<T>&, const std::vector<double>&,             \
                                           const TransVNetParams<T>&);                              \
  template Tensor<T> transformer_encode<T>(const Tensor<T>&, const TransVNetParams<T>&);             \
  template Tensor<T> decode<T>(const Tensor<T>&, const EncoderOutput<T>&, TransVNetParams<T>&, Mode); \
  template Tensor<T> forward<T>(const Tensor<T>&, const std::vector<double>&, TransVNetParams<T>&,   \
                                Mode);                                                               \
  template LossTerms<T> loss<T>(const Tensor<T>&, std::span<const std::uint8_t>);

OSTEOVOX_INSTANTIATE(float)
OSTEOVOX_INSTANTIATE(double)
#undef OSTEOVOX_INSTANTIATE

template TransVNetParams<double> convert<double, float>(const TransVNetParams<float>&);
template TransVNetParams<float> convert<float, double>(const TransVNetParams<double>&);
template TransVNetParams<float> convert<float, float>(const TransVNetParams<float>&);

}  // namespace osteovox::transvnet
