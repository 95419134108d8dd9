// SPDX-License-Identifier: Apache-2.0
#include "ttc/model.hpp"

#include <cmath>
#include <sstream>

#include "ttc/error.hpp"

namespace ttc {

std::string to_string(ParamGroup group) { return group == ParamGroup::inherited ? "inherited" : "new"; }

ParamGroup parse_param_group(const std::string& name) {
  if (name == "inherited") return ParamGroup::inherited;
  if (name == "new") return ParamGroup::added;
  throw ConfigError("unknown parameter group '" + name + "'");
}

// ---------------------------------------------------------------------------
// ParamSet

void ParamSet::add(std::string name, Tensor value, ParamGroup group) {
  if (!value.defined()) throw DimensionError("parameter '" + name + "' is undefined");
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, items_.size());
  items_.push_back({std::move(name), std::move(value), group});
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) > 0; }

const NamedTensor& ParamSet::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return items_[it->second];
}

const Tensor& ParamSet::at(const std::string& name) const { return entry(name).value; }

void ParamSet::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  auto& slot = items_[it->second].value;
  if (slot.shape() != value.shape()) {
    throw DimensionError("parameter '" + name + "' shape " + shape_string(slot.shape()) +
                         " cannot take " + shape_string(value.shape()));
  }
  slot = std::move(value);
}

std::size_t ParamSet::numel(std::optional<ParamGroup> group) const {
  std::size_t n = 0;
  for (const auto& t : items_) {
    if (!group || t.group == *group) n += t.value.numel();
  }
  return n;
}

// ---------------------------------------------------------------------------
// ArchSpec

namespace {

std::string key_norm_token(KeyNorm k) {
  switch (k) {
    case KeyNorm::none: return "no_in";
    case KeyNorm::instance: return "in";
    case KeyNorm::instance_no_mean: return "in_no_mean";
    case KeyNorm::instance_no_std: return "in_no_std";
    case KeyNorm::layernorm: return "ln";
    case KeyNorm::rmsnorm: return "rms";
  }
  return "?";
}

KeyNorm default_key_norm(MixerKind mixer) {
  return mixer == MixerKind::ttt ? KeyNorm::instance : KeyNorm::none;
}

}  // namespace

ArchSpec ArchSpec::parse(const std::string& label) {
  std::vector<std::string> parts;
  std::stringstream ss(label);
  for (std::string part; std::getline(ss, part, '+');) parts.push_back(part);
  if (parts.empty() || parts[0].empty()) throw ConfigError("empty architecture label");

  ArchSpec a;
  const std::string& base = parts[0];
  if (base == "softmax") {
    a.mixer = MixerKind::softmax;
  } else if (base == "linear") {
    a.mixer = MixerKind::linear;
  } else if (base == "linear_projqk" || base == "projqk") {
    a.mixer = MixerKind::linear_projqk;
  } else if (base == "ttt" || base == "ttt2") {
    a.mixer = MixerKind::ttt;
  } else if (base.rfind("ttt_", 0) == 0) {
    a.mixer = MixerKind::ttt;
    a.variant = parse_inner_variant(base.substr(4));
  } else {
    throw ConfigError("unknown architecture '" + base + "'");
  }
  a.key_norm = default_key_norm(a.mixer);

  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string& m = parts[i];
    if (m == "dwc" || m == "dwc_qk") {
      a.locality.mode = LocalityMode::dwc_qk;
    } else if (m == "cpe" || m == "cpe_x") {
      a.locality.mode = LocalityMode::cpe_x;
    } else if (m == "dwc_v") {
      a.locality.mode = LocalityMode::dwc_v;
    } else if (m.rfind("nat", 0) == 0 && m.size() > 3) {
      try {
        a.locality.blend_nat = std::stoul(m.substr(3));
      } catch (const std::exception&) {
        throw ConfigError("bad window in '" + m + "'");
      }
    } else if (m == "no_in") {
      a.key_norm = KeyNorm::none;
    } else if (m == "in") {
      a.key_norm = KeyNorm::instance;
    } else if (m == "in_no_mean") {
      a.key_norm = KeyNorm::instance_no_mean;
    } else if (m == "in_no_std") {
      a.key_norm = KeyNorm::instance_no_std;
    } else if (m == "ln") {
      a.key_norm = KeyNorm::layernorm;
    } else if (m == "rms") {
      a.key_norm = KeyNorm::rmsnorm;
    } else {
      throw ConfigError("unknown architecture modifier '" + m + "' in '" + label + "'");
    }
  }
  a.validate();
  return a;
}

std::string ArchSpec::label() const {
  std::string s;
  switch (mixer) {
    case MixerKind::softmax: s = "softmax"; break;
    case MixerKind::linear: s = "linear"; break;
    case MixerKind::linear_projqk: s = "linear_projqk"; break;
    case MixerKind::ttt: s = "ttt_" + to_string(variant); break;
  }
  switch (locality.mode) {
    case LocalityMode::none: break;
    case LocalityMode::cpe_x: s += "+cpe"; break;
    case LocalityMode::dwc_v: s += "+dwc_v"; break;
    case LocalityMode::dwc_qk: s += "+dwc"; break;
  }
  if (locality.blend_nat) s += "+nat" + std::to_string(*locality.blend_nat);
  if (key_norm != default_key_norm(mixer)) s += "+" + key_norm_token(key_norm);
  return s;
}

void ArchSpec::validate() const {
  locality.validate();
  if (locality.blend_nat && mixer != MixerKind::ttt) {
    throw ConfigError("neighborhood blending applies to TTT mixers only");
  }
}

// ---------------------------------------------------------------------------
// Configs

ModelConfig ModelConfig::deit_tiny() { return {}; }

ModelConfig ModelConfig::deit_small() {
  ModelConfig c;
  c.dim = 384;
  c.heads = 6;
  return c;
}

ModelConfig ModelConfig::named(const std::string& name) {
  if (name == "deit-t" || name == "deit_tiny" || name == "deit-tiny") return deit_tiny();
  if (name == "deit-s" || name == "deit_small" || name == "deit-small") return deit_small();
  throw ConfigError("unknown model config '" + name + "'");
}

void ModelConfig::validate() const {
  if (depth == 0 || dim == 0 || heads == 0 || patch == 0 || image_size == 0 || channels == 0 ||
      classes == 0 || mlp_ratio == 0) {
    throw ConfigError("model config fields must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("model dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (image_size % patch != 0) throw ConfigError("image size must be a multiple of the patch size");
}

// ---------------------------------------------------------------------------
// Blocks

std::vector<std::string> attention_block_names(bool bias) {
  std::vector<std::string> n = {"norm1.weight", "norm1.bias"};
  for (const char* p : {"q", "k", "v", "o"}) {
    n.push_back(std::string("attn.") + p + ".weight");
    if (bias) n.push_back(std::string("attn.") + p + ".bias");
  }
  for (const char* s : {"norm2.weight", "norm2.bias", "mlp.fc1.weight", "mlp.fc1.bias",
                        "mlp.fc2.weight", "mlp.fc2.bias"}) {
    n.emplace_back(s);
  }
  return n;
}

namespace {

Shape block_shape(const std::string& name, std::size_t dim, std::size_t hidden) {
  if (name.rfind("norm", 0) == 0) return {1, dim};
  if (name == "mlp.fc1.weight") return {dim, hidden};
  if (name == "mlp.fc1.bias") return {1, hidden};
  if (name == "mlp.fc2.weight") return {hidden, dim};
  if (name == "mlp.fc2.bias") return {1, dim};
  if (name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0) return {dim, dim};
  return {1, dim};
}

}  // namespace

AttentionBlockParams AttentionBlockParams::random(std::size_t dim, std::size_t heads,
                                                  std::size_t mlp_ratio, bool bias, Rng& rng,
                                                  double stddev, DType dtype) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("block dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  AttentionBlockParams b;
  b.dim = dim;
  b.heads = heads;
  const std::size_t hidden = dim * mlp_ratio;
  for (const auto& name : attention_block_names(bias)) {
    const Shape s = block_shape(name, dim, hidden);
    Tensor t;
    if (name == "norm1.weight" || name == "norm2.weight") {
      t = Tensor::full(s, 1.0);
    } else if (name.find(".bias") != std::string::npos) {
      t = Tensor::zeros(s);
    } else {
      t = Tensor::randn(s, rng, stddev);
    }
    b.params.add(name, t.to(dtype), ParamGroup::inherited);
  }
  return b;
}

void AttentionBlockParams::validate() const {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("block dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const bool bias = params.contains("attn.q.bias");
  if (!params.contains("mlp.fc1.weight")) throw DimensionError("block is missing mlp.fc1.weight");
  const std::size_t hidden = params.at("mlp.fc1.weight").cols();
  for (const auto& name : attention_block_names(bias)) {
    const Shape want = block_shape(name, dim, hidden);
    if (!params.contains(name)) throw DimensionError("block is missing '" + name + "'");
    if (params.at(name).shape() != want) {
      throw DimensionError("block tensor '" + name + "' has shape " +
                           shape_string(params.at(name).shape()) + ", expected " +
                           shape_string(want));
    }
  }
}

namespace {

std::string inner_name(std::size_t head, const std::string& w) {
  return "ttt.h" + std::to_string(head) + "." + w;
}

std::string proj_name(std::size_t head, char which) {
  return "proj.h" + std::to_string(head) + "." + which;
}

const char* locality_tensor(LocalityMode mode, int which) {
  switch (mode) {
    case LocalityMode::dwc_qk: return which == 0 ? "dwc.q" : "dwc.k";
    case LocalityMode::cpe_x: return which == 0 ? "cpe.x" : nullptr;
    case LocalityMode::dwc_v: return which == 0 ? "dwc.v" : nullptr;
    case LocalityMode::none: return nullptr;
  }
  return nullptr;
}

void add_new_tensors(ParamSet& out, const std::string& prefix, std::size_t dim, std::size_t heads,
                     const ArchSpec& arch, DType dtype, Rng& rng) {
  const std::size_t dh = dim / heads;
  if (arch.mixer == MixerKind::ttt) {
    for (std::size_t h = 0; h < heads; ++h) {
      const InnerModel m = InnerModel::random(arch.variant, dh, rng);
      const auto names = inner_weight_names(arch.variant);
      for (std::size_t i = 0; i < names.size(); ++i) {
        out.add(prefix + inner_name(h, names[i]), m.weights[i].to(dtype), ParamGroup::added);
      }
    }
  } else if (arch.mixer == MixerKind::linear_projqk) {
    for (std::size_t h = 0; h < heads; ++h) {
      out.add(prefix + proj_name(h, 'q'), Tensor::identity(dh).to(dtype), ParamGroup::added);
      out.add(prefix + proj_name(h, 'k'), Tensor::identity(dh).to(dtype), ParamGroup::added);
    }
  }
  const std::size_t k = arch.locality.kernel_size;
  for (int which = 0; which < 2; ++which) {
    if (const char* name = locality_tensor(arch.locality.mode, which)) {
      out.add(prefix + name, Tensor::zeros({k, k, dim}).to(dtype), ParamGroup::added);
    }
  }
}

}  // namespace

InnerModel TTTBlockParams::inner(std::size_t head) const {
  if (arch.mixer != MixerKind::ttt) throw ConfigError("block has no TTT inner model");
  std::vector<Tensor> w;
  for (const auto& n : inner_weight_names(arch.variant)) w.push_back(added.at(inner_name(head, n)));
  return InnerModel::from_weights(arch.variant, std::move(w));
}

std::optional<ProjQK> TTTBlockParams::proj(std::size_t head) const {
  if (arch.mixer != MixerKind::linear_projqk) return std::nullopt;
  return ProjQK{added.at(proj_name(head, 'q')), added.at(proj_name(head, 'k'))};
}

ParamSet TTTBlockParams::all() const {
  ParamSet s;
  for (const auto& t : inherited.params.items()) s.add(t.name, t.value, ParamGroup::inherited);
  for (const auto& t : added.items()) s.add(t.name, t.value, ParamGroup::added);
  return s;
}

std::map<std::string, ParamGroup> TTTBlockParams::param_groups() const {
  std::map<std::string, ParamGroup> g;
  for (const auto& t : all().items()) g.emplace(t.name, t.group);
  return g;
}

TTTBlockParams convert_block(const AttentionBlockParams& src, const ArchSpec& arch,
                             const TTTConfig& ttt, std::uint64_t seed) {
  src.validate();
  arch.validate();
  ttt.validate();
  TTTBlockParams out;
  out.inherited = src;
  out.arch = arch;
  out.ttt = ttt;
  Rng rng(seed);
  add_new_tensors(out.added, "", src.dim, src.heads, arch, src.params.at("attn.q.weight").dtype(), rng);
  return out;
}

namespace {

Tensor dense(const Tensor& x, const ParamSet& p, const std::string& name) {
  Tensor y = matmul(x, p.at(name + ".weight"));
  if (p.contains(name + ".bias")) y = add(y, broadcast_rows(p.at(name + ".bias"), x.rows()));
  return y;
}

Tensor layer_norm(const Tensor& x, const ParamSet& p, const std::string& name) {
  const Tensor n = token_norm(x, KeyNorm::layernorm, kNormEps);
  return add(mul(n, broadcast_rows(p.at(name + ".weight"), x.rows())),
             broadcast_rows(p.at(name + ".bias"), x.rows()));
}

Tensor mix_head(const ParamSet& p, const ArchSpec& arch, const TTTConfig& ttt, std::size_t head,
                const AttentionInputs& in) {
  switch (arch.mixer) {
    case MixerKind::softmax: return softmax_attention(in);
    case MixerKind::linear:
    case MixerKind::linear_projqk: {
      AttentionInputs normed = in;
      normed.k = normalize_keys(in.k, arch.key_norm);
      std::optional<ProjQK> proj;
      if (arch.mixer == MixerKind::linear_projqk) {
        proj = ProjQK{p.at(proj_name(head, 'q')), p.at(proj_name(head, 'k'))};
      }
      return linear_attention(normed, ActivationKind::elu_plus_one, proj);
    }
    case MixerKind::ttt: {
      std::vector<Tensor> w;
      for (const auto& n : inner_weight_names(arch.variant)) w.push_back(p.at(inner_name(head, n)));
      const InnerModel m{arch.variant, ActivationKind::silu, std::move(w)};
      AttentionInputs normed = in;
      normed.k = normalize_keys(in.k, arch.key_norm);
      const Tensor t = ttt_forward(m, normed, ttt);
      if (!arch.locality.blend_nat) return t;
      return scale(add(t, neighborhood_attention(in, *arch.locality.blend_nat)), 0.5);
    }
  }
  throw ConfigError("unsupported mixer");
}

}  // namespace

Tensor block_forward(const ParamSet& p, const ArchSpec& arch, const TTTConfig& ttt,
                     std::size_t heads, const Tensor& x_in, TokenGrid grid) {
  if (!x_in.defined() || x_in.rank() != 2) throw DimensionError("block_forward: tokens must be [N x D]");
  const std::size_t n = x_in.rows(), dim = x_in.cols();
  if (heads == 0 || dim % heads != 0) throw ConfigError("block_forward: dim not divisible by heads");
  if (grid.tokens() != n) throw DimensionError("block_forward: grid does not match token count");
  const std::size_t dh = dim / heads;

  Tensor x = x_in;
  if (arch.locality.mode == LocalityMode::cpe_x) x = residual_dwc(x, grid, p.at("cpe.x"));
  const Tensor h = layer_norm(x, p, "norm1");
  Tensor q = dense(h, p, "attn.q");
  Tensor k = dense(h, p, "attn.k");
  Tensor v = dense(h, p, "attn.v");
  if (arch.locality.mode == LocalityMode::dwc_qk) {
    q = residual_dwc(q, grid, p.at("dwc.q"));
    k = residual_dwc(k, grid, p.at("dwc.k"));
  } else if (arch.locality.mode == LocalityMode::dwc_v) {
    v = residual_dwc(v, grid, p.at("dwc.v"));
  }
  std::vector<Tensor> outs;
  for (std::size_t hd = 0; hd < heads; ++hd) {
    AttentionInputs in{slice_cols(q, hd * dh, dh), slice_cols(k, hd * dh, dh),
                       slice_cols(v, hd * dh, dh), grid};
    outs.push_back(mix_head(p, arch, ttt, hd, in));
  }
  const Tensor attn = dense(heads == 1 ? outs[0] : concat_cols(outs), p, "attn.o");
  const Tensor x1 = add(x, attn);
  const Tensor mlp =
      dense(activation(dense(layer_norm(x1, p, "norm2"), p, "mlp.fc1"), ActivationKind::gelu), p,
            "mlp.fc2");
  return add(x1, mlp);
}

// ---------------------------------------------------------------------------
// Models

Model Model::random_baseline(const ModelConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  Model m;
  m.config = config;
  m.arch = ArchSpec{};
  Rng rng(seed);
  const std::size_t d = config.dim;
  auto add = [&](const std::string& name, Tensor t) {
    m.params.add(name, t.to(dtype), ParamGroup::inherited);
  };
  add("patch_embed.weight",
      Tensor::randn({config.channels * config.patch * config.patch, d}, rng, 0.02));
  add("patch_embed.bias", Tensor::zeros({1, d}));
  add("pos_embed", Tensor::randn({config.tokens(), d}, rng, 0.02));
  for (std::size_t i = 0; i < config.depth; ++i) {
    const auto b = AttentionBlockParams::random(d, config.heads, config.mlp_ratio, config.qkv_bias,
                                                rng, 0.02, dtype);
    for (const auto& t : b.params.items()) m.params.add(block_prefix(i) + t.name, t.value, t.group);
  }
  add("norm.weight", Tensor::full({1, d}, 1.0));
  add("norm.bias", Tensor::zeros({1, d}));
  add("head.weight", Tensor::randn({d, config.classes}, rng, 0.02));
  add("head.bias", Tensor::zeros({1, config.classes}));
  return m;
}

AttentionBlockParams Model::block(std::size_t i) const {
  if (i >= config.depth) throw ConfigError("block index " + std::to_string(i) + " out of range");
  AttentionBlockParams b;
  b.dim = config.dim;
  b.heads = config.heads;
  const std::string prefix = block_prefix(i);
  for (const auto& name : attention_block_names(config.qkv_bias)) {
    b.params.add(name, params.at(prefix + name), ParamGroup::inherited);
  }
  b.validate();
  return b;
}

namespace {

std::optional<std::size_t> block_of(const std::string& name) {
  if (name.rfind("blocks.", 0) != 0) return std::nullopt;
  const auto dot = name.find('.', 7);
  if (dot == std::string::npos) return std::nullopt;
  return std::stoul(name.substr(7, dot - 7));
}

}  // namespace

Model convert_model(const Model& src, const ArchSpec& arch, const TTTConfig& ttt,
                    std::uint64_t seed) {
  src.config.validate();
  Model out;
  out.config = src.config;
  out.arch = arch;
  out.ttt = ttt;
  Rng master(seed);
  std::vector<TTTBlockParams> converted;
  for (std::size_t i = 0; i < src.config.depth; ++i) {
    converted.push_back(convert_block(src.block(i), arch, ttt, master.next()));
  }
  const auto& items = src.params.items();
  for (std::size_t idx = 0; idx < items.size(); ++idx) {
    const auto& t = items[idx];
    const auto blk = block_of(t.name);
    // Tensors new in a previous conversion are dropped; the new ones replace them.
    if (blk && t.group == ParamGroup::added) continue;
    out.params.add(t.name, t.value, ParamGroup::inherited);
    if (!blk) continue;
    bool last = true;
    for (std::size_t j = idx + 1; j < items.size(); ++j) {
      const auto next = block_of(items[j].name);
      if (next == blk && items[j].group == ParamGroup::inherited) {
        last = false;
        break;
      }
      if (next != blk) break;
    }
    if (last) {
      for (const auto& nt : converted[*blk].added.items()) {
        out.params.add(Model::block_prefix(*blk) + nt.name, nt.value, ParamGroup::added);
      }
    }
  }
  return out;
}

ParamBreakdown param_count(const Model& model) {
  ParamBreakdown b;
  b.blocks.resize(model.config.depth);
  for (const auto& t : model.params.items()) {
    const std::size_t n = t.value.numel();
    b.total += n;
    (t.group == ParamGroup::inherited ? b.inherited : b.added) += n;
    if (const auto blk = block_of(t.name); blk && *blk < b.blocks.size()) {
      (t.group == ParamGroup::inherited ? b.blocks[*blk].inherited : b.blocks[*blk].added) += n;
    }
  }
  return b;
}

std::size_t baseline_param_count(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.dim, hidden = d * c.mlp_ratio;
  const std::size_t patch = c.channels * c.patch * c.patch * d + d;
  const std::size_t pos = c.tokens() * d;
  const std::size_t attn = 4 * d * d + (c.qkv_bias ? 4 * d : 0);
  const std::size_t block = attn + 4 * d + d * hidden + hidden + hidden * d + d;
  const std::size_t head = 2 * d + d * c.classes + c.classes;
  return patch + pos + c.depth * block + head;
}

std::size_t added_param_count(const ModelConfig& c, const ArchSpec& arch) {
  c.validate();
  const std::size_t dh = c.head_dim();
  std::size_t per_block = 0;
  if (arch.mixer == MixerKind::ttt) per_block += c.heads * inner_param_count(arch.variant, dh, dh);
  if (arch.mixer == MixerKind::linear_projqk) per_block += c.heads * 2 * dh * dh;
  const std::size_t k2 = arch.locality.kernel_size * arch.locality.kernel_size;
  switch (arch.locality.mode) {
    case LocalityMode::dwc_qk: per_block += 2 * k2 * c.dim; break;
    case LocalityMode::cpe_x:
    case LocalityMode::dwc_v: per_block += k2 * c.dim; break;
    case LocalityMode::none: break;
  }
  return c.depth * per_block;
}

LrGroups lr_groups(const ParamSet& params, double base_lr, double multiplier) {
  if (!(multiplier > 0.0) || !std::isfinite(multiplier)) {
    throw ConfigError("lr multiplier must be positive");
  }
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("base lr must be non-negative");
  LrGroups g;
  g.inherited_lr = base_lr;
  g.added_lr = base_lr * multiplier;
  for (const auto& t : params.items()) {
    g.per_tensor.emplace_back(t.name, t.group == ParamGroup::inherited ? g.inherited_lr : g.added_lr);
  }
  return g;
}

}  // namespace ttc
