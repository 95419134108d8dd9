// SPDX-License-Identifier: Apache-2.0
//
// Plain ViT blocks (pre-norm, no class token, global average pooling) and
// their conversion into TTT blocks that keep every pretrained tensor.
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ttc/attention.hpp"
#include "ttc/locality.hpp"
#include "ttc/repr_align.hpp"
#include "ttc/tensor.hpp"
#include "ttc/ttt.hpp"

namespace ttc {

enum class ParamGroup { inherited, added };

std::string to_string(ParamGroup group);
ParamGroup parse_param_group(const std::string& name);

struct NamedTensor {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::inherited;
};

/// Ordered, name-addressable tensor collection.
class ParamSet {
 public:
  void add(std::string name, Tensor value, ParamGroup group);
  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  const NamedTensor& entry(const std::string& name) const;
  void set(const std::string& name, Tensor value);

  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t numel(std::optional<ParamGroup> group = std::nullopt) const;

 private:
  std::vector<NamedTensor> items_;
  std::map<std::string, std::size_t> index_;
};

enum class MixerKind { softmax, linear, linear_projqk, ttt };

/// Block architecture. Labels look like "softmax", "linear_projqk",
/// "ttt_swiglu+dwc+nat5" or "ttt_two_layer+no_in".
struct ArchSpec {
  MixerKind mixer = MixerKind::softmax;
  InnerVariant variant = InnerVariant::two_layer;
  LocalityConfig locality;
  KeyNorm key_norm = KeyNorm::none;

  static ArchSpec parse(const std::string& label);
  std::string label() const;
  void validate() const;
  bool operator==(const ArchSpec&) const = default;
};

struct ModelConfig {
  std::size_t depth = 12;
  std::size_t dim = 192;
  std::size_t heads = 3;
  std::size_t patch = 16;
  std::size_t image_size = 224;
  std::size_t channels = 3;
  std::size_t classes = 1000;
  std::size_t mlp_ratio = 4;
  bool qkv_bias = true;

  static ModelConfig deit_tiny();
  static ModelConfig deit_small();
  /// "deit-t" / "deit-s".
  static ModelConfig named(const std::string& name);

  std::size_t grid_side() const { return image_size / patch; }
  TokenGrid grid() const { return {grid_side(), grid_side()}; }
  std::size_t tokens() const { return grid_side() * grid_side(); }
  std::size_t head_dim() const { return dim / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Pretrained softmax block. Weights act on row vectors: y = x W + b.
struct AttentionBlockParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  ParamSet params;

  static AttentionBlockParams random(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                                     bool bias, Rng& rng, double stddev = 0.02,
                                     DType dtype = DType::f32);
  void validate() const;
};

/// Names of the inherited tensors of one block, in storage order.
std::vector<std::string> attention_block_names(bool bias);

struct TTTBlockParams {
  AttentionBlockParams inherited;
  ArchSpec arch;
  TTTConfig ttt;
  ParamSet added;

  InnerModel inner(std::size_t head) const;
  std::optional<ProjQK> proj(std::size_t head) const;
  /// Inherited then new, with group tags.
  ParamSet all() const;
  std::map<std::string, ParamGroup> param_groups() const;
};

TTTBlockParams convert_block(const AttentionBlockParams& src, const ArchSpec& arch,
                             const TTTConfig& ttt, std::uint64_t seed);

/// One pre-norm block over tokens x [N x D]. `params` holds the inherited and
/// new tensors under block-local names.
Tensor block_forward(const ParamSet& params, const ArchSpec& arch, const TTTConfig& ttt,
                     std::size_t heads, const Tensor& x, TokenGrid grid);

struct Model {
  ModelConfig config;
  ArchSpec arch;
  TTTConfig ttt;
  ParamSet params;

  static Model random_baseline(const ModelConfig& config, std::uint64_t seed,
                               DType dtype = DType::f32);
  static std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }
  AttentionBlockParams block(std::size_t i) const;
};

Model convert_model(const Model& src, const ArchSpec& arch, const TTTConfig& ttt,
                    std::uint64_t seed);

struct BlockBreakdown {
  std::size_t inherited = 0;
  std::size_t added = 0;
};

struct ParamBreakdown {
  std::size_t total = 0;
  std::size_t inherited = 0;
  std::size_t added = 0;
  std::vector<BlockBreakdown> blocks;
};

ParamBreakdown param_count(const Model& model);

/// Closed-form counts, matching param_count on a constructed model.
std::size_t baseline_param_count(const ModelConfig& config);
std::size_t added_param_count(const ModelConfig& config, const ArchSpec& arch);

struct LrGroups {
  double inherited_lr = 0.0;
  double added_lr = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;
};

LrGroups lr_groups(const ParamSet& params, double base_lr, double multiplier);

}  // namespace ttc
