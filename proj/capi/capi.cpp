// SPDX-License-Identifier: Apache-2.0
#include "ttc.h"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ttc/attention.hpp"
#include "ttc/bench.hpp"
#include "ttc/checkpoint.hpp"
#include "ttc/cost.hpp"
#include "ttc/error.hpp"
#include "ttc/fit.hpp"
#include "ttc/locality.hpp"
#include "ttc/model.hpp"
#include "ttc/repr_align.hpp"
#include "ttc/ttt.hpp"
#include "ttc/verify.hpp"

struct ttc_tensor {
  ttc::Tensor value;
};

struct ttc_inner_model {
  ttc::InnerModel value;
};

struct ttc_model {
  ttc::Model value;
  std::string arch;
};

struct ttc_report {
  std::string text;
  std::string json;
  std::string csv;
  std::string csv2;
  bool passed = true;
};

namespace {

thread_local std::string g_last_error;

ttc_status fail(ttc_status s, const std::string& what) {
  g_last_error = what;
  return s;
}

ttc_status from_code(ttc::ErrorCode code) {
  return static_cast<ttc_status>(static_cast<int>(code));
}

template <typename F>
ttc_status guard(F&& f) {
  try {
    f();
    return TTC_OK;
  } catch (const ttc::Error& e) {
    return fail(from_code(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(TTC_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(TTC_E_INTERNAL, e.what());
  }
}

#define TTC_REQUIRE(cond, msg) \
  do {                         \
    if (!(cond)) return fail(TTC_E_INVALID_ARGUMENT, msg); \
  } while (0)

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ttc::TTTConfig to_cfg(const ttc_ttt_config* c) {
  ttc::TTTConfig cfg;
  if (!c) return cfg;
  cfg.loss = c->loss == TTC_LOSS_L2 ? ttc::InnerLoss::l2 : ttc::InnerLoss::inner_product;
  cfg.inner_lr = c->inner_lr;
  cfg.inner_steps = c->inner_steps;
  cfg.key_scale = c->scale_keys ? ttc::KeyScale::inv_sqrt_d : ttc::KeyScale::none;
  cfg.validate();
  return cfg;
}

ttc::AttentionInputs inputs(const ttc_tensor* q, const ttc_tensor* k, const ttc_tensor* v,
                            std::optional<ttc::TokenGrid> grid = std::nullopt) {
  return ttc::AttentionInputs::make(q->value, k->value, v->value, grid);
}

ttc_tensor* wrap(ttc::Tensor t) { return new ttc_tensor{std::move(t)}; }

}  // namespace

extern "C" {

const char* ttc_version(void) { return "1.0.0"; }

const char* ttc_last_error(void) { return g_last_error.c_str(); }

const char* ttc_status_name(ttc_status s) {
  switch (s) {
    case TTC_OK: return "ok";
    case TTC_E_DIMENSION: return "dimension";
    case TTC_E_CONFIG: return "configuration";
    case TTC_E_DIVERGENCE: return "divergence";
    case TTC_E_DEGENERATE_NORMALIZER: return "degenerate_normalizer";
    case TTC_E_FORMAT_MAGIC: return "format_magic";
    case TTC_E_FORMAT_TRUNCATED: return "format_truncated";
    case TTC_E_FORMAT_INDEX: return "format_index";
    case TTC_E_FORMAT_HEADER: return "format_header";
    case TTC_E_IO: return "io";
    case TTC_E_INVALID_ARGUMENT: return "invalid_argument";
    case TTC_E_INTERNAL: return "internal";
  }
  return "unknown";
}

ttc_status ttc_tensor_create(const size_t* shape, size_t rank, const double* data, ttc_tensor** out) {
  TTC_REQUIRE(shape && out && rank > 0, "tensor_create: null shape/out or zero rank");
  return guard([&] {
    ttc::Shape s(shape, shape + rank);
    const std::size_t n = ttc::shape_numel(s);
    std::vector<double> d = data ? std::vector<double>(data, data + n) : std::vector<double>(n, 0.0);
    *out = wrap(ttc::Tensor::from(std::move(s), std::move(d)));
  });
}

ttc_status ttc_tensor_randn(const size_t* shape, size_t rank, uint64_t seed, double stddev, ttc_tensor** out) {
  TTC_REQUIRE(shape && out && rank > 0, "tensor_randn: null shape/out or zero rank");
  return guard([&] {
    ttc::Rng rng(seed);
    *out = wrap(ttc::Tensor::randn(ttc::Shape(shape, shape + rank), rng, stddev));
  });
}

void ttc_tensor_free(ttc_tensor* t) { delete t; }

size_t ttc_tensor_rank(const ttc_tensor* t) { return t ? t->value.rank() : 0; }

size_t ttc_tensor_shape(const ttc_tensor* t, size_t* shape, size_t cap) {
  if (!t) return 0;
  const auto& s = t->value.shape();
  for (size_t i = 0; i < s.size() && i < cap; ++i) shape[i] = s[i];
  return s.size();
}

size_t ttc_tensor_numel(const ttc_tensor* t) { return t ? t->value.numel() : 0; }

ttc_status ttc_tensor_copy_data(const ttc_tensor* t, double* out, size_t n) {
  TTC_REQUIRE(t && out, "tensor_copy_data: null argument");
  if (n != t->value.numel()) return fail(TTC_E_DIMENSION, "tensor_copy_data: buffer size != numel");
  const auto d = t->value.data();
  std::copy(d.begin(), d.end(), out);
  return TTC_OK;
}

ttc_status ttc_matmul(const ttc_tensor* a, const ttc_tensor* b, ttc_tensor** out) {
  TTC_REQUIRE(a && b && out, "matmul: null argument");
  return guard([&] { *out = wrap(ttc::matmul(a->value, b->value)); });
}

ttc_status ttc_softmax_attention(const ttc_tensor* q, const ttc_tensor* k, const ttc_tensor* v, ttc_tensor** out) {
  TTC_REQUIRE(q && k && v && out, "softmax_attention: null argument");
  return guard([&] { *out = wrap(ttc::softmax_attention(inputs(q, k, v))); });
}

ttc_status ttc_linear_attention(const ttc_tensor* q, const ttc_tensor* k, const ttc_tensor* v, ttc_tensor** out) {
  TTC_REQUIRE(q && k && v && out, "linear_attention: null argument");
  return guard([&] { *out = wrap(ttc::linear_attention(inputs(q, k, v))); });
}

ttc_status ttc_neighborhood_attention(const ttc_tensor* q, const ttc_tensor* k, const ttc_tensor* v,
                                      size_t grid_height, size_t grid_width, size_t window, ttc_tensor** out) {
  TTC_REQUIRE(q && k && v && out, "neighborhood_attention: null argument");
  return guard([&] {
    *out = wrap(ttc::neighborhood_attention(inputs(q, k, v, ttc::TokenGrid{grid_height, grid_width}), window));
  });
}

ttc_ttt_config ttc_ttt_config_default(void) {
  const ttc::TTTConfig d;
  return {d.loss == ttc::InnerLoss::l2 ? TTC_LOSS_L2 : TTC_LOSS_INNER_PRODUCT, d.inner_lr, d.inner_steps,
          d.key_scale == ttc::KeyScale::inv_sqrt_d};
}

ttc_status ttc_inner_model_random(const char* variant, size_t dim, uint64_t seed, double stddev,
                                  ttc_inner_model** out) {
  TTC_REQUIRE(variant && out, "inner_model_random: null argument");
  return guard([&] {
    ttc::Rng rng(seed);
    *out = new ttc_inner_model{ttc::InnerModel::random(ttc::parse_inner_variant(variant), dim, rng, stddev)};
  });
}

void ttc_inner_model_free(ttc_inner_model* m) { delete m; }

ttc_status ttc_ttt_forward(const ttc_inner_model* m, const ttc_tensor* q, const ttc_tensor* k,
                           const ttc_tensor* v, const ttc_ttt_config* cfg, ttc_tensor** out) {
  TTC_REQUIRE(m && q && k && v && out, "ttt_forward: null argument");
  return guard([&] { *out = wrap(ttc::ttt_forward(m->value, inputs(q, k, v), to_cfg(cfg))); });
}

ttc_status ttc_instance_norm_keys(const ttc_tensor* k, ttc_tensor** out) {
  TTC_REQUIRE(k && out, "instance_norm_keys: null argument");
  return guard([&] { *out = wrap(ttc::instance_norm_keys(k->value)); });
}

ttc_status ttc_key_shift_ratio(const ttc_tensor* k, double* ratio) {
  TTC_REQUIRE(k && ratio, "key_shift_ratio: null argument");
  return guard([&] { *ratio = ttc::key_shift_ratio(k->value).shift_ratio; });
}

const char* ttc_report_text(const ttc_report* r) { return r ? r->text.c_str() : ""; }
const char* ttc_report_json(const ttc_report* r) { return r ? r->json.c_str() : ""; }
const char* ttc_report_csv(const ttc_report* r) { return r ? r->csv.c_str() : ""; }
const char* ttc_report_csv2(const ttc_report* r) { return r ? r->csv2.c_str() : ""; }
int ttc_report_passed(const ttc_report* r) { return r && r->passed ? 1 : 0; }
void ttc_report_free(ttc_report* r) { delete r; }

ttc_status ttc_verify(const char* suite, uint64_t seed, ttc_report** out) {
  TTC_REQUIRE(suite && out, "verify: null argument");
  return guard([&] {
    const ttc::VerifyReport v = ttc::run_verify(suite, seed);
    auto* r = new ttc_report;
    r->text = v.to_text();
    r->json = v.to_json();
    r->passed = v.passed();
    *out = r;
  });
}

ttc_status ttc_bench_flops(const char* model, const char* archs, const size_t* resolutions, size_t count,
                           ttc_report** out) {
  TTC_REQUIRE(model && archs && out && (resolutions || count == 0), "bench_flops: null argument");
  return guard([&] {
    const ttc::ModelConfig cfg = ttc::ModelConfig::named(model);
    std::vector<size_t> res(resolutions, resolutions + count);
    if (res.empty()) res.push_back(cfg.image_size);
    const auto names = split(archs);
    if (names.empty()) throw ttc::ConfigError("bench: no architectures given");
    auto r = std::make_unique<ttc_report>();
    std::ostringstream csv, text;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    csv << "arch,resolution,N,flops,params\n";
    for (const auto& name : names) {
      const ttc::ArchSpec arch = ttc::ArchSpec::parse(name);
      for (size_t resolution : res) {
        const ttc::CostReport c = ttc::flops_model(cfg, arch, resolution);
        char line[160];
        std::snprintf(line, sizeof line, "%s,%zu,%zu,%.0f,%zu\n", c.arch.c_str(), c.resolution, c.tokens,
                      c.flops, c.params);
        csv << line;
        std::snprintf(line, sizeof line, "%-28s %5zu %6zu %9.4fG %9.4fM\n", c.arch.c_str(), c.resolution,
                      c.tokens, c.flops / 1e9, static_cast<double>(c.params) / 1e6);
        text << line;
        rows.push_back({{"arch", c.arch}, {"resolution", c.resolution}, {"N", c.tokens},
                        {"flops", c.flops}, {"params", c.params}});
      }
    }
    r->csv = csv.str();
    r->text = text.str();
    r->json = rows.dump(2) + "\n";
    *out = r.release();
  });
}

ttc_scaling_options ttc_scaling_options_default(void) {
  const ttc::ScalingOptions d;
  return {nullptr, 0, d.head_dim, d.repeats, d.warmup, d.precision == ttc::DType::f64, d.fit_min_tokens, d.seed};
}

ttc_status ttc_bench_scaling(const char* archs, const ttc_scaling_options* opts, ttc_report** out) {
  TTC_REQUIRE(archs && opts && out, "bench_scaling: null argument");
  return guard([&] {
    ttc::ScalingOptions o;
    if (opts->count) o.tokens.assign(opts->tokens, opts->tokens + opts->count);
    o.head_dim = opts->head_dim;
    o.repeats = opts->repeats;
    o.warmup = opts->warmup;
    o.precision = opts->use_f64 ? ttc::DType::f64 : ttc::DType::f32;
    o.fit_min_tokens = opts->fit_min_tokens;
    o.seed = opts->seed;
    const ttc::ScalingResult s = ttc::scaling_bench(split(archs), o);
    auto r = std::make_unique<ttc_report>();
    std::ostringstream csv, csv2, text;
    nlohmann::ordered_json j;
    csv << "arch,N,seconds_median\n";
    csv2 << "arch,exponent\n";
    for (const auto& series : s.series) {
      for (const auto& [n, t] : series.samples) csv << series.arch << ',' << n << ',' << num(t) << '\n';
      csv2 << series.arch << ',' << num(series.exponent) << '\n';
      char line[120];
      std::snprintf(line, sizeof line, "%-8s exponent %.3f (fit on N >= %zu)\n", series.arch.c_str(),
                    series.exponent, o.fit_min_tokens);
      text << line;
      j["exponents"][series.arch] = series.exponent;
    }
    if (s.crossover) {
      text << "crossover: ttt faster than softmax from N = " << *s.crossover << '\n';
      j["crossover"] = *s.crossover;
    } else {
      text << "crossover: none observed\n";
      j["crossover"] = nullptr;
    }
    for (const auto& w : s.warnings) text << "warning: " << w << '\n';
    j["warnings"] = s.warnings;
    r->csv = csv.str();
    r->csv2 = csv2.str();
    r->text = text.str();
    r->json = j.dump(2) + "\n";
    *out = r.release();
  });
}

ttc_attn_map_options ttc_attn_map_options_default(void) { return {8, 8, 16, 3, 0}; }

ttc_status ttc_attn_map(const char* layers, const ttc_attn_map_options* opts, ttc_report** out) {
  TTC_REQUIRE(layers && opts && out, "attn_map: null argument");
  return guard([&] {
    const ttc::TokenGrid grid{opts->grid_height, opts->grid_width};
    const std::size_t n = grid.tokens(), d = opts->head_dim;
    if (n == 0 || d == 0) throw ttc::ConfigError("attn-map: grid and head dim must be positive");
    ttc::Rng rng(opts->seed);
    const auto in = ttc::AttentionInputs::make(ttc::Tensor::randn({n, d}, rng), ttc::Tensor::randn({n, d}, rng),
                                               ttc::Tensor::randn({n, d}, rng), grid);
    const ttc::InnerModel m = ttc::InnerModel::random(ttc::InnerVariant::two_layer, d, rng);
    ttc::TTTConfig cfg;
    cfg.inner_lr = 1.0 / static_cast<double>(n);
    const std::size_t window = opts->window;

    auto r = std::make_unique<ttc_report>();
    std::ostringstream csv, csv2, text;
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    csv << "layer,query,key,score\n";
    csv2 << "layer,locality_index\n";
    const auto names = split(layers);
    if (names.empty()) throw ttc::ConfigError("attn-map: no layers given");
    for (const auto& name : names) {
      ttc::AttentionLayer layer;
      if (name == "softmax") {
        layer = [](const ttc::AttentionInputs& x) { return ttc::softmax_attention(x); };
      } else if (name == "linear") {
        layer = [](const ttc::AttentionInputs& x) { return ttc::linear_attention(x); };
      } else if (name == "ttt") {
        layer = [&](const ttc::AttentionInputs& x) { return ttc::ttt_forward(m, x, cfg); };
      } else if (name == "nat") {
        layer = [&](const ttc::AttentionInputs& x) { return ttc::neighborhood_attention(x, window); };
      } else if (name == "blend") {
        layer = [&](const ttc::AttentionInputs& x) { return ttc::blend_ttt_nat(x, m, cfg, window); };
      } else {
        throw ttc::ConfigError("attn-map: unknown layer '" + name + "' (softmax, linear, ttt, nat, blend)");
      }
      const ttc::ImplicitAttentionMap map = ttc::implicit_attention(layer, in);
      const double idx = ttc::locality_index(map.scores, grid, window);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) csv << name << ',' << i << ',' << k << ',' << num(map.scores(i, k)) << '\n';
      }
      csv2 << name << ',' << num(idx) << '\n';
      char line[120];
      std::snprintf(line, sizeof line, "%-8s locality index %.4f (window %zu)\n", name.c_str(), idx, window);
      text << line;
      j[name] = {{"locality_index", idx}, {"reduction", map.reduction}};
      if (name == "softmax") {
        const double err = ttc::max_abs_diff(map.scores, ttc::softmax_weights(in));
        std::snprintf(line, sizeof line, "softmax  max |implicit - explicit| = %.3e\n", err);
        text << line;
        j[name]["max_abs_diff_explicit"] = err;
      }
    }
    r->csv = csv.str();
    r->csv2 = csv2.str();
    r->text = text.str();
    r->json = j.dump(2) + "\n";
    *out = r.release();
  });
}

ttc_fit_options ttc_fit_options_default(void) {
  static const std::string student = ttc::FitOptions{}.student;
  const ttc::FitOptions d;
  return {student.c_str(), "freeze", d.steps, d.lr, d.lr_multiplier, d.teacher_seed, d.data_seed, d.key_shift,
          d.dim, d.heads, d.grid_side, d.batch, d.eval_sequences};
}

ttc_status ttc_fit_teacher(const ttc_fit_options* opts, ttc_fit_result* out) {
  TTC_REQUIRE(opts && out && opts->student && opts->protocol, "fit_teacher: null argument");
  return guard([&] {
    ttc::FitOptions o;
    o.student = opts->student;
    o.protocol = ttc::parse_protocol(opts->protocol);
    o.steps = opts->steps;
    o.lr = opts->lr;
    o.lr_multiplier = opts->lr_multiplier;
    o.teacher_seed = opts->teacher_seed;
    o.data_seed = opts->data_seed;
    o.key_shift = opts->key_shift;
    o.dim = opts->dim;
    o.heads = opts->heads;
    o.grid_side = opts->grid_side;
    o.batch = opts->batch;
    o.eval_sequences = opts->eval_sequences;
    const ttc::FitResult f = ttc::teacher_fit(o);
    out->initial_mse = f.initial_mse;
    out->mse = f.mse;
    out->diverged = f.diverged ? 1 : 0;
  });
}

ttc_status ttc_model_random(const char* config, uint64_t seed, int use_f64, ttc_model** out) {
  TTC_REQUIRE(config && out, "model_random: null argument");
  return guard([&] {
    ttc::Model m = ttc::Model::random_baseline(ttc::ModelConfig::named(config), seed,
                                               use_f64 ? ttc::DType::f64 : ttc::DType::f32);
    std::string label = m.arch.label();
    *out = new ttc_model{std::move(m), std::move(label)};
  });
}

ttc_status ttc_model_read(const char* path, ttc_model** out) {
  TTC_REQUIRE(path && out, "model_read: null argument");
  return guard([&] {
    ttc::Model m = ttc::read_checkpoint(path);
    std::string label = m.arch.label();
    *out = new ttc_model{std::move(m), std::move(label)};
  });
}

ttc_status ttc_model_write(const ttc_model* m, const char* path, int precision) {
  TTC_REQUIRE(m && path, "model_write: null argument");
  TTC_REQUIRE(precision == 0 || precision == 32 || precision == 64, "model_write: precision must be 0, 32 or 64");
  return guard([&] {
    std::optional<ttc::DType> force;
    if (precision == 32) force = ttc::DType::f32;
    if (precision == 64) force = ttc::DType::f64;
    ttc::write_checkpoint(path, m->value, force);
  });
}

ttc_status ttc_model_convert(const ttc_model* src, const char* arch, const ttc_ttt_config* cfg, uint64_t seed,
                             ttc_model** out) {
  TTC_REQUIRE(src && arch && out, "model_convert: null argument");
  return guard([&] {
    ttc::Model m = ttc::convert_model(src->value, ttc::ArchSpec::parse(arch), to_cfg(cfg), seed);
    std::string label = m.arch.label();
    *out = new ttc_model{std::move(m), std::move(label)};
  });
}

void ttc_model_free(ttc_model* m) { delete m; }

const char* ttc_model_arch(const ttc_model* m) { return m ? m->arch.c_str() : ""; }

size_t ttc_model_depth(const ttc_model* m) { return m ? m->value.config.depth : 0; }

ttc_status ttc_model_param_counts(const ttc_model* m, size_t* total, size_t* inherited, size_t* added) {
  TTC_REQUIRE(m, "model_param_counts: null model");
  return guard([&] {
    const ttc::ParamBreakdown b = ttc::param_count(m->value);
    if (total) *total = b.total;
    if (inherited) *inherited = b.inherited;
    if (added) *added = b.added;
  });
}

ttc_status ttc_model_block_params(const ttc_model* m, size_t block, size_t* inherited, size_t* added) {
  TTC_REQUIRE(m, "model_block_params: null model");
  return guard([&] {
    const ttc::ParamBreakdown b = ttc::param_count(m->value);
    if (block >= b.blocks.size()) throw ttc::DimensionError("block index out of range");
    if (inherited) *inherited = b.blocks[block].inherited;
    if (added) *added = b.blocks[block].added;
  });
}

size_t ttc_model_tensor_count(const ttc_model* m) { return m ? m->value.params.size() : 0; }

const char* ttc_model_tensor_name(const ttc_model* m, size_t i) {
  if (!m || i >= m->value.params.size()) return nullptr;
  return m->value.params.items()[i].name.c_str();
}

int ttc_model_tensor_is_new(const ttc_model* m, size_t i) {
  if (!m || i >= m->value.params.size()) return 0;
  return m->value.params.items()[i].group == ttc::ParamGroup::added ? 1 : 0;
}

ttc_status ttc_model_tensor(const ttc_model* m, const char* name, ttc_tensor** out) {
  TTC_REQUIRE(m && name && out, "model_tensor: null argument");
  return guard([&] {
    if (!m->value.params.contains(name)) throw ttc::ConfigError(std::string("no tensor named '") + name + "'");
    *out = wrap(m->value.params.at(name));
  });
}

ttc_status ttc_param_counts_for(const char* config, const char* arch, size_t* baseline, size_t* added) {
  TTC_REQUIRE(config && arch, "param_counts_for: null argument");
  return guard([&] {
    const ttc::ModelConfig cfg = ttc::ModelConfig::named(config);
    const ttc::ArchSpec a = ttc::ArchSpec::parse(arch);
    if (baseline) *baseline = ttc::baseline_param_count(cfg);
    if (added) *added = ttc::added_param_count(cfg, a);
  });
}

}  // extern "C"
