// SPDX-License-Identifier: Apache-2.0
//
// ttc: command-line front end. Talks to the library only through ttc.h.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ttc.h"

namespace {

enum Exit { kOk = 0, kPropertyFailure = 1, kUsage = 2, kIo = 3 };

struct CliError {
  int code;
  std::string message;
};

int exit_for(ttc_status s) {
  switch (s) {
    case TTC_OK: return kOk;
    case TTC_E_DIMENSION:
    case TTC_E_CONFIG:
    case TTC_E_INVALID_ARGUMENT: return kUsage;
    case TTC_E_FORMAT_MAGIC:
    case TTC_E_FORMAT_TRUNCATED:
    case TTC_E_FORMAT_INDEX:
    case TTC_E_FORMAT_HEADER:
    case TTC_E_IO: return kIo;
    default: return kPropertyFailure;
  }
}

void check(ttc_status s) {
  if (s != TTC_OK) throw CliError{exit_for(s), std::string(ttc_status_name(s)) + ": " + ttc_last_error()};
}

struct Report {
  ttc_report* r = nullptr;
  ~Report() { ttc_report_free(r); }
};

struct ModelHandle {
  ttc_model* m = nullptr;
  ~ModelHandle() { ttc_model_free(m); }
};

struct Globals {
  std::uint64_t seed = 0;
  std::string precision;  // empty: each subcommand picks its default
  std::string output_dir;
};

std::filesystem::path output_dir(const Globals& g) {
  std::string dir = g.output_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("TTC_OUTPUT_DIR")) dir = env;
  }
  if (dir.empty()) dir = ".";
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CliError{kIo, "cannot create output directory '" + dir + "': " + ec.message()};
  return dir;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  f << content;
  if (!f) throw CliError{kIo, "cannot write '" + p.string() + "'"};
  std::cout << "wrote " << p.string() << '\n';
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

// "224,448" or "224..1792" (doubling).
std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s)) {
    const auto dots = part.find("..");
    try {
      if (dots == std::string::npos) {
        out.push_back(std::stoull(part));
        continue;
      }
      const std::size_t lo = std::stoull(part.substr(0, dots));
      const std::size_t hi = std::stoull(part.substr(dots + 2));
      if (lo == 0 || hi < lo) throw CliError{kUsage, "bad range '" + part + "'"};
      for (std::size_t v = lo; v <= hi; v *= 2) out.push_back(v);
    } catch (const std::logic_error&) {
      throw CliError{kUsage, "bad size list '" + s + "'"};
    }
  }
  if (out.empty()) throw CliError{kUsage, "empty size list"};
  return out;
}

bool use_f64(const Globals& g, bool fallback) {
  if (g.precision.empty()) return fallback;
  if (g.precision != "f32" && g.precision != "f64") throw CliError{kUsage, "precision must be f32 or f64"};
  return g.precision == "f64";
}

// ---- verify ----

struct VerifyArgs {
  std::string suite = "all";
};

int run_verify(const Globals& g, const VerifyArgs& a) {
  Report rep;
  check(ttc_verify(a.suite.c_str(), g.seed, &rep.r));
  std::cout << ttc_report_text(rep.r);
  write_file(output_dir(g) / ("verify_" + a.suite + ".json"), ttc_report_json(rep.r));
  const bool ok = ttc_report_passed(rep.r);
  std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? kOk : kPropertyFailure;
}

// ---- convert ----

struct ConvertArgs {
  std::string in;
  std::string random_init;
  std::string arch;
  std::string variant = "two_layer";
  std::string locality = "none";
  std::size_t nat = 0;
  std::string key_norm;
  std::string out;
  std::string loss = "inner_product";
  double inner_lr = 1.0;
  std::size_t inner_steps = 1;
};

std::string arch_label(const ConvertArgs& a) {
  if (!a.arch.empty()) return a.arch;
  static const std::vector<std::string> plain = {"softmax", "linear", "linear_projqk", "projqk"};
  std::string label = a.variant;
  if (std::find(plain.begin(), plain.end(), a.variant) == plain.end() && a.variant.rfind("ttt", 0) != 0) {
    label = "ttt_" + a.variant;
  }
  if (a.locality != "none") label += "+" + a.locality;
  if (a.nat) label += "+nat" + std::to_string(a.nat);
  if (!a.key_norm.empty()) label += "+" + a.key_norm;
  return label;
}

int run_convert(const Globals& g, const ConvertArgs& a) {
  if (a.in.empty() == a.random_init.empty()) throw CliError{kUsage, "give exactly one of --in or --random-init"};
  ModelHandle src, dst;
  if (!a.in.empty()) {
    check(ttc_model_read(a.in.c_str(), &src.m));
  } else {
    check(ttc_model_random(a.random_init.c_str(), g.seed, use_f64(g, false), &src.m));
  }
  ttc_ttt_config cfg = ttc_ttt_config_default();
  if (a.loss == "l2") {
    cfg.loss = TTC_LOSS_L2;
  } else if (a.loss != "inner_product") {
    throw CliError{kUsage, "inner loss must be l2 or inner_product"};
  }
  cfg.inner_lr = a.inner_lr;
  cfg.inner_steps = a.inner_steps;
  const std::string label = arch_label(a);
  check(ttc_model_convert(src.m, label.c_str(), &cfg, g.seed, &dst.m));

  std::size_t total = 0, inherited = 0, added = 0;
  check(ttc_model_param_counts(dst.m, &total, &inherited, &added));
  std::printf("arch %s\n%-8s %12s %12s\n", ttc_model_arch(dst.m), "block", "inherited", "new");
  for (std::size_t b = 0; b < ttc_model_depth(dst.m); ++b) {
    std::size_t bi = 0, ba = 0;
    check(ttc_model_block_params(dst.m, b, &bi, &ba));
    std::printf("%-8zu %12zu %12zu\n", b, bi, ba);
  }
  std::printf("%-8s %12zu %12zu\n", "total", inherited, added);
  std::printf("params %zu (%.1fM), new %zu (%.2fM)\n", total, total / 1e6, added, added / 1e6);
  // Tables quote new parameters as the difference of totals rounded to 0.1M.
  const auto round_m = [](std::size_t n) { return std::round(static_cast<double>(n) / 1e5) / 10.0; };
  std::printf("new params, 0.1M-rounded totals: %.1fM\n", round_m(total) - round_m(inherited));

  const std::filesystem::path out = a.out.empty() ? output_dir(g) / "converted.ckpt" : std::filesystem::path(a.out);
  check(ttc_model_write(dst.m, out.string().c_str(), 0));
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

// ---- bench ----

struct BenchArgs {
  std::string archs = "softmax,linear,ttt_two_layer";
  std::string model = "deit-t";
  std::string resolutions = "224";
  bool scaling = false;
  std::string scaling_archs = "softmax,linear,ttt";
  std::string tokens = "64..16384";
  std::size_t repeats = 5;
  std::size_t head_dim = 64;
};

int run_bench(const Globals& g, const BenchArgs& a) {
  const auto dir = output_dir(g);
  if (!a.scaling) {
    const auto res = parse_sizes(a.resolutions);
    Report rep;
    check(ttc_bench_flops(a.model.c_str(), a.archs.c_str(), res.data(), res.size(), &rep.r));
    std::cout << ttc_report_text(rep.r);
    write_file(dir / "cost.csv", ttc_report_csv(rep.r));
    return kOk;
  }
  const auto tokens = parse_sizes(a.tokens);
  ttc_scaling_options o = ttc_scaling_options_default();
  o.tokens = tokens.data();
  o.count = tokens.size();
  o.repeats = a.repeats;
  o.head_dim = a.head_dim;
  o.use_f64 = use_f64(g, false);
  o.seed = g.seed;
  Report rep;
  check(ttc_bench_scaling(a.scaling_archs.c_str(), &o, &rep.r));
  std::cout << ttc_report_text(rep.r);
  write_file(dir / "scaling.csv", ttc_report_csv(rep.r));
  write_file(dir / "scaling_exponents.csv", ttc_report_csv2(rep.r));
  return kOk;
}

// ---- attn-map ----

struct AttnMapArgs {
  std::string layers = "softmax,linear,ttt,nat,blend";
  std::size_t grid = 8;
  std::size_t head_dim = 16;
  std::size_t window = 3;
};

int run_attn_map(const Globals& g, const AttnMapArgs& a) {
  ttc_attn_map_options o = ttc_attn_map_options_default();
  o.grid_height = o.grid_width = a.grid;
  o.head_dim = a.head_dim;
  o.window = a.window;
  o.seed = g.seed;
  Report rep;
  check(ttc_attn_map(a.layers.c_str(), &o, &rep.r));
  std::cout << ttc_report_text(rep.r);
  const auto dir = output_dir(g);
  write_file(dir / "attn_map.csv", ttc_report_csv(rep.r));
  write_file(dir / "attn_map_locality.csv", ttc_report_csv2(rep.r));
  return kOk;
}

// ---- fit-teacher ----

struct FitArgs {
  std::string archs = "linear,ttt2";
  std::string protocols = "freeze";
  std::size_t seeds = 1;
  std::size_t steps = 2000;
  double lr = 0.01;
  double lr_multiplier = 20.0;
  double key_shift = 0.0;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

int run_fit(const Globals& g, const FitArgs& a) {
  const auto archs = split(a.archs);
  const auto protocols = split(a.protocols);
  if (archs.empty() || protocols.empty() || a.seeds == 0) throw CliError{kUsage, "need archs, protocols and seeds"};
  std::ostringstream csv;
  csv << "arch,protocol,seed,steps,mse,diverged\n";
  // mse[protocol][arch][seed index]
  std::map<std::string, std::map<std::string, std::vector<double>>> mse;
  for (const auto& protocol : protocols) {
    for (const auto& arch : archs) {
      for (std::size_t i = 0; i < a.seeds; ++i) {
        const std::uint64_t seed = g.seed + i;
        ttc_fit_options o = ttc_fit_options_default();
        o.student = arch.c_str();
        o.protocol = protocol.c_str();
        o.steps = a.steps;
        o.lr = a.lr;
        o.lr_multiplier = a.lr_multiplier;
        o.teacher_seed = seed;
        o.data_seed = seed;
        o.key_shift = a.key_shift;
        ttc_fit_result r{};
        check(ttc_fit_teacher(&o, &r));
        char line[200];
        std::snprintf(line, sizeof line, "%s,%s,%llu,%zu,%.17g,%d\n", arch.c_str(), protocol.c_str(),
                      static_cast<unsigned long long>(seed), a.steps, r.mse, r.diverged);
        csv << line;
        mse[protocol][arch].push_back(r.mse);
      }
    }
  }
  for (const auto& protocol : protocols) {
    auto& by_arch = mse[protocol];
    const auto& ref = by_arch[archs.front()];
    for (const auto& arch : archs) {
      const auto& v = by_arch[arch];
      std::size_t wins = 0, diverged = 0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        wins += v[i] < ref[i];
        diverged += !std::isfinite(v[i]);
      }
      std::printf("%-7s %-24s median mse %.6g  diverged %zu/%zu", protocol.c_str(), arch.c_str(), median(v), diverged,
                  v.size());
      if (arch != archs.front()) std::printf("  beats %s in %zu/%zu seeds", archs.front().c_str(), wins, v.size());
      std::printf("\n");
    }
  }
  write_file(output_dir(g) / "fit_teacher.csv", csv.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ttc: TTT conversion toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--output-dir", g.output_dir, "Output directory (default: $TTC_OUTPUT_DIR or .)");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run property suites");
  verify->add_option("--suite", va.suite, "all, shift, degeneracy, gradients, implicit, norm")
      ->check(CLI::IsMember({"all", "shift", "degeneracy", "gradients", "implicit", "norm"}))
      ->capture_default_str();

  ConvertArgs ca;
  auto* convert = app.add_subcommand("convert", "Convert softmax blocks into TTT blocks");
  convert->add_option("--in", ca.in, "Input checkpoint");
  convert->add_option("--random-init", ca.random_init, "Random baseline: deit-t or deit-s");
  convert->add_option("--arch", ca.arch, "Full architecture label, overrides the flags below");
  convert->add_option("--variant", ca.variant,
                      "linear, one_layer_gate, two_layer, three_layer, swiglu, or softmax / linear / projqk")
      ->capture_default_str();
  convert->add_option("--locality", ca.locality, "none, dwc, dwc_qk, cpe, dwc_v")
      ->check(CLI::IsMember({"none", "dwc", "dwc_qk", "cpe", "dwc_v"}))
      ->capture_default_str();
  convert->add_option("--nat", ca.nat, "Blend with neighborhood attention of this odd window");
  convert->add_option("--key-norm", ca.key_norm, "in, no_in, in_no_mean, in_no_std, ln, rms");
  convert->add_option("--inner-loss", ca.loss, "inner_product or l2")->capture_default_str();
  convert->add_option("--inner-lr", ca.inner_lr, "Inner step size")->capture_default_str();
  convert->add_option("--inner-steps", ca.inner_steps, "Inner gradient steps")->capture_default_str();
  convert->add_option("--out", ca.out, "Output checkpoint (default: <output-dir>/converted.ckpt)");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "FLOPs table, or wall-clock scaling with --scaling");
  bench->add_option("--archs", ba.archs, "Architecture labels")->capture_default_str();
  bench->add_option("--model", ba.model, "deit-t or deit-s")->capture_default_str();
  bench->add_option("--resolutions", ba.resolutions, "List or doubling range, e.g. 224..1792")->capture_default_str();
  bench->add_flag("--scaling", ba.scaling, "Measure attention-only wall time instead");
  bench->add_option("--scaling-archs", ba.scaling_archs, "softmax, linear, ttt")->capture_default_str();
  bench->add_option("--tokens", ba.tokens, "Token counts, e.g. 64..16384")->capture_default_str();
  bench->add_option("--repeats", ba.repeats, "Timed repeats per size")->capture_default_str();
  bench->add_option("--head-dim", ba.head_dim, "Head dimension")->capture_default_str();

  AttnMapArgs aa;
  auto* attn = app.add_subcommand("attn-map", "Implicit attention maps and locality index");
  attn->add_option("--layer", aa.layers, "softmax, linear, ttt, nat, blend")->capture_default_str();
  attn->add_option("--grid", aa.grid, "Grid side")->capture_default_str();
  attn->add_option("--head-dim", aa.head_dim, "Head dimension")->capture_default_str();
  attn->add_option("--window", aa.window, "Neighborhood window (odd)")->capture_default_str();

  FitArgs fa;
  auto* fit = app.add_subcommand("fit-teacher", "Distil a random softmax teacher block into converted students");
  fit->add_option("--arch", fa.archs, "Student labels; the first is the reference")->capture_default_str();
  fit->add_option("--protocol", fa.protocols, "freeze, ft or both")->capture_default_str();
  fit->add_option("--seeds", fa.seeds, "Seeds starting at --seed")->capture_default_str();
  fit->add_option("--steps", fa.steps, "Gradient steps")->capture_default_str();
  fit->add_option("--lr", fa.lr, "Base learning rate")->capture_default_str();
  fit->add_option("--lr-multiplier", fa.lr_multiplier, "Multiplier for new parameters")->capture_default_str();
  fit->add_option("--key-shift", fa.key_shift, "Teacher key offset in units of mean key norm")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*verify) return run_verify(g, va);
    if (*convert) return run_convert(g, ca);
    if (*bench) return run_bench(g, ba);
    if (*attn) return run_attn_map(g, aa);
    if (*fit) return run_fit(g, fa);
  } catch (const CliError& e) {
    std::cerr << "ttc: " << e.message << '\n';
    return e.code;
  }
  return kUsage;
}
