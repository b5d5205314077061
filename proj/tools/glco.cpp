// glco command-line driver: synth | train | eval | infer | gradcheck | bench.
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric-contract failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "glco/glco.hpp"

namespace fs = std::filesystem;
using namespace glco;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "key=value configuration file (defaults apply when omitted)");
  cmd->add_option("--seed", args.seed, "overrides the config seed");
  cmd->add_option("--out", args.out, "output directory (overrides out_dir; data_dir for synth)");
  cmd->add_option("--set", args.sets, "extra key=value override, repeatable");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : load_config(args.config);
  for (const auto& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_config_entry(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  return cfg;
}

int cmd_synth(RunConfig cfg, const CommonArgs& args) {
  const std::string dir = args.out.empty() ? cfg.data_dir : args.out;
  synth_generate(cfg.synth(), dir);
  std::printf("wrote %zu image/mask pairs to %s\n", cfg.synth_count, dir.c_str());
  return 0;
}

template <class T>
int cmd_train(RunConfig cfg, const CommonArgs& args) {
  if (!args.out.empty()) cfg.out_dir = args.out;
  const auto data = load_dataset<T>(cfg.data_dir, cfg.input_size);
  Model<T> model(cfg.model_config(), cfg.seed);
  std::printf("training on %zu images, %zu parameters\n", data.size(), model.params().scalar_count());
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream os(fs::path(cfg.out_dir) / "config.txt");
    os << serialize_config(cfg);
  }
  const auto summary = train_model(model, data, cfg, cfg.out_dir, &std::cout);
  if (summary.nonfinite_events) std::printf("warning: %zu non-finite values observed\n", summary.nonfinite_events);
  const auto s = evaluate_model(model, data);
  std::printf("steps %zu, last loss %.6f, training-set S_m %.4f, MAE %.4f\n", summary.steps,
              summary.last_step_loss, s.s_measure, s.mae);
  std::printf("final checkpoint: %s\n", summary.final_checkpoint.c_str());
  return 0;
}

template <class T>
int cmd_infer(RunConfig cfg, const CommonArgs& args) {
  if (!args.out.empty()) cfg.out_dir = args.out;
  if (cfg.image.empty()) throw ConfigError("infer needs image=<path to .ppm>");
  const Model<T> model = model_from_checkpoint<T>(cfg, cfg.checkpoint);
  const fs::path out = fs::path(cfg.out_dir) / (fs::path(cfg.image).stem().string() + ".pgm");
  infer_file(model, cfg.image, out.string(), cfg.input_size, cfg.dump_levels);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

template <class T>
int cmd_eval(RunConfig cfg, const CommonArgs& args) {
  if (!args.out.empty()) cfg.out_dir = args.out;
  std::string pred_dir = cfg.pred_dir;
  const std::string gt_dir = cfg.gt_dir.empty() ? cfg.data_dir : cfg.gt_dir;
  if (!cfg.checkpoint.empty()) {
    const Model<T> model = model_from_checkpoint<T>(cfg, cfg.checkpoint);
    if (pred_dir.empty()) pred_dir = (fs::path(cfg.out_dir) / "pred").string();
    infer_dataset(model, cfg.data_dir, pred_dir, cfg.input_size);
  }
  if (pred_dir.empty()) throw ConfigError("eval needs checkpoint=<file> or pred_dir=<dir>");
  const EvalTable t = evaluate_directory(pred_dir, gt_dir);
  write_eval_csv(t, cfg.out_dir);
  std::printf("%zu images  MAE %.4f  AF %.4f  WF %.4f  S %.4f  E %.4f\n", t.rows.size(), t.mean.mae,
              t.mean.adaptive_f, t.mean.weighted_f, t.mean.s_measure, t.mean.e_measure);
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& corrupt_op) {
  BatteryOptions opt;
  opt.channels = cfg.gradcheck_channels;
  opt.seed = cfg.seed + 7;
  opt.corrupt_op = corrupt_op;
  bool ok = true;
  for (const auto& name : battery_components()) {
    const BatteryResult r = run_component(name, opt);
    const bool pass = r.worst < opt.tolerance;
    ok = ok && pass;
    std::printf("%-18s %.3e  %s\n", r.component.c_str(), r.worst, pass ? "ok" : "FAIL");
    std::fflush(stdout);
  }
  return ok ? 0 : kExitNumeric;
}

template <class T>
int cmd_bench(const RunConfig& cfg) {
  const BenchResult r = bench_model<T>(cfg);
  std::printf("parameters %zu  batch %zu  input %zux%zu  forward %.1f ms  forward+backward %.1f ms\n",
              r.parameters, cfg.batch, cfg.input_size, cfg.input_size, r.forward_ms, r.step_ms);
  return 0;
}

template <class F32, class F64>
int by_precision(const RunConfig& cfg, F32 f32, F64 f64) {
  return cfg.precision == Precision::kFloat32 ? f32() : f64();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "glco: camouflaged object segmentation toolkit.\n"
      "Defaults are desk scale (64x64 inputs, channels=16, batch=4); the large-scale setting is\n"
      "input_size=384 channels=128 batch=36 epochs=180. Keys: see README."};
  app.require_subcommand(1);
  CommonArgs args;
  std::string corrupt_op;
  auto* synth = app.add_subcommand("synth", "generate a synthetic camouflage dataset");
  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and train_log.csv");
  auto* eval = app.add_subcommand("eval", "score predictions (or a checkpoint) against masks");
  auto* infer = app.add_subcommand("infer", "predict a mask for one image");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference battery over every block and loss");
  auto* bench = app.add_subcommand("bench", "time forward and backward passes");
  for (auto* cmd : {synth, train, eval, infer, gradcheck, bench}) add_common(cmd, args);
  gradcheck->add_option("--corrupt-op", corrupt_op, "test fixture: corrupt the backward rule of this op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const RunConfig cfg = resolve(args);
    if (synth->parsed()) return cmd_synth(cfg, args);
    if (train->parsed())
      return by_precision(cfg, [&] { return cmd_train<float>(cfg, args); }, [&] { return cmd_train<double>(cfg, args); });
    if (eval->parsed())
      return by_precision(cfg, [&] { return cmd_eval<float>(cfg, args); }, [&] { return cmd_eval<double>(cfg, args); });
    if (infer->parsed())
      return by_precision(cfg, [&] { return cmd_infer<float>(cfg, args); }, [&] { return cmd_infer<double>(cfg, args); });
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, corrupt_op);
    if (bench->parsed())
      return by_precision(cfg, [&] { return cmd_bench<float>(cfg); }, [&] { return cmd_bench<double>(cfg); });
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
