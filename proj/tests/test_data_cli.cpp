#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "glco/glco.hpp"

using namespace glco;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("glco_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.channels = 8;
  cfg.scale_set = {3};
  cfg.encoder_widths = {4, 8, 8, 16, 16};
  cfg.input_size = 32;
  cfg.batch = 2;
  cfg.epochs = 2;
  cfg.precision = Precision::kFloat64;
  cfg.synth_count = 4;
  cfg.synth_extent = 32;
  cfg.seed = 3;
  return cfg;
}

std::vector<Sample<double>> tiny_data(const TempDir& dir, const RunConfig& cfg) {
  synth_generate(cfg.synth(), dir.path() / "data");
  return load_dataset<double>(dir.path() / "data", cfg.input_size);
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string f; std::getline(ss, f, sep);) out.push_back(f);
  return out;
}

struct CliResult {
  int code;
  std::string output;
};

CliResult run_cli(const std::string& args, const TempDir& dir) {
  const std::string log = dir / "cli.log";
  const std::string cmd = std::string(GLCO_CLI) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

}  // namespace

// ---- synthetic data -----------------------------------------------------------------

TEST(Synth, SameSeedWritesByteIdenticalFiles) {
  TempDir dir("synth_det");
  SynthSpec spec;
  spec.seed = 11;
  spec.count = 8;
  synth_generate(spec, dir.path() / "a");
  synth_generate(spec, dir.path() / "b");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir.path() / "b" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 16u);
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "img_0007.ppm"));
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "gt_0000.pgm"));

  spec.seed = 12;
  synth_generate(spec, dir.path() / "c");
  EXPECT_NE(slurp(dir.path() / "a" / "img_0000.ppm"), slurp(dir.path() / "c" / "img_0000.ppm"));
}

TEST(Synth, StrengthZeroSeparatesObjectFromBackground) {
  for (ShapeFamily family : {ShapeFamily::kBlob, ShapeFamily::kRing, ShapeFamily::kMultiBlob}) {
    SynthSpec spec;
    spec.family = family;
    spec.count = 8;
    double gap = 0;
    for (std::size_t i = 0; i < spec.count; ++i) {
      const auto s = synth_sample(spec, i);
      double obj = 0, bg = 0;
      std::size_t n_obj = 0, n_bg = 0;
      for (std::size_t y = 0; y < s.mask.height; ++y)
        for (std::size_t x = 0; x < s.mask.width; ++x) {
          double v = 0;
          for (std::size_t c = 0; c < 3; ++c) v += s.image.at(y, x, c) / 255.0 / 3;
          if (s.mask.at(y, x)) obj += v, ++n_obj;
          else bg += v, ++n_bg;
        }
      gap += std::abs(obj / double(n_obj) - bg / double(n_bg)) / double(spec.count);
    }
    EXPECT_GT(gap, 0.3) << family_name(family);
  }
}

TEST(Synth, StrengthOneHidesTheObjectTexture) {
  SynthSpec spec;
  spec.strength = 1;
  const auto s = synth_sample(spec, 0);
  double obj = 0, bg = 0;
  std::size_t n_obj = 0, n_bg = 0;
  for (std::size_t y = 0; y < s.mask.height; ++y)
    for (std::size_t x = 0; x < s.mask.width; ++x)
      if (s.mask.at(y, x)) obj += s.image.at(y, x, 0), ++n_obj;
      else bg += s.image.at(y, x, 0), ++n_bg;
  EXPECT_LT(std::abs(obj / double(n_obj) - bg / double(n_bg)) / 255.0, 0.1);
}

TEST(Synth, EveryMaskHasForegroundUnderOcclusion) {
  for (double occ : {0.0, 0.5, 0.95})
    for (ShapeFamily family : {ShapeFamily::kBlob, ShapeFamily::kRing, ShapeFamily::kMultiBlob}) {
      SynthSpec spec;
      spec.occlusion = occ;
      spec.family = family;
      spec.extent = 32;
      for (std::size_t i = 0; i < 12; ++i) {
        const auto s = synth_sample(spec, i);
        std::size_t fg = 0;
        for (auto v : s.mask.pixels) {
          EXPECT_TRUE(v == 0 || v == 255);
          fg += v == 255;
        }
        EXPECT_GE(fg, 1u) << occ << " " << i;
      }
    }
}

TEST(Synth, DegenerateSpecsRejected) {
  SynthSpec spec;
  spec.occlusion = 1;
  EXPECT_THROW(synth_sample(spec, 0), ConfigError);
  spec = SynthSpec{};
  spec.count = 0;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = SynthSpec{};
  spec.strength = 1.5;
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(parse_family("square"), ConfigError);
}

// ---- image I/O ----------------------------------------------------------------------

TEST(ImageIo, PnmRoundTripAndQuantization) {
  TempDir dir("pnm");
  Image rgb{5, 3, 3, {}};
  for (std::size_t i = 0; i < 45; ++i) rgb.pixels.push_back(std::uint8_t(i * 37 % 256));
  write_pnm(dir / "a.ppm", rgb);
  const Image back = read_pnm(dir / "a.ppm");
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.channels, 3u);
  EXPECT_EQ(back.pixels, rgb.pixels);

  EXPECT_EQ(quantize_unit(0.5), 128);
  EXPECT_EQ(quantize_unit(0.0), 0);
  EXPECT_EQ(quantize_unit(1.0), 255);
  EXPECT_EQ(quantize_unit(-0.2), 0);
  EXPECT_EQ(quantize_unit(1.7), 255);
  EXPECT_EQ(quantize_unit(0.5 / 255), 1);

  const auto t = image_to_tensor<double>(rgb);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 3, 5}));
  EXPECT_EQ(t.at(0, 1, 2, 4), double(rgb.at(2, 4, 1)) / 255.0);
}

TEST(ImageIo, MalformedFilesAreDataErrors) {
  TempDir dir("pnm_bad");
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), DataError);
  std::ofstream(dir / "junk.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
  EXPECT_THROW(read_pnm(dir / "junk.pgm"), DataError);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  EXPECT_THROW(read_pnm(dir / "short.pgm"), DataError);
}

// ---- configuration -------------------------------------------------------------------

TEST(Config, RoundTripIsIdentity) {
  RunConfig cfg = tiny_config();
  cfg.scale_set = {5, 7};
  cfg.fusion_mode = FusionMode::kConcat;
  cfg.ghim = false;
  cfg.ard = false;
  cfg.lr = 3.25e-5;
  cfg.decay_factor = 0.37;
  cfg.data_dir = "some/dir";
  cfg.synth_family = ShapeFamily::kMultiBlob;
  cfg.synth_occlusion = 0.25;
  const std::string text = serialize_config(cfg);
  const RunConfig back = parse_config(text);
  EXPECT_TRUE(back == cfg);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_TRUE(parse_config(serialize_config(RunConfig{})) == RunConfig{});
  for (const auto& key : config_keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
}

TEST(Config, OptimizerDefaults) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.lr, 1e-4);
  EXPECT_EQ(cfg.decay_every, 60u);
  EXPECT_EQ(cfg.decay_factor, 0.1);
  EXPECT_EQ(cfg.scale_set, (std::vector<std::size_t>{3, 5, 7}));
  EXPECT_TRUE(cfg.gpm && cfg.lrm && cfg.ghim && cfg.ard && cfg.mtb_head);
}

TEST(Config, CommentsAndWhitespace) {
  const RunConfig cfg = parse_config("# header\n\n  channels = 32  # trailing\nseed=9\n");
  EXPECT_EQ(cfg.channels, 32u);
  EXPECT_EQ(cfg.seed, 9u);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("chanels=16\n"), ConfigError);
  EXPECT_THROW(parse_config("seed=1\nseed=2\n"), ConfigError);
  EXPECT_THROW(parse_config("channels=abc\n"), ConfigError);
  EXPECT_THROW(parse_config("channels\n"), ConfigError);
  EXPECT_THROW(parse_config("fusion_mode=mul\n"), ConfigError);
  try {
    parse_config("seed=1\n\nbogus=3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  RunConfig cfg;
  cfg.input_size = 48;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/glco.cfg"), ConfigError);
}

// ---- dataset ---------------------------------------------------------------------------

TEST(Dataset, LoadsResizesAndValidates) {
  TempDir dir("dataset");
  RunConfig cfg = tiny_config();
  cfg.synth_extent = 40;
  synth_generate(cfg.synth(), dir.path());
  const auto data = load_dataset<double>(dir.path(), 32);
  ASSERT_EQ(data.size(), 4u);
  EXPECT_EQ(data[0].name, "gt_0000.pgm");
  EXPECT_EQ(data[0].image.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(data[0].mask.shape(), (Shape{1, 1, 32, 32}));
  for (double v : data[2].mask.data()) EXPECT_TRUE(v == 0 || v == 1);

  fs::remove(dir.path() / "gt_0001.pgm");
  EXPECT_THROW(load_dataset<double>(dir.path(), 32), DataError);
  EXPECT_THROW(load_dataset<double>(dir.path() / "nope", 32), DataError);
}

TEST(Dataset, EpochPlanIsSeededPermutation) {
  const auto a = plan_epoch(1, 3, 10, true), b = plan_epoch(1, 3, 10, true), c = plan_epoch(1, 4, 10, true);
  EXPECT_EQ(a.order, b.order);
  EXPECT_EQ(a.flip, b.flip);
  EXPECT_NE(a.order, c.order);
  auto sorted = a.order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
  for (bool f : plan_epoch(1, 3, 10, false).flip) EXPECT_FALSE(f);
}

// ---- training ----------------------------------------------------------------------------

TEST(Train, WritesLogAndCheckpointsWithScheduledLr) {
  TempDir dir("train_log");
  RunConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.decay_every = 2;
  cfg.decay_factor = 0.5;
  const auto data = tiny_data(dir, cfg);
  Model<double> model(cfg.model_config(), cfg.seed);
  const auto summary = train_model(model, data, cfg, dir / "run");
  EXPECT_EQ(summary.steps, 6u);
  EXPECT_EQ(summary.nonfinite_events, 0u);
  ASSERT_EQ(summary.epochs.size(), 3u);
  for (std::size_t e = 1; e <= 3; ++e) EXPECT_TRUE(fs::exists(dir.path() / "run" / checkpoint_name(e)));
  EXPECT_TRUE(fs::exists(summary.final_checkpoint));

  const auto lines = csv_lines(dir.path() / "run" / "train_log.csv");
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "epoch,lr,total,bce2,bce3,bce4,bce5,bce6,iou2,iou3,iou4,iou5,iou6");
  const double expected_lr[] = {1e-4, 1e-4, 5e-5};
  for (std::size_t e = 0; e < 3; ++e) {
    const auto f = split(lines[e + 1], ',');
    ASSERT_EQ(f.size(), 13u);
    EXPECT_EQ(std::stoul(f[0]), e + 1);
    EXPECT_NEAR(std::stod(f[1]), expected_lr[e], 1e-15);
    double sum = 0;
    for (std::size_t k = 3; k < 13; ++k) sum += std::stod(f[k]);
    EXPECT_NEAR(std::stod(f[2]), sum, 1e-6 * sum);
  }
}

TEST(Train, ResumeReproducesUninterruptedRunBitForBit) {
  TempDir dir("resume");
  RunConfig cfg = tiny_config();
  cfg.epochs = 3;
  const auto data = tiny_data(dir, cfg);

  Model<double> straight(cfg.model_config(), cfg.seed);
  train_model(straight, data, cfg, dir / "straight");

  RunConfig first = cfg;
  first.epochs = 1;
  Model<double> part(cfg.model_config(), cfg.seed);
  train_model(part, data, first, dir / "split");

  RunConfig rest = cfg;
  rest.resume = dir / "split/checkpoint_e001.glca";
  Model<double> resumed(cfg.model_config(), cfg.seed + 99);
  const auto summary = train_model(resumed, data, rest, dir / "split");
  EXPECT_EQ(summary.epochs.size(), 2u);
  for (std::size_t e = 1; e <= 3; ++e)
    EXPECT_EQ(slurp(dir.path() / "straight" / checkpoint_name(e)), slurp(dir.path() / "split" / checkpoint_name(e)))
        << e;
  EXPECT_EQ(slurp(dir.path() / "straight" / "train_log.csv"), slurp(dir.path() / "split" / "train_log.csv"));
}

TEST(Train, MaxStepsStopsEarly) {
  TempDir dir("max_steps");
  RunConfig cfg = tiny_config();
  cfg.max_steps = 3;
  cfg.epochs = 10;
  const auto data = tiny_data(dir, cfg);
  Model<double> model(cfg.model_config(), cfg.seed);
  const auto summary = train_model(model, data, cfg, "");
  EXPECT_EQ(summary.steps, 3u);
  EXPECT_TRUE(std::isfinite(summary.last_step_loss));
}

TEST(Train, EmptyDatasetRejected) {
  Model<double> model(tiny_config().model_config(), 0);
  EXPECT_THROW(train_model(model, {}, tiny_config(), ""), DataError);
}

// ---- checkpoints and inference ---------------------------------------------------------------

TEST(Checkpoint, MismatchedArchitectureListsOffendingNames) {
  TempDir dir("ckpt_mismatch");
  RunConfig cfg = tiny_config();
  Model<double> a(cfg.model_config(), 1);
  save_archive(dir / "a.glca", a.params().all());
  RunConfig other = cfg;
  other.channels = 4;
  Model<double> b(other.model_config(), 1);
  try {
    load_model_weights(b.params(), dir / "a.glca");
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cos.s2.mtb"), std::string::npos) << msg;
    EXPECT_NE(msg.find("decoder."), std::string::npos) << msg;
  }
  RunConfig no_ghim = cfg;
  no_ghim.ghim = false;
  Model<double> c(no_ghim.model_config(), 1);
  try {
    load_model_weights(c.params(), dir / "a.glca");
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("ghim"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_training_state(c.params(), *std::make_unique<OptimState<double>>(), dir / "a.glca"),
               DimensionError);
}

TEST(Checkpoint, ModelOnlyArchiveIsNotATrainingState) {
  TempDir dir("ckpt_state");
  Model<double> a(tiny_config().model_config(), 1);
  save_archive(dir / "a.glca", a.params().all());
  OptimState<double> opt;
  EXPECT_THROW(load_training_state(a.params(), opt, dir / "a.glca"), DataError);
}

TEST(Infer, ZeroCheckpointGivesUniformHalfMaskAtInputExtent) {
  TempDir dir("infer_zero");
  RunConfig cfg = tiny_config();
  Model<double> model(cfg.model_config(), 1);
  model.params().fill(0.0);
  save_archive(dir / "zero.glca", model.params().all());
  const auto loaded = model_from_checkpoint<double>(cfg, dir / "zero.glca");

  Image img{50, 38, 3, std::vector<std::uint8_t>(50 * 38 * 3)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint8_t(i * 13 % 251);
  write_pnm(dir / "odd.ppm", img);
  infer_file(loaded, dir / "odd.ppm", dir / "out/odd.pgm", cfg.input_size, true);
  const Image mask = read_pnm(dir / "out/odd.pgm");
  EXPECT_EQ(mask.width, 50u);
  EXPECT_EQ(mask.height, 38u);
  EXPECT_EQ(mask.channels, 1u);
  for (auto v : mask.pixels) EXPECT_EQ(v, 128);
  for (int l = 2; l <= 6; ++l) EXPECT_TRUE(fs::exists(dir.path() / "out" / ("odd_d" + std::to_string(l) + ".pgm")));
  EXPECT_THROW(model_from_checkpoint<double>(cfg, ""), ConfigError);
}

TEST(Infer, RepeatedRunsWriteIdenticalBytes) {
  TempDir dir("infer_repeat");
  RunConfig cfg = tiny_config();
  synth_generate(cfg.synth(), dir.path());
  Model<double> model(cfg.model_config(), 5);
  save_archive(dir / "m.glca", model.params().all());
  for (const char* out : {"a.pgm", "b.pgm"}) {
    const auto m = model_from_checkpoint<double>(cfg, dir / "m.glca");
    infer_file(m, dir / "img_0001.ppm", dir / out, cfg.input_size, false);
  }
  EXPECT_EQ(slurp(dir.path() / "a.pgm"), slurp(dir.path() / "b.pgm"));
  const Image a = read_pnm(dir / "a.pgm");
  EXPECT_EQ(a.width, 32u);
  std::ofstream(dir / "gray.pgm", std::ios::binary) << "P5\n32 32\n255\n" << std::string(1024, 'x');
  EXPECT_THROW(infer_file(model, dir / "gray.pgm", dir / "c.pgm", 32, false), DataError);
}

// ---- evaluation ------------------------------------------------------------------------------

TEST(Eval, IdenticalDirectoriesScorePerfectly) {
  TempDir dir("eval_same");
  SynthSpec spec;
  spec.count = 5;
  spec.extent = 24;
  synth_generate(spec, dir.path());
  const auto t = evaluate_directory(dir / "", dir / "");
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_EQ(t.mean.mae, 0.0);
  EXPECT_NEAR(t.mean.adaptive_f, 1.0, 1e-6);
  EXPECT_NEAR(t.mean.weighted_f, 1.0, 1e-6);
  EXPECT_NEAR(t.mean.s_measure, 1.0, 1e-6);
  EXPECT_NEAR(t.mean.e_measure, 1.0, 1e-6);
}

TEST(Eval, MeansAverageRowsAndCsvFilesAreWritten) {
  TempDir dir("eval_csv");
  SynthSpec spec;
  spec.count = 4;
  spec.extent = 24;
  synth_generate(spec, dir.path() / "gt");
  fs::create_directories(dir.path() / "pred");
  for (std::size_t i = 0; i < 4; ++i) {
    Image m = read_pnm((dir.path() / "gt" / synth_mask_name(i)).string());
    for (std::size_t k = 0; k < m.pixels.size(); ++k)
      if ((k * 7 + i) % 5 == 0) m.pixels[k] = std::uint8_t(k * 31 % 256);
    write_pnm((dir.path() / "pred" / synth_mask_name(i)).string(), m);
  }
  const auto t = evaluate_directory(dir / "pred", dir / "gt");
  ASSERT_EQ(t.rows.size(), 4u);
  double s = 0, mae = 0;
  for (const auto& r : t.rows) s += r.scores.s_measure / 4, mae += r.scores.mae / 4;
  EXPECT_NEAR(t.mean.s_measure, s, 1e-15);
  EXPECT_NEAR(t.mean.mae, mae, 1e-15);
  EXPECT_GT(t.mean.mae, 0.0);
  EXPECT_LT(t.mean.s_measure, 1.0);

  write_eval_csv(t, dir / "report");
  const auto metrics = csv_lines(dir.path() / "report" / "metrics.csv");
  ASSERT_EQ(metrics.size(), 6u);
  EXPECT_EQ(metrics[0], "file,mae,adaptive_f,weighted_f,s_measure,e_measure");
  EXPECT_EQ(split(metrics[1], ',')[0], "gt_0000.pgm");
  EXPECT_EQ(split(metrics[5], ',')[0], "mean");
  EXPECT_NEAR(std::stod(split(metrics[5], ',')[4]), t.mean.s_measure, 1e-9);
  EXPECT_EQ(csv_lines(dir.path() / "report" / "pr_curve.csv").size(), 257u);
  EXPECT_EQ(csv_lines(dir.path() / "report" / "fm_curve.csv").size(), 257u);
}

TEST(Eval, EmptyAndUnmatchedInputsAreDataErrors) {
  TempDir dir("eval_bad");
  fs::create_directories(dir.path() / "p");
  fs::create_directories(dir.path() / "g");
  EXPECT_THROW(evaluate_directory(dir / "p", dir / "g"), DataError);
  EXPECT_THROW(evaluate_directory(dir / "missing", dir / "g"), DataError);
  const Image m{4, 4, 1, std::vector<std::uint8_t>(16, 0)};
  write_pnm(dir / "p/a.pgm", m);
  write_pnm(dir / "p/b.pgm", m);
  write_pnm(dir / "g/a.pgm", m);
  write_pnm(dir / "g/c.pgm", m);
  try {
    evaluate_directory(dir / "p", dir / "g");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("b.pgm"), std::string::npos);
    EXPECT_NE(msg.find("c.pgm"), std::string::npos);
    EXPECT_EQ(msg.find("a.pgm"), std::string::npos);
  }
}

// ---- command line -----------------------------------------------------------------------------

TEST(Cli, ExitCodes) {
  TempDir dir("cli_codes");
  EXPECT_EQ(run_cli("", dir).code, 1);
  EXPECT_EQ(run_cli("frobnicate", dir).code, 1);
  EXPECT_EQ(run_cli("synth --set bogus=1", dir).code, 1);
  EXPECT_EQ(run_cli("synth --set input_size=40", dir).code, 1);
  EXPECT_EQ(run_cli("synth --config " + (dir / "missing.cfg"), dir).code, 1);

  const auto synth = run_cli("synth --seed 4 --set synth_count=3 --set synth_extent=32 --out " + (dir / "data"), dir);
  EXPECT_EQ(synth.code, 0) << synth.output;
  EXPECT_TRUE(fs::exists(dir.path() / "data" / "gt_0002.pgm"));

  const auto train = run_cli("train --set data_dir=" + (dir / "nowhere") + " --out " + (dir / "run"), dir);
  EXPECT_EQ(train.code, 2) << train.output;
  const auto eval = run_cli("eval --set pred_dir=" + (dir / "data") + " --set gt_dir=" + (dir / "empty"), dir);
  EXPECT_EQ(eval.code, 2) << eval.output;
}

TEST(Cli, SynthTrainInferEvalCompose) {
  TempDir dir("cli_flow");
  std::ofstream(dir / "run.cfg") << "# tiny run\nchannels=8\nscale_set=3\nencoder_widths=4,8,8,16,16\ninput_size=32\n"
                                    "batch=2\nepochs=1\nsynth_count=2\nsynth_extent=32\nprecision=float64\n"
                                    "data_dir=" + (dir / "data") + "\n";
  const std::string base = "--config " + (dir / "run.cfg") + " ";
  ASSERT_EQ(run_cli("synth " + base, dir).code, 0);
  const auto train = run_cli("train " + base + "--out " + (dir / "run"), dir);
  ASSERT_EQ(train.code, 0) << train.output;
  EXPECT_TRUE(fs::exists(dir.path() / "run" / "final.glca"));
  EXPECT_TRUE(fs::exists(dir.path() / "run" / "train_log.csv"));

  const auto infer = run_cli("infer " + base + "--set checkpoint=" + (dir / "run/final.glca") +
                                 " --set image=" + (dir / "data/img_0001.ppm") + " --out " + (dir / "masks"),
                             dir);
  ASSERT_EQ(infer.code, 0) << infer.output;
  EXPECT_EQ(read_pnm(dir / "masks/img_0001.pgm").width, 32u);

  const auto eval =
      run_cli("eval " + base + "--set checkpoint=" + (dir / "run/final.glca") + " --out " + (dir / "eval"), dir);
  ASSERT_EQ(eval.code, 0) << eval.output;
  EXPECT_EQ(csv_lines(dir.path() / "eval" / "metrics.csv").size(), 4u);

  const auto mismatch = run_cli("infer " + base + "--set channels=4 --set checkpoint=" + (dir / "run/final.glca") +
                                    " --set image=" + (dir / "data/img_0001.ppm") + " --out " + (dir / "masks"),
                                dir);
  EXPECT_EQ(mismatch.code, 2) << mismatch.output;
  EXPECT_NE(mismatch.output.find("decoder."), std::string::npos) << mismatch.output;
}

TEST(Cli, GradcheckReportsEveryComponentOnceAndFailsOnCorruption) {
  TempDir dir("cli_gradcheck");
  const auto clean = run_cli("gradcheck", dir);
  EXPECT_EQ(clean.code, 0) << clean.output;
  std::map<std::string, int> seen;
  for (const auto& line : split(clean.output, '\n'))
    if (!line.empty()) ++seen[split(line, ' ')[0]];
  for (const auto& name : battery_components()) EXPECT_EQ(seen[name], 1) << name;
  EXPECT_EQ(seen.size(), battery_components().size());

  const auto corrupt = run_cli("gradcheck --corrupt-op softmax", dir);
  EXPECT_EQ(corrupt.code, 3) << corrupt.output;
  EXPECT_NE(corrupt.output.find("FAIL"), std::string::npos);
}
