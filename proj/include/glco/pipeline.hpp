#pragma once

// Dataset loading, the training loop with checkpoints and resume, inference
// to PGM, directory evaluation to CSV, and a timing benchmark.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "glco/autograd.hpp"
#include "glco/config.hpp"
#include "glco/decoder.hpp"
#include "glco/error.hpp"
#include "glco/image_io.hpp"
#include "glco/kernels.hpp"
#include "glco/metrics.hpp"
#include "glco/objective.hpp"
#include "glco/parallel.hpp"
#include "glco/serialize.hpp"

namespace glco {

namespace fs = std::filesystem;

// ---- dataset ----------------------------------------------------------------

template <class T>
struct Sample {
  std::string name;  // mask file name, e.g. gt_0003.pgm
  Tensor<T> image;   // [1, 3, S, S]
  Tensor<T> mask;    // [1, 1, S, S], binary
};

inline std::vector<std::uint8_t> binarize(const Image& m) {
  std::vector<std::uint8_t> out(m.width * m.height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.pixels[i * m.channels] >= 128 ? 1 : 0;
  return out;
}

template <class T>
Tensor<T> mask_to_tensor(const Image& m) {
  const auto bits = binarize(m);
  Tensor<T> t({1, 1, m.height, m.width});
  for (std::size_t i = 0; i < bits.size(); ++i) t[i] = T(bits[i]);
  return t;
}

/// Pairs img_X.ppm with gt_X.pgm, sorted by name, resized to `size` when needed
/// (image bilinear, mask bilinear then thresholded at 0.5).
template <class T>
std::vector<Sample<T>> load_dataset(const fs::path& dir, std::size_t size) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("img_", 0) == 0 && e.path().extension() == ".ppm") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw DataError("no img_*.ppm files in '" + dir.string() + "'");
  std::vector<Sample<T>> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    const std::string stem = images[i].stem().string().substr(4);
    const fs::path gt = dir / ("gt_" + stem + ".pgm");
    if (!fs::exists(gt)) throw DataError("image '" + images[i].string() + "' has no mask '" + gt.string() + "'");
    const Image img = read_pnm(images[i].string());
    const Image msk = read_pnm(gt.string());
    if (img.channels != 3) throw DataError("'" + images[i].string() + "' must be an RGB PPM");
    if (img.width != msk.width || img.height != msk.height)
      throw DataError("image and mask extents differ for '" + images[i].string() + "'");
    Tensor<T> x = image_to_tensor<T>(img), g = mask_to_tensor<T>(msk);
    if (img.height != size || img.width != size) {
      x = kernels::resize_bilinear(x, size, size);
      g = kernels::resize_bilinear(g, size, size);
      for (auto& v : g.data()) v = v >= T(0.5) ? T(1) : T(0);
    }
    out[i] = Sample<T>{gt.filename().string(), std::move(x), std::move(g)};
  });
  return out;
}

template <class T>
Tensor<T> hflip(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  const std::size_t W = t.dim(3), rows = t.size() / W;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < W; ++x) out[r * W + x] = t[r * W + (W - 1 - x)];
  return out;
}

/// Stacks [1,...] tensors along the batch axis.
template <class T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& parts) {
  Shape s = parts.front()->shape();
  s[0] = parts.size();
  Tensor<T> out(s);
  const std::size_t n = parts.front()->size();
  for (std::size_t b = 0; b < parts.size(); ++b)
    std::copy(parts[b]->data().begin(), parts[b]->data().end(), out.data().begin() + std::ptrdiff_t(b * n));
  return out;
}

// ---- checkpoints ------------------------------------------------------------

inline constexpr const char* kOptimPrefix = "optim.";
inline constexpr const char* kMetaPrefix = "meta.";

template <class T>
NamedTensors<T> pack_checkpoint(const ParamStore<T>& store, const OptimState<T>& opt, std::size_t epoch) {
  NamedTensors<T> out = store.all();
  for (const auto& [name, t] : opt.m) out.emplace(std::string(kOptimPrefix) + "m." + name, t);
  for (const auto& [name, t] : opt.v) out.emplace(std::string(kOptimPrefix) + "v." + name, t);
  out.emplace(std::string(kOptimPrefix) + "step", Tensor<T>::scalar(T(opt.step)));
  out.emplace(std::string(kMetaPrefix) + "epoch", Tensor<T>::scalar(T(epoch)));
  return out;
}

/// Model parameters only (optimizer and metadata entries dropped).
template <class T>
NamedTensors<T> model_entries(const NamedTensors<T>& ckpt) {
  NamedTensors<T> out;
  for (const auto& [name, t] : ckpt)
    if (name.rfind(kOptimPrefix, 0) != 0 && name.rfind(kMetaPrefix, 0) != 0) out.emplace(name, t);
  return out;
}

template <class T>
void load_model_weights(ParamStore<T>& store, const std::string& path) {
  const auto ckpt = model_entries(load_archive<T>(path));
  std::string extra;
  for (const auto& [name, _] : ckpt)
    if (!store.contains(name)) extra += "\n  unexpected: " + name;
  try {
    store.assign_from(ckpt);
  } catch (const DimensionError& e) {
    throw DimensionError(std::string(e.what()) + extra);
  }
  if (!extra.empty()) throw DimensionError("checkpoint does not match model:" + extra);
}

template <class T>
std::size_t load_training_state(ParamStore<T>& store, OptimState<T>& opt, const std::string& path) {
  const auto ckpt = load_archive<T>(path);
  store.assign_from(model_entries(ckpt));
  const std::string m = std::string(kOptimPrefix) + "m.", v = std::string(kOptimPrefix) + "v.";
  opt = OptimState<T>{};
  for (const auto& [name, t] : ckpt) {
    if (name.rfind(m, 0) == 0) opt.m.emplace(name.substr(m.size()), t);
    if (name.rfind(v, 0) == 0) opt.v.emplace(name.substr(v.size()), t);
  }
  auto step = ckpt.find(std::string(kOptimPrefix) + "step");
  auto epoch = ckpt.find(std::string(kMetaPrefix) + "epoch");
  if (step == ckpt.end() || epoch == ckpt.end())
    throw DataError("'" + path + "' is not a training checkpoint (no optimizer state)");
  opt.step = std::uint64_t(std::llround(double(step->second.item())));
  return std::size_t(std::llround(double(epoch->second.item())));
}

inline std::string checkpoint_name(std::size_t epoch) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_e%03zu.glca", epoch);
  return buf;
}

// ---- training -----------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  double total = 0;
  std::array<double, 5> bce{}, iou{};
};

struct TrainSummary {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  double last_step_loss = 0;
  std::size_t nonfinite_events = 0;
  std::string final_checkpoint;
};

inline void write_log_header(std::ostream& os) {
  os << "epoch,lr,total";
  for (int l = 2; l <= 6; ++l) os << ",bce" << l;
  for (int l = 2; l <= 6; ++l) os << ",iou" << l;
  os << "\n";
}

inline void write_log_row(std::ostream& os, const EpochLog& e) {
  char buf[64];
  os << e.epoch;
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    os << buf;
  };
  put(e.lr);
  put(e.total);
  for (double v : e.bce) put(v);
  for (double v : e.iou) put(v);
  os << "\n";
}

/// Per-epoch shuffling and flips depend only on (seed, epoch), so a resumed
/// run replays exactly what an uninterrupted one would.
struct EpochPlan {
  std::vector<std::size_t> order;
  std::vector<bool> flip;
};

inline EpochPlan plan_epoch(std::uint64_t seed, std::size_t epoch, std::size_t n, bool hflip_enabled) {
  Rng rng(detail::splitmix(seed ^ detail::splitmix(0xE90C ^ epoch)));
  EpochPlan p;
  p.order.resize(n);
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p.order[i - 1], p.order[rng.index(i)]);
  p.flip.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.flip[i] = hflip_enabled && rng.uniform() < 0.5;
  return p;
}

/// Trains `model` in place on `data`. Writes checkpoints and the CSV log when
/// `out_dir` is non-empty.
template <class T>
TrainSummary train_model(Model<T>& model, const std::vector<Sample<T>>& data, const RunConfig& cfg,
                         const std::string& out_dir, std::ostream* progress = nullptr) {
  if (data.empty()) throw DataError("train: empty dataset");
  const AdamConfig adam = cfg.adam();
  OptimState<T> opt;
  std::size_t start_epoch = 0;
  if (!cfg.resume.empty()) start_epoch = load_training_state(model.params(), opt, cfg.resume);

  std::ofstream log;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw DataError("cannot create output directory '" + out_dir + "'");
    const fs::path log_path = fs::path(out_dir) / "train_log.csv";
    const bool append = start_epoch > 0 && fs::exists(log_path);
    log.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write '" + log_path.string() + "'");
    if (!append) write_log_header(log);
  }

  TrainSummary summary;
  const std::size_t n = data.size(), B = std::min(cfg.batch, n);
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && summary.steps >= cfg.max_steps) break;
    const double lr = lr_at_epoch(adam, epoch);
    const EpochPlan plan = plan_epoch(cfg.seed, epoch, n, cfg.hflip);
    EpochLog row;
    row.epoch = epoch + 1;
    row.lr = lr;
    std::size_t steps_this_epoch = 0;
    for (std::size_t begin = 0; begin < n; begin += B) {
      if (cfg.max_steps && summary.steps >= cfg.max_steps) break;
      std::vector<Tensor<T>> flipped;
      flipped.reserve(2 * B);
      std::vector<const Tensor<T>*> xs, gs;
      for (std::size_t k = begin; k < std::min(n, begin + B); ++k) {
        const Sample<T>& s = data[plan.order[k]];
        if (plan.flip[k]) {
          flipped.push_back(hflip(s.image));
          xs.push_back(&flipped.back());
          flipped.push_back(hflip(s.mask));
          gs.push_back(&flipped.back());
        } else {
          xs.push_back(&s.image);
          gs.push_back(&s.mask);
        }
      }
      Graph<T> graph(FiniteCheck::kReport);
      Binder<T> p(graph, model.params(), true);
      const auto out = model.forward(p, graph.constant(stack_batch(xs)));
      const auto loss = total_loss(out.maps, stack_batch(gs));
      const double total = double(loss.total_value());
      if (!std::isfinite(total)) throw NumericError("training loss became non-finite at step " +
                                                    std::to_string(summary.steps + 1));
      graph.backward(loss.total);
      summary.nonfinite_events += graph.nonfinite_events();
      adam_step(model.params(), p.grads(), opt, adam, lr);
      ++summary.steps;
      ++steps_this_epoch;
      summary.last_step_loss = total;
      row.total += total;
      for (std::size_t l = 0; l < 5; ++l) {
        row.bce[l] += double(loss.bce_value(l + 2));
        row.iou[l] += double(loss.iou_value(l + 2));
      }
    }
    if (steps_this_epoch == 0) break;
    const double k = double(steps_this_epoch);
    row.total /= k;
    for (std::size_t l = 0; l < 5; ++l) row.bce[l] /= k, row.iou[l] /= k;
    summary.epochs.push_back(row);
    if (log) {
      write_log_row(log, row);
      log.flush();
    }
    if (!out_dir.empty())
      save_archive((fs::path(out_dir) / checkpoint_name(epoch + 1)).string(),
                   pack_checkpoint(model.params(), opt, epoch + 1));
    if (progress)
      *progress << "epoch " << row.epoch << " lr " << lr << " loss " << row.total << " (" << summary.steps
                << " steps)\n";
  }
  if (!out_dir.empty()) {
    const std::size_t done = summary.epochs.empty() ? start_epoch : summary.epochs.back().epoch;
    summary.final_checkpoint = (fs::path(out_dir) / "final.glca").string();
    save_archive(summary.final_checkpoint, pack_checkpoint(model.params(), opt, done));
  }
  return summary;
}

// ---- inference ----------------------------------------------------------------

/// sigmoid(up(D2)) at the image's own resolution. Images whose extents are not
/// multiples of 32 are resized to `input_size` and the map resized back.
template <class T>
Tensor<T> predict_image(const Model<T>& model, const Tensor<T>& image, std::size_t input_size,
                        std::array<Tensor<T>, 5>* levels = nullptr) {
  const std::size_t H = image.dim(2), W = image.dim(3);
  const bool direct = H % 32 == 0 && W % 32 == 0;
  const Tensor<T> x = direct ? image : kernels::resize_bilinear(image, input_size, input_size);
  Graph<T> graph;
  Binder<T> p(graph, model.params(), false);
  const auto out = model.forward(p, graph.constant(x));
  if (levels)
    for (std::size_t k = 0; k < 5; ++k) (*levels)[k] = sigmoid(out.maps[k]).value();
  Tensor<T> prob = sigmoid(resize_bilinear(out.maps[0], H, W)).value();
  return prob;
}

template <class T>
Model<T> model_from_checkpoint(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("no checkpoint given (set checkpoint=...)");
  Model<T> model(cfg.model_config(), cfg.seed);
  load_model_weights(model.params(), checkpoint);
  return model;
}

/// Writes the mask (and optional per-level maps `<stem>_d2.pgm` ...) for one image.
template <class T>
void infer_file(const Model<T>& model, const std::string& image_path, const std::string& out_path,
                std::size_t input_size, bool dump_levels) {
  const Image img = read_pnm(image_path);
  if (img.channels != model.config().in_channels)
    throw DataError("'" + image_path + "' has " + std::to_string(img.channels) + " channels, model expects " +
                    std::to_string(model.config().in_channels));
  std::array<Tensor<T>, 5> levels;
  const Tensor<T> prob = predict_image(model, image_to_tensor<T>(img), input_size, dump_levels ? &levels : nullptr);
  const fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_pnm(out_path, map_to_image(prob));
  if (dump_levels)
    for (std::size_t k = 0; k < 5; ++k) {
      const fs::path p = out.parent_path() / (out.stem().string() + "_d" + std::to_string(k + 2) + ".pgm");
      write_pnm(p.string(), map_to_image(levels[k]));
    }
}

/// Predicts every img_X.ppm of `data_dir` into `pred_dir/gt_X.pgm`.
template <class T>
std::size_t infer_dataset(const Model<T>& model, const std::string& data_dir, const std::string& pred_dir,
                          std::size_t input_size) {
  std::vector<fs::path> images;
  if (!fs::is_directory(data_dir)) throw DataError("'" + data_dir + "' is not a directory");
  for (const auto& e : fs::directory_iterator(data_dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("img_", 0) == 0 && e.path().extension() == ".ppm") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw DataError("no img_*.ppm files in '" + data_dir + "'");
  fs::create_directories(pred_dir);
  parallel_for(images.size(), [&](std::size_t i) {
    const std::string stem = images[i].stem().string().substr(4);
    infer_file(model, images[i].string(), (fs::path(pred_dir) / ("gt_" + stem + ".pgm")).string(), input_size,
               false);
  });
  return images.size();
}

// ---- evaluation -----------------------------------------------------------------

struct EvalRow {
  std::string file;
  metrics::Scores scores;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  metrics::Scores mean;
  std::array<double, 256> precision{}, recall{}, f{};  // per-threshold means over images
};

inline metrics::Scores mean_scores(const std::vector<metrics::Scores>& all) {
  metrics::Scores m;
  for (const auto& s : all) {
    m.mae += s.mae;
    m.adaptive_f += s.adaptive_f;
    m.weighted_f += s.weighted_f;
    m.s_measure += s.s_measure;
    m.e_measure += s.e_measure;
  }
  const double n = double(all.size());
  m.mae /= n, m.adaptive_f /= n, m.weighted_f /= n, m.s_measure /= n, m.e_measure /= n;
  return m;
}

inline metrics::MaskPair pair_from_images(const Image& pred, const Image& gt, const std::string& name) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw DataError("'" + name + "': prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                    " vs mask " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  std::vector<double> p(pred.width * pred.height), g(p.size());
  const auto bits = binarize(gt);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = double(pred.pixels[i * pred.channels]) / 255.0;
    g[i] = double(bits[i]);
  }
  return metrics::MaskPair(pred.height, pred.width, std::move(p), std::move(g));
}

inline std::set<std::string> pgm_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a directory");
  std::set<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.insert(e.path().filename().string());
  return out;
}

/// Scores every prediction against the mask of the same file name.
inline EvalTable evaluate_directory(const std::string& pred_dir, const std::string& gt_dir) {
  const auto preds = pgm_names(pred_dir), gts = pgm_names(gt_dir);
  if (preds.empty() && gts.empty())
    throw DataError("evaluation input is empty: no .pgm files in '" + pred_dir + "' or '" + gt_dir + "'");
  std::string unmatched;
  for (const auto& n : preds)
    if (!gts.count(n)) unmatched += "\n  prediction without mask: " + n;
  for (const auto& n : gts)
    if (!preds.count(n)) unmatched += "\n  mask without prediction: " + n;
  if (!unmatched.empty()) throw DataError("unmatched evaluation files:" + unmatched);

  const std::vector<std::string> names(preds.begin(), preds.end());
  std::vector<metrics::Scores> scores(names.size());
  std::vector<metrics::CurveTable> curves(names.size());
  parallel_for(names.size(), [&](std::size_t i) {
    const auto pair = pair_from_images(read_pnm((fs::path(pred_dir) / names[i]).string()),
                                       read_pnm((fs::path(gt_dir) / names[i]).string()), names[i]);
    scores[i] = metrics::score_all(pair);
    curves[i] = metrics::pr_curve(pair);
  });

  EvalTable t;
  for (std::size_t i = 0; i < names.size(); ++i) t.rows.push_back({names[i], scores[i]});
  t.mean = mean_scores(scores);
  for (const auto& c : curves)
    for (std::size_t k = 0; k < 256; ++k) {
      t.precision[k] += c.rows[k].precision;
      t.recall[k] += c.rows[k].recall;
      t.f[k] += c.rows[k].f;
    }
  for (std::size_t k = 0; k < 256; ++k) {
    t.precision[k] /= double(names.size());
    t.recall[k] /= double(names.size());
    t.f[k] /= double(names.size());
  }
  return t;
}

/// metrics.csv, pr_curve.csv and fm_curve.csv under `out_dir`.
inline void write_eval_csv(const EvalTable& t, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto open = [&](const char* name) {
    std::ofstream os(fs::path(out_dir) / name);
    if (!os) throw DataError("cannot write '" + (fs::path(out_dir) / name).string() + "'");
    return os;
  };
  char buf[256];
  auto row = [&](const std::string& name, const metrics::Scores& s) {
    std::snprintf(buf, sizeof buf, ",%.9f,%.9f,%.9f,%.9f,%.9f\n", s.mae, s.adaptive_f, s.weighted_f, s.s_measure,
                  s.e_measure);
    return name + buf;
  };
  {
    auto os = open("metrics.csv");
    os << "file,mae,adaptive_f,weighted_f,s_measure,e_measure\n";
    for (const auto& r : t.rows) os << row(r.file, r.scores);
    os << row("mean", t.mean);
  }
  {
    auto os = open("pr_curve.csv");
    os << "threshold,precision,recall\n";
    for (std::size_t k = 0; k < 256; ++k) {
      std::snprintf(buf, sizeof buf, "%.9f,%.9f,%.9f\n", double(k) / 255.0, t.precision[k], t.recall[k]);
      os << buf;
    }
  }
  {
    auto os = open("fm_curve.csv");
    os << "threshold,f_measure\n";
    for (std::size_t k = 0; k < 256; ++k) {
      std::snprintf(buf, sizeof buf, "%.9f,%.9f\n", double(k) / 255.0, t.f[k]);
      os << buf;
    }
  }
}

/// Mean scores of the model's predictions on in-memory samples.
template <class T>
metrics::Scores evaluate_model(const Model<T>& model, const std::vector<Sample<T>>& data) {
  std::vector<metrics::Scores> all(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const auto& s = data[i];
    const Tensor<T> prob = predict_image(model, s.image, s.image.dim(2));
    const std::size_t H = s.mask.dim(2), W = s.mask.dim(3);
    std::vector<double> p(H * W), g(H * W);
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] = double(quantize_unit(double(prob[k]))) / 255.0;
      g[k] = double(s.mask[k]);
    }
    all[i] = metrics::score_all(metrics::MaskPair(H, W, std::move(p), std::move(g)));
  });
  return mean_scores(all);
}

// ---- benchmark -----------------------------------------------------------------

struct BenchResult {
  double forward_ms = 0;
  double step_ms = 0;
  std::size_t parameters = 0;
};

template <class T>
BenchResult bench_model(const RunConfig& cfg) {
  Model<T> model(cfg.model_config(), cfg.seed);
  Rng rng(cfg.seed);
  const Tensor<T> x = random_uniform<T>({cfg.batch, 3, cfg.input_size, cfg.input_size}, rng, T(0), T(1));
  Tensor<T> g({cfg.batch, 1, cfg.input_size, cfg.input_size});
  for (auto& v : g.data()) v = rng.uniform() < 0.3 ? T(1) : T(0);
  using clock = std::chrono::steady_clock;
  BenchResult r;
  r.parameters = model.params().scalar_count();
  const std::size_t iters = std::max<std::size_t>(1, cfg.bench_iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    Graph<T> graph(FiniteCheck::kReport);
    Binder<T> p(graph, model.params(), true);
    const auto out = model.forward(p, graph.constant(x));
    const auto t1 = clock::now();
    const auto loss = total_loss(out.maps, g);
    graph.backward(loss.total);
    const auto t2 = clock::now();
    r.forward_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    r.step_ms += std::chrono::duration<double, std::milli>(t2 - t0).count();
  }
  r.forward_ms /= double(iters);
  r.step_ms /= double(iters);
  return r;
}

}  // namespace glco
