// Command-line front end: preprocess, augment, shapes, train, infer, eval,
// gradcheck. Every artifact-producing subcommand writes the fully-resolved
// configuration next to its outputs so a run can be reproduced from it.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "onet/checkpoint.hpp"
#include "onet/datapipe.hpp"
#include "onet/metrics.hpp"
#include "onet/model.hpp"
#include "onet/optim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace onet;

namespace {

struct RunConfig {
  // model
  std::int64_t input_size = 1024;
  std::int64_t base_channels = 8;
  std::int64_t depth = 6;
  std::int64_t kernel_bottom = 3;
  std::int64_t kernel_up = 5;
  std::int64_t head_kernel = 3;
  std::string arch = "onet";
  std::string precision = "double";
  // training
  int max_epochs = 50;
  std::int64_t max_steps = 0;
  int batch = 4;
  double stop_delta = 1e-3;
  std::uint64_t seed = 1;
  int threads = 1;
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // pipeline / evaluation
  std::int64_t roi = 1024;
  std::string view = "CC";
  std::string abn_type;
  std::int64_t count = 1;
  double tau = 0.2;
  std::int64_t min_area = 50;
  double threshold = 0.5;

  ModelConfig model() const {
    ModelConfig m;
    m.input_size = input_size;
    m.base_channels = base_channels;
    m.depth = depth;
    m.kernel_bottom = kernel_bottom;
    m.kernel_up = kernel_up;
    m.head_kernel = head_kernel;
    return m;
  }
  TrainConfig training() const {
    TrainConfig t;
    t.max_epochs = max_epochs;
    t.max_steps = max_steps;
    t.batch_size = batch;
    t.stop_delta = stop_delta;
    t.seed = seed;
    t.threads = threads;
    t.adam = {alpha, beta1, beta2, eps};
    return t;
  }
};

json to_json(const RunConfig& c) {
  return json{{"input_size", c.input_size},
              {"base_channels", c.base_channels},
              {"depth", c.depth},
              {"kernel_bottom", c.kernel_bottom},
              {"kernel_up", c.kernel_up},
              {"head_kernel", c.head_kernel},
              {"arch", c.arch},
              {"precision", c.precision},
              {"max_epochs", c.max_epochs},
              {"max_steps", c.max_steps},
              {"batch", c.batch},
              {"stop_delta", c.stop_delta},
              {"seed", c.seed},
              {"threads", c.threads},
              {"alpha", c.alpha},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"roi", c.roi},
              {"view", c.view},
              {"abn_type", c.abn_type},
              {"count", c.count},
              {"tau", c.tau},
              {"min_area", c.min_area},
              {"threshold", c.threshold}};
}

void merge_config_file(RunConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open config '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    fail("config '" + path + "': " + e.what());
  }
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("input_size", c.input_size);
  take("base_channels", c.base_channels);
  take("depth", c.depth);
  take("kernel_bottom", c.kernel_bottom);
  take("kernel_up", c.kernel_up);
  take("head_kernel", c.head_kernel);
  take("arch", c.arch);
  take("precision", c.precision);
  take("max_epochs", c.max_epochs);
  take("max_steps", c.max_steps);
  take("batch", c.batch);
  take("stop_delta", c.stop_delta);
  take("seed", c.seed);
  take("threads", c.threads);
  take("alpha", c.alpha);
  take("beta1", c.beta1);
  take("beta2", c.beta2);
  take("eps", c.eps);
  take("roi", c.roi);
  take("view", c.view);
  take("abn_type", c.abn_type);
  take("count", c.count);
  take("tau", c.tau);
  take("min_area", c.min_area);
  take("threshold", c.threshold);
}

void write_resolved(const RunConfig& c, const fs::path& out_dir,
                    const std::string& subcommand) {
  fs::create_directories(out_dir);
  const fs::path p = out_dir / (subcommand + "_config.json");
  std::ofstream os(p);
  if (!os) fail("cannot write resolved config '" + p.string() + "'");
  json j = to_json(c);
  j["subcommand"] = subcommand;
  os << j.dump(2) << "\n";
}

template <typename T>
LayerGraph<T> build_arch(const std::string& arch, const ModelConfig& cfg) {
  if (arch == "onet") return build_onet<T>(cfg);
  if (arch == "unet") return build_unet<T>(cfg);
  fail("unknown architecture '" + arch + "' (expected onet or unet)");
}

// ---------------------------------------------------------------- preprocess

int run_preprocess(const RunConfig& c, const std::string& manifest,
                   const std::string& out_dir) {
  auto ds = load_manifest(manifest, c.view, c.abn_type);
  fs::create_directories(out_dir);
  std::ofstream man(fs::path(out_dir) / "manifest.csv");
  man << kManifestHeader << "\n";
  for (const auto& s : ds.samples) {
    auto p = preprocess_sample(s, c.roi);
    const std::string img_name = s.id + "_img.pgm";
    const std::string mask_name = s.id + "_mask.pgm";
    write_pgm((fs::path(out_dir) / img_name).string(), p.image);
    write_mask((fs::path(out_dir) / mask_name).string(), p.mask);
    Sample out = s;
    out.image_path = img_name;
    out.mask_path = mask_name;
    out.center_x = c.roi / 2;
    out.center_y = c.roi / 2;
    out.markers.clear();
    man << manifest_row(out) << "\n";
    std::cout << "preprocessed " << s.id << "\n";
  }
  write_resolved(c, out_dir, "preprocess");
  std::cout << "wrote " << ds.samples.size() << " sample pairs to " << out_dir
            << "\n";
  return 0;
}

int run_augment(const RunConfig& c, const std::string& manifest,
                const std::string& out_dir) {
  auto ds = load_manifest(manifest, c.view, c.abn_type);
  fs::create_directories(out_dir);
  std::ofstream man(fs::path(out_dir) / "manifest.csv");
  man << kManifestHeader << "\n";
  std::int64_t emitted = 0;
  for (const auto& s : ds.samples) {
    for (std::int64_t k = 0; k < c.count; ++k) {
      auto p = augment_sample(s, c.seed + static_cast<std::uint64_t>(k),
                              c.roi);
      const std::string stem = s.id + "_aug" + std::to_string(k);
      write_pgm((fs::path(out_dir) / (stem + "_img.pgm")).string(), p.image);
      write_mask((fs::path(out_dir) / (stem + "_mask.pgm")).string(), p.mask);
      Sample out = s;
      out.id = stem;
      out.image_path = stem + "_img.pgm";
      out.mask_path = stem + "_mask.pgm";
      out.center_x = c.roi / 2;
      out.center_y = c.roi / 2;
      out.markers.clear();
      man << manifest_row(out) << "\n";
      std::cout << "augmented " << stem << " angle " << p.angle << "\n";
      ++emitted;
    }
  }
  write_resolved(c, out_dir, "augment");
  std::cout << "wrote " << emitted << " pseudo-sample pairs to " << out_dir
            << "\n";
  return 0;
}

// -------------------------------------------------------------------- shapes

int run_shapes(const RunConfig& c, bool verify) {
  auto g = build_arch<double>(c.arch, c.model());
  if (!verify) {
    for (const auto& row : shape_table(g)) {
      std::cout << row.id;
      if (row.table_layer > 0) std::cout << " layer=" << row.table_layer;
      std::cout << " " << row.shape.chw_str() << "\n";
    }
    return 0;
  }

  auto rep = verify_table1(g);
  if (!rep.applicable) {
    std::cerr << "shapes: " << rep.note << "\n";
    return 1;
  }
  std::cout << "input 1x1024x1024 " << (rep.input_pass ? "PASS" : "FAIL")
            << "\n";
  for (const auto& row : rep.rows) {
    std::cout << "layer " << row.layer << " expect "
              << row.expected.chw_str() << " " << (row.pass ? "PASS" : "FAIL");
    if (!row.note.empty()) std::cout << " (" << row.note << ")";
    std::cout << "\n";
  }
  std::cout << "output 1x1024x1024 " << (rep.output_pass ? "PASS" : "FAIL")
            << "\n";
  std::cout << (rep.all_pass ? "conformance PASS" : "conformance FAIL")
            << "\n";
  return rep.all_pass ? 0 : 1;
}

// --------------------------------------------------------------------- train

template <typename T>
int run_train_typed(const RunConfig& c, const std::string& manifest,
                    const std::string& out_dir) {
  auto ds = load_manifest(manifest, c.view, c.abn_type);
  if (ds.samples.empty()) fail("train: no samples after filtering");
  std::vector<TrainSample<T>> train_set;
  for (const auto& s : ds.samples) {
    if (s.split != "train") continue;
    TrainSample<T> ts;
    ts.id = s.id;
    ts.abn_type = s.abn_type;
    ts.input = to_tensor<T>(read_pgm(s.image_path));
    ts.target = mask_to_tensor<T>(read_mask(s.mask_path));
    train_set.push_back(std::move(ts));
  }
  if (train_set.empty()) fail("train: no samples in the train split");

  auto g = build_arch<T>(c.arch, c.model());
  std::mt19937_64 rng(c.seed);
  init_params(g, rng);
  const TrainConfig tc = c.training();
  auto st = init_adam(g, tc.adam);

  auto log = train(g, st, train_set, tc);
  fs::create_directories(out_dir);
  std::ofstream lf(fs::path(out_dir) / "train_log.csv");
  lf << "epoch,loss,seconds,stopped_early\n";
  for (const auto& e : log.entries) {
    lf << e.epoch << "," << e.loss << "," << e.seconds << ","
       << (e.stopped_early ? 1 : 0) << "\n";
    std::cout << "epoch " << e.epoch << " loss " << e.loss
              << (e.stopped_early ? " (early stop)" : "") << "\n";
  }

  CheckpointMeta meta;
  meta.precision = c.precision;
  meta.arch = c.arch;
  meta.cfg = c.model();
  const fs::path ckpt = fs::path(out_dir) / "checkpoint.bin";
  checkpoint_save(ckpt.string(), g, st, meta);
  write_resolved(c, out_dir, "train");
  std::cout << "trained " << train_set.size() << " samples for "
            << log.entries.size() << " epochs; checkpoint " << ckpt.string()
            << "\n";
  return 0;
}

// --------------------------------------------------------------------- infer

template <typename T>
int run_infer_typed(const RunConfig& c, const CheckpointMeta& meta,
                    const std::string& ckpt, const std::string& image_path,
                    const std::string& out_dir) {
  auto g = build_arch<T>(meta.arch, meta.cfg);
  auto st = init_adam(g);
  checkpoint_load(ckpt, g, st);

  const Image img = read_pgm(image_path);
  if (img.width != meta.cfg.input_size || img.height != meta.cfg.input_size) {
    fail("infer: image is " + std::to_string(img.width) + "x" +
         std::to_string(img.height) + ", model expects " +
         std::to_string(meta.cfg.input_size) + " square");
  }
  auto out = graph_forward(g, to_tensor<T>(img), false).output(g);

  fs::create_directories(out_dir);
  Image prob;
  prob.width = img.width;
  prob.height = img.height;
  prob.depth = 16;
  prob.pixels.resize(img.pixels.size());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    prob.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(
        std::llround(static_cast<double>(out[i]) * 65535.0));
  }
  const Image mask = binarize(out, static_cast<T>(c.threshold));
  Image empty_gt = mask;
  for (auto& v : empty_gt.pixels) v = 0;

  write_pgm((fs::path(out_dir) / "probability.pgm").string(), prob);
  write_mask((fs::path(out_dir) / "mask.pgm").string(), mask);
  write_ppm((fs::path(out_dir) / "overlay.ppm").string(),
            overlay_render(img, empty_gt, mask));
  write_resolved(c, out_dir, "infer");

  std::int64_t positives = 0;
  for (auto v : mask.pixels) positives += v;
  std::cout << "positive pixels " << positives << " of " << out.numel()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------- eval

template <typename T>
int run_eval_typed(const RunConfig& c, const CheckpointMeta& meta,
                   const std::string& ckpt, const std::string& manifest,
                   const std::string& out_dir) {
  auto g = build_arch<T>(meta.arch, meta.cfg);
  auto st = init_adam(g);
  checkpoint_load(ckpt, g, st);

  auto ds = load_manifest(manifest, c.view, c.abn_type);
  std::vector<EvalSample> samples;
  for (const auto& s : ds.samples) {
    EvalSample e;
    e.id = s.id;
    e.abn_type = s.abn_type;
    e.image = read_pgm(s.image_path);
    e.gt = read_mask(s.mask_path);
    samples.push_back(std::move(e));
  }
  if (samples.empty()) fail("eval: no samples after filtering");

  auto rep = evaluate(g, samples, c.tau, c.min_area,
                      static_cast<T>(c.threshold));
  fs::create_directories(out_dir);
  write_eval_csv((fs::path(out_dir) / "eval.csv").string(), rep);

  // overlays for visual inspection
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto fwd = graph_forward(g, to_tensor<T>(samples[i].image), false);
    const Image pred = binarize(fwd.output(g), static_cast<T>(c.threshold));
    write_ppm((fs::path(out_dir) / (samples[i].id + "_overlay.ppm")).string(),
              overlay_render(samples[i].image, samples[i].gt, pred));
  }
  write_resolved(c, out_dir, "eval");

  std::cout << "samples " << rep.rows.size() << "\n";
  std::cout << "mean_dice " << rep.mean_dice << "\n";
  std::cout << "sensitivity " << rep.sensitivity << "\n";
  std::cout << "specificity " << rep.specificity << "\n";
  for (const auto& [type, acc] : rep.subject_accuracy) {
    std::cout << "subject_accuracy " << type << " " << acc << "\n";
  }
  return 0;
}

// ----------------------------------------------------------------- gradcheck

int run_gradcheck(const RunConfig& c, double tol, bool have_config) {
  RunConfig local = c;
  if (!have_config) {
    // desk-scale default: the smallest full dual-branch network
    local.input_size = 16;
    local.base_channels = 2;
    local.depth = 2;
  }
  auto g = build_arch<double>(local.arch, local.model());
  std::mt19937_64 rng(local.seed);
  init_params(g, rng);
  Tensor<double> x(Shape{1, 1, local.input_size, local.input_size});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = unit(rng);
  Tensor<double> t(x.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = (rng() % 2) ? 1.0 : 0.0;

  auto rep = grad_check(g, x, t, 1e-5, tol);
  std::cout << "max_rel_err " << rep.max_rel_err << " worst "
            << rep.worst_param << " tol " << tol << " "
            << (rep.pass ? "PASS" : "FAIL") << "\n";
  return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"O-net mammography segmentation pipeline"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path, manifest, out_dir, ckpt, image_path;
  bool verify_table = false;
  double tol = 1e-4;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
  };
  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--input-size", cfg.input_size);
    sub->add_option("--base-channels", cfg.base_channels);
    sub->add_option("--depth", cfg.depth);
    sub->add_option("--arch", cfg.arch, "onet or unet");
    sub->add_option("--precision", cfg.precision, "float or double");
  };
  auto add_filter_flags = [&](CLI::App* sub) {
    sub->add_option("--view", cfg.view, "view filter, empty for all");
    sub->add_option("--abn-type", cfg.abn_type, "calc/mass filter");
  };

  auto* pre = app.add_subcommand("preprocess",
                                 "ROI crop, marker removal, equalization");
  pre->add_option("--manifest", manifest)->required();
  pre->add_option("--out", out_dir)->required();
  pre->add_option("--roi", cfg.roi);
  add_config(pre);
  add_filter_flags(pre);

  auto* aug = app.add_subcommand("augment", "rotation pseudo-samples");
  aug->add_option("--manifest", manifest)->required();
  aug->add_option("--out", out_dir)->required();
  aug->add_option("--count", cfg.count);
  aug->add_option("--seed", cfg.seed);
  aug->add_option("--roi", cfg.roi);
  add_config(aug);
  add_filter_flags(aug);

  auto* shp = app.add_subcommand("shapes", "layer shape table / conformance");
  shp->add_flag("--verify-table1", verify_table,
                "check the published 23-row shape table");
  add_config(shp);
  add_model_flags(shp);

  auto* trn = app.add_subcommand("train", "train a network");
  trn->add_option("--manifest", manifest)->required();
  trn->add_option("--out", out_dir)->required();
  trn->add_option("--max-epochs", cfg.max_epochs);
  trn->add_option("--max-steps", cfg.max_steps);
  trn->add_option("--batch", cfg.batch);
  trn->add_option("--stop-delta", cfg.stop_delta);
  trn->add_option("--seed", cfg.seed);
  trn->add_option("--threads", cfg.threads);
  add_config(trn);
  add_model_flags(trn);
  add_filter_flags(trn);

  auto* inf = app.add_subcommand("infer", "probability map + mask + overlay");
  inf->add_option("--checkpoint", ckpt)->required();
  inf->add_option("--image", image_path)->required();
  inf->add_option("--out", out_dir)->required();
  inf->add_option("--threshold", cfg.threshold);
  add_config(inf);

  auto* evl = app.add_subcommand("eval", "metrics over a manifest");
  evl->add_option("--checkpoint", ckpt)->required();
  evl->add_option("--manifest", manifest)->required();
  evl->add_option("--out", out_dir)->required();
  evl->add_option("--tau", cfg.tau);
  evl->add_option("--min-area", cfg.min_area);
  evl->add_option("--threshold", cfg.threshold);
  add_config(evl);
  add_filter_flags(evl);

  auto* grd = app.add_subcommand("gradcheck", "finite-difference check");
  grd->add_option("--tol", tol);
  grd->add_option("--seed", cfg.seed);
  add_config(grd);
  add_model_flags(grd);

  CLI11_PARSE(app, argc, argv);

  try {
    // config file first, then re-parse so explicit flags win
    if (!config_path.empty()) {
      merge_config_file(cfg, config_path);
      CLI::App reparse{""};
      (void)reparse;
      app.clear();
      app.parse(argc, argv);
    }

    if (app.got_subcommand(pre)) return run_preprocess(cfg, manifest, out_dir);
    if (app.got_subcommand(aug)) return run_augment(cfg, manifest, out_dir);
    if (app.got_subcommand(shp)) return run_shapes(cfg, verify_table);
    if (app.got_subcommand(grd)) {
      return run_gradcheck(cfg, tol, !config_path.empty());
    }
    if (app.got_subcommand(trn)) {
      if (cfg.precision == "double") {
        return run_train_typed<double>(cfg, manifest, out_dir);
      }
      if (cfg.precision == "float") {
        return run_train_typed<float>(cfg, manifest, out_dir);
      }
      fail("unknown precision '" + cfg.precision + "'");
    }
    if (app.got_subcommand(inf) || app.got_subcommand(evl)) {
      const CheckpointMeta meta = checkpoint_peek(ckpt);
      if (app.got_subcommand(inf)) {
        return meta.precision == "float"
                   ? run_infer_typed<float>(cfg, meta, ckpt, image_path,
                                            out_dir)
                   : run_infer_typed<double>(cfg, meta, ckpt, image_path,
                                             out_dir);
      }
      return meta.precision == "float"
                 ? run_eval_typed<float>(cfg, meta, ckpt, manifest, out_dir)
                 : run_eval_typed<double>(cfg, meta, ckpt, manifest, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand dispatched\n";
  return 1;
}
