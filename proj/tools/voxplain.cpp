#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "voxplain/attribution/explain.hpp"
#include "voxplain/benchmark/cross_validate.hpp"
#include "voxplain/benchmark/metrics.hpp"
#include "voxplain/io/checkpoint.hpp"
#include "voxplain/io/config.hpp"
#include "voxplain/io/dataset_dir.hpp"
#include "voxplain/io/hierarchy_file.hpp"
#include "voxplain/io/slices.hpp"
#include "voxplain/io/volume_file.hpp"
#include "voxplain/nn/builders.hpp"
#include "voxplain/nn/train.hpp"
#include "voxplain/phantom.hpp"
#include "voxplain/segmentation/hierarchy.hpp"

using namespace voxplain;
namespace fs = std::filesystem;
using voxplain::io::json;
using voxplain::io::RunConfig;

namespace {

/// Options of one subcommand, each bound to a RunConfig key.
struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  RunConfig flags;
  std::vector<std::pair<CLI::Option*, std::string>> bound;

  template <class T>
  Command& add(const std::string& key, T RunConfig::*member, const std::string& help) {
    std::string flag = "--" + key;
    for (char& c : flag) c = c == '_' ? '-' : c;
    if (key == "target") flag = "--class";
    bound.emplace_back(app->add_option(flag, flags.*member, help), key);
    return *this;
  }

  /// Config file (if any) overlaid with the flags given on the command line.
  RunConfig resolve() const {
    RunConfig base = config_path.empty() ? RunConfig{} : io::load_config(config_path);
    std::set<std::string> given;
    for (const auto& [opt, key] : bound) {
      if (opt->count() > 0) given.insert(key);
    }
    RunConfig out = io::overlay(base, flags, given);
    out.resolve();
    return out;
  }
};

Command make_command(CLI::App& parent, const std::string& name, const std::string& description) {
  Command c;
  c.app = parent.add_subcommand(name, description);
  c.app->add_option("--config", c.config_path, "JSON config file; flags override its keys");
  return c;
}

void add_common(Command& c) {
  c.add("output_dir", &RunConfig::output_dir, "directory for artifacts").add("seed", &RunConfig::seed, "random seed");
}

void add_model(Command& c) {
  c.add("profile", &RunConfig::profile, "desk-32 or paper-110")
      .add("architecture", &RunConfig::architecture, "vgg, resnet, resnet-gap or resnet-shallow-gap");
}

void add_training(Command& c) {
  c.add("optimizer", &RunConfig::optimizer, "adam or nesterov-sgd (default depends on architecture)")
      .add("lr", &RunConfig::lr, "learning rate (default depends on optimizer)")
      .add("batch_size", &RunConfig::batch_size, "mini-batch size (default depends on optimizer)")
      .add("epochs", &RunConfig::epochs, "training epochs")
      .add("momentum", &RunConfig::momentum, "Nesterov momentum")
      .add("balanced_batches", &RunConfig::balanced_batches, "class-balanced batches (true/false)");
}

fs::path require_path(const std::string& value, const std::string& key) {
  if (value.empty()) throw std::invalid_argument("missing required setting '" + key + "'");
  return value;
}

fs::path prepare_output(const RunConfig& cfg, const std::string& command) {
  const fs::path out = require_path(cfg.output_dir, "output_dir");
  fs::create_directories(out);
  io::write_atomic(out / (command + ".config.json"), json(cfg).dump(2) + "\n");
  return out;
}

void print_summary(json summary) { std::cout << summary.dump() << std::endl; }

json index_json(const Index3& p) { return json::array({p.x, p.y, p.z}); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

nn::ModelGraph model_for(const RunConfig& cfg) {
  return nn::build_model(nn::parse_architecture(cfg.architecture), nn::parse_profile(cfg.profile));
}

void check_input_dims(const nn::ModelGraph& g, const Dims3& d) {
  if (g.input_dims() != d) {
    throw DataError("model expects input " + g.input_dims().str() + ", data has " + d.str());
  }
}

int run_phantom_gen(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "phantom-gen");
  const auto spec = cfg.phantom_spec();
  auto ds = phantom::generate(spec, cfg.n_per_class);
  if (cfg.set_aside_ad > 0 || cfg.set_aside_nc > 0) {
    phantom::set_aside(ds, static_cast<std::size_t>(cfg.set_aside_ad), static_cast<std::size_t>(cfg.set_aside_nc),
                       cfg.seed);
  }
  io::write_dataset(ds, out);
  const std::size_t lesion = count_nonzero(phantom::lesion_mask(spec));
  print_summary({{"command", "phantom-gen"},
                 {"dataset", (out / "dataset.json").string()},
                 {"samples", ds.size()},
                 {"ad", ds.count(Label::AD, true)},
                 {"nc", ds.count(Label::NC, true)},
                 {"set_aside", ds.size() - ds.working_indices().size()},
                 {"lesion_voxels", lesion},
                 {"lesion_fraction", static_cast<double>(lesion) / static_cast<double>(spec.dims.count())}});
  return 0;
}

int run_train(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "train");
  const auto ds = io::read_dataset(require_path(cfg.data_dir, "data_dir"));
  const auto g = model_for(cfg);
  check_input_dims(g, ds.samples.front().volume.dims());
  const nn::TrainConfig tc = cfg.train_config();
  const auto result = nn::train(g, ds, tc, [](int epoch, double loss) {
    std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, loss);
  });
  const fs::path ckpt = cfg.checkpoint.empty() ? out / "model.ckpt" : fs::path(cfg.checkpoint);
  io::write_checkpoint({g, result.params, tc, result.loss_history}, ckpt);
  json summary = {{"command", "train"},
                  {"checkpoint", ckpt.string()},
                  {"samples", ds.working_indices().size()},
                  {"epochs", tc.epochs},
                  {"resolved", cfg}};
  summary["final_loss"] = result.loss_history.empty() ? json(nullptr) : json(result.loss_history.back());
  print_summary(summary);
  return 0;
}

int run_predict(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "predict");
  const auto ck = io::read_checkpoint(require_path(cfg.checkpoint, "checkpoint"));
  if (!cfg.volume.empty()) {
    const Volume v = io::read_volume(cfg.volume);
    check_input_dims(ck.graph, v.dims());
    const auto cache = nn::forward(ck.graph, ck.params, v);
    const double p_ad = cache.probability(Label::AD);
    print_summary({{"command", "predict"},
                   {"volume", cfg.volume},
                   {"p_ad", p_ad},
                   {"p_nc", cache.probability(Label::NC)},
                   {"predicted", p_ad > 0.5 ? "AD" : "NC"}});
    return 0;
  }
  const auto ds = io::read_dataset(require_path(cfg.data_dir, "data_dir or volume"));
  check_input_dims(ck.graph, ds.samples.front().volume.dims());
  std::vector<const Volume*> vols;
  std::vector<Label> labels;
  for (const auto& s : ds.samples) {
    vols.push_back(&s.volume);
    labels.push_back(s.label);
  }
  const auto probs = nn::predict(ck.graph, ck.params, vols);
  std::string csv = "id,label,p_ad\n";
  for (std::size_t i = 0; i < probs.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof line, ",%s,%.9g\n", std::string(label_name(labels[i])).c_str(), probs[i]);
    csv += ds.samples[i].id + line;
  }
  io::write_atomic(out / "predictions.csv", csv);
  json summary = {{"command", "predict"},
                  {"predictions", (out / "predictions.csv").string()},
                  {"samples", probs.size()},
                  {"accuracy", bench::accuracy(probs, labels)}};
  const bool both = ds.count(Label::AD, true) > 0 && ds.count(Label::NC, true) > 0;
  summary["auc"] = both ? json(bench::roc_auc(probs, labels)) : json(nullptr);
  print_summary(summary);
  return 0;
}

int run_segment(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "segment");
  const Volume v = io::read_volume(require_path(cfg.volume, "volume"));
  const auto h = seg::segment_volume(v, static_cast<std::size_t>(cfg.n_seeds), static_cast<std::size_t>(cfg.n_levels),
                                     cfg.seed);
  const fs::path dir = out / "hierarchy";
  io::write_hierarchy(h, dir);
  print_summary({{"command", "segment"},
                 {"hierarchy", dir.string()},
                 {"levels", h.level_count()},
                 {"segment_counts", h.segment_counts},
                 {"total_segments", h.total_segments()}});
  return 0;
}

int run_explain(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "explain");
  attr::AttributionRequest req;
  req.method = attr::parse_method(cfg.method);
  req.target = parse_label(cfg.target);
  req.half_extent = cfg.half_extent;
  req.fill = cfg.fill;
  req.stride = cfg.stride;
  req.layer = cfg.layer;
  if (req.half_extent < 0 || req.stride < 1) throw std::invalid_argument("bad occlusion half extent or stride");
  const auto ck = io::read_checkpoint(require_path(cfg.checkpoint, "checkpoint"));
  const Volume v = io::read_volume(require_path(cfg.volume, "volume"));
  check_input_dims(ck.graph, v.dims());
  std::optional<seg::SegmentationHierarchy> hierarchy;
  if (req.method == attr::Method::sa_hier) {
    hierarchy = cfg.hierarchy.empty()
                    ? seg::segment_volume(v, static_cast<std::size_t>(cfg.n_seeds),
                                          static_cast<std::size_t>(cfg.n_levels), cfg.seed)
                    : io::read_hierarchy(cfg.hierarchy);
    req.hierarchy = &*hierarchy;
  }
  const auto e = attr::explain(ck.graph, ck.params, v, req);
  const auto [lo, hi] = e.heatmap.range();
  io::HeatmapMeta meta{std::array<double, 2>{lo, hi}, std::nullopt};
  if (!e.layer.empty()) meta.source_layer = e.layer;
  const fs::path path = cfg.heatmap.empty() ? out / "heatmap.vxl" : fs::path(cfg.heatmap);
  io::write_heatmap(e.heatmap, path, meta);
  json summary = {{"command", "explain"},
                  {"method", std::string(attr::method_name(req.method))},
                  {"class", std::string(label_name(req.target))},
                  {"heatmap", path.string()},
                  {"max_voxel", index_json(e.heatmap.argmax())},
                  {"max_score", hi},
                  {"forward_passes", e.forward_passes}};
  if (e.coarse) {
    const fs::path coarse = out / "heatmap_coarse.vxl";
    io::write_heatmap(Heatmap(*e.coarse), coarse, meta);
    summary["layer"] = e.layer;
    summary["coarse"] = coarse.string();
    summary["coarse_dims"] = index_json({e.coarse->dims().x, e.coarse->dims().y, e.coarse->dims().z});
  }
  print_summary(summary);
  return 0;
}

int run_benchmark_pr(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "benchmark-pr");
  const auto heatmap_paths = split_list(require_path(cfg.heatmap, "heatmap").string());
  const auto mask_paths = split_list(require_path(cfg.mask, "mask").string());
  if (heatmap_paths.size() != mask_paths.size()) {
    throw std::invalid_argument("need one mask per heatmap");
  }
  std::vector<Heatmap> heatmaps;
  std::vector<Mask> masks;
  std::size_t positives = 0, voxels = 0;
  for (std::size_t i = 0; i < heatmap_paths.size(); ++i) {
    heatmaps.push_back(io::read_heatmap(heatmap_paths[i]).heatmap);
    masks.push_back(io::read_mask(mask_paths[i]));
    positives += count_nonzero(masks.back());
    voxels += masks.back().size();
  }
  const auto curve = bench::pr_curve_pooled(heatmaps, masks);
  const double auc = cfg.pr_mode == "mean" ? bench::mean_pr_auc(heatmaps, masks) : bench::pr_auc(curve);
  std::string csv = "threshold,precision,recall\n";
  for (const auto& p : curve) {
    char line[96];
    std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", p.threshold, p.precision, p.recall);
    csv += line;
  }
  io::write_atomic(out / "pr.csv", csv);
  print_summary({{"command", "benchmark pr"},
                 {"csv", (out / "pr.csv").string()},
                 {"pr_auc", auc},
                 {"mode", cfg.pr_mode},
                 {"heatmaps", heatmaps.size()},
                 {"random_baseline", static_cast<double>(positives) / static_cast<double>(voxels)}});
  return 0;
}

int run_benchmark_cv(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "benchmark-cv");
  const auto ds = io::read_dataset(require_path(cfg.data_dir, "data_dir"));
  const auto arch = nn::parse_architecture(cfg.architecture);
  const auto profile = nn::parse_profile(cfg.profile);
  check_input_dims(nn::build_model(arch, profile), ds.samples.front().volume.dims());
  const auto report = bench::cross_validate(
      ds, [&] { return nn::build_model(arch, profile); }, cfg.train_config(),
      {.splits = cfg.splits, .folds = cfg.folds, .seed = cfg.seed}, std::string(nn::architecture_title(arch)));
  std::string csv = "split,fold,train,test,auc,acc\n";
  for (const auto& r : report.rounds) {
    char line[128];
    std::snprintf(line, sizeof line, "%d,%d,%zu,%zu,%.9g,%.9g\n", r.split, r.fold, r.train_ids.size(),
                  r.test_ids.size(), r.auc, r.acc);
    csv += line;
  }
  io::write_atomic(out / "cv.csv", csv);
  print_summary({{"command", "benchmark cv"},
                 {"csv", (out / "cv.csv").string()},
                 {"rounds", report.rounds.size()},
                 {"auc_mean", report.auc.mean},
                 {"auc_std", report.auc.std},
                 {"acc_mean", report.acc.mean},
                 {"acc_std", report.acc.std},
                 {"leak_free", bench::leak_free(report, ds)},
                 {"table_row", report.table_row()}});
  return 0;
}

int run_export_slices(const RunConfig& cfg) {
  const fs::path out = prepare_output(cfg, "export-slices");
  const Heatmap h = io::read_heatmap(require_path(cfg.heatmap, "heatmap")).heatmap;
  const Volume v = io::read_volume(require_path(cfg.volume, "volume"));
  const std::optional<int> index = cfg.slice_index < 0 ? std::nullopt : std::optional<int>(cfg.slice_index);
  json files = json::object();
  for (const auto& name : split_list(cfg.axes)) {
    const io::Axis axis = io::parse_axis(name);
    const auto slice = io::render_slice(h, v, axis, index, cfg.alpha);
    const fs::path path = out / ("slice_" + std::string(io::axis_name(axis)) + ".pgm");
    io::write_pgm(slice, path);
    files[std::string(io::axis_name(axis))] = {
        {"path", path.string()}, {"index", index.value_or(io::center_index(io::slice_depth(v.dims(), axis)))}};
  }
  print_summary({{"command", "export-slices"}, {"slices", files}, {"alpha", cfg.alpha}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxplain: 3D CNN classification and attribution heatmaps for volumetric scans"};
  app.require_subcommand(1);

  Command gen = make_command(app, "phantom-gen", "generate a synthetic labeled dataset with a known lesion");
  add_common(gen);
  gen.add("n_per_class", &RunConfig::n_per_class, "samples per class")
      .add("dims", &RunConfig::dims, "volume dims x y z")
      .add("noise_amplitude", &RunConfig::noise_amplitude, "background noise amplitude")
      .add("correlation_length", &RunConfig::correlation_length, "smoothing width in voxels")
      .add("lesion_shape", &RunConfig::lesion_shape, "cuboid or ellipsoid")
      .add("lesion_origin", &RunConfig::lesion_origin, "lesion lower corner x y z")
      .add("lesion_extent", &RunConfig::lesion_extent, "lesion box extent x y z")
      .add("delta", &RunConfig::delta, "AD intensity offset inside the lesion")
      .add("set_aside_ad", &RunConfig::set_aside_ad, "AD samples reserved for explanation")
      .add("set_aside_nc", &RunConfig::set_aside_nc, "NC samples reserved for explanation");

  Command trn = make_command(app, "train", "train a classifier on a dataset directory");
  add_common(trn);
  add_model(trn);
  add_training(trn);
  trn.add("data_dir", &RunConfig::data_dir, "dataset directory")
      .add("checkpoint", &RunConfig::checkpoint, "checkpoint path (default <output-dir>/model.ckpt)");

  Command pred = make_command(app, "predict", "class probabilities for a volume or a dataset");
  add_common(pred);
  pred.add("checkpoint", &RunConfig::checkpoint, "trained checkpoint")
      .add("volume", &RunConfig::volume, "single volume file")
      .add("data_dir", &RunConfig::data_dir, "dataset directory");

  Command segc = make_command(app, "segment", "hierarchical supervoxel segmentation of a volume");
  add_common(segc);
  segc.add("volume", &RunConfig::volume, "volume file")
      .add("n_seeds", &RunConfig::n_seeds, "oversegmentation seeds")
      .add("n_levels", &RunConfig::n_levels, "hierarchy levels (1..20)");

  Command expl = make_command(app, "explain", "attribution heatmap for one volume");
  add_common(expl);
  expl.add("checkpoint", &RunConfig::checkpoint, "trained checkpoint")
      .add("volume", &RunConfig::volume, "volume file")
      .add("method", &RunConfig::method, "baseline, sa-hier, cam or grad-cam")
      .add("target", &RunConfig::target, "class to explain: AD or NC")
      .add("layer", &RunConfig::layer, "conv layer for grad-cam (last-conv by default)")
      .add("half_extent", &RunConfig::half_extent, "occlusion cube half extent")
      .add("fill", &RunConfig::fill, "occlusion fill value")
      .add("stride", &RunConfig::stride, "occlusion center stride")
      .add("hierarchy", &RunConfig::hierarchy, "hierarchy directory for sa-hier")
      .add("n_seeds", &RunConfig::n_seeds, "oversegmentation seeds when no hierarchy is given")
      .add("n_levels", &RunConfig::n_levels, "hierarchy levels when no hierarchy is given")
      .add("heatmap", &RunConfig::heatmap, "heatmap output path (default <output-dir>/heatmap.vxl)");

  CLI::App* bench_app = app.add_subcommand("benchmark", "localization and classification benchmarks");
  bench_app->require_subcommand(1);
  Command pr = make_command(*bench_app, "pr", "PR curve of heatmaps against masks");
  add_common(pr);
  pr.add("heatmap", &RunConfig::heatmap, "heatmap file(s), comma separated")
      .add("mask", &RunConfig::mask, "mask file(s), comma separated, one per heatmap")
      .add("pr_mode", &RunConfig::pr_mode, "pooled or mean");
  Command cv = make_command(*bench_app, "cv", "repeated stratified cross-validation");
  add_common(cv);
  add_model(cv);
  add_training(cv);
  cv.add("data_dir", &RunConfig::data_dir, "dataset directory")
      .add("splits", &RunConfig::splits, "random splits")
      .add("folds", &RunConfig::folds, "folds per split");

  Command slices = make_command(app, "export-slices", "PGM slices of a heatmap blended over its volume");
  add_common(slices);
  slices.add("heatmap", &RunConfig::heatmap, "heatmap file")
      .add("volume", &RunConfig::volume, "volume file")
      .add("axes", &RunConfig::axes, "comma separated subset of horizontal,sagittal,coronal")
      .add("slice_index", &RunConfig::slice_index, "slice index (-1 for center)")
      .add("alpha", &RunConfig::alpha, "heatmap weight in the blend");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen.app) return run_phantom_gen(gen.resolve());
    if (*trn.app) return run_train(trn.resolve());
    if (*pred.app) return run_predict(pred.resolve());
    if (*segc.app) return run_segment(segc.resolve());
    if (*expl.app) return run_explain(expl.resolve());
    if (*pr.app) return run_benchmark_pr(pr.resolve());
    if (*cv.app) return run_benchmark_cv(cv.resolve());
    if (*slices.app) return run_export_slices(slices.resolve());
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
