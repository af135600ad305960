// firenet: command-line front end. Every command reads and writes the
// formats in firenet/io.hpp; errors print one line and exit with status 2.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "firenet/error.hpp"
#include "firenet/fabric.hpp"
#include "firenet/io.hpp"
#include "firenet/ops.hpp"
#include "firenet/synthdata.hpp"
#include "firenet/train.hpp"
#include "gradcheck_suite.hpp"

using namespace firenet;

namespace {

// ---- gen-data -------------------------------------------------------------

int gen_data(const std::string& spec_path, const std::string& out) {
  const SyntheticSpec spec = SyntheticSpec::from_text(read_file(spec_path));
  const DatasetBundle bundle = generate(spec);
  save_bundle(out, bundle, spec.seed);
  for (const auto& d : bundle.datasets) {
    std::cout << d.name << ": " << d.train.size() << " train, " << d.val.size() << " val, "
              << d.num_classes() << " classes\n";
  }
  return 0;
}

// ---- train ----------------------------------------------------------------

// Keeps the header and the rows of the first `epochs` epochs, so a resumed run
// continues the file where the state it resumed from left off.
std::string metrics_prefix(const fs::path& path, int epochs, int classes) {
  std::string out = metrics_header(classes) + "\n";
  if (epochs == 0 || !fs::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);  // header
  for (int e = 0; e < epochs && std::getline(in, line); ++e) out += line + "\n";
  return out;
}

int train(const std::string& bundle_dir, const std::string& config_path, uint64_t seed,
          const std::string& out_dir, const std::string& init, int replace_head) {
  TrainConfig config = TrainConfig::from_text(read_file(config_path));
  if (replace_head > 0 && init.empty()) throw ConfigError("--replace-head needs --init");
  if (replace_head > 0 && replace_head != config.network.num_classes) {
    throw ConfigError("--replace-head " + std::to_string(replace_head) + " but the config has num_classes = " +
                      std::to_string(config.network.num_classes));
  }
  const DatasetBundle bundle = load_bundle(bundle_dir);
  const fs::path out(out_dir);
  fs::create_directories(out);
  const fs::path state_path = out / "state.ckpt", metrics_path = out / "metrics.csv";

  Network net = [&] {
    if (fs::exists(state_path) || init.empty()) return Network(config.network, seed);
    return load_for_transfer(load_checkpoint_file(init), config.network, replace_head, seed);
  }();
  Trainer trainer(net, bundle, config, seed);
  if (fs::exists(state_path)) {
    restore_state(load_checkpoint_file(state_path), net, trainer);
    std::cout << "resuming after epoch " << trainer.state().epoch << "\n";
  }
  write_file_atomic(out / "config.txt", config.to_text());
  const int classes = bundle.num_classes();
  std::string metrics = metrics_prefix(metrics_path, trainer.state().epoch, classes);
  write_file_atomic(metrics_path, metrics);

  trainer.run([&](const EpochRecord& r) {
    metrics += metrics_row(r) + "\n";
    write_file_atomic(metrics_path, metrics);
    if (r.improved) {
      Checkpoint best = capture(net);
      best.training = {{"epoch", std::to_string(r.epoch)}, {"score", std::to_string(r.score)}};
      save_checkpoint(out / "best.ckpt", best);
    }
    save_checkpoint(state_path, capture_state(net, trainer));
    std::printf("epoch %d stage %d loss %.5f score %.4f%s\n", r.epoch, r.stage, r.mean_loss, r.score,
                r.improved ? " *" : "");
    std::fflush(stdout);
  });
  const auto& s = trainer.state();
  std::cout << "done after " << s.epoch << " epochs; best score " << s.best_score << " at epoch "
            << s.best_epoch << "\n";
  return 0;
}

// ---- infer / eval ---------------------------------------------------------

int infer(const std::string& ckpt, const std::string& in, const std::string& out) {
  const Network net = load_network(ckpt);
  const Volume v = load_volume(in);
  const Tensor5 prob = net.predict(volume_tensor(v));
  save_volume(out, label_volume(argmax_channels(prob), v.dims, v.spacing));
  return 0;
}

int eval(const std::string& ckpt, const std::string& bundle_dir, const std::string& split,
         const std::string& out) {
  const Network net = load_network(ckpt);
  const DatasetBundle bundle = load_bundle(bundle_dir);
  const EvalReport report = evaluate(net, bundle, parse_split(split));
  const fs::path path(out);
  write_file_atomic(path, report.summary_csv());
  write_file_atomic(path.parent_path() / (path.stem().string() + "_cases.csv"), report.cases_csv());
  for (const auto& d : bundle.datasets) {
    std::printf("%s: mean foreground DSC %.4f\n", d.name.c_str(), report.mean_foreground_dsc(d.name));
  }
  return 0;
}

// ---- analyze --------------------------------------------------------------

void print_rf(const char* label, const std::set<int64_t>& s) {
  std::cout << label << " {";
  bool first = true;
  for (int64_t v : s) {
    std::cout << (first ? "" : ",") << v;
    first = false;
  }
  std::cout << "}\n";
}

int analyze(const std::string& config_path) {
  // A training config holds the network keys too.
  const NetworkConfig cfg = TrainConfig::from_text(read_file(config_path)).network;
  const FabricGraph g = build_graph(cfg.fabric);
  std::cout << "fabric W=" << cfg.fabric.W << " N=" << cfg.fabric.N << " C=" << cfg.fabric.C << "\n";
  std::cout << "channel plan (rows i = 1.." << cfg.fabric.N << ", columns j = 1.." << cfg.fabric.W << ")\n";
  for (int i = 1; i <= cfg.fabric.N; ++i) {
    std::cout << "i=" << i << ":";
    for (int j = 1; j <= cfg.fabric.W; ++j) std::cout << " " << g.plan.at({i, j});
    std::cout << "\n";
  }
  print_rf("receptive fields (dilated extent):", receptive_field_enumeration(cfg.fabric, ExtentRule::Dilated));
  print_rf("receptive fields (ordinal extent):", receptive_field_enumeration(cfg.fabric, ExtentRule::Ordinal));
  const Network net(cfg, 0);
  std::cout << "parameters: " << net.parameters().scalar_count() << " in " << net.parameters().size()
            << " tensors\n";
  std::cout << "minimum input extent: " << cfg.min_extent() << "\n";
  std::cout << "edges: " << g.split_edges.size() << " split, " << g.forward_edges.size() << " forward, "
            << g.residual_edges.size() << " residual, " << g.merge_edges.size() << " merge\n";
  for (const auto* list : {&g.split_edges, &g.forward_edges, &g.residual_edges, &g.merge_edges}) {
    for (const auto& e : *list) std::cout << "  " << e.str() << "\n";
  }
  return 0;
}

// ---- gradcheck ------------------------------------------------------------

int gradcheck(bool full) {
  int failed = 0;
  testing::run_gradcheck_suite(full, [&](const testing::SuiteEntry& e) {
    failed += !e.passed();
    std::printf("%-4s %-40s max rel %.3e (tol %.0e, %lld coords, %.1f s)\n", e.passed() ? "ok" : "FAIL",
                e.name.c_str(), e.report.max_rel_error, e.report.tolerance,
                static_cast<long long>(e.report.coords_checked), e.seconds);
    if (!e.passed()) std::printf("     worst %s\n", e.report.worst.c_str());
    if (e.float_report) {
      std::printf("     float reverse mode: max rel %.3e, worst %s\n", e.float_report->max_rel_error,
                  e.float_report->worst.c_str());
    }
    std::fflush(stdout);
  });
  std::printf("%s\n", failed ? "gradcheck FAILED" : "gradcheck passed");
  return failed ? 1 : 0;
}

// ---- export-features ------------------------------------------------------

// "1:1,2:3" or "all".
std::vector<CellCoord> parse_cells(const std::string& list, const FabricConfig& f) {
  std::vector<CellCoord> out;
  if (list == "all") {
    for (int i = 1; i <= f.N; ++i) {
      for (int j = 1; j <= f.W; ++j) out.push_back({i, j});
    }
    return out;
  }
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto colon = item.find(':');
    CellCoord c;
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      c.i = std::stoi(item.substr(0, colon));
      c.j = std::stoi(item.substr(colon + 1));
    } catch (const std::logic_error&) {
      throw ConfigError("cell '" + item + "' is not of the form i:j");
    }
    if (c.i < 1 || c.i > f.N || c.j < 1 || c.j > f.W) {
      throw ConfigError("cell " + item + " is outside the " + std::to_string(f.N) + " x " +
                        std::to_string(f.W) + " fabric");
    }
    out.push_back(c);
  }
  if (out.empty()) throw ConfigError("no cells given");
  return out;
}

int export_features(const std::string& ckpt, const std::string& in, const std::string& cells,
                    const std::string& out_dir) {
  const Network net = load_network(ckpt);
  const Volume v = load_volume(in);
  fs::create_directories(out_dir);
  for (const auto& [name, t] : net.export_feature_maps(volume_tensor(v), parse_cells(cells, net.config().fabric))) {
    save_volume(fs::path(out_dir) / (name + ".vol"), image_volume(t, v.spacing));
    std::cout << name << " " << t.shape().str() << "\n";
  }
  return 0;
}

// ---- augment-preview ------------------------------------------------------

int augment_preview(const std::string& in, const std::string& labels, const std::string& spec_path,
                    uint64_t seed, const std::string& out_dir) {
  const Volume img = load_volume(in), lab = load_volume(labels);
  if (img.dims != lab.dims) throw ShapeError("image and label volumes have different extents");
  SamplePair pair;
  pair.name = fs::path(in).stem().string();
  pair.image = volume_tensor(img);
  pair.labels = volume_labels(lab);
  pair.spacing = img.spacing;
  const AugmentSpec spec = AugmentSpec::from_text(read_file(spec_path));
  Rng rng(seed);
  const AugmentParams p = sample_params(spec, rng);
  const SamplePair outp = apply_params(pair, p);
  const fs::path out(out_dir);
  fs::create_directories(out);
  save_volume(out / "image.vol", image_volume(outp.image, outp.spacing));
  save_volume(out / "labels.vol", label_volume(outp.labels, outp.extent(), outp.spacing, lab.class_names));
  std::ostringstream os;
  os.precision(17);
  os << "translation = " << p.translation[0] << " " << p.translation[1] << " " << p.translation[2] << "\n"
     << "rotation_deg = " << p.rotation_deg[0] << " " << p.rotation_deg[1] << " " << p.rotation_deg[2] << "\n"
     << "affine =";
  for (const auto& row : p.affine) {
    for (double a : row) os << " " << a;
  }
  os << "\nelastic_alpha = " << p.elastic_alpha << "\nelastic_sigma = " << p.elastic_sigma
     << "\nelastic_seed = " << p.elastic_seed << "\n";
  write_file_atomic(out / "params.txt", os.str());
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"firenet: 3D segmentation with a dense residual fabric"};
  app.require_subcommand(1);

  std::string spec, out, bundle, config, init, ckpt, in, split = "val", cells, labels;
  uint64_t seed = 1;
  int replace_head = 0;
  bool full = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset bundle");
  gen->add_option("--spec", spec, "Synthetic data spec")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train; resumes from OUT/state.ckpt when present");
  tr->add_option("--bundle", bundle, "Dataset bundle directory")->required();
  tr->add_option("--config", config, "Training config")->required();
  tr->add_option("--seed", seed, "Initialisation and sampling seed");
  tr->add_option("--out", out, "Run directory")->required();
  auto* init_opt = tr->add_option("--init", init, "Start from this checkpoint's weights");
  tr->add_option("--replace-head", replace_head, "Re-initialise the head for K classes")->needs(init_opt);

  auto* inf = app.add_subcommand("infer", "Segment one volume");
  inf->add_option("--ckpt", ckpt)->required();
  inf->add_option("--in", in)->required();
  inf->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "Per-class DSC and MSD on a bundle split");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--bundle", bundle)->required();
  ev->add_option("--split", split)->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--out", out, "Summary CSV; cases go to <stem>_cases.csv")->required();

  auto* an = app.add_subcommand("analyze", "Channel plan, receptive fields, parameter count, edges");
  an->add_option("--config", config)->required();

  auto* gc = app.add_subcommand("gradcheck", "Gradient checks of every layer and composition");
  gc->add_flag("--full", full, "Include the end-to-end network at 24^3");

  auto* ex = app.add_subcommand("export-features", "Write fabric cell outputs as volumes");
  ex->add_option("--ckpt", ckpt)->required();
  ex->add_option("--in", in)->required();
  ex->add_option("--cells", cells, "i:j[,i:j...] or all")->required();
  ex->add_option("--out", out)->required();

  auto* ap = app.add_subcommand("augment-preview", "Apply one sampled augmentation");
  ap->add_option("--in", in)->required();
  ap->add_option("--labels", labels)->required();
  ap->add_option("--spec", spec)->required();
  ap->add_option("--seed", seed);
  ap->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return gen_data(spec, out);
    if (tr->parsed()) return train(bundle, config, seed, out, init, replace_head);
    if (inf->parsed()) return infer(ckpt, in, out);
    if (ev->parsed()) return eval(ckpt, bundle, split, out);
    if (an->parsed()) return analyze(config);
    if (gc->parsed()) return gradcheck(full);
    if (ex->parsed()) return export_features(ckpt, in, cells, out);
    if (ap->parsed()) return augment_preview(in, labels, spec, seed, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
