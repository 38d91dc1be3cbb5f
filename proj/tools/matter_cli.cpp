// matter: command-line front end.
//
// Exit codes: 0 success, 1 usage or configuration error (and failed
// acceptance criteria for `eval`), 2 data or shape error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "matter/acceptance.hpp"
#include "matter/checkpoint.hpp"
#include "matter/config.hpp"
#include "matter/errors.hpp"
#include "matter/image_io.hpp"
#include "matter/parallel.hpp"
#include "matter/tasks.hpp"

namespace fs = std::filesystem;
using namespace matter;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides,
                  "override one configuration key, as key=value (repeatable)");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : parse_config(c.config);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

MultiSpectralImage load_raster_image(const fs::path& path) {
  MultiSpectralImage img;
  img.pixels = read_raster(path);
  img.validate();
  return img;
}

void dump_tern(const fs::path& dir, const std::string& stem, const Model& model,
               const MultiSpectralImage& img) {
  const StemMaps maps = stem_maps(model.params, model.backbone, img.pixels);
  fs::create_directories(dir);
  write_raster(dir / (stem + "_stem.msr"), maps.before);
  write_raster(dir / (stem + "_refined.msr"), maps.after);
  auto mean_abs = [](const Tensor& t) {
    Tensor m({t.dim(1), t.dim(2)});
    for (int c = 0; c < t.dim(0); ++c)
      for (int y = 0; y < t.dim(1); ++y)
        for (int x = 0; x < t.dim(2); ++x) m.at(y, x) += std::abs(t.at(c, y, x)) / t.dim(0);
    return m;
  };
  write_png_heatmap(dir / (stem + "_stem.png"), mean_abs(maps.before));
  write_png_heatmap(dir / (stem + "_refined.png"), mean_abs(maps.after));
}

LoadedCheckpoint open_checkpoint(const std::string& path, bool allow_mismatch,
                                 const Common& common) {
  if (common.config.empty() && common.overrides.empty()) return load_checkpoint(path);
  const RunConfig expected = load_config(common);
  return load_checkpoint(path, &expected, allow_mismatch);
}

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad size list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty size list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matter: self-supervised material and texture representations"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "worker threads (default: MATTER_THREADS, else 1); results do not depend on it")
      ->check(CLI::PositiveNumber);

  // synth
  Common synth_c;
  std::string synth_out = "synth";
  auto* synth = app.add_subcommand("synth", "generate the synthetic multi-temporal texture corpus");
  add_common(synth, synth_c);
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  // pretrain
  Common pre_c;
  std::string pre_catalog, pre_out, pre_resume;
  bool pre_allow = false;
  auto* pre = app.add_subcommand("pretrain", "contrastive pre-training on a catalog");
  add_common(pre, pre_c);
  pre->add_option("--catalog", pre_catalog, "catalog manifest (overrides paths.catalog)");
  pre->add_option("--out", pre_out, "output directory (overrides paths.output)");
  pre->add_option("--resume", pre_resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  pre->add_flag("--allow-config-mismatch", pre_allow,
                "resume even if the checkpoint was trained with a different configuration");

  // change
  Common ch_c;
  std::string ch_before, ch_after, ch_ckpt, ch_truth, ch_out = "change", ch_dump;
  int ch_win = 0;
  bool ch_png = false, ch_allow = false;
  auto* change = app.add_subcommand("change", "dense change detection between two rasters");
  add_common(change, ch_c);
  change->add_option("--before", ch_before, "first raster (MSR1)")->required()->check(CLI::ExistingFile);
  change->add_option("--after", ch_after, "second raster (MSR1)")->required()->check(CLI::ExistingFile);
  change->add_option("--checkpoint", ch_ckpt, "trained model")->required()->check(CLI::ExistingFile);
  change->add_option("--truth", ch_truth, "ground-truth change mask; adds a metric report")
      ->check(CLI::ExistingFile);
  change->add_option("--window", ch_win, "inference window (default: infer.window of the model)");
  change->add_option("--out", ch_out, "output directory")->capture_default_str();
  change->add_flag("--png", ch_png, "also write score.png and mask.png");
  change->add_option("--dump-tern", ch_dump,
                     "write stem activations before and after refinement to this directory");
  change->add_flag("--allow-config-mismatch", ch_allow, "accept a checkpoint from another configuration");

  // wordmap
  Common wm_c;
  std::string wm_image, wm_ckpt, wm_labels, wm_out = "wordmap", wm_dump;
  int wm_win = 0;
  bool wm_png = false, wm_allow = false;
  auto* wordmap = app.add_subcommand("wordmap", "per-pixel visual word assignment");
  add_common(wordmap, wm_c);
  wordmap->add_option("--image", wm_image, "input raster (MSR1)")->required()->check(CLI::ExistingFile);
  wordmap->add_option("--checkpoint", wm_ckpt, "trained model")->required()->check(CLI::ExistingFile);
  wordmap->add_option("--labels", wm_labels, "class label raster; adds per-class purity")
      ->check(CLI::ExistingFile);
  wordmap->add_option("--window", wm_win, "inference window (default: infer.window of the model)");
  wordmap->add_option("--out", wm_out, "output directory")->capture_default_str();
  wordmap->add_flag("--png", wm_png, "also write words.png with a seeded palette");
  wordmap->add_option("--dump-tern", wm_dump,
                      "write stem activations before and after refinement to this directory");
  wordmap->add_flag("--allow-config-mismatch", wm_allow, "accept a checkpoint from another configuration");

  // eval
  std::string ev_work = "acceptance_work";
  std::vector<std::string> ev_only;
  auto* eval = app.add_subcommand("eval", "run the acceptance suite A1-A9");
  eval->add_option("--work", ev_work, "scratch directory for data and models")->capture_default_str();
  eval->add_option("--only", ev_only, "restrict to these criteria, e.g. --only A1 A3")
      ->check(CLI::IsMember({"A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9"}));

  // sweep
  Common sw_c;
  std::string sw_catalog, sw_heldout, sw_train = "7,17", sw_infer = "9", sw_out;
  auto* sweep = app.add_subcommand("sweep", "receptive-field grid: train size x inference size");
  add_common(sweep, sw_c);
  sweep->add_option("--catalog", sw_catalog, "catalog manifest (overrides paths.catalog)");
  sweep->add_option("--heldout", sw_heldout, "directory holding index.tsv of change pairs")
      ->required()
      ->check(CLI::ExistingDirectory);
  sweep->add_option("--train-sizes", sw_train, "comma-separated patch sizes")->capture_default_str();
  sweep->add_option("--infer-sizes", sw_infer, "comma-separated window sizes")->capture_default_str();
  sweep->add_option("--out", sw_out, "write the grid here instead of stdout");

  // inspect
  std::string in_ckpt;
  auto* inspect = app.add_subcommand("inspect", "summarise a checkpoint");
  inspect->add_option("checkpoint", in_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << app.help();
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (threads > 0) {
      set_thread_count(threads);
    }

    if (*synth) {
      const RunConfig cfg = load_config(synth_c);
      const SynthOutput out = synth_generate(cfg.synth, synth_out);
      std::cout << "catalog\t" << out.manifest.string() << '\n'
                << "images\t" << out.catalog.size() << '\n'
                << "heldout_pairs\t" << out.pairs.size() << '\n'
                << "mosaic\t" << out.mosaic.string() << '\n';
      return kOk;
    }

    if (*pre) {
      RunConfig cfg = load_config(pre_c);
      if (!pre_catalog.empty()) cfg.paths.catalog = pre_catalog;
      if (!pre_out.empty()) cfg.paths.output = pre_out;
      if (cfg.paths.catalog.empty()) throw ConfigError("pretrain needs --catalog or paths.catalog");
      const fs::path out_dir = cfg.paths.output;
      const fs::path ckpt =
          cfg.paths.checkpoint.empty() ? out_dir / "model.mtck" : fs::path(cfg.paths.checkpoint);
      const Corpus corpus = Corpus::load(filter_catalog(read_manifest(cfg.paths.catalog)));
      if (corpus.images.empty()) throw DataError("no catalog entries survive filtering");
      TrainState state = initial_state(cfg);
      if (!pre_resume.empty()) state = load_checkpoint(pre_resume, &cfg, pre_allow).state;
      PretrainHooks hooks;
      hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(ckpt, s, cfg); };
      hooks.on_step = [&](int it, double loss) {
        if (it % 100 == 0 || it == cfg.train.iterations)
          std::cerr << "iteration " << it << "\tloss " << loss << '\n';
      };
      pretrain(corpus, cfg.train_config(), state, hooks);
      write_loss_curve(out_dir / "loss.tsv", state.loss_history);
      std::cout << "checkpoint\t" << ckpt.string() << '\n'
                << "iterations\t" << state.iteration << '\n'
                << "final_loss\t" << (state.loss_history.empty() ? 0.0 : state.loss_history.back())
                << '\n';
      return kOk;
    }

    if (*change) {
      const LoadedCheckpoint ck = open_checkpoint(ch_ckpt, ch_allow, ch_c);
      const int win = ch_win > 0 ? ch_win : ck.config.infer_window;
      const MultiSpectralImage before = load_raster_image(ch_before);
      const MultiSpectralImage after = load_raster_image(ch_after);
      const ChangeMap map = detect_change(before, after, ck.state.model, win);
      const fs::path out(ch_out);
      fs::create_directories(out);
      write_raster(out / "score.msr", map.score.reshaped({1, map.score.dim(0), map.score.dim(1)}));
      write_raster(out / "mask.msr", map.mask.reshaped({1, map.mask.dim(0), map.mask.dim(1)}));
      if (ch_png) {
        write_png_gray(out / "score.png", map.score);
        write_png_gray(out / "mask.png", map.mask);
      }
      if (!ch_dump.empty()) {
        dump_tern(ch_dump, "before", ck.state.model, before);
        dump_tern(ch_dump, "after", ck.state.model, after);
      }
      std::cout << "threshold\t" << map.threshold << '\n'
                << "degenerate\t" << (map.degenerate ? 1 : 0) << '\n';
      if (!ch_truth.empty()) {
        const Tensor truth = read_raster(ch_truth);
        const std::string report = metric_report(prf1(map.mask, truth.reshaped(map.mask.shape())));
        write_text(out / "metrics.tsv", report);
        std::cout << report;
      }
      return kOk;
    }

    if (*wordmap) {
      const LoadedCheckpoint ck = open_checkpoint(wm_ckpt, wm_allow, wm_c);
      const int win = wm_win > 0 ? wm_win : ck.config.infer_window;
      const MultiSpectralImage img = load_raster_image(wm_image);
      const WordMap words = word_map(img, ck.state.model, win);
      const fs::path out(wm_out);
      fs::create_directories(out);
      Tensor raster({1, words.height, words.width});
      for (std::size_t i = 0; i < words.words.size(); ++i)
        raster[i] = static_cast<float>(words.words[i]);
      write_raster(out / "words.msr", raster);
      if (wm_png) write_png_words(out / "words.png", words, ck.config.seed);
      if (!wm_dump.empty()) dump_tern(wm_dump, "image", ck.state.model, img);
      std::vector<int> used(static_cast<std::size_t>(words.clusters), 0);
      for (int w : words.words) used[static_cast<std::size_t>(w)] = 1;
      int distinct = 0;
      for (int u : used) distinct += u;
      std::cout << "clusters\t" << words.clusters << '\n' << "words_used\t" << distinct << '\n';
      if (!wm_labels.empty()) {
        const std::vector<double> purity = word_purity(words, read_raster(wm_labels));
        for (std::size_t c = 0; c < purity.size(); ++c)
          if (purity[c] >= 0) std::cout << "purity_class_" << c << '\t' << purity[c] << '\n';
      }
      return kOk;
    }

    if (*eval) {
      AcceptanceOptions opt;
      opt.work_dir = ev_work;
      opt.only = ev_only;
      opt.log = [](const std::string& s) { std::cerr << s << '\n'; };
      const std::vector<CriterionResult> results = run_acceptance(opt);
      bool all = true;
      for (const CriterionResult& r : results) {
        std::cout << format_result(r) << '\n';
        all = all && r.passed;
      }
      return all ? kOk : kUsage;
    }

    if (*sweep) {
      RunConfig cfg = load_config(sw_c);
      if (!sw_catalog.empty()) cfg.paths.catalog = sw_catalog;
      if (cfg.paths.catalog.empty()) throw ConfigError("sweep needs --catalog or paths.catalog");
      const std::vector<int> train_sizes = parse_sizes(sw_train);
      const std::vector<int> infer_sizes = parse_sizes(sw_infer);
      const Corpus corpus = Corpus::load(filter_catalog(read_manifest(cfg.paths.catalog)));
      const std::vector<HeldoutPair> pairs = read_heldout_index(sw_heldout);
      const SweepGrid grid =
          rf_sweep(corpus, pairs, train_sizes, infer_sizes, cfg.model_setup(), cfg.train_config(),
                   {}, [](int size, const Model&) {
                     std::cerr << "trained patch size " << size << '\n';
                   });
      if (sw_out.empty())
        std::cout << grid.to_tsv();
      else
        write_text(sw_out, grid.to_tsv());
      return kOk;
    }

    if (*inspect) {
      LoadedCheckpoint ck = load_checkpoint(in_ckpt);
      std::cout << "iteration\t" << ck.state.iteration << '\n';
      std::cout << "config_hash\t" << std::hex << ck.config_hash << std::dec << '\n';
      std::cout << "losses\t" << ck.state.loss_history.size() << '\n';
      if (!ck.state.loss_history.empty())
        std::cout << "last_loss\t" << ck.state.loss_history.back() << '\n';
      std::size_t total = 0;
      for (const auto& [name, t] : ck.state.model.trainable()) {
        std::cout << "tensor\t" << name << '\t' << t->shape_string() << '\n';
        total += t->size();
      }
      std::cout << "parameters\t" << total << '\n';
      std::cout << "[config]\n" << serialize_config(ck.config);
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
