#include "matter/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "matter/checkpoint.hpp"
#include "matter/config.hpp"
#include "matter/random.hpp"
#include "matter/tasks.hpp"
#include "matter/tern.hpp"

namespace matter {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

template <typename T>
BasicTensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  BasicTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

// Iteration budget of each receptive-field sweep cell. Both cells share it.
constexpr int kSweepIterations = 500;
constexpr double kFdEps = 1e-5;

// ---------------------------------------------------------------- A1

double check_nce(Rng& rng) {
  const int dim = 32, negs = 8;
  using TD = BasicTensor<double>;
  const TD a = random_tensor<double>({dim}, rng, -0.3, 0.3);
  const TD p = random_tensor<double>({dim}, rng, -0.3, 0.3);
  const TD n = random_tensor<double>({negs, dim}, rng, -0.3, 0.3);
  const double tau = 0.05;
  TD ga, gp, gn;
  nce_loss_grad(a, p, n, tau, ga, gp, gn);
  TD s1, s2, s3;
  double worst = 0;
  worst = std::max(worst, finite_diff_check<double>(
                              [&](const TD& x) { return nce_loss_grad(x, p, n, tau, s1, s2, s3); },
                              a, ga, kFdEps));
  worst = std::max(worst, finite_diff_check<double>(
                              [&](const TD& x) { return nce_loss_grad(a, x, n, tau, s1, s2, s3); },
                              p, gp, kFdEps));
  worst = std::max(worst, finite_diff_check<double>(
                              [&](const TD& x) { return nce_loss_grad(a, p, x, tau, s1, s2, s3); },
                              n, gn, kFdEps));
  return worst;
}

double check_residual(Rng& rng) {
  const int rows = 3, clusters = 4, dim = 8;
  using TD = BasicTensor<double>;
  BasicClusterBank<double> bank{random_tensor<double>({clusters, dim}, rng, -0.4, 0.4),
                                random_tensor<double>({clusters}, rng, -0.5, 0.5)};
  const TD z = random_tensor<double>({rows, dim}, rng, -0.5, 0.5);
  const TD head = random_tensor<double>({rows, dim}, rng, -1.0, 1.0);

  auto objective = [&](const BasicClusterBank<double>& b, const TD& zz) {
    const TD f = encode_residuals(b, zz);
    double s = 0;
    for (std::size_t i = 0; i < f.size(); ++i) s += head[i] * f[i];
    return s;
  };

  ResidualTape<double> tape;
  encode_residuals(bank, z, &tape);
  TD gz;
  BasicClusterBank<double> gb = bank.zeros_like();
  residual_backward(bank, tape, head, gz, gb);

  double worst = finite_diff_check<double>(
      [&](const TD& x) { return objective(bank, x); }, z, gz, kFdEps);
  worst = std::max(worst, finite_diff_check<double>(
                              [&](const TD& x) {
                                BasicClusterBank<double> b = bank;
                                b.centers = x;
                                return objective(b, z);
                              },
                              bank.centers, gb.centers, kFdEps));
  worst = std::max(worst, finite_diff_check<double>(
                              [&](const TD& x) {
                                BasicClusterBank<double> b = bank;
                                b.log_smoothing = x;
                                return objective(b, z);
                              },
                              bank.log_smoothing, gb.log_smoothing, kFdEps));
  return worst;
}

double check_train_gradients(Rng& rng) {
  BackboneConfig cfg;
  cfg.in_bands = 2;
  cfg.stem_channels = 4;
  cfg.block_channels = {4, 8};
  cfg.descriptor_dim = 8;
  cfg.rng_seed = 11;
  const Model model = init_model(cfg, 4, true, 12);

  // Two single-patch triplets, so in-batch negatives take part as well.
  std::vector<Triplet> triplets(2);
  triplets[0].anchor_region = "r0";
  triplets[1].anchor_region = "r1";
  for (Triplet& t : triplets) {
    t.anchor = random_tensor<float>({1, 2, 7, 7}, rng, 0.0, 1.0);
    t.positive = random_tensor<float>({1, 2, 7, 7}, rng, 0.0, 1.0);
    t.negative = random_tensor<float>({1, 2, 7, 7}, rng, 0.0, 1.0);
  }
  const StackedBatch batch = stack_triplets(triplets);
  const BasicTensor<double> patches = batch.patches.cast<double>();
  BasicBackboneParams<double> params = model.params.cast<double>();
  BasicClusterBank<double> bank = model.bank.cast<double>();
  const double tau = 0.05;

  ModelGradients<double> grads{params.zeros_like(), bank.zeros_like()};
  batch_loss(params, bank, cfg, true, patches, batch.layout, tau, 0, &grads);

  auto loss = [&]() {
    return batch_loss<double>(params, bank, cfg, true, patches, batch.layout, tau, 0,
                              nullptr);
  };
  auto check = [&](BasicTensor<double>& target, const BasicTensor<double>& analytic) {
    if (target.empty()) return 0.0;  // identity skip connection
    const BasicTensor<double> saved = target;
    const double err = finite_diff_check<double>(
        [&](const BasicTensor<double>& x) {
          target = x;
          return loss();
        },
        saved, analytic, kFdEps);
    target = saved;
    return err;
  };

  double worst = 0;
  auto analytic = grads.backbone.named();
  auto live = params.named();
  for (std::size_t i = 0; i < live.size(); ++i)
    worst = std::max(worst, check(*live[i].second, *analytic[i].second));
  worst = std::max(worst, check(bank.centers, grads.bank.centers));
  worst = std::max(worst, check(bank.log_smoothing, grads.bank.log_smoothing));
  return worst;
}

CriterionResult run_a1() {
  Rng rng(derive_seed(101, "acceptance.a1"));
  const double nce = check_nce(rng);
  const double res = check_residual(rng);
  const double train = check_train_gradients(rng);
  CriterionResult r;
  r.passed = nce <= 1e-3 && res <= 1e-3 && train <= 1e-3;
  std::ostringstream d;
  d << "max rel err: nce " << fmt("%.2e", nce) << ", residual " << fmt("%.2e", res)
    << ", train step " << fmt("%.2e", train) << " (limit 1e-3)";
  r.detail = d.str();
  return r;
}

// ---------------------------------------------------------------- A2

std::vector<double> random_window(Rng& rng, int bands, int k) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(bands) * k * k);
  for (double& v : w) v = dist(rng);
  return w;
}

Tensor crop(const Tensor& img, int row, int col, int size) {
  Tensor out({img.dim(0), size, size});
  for (int c = 0; c < img.dim(0); ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, row + y, col + x);
  return out;
}

CriterionResult run_a2() {
  Rng rng(derive_seed(102, "acceptance.a2"));
  CriterionResult r;
  std::ostringstream d;

  double scale_err = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = trial % 2 ? 5 : 3;
    const std::vector<double> w = random_window(rng, 4, k);
    const TernKernel base = compute_kernel(w, 4, k, 1e-6, true);
    for (double s : {0.5, 2.0, 10.0}) {
      std::vector<double> ws(w);
      for (double& v : ws) v *= s;
      const TernKernel scaled = compute_kernel(ws, 4, k, 1e-6, true);
      for (std::size_t i = 0; i < base.weights.size(); ++i)
        scale_err = std::max(scale_err, std::abs(base.weights[i] - scaled.weights[i]));
    }
  }
  const bool scale_ok = scale_err <= 1e-5;
  d << "scale " << fmt("%.1e", scale_err);

  // Shift equivariance of the full default stack on interiors.
  const TernConfig cfg;
  int radius = 0;
  for (int l = 0; l < cfg.layer_count(); ++l)
    radius += cfg.dilation_of(l) * (cfg.kernel_size / 2);
  const int size = 2 * radius + 16, dy = 3, dx = 5;
  const Tensor guidance = random_tensor<float>({4, size + dy, size + dx}, rng, 0.0, 1.0);
  const Tensor features = random_tensor<float>({6, size + dy, size + dx}, rng, -1.0, 1.0);
  const Tensor out_a = tern_forward(crop(features, 0, 0, size), crop(guidance, 0, 0, size), cfg);
  const Tensor out_b = tern_forward(crop(features, dy, dx, size), crop(guidance, dy, dx, size), cfg);
  double shift_err = 0;
  int compared = 0;
  for (int c = 0; c < 6; ++c)
    for (int y = radius; y + dy < size - radius; ++y)
      for (int x = radius; x + dx < size - radius; ++x) {
        shift_err = std::max(shift_err, static_cast<double>(std::abs(
                                            out_b.at(c, y, x) - out_a.at(c, y + dy, x + dx))));
        ++compared;
      }
  const bool shift_ok = compared > 0 && shift_err <= 1e-5;
  d << ", shift " << fmt("%.1e", shift_err);

  // The refinement stack must not add trainable tensors to the encoder.
  BackboneConfig with;
  BackboneConfig without = with;
  without.tern.blocks = 0;
  const BackboneParams pw = init_backbone(with);
  const BackboneParams po = init_backbone(without);
  std::size_t count_w = 0, count_o = 0;
  bool same_layout = pw.named().size() == po.named().size();
  for (const auto& [name, t] : pw.named()) count_w += t->size();
  for (const auto& [name, t] : po.named()) count_o += t->size();
  for (std::size_t i = 0; same_layout && i < pw.named().size(); ++i)
    same_layout = pw.named()[i].first == po.named()[i].first &&
                  pw.named()[i].second->shape() == po.named()[i].second->shape();
  const bool params_ok = same_layout && count_w == count_o;
  d << ", extra params " << static_cast<long long>(count_w) - static_cast<long long>(count_o);

  // Constant window: every weight is -1/k^2 and the layer negates a constant map.
  double uniform_err = 0;
  for (int k : {3, 5}) {
    const std::vector<double> w(static_cast<std::size_t>(4) * k * k, 0.37);
    const TernKernel kern = compute_kernel(w, 4, k, 1e-6, true);
    for (double v : kern.weights)
      uniform_err = std::max(uniform_err, std::abs(v + 1.0 / (k * k)));
  }
  const Tensor flat_guide({4, 12, 12}, 0.6f);
  const Tensor flat_feat({2, 12, 12}, 1.5f);
  const Tensor flat_out = refine_layer(flat_feat, flat_guide, 3, 1, 1e-6, true);
  for (float v : flat_out.values())
    uniform_err = std::max(uniform_err, std::abs(static_cast<double>(v) + 1.5));
  const bool uniform_ok = uniform_err <= 1e-6;
  d << ", uniform " << fmt("%.1e", uniform_err);

  r.passed = scale_ok && shift_ok && params_ok && uniform_ok;
  r.detail = d.str();
  return r;
}

// ---------------------------------------------------------------- A3

// Exhaustive between-class-variance search, one edge at a time from raw bin
// counts. Ties between distinct splits keep the lowest; among the edges that
// realise the chosen split (empty bins in between) the middle one is taken.
int otsu_oracle_edge(const std::vector<float>& values, int bins, bool& degenerate) {
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  degenerate = !(hi > lo);
  if (degenerate) return 0;
  const double width = (hi - lo) / bins;
  std::vector<double> count(static_cast<std::size_t>(bins), 0.0);
  for (float v : values) {
    int b = static_cast<int>((v - lo) / width);
    count[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1;
  }
  std::vector<double> var(static_cast<std::size_t>(bins), -1.0);
  std::vector<double> below(static_cast<std::size_t>(bins), 0.0);
  double best = -1;
  for (int t = 1; t < bins; ++t) {
    double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
    for (int b = 0; b < bins; ++b) {
      const double mid = lo + (b + 0.5) * width;
      (b < t ? n0 : n1) += count[b];
      (b < t ? s0 : s1) += count[b] * mid;
    }
    below[t] = n0;
    if (n0 == 0 || n1 == 0) continue;
    const double n = n0 + n1;
    const double diff = s0 / n0 - s1 / n1;
    var[t] = (n0 / n) * (n1 / n) * diff * diff;
    best = std::max(best, var[t]);
  }
  int chosen = -1;
  for (int t = 1; t < bins && chosen < 0; ++t)
    if (var[t] >= 0 && var[t] >= best - 1e-12 * best) chosen = t;
  std::vector<int> same_split;
  for (int t = 1; t < bins; ++t)
    if (below[t] == below[chosen]) same_split.push_back(t);
  return same_split[(same_split.size() - 1) / 2];
}

std::vector<float> otsu_case(Rng& rng, int index) {
  std::uniform_int_distribution<int> len(2, 4000);
  const int n = len(rng);
  std::vector<float> v(static_cast<std::size_t>(n));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  switch (index % 5) {
    case 0:
      for (float& x : v) x = static_cast<float>(u(rng) * 10 - 3);
      break;
    case 1:
      for (float& x : v) x = static_cast<float>(u(rng) < 0.3 ? 2 + 0.3 * g(rng) : 5 + g(rng));
      break;
    case 2: {  // few distinct levels leave most bins empty
      std::uniform_int_distribution<int> lv(0, 1 + index % 7);
      for (float& x : v) x = static_cast<float>(lv(rng));
      break;
    }
    case 3:
      for (float& x : v) x = static_cast<float>(std::exp(1.5 * g(rng)));
      break;
    default:
      for (float& x : v) x = static_cast<float>(std::round(20 * u(rng)) * 0.25);
      if (index % 50 == 4) std::fill(v.begin(), v.end(), 1.25f);
      break;
  }
  return v;
}

CriterionResult run_a3() {
  Rng rng(derive_seed(103, "acceptance.a3"));
  int agree = 0, degenerate = 0;
  const int cases = 1000;
  for (int i = 0; i < cases; ++i) {
    const std::vector<float> v = otsu_case(rng, i);
    bool oracle_degenerate = false;
    const int edge = otsu_oracle_edge(v, 256, oracle_degenerate);
    const OtsuResult got = otsu_threshold(v, 256);
    degenerate += oracle_degenerate;
    agree += got.degenerate == oracle_degenerate && (oracle_degenerate || got.edge == edge);
  }
  CriterionResult r;
  r.passed = agree == cases;
  r.detail = std::to_string(agree) + "/" + std::to_string(cases) +
             " thresholds match the exhaustive search (" + std::to_string(degenerate) +
             " constant sets)";
  return r;
}

// ---------------------------------------------------------------- A4

CriterionResult run_a4() {
  struct Row {
    double p, r, f1;
  };
  const Row rows[] = {{37.52, 72.65, 49.48}, {61.80, 57.13, 59.37}};
  CriterionResult r;
  r.passed = true;
  std::ostringstream d;
  for (const Row& row : rows) {
    // Counts realising the row exactly: tp = P·R, tp+fp = R, tp+fn = P (x100).
    const auto pi = static_cast<std::int64_t>(std::llround(row.p * 100));
    const auto ri = static_cast<std::int64_t>(std::llround(row.r * 100));
    const std::int64_t tp = pi * ri;
    const PrfReport rep = prf_from_counts(tp, ri * 10000 - tp, pi * 10000 - tp);
    const bool ok = std::abs(rep.f1 - row.f1) <= 0.01 &&
                    std::abs(f1_score(row.p, row.r) - row.f1) <= 0.01 &&
                    std::abs(rep.precision - row.p) <= 1e-9 &&
                    std::abs(rep.recall - row.r) <= 1e-9;
    r.passed = r.passed && ok;
    d << "(P " << fmt("%.2f", row.p) << ", R " << fmt("%.2f", row.r) << ") -> F1 "
      << fmt("%.4f", rep.f1) << " [" << fmt("%.2f", row.f1) << "]  ";
  }
  r.detail = d.str();
  return r;
}

// ---------------------------------------------------------------- A5..A9

class Pipeline {
 public:
  Pipeline(const AcceptanceOptions& options) : opt_(options) {}

  void log(const std::string& s) const {
    if (opt_.log) opt_.log(s);
  }

  const RunConfig& config() const { return cfg_; }
  const SynthOutput& data() {
    if (!data_) {
      cfg_.validate();
      data_ = synth_generate(cfg_.synth, opt_.work_dir / "data");
      corpus_ = Corpus::load(filter_catalog(read_manifest(data_->manifest)));
      log("synthetic corpus: " + std::to_string(corpus_.images.size()) + " images, " +
          std::to_string(data_->pairs.size()) + " held-out pairs");
    }
    return *data_;
  }
  const Corpus& corpus() {
    data();
    return corpus_;
  }

  // Pre-training with the default configuration, checkpointed to disk and
  // read back before evaluation.
  const LoadedCheckpoint& model() {
    if (model_) return *model_;
    const auto t0 = Clock::now();
    const Corpus& c = corpus();
    const std::filesystem::path ckpt = opt_.work_dir / "pretrain" / "model.mtck";
    TrainState state = initial_state(cfg_);
    PretrainHooks hooks;
    hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(ckpt, s, cfg_); };
    hooks.on_step = [&](int it, double loss) {
      if (it % 200 == 0)
        log("pretrain " + std::to_string(it) + "/" + std::to_string(cfg_.train.iterations) +
            " loss " + fmt("%.4f", loss) + " (" + fmt("%.0f", seconds_since(t0)) + " s)");
    };
    pretrain(c, cfg_.train_config(), state, hooks);
    write_loss_curve(opt_.work_dir / "pretrain" / "loss.tsv", state.loss_history);
    model_ = load_checkpoint(ckpt, &cfg_);
    train_seconds_ = seconds_since(t0);
    return *model_;
  }
  double train_seconds() const { return train_seconds_; }

  const PrfReport& full_report() {
    if (!full_report_) full_report_ = evaluate_pairs(model().state.model, data().pairs, cfg_.infer_window);
    return *full_report_;
  }

  Model train_variant(const RunConfig& variant, const std::string& label) {
    const auto t0 = Clock::now();
    Model m = train_model(corpus(), variant.model_setup(), variant.train_config());
    log(label + " trained in " + fmt("%.0f", seconds_since(t0)) + " s");
    return m;
  }

 private:
  const AcceptanceOptions& opt_;
  RunConfig cfg_;
  std::optional<SynthOutput> data_;
  Corpus corpus_;
  std::optional<LoadedCheckpoint> model_;
  std::optional<PrfReport> full_report_;
  double train_seconds_ = 0;
};

CriterionResult run_a5(Pipeline& p) {
  const auto t0 = Clock::now();
  p.data();
  p.model();
  const PrfReport rep = p.full_report();
  const double total = seconds_since(t0);
  CriterionResult r;
  r.passed = rep.f1 >= 80.0 && total <= 600.0;
  r.detail = "change F1 " + fmt("%.2f", rep.f1) + "% (P " + fmt("%.2f", rep.precision) +
             ", R " + fmt("%.2f", rep.recall) + "), need >= 80; end-to-end " +
             fmt("%.0f", total) + " s, limit 600 s";
  return r;
}

CriterionResult run_a6(Pipeline& p) {
  const SynthOutput& data = p.data();
  const Model& model = p.model().state.model;
  MultiSpectralImage mosaic;
  mosaic.pixels = read_raster(data.mosaic);
  const WordMap words = word_map(mosaic, model, p.config().infer_window);
  const Tensor labels = read_raster(data.mosaic_labels);
  const std::vector<double> purity = word_purity(words, labels);
  CriterionResult r;
  r.passed = !purity.empty();
  std::ostringstream d;
  d << "majority-word purity per texture:";
  for (std::size_t c = 0; c < purity.size(); ++c) {
    if (purity[c] < 0) continue;
    r.passed = r.passed && purity[c] >= 0.70;
    d << ' ' << texture_name(p.config().synth.textures[c]) << ' ' << fmt("%.3f", purity[c]);
  }
  d << " (need >= 0.70 each)";
  r.detail = d.str();
  return r;
}

CriterionResult run_a7(Pipeline& p) {
  RunConfig cfg = p.config();
  cfg.train.iterations = kSweepIterations;
  const std::vector<int> train_sizes{7, 17};
  const std::vector<int> infer_sizes{9};
  const SweepGrid grid = rf_sweep(p.corpus(), p.data().pairs, train_sizes, infer_sizes,
                                  cfg.model_setup(), cfg.train_config(), {},
                                  [&](int size, const Model&) {
                                    p.log("sweep: train size " + std::to_string(size) + " ready");
                                  });
  CriterionResult r;
  r.passed = grid.at(0, 0) >= grid.at(1, 0);
  r.detail = "F1 at inference 9: train 7 -> " + fmt("%.2f", grid.at(0, 0)) + "%, train 17 -> " +
             fmt("%.2f", grid.at(1, 0)) + "% (" + std::to_string(kSweepIterations) +
             " iterations each)";
  return r;
}

CriterionResult run_a8(Pipeline& p) {
  const double full = p.full_report().f1;
  RunConfig no_tern = p.config();
  no_tern.backbone.tern.blocks = 0;
  RunConfig raw = no_tern;
  raw.residual_encoder = false;
  const int win = p.config().infer_window;
  const double f_no_tern =
      evaluate_pairs(p.train_variant(no_tern, "without refinement"), p.data().pairs, win).f1;
  const double f_raw =
      evaluate_pairs(p.train_variant(raw, "raw descriptor"), p.data().pairs, win).f1;
  CriterionResult r;
  r.passed = full >= f_no_tern && f_no_tern >= f_raw;
  r.detail = "F1 full " + fmt("%.2f", full) + "%, without refinement " + fmt("%.2f", f_no_tern) +
             "%, raw descriptor without residual encoder " + fmt("%.2f", f_raw) + "%";
  return r;
}

bool states_identical(TrainState& a, TrainState& b) {
  auto pa = a.model.trainable();
  auto pb = b.model.trainable();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].first != pb[i].first || !(*pa[i].second == *pb[i].second)) return false;
  if (a.sgd.velocity.size() != b.sgd.velocity.size()) return false;
  for (std::size_t i = 0; i < a.sgd.velocity.size(); ++i)
    if (!(a.sgd.velocity[i] == b.sgd.velocity[i])) return false;
  return a.loss_history == b.loss_history && a.iteration == b.iteration;
}

CriterionResult run_a9(Pipeline& p, const std::filesystem::path& work) {
  const std::vector<float>& losses = p.model().state.loss_history;
  const std::size_t k = std::max<std::size_t>(1, losses.size() / 10);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < k; ++i) {
    head += losses[i];
    tail += losses[losses.size() - 1 - i];
  }
  const double ratio = tail / head;

  // Straight run versus a run interrupted by a checkpoint round trip.
  RunConfig cfg = p.config();
  cfg.train.iterations = 24;
  TrainState straight = initial_state(cfg);
  pretrain(p.corpus(), cfg.train_config(), straight);

  RunConfig first_half = cfg;
  first_half.train.iterations = 12;
  TrainState part = initial_state(first_half);
  pretrain(p.corpus(), first_half.train_config(), part);
  const std::filesystem::path ckpt = work / "resume" / "half.mtck";
  std::filesystem::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, part, first_half);
  LoadedCheckpoint resumed = load_checkpoint(ckpt, &cfg);
  pretrain(p.corpus(), cfg.train_config(), resumed.state);
  const bool identical = states_identical(straight, resumed.state);

  CriterionResult r;
  r.passed = ratio <= 0.5 && identical;
  r.detail = "loss tail/head " + fmt("%.3f", ratio) + " (limit 0.5); resume after 12 of 24 steps " +
             (identical ? "bit-identical" : "DIVERGES");
  return r;
}

}  // namespace

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options) {
  std::filesystem::create_directories(options.work_dir);
  Pipeline pipeline(options);
  const std::vector<std::pair<std::string, std::function<CriterionResult()>>> all{
      {"A1", run_a1},
      {"A2", run_a2},
      {"A3", run_a3},
      {"A4", run_a4},
      {"A5", [&] { return run_a5(pipeline); }},
      {"A6", [&] { return run_a6(pipeline); }},
      {"A7", [&] { return run_a7(pipeline); }},
      {"A8", [&] { return run_a8(pipeline); }},
      {"A9", [&] { return run_a9(pipeline, options.work_dir); }},
  };
  std::vector<CriterionResult> results;
  for (const auto& [id, fn] : all) {
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), id) == options.only.end())
      continue;
    const auto t0 = Clock::now();
    CriterionResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("error: ") + e.what();
    }
    r.id = id;
    r.seconds = seconds_since(t0);
    if (options.log) options.log(format_result(r));
    results.push_back(std::move(r));
  }
  return results;
}

std::string format_result(const CriterionResult& r) {
  return r.id + (r.passed ? " PASS  " : " FAIL  ") + r.detail + "  (" +
         fmt("%.1f", r.seconds) + " s)";
}

}  // namespace matter
