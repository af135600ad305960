#include "firenet/train.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "firenet/error.hpp"
#include "firenet/metrics.hpp"
#include "firenet/ops.hpp"
#include "firenet/textconfig.hpp"

namespace firenet::inline FIRENET_ABI {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be > 0");
}

void Adam::step(ParameterStore& store) {
  const double b1 = config_.beta1, b2 = config_.beta2;
  std::vector<real> next;
  for (const auto& p : store.all()) {
    if (store.is_frozen(*p) || !p->value.has_grad()) continue;
    const auto g = p->value.grad();
    auto& st = moments_[p->name];
    const std::size_t n = g.size();
    if (st.m.size() != n) {
      st.m.assign(n, 0.0f);
      st.v.assign(n, 0.0f);
      st.t = 0;
    }
    const int64_t t = st.t + 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    const auto value = p->value.data();
    next.resize(n);
    std::vector<real> m(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = b1 * st.m[i] + (1.0 - b1) * gi;
      const double vi = b2 * st.v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<real>(mi);
      v[i] = static_cast<real>(vi);
      const double upd = config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      next[i] = static_cast<real>(value[i] - upd);
      if (!std::isfinite(next[i])) {
        throw TrainingError("adam: non-finite update for parameter " + p->name + " at index " +
                            std::to_string(i));
      }
    }
    std::copy(next.begin(), next.end(), p->value.mutable_data().begin());
    st.m = std::move(m);
    st.v = std::move(v);
    st.t = t;
  }
}

void StageSchedule::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("schedule: stage lengths must be >= 0");
  if (max_epochs < 1) throw ConfigError("schedule: max_epochs must be >= 1");
  if (patience < 0) throw ConfigError("schedule: patience must be >= 0");
}

int StageSchedule::stage_of(int epoch) const {
  if (epoch < stage1_epochs) return 1;
  if (epoch < stage1_epochs + stage2_epochs) return 2;
  return 3;
}

std::set<ParamGroup> StageSchedule::unfrozen(int stage) {
  std::set<ParamGroup> g{ParamGroup::EncoderDecoder, ParamGroup::Fabric, ParamGroup::Head};
  if (stage >= 2) g.insert(ParamGroup::WrsFabric);
  if (stage >= 3) g.insert(ParamGroup::WrsOuter);
  return g;
}

std::pair<std::size_t, std::size_t> round_robin_sample(const DatasetBundle& bundle, int64_t step,
                                                       Rng& rng) {
  if (bundle.datasets.empty()) throw ConfigError("sampler: bundle has no datasets");
  const auto d = static_cast<std::size_t>(step % static_cast<int64_t>(bundle.datasets.size()));
  const auto n = bundle.datasets[d].train.size();
  if (n == 0) throw ConfigError("sampler: dataset " + bundle.datasets[d].name + " has no training examples");
  return {d, static_cast<std::size_t>(rng() % n)};
}

void TrainConfig::validate() const {
  network.validate();
  schedule.validate();
  adam.validate();
  augmentation.validate();
  if (target_class < 0 || target_class >= network.num_classes) {
    throw ConfigError("train: target_class must be 0 (all foreground) or a class below num_classes");
  }
  if (steps_per_epoch < 0) throw ConfigError("train: steps_per_epoch must be >= 0");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << network.to_text();
  os << std::setprecision(17);
  os << "stage1_epochs = " << schedule.stage1_epochs << "\n";
  os << "stage2_epochs = " << schedule.stage2_epochs << "\n";
  os << "max_epochs = " << schedule.max_epochs << "\n";
  os << "patience = " << schedule.patience << "\n";
  os << "lr = " << adam.lr << "\nbeta1 = " << adam.beta1 << "\nbeta2 = " << adam.beta2
     << "\neps = " << adam.eps << "\n";
  os << "target_class = " << target_class << "\n";
  os << "steps_per_epoch = " << steps_per_epoch << "\n";
  os << "augment = " << (augment ? "true" : "false") << "\n";
  std::istringstream aug(augmentation.to_text());
  for (std::string line; std::getline(aug, line);) {
    if (!trim(line).empty()) os << "augment." << line << "\n";
  }
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::string net_text, aug_text;
  for (const auto& [key, v] : parse_key_values(text)) {
    if (key == "stage1_epochs") c.schedule.stage1_epochs = static_cast<int>(parse_int(key, v));
    else if (key == "stage2_epochs") c.schedule.stage2_epochs = static_cast<int>(parse_int(key, v));
    else if (key == "max_epochs") c.schedule.max_epochs = static_cast<int>(parse_int(key, v));
    else if (key == "patience") c.schedule.patience = static_cast<int>(parse_int(key, v));
    else if (key == "lr") c.adam.lr = parse_double(key, v);
    else if (key == "beta1") c.adam.beta1 = parse_double(key, v);
    else if (key == "beta2") c.adam.beta2 = parse_double(key, v);
    else if (key == "eps") c.adam.eps = parse_double(key, v);
    else if (key == "target_class") c.target_class = static_cast<int>(parse_int(key, v));
    else if (key == "steps_per_epoch") c.steps_per_epoch = parse_int(key, v);
    else if (key == "augment") c.augment = parse_bool(key, v);
    else if (key.rfind("augment.", 0) == 0) aug_text += key.substr(8) + " = " + v + "\n";
    else net_text += key + " = " + v + "\n";
  }
  c.network = NetworkConfig::from_text(net_text);
  c.augmentation = AugmentSpec::from_text(aug_text);
  c.validate();
  return c;
}

std::string metrics_header(int num_classes) {
  std::string s = "epoch,stage,mean_loss";
  for (int k = 0; k < num_classes; ++k) s += ",dsc_" + std::to_string(k);
  return s;
}

std::string metrics_row(const EpochRecord& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.epoch << "," << r.stage << "," << r.mean_loss;
  for (double d : r.class_dsc) os << "," << d;
  return os.str();
}

std::vector<double> validation_dsc(const Network& net, const DatasetBundle& bundle) {
  bool any_val = false;
  for (const auto& d : bundle.datasets) any_val |= !d.val.empty();
  const int K = bundle.num_classes();
  std::vector<double> sum(static_cast<std::size_t>(K), 0.0), count(static_cast<std::size_t>(K), 0.0);
  for (const auto& d : bundle.datasets) {
    for (const auto& p : any_val ? d.val : d.train) {
      const auto pred = argmax_channels(net.predict(p.image));
      for (int k = 0; k < d.num_classes(); ++k) {
        sum[k] += dsc(pred, p.labels, k);
        count[k] += 1;
      }
    }
  }
  for (int k = 0; k < K; ++k) {
    sum[k] = count[k] > 0 ? sum[k] / count[k] : std::numeric_limits<double>::quiet_NaN();
  }
  return sum;
}

Trainer::Trainer(Network& net, const DatasetBundle& bundle, const TrainConfig& config, uint64_t seed)
    : net_(net), bundle_(bundle), config_(config), adam_(config.adam) {
  config_.validate();
  bundle_.validate();
  if (net_.config().num_classes < bundle_.num_classes()) {
    throw ConfigError("train: network has " + std::to_string(net_.config().num_classes) +
                      " classes but the bundle needs " + std::to_string(bundle_.num_classes()));
  }
  if (bundle_.train_size() == 0) throw ConfigError("train: bundle has no training examples");
  state_.rng.seed(seed);
}

int64_t Trainer::steps_per_epoch() const {
  return config_.steps_per_epoch > 0 ? config_.steps_per_epoch
                                     : static_cast<int64_t>(bundle_.train_size());
}

bool Trainer::done() const {
  const auto& s = config_.schedule;
  if (state_.epoch >= s.max_epochs) return true;
  return s.patience > 0 && s.stage_of(state_.epoch) == 3 && state_.epoch > s.stage1_epochs + s.stage2_epochs &&
         state_.since_best >= s.patience;
}

std::string Trainer::diagnostic(const std::string& what) const {
  std::ostringstream os;
  os << what << " at step " << state_.step << " (epoch " << state_.epoch + 1 << "), example '"
     << last_example_ << "'\nparameter norms:\n";
  for (const auto& p : net_.parameters().all()) {
    double sq = 0;
    for (real v : p->value.data()) sq += static_cast<double>(v) * v;
    os << "  " << std::left << std::setw(32) << p->name << " " << std::setw(16) << group_name(p->group)
       << " " << std::sqrt(sq) << "\n";
  }
  return os.str();
}

double Trainer::train_step(const SamplePair& pair) {
  last_example_ = pair.name;
  const SamplePair aug = config_.augment ? apply_random(pair, config_.augmentation, state_.rng) : SamplePair{};
  const SamplePair& p = config_.augment ? aug : pair;
  ForwardContext ctx;
  ctx.training = true;
  ctx.rng = &state_.rng;
  const Tensor5 prob = net_.forward(p.image, ctx);
  const Tensor5 loss = cross_entropy(prob, one_hot(p.labels, p.extent(), net_.config().num_classes));
  const double value = loss.item();
  if (!std::isfinite(value)) throw TrainingError(diagnostic("non-finite loss"));
  backward(loss);
  try {
    adam_.step(net_.parameters());
  } catch (const TrainingError& e) {
    throw TrainingError(diagnostic(e.what()));
  }
  net_.parameters().zero_grad();
  ++state_.step;
  return value;
}

EpochRecord Trainer::run_epoch() {
  if (done()) throw TrainingError("train: schedule already complete");
  EpochRecord r;
  r.stage = config_.schedule.stage_of(state_.epoch);
  net_.parameters().set_unfrozen(StageSchedule::unfrozen(r.stage));
  const int64_t steps = steps_per_epoch();
  double total = 0;
  for (int64_t s = 0; s < steps; ++s) {
    const auto [d, i] = round_robin_sample(bundle_, state_.step, state_.rng);
    total += train_step(bundle_.datasets[d].train[i]);
  }
  r.mean_loss = total / static_cast<double>(steps);
  r.class_dsc = validation_dsc(net_, bundle_);
  if (config_.target_class > 0) {
    r.score = r.class_dsc[static_cast<std::size_t>(config_.target_class)];
  } else {
    double s = 0;
    int n = 0;
    for (std::size_t k = 1; k < r.class_dsc.size(); ++k) {
      if (!std::isnan(r.class_dsc[k])) s += r.class_dsc[k], ++n;
    }
    r.score = n ? s / n : 0.0;
  }
  r.epoch = ++state_.epoch;
  if (r.score > state_.best_score) {
    r.improved = true;
    state_.best_score = r.score;
    state_.best_epoch = r.epoch;
    state_.since_best = 0;
    best_.clear();
    for (const auto& p : net_.parameters().all()) best_.emplace(p->name, p->value.clone());
  } else {
    ++state_.since_best;
  }
  state_.log.push_back(r);
  return r;
}

void Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  while (!done()) {
    const auto r = run_epoch();
    if (on_epoch) on_epoch(r);
  }
}

double EvalReport::mean_foreground_dsc(const std::string& dataset) const {
  double s = 0;
  int n = 0;
  for (const auto& c : summary) {
    if (c.dataset == dataset) s += c.mean_dsc, ++n;
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

std::string EvalReport::summary_csv() const {
  std::ostringstream os;
  os << std::setprecision(9) << "dataset,class,name,cases,mean_dsc,median_dsc,mean_msd,median_msd\n";
  for (const auto& c : summary) {
    os << c.dataset << "," << c.cls << "," << c.class_name << "," << c.cases << "," << c.mean_dsc << ","
       << c.median_dsc << "," << c.mean_msd << "," << c.median_msd << "\n";
  }
  return os.str();
}

std::string EvalReport::cases_csv() const {
  std::ostringstream os;
  os << std::setprecision(9) << "dataset,example,class,dsc,msd\n";
  for (const auto& c : cases) {
    os << c.dataset << "," << c.example << "," << c.cls << "," << c.dsc << "," << c.msd << "\n";
  }
  return os.str();
}

EvalReport evaluate(const Network& net, const DatasetBundle& bundle, Split split) {
  EvalReport report;
  for (const auto& d : bundle.datasets) {
    const auto& pairs = split == Split::Train ? d.train : d.val;
    std::vector<std::vector<int>> preds;
    for (const auto& p : pairs) preds.push_back(argmax_channels(net.predict(p.image)));
    for (int k = 1; k < d.num_classes(); ++k) {
      ClassSummary s;
      s.dataset = d.name;
      s.cls = k;
      s.class_name = d.class_names[static_cast<std::size_t>(k)];
      std::vector<double> dscs, msds;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        CaseMetrics c;
        c.dataset = d.name;
        c.example = pairs[i].name;
        c.cls = k;
        c.dsc = dsc(preds[i], pairs[i].labels, k);
        bool pred_has = false, gt_has = false;
        for (std::size_t v = 0; v < preds[i].size(); ++v) {
          pred_has |= preds[i][v] == k;
          gt_has |= pairs[i].labels[v] == k;
        }
        c.msd = pred_has && gt_has ? msd(preds[i], pairs[i].labels, pairs[i].extent(), k, pairs[i].spacing)
                                   : std::numeric_limits<double>::quiet_NaN();
        dscs.push_back(c.dsc);
        if (!std::isnan(c.msd)) msds.push_back(c.msd);
        report.cases.push_back(c);
      }
      s.cases = static_cast<int>(pairs.size());
      s.mean_dsc = mean_of(dscs);
      s.median_dsc = median_of(dscs);
      s.mean_msd = mean_of(msds);
      s.median_msd = median_of(msds);
      report.summary.push_back(s);
    }
  }
  return report;
}

}  // namespace firenet
