#pragma once

// Three-stage training: Adam on cross-entropy, round-robin sampling over the
// datasets of a bundle, staged unfreezing of the WRS weights, best-epoch
// snapshots, and DSC/MSD evaluation.

#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "firenet/augment.hpp"
#include "firenet/data.hpp"
#include "firenet/network.hpp"
#include "firenet/parameter.hpp"

namespace firenet::inline FIRENET_ABI {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

/// First and second moments of one parameter plus its own step count, so a
/// parameter unfrozen late starts with a fresh bias correction.
struct AdamMoments {
  std::vector<real> m, v;
  int64_t t = 0;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Updates every unfrozen parameter that holds a gradient. The update is
  /// computed in full before any value is written; a non-finite result throws
  /// TrainingError and leaves the parameter untouched.
  void step(ParameterStore& store);

  const AdamConfig& config() const { return config_; }
  /// Keyed by parameter name.
  std::map<std::string, AdamMoments>& moments() { return moments_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::map<std::string, AdamMoments> moments_;
};

struct StageSchedule {
  int stage1_epochs = 20;
  int stage2_epochs = 20;
  int max_epochs = 100;  // total, including stages 1 and 2
  int patience = 10;     // stage 3 stops after this many epochs without improvement; 0 disables

  void validate() const;
  /// Stage (1, 2 or 3) of the 0-based epoch.
  int stage_of(int epoch) const;
  static std::set<ParamGroup> unfrozen(int stage);
  bool operator==(const StageSchedule&) const = default;
};

/// Dataset index = step mod |datasets|; the example is uniform over that
/// dataset's training split. Throws ConfigError on an empty split.
std::pair<std::size_t, std::size_t> round_robin_sample(const DatasetBundle& bundle, int64_t step,
                                                       Rng& rng);

struct TrainConfig {
  NetworkConfig network;
  StageSchedule schedule;
  AdamConfig adam;
  bool augment = true;
  AugmentSpec augmentation;
  int target_class = 0;      // 0: mean over foreground classes selects the best epoch
  int64_t steps_per_epoch = 0;  // 0: total number of training examples

  void validate() const;
  /// Network keys as in NetworkConfig, augmentation keys prefixed "augment.";
  /// see docs/config.md.
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  int stage = 1;
  double mean_loss = 0;
  std::vector<double> class_dsc;  // one per class of the bundle, background first
  double score = 0;               // the value compared for best-epoch selection
  bool improved = false;
};

/// CSV header and row: epoch, stage, mean_loss, then dsc_<class> per class.
std::string metrics_header(int num_classes);
std::string metrics_row(const EpochRecord& r);

struct TrainState {
  int epoch = 0;  // completed epochs
  int64_t step = 0;
  double best_score = -1;
  int best_epoch = 0;
  int since_best = 0;
  Rng rng;
  std::vector<EpochRecord> log;
};

/// Mean validation DSC per class over every example whose dataset has that
/// class. Uses the validation split, or the training split when the bundle
/// holds no validation examples.
std::vector<double> validation_dsc(const Network& net, const DatasetBundle& bundle);

class Trainer {
 public:
  /// `net` and `bundle` must outlive the trainer. The network must have at
  /// least as many classes as the bundle.
  Trainer(Network& net, const DatasetBundle& bundle, const TrainConfig& config, uint64_t seed);

  bool done() const;
  /// One epoch of steps followed by validation.
  EpochRecord run_epoch();
  /// Epochs until done(); `on_epoch` runs after each.
  void run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  /// One optimisation step on `pair`; returns its loss.
  double train_step(const SamplePair& pair);

  /// Parameter values of the best epoch so far (empty before the first).
  const std::map<std::string, Tensor5>& best_snapshot() const { return best_; }

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  const TrainConfig& config() const { return config_; }
  int64_t steps_per_epoch() const;

 private:
  std::string diagnostic(const std::string& what) const;

  Network& net_;
  const DatasetBundle& bundle_;
  TrainConfig config_;
  Adam adam_;
  TrainState state_;
  std::map<std::string, Tensor5> best_;
  std::string last_example_;
};

struct CaseMetrics {
  std::string dataset, example;
  int cls = 0;
  double dsc = 0;
  double msd = 0;  // NaN when either mask is empty
};

struct ClassSummary {
  std::string dataset, class_name;
  int cls = 0;
  int cases = 0;
  double mean_dsc = 0, median_dsc = 0;
  double mean_msd = 0, median_msd = 0;  // over cases where it is defined
};

struct EvalReport {
  std::vector<CaseMetrics> cases;
  std::vector<ClassSummary> summary;  // per dataset, foreground classes only

  /// Mean over foreground classes of the per-class mean DSC.
  double mean_foreground_dsc(const std::string& dataset) const;
  std::string summary_csv() const;
  std::string cases_csv() const;
};

/// Predicted labels are the channel argmax of the softmax output.
EvalReport evaluate(const Network& net, const DatasetBundle& bundle, Split split);

}  // namespace firenet
