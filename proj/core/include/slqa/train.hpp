#pragma once

#include <string>
#include <vector>

#include "slqa/data.hpp"
#include "slqa/model.hpp"

namespace slqa {

// Training recipe. Defaults are the reference recipe: AdaMax with lr 0.002,
// batches of 32, dropout 0.4.
struct TrainConfig {
  double lr = 0.002;
  int batch_size = 32;
  double dropout = 0.4;
  int max_steps = 1000;
  int eval_interval = 100;
  uint64_t seed = 1;
  std::string checkpoint_dir = "out";
  double beta1 = 0.9;
  double beta2 = 0.999;
  // Stop once dev EM (percent) reaches this; negative disables.
  double early_stop_em = -1.0;
  std::string train_path;
  std::string dev_path;

  void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& c);

// Both sections of a run configuration file:
// {"model": {...}, "train": {...}}
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};
RunConfig run_config_from_file(const std::string& path);

struct EvalRow {
  std::string id;
  std::string prediction;
  double best_f1 = 0.0;
};

struct EvalReport {
  double em = 0.0;  // percent
  double f1 = 0.0;  // percent
  std::vector<EvalRow> rows;  // sorted by example id
  long step = 0;
};

EvalReport evaluate(const Model& model,
                    const std::vector<TokenizedExample>& examples);

// Confidence-sum ensemble over members with identical configurations.
EvalReport evaluate_ensemble(const std::vector<const Model*>& members,
                             const std::vector<TokenizedExample>& examples);

struct CurvePoint {
  long step = 0;
  double loss = 0.0;
  double em = 0.0;
  double f1 = 0.0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  double best_f1 = -1.0;
  long best_step = 0;
  long steps_run = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

// AdaMax over shuffled batches, periodic dev evaluation, best checkpoint by
// dev F1. Writes curve.csv, best.ckpt and last.ckpt into out_dir. Fully
// seeded: identical configs and seeds give identical artifacts.
TrainResult train(const TrainConfig& tc, const ModelConfig& mc,
                  const std::vector<TokenizedExample>& train_set,
                  const std::vector<TokenizedExample>& dev_set,
                  const std::string& out_dir);

struct AblationRow {
  std::string variant;
  double em = 0.0;
  double f1 = 0.0;
};

// Trains one variant per requested axis value with identical seeds and
// budgets. Axes: fusion, score, depth, manual_features, char_channel,
// self_match, bilinear_match, grid (fusion x score).
std::vector<AblationRow> ablate(const TrainConfig& tc, const ModelConfig& base,
                                const std::vector<std::string>& axes,
                                const std::vector<TokenizedExample>& train_set,
                                const std::vector<TokenizedExample>& dev_set,
                                const std::string& out_dir);

void write_curve_csv(const std::string& path,
                     const std::vector<CurvePoint>& curve);
void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows);
void write_predictions_json(const std::string& path, const EvalReport& report);
void write_report_csv(const std::string& path, const EvalReport& report);

}  // namespace slqa
