#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lotnext/data.hpp"
#include "lotnext/eval.hpp"
#include "lotnext/graph.hpp"
#include "lotnext/loss.hpp"
#include "lotnext/model.hpp"
#include "lotnext/spatial.hpp"

namespace lotnext {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double gradient_clip_norm = 5.0;
  std::uint64_t seed = 42;
  int early_stopping_patience = 0;  // epochs without test MRR improvement; 0 disables
  bool evaluate_each_epoch = true;
  std::int64_t tail_threshold = 100;

  ModelConfig model;
  LossConfig loss;
  SpatialParams spatial;
  GraphAdjustConfig graph;

  void validate() const;
};

/// Independent sub-seed for one consumer of randomness.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  // sample-weighted means over the epoch; phi left empty
  std::optional<MetricsReport> test;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
};

/// One structured-text line per epoch.
void write_epoch_record(std::ostream& out, const EpochRecord& rec);

struct ScoredWindows {
  Matrix scores;  // rows x |P|
  Matrix time_pred;
  std::vector<int> labels;
};

/// Ranks POIs for every step of `windows`. When `inference_offsets` is given
/// it is added to the raw logits.
ScoredWindows score_windows(LotNextModel& model, const std::vector<SequenceWindow>& windows,
                            std::span<const GeoPoint> poi_coords, const GraphContext& graphs,
                            const SpatialParams& spatial, const RowVector* inference_offsets = nullptr,
                            int batch_size = 256);

struct Evaluation {
  MetricsReport overall;
  StratifiedReport stratified;
};

Evaluation evaluate(LotNextModel& model, const Dataset& ds, const std::vector<SequenceWindow>& windows,
                    const GraphContext& graphs, const TrainConfig& cfg);

struct Checkpoint {
  std::uint32_t version = 1;
  std::vector<std::pair<std::string, std::string>> config;  // flat key/value snapshot
  std::uint64_t user_digest = 0;
  std::uint64_t poi_digest = 0;
  int epoch = 0;
  int n_users = 0;
  int n_pois = 0;
  std::vector<std::pair<std::string, Matrix>> arrays;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic, version, config pairs, digests, counters and
/// named float64 arrays (little-endian).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError when the vocabularies differ from those trained on.
void verify_vocabulary(const Checkpoint& ckpt, const Dataset& ds);

Checkpoint make_checkpoint(const LotNextModel& model, const TrainConfig& cfg, const Dataset& ds, int epoch);
TrainConfig checkpoint_config(const Checkpoint& ckpt);
LotNextModel restore_model(const Checkpoint& ckpt);

struct TrainResult {
  LotNextModel model;
  TrainReport report;
};

/// Joint training loop: per batch graph adjustment, forward, loss, backward,
/// clipping and AdamW. `log` receives one line per epoch when non-null.
TrainResult train(const Dataset& ds, const TrainConfig& cfg, std::ostream* log = nullptr);

}  // namespace lotnext
