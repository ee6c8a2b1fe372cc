#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lotnext/autodiff.hpp"
#include "lotnext/data.hpp"

namespace lotnext {

struct MetricsReport {
  double acc1 = 0.0;
  double acc5 = 0.0;
  double acc10 = 0.0;
  double mrr = 0.0;
  std::size_t n_samples = 0;

  bool present() const { return n_samples > 0; }
};

struct StratifiedReport {
  MetricsReport head;
  MetricsReport tail;
  std::int64_t tail_threshold = 100;
  double predicted_tail_proportion = 0.0;
};

/// 1 + number of classes scoring strictly higher than the label, plus the
/// number of lower-indexed classes tied with it.
int rank_of(std::span<const double> scores, int label);
std::vector<int> ranks(const Matrix& scores, std::span<const int> labels);

double accuracy_at_k(const Matrix& scores, std::span<const int> labels, int k);
double mrr(const Matrix& scores, std::span<const int> labels);
MetricsReport compute_metrics(const Matrix& scores, std::span<const int> labels);

/// Splits samples by freq[label] < threshold (tail) and reports each side, plus
/// the share of top-1 predictions that are tail POIs.
StratifiedReport stratified_metrics(const Matrix& scores, std::span<const int> labels, const FrequencyTable& freq,
                                    std::int64_t threshold = 100);

/// Structured text: one `key = value` per line, sections prefixed
/// overall./head./tail.
void write_report(std::ostream& out, const MetricsReport& overall, const StratifiedReport& strat);

/// Aligned console table with columns Acc@1, Acc@5, Acc@10, MRR.
struct TableRow {
  std::string label;
  MetricsReport metrics;
};
void render_table(std::ostream& out, std::span<const TableRow> rows);

/// Header `# d_p=<d> n_pois=<n>`, then `poi_id \t freq \t d floats` per POI.
void export_embeddings(const Matrix& poi_embeddings, const FrequencyTable& freq, const Vocabulary& pois,
                       const std::filesystem::path& path);

}  // namespace lotnext
