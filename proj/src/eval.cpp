#include "lotnext/eval.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>

#include "lotnext/error.hpp"

namespace lotnext {

int rank_of(std::span<const double> scores, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= scores.size()) throw ShapeError("rank_of: label out of range");
  const double s = scores[static_cast<std::size_t>(label)];
  int rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && static_cast<int>(j) < label)) ++rank;
  }
  return rank;
}

std::vector<int> ranks(const Matrix& scores, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) throw ShapeError("ranks: one label per row");
  std::vector<int> out(labels.size());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double* row = scores.data() + i * scores.cols();  // row-major
    out[static_cast<std::size_t>(i)] =
        rank_of(std::span<const double>(row, static_cast<std::size_t>(scores.cols())), labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

double accuracy_at_k(const Matrix& scores, std::span<const int> labels, int k) {
  if (k < 1) throw Error("accuracy_at_k: k must be >= 1");
  const auto r = ranks(scores, labels);
  if (r.empty()) return 0.0;
  std::size_t hits = 0;
  for (int x : r) hits += x <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(r.size());
}

double mrr(const Matrix& scores, std::span<const int> labels) {
  const auto r = ranks(scores, labels);
  if (r.empty()) return 0.0;
  double total = 0.0;
  for (int x : r) total += 1.0 / x;
  return total / static_cast<double>(r.size());
}

namespace {

MetricsReport metrics_from_ranks(std::span<const int> r) {
  MetricsReport m;
  m.n_samples = r.size();
  if (r.empty()) return m;
  for (int x : r) {
    m.acc1 += x <= 1 ? 1.0 : 0.0;
    m.acc5 += x <= 5 ? 1.0 : 0.0;
    m.acc10 += x <= 10 ? 1.0 : 0.0;
    m.mrr += 1.0 / x;
  }
  const double n = static_cast<double>(r.size());
  m.acc1 /= n;
  m.acc5 /= n;
  m.acc10 /= n;
  m.mrr /= n;
  return m;
}

}  // namespace

MetricsReport compute_metrics(const Matrix& scores, std::span<const int> labels) {
  const auto r = ranks(scores, labels);
  return metrics_from_ranks(r);
}

StratifiedReport stratified_metrics(const Matrix& scores, std::span<const int> labels, const FrequencyTable& freq,
                                    std::int64_t threshold) {
  if (scores.cols() != freq.size()) throw ShapeError("stratified_metrics: score width != frequency table size");
  const auto r = ranks(scores, labels);
  std::vector<int> head, tail;
  std::size_t predicted_tail = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    (freq[labels[i]] < threshold ? tail : head).push_back(r[i]);
    Eigen::Index top = 0;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&top);  // first maximum = lowest index
    predicted_tail += freq[static_cast<int>(top)] < threshold ? 1 : 0;
  }
  StratifiedReport s;
  s.head = metrics_from_ranks(head);
  s.tail = metrics_from_ranks(tail);
  s.tail_threshold = threshold;
  s.predicted_tail_proportion = r.empty() ? 0.0 : static_cast<double>(predicted_tail) / static_cast<double>(r.size());
  return s;
}

namespace {

void write_section(std::ostream& out, const std::string& prefix, const MetricsReport& m) {
  out << prefix << "n = " << m.n_samples << '\n';
  if (!m.present()) {
    out << prefix << "metrics = absent\n";
    return;
  }
  out << prefix << "acc@1 = " << m.acc1 << '\n';
  out << prefix << "acc@5 = " << m.acc5 << '\n';
  out << prefix << "acc@10 = " << m.acc10 << '\n';
  out << prefix << "mrr = " << m.mrr << '\n';
}

}  // namespace

void write_report(std::ostream& out, const MetricsReport& overall, const StratifiedReport& strat) {
  out << std::setprecision(10);
  write_section(out, "overall.", overall);
  write_section(out, "head.", strat.head);
  write_section(out, "tail.", strat.tail);
  out << "tail_threshold = " << strat.tail_threshold << '\n';
  out << "predicted_tail_proportion = " << strat.predicted_tail_proportion << '\n';
}

void render_table(std::ostream& out, std::span<const TableRow> rows) {
  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  auto cell = [&](const std::string& s) { out << std::setw(10) << s; };
  out << std::left << std::setw(static_cast<int>(width)) << "Subset" << std::right;
  cell("Acc@1");
  cell("Acc@5");
  cell("Acc@10");
  cell("MRR");
  out << std::setw(10) << "N" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.label << std::right;
    if (!r.metrics.present()) {
      for (int i = 0; i < 4; ++i) cell("-");
    } else {
      out << std::fixed << std::setprecision(4);
      out << std::setw(10) << r.metrics.acc1 << std::setw(10) << r.metrics.acc5 << std::setw(10) << r.metrics.acc10
          << std::setw(10) << r.metrics.mrr;
      out.unsetf(std::ios::fixed);
    }
    out << std::setw(10) << r.metrics.n_samples << '\n';
  }
}

void export_embeddings(const Matrix& poi_embeddings, const FrequencyTable& freq, const Vocabulary& pois,
                       const std::filesystem::path& path) {
  if (poi_embeddings.rows() != pois.size() || freq.size() != pois.size()) {
    throw ShapeError("export_embeddings: embedding rows, frequencies and vocabulary differ in size");
  }
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "# d_p=" << poi_embeddings.cols() << " n_pois=" << poi_embeddings.rows() << '\n';
  f << std::setprecision(17);
  for (Eigen::Index i = 0; i < poi_embeddings.rows(); ++i) {
    f << pois.id(static_cast<int>(i)) << '\t' << freq[static_cast<int>(i)];
    for (Eigen::Index j = 0; j < poi_embeddings.cols(); ++j) f << '\t' << poi_embeddings(i, j);
    f << '\n';
  }
  if (!f) throw Error("write failed: " + path.string());
}

}  // namespace lotnext
