#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "lotnext/error.hpp"
#include "lotnext/eval.hpp"
#include "test_util.hpp"

using namespace lotnext;

namespace {

FrequencyTable table_of(std::vector<std::int64_t> counts) {
  FrequencyTable f;
  f.max = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
  f.counts = std::move(counts);
  return f;
}

// Position of the label after a stable descending sort.
int sorted_rank(const Matrix& scores, Eigen::Index row, int label) {
  std::vector<int> order(static_cast<std::size_t>(scores.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores(row, a) > scores(row, b); });
  return static_cast<int>(std::find(order.begin(), order.end(), label) - order.begin()) + 1;
}

}  // namespace

TEST(Metrics, WorkedExample) {
  // labels land at ranks 1, 2 and 4
  Matrix s(3, 5);
  s << 0.9, 0.1, 0.0, 0.0, 0.0,  //
      0.5, 0.7, 0.1, 0.0, 0.0,   //
      0.4, 0.3, 0.2, 0.6, 0.1;
  const std::vector<int> labels = {0, 0, 2};
  EXPECT_EQ(ranks(s, labels), (std::vector<int>{1, 2, 4}));
  EXPECT_NEAR(accuracy_at_k(s, labels, 1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(accuracy_at_k(s, labels, 2), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(accuracy_at_k(s, labels, 5), 1.0, 1e-15);
  EXPECT_NEAR(mrr(s, labels), (1.0 + 0.5 + 0.25) / 3.0, 1e-15);
  EXPECT_NEAR(mrr(s, labels), 0.58333, 1e-5);
}

TEST(Metrics, TiesFavourLowerIndex) {
  const std::vector<double> s = {0.5, 0.5, 0.5};
  EXPECT_EQ(rank_of(s, 0), 1);
  EXPECT_EQ(rank_of(s, 1), 2);
  EXPECT_EQ(rank_of(s, 2), 3);
  EXPECT_THROW(rank_of(s, 3), ShapeError);
}

TEST(Metrics, AgreesWithSortOracle) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> lab(0, 29), coarse(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix s(20, 30);
    // coarse values force plenty of ties
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = trial % 2 ? coarse(rng) : lotnext::testing::random_matrix(rng, 1, 1)(0, 0);
    std::vector<int> labels(20);
    for (auto& l : labels) l = lab(rng);
    const auto r = ranks(s, labels);
    double rr = 0.0;
    int hit5 = 0;
    for (int i = 0; i < 20; ++i) {
      const int expect = sorted_rank(s, i, labels[static_cast<std::size_t>(i)]);
      EXPECT_EQ(r[static_cast<std::size_t>(i)], expect);
      rr += 1.0 / expect;
      hit5 += expect <= 5;
    }
    const auto m = compute_metrics(s, labels);
    EXPECT_NEAR(m.mrr, rr / 20.0, 1e-12);
    EXPECT_NEAR(m.acc5, hit5 / 20.0, 1e-12);
    EXPECT_LE(m.acc1, m.acc5);
    EXPECT_LE(m.acc5, m.acc10);
    EXPECT_LE(m.acc1, m.mrr);
    EXPECT_LE(m.mrr, 1.0);
  }
}

TEST(Metrics, EmptyInputIsAbsent) {
  const Matrix s(0, 4);
  const auto m = compute_metrics(s, std::vector<int>{});
  EXPECT_FALSE(m.present());
  EXPECT_EQ(mrr(s, std::vector<int>{}), 0.0);
  EXPECT_THROW(accuracy_at_k(s, std::vector<int>{}, 0), Error);
  EXPECT_THROW(ranks(Matrix::Zero(2, 3), std::vector<int>{0}), ShapeError);
}

TEST(Stratified, PartitionRecombinesToOverall) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> lab(0, 49), cnt(0, 300);
  std::vector<std::int64_t> counts(50);
  for (auto& c : counts) c = cnt(rng);
  const auto freq = table_of(counts);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s = lotnext::testing::random_matrix(rng, 100, 50);
    std::vector<int> labels(100);
    for (auto& l : labels) l = lab(rng);
    const auto all = compute_metrics(s, labels);
    const auto st = stratified_metrics(s, labels, freq, 100);
    EXPECT_EQ(st.head.n_samples + st.tail.n_samples, 100u);
    const double nh = static_cast<double>(st.head.n_samples), nt = static_cast<double>(st.tail.n_samples);
    EXPECT_NEAR((nh * st.head.mrr + nt * st.tail.mrr) / 100.0, all.mrr, 1e-12);
    EXPECT_NEAR((nh * st.head.acc1 + nt * st.tail.acc1) / 100.0, all.acc1, 1e-12);
    EXPECT_NEAR((nh * st.head.acc10 + nt * st.tail.acc10) / 100.0, all.acc10, 1e-12);
    int tail_top = 0;
    for (int i = 0; i < 100; ++i) {
      Eigen::Index top;
      s.row(i).maxCoeff(&top);
      tail_top += counts[static_cast<std::size_t>(top)] < 100;
    }
    EXPECT_NEAR(st.predicted_tail_proportion, tail_top / 100.0, 1e-15);
  }
}

TEST(Stratified, ThresholdEdges) {
  const auto freq = table_of({5, 100, 99});
  Matrix s(3, 3);
  s << 1, 0, 0,  //
      0, 1, 0,   //
      0, 0, 1;
  const std::vector<int> labels = {0, 1, 2};
  const auto st = stratified_metrics(s, labels, freq, 100);
  EXPECT_EQ(st.tail.n_samples, 2u);  // counts 5 and 99
  EXPECT_EQ(st.head.n_samples, 1u);  // count 100 is head
  EXPECT_NEAR(st.predicted_tail_proportion, 2.0 / 3.0, 1e-15);

  const auto none = stratified_metrics(s, labels, freq, 0);
  EXPECT_FALSE(none.tail.present());
  EXPECT_EQ(none.head.n_samples, 3u);
  EXPECT_EQ(none.predicted_tail_proportion, 0.0);
  EXPECT_THROW(stratified_metrics(Matrix::Zero(3, 2), labels, freq, 100), ShapeError);
}

TEST(Report, StructuredTextAndTable) {
  const MetricsReport overall{0.5, 0.75, 1.0, 0.625, 4};
  StratifiedReport st;
  st.head = overall;
  st.predicted_tail_proportion = 0.25;
  std::ostringstream r;
  write_report(r, overall, st);
  const auto text = r.str();
  EXPECT_NE(text.find("overall.acc@1 = 0.5\n"), std::string::npos);
  EXPECT_NE(text.find("overall.mrr = 0.625\n"), std::string::npos);
  EXPECT_NE(text.find("tail.metrics = absent\n"), std::string::npos);
  EXPECT_NE(text.find("tail_threshold = 100\n"), std::string::npos);
  EXPECT_NE(text.find("predicted_tail_proportion = 0.25\n"), std::string::npos);

  const std::vector<TableRow> rows = {{"overall", overall}, {"tail", {}}};
  std::ostringstream t;
  render_table(t, rows);
  std::istringstream lines(t.str());
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  for (const char* col : {"Acc@1", "Acc@5", "Acc@10", "MRR"}) EXPECT_NE(header.find(col), std::string::npos) << col;
  EXPECT_LT(header.find("Acc@1"), header.find("Acc@5"));
  EXPECT_LT(header.find("Acc@10"), header.find("MRR"));
  EXPECT_NE(first.find("0.5000"), std::string::npos);
  EXPECT_NE(first.find("0.6250"), std::string::npos);
  EXPECT_NE(second.find("-"), std::string::npos);
  EXPECT_EQ(header.size(), first.size());
}

TEST(ExportEmbeddings, HeaderRowsAndRoundTrip) {
  std::mt19937_64 rng(23);
  const Matrix emb = lotnext::testing::random_matrix(rng, 5, 3);
  Vocabulary pois;
  for (int i = 0; i < 5; ++i) pois.add("venue_" + std::to_string(i));
  const auto freq = table_of({7, 0, 3, 12, 1});
  const auto path = std::filesystem::temp_directory_path() / "lotnext_export_test.tsv";
  export_embeddings(emb, freq, pois, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "# d_p=3 n_pois=5");
  int n = 0;
  while (std::getline(f, line)) {
    std::istringstream row(line);
    std::string id;
    std::int64_t count;
    std::getline(row, id, '\t');
    row >> count;
    EXPECT_EQ(id, pois.id(n));
    EXPECT_EQ(count, freq[n]);
    for (int j = 0; j < 3; ++j) {
      double v;
      row >> v;
      EXPECT_EQ(v, emb(n, j));
    }
    ++n;
  }
  EXPECT_EQ(n, 5);
  EXPECT_THROW(export_embeddings(emb.topRows(4), freq, pois, path), ShapeError);
  std::filesystem::remove(path);
}
