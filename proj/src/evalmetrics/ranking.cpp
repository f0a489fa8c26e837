#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "alab/error.hpp"
#include "alab/evalmetrics.hpp"

namespace alab {

namespace {

// Spread below this fraction of the largest magnitude counts as constant, so
// sums of the same values in a different order do not fake a correlation.
bool flat(const std::vector<double>& v, double mean, double ss) {
  double scale = 0.0;
  for (double e : v) scale = std::max(scale, std::abs(e));
  return ss == 0.0 || std::sqrt(ss / static_cast<double>(v.size())) <= 1e-12 * std::max(scale, std::abs(mean));
}

}  // namespace

double pearson(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate) {
  if (a.size() != b.size()) fail(ErrorKind::InvalidInput, "pearson: vectors differ in length");
  if (degenerate) *degenerate = false;
  if (a.size() < 2) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (flat(a, ma, saa) || flat(b, mb, sbb)) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& values, bool descending) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? values[a] > values[b] : values[a] < values[b];
  });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail(ErrorKind::InvalidInput, "spearman: vectors differ in length");
  return pearson(average_ranks(a), average_ranks(b));
}

RankColumn rank_column(std::string metric, std::vector<double> scores, bool higher_is_better) {
  RankColumn c;
  c.metric = std::move(metric);
  c.higher_is_better = higher_is_better;
  c.scores = std::move(scores);
  c.ranks = average_ranks(c.scores, higher_is_better);
  return c;
}

RankTable build_rank_table(std::vector<std::string> methods, RankColumn reference, std::vector<RankColumn> columns) {
  if (methods.size() < 3) fail(ErrorKind::InvalidInput, "rank table needs at least three methods");
  auto check = [&](RankColumn& c) {
    if (c.scores.size() != methods.size()) {
      fail(ErrorKind::InvalidInput, "rank column '" + c.metric + "' has " + std::to_string(c.scores.size()) +
                                        " scores for " + std::to_string(methods.size()) + " methods");
    }
    c.ranks = average_ranks(c.scores, c.higher_is_better);
  };
  check(reference);
  reference.spearman = 1.0;
  for (RankColumn& c : columns) {
    check(c);
    c.spearman = pearson(c.ranks, reference.ranks);
  }
  return {std::move(methods), std::move(reference), std::move(columns)};
}

nlohmann::json RankTable::to_json() const {
  auto column = [](const RankColumn& c) {
    return nlohmann::json{{"metric", c.metric},
                          {"higher_is_better", c.higher_is_better},
                          {"scores", c.scores},
                          {"ranks", c.ranks},
                          {"spearman", c.spearman}};
  };
  nlohmann::json cols = nlohmann::json::array();
  for (const RankColumn& c : columns) cols.push_back(column(c));
  return {{"methods", methods}, {"reference", column(reference)}, {"columns", cols}};
}

std::string RankTable::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "method," << reference.metric << "_score," << reference.metric << "_rank";
  for (const RankColumn& c : columns) os << ',' << c.metric << "_score," << c.metric << "_rank";
  os << '\n';
  for (std::size_t m = 0; m < methods.size(); ++m) {
    os << methods[m] << ',' << reference.scores[m] << ',' << reference.ranks[m];
    for (const RankColumn& c : columns) os << ',' << c.scores[m] << ',' << c.ranks[m];
    os << '\n';
  }
  os << "spearman,," << reference.spearman;
  for (const RankColumn& c : columns) os << ",," << c.spearman;
  os << '\n';
  return os.str();
}

}  // namespace alab
