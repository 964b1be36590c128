#include "lear/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lear/errors.hpp"

namespace lear {

Tensor<float> build_guidance(const Tensor<float>& m_first, const Tensor<float>& m_last) {
  if (!m_first.same_shape(m_last)) throw ShapeError("build_guidance: shape mismatch");
  Tensor<float> sum(m_first.shape());
  const std::int64_t n = sum.numel();
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (std::int64_t i = 0; i < n; ++i) {
    sum[i] = std::abs(m_first[i]) + std::abs(m_last[i]);
    lo = std::min(lo, sum[i]);
    hi = std::max(hi, sum[i]);
  }
  const float span = hi - lo;
  if (!(span > 0)) {
    sum.fill(0.0f);  // constant combined map carries no spatial information
    return sum;
  }
  for (std::int64_t i = 0; i < n; ++i) sum[i] = (sum[i] - lo) / span;
  return sum;
}

GroundTruthMap ground_truth_map(const ImageTensor& baseline, const ImageTensor& target) {
  if (!baseline.values.same_shape(target.values))
    throw ShapeError("ground_truth_map: shape mismatch");
  GroundTruthMap m;
  m.values = Tensor<float>(baseline.values.shape());
  for (std::int64_t i = 0; i < m.values.numel(); ++i)
    m.values[i] = baseline.values[i] - target.values[i];
  m.direction = GtDirection::plus;
  return m;
}

GroundTruthMap negated(const GroundTruthMap& m) {
  GroundTruthMap out;
  out.values = Tensor<float>(m.values.shape());
  for (std::int64_t i = 0; i < m.values.numel(); ++i) out.values[i] = -m.values[i];
  out.direction = m.direction == GtDirection::plus ? GtDirection::minus : GtDirection::plus;
  out.baseline_id = m.baseline_id;
  out.target_id = m.target_id;
  return out;
}

namespace {

template <typename T>
double ncc_impl(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("ncc: shape mismatch");
  const std::int64_t n = a.numel();
  if (n < 2) throw ArgumentError("ncc: need at least 2 elements");
  double ma = 0, mb = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    ma += static_cast<double>(a[i]);
    mb += static_cast<double>(b[i]);
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double va = 0, vb = 0, cov = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double da = static_cast<double>(a[i]) - ma;
    const double db = static_cast<double>(b[i]) - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  const double sa = std::sqrt(va / static_cast<double>(n));
  const double sb = std::sqrt(vb / static_cast<double>(n));
  if (sa <= 1e-12 || sb <= 1e-12)
    throw UndefinedScoreError("ncc: zero-variance operand");
  return cov / (static_cast<double>(n) * sa * sb);
}

}  // namespace

double ncc(const Tensor<float>& a, const Tensor<float>& b) { return ncc_impl(a, b); }
double ncc(const Tensor<double>& a, const Tensor<double>& b) { return ncc_impl(a, b); }

std::string NccReport::to_csv() const {
  std::ostringstream out;
  out << "scenario,direction,n,mean\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.scenario << ',' << r.direction << ',' << r.n << ',' << r.mean << '\n';
  return out.str();
}

std::string NccReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"scenario", r.scenario},
                 {"direction", r.direction},
                 {"n", r.n},
                 {"mean", r.mean}});
  return j.dump(2);
}

const NccReport::Row* NccReport::find(const std::string& scenario,
                                      const std::string& direction) const {
  for (const auto& r : rows)
    if (r.scenario == scenario && r.direction == direction) return &r;
  return nullptr;
}

double NccReport::overall_mean(const std::string& direction) const {
  double s = 0;
  int n = 0;
  for (const auto& r : rows)
    if (r.direction == direction && r.n > 0) {
      s += r.mean * r.n;
      n += r.n;
    }
  return n > 0 ? s / n : 0.0;
}

NccReport directional_ncc(const std::vector<DirectionalEntry>& entries) {
  if (entries.empty()) throw ArgumentError("directional_ncc: no matched pairs");
  std::map<std::pair<std::pair<int, int>, std::string>, std::pair<double, int>> acc;
  for (const auto& e : entries) {
    if (e.source_class == e.target_class)
      throw ArgumentError("directional_ncc: source equals target for subject " + e.subject_id);
    const int lo = std::min(e.source_class, e.target_class);
    const int hi = std::max(e.source_class, e.target_class);
    const std::string dir = e.target_class < e.source_class ? "+" : "-";
    auto& slot = acc[{{lo, hi}, dir}];
    slot.first += ncc(e.cf_map, e.gt_map);
    slot.second += 1;
  }
  NccReport rep;
  for (const auto& [key, slot] : acc) {
    NccReport::Row r;
    r.scenario = "c" + std::to_string(key.first.first) + "<->c" +
                 std::to_string(key.first.second);
    r.direction = key.second;
    r.n = slot.second;
    r.mean = slot.first / slot.second;
    rep.rows.push_back(r);
  }
  return rep;
}

double accuracy(const std::vector<int>& labels, const Tensor<float>& probability_rows) {
  const std::int64_t N = probability_rows.dim(0), C = probability_rows.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw ArgumentError("accuracy: label/prediction count mismatch");
  if (N == 0) return 0.0;
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < N; ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < C; ++c)
      if (probability_rows[i * C + c] > probability_rows[i * C + best]) best = c;
    hits += best == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

namespace {

// One-vs-rest AUC via the rank statistic with tie-averaged ranks.
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0;
  std::int64_t n_pos = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (positive[k]) {
      rank_sum += rank[k];
      ++n_pos;
    }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ArgumentError("auc: single-class input");
  const double u = rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

double mauc(const std::vector<int>& labels, const Tensor<float>& probability_rows) {
  const std::int64_t N = probability_rows.dim(0), C = probability_rows.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw ArgumentError("mauc: label/prediction count mismatch");
  int present = 0;
  for (int c = 0; c < C; ++c)
    if (std::count(labels.begin(), labels.end(), c) > 0) ++present;
  if (present < 2) throw ArgumentError("mauc: need >= 2 classes present");

  double sum = 0;
  int used = 0;
  for (int c = 0; c < C; ++c) {
    const auto n_pos = std::count(labels.begin(), labels.end(), c);
    if (n_pos == 0 || n_pos == N) {
      std::fprintf(stderr, "[mauc] warning: class %d absent or exhaustive, skipped\n", c);
      continue;
    }
    std::vector<double> scores(static_cast<std::size_t>(N));
    std::vector<bool> positive(static_cast<std::size_t>(N));
    for (std::int64_t i = 0; i < N; ++i) {
      scores[static_cast<std::size_t>(i)] = probability_rows[i * C + c];
      positive[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c;
    }
    sum += binary_auc(scores, positive);
    ++used;
  }
  return sum / used;
}

}  // namespace lear
