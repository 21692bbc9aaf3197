#include "sepkit/wrappers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sepkit {

namespace {

void check_square(const std::vector<std::vector<double>>& m) {
  if (m.empty()) throw std::invalid_argument("pit: empty loss matrix");
  for (const auto& row : m)
    if (row.size() != m.size())
      throw std::invalid_argument("pit: loss matrix not square");
}

// mean of L[i][pi[i]] in fixed row order, so exhaustive and Hungarian
// agree bitwise whenever they pick the same permutation
double assignment_loss(const std::vector<std::vector<double>>& m,
                       const Permutation& pi) {
  double acc = 0.0;
  for (size_t i = 0; i < m.size(); ++i) acc += m[i][pi[i]];
  return acc / static_cast<double>(m.size());
}

std::vector<std::vector<double>> build_loss_matrix(
    const CriterionSpec& criterion, const std::vector<Signal>& refs,
    const std::vector<Signal>& ests) {
  const size_t s = refs.size();
  std::vector<std::vector<double>> m(s, std::vector<double>(s));
  for (size_t i = 0; i < s; ++i)
    for (size_t j = 0; j < s; ++j) m[i][j] = criterion_loss(criterion, refs[i], ests[j]);
  return m;
}

}  // namespace

std::pair<double, Permutation> pit_exhaustive(
    const std::vector<std::vector<double>>& loss_matrix) {
  check_square(loss_matrix);
  const int s = static_cast<int>(loss_matrix.size());
  Permutation pi(s);
  std::iota(pi.begin(), pi.end(), 0);
  Permutation best = pi;
  double best_loss = assignment_loss(loss_matrix, pi);
  // next_permutation walks lexicographically, so on ties the first
  // (smallest) permutation is kept
  while (std::next_permutation(pi.begin(), pi.end())) {
    const double loss = assignment_loss(loss_matrix, pi);
    if (loss < best_loss) {
      best_loss = loss;
      best = pi;
    }
  }
  return {best_loss, best};
}

std::pair<double, Permutation> pit_hungarian(
    const std::vector<std::vector<double>>& loss_matrix) {
  check_square(loss_matrix);
  const int n = static_cast<int>(loss_matrix.size());
  const double inf = std::numeric_limits<double>::infinity();

  // shortest augmenting path with potentials, 1-based scratch arrays
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0);  // match[col] = row
  for (int i = 1; i <= n; ++i) {
    std::vector<double> min_slack(n + 1, inf);
    std::vector<int> prev(n + 1, 0);
    std::vector<bool> used(n + 1, false);
    int j0 = 0;
    match[0] = i;
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = loss_matrix[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < min_slack[j]) {
          min_slack[j] = cur;
          prev[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    while (j0 != 0) {
      const int j1 = prev[j0];
      match[j0] = match[j1];
      j0 = j1;
    }
  }

  Permutation pi(n);
  for (int j = 1; j <= n; ++j) pi[match[j] - 1] = j - 1;
  return {assignment_loss(loss_matrix, pi), pi};
}

LossReport pit_wrap(const CriterionSpec& criterion,
                    const std::vector<Signal>& refs,
                    const std::vector<Signal>& ests) {
  if (refs.empty() || refs.size() != ests.size())
    throw std::invalid_argument("pit_wrap: need equal nonzero source counts");
  const auto m = build_loss_matrix(criterion, refs, ests);
  const auto [loss, pi] =
      refs.size() <= 4 ? pit_exhaustive(m) : pit_hungarian(m);
  LossReport report;
  report.loss = loss;
  report.score = -loss;
  report.permutation = pi;
  return report;
}

LossReport mixit_wrap(const CriterionSpec& criterion,
                      const std::vector<Signal>& mixtures,
                      const std::vector<Signal>& ests, long budget) {
  const int n = static_cast<int>(mixtures.size());
  const int m = static_cast<int>(ests.size());
  if (n < 1 || m < n)
    throw std::invalid_argument("mixit_wrap: need 1 <= num_mixtures <= num_estimates");
  double combos = 1.0;
  for (int j = 0; j < m; ++j) combos *= n;
  if (combos > static_cast<double>(budget))
    throw std::invalid_argument("mixit_wrap: N^M exceeds enumeration budget");

  const long len = static_cast<long>(mixtures[0].size());
  for (const auto& sig : mixtures)
    if (static_cast<long>(sig.size()) != len)
      throw std::invalid_argument("mixit_wrap: length mismatch");
  for (const auto& sig : ests)
    if (static_cast<long>(sig.size()) != len)
      throw std::invalid_argument("mixit_wrap: length mismatch");

  std::vector<int> assign(m, 0);  // assign[j] = mixture owning estimate j
  std::vector<int> best_assign;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Signal> sums(n, Signal(len, 0.0));

  // counting in base n with assign[0] most significant visits
  // assignments in lexicographic order; strict improvement keeps the
  // first (smallest) on ties
  while (true) {
    for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
    for (int j = 0; j < m; ++j)
      for (long t = 0; t < len; ++t) sums[assign[j]][t] += ests[j][t];
    double loss = 0.0;
    for (int i = 0; i < n; ++i) loss += criterion_loss(criterion, mixtures[i], sums[i]);
    loss /= n;
    if (loss < best_loss) {
      best_loss = loss;
      best_assign = assign;
    }
    int j = m - 1;
    while (j >= 0 && assign[j] == n - 1) {
      assign[j] = 0;
      --j;
    }
    if (j < 0) break;
    ++assign[j];
  }

  LossReport report;
  report.loss = best_loss;
  report.score = -best_loss;
  MixingMatrix mix;
  mix.num_mixtures = n;
  mix.num_estimates = m;
  mix.column_of = best_assign;
  report.mixing = mix;
  return report;
}

WrapperKind wrapper_kind_from_name(const std::string& name) {
  if (name == "fixed") return WrapperKind::fixed;
  if (name == "pit") return WrapperKind::pit;
  if (name == "mixit") return WrapperKind::mixit;
  throw std::invalid_argument("unknown wrapper: " + name);
}

std::string wrapper_kind_name(WrapperKind kind) {
  switch (kind) {
    case WrapperKind::fixed: return "fixed";
    case WrapperKind::pit: return "pit";
    case WrapperKind::mixit: return "mixit";
  }
  return "unknown";
}

MtlReport mtl_combine(const MtlSpec& spec, const MtlBatch& batch) {
  if (spec.entries.empty()) throw std::invalid_argument("mtl_combine: empty spec");
  MtlReport report;
  for (const auto& entry : spec.entries) {
    double value = 0.0;
    switch (entry.wrapper) {
      case WrapperKind::fixed: {
        if (batch.refs.size() != batch.ests.size() || batch.refs.empty())
          throw std::invalid_argument("mtl_combine: fixed wrapper needs paired refs/ests");
        for (size_t i = 0; i < batch.refs.size(); ++i)
          value += criterion_loss(entry.criterion, batch.refs[i], batch.ests[i]);
        value /= static_cast<double>(batch.refs.size());
        break;
      }
      case WrapperKind::pit:
        value = pit_wrap(entry.criterion, batch.refs, batch.ests).loss;
        break;
      case WrapperKind::mixit:
        value = mixit_wrap(entry.criterion, batch.mixtures, batch.ests).loss;
        break;
    }
    report.values.push_back(value);
    report.total += entry.weight * value;
  }
  return report;
}

}  // namespace sepkit
