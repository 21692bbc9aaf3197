#ifndef SEPKIT_WRAPPERS_HPP
#define SEPKIT_WRAPPERS_HPP

#include <optional>
#include <string>
#include <vector>

#include "sepkit/criteria.hpp"
#include "sepkit/types.hpp"

namespace sepkit {

// pi[i] = index of the estimate assigned to reference i
using Permutation = std::vector<int>;

// N mixtures x M estimates, binary, each column sums to 1;
// column_of[j] = row (mixture) owning estimate j.
struct MixingMatrix {
  int num_mixtures = 0;
  int num_estimates = 0;
  std::vector<int> column_of;

  bool operator==(const MixingMatrix& o) const {
    return num_mixtures == o.num_mixtures && num_estimates == o.num_estimates &&
           column_of == o.column_of;
  }
};

struct LossReport {
  double loss = 0.0;   // lower is better (dB criteria negated)
  double score = 0.0;  // -loss, native sign for dB criteria
  std::optional<Permutation> permutation;
  std::optional<MixingMatrix> mixing;
};

// Both solvers take an SxS loss matrix (row = reference, col = estimate)
// and return the mean loss of the best assignment. The exhaustive search
// breaks ties by lexicographically smallest permutation.
std::pair<double, Permutation> pit_exhaustive(
    const std::vector<std::vector<double>>& loss_matrix);
std::pair<double, Permutation> pit_hungarian(
    const std::vector<std::vector<double>>& loss_matrix);

// Exhaustive for S <= 4, Hungarian above.
LossReport pit_wrap(const CriterionSpec& criterion,
                    const std::vector<Signal>& refs,
                    const std::vector<Signal>& ests);

// Best assignment of M estimates to N mixtures (N^M enumeration,
// budget-capped), comparing each mixture against the sum of its
// assigned estimates.
LossReport mixit_wrap(const CriterionSpec& criterion,
                      const std::vector<Signal>& mixtures,
                      const std::vector<Signal>& ests,
                      long budget = 4096);

enum class WrapperKind { fixed, pit, mixit };

WrapperKind wrapper_kind_from_name(const std::string& name);
std::string wrapper_kind_name(WrapperKind kind);

struct MtlEntry {
  WrapperKind wrapper = WrapperKind::fixed;
  CriterionSpec criterion;
  double weight = 1.0;
};

struct MtlSpec {
  std::vector<MtlEntry> entries;
};

struct MtlBatch {
  std::vector<Signal> refs;
  std::vector<Signal> ests;
  std::vector<Signal> mixtures;  // mixit wrappers only
};

struct MtlReport {
  double total = 0.0;
  std::vector<double> values;  // unweighted per-entry losses
};

MtlReport mtl_combine(const MtlSpec& spec, const MtlBatch& batch);

}  // namespace sepkit

#endif
