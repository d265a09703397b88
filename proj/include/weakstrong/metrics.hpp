#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/tensor.hpp"

namespace weakstrong {

inline std::vector<int> argmax_rows(const Tensor2D& probs) {
  std::vector<int> out(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols; ++j) {
      if (probs.at(i, j) > probs.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

// Slide-level score: ratio of predicted high-grade patches over all patches.
inline double slide_score(const std::vector<int>& patch_predictions, int high_class = 1) {
  if (patch_predictions.empty()) throw ValueError("slide_score: empty slide");
  std::size_t high = 0;
  for (int p : patch_predictions) {
    if (p == high_class) ++high;
  }
  return static_cast<double>(high) / static_cast<double>(patch_predictions.size());
}

// ROC AUC in the Mann-Whitney formulation, computed through tie-averaged
// ranks: AUC = (R+ - n+(n+ + 1)/2) / (n+ n-). Ties are credited 1/2.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc: scores/labels length mismatch");
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y == 1) {
      ++n_pos;
    } else if (y == 0) {
      ++n_neg;
    } else {
      throw ValueError("roc_auc: labels must be 0 or 1");
    }
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ValueError("roc_auc: undefined metric, only one class present");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5) {
  if (scores.size() != labels.size()) {
    throw DimensionError("accuracy: scores/labels length mismatch");
  }
  if (scores.empty()) throw ValueError("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted_high = scores[i] >= threshold;
    const bool is_high = labels[i] == 1;
    if (predicted_high == is_high) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

namespace detail {

// counts pairs (i < j) with v[i] > v[j] via merge sort
inline std::uint64_t count_inversions(std::vector<int>& v) {
  const std::size_t n = v.size();
  std::vector<int> tmp(n);
  std::uint64_t inversions = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
      const std::size_t mid = lo + width;
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, out = lo;
      while (a < mid && b < hi) {
        if (v[b] < v[a]) {
          inversions += mid - a;
          tmp[out++] = v[b++];
        } else {
          tmp[out++] = v[a++];
        }
      }
      while (a < mid) tmp[out++] = v[a++];
      while (b < hi) tmp[out++] = v[b++];
      std::copy(tmp.begin() + lo, tmp.begin() + hi, v.begin() + lo);
    }
  }
  return inversions;
}

inline std::uint64_t tie_pairs(std::uint64_t run) { return run * (run - 1) / 2; }

}  // namespace detail

enum class TauVariant { a, b };

// Kendall rank correlation between scores and an ordinal grouping. The
// tie-corrected tau-b form is the default: (C - D) / sqrt((n0-n1)(n0-n2)).
// Computed with the O(n log n) sort-and-merge scheme rather than pair
// enumeration.
inline double kendall_tau(const std::vector<double>& scores, const std::vector<int>& groups,
                          TauVariant variant = TauVariant::b) {
  const std::size_t n = scores.size();
  if (groups.size() != n) throw DimensionError("kendall_tau: scores/groups length mismatch");
  if (n < 2) throw ValueError("kendall_tau: needs at least 2 items");
  if (std::all_of(groups.begin(), groups.end(), [&](int g) { return g == groups[0]; })) {
    throw ValueError("kendall_tau: undefined, all items in one group");
  }

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return groups[a] < groups[b];
  });

  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;

  // ties in scores, and joint (score, group) ties
  std::uint64_t tx = 0, txy = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    tx += detail::tie_pairs(j - i);
    std::size_t a = i;
    while (a < j) {
      std::size_t b = a;
      while (b < j && groups[idx[b]] == groups[idx[a]]) ++b;
      txy += detail::tie_pairs(b - a);
      a = b;
    }
    i = j;
  }

  // ties in groups
  std::vector<int> sorted_groups(groups);
  std::sort(sorted_groups.begin(), sorted_groups.end());
  std::uint64_t ty = 0;
  i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && sorted_groups[j] == sorted_groups[i]) ++j;
    ty += detail::tie_pairs(j - i);
    i = j;
  }

  // discordant pairs = inversions of the group sequence in score order
  std::vector<int> seq(n);
  for (std::size_t k = 0; k < n; ++k) seq[k] = groups[idx[k]];
  const std::uint64_t discordant = detail::count_inversions(seq);

  const double c_minus_d = static_cast<double>(n0) - static_cast<double>(tx) -
                           static_cast<double>(ty) + static_cast<double>(txy) -
                           2.0 * static_cast<double>(discordant);
  if (variant == TauVariant::a) {
    return c_minus_d / static_cast<double>(n0);
  }
  if (n0 == tx) return 0.0;  // all scores equal: no ranking information
  const double denom = std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
  return c_minus_d / denom;
}

}  // namespace weakstrong
