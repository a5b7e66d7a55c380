#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "flowlump/common.hpp"
#include "flowlump/corpus.hpp"
#include "flowlump/lumping.hpp"
#include "flowlump/mapeq.hpp"

namespace flowlump {

struct FoldPlan {
  std::size_t k = 10;
  std::vector<std::uint32_t> fold_of;  // path index -> fold

  std::vector<std::size_t> fold_indices(std::size_t fold) const;
  std::vector<std::size_t> training_indices(std::size_t fold) const;
};

// Paths are grouped by group_key (one group when `grouped` is false), each
// group is shuffled with the seeded generator, and the concatenated groups are
// dealt to folds round robin. Every group is therefore spread as evenly as its
// size allows. Throws InvalidArgument when k < 2 or k exceeds the path count.
FoldPlan split_folds(const PathCorpus& corpus, std::size_t k, std::uint64_t seed, bool grouped = false);

struct TrainOptions {
  int order = 2;
  VisitRateOptions rates;
  LumpOptions lumping;
  OptimizeOptions optimize{.trials = 3};
};

struct TrainedFold {
  std::shared_ptr<const StateNetwork> original;
  std::vector<LumpDendrogram> dendrograms;
  SparseModel model;
  ModuleMap map;
  std::string warning;  // set when r was clamped
};

// Builds the state network and dendrograms of a training corpus.
TrainedFold prepare_fold(const PathCorpus& training, const TrainOptions& options,
                         const ParallelFor& parallel = sequential_for);

// Expands a prepared fold to r lumped states (clamped to the valid range with
// a warning) and optimizes the map of the lumped network. When the fold was
// already trained at a smaller r, the previous partition lifted onto the
// refined states is kept if it beats the fresh search.
void train_fold(TrainedFold& fold, std::size_t r, const TrainOptions& options);

// Convenience: prepare_fold followed by train_fold.
TrainedFold train_fold(const PathCorpus& training, std::size_t r, const TrainOptions& options);

struct Validation {
  double codelength_bits = 0.0;
  double dropped_weight = 0.0;   // validation window weight on physical nodes unseen in training
  double fallback_weight = 0.0;  // weight of windows whose context was unseen in training
};

// Maps every validation state onto a training lumped state and evaluates the
// training partition on the validation flow. Throws NoProjectableFlow when
// nothing survives the projection.
Validation validate_fold(const TrainedFold& fold, const PathCorpus& validation, const TrainOptions& options);

struct SweepOptions {
  std::size_t k = 10;
  std::uint64_t seed = 7;
  bool grouped = false;
  double schedule_factor = 1.4142135623730951;
  std::vector<std::size_t> schedule;  // explicit schedule; empty uses the geometric one
  std::size_t patience = 2;           // consecutive increases past the best before stopping
  bool early_stop = true;
  TrainOptions train;
};

struct CVRow {
  std::size_t r = 0;
  std::size_t fold = 0;
  bool valid = false;
  double train_bits = 0.0;
  double valid_bits = 0.0;
  double dropped_weight = 0.0;
  std::string note;
};

struct CVPoint {
  std::size_t r = 0;
  std::size_t valid_folds = 0;
  double median_train_bits = 0.0;
  double median_valid_bits = 0.0;
};

struct CVReport {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  int order = 0;
  std::size_t trials = 0;
  double schedule_factor = 0.0;
  std::size_t num_physical = 0;  // N of the full corpus
  std::size_t num_states = 0;    // state count of the full corpus
  std::vector<std::size_t> schedule;  // points actually evaluated
  std::vector<CVRow> rows;            // ordered by (r, fold)
  std::vector<CVPoint> points;
  std::size_t selected_r = 0;
  std::vector<std::string> warnings;
};

// ceil(n * factor^i) for i = 0, 1, ... deduplicated and capped at `total`
// (which closes the schedule).
std::vector<std::size_t> geometric_schedule(std::size_t n, std::size_t total, double factor);

// Median of the values; the mean of the two middle values for even counts.
double median(std::vector<double> values);

// Index of the smallest median validation code length; values within a
// relative 1e-12 count as ties, which go to the earlier (smaller r) point.
std::size_t select_point(std::span<const CVPoint> points);

CVReport sweep(const PathCorpus& corpus, const SweepOptions& options, const ParallelFor& parallel = sequential_for);

void write_cv_report(std::ostream& out, const CVReport& report);

}  // namespace flowlump
