#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "dcda/dataset/dataset.hpp"
#include "dcda/graph/graph.hpp"
#include "dcda/model/model.hpp"

namespace dcda {

// Rows are test images, columns candidate compositions. A row whose label is
// not among the candidates (possible after feasibility filtering) has
// truth == kAbsent and is always counted wrong.
struct ScoreMatrix {
  static constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();

  Matrix scores;
  std::vector<bool> seen_mask;   // per column
  std::vector<std::size_t> truth;  // per row
  std::vector<bool> row_seen;    // per row: is the label a seen composition

  void validate() const;
};

ScoreMatrix make_score_matrix(Matrix scores, const std::vector<Composition>& candidates,
                              const std::vector<Composition>& labels,
                              const std::vector<Composition>& seen);

struct CurvePoint {
  double bias = 0.0;
  double acc_seen = 0.0;
  double acc_unseen = 0.0;
};

struct EvalCurve {
  std::vector<CurvePoint> points;  // ascending bias, endpoints at -inf and +inf
  double seen = 0.0;    // S
  double unseen = 0.0;  // U
  double harmonic = 0.0;  // H
  double auc = 0.0;
  double best_bias = 0.0;  // bias attaining H
};

double harmonic_mean(double a, double b);

// Exact sweep: accuracies only change at the per-row gaps
// (max seen score - max unseen score), so one bias per interval between
// consecutive distinct gaps (the midpoint) plus the two infinite ends
// enumerates every distinct point of the curve.
EvalCurve bias_sweep_metrics(const ScoreMatrix& m);

// Accuracies at one bias added to every unseen column.
CurvePoint accuracy_at_bias(const ScoreMatrix& m, double bias);

// AUC = trapezoid area under the (acc_seen, acc_unseen) curve.
double curve_auc(std::vector<CurvePoint> points);

struct OpenWorldCandidates {
  std::vector<Composition> candidates;  // sorted
  std::vector<double> feasibility;      // per candidate; +inf for seen pairs
};

// Feasibility of (a, o):
//   mean( max_{o'' with (a,o'') seen} cos(rel.obj[o], rel.obj[o'']),
//         max_{a'' with (a'',o) seen} cos(rel.att[a], rel.att[a'']) )
// An empty max or a zero row counts as 0.
double feasibility_score(const RelevanceMatrices& rel, const Composition& c);

OpenWorldCandidates open_world_candidates(
    const Vocabulary& vocab, const std::vector<Composition>& seen, double threshold,
    const RelevanceMatrices& rel);

// Picks the threshold (-inf or one of the unseen feasibility values) whose
// filtered candidate set maximizes H on `val`, a score matrix over `all`.
struct ThresholdChoice {
  double threshold = -std::numeric_limits<double>::infinity();
  double harmonic = 0.0;
};
ThresholdChoice calibrate_feasibility_threshold(const ScoreMatrix& val,
                                                const OpenWorldCandidates& all);

// Keeps the columns whose feasibility is >= threshold (seen always kept).
ScoreMatrix filter_columns(const ScoreMatrix& m, const std::vector<double>& feasibility,
                           double threshold);

// Scores of cached images against candidates using `workers` threads.
Matrix parallel_score_matrix(const DcdaModel& model, const TextContext& ctx,
                             const std::vector<const Matrix*>& cached, std::size_t workers);

struct EvalOptions {
  bool open_world = false;
  // Open world: NaN calibrates on the validation split; -inf disables.
  double feasibility_threshold = std::numeric_limits<double>::quiet_NaN();
  std::size_t workers = 1;
};

struct EvalReport {
  std::string split;
  bool open_world = false;
  std::size_t candidates = 0;
  double feasibility_threshold = -std::numeric_limits<double>::infinity();
  EvalCurve curve;
  ScoreMatrix scores;
  std::vector<Composition> candidate_list;
};

enum class Split { val, test };

EvalReport evaluate(const DcdaModel& model, const Dataset& data, Split split,
                    const EvalOptions& options = {});

std::string metrics_json(const EvalReport& report);

// Per attribute: mean cosine over pairs of rows with that attribute and
// different objects. NaN where no such pair exists. With `centered`, the
// column mean over all rows is removed first, so a direction shared by every
// image contributes nothing.
std::vector<double> within_attribute_similarity(const Matrix& features,
                                                const std::vector<Composition>& labels,
                                                std::size_t n_attrs, bool centered = false);

// image_id,attr,obj,seen,hA_0..,hO_0..
void export_embeddings(const DcdaModel& model, const std::vector<LabeledImage>& images,
                       const Dataset& data, const std::filesystem::path& path);

// Header row: row,truth,truth_seen,<candidate labels>; second row holds the
// seen mask; then one row per image (truth -1 when absent).
std::string score_matrix_csv(const ScoreMatrix& m, const std::vector<std::string>& labels);
ScoreMatrix parse_score_matrix_csv(const std::string& text,
                                   std::vector<std::string>* labels = nullptr);

}  // namespace dcda
