// Point-level (AUROC, FPR@95, AP) and object-level (RecallQ, SQ, RQ, PQ, UQ)
// anomaly segmentation metrics, plus the key-sorted text report.
#pragma once

#include "ndp/core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ndp {

class UndefinedMetric : public ContractError {
 public:
  using ContractError::ContractError;
};

using Mask = std::span<const std::uint8_t>;

/// Mann-Whitney statistic, ties count 1/2. `ignore` may be empty (no masking).
double auroc(std::span<const double> scores, Mask is_ood, Mask ignore = {});

/// FPR at the largest threshold (score >= t is OOD) whose TPR reaches 0.95.
double fpr_at_95_tpr(std::span<const double> scores, Mask is_ood, Mask ignore = {});

/// Step-interpolated precision-recall integral; tied scores form one block.
double average_precision(std::span<const double> scores, Mask is_ood, Mask ignore = {});

/// Largest threshold t such that flagging score >= t reaches the requested TPR.
double threshold_at_tpr(std::span<const double> scores, Mask is_ood, Mask ignore, double tpr);

struct PointMetrics {
  double auroc = 0.0;
  double fpr95 = 0.0;
  double ap = 0.0;
  bool defined = false;
};

PointMetrics point_metrics(std::span<const double> scores, Mask is_ood, Mask ignore = {});

struct EvalConfig {
  static constexpr double kIouThreshold = 0.5;

  double gamma = 0.0;
  double dbscan_eps = 0.5;
  std::size_t dbscan_min_pts = 5;
  double iou_threshold = kIouThreshold;

  void validate() const;
};

using Instance = std::vector<std::size_t>;  // ascending point indices

/// Binarize at gamma (score > gamma), DBSCAN the flagged points; each cluster is a prediction.
std::vector<Instance> cluster_predictions(const ScoreField& scores, const PointCloud& cloud, const EvalConfig& cfg);

/// Anomaly instances of a label map: REAL_OOD points grouped by instance id, ascending id.
std::vector<Instance> ground_truth_instances(const LabelMap& labels);

struct MatchPair {
  std::size_t pred;
  std::size_t gt;
  double iou;
  // Point counts behind iou; the panoptic scores divide these directly.
  std::size_t intersection = 0;
  std::size_t union_size = 0;
};

struct MatchResult {
  std::vector<MatchPair> tp;
  std::vector<std::size_t> fp;  // prediction indices
  std::vector<std::size_t> fn;  // ground-truth indices
  std::size_t dropped = 0;      // predictions wholly inside ignore regions

  void append(const MatchResult& other);
};

/// Greedy one-to-one matching by descending IoU (ties: gt, then pred ascending);
/// a pair counts when IoU > 0.5. Ignored points are removed from both sides first.
MatchResult match_instances(const std::vector<Instance>& preds, const std::vector<Instance>& gts, Mask ignore,
                            double iou_threshold = EvalConfig::kIouThreshold);

struct PanopticScores {
  double sq = 0.0;
  double rq = 0.0;
  double pq = 0.0;
  double recall_q = 0.0;
  double uq = 0.0;
};

PanopticScores panoptic_scores(const MatchResult& match);

/// Flat key -> value record, serialized one `key = value` per line, key-sorted.
using Report = std::map<std::string, std::string>;

std::string format_double(double v);
std::string serialize_report(const Report& report);
Report parse_report(const std::string& text);
void write_report(const std::filesystem::path& path, const Report& report);
Report read_report(const std::filesystem::path& path);

/// The fields every evaluation report carries.
const std::vector<std::string>& report_schema();

/// Metric section of a report (the eight metrics plus match counts).
void put_metrics(Report& report, const PointMetrics& point, const MatchResult& match, const PanopticScores& pq);

}  // namespace ndp
