#include "ndp/metrics.hpp"

#include "ndp/cluster.hpp"
#include "ndp/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace ndp {
namespace {

struct Ranked {
  double score;
  bool positive;
};

std::vector<Ranked> collect(std::span<const double> scores, Mask is_ood, Mask ignore) {
  if (is_ood.size() != scores.size()) throw ContractError("metrics: label mask length mismatch");
  if (!ignore.empty() && ignore.size() != scores.size()) throw ContractError("metrics: ignore mask length mismatch");
  std::vector<Ranked> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw ContractError("metrics: NaN score at index " + std::to_string(i));
    if (ignore.empty() || !ignore[i]) out.push_back({scores[i], is_ood[i] != 0});
  }
  return out;
}

std::pair<std::size_t, std::size_t> class_counts(const std::vector<Ranked>& v) {
  std::size_t pos = 0;
  for (const auto& r : v) pos += r.positive;
  return {pos, v.size() - pos};
}

// Descending order; callers walk tied blocks.
void sort_descending(std::vector<Ranked>& v) {
  std::sort(v.begin(), v.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
}

}  // namespace

double auroc(std::span<const double> scores, Mask is_ood, Mask ignore) {
  auto v = collect(scores, is_ood, ignore);
  const auto [pos, neg] = class_counts(v);
  if (pos == 0 || neg == 0) throw UndefinedMetric("undefined AUROC: need both OOD and ID points");
  std::sort(v.begin(), v.end(), [](const Ranked& a, const Ranked& b) { return a.score < b.score; });
  // Sum of mid-ranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    std::size_t block_pos = 0;
    while (j < v.size() && v[j].score == v[i].score) block_pos += v[j++].positive;
    const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    rank_sum += mid_rank * static_cast<double>(block_pos);
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double fpr_at_95_tpr(std::span<const double> scores, Mask is_ood, Mask ignore) {
  auto v = collect(scores, is_ood, ignore);
  const auto [pos, neg] = class_counts(v);
  if (pos == 0 || neg == 0) throw UndefinedMetric("undefined FPR@95: need both OOD and ID points");
  sort_descending(v);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < v.size();) {
    const double t = v[i].score;
    while (i < v.size() && v[i].score == t) {
      if (v[i].positive) ++tp;
      else ++fp;
      ++i;
    }
    if (100 * tp >= 95 * pos) return static_cast<double>(fp) / static_cast<double>(neg);
  }
  return 1.0;
}

double average_precision(std::span<const double> scores, Mask is_ood, Mask ignore) {
  auto v = collect(scores, is_ood, ignore);
  const auto [pos, neg] = class_counts(v);
  if (pos == 0) throw UndefinedMetric("undefined AP: no OOD points");
  sort_descending(v);
  std::size_t tp = 0, fp = 0;
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    const double t = v[i].score;
    while (i < v.size() && v[i].score == t) {
      if (v[i].positive) ++tp;
      else ++fp;
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double threshold_at_tpr(std::span<const double> scores, Mask is_ood, Mask ignore, double tpr) {
  if (!(tpr > 0.0 && tpr <= 1.0)) throw ContractError("threshold_at_tpr: tpr must lie in (0, 1]");
  auto v = collect(scores, is_ood, ignore);
  const auto [pos, neg] = class_counts(v);
  if (pos == 0) throw UndefinedMetric("threshold_at_tpr: no OOD points");
  sort_descending(v);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < v.size();) {
    const double t = v[i].score;
    while (i < v.size() && v[i].score == t) tp += v[i++].positive;
    if (static_cast<double>(tp) >= tpr * static_cast<double>(pos)) return t;
  }
  return v.back().score;
}

PointMetrics point_metrics(std::span<const double> scores, Mask is_ood, Mask ignore) {
  PointMetrics m;
  try {
    m.auroc = auroc(scores, is_ood, ignore);
    m.fpr95 = fpr_at_95_tpr(scores, is_ood, ignore);
    m.ap = average_precision(scores, is_ood, ignore);
    m.defined = true;
  } catch (const UndefinedMetric&) {
    m = PointMetrics{};
  }
  return m;
}

void EvalConfig::validate() const {
  if (iou_threshold != kIouThreshold) throw ContractError("eval: the IoU threshold is fixed at 0.5");
  if (std::isnan(gamma)) throw ContractError("eval: gamma is NaN");
  if (!(dbscan_eps > 0.0) || dbscan_min_pts < 1) throw ContractError("eval: invalid DBSCAN parameters");
}

std::vector<Instance> cluster_predictions(const ScoreField& scores, const PointCloud& cloud, const EvalConfig& cfg) {
  cfg.validate();
  if (scores.size() != cloud.size()) throw ContractError("cluster_predictions: score/point count mismatch");
  const auto decisions = classify(scores, cfg.gamma);
  std::vector<std::size_t> flagged;
  std::vector<Point3> pts;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i] == Decision::Ood) {
      flagged.push_back(i);
      pts.push_back(cloud.points[i]);
    }
  }
  std::vector<Instance> out;
  if (flagged.empty()) return out;
  const ClusterAssignment clusters = dbscan(pts, cfg.dbscan_eps, cfg.dbscan_min_pts);
  for (const auto& members : clusters.members()) {
    Instance inst;
    inst.reserve(members.size());
    for (std::size_t k : members) inst.push_back(flagged[k]);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Instance> ground_truth_instances(const LabelMap& labels) {
  std::map<std::uint16_t, Instance> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels.role[i] == Role::RealOod) by_id[labels.instance[i]].push_back(i);
  std::vector<Instance> out;
  for (auto& [id, pts] : by_id) out.push_back(std::move(pts));
  return out;
}

void MatchResult::append(const MatchResult& other) {
  // Indices are per-scan; aggregation only needs the counts and IoUs.
  tp.insert(tp.end(), other.tp.begin(), other.tp.end());
  fp.insert(fp.end(), other.fp.begin(), other.fp.end());
  fn.insert(fn.end(), other.fn.begin(), other.fn.end());
  dropped += other.dropped;
}

MatchResult match_instances(const std::vector<Instance>& preds, const std::vector<Instance>& gts, Mask ignore,
                            double iou_threshold) {
  auto keep = [&](const Instance& inst) {
    Instance out;
    for (std::size_t i : inst)
      if (ignore.empty() || (i < ignore.size() && !ignore[i])) out.push_back(i);
    std::sort(out.begin(), out.end());
    return out;
  };
  std::vector<Instance> p, g;
  for (const auto& x : preds) p.push_back(keep(x));
  for (const auto& x : gts) g.push_back(keep(x));

  std::vector<MatchPair> candidates;
  for (std::size_t pi = 0; pi < p.size(); ++pi) {
    for (std::size_t gi = 0; gi < g.size(); ++gi) {
      if (p[pi].empty() || g[gi].empty()) continue;
      std::vector<std::size_t> common;
      std::set_intersection(p[pi].begin(), p[pi].end(), g[gi].begin(), g[gi].end(), std::back_inserter(common));
      if (common.empty()) continue;
      const double inter = static_cast<double>(common.size());
      const std::size_t uni = p[pi].size() + g[gi].size() - common.size();
      const double iou = inter / static_cast<double>(uni);
      if (iou > iou_threshold) candidates.push_back({pi, gi, iou, common.size(), uni});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const MatchPair& a, const MatchPair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.gt != b.gt) return a.gt < b.gt;
    return a.pred < b.pred;
  });

  MatchResult out;
  std::vector<bool> pred_used(p.size(), false), gt_used(g.size(), false);
  for (const auto& c : candidates) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = gt_used[c.gt] = true;
    out.tp.push_back(c);
  }
  for (std::size_t pi = 0; pi < p.size(); ++pi) {
    if (pred_used[pi]) continue;
    if (p[pi].empty()) ++out.dropped;
    else out.fp.push_back(pi);
  }
  for (std::size_t gi = 0; gi < g.size(); ++gi)
    if (!gt_used[gi] && !g[gi].empty()) out.fn.push_back(gi);
  return out;
}

PanopticScores panoptic_scores(const MatchResult& match) {
  PanopticScores s;
  const double tp = static_cast<double>(match.tp.size());
  const double fp = static_cast<double>(match.fp.size());
  const double fn = static_cast<double>(match.fn.size());
  // sum_k IoU_k / denom with one rounding per term: inter_k / (union_k * denom).
  auto iou_sum_over = [&](double denom) {
    double acc = 0.0;
    for (const auto& m : match.tp) {
      const double uni = m.union_size > 0 ? static_cast<double>(m.union_size) : 1.0;
      const double inter = m.union_size > 0 ? static_cast<double>(m.intersection) : m.iou;
      acc += inter / (uni * denom);
    }
    return acc;
  };
  const double rq_denom = tp + 0.5 * fp + 0.5 * fn;
  if (tp > 0.0) {
    s.sq = iou_sum_over(tp);
    s.pq = iou_sum_over(rq_denom);
  }
  if (rq_denom > 0.0) s.rq = tp / rq_denom;
  if (const double d = tp + fn; d > 0.0) {
    s.recall_q = tp / d;
    if (tp > 0.0) s.uq = iou_sum_over(d);
  }
  return s;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string serialize_report(const Report& report) {
  std::string out;
  for (const auto& [k, v] : report) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ContractError("report: key or value contains a reserved character: " + k);
    out += k + " = " + v + "\n";
  }
  return out;
}

Report parse_report(const std::string& text) {
  Report r;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("report line " + std::to_string(lineno) + ": missing ' = '");
    r[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return r;
}

void write_report(const std::filesystem::path& path, const Report& report) {
  const std::string text = serialize_report(report);
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Report read_report(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_report(std::string(bytes.begin(), bytes.end()));
}

const std::vector<std::string>& report_schema() {
  static const std::vector<std::string> keys = {
      "config.dbscan_eps", "config.dbscan_min_pts", "config.gamma",  "config.gamma_source", "config.iou_threshold",
      "object.dropped",    "object.fn",             "object.fp",     "object.pq",           "object.recallq",
      "object.rq",         "object.sq",             "object.tp",     "object.uq",           "point.ap",
      "point.auroc",       "point.defined",         "point.fpr95",   "run.points",          "run.scans",
      "run.version"};
  return keys;
}

void put_metrics(Report& report, const PointMetrics& point, const MatchResult& match, const PanopticScores& pq) {
  report["point.auroc"] = format_double(point.auroc);
  report["point.fpr95"] = format_double(point.fpr95);
  report["point.ap"] = format_double(point.ap);
  report["point.defined"] = point.defined ? "1" : "0";
  report["object.sq"] = format_double(pq.sq);
  report["object.rq"] = format_double(pq.rq);
  report["object.pq"] = format_double(pq.pq);
  report["object.recallq"] = format_double(pq.recall_q);
  report["object.uq"] = format_double(pq.uq);
  report["object.tp"] = std::to_string(match.tp.size());
  report["object.fp"] = std::to_string(match.fp.size());
  report["object.fn"] = std::to_string(match.fn.size());
  report["object.dropped"] = std::to_string(match.dropped);
}

}  // namespace ndp
