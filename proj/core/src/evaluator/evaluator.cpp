#include "dcda/evaluator/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dcda/error.hpp"

namespace dcda {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct RowSummary {
  double gap;  // max seen - max unseen
  bool seen_ok;
  bool unseen_ok;
};

std::vector<RowSummary> summarize_rows(const ScoreMatrix& m) {
  std::vector<RowSummary> rows(m.scores.rows());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double best_s = -kInf, best_u = -kInf;
    std::size_t arg_s = 0, arg_u = 0;
    for (std::size_t c = 0; c < m.scores.cols(); ++c) {
      double v = m.scores(r, c);
      if (m.seen_mask[c]) {
        if (v > best_s) best_s = v, arg_s = c;
      } else if (v > best_u) {
        best_u = v, arg_u = c;
      }
    }
    rows[r] = {best_s - best_u, arg_s == m.truth[r], arg_u == m.truth[r]};
  }
  return rows;
}

std::string csv_number(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

void ScoreMatrix::validate() const {
  if (seen_mask.size() != scores.cols()) throw DimensionError("seen mask does not match columns");
  if (truth.size() != scores.rows() || row_seen.size() != scores.rows()) {
    throw DimensionError("truth vectors do not match rows");
  }
  if (!scores.all_finite()) throw NumericError("score matrix has non-finite entries");
  for (std::size_t r = 0; r < truth.size(); ++r) {
    if (truth[r] == kAbsent) continue;
    if (truth[r] >= scores.cols()) {
      throw InvariantError(fmt::format("row {} truth column {} out of bounds", r, truth[r]));
    }
    if (seen_mask[truth[r]] != row_seen[r]) {
      throw InvariantError(fmt::format("row {} seen flag disagrees with its truth column", r));
    }
  }
}

ScoreMatrix make_score_matrix(Matrix scores, const std::vector<Composition>& candidates,
                              const std::vector<Composition>& labels,
                              const std::vector<Composition>& seen) {
  if (scores.cols() != candidates.size() || scores.rows() != labels.size()) {
    throw DimensionError("score matrix shape does not match candidates and labels");
  }
  std::set<Composition> seen_set(seen.begin(), seen.end());
  std::map<Composition, std::size_t> col;
  for (std::size_t i = 0; i < candidates.size(); ++i) col[candidates[i]] = i;
  ScoreMatrix m;
  m.scores = std::move(scores);
  for (const auto& c : candidates) m.seen_mask.push_back(seen_set.count(c) > 0);
  for (const auto& l : labels) {
    auto it = col.find(l);
    m.truth.push_back(it == col.end() ? ScoreMatrix::kAbsent : it->second);
    m.row_seen.push_back(seen_set.count(l) > 0);
  }
  m.validate();
  return m;
}

double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

CurvePoint accuracy_at_bias(const ScoreMatrix& m, double bias) {
  std::size_t n_seen = 0, n_unseen = 0, ok_seen = 0, ok_unseen = 0;
  for (std::size_t r = 0; r < m.scores.rows(); ++r) {
    std::size_t arg = m.scores.cols();
    double best = -kInf;
    for (std::size_t c = 0; c < m.scores.cols(); ++c) {
      // An infinite bias restricts the argmax to one side.
      if (std::isinf(bias) && m.seen_mask[c] == (bias > 0)) continue;
      double v = m.scores(r, c) + (m.seen_mask[c] || std::isinf(bias) ? 0.0 : bias);
      if (arg == m.scores.cols() || v > best) best = v, arg = c;
    }
    bool ok = arg == m.truth[r];
    if (m.row_seen[r]) {
      ++n_seen;
      ok_seen += ok;
    } else {
      ++n_unseen;
      ok_unseen += ok;
    }
  }
  return {bias, n_seen ? double(ok_seen) / n_seen : 0.0,
          n_unseen ? double(ok_unseen) / n_unseen : 0.0};
}

double curve_auc(std::vector<CurvePoint> points) {
  std::sort(points.begin(), points.end(), [](const CurvePoint& a, const CurvePoint& b) {
    if (a.acc_seen != b.acc_seen) return a.acc_seen < b.acc_seen;
    return a.acc_unseen > b.acc_unseen;
  });
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].acc_seen - points[i - 1].acc_seen) *
            (points[i].acc_unseen + points[i - 1].acc_unseen) / 2.0;
  }
  return area;
}

EvalCurve bias_sweep_metrics(const ScoreMatrix& m) {
  m.validate();
  std::size_t seen_cols = std::count(m.seen_mask.begin(), m.seen_mask.end(), true);
  if (seen_cols == 0 || seen_cols == m.seen_mask.size()) {
    throw InvariantError("bias sweep needs both seen and unseen candidate columns");
  }
  std::size_t n_seen = std::count(m.row_seen.begin(), m.row_seen.end(), true);
  std::size_t n_unseen = m.row_seen.size() - n_seen;
  if (n_seen == 0 || n_unseen == 0) {
    throw InvariantError("bias sweep needs both seen- and unseen-labeled rows");
  }

  std::vector<RowSummary> rows = summarize_rows(m);
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return rows[a].gap < rows[b].gap; });

  std::size_t ok_seen = 0, ok_unseen = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (m.row_seen[r] && rows[r].seen_ok) ++ok_seen;
  }
  auto point = [&](double bias) {
    return CurvePoint{bias, double(ok_seen) / n_seen, double(ok_unseen) / n_unseen};
  };

  EvalCurve curve;
  curve.points.push_back(point(-kInf));
  for (std::size_t i = 0; i < order.size();) {
    double g = rows[order[i]].gap;
    // Every row with this gap flips to predicting an unseen column.
    for (; i < order.size() && rows[order[i]].gap == g; ++i) {
      std::size_t r = order[i];
      if (m.row_seen[r] && rows[r].seen_ok) --ok_seen;
      if (!m.row_seen[r] && rows[r].unseen_ok) ++ok_unseen;
    }
    double bias = i < order.size() ? g + (rows[order[i]].gap - g) / 2.0 : kInf;
    curve.points.push_back(point(bias));
  }

  curve.seen = curve.points.front().acc_seen;
  curve.unseen = curve.points.back().acc_unseen;
  curve.harmonic = -1.0;
  for (const auto& p : curve.points) {
    double h = harmonic_mean(p.acc_seen, p.acc_unseen);
    if (h > curve.harmonic) curve.harmonic = h, curve.best_bias = p.bias;
  }
  curve.auc = curve_auc(curve.points);
  return curve;
}

namespace {

// Row-wise cosine similarity matrix; zero rows give 0.
RowMajorXd cosine_matrix(const Matrix& m) {
  RowMajorXd x = m.eigen();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double n = x.row(r).norm();
    if (n > 0.0) x.row(r) /= n;
  }
  return x * x.transpose();
}

double feasibility_from(const RelevanceMatrices& rel, const RowMajorXd& obj_cos,
                        const RowMajorXd& att_cos, const Composition& c) {
  const std::size_t n_attrs = rel.att_obj.rows(), n_objs = rel.att_obj.cols();
  double f_obj = -kInf, f_att = -kInf;
  for (std::size_t o2 = 0; o2 < n_objs; ++o2) {
    if (rel.att_obj(c.attr, o2) > 0.0) {
      f_obj = std::max(f_obj, obj_cos(static_cast<Eigen::Index>(c.obj), static_cast<Eigen::Index>(o2)));
    }
  }
  for (std::size_t a2 = 0; a2 < n_attrs; ++a2) {
    if (rel.att_obj(a2, c.obj) > 0.0) {
      f_att = std::max(f_att, att_cos(static_cast<Eigen::Index>(c.attr), static_cast<Eigen::Index>(a2)));
    }
  }
  if (f_obj == -kInf) f_obj = 0.0;
  if (f_att == -kInf) f_att = 0.0;
  return (f_obj + f_att) / 2.0;
}

}  // namespace

double feasibility_score(const RelevanceMatrices& rel, const Composition& c) {
  if (c.attr >= rel.att_obj.rows() || c.obj >= rel.att_obj.cols()) {
    throw DimensionError("composition outside the relevance matrices");
  }
  return feasibility_from(rel, cosine_matrix(rel.obj), cosine_matrix(rel.att), c);
}

OpenWorldCandidates open_world_candidates(const Vocabulary& vocab,
                                          const std::vector<Composition>& seen,
                                          double threshold, const RelevanceMatrices& rel) {
  std::set<Composition> seen_set(seen.begin(), seen.end());
  RowMajorXd obj_cos = cosine_matrix(rel.obj), att_cos = cosine_matrix(rel.att);
  OpenWorldCandidates out;
  for (std::size_t a = 0; a < vocab.attributes.size(); ++a) {
    for (std::size_t o = 0; o < vocab.objects.size(); ++o) {
      Composition c{a, o};
      double f = seen_set.count(c) ? kInf : feasibility_from(rel, obj_cos, att_cos, c);
      if (f >= threshold) {
        out.candidates.push_back(c);
        out.feasibility.push_back(f);
      }
    }
  }
  return out;
}

ScoreMatrix filter_columns(const ScoreMatrix& m, const std::vector<double>& feasibility,
                           double threshold) {
  if (feasibility.size() != m.scores.cols()) {
    throw DimensionError("one feasibility value per column required");
  }
  std::vector<std::size_t> keep;
  std::vector<std::size_t> remap(m.scores.cols(), ScoreMatrix::kAbsent);
  for (std::size_t c = 0; c < feasibility.size(); ++c) {
    if (m.seen_mask[c] || feasibility[c] >= threshold) {
      remap[c] = keep.size();
      keep.push_back(c);
    }
  }
  ScoreMatrix out;
  out.scores = Matrix(m.scores.rows(), keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.scores.eigen().col(static_cast<Eigen::Index>(j)) =
        m.scores.eigen().col(static_cast<Eigen::Index>(keep[j]));
    out.seen_mask.push_back(m.seen_mask[keep[j]]);
  }
  out.row_seen = m.row_seen;
  for (std::size_t t : m.truth) out.truth.push_back(t == ScoreMatrix::kAbsent ? t : remap[t]);
  return out;
}

ThresholdChoice calibrate_feasibility_threshold(const ScoreMatrix& val,
                                                const OpenWorldCandidates& all) {
  std::vector<double> thresholds{-kInf};
  for (std::size_t c = 0; c < all.feasibility.size(); ++c) {
    if (!val.seen_mask[c]) thresholds.push_back(all.feasibility[c]);
  }
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  ThresholdChoice best{-kInf, -1.0};
  for (double t : thresholds) {
    ScoreMatrix f = filter_columns(val, all.feasibility, t);
    if (std::count(f.seen_mask.begin(), f.seen_mask.end(), false) == 0) continue;
    double h = bias_sweep_metrics(f).harmonic;
    if (h > best.harmonic) best = {t, h};
  }
  return best;
}

Matrix parallel_score_matrix(const DcdaModel& model, const TextContext& ctx,
                             const std::vector<const Matrix*>& cached, std::size_t workers) {
  // Fixed chunk boundaries keep the scores bitwise independent of the worker count.
  constexpr std::size_t kChunk = 64;
  const std::size_t n_chunks = (cached.size() + kChunk - 1) / kChunk;
  workers = std::max<std::size_t>(1, std::min(workers, n_chunks));
  Matrix out(cached.size(), ctx.candidates.size());
  // Each worker takes a contiguous run of whole chunks.
  const std::size_t per = (n_chunks + workers - 1) / workers;
  auto run = [&](std::size_t w) {
    std::size_t begin = std::min(cached.size(), w * per * kChunk);
    std::size_t end = std::min(cached.size(), (w + 1) * per * kChunk);
    if (begin >= end) return;
    std::vector<const Matrix*> part(cached.begin() + static_cast<std::ptrdiff_t>(begin),
                                    cached.begin() + static_cast<std::ptrdiff_t>(end));
    Matrix s = model.score_matrix(ctx, part, kChunk);
    out.eigen().middleRows(static_cast<Eigen::Index>(begin),
                           static_cast<Eigen::Index>(end - begin)) = s.eigen();
  };
  if (workers == 1) {
    run(0);
    return out;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        run(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

namespace {

ScoreMatrix split_scores(const DcdaModel& model, const Dataset& data,
                         const std::vector<LabeledImage>& images,
                         const std::vector<Composition>& candidates, std::size_t workers) {
  std::vector<Matrix> cached;
  cached.reserve(images.size());
  std::vector<Composition> labels;
  for (const auto& im : images) {
    cached.push_back(model.cache_image(im.tokens));
    labels.push_back(im.label);
  }
  std::vector<const Matrix*> ptrs;
  for (const auto& c : cached) ptrs.push_back(&c);
  TextContext ctx = model.text_context(candidates);
  return make_score_matrix(parallel_score_matrix(model, ctx, ptrs, workers), candidates, labels,
                           data.seen);
}

}  // namespace

EvalReport evaluate(const DcdaModel& model, const Dataset& data, Split split,
                    const EvalOptions& options) {
  const auto& images = split == Split::val ? data.val : data.test;
  EvalReport report;
  report.split = split == Split::val ? "val" : "test";
  report.open_world = options.open_world;
  if (!options.open_world) {
    report.candidate_list = data.test_compositions();
    report.scores = split_scores(model, data, images, report.candidate_list, options.workers);
  } else {
    RelevanceMatrices rel = relevance_matrices(data.vocab, data.seen);
    OpenWorldCandidates all = open_world_candidates(data.vocab, data.seen, -kInf, rel);
    double threshold = options.feasibility_threshold;
    if (std::isnan(threshold)) {
      ScoreMatrix val = split_scores(model, data, data.val, all.candidates, options.workers);
      threshold = calibrate_feasibility_threshold(val, all).threshold;
    }
    ScoreMatrix full = split_scores(model, data, images, all.candidates, options.workers);
    report.scores = filter_columns(full, all.feasibility, threshold);
    for (std::size_t c = 0; c < all.candidates.size(); ++c) {
      if (full.seen_mask[c] || all.feasibility[c] >= threshold) {
        report.candidate_list.push_back(all.candidates[c]);
      }
    }
    report.feasibility_threshold = threshold;
  }
  report.candidates = report.candidate_list.size();
  report.curve = bias_sweep_metrics(report.scores);
  return report;
}

std::string metrics_json(const EvalReport& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  nlohmann::json j;
  j["split"] = r.split;
  j["open_world"] = r.open_world;
  j["candidates"] = r.candidates;
  j["feasibility_threshold"] = num(r.feasibility_threshold);
  j["S"] = r.curve.seen;
  j["U"] = r.curve.unseen;
  j["H"] = r.curve.harmonic;
  j["AUC"] = r.curve.auc;
  j["best_bias"] = num(r.curve.best_bias);
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.curve.points) {
    pts.push_back({{"bias", num(p.bias)}, {"acc_seen", p.acc_seen}, {"acc_unseen", p.acc_unseen}});
  }
  j["curve"] = std::move(pts);
  return j.dump(2);
}

std::vector<double> within_attribute_similarity(const Matrix& features,
                                                const std::vector<Composition>& labels,
                                                std::size_t n_attrs, bool centered) {
  if (features.rows() != labels.size()) throw DimensionError("one label per feature row");
  RowMajorXd x = features.eigen();
  if (centered && x.rows() > 0) x.rowwise() -= x.colwise().mean();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double n = x.row(r).norm();
    if (n > 0.0) x.row(r) /= n;
  }
  std::vector<double> sum(n_attrs, 0.0);
  std::vector<std::size_t> count(n_attrs, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      if (labels[i].attr != labels[j].attr || labels[i].obj == labels[j].obj) continue;
      sum[labels[i].attr] += x.row(static_cast<Eigen::Index>(i)).dot(x.row(static_cast<Eigen::Index>(j)));
      ++count[labels[i].attr];
    }
  }
  std::vector<double> out(n_attrs, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t a = 0; a < n_attrs; ++a) {
    if (count[a]) out[a] = sum[a] / static_cast<double>(count[a]);
  }
  return out;
}

void export_embeddings(const DcdaModel& model, const std::vector<LabeledImage>& images,
                       const Dataset& data, const std::filesystem::path& path) {
  std::vector<Matrix> cached;
  for (const auto& im : images) cached.push_back(model.cache_image(im.tokens));
  std::vector<const Matrix*> ptrs;
  for (const auto& c : cached) ptrs.push_back(&c);
  auto [ha, ho] = model.disentangled_features(ptrs);

  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << "image_id,attr,obj,seen";
  for (std::size_t k = 0; k < ha.cols(); ++k) out << ",hA_" << k;
  for (std::size_t k = 0; k < ho.cols(); ++k) out << ",hO_" << k;
  out << '\n';
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& c = images[i].label;
    out << i << ',' << data.vocab.attributes.at(c.attr) << ',' << data.vocab.objects.at(c.obj)
        << ',' << (data.is_seen(c) ? 1 : 0);
    for (double v : ha.row(i)) out << ',' << csv_number(v);
    for (double v : ho.row(i)) out << ',' << csv_number(v);
    out << '\n';
  }
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::string score_matrix_csv(const ScoreMatrix& m, const std::vector<std::string>& labels) {
  m.validate();
  if (labels.size() != m.scores.cols()) throw DimensionError("one label per column required");
  std::string out = "row,truth,truth_seen";
  for (const auto& l : labels) out += "," + l;
  out += "\nseen_mask,,";
  for (bool s : m.seen_mask) out += s ? ",1" : ",0";
  out += '\n';
  for (std::size_t r = 0; r < m.scores.rows(); ++r) {
    out += fmt::format("{},{},{}", r,
                       m.truth[r] == ScoreMatrix::kAbsent ? std::string("-1")
                                                          : std::to_string(m.truth[r]),
                       m.row_seen[r] ? 1 : 0);
    for (double v : m.scores.row(r)) out += "," + csv_number(v);
    out += '\n';
  }
  return out;
}

ScoreMatrix parse_score_matrix_csv(const std::string& text, std::vector<std::string>* labels) {
  std::vector<std::vector<std::string>> lines;
  std::vector<std::size_t> offsets;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (line.back() == ',') cells.emplace_back();
      lines.push_back(std::move(cells));
      offsets.push_back(pos);
    }
    pos = end + 1;
  }
  if (lines.size() < 2) throw ParseError("score matrix CSV needs a header and a seen-mask row", 0);
  const std::size_t cols = lines[0].size();
  if (cols < 4 || lines[0][0] != "row") throw ParseError("bad score matrix header", 0);
  const std::size_t n = cols - 3;
  auto number = [&](const std::string& s, std::size_t line) {
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ParseError(fmt::format("bad number '{}' on line {}", s, line + 1), offsets[line]);
    }
  };
  ScoreMatrix m;
  if (labels) labels->assign(lines[0].begin() + 3, lines[0].end());
  if (lines[1].size() != cols || lines[1][0] != "seen_mask") {
    throw ParseError("bad seen_mask row", offsets[1]);
  }
  for (std::size_t c = 0; c < n; ++c) m.seen_mask.push_back(lines[1][3 + c] == "1");
  m.scores = Matrix(lines.size() - 2, n);
  for (std::size_t r = 2; r < lines.size(); ++r) {
    if (lines[r].size() != cols) {
      throw ParseError(fmt::format("line {} has {} cells, expected {}", r + 1, lines[r].size(),
                                   cols),
                       offsets[r]);
    }
    double t = number(lines[r][1], r);
    m.truth.push_back(t < 0 ? ScoreMatrix::kAbsent : static_cast<std::size_t>(t));
    m.row_seen.push_back(lines[r][2] == "1");
    for (std::size_t c = 0; c < n; ++c) m.scores(r - 2, c) = number(lines[r][3 + c], r);
  }
  m.validate();
  return m;
}

}  // namespace dcda
