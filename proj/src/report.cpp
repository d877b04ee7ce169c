#include "ssda/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "ssda/config.hpp"
#include "ssda/errors.hpp"

namespace ssda {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double numberFrom(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

json toJson(const ExperimentReport& r) {
  json evaluations = json::array();
  for (const EvalRecord& e : r.evaluations) evaluations.push_back(toJson(e));
  json curves = json::array();
  for (const LossPoint& p : r.lossCurves) {
    curves.push_back({{"stage", toString(p.stage)},
                      {"iteration", p.iteration},
                      {"L_s", number(p.sourceLoss)},
                      {"L_u", number(p.consistencyLoss)},
                      {"L_t", number(p.anchorLoss)},
                      {"L_d", number(p.distillLoss)},
                      {"passRate", number(p.passRate)}});
  }
  json perClass = json::array();
  for (double a : r.perClassAccuracy) perClass.push_back(number(a));
  json out = {{"schemaVersion", r.schemaVersion},
              {"preset", r.preset},
              {"kShot", r.kShot},
              {"seed", r.seed},
              {"benchmarkId", r.benchmarkId},
              {"benchmark", r.benchmark},
              {"config", r.config},
              {"stage1", {{"targetAccuracy", r.stage1Accuracy},
                          {"pseudoLabels", toJson(r.stage1PseudoLabels)}}},
              {"evalModel", r.evalModel},
              {"finalAccuracy", r.finalAccuracy},
              {"perClassAccuracy", perClass},
              {"evaluations", evaluations},
              {"lossCurves", curves},
              {"failed", r.failed},
              {"error", r.error}};
  out["stage2"] = r.stage2Ran ? json{{"studentAccuracy", r.stage2StudentAccuracy},
                                     {"teacherAccuracy", r.stage2TeacherAccuracy},
                                     {"pseudoLabels", toJson(r.stage2PseudoLabels)}}
                              : json(nullptr);
  return out;
}

ExperimentReport experimentReportFromJson(const json& j) {
  ExperimentReport r;
  try {
    r.schemaVersion = j.at("schemaVersion").get<int>();
    if (r.schemaVersion != kReportSchemaVersion)
      throw CorruptArtifact("unsupported report schema version " + std::to_string(r.schemaVersion));
    r.preset = j.at("preset").get<std::string>();
    r.kShot = j.at("kShot").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.benchmarkId = j.at("benchmarkId").get<std::string>();
    r.benchmark = j.at("benchmark");
    r.config = j.at("config");
    r.stage1Accuracy = j.at("stage1").at("targetAccuracy").get<double>();
    r.stage1PseudoLabels = pseudoLabelStatsFromJson(j.at("stage1").at("pseudoLabels"));
    if (!j.at("stage2").is_null()) {
      r.stage2Ran = true;
      r.stage2StudentAccuracy = j.at("stage2").at("studentAccuracy").get<double>();
      r.stage2TeacherAccuracy = j.at("stage2").at("teacherAccuracy").get<double>();
      r.stage2PseudoLabels = pseudoLabelStatsFromJson(j.at("stage2").at("pseudoLabels"));
    }
    r.evalModel = j.at("evalModel").get<std::string>();
    r.finalAccuracy = j.at("finalAccuracy").get<double>();
    for (const json& a : j.at("perClassAccuracy")) r.perClassAccuracy.push_back(numberFrom(a));
    for (const json& e : j.at("evaluations")) r.evaluations.push_back(evalRecordFromJson(e));
    for (const json& p : j.at("lossCurves")) {
      r.lossCurves.push_back({stageFromString(p.at("stage").get<std::string>()),
                              p.at("iteration").get<std::int64_t>(), numberFrom(p.at("L_s")),
                              numberFrom(p.at("L_u")), numberFrom(p.at("L_t")),
                              numberFrom(p.at("L_d")), numberFrom(p.at("passRate"))});
    }
    r.failed = j.at("failed").get<bool>();
    r.error = j.at("error").get<std::string>();
  } catch (const CorruptArtifact&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptArtifact(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::vector<LossPoint> lossCurves(std::span<const IterationRecord> records, std::int64_t window) {
  std::vector<LossPoint> points;
  if (window <= 0) window = 1;
  std::size_t i = 0;
  while (i < records.size()) {
    const Stage stage = records[i].stage;
    LossPoint p;
    p.stage = stage;
    std::size_t n = 0, rated = 0;
    double rate = 0.0;
    while (i < records.size() && records[i].stage == stage) {
      const IterationRecord& r = records[i];
      p.sourceLoss += r.sourceLoss;
      p.consistencyLoss += r.consistencyLoss;
      p.anchorLoss += r.anchorLoss;
      p.distillLoss += r.distillLoss;
      if (!std::isnan(r.passRate)) {
        rate += r.passRate;
        ++rated;
      }
      p.iteration = r.iteration;
      ++n;
      ++i;
      if (r.iteration % window == 0) break;
    }
    const double inv = 1.0 / static_cast<double>(n);
    p.sourceLoss *= inv;
    p.consistencyLoss *= inv;
    p.anchorLoss *= inv;
    p.distillLoss *= inv;
    p.passRate = rated ? rate / static_cast<double>(rated) : std::numeric_limits<double>::quiet_NaN();
    points.push_back(p);
  }
  return points;
}

namespace {

void appendNumber(std::string& out, double v) {
  if (std::isnan(v)) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  out += buf;
}

}  // namespace

std::string metricsCsv(std::span<const IterationRecord> records) {
  std::string out = "stage,iteration,L_s,L_u,L_t,L_d,passRate,targetAcc\n";
  for (const IterationRecord& r : records) {
    out += toString(r.stage);
    out += ',' + std::to_string(r.iteration) + ',';
    appendNumber(out, r.sourceLoss);
    out += ',';
    appendNumber(out, r.consistencyLoss);
    out += ',';
    appendNumber(out, r.anchorLoss);
    out += ',';
    appendNumber(out, r.distillLoss);
    out += ',';
    appendNumber(out, r.passRate);
    out += ',';
    if (r.targetAccuracy) appendNumber(out, *r.targetAccuracy);
    out += '\n';
  }
  return out;
}

const AblationRow* AblationTable::find(const std::string& preset) const {
  for (const AblationRow& row : rows)
    if (row.preset == preset) return &row;
  return nullptr;
}

AblationTable compareRuns(std::span<const ExperimentReport> reports) {
  if (reports.empty()) throw InvalidInput("compareRuns needs at least one report");
  const std::string& id = reports.front().benchmarkId;
  for (const ExperimentReport& r : reports)
    if (r.benchmarkId != id)
      throw InvalidInput("reports come from different benchmarks (" + id + " vs " + r.benchmarkId +
                         ")");

  std::vector<std::string> order;
  for (const auto& name : presetNames())
    if (std::ranges::any_of(reports, [&](const ExperimentReport& r) { return r.preset == name; }))
      order.push_back(name);
  for (const ExperimentReport& r : reports)
    if (std::ranges::find(order, r.preset) == order.end()) order.push_back(r.preset);

  AblationTable table;
  for (const ExperimentReport& r : reports)
    if (std::ranges::find(table.shots, r.kShot) == table.shots.end()) table.shots.push_back(r.kShot);
  std::ranges::sort(table.shots);

  for (const std::string& preset : order) {
    AblationRow row;
    row.preset = preset;
    for (const ExperimentReport& r : reports) {
      if (r.preset != preset) continue;
      RunAggregate& agg = row.byShot[r.kShot];
      ++agg.runs;
      if (r.failed)
        ++agg.failed;
      else
        agg.accuracies.push_back(r.finalAccuracy);
    }
    for (auto& [shot, agg] : row.byShot) {
      const auto n = agg.accuracies.size();
      if (n == 0) {
        agg.mean = agg.stddev = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double sum = 0.0;
      for (double a : agg.accuracies) sum += a;
      agg.mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (double a : agg.accuracies) ss += (a - agg.mean) * (a - agg.mean);
      agg.stddev = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string AblationTable::toCsv() const {
  std::ostringstream out;
  out << "preset";
  for (int k : shots) out << ',' << k << "shot_mean," << k << "shot_std," << k << "shot_runs," << k << "shot_failed";
  out << '\n';
  char buf[32];
  for (const AblationRow& row : rows) {
    out << row.preset;
    for (int k : shots) {
      const auto it = row.byShot.find(k);
      if (it == row.byShot.end()) {
        out << ",,,0,0";
        continue;
      }
      const RunAggregate& a = it->second;
      out << ',';
      if (!std::isnan(a.mean)) {
        std::snprintf(buf, sizeof buf, "%.4f", a.mean);
        out << buf;
      }
      out << ',';
      if (!std::isnan(a.stddev)) {
        std::snprintf(buf, sizeof buf, "%.4f", a.stddev);
        out << buf;
      }
      out << ',' << a.runs << ',' << a.failed;
    }
    out << '\n';
  }
  return out.str();
}

std::string AblationTable::toText() const {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Method"};
  for (int k : shots) header.push_back(std::to_string(k) + "-shot");
  cells.push_back(header);
  char buf[64];
  for (const AblationRow& row : rows) {
    std::vector<std::string> line{row.preset};
    for (int k : shots) {
      const auto it = row.byShot.find(k);
      if (it == row.byShot.end()) {
        line.emplace_back("-");
        continue;
      }
      const RunAggregate& a = it->second;
      if (std::isnan(a.mean)) {
        std::snprintf(buf, sizeof buf, "failed (%zu/%zu)", a.failed, a.runs);
      } else {
        std::snprintf(buf, sizeof buf, "%.1f +/- %.1f", a.mean, a.stddev);
        std::string cell = buf;
        if (a.failed) {
          std::snprintf(buf, sizeof buf, " [%zu failed]", a.failed);
          cell += buf;
        }
        line.push_back(cell);
        continue;
      }
      line.emplace_back(buf);
    }
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& cell = cells[r][c];
      if (c == 0)
        out << cell << std::string(width[c] - cell.size(), ' ');
      else
        out << " | " << std::string(width[c] - cell.size(), ' ') << cell;
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = width[0];
      for (std::size_t c = 1; c < width.size(); ++c) total += 3 + width[c];
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace ssda
