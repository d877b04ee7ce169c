#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ssda/binary_io.hpp"
#include "ssda/errors.hpp"
#include "ssda/training.hpp"

namespace ssda {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kHasTeacher = 1;
constexpr std::uint8_t kHasVelocity = 2;

using nlohmann::json;

json number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double numberFrom(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

void writeCursor(std::ostream& out, const BatchCursor& c) {
  io::writeU64(out, c.pass);
  io::writeU64(out, c.offset);
}

BatchCursor readCursor(std::istream& in) {
  BatchCursor c;
  c.pass = io::readU64(in);
  c.offset = io::readU64(in);
  return c;
}

}  // namespace

std::filesystem::path sidecarPath(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".json";
}

json toJson(const EvalRecord& r) {
  return {{"stage", toString(r.stage)},
          {"iteration", r.iteration},
          {"targetAccuracy", r.targetAccuracy},
          {"pseudoLabels", toJson(r.pseudoLabels)}};
}

EvalRecord evalRecordFromJson(const json& j) {
  return {stageFromString(j.at("stage").get<std::string>()), j.at("iteration").get<std::int64_t>(),
          j.at("targetAccuracy").get<double>(), pseudoLabelStatsFromJson(j.at("pseudoLabels"))};
}

json toJson(const TrainHistory& h) {
  json iterations = json::array();
  for (const IterationRecord& r : h.iterations) {
    iterations.push_back({{"stage", toString(r.stage)},
                          {"iteration", r.iteration},
                          {"L_s", number(r.sourceLoss)},
                          {"L_u", number(r.consistencyLoss)},
                          {"L_t", number(r.anchorLoss)},
                          {"L_d", number(r.distillLoss)},
                          {"passRate", number(r.passRate)},
                          {"targetAcc", r.targetAccuracy ? json(*r.targetAccuracy) : json(nullptr)}});
  }
  json evaluations = json::array();
  for (const EvalRecord& e : h.evaluations) evaluations.push_back(toJson(e));
  return {{"iterations", std::move(iterations)},
          {"evaluations", std::move(evaluations)},
          {"usage",
           {{"source", h.usage.source}, {"unlabeled", h.usage.unlabeled}, {"anchors", h.usage.anchors}}}};
}

TrainHistory trainHistoryFromJson(const json& j) {
  TrainHistory h;
  for (const json& r : j.at("iterations")) {
    IterationRecord rec;
    rec.stage = stageFromString(r.at("stage").get<std::string>());
    rec.iteration = r.at("iteration").get<std::int64_t>();
    rec.sourceLoss = numberFrom(r.at("L_s"));
    rec.consistencyLoss = numberFrom(r.at("L_u"));
    rec.anchorLoss = numberFrom(r.at("L_t"));
    rec.distillLoss = numberFrom(r.at("L_d"));
    rec.passRate = numberFrom(r.at("passRate"));
    if (!r.at("targetAcc").is_null()) rec.targetAccuracy = r.at("targetAcc").get<double>();
    h.iterations.push_back(rec);
  }
  for (const json& e : j.at("evaluations")) h.evaluations.push_back(evalRecordFromJson(e));
  const json& u = j.at("usage");
  h.usage = {u.at("source").get<std::uint64_t>(), u.at("unlabeled").get<std::uint64_t>(),
             u.at("anchors").get<std::uint64_t>()};
  return h;
}

void saveCheckpoint(const TrainState& state, const std::filesystem::path& path,
                    const CheckpointMeta& meta) {
  state.validate();
  std::ostringstream body(std::ios::binary);
  body.write(kMagic, sizeof kMagic);
  io::writeU32(body, kVersion);
  const std::uint8_t flags =
      (state.teacher ? kHasTeacher : 0) | (state.velocity ? kHasVelocity : 0);
  const char header[4] = {static_cast<char>(state.stage == Stage::kUda ? 0 : 1),
                          static_cast<char>(flags), 0, 0};
  body.write(header, 4);
  io::writeU64(body, static_cast<std::uint64_t>(state.iteration));
  writeArchitecture(body, state.student.arch());
  writeLayerValues(body, state.student);
  if (state.teacher) writeLayerValues(body, *state.teacher);
  if (state.velocity) writeLayerValues(body, *state.velocity);
  writeCursor(body, state.cursors.source);
  writeCursor(body, state.cursors.unlabeled);
  writeCursor(body, state.cursors.anchors);
  const std::string bytes = body.str();

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    io::writeU64(out, io::fnv1a(bytes.data(), bytes.size()));
    if (!out) throw Error("failed writing checkpoint " + path.string());
  }

  const json sidecar = {{"format", "ssda-checkpoint"},
                        {"version", kVersion},
                        {"stage", toString(state.stage)},
                        {"iteration", state.iteration},
                        {"configHash", meta.configHash},
                        {"seed", meta.seed},
                        {"history", toJson(state.history)}};
  std::ofstream out(sidecarPath(path), std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint metadata " + sidecarPath(path).string());
  out << sidecar.dump(2) << '\n';
}

LoadedCheckpoint loadCheckpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CorruptArtifact("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + 8 || bytes.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0)
    throw CorruptArtifact(path.string() + " is not a checkpoint (bad header)");

  const std::string body = bytes.substr(0, bytes.size() - 8);
  std::istringstream trailer(bytes.substr(bytes.size() - 8), std::ios::binary);
  std::istringstream in(body, std::ios::binary);
  in.ignore(sizeof kMagic);
  const std::uint32_t version = io::readU32(in);
  if (version != kVersion)
    throw CorruptArtifact("checkpoint version " + std::to_string(version) + " is not supported");
  if (io::readU64(trailer) != io::fnv1a(body.data(), body.size()))
    throw CorruptArtifact("checkpoint " + path.string() + " is truncated or corrupted (checksum)");

  char header[4];
  if (!in.read(header, 4)) throw CorruptArtifact("unexpected end of file");
  if (header[0] != 0 && header[0] != 1) throw CorruptArtifact("invalid stage tag");
  const auto flags = static_cast<std::uint8_t>(header[1]);

  LoadedCheckpoint loaded;
  TrainState& state = loaded.state;
  state.stage = header[0] == 0 ? Stage::kUda : Stage::kSsl;
  state.iteration = static_cast<std::int64_t>(io::readU64(in));
  const Architecture arch = readArchitecture(in);
  state.student = readLayerValues<ParamsTag>(in, arch);
  if (flags & kHasTeacher) state.teacher = readLayerValues<ParamsTag>(in, arch);
  if (flags & kHasVelocity) state.velocity = readLayerValues<GradientsTag>(in, arch);
  state.cursors.source = readCursor(in);
  state.cursors.unlabeled = readCursor(in);
  state.cursors.anchors = readCursor(in);
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptArtifact("trailing bytes in checkpoint");
  try {
    state.validate();
  } catch (const Error& e) {
    throw CorruptArtifact(e.what());
  }

  const auto side = sidecarPath(path);
  if (std::filesystem::exists(side)) {
    std::ifstream sin(side);
    const json j = json::parse(sin, nullptr, false);
    if (j.is_discarded()) throw CorruptArtifact("checkpoint metadata is not valid JSON");
    try {
      if (j.at("stage").get<std::string>() != toString(state.stage) ||
          j.at("iteration").get<std::int64_t>() != state.iteration)
        throw CorruptArtifact("checkpoint metadata does not match the checkpoint");
      loaded.meta.configHash = j.at("configHash").get<std::string>();
      loaded.meta.seed = j.at("seed").get<std::uint64_t>();
      state.history = trainHistoryFromJson(j.at("history"));
    } catch (const CorruptArtifact&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptArtifact(std::string("checkpoint metadata: ") + e.what());
    }
    loaded.hasSidecar = true;
  }
  return loaded;
}

}  // namespace ssda
