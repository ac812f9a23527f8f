#pragma once

// File formats: PGF1 field dumps, P6 renderings, scene and report JSON.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "partgraph/fields.hpp"
#include "partgraph/grouping.hpp"
#include "partgraph/matching.hpp"
#include "partgraph/metrics.hpp"
#include "partgraph/synth.hpp"

namespace partgraph {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file content; the message names the offending field.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little, "PGF1 I/O assumes a little-endian host");

struct FieldDump {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<float> values;  // row-major, channel-interleaved

  float at(std::uint32_t u, std::uint32_t v, std::uint32_t c) const {
    return values[(static_cast<std::size_t>(v) * width + u) * channels + c];
  }
};

inline void write_pgf(const std::filesystem::path& path, const FieldDump& d) {
  if (d.values.size() != static_cast<std::size_t>(d.width) * d.height * d.channels)
    throw InvalidInput("write_pgf: value count does not match the header");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write("PGF1", 4);
  for (std::uint32_t x : {d.width, d.height, d.channels}) f.write(reinterpret_cast<const char*>(&x), 4);
  f.write(reinterpret_cast<const char*>(d.values.data()), static_cast<std::streamsize>(d.values.size() * 4));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline FieldDump read_pgf(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  char magic[4];
  FieldDump d;
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PGF1", 4) != 0) throw FormatError(path.string() + ": bad magic");
  for (auto* x : {&d.width, &d.height, &d.channels}) f.read(reinterpret_cast<char*>(x), 4);
  if (!f) throw FormatError(path.string() + ": truncated header");
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height * d.channels;
  d.values.resize(n);
  f.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(n * 4));
  if (static_cast<std::size_t>(f.gcount()) != n * 4) throw FormatError(path.string() + ": truncated payload");
  return d;
}

inline FieldDump to_dump(const ScalarField& f) {
  FieldDump d{static_cast<std::uint32_t>(f.width()), static_cast<std::uint32_t>(f.height()), 1, {}};
  for (double x : f.values()) d.values.push_back(static_cast<float>(x));
  return d;
}

inline FieldDump to_dump(const LabelGrid& f) {
  FieldDump d{static_cast<std::uint32_t>(f.width()), static_cast<std::uint32_t>(f.height()), 1, {}};
  for (int x : f.values()) d.values.push_back(static_cast<float>(x));
  return d;
}

inline FieldDump to_dump(const VectorField2& f) {
  FieldDump d{static_cast<std::uint32_t>(f.width()), static_cast<std::uint32_t>(f.height()), 2, {}};
  for (const Vec2& x : f.values()) {
    d.values.push_back(static_cast<float>(x.du));
    d.values.push_back(static_cast<float>(x.dv));
  }
  return d;
}

inline LabelGrid label_grid_from(const FieldDump& d, const std::string& what) {
  if (d.channels != 1) throw FormatError(what + ": expected one channel");
  LabelGrid g(static_cast<int>(d.width), static_cast<int>(d.height));
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const float x = d.values[i];
    if (!std::isfinite(x) || x != std::round(x)) throw FormatError(what + ": non-integer label");
    g.values()[i] = static_cast<int>(x);
  }
  return g;
}

// --- renderings ---------------------------------------------------------------

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed palette: hue by part class, brightness by instance id.
inline Rgb part_instance_color(int part, int instance) {
  if (part <= 0) return {0, 0, 0};
  const double hue = std::fmod(part * 360.0 / 7.0, 360.0);
  const double value = instance <= 0 ? 0.35 : 1.0 - 0.12 * ((instance - 1) % 6);
  const double c = value;
  const double x = c * (1.0 - std::abs(std::fmod(hue / 60.0, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hue / 60.0)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  auto q = [](double t) { return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)); };
  return {q(r), q(g), q(b)};
}

inline void write_ppm(const std::filesystem::path& path, int width, int height, const std::vector<Rgb>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw InvalidInput("write_ppm: pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << "P6\n" << width << ' ' << height << "\n255\n";
  for (const auto& p : pixels) f.write(reinterpret_cast<const char*>(p.data()), 3);
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_parsing_ppm(const std::filesystem::path& path, const LabelGrid& parts, const LabelGrid& instances) {
  if (!parts.same_shape(instances)) throw InvalidInput("write_parsing_ppm: grid mismatch");
  std::vector<Rgb> px;
  px.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) px.push_back(part_instance_color(parts.values()[i], instances.values()[i]));
  write_ppm(path, parts.width(), parts.height(), px);
}

/// Writes <stem>_parts.pgf, <stem>_instances.pgf and <stem>.ppm into dir;
/// returns the paths written.
inline std::vector<std::filesystem::path> save_parsing(const InstanceParsing& p, const std::filesystem::path& dir,
                                                       const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> out{dir / (stem + "_parts.pgf"), dir / (stem + "_instances.pgf"),
                                         dir / (stem + ".ppm")};
  write_pgf(out[0], to_dump(p.parts));
  write_pgf(out[1], to_dump(p.instances));
  write_parsing_ppm(out[2], p.parts, p.instances);
  return out;
}

// --- scenes -------------------------------------------------------------------

inline constexpr int kSceneVersion = 1;

namespace io_detail {

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  return j.at(key);
}

template <typename T>
T get(const nlohmann::json& j, const char* key, const std::string& where) {
  try {
    return field(j, key, where).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace io_detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& scene_json, const char* grid) {
  auto p = scene_json;
  return p.replace_extension(std::string(".") + grid + ".pgf");
}

inline nlohmann::json scene_to_json(const Scene& s, const std::string& parts_file, const std::string& instances_file) {
  nlohmann::json j;
  j["scene_version"] = kSceneVersion;
  j["width"] = s.width;
  j["height"] = s.height;
  j["seed"] = s.seed;
  auto& sk = j["skeleton"];
  sk["joints"] = s.skeleton.joint_names();
  sk["limbs"] = nlohmann::json::array();
  for (const auto& l : s.skeleton.limbs()) sk["limbs"].push_back({l.parent, l.child});
  j["persons"] = nlohmann::json::array();
  for (const auto& p : s.persons) {
    nlohmann::json pj;
    pj["scale"] = p.scale;
    pj["joints"] = nlohmann::json::array();
    for (const auto& jt : p.joints) pj["joints"].push_back({jt.position.u, jt.position.v, jt.visible ? 1 : 0});
    j["persons"].push_back(std::move(pj));
  }
  j["grids"] = {{"parts", parts_file}, {"instances", instances_file}};
  return j;
}

/// Writes the scene JSON and its two sidecar grid dumps.
inline std::vector<std::filesystem::path> save_scene(const Scene& s, const std::filesystem::path& path) {
  const auto parts = sidecar_path(path, "parts");
  const auto inst = sidecar_path(path, "instances");
  io_detail::spit(path, scene_to_json(s, parts.filename().string(), inst.filename().string()).dump(2) + "\n");
  write_pgf(parts, to_dump(s.parts));
  write_pgf(inst, to_dump(s.instances));
  return {path, parts, inst};
}

/// Loads a scene; the ground-truth DSPF is rebuilt from joints and grids.
inline Scene load_scene(const std::filesystem::path& path) {
  using io_detail::get;
  const std::string where = path.string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io_detail::slurp(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(where + ": invalid JSON (" + e.what() + ")");
  }
  if (get<int>(j, "scene_version", where) != kSceneVersion) throw FormatError(where + ": unsupported scene_version");
  Scene s;
  s.width = get<int>(j, "width", where);
  s.height = get<int>(j, "height", where);
  if (s.width <= 0 || s.height <= 0) throw FormatError(where + ": field 'width'/'height' must be positive");
  s.seed = get<std::uint64_t>(j, "seed", where);

  const auto& sk = io_detail::field(j, "skeleton", where);
  const auto names = get<std::vector<std::string>>(sk, "joints", where + ".skeleton");
  std::vector<Limb> limbs;
  for (const auto& l : io_detail::field(sk, "limbs", where + ".skeleton")) {
    if (!l.is_array() || l.size() != 2) throw FormatError(where + ": field 'skeleton.limbs' entries must be pairs");
    limbs.push_back({l[0].get<int>(), l[1].get<int>()});
  }
  try {
    s.skeleton = SkeletonSpec(names, limbs);
  } catch (const std::exception& e) {
    throw FormatError(where + ": field 'skeleton' is invalid (" + e.what() + ")");
  }

  const auto& persons = io_detail::field(j, "persons", where);
  if (!persons.is_array()) throw FormatError(where + ": field 'persons' must be an array");
  for (std::size_t i = 0; i < persons.size(); ++i) {
    const std::string pw = where + ".persons[" + std::to_string(i) + "]";
    ScenePerson p;
    p.scale = persons[i].value("scale", 1.0);
    const auto& joints = io_detail::field(persons[i], "joints", pw);
    if (!joints.is_array() || static_cast<int>(joints.size()) != s.skeleton.joints())
      throw FormatError(pw + ": field 'joints' must list every skeleton joint");
    for (const auto& jt : joints) {
      if (!jt.is_array() || jt.size() != 3 || !jt[0].is_number() || !jt[1].is_number())
        throw FormatError(pw + ": field 'joints' entries must be [u, v, visible]");
      p.joints.push_back({{jt[0].get<double>(), jt[1].get<double>()}, jt[2].get<int>() != 0});
    }
    s.persons.push_back(std::move(p));
  }

  const auto& grids = io_detail::field(j, "grids", where);
  const auto dir = path.parent_path();
  s.parts = label_grid_from(read_pgf(dir / get<std::string>(grids, "parts", where + ".grids")), where + ": grids.parts");
  s.instances =
      label_grid_from(read_pgf(dir / get<std::string>(grids, "instances", where + ".grids")), where + ": grids.instances");
  if (s.parts.width() != s.width || s.parts.height() != s.height || !s.parts.same_shape(s.instances))
    throw FormatError(where + ": field 'grids' does not match width/height");
  for (int x : s.instances.values())
    if (x < 0 || x > static_cast<int>(s.persons.size())) throw FormatError(where + ": field 'grids.instances' out of range");
  for (int x : s.parts.values())
    if (x < 0 || x >= kPartClasses) throw FormatError(where + ": field 'grids.parts' out of range");
  s.dspf = ground_truth_dspf(s.persons, s.instances);
  return s;
}

// --- reports --------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["miou"] = r.miou;
  for (const auto& [t, v] : r.ap_p.ap) j["ap_p"][std::to_string(t)] = v;
  j["ap_p"]["vol"] = r.ap_p.ap_vol;
  j["pcp"]["50"] = r.pcp50;
  j["pose_map"] = r.pose_map;
  return j;
}

inline nlohmann::json pgd_trace_to_json(const PgdTrace& t) {
  nlohmann::json j;
  j["rows"] = t.rows;
  j["cols"] = t.cols;
  j["alpha"] = t.alpha;
  j["converged"] = t.converged;
  j["min_margin"] = t.min_margin();
  j["iterates"] = nlohmann::json::array();
  for (const auto& it : t.iterates)
    j["iterates"].push_back({{"iteration", it.iteration}, {"objective", it.objective}, {"feasibility", it.feasibility}});
  return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { io_detail::spit(path, j.dump(2) + "\n"); }

}  // namespace partgraph
