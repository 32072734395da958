#include "ecdiff/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <system_error>

#include "ecdiff/causal.hpp"

namespace ecdiff {

using json = nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

std::string matrix_to_csv(const MatrixD& m) {
  std::string out;
  out.reserve(m.size() * 16);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_number(m(i, j));
    }
    out += '\n';
  }
  return out;
}

MatrixD matrix_from_csv(const std::string& text, const std::string& origin) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw FormatError(origin + ": empty file");
  std::vector<double> data;
  std::size_t cols = 0;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    std::size_t count = 0;
    std::string_view line = lines[r];
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      const std::string_view cell = trim(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos));
      double v = 0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw FormatError(origin + ": non-numeric cell '" + std::string(cell) + "' at row " + std::to_string(r + 1) +
                          ", column " + std::to_string(count + 1));
      data.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (r == 0) cols = count;
    else if (count != cols)
      throw FormatError(origin + ": ragged row " + std::to_string(r + 1) + " has " + std::to_string(count) +
                        " cells, expected " + std::to_string(cols));
  }
  return MatrixD(lines.size(), cols, std::move(data));
}

void write_matrix(const MatrixD& m, const fs::path& path) { write_file_atomic(path, matrix_to_csv(m)); }

MatrixD read_matrix(const fs::path& path) { return matrix_from_csv(read_file(path), path.string()); }

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr const char* kMagic = "ECDIFF-CHECKPOINT";

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
void append_le(std::string& out, const Matrix<T>& m) {
  for (T v : m.flat()) {
    auto bits = std::bit_cast<Bits<T>>(v);
    for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
}

template <typename T>
void read_le(const char* src, Matrix<T>& m) {
  for (T& v : m.flat()) {
    Bits<T> bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      bits |= static_cast<Bits<T>>(static_cast<unsigned char>(src[b])) << (8 * b);
    v = std::bit_cast<T>(bits);
    src += sizeof(T);
  }
}

std::map<std::string, std::string> model_to_kv(const DenoiserConfig& c) {
  auto b = [](bool v) { return std::string(v ? "1" : "0"); };
  return {{"model.n_rois", std::to_string(c.n_rois)},
          {"model.n_points", std::to_string(c.n_points)},
          {"model.width", std::to_string(c.width)},
          {"model.con_blocks", std::to_string(c.con_blocks)},
          {"model.spatial_heads", std::to_string(c.spatial_heads)},
          {"model.temporal_heads", std::to_string(c.temporal_heads)},
          {"model.use_ushape", b(c.use_ushape)},
          {"model.use_transformer", b(c.use_transformer)},
          {"model.swap_attention_axes", b(c.swap_attention_axes)}};
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw FormatError("checkpoint: bad integer '" + v + "' for " + key);
  return out;
}

struct ArrayEntry {
  std::string name;
  std::size_t rows, cols, offset;
};

struct Header {
  int version = 0;
  Precision precision = Precision::F64;
  std::map<std::string, std::string> kv;
  std::vector<ArrayEntry> arrays;
  std::size_t payload_start = 0;
};

Header parse_header(const std::string& bytes) {
  Header h;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("checkpoint: truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  {
    std::istringstream first(next_line());
    std::string magic;
    first >> magic >> h.version;
    if (magic != kMagic) throw FormatError("checkpoint: not a checkpoint file (bad magic)");
    if (h.version != kCheckpointVersion)
      throw FormatError("checkpoint: version mismatch (file " + std::to_string(h.version) + ", supported " +
                        std::to_string(kCheckpointVersion) + ")");
  }
  bool have_precision = false;
  while (true) {
    const std::string line = next_line();
    if (line == "end") break;
    if (line.rfind("array ", 0) == 0) {
      std::istringstream ss(line.substr(6));
      ArrayEntry e;
      if (!(ss >> e.name >> e.rows >> e.cols >> e.offset))
        throw FormatError("checkpoint: malformed array entry '" + line + "'");
      h.arrays.push_back(e);
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "precision") {
      try {
        h.precision = parse_precision(value);
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
      }
      have_precision = true;
    } else {
      h.kv[key] = value;
    }
  }
  if (!have_precision) throw FormatError("checkpoint: header lacks precision");
  h.payload_start = pos;
  return h;
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
  std::vector<std::pair<std::string, const Matrix<T>*>> arrays;
  for (const auto& a : ckpt.params.arrays()) arrays.emplace_back(a.name, &a.value);
  if (ckpt.optimizer) {
    const auto& opt = *ckpt.optimizer;
    if (opt.first_moment.size() != ckpt.params.size() || opt.second_moment.size() != ckpt.params.size())
      throw std::invalid_argument("save_checkpoint: optimizer state does not match parameters");
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      arrays.emplace_back("adam.m/" + ckpt.params.arrays()[i].name, &opt.first_moment[i]);
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      arrays.emplace_back("adam.v/" + ckpt.params.arrays()[i].name, &opt.second_moment[i]);
  }
  std::ostringstream head;
  head << kMagic << ' ' << kCheckpointVersion << '\n';
  head << "precision=" << to_string(precision_of<T>()) << '\n';
  for (const auto& [k, v] : model_to_kv(ckpt.model)) head << k << '=' << v << '\n';
  head << "seed=" << ckpt.seed << '\n';
  head << "history=" << ckpt.history << '\n';
  head << "optimizer=" << (ckpt.optimizer ? 1 : 0) << '\n';
  if (ckpt.optimizer) head << "adam_step=" << ckpt.optimizer->step << '\n';
  std::size_t offset = 0;
  for (const auto& [name, m] : arrays) {
    head << "array " << name << ' ' << m->rows() << ' ' << m->cols() << ' ' << offset << '\n';
    offset += m->size() * sizeof(T);
  }
  head << "end\n";
  std::string out = head.str();
  out.reserve(out.size() + offset);
  for (const auto& [name, m] : arrays) append_le(out, *m);
  return out;
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
  const Header h = parse_header(bytes);
  if (h.precision != precision_of<T>())
    throw FormatError(std::string("checkpoint: precision mismatch (file stores ") + to_string(h.precision) +
                      ", run requested " + to_string(precision_of<T>()) + ")");
  auto get = [&](const std::string& key) {
    auto it = h.kv.find(key);
    if (it == h.kv.end()) throw FormatError("checkpoint: header lacks " + key);
    return it->second;
  };
  auto get_bool = [&](const std::string& key) {
    const std::string v = get(key);
    if (v != "0" && v != "1") throw FormatError("checkpoint: bad flag '" + v + "' for " + key);
    return v == "1";
  };
  Checkpoint<T> c;
  c.model.n_rois = parse_uint("model.n_rois", get("model.n_rois"));
  c.model.n_points = parse_uint("model.n_points", get("model.n_points"));
  c.model.width = parse_uint("model.width", get("model.width"));
  c.model.con_blocks = parse_uint("model.con_blocks", get("model.con_blocks"));
  c.model.spatial_heads = parse_uint("model.spatial_heads", get("model.spatial_heads"));
  c.model.temporal_heads = parse_uint("model.temporal_heads", get("model.temporal_heads"));
  c.model.use_ushape = get_bool("model.use_ushape");
  c.model.use_transformer = get_bool("model.use_transformer");
  c.model.swap_attention_axes = get_bool("model.swap_attention_axes");
  c.seed = parse_uint("seed", get("seed"));
  c.history = get("history");
  const bool has_opt = get_bool("optimizer");
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: invalid model config: ") + e.what());
  }

  ModelParams<T> params;
  register_denoiser_params(params, c.model);
  register_causal_params(params, c.model.n_points);
  std::vector<Matrix<T>*> targets;
  std::vector<std::string> names;
  for (auto& a : params.arrays()) {
    targets.push_back(&a.value);
    names.push_back(a.name);
  }
  OptimizerState<T> opt;
  if (has_opt) {
    opt = OptimizerState<T>::zeros_like(params);
    opt.step = static_cast<std::int64_t>(parse_uint("adam_step", get("adam_step")));
    for (std::size_t i = 0; i < params.size(); ++i) {
      targets.push_back(&opt.first_moment[i]);
      names.push_back("adam.m/" + params.arrays()[i].name);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      targets.push_back(&opt.second_moment[i]);
      names.push_back("adam.v/" + params.arrays()[i].name);
    }
  }
  if (h.arrays.size() != targets.size())
    throw FormatError("checkpoint: directory lists " + std::to_string(h.arrays.size()) + " arrays, config implies " +
                      std::to_string(targets.size()));
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const ArrayEntry& e = h.arrays[i];
    if (e.name != names[i]) throw FormatError("checkpoint: array " + e.name + " where " + names[i] + " expected");
    if (e.rows != targets[i]->rows() || e.cols != targets[i]->cols())
      throw FormatError("checkpoint: shape inconsistency for " + e.name + " (" + std::to_string(e.rows) + "x" +
                        std::to_string(e.cols) + " stored, " + targets[i]->shape_str() + " expected)");
    if (e.offset != expected_offset)
      throw FormatError("checkpoint: offset inconsistency for " + e.name + " (" + std::to_string(e.offset) +
                        " stored, " + std::to_string(expected_offset) + " expected)");
    expected_offset += e.rows * e.cols * sizeof(T);
  }
  const std::size_t payload = bytes.size() - h.payload_start;
  if (payload < expected_offset)
    throw FormatError("checkpoint: truncated payload (" + std::to_string(payload) + " of " +
                      std::to_string(expected_offset) + " bytes)");
  if (payload > expected_offset)
    throw FormatError("checkpoint: " + std::to_string(payload - expected_offset) + " trailing bytes after payload");
  for (std::size_t i = 0; i < targets.size(); ++i) read_le(bytes.data() + h.payload_start + h.arrays[i].offset, *targets[i]);
  c.params = std::move(params);
  if (has_opt) c.optimizer = std::move(opt);
  return c;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const fs::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& path) {
  return deserialize_checkpoint<T>(read_file(path));
}

Precision checkpoint_precision(const fs::path& path) { return parse_header(read_file(path)).precision; }

#define ECDIFF_INSTANTIATE(T)                                                     \
  template std::string serialize_checkpoint(const Checkpoint<T>&);                \
  template Checkpoint<T> deserialize_checkpoint(const std::string&);              \
  template void save_checkpoint(const Checkpoint<T>&, const fs::path&);           \
  template Checkpoint<T> load_checkpoint(const fs::path&);

ECDIFF_INSTANTIATE(float)
ECDIFF_INSTANTIATE(double)
#undef ECDIFF_INSTANTIATE

// ---- cohort manifests ----------------------------------------------------

namespace {

json cohort_config_to_json(const CohortConfig& c) {
  json stages = json::array();
  for (Stage s : c.stages) stages.push_back(to_string(s));
  return {{"n_rois", c.n_rois},
          {"n_points", c.n_points},
          {"subjects_per_stage", c.subjects_per_stage},
          {"perturbed_edges", c.perturbed_edges},
          {"stages", stages},
          {"density", c.density},
          {"sigma", c.sigma},
          {"burn_in", c.burn_in},
          {"weight_jitter", c.weight_jitter},
          {"rough_smoothing_width", c.rough.smoothing_width},
          {"rough_jitter", c.rough.jitter},
          {"rough_noise_sd", c.rough.noise_sd},
          {"seed", c.seed}};
}

Stage stage_from_json(const json& j) {
  try {
    return parse_stage(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

void apply_cohort_config(CohortConfig& c, const json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "n_rois") c.n_rois = v.get<std::size_t>();
    else if (key == "n_points") c.n_points = v.get<std::size_t>();
    else if (key == "subjects_per_stage") c.subjects_per_stage = v.get<std::size_t>();
    else if (key == "perturbed_edges") c.perturbed_edges = v.get<std::size_t>();
    else if (key == "stages") {
      c.stages.clear();
      for (const auto& s : v) c.stages.push_back(stage_from_json(s));
    } else if (key == "density") c.density = v.get<double>();
    else if (key == "sigma") c.sigma = v.get<double>();
    else if (key == "burn_in") c.burn_in = v.get<std::size_t>();
    else if (key == "weight_jitter") c.weight_jitter = v.get<double>();
    else if (key == "rough_smoothing_width") c.rough.smoothing_width = v.get<std::size_t>();
    else if (key == "rough_jitter") c.rough.jitter = v.get<double>();
    else if (key == "rough_noise_sd") c.rough.noise_sd = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw FormatError("config: unknown cohort key '" + key + "'");
  }
}

json edges_to_json(const std::vector<Edge>& edges) {
  json out = json::array();
  for (const Edge& e : edges) out.push_back({e.source, e.target});
  return out;
}

std::vector<Edge> edges_from_json(const json& j) {
  std::vector<Edge> out;
  for (const auto& e : j) out.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
  return out;
}

}  // namespace

CohortManifest write_cohort(const Cohort& cohort, const fs::path& dir) {
  fs::create_directories(dir / "subjects");
  CohortManifest m;
  m.seed = cohort.config.seed;
  m.config = cohort.config;
  m.transitions = cohort.transitions;
  m.root = dir;
  write_matrix(cohort.sc->adjacency(), dir / "sc.csv");
  for (std::size_t s = 0; s < cohort.stage_ec.size(); ++s)
    write_matrix(cohort.stage_ec[s], dir / (std::string("stage_") + to_string(cohort.config.stages[s]) + "_E.csv"));
  for (const auto& rec : cohort.subjects) {
    ManifestSubject e{rec.id, rec.stage, rec.seed, fs::path("subjects") / (rec.id + "_H0.csv"),
                      fs::path("subjects") / (rec.id + "_F.csv"), "sc.csv",
                      fs::path("subjects") / (rec.id + "_E.csv")};
    write_matrix(rec.clean, dir / e.clean);
    write_matrix(rec.rough, dir / e.rough);
    write_matrix(rec.ec_true, dir / e.ec);
    m.subjects.push_back(std::move(e));
  }
  write_file_atomic(dir / "manifest.json", manifest_to_json(m));
  return m;
}

std::string manifest_to_json(const CohortManifest& m) {
  json subjects = json::array();
  for (const auto& s : m.subjects) {
    json e = {{"id", s.id},
              {"stage", to_string(s.stage)},
              {"seed", s.seed},
              {"clean", s.clean.generic_string()},
              {"rough", s.rough.generic_string()},
              {"sc", s.sc.generic_string()}};
    if (!s.ec.empty()) e["ec"] = s.ec.generic_string();
    subjects.push_back(std::move(e));
  }
  json transitions = json::array();
  for (const auto& t : m.transitions)
    transitions.push_back({{"from", to_string(t.from)},
                           {"to", to_string(t.to)},
                           {"enhanced", edges_to_json(t.enhanced)},
                           {"diminished", edges_to_json(t.diminished)}});
  json j = {{"schema_version", m.schema_version},
            {"seed", m.seed},
            {"config", cohort_config_to_json(m.config)},
            {"subjects", subjects},
            {"transitions", transitions}};
  return j.dump(2) + "\n";
}

CohortManifest manifest_from_json(const std::string& text, const fs::path& root) {
  CohortManifest m;
  m.root = root;
  try {
    const json j = json::parse(text);
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestVersion)
      throw FormatError("manifest: schema version " + std::to_string(m.schema_version) + " unsupported (expected " +
                        std::to_string(kManifestVersion) + ")");
    m.seed = j.at("seed").get<std::uint64_t>();
    apply_cohort_config(m.config, j.at("config"));
    for (const auto& s : j.at("subjects")) {
      ManifestSubject e;
      e.id = s.at("id").get<std::string>();
      e.stage = stage_from_json(s.at("stage"));
      e.seed = s.at("seed").get<std::uint64_t>();
      e.clean = s.at("clean").get<std::string>();
      e.rough = s.at("rough").get<std::string>();
      e.sc = s.at("sc").get<std::string>();
      if (s.contains("ec")) e.ec = s.at("ec").get<std::string>();
      for (const fs::path* p : {&e.clean, &e.rough, &e.sc, &e.ec})
        if (!p->empty() && !fs::exists(root / *p))
          throw FormatError("manifest: subject " + e.id + " references missing file " + (root / *p).string());
      m.subjects.push_back(std::move(e));
    }
    for (const auto& t : j.at("transitions"))
      m.transitions.push_back({stage_from_json(t.at("from")), stage_from_json(t.at("to")),
                               edges_from_json(t.at("enhanced")), edges_from_json(t.at("diminished"))});
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

CohortManifest read_manifest(const fs::path& path) {
  return manifest_from_json(read_file(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::string sample_manifest_to_json(const SampleManifest& m) {
  json subjects = json::array();
  for (const auto& s : m.subjects)
    subjects.push_back({{"id", s.id},
                        {"stage", to_string(s.stage)},
                        {"seed", s.seed},
                        {"clean", s.clean.generic_string()},
                        {"ec", s.ec.generic_string()}});
  json j = {{"schema_version", m.schema_version},
            {"seed", m.seed},
            {"checkpoint", m.checkpoint},
            {"precision", to_string(m.precision)},
            {"subjects", subjects}};
  return j.dump(2) + "\n";
}

SampleManifest read_sample_manifest(const fs::path& path) {
  SampleManifest m;
  m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  try {
    const json j = json::parse(read_file(path));
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestVersion)
      throw FormatError("sample manifest: schema version " + std::to_string(m.schema_version) + " unsupported");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.checkpoint = j.at("checkpoint").get<std::string>();
    m.precision = parse_precision(j.at("precision").get<std::string>());
    for (const auto& s : j.at("subjects")) {
      SampleEntry e{s.at("id").get<std::string>(), stage_from_json(s.at("stage")), s.at("seed").get<std::uint64_t>(),
                    s.at("clean").get<std::string>(), s.at("ec").get<std::string>()};
      for (const fs::path* p : {&e.clean, &e.ec})
        if (!fs::exists(m.root / *p))
          throw FormatError("sample manifest: subject " + e.id + " references missing file " + (m.root / *p).string());
      m.subjects.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("sample manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("sample manifest: ") + e.what());
  }
  return m;
}

// ---- run configuration ---------------------------------------------------

RunConfig parse_run_config(const std::string& json_text, RunConfig base) {
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) throw FormatError("config: top level must be an object");
    for (const auto& [section, body] : j.items()) {
      if (section == "model") {
        auto& c = base.model;
        for (const auto& [key, v] : body.items()) {
          if (key == "n_rois") c.n_rois = v.get<std::size_t>();
          else if (key == "n_points") c.n_points = v.get<std::size_t>();
          else if (key == "width") c.width = v.get<std::size_t>();
          else if (key == "con_blocks") c.con_blocks = v.get<std::size_t>();
          else if (key == "spatial_heads") c.spatial_heads = v.get<std::size_t>();
          else if (key == "temporal_heads") c.temporal_heads = v.get<std::size_t>();
          else if (key == "use_ushape") c.use_ushape = v.get<bool>();
          else if (key == "use_transformer") c.use_transformer = v.get<bool>();
          else if (key == "swap_attention_axes") c.swap_attention_axes = v.get<bool>();
          else throw FormatError("config: unknown model key '" + key + "'");
        }
      } else if (section == "train") {
        auto& c = base.train;
        for (const auto& [key, v] : body.items()) {
          if (key == "epochs") c.epochs = v.get<int>();
          else if (key == "learning_rate") c.learning_rate = v.get<double>();
          else if (key == "omega") c.omega = v.get<double>();
          else if (key == "seed") c.seed = v.get<std::uint64_t>();
          else if (key == "adam_beta1") c.adam_beta1 = v.get<double>();
          else if (key == "adam_beta2") c.adam_beta2 = v.get<double>();
          else if (key == "adam_epsilon") c.adam_epsilon = v.get<double>();
          else if (key == "precision") c.precision = parse_precision(v.get<std::string>());
          else throw FormatError("config: unknown train key '" + key + "'");
        }
      } else if (section == "cohort") {
        apply_cohort_config(base.cohort, body);
      } else {
        throw FormatError("config: unknown section '" + section + "'");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return base;
}

RunConfig read_run_config(const fs::path& path, RunConfig base) {
  return parse_run_config(read_file(path), std::move(base));
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,noise,reconstruction,sparsity,total\n";
  for (const auto& h : history)
    out += std::to_string(h.epoch) + ',' + format_number(h.mean.noise) + ',' + format_number(h.mean.reconstruction) +
           ',' + format_number(h.mean.sparsity) + ',' + format_number(h.mean.total()) + '\n';
  return out;
}

}  // namespace ecdiff
