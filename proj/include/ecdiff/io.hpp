#pragma once

// File formats: CSV matrices, the binary checkpoint container, JSON cohort
// manifests and run configuration.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecdiff/denoiser.hpp"
#include "ecdiff/params.hpp"
#include "ecdiff/synthgen.hpp"
#include "ecdiff/trainer.hpp"

namespace ecdiff {

namespace fs = std::filesystem;

/// Malformed or inconsistent input data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes `content` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& content);

/// Decimal text with 9 significant digits.
std::string format_number(double v);

/// CSV, one row per line, no header.
std::string matrix_to_csv(const MatrixD& m);
MatrixD matrix_from_csv(const std::string& text, const std::string& origin = "<memory>");
void write_matrix(const MatrixD& m, const fs::path& path);
MatrixD read_matrix(const fs::path& path);

// ---- checkpoints ---------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  DenoiserConfig model;
  ModelParams<T> params;
  std::optional<OptimizerState<T>> optimizer;
  std::string history;  // path of the training history, informational
  std::uint64_t seed = 0;
};

/// Text header (magic + version, precision, key=value config, array
/// directory of name/rows/cols/offset, "end") followed by raw little-endian
/// payloads in directory order.
template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt);
template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes);

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const fs::path& path);
template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& path);

/// Reads only the header to find the stored element type.
Precision checkpoint_precision(const fs::path& path);

// ---- cohort manifests ----------------------------------------------------

inline constexpr int kManifestVersion = 1;

struct ManifestSubject {
  std::string id;
  Stage stage;
  std::uint64_t seed = 0;
  fs::path clean;  // H0
  fs::path rough;  // F
  fs::path sc;     // G
  fs::path ec;     // ground-truth E, may be empty
};

struct CohortManifest {
  int schema_version = kManifestVersion;
  std::uint64_t seed = 0;
  CohortConfig config;
  std::vector<ManifestSubject> subjects;
  std::vector<StageTransition> transitions;
  fs::path root;  // directory the relative paths resolve against
};

/// Writes every subject's H0/F/E, the shared SC and manifest.json into `dir`.
CohortManifest write_cohort(const Cohort& cohort, const fs::path& dir);

std::string manifest_to_json(const CohortManifest& m);
/// Parses and validates a manifest; paths are resolved against `root` and
/// must exist.
CohortManifest manifest_from_json(const std::string& text, const fs::path& root);
CohortManifest read_manifest(const fs::path& path);

/// Per-subject outputs of the sampler.
struct SampleEntry {
  std::string id;
  Stage stage;
  std::uint64_t seed = 0;
  fs::path clean;  // H0'
  fs::path ec;     // E
};

struct SampleManifest {
  int schema_version = kManifestVersion;
  std::uint64_t seed = 0;
  std::string checkpoint;
  Precision precision = Precision::F64;
  std::vector<SampleEntry> subjects;
  fs::path root;
};

std::string sample_manifest_to_json(const SampleManifest& m);
SampleManifest read_sample_manifest(const fs::path& path);

// ---- run configuration ---------------------------------------------------

struct RunConfig {
  DenoiserConfig model;
  TrainConfig train;
  CohortConfig cohort;
};

/// Overlays keys from a JSON object with optional "model", "train" and
/// "cohort" sections onto `base`. Unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text, RunConfig base = {});
RunConfig read_run_config(const fs::path& path, RunConfig base = {});

std::string history_to_csv(const std::vector<EpochStats>& history);

}  // namespace ecdiff
