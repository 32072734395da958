#include <gtest/gtest.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "ecdiff/causal.hpp"
#include "ecdiff/io.hpp"
#include "test_util.hpp"

using namespace ecdiff;
using namespace ecdiff::testing;

namespace {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("ecdiff_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "<no FormatError>";
}

// ---- CSV matrices ----

TEST(Csv, NineSignificantDigits) {
  EXPECT_EQ(format_number(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(format_number(-2.5), "-2.5");
  EXPECT_EQ(format_number(0.0), "0");
}

TEST(Csv, ExactTextLayout) {
  EXPECT_EQ(matrix_to_csv(MatrixD{{1, -0.5}, {2.25, 1e-10}}), "1,-0.5\n2.25,1e-10\n");
}

TEST(Csv, LargeRoundTripWithinRelativeTolerance) {
  TempDir dir;
  MatrixD m = random_matrix(90, 187, 1, -3, 3);
  m(0, 0) = 1e-12;
  m(1, 1) = -7e8;
  write_matrix(m, dir.path() / "h.csv");
  const MatrixD back = read_matrix(dir.path() / "h.csv");
  ASSERT_EQ(back.rows(), 90u);
  ASSERT_EQ(back.cols(), 187u);
  double worst = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    worst = std::max(worst, std::abs(back.flat()[i] - m.flat()[i]) / std::abs(m.flat()[i]));
  EXPECT_LE(worst, 1e-7);
}

TEST(Csv, WritersAreByteStable) {
  TempDir dir;
  const MatrixD m = random_matrix(5, 7, 2);
  write_matrix(m, dir.path() / "a.csv");
  write_matrix(read_matrix(dir.path() / "a.csv"), dir.path() / "b.csv");
  EXPECT_EQ(slurp(dir.path() / "a.csv"), slurp(dir.path() / "b.csv"));
  EXPECT_FALSE(fs::exists(dir.path() / "a.csv.tmp"));
}

TEST(Csv, StructuralFileParsesSymmetric) {
  TempDir dir;
  MatrixD g = random_matrix(90, 90, 3, 0, 1);
  for (std::size_t i = 0; i < 90; ++i) {
    g(i, i) = 0;
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  }
  write_matrix(g, dir.path() / "sc.csv");
  const MatrixD back = read_matrix(dir.path() / "sc.csv");
  EXPECT_EQ(back.rows(), 90u);
  EXPECT_EQ(back, back.transposed());
  EXPECT_NO_THROW(StructuralConnectivity{back});
}

TEST(Csv, ToleratesCrlfSpacesAndTrailingBlankLines) {
  const MatrixD m = matrix_from_csv("1, 2\r\n 3 ,4\r\n\n");
  EXPECT_EQ(m, (MatrixD{{1, 2}, {3, 4}}));
}

TEST(Csv, RaggedRowNamesTheRow) {
  const std::string msg = error_of([] { matrix_from_csv("1,2,3\n4,5,6,7\n"); });
  EXPECT_NE(msg.find("ragged row 2"), std::string::npos) << msg;
}

TEST(Csv, NonNumericCellNamesRowAndColumn) {
  const std::string msg = error_of([] { matrix_from_csv("1,2\n3,x\n"); });
  EXPECT_NE(msg.find("non-numeric"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 2, column 2"), std::string::npos) << msg;
  EXPECT_NE(error_of([] { matrix_from_csv("1,,2\n"); }).find("column 2"), std::string::npos);
  EXPECT_NE(error_of([] { matrix_from_csv("1.5abc\n"); }).find("non-numeric"), std::string::npos);
}

TEST(Csv, EmptyFileHasItsOwnDiagnostic) {
  EXPECT_NE(error_of([] { matrix_from_csv(""); }).find("empty"), std::string::npos);
  EXPECT_NE(error_of([] { matrix_from_csv("\n\n"); }).find("empty"), std::string::npos);
}

TEST(Csv, MissingFileIsFormatError) {
  EXPECT_THROW(read_matrix("/nonexistent/dir/m.csv"), FormatError);
}

// ---- checkpoints ----

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.n_rois = 5;
  c.n_points = 8;
  c.width = 8;
  c.con_blocks = 1;
  c.spatial_heads = 2;
  c.temporal_heads = 1;
  return c;
}

template <typename T>
Checkpoint<T> make_checkpoint(bool with_optimizer) {
  Checkpoint<T> c;
  c.model = small_config();
  c.params = make_model_params<T>(c.model, 11);
  c.seed = 1234567890123ULL;
  c.history = "run/model.bin.history.csv";
  if (with_optimizer) {
    auto opt = OptimizerState<T>::zeros_like(c.params);
    std::uint64_t s = 50;
    for (auto& m : opt.first_moment) m = random_matrix<T>(m.rows(), m.cols(), s++);
    for (auto& m : opt.second_moment) m = random_matrix<T>(m.rows(), m.cols(), s++, 0, 1);
    opt.step = 77;
    c.optimizer = std::move(opt);
  }
  return c;
}

template <typename T>
bool bitwise_equal(const Matrix<T>& a, const Matrix<T>& b) {
  return a.same_shape(b) && std::memcmp(a.flat().data(), b.flat().data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
void expect_same(const Checkpoint<T>& a, const Checkpoint<T>& b) {
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.model.n_rois, b.model.n_rois);
  EXPECT_EQ(a.model.width, b.model.width);
  EXPECT_EQ(a.model.temporal_heads, b.model.temporal_heads);
  EXPECT_EQ(a.model.use_ushape, b.model.use_ushape);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params.arrays()[i].name, b.params.arrays()[i].name);
    EXPECT_TRUE(bitwise_equal(a.params.arrays()[i].value, b.params.arrays()[i].value)) << a.params.arrays()[i].name;
  }
  ASSERT_EQ(a.optimizer.has_value(), b.optimizer.has_value());
  if (a.optimizer) {
    EXPECT_EQ(a.optimizer->step, b.optimizer->step);
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      EXPECT_TRUE(bitwise_equal(a.optimizer->first_moment[i], b.optimizer->first_moment[i]));
      EXPECT_TRUE(bitwise_equal(a.optimizer->second_moment[i], b.optimizer->second_moment[i]));
    }
  }
}

template <typename T>
class CheckpointRoundTrip : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(CheckpointRoundTrip, Precisions);

TYPED_TEST(CheckpointRoundTrip, BitwiseWithAndWithoutOptimizer) {
  TempDir dir;
  for (bool opt : {false, true}) {
    const auto c = make_checkpoint<TypeParam>(opt);
    save_checkpoint(c, dir.path() / "m.bin");
    expect_same(c, load_checkpoint<TypeParam>(dir.path() / "m.bin"));
    EXPECT_EQ(checkpoint_precision(dir.path() / "m.bin"), precision_of<TypeParam>());
  }
}

TYPED_TEST(CheckpointRoundTrip, PayloadLengthMatchesShapes) {
  const auto c = make_checkpoint<TypeParam>(true);
  const std::string bytes = serialize_checkpoint(c);
  std::size_t elements = 0;
  for (const auto& a : c.params.arrays()) elements += 3 * a.value.size();
  const std::size_t header = bytes.find("\nend\n") + 5;
  EXPECT_EQ(bytes.size() - header, elements * sizeof(TypeParam));
}

TYPED_TEST(CheckpointRoundTrip, NonFiniteValuesSurviveBitwise) {
  auto c = make_checkpoint<TypeParam>(false);
  auto& v = c.params.arrays()[0].value;
  v.flat()[0] = std::numeric_limits<TypeParam>::quiet_NaN();
  v.flat()[1] = -std::numeric_limits<TypeParam>::infinity();
  v.flat()[2] = -TypeParam(0);
  v.flat()[3] = std::numeric_limits<TypeParam>::denorm_min();
  expect_same(c, deserialize_checkpoint<TypeParam>(serialize_checkpoint(c)));
}

TEST(Checkpoint, PayloadIsLittleEndianIeee) {
  const auto c = make_checkpoint<double>(false);
  const std::string bytes = serialize_checkpoint(c);
  const std::size_t start = bytes.find("\nend\n") + 5;
  const auto bits = std::bit_cast<std::uint64_t>(c.params.arrays()[0].value.flat()[0]);
  for (std::size_t b = 0; b < 8; ++b)
    EXPECT_EQ(static_cast<unsigned char>(bytes[start + b]), (bits >> (8 * b)) & 0xFF);
}

TEST(Checkpoint, HeaderCarriesConfigAndDirectory) {
  const std::string bytes = serialize_checkpoint(make_checkpoint<float>(false));
  const std::string head = bytes.substr(0, bytes.find("\nend\n"));
  EXPECT_EQ(head.rfind("ECDIFF-CHECKPOINT 1\n", 0), 0u);
  EXPECT_NE(head.find("\nprecision=f32\n"), std::string::npos);
  EXPECT_NE(head.find("\nmodel.n_rois=5\n"), std::string::npos);
  EXPECT_NE(head.find("\narray "), std::string::npos);
}

TEST(Checkpoint, CrossPrecisionMatrix) {
  TempDir dir;
  save_checkpoint(make_checkpoint<double>(true), dir.path() / "d.bin");
  save_checkpoint(make_checkpoint<float>(true), dir.path() / "f.bin");
  EXPECT_NO_THROW(load_checkpoint<double>(dir.path() / "d.bin"));
  EXPECT_NO_THROW(load_checkpoint<float>(dir.path() / "f.bin"));
  const std::string down = error_of([&] { load_checkpoint<float>(dir.path() / "d.bin"); });
  const std::string up = error_of([&] { load_checkpoint<double>(dir.path() / "f.bin"); });
  EXPECT_NE(down.find("precision mismatch"), std::string::npos) << down;
  EXPECT_NE(up.find("precision mismatch"), std::string::npos) << up;
}

TEST(Checkpoint, TruncationByOneByteIsDetected) {
  std::string bytes = serialize_checkpoint(make_checkpoint<double>(true));
  bytes.pop_back();
  EXPECT_NE(error_of([&] { deserialize_checkpoint<double>(bytes); }).find("truncated payload"), std::string::npos);
}

TEST(Checkpoint, TruncatedHeaderIsDetected) {
  const std::string bytes = serialize_checkpoint(make_checkpoint<double>(false));
  EXPECT_NE(error_of([&] { deserialize_checkpoint<double>(bytes.substr(0, 40)); }).find("truncated header"),
            std::string::npos);
}

TEST(Checkpoint, TrailingBytesAreDetected) {
  const std::string bytes = serialize_checkpoint(make_checkpoint<double>(false)) + "x";
  EXPECT_NE(error_of([&] { deserialize_checkpoint<double>(bytes); }).find("trailing"), std::string::npos);
}

TEST(Checkpoint, VersionMismatchIsDetected) {
  std::string bytes = serialize_checkpoint(make_checkpoint<double>(false));
  bytes.replace(0, std::strlen("ECDIFF-CHECKPOINT 1"), "ECDIFF-CHECKPOINT 2");
  EXPECT_NE(error_of([&] { deserialize_checkpoint<double>(bytes); }).find("version mismatch"), std::string::npos);
}

TEST(Checkpoint, BadMagicIsDetected) {
  EXPECT_NE(error_of([] { deserialize_checkpoint<double>("PK\x03\x04 junk\n"); }).find("bad magic"),
            std::string::npos);
}

std::string edit_first_array_line(std::string bytes, int field, const std::string& value) {
  const std::size_t at = bytes.find("\narray ") + 1;
  const std::size_t end = bytes.find('\n', at);
  std::istringstream ss(bytes.substr(at, end - at));
  std::vector<std::string> parts;
  for (std::string p; ss >> p;) parts.push_back(p);
  parts[static_cast<std::size_t>(field)] = value;
  std::string line = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) line += ' ' + parts[i];
  bytes.replace(at, end - at, line);
  return bytes;
}

TEST(Checkpoint, ShapeInconsistencyIsDetected) {
  const std::string bytes = edit_first_array_line(serialize_checkpoint(make_checkpoint<double>(false)), 2, "999");
  EXPECT_NE(error_of([&] { deserialize_checkpoint<double>(bytes); }).find("shape inconsistency"), std::string::npos);
}

TEST(Checkpoint, OffsetInconsistencyIsDetected) {
  const std::string bytes = edit_first_array_line(serialize_checkpoint(make_checkpoint<double>(false)), 4, "8");
  EXPECT_NE(error_of([&] { deserialize_checkpoint<double>(bytes); }).find("offset inconsistency"), std::string::npos);
}

TEST(Checkpoint, MismatchedOptimizerStateIsRejectedOnSave) {
  auto c = make_checkpoint<double>(true);
  c.optimizer->first_moment.pop_back();
  EXPECT_THROW(serialize_checkpoint(c), std::invalid_argument);
}

// ---- manifests ----

CohortConfig tiny_cohort() {
  CohortConfig c;
  c.n_rois = 6;
  c.n_points = 10;
  c.subjects_per_stage = 2;
  c.perturbed_edges = 2;
  c.seed = 5;
  return c;
}

TEST(Manifest, WriteThenReadReproducesCohort) {
  TempDir dir;
  const Cohort cohort = build_cohort(tiny_cohort());
  write_cohort(cohort, dir.path());
  const CohortManifest m = read_manifest(dir.path() / "manifest.json");
  EXPECT_EQ(m.schema_version, kManifestVersion);
  EXPECT_EQ(m.seed, 5u);
  EXPECT_EQ(m.config.n_rois, 6u);
  EXPECT_EQ(m.config.stages, cohort.config.stages);
  ASSERT_EQ(m.subjects.size(), cohort.subjects.size());
  for (std::size_t i = 0; i < m.subjects.size(); ++i) {
    const auto& s = m.subjects[i];
    const auto& r = cohort.subjects[i];
    EXPECT_EQ(s.id, r.id);
    EXPECT_EQ(s.stage, r.stage);
    EXPECT_EQ(s.seed, r.seed);
    EXPECT_LE(max_abs_diff(read_matrix(m.root / s.clean), r.clean), 1e-7);
    EXPECT_LE(max_abs_diff(read_matrix(m.root / s.rough), r.rough), 1e-7);
    EXPECT_LE(max_abs_diff(read_matrix(m.root / s.ec), r.ec_true), 1e-7);
  }
  ASSERT_EQ(m.transitions.size(), cohort.transitions.size());
  for (std::size_t i = 0; i < m.transitions.size(); ++i) {
    EXPECT_EQ(m.transitions[i].from, cohort.transitions[i].from);
    EXPECT_EQ(m.transitions[i].to, cohort.transitions[i].to);
    EXPECT_EQ(m.transitions[i].enhanced, cohort.transitions[i].enhanced);
    EXPECT_EQ(m.transitions[i].diminished, cohort.transitions[i].diminished);
  }
  EXPECT_EQ(manifest_to_json(m), slurp(dir.path() / "manifest.json"));
}

TEST(Manifest, MissingReferencedFileIsRejected) {
  TempDir dir;
  write_cohort(build_cohort(tiny_cohort()), dir.path());
  fs::remove(dir.path() / "subjects" / "NC_000_F.csv");
  const std::string msg = error_of([&] { read_manifest(dir.path() / "manifest.json"); });
  EXPECT_NE(msg.find("missing file"), std::string::npos) << msg;
}

TEST(Manifest, SchemaVersionIsChecked) {
  TempDir dir;
  write_cohort(build_cohort(tiny_cohort()), dir.path());
  std::string text = slurp(dir.path() / "manifest.json");
  text.replace(text.find("\"schema_version\": 1"), 19, "\"schema_version\": 9");
  EXPECT_NE(error_of([&] { manifest_from_json(text, dir.path()); }).find("schema version"), std::string::npos);
}

TEST(Manifest, StageLabelsMustBeKnown) {
  TempDir dir;
  write_cohort(build_cohort(tiny_cohort()), dir.path());
  std::string text = slurp(dir.path() / "manifest.json");
  text.replace(text.find("\"stage\": \"SMC\""), 14, "\"stage\": \"AD\"");
  EXPECT_THROW(manifest_from_json(text, dir.path()), FormatError);
}

TEST(Manifest, MalformedJsonIsFormatError) {
  EXPECT_THROW(manifest_from_json("{\"schema_version\": 1,", "."), FormatError);
  EXPECT_THROW(manifest_from_json("{\"schema_version\": 1}", "."), FormatError);
}

TEST(Manifest, SampleManifestRoundTrip) {
  TempDir dir;
  write_matrix(MatrixD{{1}}, dir.path() / "a_H0.csv");
  write_matrix(MatrixD{{0}}, dir.path() / "a_E.csv");
  SampleManifest m;
  m.seed = 9;
  m.checkpoint = "model.bin";
  m.precision = Precision::F32;
  m.subjects.push_back({"a", Stage::EMCI, 3, "a_H0.csv", "a_E.csv"});
  write_file_atomic(dir.path() / "samples.json", sample_manifest_to_json(m));
  const SampleManifest back = read_sample_manifest(dir.path() / "samples.json");
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.checkpoint, "model.bin");
  EXPECT_EQ(back.precision, Precision::F32);
  ASSERT_EQ(back.subjects.size(), 1u);
  EXPECT_EQ(back.subjects[0].stage, Stage::EMCI);
  EXPECT_EQ(back.subjects[0].seed, 3u);
  fs::remove(dir.path() / "a_E.csv");
  EXPECT_THROW(read_sample_manifest(dir.path() / "samples.json"), FormatError);
}

// ---- run configuration ----

TEST(RunConfigParse, OverlaysOnlyGivenKeys) {
  RunConfig base;
  base.train.epochs = 3;
  const RunConfig c = parse_run_config(
      R"({"model": {"width": 16, "use_ushape": false}, "train": {"omega": 0.5, "precision": "f32"},
          "cohort": {"n_rois": 12, "stages": ["NC", "LMCI"]}})",
      base);
  EXPECT_EQ(c.model.width, 16u);
  EXPECT_FALSE(c.model.use_ushape);
  EXPECT_TRUE(c.model.use_transformer);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_DOUBLE_EQ(c.train.omega, 0.5);
  EXPECT_EQ(c.train.precision, Precision::F32);
  EXPECT_EQ(c.cohort.n_rois, 12u);
  EXPECT_EQ(c.cohort.stages, (std::vector<Stage>{Stage::NC, Stage::LMCI}));
}

TEST(RunConfigParse, UnknownKeysAndSectionsAreRejected) {
  EXPECT_NE(error_of([] { parse_run_config(R"({"model": {"depth": 3}})"); }).find("unknown model key 'depth'"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_run_config(R"({"train": {"lr": 3}})"); }).find("unknown train key"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_run_config(R"({"cohort": {"rois": 3}})"); }).find("unknown cohort key"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_run_config(R"({"optim": {}})"); }).find("unknown section"), std::string::npos);
}

TEST(RunConfigParse, TypeErrorsAreFormatErrors) {
  EXPECT_THROW(parse_run_config(R"({"train": {"epochs": "many"}})"), FormatError);
  EXPECT_THROW(parse_run_config(R"({"train": {"precision": "f16"}})"), FormatError);
  EXPECT_THROW(parse_run_config(R"([1, 2])"), FormatError);
  EXPECT_THROW(parse_run_config("not json"), FormatError);
}

TEST(History, CsvHeaderAndRows) {
  std::vector<EpochStats> h{{1, {0.5, 0.25, 0.125}}};
  EXPECT_EQ(history_to_csv(h), "epoch,noise,reconstruction,sparsity,total\n1,0.5,0.25,0.125,0.875\n");
}

}  // namespace
