#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "gamseg/annotations.hpp"
#include "gamseg/features.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace gamseg;

namespace {

const std::string kCli = GAMSEG_CLI_PATH;
const std::filesystem::path kData = GAMSEG_TEST_DATA;

const char* const kSubcommands[] = {"extract", "annotate-convert", "stats", "synth", "train",
                                    "tune", "predict", "evaluate", "baseline"};

test::CommandResult cli(const std::string& args, bool merge_stderr = false) {
  return test::run_command(kCli + " " + args, merge_stderr);
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string full_help() {
  std::string text = cli("--help").output;
  for (const char* sub : kSubcommands) text += cli(std::string(sub) + " --help").output;
  return text;
}

// Tiny corpus shared by the end-to-end tests: 1 train, 1 val, 1 test track.
const std::filesystem::path& corpus() {
  static const std::filesystem::path dir = [] {
    const auto d = test::temp_dir("cli_corpus");
    const auto r = cli("--seed 3 synth --tracks 3 --out " + d.string() +
                       " --min-duration 4 --max-duration 5 --max-sections 2"
                       " --val-fraction 0.34 --test-fraction 0.34");
    EXPECT_EQ(r.status, 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, HelpMatchesSnapshot) {
  const auto help = full_help();
  EXPECT_EQ(help, file_bytes(kData / "help.txt"));
}

TEST(Cli, HelpListsDefaults) {
  const auto train = cli("train --help").output;
  for (const char* flag : {"--epochs", "--lr", "--pos-weight", "--chunk-frames", "--chunk-overlap",
                           "--init-checkpoint", "--arch", "--max-pool"}) {
    EXPECT_NE(train.find(flag), std::string::npos) << flag;
  }
  EXPECT_NE(train.find("60"), std::string::npos);
  EXPECT_NE(train.find("0.01"), std::string::npos);
  EXPECT_NE(train.find("2048"), std::string::npos);
  const auto evaluate = cli("evaluate --help").output;
  EXPECT_NE(evaluate.find("--tolerance FLOAT [3]"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  const auto r = cli("predict --bogus-flag", true);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("Run with --help"), std::string::npos);
  const auto extra = cli("predict --audio a.wav --checkpoint m.ckpt --bogus-flag", true);
  EXPECT_EQ(extra.status, 1);
  EXPECT_NE(extra.output.find("--bogus-flag"), std::string::npos);
  EXPECT_EQ(cli("").status, 1);
  EXPECT_EQ(cli("frobnicate").status, 1);
  EXPECT_EQ(cli("evaluate --checkpoint x --manifest y --split dev").status, 1);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  const auto r = cli("predict --audio /nonexistent.wav --checkpoint /nonexistent.ckpt", true);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("IoError"), std::string::npos);
  EXPECT_EQ(cli("stats --format savgm " + (kData / "two_column_example.txt").string()).status, 2);
}

TEST(Cli, AnnotateConvertAndStats) {
  const auto r = cli("annotate-convert --in " + (kData / "two_column_example.txt").string() +
                     " --from two_column --to savgm");
  ASSERT_EQ(r.status, 0);
  const auto track = parse_annotation_text(r.output);
  EXPECT_EQ(track.interior_times(), (std::vector<double>{2.5, 10.25, 31.0}));

  const auto s = cli("stats " + (kData / "savgm_example.txt").string());
  ASSERT_EQ(s.status, 0);
  const auto j = nlohmann::json::parse(s.output);
  EXPECT_EQ(j["categories"]["t"]["count"], 6);
}

TEST(Cli, ExtractWritesFeatureFile) {
  const auto dir = test::temp_dir("cli_extract");
  write_wav(test::sine(440.0, 2.0), dir / "a.wav");
  ASSERT_EQ(cli("extract --audio " + (dir / "a.wav").string() + " --out " + (dir / "a.feat").string())
                .status,
            0);
  const auto fm = read_feature_file(dir / "a.feat");
  EXPECT_EQ(fm.rows(), 98u);
  EXPECT_EQ(fm.cols(), frame_count(44100, 512));
}

TEST(Cli, SynthTrainEvaluatePredict) {
  const auto dir = corpus();
  const auto manifest = (dir / "manifest.jsonl").string();
  const auto ckpt = (dir / "model.ckpt").string();
  const auto train = cli("--seed 1 train --manifest " + manifest + " --out " + ckpt +
                         " --arch reduced --epochs 1 --copies-per-track 0");
  ASSERT_EQ(train.status, 0);
  EXPECT_TRUE(std::filesystem::exists(ckpt + ".best"));
  EXPECT_EQ(file_bytes(ckpt + ".metrics.csv").substr(0, 6), "epoch,");

  const auto eval = cli("evaluate --manifest " + manifest + " --split test --checkpoint " + ckpt +
                        " --tolerance 3.0");
  ASSERT_EQ(eval.status, 0);
  const auto report = nlohmann::json::parse(eval.output);
  EXPECT_EQ(report["n_tracks"], 1);
  EXPECT_TRUE(report["f1"].contains("mean"));
  EXPECT_TRUE(report["f1"].contains("std"));
  EXPECT_EQ(report["tolerance"], 3.0);

  const auto audio = (dir / "track_002.wav").string();
  const auto logits = (dir / "logits.feat").string();
  const auto pred = cli("predict --audio " + audio + " --checkpoint " + ckpt + " --logits " + logits +
                        " --threshold 0.0");
  ASSERT_EQ(pred.status, 0);
  EXPECT_NE(pred.output.find('\t'), std::string::npos);
  const auto curve = read_feature_file(logits);
  EXPECT_EQ(curve.rows(), 1u);
  EXPECT_EQ(curve.cols(), frame_count(decode_audio(audio).size(), 512));

  const auto base = cli("baseline --manifest " + manifest + " --split train --kernel-half-width 32");
  ASSERT_EQ(base.status, 0);
  EXPECT_EQ(nlohmann::json::parse(base.output)["n_tracks"], 1);
}

TEST(Cli, SeededRunsAreByteIdentical) {
  const auto dir = corpus();
  const auto manifest = (dir / "manifest.jsonl").string();
  const auto again = test::temp_dir("cli_corpus_again");
  ASSERT_EQ(cli("--seed 3 synth --tracks 3 --out " + again.string() +
                " --min-duration 4 --max-duration 5 --max-sections 2"
                " --val-fraction 0.34 --test-fraction 0.34")
                .status,
            0);
  for (const char* f : {"manifest.jsonl", "track_000.wav", "track_000.txt", "track_002.wav"}) {
    EXPECT_EQ(file_bytes(dir / f), file_bytes(again / f)) << f;
  }
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    const auto out = (again / ("run" + std::to_string(run) + ".ckpt")).string();
    ASSERT_EQ(cli("--seed 4 train --manifest " + manifest + " --out " + out +
                  " --arch reduced --epochs 1 --copies-per-track 1")
                  .status,
              0);
    bytes[run] = file_bytes(out);
  }
  EXPECT_EQ(bytes[0], bytes[1]);
}

TEST(Cli, TuneWritesRankedRows) {
  const auto dir = corpus();
  const auto r = cli("tune --manifest " + (dir / "manifest.jsonl").string() +
                     " --grid 'lr=0.01,0.001' --grid-epochs 1 --arch reduced --copies-per-track 0");
  ASSERT_EQ(r.status, 0);
  const auto rows = nlohmann::json::parse(r.output);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["rank"], 1);
  EXPECT_EQ(cli("tune --manifest " + (dir / "manifest.jsonl").string() + " --grid ''").status, 2);
}
