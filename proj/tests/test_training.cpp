#include <gtest/gtest.h>

#include <cmath>

#include "gamseg/error.hpp"
#include "gamseg/inference.hpp"
#include "gamseg/synth.hpp"
#include "gamseg/training.hpp"
#include "test_util.hpp"

using namespace gamseg;

namespace {

FeatureMatrix random_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  FeatureMatrix fm;
  fm.data = Matrix(rows, cols);
  Rng rng(seed);
  for (auto& v : fm.data.data) v = rng.uniform(-1.0, 1.0);
  return fm;
}

FrameTargets zero_targets(std::size_t n) {
  FrameTargets t;
  t.values.assign(n, 0.0F);
  t.frame_rate = 22050.0 / 512.0;
  return t;
}

SynthSpec short_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  spec.sections = {{4.0, {Waveform::Sine, 220.0, 1}, 0.0, 0.5},
                   {4.0, {Waveform::Saw, 330.0, 6}, 120.0, 0.6}};
  return spec;
}

PreparedTrack prepared(std::uint64_t seed, const std::string& id) {
  const auto track = generate_synthetic_track(short_spec(seed));
  PreparedTrack p;
  p.id = id;
  p.features = extract_features(track.clip);
  p.annotation = track.annotation;
  return p;
}

TrainingConfig quick_config(std::size_t epochs) {
  TrainingConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = 5;
  cfg.augment.copies_per_track = 0;
  return cfg;
}

// Writes `n` short synthetic tracks and a manifest; returns the manifest path.
std::filesystem::path small_corpus(const std::string& name, const std::vector<std::string>& splits) {
  const auto dir = test::temp_dir(name);
  DatasetManifest m;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto track = generate_synthetic_track(short_spec(i + 1));
    ManifestEntry e;
    e.audio_path = dir / ("t" + std::to_string(i) + ".wav");
    e.annotation_path = dir / ("t" + std::to_string(i) + ".txt");
    e.split = splits[i];
    write_wav(track.clip, e.audio_path, WavEncoding::Float32);
    detail::write_text(e.annotation_path, serialize_annotation_file(track.annotation));
    m.entries.push_back(e);
  }
  write_manifest(m, dir / "manifest.jsonl");
  return dir / "manifest.jsonl";
}

}  // namespace

TEST(Chunks, ExactFit) {
  const auto chunks = make_training_chunks(random_features(2, 2048, 1), zero_targets(2048), {});
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].valid, 2048u);
  EXPECT_EQ(std::count(chunks[0].mask.begin(), chunks[0].mask.end(), 0.0F), 0);
}

TEST(Chunks, TwoWindowsWithPadding) {
  const ChunkSpec spec{2048, 256};
  EXPECT_EQ(chunk_starts(3000, spec), (std::vector<std::size_t>{0, 1792}));
  const auto fm = random_features(2, 3000, 2);
  const auto chunks = make_training_chunks(fm, zero_targets(3000), spec);
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[1].start, 1792u);
  // 3000 − 1792 = 1208 real frames, so 2048 − 1208 = 840 are padding.
  EXPECT_EQ(chunks[1].valid, 1208u);
  EXPECT_EQ(std::count(chunks[1].mask.begin(), chunks[1].mask.end(), 0.0F), 840);
  EXPECT_EQ(chunks[1].features(1, 0), fm.data(1, 1792));
  EXPECT_EQ(chunks[1].features(1, 1500), 0.0);
}

TEST(Chunks, ShortTrackPadded) {
  const auto chunks = make_training_chunks(random_features(2, 10, 3), zero_targets(10), {});
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].features.cols, 2048u);
  EXPECT_EQ(std::count(chunks[0].mask.begin(), chunks[0].mask.end(), 0.0F), 2038);
}

TEST(Chunks, LengthMismatchAndBadSpec) {
  EXPECT_THROW(make_training_chunks(random_features(2, 10, 3), zero_targets(11), {}), LengthMismatch);
  EXPECT_THROW(chunk_starts(10, {256, 256}), ConfigError);
}

TEST(Chunks, MaskedPaddingLeavesLossUnchanged) {
  const nn::Model<float> model(nn::Architecture::reduced(), 3);
  const auto fm = random_features(98, 50, 4);
  auto targets = zero_targets(50);
  targets.values[20] = 1.0F;
  const auto tight = make_training_chunks(fm, targets, {50, 10});
  const auto padded = make_training_chunks(fm, targets, {128, 10});
  const auto wide = make_training_chunks(fm, targets, {2048, 256});
  const double base = chunk_loss(model, tight[0], 100.0)->data[0];
  EXPECT_NEAR(chunk_loss(model, padded[0], 100.0)->data[0], base, 1e-6);
  EXPECT_NEAR(chunk_loss(model, wide[0], 100.0)->data[0], base, 1e-6);
}

TEST(Chunks, PooledTargets) {
  const std::vector<float> v{0, 1, 0, 0, 1};
  EXPECT_EQ(pool_targets(v), (std::vector<float>{1, 0, 1}));
}

TEST(Train, LossDecreases) {
  const std::vector<PreparedTrack> tracks{prepared(1, "one")};
  const auto result = train_prepared(tracks, {}, nn::Architecture::reduced(), quick_config(5), {});
  ASSERT_EQ(result.log.size(), 5u);
  int decreases = 0;
  for (std::size_t i = 1; i < result.log.size(); ++i) {
    if (result.log[i].train_loss < result.log[i - 1].train_loss) ++decreases;
  }
  EXPECT_GE(decreases, 3);
}

TEST(Train, SameSeedSameBytes) {
  const std::vector<PreparedTrack> tracks{prepared(1, "one"), prepared(2, "two")};
  const auto a = train_prepared(tracks, {}, nn::Architecture::reduced(), quick_config(2), {});
  const auto b = train_prepared(tracks, {}, nn::Architecture::reduced(), quick_config(2), {});
  EXPECT_EQ(encode_checkpoint(a.final_checkpoint), encode_checkpoint(b.final_checkpoint));
  TrainingConfig other = quick_config(2);
  other.seed = 6;
  const auto c = train_prepared(tracks, {}, nn::Architecture::reduced(), other, {});
  EXPECT_NE(encode_checkpoint(a.final_checkpoint), encode_checkpoint(c.final_checkpoint));
}

TEST(Train, BestCheckpointFollowsValidation) {
  const std::vector<PreparedTrack> train{prepared(1, "one")};
  const std::vector<PreparedTrack> val{prepared(2, "two")};
  const auto result = train_prepared(train, val, nn::Architecture::reduced(), quick_config(3), {});
  ASSERT_GE(result.best_epoch, 1u);
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& m : result.log) {
    if (m.val_f1 > best) {
      best = m.val_f1;
      best_epoch = m.epoch;
    }
  }
  EXPECT_EQ(result.best_epoch, best_epoch);
  const auto csv = metrics_csv(result.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_precision,val_recall,val_f1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Train, InitWithMismatchedRows) {
  ModelCheckpoint init;
  nn::Architecture arch = nn::Architecture::reduced();
  arch.n_features = 97;
  init.model = nn::Model<float>(arch, 1);
  const std::vector<PreparedTrack> tracks{prepared(1, "one")};
  EXPECT_THROW(train_prepared(tracks, {}, nn::Architecture::reduced(), quick_config(1), {}, &init),
               FeatureExtractionFailed);
}

TEST(Train, InitContinuesFromCheckpoint) {
  const std::vector<PreparedTrack> tracks{prepared(1, "one")};
  const auto first = train_prepared(tracks, {}, nn::Architecture::reduced(), quick_config(2), {});
  const auto second = train_prepared(tracks, {}, nn::Architecture{}, quick_config(1), {},
                                     &first.final_checkpoint);
  EXPECT_EQ(second.final_checkpoint.architecture(), nn::Architecture::reduced());
  EXPECT_LT(second.log[0].train_loss, first.log[0].train_loss);
}

TEST(Train, EmptyInputs) {
  EXPECT_THROW(train_prepared({}, {}, nn::Architecture::reduced(), quick_config(1), {}), EmptyManifest);
  EXPECT_THROW(train(DatasetManifest{}, nn::Architecture::reduced(), quick_config(1)), EmptyManifest);
}

TEST(Train, ConfigValidation) {
  TrainingConfig cfg;
  cfg.chunk_overlap = cfg.chunk_frames;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainingConfig{};
  cfg.augment.pitch_max = 13.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainingConfig{};
  cfg.augment.tempo_min = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, ConfigJsonRoundTrip) {
  TrainingConfig cfg;
  cfg.epochs = 7;
  cfg.lr = 0.003;
  cfg.seed = 99;
  cfg.augment.copies_per_track = 3;
  cfg.smear = 2;
  cfg.peaks.threshold = 0.4;
  const nlohmann::json j = cfg;
  const auto back = j.get<TrainingConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(j["augment"]["tempo_range"], nlohmann::json::array({0.8, 1.2}));
  EXPECT_EQ(back.augment.copies_per_track, 3u);
}

TEST(Train, BiasGradientCompensatesImbalance) {
  nn::Model<float> model(nn::Architecture::reduced(), 2);
  std::fill(model.param("fc.weight")->data.begin(), model.param("fc.weight")->data.end(), 0.0F);
  // A model already leaning towards the majority class: σ(−3) ≈ 0.047.
  model.param("fc.bias")->data[0] = -3.0F;
  const auto fm = random_features(98, 500, 8);
  auto targets = zero_targets(500);
  targets.values[250] = 1.0F;
  const auto chunk = make_training_chunks(fm, targets, {512, 0})[0];

  auto bias_grad = [&](double pos_weight) {
    nn::Tape<float> tape;
    nn::ForwardOptions<float> opt;
    opt.tape = &tape;
    model.zero_grad();
    tape.backward(chunk_loss(model, chunk, pos_weight, opt));
    return static_cast<double>(model.param("fc.bias")->grad[0]);
  };
  // Closed form: mean over frames of (1 − y)σ − w·y(1 − σ).
  const double s = 1.0 / (1.0 + std::exp(3.0));
  EXPECT_NEAR(bias_grad(100.0), (499.0 * s - 100.0 * (1.0 - s)) / 500.0, 1e-5);
  EXPECT_LT(bias_grad(100.0), 0.0);
  EXPECT_GT(bias_grad(1.0), 0.0);
}

TEST(Grid, SingleAndSquareGrids) {
  const std::vector<PreparedTrack> train{prepared(1, "one")};
  const std::vector<PreparedTrack> val{prepared(2, "two")};
  TrainingConfig cfg = quick_config(0);
  cfg.grid_epochs = 1;
  const auto arch = nn::Architecture::reduced();

  const auto one = grid_search(train, val, arch, {{"lr", {0.01}}, {"pos_weight", {100}}}, cfg, {});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].lr, 0.01);
  EXPECT_EQ(one[0].pos_weight, 100.0);

  const auto four = grid_search(train, val, arch, {{"lr", {0.01, 0.001}}, {"pos_weight", {10, 100}}},
                                cfg, {});
  ASSERT_EQ(four.size(), 4u);
  for (std::size_t i = 1; i < four.size(); ++i) {
    const auto& a = four[i - 1];
    const auto& b = four[i];
    EXPECT_TRUE(a.metrics.val_f1 > b.metrics.val_f1 ||
                (a.metrics.val_f1 == b.metrics.val_f1 &&
                 (a.lr < b.lr || (a.lr == b.lr && a.pos_weight <= b.pos_weight))));
  }
  const auto rows = grid_results_json(four);
  EXPECT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0]["rank"], 1);
}

TEST(Grid, Rejections) {
  const std::vector<PreparedTrack> train{prepared(1, "one")};
  const std::vector<PreparedTrack> val{prepared(2, "two")};
  TrainingConfig cfg = quick_config(0);
  cfg.grid_epochs = 1;
  const auto arch = nn::Architecture::reduced();
  try {
    grid_search(train, val, arch, {}, cfg, {});
    FAIL() << "empty grid accepted";
  } catch (const GridTooLarge& e) {
    EXPECT_EQ(e.size(), 0u);
  }
  EXPECT_THROW(grid_search(train, val, arch, {{"lr", {0.1, 0.2, 0.3}}}, cfg, {}, 2), GridTooLarge);
  EXPECT_THROW(grid_search(train, {}, arch, {{"lr", {0.1}}}, cfg, {}), EmptyManifest);
  EXPECT_THROW(grid_search(train, val, arch, {{"momentum", {0.9}}}, cfg, {}), ConfigError);
}

TEST(Manifest, ParsingAndPathResolution) {
  const auto path = small_corpus("manifest", {"train", "val", "test"});
  const auto m = load_manifest(path);
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].audio_path, path.parent_path() / "t0.wav");
  EXPECT_EQ(m.split("val").size(), 1u);
  EXPECT_EQ(m.split("val")[0].id(), "t1");
  EXPECT_EQ(detail::read_text(path).find(path.parent_path().string()), std::string::npos);

  const std::string line = R"({"audio_path":"a.wav","annotation_path":"a.txt","split":"train"})";
  const auto rel = parse_manifest_text(line, "/data", false);
  EXPECT_EQ(rel.entries[0].audio_path, std::filesystem::path("/data/a.wav"));
  EXPECT_EQ(rel.entries[0].annotation_format, AnnotationFormat::Savgm);
  EXPECT_THROW(parse_manifest_text(line, "/data", true), IoError);
  EXPECT_THROW(parse_manifest_text(R"({"audio_path":"a.wav","annotation_path":"a.txt","split":"dev"})",
                                   "/data", false),
               MalformedLine);
  EXPECT_THROW(parse_manifest_text("{not json", "/data", false), MalformedLine);
  EXPECT_THROW(parse_format("csv"), ConfigError);
}

TEST(Manifest, AugmentedCopiesStayInTraining) {
  const auto m = load_manifest(small_corpus("augcopies", {"train", "val"}));
  AugmentConfig aug;
  const auto train = prepare_tracks(m.split("train"), {}, aug, 2, 4);
  ASSERT_EQ(train.size(), 3u);
  EXPECT_FALSE(train[0].augmented);
  EXPECT_TRUE(train[1].augmented);
  EXPECT_TRUE(train[2].augmented);
  EXPECT_EQ(train[1].id, "t0#aug1");
  EXPECT_NE(train[1].features.cols(), train[2].features.cols());
  const auto val = prepare_tracks(m.split("val"), {}, aug, 0, 4);
  ASSERT_EQ(val.size(), 1u);
  EXPECT_FALSE(val[0].augmented);

  const auto threaded = prepare_tracks(m.split("train"), {}, aug, 2, 4, 3);
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(threaded[i].features.data.data, train[i].features.data.data);
  }
}

TEST(Manifest, MissingAudioSurfacesPath) {
  ManifestEntry e;
  e.audio_path = "/nonexistent/x.wav";
  e.annotation_path = "/nonexistent/x.txt";
  try {
    prepare_tracks({e}, {}, {}, 0, 0);
    FAIL() << "missing audio accepted";
  } catch (const FeatureExtractionFailed& ex) {
    EXPECT_NE(std::string(ex.what()).find("/nonexistent/x.wav"), std::string::npos);
  }
}

TEST(Inference, StitchingMatchesUnchunkedForFrameLocalModel) {
  nn::Architecture a;
  a.conv1_filters = 0;
  a.conv2_filters = 0;
  a.lstm_layers = 0;
  const nn::Model<float> model(a, 3);
  const auto fm = random_features(98, 3000, 9);
  const auto whole = model.forward(fm.data)->data;
  for (const ChunkSpec spec : {ChunkSpec{}, ChunkSpec{100, 20}, ChunkSpec{333, 101}}) {
    const auto stitched = predict_logits(model, fm.data, spec);
    ASSERT_EQ(stitched.size(), whole.size());
    for (std::size_t i = 0; i < whole.size(); ++i) ASSERT_EQ(stitched[i], whole[i]) << i;
  }
}

TEST(Inference, ChunkedLstmCoversEveryFrame) {
  const nn::Model<float> model(nn::Architecture::reduced(), 3);
  const auto fm = random_features(98, 700, 10);
  const auto stitched = predict_logits(model, fm.data, {256, 64});
  ASSERT_EQ(stitched.size(), 700u);
  // The first chunk's kept region is computed exactly as in a lone forward pass.
  const auto first = model.forward(slice_columns(fm.data, 0, 256))->data;
  for (std::size_t i = 0; i < 192 + 32; ++i) EXPECT_EQ(stitched[i], first[i]);
}

TEST(Inference, SilenceAndShortClips) {
  // A frame-local model maps the constant silence features to a flat curve.
  ModelCheckpoint ckpt;
  nn::Architecture a;
  a.conv1_filters = 0;
  a.conv2_filters = 0;
  a.lstm_layers = 0;
  ckpt.model = nn::Model<float>(a, 1);
  ckpt.model.param("fc.bias")->data[0] = 2.0F;
  AudioClip silence;
  silence.samples.assign(22050 * 5, 0.0);
  const auto result = predict_boundaries(silence, ckpt);
  EXPECT_EQ(result.logits.size(), frame_count(silence.size(), 512));
  EXPECT_TRUE(result.prediction.times.empty());

  AudioClip tiny;
  tiny.samples.assign(100, 0.1);
  EXPECT_THROW(predict_boundaries(tiny, ckpt), ClipTooShort);
}

TEST(Inference, EvaluateEmptySplit) {
  const auto m = load_manifest(small_corpus("emptysplit", {"train"}));
  EXPECT_THROW(evaluate_corpus(m, "test", ModelCheckpoint{}), EmptyManifest);
  const auto report = evaluate_corpus(m, "train", ModelCheckpoint{});
  EXPECT_EQ(report.tracks.size(), 1u);
}
