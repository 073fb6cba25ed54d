// ser: command-line front end for the speech emotion recognition toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 data or config error,
// 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ser/audio_io.hpp"
#include "ser/binary_io.hpp"
#include "ser/csv.hpp"
#include "ser/dataset.hpp"
#include "ser/error.hpp"
#include "ser/features.hpp"
#include "ser/metrics.hpp"
#include "ser/model_io.hpp"
#include "ser/nn.hpp"
#include "ser/stream.hpp"
#include "ser/svm.hpp"
#include "ser/sweep.hpp"
#include "ser/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr int kConfigVersion = 1;

// Records every file a command writes and leaves run_manifest.json behind.
class RunDir {
 public:
  RunDir(fs::path dir, std::string command, std::uint64_t seed)
      : dir_(std::move(dir)), command_(std::move(command)), seed_(seed) {
    fs::create_directories(dir_);
  }
  fs::path path(const std::string& name) const { return dir_ / name; }
  void add(const fs::path& p) { files_.push_back(fs::relative(p, dir_).generic_string()); }
  void text(const std::string& name, const std::string& content) {
    ser::write_text_file(path(name), content);
    add(path(name));
  }
  void finish() {
    json j{{"command", command_}, {"seed", seed_}, {"files", files_}};
    ser::write_text_file(dir_ / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string command_;
  std::uint64_t seed_;
  std::vector<std::string> files_;
};

ser::AudioClip load_record(const ser::SampleRecord& r) { return ser::read_wav(r.path); }

ser::Corpus parse_corpus(const std::string& s) {
  auto c = ser::corpus_from_name(s);
  if (!c) throw ser::ConfigError("unknown corpus '" + s + "' (ravdess, tess, synthetic)");
  return *c;
}

ser::SplitRatios parse_ratios(const std::vector<double>& v) {
  if (v.size() != 3) throw ser::ConfigError("--ratios needs three values");
  return {v[0], v[1], v[2]};
}

bool has_full_split(const std::vector<ser::SampleRecord>& records) {
  return std::all_of(records.begin(), records.end(), [](const auto& r) { return r.split != ser::Split::none; });
}

void ensure_split(std::vector<ser::SampleRecord>& records, std::uint64_t seed, const ser::SplitRatios& ratios) {
  if (has_full_split(records)) return;
  ser::SplitOptions so;
  so.seed = seed;
  so.ratios = ratios;
  ser::apply_split(records, ser::stratified_split(records, so));
}

// Everything `extract` leaves in a features directory.
struct FeatureDir {
  ser::PipelineConfig pipeline;
  std::vector<ser::SampleRecord> records;
  std::vector<ser::LabeledWindow> windows;

  std::vector<ser::LabeledWindow> select(ser::Split s) const {
    std::map<std::string, ser::Split> split;
    for (const auto& r : records) split[r.id] = r.split;
    std::vector<ser::LabeledWindow> out;
    for (const auto& w : windows) {
      auto it = split.find(w.id);
      if (it == split.end()) throw ser::DataError("feature " + w.id + " is missing from the manifest");
      if (s == ser::Split::none || it->second == s) out.push_back(w);
    }
    return out;
  }
};

FeatureDir read_feature_dir(const fs::path& dir) {
  FeatureDir fd;
  const auto bytes = ser::read_file_bytes(dir / "pipeline.json");
  fd.pipeline = ser::PipelineConfig::from_json(std::string(bytes.begin(), bytes.end()));
  fd.records = ser::read_manifest(dir / "manifest.csv");
  fd.windows = ser::read_feature_cache(dir / "features.bin");
  return fd;
}

std::size_t target_from_records(const std::vector<ser::SampleRecord>& records) {
  std::vector<ser::SampleRecord> basis;
  for (const auto& r : records) {
    if (r.split == ser::Split::train || r.split == ser::Split::none) basis.push_back(r);
  }
  return ser::max_clip_length(basis.empty() ? records : basis, load_record);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

void print_reference(const ser::MetricsReport& report, std::ostream& os) {
  os << "reference per-class accuracy (context only, not asserted):\n";
  for (const auto& ref : ser::kReferenceClassAccuracy) {
    const auto c = static_cast<std::size_t>(ser::code(ref.label));
    os << "  " << ser::kEmotionNames[c] << ": reference " << fmt(ref.accuracy_percent, 1) << "%, measured recall "
       << fmt(100.0 * report.per_class[c].recall, 1) << "%\n";
  }
}

ser::svm::KernelKind parse_kernel(const std::string& s) {
  if (s == "rbf") return ser::svm::KernelKind::rbf;
  if (s == "linear") return ser::svm::KernelKind::linear;
  throw ser::ConfigError("unknown kernel '" + s + "' (rbf, linear)");
}

// ---------------------------------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  std::string out_dir = "run";
};

void add_common(CLI::App* sub, Common& c, bool needs_out_dir = true) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  if (needs_out_dir) sub->add_option("--out-dir", c.out_dir, "Run directory for outputs")->capture_default_str();
}

struct SynthArgs {
  Common common;
  std::size_t per_class = 8;
  double seconds = 1.0;
  double jitter = 0.1;
  int sample_rate = 8000;
};

int cmd_synth(const SynthArgs& a) {
  RunDir run(a.common.out_dir, "synth-corpus", a.common.seed);
  ser::SyntheticCorpusOptions o;
  o.per_class = a.per_class;
  o.seconds = a.seconds;
  o.length_jitter = a.jitter;
  o.sample_rate = a.sample_rate;
  o.seed = a.common.seed;
  const auto records = ser::write_synthetic_corpus(run.path("audio"), o);
  for (const auto& r : records) run.add(r.path);
  auto abs_records = records;
  for (auto& r : abs_records) r.path = fs::absolute(r.path);
  ser::write_manifest(run.path("manifest.csv"), abs_records);
  run.add(run.path("manifest.csv"));
  run.finish();
  std::cout << "wrote " << records.size() << " clips to " << run.path("audio").string() << "\n";
  return kExitOk;
}

struct ValidateArgs {
  Common common;
  std::string root;
  std::string corpus = "ravdess";
};

int cmd_validate(const ValidateArgs& a) {
  const auto corpus = parse_corpus(a.corpus);
  auto scan = ser::scan_corpus(fs::absolute(a.root), corpus);
  RunDir run(a.common.out_dir, "validate-dataset", a.common.seed);
  const auto report = ser::validate_manifest(scan.records, corpus);
  ser::write_manifest(run.path("manifest.csv"), scan.records);
  run.add(run.path("manifest.csv"));
  run.text("validation.csv", report.to_csv());
  std::string rejected;
  for (const auto& r : scan.rejected) rejected += r + "\n";
  run.text("rejected.txt", rejected);
  run.finish();
  std::cout << report.to_text();
  if (!scan.rejected.empty()) std::cout << scan.rejected.size() << " files rejected (see rejected.txt)\n";
  return report.pass ? kExitOk : kExitData;
}

struct SplitArgs {
  Common common;
  std::string manifest;
  std::vector<double> ratios{0.6, 0.2, 0.2};
  bool actor_disjoint = false;
};

int cmd_split(const SplitArgs& a) {
  auto records = ser::read_manifest(a.manifest);
  ser::SplitOptions so;
  so.seed = a.common.seed;
  so.ratios = parse_ratios(a.ratios);
  so.actor_disjoint = a.actor_disjoint;
  const auto assignment = ser::stratified_split(records, so);
  ser::apply_split(records, assignment);
  RunDir run(a.common.out_dir, "split", a.common.seed);
  ser::write_manifest(run.path("manifest.csv"), records);
  run.add(run.path("manifest.csv"));
  run.finish();
  const auto c = assignment.counts();
  std::cout << "train " << c[0] << ", val " << c[1] << ", test " << c[2] << "\n";
  return kExitOk;
}

struct ExtractArgs {
  Common common;
  std::string manifest;
  std::size_t n_mfcc = 13;
  std::size_t frame_length = 2048;
  std::size_t n_mels = 26;
  std::size_t target_length = 0;
  bool reverse = false;
  bool invert = false;
};

int run_extract(const ExtractArgs& a, const std::string& command) {
  const auto records = ser::read_manifest(a.manifest);
  if (records.empty()) throw ser::DataError("manifest " + a.manifest + " is empty");
  ser::PipelineConfig cfg;
  cfg.n_mfcc = a.n_mfcc;
  cfg.frame_length = a.frame_length;
  cfg.n_mels = a.n_mels;
  cfg.augment_reverse = a.reverse;
  cfg.augment_invert = a.invert;
  cfg.target_length = a.target_length > 0 ? a.target_length : target_from_records(records);
  cfg.validate();
  const auto set = ser::extract_manifest(records, load_record, cfg);

  RunDir run(a.common.out_dir, command, a.common.seed);
  ser::write_feature_cache(run.path("features.bin"), set.windows);
  run.add(run.path("features.bin"));
  ser::write_manifest(run.path("manifest.csv"), set.records);
  run.add(run.path("manifest.csv"));
  run.text("pipeline.json", cfg.to_json() + "\n");
  json aug{{"originals", set.report.originals},
           {"reversed", set.report.reversed},
           {"inverted", set.report.inverted},
           {"inverted_duplicates", set.report.inverted_duplicates}};
  run.text("augmentation.json", aug.dump(2) + "\n");
  run.finish();
  std::cout << "extracted " << set.windows.size() << " windows (" << cfg.n_mfcc << "x" << ser::kWindowFrames
            << ", target_length " << cfg.target_length << ")\n";
  if (cfg.augment_invert) {
    std::cout << "inverted windows identical to their source: " << set.report.inverted_duplicates << " of "
              << set.report.inverted << "\n";
  }
  return kExitOk;
}

struct TrainSvmArgs {
  Common common;
  std::string features;
  std::string kernel = "rbf";
  double C = 10.0;
  std::string gamma = "scale";
  std::string strategy = "ovr";
  std::vector<double> ratios{0.6, 0.2, 0.2};
};

ser::MetricsReport report_for(const ser::Classifier& model, const std::vector<ser::LabeledWindow>& windows);

int cmd_train_svm(const TrainSvmArgs& a) {
  auto fd = read_feature_dir(a.features);
  ensure_split(fd.records, a.common.seed, parse_ratios(a.ratios));
  const auto train = fd.select(ser::Split::train);
  const auto test = fd.select(ser::Split::test);
  if (train.empty()) throw ser::DataError("training split is empty");

  ser::svm::KernelSpec spec;
  spec.kind = parse_kernel(a.kernel);
  spec.C = a.C;
  if (a.gamma != "scale") {
    spec.gamma_mode = ser::svm::GammaMode::fixed;
    try {
      spec.gamma = std::stod(a.gamma);
    } catch (const std::exception&) {
      throw ser::ConfigError("--gamma must be 'scale' or a number");
    }
  }
  if (a.strategy != "ovr" && a.strategy != "ovo") throw ser::ConfigError("--strategy must be ovr or ovo");
  const auto strategy = a.strategy == "ovr" ? ser::svm::Multiclass::ovr : ser::svm::Multiclass::ovo;

  const auto t0 = std::chrono::steady_clock::now();
  auto model = ser::svm::train_multiclass(ser::to_matrix(train), ser::label_codes(train), spec, strategy);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  RunDir run(a.common.out_dir, "train-svm", a.common.seed);
  ser::save_bundle(run.path("model.bundle"), model, fd.pipeline);
  run.add(run.path("model.bundle"));
  run.text("model_summary.txt", ser::svm::summary(model));
  std::cout << ser::svm::summary(model) << "trained in " << fmt(secs, 2) << " s\n";
  for (const auto& m : model.machines) {
    if (!m.converged) std::cout << "warning: machine " << m.positive_class << " hit the iteration cap\n";
  }
  if (!test.empty()) {
    const auto clf = ser::load_classifier(run.path("model.bundle"));
    const auto report = report_for(*clf, test);
    for (const auto& p : report.write_csv(run.path("test"))) run.add(p);
    std::cout << "test " << report.to_text();
  }
  run.finish();
  return kExitOk;
}

struct TrainCnnArgs {
  Common common;
  std::string features;
  std::size_t epochs = 500;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double decay = 1e-6;
  std::vector<double> ratios{0.6, 0.2, 0.2};
  bool quiet = false;
};

int cmd_train_cnn(const TrainCnnArgs& a) {
  auto fd = read_feature_dir(a.features);
  ensure_split(fd.records, a.common.seed, parse_ratios(a.ratios));
  const auto train = fd.select(ser::Split::train);
  const auto val = fd.select(ser::Split::val);
  const auto test = fd.select(ser::Split::test);
  if (train.empty()) throw ser::DataError("training split is empty");

  ser::nn::PaperCnnOptions po;
  po.n_mfcc = fd.pipeline.n_mfcc;
  po.seed = a.common.seed;
  auto model = ser::nn::build_paper_cnn(po);
  ser::nn::TrainConfig tc;
  tc.lr = a.lr;
  tc.decay = a.decay;
  tc.batch_size = a.batch_size;
  tc.epochs = a.epochs;
  tc.seed = a.common.seed;
  const auto train_set = ser::to_cnn_dataset(train);
  const auto val_set = ser::to_cnn_dataset(val);
  RunDir run(a.common.out_dir, "train-cnn", a.common.seed);
  const auto result = ser::nn::train(model, train_set, val.empty() ? nullptr : &val_set, tc,
                                     [&](const ser::nn::EpochStats& s) {
                                       if (!a.quiet) {
                                         std::cout << "epoch " << s.epoch << " loss " << fmt(s.train_loss)
                                                   << " acc " << fmt(s.train_acc) << " val_loss " << fmt(s.val_loss)
                                                   << " val_acc " << fmt(s.val_acc) << "\n";
                                       }
                                     });
  run.text("history.csv", ser::nn::history_to_csv(result.history));
  ser::save_bundle(run.path("model.bundle"), model, fd.pipeline);
  run.add(run.path("model.bundle"));
  std::cout << "initial loss " << fmt(result.initial_loss) << "\n";
  if (!test.empty()) {
    const auto report = ser::evaluate_model(model, ser::to_cnn_dataset(test));
    for (const auto& p : report.write_csv(run.path("test"))) run.add(p);
    std::cout << "test " << report.to_text();
  }
  run.finish();
  return kExitOk;
}

ser::MetricsReport report_for(const ser::Classifier& model, const std::vector<ser::LabeledWindow>& windows) {
  if (windows.empty()) throw ser::DataError("evaluation split is empty");
  ser::Matrix scores(windows.size(), ser::kNumEmotions);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto p = model.probabilities(windows[i].window);
    std::copy(p.begin(), p.end(), scores.row(i).begin());
  }
  return ser::make_report(scores, ser::label_codes(windows));
}

struct EvalArgs {
  Common common;
  std::string model;
  std::string features;
  std::string split = "test";
};

int cmd_eval(const EvalArgs& a) {
  const auto clf = ser::load_classifier(a.model);
  const auto fd = read_feature_dir(a.features);
  ser::Split split = ser::Split::none;
  if (a.split != "all") {
    auto s = ser::split_from_name(a.split);
    if (!s || *s == ser::Split::none) throw ser::ConfigError("--split must be train, val, test or all");
    split = *s;
  }
  const auto windows = fd.select(split);
  if (!windows.empty() && windows.front().window.n_mfcc != clf->pipeline().n_mfcc) {
    throw ser::ConfigError("features have n_mfcc=" + std::to_string(windows.front().window.n_mfcc) +
                           " but the model expects " + std::to_string(clf->pipeline().n_mfcc));
  }
  // SVM scores are softmaxed decision values; the ranking is unchanged.
  const auto report = report_for(*clf, windows);
  RunDir run(a.common.out_dir, "eval", a.common.seed);
  for (const auto& p : report.write_csv(run.path(""))) run.add(p);
  run.finish();
  std::cout << report.to_text();
  print_reference(report, std::cout);
  return kExitOk;
}

struct SweepArgs {
  Common common;
  std::string manifest;
  std::string range = "10:120:10,13";
  std::size_t runs = 10;
  std::size_t workers = 1;
  std::vector<std::string> kernels{"rbf", "linear"};
  double C = 10.0;
  std::size_t frame_length = 2048;
};

int cmd_sweep(const SweepArgs& a) {
  const auto records = ser::read_manifest(a.manifest);
  if (records.empty()) throw ser::DataError("manifest " + a.manifest + " is empty");
  ser::SweepOptions so;
  so.kernels.clear();
  for (const auto& k : a.kernels) so.kernels.push_back(parse_kernel(k));
  so.points = ser::parse_sweep_range(a.range);
  so.runs = a.runs;
  so.base_seed = a.common.seed;
  so.C = a.C;
  so.workers = a.workers;
  const std::size_t target = target_from_records(records);
  const auto provider = [&](std::size_t n_mfcc) {
    ser::PipelineConfig cfg;
    cfg.n_mfcc = n_mfcc;
    cfg.frame_length = a.frame_length;
    cfg.target_length = target;
    return ser::extract_manifest(records, load_record, cfg);
  };
  const auto result = ser::run_svm_sweep(provider, so);
  RunDir run(a.common.out_dir, "sweep-svm", a.common.seed);
  run.text("sweep_raw.csv", result.raw_csv());
  run.text("sweep_mean.csv", result.mean_csv());
  run.finish();
  std::cout << result.mean_csv();
  return kExitOk;
}

struct StreamArgs {
  Common common;
  std::string model;
  std::string input;
  double window = 3.0;
  double hop = 0.5;
  std::string emit = "text";
  std::size_t chunk = 4096;
};

int cmd_stream(const StreamArgs& a) {
  const auto clf = ser::load_classifier(a.model);
  const auto clip = ser::read_wav(a.input);
  ser::StreamConfig cfg;
  cfg.window_seconds = a.window;
  cfg.hop_seconds = a.hop;
  if (a.emit != "text" && a.emit != "csv") throw ser::ConfigError("--emit must be text or csv");
  cfg.emit = a.emit == "csv" ? ser::EmitFormat::csv : ser::EmitFormat::text;
  RunDir run(a.common.out_dir, "stream", a.common.seed);
  std::string events_csv = ser::stream_csv_header() + "\n";
  if (cfg.emit == ser::EmitFormat::csv) std::cout << ser::stream_csv_header() << "\n";
  const auto summary = ser::run_stream(clip, a.chunk, *clf, cfg, [&](const ser::StreamEvent& e) {
    std::cout << ser::format_event(e, cfg.emit) << "\n";
    events_csv += ser::format_event(e, ser::EmitFormat::csv) + "\n";
  });
  run.text("events.csv", events_csv);
  run.text("summary.txt", summary.to_text());
  run.finish();
  std::cerr << summary.to_text();
  return kExitOk;
}

struct GradArgs {
  Common common;
  std::size_t filters1 = 8;
  std::size_t filters2 = 8;
  std::size_t dense = 16;
  std::size_t batch = 4;
  double h = 1e-5;
  double threshold = 1e-4;
};

int cmd_gradient_check(const GradArgs& a) {
  ser::nn::PaperCnnOptions po;
  po.filters_block1 = a.filters1;
  po.filters_block2 = a.filters2;
  po.dense_units = a.dense;
  po.seed = a.common.seed;
  auto model = ser::nn::build_paper_cnn(po);
  ser::Rng rng(a.common.seed + 1);
  ser::nn::Tensor x({a.batch, po.n_mfcc, po.n_frames, 1});
  for (double& v : x.data) v = rng.normal();
  std::vector<int> labels(a.batch);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(po.n_classes));
  const auto rep = ser::nn::gradient_check(model, x, labels, a.h, a.common.seed + 2);
  for (const auto& e : rep.tensors) {
    std::cout << e.name << " (" << e.count << "): rel " << e.rel_error << " max_abs " << e.max_abs_diff;
    if (e.skipped) std::cout << " skipped " << e.skipped;
    std::cout << "\n";
  }
  std::cout << "checked " << rep.checked << " elements, skipped " << rep.skipped << " at kinks\n";
  std::cout << "max relative error: " << rep.max_rel_error << "\n";
  if (!(rep.max_rel_error < a.threshold)) {
    std::cerr << "gradient check failed: " << rep.max_rel_error << " >= " << a.threshold << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

struct AuditArgs {
  Common common;
  std::size_t n_mfcc = 13;
  std::size_t frames = 26;
};

int cmd_audit(const AuditArgs& a) {
  ser::nn::PaperCnnOptions po;
  po.n_mfcc = a.n_mfcc;
  po.n_frames = a.frames;
  po.seed = a.common.seed;
  auto model = ser::nn::build_paper_cnn(po);
  std::cout << model.summary();
  return kExitOk;
}

struct ReproduceArgs {
  Common common;
  std::string ravdess;
  std::string tess;
  std::size_t epochs = 500;
  std::size_t runs = 10;
  std::size_t workers = 1;
  std::string range = "10:120:10,13";
};

int cmd_reproduce(const ReproduceArgs& a) {
  RunDir run(a.common.out_dir, "reproduce", a.common.seed);
  std::vector<std::pair<ser::Corpus, std::string>> corpora;
  if (!a.ravdess.empty()) corpora.emplace_back(ser::Corpus::ravdess, a.ravdess);
  if (!a.tess.empty()) corpora.emplace_back(ser::Corpus::tess, a.tess);
  if (corpora.empty()) throw ser::ConfigError("reproduce needs --ravdess and/or --tess");
  std::string table = "corpus,quantity,reference,measured,delta\n";
  bool counts_ok = true;
  for (const auto& [corpus, root] : corpora) {
    const std::string name(ser::corpus_name(corpus));
    auto scan = ser::scan_corpus(fs::absolute(root), corpus);
    const auto validation = ser::validate_manifest(scan.records, corpus);
    run.text(name + "/validation.csv", validation.to_csv());
    std::cout << validation.to_text();
    counts_ok = counts_ok && validation.pass;

    auto records = scan.records;
    ensure_split(records, a.common.seed, {});
    ser::write_manifest(run.path(name + "/manifest.csv"), records);
    run.add(run.path(name + "/manifest.csv"));
    ser::PipelineConfig cfg;
    cfg.target_length = target_from_records(records);
    const auto set = ser::extract_manifest(records, load_record, cfg);
    FeatureDir fd{cfg, set.records, set.windows};
    const auto train = fd.select(ser::Split::train);
    const auto val = fd.select(ser::Split::val);
    const auto test = fd.select(ser::Split::test);

    ser::nn::PaperCnnOptions po;
    po.seed = a.common.seed;
    auto cnn = ser::nn::build_paper_cnn(po);
    ser::nn::TrainConfig tc;
    tc.epochs = a.epochs;
    tc.seed = a.common.seed;
    const auto val_set = ser::to_cnn_dataset(val);
    const auto hist = ser::nn::train(cnn, ser::to_cnn_dataset(train), &val_set, tc, [](const auto& s) {
      std::cout << "epoch " << s.epoch << " val_acc " << s.val_acc << "\n";
    });
    run.text(name + "/history.csv", ser::nn::history_to_csv(hist.history));
    const auto cnn_report = ser::evaluate_model(cnn, ser::to_cnn_dataset(test));
    for (const auto& p : cnn_report.write_csv(run.path(name + "/cnn"))) run.add(p);
    table += name + ",cnn_top1," + fmt(ser::kReferenceCnnTop1Percent, 2) + "," + fmt(100 * cnn_report.accuracy, 2) +
             "," + fmt(100 * cnn_report.accuracy - ser::kReferenceCnnTop1Percent, 2) + "\n";
    for (const auto& ref : ser::kReferenceClassAccuracy) {
      const double m = 100 * cnn_report.per_class[static_cast<std::size_t>(ser::code(ref.label))].recall;
      table += name + ",cnn_" + std::string(ser::kEmotionNames[static_cast<std::size_t>(ser::code(ref.label))]) +
               "," + fmt(ref.accuracy_percent, 2) + "," + fmt(m, 2) + "," + fmt(m - ref.accuracy_percent, 2) + "\n";
    }

    ser::svm::KernelSpec spec;
    const auto svm_model = ser::svm::train_multiclass(ser::to_matrix(train), ser::label_codes(train), spec);
    const auto svm_report = ser::evaluate_model(svm_model, ser::to_matrix(test), ser::label_codes(test));
    for (const auto& p : svm_report.write_csv(run.path(name + "/svm"))) run.add(p);
    table += name + ",svm_rbf_13," + fmt(ser::kReferenceSvmPercent, 2) + "," + fmt(100 * svm_report.accuracy, 2) +
             "," + fmt(100 * svm_report.accuracy - ser::kReferenceSvmPercent, 2) + "\n";

    ser::SweepOptions so;
    so.points = ser::parse_sweep_range(a.range);
    so.runs = a.runs;
    so.base_seed = a.common.seed;
    so.workers = a.workers;
    const auto sweep = ser::run_svm_sweep(
        [&](std::size_t n) {
          ser::PipelineConfig c = cfg;
          c.n_mfcc = n;
          return ser::extract_manifest(records, load_record, c);
        },
        so);
    run.text(name + "/sweep_raw.csv", sweep.raw_csv());
    run.text(name + "/sweep_mean.csv", sweep.mean_csv());
  }
  run.text("comparison.csv", table);
  run.finish();
  std::cout << table;
  return counts_ok ? kExitOk : kExitData;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ser::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ser::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech emotion recognition toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; [subcommand] sections hold its flags");
  int config_version = kConfigVersion;
  app.add_option("--config_version", config_version, "Config schema version")->group("");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth-corpus", "Write a class-separable synthetic corpus");
  add_common(s_synth, synth.common);
  s_synth->add_option("--per-class", synth.per_class, "Clips per class (max 96)")->capture_default_str();
  s_synth->add_option("--seconds", synth.seconds, "Nominal clip length")->capture_default_str();
  s_synth->add_option("--jitter", synth.jitter, "Relative length jitter")
      ->check(CLI::Range(0.0, 0.9))
      ->capture_default_str();
  s_synth->add_option("--sample-rate", synth.sample_rate, "Sample rate in Hz")->capture_default_str();

  ValidateArgs val;
  auto* s_val = app.add_subcommand("validate-dataset", "Scan a corpus and check its class counts");
  add_common(s_val, val.common);
  s_val->add_option("--root", val.root, "Corpus root directory")->required();
  s_val->add_option("--corpus", val.corpus, "ravdess, tess or synthetic")->capture_default_str();

  SplitArgs split;
  auto* s_split = app.add_subcommand("split", "Stratified train/val/test split of a manifest");
  add_common(s_split, split.common);
  s_split->add_option("--manifest", split.manifest, "Input manifest CSV")->required();
  s_split->add_option("--ratios", split.ratios, "train val test fractions")->expected(3)->capture_default_str();
  s_split->add_flag("--actor-disjoint", split.actor_disjoint, "Keep each actor in a single split");

  ExtractArgs ext;
  auto* s_ext = app.add_subcommand("extract", "Manifest to feature cache");
  add_common(s_ext, ext.common);
  s_ext->add_option("--manifest", ext.manifest, "Input manifest CSV")->required();
  s_ext->add_option("--n-mfcc", ext.n_mfcc, "MFCC coefficients")->capture_default_str();
  s_ext->add_option("--frame-length", ext.frame_length, "STFT frame length in samples")->capture_default_str();
  s_ext->add_option("--n-mels", ext.n_mels, "Mel bands (raised to n-mfcc if smaller)")->capture_default_str();
  s_ext->add_option("--target-length", ext.target_length, "Samples per clip; 0 uses the longest training clip")
      ->capture_default_str();
  s_ext->add_flag("--reverse", ext.reverse, "Add time-reversed copies");
  s_ext->add_flag("--invert", ext.invert, "Add polarity-inverted copies");

  ExtractArgs aug;
  aug.reverse = true;
  aug.invert = true;
  auto* s_aug = app.add_subcommand("augment", "Extract with reversed and inverted copies");
  add_common(s_aug, aug.common);
  s_aug->add_option("--manifest", aug.manifest, "Input manifest CSV")->required();
  s_aug->add_option("--n-mfcc", aug.n_mfcc, "MFCC coefficients")->capture_default_str();
  s_aug->add_option("--frame-length", aug.frame_length, "STFT frame length in samples")->capture_default_str();
  s_aug->add_option("--target-length", aug.target_length, "Samples per clip; 0 uses the longest training clip");
  s_aug->add_flag("--reverse,!--no-reverse", aug.reverse, "Add time-reversed copies");
  s_aug->add_flag("--invert,!--no-invert", aug.invert, "Add polarity-inverted copies");

  TrainSvmArgs tsvm;
  auto* s_tsvm = app.add_subcommand("train-svm", "Train a multiclass SVM on a feature directory");
  add_common(s_tsvm, tsvm.common);
  s_tsvm->add_option("--features", tsvm.features, "Directory written by extract")->required();
  s_tsvm->add_option("--kernel", tsvm.kernel, "rbf or linear")->capture_default_str();
  s_tsvm->add_option("--C", tsvm.C, "Soft-margin penalty")->capture_default_str();
  s_tsvm->add_option("--gamma", tsvm.gamma, "'scale' or a positive number")->capture_default_str();
  s_tsvm->add_option("--strategy", tsvm.strategy, "ovr or ovo")->capture_default_str();
  s_tsvm->add_option("--ratios", tsvm.ratios, "Split fractions when the manifest has none")->expected(3);

  TrainCnnArgs tcnn;
  auto* s_tcnn = app.add_subcommand("train-cnn", "Train the CNN on a feature directory");
  add_common(s_tcnn, tcnn.common);
  s_tcnn->add_option("--features", tcnn.features, "Directory written by extract")->required();
  s_tcnn->add_option("--epochs", tcnn.epochs, "Epochs")->capture_default_str();
  s_tcnn->add_option("--batch-size", tcnn.batch_size, "Mini-batch size")->capture_default_str();
  s_tcnn->add_option("--lr", tcnn.lr, "RMSProp learning rate")->capture_default_str();
  s_tcnn->add_option("--decay", tcnn.decay, "Learning-rate decay")->capture_default_str();
  s_tcnn->add_option("--ratios", tcnn.ratios, "Split fractions when the manifest has none")->expected(3);
  s_tcnn->add_flag("--quiet", tcnn.quiet, "No per-epoch output");

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Metrics for a trained model on a feature directory");
  add_common(s_eval, ev.common);
  s_eval->add_option("--model", ev.model, "Model bundle")->required();
  s_eval->add_option("--features", ev.features, "Directory written by extract")->required();
  s_eval->add_option("--split", ev.split, "train, val, test or all")->capture_default_str();

  SweepArgs sw;
  auto* s_sweep = app.add_subcommand("sweep-svm", "Accuracy against MFCC count for both kernels");
  add_common(s_sweep, sw.common);
  s_sweep->add_option("--manifest", sw.manifest, "Input manifest CSV")->required();
  s_sweep->add_option("--range", sw.range, "lo:hi:step with optional ,extra points")->capture_default_str();
  s_sweep->add_option("--runs", sw.runs, "Runs per point")->capture_default_str();
  s_sweep->add_option("--workers", sw.workers, "Concurrent sweep points")->capture_default_str();
  s_sweep->add_option("--kernels", sw.kernels, "Kernels to sweep")->capture_default_str();
  s_sweep->add_option("--C", sw.C, "Soft-margin penalty")->capture_default_str();
  s_sweep->add_option("--frame-length", sw.frame_length, "STFT frame length")->capture_default_str();

  StreamArgs st;
  auto* s_stream = app.add_subcommand("stream", "Sliding-window inference over a WAV file");
  add_common(s_stream, st.common);
  s_stream->add_option("--model", st.model, "Model bundle")->required();
  s_stream->add_option("--input", st.input, "WAV file")->required();
  s_stream->add_option("--window", st.window, "Window in seconds")->capture_default_str();
  s_stream->add_option("--hop", st.hop, "Hop in seconds")->capture_default_str();
  s_stream->add_option("--emit", st.emit, "text or csv")->capture_default_str();
  s_stream->add_option("--chunk", st.chunk, "Samples per fed chunk")->capture_default_str();

  GradArgs gc;
  auto* s_grad = app.add_subcommand("gradient-check", "Finite-difference check of the reduced-width CNN");
  add_common(s_grad, gc.common, false);
  s_grad->add_option("--filters1", gc.filters1, "Filters in the first block")->capture_default_str();
  s_grad->add_option("--filters2", gc.filters2, "Filters in the second block")->capture_default_str();
  s_grad->add_option("--dense", gc.dense, "Hidden dense units")->capture_default_str();
  s_grad->add_option("--batch", gc.batch, "Batch size")->capture_default_str();
  s_grad->add_option("--step", gc.h, "Finite-difference step")->capture_default_str();
  s_grad->add_option("--threshold", gc.threshold, "Maximum relative error")->capture_default_str();

  AuditArgs au;
  auto* s_audit = app.add_subcommand("audit-params", "Layer table and parameter count of the CNN");
  add_common(s_audit, au.common, false);
  s_audit->add_option("--n-mfcc", au.n_mfcc, "Input height")->capture_default_str();
  s_audit->add_option("--frames", au.frames, "Input width")->capture_default_str();

  ReproduceArgs rp;
  auto* s_rep = app.add_subcommand("reproduce", "Full protocol on the real corpora with a comparison table");
  add_common(s_rep, rp.common);
  s_rep->add_option("--ravdess", rp.ravdess, "RAVDESS root");
  s_rep->add_option("--tess", rp.tess, "TESS root");
  s_rep->add_option("--epochs", rp.epochs, "CNN epochs")->capture_default_str();
  s_rep->add_option("--runs", rp.runs, "Sweep runs per point")->capture_default_str();
  s_rep->add_option("--workers", rp.workers, "Concurrent sweep points")->capture_default_str();
  s_rep->add_option("--range", rp.range, "Sweep points")->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }
  if (config_version != kConfigVersion) {
    std::cerr << "error: unsupported config_version " << config_version << " (expected " << kConfigVersion << ")\n";
    return kExitData;
  }

  return guarded([&]() -> int {
    if (*s_synth) return cmd_synth(synth);
    if (*s_val) return cmd_validate(val);
    if (*s_split) return cmd_split(split);
    if (*s_ext) return run_extract(ext, "extract");
    if (*s_aug) return run_extract(aug, "augment");
    if (*s_tsvm) return cmd_train_svm(tsvm);
    if (*s_tcnn) return cmd_train_cnn(tcnn);
    if (*s_eval) return cmd_eval(ev);
    if (*s_sweep) return cmd_sweep(sw);
    if (*s_stream) return cmd_stream(st);
    if (*s_grad) return cmd_gradient_check(gc);
    if (*s_audit) return cmd_audit(au);
    if (*s_rep) return cmd_reproduce(rp);
    return kExitUsage;
  });
}
