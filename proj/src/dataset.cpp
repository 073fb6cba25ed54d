#include "ser/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ser/csv.hpp"
#include "ser/error.hpp"
#include "ser/rng.hpp"

namespace ser {

namespace {

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    parts.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool ends_with_wav(std::string_view name) {
  return name.size() > 4 && lower(name.substr(name.size() - 4)) == ".wav";
}

int two_digit_field(const std::string& s, std::string_view field, int lo, int hi) {
  if (s.size() != 2 || !std::isdigit(static_cast<unsigned char>(s[0])) ||
      !std::isdigit(static_cast<unsigned char>(s[1]))) {
    throw ParseError("RAVDESS field '" + std::string(field) + "' is not two digits: '" + s + "'");
  }
  int v = (s[0] - '0') * 10 + (s[1] - '0');
  if (v < lo || v > hi) {
    throw ParseError("RAVDESS field '" + std::string(field) + "' out of range: " + s);
  }
  return v;
}

}  // namespace

std::string_view corpus_name(Corpus c) {
  switch (c) {
    case Corpus::ravdess: return "ravdess";
    case Corpus::tess: return "tess";
    case Corpus::synthetic: return "synthetic";
  }
  return "unknown";
}

std::optional<Corpus> corpus_from_name(std::string_view s) {
  if (s == "ravdess") return Corpus::ravdess;
  if (s == "tess") return Corpus::tess;
  if (s == "synthetic") return Corpus::synthetic;
  return std::nullopt;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::none: return "";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "";
}

std::optional<Split> split_from_name(std::string_view s) {
  if (s.empty() || s == "none") return Split::none;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

SampleRecord parse_ravdess_filename(std::string_view name) {
  if (!ends_with_wav(name)) throw ParseError("RAVDESS file name must end in .wav: " + std::string(name));
  const std::string_view stem = name.substr(0, name.size() - 4);
  auto fields = split_on(stem, '-');
  if (fields.size() != 7) {
    throw ParseError("RAVDESS name needs 7 dash-separated fields, got " +
                     std::to_string(fields.size()) + ": " + std::string(name));
  }
  const int modality = two_digit_field(fields[0], "modality", 1, 3);
  const int channel = two_digit_field(fields[1], "vocal_channel", 1, 2);
  const int emotion = two_digit_field(fields[2], "emotion", 1, 8);
  const int intensity = two_digit_field(fields[3], "intensity", 1, 2);
  two_digit_field(fields[4], "statement", 1, 2);
  two_digit_field(fields[5], "repetition", 1, 2);
  two_digit_field(fields[6], "actor", 1, 24);
  if (modality != 3) throw ParseError("RAVDESS field 'modality' is not audio-only (03): " + fields[0]);
  if (channel != 1) throw ParseError("RAVDESS field 'vocal_channel' is not speech (01): " + fields[1]);
  if (emotion == 1 && intensity == 2) {
    throw ParseError("RAVDESS field 'intensity': neutral has no strong intensity");
  }

  SampleRecord r;
  r.id = std::string(stem);
  r.path = std::string(name);
  r.label = static_cast<EmotionLabel>(emotion - 1);
  r.corpus = Corpus::ravdess;
  r.actor = fields[6];
  return r;
}

SampleRecord parse_tess_filename(std::string_view name) {
  if (!ends_with_wav(name)) throw ParseError("TESS file name must end in .wav: " + std::string(name));
  const std::string_view stem = name.substr(0, name.size() - 4);
  auto fields = split_on(stem, '_');
  if (fields.size() < 3) {
    throw ParseError("TESS name needs <speaker>_<word>_<emotion>: " + std::string(name));
  }
  const std::string speaker = lower(fields.front());
  if (speaker.rfind("oa", 0) != 0 && speaker.rfind("ya", 0) != 0) {
    throw ParseError("TESS field 'speaker' is not OAF/YAF: " + fields.front());
  }
  const std::string emo = lower(fields.back());
  std::optional<EmotionLabel> label;
  if (emo == "angry") label = EmotionLabel::angry;
  else if (emo == "disgust") label = EmotionLabel::disgust;
  else if (emo == "fear") label = EmotionLabel::fearful;
  else if (emo == "happy") label = EmotionLabel::happy;
  else if (emo == "neutral") label = EmotionLabel::neutral;
  else if (emo == "ps") label = EmotionLabel::surprised;
  else if (emo == "sad") label = EmotionLabel::sad;
  if (!label) throw ParseError("TESS field 'emotion' not recognised: " + fields.back());

  SampleRecord r;
  r.id = std::string(stem);
  r.path = std::string(name);
  r.label = *label;
  r.corpus = Corpus::tess;
  r.actor = speaker.substr(0, 2) == "oa" ? "OAF" : "YAF";
  return r;
}

CorpusScan scan_corpus(const std::filesystem::path& root, Corpus corpus) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("corpus root is not a directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && ends_with_wav(entry.path().filename().string())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  CorpusScan scan;
  for (const auto& f : files) {
    const std::string fname = f.filename().string();
    try {
      SampleRecord r = corpus == Corpus::tess ? parse_tess_filename(fname) : parse_ravdess_filename(fname);
      r.corpus = corpus;
      r.path = f;
      scan.records.push_back(std::move(r));
    } catch (const ParseError& e) {
      scan.rejected.push_back(f.string() + ": " + e.what());
    }
  }
  return scan;
}

std::array<std::size_t, kNumEmotions> expected_counts(Corpus corpus) {
  switch (corpus) {
    case Corpus::ravdess: return {96, 192, 192, 192, 192, 192, 192, 192};
    case Corpus::tess: return {400, 0, 400, 400, 400, 400, 400, 400};
    case Corpus::synthetic: return {};
  }
  return {};
}

ValidationReport validate_manifest(const std::vector<SampleRecord>& records, Corpus corpus) {
  ValidationReport rep;
  rep.corpus = corpus;
  rep.expected = expected_counts(corpus);
  for (auto e : rep.expected) rep.expected_total += e;

  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.augmented_from) continue;
    if (r.corpus != corpus) {
      rep.problems.push_back("record " + r.id + " belongs to corpus " + std::string(corpus_name(r.corpus)));
      continue;
    }
    if (!seen.insert(r.id).second) rep.problems.push_back("duplicate id " + r.id);
    ++rep.counts[static_cast<std::size_t>(code(r.label))];
    ++rep.total;
  }
  // Synthetic corpora have no fixed class counts.
  const bool check_counts = corpus != Corpus::synthetic;
  for (std::size_t c = 0; c < kNumEmotions && check_counts; ++c) {
    if (rep.counts[c] != rep.expected[c]) {
      std::ostringstream os;
      os << kEmotionNames[c] << ": have " << rep.counts[c] << ", expected " << rep.expected[c];
      rep.problems.push_back(os.str());
    }
  }
  if (check_counts && rep.total != rep.expected_total) {
    rep.problems.push_back("total: have " + std::to_string(rep.total) + ", expected " +
                           std::to_string(rep.expected_total));
  }
  rep.surprised_remapped = corpus == Corpus::tess;
  rep.pass = rep.problems.empty();
  return rep;
}

std::string ValidationReport::to_text() const {
  std::ostringstream os;
  os << "corpus: " << corpus_name(corpus) << "\n";
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    os << "  " << kEmotionNames[c] << ": " << counts[c] << " (expected " << expected[c] << ")\n";
  }
  os << "total: " << total << " (expected " << expected_total << ")\n";
  if (surprised_remapped) os << "note: TESS 'pleasant surprise' (ps) counted as surprised\n";
  for (const auto& p : problems) os << "problem: " << p << "\n";
  os << "result: " << (pass ? "PASS" : "FAIL") << "\n";
  return os.str();
}

std::string ValidationReport::to_csv() const {
  std::string out = "class,count,expected,delta\n";
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    const auto delta = static_cast<long long>(counts[c]) - static_cast<long long>(expected[c]);
    out += std::string(kEmotionNames[c]) + "," + std::to_string(counts[c]) + "," +
           std::to_string(expected[c]) + "," + std::to_string(delta) + "\n";
  }
  out += "total," + std::to_string(total) + "," + std::to_string(expected_total) + "," +
         std::to_string(static_cast<long long>(total) - static_cast<long long>(expected_total)) + "\n";
  return out;
}

Split SplitAssignment::at(const std::string& id) const {
  auto it = by_id.find(id);
  return it == by_id.end() ? Split::none : it->second;
}

std::array<std::size_t, 3> SplitAssignment::counts() const {
  std::array<std::size_t, 3> c{};
  for (const auto& [id, s] : by_id) {
    if (s == Split::train) ++c[0];
    else if (s == Split::val) ++c[1];
    else if (s == Split::test) ++c[2];
  }
  return c;
}

std::array<std::size_t, 3> proportional_cut(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  const double sum = r[0] + r[1] + r[2];
  if (!(sum > 0.0) || r[0] < 0.0 || r[1] < 0.0 || r[2] < 0.0) {
    throw ConfigError("split ratios must be non-negative with a positive sum");
  }
  std::array<std::size_t, 3> count{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * r[i] / sum;
    count[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(count[i]);
    assigned += count[i];
  }
  // Leftovers by largest fractional part; tie preference test, val, train.
  std::array<int, 3> order{2, 1, 0};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return frac[a] > frac[b] + 1e-9; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++count[order[k % 3]];
  return count;
}

SplitAssignment stratified_split(const std::vector<SampleRecord>& records, const SplitOptions& options) {
  std::vector<const SampleRecord*> originals;
  std::vector<const SampleRecord*> augmented;
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw SplitError("duplicate sample id: " + r.id);
    (r.augmented_from ? augmented : originals).push_back(&r);
  }
  std::sort(originals.begin(), originals.end(),
            [](const SampleRecord* a, const SampleRecord* b) { return a->id < b->id; });

  SplitAssignment out;
  out.seed = options.seed;
  Rng rng(options.seed);
  auto assign_cut = [&](const std::vector<std::string>& shuffled_keys, auto&& emit) {
    const auto cut = proportional_cut(shuffled_keys.size(), options.ratios);
    for (std::size_t i = 0; i < shuffled_keys.size(); ++i) {
      const Split s = i < cut[0] ? Split::train : i < cut[0] + cut[1] ? Split::val : Split::test;
      emit(shuffled_keys[i], s);
    }
  };

  if (!options.actor_disjoint) {
    std::array<std::vector<std::string>, kNumEmotions> by_class;
    for (const auto* r : originals) by_class[static_cast<std::size_t>(code(r->label))].push_back(r->id);
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
      auto& group = by_class[c];
      if (group.empty()) continue;
      if (group.size() < options.min_per_class) {
        throw SplitError("class " + std::string(kEmotionNames[c]) + " has " +
                         std::to_string(group.size()) + " samples, need at least " +
                         std::to_string(options.min_per_class));
      }
      rng.shuffle(std::span<std::string>(group));
      assign_cut(group, [&](const std::string& id, Split s) { out.by_id[id] = s; });
    }
  } else {
    std::map<std::string, std::vector<std::string>> by_actor;
    for (const auto* r : originals) by_actor[r->actor].push_back(r->id);
    if (by_actor.size() < 3) throw SplitError("actor-disjoint split needs at least 3 actors");
    std::vector<std::string> actors;
    for (const auto& [a, _] : by_actor) actors.push_back(a);
    rng.shuffle(std::span<std::string>(actors));
    assign_cut(actors, [&](const std::string& actor, Split s) {
      for (const auto& id : by_actor[actor]) out.by_id[id] = s;
    });
  }

  for (const auto* r : augmented) {
    auto it = out.by_id.find(*r->augmented_from);
    if (it == out.by_id.end()) {
      throw SplitError("augmented sample " + r->id + " has unknown source " + *r->augmented_from);
    }
    out.by_id[r->id] = it->second;
  }
  return out;
}

void apply_split(std::vector<SampleRecord>& records, const SplitAssignment& assignment) {
  for (auto& r : records) r.split = assignment.at(r.id);
}

std::string manifest_to_csv(const std::vector<SampleRecord>& records) {
  std::string out = "id,path,corpus,label,actor,split,augmented_from\n";
  for (const auto& r : records) {
    out += csv::format_row({r.id, r.path.string(), std::string(corpus_name(r.corpus)),
                            std::string(name(r.label)), r.actor, std::string(split_name(r.split)),
                            r.augmented_from.value_or("")});
    out.push_back('\n');
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << manifest_to_csv(records);
}

std::vector<SampleRecord> read_manifest(const std::filesystem::path& path) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw FormatError("manifest is empty: " + path.string());
  const auto& header = rows.front();
  if (header.size() < 6 || header[0] != "id" || header[1] != "path" || header[2] != "corpus" ||
      header[3] != "label" || header[4] != "actor" || header[5] != "split") {
    throw FormatError("manifest header must start with id,path,corpus,label,actor,split");
  }
  std::vector<SampleRecord> records;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    if (row.size() < 6) throw FormatError(where + ": expected at least 6 columns");
    SampleRecord r;
    r.id = row[0];
    r.path = row[1];
    auto corpus = corpus_from_name(row[2]);
    if (!corpus) throw ParseError(where + ": unknown corpus '" + row[2] + "'");
    r.corpus = *corpus;
    auto label = label_from_name(row[3]);
    if (!label) throw ParseError(where + ": unknown label '" + row[3] + "'");
    r.label = *label;
    r.actor = row[4];
    auto split = split_from_name(row[5]);
    if (!split) throw ParseError(where + ": unknown split '" + row[5] + "'");
    r.split = *split;
    if (row.size() > 6 && !row[6].empty()) r.augmented_from = row[6];
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace ser
