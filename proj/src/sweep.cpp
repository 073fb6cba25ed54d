#include "ser/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "ser/csv.hpp"
#include "ser/error.hpp"
#include "ser/metrics.hpp"

namespace ser {

namespace {

struct PointResult {
  std::vector<SweepRow> rows;
};

PointResult run_point(const FeatureProvider& features, const SweepOptions& o, std::size_t n_mfcc) {
  ExtractedSet set;
  try {
    set = features(n_mfcc);
  } catch (const ConfigError& e) {
    throw ConfigError("n_mfcc=" + std::to_string(n_mfcc) + ": " + e.what());
  }
  if (set.records.size() != set.windows.size()) throw DataError("feature provider returned mismatched records");

  PointResult out;
  for (std::size_t run = 0; run < o.runs; ++run) {
    SplitOptions so;
    so.ratios = o.ratios;
    so.seed = o.seeds.empty() ? o.base_seed + run : o.seeds[run];
    const auto assignment = stratified_split(set.records, so);

    Matrix X_train, X_test;
    std::vector<int> y_train, y_test;
    for (std::size_t i = 0; i < set.records.size(); ++i) {
      const Split s = assignment.at(set.records[i].id);
      const auto v = flatten(set.windows[i].window);
      if (s == Split::train) {
        X_train.append_row(v);
        y_train.push_back(code(set.windows[i].label));
      } else if (s == Split::test) {
        X_test.append_row(v);
        y_test.push_back(code(set.windows[i].label));
      }
    }
    if (X_train.rows == 0 || X_test.rows == 0) throw SplitError("sweep split left train or test empty");

    for (auto kernel : o.kernels) {
      svm::KernelSpec spec;
      spec.kind = kernel;
      spec.C = o.C;
      const auto model = svm::train_multiclass(X_train, y_train, spec, svm::Multiclass::ovr, o.solver);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < X_test.rows; ++i) hits += svm::predict(model, X_test.row(i)).label == y_test[i];
      out.rows.push_back({kernel, n_mfcc, run, so.seed, static_cast<double>(hits) / static_cast<double>(X_test.rows)});
    }
  }
  return out;
}

}  // namespace

std::vector<std::size_t> default_sweep_points() {
  std::vector<std::size_t> p;
  for (std::size_t n = 10; n <= 120; n += 10) p.push_back(n);
  p.push_back(13);
  std::sort(p.begin(), p.end());
  return p;
}

std::vector<std::size_t> parse_sweep_range(const std::string& text) {
  const auto parts = csv::parse_line(text);
  if (parts.empty() || parts[0].empty()) throw ConfigError("empty sweep range");
  std::vector<std::size_t> out;
  auto to_size = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || s.empty() || v == 0) throw ConfigError("bad sweep range value '" + s + "' in " + text);
    return v;
  };
  const auto& head = parts[0];
  const auto c1 = head.find(':');
  if (c1 == std::string::npos) {
    out.push_back(to_size(head));
  } else {
    const auto c2 = head.find(':', c1 + 1);
    const std::size_t lo = to_size(head.substr(0, c1));
    const std::size_t hi = to_size(head.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1));
    const std::size_t step = c2 == std::string::npos ? 1 : to_size(head.substr(c2 + 1));
    if (hi < lo) throw ConfigError("sweep range upper bound below lower bound: " + text);
    for (std::size_t n = lo; n <= hi; n += step) out.push_back(n);
  }
  for (std::size_t i = 1; i < parts.size(); ++i) out.push_back(to_size(parts[i]));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SweepResult run_svm_sweep(const FeatureProvider& features, const SweepOptions& o) {
  if (o.runs == 0 || o.points.empty() || o.kernels.empty()) throw ConfigError("sweep needs runs, points and kernels");
  if (!o.seeds.empty() && o.seeds.size() < o.runs) {
    throw ConfigError("sweep has " + std::to_string(o.runs) + " runs but only " + std::to_string(o.seeds.size()) +
                      " seeds");
  }
  std::map<std::size_t, PointResult> by_point;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= o.points.size()) return;
      try {
        auto r = run_point(features, o, o.points[i]);
        std::lock_guard lock(mu);
        by_point[o.points[i]] = std::move(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = o.points.size();
        return;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(o.workers, o.points.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  SweepResult result;
  for (auto& [_, r] : by_point) result.raw.insert(result.raw.end(), r.rows.begin(), r.rows.end());
  std::sort(result.raw.begin(), result.raw.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.kernel, a.n_mfcc, a.run) < std::tie(b.kernel, b.n_mfcc, b.run);
  });
  for (std::size_t i = 0; i < result.raw.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < result.raw.size() && result.raw[j].kernel == result.raw[i].kernel &&
           result.raw[j].n_mfcc == result.raw[i].n_mfcc) {
      sum += result.raw[j].accuracy;
      ++j;
    }
    const double n = static_cast<double>(j - i);
    const double mean = sum / n;
    double var = 0.0;
    for (std::size_t r = i; r < j; ++r) var += (result.raw[r].accuracy - mean) * (result.raw[r].accuracy - mean);
    result.mean.push_back({result.raw[i].kernel, result.raw[i].n_mfcc, j - i, mean, std::sqrt(var / n)});
    i = j;
  }
  return result;
}

std::string SweepResult::raw_csv() const {
  std::string out = "kernel,n_mfcc,run,seed,accuracy\n";
  for (const auto& r : raw) {
    out += svm::kernel_name(r.kernel) + "," + std::to_string(r.n_mfcc) + "," + std::to_string(r.run) + "," +
           std::to_string(r.seed) + "," + csv::format_double(r.accuracy) + "\n";
  }
  return out;
}

std::string SweepResult::mean_csv() const {
  std::string out = "kernel,n_mfcc,runs,mean_accuracy,std_accuracy\n";
  for (const auto& m : mean) {
    out += svm::kernel_name(m.kernel) + "," + std::to_string(m.n_mfcc) + "," + std::to_string(m.runs) + "," +
           csv::format_double(m.mean_accuracy) + "," + csv::format_double(m.std_accuracy) + "\n";
  }
  return out;
}

}  // namespace ser
