// ravg: accumulate running averages from CSV streams and extract sparse
// linear models from them, plus the simulation and bound tools.
//
// Exit codes: 0 success, 1 numeric failure, 2 input error.

#include <fcntl.h>
#include <unistd.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ravg/eval.hpp"
#include "ravg/experiments.hpp"
#include "ravg/extract.hpp"
#include "ravg/moments.hpp"
#include "ravg/presets.hpp"
#include "ravg/simgen.hpp"
#include "ravg/standardize.hpp"

namespace fs = std::filesystem;
using namespace ravg;

namespace {

// ---------------------------------------------------------------------------
// CSV input

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

/// Streams CSV rows (features..., y) into `sink` in blocks. The first row is
/// a header when any of its fields is non-numeric. expected_p = 0 accepts any width.
template <class Sink>
std::uint64_t read_csv(std::istream& in, std::size_t expected_p, Sink&& sink) {
  constexpr Index kBlock = 2048;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> width;
  Matrix x;
  Vector y;
  Index filled = 0;
  std::uint64_t rows = 0;
  auto flush = [&] {
    if (filled == 0) return;
    sink(x.topRows(filled), Vector(y.head(filled)));
    rows += static_cast<std::uint64_t>(filled);
    filled = 0;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    std::vector<double> values;
    values.reserve(fields.size());
    bool numeric = true;
    for (auto f : fields) {
      const auto v = parse_number(f);
      if (!v) {
        numeric = false;
        break;
      }
      values.push_back(*v);
    }
    if (!width) {
      width = fields.size();
      if (*width < 2) throw Error(Errc::parse_error, "line " + std::to_string(line_no) + ": need at least one feature and y");
      if (expected_p != 0 && *width - 1 != expected_p) {
        throw Error(Errc::invalid_dimension, "line " + std::to_string(line_no) + ": " + std::to_string(*width - 1) +
                                                 " features, snapshot has " + std::to_string(expected_p));
      }
      x.resize(kBlock, static_cast<Index>(*width - 1));
      y.resize(kBlock);
      if (!numeric) continue;  // header
    }
    if (fields.size() != *width) {
      throw Error(Errc::parse_error, "line " + std::to_string(line_no) + ": expected " + std::to_string(*width) +
                                         " fields, found " + std::to_string(fields.size()));
    }
    if (!numeric) throw Error(Errc::parse_error, "line " + std::to_string(line_no) + ": non-numeric field");
    for (std::size_t j = 0; j + 1 < values.size(); ++j) x(filled, static_cast<Index>(j)) = values[j];
    y[filled] = values.back();
    if (!x.row(filled).allFinite() || !std::isfinite(y[filled])) {
      throw Error(Errc::invalid_observation, "line " + std::to_string(line_no) + ": non-finite value");
    }
    if (++filled == kBlock) flush();
  }
  flush();
  return rows;
}

// ---------------------------------------------------------------------------
// Files

/// Exclusive advisory lock held as a sibling "<path>.lock" file.
class SnapshotLock {
 public:
  explicit SnapshotLock(const fs::path& target) : path_(target.string() + ".lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error(Errc::io_error, "snapshot is locked by another writer: " + path_.string());
    ::close(fd);
  }
  ~SnapshotLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  SnapshotLock(const SnapshotLock&) = delete;
  SnapshotLock& operator=(const SnapshotLock&) = delete;

 private:
  fs::path path_;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw Error(Errc::io_error, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Commands

struct AccumulateArgs {
  std::string input = "-";
  std::string snapshot;
  std::optional<double> adapt;
  std::vector<std::string> merge;
};

int cmd_accumulate(const AccumulateArgs& a) {
  SnapshotLock lock(a.snapshot);
  if (!a.merge.empty()) {
    std::optional<MomentSet> total;
    for (const auto& path : a.merge) {
      MomentSet m = read_snapshot_file(path);
      total = total ? merge(*total, m) : m;
    }
    write_snapshot_file(a.snapshot, *total);
    std::cout << "merged " << a.merge.size() << " snapshots: p=" << total->p() << " n=" << total->n() << '\n';
    return 0;
  }
  const WeightingMode mode = a.adapt ? WeightingMode::exponential(*a.adapt) : WeightingMode::uniform();
  std::optional<MomentSet> m;
  if (fs::exists(a.snapshot)) {
    m = read_snapshot_file(a.snapshot);
    if (!(m->mode() == mode)) {
      throw Error(Errc::invalid_argument, "weighting mode differs from the existing snapshot");
    }
  }
  std::ifstream file;
  std::istream* in = &std::cin;
  if (a.input != "-") {
    file.open(a.input);
    if (!file) throw Error(Errc::io_error, "cannot read " + a.input);
    in = &file;
  }
  const auto rows = read_csv(*in, m ? m->p() : 0, [&](const auto& x, const Vector& y) {
    if (!m) m.emplace(static_cast<std::size_t>(x.cols()), mode);
    m->update_batch(x, y);
  });
  if (!m) throw Error(Errc::parse_error, "input contains no observations");
  write_snapshot_file(a.snapshot, *m);
  std::cout << "accumulated " << rows << " rows: p=" << m->p() << " n=" << m->n() << '\n';
  return 0;
}

struct ExtractArgs {
  std::string snapshot;
  std::string method = "olsth";
  std::optional<std::size_t> k;
  std::optional<double> lambda;
  double l2_mix = 0.1;
  double mcp_b = 3.0;
  std::size_t iterations = 0;
  double eta = 0.0;
  double mu = 10.0;
  std::optional<double> ridge;
  double min_sigma = kDefaultMinSigma;
  std::size_t grid = 200;
  std::string model_out;
  std::string path_range;
  std::string path_out = "path.csv";
};

Penalty penalty_of(const std::string& method) {
  if (method == "lasso") return Penalty::lasso;
  if (method == "elnet") return Penalty::elasticnet;
  return Penalty::mcp;
}

SparseModel extract_one(const StandardizedMoments& sm, const ExtractArgs& a, std::size_t k,
                        double* chosen_lambda) {
  if (a.method == "olsth") return ols_th(sm, k, a.ridge);
  if (a.method == "ofsa") {
    FsaSchedule sched{k};
    if (a.iterations) sched.iterations = a.iterations;
    sched.mu = a.mu;
    sched.eta = a.eta;
    return ofsa(sm, sched);
  }
  TuneOptions opt;
  opt.grid_size = a.grid;
  opt.mcp_b = a.mcp_b;
  opt.l2_mix = a.method == "elnet" ? a.l2_mix : 0.0;
  if (a.iterations) opt.iterations = a.iterations;
  opt.eta = a.eta;
  opt.threads = thread_budget();
  const TunedModel tuned = tune_lambda_for_sparsity(sm, penalty_of(a.method), k, opt);
  if (tuned.warning) std::cerr << "warning: no lambda on the grid selected between 1 and " << k << " features\n";
  if (chosen_lambda) *chosen_lambda = tuned.lambda;
  return tuned.model;
}

std::pair<std::size_t, std::size_t> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  auto fail = [&] { return Error(Errc::invalid_argument, "--path expects K1..K2, got '" + s + "'"); };
  if (dots == std::string::npos) throw fail();
  std::size_t lo = 0, hi = 0;
  const auto a = std::from_chars(s.data(), s.data() + dots, lo);
  const auto b = std::from_chars(s.data() + dots + 2, s.data() + s.size(), hi);
  if (a.ec != std::errc() || a.ptr != s.data() + dots || b.ec != std::errc() || b.ptr != s.data() + s.size() ||
      lo < 1 || hi < lo) {
    throw fail();
  }
  return {lo, hi};
}

void print_summary(std::ostream& out, const std::string& method, const SparseModel& model,
                   std::optional<double> lambda) {
  out << "method " << method << "  k " << model.k << "  selected " << model.nonzeros();
  if (lambda) out << "  lambda " << format_double(*lambda);
  out << "\nintercept " << format_double(model.intercept) << '\n';
  for (std::size_t a = 0; a < model.support.size(); ++a) {
    out << "  x" << model.support[a] + 1 << "  " << format_double(model.beta_orig[static_cast<Index>(a)])
        << "  (standardized " << format_double(model.beta_std[static_cast<Index>(a)]) << ")\n";
  }
}

int cmd_extract(const ExtractArgs& a) {
  const bool penalized = a.method == "lasso" || a.method == "elnet" || a.method == "mcp";
  if (!a.path_range.empty()) {
    parse_range(a.path_range);
  } else if (a.method != "ols" && !a.k && !(penalized && a.lambda)) {
    throw Error(Errc::invalid_argument, "--k is required for method " + a.method +
                                            (penalized ? " (or give --lambda)" : ""));
  }
  const MomentSet m = read_snapshot_file(a.snapshot);
  const StandardizedMoments sm = standardize(m, a.min_sigma);

  if (!a.path_range.empty()) {
    const auto [lo, hi] = parse_range(a.path_range);
    if (a.method == "ols") throw Error(Errc::invalid_argument, "--path needs a sparse method");
    detail::check_sparsity(hi, sm.retained());
    std::vector<SparseModel> models(hi - lo + 1);
    std::vector<double> lambdas(models.size(), 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) models[i] = extract_one(sm, a, lo + i, &lambdas[i]);
    std::ostringstream csv;
    csv << "k,selected,lambda";
    for (std::size_t j = 1; j <= sm.p; ++j) csv << ",x" << j;
    csv << '\n';
    for (std::size_t i = 0; i < models.size(); ++i) {
      std::vector<double> row(sm.p, 0.0);
      for (std::size_t s = 0; s < models[i].support.size(); ++s) {
        row[models[i].support[s]] = models[i].beta_std[static_cast<Index>(s)];
      }
      csv << lo + i << ',' << models[i].nonzeros() << ',' << format_double(lambdas[i]);
      for (double v : row) csv << ',' << format_double(v);
      csv << '\n';
    }
    write_text(a.path_out, csv.str());
    std::cout << "wrote solution path k=" << lo << ".." << hi << " to " << a.path_out << '\n';
    return 0;
  }

  SparseModel model;
  std::optional<double> lambda;
  if (a.method == "ols") {
    model = ols(sm);
  } else if (penalized && a.lambda) {
    PenaltySpec spec{penalty_of(a.method), *a.lambda, a.method == "elnet" ? a.l2_mix : 0.0, a.mcp_b};
    model = penalized_gd(sm, spec, a.iterations ? a.iterations : kPenalizedIterations, a.eta);
    lambda = *a.lambda;
  } else {
    double chosen = 0.0;
    model = extract_one(sm, a, *a.k, &chosen);
    if (penalized) lambda = chosen;
  }
  std::ostringstream text;
  write_model(text, model);
  if (a.model_out.empty() || a.model_out == "-") {
    std::cout << text.str();
  } else {
    write_text(a.model_out, text.str());
    print_summary(std::cout, a.method, model, lambda);
  }
  return 0;
}

struct SimulateArgs {
  std::string kind = "synthetic";
  std::size_t p = 100;
  std::uint64_t n = 1000;
  std::size_t k = 10;
  double beta = 1.0;
  double alpha = 1.0;
  std::string task = "regression";
  double noise = 1.0;
  std::uint64_t seed = 1;
  std::size_t steps = 0;
  bool interactions = false;
  std::string out = "-";
};

int cmd_simulate(const SimulateArgs& a) {
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (a.out != "-") {
    file = open_out(a.out);
    out = &file;
  }
  auto emit = [&](const Vector& x, double y) {
    const Vector row = a.interactions ? expand_interactions(x) : x;
    write_csv_row(*out, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), y);
  };
  auto header = [&](std::size_t p) {
    write_csv_header(*out, a.interactions ? 2 * p + p * (p - 1) / 2 : p);
  };
  if (a.kind == "synthetic") {
    GenConfig g;
    g.p = a.p;
    g.n = a.n;
    g.k_star = a.k;
    g.spacing = default_spacing(a.p, a.k);
    g.beta_strength = a.beta;
    g.alpha_corr = a.alpha;
    g.task = a.task == "classification" ? Task::classification : Task::regression;
    g.noise = a.noise;
    g.seed = a.seed;
    SyntheticStream stream(g);
    header(g.p);
    for (std::uint64_t i = 0; i < a.n; ++i) {
      const Observation z = stream.next();
      emit(z.x, z.y);
    }
  } else if (a.kind == "drift") {
    DriftConfig cfg;
    cfg.p = a.p;
    cfg.k = a.k;
    cfg.alpha_corr = a.alpha;
    if (a.steps) cfg.steps = a.steps;
    cfg.validate();
    SplitMix64 rng(a.seed);
    header(cfg.p);
    for (std::size_t t = 1; t <= cfg.steps; ++t) {
      const Vector beta = gen_drift_coeffs(cfg, static_cast<double>(t));
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        const Vector x = gen_design_row(rng, cfg.p, cfg.alpha_corr);
        emit(x, gen_response(rng, x, beta, Task::regression, a.noise));
      }
    }
  } else {
    PricingConfig cfg;
    cfg.p = a.p;
    cfg.k = a.k;
    cfg.alpha_corr = a.alpha;
    cfg.noise = a.noise;
    if (a.steps) cfg.steps = a.steps;
    cfg.validate();
    SplitMix64 rng(a.seed);
    header(cfg.p);
    for (std::size_t t = 1; t <= cfg.steps; ++t) {
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        const Observation z = gen_pricing_obs(rng, cfg, static_cast<double>(t));
        emit(z.x, z.y);
      }
    }
  }
  if (!*out) throw Error(Errc::io_error, "write failed");
  return 0;
}

struct ExperimentArgs {
  std::string table;
  std::string scale = "desk";
  std::optional<std::size_t> seeds;
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  bool timing = false;
};

int cmd_experiment(const ExperimentArgs& a) {
  const Scale scale = parse_scale(a.scale);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    std::cerr << "wrote " << (dir / name).string() << '\n';
  };
  std::cout << "# preset version " << kPresetVersion << ", scale " << a.scale << '\n';

  if (a.table == "t2" || a.table == "t3") {
    const bool classify = a.table == "t3";
    const std::string metric = classify ? "auc" : "rmse";
    std::ostringstream rows_csv, summary_csv;
    std::vector<RecoveryRow> all_rows;
    std::vector<RecoverySummary> all_summary;
    for (auto cfg : recovery_configs(scale, classify ? Task::classification : Task::regression)) {
      if (a.seeds) cfg.seeds = *a.seeds;
      cfg.base_seed = a.seed;
      cfg.timing = a.timing;
      const auto rows = run_recovery(cfg);
      const auto summary = summarize(rows);
      std::ostringstream r, s;
      write_recovery_rows(r, rows, metric);
      write_recovery_summary(s, summary, metric);
      const std::string tag = cfg.gen.beta_strength >= 1.0 ? "strong" : "weak";
      const std::string beta = format_double(cfg.gen.beta_strength);
      auto prefix = [&](const std::string& csv, bool first) {
        std::istringstream in(csv);
        std::string line, out;
        bool header = true;
        while (std::getline(in, line)) {
          if (header) {
            if (first) out += "beta," + line + '\n';
            header = false;
          } else {
            out += beta + ',' + line + '\n';
          }
        }
        return out;
      };
      rows_csv << prefix(r.str(), rows_csv.tellp() == 0);
      summary_csv << prefix(s.str(), summary_csv.tellp() == 0);
      std::cout << "p=" << cfg.gen.p << " k=" << cfg.gen.k_star << " beta=" << beta << " (" << tag << ")\n"
                << s.str();
    }
    emit(a.table + "_per_seed.csv", rows_csv.str());
    emit(a.table + "_summary.csv", summary_csv.str());
  } else if (a.table == "t4" || a.table == "pricing") {
    AdaptationConfig cfg = drift_config(scale, a.table == "pricing");
    if (a.seeds) cfg.seeds = *a.seeds;
    cfg.base_seed = a.seed;
    const auto summary = run_adaptation(cfg);
    std::ostringstream s, trace, seeds;
    write_adaptation_summary(s, summary);
    write_adaptation_trace(trace, summary);
    seeds << "rate,seed,rmse\n";
    for (const auto& row : summary) {
      for (std::size_t r = 0; r < row.per_seed.size(); ++r) {
        seeds << format_double(row.rate) << ',' << cfg.base_seed + r << ',' << format_double(row.per_seed[r]) << '\n';
      }
    }
    std::cout << s.str();
    emit(a.table + "_summary.csv", s.str());
    emit(a.table + "_per_seed.csv", seeds.str());
    emit(a.table + "_trace.csv", trace.str());
  } else if (a.table == "regret") {
    RegretConfig cfg = regret_config(scale);
    if (a.seeds) cfg.seeds = *a.seeds;
    cfg.base_seed = a.seed;
    const RegretSummary s = run_regret(cfg);
    std::ostringstream trace, seeds;
    write_regret(trace, s);
    seeds << "seed,n,cumulative_loss,offline_loss,regret\n";
    for (std::size_t r = 0; r < s.traces.size(); ++r) {
      const auto& t = s.traces[r];
      for (std::size_t c = 0; c < t.checkpoints.size(); ++c) {
        seeds << cfg.base_seed + r << ',' << t.checkpoints[c] << ',' << format_double(t.cumulative_loss[c]) << ','
              << format_double(t.offline_loss[c]) << ',' << format_double(t.regret[c]) << '\n';
      }
    }
    std::ostringstream summary;
    summary << "p,seeds,slope,min_regret\n"
            << cfg.gen.p << ',' << cfg.seeds << ',' << format_double(s.slope) << ',' << format_double(s.min_regret)
            << '\n';
    std::cout << summary.str();
    emit("regret_trace.csv", trace.str());
    emit("regret_per_seed.csv", seeds.str());
    emit("regret_summary.csv", summary.str());
  } else if (a.table == "bounds") {
    std::ostringstream all;
    bool first = true;
    for (auto cfg : bounds_configs(scale)) {
      if (a.seeds) {
        cfg.seeds = *a.seeds;
        cfg.required = std::max<std::size_t>(1, (99 * *a.seeds + 99) / 100);
      }
      cfg.base_seed = a.seed;
      std::ostringstream s;
      write_beta_min(s, run_beta_min(cfg));
      std::string text = s.str();
      if (!first) text = text.substr(text.find('\n') + 1);
      first = false;
      all << text;
    }
    std::cout << all.str();
    emit("bounds_summary.csv", all.str());
  } else {
    throw Error(Errc::invalid_argument, "unknown table '" + a.table + "'");
  }
  return 0;
}

struct BoundsArgs {
  std::string kind = "prop2";
  double n = 0;
  double p = 0;
  double sigma = 1.0;
  std::optional<double> lambda;
  double alpha_corr = 1.0;
  double alpha_exp = 1.0;
};

int cmd_bounds(const BoundsArgs& a) {
  double lambda = 0.0;
  if (a.kind == "prop2") {
    if (!a.lambda) throw Error(Errc::invalid_argument, "prop2 needs --lambda");
    lambda = *a.lambda;
  } else {
    lambda = a.lambda ? *a.lambda : thm1_lambda(design_covariance(static_cast<std::size_t>(a.p), a.alpha_corr), a.n);
  }
  const BoundKind kind = a.kind == "prop2" ? BoundKind::prop2 : BoundKind::thm1;
  const double bound = beta_min_bound(kind, a.n, a.p, a.sigma, lambda, a.alpha_exp);
  std::cout << "kind " << a.kind << "  lambda " << format_double(lambda) << "  beta_min " << format_double(bound)
            << '\n';
  return 0;
}

struct InspectArgs {
  std::string snapshot;
  bool moments = false;
};

int cmd_inspect(const InspectArgs& a) {
  const MomentSet m = read_snapshot_file(a.snapshot);
  std::cout << "format RAVG v" << kSnapshotVersion << '\n'
            << "p " << m.p() << '\n'
            << "n " << m.n() << '\n'
            << "mode " << (m.mode().is_uniform() ? "uniform" : "exponential") << '\n';
  if (!m.mode().is_uniform()) std::cout << "rate " << format_double(m.mode().rate) << '\n';
  std::cout << "effective_n " << format_double(m.effective_n()) << '\n'
            << "memory_bytes " << m.memory_bytes() << '\n'
            << "mu_y " << format_double(m.mu_y()) << '\n'
            << "var_y " << format_double(m.s_yy() - m.mu_y() * m.mu_y()) << '\n';
  if (m.n() >= 2) {
    const StandardizedMoments sm = standardize(m);
    std::cout << "retained " << sm.retained() << '\n';
    if (!sm.dropped.empty()) {
      std::cout << "dropped";
      for (auto j : sm.dropped) std::cout << " x" << j + 1;
      std::cout << '\n';
    }
  }
  if (a.moments) {
    std::cout << "feature,mean,sd,s_xy\n";
    for (Index j = 0; j < static_cast<Index>(m.p()); ++j) {
      const double var = m.s_xx()(j, j) - m.mu_x()[j] * m.mu_x()[j];
      std::cout << 'x' << j + 1 << ',' << format_double(m.mu_x()[j]) << ','
                << format_double(var > 0.0 ? std::sqrt(var) : 0.0) << ',' << format_double(m.s_xy()[j]) << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Running-averages sparse regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ravg 1.0 (preset version " + std::to_string(kPresetVersion) + ")");

  AccumulateArgs acc;
  auto* c_acc = app.add_subcommand("accumulate", "Fold CSV rows (x1..xp,y) into a snapshot");
  c_acc->add_option("input", acc.input, "CSV file, '-' for stdin")->capture_default_str();
  c_acc->add_option("-s,--snapshot", acc.snapshot, "Snapshot file to create or extend")->required();
  c_acc->add_option("--adapt", acc.adapt, "Exponential forgetting rate in (0,1)")
      ->check(CLI::Range(0.0, 1.0).description("(0,1)"));
  c_acc->add_option("--merge", acc.merge, "Merge these uniform snapshots into --snapshot")->check(CLI::ExistingFile);
  c_acc->callback([&] {
    if (acc.adapt && (*acc.adapt <= 0.0 || *acc.adapt >= 1.0)) {
      throw CLI::ValidationError("--adapt", "rate must lie strictly between 0 and 1");
    }
    if (!acc.merge.empty() && acc.adapt) throw CLI::ValidationError("--merge", "merge applies to uniform snapshots only");
  });

  ExtractArgs ex;
  auto* c_ex = app.add_subcommand("extract", "Extract a model from a snapshot");
  c_ex->add_option("-s,--snapshot", ex.snapshot, "Snapshot file")->required()->check(CLI::ExistingFile);
  c_ex->add_option("-m,--method", ex.method, "Extractor")
      ->check(CLI::IsMember({"ols", "olsth", "ofsa", "lasso", "elnet", "mcp"}))
      ->capture_default_str();
  c_ex->add_option("-k,--k", ex.k, "Sparsity level")->check(CLI::PositiveNumber);
  c_ex->add_option("--lambda", ex.lambda, "Penalty weight (penalized methods)")->check(CLI::PositiveNumber);
  c_ex->add_option("--l2", ex.l2_mix, "Elastic net quadratic weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_ex->add_option("--mcp-b", ex.mcp_b, "MCP constant b > 1")->check(CLI::Range(1.0, 1e300))->capture_default_str();
  c_ex->add_option("--iterations", ex.iterations, "Iteration count (OFSA T or penalized T)");
  c_ex->add_option("--eta", ex.eta, "Learning rate; default 0.9 / largest eigenvalue")->check(CLI::NonNegativeNumber);
  c_ex->add_option("--mu", ex.mu, "OFSA annealing parameter")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_ex->add_option("--ridge", ex.ridge, "Ridge weight for the OLS-th first stage")->check(CLI::NonNegativeNumber);
  c_ex->add_option("--min-sigma", ex.min_sigma, "Relative deviation below which a feature is dropped")
      ->check(CLI::NonNegativeNumber);
  c_ex->add_option("--grid", ex.grid, "Lambda grid size")->check(CLI::Range(2, 100000))->capture_default_str();
  c_ex->add_option("-o,--model", ex.model_out, "Model file to write (default stdout)");
  c_ex->add_option("--path", ex.path_range, "Solution path over sparsity levels K1..K2");
  c_ex->add_option("--path-out", ex.path_out, "Solution path CSV")->capture_default_str();
  c_ex->callback([&] {
    if (ex.method == "mcp" && ex.mcp_b <= 1.0) throw CLI::ValidationError("--mcp-b", "must exceed 1");
  });

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Write a synthetic CSV stream");
  c_sim->add_option("--kind", sim.kind, "Generator")->check(CLI::IsMember({"synthetic", "drift", "pricing"}))->capture_default_str();
  c_sim->add_option("-p,--p", sim.p, "Feature count")->check(CLI::PositiveNumber)->capture_default_str();
  c_sim->add_option("-n,--n", sim.n, "Observation count (synthetic)")->check(CLI::PositiveNumber)->capture_default_str();
  c_sim->add_option("-k,--k", sim.k, "True sparsity")->capture_default_str();
  c_sim->add_option("--beta", sim.beta, "Signal strength")->check(CLI::PositiveNumber)->capture_default_str();
  c_sim->add_option("--alpha", sim.alpha, "Design correlation parameter")->capture_default_str();
  c_sim->add_option("--task", sim.task, "Response type")->check(CLI::IsMember({"regression", "classification"}))->capture_default_str();
  c_sim->add_option("--noise", sim.noise, "Noise standard deviation")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_sim->add_option("--steps", sim.steps, "Time steps (drift, pricing)");
  c_sim->add_flag("--interactions", sim.interactions, "Append squares and pairwise products");
  c_sim->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  c_sim->add_option("-o,--out", sim.out, "Output CSV, '-' for stdout")->capture_default_str();

  ExperimentArgs exp;
  auto* c_exp = app.add_subcommand("experiment", "Run a simulation protocol and write CSV results");
  c_exp->add_option("-t,--table", exp.table, "Protocol")
      ->required()
      ->check(CLI::IsMember({"t2", "t3", "t4", "pricing", "regret", "bounds"}));
  c_exp->add_option("--scale", exp.scale, "Preset scale")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
  c_exp->add_option("--seeds", exp.seeds, "Replicates (overrides the preset)")->check(CLI::PositiveNumber);
  c_exp->add_option("--seed", exp.seed, "Base random seed")->capture_default_str();
  c_exp->add_option("-o,--out-dir", exp.out_dir, "Directory for CSV output")->capture_default_str();
  c_exp->add_flag("--timing", exp.timing, "Record extraction wall time (makes output run-dependent)");

  BoundsArgs bnd;
  auto* c_bnd = app.add_subcommand("bounds", "Evaluate a beta_min bound");
  c_bnd->add_option("--kind", bnd.kind, "Bound")->check(CLI::IsMember({"prop2", "thm1"}))->capture_default_str();
  c_bnd->add_option("-n,--n", bnd.n, "Sample size")->required()->check(CLI::Range(1.0, 1e300));
  c_bnd->add_option("-p,--p", bnd.p, "Feature count")->required()->check(CLI::Range(1.0, 1e300));
  c_bnd->add_option("--sigma", bnd.sigma, "Noise standard deviation")->check(CLI::PositiveNumber)->capture_default_str();
  c_bnd->add_option("--lambda", bnd.lambda, "Eigenvalue floor (prop2) or precomputed lambda (thm1)");
  c_bnd->add_option("--alpha-corr", bnd.alpha_corr, "Design correlation parameter for thm1")->capture_default_str();
  c_bnd->add_option("--alpha-exp", bnd.alpha_exp, "Exponent on n")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  InspectArgs ins;
  auto* c_ins = app.add_subcommand("inspect", "Describe a snapshot");
  c_ins->add_option("-s,--snapshot", ins.snapshot, "Snapshot file")->required()->check(CLI::ExistingFile);
  c_ins->add_flag("--moments", ins.moments, "Print per-feature means and deviations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_acc) return cmd_accumulate(acc);
    if (*c_ex) return cmd_extract(ex);
    if (*c_sim) return cmd_simulate(sim);
    if (*c_exp) return cmd_experiment(exp);
    if (*c_bnd) return cmd_bounds(bnd);
    if (*c_ins) return cmd_inspect(ins);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_numeric_failure(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
