#include "mixopt/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mixopt/rng.hpp"

namespace mixopt {

using ojson = nlohmann::ordered_json;

void SwarmDataset::validate() const {
  if (tasks.empty()) throw Error(Error::Kind::SchemaError, "swarm dataset needs at least one task");
  if (mixtures.empty()) throw Error(Error::Kind::SchemaError, "swarm dataset needs at least one record");
  if (scores.rows() != static_cast<Eigen::Index>(mixtures.size()) ||
      scores.cols() != static_cast<Eigen::Index>(tasks.size())) {
    throw Error(Error::Kind::DimensionMismatch, "swarm dataset score matrix shape mismatch");
  }
  for (const auto& mix : mixtures) {
    if (mix.over_version() != over_version || mix.size() != domain_ids.size()) {
      throw Error(Error::Kind::DimensionMismatch, "swarm record mixture over wrong domain set");
    }
  }
  if (!scores.allFinite()) {
    throw Error(Error::Kind::SchemaError, "swarm dataset scores must be finite");
  }
}

void GroundTruthModel::validate() const {
  if (tasks.empty() || domain_ids.empty()) {
    throw Error(Error::Kind::SchemaError, "ground truth needs tasks and domains");
  }
  if (offsets.size() != static_cast<Eigen::Index>(tasks.size()) ||
      slopes.rows() != static_cast<Eigen::Index>(tasks.size()) ||
      slopes.cols() != static_cast<Eigen::Index>(domain_ids.size())) {
    throw Error(Error::Kind::DimensionMismatch, "ground truth shape mismatch");
  }
  for (Eigen::Index i = 0; i < offsets.size(); ++i) {
    if (!(offsets(i) > 0.0)) throw Error(Error::Kind::SchemaError, "ground truth offsets must be positive");
  }
  if (!slopes.allFinite() || !(noise_sd >= 0.0)) {
    throw Error(Error::Kind::SchemaError, "ground truth slopes/noise must be finite");
  }
}

LogLinearAggregate GroundTruthModel::objective() const {
  const int n = static_cast<int>(tasks.size());
  return LogLinearAggregate(Eigen::VectorXd::Constant(n, 1.0 / n), offsets, slopes);
}

GroundTruthModel GroundTruthModel::restricted_to(const std::vector<std::string>& ids) const {
  GroundTruthModel out;
  out.tasks = tasks;
  out.offsets = offsets;
  out.noise_sd = noise_sd;
  out.domain_ids = ids;
  std::sort(out.domain_ids.begin(), out.domain_ids.end());
  out.slopes.resize(slopes.rows(), static_cast<Eigen::Index>(out.domain_ids.size()));
  for (std::size_t j = 0; j < out.domain_ids.size(); ++j) {
    const auto it = std::find(domain_ids.begin(), domain_ids.end(), out.domain_ids[j]);
    if (it == domain_ids.end()) {
      throw Error(Error::Kind::UnknownDomain, "ground truth has no slope for domain: " + out.domain_ids[j]);
    }
    out.slopes.col(j) = slopes.col(it - domain_ids.begin());
  }
  return out;
}

std::vector<double> evaluate_truth(const GroundTruthModel& g, const Mixture& p,
                                   std::uint64_t seed) {
  if (p.size() != g.domain_count()) {
    throw Error(Error::Kind::DimensionMismatch, "mixture dimension does not match ground truth");
  }
  const Eigen::VectorXd pv = Eigen::Map<const Eigen::VectorXd>(p.weights().data(), p.size());
  const Eigen::VectorXd e = (g.slopes * pv).array().exp();
  std::vector<double> out(g.task_count());
  Rng rng(seed);
  for (std::size_t i = 0; i < g.task_count(); ++i) {
    const double eps = g.noise_sd > 0.0 ? g.noise_sd * rng.normal() : 0.0;
    out[i] = g.offsets(static_cast<Eigen::Index>(i)) + e(static_cast<Eigen::Index>(i)) + eps;
  }
  return out;
}

TruthOptimum truth_optimum(const GroundTruthModel& g, const std::vector<double>& caps,
                           double lambda, const Mixture& anchor) {
  const LogLinearAggregate obj = g.objective();
  SolveSpec spec;
  spec.lambda = lambda;
  if (lambda > 0.0 || anchor.size() == g.domain_count()) {
    spec.anchor = anchor.weights();
  }
  spec.caps = caps;
  spec.tol = 1e-10;
  spec.max_iters = 200000;
  const SolveResult res = solve_exact(obj, spec);
  TruthOptimum out;
  out.mixture = Mixture(0, std::vector<double>(res.point.data(), res.point.data() + res.point.size()));
  out.value = res.value;
  out.diag = res.diag;
  return out;
}

GroundTruthModel make_random_truth(const std::vector<std::string>& domain_ids,
                                   const std::vector<std::string>& tasks,
                                   double noise_sd, std::uint64_t seed) {
  GroundTruthModel g;
  g.domain_ids = domain_ids;
  std::sort(g.domain_ids.begin(), g.domain_ids.end());
  g.tasks = tasks;
  g.noise_sd = noise_sd;
  const int n = static_cast<int>(tasks.size());
  const int m = static_cast<int>(domain_ids.size());
  g.offsets.resize(n);
  g.slopes.resize(n, m);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));  // keeps exp() benign
  for (int i = 0; i < n; ++i) {
    g.offsets(i) = 0.2 + 0.8 * rng.uniform();
    for (int j = 0; j < m; ++j) g.slopes(i, j) = scale * rng.normal();
  }
  return g;
}

// --- CSV ---------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace

SwarmDataset ingest_results(const std::string& path, const DomainSet& over) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::Io, "cannot open results csv: " + path);

  std::string header;
  if (!std::getline(in, header)) {
    throw Error(Error::Kind::SchemaError, "results csv is empty");
  }
  while (!header.empty() && (header.back() == '\r' || header.back() == '\n')) header.pop_back();

  std::vector<int> mix_col_domain;  // column -> domain index
  std::vector<std::string> tasks;
  std::vector<int> col_kind;  // 0 = mix, 1 = task
  std::vector<bool> seen(over.size(), false);

  for (const std::string& cell : split_csv_line(header)) {
    if (cell.rfind("mix:", 0) == 0) {
      const std::string id = cell.substr(4);
      const int idx = over.index_of(id);
      if (idx < 0) throw Error(Error::Kind::UnknownDomainColumn, "unknown domain column: " + id);
      if (seen[idx]) throw Error(Error::Kind::SchemaError, "duplicate domain column: " + id);
      seen[idx] = true;
      mix_col_domain.push_back(idx);
      col_kind.push_back(0);
    } else if (cell.rfind("task:", 0) == 0) {
      tasks.push_back(cell.substr(5));
      col_kind.push_back(1);
    } else {
      throw Error(Error::Kind::SchemaError, "header cell must start with mix: or task:, got: " + cell);
    }
  }
  for (std::size_t j = 0; j < over.size(); ++j) {
    if (!seen[j]) {
      throw Error(Error::Kind::SchemaError, "missing mixture column for domain: " + over.at(j).id);
    }
  }
  if (tasks.empty()) throw Error(Error::Kind::SchemaError, "results csv has no task columns");

  SwarmDataset data;
  data.over_version = over.version();
  data.domain_ids = over.ids();
  data.tasks = tasks;

  std::vector<std::vector<double>> score_rows;
  std::string line;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != col_kind.size()) {
      throw Error(Error::Kind::SchemaError,
                  "row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(col_kind.size()));
    }
    std::vector<double> weights(over.size(), 0.0);
    std::vector<double> row_scores;
    std::size_t mix_i = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v;
      try {
        v = std::stod(cells[c]);
      } catch (const std::exception&) {
        throw Error(Error::Kind::SchemaError,
                    "row " + std::to_string(row_no) + ": cannot parse value '" + cells[c] + "'");
      }
      if (col_kind[c] == 0) {
        weights[mix_col_domain[mix_i++]] = v;
      } else {
        if (!std::isfinite(v)) {
          throw Error(Error::Kind::SchemaError, "row " + std::to_string(row_no) + ": non-finite score");
        }
        row_scores.push_back(v);
      }
    }
    double total = 0.0;
    for (double w : weights) total += w;
    if (std::abs(total - 1.0) > 1e-6) {
      throw Error(Error::Kind::SimplexViolation,
                  "row " + std::to_string(row_no) + ": mixture weights sum to " + std::to_string(total));
    }
    data.mixtures.emplace_back(over.version(), std::move(weights));
    score_rows.push_back(std::move(row_scores));
  }
  if (score_rows.empty()) throw Error(Error::Kind::SchemaError, "results csv has no data rows");

  data.scores.resize(static_cast<Eigen::Index>(score_rows.size()),
                     static_cast<Eigen::Index>(tasks.size()));
  for (std::size_t r = 0; r < score_rows.size(); ++r) {
    for (std::size_t cidx = 0; cidx < tasks.size(); ++cidx) {
      data.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cidx)) = score_rows[r][cidx];
    }
  }
  data.validate();
  return data;
}

void write_results_csv(const SwarmDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::Io, "cannot write results csv: " + path);
  out.precision(17);
  bool first = true;
  for (const auto& id : data.domain_ids) {
    out << (first ? "" : ",") << "mix:" << id;
    first = false;
  }
  for (const auto& t : data.tasks) out << ",task:" << t;
  out << "\n";
  for (std::size_t r = 0; r < data.runs(); ++r) {
    for (std::size_t j = 0; j < data.domain_ids.size(); ++j) {
      if (j) out << ",";
      out << data.mixtures[r][j];
    }
    for (std::size_t cidx = 0; cidx < data.task_count(); ++cidx) {
      out << "," << data.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cidx));
    }
    out << "\n";
  }
}

// --- JSON ---------------------------------------------------------------------

std::string truth_to_json(const GroundTruthModel& g) {
  ojson j;
  j["tasks"] = g.tasks;
  j["domain_ids"] = g.domain_ids;
  j["noise_sd"] = g.noise_sd;
  j["offsets"] = std::vector<double>(g.offsets.data(), g.offsets.data() + g.offsets.size());
  j["slopes"] = ojson::array();
  for (Eigen::Index i = 0; i < g.slopes.rows(); ++i) {
    std::vector<double> row(g.slopes.cols());
    for (Eigen::Index c = 0; c < g.slopes.cols(); ++c) row[c] = g.slopes(i, c);
    j["slopes"].push_back(row);
  }
  return j.dump(2) + "\n";
}

GroundTruthModel truth_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const std::exception& e) {
    throw Error(Error::Kind::SchemaError, std::string("truth json parse error: ") + e.what());
  }
  GroundTruthModel g;
  g.tasks = j.at("tasks").get<std::vector<std::string>>();
  g.domain_ids = j.at("domain_ids").get<std::vector<std::string>>();
  g.noise_sd = j.value("noise_sd", 0.0);
  const auto off = j.at("offsets").get<std::vector<double>>();
  g.offsets = Eigen::Map<const Eigen::VectorXd>(off.data(), static_cast<Eigen::Index>(off.size()));
  g.slopes.resize(static_cast<Eigen::Index>(g.tasks.size()),
                  static_cast<Eigen::Index>(g.domain_ids.size()));
  const auto& rows = j.at("slopes");
  if (rows.size() != g.tasks.size()) {
    throw Error(Error::Kind::SchemaError, "truth json slopes row count mismatch");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = rows[i].get<std::vector<double>>();
    if (row.size() != g.domain_ids.size()) {
      throw Error(Error::Kind::SchemaError, "truth json slopes column count mismatch");
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      g.slopes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
    }
  }
  g.validate();
  return g;
}

GroundTruthModel load_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::Io, "cannot open truth json: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return truth_from_json(ss.str());
}

void save_truth(const GroundTruthModel& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::Io, "cannot write truth json: " + path);
  out << truth_to_json(g);
}

}  // namespace mixopt
