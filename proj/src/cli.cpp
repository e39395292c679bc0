#include "mixopt/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "mixopt/analysis.hpp"
#include "mixopt/domain.hpp"
#include "mixopt/manifest.hpp"
#include "mixopt/optimizer.hpp"
#include "mixopt/oracle.hpp"
#include "mixopt/parallel.hpp"
#include "mixopt/regression.hpp"
#include "mixopt/reuse.hpp"
#include "mixopt/rng.hpp"
#include "mixopt/swarm.hpp"

namespace mixopt {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::Io, "cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Collects output files and writes the reproducibility manifest at the end.
struct Ctx {
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string format = "json";
  RunManifest manifest;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void note_input(const std::string& path) {
    manifest.input_digests[path] = digest_file(path);
  }

  std::string write_output(const std::string& name, const std::string& content) {
    if (out_dir.empty()) throw Error(Error::Kind::InvalidArgument, "--out-dir required");
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / name).string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Error::Kind::Io, "cannot write file: " + path);
    out << content;
    out.close();
    manifest.output_digests[path] = sha256_hex(content);
    return path;
  }

  void note_output_file(const std::string& path) {
    manifest.output_digests[path] = digest_file(path);
  }

  void finish() {
    if (out_dir.empty()) return;
    manifest.tool_version = kToolVersion;
    manifest.seed = seed;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  }
};

// --- oracle sources ----------------------------------------------------------

struct OracleSource {
  enum class Kind { Synthetic, Results, Random } kind = Kind::Synthetic;
  GroundTruthModel truth;    // Synthetic / Random
  std::string results_path;  // Results
};

OracleSource parse_oracle(const std::string& flag, Ctx& ctx) {
  OracleSource src;
  if (flag.rfind("synthetic:", 0) == 0) {
    const std::string path = flag.substr(10);
    ctx.note_input(path);
    src.kind = OracleSource::Kind::Synthetic;
    src.truth = load_truth(path);
  } else if (flag.rfind("results:", 0) == 0) {
    src.kind = OracleSource::Kind::Results;
    src.results_path = flag.substr(8);
    ctx.note_input(src.results_path);
  } else if (flag == "random") {
    src.kind = OracleSource::Kind::Random;
  } else {
    throw Error(Error::Kind::InvalidArgument,
                "--oracle must be synthetic:<truth.json>, results:<swarm.csv>, or random");
  }
  return src;
}

OracleFn truth_oracle(const GroundTruthModel& truth, std::uint64_t seed) {
  return [truth, seed](const Mixture& q, std::uint64_t run) {
    return evaluate_truth(truth, q, substream_seed(seed, run));
  };
}

// --- swarm-size schedule -------------------------------------------------------

/// K for recomputing over m coordinates at linear multiplier c: exactly m+1
/// at c=1; at c=3 the power of two closest to 3(m+1), ties toward the smaller
/// power; at c=2 half the c=3 size.
int schedule_k(int c, int m) {
  if (m < 1) return 0;
  if (c == 1) return m + 1;
  const int target = 3 * (m + 1);
  int lo = 1;
  while (lo * 2 <= target) lo *= 2;
  const int hi = lo * 2;
  const int k3 = (target - lo <= hi - target) ? lo : hi;
  if (c == 3) return k3;
  if (c == 2) return std::max(1, k3 / 2);
  throw Error(Error::Kind::InvalidArgument, "swarm-size schedule supports c in {1,2,3}");
}

// --- shared pipeline ------------------------------------------------------------

struct PipelineConfig {
  int count = 0;  // explicit K; 0 derives c*(m+1) from the multiplier
  int multiplier = 3;
  GranularitySpec granularity = GranularitySpec::per_task();
  Family family = Family::LogLinear;
  double lambda = 0.05;
  std::optional<RepetitionBudget> budget;
  Sparsity sparsity = Sparsity::Dense;
  double sparse_threshold = 0.05;
  std::uint64_t seed = 0;
  FitConfig fit;
  SolverKind solver = SolverKind::Exact;
};

struct PipelineResult {
  SwarmDataset data;
  std::vector<TaskModel> models;
  Mixture proposed;
  double objective_value = 0.0;
  SolveDiagnostics solve_diag;
  std::vector<std::string> warnings;
};

SwarmDataset evaluate_oracle_swarm(const DomainSet& d, const std::vector<Mixture>& mixes,
                                   const GroundTruthModel& truth, std::uint64_t seed) {
  SwarmDataset data;
  data.over_version = d.version();
  data.domain_ids = d.ids();
  data.tasks = truth.tasks;
  data.mixtures = mixes;
  data.scores.resize(static_cast<Eigen::Index>(mixes.size()),
                     static_cast<Eigen::Index>(truth.tasks.size()));
  const GroundTruthModel aligned = truth.restricted_to(d.ids());
  std::vector<std::vector<double>> rows(mixes.size());
  parallel_for(mixes.size(), [&](std::size_t j) {
    rows[j] = evaluate_truth(aligned, mixes[j], substream_seed(seed, j));
  });
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (std::size_t t = 0; t < rows[j].size(); ++t) {
      data.scores(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) = rows[j][t];
    }
  }
  return data;
}

/// Fit and solve over an already-evaluated swarm.
PipelineResult run_base_pipeline(const DomainSet& d, const SwarmDataset& data,
                                 const PipelineConfig& cfg) {
  PipelineResult out;
  out.data = data;
  out.models = fit_models(data, cfg.granularity, cfg.family, cfg.fit);
  for (const auto& m : out.models) {
    for (const auto& w : m.diag.warnings) out.warnings.push_back(m.unit + ": " + w);
  }
  const auto objective = aggregate_objective(out.models, data.tasks);

  SolveSpec spec;
  spec.lambda = cfg.lambda;
  spec.anchor = natural_distribution(d).weights();
  if (cfg.budget) {
    const CapsResult caps = repetition_caps(d, *cfg.budget);
    if (!caps.feasible) {
      throw Error(Error::Kind::InfeasibleCaps, "repetition caps sum below 1");
    }
    spec.caps = caps.caps;
  }
  // The GP posterior mean is non-convex; search is the supported solver.
  spec.solver = cfg.family == Family::GaussianProcess ? SolverKind::Search : cfg.solver;
  spec.seed = cfg.seed;
  const SolveResult sol = solve(*objective, spec);
  out.proposed = Mixture(
      d.version(), std::vector<double>(sol.point.data(), sol.point.data() + sol.point.size()));
  out.objective_value = sol.value;
  out.solve_diag = sol.diag;
  if (sol.diag.stalled) out.warnings.push_back("solver stalled; best iterate returned");
  return out;
}

PipelineResult run_base_pipeline_synthetic(const DomainSet& d, const GroundTruthModel& truth,
                                           const PipelineConfig& cfg) {
  const int m = static_cast<int>(d.size());
  const int k = cfg.count > 0 ? cfg.count : recommended_swarm_size(m, cfg.multiplier);
  SwarmConfig scfg;
  scfg.count = k;
  scfg.prior = natural_distribution(d);
  scfg.sparsity = cfg.sparsity;
  scfg.sparse_threshold = cfg.sparse_threshold;
  scfg.seed = cfg.seed;
  const auto mixes = sample_swarm(d, scfg);
  const SwarmDataset data = evaluate_oracle_swarm(d, mixes, truth, splitmix64(cfg.seed));
  return run_base_pipeline(d, data, cfg);
}

std::string mixture_report_json(const Mixture& mix, const std::vector<std::string>& ids,
                                const PipelineResult& res) {
  ojson j;
  j["over_version"] = mix.over_version();
  j["ids"] = ids;
  j["weights"] = mix.weights();
  j["objective_value"] = res.objective_value;
  j["active_caps"] = res.solve_diag.active_caps;
  j["iterations"] = res.solve_diag.iterations;
  j["converged"] = res.solve_diag.converged && !res.solve_diag.stalled;
  j["warnings"] = res.warnings;
  return j.dump(2) + "\n";
}

GranularitySpec parse_granularity(const std::string& flag) {
  if (flag == "per-task") return GranularitySpec::per_task();
  if (flag == "aggregated") return GranularitySpec::aggregated();
  if (flag.rfind("per-family:", 0) == 0) {
    const std::string path = flag.substr(11);
    const ojson j = ojson::parse(read_text(path));
    std::map<std::string, std::string> map;
    for (auto it = j.begin(); it != j.end(); ++it) map[it.key()] = it.value().get<std::string>();
    return GranularitySpec::per_family(std::move(map));
  }
  throw Error(Error::Kind::InvalidArgument,
              "--granularity must be per-task, aggregated, or per-family:<map.json>");
}

int exit_code_for(const PipelineResult& res) {
  const bool fit_trouble = std::any_of(res.models.begin(), res.models.end(),
                                       [](const TaskModel& m) { return !m.diag.converged; });
  if (fit_trouble || res.solve_diag.stalled) return kExitNonConverged;
  return kExitOk;
}

// --- chain script ----------------------------------------------------------------

struct ChainStage {
  std::string name;
  DomainUpdate update;
  std::vector<std::string> partial_recompute;
};

struct ChainScript {
  DomainSet initial;
  std::vector<ChainStage> stages;
};

ChainScript load_chain(const std::string& path) {
  const ojson j = ojson::parse(read_text(path));
  ChainScript chain;
  chain.initial = domain_set_from_json(j.at("initial").dump());
  for (const auto& s : j.at("stages")) {
    ChainStage stage;
    stage.name = s.at("name").get<std::string>();
    stage.update = update_from_json(s.at("update").dump());
    if (s.contains("partial_recompute")) {
      stage.partial_recompute = s["partial_recompute"].get<std::vector<std::string>>();
    }
    chain.stages.push_back(std::move(stage));
  }
  return chain;
}

// --- simulate: run-count accounting ------------------------------------------------

struct StageCount {
  std::string name;
  int dim = 0;    // coordinates recomputed this stage
  int fresh = 0;  // proxy runs consumed
};

/// Old proxy runs stay usable across updates as long as every domain they
/// drew from still exists unchanged: add keeps them (zero padding on the new
/// domains), partition keeps them (token-ratio split), revise/remove
/// invalidate every run sampled while the affected domain was present.
struct PoolBatch {
  int count = 0;
  std::set<std::string> support;
};

std::vector<StageCount> count_runs(const ChainScript& chain, const std::string& strategy, int c) {
  std::vector<StageCount> out;
  DomainSet current = chain.initial;

  if (strategy == "full-recompute") {
    out.push_back({"initial", static_cast<int>(current.size()),
                   schedule_k(c, static_cast<int>(current.size()))});
    for (const auto& s : chain.stages) {
      const UpdateResult applied = apply_update(current, s.update);
      current = applied.set;
      out.push_back({s.name, static_cast<int>(current.size()),
                     schedule_k(c, static_cast<int>(current.size()))});
    }
    return out;
  }

  if (strategy == "full-reuse" || strategy == "partial-reuse") {
    const bool partial = strategy == "partial-reuse";
    out.push_back({"initial", static_cast<int>(current.size()),
                   schedule_k(c, static_cast<int>(current.size()))});
    for (const auto& s : chain.stages) {
      const UpdateResult applied = apply_update(current, s.update);
      int dim;
      if (!partial && s.update.kind == UpdateKind::Remove) {
        dim = 0;  // renormalize only, no proxy runs
      } else {
        const std::size_t moved = partial ? s.partial_recompute.size() : 0;
        dim = static_cast<int>(1 + s.update.introduced.size() + moved);
      }
      out.push_back({s.name, dim, dim == 0 ? 0 : schedule_k(c, dim)});
      current = applied.set;
    }
    return out;
  }

  if (strategy == "swarm-reuse") {
    // Two parallel pool trajectories: the requested c and the minimum (c=1)
    // one, whose per-stage fresh-run need is the floor at every stage (the
    // new coordinates must stay identifiable even when the mapped pool
    // already meets the size target).
    auto run = [&](int cc, const std::vector<int>* floor) {
      std::vector<int> fresh_per_stage;
      std::vector<PoolBatch> pool;
      DomainSet cur = chain.initial;
      auto ids_of = [](const DomainSet& d) {
        const auto v = d.ids();
        return std::set<std::string>(v.begin(), v.end());
      };
      const int first = schedule_k(cc, static_cast<int>(cur.size()));
      fresh_per_stage.push_back(first);
      pool.push_back({first, ids_of(cur)});
      for (std::size_t si = 0; si < chain.stages.size(); ++si) {
        const ChainStage& s = chain.stages[si];
        const UpdateResult applied = apply_update(cur, s.update);
        std::vector<PoolBatch> next_pool;
        for (auto& b : pool) {
          bool invalid = false;
          if (s.update.kind == UpdateKind::Revise || s.update.kind == UpdateKind::Remove) {
            for (const auto& id : s.update.affected) invalid |= b.support.count(id) > 0;
          }
          if (invalid) continue;
          if (s.update.kind == UpdateKind::Partition && b.support.count(s.update.affected[0])) {
            b.support.erase(s.update.affected[0]);
            for (const auto& dom : s.update.introduced) b.support.insert(dom.id);
          }
          next_pool.push_back(std::move(b));
        }
        pool = std::move(next_pool);
        int usable = 0;
        for (const auto& b : pool) usable += b.count;
        const int target = schedule_k(cc, static_cast<int>(applied.set.size()));
        int need = std::max(target - usable, 0);
        if (floor) need = std::max(need, (*floor)[si + 1]);
        fresh_per_stage.push_back(need);
        if (need > 0) pool.push_back({need, ids_of(applied.set)});
        cur = applied.set;
      }
      return fresh_per_stage;
    };
    const std::vector<int> min_trajectory = run(1, nullptr);
    const std::vector<int> fresh = c == 1 ? min_trajectory : run(c, &min_trajectory);
    out.push_back({"initial", static_cast<int>(chain.initial.size()), fresh[0]});
    DomainSet cur = chain.initial;
    for (std::size_t si = 0; si < chain.stages.size(); ++si) {
      const UpdateResult applied = apply_update(cur, chain.stages[si].update);
      out.push_back({chain.stages[si].name, static_cast<int>(applied.set.size()),
                     fresh[si + 1]});
      cur = applied.set;
    }
    return out;
  }

  throw Error(Error::Kind::InvalidArgument, "unknown strategy: " + strategy);
}

// --- simulate: full execution --------------------------------------------------------

/// Remap a swarm dataset across one update; false means the batch drew from
/// a revised/removed domain and is no longer usable.
bool remap_dataset(SwarmDataset& data, const DomainSet& pre, const DomainUpdate& u,
                   const DomainSet& post) {
  if (u.kind == UpdateKind::Revise || u.kind == UpdateKind::Remove) {
    for (const auto& id : u.affected) {
      const int col = pre.index_of(id);
      for (const auto& mix : data.mixtures) {
        if (mix[col] > 0.0) return false;
      }
    }
  }
  std::vector<std::pair<int, double>> split;
  int parent_idx = -1;
  if (u.kind == UpdateKind::Partition) {
    parent_idx = pre.index_of(u.affected[0]);
    double total = 0.0;
    for (const auto& dom : u.introduced) total += static_cast<double>(dom.tokens);
    for (const auto& dom : u.introduced) {
      split.emplace_back(post.index_of(dom.id), static_cast<double>(dom.tokens) / total);
    }
  }
  std::vector<Mixture> remapped;
  remapped.reserve(data.mixtures.size());
  for (const auto& mix : data.mixtures) {
    std::vector<double> w(post.size(), 0.0);
    for (std::size_t j = 0; j < pre.size(); ++j) {
      const std::string& id = pre.at(j).id;
      if (static_cast<int>(j) == parent_idx) {
        for (const auto& [ci, frac] : split) w[ci] = mix[j] * frac;
      } else if (post.contains(id)) {
        w[post.index_of(id)] = mix[j];
      }
    }
    remapped.emplace_back(post.version(), std::move(w));
  }
  data.mixtures = std::move(remapped);
  data.over_version = post.version();
  data.domain_ids = post.ids();
  return true;
}

SwarmDataset merge_datasets(const std::vector<SwarmDataset>& batches, const DomainSet& over,
                            const std::vector<std::string>& tasks) {
  SwarmDataset merged;
  merged.over_version = over.version();
  merged.domain_ids = over.ids();
  merged.tasks = tasks;
  std::vector<std::vector<double>> rows;
  for (const auto& batch : batches) {
    for (std::size_t r = 0; r < batch.runs(); ++r) {
      merged.mixtures.push_back(batch.mixtures[r]);
      std::vector<double> row(batch.task_count());
      for (std::size_t t = 0; t < row.size(); ++t) {
        row[t] = batch.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t));
      }
      rows.push_back(std::move(row));
    }
  }
  merged.scores.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(tasks.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t t = 0; t < rows[r].size(); ++t) {
      merged.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = rows[r][t];
    }
  }
  return merged;
}

int cmd_simulate(Ctx& ctx, const std::string& chain_path, const std::string& strategy, int c,
                 bool count_only, const std::string& oracle_flag, double lambda,
                 std::optional<RepetitionBudget> budget) {
  ctx.note_input(chain_path);
  const ChainScript chain = load_chain(chain_path);

  const std::vector<StageCount> counts = count_runs(chain, strategy, c);
  std::ostringstream frontier;
  frontier << "stage,name,dim,fresh_runs,cumulative_runs";
  if (!count_only) frontier << ",truth_value";
  frontier << "\n";

  if (count_only) {
    int cumulative = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      cumulative += counts[i].fresh;
      frontier << i << "," << counts[i].name << "," << counts[i].dim << "," << counts[i].fresh
               << "," << cumulative << "\n";
    }
    ctx.write_output("frontier.csv", frontier.str());
    ojson totals;
    totals["strategy"] = strategy;
    totals["c"] = c;
    int total = 0;
    for (const auto& s : counts) total += s.fresh;
    totals["total_runs"] = total;
    ctx.write_output("totals.json", totals.dump(2) + "\n");
    ctx.finish();
    return kExitOk;
  }

  OracleSource src = parse_oracle(oracle_flag, ctx);
  if (src.kind == OracleSource::Kind::Results) {
    throw Error(Error::Kind::InvalidArgument,
                "simulate needs a synthetic or random oracle; results files cover one swarm only");
  }
  if (src.kind == OracleSource::Kind::Random) {
    std::set<std::string> all_ids;
    DomainSet cur = chain.initial;
    for (const auto& id : cur.ids()) all_ids.insert(id);
    for (const auto& s : chain.stages) {
      const UpdateResult applied = apply_update(cur, s.update);
      cur = applied.set;
      for (const auto& id : cur.ids()) all_ids.insert(id);
    }
    src.truth = make_random_truth(std::vector<std::string>(all_ids.begin(), all_ids.end()),
                                  {"math", "code", "qa", "lm"}, 0.0, ctx.seed);
  }
  const GroundTruthModel& truth = src.truth;

  DomainSet current = chain.initial;
  Mixture current_mix;
  int cumulative = 0;
  std::vector<std::string> all_warnings;
  std::vector<SwarmDataset> pool;  // swarm-reuse only

  auto record_stage = [&](std::size_t idx, const std::string& name, int dim, int fresh,
                          const Mixture& mix, const DomainSet& over) {
    cumulative += fresh;
    const GroundTruthModel aligned = truth.restricted_to(over.ids());
    const double value = aligned.objective().value(
        Eigen::Map<const Eigen::VectorXd>(mix.weights().data(), mix.size()));
    frontier << idx << "," << name << "," << dim << "," << fresh << "," << cumulative << ","
             << value << "\n";
    ctx.write_output("mixture_" + std::to_string(idx) + ".json",
                     mixture_to_json(mix, over.ids()));
  };

  PipelineConfig pcfg;
  pcfg.lambda = lambda;
  pcfg.budget = budget;

  // Stage 0: full recomputation on the initial set for every strategy.
  {
    pcfg.count = counts[0].fresh;
    pcfg.seed = substream_seed(ctx.seed, 0);
    pcfg.fit.seed = pcfg.seed;
    const PipelineResult res = run_base_pipeline_synthetic(current, truth, pcfg);
    current_mix = res.proposed;
    for (const auto& w : res.warnings) all_warnings.push_back("initial: " + w);
    record_stage(0, "initial", counts[0].dim, counts[0].fresh, current_mix, current);
    if (strategy == "swarm-reuse") pool.push_back(res.data);
  }

  for (std::size_t si = 0; si < chain.stages.size(); ++si) {
    const ChainStage& stage = chain.stages[si];
    const UpdateResult applied = apply_update(current, stage.update);
    const int fresh = counts[si + 1].fresh;
    pcfg.seed = substream_seed(ctx.seed, si + 1);
    pcfg.fit.seed = pcfg.seed;
    pcfg.count = fresh;

    if (strategy == "full-recompute") {
      const PipelineResult res = run_base_pipeline_synthetic(applied.set, truth, pcfg);
      current_mix = res.proposed;
      for (const auto& w : res.warnings) all_warnings.push_back(stage.name + ": " + w);
    } else if (strategy == "full-reuse" || strategy == "partial-reuse") {
      const std::vector<std::string> moved =
          strategy == "partial-reuse" ? stage.partial_recompute : std::vector<std::string>{};
      if (strategy == "full-reuse" && stage.update.kind == UpdateKind::Remove) {
        current_mix = renormalize_remove(current_mix, current.ids(), stage.update.affected);
      } else {
        const ReusePlan plan = make_reuse_plan(current, current_mix, applied, moved);
        ReuseConfig rcfg;
        rcfg.swarm_count = fresh;
        rcfg.sampler_seed = pcfg.seed;
        rcfg.fit.seed = pcfg.seed;
        rcfg.budget = budget;
        rcfg.lambda = lambda;
        const ReuseOutcome res =
            full_mix_reuse(plan, rcfg, truth.tasks, truth_oracle(truth, splitmix64(pcfg.seed)));
        current_mix = res.proposed;
        for (const auto& w : res.warnings) all_warnings.push_back(stage.name + ": " + w);
      }
    } else if (strategy == "swarm-reuse") {
      std::vector<SwarmDataset> survivors;
      for (auto& batch : pool) {
        if (remap_dataset(batch, current, stage.update, applied.set)) {
          survivors.push_back(std::move(batch));
        } else {
          all_warnings.push_back(stage.name + ": dropped a swarm batch that drew from " +
                                 to_string(stage.update.kind) + "d domains");
        }
      }
      pool = std::move(survivors);

      if (fresh > 0) {
        SwarmConfig scfg;
        scfg.count = fresh;
        scfg.prior = natural_distribution(applied.set);
        scfg.seed = pcfg.seed;
        const auto mixes = sample_swarm(applied.set, scfg);
        pool.push_back(evaluate_oracle_swarm(applied.set, mixes, truth, splitmix64(pcfg.seed)));
      }
      const SwarmDataset merged = merge_datasets(pool, applied.set, truth.tasks);
      const PipelineResult res = run_base_pipeline(applied.set, merged, pcfg);
      current_mix = res.proposed;
      for (const auto& w : res.warnings) all_warnings.push_back(stage.name + ": " + w);
    } else {
      throw Error(Error::Kind::InvalidArgument, "unknown strategy: " + strategy);
    }

    current = applied.set;
    record_stage(si + 1, stage.name, counts[si + 1].dim, fresh, current_mix, current);
  }

  ctx.write_output("frontier.csv", frontier.str());
  ctx.manifest.warnings = all_warnings;
  ctx.finish();
  return kExitOk;
}

// --- validate: theorem audit campaign ----------------------------------------------

class NegatedObjective : public Objective {
 public:
  explicit NegatedObjective(const Objective& inner) : inner_(inner) {}
  int dim() const override { return inner_.dim(); }
  double value(const Eigen::VectorXd& p) const override { return -inner_.value(p); }
  double value_grad(const Eigen::VectorXd& p, Eigen::VectorXd& g) const override {
    const double v = inner_.value_grad(p, g);
    g = -g;
    return -v;
  }

 private:
  const Objective& inner_;
};

int cmd_validate(Ctx& ctx, int instances, int m_fix, int m_add, int n_tasks, bool budget_grid) {
  std::ostringstream csv;
  csv << "instance,variant,mu,kappa,reuse_gap,performance_gap,rho_star,bound,holds,"
         "mutually_feasible\n";

  int t1_holds = 0, t2_holds = 0, monotone = 0, t1_total = 0;
  int grid_ordering_matches = 0;
  double sum_one_minus_rho_relaxed = 0.0, sum_one_minus_rho_tight = 0.0;

  for (int inst = 0; inst < instances; ++inst) {
    const std::uint64_t iseed = substream_seed(ctx.seed, inst);
    std::vector<std::string> ids, tasks;
    std::vector<Domain> pre_doms;
    for (int j = 0; j < m_fix; ++j) {
      ids.push_back("f" + std::to_string(j));
      pre_doms.push_back({ids.back(), 1000});
    }
    for (int j = 0; j < m_add; ++j) ids.push_back("n" + std::to_string(j));
    for (int i = 0; i < n_tasks; ++i) tasks.push_back("t" + std::to_string(i));
    const GroundTruthModel truth = make_random_truth(ids, tasks, 0.0, iseed);

    const DomainSet pre(pre_doms);
    const TruthOptimum pre_opt =
        truth_optimum(truth.restricted_to(pre.ids()), {}, 0.0, Mixture());

    DomainUpdate u;
    u.kind = UpdateKind::Add;
    for (int j = 0; j < m_add; ++j) u.introduced.push_back({"n" + std::to_string(j), 800});
    const UpdateResult applied = apply_update(pre, u);
    const ReusePlan plan =
        make_reuse_plan(pre, Mixture(pre.version(), pre_opt.mixture.weights()), applied);

    // Reuse-gap bound at the pre-update optimum.
    const Theorem2Audit t2 = theorem2_bound(truth, plan, UpdateKind::Add, std::nullopt, 0.0,
                                            substream_seed(iseed, 1));
    if (t2.holds) ++t2_holds;
    csv << inst << ",optimal-t2," << t2.mu1 << "," << t2.kappa << "," << t2.reuse_gap << ",,"
        << t2.rho_star << "," << t2.bound << "," << (t2.holds ? 1 : 0) << ",1\n";

    // Weak / intermediate / optimal frozen ratios for the performance bound.
    const GroundTruthModel aligned = truth.restricted_to(applied.set.ids());
    const LogLinearAggregate obj = aligned.objective();
    const TruthOptimum full = truth_optimum(aligned, {}, 0.0, Mixture());
    auto fix_part = [&](const Mixture& q) {
      std::vector<double> part;
      double mass = 0.0;
      for (const auto& id : plan.d_fix) {
        part.push_back(q[applied.set.index_of(id)]);
        mass += part.back();
      }
      for (double& w : part) w /= mass;
      return part;
    };
    const std::vector<double> opt_fix = fix_part(full.mixture);

    const NegatedObjective neg(obj);
    SolveSpec weak_spec;
    weak_spec.tol = 1e-10;
    weak_spec.max_iters = 200000;
    const SolveResult weak_sol = solve_exact(neg, weak_spec);
    const Mixture weak_mix(
        applied.set.version(),
        std::vector<double>(weak_sol.point.data(), weak_sol.point.data() + weak_sol.point.size()));
    const std::vector<double> weak_fix = fix_part(weak_mix);
    std::vector<double> inter_fix(weak_fix.size());
    for (std::size_t j = 0; j < weak_fix.size(); ++j) {
      inter_fix[j] = 0.5 * (weak_fix[j] + opt_fix[j]);
    }

    double gaps[3] = {0, 0, 0};
    const char* names[3] = {"optimal", "intermediate", "weak"};
    const std::vector<double>* frozen[3] = {&opt_fix, &inter_fix, &weak_fix};
    for (int v = 0; v < 3; ++v) {
      ReusePlan variant = plan;
      variant.frozen_fix = *frozen[v];
      const Theorem1Audit t1 = theorem1_constant(truth, variant, std::nullopt, 0.0,
                                                 substream_seed(iseed, 2 + v));
      ++t1_total;
      if (t1.holds && t1.mutually_feasible) ++t1_holds;
      gaps[v] = t1.performance_gap;
      csv << inst << "," << names[v] << "," << t1.mu << "," << t1.kappa << "," << t1.reuse_gap
          << "," << t1.performance_gap << "," << t1.rho_star << "," << t1.bound << ","
          << (t1.holds ? 1 : 0) << "," << (t1.mutually_feasible ? 1 : 0) << "\n";
    }
    if (gaps[2] >= gaps[1] - 1e-9 && gaps[1] >= gaps[0] - 1e-9) ++monotone;

    if (budget_grid) {
      // A tighter budget (more requested tokens against the same data) pins
      // the proposed mix nearer the natural distribution.
      const RepetitionBudget relaxed(4.0, 2000);
      const RepetitionBudget tight(4.0, 10000);
      double one_minus_rho[2];
      double reuse_gaps[2];
      const RepetitionBudget* budgets[2] = {&relaxed, &tight};
      for (int b = 0; b < 2; ++b) {
        std::vector<Domain> pre_big = pre_doms;
        for (auto& dom : pre_big) dom.tokens = 4000;
        const DomainSet pre_b(pre_big);
        const TruthOptimum popt =
            truth_optimum(truth.restricted_to(pre_b.ids()),
                          repetition_caps(pre_b, *budgets[b]).caps, 0.0, Mixture());
        DomainUpdate ub;
        ub.kind = UpdateKind::Add;
        for (int j = 0; j < m_add; ++j) ub.introduced.push_back({"n" + std::to_string(j), 900});
        const UpdateResult applied_b = apply_update(pre_b, ub);
        const ReusePlan plan_b =
            make_reuse_plan(pre_b, Mixture(pre_b.version(), popt.mixture.weights()), applied_b);
        const Theorem2Audit audit = theorem2_bound(truth, plan_b, UpdateKind::Add, *budgets[b],
                                                   0.0, substream_seed(iseed, 10 + b));
        one_minus_rho[b] = 1.0 - audit.rho_star;
        reuse_gaps[b] = audit.reuse_gap;
        csv << inst << "," << (b == 0 ? "grid-relaxed" : "grid-tight") << "," << audit.mu1 << ","
            << audit.kappa << "," << audit.reuse_gap << ",," << audit.rho_star << ","
            << audit.bound << "," << (audit.holds ? 1 : 0) << ",1\n";
      }
      sum_one_minus_rho_relaxed += one_minus_rho[0];
      sum_one_minus_rho_tight += one_minus_rho[1];
      if ((one_minus_rho[0] >= one_minus_rho[1]) == (reuse_gaps[0] >= reuse_gaps[1])) {
        ++grid_ordering_matches;
      }
    }
  }

  ctx.write_output("audit.csv", csv.str());
  ojson summary;
  summary["instances"] = instances;
  summary["theorem1_holds"] = t1_holds;
  summary["theorem1_audits"] = t1_total;
  summary["theorem2_holds"] = t2_holds;
  summary["monotone_instances"] = monotone;
  if (budget_grid) {
    summary["grid_mean_one_minus_rho_relaxed"] = sum_one_minus_rho_relaxed / instances;
    summary["grid_mean_one_minus_rho_tight"] = sum_one_minus_rho_tight / instances;
    summary["grid_ordering_matches"] = grid_ordering_matches;
  }
  ctx.write_output("summary.json", summary.dump(2) + "\n");
  ctx.finish();
  return kExitOk;
}

// --- reuse command: stateful chain directory ----------------------------------------

struct ChainState {
  int stage = 0;
  DomainSet domains;
  Mixture mixture;
  std::vector<std::string> pool_files;  // swarm csvs over the current set
};

ChainState load_chain_state(const std::string& dir) {
  const ojson j = ojson::parse(read_text((fs::path(dir) / "state.json").string()));
  ChainState st;
  st.stage = j.at("stage").get<int>();
  st.domains = domain_set_from_json(j.at("domains").dump());
  st.mixture = Mixture(st.domains.version(), j.at("mixture").get<std::vector<double>>());
  if (j.contains("pool")) st.pool_files = j["pool"].get<std::vector<std::string>>();
  return st;
}

void save_chain_state(const std::string& dir, const ChainState& st) {
  ojson j;
  j["stage"] = st.stage;
  j["domains"] = ojson::parse(domain_set_to_json(st.domains));
  j["mixture"] = st.mixture.weights();
  j["pool"] = st.pool_files;
  std::ofstream out((fs::path(dir) / "state.json").string(), std::ios::binary | std::ios::trunc);
  out << j.dump(2) + "\n";
}

int cmd_reuse(Ctx& ctx, const std::string& chain_dir, const std::string& init_domains,
              const std::string& init_mixture, const std::string& update_path,
              const std::string& strategy, const std::string& oracle_flag, int c, double lambda,
              std::optional<RepetitionBudget> budget, int fresh_override) {
  fs::create_directories(chain_dir);
  if (ctx.out_dir.empty()) ctx.out_dir = chain_dir;

  if (!init_domains.empty()) {
    ctx.note_input(init_domains);
    ctx.note_input(init_mixture);
    ChainState st;
    st.domains = load_domain_set(init_domains);
    const Mixture loaded = load_mixture(init_mixture);
    if (loaded.size() != st.domains.size()) {
      throw Error(Error::Kind::DimensionMismatch, "initial mixture does not match domain set");
    }
    st.mixture = Mixture(st.domains.version(), loaded.weights());
    save_chain_state(chain_dir, st);
    std::cout << "chain initialized at stage 0 with " << st.domains.size() << " domains\n";
    ctx.finish();
    return kExitOk;
  }

  ChainState st = load_chain_state(chain_dir);
  ctx.note_input(update_path);
  const DomainUpdate update = load_update(update_path);
  const UpdateResult applied = apply_update(st.domains, update);

  const OracleSource src = parse_oracle(oracle_flag, ctx);
  if (src.kind != OracleSource::Kind::Synthetic) {
    throw Error(Error::Kind::InvalidArgument, "reuse currently supports synthetic oracles");
  }
  const GroundTruthModel& truth = src.truth;
  const std::uint64_t stage_seed = substream_seed(ctx.seed, st.stage + 1);

  Mixture proposed;
  int fresh_used = 0;

  std::string base_strategy = strategy;
  std::vector<std::string> moved;
  if (strategy.rfind("partial-reuse:", 0) == 0) {
    base_strategy = "partial-reuse";
    std::stringstream ss(strategy.substr(14));
    std::string id;
    while (std::getline(ss, id, ',')) {
      if (!id.empty()) moved.push_back(id);
    }
  }

  if (base_strategy == "full-recompute") {
    PipelineConfig pcfg;
    pcfg.count = fresh_override > 0 ? fresh_override
                                    : schedule_k(c, static_cast<int>(applied.set.size()));
    pcfg.lambda = lambda;
    pcfg.budget = budget;
    pcfg.seed = stage_seed;
    pcfg.fit.seed = stage_seed;
    const PipelineResult res = run_base_pipeline_synthetic(applied.set, truth, pcfg);
    proposed = res.proposed;
    fresh_used = pcfg.count;
    ctx.manifest.warnings = res.warnings;
    st.pool_files.clear();
  } else if (base_strategy == "full-reuse" || base_strategy == "partial-reuse") {
    if (base_strategy == "full-reuse" && update.kind == UpdateKind::Remove) {
      proposed = renormalize_remove(st.mixture, st.domains.ids(), update.affected);
    } else {
      const ReusePlan plan = make_reuse_plan(st.domains, st.mixture, applied, moved);
      ReuseConfig rcfg;
      rcfg.swarm_count = fresh_override > 0
                             ? fresh_override
                             : schedule_k(c, static_cast<int>(plan.collapsed_dim()));
      rcfg.sampler_seed = stage_seed;
      rcfg.fit.seed = stage_seed;
      rcfg.budget = budget;
      rcfg.lambda = lambda;
      const ReuseOutcome res =
          base_strategy == "full-reuse"
              ? full_mix_reuse(plan, rcfg, truth.tasks,
                               truth_oracle(truth, splitmix64(stage_seed)))
              : partial_mix_reuse(plan, applied.unaffected, rcfg, truth.tasks,
                                  truth_oracle(truth, splitmix64(stage_seed)));
      proposed = res.proposed;
      fresh_used = rcfg.swarm_count;
      ctx.manifest.warnings = res.warnings;
    }
    st.pool_files.clear();
  } else if (base_strategy == "swarm-reuse") {
    std::vector<SwarmDataset> pool;
    for (const auto& file : st.pool_files) {
      const std::string path = (fs::path(chain_dir) / file).string();
      ctx.note_input(path);
      pool.push_back(ingest_results(path, st.domains));
    }
    std::vector<SwarmDataset> survivors;
    for (auto& batch : pool) {
      if (remap_dataset(batch, st.domains, update, applied.set)) {
        survivors.push_back(std::move(batch));
      } else {
        ctx.manifest.warnings.push_back(
            "dropped a swarm batch that drew from the updated domains; sampling fresh");
      }
    }
    int usable = 0;
    for (const auto& b : survivors) usable += static_cast<int>(b.runs());
    const int target = schedule_k(c, static_cast<int>(applied.set.size()));
    const int identifiable = static_cast<int>(applied.set.size()) + 1;
    const int fresh = fresh_override > 0
                          ? fresh_override
                          : std::max(target - usable, std::max(identifiable - usable, 0));
    if (fresh > 0) {
      SwarmConfig scfg;
      scfg.count = fresh;
      scfg.prior = natural_distribution(applied.set);
      scfg.seed = stage_seed;
      const auto mixes = sample_swarm(applied.set, scfg);
      survivors.push_back(
          evaluate_oracle_swarm(applied.set, mixes, truth, splitmix64(stage_seed)));
    }
    const SwarmDataset merged = merge_datasets(survivors, applied.set, truth.tasks);
    PipelineConfig pcfg;
    pcfg.lambda = lambda;
    pcfg.budget = budget;
    pcfg.seed = stage_seed;
    pcfg.fit.seed = stage_seed;
    const PipelineResult res = run_base_pipeline(applied.set, merged, pcfg);
    proposed = res.proposed;
    fresh_used = fresh;
    for (const auto& w : res.warnings) ctx.manifest.warnings.push_back(w);

    const std::string pool_name = "pool_stage_" + std::to_string(st.stage + 1) + ".csv";
    write_results_csv(merged, (fs::path(chain_dir) / pool_name).string());
    ctx.note_output_file((fs::path(chain_dir) / pool_name).string());
    st.pool_files = {pool_name};
  } else {
    throw Error(Error::Kind::InvalidArgument, "unknown strategy: " + strategy);
  }

  st.stage += 1;
  st.domains = applied.set;
  st.mixture = Mixture(applied.set.version(), proposed.weights());
  save_chain_state(chain_dir, st);

  ojson out;
  out["stage"] = st.stage;
  out["strategy"] = strategy;
  out["fresh_runs"] = fresh_used;
  out["ids"] = applied.set.ids();
  out["weights"] = st.mixture.weights();
  ctx.write_output("stage_" + std::to_string(st.stage) + "_mixture.json", out.dump(2) + "\n");
  ctx.finish();
  return kExitOk;
}

std::optional<RepetitionBudget> make_budget(double k, std::uint64_t tokens) {
  if (k <= 0.0 && tokens == 0) return std::nullopt;
  if (k <= 0.0 || tokens == 0) {
    throw Error(Error::Kind::InvalidArgument,
                "--budget-k and --budget-tokens must be given together");
  }
  return RepetitionBudget(k, tokens);
}

std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string id;
  while (std::getline(ss, id, ',')) {
    if (!id.empty()) out.push_back(id);
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"data mixture optimization workbench"};
  app.require_subcommand(1);

  Ctx ctx;
  app.add_option("--seed", ctx.seed, "global random seed");
  app.add_option("--out-dir", ctx.out_dir, "output directory");
  app.add_option("--format", ctx.format, "report format: json or csv");

  auto* sample = app.add_subcommand("sample", "draw swarm mixtures");
  std::string sample_domains, swarm_out = "swarm.json", prior_flag = "natural";
  int sample_count = 0;
  double concentration = 0.0, sparse_threshold = 0.0;
  double sample_budget_k = 0.0;
  std::uint64_t sample_budget_tokens = 0;
  sample->add_option("--domains", sample_domains)->required();
  sample->add_option("--count,-K", sample_count)->required();
  sample->add_option("--prior", prior_flag, "natural or a mixture json path");
  sample->add_option("--concentration", concentration);
  sample->add_option("--sparse", sparse_threshold, "sparse clipping threshold");
  sample->add_option("--budget-k", sample_budget_k);
  sample->add_option("--budget-tokens", sample_budget_tokens);
  sample->add_option("--swarm-out", swarm_out);

  auto* fit = app.add_subcommand("fit", "fit surrogate models from a results csv");
  std::string fit_results, fit_domains, fit_family = "log-linear", fit_gran = "per-task";
  std::string fit_out = "models.json";
  int fit_restarts = 8;
  double fit_token_scale = 10.0;
  fit->add_option("--results", fit_results)->required();
  fit->add_option("--domains", fit_domains)->required();
  fit->add_option("--family", fit_family);
  fit->add_option("--granularity", fit_gran);
  fit->add_option("--restarts", fit_restarts);
  fit->add_option("--token-scale", fit_token_scale);
  fit->add_option("--out", fit_out);

  auto* optimize = app.add_subcommand("optimize", "solve the mixture problem for fitted models");
  std::string opt_models, opt_spec, opt_out = "mixture.json";
  optimize->add_option("--models", opt_models)->required();
  optimize->add_option("--spec", opt_spec)->required();
  optimize->add_option("--out", opt_out);

  auto* base = app.add_subcommand("base", "swarm -> regression -> optimization pipeline");
  std::string base_domains, base_oracle, base_family = "log-linear", base_gran = "per-task";
  int base_count = 0, base_c = 3;
  double base_lambda = 0.05, base_sparse = 0.0, base_token_scale = 10.0;
  double base_budget_k = 0.0;
  std::uint64_t base_budget_tokens = 0;
  base->add_option("--domains", base_domains)->required();
  base->add_option("--oracle", base_oracle)->required();
  base->add_option("--count,-K", base_count, "explicit swarm size");
  base->add_option("--c", base_c, "swarm-size multiplier when --count is absent");
  base->add_option("--family", base_family);
  base->add_option("--granularity", base_gran);
  base->add_option("--lambda", base_lambda);
  base->add_option("--sparse", base_sparse);
  base->add_option("--token-scale", base_token_scale);
  base->add_option("--budget-k", base_budget_k);
  base->add_option("--budget-tokens", base_budget_tokens);

  auto* reuse = app.add_subcommand("reuse", "apply one domain update to a mixing chain");
  std::string reuse_chain, reuse_update, reuse_strategy = "full-reuse", reuse_oracle;
  std::string reuse_init_domains, reuse_init_mixture;
  int reuse_c = 3, reuse_fresh = 0;
  double reuse_lambda = 0.05, reuse_budget_k = 0.0;
  std::uint64_t reuse_budget_tokens = 0;
  reuse->add_option("--chain", reuse_chain)->required();
  reuse->add_option("--init-domains", reuse_init_domains);
  reuse->add_option("--init-mixture", reuse_init_mixture);
  reuse->add_option("--update", reuse_update);
  reuse->add_option("--strategy", reuse_strategy,
                    "full-recompute | full-reuse | partial-reuse:<ids> | swarm-reuse");
  reuse->add_option("--oracle", reuse_oracle);
  reuse->add_option("--c", reuse_c);
  reuse->add_option("--fresh", reuse_fresh, "override the fresh-run count");
  reuse->add_option("--lambda", reuse_lambda);
  reuse->add_option("--budget-k", reuse_budget_k);
  reuse->add_option("--budget-tokens", reuse_budget_tokens);

  auto* simulate = app.add_subcommand("simulate", "run a development chain end to end");
  std::string sim_chain, sim_strategy = "full-recompute", sim_oracle = "random";
  int sim_c = 3;
  bool sim_count_only = false;
  double sim_lambda = 0.05, sim_budget_k = 0.0;
  std::uint64_t sim_budget_tokens = 0;
  simulate->add_option("--chain", sim_chain)->required();
  simulate->add_option("--strategy", sim_strategy);
  simulate->add_option("--c", sim_c);
  simulate->add_flag("--count-only", sim_count_only, "run-count accounting only");
  simulate->add_option("--oracle", sim_oracle);
  simulate->add_option("--lambda", sim_lambda);
  simulate->add_option("--budget-k", sim_budget_k);
  simulate->add_option("--budget-tokens", sim_budget_tokens);

  auto* validate = app.add_subcommand("validate", "theorem bound audit campaign");
  int val_instances = 100, val_mfix = 4, val_madd = 2, val_tasks = 10;
  bool val_grid = false;
  validate->add_option("--instances", val_instances);
  validate->add_option("--m-fix", val_mfix);
  validate->add_option("--m-add", val_madd);
  validate->add_option("--tasks", val_tasks);
  validate->add_flag("--budget-grid", val_grid, "compare relaxed vs tight budgets");

  auto* tv = app.add_subcommand("tv", "total variation distance between two mixtures");
  std::string tv_a, tv_b, tv_table, tv_col_a, tv_col_b;
  tv->add_option("--a", tv_a);
  tv->add_option("--b", tv_b);
  tv->add_option("--table", tv_table, "named-mixture table json");
  tv->add_option("--col-a", tv_col_a);
  tv->add_option("--col-b", tv_col_b);

  auto* kappa = app.add_subcommand("kappa", "coupling diagnostics for log-linear models");
  std::string kp_models, kp_truth, kp_fix, kp_comp, kp_unaffected, kp_affected;
  bool kp_rank = false;
  kappa->add_option("--models", kp_models);
  kappa->add_option("--truth", kp_truth);
  kappa->add_option("--fix", kp_fix, "comma-separated reused ids");
  kappa->add_option("--comp", kp_comp, "comma-separated recomputed ids");
  kappa->add_flag("--rank", kp_rank, "rank unaffected ids by coupling reduction");
  kappa->add_option("--unaffected", kp_unaffected);
  kappa->add_option("--affected", kp_affected);

  std::vector<const char*> argv;
  argv.push_back("mixopt");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    std::string line = "mixopt";
    for (const auto& a : args) line += " " + a;
    ctx.manifest.command_line = line;

    if (*sample) {
      ctx.note_input(sample_domains);
      const DomainSet d = load_domain_set(sample_domains);
      SwarmConfig cfg;
      cfg.count = sample_count;
      cfg.seed = ctx.seed;
      cfg.concentration = concentration;
      if (prior_flag == "natural") {
        cfg.prior = natural_distribution(d);
      } else {
        ctx.note_input(prior_flag);
        const Mixture loaded = load_mixture(prior_flag);
        cfg.prior = Mixture(d.version(), loaded.weights());
      }
      if (sparse_threshold > 0.0) {
        cfg.sparsity = Sparsity::Sparse;
        cfg.sparse_threshold = sparse_threshold;
      }
      cfg.constrained = make_budget(sample_budget_k, sample_budget_tokens);
      const auto swarm = sample_swarm(d, cfg);
      ctx.write_output(swarm_out, swarm_manifest_to_json(d, cfg, swarm));
      ctx.finish();
      return kExitOk;
    }

    if (*fit) {
      ctx.note_input(fit_results);
      ctx.note_input(fit_domains);
      const DomainSet d = load_domain_set(fit_domains);
      const SwarmDataset data = ingest_results(fit_results, d);
      FitConfig fcfg;
      fcfg.restarts = fit_restarts;
      fcfg.seed = ctx.seed;
      fcfg.token_scale = fit_token_scale;
      const auto models =
          fit_models(data, parse_granularity(fit_gran), family_from_string(fit_family), fcfg);
      ctx.write_output(fit_out, models_to_json(models, d.ids()));
      ctx.finish();
      const bool trouble = std::any_of(models.begin(), models.end(),
                                       [](const TaskModel& m) { return !m.diag.converged; });
      return trouble ? kExitNonConverged : kExitOk;
    }

    if (*optimize) {
      ctx.note_input(opt_models);
      ctx.note_input(opt_spec);
      std::vector<std::string> ids;
      const auto models = load_models(opt_models, &ids);
      std::set<std::string> tasks_set;
      for (const auto& m : models) tasks_set.insert(m.covers.begin(), m.covers.end());
      const std::vector<std::string> tasks(tasks_set.begin(), tasks_set.end());
      const auto objective = aggregate_objective(models, tasks);

      const ojson sj = ojson::parse(read_text(opt_spec));
      SolveSpec spec;
      spec.lambda = sj.value("lambda", 0.0);
      if (sj.contains("anchor")) spec.anchor = sj["anchor"].get<std::vector<double>>();
      if (sj.contains("caps")) spec.caps = sj["caps"].get<std::vector<double>>();
      spec.solver = sj.value("solver", std::string("exact")) == "search" ? SolverKind::Search
                                                                          : SolverKind::Exact;
      spec.tol = sj.value("tol", 1e-8);
      spec.max_iters = sj.value("max_iters", 50000);
      spec.candidates = sj.value("candidates", 512);
      spec.rounds = sj.value("rounds", 3);
      spec.seed = sj.value("seed", ctx.seed);
      const bool has_gp = std::any_of(models.begin(), models.end(), [](const TaskModel& m) {
        return m.family == Family::GaussianProcess;
      });
      if (has_gp) spec.solver = SolverKind::Search;  // non-convex surrogate
      const SolveResult sol = solve(*objective, spec);

      ojson out;
      out["ids"] = ids;
      out["weights"] =
          std::vector<double>(sol.point.data(), sol.point.data() + sol.point.size());
      out["objective_value"] = sol.value;
      out["active_caps"] = sol.diag.active_caps;
      out["iterations"] = sol.diag.iterations;
      out["converged"] = sol.diag.converged && !sol.diag.stalled;
      ctx.write_output(opt_out, out.dump(2) + "\n");
      ctx.finish();
      return sol.diag.stalled ? kExitNonConverged : kExitOk;
    }

    if (*base) {
      ctx.note_input(base_domains);
      const DomainSet d = load_domain_set(base_domains);
      PipelineConfig pcfg;
      pcfg.count = base_count;
      pcfg.multiplier = base_c;
      pcfg.granularity = parse_granularity(base_gran);
      pcfg.family = family_from_string(base_family);
      pcfg.lambda = base_lambda;
      pcfg.budget = make_budget(base_budget_k, base_budget_tokens);
      if (base_sparse > 0.0) {
        pcfg.sparsity = Sparsity::Sparse;
        pcfg.sparse_threshold = base_sparse;
      }
      pcfg.seed = ctx.seed;
      pcfg.fit.seed = ctx.seed;
      pcfg.fit.token_scale = base_token_scale;

      const OracleSource src = parse_oracle(base_oracle, ctx);
      PipelineResult res;
      if (src.kind == OracleSource::Kind::Results) {
        const SwarmDataset data = ingest_results(src.results_path, d);
        res = run_base_pipeline(d, data, pcfg);
      } else if (src.kind == OracleSource::Kind::Synthetic) {
        res = run_base_pipeline_synthetic(d, src.truth, pcfg);
      } else {
        const GroundTruthModel truth =
            make_random_truth(d.ids(), {"math", "code", "qa", "lm"}, 0.0, ctx.seed);
        res = run_base_pipeline_synthetic(d, truth, pcfg);
      }
      if (ctx.out_dir.empty()) {
        throw Error(Error::Kind::InvalidArgument, "--out-dir required");
      }
      fs::create_directories(ctx.out_dir);
      const std::string swarm_path = (fs::path(ctx.out_dir) / "swarm.csv").string();
      write_results_csv(res.data, swarm_path);
      ctx.note_output_file(swarm_path);
      ctx.write_output("models.json", models_to_json(res.models, d.ids()));
      ctx.write_output("mixture.json", mixture_report_json(res.proposed, d.ids(), res));
      ctx.manifest.warnings = res.warnings;
      ctx.finish();
      return exit_code_for(res);
    }

    if (*reuse) {
      return cmd_reuse(ctx, reuse_chain, reuse_init_domains, reuse_init_mixture, reuse_update,
                       reuse_strategy, reuse_oracle, reuse_c, reuse_lambda,
                       make_budget(reuse_budget_k, reuse_budget_tokens), reuse_fresh);
    }

    if (*simulate) {
      return cmd_simulate(ctx, sim_chain, sim_strategy, sim_c, sim_count_only, sim_oracle,
                          sim_lambda, make_budget(sim_budget_k, sim_budget_tokens));
    }

    if (*validate) {
      return cmd_validate(ctx, val_instances, val_mfix, val_madd, val_tasks, val_grid);
    }

    if (*tv) {
      Mixture a, b;
      if (!tv_table.empty()) {
        ctx.note_input(tv_table);
        const ojson j = ojson::parse(read_text(tv_table));
        const std::uint64_t ver = j.value("over_version", std::uint64_t(0));
        const auto& mixes = j.at("mixtures");
        a = Mixture(ver, mixes.at(tv_col_a).get<std::vector<double>>());
        b = Mixture(ver, mixes.at(tv_col_b).get<std::vector<double>>());
      } else {
        ctx.note_input(tv_a);
        ctx.note_input(tv_b);
        a = Mixture(0, load_mixture(tv_a).weights());
        b = Mixture(0, load_mixture(tv_b).weights());
      }
      const double dist = tv_distance(a, b);
      if (ctx.format == "csv") {
        std::cout << "tv_distance\n" << dist << "\n";
      } else {
        ojson out;
        out["tv_distance"] = dist;
        std::cout << out.dump(2) << "\n";
      }
      if (!ctx.out_dir.empty()) {
        ojson out;
        out["tv_distance"] = dist;
        ctx.write_output("tv.json", out.dump(2) + "\n");
        ctx.finish();
      }
      return kExitOk;
    }

    if (*kappa) {
      Eigen::MatrixXd slopes;
      std::vector<std::string> ids;
      if (!kp_truth.empty()) {
        ctx.note_input(kp_truth);
        const GroundTruthModel truth = load_truth(kp_truth);
        slopes = truth.slopes;
        ids = truth.domain_ids;
      } else {
        ctx.note_input(kp_models);
        const auto models = load_models(kp_models, &ids);
        slopes.resize(static_cast<Eigen::Index>(models.size()),
                      static_cast<Eigen::Index>(ids.size()));
        for (std::size_t i = 0; i < models.size(); ++i) {
          if (models[i].family != Family::LogLinear) {
            throw Error(Error::Kind::WrongFamily, "kappa needs log-linear models");
          }
          slopes.row(static_cast<Eigen::Index>(i)) = models[i].A.transpose();
        }
      }
      ojson out;
      if (kp_rank) {
        const auto ranked = rank_recompute_candidates(slopes, ids, split_ids(kp_unaffected),
                                                      split_ids(kp_affected));
        out["ranked"] = ojson::array();
        for (const auto& r : ranked) {
          ojson e;
          e["id"] = r.id;
          e["kappa_after"] = r.kappa_after;
          e["delta"] = r.delta;
          out["ranked"].push_back(e);
        }
      } else {
        const CouplingReport rep =
            coupling_kappa(slopes, ids, split_ids(kp_fix), split_ids(kp_comp));
        out["kappa"] = rep.kappa;
        out["alpha_fix"] = std::vector<double>(rep.alpha_fix.data(),
                                               rep.alpha_fix.data() + rep.alpha_fix.size());
        out["alpha_comp"] = std::vector<double>(rep.alpha_comp.data(),
                                                rep.alpha_comp.data() + rep.alpha_comp.size());
        out["per_task"] = std::vector<double>(rep.per_task.data(),
                                              rep.per_task.data() + rep.per_task.size());
      }
      std::cout << out.dump(2) << "\n";
      if (!ctx.out_dir.empty()) {
        ctx.write_output("kappa.json", out.dump(2) + "\n");
        ctx.finish();
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_infeasibility() ? kExitInfeasible : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace mixopt
