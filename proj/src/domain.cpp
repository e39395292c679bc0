#include "mixopt/domain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mixopt {

using ojson = nlohmann::ordered_json;

DomainSet::DomainSet(std::vector<Domain> domains, std::uint64_t version)
    : domains_(std::move(domains)), version_(version) {
  if (domains_.empty()) {
    throw Error(Error::Kind::EmptyDomainSet, "domain set must contain at least one domain");
  }
  std::sort(domains_.begin(), domains_.end(),
            [](const Domain& a, const Domain& b) { return a.id < b.id; });
  total_tokens_ = 0;
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    if (domains_[i].id.empty()) {
      throw Error(Error::Kind::InvalidArgument, "domain id must be nonempty");
    }
    if (i > 0 && domains_[i].id == domains_[i - 1].id) {
      throw Error(Error::Kind::IdCollision, "duplicate domain id: " + domains_[i].id);
    }
    total_tokens_ += domains_[i].tokens;
  }
  if (total_tokens_ == 0) {
    throw Error(Error::Kind::EmptyDomainSet, "at least one domain must have tokens > 0");
  }
}

int DomainSet::index_of(const std::string& id) const {
  auto it = std::lower_bound(
      domains_.begin(), domains_.end(), id,
      [](const Domain& d, const std::string& key) { return d.id < key; });
  if (it == domains_.end() || it->id != id) return -1;
  return static_cast<int>(it - domains_.begin());
}

std::vector<std::string> DomainSet::ids() const {
  std::vector<std::string> out;
  out.reserve(domains_.size());
  for (const auto& d : domains_) out.push_back(d.id);
  return out;
}

Mixture::Mixture(std::uint64_t over_version, std::vector<double> weights)
    : over_version_(over_version), weights_(std::move(weights)) {
  if (weights_.empty()) {
    throw Error(Error::Kind::InvalidArgument, "mixture must have at least one weight");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(Error::Kind::InvalidArgument, "mixture weights must be finite and nonnegative");
    }
    total += w;
  }
  if (total <= 0.0) {
    throw Error(Error::Kind::InvalidArgument, "mixture weights must not all be zero");
  }
  for (double& w : weights_) w /= total;
}

std::string to_string(UpdateKind k) {
  switch (k) {
    case UpdateKind::Add: return "add";
    case UpdateKind::Remove: return "remove";
    case UpdateKind::Partition: return "partition";
    case UpdateKind::Revise: return "revise";
  }
  return "add";
}

UpdateKind update_kind_from_string(const std::string& s) {
  if (s == "add") return UpdateKind::Add;
  if (s == "remove") return UpdateKind::Remove;
  if (s == "partition") return UpdateKind::Partition;
  if (s == "revise") return UpdateKind::Revise;
  throw Error(Error::Kind::SchemaError, "unknown update kind: " + s);
}

void DomainUpdate::validate() const {
  switch (kind) {
    case UpdateKind::Add:
      if (!affected.empty() || introduced.empty()) {
        throw Error(Error::Kind::InvalidArgument, "add: affected must be empty, introduced nonempty");
      }
      break;
    case UpdateKind::Remove:
      if (affected.empty() || !introduced.empty()) {
        throw Error(Error::Kind::InvalidArgument, "remove: introduced must be empty, affected nonempty");
      }
      break;
    case UpdateKind::Partition: {
      if (affected.size() != 1 || introduced.size() < 2) {
        throw Error(Error::Kind::InvalidArgument, "partition: exactly one affected domain, >= 2 children");
      }
      auto it = partition_map.find(affected[0]);
      if (partition_map.size() != 1 || it == partition_map.end() ||
          it->second.size() != introduced.size()) {
        throw Error(Error::Kind::InvalidArgument, "partition: partition_map must map the split domain to all child ids");
      }
      break;
    }
    case UpdateKind::Revise:
      if (affected.size() != 1 || introduced.size() != 1) {
        throw Error(Error::Kind::InvalidArgument, "revise: exactly one affected id and one introduced id");
      }
      break;
  }
}

UpdateResult apply_update(const DomainSet& d, const DomainUpdate& u) {
  u.validate();

  for (const auto& id : u.affected) {
    if (!d.contains(id)) {
      throw Error(Error::Kind::UnknownDomain, "affected id not in domain set: " + id);
    }
  }

  std::set<std::string> removed(u.affected.begin(), u.affected.end());
  std::vector<Domain> next;
  std::vector<std::string> unaffected;
  for (const auto& dom : d.domains()) {
    if (removed.count(dom.id)) continue;
    next.push_back(dom);
    unaffected.push_back(dom.id);
  }

  std::set<std::string> surviving(unaffected.begin(), unaffected.end());
  for (const auto& dom : u.introduced) {
    if (surviving.count(dom.id)) {
      throw Error(Error::Kind::IdCollision, "introduced id collides with surviving domain: " + dom.id);
    }
    if (!surviving.insert(dom.id).second) {
      throw Error(Error::Kind::IdCollision, "introduced id repeated: " + dom.id);
    }
    next.push_back(dom);
  }

  double slack = 0.0;
  if (u.kind == UpdateKind::Partition) {
    const int parent_idx = d.index_of(u.affected[0]);
    const double parent_tokens = static_cast<double>(d.at(parent_idx).tokens);
    double child_tokens = 0.0;
    for (const auto& dom : u.introduced) child_tokens += static_cast<double>(dom.tokens);
    if (parent_tokens <= 0.0) {
      throw Error(Error::Kind::PartitionTokenMismatch, "cannot partition a zero-token domain");
    }
    slack = std::abs(child_tokens - parent_tokens) / parent_tokens;
    // Real partitions lose a little tokenization slack; record it, but more
    // than 0.5% means the update description is wrong.
    if (slack > 0.005) {
      std::ostringstream msg;
      msg << "partition token mismatch: children sum to " << child_tokens
          << " vs parent " << parent_tokens << " (slack " << slack * 100.0 << "%)";
      throw Error(Error::Kind::PartitionTokenMismatch, msg.str());
    }
  }

  UpdateResult out{DomainSet(std::move(next), d.version() + 1), std::move(unaffected), slack};
  return out;
}

Mixture natural_distribution(const DomainSet& d) {
  if (d.total_tokens() == 0) {
    throw Error(Error::Kind::EmptyDomainSet, "natural distribution needs total tokens > 0");
  }
  std::vector<double> w(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    w[i] = static_cast<double>(d.at(i).tokens) / static_cast<double>(d.total_tokens());
  }
  return Mixture(d.version(), std::move(w));
}

CapsResult repetition_caps(const DomainSet& d, const RepetitionBudget& b) {
  CapsResult out;
  out.caps.resize(d.size());
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double raw = b.k * static_cast<double>(d.at(i).tokens) /
                       static_cast<double>(b.requested_tokens);
    out.caps[i] = std::min(1.0, raw);
    total += out.caps[i];
  }
  out.feasible = total >= 1.0;
  return out;
}

// --- JSON ------------------------------------------------------------------

namespace {

ojson domain_set_json(const DomainSet& d) {
  ojson j;
  j["version"] = d.version();
  j["domains"] = ojson::array();
  for (const auto& dom : d.domains()) {
    ojson e;
    e["id"] = dom.id;
    e["tokens"] = dom.tokens;
    j["domains"].push_back(e);
  }
  return j;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Error::Kind::Io, "cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Error::Kind::Io, "cannot write file: " + path);
  out << text;
}

ojson parse(const std::string& text) {
  try {
    return ojson::parse(text);
  } catch (const std::exception& e) {
    throw Error(Error::Kind::SchemaError, std::string("json parse error: ") + e.what());
  }
}

}  // namespace

std::string domain_set_to_json(const DomainSet& d) {
  return domain_set_json(d).dump(2) + "\n";
}

DomainSet domain_set_from_json(const std::string& text) {
  const ojson j = parse(text);
  if (!j.contains("version") || !j.contains("domains") || !j["domains"].is_array()) {
    throw Error(Error::Kind::SchemaError, "domain set json needs version and domains[]");
  }
  std::vector<Domain> doms;
  for (const auto& e : j["domains"]) {
    if (!e.contains("id") || !e.contains("tokens")) {
      throw Error(Error::Kind::SchemaError, "domain entry needs id and tokens");
    }
    doms.push_back({e["id"].get<std::string>(), e["tokens"].get<std::uint64_t>()});
  }
  return DomainSet(std::move(doms), j["version"].get<std::uint64_t>());
}

DomainSet load_domain_set(const std::string& path) {
  return domain_set_from_json(read_file(path));
}

void save_domain_set(const DomainSet& d, const std::string& path) {
  write_file(path, domain_set_to_json(d));
}

std::string update_to_json(const DomainUpdate& u) {
  ojson j;
  j["kind"] = to_string(u.kind);
  j["affected"] = u.affected;
  j["introduced"] = ojson::array();
  for (const auto& dom : u.introduced) {
    ojson e;
    e["id"] = dom.id;
    e["tokens"] = dom.tokens;
    j["introduced"].push_back(e);
  }
  j["partition_map"] = ojson::object();
  for (const auto& [parent, children] : u.partition_map) {
    j["partition_map"][parent] = children;
  }
  return j.dump(2) + "\n";
}

DomainUpdate update_from_json(const std::string& text) {
  const ojson j = parse(text);
  DomainUpdate u;
  if (!j.contains("kind")) throw Error(Error::Kind::SchemaError, "update json needs kind");
  u.kind = update_kind_from_string(j["kind"].get<std::string>());
  if (j.contains("affected")) u.affected = j["affected"].get<std::vector<std::string>>();
  if (j.contains("introduced")) {
    for (const auto& e : j["introduced"]) {
      u.introduced.push_back({e["id"].get<std::string>(), e["tokens"].get<std::uint64_t>()});
    }
  }
  if (j.contains("partition_map")) {
    for (auto it = j["partition_map"].begin(); it != j["partition_map"].end(); ++it) {
      u.partition_map[it.key()] = it.value().get<std::vector<std::string>>();
    }
  }
  u.validate();
  return u;
}

DomainUpdate load_update(const std::string& path) {
  return update_from_json(read_file(path));
}

std::string mixture_to_json(const Mixture& m, const std::vector<std::string>& ids) {
  if (!ids.empty() && ids.size() != m.size()) {
    throw Error(Error::Kind::DimensionMismatch, "mixture/id length mismatch");
  }
  ojson j;
  j["over_version"] = m.over_version();
  j["weights"] = m.weights();
  if (!ids.empty()) j["ids"] = ids;
  return j.dump(2) + "\n";
}

Mixture mixture_from_json(const std::string& text, std::vector<std::string>* ids_out) {
  const ojson j = parse(text);
  if (!j.contains("weights")) throw Error(Error::Kind::SchemaError, "mixture json needs weights");
  const std::uint64_t ver = j.contains("over_version") ? j["over_version"].get<std::uint64_t>() : 0;
  if (ids_out && j.contains("ids")) *ids_out = j["ids"].get<std::vector<std::string>>();
  return Mixture(ver, j["weights"].get<std::vector<double>>());
}

Mixture load_mixture(const std::string& path, std::vector<std::string>* ids_out) {
  return mixture_from_json(read_file(path), ids_out);
}

void save_mixture(const Mixture& m, const std::vector<std::string>& ids, const std::string& path) {
  write_file(path, mixture_to_json(m, ids));
}

}  // namespace mixopt
