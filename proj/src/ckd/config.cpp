#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ckd/config.hpp"

namespace ckd {

using nlohmann::json;

namespace {

std::vector<std::string> split_names(const std::string& side) {
  std::vector<std::string> names;
  if (side.find(',') != std::string::npos) {
    std::stringstream ss(side);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (part.empty()) throw ConfigError("empty name in order string");
      names.push_back(part);
    }
  } else {
    for (char c : side) names.emplace_back(1, c);
  }
  return names;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return j;
}

// Reads `text` as JSON when it parses as JSON, else as a string, so
// "alpha=0.2", "order=AB->C", and "lambda.table=[1,0.5]" all do the
// obvious thing.
json scalar_from_text(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (!v.is_discarded()) return v;
  return json(text);
}

void apply_override(json& root, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value: " + kv);
  const std::string path = kv.substr(0, eq);
  json* node = &root;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path through non-object: " + path);
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = scalar_from_text(kv.substr(eq + 1));
}

// take<T>: typed extraction with key tracking so leftovers can be rejected.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  const json* sub(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }
  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ArchSpec arch_from_json(const json& j, const std::string& where) {
  ArchSpec a;
  Fields f(j, where);
  std::string fam = family_name(a.family);
  f.get("family", fam);
  a.family = family_from_name(fam);
  f.get("embed_dim", a.embed_dim);
  f.get("hidden_dim", a.hidden_dim);
  f.get("layers", a.layers);
  f.get("max_len", a.max_len);
  f.get("temperature", a.temperature);
  f.reject_unknown();
  return a;
}

json arch_to_json(const ArchSpec& a) {
  return json{{"family", family_name(a.family)}, {"embed_dim", a.embed_dim},
              {"hidden_dim", a.hidden_dim},      {"layers", a.layers},
              {"max_len", a.max_len},            {"temperature", a.temperature}};
}

DomainSpec domain_from_json(const json& j, const std::string& where) {
  DomainSpec d;
  Fields f(j, where);
  f.get("name", d.name);
  if (d.name.empty()) throw ConfigError(where + ": domain needs a name");
  std::string tr = transform_name(d.transform);
  f.get("transform", tr);
  d.transform = transform_from_name(tr);
  f.get("lexicon_seed", d.lexicon_seed);
  f.get("content_vocab", d.content_vocab);
  f.get("train_size", d.train_size);
  f.get("dev_size", d.dev_size);
  f.get("test_size", d.test_size);
  f.get("min_len", d.min_len);
  f.get("max_len", d.max_len);
  f.get("teacher_epochs", d.teacher_epochs);
  f.reject_unknown();
  if (d.train_size < 1 || d.dev_size < 1 || d.test_size < 1)
    throw ConfigError(where + ": split sizes must be positive");
  if (d.content_vocab < 2) throw ConfigError(where + ": content_vocab too small");
  if (d.min_len < 1 || d.max_len < d.min_len)
    throw ConfigError(where + ": bad length range");
  return d;
}

json domain_to_json(const DomainSpec& d) {
  return json{{"name", d.name},
              {"transform", transform_name(d.transform)},
              {"lexicon_seed", d.lexicon_seed},
              {"content_vocab", d.content_vocab},
              {"train_size", d.train_size},
              {"dev_size", d.dev_size},
              {"test_size", d.test_size},
              {"min_len", d.min_len},
              {"max_len", d.max_len},
              {"teacher_epochs", d.teacher_epochs}};
}

DistillConfig distill_from_json(const json& j) {
  DistillConfig c;
  Fields f(j, "distill");
  f.get("alpha", c.alpha);
  std::string s = q_kind_name(c.q_kind);
  f.get("q_kind", s);
  c.q_kind = q_kind_from_name(s);
  s = policy_name(c.policy);
  f.get("policy", s);
  c.policy = policy_from_name(s);
  s = divergence_name(c.divergence);
  f.get("divergence", s);
  c.divergence = divergence_from_name(s);
  if (const json* n = f.sub("noise")) {
    Fields nf(*n, "distill.noise");
    std::string nk = noise_name(c.noise.kind);
    nf.get("kind", nk);
    c.noise.kind = noise_from_name(nk);
    nf.get("sample_size", c.noise.sample_size);
    nf.reject_unknown();
  }
  f.get("neg_min_form", c.neg_min_form);
  f.get("k_a", c.k_a);
  f.get("k_b", c.k_b);
  if (const json* l = f.sub("lambda")) {
    Fields lf(*l, "distill.lambda");
    std::string lk = c.lambda.kind == LambdaKind::geometric ? "geometric"
                     : c.lambda.kind == LambdaKind::constant ? "constant"
                                                             : "table";
    lf.get("kind", lk);
    if (lk == "geometric") c.lambda.kind = LambdaKind::geometric;
    else if (lk == "constant") c.lambda.kind = LambdaKind::constant;
    else if (lk == "table") c.lambda.kind = LambdaKind::table;
    else throw ConfigError("unknown lambda kind: " + lk);
    lf.get("constant", c.lambda.constant);
    lf.get("table", c.lambda.table);
    lf.get("literal_t1", c.lambda.literal_t1);
    lf.reject_unknown();
  }
  f.get("ce_weight", c.ce_weight);
  f.get("ewc_c", c.ewc_c);
  f.get("epochs_per_step", c.epochs_per_step);
  f.get("early_stop_patience", c.early_stop_patience);
  f.get("batch_size", c.batch_size);
  if (const json* o = f.sub("optim")) {
    Fields of(*o, "distill.optim");
    of.get("lr", c.optim.lr);
    of.get("beta1", c.optim.beta1);
    of.get("beta2", c.optim.beta2);
    of.get("eps", c.optim.eps);
    of.get("clip_norm", c.optim.clip_norm);
    of.reject_unknown();
  }
  f.get("dropout", c.dropout);
  s = c.split_refresh == SplitRefresh::per_epoch ? "per_epoch" : "per_step";
  f.get("split_refresh", s);
  if (s == "per_epoch") c.split_refresh = SplitRefresh::per_epoch;
  else if (s == "per_step") c.split_refresh = SplitRefresh::per_step;
  else throw ConfigError("unknown split_refresh: " + s);
  f.get("decode_max_len", c.decode_max_len);
  f.get("force_serial", c.force_serial);
  f.get("verbose", c.verbose);
  f.reject_unknown();
  validate_config(c);
  return c;
}

json distill_to_json(const DistillConfig& c) {
  const char* lk = c.lambda.kind == LambdaKind::geometric ? "geometric"
                   : c.lambda.kind == LambdaKind::constant ? "constant"
                                                           : "table";
  return json{
      {"alpha", c.alpha},
      {"q_kind", q_kind_name(c.q_kind)},
      {"policy", policy_name(c.policy)},
      {"divergence", divergence_name(c.divergence)},
      {"noise", {{"kind", noise_name(c.noise.kind)}, {"sample_size", c.noise.sample_size}}},
      {"neg_min_form", c.neg_min_form},
      {"k_a", c.k_a},
      {"k_b", c.k_b},
      {"lambda",
       {{"kind", lk},
        {"constant", c.lambda.constant},
        {"table", c.lambda.table},
        {"literal_t1", c.lambda.literal_t1}}},
      {"ce_weight", c.ce_weight},
      {"ewc_c", c.ewc_c},
      {"epochs_per_step", c.epochs_per_step},
      {"early_stop_patience", c.early_stop_patience},
      {"batch_size", c.batch_size},
      {"optim",
       {{"lr", c.optim.lr},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps},
        {"clip_norm", c.optim.clip_norm}}},
      {"dropout", c.dropout},
      {"split_refresh",
       c.split_refresh == SplitRefresh::per_epoch ? "per_epoch" : "per_step"},
      {"decode_max_len", c.decode_max_len},
      {"force_serial", c.force_serial},
      {"verbose", c.verbose}};
}

}  // namespace

OrderSpec parse_order(const std::string& order, std::span<const DomainSpec> domains) {
  const auto arrow = order.find("->");
  if (arrow == std::string::npos || arrow == 0 || arrow + 2 >= order.size())
    throw ConfigError("order needs the form TEACHERS->STUDENT: " + order);
  OrderSpec o;
  o.teachers = split_names(order.substr(0, arrow));
  const auto rhs = split_names(order.substr(arrow + 2));
  if (rhs.size() != 1)
    throw ConfigError("exactly one student domain goes right of ->: " + order);
  o.student = rhs[0];
  const auto known = [&](const std::string& n) {
    for (const auto& d : domains)
      if (d.name == n) return true;
    return false;
  };
  for (const auto& t : o.teachers)
    if (!known(t)) throw ConfigError("order references undeclared domain: " + t);
  if (!known(o.student))
    throw ConfigError("order references undeclared domain: " + o.student);
  if (o.teachers.empty()) throw ConfigError("order has no teachers: " + order);
  return o;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::span<const std::string> overrides) {
  json j = read_json_file(path);
  for (const auto& kv : overrides) apply_override(j, kv);

  ExperimentConfig cfg;
  Fields f(j, "config");
  int schema = kSchemaVersion;
  f.get("schema_version", schema);
  if (schema != kSchemaVersion)
    throw ConfigError("config schema_version " + std::to_string(schema) +
                      " is not " + std::to_string(kSchemaVersion));
  std::string out = cfg.out_dir.string();
  f.get("out_dir", out);
  cfg.out_dir = out;
  f.get("seed", cfg.seed);
  f.get("order", cfg.order);
  std::string ms = method_name(cfg.method);
  f.get("method", ms);
  cfg.method = method_from_name(ms);
  if (const json* ds = f.sub("domains")) {
    if (!ds->is_array() || ds->empty())
      throw ConfigError("domains must be a non-empty array");
    for (std::size_t i = 0; i < ds->size(); ++i)
      cfg.domains.push_back(
          domain_from_json((*ds)[i], "domains[" + std::to_string(i) + "]"));
  } else {
    throw ConfigError("config needs a domains array");
  }
  {
    std::set<std::string> names;
    int cv = cfg.domains.front().content_vocab;
    for (const auto& d : cfg.domains) {
      if (!names.insert(d.name).second)
        throw ConfigError("duplicate domain name: " + d.name);
      if (d.content_vocab != cv)
        throw ConfigError("domains disagree on content_vocab");
    }
  }
  if (const json* a = f.sub("teacher_arch"))
    cfg.teacher_arch = arch_from_json(*a, "teacher_arch");
  if (const json* a = f.sub("student_arch"))
    cfg.student_arch = arch_from_json(*a, "student_arch");
  f.get("malicious", cfg.malicious);
  for (const auto& name : cfg.malicious) {
    bool found = false;
    for (const auto& d : cfg.domains) found = found || d.name == name;
    if (!found) throw ConfigError("malicious references undeclared domain: " + name);
  }
  f.get("transfer_domain", cfg.transfer_domain);
  f.get("transfer_role", cfg.transfer_role);
  if (!cfg.transfer_domain.empty()) {
    bool found = false;
    for (const auto& d : cfg.domains) found = found || d.name == cfg.transfer_domain;
    if (!found)
      throw ConfigError("transfer_domain references undeclared domain: " +
                        cfg.transfer_domain);
  }
  if (cfg.transfer_role != "train" && cfg.transfer_role != "dev" &&
      cfg.transfer_role != "test")
    throw ConfigError("transfer_role must be train, dev, or test");
  if (const json* d = f.sub("distill")) cfg.distill = distill_from_json(*d);
  if (const json* c = f.sub("correlate")) {
    Fields cf(*c, "correlate");
    std::string qs = q_kind_name(cfg.correlate.q_kind);
    cf.get("q_kind", qs);
    cfg.correlate.q_kind = q_kind_from_name(qs);
    cf.get("oriented", cfg.correlate.oriented);
    cf.get("models", cfg.correlate.models);
    cf.get("testsets", cfg.correlate.testsets);
    cf.reject_unknown();
  }
  f.reject_unknown();

  if (!cfg.order.empty()) parse_order(cfg.order, cfg.domains);
  return cfg;
}

std::string config_json(const ExperimentConfig& cfg) {
  json j{{"schema_version", kSchemaVersion},
         {"out_dir", cfg.out_dir.string()},
         {"seed", cfg.seed},
         {"order", cfg.order},
         {"method", method_name(cfg.method)},
         {"transfer_domain", cfg.transfer_domain},
         {"transfer_role", cfg.transfer_role},
         {"teacher_arch", arch_to_json(cfg.teacher_arch)},
         {"student_arch", arch_to_json(cfg.student_arch)},
         {"malicious", cfg.malicious},
         {"distill", distill_to_json(cfg.distill)},
         {"correlate",
          {{"q_kind", q_kind_name(cfg.correlate.q_kind)},
           {"oriented", cfg.correlate.oriented},
           {"models", cfg.correlate.models},
           {"testsets", cfg.correlate.testsets}}}};
  j["domains"] = json::array();
  for (const auto& d : cfg.domains) j["domains"].push_back(domain_to_json(d));
  return j.dump(2);
}

void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
  json j{{"schema_version", m.schema_version},
         {"method", m.method},
         {"config_label", m.config_label},
         {"config", json::parse(m.config)},
         {"source_hash", m.source_hash},
         {"corpus_hashes", m.corpus_hashes},
         {"checkpoint_hashes", m.checkpoint_hashes},
         {"wall_seconds", m.wall_seconds}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

RunManifest load_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  RunManifest m;
  Fields f(j, path.string());
  f.get("schema_version", m.schema_version);
  if (m.schema_version != kSchemaVersion)
    throw DataError(path.string() + ": schema_version " +
                    std::to_string(m.schema_version) + " is not " +
                    std::to_string(kSchemaVersion));
  f.get("method", m.method);
  f.get("config_label", m.config_label);
  if (const json* c = f.sub("config")) m.config = c->dump(2);
  f.get("source_hash", m.source_hash);
  f.get("corpus_hashes", m.corpus_hashes);
  f.get("checkpoint_hashes", m.checkpoint_hashes);
  f.get("wall_seconds", m.wall_seconds);
  f.reject_unknown();
  return m;
}

}  // namespace ckd
