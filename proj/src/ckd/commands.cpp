#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ckd/commands.hpp"
#include "ckd/eval.hpp"
#include "ckd/trainer.hpp"
#include "ckd/version.hpp"

namespace ckd {

using nlohmann::json;

namespace {

std::filesystem::path data_dir(const ExperimentConfig& cfg) {
  return cfg.out_dir / "data";
}
std::filesystem::path teachers_dir(const ExperimentConfig& cfg) {
  return cfg.out_dir / "teachers";
}

std::filesystem::path corpus_path(const ExperimentConfig& cfg,
                                  const std::string& domain,
                                  const std::string& role) {
  return data_dir(cfg) / (domain + "." + role + ".txt");
}

std::string sanitize_label(std::string s) {
  std::size_t arrow;
  while ((arrow = s.find("->")) != std::string::npos) s.replace(arrow, 2, "_to_");
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
      c = '-';
  return s;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a64(buf.str());
}

Vocab load_shared_vocab(const ExperimentConfig& cfg) {
  const auto path = data_dir(cfg) / "vocab.txt";
  if (!std::filesystem::exists(path))
    throw DataError("missing vocabulary (run gen-data first): " + path.string());
  return load_vocab(path);
}

ParallelCorpus load_role(const ExperimentConfig& cfg, const Vocab& vocab,
                         const std::string& domain, const std::string& role) {
  const auto path = corpus_path(cfg, domain, role);
  if (!std::filesystem::exists(path))
    throw DataError("missing corpus (run gen-data first): " + path.string());
  return load_corpus(path, vocab);
}

const DomainSpec& find_domain(const ExperimentConfig& cfg, const std::string& name) {
  for (const auto& d : cfg.domains)
    if (d.name == name) return d;
  throw ConfigError("undeclared domain: " + name);
}

struct TeacherIndexEntry {
  std::string name;
  std::filesystem::path path;
  bool malicious = false;
  double dev_bleu = 0;
};

struct TeacherIndex {
  std::string vocab_hash;
  std::vector<TeacherIndexEntry> teachers;

  const TeacherIndexEntry& find(const std::string& name) const {
    for (const auto& t : teachers)
      if (t.name == name) return t;
    throw DataError("teacher not in index (run train-teachers first): " + name);
  }
};

void save_teacher_index(const TeacherIndex& idx, const std::filesystem::path& path) {
  json j{{"schema_version", kSchemaVersion}, {"vocab_hash", idx.vocab_hash}};
  j["teachers"] = json::array();
  for (const auto& t : idx.teachers)
    j["teachers"].push_back(json{{"name", t.name},
                                 {"path", t.path.string()},
                                 {"malicious", t.malicious},
                                 {"dev_bleu", t.dev_bleu}});
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

TeacherIndex load_teacher_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing teacher index (run train-teachers first): " +
                           path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (j.value("schema_version", 0) != kSchemaVersion)
    throw DataError(path.string() + ": schema_version mismatch");
  TeacherIndex idx;
  idx.vocab_hash = j.at("vocab_hash").get<std::string>();
  for (const auto& t : j.at("teachers")) {
    TeacherIndexEntry e;
    e.name = t.at("name").get<std::string>();
    e.path = t.at("path").get<std::string>();
    e.malicious = t.value("malicious", false);
    e.dev_bleu = t.value("dev_bleu", 0.0);
    idx.teachers.push_back(std::move(e));
  }
  return idx;
}

std::uint64_t domain_data_seed(const ExperimentConfig& cfg, const DomainSpec& d) {
  return derive_seed(cfg.seed, SeedStream::data, fnv1a64(d.name));
}

}  // namespace

void cmd_gen_data(const std::filesystem::path& config_path,
                  std::span<const std::string> overrides) {
  ExperimentConfig cfg = load_config(config_path, overrides);
  std::filesystem::create_directories(data_dir(cfg));

  const Vocab vocab = vocab_for_specs(cfg.domains);
  save_vocab(vocab, data_dir(cfg) / "vocab.txt");
  std::cout << "vocab: " << vocab.size() << " tokens, hash "
            << hex64(vocab.content_hash()) << "\n";

  for (const auto& d : cfg.domains) {
    DomainData data = gen_domain_corpus(d, domain_data_seed(cfg, d));
    save_corpus(data.train, vocab, corpus_path(cfg, d.name, "train"));
    save_corpus(data.dev, vocab, corpus_path(cfg, d.name, "dev"));
    save_corpus(data.test, vocab, corpus_path(cfg, d.name, "test"));
    std::cout << "domain " << d.name << ": train " << data.train.size() << ", dev "
              << data.dev.size() << ", test " << data.test.size() << "\n";
  }
  for (std::size_t i = 0; i < cfg.domains.size(); ++i)
    for (std::size_t k = i + 1; k < cfg.domains.size(); ++k)
      std::cout << "distinctness " << cfg.domains[i].name << "/"
                << cfg.domains[k].name << ": " << std::fixed << std::setprecision(3)
                << domain_distinctness(cfg.domains[i], cfg.domains[k]) << "\n";
}

void cmd_train_teachers(const std::filesystem::path& config_path,
                        std::span<const std::string> overrides,
                        std::span<const std::string> malicious) {
  ExperimentConfig cfg = load_config(config_path, overrides);
  std::set<std::string> mal(cfg.malicious.begin(), cfg.malicious.end());
  for (const auto& name : malicious) {
    find_domain(cfg, name);
    mal.insert(name);
  }

  const Vocab vocab = load_shared_vocab(cfg);
  std::filesystem::create_directories(teachers_dir(cfg));

  ArchSpec arch = cfg.teacher_arch;
  arch.vocab_size = vocab.size();
  validate_arch(arch);

  TeacherIndex idx;
  idx.vocab_hash = hex64(vocab.content_hash());
  for (const auto& d : cfg.domains) {
    ParallelCorpus train = load_role(cfg, vocab, d.name, "train");
    ParallelCorpus dev = load_role(cfg, vocab, d.name, "dev");

    DistillConfig tc = cfg.distill;
    tc.epochs_per_step = d.teacher_epochs;
    tc.verbose = false;
    const std::uint64_t init_seed =
        derive_seed(cfg.seed, SeedStream::init, fnv1a64(d.name));
    tc.seed = init_seed + 1;

    PredictiveModel model =
        train_teacher(arch, init_seed, vocab.content_hash(), train, dev, tc);
    const auto ckpt = teachers_dir(cfg) / (d.name + ".ckpt");
    save_checkpoint(snapshot(model), ckpt);

    PredictiveModel reloaded = load_checkpoint(ckpt);
    const double dev_bleu =
        eval_model_bleu(reloaded, dev, cfg.distill.decode_max_len).bleu;
    std::cout << "teacher " << d.name << ": dev BLEU " << std::fixed
              << std::setprecision(2) << dev_bleu
              << (mal.count(d.name) ? "  [malicious]" : "") << "\n";

    idx.teachers.push_back({d.name, ckpt, mal.count(d.name) > 0, dev_bleu});
  }
  save_teacher_index(idx, teachers_dir(cfg) / "teachers.json");
}

void cmd_run(const std::filesystem::path& config_path,
             std::span<const std::string> overrides) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(config_path, overrides);
  if (cfg.order.empty()) throw ConfigError("run needs an order string");
  const OrderSpec order = parse_order(cfg.order, cfg.domains);

  const Vocab vocab = load_shared_vocab(cfg);
  const TeacherIndex idx = load_teacher_index(teachers_dir(cfg) / "teachers.json");
  if (idx.vocab_hash != hex64(vocab.content_hash()))
    throw DataError("teacher vocabulary hash " + idx.vocab_hash +
                    " does not match data vocabulary " +
                    hex64(vocab.content_hash()) + "; refusing to run");

  RunCorpora corpora;
  corpora.train = load_role(cfg, vocab, order.student, "train");
  const std::string transfer_domain =
      cfg.transfer_domain.empty() ? order.student : cfg.transfer_domain;
  corpora.transfer = transfer_domain == order.student && cfg.transfer_role == "train"
                         ? corpora.train
                         : load_role(cfg, vocab, transfer_domain, cfg.transfer_role);
  corpora.dev = load_role(cfg, vocab, order.student, "dev");
  corpora.test = load_role(cfg, vocab, order.student, "test");

  const std::set<std::string> mal(cfg.malicious.begin(), cfg.malicious.end());
  const auto check_model = [&](const PredictiveModel& m, const std::string& name) {
    if (m.vocab_hash() != vocab.content_hash())
      throw DataError("checkpoint " + name +
                      " was built against a different vocabulary; refusing to run");
  };

  TeacherSequence seq;
  for (const auto& name : order.teachers) {
    const TeacherIndexEntry& e = idx.find(name);
    seq.teachers.push_back(
        {load_checkpoint(e.path), name, e.malicious || mal.count(name) > 0, 0});
    check_model(seq.teachers.back().model, name);
  }

  PredictiveModel student = thaw(load_checkpoint(idx.find(order.student).path));
  check_model(student, order.student);

  const auto run_dir = cfg.out_dir / "runs" /
                       (std::string(method_name(cfg.method)) + "-" +
                        sanitize_label(cfg.order));
  std::filesystem::create_directories(run_dir);
  std::filesystem::remove(run_dir / "history.jsonl");

  DistillConfig dc = cfg.distill;
  dc.seed = cfg.seed;

  RunSink sink{run_dir};
  RunHistory history = run_sequence(student, seq, corpora, dc, cfg.method, &sink);

  RunManifest manifest;
  manifest.method = method_name(cfg.method);
  manifest.config_label = cfg.order;
  manifest.config = config_json(cfg);
  manifest.source_hash = kSourceHash;
  for (const auto& d : cfg.domains) {
    for (const char* role : {"train", "dev", "test"}) {
      const auto p = corpus_path(cfg, d.name, role);
      manifest.corpus_hashes[p.string()] = hex64(file_hash(p));
    }
  }
  manifest.corpus_hashes[(data_dir(cfg) / "vocab.txt").string()] =
      hex64(file_hash(data_dir(cfg) / "vocab.txt"));
  for (const auto& t : idx.teachers)
    manifest.checkpoint_hashes[t.path.string()] = hex64(file_hash(t.path));
  for (std::size_t t = 0; t < history.steps.size(); ++t) {
    const auto p = run_dir / ("step_" + std::to_string(t) + ".ckpt");
    manifest.checkpoint_hashes[p.string()] = hex64(file_hash(p));
  }
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_manifest(manifest, run_dir / "manifest.json");

  const StepMetrics& last = history.steps.back();
  std::cout << method_name(cfg.method) << " " << cfg.order << ": BLEU "
            << std::fixed << std::setprecision(2) << history.steps.front().bleu
            << " -> " << last.bleu << ", AD " << last.ad << "\n"
            << "artifacts: " << run_dir.string() << "\n";
}

void cmd_report(std::span<const std::filesystem::path> history_paths,
                const std::filesystem::path& out_dir) {
  if (history_paths.empty()) throw ConfigError("report needs at least one history");
  std::vector<RunHistory> histories;
  for (const auto& hp : history_paths) {
    const RunManifest manifest = load_manifest(hp.parent_path() / "manifest.json");
    histories.push_back(load_history(hp, manifest.method, manifest.config_label));
  }
  ReportTables tables = render_report(histories);
  std::cout << tables.table_text;
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "report.txt");
    if (!out) throw DataError("cannot write report.txt");
    out << tables.table_text;
  }
  {
    std::ofstream out(out_dir / "report.csv");
    if (!out) throw DataError("cannot write report.csv");
    out << tables.csv_text;
  }
}

void cmd_correlate(const std::filesystem::path& config_path,
                   std::span<const std::string> overrides,
                   const std::filesystem::path& out_csv) {
  ExperimentConfig cfg = load_config(config_path, overrides);
  const Vocab vocab = load_shared_vocab(cfg);
  const TeacherIndex idx = load_teacher_index(teachers_dir(cfg) / "teachers.json");
  if (idx.vocab_hash != hex64(vocab.content_hash()))
    throw DataError("teacher vocabulary hash does not match data vocabulary");

  std::vector<std::string> model_names = cfg.correlate.models;
  if (model_names.empty())
    for (const auto& t : idx.teachers) model_names.push_back(t.name);
  std::vector<std::string> testset_names = cfg.correlate.testsets;
  if (testset_names.empty())
    for (const auto& d : cfg.domains) testset_names.push_back(d.name);

  std::vector<PredictiveModel> models;
  models.reserve(model_names.size());
  for (const auto& name : model_names)
    models.push_back(load_checkpoint(idx.find(name).path));
  std::vector<LabeledModel> labeled;
  for (std::size_t i = 0; i < models.size(); ++i)
    labeled.push_back({model_names[i], &models[i]});

  std::vector<ParallelCorpus> testsets;
  for (const auto& name : testset_names) {
    find_domain(cfg, name);
    testsets.push_back(load_role(cfg, vocab, name, "test"));
  }

  CorrelationStudy study = correlation_study(labeled, testsets, cfg.correlate.q_kind,
                                             cfg.correlate.oriented);
  const auto path = out_csv.empty() ? cfg.out_dir / "correlation.csv" : out_csv;
  write_correlation_csv(study, path);
  std::cout << "q=" << q_kind_name(study.kind)
            << (study.oriented ? " (oriented)" : " (raw)") << " over "
            << study.cells.size() << " cells: pearson r = " << std::setprecision(4)
            << std::fixed << study.r << "\n"
            << "csv: " << path.string() << "\n";
}

}  // namespace ckd
