// slm: command-line entry point. Every command writes its artifacts plus a
// manifest.json into --out; `slm rerun` replays a manifest.

#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "slm/checkpoint.hpp"
#include "slm/errors.hpp"
#include "slm/evaluation.hpp"
#include "slm/synthetic.hpp"
#include "slm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace slm;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

/// Collects what a command read and wrote, then lands next to the outputs.
class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)) {}

  void input(const std::string& role, const std::string& path) {
    inputs_.push_back({{"role", role},
                       {"path", fs::absolute(path).string()},
                       {"sha256", sha256_file(path)}});
  }
  void artifact(const std::string& role, const std::string& file) { artifacts_[role] = file; }
  ordered_json& config() { return config_; }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const fs::path& dir) const {
    ordered_json j;
    j["command"] = command_;
    j["argv"] = argv_;
    if (seed_) j["seed"] = *seed_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["artifacts"] = artifacts_;
    write_text(dir / "manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::optional<std::uint64_t> seed_;
  ordered_json config_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::array();
  ordered_json artifacts_ = ordered_json::object();
};

ordered_json to_json(const ModelConfig& c) {
  return {{"arch", to_string(c.arch)},
          {"input_dim", c.input_dim},
          {"hidden_dim", c.hidden_dim},
          {"num_layers", c.num_layers},
          {"num_residual_blocks", c.num_residual_blocks},
          {"output_dim", c.output_dim},
          {"dropout_rate", c.dropout_rate}};
}

ordered_json to_json(const TrainConfig& c) {
  return {{"num_distractors", c.num_distractors},
          {"distractor_mode", to_string(c.distractor_mode)},
          {"cs_loss_weight", c.cs_loss_weight},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"patience", c.patience}};
}

// One row per line, whitespace-separated decimals.
EmbeddingMatrix read_text_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<float> data;
  std::size_t dim = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::size_t n = 0;
    std::string tok;
    while (fields >> tok) {
      char* end = nullptr;
      const float v = std::strtof(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) {
        throw ValidationError(path + ":" + std::to_string(line_no) + ": not a number: '" + tok + "'");
      }
      data.push_back(v);
      ++n;
    }
    if (rows == 0) dim = n;
    if (n != dim) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                            " values, found " + std::to_string(n));
    }
    ++rows;
  }
  if (rows == 0) throw ValidationError(path + ": no rows");
  EmbeddingMatrix m(rows, dim, std::move(data));
  m.validate();
  return m;
}

std::vector<std::size_t> parse_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size()) throw ValidationError(flag + ": bad integer '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ValidationError(flag + ": empty list");
  return out;
}

std::vector<SentenceId> read_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<SentenceId> ids;
  std::string tok;
  std::size_t n = 0;
  while (in >> tok) {
    ++n;
    std::size_t pos = 0;
    try {
      ids.push_back(std::stoull(tok, &pos));
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || pos == 0) {
      throw ValidationError(path + ": entry " + std::to_string(n) + " is not an id: '" + tok + "'");
    }
  }
  return ids;
}

void check_ids(std::span<const SentenceId> ids, std::size_t count, const std::string& what) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= count) {
      throw ValidationError(what + ": id " + std::to_string(ids[i]) + " out of range (embeddings have " +
                            std::to_string(count) + " rows)");
    }
  }
}

// Every query's true ending must be rankable, or the whole run is wasted.
void check_truths_in_pool(std::span<const RankingQuery> queries, std::span<const SentenceId> pool) {
  const std::unordered_set<SentenceId> members(pool.begin(), pool.end());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (!members.count(queries[q].truth)) {
      throw ValidationError("true ending " + std::to_string(queries[q].truth) + " of query " + std::to_string(q) +
                            " is not in the ranking pool");
    }
  }
}

struct ModelFlags {
  std::string arch = "resmlp";
  std::size_t hidden_dim = 1024;
  std::size_t num_layers = 3;
  std::size_t num_blocks = 1;
  float dropout = 0.5f;

  void add(CLI::App* app) {
    app->add_option("--arch", arch, "mlp or resmlp")->check(CLI::IsMember({"mlp", "resmlp"}))->capture_default_str();
    app->add_option("--hidden-dim", hidden_dim)->capture_default_str();
    app->add_option("--num-layers", num_layers, "hidden layers (mlp)")->capture_default_str();
    app->add_option("--residual-blocks", num_blocks, "residual blocks (resmlp)")->capture_default_str();
    app->add_option("--dropout", dropout)->capture_default_str();
  }

  ModelConfig resolve(const CorpusIndex& index, std::size_t dim) const {
    ModelConfig c;
    c.arch = parse_arch(arch);
    c.input_dim = index.context_len * dim;
    c.hidden_dim = hidden_dim;
    c.num_layers = num_layers;
    c.num_residual_blocks = num_blocks;
    c.output_dim = dim;
    c.dropout_rate = dropout;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  std::string config;
  std::optional<std::size_t> distractors;
  std::optional<std::string> mode;
  std::optional<double> cs_weight;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;

  void add(CLI::App* app) {
    app->add_option("--config", config, "training config file")->required()->check(CLI::ExistingFile);
    app->add_option("--distractors", distractors, "N - 1 distractors per example");
    app->add_option("--distractor-mode", mode)->check(CLI::IsMember({"static", "dynamic"}));
    app->add_option("--cs-loss-weight", cs_weight, "weight of the context-sentence loss");
    app->add_option("--seed", seed);
    app->add_option("--max-steps", max_steps);
  }

  TrainConfig resolve() const {
    TrainConfig c = read_train_config(config);
    if (distractors) c.num_distractors = *distractors;
    if (mode) c.distractor_mode = parse_distractor_mode(*mode);
    if (cs_weight) c.cs_loss_weight = *cs_weight;
    if (seed) c.seed = *seed;
    if (max_steps) c.max_steps = *max_steps;
    c.validate();
    return c;
  }
};

/// Ranking pool: explicit id list, or the sentences at context_len of each
/// --pool index (concatenated, duplicates rejected).
std::vector<SentenceId> resolve_pool(const std::vector<std::string>& pool_indices, const std::string& pool_ids,
                                     std::size_t position, std::size_t count, Manifest& manifest) {
  std::vector<SentenceId> pool;
  if (!pool_ids.empty()) {
    manifest.input("pool_ids", pool_ids);
    pool = read_id_list(pool_ids);
  } else {
    std::vector<CorpusIndex> indices;
    for (const auto& p : pool_indices) {
      manifest.input("pool_index", p);
      indices.push_back(read_corpus_index(p));
    }
    pool = candidate_pool(indices, position);
  }
  if (pool.empty()) throw ValidationError("ranking pool is empty");
  check_ids(pool, count, "pool");
  return pool;
}

fs::path prepare_out(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

int run(const std::vector<std::string>& argv);

int cmd_rerun(const std::string& manifest_path, const std::string& out, bool skip_digest_check) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw ValidationError(manifest_path + ": " + e.what());
  }
  if (!skip_digest_check) {
    for (const auto& input : j.at("inputs")) {
      const std::string path = input.at("path");
      if (sha256_file(path) != input.at("sha256").get<std::string>()) {
        throw ValidationError(path + ": content differs from the manifest digest");
      }
    }
  }
  std::vector<std::string> args = j.at("argv").get<std::vector<std::string>>();
  bool replaced = false;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--out") {
      args[i + 1] = out;
      replaced = true;
    }
  }
  if (!replaced) throw ValidationError(manifest_path + ": argv has no --out");
  return run(args);
}

int run(const std::vector<std::string>& argv) {
  CLI::App app{"Sentence-level language model: import, train, evaluate, sweep"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads for evaluation")->check(CLI::PositiveNumber);

  // import
  auto* imp = app.add_subcommand("import", "validate and convert embeddings (+ story index)");
  std::string imp_emb, imp_index, imp_out;
  imp->add_option("--embeddings", imp_emb, "SLMB file or text matrix")->required()->check(CLI::ExistingFile);
  imp->add_option("--index", imp_index, "story index")->check(CLI::ExistingFile);
  imp->add_option("--out", imp_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_emb, tr_index, tr_out, tr_val_cloze, tr_val_index;
  std::vector<std::string> tr_val_pool;
  ModelFlags tr_model;
  TrainFlags tr_flags;
  tr->add_option("--embeddings", tr_emb)->required()->check(CLI::ExistingFile);
  tr->add_option("--index", tr_index)->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--val-cloze", tr_val_cloze, "cloze set for validation/early stopping")->check(CLI::ExistingFile);
  tr->add_option("--val-index", tr_val_index, "held-out stories ranked for P@10 validation")
      ->check(CLI::ExistingFile);
  tr->add_option("--val-pool", tr_val_pool, "indices forming the validation ranking pool")
      ->check(CLI::ExistingFile);
  tr_model.add(tr);
  tr_flags.add(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->require_subcommand(1);
  ev->fallthrough();
  auto* cl = ev->add_subcommand("cloze", "pairwise cloze accuracy");
  std::string cl_model, cl_emb, cl_set, cl_out;
  cl->add_option("--model", cl_model)->required()->check(CLI::ExistingFile);
  cl->add_option("--embeddings", cl_emb)->required()->check(CLI::ExistingFile);
  cl->add_option("--cloze", cl_set)->required()->check(CLI::ExistingFile);
  cl->add_option("--out", cl_out)->required();
  auto* rk = ev->add_subcommand("rank", "rank true endings against a pool");
  std::string rk_model, rk_emb, rk_queries, rk_pool_ids, rk_out, rk_text, rk_k = "1,10";
  std::vector<std::string> rk_pool;
  rk->add_option("--model", rk_model)->required()->check(CLI::ExistingFile);
  rk->add_option("--embeddings", rk_emb)->required()->check(CLI::ExistingFile);
  rk->add_option("--queries", rk_queries, "story index; each story is one query")
      ->required()
      ->check(CLI::ExistingFile);
  auto* pool_opt = rk->add_option("--pool", rk_pool, "story index contributing its endings (repeatable)")
                       ->check(CLI::ExistingFile);
  rk->add_option("--pool-ids", rk_pool_ids, "file of pool ids")->check(CLI::ExistingFile)->excludes(pool_opt);
  rk->add_option("--k", rk_k, "comma-separated k values for P@k")->capture_default_str();
  rk->add_option("--text", rk_text, "sentence text, one line per embedding row")->check(CLI::ExistingFile);
  rk->add_option("--out", rk_out)->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "train and rank across distractor counts");
  std::string sw_emb, sw_index, sw_queries, sw_out, sw_grid;
  std::vector<std::string> sw_pool;
  ModelFlags sw_model;
  TrainFlags sw_flags;
  sw->add_option("--embeddings", sw_emb)->required()->check(CLI::ExistingFile);
  sw->add_option("--index", sw_index, "training stories")->required()->check(CLI::ExistingFile);
  sw->add_option("--queries", sw_queries, "held-out stories to rank")->required()->check(CLI::ExistingFile);
  sw->add_option("--pool", sw_pool, "story index contributing its endings (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  sw->add_option("--grid", sw_grid, "comma-separated N - 1 values")->required();
  sw->add_option("--out", sw_out)->required();
  sw_model.add(sw);
  sw_flags.add(sw);

  // synth
  auto* sy = app.add_subcommand("synth", "write a synthetic linear-map corpus");
  SyntheticConfig sy_cfg;
  std::size_t sy_heldout = 500;
  std::string sy_out;
  sy->add_option("--stories", sy_cfg.num_stories)->capture_default_str();
  sy->add_option("--dim", sy_cfg.dim)->capture_default_str();
  sy->add_option("--sentences-per-story", sy_cfg.sentences_per_story)->capture_default_str();
  sy->add_option("--context-len", sy_cfg.context_len)->capture_default_str();
  sy->add_option("--noise", sy_cfg.noise_ratio, "noise norm relative to the signal")->capture_default_str();
  sy->add_option("--seed", sy_cfg.seed)->capture_default_str();
  sy->add_option("--heldout", sy_heldout, "stories held out for evaluation")->capture_default_str();
  sy->add_option("--out", sy_out)->required();

  // rerun
  auto* rr = app.add_subcommand("rerun", "replay the command recorded in a manifest");
  std::string rr_manifest, rr_out;
  bool rr_skip = false;
  rr->add_option("manifest", rr_manifest)->required()->check(CLI::ExistingFile);
  rr->add_option("--out", rr_out)->required();
  rr->add_flag("--skip-digest-check", rr_skip, "run even if inputs changed");

  try {
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  if (*imp) {
    Manifest manifest("import", argv);
    manifest.input("embeddings", imp_emb);
    const bool binary = has_embedding_magic(imp_emb);
    EmbeddingMatrix emb = binary ? read_embeddings(imp_emb) : read_text_matrix(imp_emb);
    emb.validate();
    manifest.config()["source_format"] = binary ? "slmb" : "text";
    manifest.config()["count"] = emb.count();
    manifest.config()["dim"] = emb.dim();
    std::optional<CorpusIndex> index;
    if (!imp_index.empty()) {
      manifest.input("index", imp_index);
      index = read_corpus_index(imp_index);
      validate_index_ids(*index, emb.count(), imp_index);
    }
    const auto out = prepare_out(imp_out);
    write_embeddings(emb, (out / "embeddings.slmb").string());
    manifest.artifact("embeddings", "embeddings.slmb");
    if (index) {
      write_corpus_index(*index, (out / "index.tsv").string());
      manifest.artifact("index", "index.tsv");
      manifest.config()["stories"] = index->size();
    }
    manifest.write(out);
    std::printf("imported %zu x %zu embeddings%s\n", emb.count(), emb.dim(),
                index ? (", " + std::to_string(index->size()) + " stories").c_str() : "");
    return 0;
  }

  if (*tr) {
    Manifest manifest("train", argv);
    manifest.input("embeddings", tr_emb);
    manifest.input("index", tr_index);
    manifest.input("config", tr_flags.config);
    const Corpus corpus = load_corpus(tr_emb, tr_index);
    const TrainConfig tc = tr_flags.resolve();
    const ModelConfig mc = tr_model.resolve(corpus.index, corpus.embeddings.dim());
    ValidationData val;
    if (!tr_val_cloze.empty()) {
      manifest.input("val_cloze", tr_val_cloze);
      val.cloze = read_cloze_set(tr_val_cloze);
      val.cloze.validate(corpus.embeddings.count());
    } else if (!tr_val_index.empty()) {
      manifest.input("val_index", tr_val_index);
      const CorpusIndex held = read_corpus_index(tr_val_index);
      validate_index_ids(held, corpus.embeddings.count(), tr_val_index);
      for (const auto& q : make_queries(held)) {
        val.query_contexts.push_back(q.context);
        val.query_truths.push_back(q.truth);
      }
      std::vector<std::string> pool_files = tr_val_pool;
      if (pool_files.empty()) pool_files = {tr_index, tr_val_index};
      val.pool = resolve_pool(pool_files, "", held.context_len, corpus.embeddings.count(), manifest);
    }
    manifest.seed(tc.seed);
    manifest.config()["model"] = to_json(mc);
    manifest.config()["train"] = to_json(tc);

    const auto out = prepare_out(tr_out);
    const TrainResult result = train(corpus.embeddings, corpus.index, mc, tc, val.empty() ? nullptr : &val);
    save_model((out / "model.slmp").string(), mc, result.params);
    save_optimizer((out / "optimizer.slmo").string(), mc, result.optimizer);
    write_text(out / "train_log.tsv", format_log(result.log));
    manifest.artifact("model", "model.slmp");
    manifest.artifact("optimizer", "optimizer.slmo");
    manifest.artifact("log", "train_log.tsv");
    manifest.config()["result"] = {{"steps_run", result.steps_run},
                                   {"best_step", result.best_step},
                                   {"stopped_early", result.stopped_early}};
    manifest.write(out);
    std::printf("trained %zu steps (best step %zu)%s\n", result.steps_run, result.best_step,
                result.stopped_early ? ", stopped early" : "");
    return 0;
  }

  if (*cl) {
    Manifest manifest("eval cloze", argv);
    manifest.input("model", cl_model);
    manifest.input("embeddings", cl_emb);
    manifest.input("cloze", cl_set);
    const auto ckpt = load_model(cl_model);
    const auto emb = read_embeddings(cl_emb);
    const auto set = read_cloze_set(cl_set);
    set.validate(emb.count());
    const auto r = eval_cloze(ckpt.params, ckpt.config, emb, set);
    const auto out = prepare_out(cl_out);
    std::ostringstream report;
    report << "accuracy\tcorrect\ttotal\tties\n";
    char line[128];
    std::snprintf(line, sizeof line, "%.9g\t%zu\t%zu\t%zu\n", r.accuracy, r.correct, r.total, r.ties);
    report << line;
    write_text(out / "cloze_report.tsv", report.str());
    manifest.artifact("report", "cloze_report.tsv");
    manifest.config()["model"] = to_json(ckpt.config);
    manifest.write(out);
    std::printf("cloze accuracy %.4f (%zu/%zu)\n", r.accuracy, r.correct, r.total);
    return 0;
  }

  if (*rk) {
    Manifest manifest("eval rank", argv);
    manifest.input("model", rk_model);
    manifest.input("embeddings", rk_emb);
    manifest.input("queries", rk_queries);
    const auto ckpt = load_model(rk_model);
    const auto emb = read_embeddings(rk_emb);
    const auto qindex = read_corpus_index(rk_queries);
    validate_index_ids(qindex, emb.count(), rk_queries);
    if (rk_pool.empty() && rk_pool_ids.empty()) throw ValidationError("eval rank needs --pool or --pool-ids");
    const auto pool = resolve_pool(rk_pool, rk_pool_ids, qindex.context_len, emb.count(), manifest);
    const auto ks = parse_list(rk_k, "--k");
    const auto queries = make_queries(qindex);
    check_truths_in_pool(queries, pool);
    const auto report = eval_ranking(ckpt.params, ckpt.config, emb, queries, pool, ks, threads);
    const auto out = prepare_out(rk_out);
    write_text(out / "rank_report.tsv", format_rank_report(report));
    manifest.artifact("report", "rank_report.tsv");
    if (!rk_text.empty()) {
      manifest.input("text", rk_text);
      const auto text = read_sentence_text(rk_text);
      if (text.size() != emb.count()) {
        throw ValidationError(rk_text + ": " + std::to_string(text.size()) + " lines for " +
                              std::to_string(emb.count()) + " embeddings");
      }
      std::ostringstream t;
      t << "query\trank\ttrue_text\ttop1_text\n";
      for (std::size_t q = 0; q < report.queries.size(); ++q) {
        const auto& r = report.queries[q];
        t << q << '\t' << r.rank << '\t' << text[r.true_id] << '\t' << text[r.top1_id] << '\n';
      }
      write_text(out / "rank_text.tsv", t.str());
      manifest.artifact("text_report", "rank_text.tsv");
    }
    manifest.config()["model"] = to_json(ckpt.config);
    manifest.config()["ks"] = ks;
    manifest.config()["pool_size"] = pool.size();
    manifest.config()["threads"] = threads;
    manifest.write(out);
    for (std::size_t i = 0; i < ks.size(); ++i) std::printf("P@%zu %.4f\n", ks[i], report.precision_at_k[i]);
    std::printf("MRR %.4f  median rank %.1f  mean rank %.1f  pool %zu\n", report.mrr, report.median_rank,
                report.mean_rank, report.pool_size);
    return 0;
  }

  if (*sw) {
    Manifest manifest("sweep", argv);
    manifest.input("embeddings", sw_emb);
    manifest.input("index", sw_index);
    manifest.input("queries", sw_queries);
    manifest.input("config", sw_flags.config);
    const Corpus corpus = load_corpus(sw_emb, sw_index);
    const TrainConfig tc = sw_flags.resolve();
    const ModelConfig mc = sw_model.resolve(corpus.index, corpus.embeddings.dim());
    const auto qindex = read_corpus_index(sw_queries);
    validate_index_ids(qindex, corpus.embeddings.count(), sw_queries);
    const auto pool = resolve_pool(sw_pool, "", qindex.context_len, corpus.embeddings.count(), manifest);
    const auto grid = parse_list(sw_grid, "--grid");
    const auto queries = make_queries(qindex);
    check_truths_in_pool(queries, pool);
    manifest.seed(tc.seed);
    manifest.config()["model"] = to_json(mc);
    manifest.config()["train"] = to_json(tc);
    manifest.config()["grid"] = grid;
    manifest.config()["pool_size"] = pool.size();

    const auto out = prepare_out(sw_out);
    const auto rows =
        sweep_distractors(corpus.embeddings, corpus.index, mc, tc, grid, queries, pool, threads);
    write_text(out / "sweep.tsv", format_sweep_table(rows));
    write_text(out / "sweep.dat", format_sweep_plot_data(rows));
    manifest.artifact("table", "sweep.tsv");
    manifest.artifact("plot_data", "sweep.dat");
    ordered_json failures = ordered_json::array();
    for (const auto& r : rows) {
      if (!r.ok) failures.push_back({{"num_distractors", r.num_distractors}, {"error", r.error}});
    }
    manifest.config()["failed_cells"] = failures;
    manifest.write(out);
    std::fputs(format_sweep_table(rows).c_str(), stdout);
    if (!failures.empty()) {
      std::fprintf(stderr, "slm: %zu of %zu sweep cells failed:\n", failures.size(), rows.size());
      for (const auto& f : failures) {
        std::fprintf(stderr, "  N-1=%zu: %s\n", f["num_distractors"].get<std::size_t>(),
                     f["error"].get<std::string>().c_str());
      }
      return kExitRuntime;
    }
    return 0;
  }

  if (*sy) {
    Manifest manifest("synth", argv);
    if (sy_heldout >= sy_cfg.num_stories) throw ValidationError("--heldout must be below --stories");
    const auto corpus = make_linear_map_corpus(sy_cfg);
    const auto [train_index, held] = split_corpus(corpus.index, sy_heldout);
    Rng rng(sy_cfg.seed, "synthetic_cloze");
    const auto cloze = make_random_cloze(held, candidate_pool(corpus.index, sy_cfg.context_len), rng);
    const auto out = prepare_out(sy_out);
    write_embeddings(corpus.embeddings, (out / "embeddings.slmb").string());
    write_corpus_index(corpus.index, (out / "all_index.tsv").string());
    write_corpus_index(train_index, (out / "train_index.tsv").string());
    write_corpus_index(held, (out / "heldout_index.tsv").string());
    write_cloze_set(cloze, (out / "heldout_cloze.tsv").string());
    manifest.seed(sy_cfg.seed);
    manifest.config() = {{"stories", sy_cfg.num_stories},
                         {"dim", sy_cfg.dim},
                         {"sentences_per_story", sy_cfg.sentences_per_story},
                         {"context_len", sy_cfg.context_len},
                         {"noise", sy_cfg.noise_ratio},
                         {"heldout", sy_heldout}};
    manifest.artifact("embeddings", "embeddings.slmb");
    manifest.artifact("index", "all_index.tsv");
    manifest.artifact("train_index", "train_index.tsv");
    manifest.artifact("heldout_index", "heldout_index.tsv");
    manifest.artifact("heldout_cloze", "heldout_cloze.tsv");
    manifest.write(out);
    std::printf("wrote %zu stories (%zu held out)\n", corpus.index.size(), held.size());
    return 0;
  }

  if (*rr) return cmd_rerun(rr_manifest, rr_out, rr_skip);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "slm: invalid input: %s\n", e.what());
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "slm: invalid input: %s\n", e.what());
    return kExitValidation;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "slm: invalid input: %s\n", e.what());
    return kExitValidation;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "slm: training failed: %s\n", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "slm: %s\n", e.what());
    return kExitRuntime;
  }
}
