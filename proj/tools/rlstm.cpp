// rlstm: train, decode and evaluate stacked residual LSTM paraphrase models.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rlstm/checkpoint.hpp"
#include "rlstm/config.hpp"
#include "rlstm/data.hpp"
#include "rlstm/decoder.hpp"
#include "rlstm/gradcheck.hpp"
#include "rlstm/metrics.hpp"
#include "rlstm/trainer.hpp"

namespace fs = std::filesystem;
using namespace rlstm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  RunConfig config;
};

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

void resolve(Invocation& inv) {
  if (!inv.config_path.empty()) inv.config.apply_file(inv.config_path);
  for (const auto& k : RunConfig::keys()) {
    if (auto it = inv.overrides.find(k.name); it != inv.overrides.end()) inv.config.set(k.name, it->second);
  }
  inv.config.validate();
  std::cerr << "# resolved configuration\n" << inv.config.echo();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::string line;
  if (path == "-") {
    while (std::getline(std::cin, line)) lines.push_back(line);
    return lines;
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string train_path;
  std::string valid_path;
  std::string out_dir;
};

template <std::floating_point T>
void train_with(const RunConfig& cfg, const Vocabulary& vocab, const std::vector<IndexPair>& train_pairs,
                const std::vector<IndexPair>& valid, const fs::path& out) {
  Rng init(cfg.count("seed"));
  auto params = ModelParams<T>::random(cfg.stack(), vocab.size(), init, cfg.real("init_scale"), cfg.real("forget_bias"));
  params.reverse_source = cfg.boolean("reverse_source");
  params.vocab_hash = vocab.hash();
  std::cerr << "model: " << params.parameter_count() << " parameters, vocabulary " << vocab.size() << "\n";
  TrainOptions options;
  options.checkpoint_dir = out;
  options.on_epoch = [](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch + 1 << " lr " << e.lr << " train ppl " << e.train_perplexity;
    if (e.valid_perplexity > 0.0) std::cerr << " valid ppl " << e.valid_perplexity;
    std::cerr << " steps " << e.steps << "\n";
  };
  auto result = rlstm::train(std::move(params), train_pairs, valid, cfg.train(), options);
  write_text(out / "curves.csv", result.report.csv());
  std::cerr << "wrote " << latest_checkpoint_path(out).string() << " and " << (out / "curves.csv").string() << "\n";
}

void cmd_train(const Invocation& inv, const TrainArgs& args) {
  const RunConfig& cfg = inv.config;
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_text(out / "config.txt", cfg.echo());

  const auto train_data = load_pairs_tsv(args.train_path);
  if (train_data.skipped > 0) std::cerr << "train: skipped " << train_data.skipped << " malformed lines\n";
  if (train_data.pairs.empty()) throw DataError("no training pairs in " + args.train_path);
  TsvLoadResult valid_data;
  if (!args.valid_path.empty()) {
    valid_data = load_pairs_tsv(args.valid_path);
    if (valid_data.skipped > 0) std::cerr << "valid: skipped " << valid_data.skipped << " malformed lines\n";
  }
  const Vocabulary vocab = build_vocab(pair_sentences(train_data.pairs), cfg.count("vocab_size"));
  vocab.save(out / "vocab.txt");
  const auto train = encode_pairs(train_data.pairs, vocab);
  const auto valid = encode_pairs(valid_data.pairs, vocab);
  if (cfg.precision() == 64) {
    train_with<double>(cfg, vocab, train, valid, out);
  } else {
    train_with<float>(cfg, vocab, train, valid, out);
  }
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string model_path;
  std::string vocab_path;
  std::string input_path;
  std::string output_path;
};

template <std::floating_point T>
void generate_with(const RunConfig& cfg, const GenerateArgs& args, const Vocabulary& vocab, std::ostream& out) {
  const auto params = load_checkpoint<T>(args.model_path, vocab.hash());
  const DecodeConfig dc = cfg.decode();
  std::size_t blank = 0;
  for (const auto& line : read_lines(args.input_path)) {
    const std::string source = join(tokenize(line));
    if (source.empty()) {
      ++blank;
      continue;
    }
    write_generations(out, source, generate(params, vocab, source, dc));
  }
  if (blank > 0) std::cerr << "generate: skipped " << blank << " blank lines\n";
}

void cmd_generate(const Invocation& inv, const GenerateArgs& args) {
  const fs::path vocab_path =
      args.vocab_path.empty() ? fs::path(args.model_path).parent_path() / "vocab.txt" : fs::path(args.vocab_path);
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  const auto manifest = read_checkpoint_manifest(args.model_path);
  std::ofstream file;
  if (!args.output_path.empty()) {
    file.open(args.output_path);
    if (!file) throw IoError("cannot write " + args.output_path);
  }
  std::ostream& out = args.output_path.empty() ? std::cout : file;
  if (manifest.precision_bytes == 8) {
    generate_with<double>(inv.config, args, vocab, out);
  } else {
    generate_with<float>(inv.config, args, vocab, out);
  }
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string candidates;
  std::vector<std::string> references;
  std::string sources;
  std::string compare;
  std::string embeddings;
  bool emb_greedy = false;
  std::string model_path;
  std::string vocab_path;
  std::string format = "table";
};

std::vector<EvalInstance> load_instances(const std::string& candidates, const std::vector<std::string>& references,
                                         const std::string& sources) {
  const auto cand = read_lines(candidates);
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) {
    refs.push_back(read_lines(r));
    if (refs.back().size() != cand.size()) {
      throw DataError("misaligned inputs: " + candidates + " has " + std::to_string(cand.size()) + " lines, " + r +
                      " has " + std::to_string(refs.back().size()));
    }
  }
  std::vector<std::string> src;
  if (!sources.empty()) {
    src = read_lines(sources);
    if (src.size() != cand.size()) {
      throw DataError("misaligned inputs: " + candidates + " has " + std::to_string(cand.size()) + " lines, " +
                      sources + " has " + std::to_string(src.size()));
    }
  }
  std::vector<EvalInstance> out(cand.size());
  for (std::size_t i = 0; i < cand.size(); ++i) {
    out[i].candidate = tokenize(cand[i]);
    if (!src.empty()) out[i].source = tokenize(src[i]);
    for (const auto& r : refs) out[i].references.push_back(tokenize(r[i]));
  }
  if (out.empty()) throw DataError("no instances in " + candidates);
  return out;
}

template <std::floating_point T>
double perplexity_with(const EvaluateArgs& args, const Vocabulary& vocab, const std::vector<EvalInstance>& insts) {
  const auto params = load_checkpoint<T>(args.model_path, vocab.hash());
  std::vector<IndexPair> pairs;
  for (const auto& inst : insts) {
    for (const auto& r : inst.references) pairs.push_back({vocab.encode(inst.source), vocab.encode(r)});
  }
  return corpus_perplexity(params, std::span<const IndexPair>(pairs));
}

void cmd_evaluate(const Invocation& inv, const EvaluateArgs& args) {
  const RunConfig& cfg = inv.config;
  const auto insts = load_instances(args.candidates, args.references, args.sources);
  MetricReport report;
  report.instances = insts.size();
  report.bleu = bleu(insts);
  const auto ter_result = ter_detail(insts);
  report.ter = ter_result.score;
  report.ter_skipped = ter_result.skipped;
  if (report.ter_skipped > 0) std::cerr << "ter: skipped " << report.ter_skipped << " instances with empty references\n";

  std::optional<EmbeddingTable> table;
  if (args.emb_greedy) {
    if (args.embeddings.empty()) throw ConfigError("--emb-greedy needs --embeddings FILE");
    table = EmbeddingTable::load(args.embeddings);
    const auto eg = emb_greedy_detail(insts, *table);
    report.emb_greedy = eg.score;
    report.emb_skipped_instances = eg.skipped_instances;
    report.emb_skipped_tokens = eg.skipped_tokens;
    if (eg.skipped_instances > 0) {
      std::cerr << "emb_greedy: skipped " << eg.skipped_instances << " instances without embedded tokens\n";
    }
  }
  if (!args.model_path.empty()) {
    if (args.sources.empty()) throw ConfigError("perplexity needs --sources FILE");
    const fs::path vocab_path =
        args.vocab_path.empty() ? fs::path(args.model_path).parent_path() / "vocab.txt" : fs::path(args.vocab_path);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const auto manifest = read_checkpoint_manifest(args.model_path);
    report.perplexity = manifest.precision_bytes == 8 ? perplexity_with<double>(args, vocab, insts)
                                                      : perplexity_with<float>(args, vocab, insts);
  }

  if (!args.compare.empty()) {
    const auto other = load_instances(args.compare, args.references, args.sources);
    if (other.size() != insts.size()) {
      throw DataError("misaligned inputs: " + args.candidates + " has " + std::to_string(insts.size()) + " lines, " +
                      args.compare + " has " + std::to_string(other.size()));
    }
    std::map<std::string, CorpusMetric> metrics{
        {"bleu", [](std::span<const EvalInstance> s) { return bleu(s); }},
        {"ter", [](std::span<const EvalInstance> s) { return ter(s); }},
    };
    if (table) {
      const EmbeddingTable* t = &*table;
      metrics["emb_greedy"] = [t](std::span<const EvalInstance> s) { return emb_greedy(s, *t); };
    }
    const std::size_t resamples = cfg.count("bootstrap_resamples");
    const std::size_t iterations = cfg.count("ar_iterations");
    const std::uint64_t seed = cfg.count("seed");
    for (const auto& [name, metric] : metrics) {
      if (insts.size() >= 2 && resamples > 0) report.variances[name] = bootstrap_variance(insts, metric, resamples, seed);
      report.p_values[name] = ar_test(insts, other, metric, iterations, seed).p_value;
    }
  }
  if (args.format == "kv") {
    std::cout << report.key_values();
  } else {
    std::cout << report.table();
  }
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(const Invocation& inv, bool corrupt) {
  GradCheckOptions opt;
  opt.seed = inv.config.count("seed");
  opt.dim_fix = parse_dim_fix(inv.config.get("dim_fix"));
  opt.corrupt_backward = corrupt;
  std::cerr << "gradcheck: " << opt.layers << "-layer model, residual every " << opt.residual_interval << ", hidden "
            << opt.hidden << ", vocab " << opt.vocab << ", length " << opt.length << ", double precision\n";
  const auto report = run_gradcheck(opt);
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& t : report.tensors) std::cout << std::left << std::setw(22) << t.name << ' ' << t.max_relative_error << '\n';
  std::cout << "max " << report.max_relative_error() << " tolerance " << report.tolerance << '\n';
  if (report.passed()) return kExitOk;
  std::cerr << "gradcheck failed for:";
  for (const auto& name : report.offenders()) std::cerr << ' ' << name;
  std::cerr << '\n';
  return kExitNumerical;
}

void cmd_make_toy(const Invocation& inv, const std::string& out_dir) {
  const auto spec = inv.config.toy();
  const auto corpus = make_toy_corpus(spec);
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_pairs_tsv(out / "train.tsv", corpus.train);
  write_pairs_tsv(out / "valid.tsv", corpus.valid);
  write_text(out / "config.txt", inv.config.echo());
  std::cerr << "wrote " << corpus.train.size() << " training and " << corpus.valid.size() << " validation pairs to "
            << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stacked residual LSTM paraphrase generation"};
  app.require_subcommand(1);
  app.fallthrough();
  Invocation inv;
  app.add_option("--config", inv.config_path, "key=value configuration file (flags override it)")
      ->envname("RLSTM_CONFIG");
  for (const auto& k : RunConfig::keys()) {
    app.add_option_function<std::string>(
           flag_name(k.name), [&inv, name = k.name](const std::string& v) { inv.overrides[name] = v; },
           k.help + " [" + k.default_value + "]")
        ->group("Configuration");
  }

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "build a vocabulary, train, and write checkpoints and curves");
  train->add_option("--train", train_args.train_path, "training pairs (source<TAB>reference)")->required();
  train->add_option("--valid", train_args.valid_path, "validation pairs");
  train->add_option("--out", train_args.out_dir, "output directory")->required();

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "beam-decode paraphrases for each input line");
  gen->add_option("--model", gen_args.model_path, "checkpoint")->required();
  gen->add_option("--vocab", gen_args.vocab_path, "vocabulary (default: vocab.txt next to the checkpoint)");
  gen->add_option("--input", gen_args.input_path, "one source per line, - for stdin")->required();
  gen->add_option("--output", gen_args.output_path, "output file (default: stdout)");

  EvaluateArgs eval_args;
  auto* eval = app.add_subcommand("evaluate", "score candidates against references");
  eval->add_option("--candidates", eval_args.candidates, "system output, one per line")->required();
  eval->add_option("--references", eval_args.references, "reference files, one reference per line")->required();
  eval->add_option("--sources", eval_args.sources, "source lines (needed for perplexity)");
  eval->add_option("--compare", eval_args.compare, "second system for variance and significance");
  eval->add_option("--embeddings", eval_args.embeddings, "word vectors in text format");
  eval->add_flag("--emb-greedy", eval_args.emb_greedy, "report embedding greedy matching");
  eval->add_option("--model", eval_args.model_path, "checkpoint for perplexity of references given sources");
  eval->add_option("--vocab", eval_args.vocab_path, "vocabulary for --model");
  eval->add_option("--format", eval_args.format, "table or kv")->check(CLI::IsMember({"table", "kv"}));

  bool corrupt = false;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients of a tiny model");
  gc->add_flag("--corrupt-backward", corrupt)->group("");

  std::string toy_out;
  auto* toy = app.add_subcommand("make-toy", "write a synthetic copy or substitution corpus");
  toy->add_option("--out", toy_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    resolve(inv);
    if (train->parsed()) cmd_train(inv, train_args);
    if (gen->parsed()) cmd_generate(inv, gen_args);
    if (eval->parsed()) cmd_evaluate(inv, eval_args);
    if (gc->parsed()) return cmd_gradcheck(inv, corrupt);
    if (toy->parsed()) cmd_make_toy(inv, toy_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
