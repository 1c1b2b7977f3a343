// cfgmoe: command-line pipeline for CFG malware classification with a
// mixture of multi-statistic GNN experts.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfgmoe/autoencoder.hpp"
#include "cfgmoe/cfg.hpp"
#include "cfgmoe/csv.hpp"
#include "cfgmoe/error.hpp"
#include "cfgmoe/explainer.hpp"
#include "cfgmoe/graph_io.hpp"
#include "cfgmoe/instruction_io.hpp"
#include "cfgmoe/metrics.hpp"
#include "cfgmoe/model_io.hpp"
#include "cfgmoe/training.hpp"
#include "cfgmoe/xai.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace cfgmoe::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("missing required input: ") + what);
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " not found: " + path);
}

json effective_config(const CLI::App& sub) {
  json cfg = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config") continue;
    const auto& res = opt->results();
    cfg[names.front()] = res.empty() ? opt->get_default_str() : res.back();
  }
  return cfg;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad sparsity value '" + item + "'");
    }
    if (!(out.back() >= 0.0 && out.back() <= 1.0)) throw ValidationError("sparsity " + item + " is outside [0, 1]");
  }
  if (out.empty()) throw ValidationError("empty sparsity grid");
  return out;
}

std::string default_grid_text() {
  std::string s;
  for (double v : default_sparsity_grid()) s += (s.empty() ? "" : ",") + format_double(v);
  return s;
}

/// Applies a split file ({"train": [...], "test": [...]}) if given.
Dataset select_split(const Dataset& ds, const std::string& split_path, const std::string& part) {
  if (split_path.empty()) return ds;
  require_file(split_path, "split file");
  json doc;
  try {
    doc = json::parse(read_text_file(split_path));
  } catch (const json::exception& e) {
    throw ValidationError(split_path + ": malformed split file (" + e.what() + ")");
  }
  if (!doc.contains(part)) throw ValidationError(split_path + ": no '" + part + "' list");
  const auto idx = doc[part].get<std::vector<std::size_t>>();
  for (auto i : idx) {
    if (i >= ds.size()) throw ValidationError(split_path + ": index " + std::to_string(i) + " out of range");
  }
  return subset(ds, idx);
}

// ---- stage options ----------------------------------------------------------

struct EncodeArgs {
  std::string input, format = "records", mode = "mean", level = "block", out, rows, ae, edges, graph_out, id;
  int label = 0;
};

struct TrainAeArgs {
  std::string input, out, history;
  std::size_t epochs = 500, batch_size = 0, window = 100;
  double lr = 1e-4, delta = 1e-6;
  std::uint64_t seed = 0;
};

struct SynthArgs {
  std::size_t per_class = 100, dim = 64;
  std::uint64_t seed = 0;
  std::string out = "synth";
};

struct ModelArgs {
  std::string variant = "topk", std_mode = "clamped";
  std::size_t k = 2, hidden = 64, layers = 3;
  double temperature = 0.5, dropout = 0.2;
};

struct TrainArgs {
  std::string dataset, out = "run";
  std::size_t epochs = 100, batch_size = 8;
  double lr = 3e-4, lb = 0.01, train_fraction = 0.8;
  bool no_lb = false;
  std::uint64_t seed = 0;
  ModelArgs model;
};

struct EvalArgs {
  std::string model, dataset, split, part = "test", out = "eval";
};

struct ExplainArgs {
  std::string model, graph, out = "explanation.json";
  std::size_t steps = 64;
  bool no_normalize = false;
};

struct XaiArgs {
  std::string model, dataset, split, part = "test", out = "xai", variant_name, sparsity;
  std::size_t steps = 64, threads = 0;
  bool no_normalize = false;
};

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--variant", m.variant, "Gate variant: topk, temperature or uniform");
  sub->add_option("--k", m.k, "Experts kept by the top-k gate");
  sub->add_option("--temperature", m.temperature, "Softmax temperature of the temperature gate");
  sub->add_option("--hidden", m.hidden, "Hidden width H of encoder layers, heads and gate");
  sub->add_option("--layers", m.layers, "Number of message-passing layers");
  sub->add_option("--dropout", m.dropout, "Dropout rate after each encoder layer (training only)");
  sub->add_option("--std-mode", m.std_mode, "Std statistic: clamped (sum of squared messages) or variance");
}

MoeConfig to_config(const ModelArgs& m) {
  MoeConfig c;
  c.variant = parse_gate_variant(m.variant);
  c.k = m.k;
  c.temperature = m.temperature;
  c.hidden = m.hidden;
  c.layers = m.layers;
  c.dropout = m.dropout;
  c.std_mode = parse_std_mode(m.std_mode);
  return c;
}

// ---- stages -----------------------------------------------------------------

void run_encode(const EncodeArgs& a, RunManifest& manifest) {
  require_file(a.input, "instruction file");
  const std::string text = read_text_file(a.input);
  std::vector<InstructionBlock> blocks;
  if (a.format == "records") {
    blocks = parse_instruction_records(text);
  } else if (a.format == "hex") {
    blocks = parse_instruction_hex(text);
  } else {
    throw ValidationError("--format must be records or hex");
  }
  const BlockAggregation mode = parse_block_aggregation(a.mode);
  if (a.level != "block" && a.level != "instruction") throw ValidationError("--level must be block or instruction");

  Tensor vectors = a.level == "block" ? encode_blocks(blocks, mode) : encode_instructions(blocks);
  if (!a.ae.empty()) {
    require_file(a.ae, "autoencoder");
    vectors = encode_nodes(load_autoencoder(a.ae), vectors);
  }
  if (a.out.empty() && a.graph_out.empty()) throw ValidationError("encode needs --out and/or --graph-out");
  if (!a.out.empty()) {
    write_matrix_csv(a.out, vectors);
    manifest.outputs.push_back(a.out);
  }
  if (!a.rows.empty()) {
    write_block_manifest(a.rows, blocks, mode);
    manifest.outputs.push_back(a.rows);
  }
  if (!a.graph_out.empty()) {
    if (a.level != "block") throw ValidationError("--graph-out needs --level block");
    require_file(a.edges, "edge list");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < blocks.size(); ++i) index[blocks[i].id] = i;
    json edges;
    try {
      edges = json::parse(read_text_file(a.edges));
    } catch (const json::exception& e) {
      throw ValidationError(a.edges + ": malformed edge list (" + e.what() + ")");
    }
    Cfg g;
    g.id = a.id.empty() ? fs::path(a.input).stem().string() : a.id;
    g.label = a.label;
    g.num_nodes = blocks.size();
    g.features = vectors;
    for (const auto& e : edges) {
      if (!e.is_array() || e.size() != 2) throw ValidationError(a.edges + ": each edge must be [from, to] block ids");
      const auto from = index.find(e[0].get<std::string>());
      const auto to = index.find(e[1].get<std::string>());
      if (from == index.end() || to == index.end()) {
        throw ValidationError(a.edges + ": edge " + e.dump() + " names an unknown block");
      }
      g.edges.push_back({from->second, to->second});
    }
    save_graph(g, a.graph_out);
    manifest.outputs.push_back(a.graph_out);
  }
}

void run_train_ae(const TrainAeArgs& a, RunManifest& manifest) {
  require_file(a.input, "vector file");
  if (a.out.empty()) throw ValidationError("train-ae needs --out");
  const Tensor vectors = read_matrix_csv(a.input);
  AutoencoderConfig cfg;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  cfg.batch_size = a.batch_size;
  cfg.early_stop_window = a.window;
  cfg.early_stop_delta = a.delta;
  const AutoencoderTraining result = train_autoencoder(vectors, cfg);
  save_autoencoder(result.params, a.out);
  manifest.outputs.push_back(a.out);
  const std::string history = a.history.empty() ? fs::path(a.out).replace_extension(".history.csv").string() : a.history;
  CsvTable t({"epoch", "mse"});
  for (std::size_t e = 0; e < result.history.size(); ++e) t.add_row({std::to_string(e), format_double(result.history[e])});
  t.write(history);
  manifest.outputs.push_back(history);
  std::cout << "trained " << result.history.size() << " epochs, final mse "
            << format_double(result.history.empty() ? reconstruction_mse(result.params, vectors) : result.history.back())
            << (result.stopped_early ? " (early stop)" : "") << "\n";
}

void run_synth(const SynthArgs& a, RunManifest& manifest) {
  const Dataset ds = synth_dataset({a.per_class, a.dim, a.seed});
  const fs::path manifest_path = save_dataset(ds, a.out);
  manifest.outputs.push_back(manifest_path);
  std::cout << "wrote " << ds.size() << " graphs to " << fs::path(a.out).generic_string() << "\n";
}

void write_metrics(const MoeModel& model, const Dataset& ds, const fs::path& dir, RunManifest& manifest) {
  std::vector<ModelOutput> outs;
  for (const auto& g : ds.graphs) outs.push_back(model_forward(model, g));
  std::vector<int> preds, labels;
  std::vector<std::string> header = {"index", "id", "label", "predicted", "logit_0", "logit_1"};
  for (std::size_t e = 0; e < kNumExperts; ++e) header.push_back("gate_" + expert_name(e));
  CsvTable table(std::move(header));
  for (std::size_t i = 0; i < outs.size(); ++i) {
    preds.push_back(outs[i].predicted);
    labels.push_back(ds.graphs[i].label);
    std::vector<std::string> row = {std::to_string(i), ds.graphs[i].id, std::to_string(ds.graphs[i].label),
                                    std::to_string(outs[i].predicted), format_double(outs[i].logits[0]),
                                    format_double(outs[i].logits[1])};
    for (double g : outs[i].gates) row.push_back(format_double(g));
    table.add_row(std::move(row));
  }
  const MetricsReport report = classify_metrics(preds, labels);
  write_text_file(dir / "metrics.json", report.to_json());
  table.write(dir / "predictions.csv");
  manifest.outputs.push_back(dir / "metrics.json");
  manifest.outputs.push_back(dir / "predictions.csv");
  std::cout << "accuracy " << format_double(report.accuracy) << " on " << ds.size() << " graphs\n";
}

void run_train(const TrainArgs& a, RunManifest& manifest) {
  require_file(a.dataset, "dataset manifest");
  const Dataset ds = load_dataset(a.dataset);
  const DatasetSplit split = stratified_split(ds, {a.train_fraction, a.seed});
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.lb_coefficient = a.lb;
  cfg.load_balancing = !a.no_lb;
  cfg.seed = a.seed;
  cfg.model = to_config(a.model);

  const fs::path dir = a.out;
  fs::create_directories(dir);
  json split_doc = {{"train", split.train}, {"test", split.test}};
  write_text_file(dir / "split.json", split_doc.dump() + "\n");
  manifest.outputs.push_back(dir / "split.json");

  const TrainResult result = train(subset(ds, split.train), cfg);
  save_model(result.model, dir / "model.json");
  history_table(result.history).write(dir / "history.csv");
  manifest.outputs.push_back(dir / "model.json");
  manifest.outputs.push_back(dir / "history.csv");
  write_metrics(result.model, subset(ds, split.test), dir, manifest);
}

void run_eval(const EvalArgs& a, RunManifest& manifest) {
  require_file(a.model, "model");
  require_file(a.dataset, "dataset manifest");
  const MoeModel model = load_model(a.model);
  const Dataset ds = select_split(load_dataset(a.dataset), a.split, a.part);
  fs::create_directories(a.out);
  write_metrics(model, ds, a.out, manifest);
}

void run_explain(const ExplainArgs& a, RunManifest& manifest) {
  require_file(a.model, "model");
  require_file(a.graph, "graph");
  const MoeModel model = load_model(a.model);
  ExplainOptions opts;
  opts.ig.steps = a.steps;
  opts.normalize = !a.no_normalize;
  const Explanation ex = explain(model, load_graph(a.graph), opts);
  write_text_file(a.out, explanation_json(ex));
  manifest.outputs.push_back(a.out);
}

void run_xai_eval(const XaiArgs& a, RunManifest& manifest) {
  require_file(a.model, "model");
  require_file(a.dataset, "dataset manifest");
  const MoeModel model = load_model(a.model);
  const Dataset ds = select_split(load_dataset(a.dataset), a.split, a.part);
  XaiEvalOptions opts;
  opts.explain.ig.steps = a.steps;
  opts.explain.normalize = !a.no_normalize;
  opts.sparsity = parse_grid(a.sparsity.empty() ? default_grid_text() : a.sparsity);
  opts.threads = a.threads;
  const XaiEvalResult r = run_xai_eval(model, ds, opts);

  std::string variant = a.variant_name;
  if (variant.empty()) {
    variant = std::string(to_string(model.config().variant));
    if (model.config().variant == GateVariant::TopK) variant += std::to_string(model.config().k);
  }
  const fs::path dir = a.out;
  fidelity_table(r.fidelity, variant).write(dir / "fidelity_sweep.csv");
  ecdf_table(r.ecdf).write(dir / "entropy_ecdf.csv");
  gate_box_table(r.boxes).write(dir / "gate_boxes.csv");
  CsvTable per_graph({"index", "id", "predicted", "entropy"});
  json explanations = json::array();
  for (std::size_t i = 0; i < r.explanations.size(); ++i) {
    per_graph.add_row({std::to_string(i), r.explanations[i].graph_id, std::to_string(r.explanations[i].predicted_class),
                       format_double(r.entropies[i])});
    explanations.push_back(json::parse(explanation_json(r.explanations[i])));
  }
  per_graph.write(dir / "entropy.csv");
  write_text_file(dir / "explanations.json", explanations.dump() + "\n");
  for (const char* f : {"fidelity_sweep.csv", "entropy_ecdf.csv", "gate_boxes.csv", "entropy.csv", "explanations.json"}) {
    manifest.outputs.push_back(dir / f);
  }
  if (r.coselection) {
    coselection_table(*r.coselection).write(dir / "coselection.csv");
    manifest.outputs.push_back(dir / "coselection.csv");
    std::cout << "co-selection entropy " << format_double(coselection_entropy(*r.coselection)) << "\n";
  }
}

// ---- config expansion -------------------------------------------------------

/// Turns {"key": value} into "--key value" arguments. Booleans become bare
/// flags when true; arrays become comma-separated lists.
std::vector<std::string> config_arguments(const std::string& path, const CLI::App& sub) {
  require_file(path, "config file");
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_object()) throw ValidationError(path + ": config must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : doc.items()) {
    if (sub.get_option_no_throw("--" + key) == nullptr) continue;  // belongs to another stage
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + key);
      continue;
    }
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (const auto& item : value) text += (text.empty() ? "" : ",") + (item.is_string() ? item.get<std::string>() : item.dump());
    } else {
      text = value.dump();
    }
    args.push_back("--" + key);
    args.push_back(text);
  }
  return args;
}

int run(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts GNN pipeline for control flow graph classification"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  std::string config_path;

  EncodeArgs enc;
  auto* encode = app.add_subcommand("encode", "Encode instruction blocks into 439-dim vectors (or AE latents)");
  encode->add_option("--in", enc.input, "Instruction file (BLOCK headers + records or hex lines)");
  encode->add_option("--format", enc.format, "records or hex");
  encode->add_option("--mode", enc.mode, "Block aggregation: mean or max");
  encode->add_option("--level", enc.level, "block (one row per block) or instruction (one row per instruction)");
  encode->add_option("--out", enc.out, "Output CSV matrix");
  encode->add_option("--rows", enc.rows, "Sidecar JSON mapping rows to block ids");
  encode->add_option("--ae", enc.ae, "Autoencoder params; output latents instead of raw encodings");
  encode->add_option("--edges", enc.edges, "JSON list of [from, to] block-id pairs for --graph-out");
  encode->add_option("--graph-out", enc.graph_out, "Write a graph file with one node per block");
  encode->add_option("--label", enc.label, "Graph label for --graph-out (0 benign, 1 malicious)");
  encode->add_option("--id", enc.id, "Graph id for --graph-out");

  TrainAeArgs ae;
  auto* train_ae = app.add_subcommand("train-ae", "Train the feature autoencoder on a CSV of 439-dim rows");
  train_ae->add_option("--in", ae.input, "CSV matrix of encodings");
  train_ae->add_option("--out", ae.out, "Output params JSON");
  train_ae->add_option("--history", ae.history, "Loss history CSV (default: <out>.history.csv)");
  train_ae->add_option("--epochs", ae.epochs, "Maximum epochs");
  train_ae->add_option("--lr", ae.lr, "Adam learning rate");
  train_ae->add_option("--batch-size", ae.batch_size, "Rows per step, 0 for the full corpus");
  train_ae->add_option("--early-stop-window", ae.window, "Epoch window for early stopping, 0 to disable");
  train_ae->add_option("--early-stop-delta", ae.delta, "Minimum improvement over the window");
  train_ae->add_option("--seed", ae.seed, "Random seed");

  SynthArgs syn;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled CFG dataset");
  synth->add_option("--n", syn.per_class, "Graphs per class");
  synth->add_option("--dim", syn.dim, "Node feature dimension");
  synth->add_option("--seed", syn.seed, "Random seed");
  synth->add_option("--out", syn.out, "Output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the mixture-of-experts classifier");
  train_cmd->add_option("--dataset", tr.dataset, "Dataset manifest");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", tr.batch_size, "Graphs per mini-batch");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--lb", tr.lb, "Load-balancing coefficient");
  train_cmd->add_flag("--no-lb", tr.no_lb, "Disable the load-balancing term");
  train_cmd->add_option("--train-fraction", tr.train_fraction, "Fraction of each class used for training");
  train_cmd->add_option("--seed", tr.seed, "Random seed (split, init, shuffling, dropout)");
  add_model_options(train_cmd, tr.model);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Classification metrics of a trained model");
  eval->add_option("--model", ev.model, "Model JSON");
  eval->add_option("--dataset", ev.dataset, "Dataset manifest");
  eval->add_option("--split", ev.split, "Split JSON written by train; restricts to --part");
  eval->add_option("--part", ev.part, "train or test");
  eval->add_option("--out", ev.out, "Output directory");

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "Routing-aware integrated-gradients edge attribution for one graph");
  explain_cmd->add_option("--model", ex.model, "Model JSON");
  explain_cmd->add_option("--graph", ex.graph, "Graph JSON");
  explain_cmd->add_option("--steps", ex.steps, "Riemann steps");
  explain_cmd->add_flag("--no-normalize", ex.no_normalize, "Keep raw per-expert scores");
  explain_cmd->add_option("--out", ex.out, "Output JSON");

  XaiArgs xa;
  auto* xai = app.add_subcommand("xai-eval", "Fidelity sweep and routing analytics over a dataset");
  xai->add_option("--model", xa.model, "Model JSON");
  xai->add_option("--dataset", xa.dataset, "Dataset manifest");
  xai->add_option("--split", xa.split, "Split JSON written by train; restricts to --part");
  xai->add_option("--part", xa.part, "train or test");
  xai->add_option("--out", xa.out, "Output directory");
  xai->add_option("--steps", xa.steps, "Riemann steps");
  xai->add_flag("--no-normalize", xa.no_normalize, "Keep raw per-expert scores");
  xai->add_option("--sparsity", xa.sparsity, "Comma-separated sparsity levels (default 0.05..0.95)");
  xai->add_option("--variant-name", xa.variant_name, "Label for the variant column");
  xai->add_option("--threads", xa.threads, "Worker threads, 0 for all cores");

  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) {
    sub->add_option("--config", config_path, "JSON run configuration; command-line flags win");
  }

  // Expand --config into ordinary arguments placed before the user's, so the
  // user's flags take precedence under the take-last policy.
  std::vector<std::string> args(argv + 1, argv + argc);
  if (!args.empty()) {
    CLI::App* sub = app.get_subcommand_no_throw(args.front());
    for (std::size_t i = 1; sub != nullptr && i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty()) continue;
      const auto extra = config_arguments(path, *sub);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
      break;
    }
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest;
  manifest.command = sub->get_name();
  manifest.config = effective_config(*sub);
  fs::path manifest_path;
  const std::string name = sub->get_name();
  if (name == "encode") {
    run_encode(enc, manifest);
    manifest_path = fs::path(enc.out.empty() ? enc.graph_out : enc.out).concat(".manifest.json");
  } else if (name == "train-ae") {
    manifest.seed = ae.seed;
    run_train_ae(ae, manifest);
    manifest_path = fs::path(ae.out).concat(".manifest.json");
  } else if (name == "synth") {
    manifest.seed = syn.seed;
    run_synth(syn, manifest);
    manifest_path = fs::path(syn.out) / "run_manifest.json";
  } else if (name == "train") {
    manifest.seed = tr.seed;
    run_train(tr, manifest);
    manifest_path = fs::path(tr.out) / "run_manifest.json";
  } else if (name == "eval") {
    run_eval(ev, manifest);
    manifest_path = fs::path(ev.out) / "run_manifest.json";
  } else if (name == "explain") {
    run_explain(ex, manifest);
    manifest_path = fs::path(ex.out).concat(".manifest.json");
  } else if (name == "xai-eval") {
    run_xai_eval(xa, manifest);
    manifest_path = fs::path(xa.out) / "run_manifest.json";
  }
  manifest.write(manifest_path);
  return kExitOk;
}

}  // namespace
}  // namespace cfgmoe::cli

int main(int argc, char** argv) {
  using namespace cfgmoe;
  std::string stage = argc > 1 ? argv[1] : "cfgmoe";
  try {
    return cli::run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "cfgmoe " << stage << ": error: " << e.what() << "\n";
    return cli::kExitValidation;
  } catch (const DivergenceError& e) {
    std::cerr << "cfgmoe " << stage << ": diverged";
    if (e.epoch() >= 0) std::cerr << " at epoch " << e.epoch();
    std::cerr << ": " << e.what() << "\n";
    return cli::kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "cfgmoe " << stage << ": runtime failure: " << e.what() << "\n";
    return cli::kExitRuntime;
  }
}
