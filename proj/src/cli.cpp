#include "hgn/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "hgn/error.hpp"
#include "hgn/eval.hpp"
#include "hgn/gradcheck.hpp"
#include "hgn/io.hpp"
#include "hgn/synthetic.hpp"

namespace hgn::cli {

namespace fs = std::filesystem;

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || p != end) {
    throw ContractError("invalid value for '" + key + "': '" + value + "'");
  }
  return out;
}

std::vector<std::size_t> parse_ks(const std::string& value) {
  std::vector<std::size_t> ks;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) ks.push_back(parse_number<std::size_t>("ks", part));
  if (ks.empty()) throw ContractError("ks must list at least one cutoff");
  return ks;
}

std::string join_ks(const std::vector<std::size_t>& ks) {
  std::string s;
  for (std::size_t i = 0; i < ks.size(); ++i) s += (i ? "," : "") + std::to_string(ks[i]);
  return s;
}

std::string format_real(double x) {
  std::ostringstream out;
  out << std::setprecision(17) << x;
  return out.str();
}

std::string with_commas(std::size_t n) {
  std::string digits = std::to_string(n);
  for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) {
    digits.insert(static_cast<std::size_t>(i), ",");
  }
  return digits;
}

fs::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (p.empty() || p.is_absolute() || fs::exists(p)) return p;
  if (const char* dir = std::getenv(kDataDirEnv); dir != nullptr && *dir != '\0') {
    const fs::path candidate = fs::path(dir) / p;
    if (fs::exists(candidate)) return candidate;
  }
  return p;
}

fs::path require_out(const RunConfig& c) {
  if (c.out.empty()) throw ContractError("--out is required");
  fs::create_directories(c.out);
  return fs::path(c.out);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f || !(f << text)) throw IoError("cannot write '" + path.string() + "'");
}

SplitLog load_split(const RunConfig& c) {
  if (c.bundle.empty()) throw ContractError("--bundle is required");
  return load_bundle(resolve_data_path(c.bundle));
}

EvalConfig eval_config(const RunConfig& c, const Variant& variant, std::size_t context_len) {
  EvalConfig e;
  e.context_len = context_len;
  e.variant = variant;
  e.ks = c.ks;
  e.workers = c.train.workers;
  return e;
}

struct RunOutcome {
  TrainResult train;
  MetricReport test;
};

RunOutcome train_and_evaluate(const SplitLog& split, const TrainConfig& tc, const RunConfig& c,
                              std::ostream& log) {
  RunOutcome r;
  r.train = train(split, tc, [&](const EpochStats& s, const ModelParams&) {
    log << "[" << tc.variant.tag() << "] " << s.log_line() << '\n';
  });
  r.test = evaluate(r.train.params, split, eval_config(c, tc.variant, tc.context_len));
  return r;
}

std::string metric_header(const std::vector<std::size_t>& ks) {
  std::string h;
  for (const auto k : ks) h += "\tR@" + std::to_string(k);
  for (const auto k : ks) h += "\tN@" + std::to_string(k);
  return h;
}

std::string metric_cells(const MetricReport& m) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6);
  for (const double r : m.recall) out << '\t' << r;
  for (const double n : m.ndcg) out << '\t' << n;
  return out.str();
}

// --- subcommands ---------------------------------------------------------

int cmd_generate(const SyntheticConfig& sc, const std::string& output, std::ostream& out) {
  if (output.empty()) throw ContractError("--output is required");
  const auto rows = generate_ratings(sc);
  write_ratings_csv(output, rows);
  out << "wrote " << rows.size() << " ratings for " << sc.users << " users to " << output << '\n';
  return kExitOk;
}

int cmd_prepare(const RunConfig& c, std::ostream& out) {
  if (c.input.empty()) throw ContractError("--input is required");
  const auto dir = require_out(c);
  FilterRules rules;
  rules.mode = parse_filter_mode(c.filter);
  const auto log = load_interactions(resolve_data_path(c.input), parse_input_format(c.format), rules);
  const auto split = chronological_split(log);
  save_bundle(dir / "bundle.hgnb", split);

  std::ostringstream density;
  density << std::fixed << std::setprecision(3) << 100.0 * log.density() << '%';
  std::ostringstream table;
  table << std::left << std::setw(10) << "#Users" << std::setw(10) << "#Items" << std::setw(16)
        << "#Interactions" << "Density\n"
        << std::setw(10) << log.num_users << std::setw(10) << log.num_items << std::setw(16)
        << log.num_interactions() << density.str() << '\n';
  out << table.str();
  write_text(dir / "stats.txt", table.str());

  nlohmann::ordered_json j;
  j["users"] = log.num_users;
  j["items"] = log.num_items;
  j["interactions"] = log.num_interactions();
  j["density"] = log.density();
  write_text(dir / "stats.json", j.dump(2) + "\n");
  write_text(dir / "config.txt", c.to_text());
  return kExitOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const auto dir = require_out(c);
  const auto split = load_split(c);
  const auto& tc = c.train;
  out << "config: d=" << tc.dim << " L=" << tc.context_len << " T=" << tc.horizon
      << " lr=" << tc.lr << " lambda=" << tc.lambda << " batch=" << tc.batch
      << " epochs=" << tc.epochs << " variant=" << tc.variant.tag() << " seed=" << tc.seed << '\n';
  write_text(dir / "config.txt", c.to_text());

  std::ofstream log(dir / "train_log.txt", std::ios::trunc);
  auto result = train(split, tc, [&](const EpochStats& s, const ModelParams& params) {
    out << s.log_line() << '\n';
    log << s.log_line() << '\n';
    if (c.checkpoint_every > 0 && s.epoch % c.checkpoint_every == 0) {
      save_checkpoint(dir / ("checkpoint_epoch" + std::to_string(s.epoch) + ".hgnc"),
                      {params, tc.variant, s.epoch});
    }
    if (c.validate_every > 0 && s.epoch % c.validate_every == 0) {
      auto ec = eval_config(c, tc.variant, tc.context_len);
      ec.target = HeldOut::Validation;
      const auto m = evaluate(params, split, ec);
      std::ostringstream line;
      line << "epoch=" << s.epoch << std::fixed << std::setprecision(6);
      for (std::size_t i = 0; i < m.ks.size(); ++i) {
        line << " val_recall@" << m.ks[i] << '=' << m.recall[i] << " val_ndcg@" << m.ks[i] << '='
             << m.ndcg[i];
      }
      out << line.str() << '\n';
      log << line.str() << '\n';
    }
  });
  save_checkpoint(dir / "checkpoint.hgnc", {result.params, tc.variant, tc.epochs});
  out << "checkpoint: " << (dir / "checkpoint.hgnc").string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  if (c.checkpoint.empty()) throw ContractError("--checkpoint is required");
  const auto split = load_split(c);
  const auto ckpt = load_checkpoint(c.checkpoint);
  const auto dims = ckpt.params.dims();
  const auto report = evaluate(ckpt.params, split, eval_config(c, ckpt.variant, dims.context_len));
  out << "variant: " << ckpt.variant.tag() << '\n' << report.to_table();
  if (!c.out.empty()) {
    const auto dir = require_out(c);
    write_text(dir / "metrics.json", report.to_json() + "\n");
    write_text(dir / "metrics.txt", report.to_table());
    write_text(dir / "config.txt", c.to_text());
  }
  return kExitOk;
}

const char* ablation_row(const Variant& v) {
  const std::string tag = v.tag();
  if (tag == "BPR") return "(1)";
  if (tag == "BPR+F+avg") return "(2)";
  if (tag == "BPR+F+max") return "(3)";
  if (tag == "BPR+I+avg") return "(4)";
  if (tag == "BPR+I+max") return "(5)";
  if (tag == "BPR+F+I+avg") return "(8)";
  if (tag == "BPR+F+I+max") return "(9)";
  if (tag == "HGN") return "(10)";
  return "";
}

int cmd_ablate(const RunConfig& c, std::ostream& out) {
  const auto dir = require_out(c);
  const auto split = load_split(c);
  write_text(dir / "config.txt", c.to_text());

  const std::string header = "row\tvariant\tseed" + metric_header(c.ks) + "\n";
  std::string tsv = header;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& v : ablation_variants()) {
    TrainConfig tc = c.train;
    tc.variant = v;
    const auto r = train_and_evaluate(split, tc, c, out);
    tsv += std::string(ablation_row(v)) + "\t" + v.tag() + "\t" + std::to_string(tc.seed) +
           metric_cells(r.test) + "\n";
    nlohmann::ordered_json row;
    row["row"] = ablation_row(v);
    row["variant"] = v.tag();
    row["seed"] = tc.seed;
    row["final_loss"] = r.train.epochs.empty() ? 0.0 : r.train.epochs.back().mean_loss;
    row["metrics"] = nlohmann::ordered_json::parse(r.test.to_json());
    rows.push_back(row);
    // Rewritten after every variant so a failure keeps finished rows.
    write_text(dir / "ablation.tsv", tsv);
    write_text(dir / "ablation.json", rows.dump(2) + "\n");
  }
  out << tsv << "rows (6) BPR+GRU and (7) BPR+CNN are not part of this build\n";
  return kExitOk;
}

struct GradcheckArgs {
  GradCheckOptions options;
  std::string variant = "all";
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<Variant> variants;
  if (a.variant == "all") {
    variants = ablation_variants();
    variants.push_back(Variant::parse("HGN+max"));
  } else {
    variants.push_back(Variant::parse(a.variant));
  }
  out << "gradcheck d=" << a.options.dim << " L=" << a.options.context_len
      << " N=" << a.options.num_items << " seed=" << a.options.seed << " h=" << a.options.step
      << " tol=" << a.options.tolerance << '\n';
  bool all_pass = true;
  for (const auto& v : variants) {
    const auto rep = check_gradients(a.options, v);
    all_pass = all_pass && rep.pass;
    out << (rep.pass ? "PASS " : "FAIL ") << v.tag() << (rep.sparsity_ok ? "" : " (sparsity violated)")
        << '\n';
    for (const auto& t : rep.tensors) {
      out << "  " << std::left << std::setw(5) << t.tensor << (t.pass ? " ok   " : " FAIL ")
          << "coords=" << std::setw(4) << t.coordinates << " max_rel_err=" << std::scientific
          << std::setprecision(3) << t.max_rel_error << " worst=" << t.worst
          << " analytic=" << t.analytic << " numeric=" << t.numeric << std::defaultfloat << '\n';
    }
  }
  return all_pass ? kExitOk : kExitRuntime;
}

int cmd_paramcount(std::size_t d, std::size_t L, std::size_t M, std::size_t N, const Variant& v,
                   std::ostream& out) {
  const auto c = parameter_count(d, L, M, N, v);
  const auto ds = std::to_string(d);
  const auto ls = std::to_string(L);
  out << std::left << std::setw(8) << "tensor" << std::setw(14) << "shape" << "count\n";
  auto row = [&](const char* name, const std::string& shape, std::size_t n) {
    out << std::setw(8) << name << std::setw(14) << shape << with_commas(n) << '\n';
  };
  row("W_g1", ds + "x" + ds, c.gate_item);
  row("W_g2", ds + "x" + ds, c.gate_user);
  row("b_g", ds, c.gate_bias);
  row("w_g3", ds, c.inst_item);
  row("W_g4", ds + "x" + ls, c.inst_user);
  out << "gating total: " << with_commas(c.gating()) << '\n';
  row("U", ds + "x" + std::to_string(M), c.user_emb);
  row("E", ds + "x" + std::to_string(N), c.item_in);
  row("Q", ds + "x" + std::to_string(N), c.item_out);
  out << "embedding total: " << with_commas(c.embeddings()) << '\n'
      << "total: " << with_commas(c.total()) << '\n'
      << "reference (d=50): one-layer GRU 15,300; Caser CNN 26,154\n";
  return kExitOk;
}

int cmd_sweep(const RunConfig& c, const std::string& axis, std::ostream& out) {
  const auto dir = require_out(c);
  const auto split = load_split(c);
  write_text(dir / "config.txt", c.to_text());
  std::vector<TrainConfig> cells;
  std::string name;
  std::string tsv;
  if (axis == "d") {
    name = "sweep_d.tsv";
    tsv = "d\tseed" + metric_header(c.ks) + "\n";
    for (std::size_t d = 10; d <= 100; d += 10) {
      cells.push_back(c.train);
      cells.back().dim = d;
    }
  } else if (axis == "LT") {
    name = "sweep_LT.tsv";
    tsv = "L\tT\tseed" + metric_header(c.ks) + "\n";
    for (const std::size_t L : {3, 5, 8}) {
      for (const std::size_t T : {1, 2, 3}) {
        cells.push_back(c.train);
        cells.back().context_len = L;
        cells.back().horizon = T;
      }
    }
  } else {
    throw ContractError("--axis must be d or LT");
  }
  for (const auto& tc : cells) {
    const auto r = train_and_evaluate(split, tc, c, out);
    if (axis == "d") {
      tsv += std::to_string(tc.dim);
    } else {
      tsv += std::to_string(tc.context_len) + "\t" + std::to_string(tc.horizon);
    }
    tsv += "\t" + std::to_string(tc.seed) + metric_cells(r.test) + "\n";
    write_text(dir / name, tsv);
  }
  out << tsv;
  return kExitOk;
}

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(const std::string& key, const std::string& help) {
    options[key] = app->add_option("--" + key, values[key], help);
  }
  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) c = load_run_config(config_path);
    // --pooling is applied after --variant so it can modify any variant tag.
    for (const auto& [key, opt] : options) {
      if (key != "pooling" && opt->count() > 0) c.set(key, values.at(key));
    }
    if (auto it = options.find("pooling"); it != options.end() && it->second->count() > 0) {
      c.set("pooling", values.at("pooling"));
    }
    c.validate();
    return c;
  }
};

Subcommand make_subcommand(CLI::App& app, const std::string& name, const std::string& help,
                           const std::vector<std::string>& keys) {
  Subcommand s;
  s.app = app.add_subcommand(name, help);
  s.app->add_option("--config", s.config_path, "key=value config file");
  for (const auto& k : keys) s.add(k, "override '" + k + "'");
  return s;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto& t = train;
  if (key == "d") t.dim = parse_number<std::size_t>(key, value);
  else if (key == "L") t.context_len = parse_number<std::size_t>(key, value);
  else if (key == "T") t.horizon = parse_number<std::size_t>(key, value);
  else if (key == "lr") t.lr = parse_number<double>(key, value);
  else if (key == "lambda") t.lambda = parse_number<double>(key, value);
  else if (key == "batch") t.batch = parse_number<std::size_t>(key, value);
  else if (key == "epochs") t.epochs = parse_number<std::size_t>(key, value);
  else if (key == "pooling") t.variant.pooling = parse_pooling(value);
  else if (key == "variant") t.variant = Variant::parse(value);
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "workers") t.workers = parse_number<std::size_t>(key, value);
  else if (key == "ks") ks = parse_ks(value);
  else if (key == "checkpoint_every") checkpoint_every = parse_number<std::size_t>(key, value);
  else if (key == "validate_every") validate_every = parse_number<std::size_t>(key, value);
  else if (key == "format") format = value;
  else if (key == "filter") filter = value;
  else if (key == "input") input = value;
  else if (key == "bundle") bundle = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "out") out = value;
  else throw ContractError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  train.validate();
  for (const auto k : ks) {
    if (k == 0) throw ContractError("ks must be positive");
  }
  parse_input_format(format);
  parse_filter_mode(filter);
}

std::string RunConfig::to_text() const {
  const auto& t = train;
  std::ostringstream o;
  o << "d=" << t.dim << '\n'
    << "L=" << t.context_len << '\n'
    << "T=" << t.horizon << '\n'
    << "lr=" << format_real(t.lr) << '\n'
    << "lambda=" << format_real(t.lambda) << '\n'
    << "batch=" << t.batch << '\n'
    << "epochs=" << t.epochs << '\n'
    << "variant=" << t.variant.tag() << '\n'
    << "pooling=" << to_string(t.variant.pooling) << '\n'
    << "seed=" << t.seed << '\n'
    << "workers=" << t.workers << '\n'
    << "ks=" << join_ks(ks) << '\n'
    << "checkpoint_every=" << checkpoint_every << '\n'
    << "validate_every=" << validate_every << '\n'
    << "format=" << format << '\n'
    << "filter=" << filter << '\n';
  if (!input.empty()) o << "input=" << input << '\n';
  if (!bundle.empty()) o << "bundle=" << bundle << '\n';
  if (!checkpoint.empty()) o << "checkpoint=" << checkpoint << '\n';
  if (!out.empty()) o << "out=" << out << '\n';
  return o.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(ss, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  const auto kv = parse_key_values(buf.str());
  // Variant first so that an explicit pooling line refines it.
  if (auto it = kv.find("variant"); it != kv.end()) c.set("variant", it->second);
  for (const auto& [k, v] : kv) {
    if (k != "variant") c.set(k, v);
  }
  return c;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical gating network for sequential recommendation"};
  app.require_subcommand(1);

  const std::vector<std::string> train_keys = {"d",       "L",    "T",       "lr",    "lambda",
                                               "batch",   "epochs", "pooling", "variant", "seed",
                                               "workers", "ks",   "bundle",  "out"};

  auto prepare = make_subcommand(app, "prepare", "filter and split a rating file into a bundle",
                                 {"input", "format", "filter", "out", "seed", "workers"});
  auto train_cmd = make_subcommand(app, "train", "train a model on a bundle", train_keys);
  train_cmd.add("checkpoint_every", "save a checkpoint every k epochs");
  train_cmd.add("validate_every", "report validation metrics every k epochs");
  auto evaluate_cmd = make_subcommand(app, "evaluate", "rank held-out test items",
                                      {"bundle", "checkpoint", "ks", "out", "seed", "workers"});
  auto ablate = make_subcommand(app, "ablate", "train and evaluate the ablation variants", train_keys);
  auto sweep = make_subcommand(app, "sweep", "sensitivity sweep over d or (L, T)", train_keys);
  std::string axis;
  sweep.app->add_option("--axis", axis, "d or LT")->required();

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  gradcheck->add_option("--d", gc.options.dim);
  gradcheck->add_option("--L", gc.options.context_len);
  gradcheck->add_option("--N", gc.options.num_items);
  gradcheck->add_option("--T", gc.options.horizon);
  gradcheck->add_option("--seed", gc.options.seed);
  gradcheck->add_option("--lambda", gc.options.lambda);
  gradcheck->add_option("--step", gc.options.step, "finite-difference step");
  gradcheck->add_option("--tolerance", gc.options.tolerance);
  gradcheck->add_option("--variant", gc.variant, "variant tag or 'all'");
  std::string corrupt;
  gradcheck->add_option("--corrupt", corrupt, "test hook: corrupt one tensor's gradient");

  std::size_t pc_d = 50, pc_l = 5, pc_m = 0, pc_n = 0;
  std::string pc_variant = "HGN";
  auto* paramcount = app.add_subcommand("paramcount", "count learnable parameters");
  paramcount->add_option("--d", pc_d);
  paramcount->add_option("--L", pc_l);
  paramcount->add_option("--M", pc_m, "number of users");
  paramcount->add_option("--N", pc_n, "number of items");
  paramcount->add_option("--variant", pc_variant);

  SyntheticConfig sc;
  std::string gen_output;
  bool uniform = false;
  auto* generate = app.add_subcommand("generate", "write a synthetic rating file");
  generate->add_option("--output", gen_output)->required();
  generate->add_option("--users", sc.users);
  generate->add_option("--items", sc.items);
  generate->add_option("--min-len", sc.min_len);
  generate->add_option("--max-len", sc.max_len);
  generate->add_option("--topics", sc.topics);
  generate->add_option("--follow-prob", sc.follow_prob);
  generate->add_option("--seed", sc.seed);
  generate->add_flag("--uniform", uniform, "no sequential structure");

  std::vector<std::string> argv_storage = args;
  argv_storage.insert(argv_storage.begin(), "hgn");
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (prepare.app->parsed()) return cmd_prepare(prepare.resolve(), out);
    if (train_cmd.app->parsed()) return cmd_train(train_cmd.resolve(), out);
    if (evaluate_cmd.app->parsed()) return cmd_evaluate(evaluate_cmd.resolve(), out);
    if (ablate.app->parsed()) return cmd_ablate(ablate.resolve(), out);
    if (sweep.app->parsed()) return cmd_sweep(sweep.resolve(), axis, out);
    if (gradcheck->parsed()) {
      if (!corrupt.empty()) gc.options.corrupt_tensor = corrupt;
      return cmd_gradcheck(gc, out);
    }
    if (paramcount->parsed()) return cmd_paramcount(pc_d, pc_l, pc_m, pc_n, Variant::parse(pc_variant), out);
    if (generate->parsed()) {
      sc.sequential = !uniform;
      return cmd_generate(sc, gen_output, out);
    }
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace hgn::cli
