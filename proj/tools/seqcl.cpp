// seqcl: generate task families, train, run continual-learning experiments
// and aggregate their results.
#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "seqcl/error.hpp"
#include "seqcl/harness/config.hpp"
#include "seqcl/harness/experiment.hpp"
#include "seqcl/harness/report.hpp"
#include "seqcl/ndgrad/checkpoint.hpp"
#include "seqcl/taskforge/dataset_io.hpp"
#include "seqcl/taskforge/task.hpp"

namespace fs = std::filesystem;
using namespace seqcl;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void diag(const char* kind, const std::string& msg) { std::cerr << "seqcl: error[" << kind << "]: " << msg << "\n"; }

// directory name for a method; ER_λ becomes ER_lambda
std::string slug(const std::string& s) {
  if (s == "ER_λ") return "ER_lambda";
  std::string out;
  for (unsigned char c : s) out += std::isalnum(c) || c == '-' || c == '_' ? static_cast<char>(c) : '_';
  return out;
}

ModelConfig infer_model_config(const ParamVector& theta, double ctc_weight) {
  ModelConfig m;
  std::size_t layers = 0;
  while (true) {
    const std::string name = "enc" + std::to_string(layers) + ".W";
    const auto& segs = theta.segments();
    if (std::none_of(segs.begin(), segs.end(), [&](const auto& s) { return s.name == name; })) break;
    ++layers;
  }
  if (layers == 0) throw DataError("checkpoint has no encoder segments");
  const Tensor& w0 = theta.at("enc0.W");
  if (w0.rank() != 2 || w0.shape()[0] % 3 != 0) throw DataError("checkpoint: unexpected enc0.W shape");
  m.enc_layers = layers;
  m.feature_dim = w0.shape()[0] / 3;
  m.hidden = w0.shape()[1];
  m.alphabet = theta.at("ctc.W").shape()[1];
  m.ctc_weight = ctc_weight;
  HybridModel(m).check_params(theta);
  return m;
}

void write_json(const fs::path& path, const Json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << j.dump(2) << "\n";
}

DecodeOptions decode_from(const std::string& mode, std::size_t beam) {
  return {detail::parse_decode_mode(mode), beam};
}

// gen -----------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 1;
  double similarity = 0.5;
  SplitSizes sizes;
  FamilyOptions fo;
  std::string out = "data";
};

int cmd_gen(const GenArgs& a) {
  const auto fam = generate_family(a.seed, a.similarity, a.sizes, a.fo);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < fam.size(); ++i) {
    const fs::path p = fs::path(a.out) / ("task" + std::to_string(i) + "_" + kTaskNames[i] + ".data");
    save_dataset(p.string(), fam[i]);
    std::cout << p.string() << "  train " << fam[i].train.size() << "  valid " << fam[i].valid.size() << "  test "
              << fam[i].test.size() << "\n";
  }
  return kOk;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, init, out = "model.ckpt";
  std::size_t epochs = 0;
  double lr_factor = 0.0;
  std::uint64_t seed = 1;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig exp;
  if (!a.config.empty()) exp = load_experiment(a.config).exp;
  if (a.epochs) {
    exp.train.max_epochs = a.epochs;
    exp.train.patience = std::min(exp.train.patience, a.epochs);
  }
  const TaskDataset ds = load_dataset(a.data);
  ModelConfig mcfg = exp.model;
  mcfg.feature_dim = ds.spec.feature_dim();
  mcfg.alphabet = ds.spec.alphabet();
  mcfg.seed = detail::mix_seed(a.seed, 1);
  const HybridModel model(mcfg);
  const ParamVector theta0 = a.init.empty() ? model.init() : load_checkpoint(a.init);
  model.check_params(theta0);
  const double factor = a.lr_factor > 0 ? a.lr_factor : (a.init.empty() ? exp.train.lr_factor_first : exp.train.lr_factor_later);
  exp.train.diagnostic_dir = fs::path(a.out).parent_path().string();
  if (exp.train.diagnostic_dir.empty()) exp.train.diagnostic_dir = ".";

  auto strategy = make_strategy("FT", {});
  std::mt19937_64 rng(detail::mix_seed(a.seed, 2));
  const auto samples = task_samples(ds.train, ds.spec.task_id);
  const auto res = train_task(model, theta0, samples, ds.valid, *strategy, nullptr, exp.train, factor, rng);
  for (const auto& e : res.history)
    std::cout << "epoch " << e.epoch << "  loss " << e.train_loss << "  valid_ter " << e.valid_ter << "\n";
  save_checkpoint(a.out, res.theta);
  const double ter = evaluate_set(model, res.theta, ds.test, exp.train.test_decode).wer;
  std::cout << "snapshots " << res.snapshots_averaged << "  test_wer " << ter << "  saved " << a.out << "\n";
  return kOk;
}

// run -----------------------------------------------------------------------

struct RunArgs {
  std::string config, method, out;
  std::size_t seeds = 0;
  std::size_t jobs = 1;
};

int cmd_run(const RunArgs& a) {
  ExperimentFile file = load_experiment(a.config);
  ExperimentConfig& exp = file.exp;
  if (!a.method.empty()) {
    exp.method = a.method;
    if (baseline_of(exp.method) == Baseline::None) make_strategy(exp.method, exp.hyper);
  }
  if (a.seeds) {
    exp.seeds.clear();
    for (std::size_t s = 1; s <= a.seeds; ++s) exp.seeds.push_back(s);
  }
  if (!a.out.empty()) exp.output_dir = a.out;
  const auto tasks = file.load_tasks();
  const std::string name = baseline_of(exp.method) == Baseline::None ? canonical_method(exp.method) : exp.method;
  const fs::path root = exp.output_dir;

  std::vector<ResultRecord> records(exp.seeds.size());
  std::vector<std::exception_ptr> errors(exp.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex log;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < exp.seeds.size();) {
      const std::uint64_t seed = exp.seeds[i];
      const fs::path dir = root / (slug(name) + "_seed" + std::to_string(seed));
      try {
        fs::create_directories(dir);
        ExperimentConfig e = exp;
        e.train.diagnostic_dir = dir.string();
        const auto r = run_sequence(e, tasks, seed, [&](std::size_t t, const ParamVector& theta) {
          save_checkpoint((dir / ("task" + std::to_string(t) + ".ckpt")).string(), theta);
        });
        const Json j = result_to_json(r);
        write_json(dir / "result.json", j);
        records[i] = record_from_json(j);
        std::lock_guard lock(log);
        std::cout << name << " seed " << seed << "  awer " << j["awer"].get<double>() << "  -> "
                  << (dir / "result.json").string() << "\n";
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::max<std::size_t>(1, std::min(a.jobs, exp.seeds.size())); ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const fs::path summary = root / (slug(name) + "_summary.csv");
  std::ofstream os(summary);
  write_summary_csv(os, summarize(records));
  std::ofstream oc(root / (slug(name) + "_curves.csv"));
  write_curves_csv(oc, task_curves(records));
  std::cout << "aggregate -> " << summary.string() << "\n";
  return kOk;
}

// tune-lambda ---------------------------------------------------------------

struct TuneArgs {
  std::string config, method = "EWC", out;
  double lambda0 = 0.0, a = 0.0, p = 0.0;
  std::uint64_t seed = 1;
};

int cmd_tune(const TuneArgs& t) {
  ExperimentFile file = load_experiment(t.config);
  ExperimentConfig exp = file.exp;
  exp.method = t.method;
  exp.hyper.lambda.reset();
  exp.hyper.lambda_auto = true;
  if (t.lambda0 > 0) exp.lambda_search.lambda0 = t.lambda0;
  if (t.a > 0) exp.lambda_search.a = t.a;
  if (t.p > 0) exp.lambda_search.p = t.p;
  auto strategy = make_strategy(exp.method, exp.hyper);
  if (!strategy->uses_lambda()) throw ConfigError(strategy->name() + " has no λ to tune");
  auto tasks = file.load_tasks();
  if (tasks.size() < 2) throw DataError("tune-lambda needs at least two tasks");
  tasks.resize(2);
  const auto r = run_sequence(exp, tasks, t.seed);
  const auto& s = *r.lambda_search;
  std::ofstream file_out;
  if (!t.out.empty()) {
    file_out.open(t.out);
    if (!file_out) throw DataError("cannot write '" + t.out + "'");
  }
  std::ostream& os = t.out.empty() ? std::cout : file_out;
  s.write_csv(os);
  for (const auto& w : s.warnings) std::cerr << "seqcl: warning: " << w << "\n";
  std::cerr << "lambda " << s.lambda << "  tau_init " << s.tau_init << "  tau_no_reg " << s.tau_no_reg << "  probes "
            << s.trace.size() << "\n";
  return kOk;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, split = "test", decode = "hybrid";
  std::size_t beam = 4;
  double ctc_weight = 0.3;
};

int cmd_eval(const EvalArgs& a) {
  const ParamVector theta = load_checkpoint(a.ckpt);
  const HybridModel model(infer_model_config(theta, a.ctc_weight));
  const TaskDataset ds = load_dataset(a.data);
  const auto& set = a.split == "train" ? ds.train : a.split == "valid" ? ds.valid : ds.test;
  const EvalCell c = evaluate_set(model, theta, set, decode_from(a.decode, a.beam));
  std::size_t edits = 0, words = 0;
  for (const auto& u : c.per_utterance) {
    edits += u.edits;
    words += u.ref_len;
  }
  std::cout << "wer " << c.wer << "  edits " << edits << "  words " << words << "  utterances " << set.size() << "\n";
  return kOk;
}

// report --------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out, curves;
};

int cmd_report(const ReportArgs& a) {
  std::vector<ResultRecord> recs;
  for (const auto& p : a.inputs) recs.push_back(load_record(p));
  std::ofstream fo;
  if (!a.out.empty()) fo.open(a.out);
  write_summary_csv(a.out.empty() ? std::cout : fo, summarize(recs));
  if (!a.curves.empty()) {
    std::ofstream oc(a.curves);
    if (!oc) throw DataError("cannot write '" + a.curves + "'");
    write_curves_csv(oc, task_curves(recs));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqcl: continual learning for hybrid CTC/attention sequence models"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate the four-task synthetic family");
  g->add_option("--seed", gen.seed, "family seed");
  g->add_option("--similarity", gen.similarity, "dialect similarity in [0,1]");
  g->add_option("--out", gen.out, "output directory");
  g->add_option("--train", gen.sizes.train);
  g->add_option("--valid", gen.sizes.valid);
  g->add_option("--test", gen.sizes.test);
  g->add_option("--feature-dim", gen.fo.feature_dim);
  g->add_option("--alphabet", gen.fo.alphabet);
  g->add_option("--noise", gen.fo.noise);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "fine-tune a model on one dataset");
  t->add_option("--data", tr.data, "dataset file")->required();
  t->add_option("--out", tr.out, "checkpoint to write");
  t->add_option("--init", tr.init, "starting checkpoint");
  t->add_option("--config", tr.config, "experiment file for [model] and [train]");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--lr-factor", tr.lr_factor);
  t->add_option("--seed", tr.seed);

  RunArgs run;
  auto* r = app.add_subcommand("run", "run a sequential experiment");
  r->add_option("--config", run.config, "experiment file")->required();
  r->add_option("--method", run.method, "override [experiment] method");
  r->add_option("--seeds", run.seeds, "use seeds 1..N");
  r->add_option("--out", run.out, "override output directory");
  r->add_option("--jobs", run.jobs, "seeds run in parallel");

  TuneArgs tune;
  auto* l = app.add_subcommand("tune-lambda", "search the regularization weight after the first adaptation");
  l->add_option("--config", tune.config, "experiment file")->required();
  l->add_option("--method", tune.method);
  l->add_option("--lambda0", tune.lambda0);
  l->add_option("--a", tune.a, "required fraction of the unregularized improvement");
  l->add_option("--p", tune.p, "decay factor");
  l->add_option("--seed", tune.seed);
  l->add_option("--out", tune.out, "CSV trace (default stdout)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint on a dataset");
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "valid", "test"}));
  e->add_option("--decode", ev.decode)->check(CLI::IsMember({"ctc", "hybrid"}));
  e->add_option("--beam", ev.beam);
  e->add_option("--ctc-weight", ev.ctc_weight);

  ReportArgs rep;
  auto* p = app.add_subcommand("report", "aggregate result files");
  p->add_option("results", rep.inputs, "result.json files")->required();
  p->add_option("--out", rep.out, "summary CSV (default stdout)");
  p->add_option("--curves", rep.curves, "per-task curve CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*r) return cmd_run(run);
    if (*l) return cmd_tune(tune);
    if (*e) return cmd_eval(ev);
    if (*p) return cmd_report(rep);
  } catch (const ConfigError& err) {
    diag("config", err.what());
    return kUsage;
  } catch (const NumericError& err) {
    diag("numeric", err.what());
    return kNumeric;
  } catch (const DataError& err) {
    diag("data", err.what());
    return kData;
  } catch (const ShapeError& err) {
    diag("data", err.what());
    return kData;
  } catch (const std::exception& err) {
    diag("internal", err.what());
    return kData;
  }
  return kUsage;
}
