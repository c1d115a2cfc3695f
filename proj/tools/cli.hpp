#pragma once

// `rmo` command-line front end. Exit codes: 0 success, 2 usage or config
// error, 3 numeric divergence, 4 verification failure, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rmo/gradcheck_suite.hpp"
#include "rmo/rmo.hpp"
#include "run_config.hpp"

namespace rmo::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDivergence = 3, kVerification = 4 };

namespace detail {

inline void apply_sets(RunConfig& rc, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set needs key=value, got '" + kv + "'");
    rc.set(RunConfig::trim(kv.substr(0, eq)), RunConfig::trim(kv.substr(eq + 1)));
  }
}

inline std::string out_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

inline void make_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
}

inline std::string shape_tag(const TaskShape& s) {
  return to_string(s.task) + "_" + std::to_string(s.kind.d) + "x" + std::to_string(s.kind.p);
}

}  // namespace detail

struct MemoryReportArgs {
  std::string model = "all";
  std::string out;
};

inline int cmd_memory_report(const MemoryReportArgs& a, std::ostream& out) {
  std::vector<ShapeCatalog> catalogs;
  if (a.model == "all") {
    catalogs = all_catalogs();
  } else {
    catalogs.push_back(catalog_by_name(a.model));
  }
  const std::string csv = memory_report_csv(catalogs);
  if (!a.out.empty()) write_file_atomic(a.out, csv);
  out << csv;
  return kOk;
}

struct CommonArgs {
  std::string config;
  std::string task;
  std::string shapes;
  std::string out = "rmo-run";
  std::vector<std::string> sets;
};

/// Config file, then `--set`, then the dedicated flags, each overriding the last.
inline RunConfig build_config(const CommonArgs& c, const std::map<std::string, std::string>& flags) {
  RunConfig rc;
  if (!c.config.empty()) rc.load_file(c.config);
  detail::apply_sets(rc, c.sets);
  if (!c.task.empty()) rc.set("task", c.task);
  if (!c.shapes.empty()) rc.set("shapes", c.shapes);
  for (const auto& [k, v] : flags) rc.set(k, v);
  return rc;
}

struct TrainArgs {
  CommonArgs common;
  std::map<std::string, std::string> flags;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig rc = build_config(a.common, a.flags);
  const MetaConfig cfg = resolve_meta(rc);
  detail::make_out_dir(a.common.out);
  write_file_atomic(detail::out_path(a.common.out, "resolved-config.txt"), rc.echo());

  const TrainResult res = train(cfg);
  Checkpoint ck{res.params, res.adam, cfg.seed, rc.entries()};
  save_checkpoint(ck, detail::out_path(a.common.out, "checkpoint.txt"));
  write_file_atomic(detail::out_path(a.common.out, "trajectory.csv"), trajectory_csv(res.trajectory));
  write_file_atomic(detail::out_path(a.common.out, "outer.csv"), outer_csv(res.trajectory));

  const auto& outer = res.trajectory.outer;
  out << "trained " << res.outer_steps_done << " outer steps, parameter_count "
      << res.params.scalar_count() << "\n";
  out << "objective " << rmo::detail::fmt9(outer.front().objective) << " -> "
      << rmo::detail::fmt9(outer.back().objective) << "\n";
  out << "wrote " << detail::out_path(a.common.out, "checkpoint.txt") << "\n";
  return kOk;
}

struct EvaluateArgs {
  CommonArgs common;
  std::map<std::string, std::string> flags;
};

/// Checks that an explicit setting agrees with what the checkpoint was trained
/// with, adopting the checkpoint's value otherwise.
inline void reconcile(RunConfig& rc, const std::string& key, const std::string& trained) {
  if (rc.is_explicit(key) && rc.get(key) != trained) {
    throw ConfigError("checkpoint mismatch: " + key + " is " + rc.get(key) +
                      " but the checkpoint was trained with " + trained);
  }
  rc.set(key, trained);
}

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  RunConfig rc = build_config(a.common, a.flags);
  const TaskKind task = required_task(rc);
  const std::vector<TaskShape> shapes = parse_shapes(rc.get("shapes"), task);

  std::string name = rc.get("optimizer");
  const std::string ck_path = rc.get("checkpoint");
  if (name.empty()) {
    if (ck_path.empty()) throw ConfigError("evaluate needs --checkpoint or --optimizer");
    name = "learned";
  }
  const OptimizerKind kind = parse_optimizer_kind(name);

  std::optional<Checkpoint> ck;
  if (uses_network(kind)) {
    if (ck_path.empty()) throw ConfigError("optimizer '" + name + "' needs --checkpoint");
    try {
      ck = load_checkpoint(ck_path);
    } catch (const CheckpointError& e) {
      throw ConfigError(std::string("cannot use checkpoint: ") + e.what());
    }
    reconcile(rc, "hidden", std::to_string(ck->params.hidden()));
    reconcile(rc, "layers", std::to_string(ck->params.num_layers()));
    if (const std::string* t = checkpoint_config(*ck, "input_transform")) {
      reconcile(rc, "input_transform", *t);
    }
  }
  const EvalConfig cfg = resolve_eval(rc, kind);
  const std::vector<std::uint64_t> seeds = rc.get_seeds("eval_seeds");

  std::vector<std::vector<EvalCurve>> per_shape(shapes.size());
  for (std::uint64_t s : seeds) {
    std::vector<EvalCurve> curves = evaluate_run(cfg, ck ? &ck->params : nullptr, shapes, s);
    for (std::size_t k = 0; k < shapes.size(); ++k) per_shape[k].push_back(std::move(curves[k]));
  }

  detail::make_out_dir(a.common.out);
  write_file_atomic(detail::out_path(a.common.out, "resolved-config.txt"), rc.echo());
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const std::string file = "eval_" + detail::shape_tag(shapes[k]) + ".csv";
    write_file_atomic(detail::out_path(a.common.out, file), evaluation_csv(per_shape[k]));
    for (const EvalCurve& c : per_shape[k]) {
      out << detail::shape_tag(shapes[k]) << " seed " << c.seed << " " << to_string(kind)
          << " loss " << rmo::detail::fmt9(c.points.front().loss) << " -> "
          << rmo::detail::fmt9(c.points.back().loss) << "\n";
    }
  }
  return kOk;
}

struct GradcheckArgs {
  std::string only;
  double rel_tol = -1.0;  // negative keeps the suite defaults
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  SuiteOptions o;
  if (a.rel_tol >= 0.0) {
    o.rel_tol = a.rel_tol;
    o.meta_rel_tol = a.rel_tol;
  }
  const std::vector<CheckResult> results = run_gradcheck(a.only, o);
  std::map<std::string, double> worst;
  std::vector<const CheckResult*> failed;
  char buf[256];
  for (const CheckResult& r : results) {
    std::snprintf(buf, sizeof buf, "%-10s %-34s max_rel_err %.3e  tol %.1e  %s\n", r.suite.c_str(),
                  r.name.c_str(), r.report.max_rel_err, r.tolerance, r.passed() ? "ok" : "FAIL");
    out << buf;
    worst[r.suite] = std::max(worst[r.suite], r.report.max_rel_err);
    if (!r.passed()) failed.push_back(&r);
  }
  for (const auto& [suite, w] : worst) {
    std::snprintf(buf, sizeof buf, "worst %-10s %.3e\n", suite.c_str(), w);
    out << buf;
  }
  if (failed.empty()) return kOk;
  err << failed.size() << " check(s) outside tolerance:\n";
  for (const CheckResult* r : failed) err << "  " << r->suite << "/" << r->name << "\n";
  return kVerification;
}

inline void add_common(CLI::App* sub, CommonArgs& c) {
  sub->add_option("--config", c.config, "key = value config file");
  sub->add_option("--task", c.task, "pca or classifier");
  sub->add_option("--shapes", c.shapes, "comma-separated DxP, optionally task:DxP");
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
  sub->add_option("--set", c.sets, "override any config key (key=value), repeatable");
}

/// Adds a flag that lands in `flags[key]` when given.
inline void add_keyed(CLI::App* sub, std::map<std::string, std::string>& flags,
                      const std::string& flag, const std::string& key, const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&flags, key](const std::string& v) { flags[key] = v; }, help);
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Riemannian meta-optimization toolkit", "rmo"};
  app.require_subcommand(1);

  MemoryReportArgs mem;
  auto* mem_cmd = app.add_subcommand("memory-report", "optimizer memory footprint table as CSV");
  mem_cmd->add_option("--model", mem.model, "vgg16, resnet18, resnet50 or all")->capture_default_str();
  mem_cmd->add_option("--out", mem.out, "also write the CSV to this file");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "meta-train the subspace optimizer");
  add_common(train_cmd, tr.common);
  add_keyed(train_cmd, tr.flags, "--inner-steps", "inner_steps", "unroll length T");
  add_keyed(train_cmd, tr.flags, "--outer-steps", "outer_steps", "outer iterations");
  add_keyed(train_cmd, tr.flags, "--seed", "seed", "master seed");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "run an optimizer on held-out seeds");
  add_common(eval_cmd, ev.common);
  add_keyed(eval_cmd, ev.flags, "--checkpoint", "checkpoint", "trained optimizer checkpoint");
  add_keyed(eval_cmd, ev.flags, "--optimizer", "optimizer",
            "rsgd, rsgdm, rasa-like, learned, row-only, col-only or no-subspace-lstm");
  add_keyed(eval_cmd, ev.flags, "--alpha", "alpha", "step size of the handcrafted optimizers");
  add_keyed(eval_cmd, ev.flags, "--steps", "steps", "step budget");
  add_keyed(eval_cmd, ev.flags, "--seeds", "eval_seeds", "comma-separated held-out seeds");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference verification suites");
  gc_cmd->add_option("--only", gc.only, "primitives, qr, tasks or meta");
  gc_cmd->add_option("--rel-tol", gc.rel_tol, "relative tolerance for every suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "rmo: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*mem_cmd) return cmd_memory_report(mem, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_evaluate(ev, out);
    if (*gc_cmd) return cmd_gradcheck(gc, out, err);
  } catch (const ConfigError& e) {
    err << "rmo: " << e.what() << "\n";
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "rmo: " << e.what() << " (last good outer step " << e.last_good_step() << ")\n";
    return kDivergence;
  } catch (const Error& e) {
    err << "rmo: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace rmo::cli
