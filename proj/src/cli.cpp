#include "divgen/cli.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "divgen/pipeline.hpp"
#include "divgen/version.hpp"

namespace divgen {
namespace {

std::string fmt3(double v) {
  std::ostringstream oss;
  oss << std::fixed << std::setprecision(3) << v;
  return oss.str();
}

std::size_t model_column_width(const std::vector<EvalRow>& rows) {
  std::size_t w = 5;  // "model"
  for (const EvalRow& row : rows) w = std::max(w, row.model.size());
  return w + 2;
}

void print_metric_table(std::ostream& out, const std::string& title,
                        const std::vector<EvalRow>& rows,
                        MetricRow EvalRow::*field) {
  const std::size_t w = model_column_width(rows);
  out << title << "\n";
  out << std::left << std::setw(static_cast<int>(w)) << "model";
  for (const char* col : {"B4", "B3", "B2", "B1", "C"}) {
    out << std::right << std::setw(8) << col;
  }
  out << "  file\n";
  for (const EvalRow& row : rows) {
    const MetricRow& m = row.*field;
    out << std::left << std::setw(static_cast<int>(w)) << row.model;
    for (const double v : {m.b4, m.b3, m.b2, m.b1, m.cider}) {
      out << std::right << std::setw(8) << fmt3(v);
    }
    out << "  " << row.file << "\n";
  }
  out << "\n";
}

void print_diversity_table(std::ostream& out,
                           const std::vector<EvalRow>& rows) {
  const std::size_t w = model_column_width(rows);
  out << "diversity\n";
  out << std::left << std::setw(static_cast<int>(w)) << "model";
  out << std::right << std::setw(8) << "unique" << std::setw(8) << "novel"
      << "  file\n";
  for (const EvalRow& row : rows) {
    out << std::left << std::setw(static_cast<int>(w)) << row.model;
    out << std::right << std::setw(8) << fmt3(row.diversity.unique_fraction)
        << std::setw(8) << fmt3(row.diversity.novel_fraction);
    out << "  " << row.file << "\n";
  }
}

std::string joined_names(const std::vector<std::string>& names,
                         const std::vector<std::size_t>& labels) {
  std::string text;
  for (const std::size_t k : labels) {
    if (!text.empty()) text += ' ';
    text += names[k];
  }
  return text;
}

void print_control_report(std::ostream& out, const ControlOptions& options,
                          const ControlReport& report) {
  out << "scene " << options.scene_id << "\n";
  out << "categories before: "
      << joined_names(report.category_names, report.before.labels) << "\n";
  out << "categories after:  "
      << joined_names(report.category_names, report.after.labels) << "\n\n";

  const auto& lhs = report.before.unique_sentences;
  const auto& rhs = report.after.unique_sentences;
  std::size_t lw = 24;
  for (const std::string& s : lhs) lw = std::max(lw, s.size());
  const std::string lhs_title = "before unique (" + std::to_string(lhs.size()) +
                                "/" + std::to_string(options.n_z) + ")";
  const std::string rhs_title = "after unique (" + std::to_string(rhs.size()) +
                                "/" + std::to_string(options.n_z) + ")";
  out << std::left << std::setw(static_cast<int>(lw + 3)) << lhs_title
      << rhs_title << "\n";
  for (std::size_t i = 0; i < std::max(lhs.size(), rhs.size()); ++i) {
    out << std::left << std::setw(static_cast<int>(lw + 3))
        << (i < lhs.size() ? lhs[i] : "") << (i < rhs.size() ? rhs[i] : "")
        << "\n";
  }

  out << "\nnoun frequency over " << options.n_z << " samples\n";
  std::size_t cw = 8;
  for (const std::string& name : report.category_names) {
    cw = std::max(cw, name.size());
  }
  out << std::left << std::setw(static_cast<int>(cw + 2)) << "category"
      << std::right << std::setw(8) << "before" << std::setw(8) << "after"
      << "\n";
  for (std::size_t k = 0; k < report.category_names.size(); ++k) {
    out << std::left << std::setw(static_cast<int>(cw + 2))
        << report.category_names[k] << std::right << std::setw(8)
        << report.before.noun_counts[k] << std::setw(8)
        << report.after.noun_counts[k] << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"divgen: diverse conditional sequence generation"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "",
                 "Read options from a config file (flags override it)");
  app.require_subcommand(1);

  GenCorpusOptions gen;
  CLI::App* gen_cmd =
      app.add_subcommand("gen-corpus", "Generate a scene-description corpus");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--categories", gen.corpus.K, "Number of categories");
  gen_cmd->add_option("--n-train", gen.corpus.n_train, "Training scenes");
  gen_cmd->add_option("--n-val", gen.corpus.n_val, "Validation scenes");
  gen_cmd->add_option("--n-test", gen.corpus.n_test, "Test scenes");
  gen_cmd->add_option("--refs-per-scene", gen.corpus.refs_per_scene,
                      "References per scene");
  gen_cmd->add_option("--feat-dim", gen.corpus.feat_dim,
                      "Feature vector length");
  gen_cmd->add_option("--feat-noise", gen.corpus.feat_noise,
                      "Feature noise std");
  gen_cmd->add_option("--miss-rate", gen.corpus.miss_rate,
                      "Detector miss rate");
  gen_cmd->add_option("--false-rate", gen.corpus.false_rate,
                      "Detector false-positive rate");
  gen_cmd->add_option("--seed", gen.corpus.seed, "Corpus seed");

  TrainOptions tr;
  std::string variant_name = to_string(tr.train.variant);
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model variant");
  train_cmd->add_option("--corpus", tr.corpus_dir, "Corpus directory")
      ->required();
  train_cmd->add_option("--out", tr.out_path, "Checkpoint path")->required();
  train_cmd->add_option("--metrics", tr.metrics_path,
                        "Metrics JSONL path (default: <out>.metrics.jsonl)");
  train_cmd->add_option("--resume", tr.resume_path,
                        "Checkpoint to resume from");
  train_cmd->add_option(
      "--variant", variant_name,
      "Model variant: lstm-baseline, cvae, gmm-cvae, ag-cvae");
  train_cmd->add_option("--epochs", tr.train.epochs, "Total epochs");
  train_cmd->add_option("--lr0", tr.train.lr0, "Initial learning rate");
  train_cmd->add_option("--halve-every", tr.train.halve_every,
                        "Halve the learning rate every this many epochs");
  train_cmd->add_option("--sigma-train", tr.train.sigma_train,
                        "Structured-prior component std");
  train_cmd->add_option("--kl-weight", tr.train.kl_weight, "KL term weight");
  train_cmd->add_option("--embed-dim", tr.train.dims.embed_dim,
                        "Embedding size");
  train_cmd->add_option("--hidden-dim", tr.train.dims.hidden_dim,
                        "Recurrent state size");
  train_cmd->add_option("--latent-dim", tr.train.dims.latent_dim,
                        "Latent size");
  train_cmd->add_option("--l-max", tr.train.dims.L_max,
                        "Maximum sequence length");
  train_cmd->add_option("--seed", tr.train.seed, "Training seed");

  SampleOptions sm;
  double sample_test_std = 0.0;
  CLI::App* sample_cmd =
      app.add_subcommand("sample", "Generate candidate sentences per scene");
  sample_cmd->add_option("--checkpoint", sm.checkpoint_path, "Checkpoint path")
      ->required();
  sample_cmd->add_option("--corpus", sm.corpus_dir, "Corpus directory")
      ->required();
  sample_cmd->add_option("--out", sm.out_path, "Candidate file path")
      ->required();
  sample_cmd->add_option("--split", sm.split, "Corpus split (train/val/test)");
  sample_cmd->add_option("--scene-ids", sm.scene_ids,
                         "Comma-separated scene ids (default: whole split)")
      ->delimiter(',');
  CLI::Option* n_z_opt =
      sample_cmd->add_option("--n-z", sm.n_z, "Latent samples per scene");
  CLI::Option* std_opt = sample_cmd->add_option(
      "--test-std", sample_test_std,
      "Sampling std (default: the prior's configured std)");
  sample_cmd->add_option("--beam-width", sm.beam_width,
                         "Beam width for lstm-baseline");
  sample_cmd->add_option("--seed", sm.seed, "Sampling seed");

  EvalOptions ev;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Score candidate files against a corpus");
  eval_cmd->add_option("--corpus", ev.corpus_dir, "Corpus directory")
      ->required();
  eval_cmd
      ->add_option("--candidates", ev.candidate_files,
                   "Candidate files (one report row each)")
      ->required();
  eval_cmd->add_option("--split", ev.split, "Reference split");
  eval_cmd->add_option("--m-neighbors", ev.m_neighbors,
                       "Neighbor scenes pooled for consensus scoring");
  eval_cmd->add_option("--top-m", ev.top_m,
                       "Consensus-ranked candidates counted for novelty");
  eval_cmd->add_option("--out", ev.out_path, "Report JSONL path");

  ControlOptions ct;
  double control_test_std = 0.0;
  CLI::App* control_cmd = app.add_subcommand(
      "control", "Compare samples before and after a category edit");
  control_cmd
      ->add_option("--checkpoint", ct.checkpoint_path, "Checkpoint path")
      ->required();
  control_cmd->add_option("--corpus", ct.corpus_dir, "Corpus directory")
      ->required();
  control_cmd->add_option("--scene-id", ct.scene_id, "Scene to edit")
      ->required();
  control_cmd->add_option("--split", ct.split, "Corpus split holding the scene");
  control_cmd
      ->add_option("--add", ct.add, "Categories to add (name or index)")
      ->delimiter(',');
  control_cmd
      ->add_option("--remove", ct.remove,
                   "Categories to remove (name or index)")
      ->delimiter(',');
  control_cmd->add_option("--n-z", ct.n_z, "Latent samples per side");
  CLI::Option* control_std_opt = control_cmd->add_option(
      "--test-std", control_test_std,
      "Sampling std (default: the prior's configured std)");
  control_cmd->add_option("--seed", ct.seed, "Sampling seed");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("divgen");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());

    if (*gen_cmd) {
      const CorpusSummary s = run_gen_corpus(gen);
      out << "wrote corpus to " << gen.out_dir << ": " << s.n_train
          << " train / " << s.n_val << " val / " << s.n_test
          << " test scenes, " << s.vocab_size << " vocab tokens\n";
    } else if (*train_cmd) {
      tr.train.variant = model_variant_from_string(variant_name);
      const TrainResult result = run_train(tr);
      for (const EpochStats& e : result.history) {
        out << "epoch " << e.epoch << "  lr " << e.lr << "  rec "
            << fmt3(e.mean_rec) << "  kl " << fmt3(e.mean_kl) << "\n";
      }
      out << "wrote checkpoint " << tr.out_path << " ("
          << to_string(result.checkpoint.config.variant) << ", "
          << result.checkpoint.epochs_completed << " epochs)\n";
    } else if (*sample_cmd) {
      sm.n_z_given = n_z_opt->count() > 0;
      if (std_opt->count() > 0) sm.test_std = sample_test_std;
      const auto sets = run_sample(sm, &err);
      std::size_t total = 0;
      for (const CandidateSet& set : sets) total += set.candidates.size();
      out << "wrote " << total << " candidates for " << sets.size()
          << " scenes to " << sm.out_path << "\n";
    } else if (*eval_cmd) {
      const std::vector<EvalRow> rows = run_eval(ev);
      print_metric_table(out, "oracle scores", rows, &EvalRow::oracle);
      print_metric_table(out, "consensus top-1", rows, &EvalRow::top1);
      print_diversity_table(out, rows);
      if (!ev.out_path.empty()) {
        out << "\nwrote report to " << ev.out_path << "\n";
      }
    } else if (*control_cmd) {
      if (control_std_opt->count() > 0) ct.test_std = control_test_std;
      const ControlReport report = run_control(ct);
      print_control_report(out, ct, report);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace divgen
