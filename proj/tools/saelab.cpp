// saelab: offline pipeline and service launcher.
//
// Every failure prints one line, "saelab: error: <Code>: <message>", and
// exits nonzero (1 for library errors, 2 for usage errors).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "saelab/activation_store.hpp"
#include "saelab/checkpoint.hpp"
#include "saelab/classifier.hpp"
#include "saelab/error.hpp"
#include "saelab/format.hpp"
#include "saelab/http_server.hpp"
#include "saelab/keyvalue.hpp"
#include "saelab/metrics.hpp"
#include "saelab/parallel.hpp"
#include "saelab/search_index.hpp"
#include "saelab/service.hpp"
#include "saelab/steering.hpp"
#include "saelab/synthgen.hpp"
#include "saelab/trainer.hpp"

namespace {

using namespace saelab;

struct TrainArgs {
  std::string config, dataset, out;
};

void run_train(const TrainArgs& a) {
  const TrainConfig cfg = TrainConfig::from_keyvalues(KeyValues::load(a.config));
  const ActivationDataset ds = open_dataset(a.dataset);
  const auto result = train<float>(cfg, ds, [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << " recon_loss " << format_number(r.recon_loss)
              << " aux_loss " << format_number(r.aux_loss) << " dead_ratio "
              << format_number(r.dead_ratio) << std::endl;
  });
  save_checkpoint(result.model, a.out);
  std::cout << "wrote " << a.out << " (d=" << result.model.dim()
            << ", features=" << result.model.num_features() << ")\n";
}

struct SynthArgs {
  std::string spec, out, truth;
};

void run_synth(const SynthArgs& a) {
  const PlantSpec spec = PlantSpec::from_keyvalues(KeyValues::load(a.spec));
  const SyntheticData data = generate(spec);
  write_dataset(data.dataset, a.out);
  const std::string truth = a.truth.empty() ? a.out + ".truth" : a.truth;
  write_ground_truth(data.truth, truth);
  std::cout << "wrote " << a.out << " (" << data.dataset.episodes.size() << " episodes, "
            << data.dataset.total_timesteps() << " timesteps) and " << truth << "\n";
}

struct MetricsArgs {
  std::string ckpt, dataset, out;
};

void run_metrics(const MetricsArgs& a) {
  const auto model = load_checkpoint<float>(a.ckpt);
  const auto ds = open_dataset(a.dataset);
  const auto rows = compute_all(model, ds);
  write_metrics_table(rows, a.out);
  std::size_t inactive = 0;
  for (const auto& m : rows) inactive += m.inactive ? 1 : 0;
  std::cout << "wrote " << a.out << " (" << rows.size() << " features, " << inactive
            << " inactive)\n";
}

struct ClassifyArgs {
  std::string metrics, preset_name, labels, classifier, out, classifier_out;
};

void write_summary(const GeneralityClassifier& clf, const ClassificationSummary& s,
                   const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out << "# saelab classification v1\n";
  out << "# classifier " << clf.dataset << " beta "
      << join_numbers(std::span<const double>(clf.beta)) << "\n";
  out << "# percent_memorized " << format_number(s.percent_memorized) << "\n";
  out << "# feature_id\tprobability\tlabel\tinactive\n";
  for (const auto& f : s.features) {
    out << f.feature_id << '\t' << format_number(f.probability) << '\t' << to_string(f.label)
        << '\t' << (f.inactive ? 1 : 0) << '\n';
  }
  if (!out) fail(ErrorCode::IoError, "short write to '" + path + "'");
}

void run_classify(const ClassifyArgs& a) {
  const auto table = read_metrics_table(a.metrics);
  GeneralityClassifier clf;
  if (!a.labels.empty()) {
    const LabelStore store(a.labels);
    std::vector<LabeledFeature> labeled;
    for (const auto& [id, r] : store.current()) {
      if (id >= table.size() || table[id].feature_id != id) {
        fail(ErrorCode::BadFeatureId, "label for feature " + std::to_string(id) +
                                          " has no metrics row");
      }
      labeled.push_back({id, table[id], r.label, r.annotator, r.timestamp});
    }
    clf = fit(labeled);
    clf.dataset = a.labels;
    std::cout << "fit on " << labeled.size() << " labels";
    try {
      std::cout << ", loo accuracy " << format_number(loo_cv(labeled));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateLabels) throw;
      std::cout << ", loo accuracy undefined (" << e.what() << ")";
    }
    std::cout << "\n";
  } else if (!a.classifier.empty()) {
    clf = load_classifier(a.classifier);
  } else {
    clf = preset(a.preset_name.empty() ? "libero" : a.preset_name);
  }
  const auto summary = classify_all(clf, table);
  write_summary(clf, summary, a.out);
  if (!a.classifier_out.empty()) save_classifier(clf, a.classifier_out);
  std::cout << "beta " << join_numbers(std::span<const double>(clf.beta)) << "\n";
  std::cout << "percent memorized " << format_number(summary.percent_memorized) << "\n";
}

struct IndexArgs {
  std::string ckpt, dataset, out;
  std::size_t top_k = kDefaultTopTimesteps;
};

void run_index(const IndexArgs& a) {
  const auto model = load_checkpoint<float>(a.ckpt);
  const auto ds = open_dataset(a.dataset);
  const auto index = build_index(model, ds, a.top_k);
  save_index(index, a.out);
  std::cout << "wrote " << a.out << " (" << index.num_features() << " features)\n";
}

struct SteerArgs {
  std::string ckpt, out, layer;
  std::size_t feature = 0;
  double alpha = 0.0;
  std::size_t start = kDefaultSteeringStart;
};

void run_steer(const SteerArgs& a) {
  const auto model = load_checkpoint<float>(a.ckpt);
  SteeringVector sv = steering_vector(model, a.feature, a.alpha, a.layer);
  sv.start_timestep = a.start;
  export_hook_spec(sv, a.out);
  std::cout << "wrote " << a.out << "\n";
}

struct ServeArgs {
  std::string dataset, ckpt, index, labels, host = "127.0.0.1", export_dir = ".",
                                            preset_name = "libero";
  int port = 8080;
};

void run_serve(const ServeArgs& a) {
  ServiceOptions opt;
  opt.label_log = a.labels;
  opt.export_dir = a.export_dir;
  opt.fallback_preset = a.preset_name;
  auto ds = open_dataset(a.dataset);
  opt.layer_name = ds.layer_name;
  Service service(std::move(ds), load_checkpoint<float>(a.ckpt), load_index(a.index), opt);
  std::cout << "listening on " << a.host << ":" << a.port << std::endl;
  if (!serve(service, a.host, a.port)) {
    fail(ErrorCode::IoError, "cannot listen on " + a.host + ":" + std::to_string(a.port));
  }
}

struct IngestArgs {
  std::string dir, out, layer;
  std::size_t dim = 0, tokens = 1;
};

void run_ingest(const IngestArgs& a) {
  const auto ds = ingest_directory(a.dir, {a.dim, a.layer, a.tokens});
  write_dataset(ds, a.out);
  const auto stats = dataset_stats(ds);
  std::cout << "wrote " << a.out << " (" << stats.num_episodes << " episodes, "
            << stats.total_timesteps << " timesteps)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saelab: TopK sparse autoencoders over robot policy activations"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker thread cap (0 = all cores)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train an SAE and write a checkpoint");
  train->add_option("--config", train_args.config, "key=value training config")
      ->required()->check(CLI::ExistingFile);
  train->add_option("--dataset", train_args.dataset, "SAELAB01 dataset")
      ->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_args.out, "Checkpoint path")->required();

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  synth->add_option("--spec", synth_args.spec, "key=value plant spec")
      ->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_args.out, "SAELAB01 dataset path")->required();
  synth->add_option("--truth", synth_args.truth, "Ground-truth path (default <out>.truth)");

  MetricsArgs metrics_args;
  auto* metrics = app.add_subcommand("metrics", "Compute per-feature metrics");
  metrics->add_option("--ckpt", metrics_args.ckpt)->required()->check(CLI::ExistingFile);
  metrics->add_option("--dataset", metrics_args.dataset)->required()->check(CLI::ExistingFile);
  metrics->add_option("--out", metrics_args.out, "Metrics table path")->required();

  ClassifyArgs classify_args;
  auto* classify = app.add_subcommand("classify", "Label features general or memorized");
  classify->add_option("--metrics", classify_args.metrics)->required()->check(CLI::ExistingFile);
  auto* preset_opt = classify->add_option("--preset", classify_args.preset_name,
                                          "Published coefficients")
                         ->check(CLI::IsMember({"libero", "droid"}));
  auto* labels_opt = classify->add_option("--labels", classify_args.labels,
                                          "Label log (JSON lines) to fit on")
                         ->check(CLI::ExistingFile);
  auto* clf_opt = classify->add_option("--classifier", classify_args.classifier,
                                       "Saved classifier record")
                      ->check(CLI::ExistingFile);
  preset_opt->excludes(labels_opt)->excludes(clf_opt);
  labels_opt->excludes(clf_opt);
  classify->add_option("--out", classify_args.out, "Summary path")->required();
  classify->add_option("--classifier-out", classify_args.classifier_out,
                       "Also write the classifier record here");

  IndexArgs index_args;
  auto* index = app.add_subcommand("index", "Build the feature evidence index");
  index->add_option("--ckpt", index_args.ckpt)->required()->check(CLI::ExistingFile);
  index->add_option("--dataset", index_args.dataset)->required()->check(CLI::ExistingFile);
  index->add_option("--out", index_args.out, "Index path")->required();
  index->add_option("--top-k", index_args.top_k, "Timesteps kept per feature");

  SteerArgs steer_args;
  auto* steer = app.add_subcommand("steer", "Export a steering hook spec");
  steer->add_option("--ckpt", steer_args.ckpt)->required()->check(CLI::ExistingFile);
  steer->add_option("--feature", steer_args.feature)->required();
  steer->add_option("--alpha", steer_args.alpha)->required();
  steer->add_option("--out", steer_args.out, "Hook spec path")->required();
  steer->add_option("--layer", steer_args.layer, "Layer name recorded in the hook file");
  steer->add_option("--start", steer_args.start, "First steered timestep");

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--dataset", serve_args.dataset)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--ckpt,--checkpoint", serve_args.ckpt)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--index", serve_args.index)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--labels", serve_args.labels, "Label log (created if missing)")
      ->required();
  serve_cmd->add_option("--port", serve_args.port)->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--host", serve_args.host);
  serve_cmd->add_option("--export-dir", serve_args.export_dir);
  serve_cmd->add_option("--preset", serve_args.preset_name, "Classifier before labels exist")
      ->check(CLI::IsMember({"libero", "droid"}));

  IngestArgs ingest_args;
  auto* ingest = app.add_subcommand("ingest", "Convert per-episode float files to SAELAB01");
  ingest->add_option("--dir", ingest_args.dir)->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--dim", ingest_args.dim)->required();
  ingest->add_option("--out", ingest_args.out)->required();
  ingest->add_option("--layer", ingest_args.layer);
  ingest->add_option("--tokens", ingest_args.tokens, "Tokens per timestep to mean-pool");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "saelab: error: UsageError: " << e.what() << "\n";
    return 2;
  }

  thread_cap() = threads;
  try {
    if (*train) run_train(train_args);
    else if (*synth) run_synth(synth_args);
    else if (*metrics) run_metrics(metrics_args);
    else if (*classify) run_classify(classify_args);
    else if (*index) run_index(index_args);
    else if (*steer) run_steer(steer_args);
    else if (*serve_cmd) run_serve(serve_args);
    else if (*ingest) run_ingest(ingest_args);
  } catch (const Error& e) {
    std::cerr << "saelab: error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "saelab: error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
