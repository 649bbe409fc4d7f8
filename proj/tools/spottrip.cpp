// spottrip: command-line front end.
//
//   spottrip gen-synth --out raw/
//   spottrip ingest --checkins raw/checkins.tsv --kg raw/kg.tsv --out data/
//   spottrip train --config run.json --data data/
//   spottrip evaluate --checkpoint out/best.json --data data/
//   spottrip recommend --checkpoint out/best.json --data data/ --user u0001 --origin r1_p3 --dest r1_p9 --stops 4
//   spottrip ablate --config run.json --data data/
//   spottrip plot-case --checkpoint out/best.json --data data/ --user u0001 --out case.svg
//
// Outputs go under $SPOTTRIP_OUT (default ./spottrip_out) unless a path is given.

#include "spottrip/spottrip.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>

using namespace spottrip;
namespace fs = std::filesystem;

namespace {

fs::path out_dir() {
  const char* env = std::getenv("SPOTTRIP_OUT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("spottrip_out");
}

// Flags shared by commands that build a run config. Unset flags leave the
// file's values alone.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::optional<int> epochs, patience, d;
  std::optional<double> lr, sigma, top_p;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant, data;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "run config (JSON)");
    app->add_option("--data", data, "dataset directory written by ingest");
    app->add_option("--epochs", epochs, "max epochs");
    app->add_option("--patience", patience, "early-stop patience (0 disables)");
    app->add_option("--d", d, "hidden size");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--sigma", sigma, "reconstruction noise scale");
    app->add_option("--top-p", top_p, "nucleus mass");
    app->add_option("--seed", seed, "training seed");
    app->add_option("--variant", variant, "full, wo_KS, wo_OD or wo_SI");
    app->add_option("--set", sets, "key=JSON override, repeatable");
  }

  RunConfig build() const {
    nlohmann::json j = nlohmann::json::object();
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw ConfigError("cannot open config " + file);
      try {
        in >> j;
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + file + ": " + e.what());
      }
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      try {
        j[key] = nlohmann::json::parse(value);
      } catch (const nlohmann::json::parse_error&) {
        j[key] = value;
      }
    }
    if (epochs) j["max_epochs"] = *epochs;
    if (patience) j["patience"] = *patience;
    if (d) j["d"] = *d;
    if (lr) j["lr"] = *lr;
    if (sigma) j["sigma"] = *sigma;
    if (top_p) j["top_p"] = *top_p;
    if (seed) j["seed"] = *seed;
    if (variant) j["variant"] = *variant;
    if (data) j["data_dir"] = *data;
    return config_from_json(j);
  }
};

Dataset load_data(const std::string& dir) {
  if (dir.empty()) throw ConfigError("no dataset: pass --data or set data_dir in the config");
  return load_dataset(dir);
}

const std::vector<TravelRecord>& split_of(const Dataset& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "valid") return ds.valid;
  if (name == "test") return ds.test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, valid or test)");
}

const TravelRecord& record_of(const Dataset& ds, const std::string& user) {
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    for (const auto& r : *split) {
      if (r.user_id == user) return r;
    }
  }
  throw std::invalid_argument("no travel record for user '" + user + "'");
}

Index poi_of(const Dataset& ds, const std::string& token) {
  for (std::size_t i = 0; i < ds.pois.size(); ++i) {
    if (ds.pois[i].token == token) return static_cast<Index>(i);
  }
  throw std::invalid_argument("unknown POI '" + token + "'");
}

struct Loaded {
  RunConfig cfg;
  Checkpoint ckpt;
  Dataset ds;
  std::unique_ptr<SpotTrip> model;
};

Loaded load_model(const std::string& checkpoint, const std::optional<std::string>& data) {
  Loaded l;
  l.ckpt = load_checkpoint(checkpoint);
  l.cfg = config_from_json(l.ckpt.config);
  if (config_hash(l.cfg) != l.ckpt.config_hash) throw ConfigError("checkpoint " + checkpoint + " carries a stale config hash");
  l.ds = load_data(data ? *data : l.cfg.data_dir);
  l.model = std::make_unique<SpotTrip>(l.cfg, l.ds);
  restore(l.model->store(), l.ckpt.params);
  return l;
}

nlohmann::json summary_json(const metrics::Summary& s) {
  return {{"f1", s.f1}, {"pairs_f1", s.pairs_f1}, {"full_f1", s.full_f1}, {"full_pairs_f1", s.full_pairs_f1},
          {"trips", s.trips}, {"vacuous", s.vacuous}};
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
    auto j = summary_json(r.per_seed[i]);
    if (i < r.seeds.size()) j["seed"] = r.seeds[i];
    per.push_back(j);
  }
  return {{"mean", summary_json(r.mean)}, {"per_seed", per}, {"trips", r.trips}};
}

void print_row(const std::string& name, const metrics::Summary& s) {
  std::cout << std::left << std::setw(12) << name << std::right << std::fixed << std::setprecision(4) << std::setw(9) << s.f1
            << std::setw(9) << s.pairs_f1 << std::setw(9) << s.full_f1 << std::setw(9) << s.full_pairs_f1 << std::setw(7)
            << s.trips << '\n';
}

void print_header() {
  std::cout << std::left << std::setw(12) << "model" << std::right << std::setw(9) << "F1" << std::setw(9) << "PairsF1"
            << std::setw(9) << "FullF1" << std::setw(9) << "FullPF1" << std::setw(7) << "trips" << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::vector<std::uint64_t>& given, const RunConfig& cfg) {
  return given.empty() ? cfg.eval_seeds : given;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-of-town trip recommendation"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "filter raw check-ins and a KG into a dataset directory");
  std::string checkins, kg_file, ingest_out, format = std::string(kCheckinFormat);
  std::uint64_t split_seed = 0;
  FilterConfig filter;
  ingest->add_option("--checkins", checkins, "check-in TSV")->required();
  ingest->add_option("--kg", kg_file, "knowledge-graph TSV")->required();
  ingest->add_option("--out", ingest_out, "dataset directory")->required();
  ingest->add_option("--format", format, "check-in format tag");
  ingest->add_option("--split-seed", split_seed, "seed of the 80/10/10 user split");
  ingest->add_option("--min-poi-visits", filter.min_poi_visits);
  ingest->add_option("--min-hometown", filter.min_hometown);
  ingest->add_option("--min-outoftown", filter.min_outoftown);
  ingest->add_option("--min-pair-frequency", filter.min_pair_frequency);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "write a planted synthetic corpus");
  SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory (checkins.tsv, kg.tsv, truth.json)")->required();
  gen->add_option("--users", spec.users);
  gen->add_option("--regions", spec.regions);
  gen->add_option("--pois-per-region", spec.pois_per_region);
  gen->add_option("--categories", spec.categories);
  gen->add_option("--seed", spec.seed);

  // train
  auto* train = app.add_subcommand("train", "train a model; writes best.json, last.json and losses.tsv");
  ConfigFlags train_flags;
  train_flags.attach(train);
  std::string resume;
  train->add_option("--resume", resume, "checkpoint to continue from");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a split");
  std::string eval_ckpt, eval_split = "test";
  std::optional<std::string> eval_data;
  std::vector<std::uint64_t> eval_seeds;
  std::optional<double> eval_p;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--data", eval_data);
  eval->add_option("--split", eval_split);
  eval->add_option("--seeds", eval_seeds)->delimiter(',');
  eval->add_option("--top-p", eval_p);

  // recommend
  auto* rec = app.add_subcommand("recommend", "recommend one trip");
  std::string rec_ckpt, rec_user, rec_origin, rec_dest, rec_plot;
  std::optional<std::string> rec_data;
  Index rec_stops = 0;
  double rec_p = 0.9;
  std::uint64_t rec_seed = 0;
  rec->add_option("--checkpoint", rec_ckpt)->required();
  rec->add_option("--data", rec_data);
  rec->add_option("--user", rec_user, "user whose hometown history drives the query")->required();
  rec->add_option("--origin", rec_origin)->required();
  rec->add_option("--dest", rec_dest)->required();
  rec->add_option("--stops", rec_stops)->required();
  rec->add_option("--top-p", rec_p);
  rec->add_option("--seed", rec_seed);
  rec->add_option("--plot", rec_plot, "also write an SVG map");

  // ablate
  auto* abl = app.add_subcommand("ablate", "train and score each variant");
  ConfigFlags abl_flags;
  abl_flags.attach(abl);
  std::vector<std::string> variants{"full", "wo_KS", "wo_OD", "wo_SI"};
  std::vector<std::uint64_t> abl_seeds;
  abl->add_option("--variants", variants)->delimiter(',');
  abl->add_option("--train-seeds", abl_seeds, "one full run per training seed")->delimiter(',');

  // plot-case
  auto* plot = app.add_subcommand("plot-case", "map of truth vs. full, origin-only and destination-only recommendations");
  std::string plot_ckpt, plot_user, plot_out;
  std::optional<std::string> plot_data;
  double plot_p = 0.9;
  std::uint64_t plot_seed = 0;
  plot->add_option("--checkpoint", plot_ckpt)->required();
  plot->add_option("--data", plot_data);
  plot->add_option("--user", plot_user)->required();
  plot->add_option("--out", plot_out)->required();
  plot->add_option("--top-p", plot_p);
  plot->add_option("--seed", plot_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      const RawCorpus corpus = ingest_checkins(fs::path(checkins), format);
      const RawKnowledgeGraph kg = ingest_kg(fs::path(kg_file), corpus);
      const Dataset ds = build_dataset(corpus, kg, filter, split_seed);
      save_dataset(ds, ingest_out);
      std::cout << "pois " << ds.pois.size() << " records " << ds.train.size() << "/" << ds.valid.size() << "/" << ds.test.size()
                << " triples " << ds.kg.size() << '\n';
    } else if (*gen) {
      const SyntheticData data = generate_synthetic(spec);
      write_text_file(fs::path(gen_out) / "checkins.tsv", data.checkins_tsv);
      write_text_file(fs::path(gen_out) / "kg.tsv", data.kg_tsv);
      nlohmann::json truth = nlohmann::json::array();
      for (const auto& u : data.truth) {
        truth.push_back({{"user", u.user}, {"home_region", u.home_region}, {"trip_region", u.trip_region},
                         {"category", u.category}, {"early_category", u.early_category}, {"late_category", u.late_category},
                         {"anchor", u.anchor}, {"trip", u.trip}});
      }
      write_text_file(fs::path(gen_out) / "truth.json", truth.dump(1) + "\n");
      std::cout << "users " << data.truth.size() << " -> " << gen_out << '\n';
    } else if (*train) {
      const RunConfig cfg = train_flags.build();
      const Dataset ds = load_data(cfg.data_dir);
      SpotTrip model(cfg, ds);
      Trainer trainer(model, ds);
      const fs::path out = out_dir();
      fs::create_directories(out);
      std::ofstream log(out / "losses.tsv", resume.empty() ? std::ios::trunc : std::ios::app);
      if (resume.empty()) log << "epoch\ttranse\tl_s\tl_d\tl_r\ttotal\tvalid_f1\n";
      Checkpoint from;
      TrainOptions opts;
      if (!resume.empty()) {
        from = load_checkpoint(resume);
        opts.resume = &from;
      }
      opts.on_epoch = [&](const EpochLog& e, const SpotTrip&) {
        log << e.epoch << '\t' << e.transe << '\t' << e.l_s << '\t' << e.l_d << '\t' << e.l_r << '\t' << e.total << '\t'
            << e.valid_f1 << '\n';
        log.flush();
        std::cerr << "epoch " << e.epoch << " L=" << e.total << " valid F1=" << e.valid_f1 << (e.improved ? " *" : "") << '\n';
        return true;
      };
      const TrainResult res = trainer.train(opts);
      save_checkpoint(res.best, out / "best.json");
      save_checkpoint(res.last, out / "last.json");
      std::cout << "config " << trainer.hash() << " epochs " << res.history.size() << " best epoch " << res.best.best_epoch
                << " valid F1 " << res.best.best_metric << (res.early_stopped ? " (early stop)" : "") << '\n'
                << "checkpoint " << (out / "best.json").string() << '\n';
    } else if (*eval) {
      Loaded l = load_model(eval_ckpt, eval_data);
      const auto& records = split_of(l.ds, eval_split);
      const auto seeds = parse_seeds(eval_seeds, l.cfg);
      const double p = eval_p ? *eval_p : l.cfg.top_p;
      const EvalReport rep = evaluate(*l.model, records, p, seeds);
      const EvalReport pop = evaluate_popularity(metrics::Popularity(l.ds.train, l.ds.region_pois), records);
      print_header();
      for (std::size_t i = 0; i < rep.per_seed.size(); ++i) print_row("seed " + std::to_string(seeds[i]), rep.per_seed[i]);
      print_row(variant_name(l.cfg.variant), rep.mean);
      print_row("popularity", pop.mean);
      nlohmann::json j{{"config_hash", l.ckpt.config_hash}, {"split", eval_split}, {"top_p", p}, {"model", report_json(rep)},
                       {"popularity", report_json(pop)}};
      const fs::path out = out_dir() / ("evaluate_" + eval_split + ".json");
      write_text_file(out, j.dump(2) + "\n");
      std::cout << "summary " << out.string() << '\n';
    } else if (*rec) {
      Loaded l = load_model(rec_ckpt, rec_data);
      const TravelRecord& r = record_of(l.ds, rec_user);
      const Index origin = poi_of(l.ds, rec_origin), dest = poi_of(l.ds, rec_dest);
      const Index region = l.ds.pois[static_cast<std::size_t>(origin)].region;
      Rng rng(rec_seed);
      const auto trip = l.model->recommend(r.hometown, region, fusion::Query{origin, dest, rec_stops}, rec_p, rng);
      for (Index v : trip) std::cout << l.ds.pois[static_cast<std::size_t>(v)].token << '\n';
      if (!rec_plot.empty()) write_text_file(rec_plot, render_trip_svg(l.ds, {{"recommended", "#d62728", trip}}, rec_user));
    } else if (*abl) {
      RunConfig cfg = abl_flags.build();
      const Dataset ds = load_data(cfg.data_dir);
      if (abl_seeds.empty()) abl_seeds = {cfg.seed};
      nlohmann::json rows = nlohmann::json::array();
      print_header();
      print_row("popularity", evaluate_popularity(metrics::Popularity(ds.train, ds.region_pois), ds.test).mean);
      for (std::uint64_t s : abl_seeds) {
        cfg.seed = s;
        for (const auto& tag : variants) {
          const AblationRow row = run_ablation(parse_variant(tag), cfg, ds);
          RunConfig used = cfg;
          used.variant = row.variant;
          print_row(tag + "/" + std::to_string(s), row.report.mean);
          rows.push_back({{"variant", tag}, {"train_seed", s}, {"epochs", row.epochs}, {"config_hash", config_hash(used)},
                          {"report", report_json(row.report)}});
        }
      }
      const fs::path out = out_dir() / "ablation.json";
      write_text_file(out, rows.dump(2) + "\n");
      std::cout << "summary " << out.string() << '\n';
    } else if (*plot) {
      Loaded l = load_model(plot_ckpt, plot_data);
      const TravelRecord& r = record_of(l.ds, plot_user);
      write_text_file(plot_out, render_trip_svg(l.ds, case_trips(*l.model, r, plot_p, plot_seed), plot_user));
      std::cout << "plot " << plot_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
