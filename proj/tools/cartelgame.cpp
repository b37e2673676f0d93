// Lecturer command line: session control on an event log file, the HTTP
// server, and offline forest tools.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include <cartelgame/cartelgame.hpp>
#include <cartelgame/http.hpp>

namespace fs = std::filesystem;
using namespace cartelgame;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_out(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

std::atomic<bool> g_interrupted = false;

extern "C" void on_signal(int) { g_interrupted = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bid-rigging classroom game: session control, server and screening tools"};
  app.require_subcommand(1);

  std::string log_path;
  auto add_log = [&](CLI::App* c) { c->add_option("--log", log_path, "session event log (.jsonl)")->required(); };
  std::int64_t clock_ms = 0;
  auto stamp = [&] { return clock_ms ? clock_ms : now_ms(); };
  app.add_option("--at-ms", clock_ms, "fixed timestamp for recorded events (reproducible scripts)");

  // create-session
  std::string config_path, data_dir = ".";
  auto* create = app.add_subcommand("create-session", "create a session from a JSON config file");
  create->add_option("--config", config_path, "session config file")->required()->check(CLI::ExistingFile);
  create->add_option("--data-dir", data_dir, "directory for the event log");

  // join
  std::string code, name;
  auto* join = app.add_subcommand("join", "join a participant (lobby)");
  add_log(join);
  join->add_option("--code", code)->required();
  join->add_option("--name", name)->required();

  auto* advance = app.add_subcommand("advance", "advance to the next phase");
  add_log(advance);

  int group = 0, year = 0, round = 0;
  auto add_round = [&](CLI::App* c) {
    add_log(c);
    c->add_option("--group", group, "group, 0 for all")->capture_default_str();
    c->add_option("--year", year)->required()->check(CLI::Range(1, kYears));
    c->add_option("--round", round)->required()->check(CLI::Range(1, kRounds));
  };
  auto* open_round = app.add_subcommand("open-round", "open a round for bidding");
  add_round(open_round);
  auto* close_round = app.add_subcommand("close-round", "close a round and award its tenders");
  add_round(close_round);

  std::string participant, tender, amount;
  auto* bid = app.add_subcommand("bid", "record a bid for a participant");
  add_log(bid);
  bid->add_option("--participant", participant)->required();
  bid->add_option("--tender", tender)->required();
  bid->add_option("--amount", amount)->required();

  std::string csv_path;
  auto* training = app.add_subcommand("training-data", "publish a labeled training CSV");
  add_log(training);
  training->add_option("--csv", csv_path)->required()->check(CLI::ExistingFile);

  auto* classify_cmd = app.add_subcommand("submit", "record a participant's classification CSV");
  add_log(classify_cmd);
  classify_cmd->add_option("--participant", participant)->required();
  classify_cmd->add_option("--csv", csv_path)->required()->check(CLI::ExistingFile);

  auto* score = app.add_subcommand("score", "compute the final leaderboard (debrief)");
  add_log(score);

  std::string artifact, out_path;
  auto* export_cmd = app.add_subcommand("export", "write a CSV artifact");
  add_log(export_cmd);
  export_cmd->add_option("--artifact", artifact, "schedule|part3_dataset|submissions|leaderboard|chatlog|truth|bids")
      ->required();
  export_cmd->add_option("--out", out_path, "output file, default stdout");

  auto* status = app.add_subcommand("status", "print the lecturer view and join codes");
  add_log(status);

  std::string out_dir;
  auto* replay = app.add_subcommand("replay", "rebuild a session from its log and write every available export");
  add_log(replay);
  replay->add_option("--out-dir", out_dir, "directory for exports");

  // serve
  std::string host = "127.0.0.1", admin_token;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "run the HTTP server");
  serve->add_option("--data-dir", data_dir, "directory holding session logs")->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--admin-token", admin_token, "required to create sessions over HTTP");

  // forest tools
  ForestParams params;
  std::uint64_t seed = 1;
  std::string model_path;
  double threshold = 0.5, fraction = 0.75;
  int n_seeds = 10;
  auto add_params = [&](CLI::App* c) {
    c->add_option("--trees", params.n_trees)->capture_default_str();
    c->add_option("--mtry", params.mtry, "0: floor(sqrt(p))")->capture_default_str();
    c->add_option("--min-node-size", params.min_node_size)->capture_default_str();
    c->add_option("--threads", params.threads, "0: hardware concurrency")->capture_default_str();
  };
  auto* fit_cmd = app.add_subcommand("fit", "train a random forest on a labeled CSV");
  fit_cmd->add_option("--train", csv_path)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--seed", seed)->capture_default_str();
  fit_cmd->add_option("--out", model_path)->required();
  add_params(fit_cmd);

  std::string proba_path;
  auto* predict = app.add_subcommand("predict", "label a part 3 dataset with a saved forest");
  predict->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--data", csv_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--threshold", threshold)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  predict->add_option("--out", out_path, "submission CSV, default stdout");
  predict->add_option("--proba", proba_path, "also write ID,probability");

  auto* evaluate = app.add_subcommand("evaluate", "held-out accuracy over several split seeds");
  evaluate->add_option("--data", csv_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--seeds", n_seeds)->capture_default_str();
  evaluate->add_option("--first-seed", seed)->capture_default_str();
  evaluate->add_option("--fraction", fraction)->capture_default_str();
  evaluate->add_option("--threshold", threshold)->capture_default_str();
  add_params(evaluate);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*create) {
      auto cfg = SessionConfig::load(config_path);
      GameServer::Options opts;
      opts.data_dir = data_dir;
      opts.clock = stamp;
      GameServer server(std::move(opts));
      std::cout << server.create_session(cfg).dump(2) << '\n';
      return 0;
    }
    if (*serve) {
      GameServer::Options opts;
      opts.data_dir = data_dir;
      opts.admin_token = admin_token;
      opts.log = &std::clog;
      GameServer server(std::move(opts));
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::clog << "listening on http://" << host << ':' << port << '\n';
      server.run(host, port, &g_interrupted);
      return 0;
    }
    if (*fit_cmd) {
      const auto forest = fit(read_training_csv(slurp(csv_path)), params, seed);
      write_out(model_path, to_text(forest));
      std::clog << "fitted " << forest.trees.size() << " trees on " << forest.feature_names.size() << " features\n";
      return 0;
    }
    if (*predict) {
      const auto forest = from_text(slurp(model_path));
      const auto table = read_feature_csv(slurp(csv_path), forest.feature_names);
      const auto result = classify(forest, align_features(forest, table.feature_names, table.features), threshold);
      StaffSubmission s{"model", {}};
      for (std::size_t i = 0; i < table.ids.size(); ++i)
        s.labels[static_cast<int>(table.ids[i])] = result.labels[i] ? Label::Suspicious : Label::NonSuspicious;
      write_out(out_path, write_submission_csv(s));
      if (!proba_path.empty()) {
        std::ostringstream os;
        os << "ID,probability\n";
        for (std::size_t i = 0; i < table.ids.size(); ++i)
          os << table.ids[i] << ',' << csv::format_real(result.probabilities[i]) << '\n';
        write_out(proba_path, os.str());
      }
      std::clog << result.suspicious_count() << " of " << table.ids.size() << " flagged at threshold " << threshold
                << '\n';
      return 0;
    }
    if (*evaluate) {
      const auto data = read_training_csv(slurp(csv_path));
      double sum = 0;
      for (int i = 0; i < n_seeds; ++i) {
        const auto acc = holdout_accuracy(data, params, fraction, threshold, seed + i);
        sum += acc;
        std::cout << "seed " << seed + i << " accuracy " << csv::format_real(acc) << '\n';
      }
      std::cout << "mean accuracy " << csv::format_real(sum / n_seeds) << '\n';
      return 0;
    }

    // Everything else acts on a session log.
    EventLogFile log(log_path);
    Session s = open_session(log);
    if (*replay) {
      if (!out_dir.empty()) fs::create_directories(out_dir);
      for (const char* a : {"schedule", "part3_dataset", "submissions", "leaderboard", "chatlog", "truth", "bids"}) {
        try {
          const auto text = s.export_artifact(a);
          if (!out_dir.empty()) write_out((fs::path(out_dir) / (std::string(a) + ".csv")).string(), text);
          std::cout << a << ": " << text.size() << " bytes\n";
        } catch (const AccessError& e) {
          std::cout << a << ": unavailable (" << e.what() << ")\n";
        }
      }
      std::cout << s.events().size() << " events replayed, phase " << to_string(s.phase()) << '\n';
    } else if (*status) {
      auto view = s.lecturer_view();
      view["lecturer_token"] = s.lecturer_token();
      std::cout << view.dump(2) << '\n';
    } else if (*join) {
      const auto& seat = s.join(code, name, stamp());
      std::cout << seat.participant_id << " group " << seat.group << " seat " << seat.seat << '\n';
    } else if (*advance) {
      std::cout << to_string(s.advance(stamp())) << '\n';
    } else if (*open_round) {
      if (!s.open_round(group, year, round, stamp())) std::clog << "round already open, nothing recorded\n";
    } else if (*close_round) {
      if (!s.close_round(group, year, round, stamp())) std::clog << "round already closed, nothing recorded\n";
      else std::cout << s.events().back().at("outcome").dump(2) << '\n';
    } else if (*bid) {
      const auto& b = s.submit_bid(participant, tender, Money::parse(amount), stamp());
      std::cout << b.tender_id << " bid " << b.bid.str() << " cost " << b.cost.str() << '\n';
    } else if (*training) {
      const auto& d = s.ingest_training_data(slurp(csv_path), csv_path, stamp());
      std::cout << d.size() << " rows, " << d.arity() + 1 << " columns, " << d.count(1) << " cartel\n";
    } else if (*classify_cmd) {
      const bool replaced = s.submit_classification(read_submission_csv(slurp(csv_path), participant), stamp());
      std::cout << (replaced ? "replaced earlier submission\n" : "recorded\n");
    } else if (*score) {
      if (!s.score(stamp())) std::clog << "already scored\n";
      std::cout << leaderboard_csv(*s.leaderboard());
    } else if (*export_cmd) {
      write_out(out_path, s.export_artifact(artifact));
    }
    return 0;
  } catch (const BlockedError& e) {
    std::cerr << "error: " << e.summary() << '\n';
    for (const auto& b : e.blockers()) std::cerr << "  - " << b << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
