#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mglab/error.hpp"
#include "mglab/selfplay.hpp"
#include "mglab/session.hpp"
#include "mglab/sim_transport.hpp"
#include "mglab/slaved.hpp"
#include "mglab/ws_server.hpp"

namespace mglab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kCommands = {"simulate", "analyze", "predict", "bootstrap", "serve", "replay"};

struct Options {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config;

  int agents = 10;
  int s_max = 10;
  int m_max = 6;
  int runs = 1000;
  std::string mode = "dollar";
  int q = 1;
  std::string returns = "log";
  std::string census = "agents";
  int threads = 0;
  int target_offset = 1;
  std::string thresholds = "0.2:0.02:0.4";
  std::string prefix_bits;

  int periods = 60;
  double initial_price = 5.0;
  std::string force_constant;

  std::string series;
  double threshold = 0.2;
  int outer = 10;
  int inner = 10;

  std::string session;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string assets;
  std::string scripted_clients;

  std::string log;
};

// Usage errors raised after parsing (bad ranges, bad flag combinations).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto data = buf.str();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

class Manifest {
 public:
  Manifest(std::string command, json config, std::uint64_t seed, fs::path out_dir)
      : out_dir_(std::move(out_dir)) {
    doc_ = {{"command", std::move(command)},
            {"config", std::move(config)},
            {"seed", seed},
            {"inputs", json::array()},
            {"outputs", json::array()}};
  }

  void input(const std::string& path) { doc_["inputs"].push_back({{"path", path}, {"sha256", sha256_hex(path)}}); }
  void output(const std::string& name) {
    doc_["outputs"].push_back({{"path", name}, {"sha256", sha256_hex(out_dir_ / name)}});
  }
  void result(const std::string& key, json value) { doc_["results"][key] = std::move(value); }

  void write() const {
    std::ofstream out(out_dir_ / "manifest.json");
    out << doc_.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write manifest");
  }

 private:
  fs::path out_dir_;
  json doc_;
};

std::ofstream open_output(const fs::path& dir, const std::string& name) {
  std::ofstream out(dir / name);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  return out;
}

EnsembleConfig ensemble_config(const Options& o) {
  EnsembleConfig c;
  c.n_agents = o.agents;
  c.s_max = o.s_max;
  c.m_max = o.m_max;
  c.runs = o.runs;
  c.mode = o.mode == "minority" ? Payoff::minority : Payoff::dollar;
  c.q = o.q;
  c.seed = o.seed;
  c.returns = o.returns == "sign" ? ReturnMode::sign : ReturnMode::log;
  c.census = o.census == "strategies" ? Census::strategies : Census::agents;
  c.threads = o.threads;
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
  if (o.target_offset < 1) throw UsageError("--target-offset must be >= 1");
  return c;
}

json ensemble_json(const Options& o) {
  return {{"agents", o.agents},   {"s-max", o.s_max},   {"m-max", o.m_max},
          {"runs", o.runs},       {"mode", o.mode},     {"q", o.q},
          {"returns", o.returns}, {"census", o.census}, {"target-offset", o.target_offset},
          {"seed", o.seed}};
}

std::vector<double> parse_thresholds(const std::string& text) {
  try {
    if (text.find(':') != std::string::npos) {
      std::vector<double> parts;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ':')) parts.push_back(std::stod(item));
      if (parts.size() != 3) throw UsageError("--thresholds expects start:step:end");
      return threshold_grid(parts[0], parts[1], parts[2]);
    }
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) grid.push_back(std::stod(item));
    if (grid.empty()) throw UsageError("--thresholds is empty");
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (!(grid[i] > 0) || (i > 0 && !(grid[i] > grid[i - 1])))
        throw UsageError("thresholds must be positive and strictly increasing");
    return grid;
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse --thresholds '" + text + "'");
  }
}

std::vector<std::uint8_t> parse_bits(const std::string& text) {
  std::vector<std::uint8_t> bits;
  for (char c : text) {
    if (c != '0' && c != '1') throw UsageError("--prefix-bits takes a string of 0 and 1");
    bits.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return bits;
}

void write_trajectory(std::ostream& out, const DecouplingTrajectory& traj) {
  out << "period,d_plus,d_minus,delta_d\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& s = traj.snapshots[i];
    out << traj.periods[i] << ',' << format_double(s.d_plus) << ',' << format_double(s.d_minus) << ','
        << format_double(s.delta_d) << '\n';
  }
}

void write_success_table(std::ostream& out, const SuccessTable& table) {
  out << "threshold,success_rate,n_events\n";
  for (const auto& row : table.rows)
    out << format_double(row.threshold) << ',' << (row.success_rate ? format_double(*row.success_rate) : "")
        << ',' << row.n_events << '\n';
}

void print_success_table(std::ostream& out, const SuccessTable& table) {
  out << "  dD>    rate   events\n";
  for (const auto& row : table.rows) {
    std::ostringstream rate;
    if (row.success_rate)
      rate << std::fixed << std::setprecision(2) << *row.success_rate;
    else
      rate << "-";
    out << "  " << std::fixed << std::setprecision(2) << row.threshold << std::setw(8) << rate.str()
        << std::setw(9) << row.n_events << '\n';
  }
}

PriceSeries load_series(const std::string& path) {
  if (path.empty()) throw UsageError("a series file is required");
  try {
    return read_series_file(path);
  } catch (const InvalidInput& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o, std::ostream& out) {
  SelfPlayConfig cfg;
  cfg.agents = ensemble_config(o);
  if (o.periods < 1) throw UsageError("--periods must be >= 1");
  cfg.market = MarketParams::for_participants(o.agents);
  cfg.market.periods = o.periods;
  cfg.market.initial_price = o.initial_price;
  if (!(o.initial_price > 0)) throw UsageError("--initial-price must be positive");
  if (!o.force_constant.empty()) {
    if (o.force_constant == "+1" || o.force_constant == "1")
      cfg.force_constant = 1;
    else if (o.force_constant == "-1")
      cfg.force_constant = -1;
    else
      throw UsageError("--force-constant takes +1 or -1");
  }
  const auto result = simulate_self_play(cfg);

  const fs::path dir = o.out_dir;
  {
    auto f = open_output(dir, "series.csv");
    write_series_csv(f, result.series);
  }
  {
    auto f = open_output(dir, "trajectory.csv");
    write_trajectory(f, result.trajectory);
  }
  auto config = ensemble_json(o);
  config.erase("runs");
  config["periods"] = o.periods;
  config["initial-price"] = o.initial_price;
  if (!o.force_constant.empty()) config["force-constant"] = o.force_constant;
  Manifest m("simulate", config, o.seed, dir);
  m.output("series.csv");
  m.output("trajectory.csv");
  std::string warm;
  for (auto b : result.warmup_bits) warm += static_cast<char>('0' + b);
  m.result("warmup_bits", warm);
  m.result("ties", result.ties);
  m.result("final_price", result.series.prices.back());
  m.write();

  out << "simulated " << o.periods << " periods, final price " << format_double(result.series.prices.back())
      << ", " << result.ties << " tie period(s), warm-up bits " << warm << '\n';
  return kOk;
}

struct Analysis {
  PriceSeries series;
  DecouplingTrajectory trajectory;
};

Analysis analyze_series(const Options& o) {
  const auto cfg = ensemble_config(o);
  const auto prefix = parse_bits(o.prefix_bits);
  if (!prefix.empty() && prefix.size() != static_cast<std::size_t>(o.m_max))
    throw UsageError("--prefix-bits must hold exactly m-max bits");
  Analysis a{load_series(o.series), {}};
  try {
    a.trajectory = ensemble_mean(cfg, a.series, prefix);
  } catch (const InvalidInput& e) {
    throw ParseError(o.series + ": " + e.what());
  }
  return a;
}

json analysis_config(const Options& o) {
  auto config = ensemble_json(o);
  config["series"] = o.series;
  if (!o.prefix_bits.empty()) config["prefix-bits"] = o.prefix_bits;
  return config;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  const auto thresholds = parse_thresholds(o.thresholds);
  const auto a = analyze_series(o);
  const auto table = success_table(a.trajectory, a.series, thresholds, o.target_offset);

  const fs::path dir = o.out_dir;
  {
    auto f = open_output(dir, "trajectory.csv");
    write_trajectory(f, a.trajectory);
  }
  {
    auto f = open_output(dir, "success_table.csv");
    write_success_table(f, table);
  }
  auto config = analysis_config(o);
  config["thresholds"] = o.thresholds;
  Manifest m("analyze", config, o.seed, dir);
  m.input(o.series);
  m.output("trajectory.csv");
  m.output("success_table.csv");
  m.write();
  print_success_table(out, table);
  return kOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  if (!(o.threshold > 0)) throw UsageError("--threshold must be positive");
  const auto a = analyze_series(o);
  const auto preds = predict(a.trajectory, o.threshold, o.target_offset);

  const fs::path dir = o.out_dir;
  {
    auto f = open_output(dir, "predictions.csv");
    f << "period,predicted_bit,realized_bit\n";
    for (const auto& p : preds) {
      f << p.period << ',' << p.bit << ',';
      if (p.period >= 1 && p.period <= a.series.last_period()) f << a.series.bit_at(p.period);
      f << '\n';
    }
  }
  auto config = analysis_config(o);
  config["threshold"] = o.threshold;
  Manifest m("predict", config, o.seed, dir);
  m.input(o.series);
  m.output("predictions.csv");
  m.write();
  out << preds.size() << " prediction(s) at dD > " << format_double(o.threshold) << '\n';
  return kOk;
}

int cmd_bootstrap(const Options& o, std::ostream& out) {
  if (o.outer < 2) throw UsageError("--outer must be >= 2");
  if (o.inner < 10) throw UsageError("--inner must be >= 10");
  const auto cfg = ensemble_config(o);
  const auto series = load_series(o.series);
  BootstrapBands bands;
  try {
    bands = bootstrap_bands(cfg, series, o.outer, o.inner);
  } catch (const InvalidInput& e) {
    throw ParseError(o.series + ": " + e.what());
  }

  const fs::path dir = o.out_dir;
  {
    auto f = open_output(dir, "bands.csv");
    f << "realization,period,d_plus,d_plus_low10,d_plus_high90,d_minus,d_minus_low10,d_minus_high90\n";
    for (std::size_t r = 0; r < bands.realizations.size(); ++r) {
      const auto& real = bands.realizations[r];
      for (std::size_t t = 0; t < real.trajectory.size(); ++t) {
        const auto& s = real.trajectory.snapshots[t];
        f << r << ',' << real.trajectory.periods[t] << ',' << format_double(s.d_plus) << ','
          << format_double(real.plus_low10[t]) << ',' << format_double(real.plus_high90[t]) << ','
          << format_double(s.d_minus) << ',' << format_double(real.minus_low10[t]) << ','
          << format_double(real.minus_high90[t]) << '\n';
      }
    }
  }
  auto config = ensemble_json(o);
  config["series"] = o.series;
  config["outer"] = o.outer;
  config["inner"] = o.inner;
  Manifest m("bootstrap", config, o.seed, dir);
  m.input(o.series);
  m.output("bands.csv");
  m.write();
  out << "bands for " << o.outer << " realization(s) x " << o.inner << " replica(s) written\n";
  return kOk;
}

TraderPolicy scripted_policy(const std::string& kind, std::uint64_t seed, int trader) {
  if (kind == "buy") return [](int) -> std::optional<Order> { return Order::buy; };
  if (kind == "sell") return [](int) -> std::optional<Order> { return Order::sell; };
  if (kind == "silent") return [](int) -> std::optional<Order> { return std::nullopt; };
  if (kind == "random")
    return [seed, trader](int period) -> std::optional<Order> {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(trader), static_cast<std::uint64_t>(period)));
      switch (rng.uniform_int(0, 2)) {
        case 0: return Order::buy;
        case 1: return Order::sell;
        default: return Order::hold;
      }
    };
  throw UsageError("--scripted-clients takes buy, sell, silent or random");
}

int cmd_serve(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.session.empty()) throw UsageError("serve needs a session config file");
  std::ifstream in(o.session);
  if (!in) throw LoadError("cannot open session config " + o.session);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(o.session + ": " + e.what());
  }
  const auto cfg = SessionConfig::from_json(doc, fs::path(o.session).parent_path());
  if (o.port < 0 || o.port > 65535) throw UsageError("--port must be in [0, 65535]");

  const fs::path dir = o.out_dir;
  auto log_file = open_output(dir, "session.log");
  SessionLog log;
  log.mirror_to(&log_file);

  SessionState state;
  if (!o.scripted_clients.empty()) {
    SimulatedTransport net;
    for (int i = 0; i < cfg.n_participants; ++i)
      add_scripted_trader(net, "trader" + std::to_string(i + 1), scripted_policy(o.scripted_clients, o.seed, i));
    state = run_session(cfg, net, log);
  } else {
    WsServer server({o.host, static_cast<std::uint16_t>(o.port), o.assets});
    err << "listening on ws://" << o.host << ':' << server.port() << "/ (observers: ?role=observer)\n";
    state = run_session(cfg, server, log);
    server.shutdown();
  }
  log_file.close();

  json config = {{"session", o.session}, {"seed", o.seed}};
  if (!o.scripted_clients.empty()) config["scripted-clients"] = o.scripted_clients;
  Manifest m("serve", config, o.seed, dir);
  m.input(o.session);
  m.output("session.log");
  m.result("final_price", state.current_price);
  m.write();
  out << "session closed after " << state.period << " periods, final price "
      << Money::from_double(state.current_price).to_display() << '\n';
  for (std::size_t i = 0; i < state.names.size(); ++i)
    out << "  " << state.names[i] << ": pnl " << state.accounts[i].pnl.to_display() << ", payout "
        << state.payouts[i].to_display() << '\n';
  return kOk;
}

int cmd_replay(const Options& o, std::ostream& out) {
  if (o.log.empty()) throw UsageError("replay needs a session log");
  const auto log = SessionLog::read_file(o.log);
  const auto series = replay(log);
  const fs::path dir = o.out_dir;
  {
    auto f = open_output(dir, "series.csv");
    write_series_csv(f, series);
  }
  Manifest m("replay", {{"log", o.log}}, o.seed, dir);
  m.input(o.log);
  m.output("series.csv");
  m.write();
  out << "replayed " << series.last_period() << " periods\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// --config: a JSON object of flag values, or a run manifest. Its values are
// placed before the user's own arguments so the command line wins.

struct ConfigArgs {
  std::string command;
  std::vector<std::string> args;
};

ConfigArgs config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path + ": " + e.what());
  }
  if (!doc.is_object()) throw LoadError(path + ": config must be a JSON object");
  ConfigArgs ca;
  if (doc.contains("command") && doc.contains("config")) {
    ca.command = doc["command"].get<std::string>();
    doc = doc["config"];
  }
  for (const auto& [key, value] : doc.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_boolean()) {
      if (value.get<bool>()) ca.args.push_back(flag);
    } else if (value.is_string()) {
      ca.args.push_back(flag);
      ca.args.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      ca.args.push_back(flag);
      ca.args.push_back(value.is_number_float() ? format_double(value.get<double>()) : value.dump());
    } else {
      throw LoadError(path + ": unsupported value for \"" + key + "\"");
    }
  }
  return ca;
}

std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  auto ca = config_args(config);
  auto sub = std::find_if(args.begin() + 1, args.end(), [](const std::string& a) {
    return std::find(kCommands.begin(), kCommands.end(), a) != kCommands.end();
  });
  if (sub == args.end()) {
    if (ca.command.empty()) return args;
    sub = args.insert(args.end(), ca.command);
  }
  args.insert(sub + 1, ca.args.begin(), ca.args.end());
  return args;
}

void add_ensemble_options(CLI::App* sub, Options& o) {
  sub->add_option("--agents", o.agents, "Agents per population")->capture_default_str();
  sub->add_option("--s-max", o.s_max, "Largest strategy count per agent")->capture_default_str();
  sub->add_option("--m-max", o.m_max, "Largest memory per agent")->capture_default_str();
  sub->add_option("--mode", o.mode, "Payoff: dollar or minority")
      ->check(CLI::IsMember({"dollar", "minority"}))
      ->capture_default_str();
  sub->add_option("--q", o.q, "Decoupling horizon in unrealized bits")->capture_default_str();
  sub->add_option("--returns", o.returns, "Score update: log or sign")
      ->check(CLI::IsMember({"log", "sign"}))
      ->capture_default_str();
  sub->add_option("--census", o.census, "Count agents or held strategies")
      ->check(CLI::IsMember({"agents", "strategies"}))
      ->capture_default_str();
  sub->add_option("--threads", o.threads, "Worker threads, 0 for all cores")->capture_default_str();
  sub->add_option("--target-offset", o.target_offset, "Periods ahead a prediction targets")
      ->capture_default_str();
}

void add_analysis_options(CLI::App* sub, Options& o) {
  add_ensemble_options(sub, o);
  sub->add_option("series,--series", o.series, "Price series (CSV or JSON)")->required();
  sub->add_option("--runs", o.runs, "Monte Carlo runs per ensemble")->capture_default_str();
  sub->add_option("--prefix-bits", o.prefix_bits, "Warm-up history, oldest first, m-max bits");
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Market-game laboratory: self-play, slaved ensembles, predictions and live sessions",
               "mglab"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.fallthrough();
  app.require_subcommand(1, 1);
  app.add_option("--seed", o.seed, "Master seed")->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "Directory for outputs")->capture_default_str();
  app.add_option("--config", o.config, "JSON file of flag values, or a run manifest to re-execute");

  auto* simulate = app.add_subcommand("simulate", "Self-coupled game writing a price series and trajectory");
  add_ensemble_options(simulate, o);
  simulate->add_option("--periods", o.periods, "Periods to play")->capture_default_str();
  simulate->add_option("--initial-price", o.initial_price, "P(0)")->capture_default_str();
  simulate->add_option("--force-constant", o.force_constant, "Give every agent one constant table: +1 or -1");

  auto* analyze = app.add_subcommand("analyze", "Slaved ensemble, predictions and success table");
  add_analysis_options(analyze, o);
  analyze->add_option("--thresholds", o.thresholds, "start:step:end or comma list")->capture_default_str();

  auto* pred = app.add_subcommand("predict", "Slaved ensemble and the predictions above one threshold");
  add_analysis_options(pred, o);
  pred->add_option("--threshold", o.threshold, "dD threshold (strict)")->capture_default_str();

  auto* boot = app.add_subcommand("bootstrap", "Replica bands around ensemble-mean realizations");
  add_analysis_options(boot, o);
  boot->add_option("--outer", o.outer, "Realizations")->capture_default_str();
  boot->add_option("--inner", o.inner, "Replicas per realization")->capture_default_str();

  auto* serve = app.add_subcommand("serve", "Run one live session and write its log");
  serve->add_option("session,--session", o.session, "Session config JSON")->required();
  serve->add_option("--host", o.host, "Listen address")->capture_default_str();
  serve->add_option("--port", o.port, "Listen port, 0 for any free port")->capture_default_str();
  serve->add_option("--assets", o.assets, "Static client files to serve over HTTP");
  serve->add_option("--scripted-clients", o.scripted_clients,
                    "Run headless with scripted participants: buy, sell, silent or random");

  auto* rep = app.add_subcommand("replay", "Rebuild the price series from a session log");
  rep->add_option("log,--log", o.log, "Session log")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  fs::create_directories(o.out_dir);
  if (simulate->parsed()) return cmd_simulate(o, out);
  if (analyze->parsed()) return cmd_analyze(o, out);
  if (pred->parsed()) return cmd_predict(o, out);
  if (boot->parsed()) return cmd_bootstrap(o, out);
  if (serve->parsed()) return cmd_serve(o, out, err);
  return cmd_replay(o, out);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    std::vector<std::string> args(argv, argv + argc);
    if (args.empty()) args.emplace_back("mglab");
    return dispatch(expand_config(std::move(args)), out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidInput& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const LoadError& e) {
    err << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const ReplayError& e) {
    err << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace mglab::cli
