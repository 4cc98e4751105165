// tgpt: command line entry point (pretrain, finetune, forecast, evaluate, anomalies, serve).

#include "tgpt/tgpt.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace tgpt;
using tgpt::detail::format_double;
using tgpt::detail::quote_csv_field;

enum ExitCode { kOk = 0, kRuntime = 1, kUsage = 2, kData = 3 };

struct DataOptions {
    std::string path;
    std::string freq;
    std::string fill = "ffill";
};

void add_data_options(CLI::App* cmd, DataOptions& d, bool require_freq) {
    cmd->add_option("--data", d.path, "Long-format CSV (unique_id,ds,y[,exogenous...])")->required();
    auto* f = cmd->add_option("--freq", d.freq, "hourly|daily|weekly|monthly (inferred from ds when omitted)");
    if (require_freq) f->required();
    cmd->add_option("--fill", d.fill, "Gap policy: ffill|zero|error")->capture_default_str();
}

Dataset load_dataset(const DataOptions& d) {
    const FillPolicy policy = parse_fill_policy(d.fill);
    std::ifstream in(d.path, std::ios::binary);
    if (!in) throw DataError("cannot open data file '" + d.path + "'");
    Frequency freq = Frequency::monthly();
    if (d.freq.empty()) {
        freq = infer_frequency(in);
        in.clear();
        in.seekg(0);
    } else {
        freq = Frequency::parse(d.freq);
    }
    return ingest_long_csv(in, freq, policy);
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    return out;
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

/// --seed wins, then TGPT_SEED.
std::optional<std::uint64_t> resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return flag;
    if (const char* env = std::getenv("TGPT_SEED"); env && *env) {
        const auto v = tgpt::detail::parse_int(env);
        if (!v || *v < 0) throw ConfigError(std::string("TGPT_SEED must be a non-negative integer, got '") + env + "'");
        return static_cast<std::uint64_t>(*v);
    }
    return std::nullopt;
}

struct TrainOptions {
    std::string train_config;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr0;
    std::string out;
};

void add_train_options(CLI::App* cmd, TrainOptions& t) {
    cmd->add_option("--train-config", t.train_config, "Training config JSON");
    cmd->add_option("--steps", t.steps, "Override the number of optimizer steps");
    cmd->add_option("--batch-size", t.batch_size, "Override the batch size");
    cmd->add_option("--lr0", t.lr0, "Override the initial learning rate");
    cmd->add_option("--out", t.out, "Output checkpoint path (loss trace goes to <out>.loss.csv)")->required();
}

training::TrainConfig resolve_train_config(const TrainOptions& t, const std::optional<std::uint64_t>& seed) {
    training::TrainConfig cfg;
    if (!t.train_config.empty()) cfg = training::train_config_from_json(read_json_file(t.train_config));
    if (t.steps) cfg.steps = *t.steps;
    if (t.batch_size) cfg.batch_size = *t.batch_size;
    if (t.lr0) cfg.lr0 = *t.lr0;
    if (const auto s = resolve_seed(seed)) cfg.seed = *s;
    cfg.validate();
    return cfg;
}

void write_training_outputs(const training::TrainResult& r, const model::ModelConfig& config, const std::string& out) {
    checkpoint::save(r.weights, config, out);
    auto trace = open_output(out + ".loss.csv");
    trace << "step,loss,lr\n";
    for (std::size_t k = 0; k < r.trace.size(); ++k)
        trace << k << ',' << format_double(r.trace.loss[k]) << ',' << format_double(r.trace.learning_rate[k]) << '\n';
    std::cout << "wrote " << out << " (" << r.weights.parameter_count() << " parameters, " << r.trace.size() << " steps";
    if (r.trace.size()) std::cout << ", final loss " << format_double(r.trace.loss.back());
    std::cout << ")\n";
}

/// Forecaster named on the command line; "tgpt" needs a loaded checkpoint.
Forecaster make_forecaster(const std::string& name, const std::optional<checkpoint::LoadedModel>& model, const Frequency& freq) {
    if (name == "tgpt") {
        if (!model) throw ConfigError("forecaster tgpt requires --model");
        return model::as_forecaster(model->weights, model->config);
    }
    return baselines::make_baseline(name, freq.season_length());
}

int run_pretrain(const DataOptions& data, const std::string& model_config, const TrainOptions& topts,
                 const std::optional<std::uint64_t>& seed) {
    const auto cfg = resolve_train_config(topts, seed);
    const Dataset ds = load_dataset(data).with_role(DatasetRole::Source);
    auto mcfg = model::ModelConfig::defaults_for(ds.freq());
    mcfg.n_exo_channels = ds.empty() ? 0 : ds[0].exogenous().size();
    if (!model_config.empty()) mcfg = model::model_config_from_json(read_json_file(model_config), mcfg);
    write_training_outputs(training::pretrain(ds, mcfg, cfg), mcfg, topts.out);
    return kOk;
}

int run_finetune(const std::string& model_path, const DataOptions& data, const TrainOptions& topts,
                 const std::optional<std::uint64_t>& seed) {
    const auto cfg = resolve_train_config(topts, seed);
    const auto loaded = checkpoint::load(model_path);
    const Dataset ds = load_dataset(data);
    write_training_outputs(training::finetune(loaded.weights, loaded.config, ds, cfg), loaded.config, topts.out);
    return kOk;
}

int run_forecast(const std::string& model_path, const DataOptions& data, std::optional<std::size_t> horizon,
                 const std::vector<double>& levels, std::size_t calib_windows, const std::string& out_path) {
    const auto loaded = checkpoint::load(model_path);
    const Dataset ds = load_dataset(data);
    const std::size_t h = horizon.value_or(loaded.config.max_horizon);
    if (h == 0) throw ConfigError("--h must be positive");
    if (h > loaded.config.max_horizon)
        throw ConfigError("--h " + std::to_string(h) + " exceeds the model maximum horizon " +
                          std::to_string(loaded.config.max_horizon));
    conformal::validate_levels(levels);
    const auto forecaster = model::as_forecaster(loaded.weights, loaded.config);
    const auto points = model::predict_many(loaded.weights, loaded.config, ds.series(), h);

    auto out = open_output(out_path);
    out << "unique_id,ds,yhat";
    for (double l : levels) out << ",lo_" << format_double(l) << ",hi_" << format_double(l);
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds[i];
        std::optional<conformal::IntervalForecast> iv;
        if (!levels.empty()) {
            const std::size_t feasible = s.size() > h ? (s.size() - 1) / h : 0;
            const std::size_t k = std::min(calib_windows, feasible);
            if (k == 0) {
                std::cerr << "warning: series '" << s.id() << "': too short to calibrate intervals at horizon " << h
                          << "; point forecast only\n";
            } else {
                iv = conformal::interval(points[i], conformal::calibrate(forecaster, s, h, k), levels);
            }
        }
        for (std::size_t j = 0; j < h; ++j) {
            out << quote_csv_field(s.id()) << ',' << s.timestamp_at(static_cast<std::int64_t>(s.size() + j)) << ','
                << format_double(points[i].values[j]);
            for (std::size_t l = 0; l < levels.size(); ++l) {
                if (iv) {
                    out << ',' << format_double(iv->lo[l][j]) << ',' << format_double(iv->hi[l][j]);
                } else {
                    out << ",,";
                }
            }
            out << '\n';
        }
    }
    return kOk;
}

int run_evaluate(const DataOptions& data, const std::vector<std::string>& models, const std::string& model_path,
                 std::optional<std::size_t> horizon, std::size_t timing_runs, const std::string& format,
                 const std::string& out_path) {
    const auto fmt = eval::parse_report_format(format);
    static const std::set<std::string> known{"zero", "histavg", "snaive", "theta", "croston", "tgpt"};
    for (const auto& m : models)
        if (!known.count(m)) throw ConfigError("unknown model '" + m + "' (expected zero, histavg, snaive, theta, croston, tgpt)");
    const bool wants_tgpt = std::find(models.begin(), models.end(), "tgpt") != models.end();
    if (wants_tgpt && model_path.empty()) throw ConfigError("model tgpt requires --model");
    std::optional<checkpoint::LoadedModel> loaded;
    if (wants_tgpt) loaded = checkpoint::load(model_path);
    const Dataset ds = load_dataset(data);
    std::vector<eval::BenchmarkModel> entries;
    for (const auto& m : models)
        entries.push_back(m == "tgpt" ? eval::tgpt_model(loaded->weights, loaded->config)
                                      : eval::baseline_model(m, ds.freq().season_length()));
    eval::BenchmarkOptions opts;
    opts.horizon = horizon;
    opts.timing_runs = timing_runs;
    const auto report = eval::run_benchmark(ds, entries, opts);
    for (const auto& id : report.excluded) std::cerr << "warning: series '" << id << "' excluded: too short for evaluation\n";
    const std::string text = eval::render_report(report, fmt);
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
    } else {
        auto out = open_output(out_path);
        out << text;
    }
    return kOk;
}

int run_anomalies(const std::string& model_path, const std::string& forecaster_name, const DataOptions& data,
                  std::size_t horizon, double level, std::optional<std::size_t> windows, const std::string& out_path) {
    std::optional<checkpoint::LoadedModel> loaded;
    if (!model_path.empty()) loaded = checkpoint::load(model_path);
    const Dataset ds = load_dataset(data);
    const auto forecaster = make_forecaster(forecaster_name, loaded, ds.freq());
    auto out = open_output(out_path);
    out << "unique_id,ds,y,yhat,lo,hi\n";
    std::size_t flagged = 0;
    for (const auto& s : ds.series()) {
        const std::size_t k = windows.value_or(std::max<std::size_t>(2, conformal::default_window_count(s.size(), horizon)));
        if (s.size() <= k * horizon) {
            std::cerr << "warning: series '" << s.id() << "': too short for " << k << " windows of " << horizon << " steps; skipped\n";
            continue;
        }
        const auto r = conformal::detect_anomalies(forecaster, s, horizon, level, k);
        for (std::size_t j = 0; j < r.flags.size(); ++j) {
            if (!r.flags[j]) continue;
            ++flagged;
            out << quote_csv_field(s.id()) << ',' << s.timestamp_at(static_cast<std::int64_t>(r.first_index + j)) << ','
                << format_double(r.actual[j]) << ',' << format_double(r.yhat[j]) << ',' << format_double(r.lo[j]) << ','
                << format_double(r.hi[j]) << '\n';
        }
    }
    std::cout << flagged << " anomalies flagged\n";
    return kOk;
}

std::atomic<service::HttpServer*> g_server{nullptr};

extern "C" void handle_stop_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

int run_serve(std::string model_path, std::string bind, std::string token) {
    if (model_path.empty())
        if (const char* env = std::getenv("TGPT_MODEL_PATH")) model_path = env;
    if (bind.empty()) {
        const char* env = std::getenv("TGPT_BIND");
        bind = env && *env ? env : "127.0.0.1:8080";
    }
    if (token.empty())
        if (const char* env = std::getenv("TGPT_TOKEN")) token = env;
    if (token.empty()) std::cerr << "warning: no token configured; every /v1 request will be rejected\n";
    std::optional<checkpoint::LoadedModel> loaded;
    try {
        if (model_path.empty()) throw DataError("no checkpoint given (--model or TGPT_MODEL_PATH)");
        loaded = checkpoint::load(model_path);
    } catch (const DataError& e) {
        std::cerr << "warning: model not loaded: " << e.what() << "; serving 503\n";
    }
    const service::ForecastService svc(std::move(loaded), service::ServiceConfig{token});
    service::HttpServer server(svc);
    const auto [host, port] = service::parse_bind(bind);
    const int bound = server.bind(host, port);
    std::cout << "listening on http://" << host << ':' << bound << std::endl;
    g_server = &server;
    std::signal(SIGINT, handle_stop_signal);
    std::signal(SIGTERM, handle_stop_signal);
    server.run();
    g_server = nullptr;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tgpt: pretrained transformer forecasting with classical baselines", "tgpt"};
    app.set_help_flag("--help", "Print this help message and exit");
    app.require_subcommand(1);
    app.fallthrough();
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "Random seed (default from TGPT_SEED, then the config file)");

    DataOptions data;
    std::string model_path, model_config, out_path, format = "text", forecaster_name = "tgpt", bind, token;
    TrainOptions topts;
    std::optional<std::size_t> horizon, windows;
    std::vector<double> levels;
    std::size_t calib_windows = conformal::kDefaultWindows, timing_runs = 3, anomaly_h = 1;
    double level = 99.0;
    std::vector<std::string> models;

    auto* pretrain = app.add_subcommand("pretrain", "Train a model from scratch on a source dataset");
    add_data_options(pretrain, data, false);
    pretrain->add_option("--model-config", model_config, "Model config JSON (defaults follow the data frequency)");
    add_train_options(pretrain, topts);

    auto* finetune = app.add_subcommand("finetune", "Continue training a checkpoint on a target dataset");
    finetune->add_option("--model", model_path, "Input checkpoint")->required();
    add_data_options(finetune, data, false);
    add_train_options(finetune, topts);

    auto* forecast = app.add_subcommand("forecast", "Forecast every series past its last observation");
    forecast->add_option("--model", model_path, "Checkpoint")->required();
    add_data_options(forecast, data, false);
    forecast->add_option("--h", horizon, "Horizon (default: the model maximum)");
    forecast->add_option("--level", levels, "Interval coverage levels in percent, e.g. --level 80 90");
    forecast->add_option("--calib-windows", calib_windows, "Rolling calibration windows per series")->capture_default_str();
    forecast->add_option("--out", out_path, "Output CSV")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Last-window benchmark against seasonal naive");
    add_data_options(evaluate, data, true);
    evaluate->add_option("--models", models, "Models: zero,histavg,snaive,theta,croston,tgpt")->required()->delimiter(',');
    evaluate->add_option("--model", model_path, "Checkpoint for the tgpt model");
    evaluate->add_option("--h", horizon, "Horizon (default: the frequency's)");
    evaluate->add_option("--timing-runs", timing_runs, "Runs per model; timings are the median")->capture_default_str();
    evaluate->add_option("--format", format, "text|csv|json")->capture_default_str();
    evaluate->add_option("--out", out_path, "Report path (stdout when omitted)");

    auto* anomalies = app.add_subcommand("anomalies", "Flag observations outside rolling conformal intervals");
    anomalies->add_option("--model", model_path, "Checkpoint (needed for --forecaster tgpt)");
    anomalies->add_option("--forecaster", forecaster_name, "tgpt|zero|histavg|snaive|theta|croston")->capture_default_str();
    add_data_options(anomalies, data, false);
    anomalies->add_option("--h", anomaly_h, "Window length")->capture_default_str();
    anomalies->add_option("--level", level, "Interval level in percent")->capture_default_str();
    anomalies->add_option("--windows", windows, "Scored windows per series (default: up to 10)");
    anomalies->add_option("--out", out_path, "Output CSV of flagged rows")->required();

    auto* serve = app.add_subcommand("serve", "Run the HTTP forecast service");
    serve->add_option("--model", model_path, "Checkpoint (default TGPT_MODEL_PATH)");
    serve->add_option("--bind", bind, "host:port (default TGPT_BIND, then 127.0.0.1:8080)");
    std::optional<int> port;
    serve->add_option("--port", port, "Port; overrides the port of --bind (0 picks a free port)");
    serve->add_option("--token", token, "Bearer token (default TGPT_TOKEN)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << '\n';
        return kUsage;
    }

    try {
        if (*pretrain) return run_pretrain(data, model_config, topts, seed);
        if (*finetune) return run_finetune(model_path, data, topts, seed);
        if (*forecast) return run_forecast(model_path, data, horizon, levels, calib_windows, out_path);
        if (*evaluate) return run_evaluate(data, models, model_path, horizon, timing_runs, format, out_path);
        if (*anomalies) return run_anomalies(model_path, forecaster_name, data, anomaly_h, level, windows, out_path);
        if (*serve) {
            if (port) {
                const auto host = bind.empty() ? std::string("127.0.0.1") : service::parse_bind(bind).first;
                bind = host + ":" + std::to_string(*port);
            }
            return run_serve(model_path, bind, token);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << '\n';
        return kUsage;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << one_line(e.what()) << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << one_line(e.what()) << '\n';
        return kRuntime;
    }
    return kUsage;
}
