#include "tgpt/service.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <future>
#include <random>
#include <thread>

using namespace tgpt;
using namespace tgpt::service;
using nlohmann::json;

namespace {

model::ModelConfig service_config() {
    model::ModelConfig c;
    c.input_length = 16;
    c.max_horizon = 8;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_encoder_layers = 1;
    c.n_decoder_layers = 1;
    c.ff_dim = 16;
    c.dropout = 0.0;
    return c;
}

checkpoint::LoadedModel loaded_model() {
    const auto c = service_config();
    return checkpoint::decode(checkpoint::encode(model::init_weights(c, 12), c));
}

json series_json(const std::string& id, std::size_t n, double phase = 0.0) {
    std::vector<double> y(n);
    for (std::size_t t = 0; t < n; ++t) y[t] = 50.0 + 10.0 * std::sin(0.5 * double(t) + phase) + 0.1 * double(t);
    return json{{"id", id}, {"start", "2021-03"}, {"y", y}};
}

json forecast_request(std::size_t horizon = 7) {
    return json{{"freq", "monthly"}, {"horizon", horizon}, {"series", {series_json("a", 40), series_json("b", 30, 1.0)}}};
}

const std::string kAuth = "Bearer s3cret";

struct Harness {
    ForecastService service{loaded_model(), ServiceConfig{"s3cret"}};

    Response post(const std::string& path, const json& body, const std::string& auth = kAuth) const {
        return service.handle("POST", path, auth, body.dump());
    }
};

json strip_timing(std::string body) {
    auto j = json::parse(body);
    j.erase("timing_ms");
    return j;
}

}  // namespace

TEST_CASE("Authentication and availability", "[service][auth]") {
    Harness h;
    const auto body = forecast_request().dump();
    SECTION("missing or wrong token") {
        for (const std::string auth : {"", "Bearer", "Bearer wrong", "s3cret", "bearer s3cret", "Bearer s3cret "}) {
            const auto r = h.service.handle("POST", "/v1/forecast", auth, body);
            CHECK(r.status == 401);
            CHECK(r.body == R"({"error":"unauthorized"})");
        }
        CHECK(h.service.handle("POST", "/v1/anomalies", "", body).status == 401);
    }
    SECTION("no model loaded") {
        ForecastService empty(std::nullopt, ServiceConfig{"s3cret"});
        CHECK(empty.handle("POST", "/v1/forecast", kAuth, body).status == 503);
        CHECK(empty.handle("POST", "/v1/forecast", "Bearer nope", body).status == 401);
        CHECK(empty.handle("POST", "/v1/forecast", kAuth, "{not json").status == 503);
        const auto health = empty.handle("GET", "/health", "", "");
        CHECK(health.status == 503);
        CHECK(json::parse(health.body)["model_version"].is_null());
    }
    SECTION("empty configured token rejects everything") {
        ForecastService open(loaded_model(), ServiceConfig{""});
        CHECK(open.handle("POST", "/v1/forecast", "Bearer ", body).status == 401);
        CHECK(open.handle("POST", "/v1/forecast", "", body).status == 401);
    }
    SECTION("health") {
        const auto r = h.service.handle("GET", "/health", "", "");
        CHECK(r.status == 200);
        const auto j = json::parse(r.body);
        CHECK(j["status"] == "ok");
        CHECK(j["model_version"] == "tgpt-ckpt-v1");
        CHECK(j["uptime_s"].get<double>() >= 0.0);
    }
    SECTION("routing") {
        CHECK(h.service.handle("GET", "/v2/forecast", kAuth, body).status == 404);
        CHECK(h.service.handle("GET", "/v1/forecast", kAuth, body).status == 405);
        CHECK(h.service.handle("POST", "/health", "", "").status == 405);
    }
}

TEST_CASE("POST /v1/forecast", "[service][forecast]") {
    Harness h;
    SECTION("point forecasts") {
        const auto r = h.post("/v1/forecast", forecast_request(7));
        REQUIRE(r.status == 200);
        const auto j = json::parse(r.body);
        CHECK(j["model_version"] == "tgpt-ckpt-v1");
        CHECK(j["timing_ms"].is_number());
        REQUIRE(j["forecasts"].size() == 2);
        const auto& a = j["forecasts"][0];
        CHECK(a["id"] == "a");
        CHECK(a["yhat"].size() == 7);
        CHECK(a["ds"].size() == 7);
        CHECK(a["ds"][0] == "2024-07");  // 40 months after 2021-03
        CHECK_FALSE(a.contains("lo"));
        CHECK_FALSE(a.contains("hi"));
        CHECK(j["forecasts"][1]["ds"][0] == "2023-09");
    }
    SECTION("matches the library forecast") {
        const auto req = forecast_request(5);
        const auto j = json::parse(h.post("/v1/forecast", req).body);
        const auto m = loaded_model();
        const auto y = req["series"][0]["y"].get<std::vector<double>>();
        const auto f = model::predict_series(m.weights, m.config, TimeSeries("a", 0, Frequency::monthly(), y), 5);
        CHECK(j["forecasts"][0]["yhat"].get<std::vector<double>>() == f.values);
    }
    SECTION("deterministic") {
        CHECK(strip_timing(h.post("/v1/forecast", forecast_request()).body) == strip_timing(h.post("/v1/forecast", forecast_request()).body));
    }
    SECTION("intervals") {
        auto req = forecast_request(4);
        req["levels"] = {80, 95.5};
        const auto r = h.post("/v1/forecast", req);
        REQUIRE(r.status == 200);
        const auto f = json::parse(r.body)["forecasts"][0];
        const auto yhat = f["yhat"].get<std::vector<double>>();
        const auto lo80 = f["lo"]["80"].get<std::vector<double>>(), hi80 = f["hi"]["80"].get<std::vector<double>>();
        const auto lo95 = f["lo"]["95.5"].get<std::vector<double>>(), hi95 = f["hi"]["95.5"].get<std::vector<double>>();
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(lo95[j] <= lo80[j]);
            CHECK(lo80[j] <= yhat[j]);
            CHECK(yhat[j] <= hi80[j]);
            CHECK(hi80[j] <= hi95[j]);
        }
    }
    SECTION("schema violations name the field") {
        auto check = [&](json body, int status, const std::string& fragment) {
            const auto r = h.post("/v1/forecast", body);
            CAPTURE(body.dump(), r.body);
            CHECK(r.status == status);
            CHECK(json::parse(r.body)["error"].get<std::string>().find(fragment) != std::string::npos);
        };
        auto req = forecast_request();
        req.erase("horizon");
        check(req, 400, "horizon");
        req = forecast_request();
        req["horizon"] = "7";
        check(req, 400, "horizon");
        req = forecast_request();
        req["horizon"] = 0;
        check(req, 400, "horizon");
        req = forecast_request();
        req["freq"] = "yearly";
        check(req, 400, "freq");
        req = forecast_request();
        req["colour"] = 1;
        check(req, 400, "colour");
        req = forecast_request();
        req["series"][1]["y"][3] = "x";
        check(req, 400, "series[1].y[3]");
        req = forecast_request();
        req["series"][0]["start"] = "2021-03-01";
        check(req, 400, "series[0].start");
        req = forecast_request();
        req["series"][0].erase("id");
        check(req, 400, "series[0].id");
        req = forecast_request();
        req["levels"] = {80, 100};
        check(req, 400, "levels[1]");
        req = forecast_request();
        req["series"][0]["extra"] = true;
        check(req, 400, "series[0].extra");
        req = forecast_request();
        req["series"] = json::object();
        check(req, 400, "series");
        const auto r = h.service.handle("POST", "/v1/forecast", kAuth, "[1,2]");
        CHECK(r.status == 400);
    }
    SECTION("semantic violations") {
        auto check = [&](json body, const std::string& fragment) {
            const auto r = h.post("/v1/forecast", body);
            CAPTURE(body.dump(), r.body);
            CHECK(r.status == 422);
            CHECK(json::parse(r.body)["error"].get<std::string>().find(fragment) != std::string::npos);
        };
        check(forecast_request(9), "horizon");
        auto req = forecast_request();
        req["series"][1]["y"] = json::array();
        check(req, "series[1].y");
        req = forecast_request();
        req["series"][1]["id"] = "a";
        check(req, "duplicate");
        req = forecast_request();
        req["series"] = json::array();
        check(req, "series");
        req = forecast_request(4);
        req["levels"] = {80};
        req["series"][1]["y"] = {1, 2, 3, 4};
        check(req, "series[1].y");
        req = forecast_request();
        req["series"][0]["x"] = {{"price", std::vector<double>(47, 1.0)}};
        check(req, "series[0].x");
    }
    SECTION("request caps") {
        ForecastService capped(loaded_model(), ServiceConfig{"s3cret", 1, 35});
        CHECK(capped.handle("POST", "/v1/forecast", kAuth, forecast_request().dump()).status == 422);
        auto one = forecast_request();
        one["series"].erase(1);
        CHECK(capped.handle("POST", "/v1/forecast", kAuth, one.dump()).status == 422);
        one["series"][0] = series_json("a", 35);
        CHECK(capped.handle("POST", "/v1/forecast", kAuth, one.dump()).status == 200);
    }
}

TEST_CASE("POST /v1/anomalies", "[service][anomalies]") {
    Harness h;
    json req{{"freq", "monthly"}, {"level", 99}, {"series", {series_json("a", 40)}}};
    const auto r = h.post("/v1/anomalies", req);
    REQUIRE(r.status == 200);
    const auto a = json::parse(r.body)["anomalies"][0];
    CHECK(a["id"] == "a");
    CHECK(a["anomaly"].size() == 10);
    CHECK(a["ds"][0] == "2023-09");  // last 10 of 40 months from 2021-03
    CHECK(a["y"].size() == 10);
    req["n_windows"] = 1;
    CHECK(h.post("/v1/anomalies", req).status == 422);
    req["n_windows"] = 3;
    req["horizon"] = 2;
    const auto r2 = h.post("/v1/anomalies", req);
    REQUIRE(r2.status == 200);
    CHECK(json::parse(r2.body)["anomalies"][0]["anomaly"].size() == 6);
    req["level"] = 100;
    CHECK(h.post("/v1/anomalies", req).status == 400);
}

TEST_CASE("Random bodies never crash the handler", "[service][fuzz]") {
    Harness h;
    std::mt19937_64 rng(2718);
    std::uniform_int_distribution<int> len(0, 200), byte(0, 255), pick(0, 3);
    const std::string seed_body = forecast_request().dump();
    std::size_t bad_request = 0, unauthorized = 0;
    for (int i = 0; i < 10000; ++i) {
        std::string body;
        if (pick(rng) == 0) {
            // truncated or corrupted valid request
            body = seed_body.substr(0, std::uniform_int_distribution<std::size_t>(0, seed_body.size() - 1)(rng));
            if (!body.empty()) body[std::uniform_int_distribution<std::size_t>(0, body.size() - 1)(rng)] = char(byte(rng));
        } else {
            const int n = len(rng);
            for (int k = 0; k < n; ++k) body.push_back(char(byte(rng)));
        }
        const bool authorized = i % 2 == 0;
        const auto r = h.service.handle("POST", "/v1/forecast", authorized ? kAuth : "", body);
        CAPTURE(i);
        if (authorized) {
            CHECK(r.status == 400);
            bad_request += r.status == 400;
        } else {
            CHECK(r.status == 401);
            unauthorized += r.status == 401;
        }
        CHECK(json::accept(r.body));
    }
    CHECK(bad_request + unauthorized == 10000);
}

TEST_CASE("HTTP transport", "[service][http]") {
    const auto path = (std::filesystem::temp_directory_path() / "tgpt_service_test.ckpt").string();
    const auto c = service_config();
    checkpoint::save(model::init_weights(c, 12), c, path);
    const auto before = checkpoint::read_file(path);

    ForecastService service(checkpoint::load(path), ServiceConfig{"s3cret"});
    HttpServer server(service);
    const int port = server.bind("127.0.0.1", 0);
    std::thread loop([&] { server.run(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    const httplib::Headers auth{{"Authorization", kAuth}};
    SECTION("health and auth over the wire") {
        const auto health = client.Get("/health");
        REQUIRE(health);
        CHECK(health->status == 200);
        const auto denied = client.Post("/v1/forecast", forecast_request().dump(), "application/json");
        REQUIRE(denied);
        CHECK(denied->status == 401);
        CHECK(denied->body == R"({"error":"unauthorized"})");
    }
    SECTION("concurrent identical requests") {
        const std::string body = forecast_request().dump();
        std::vector<std::future<std::pair<int, std::string>>> futures;
        for (int i = 0; i < 8; ++i)
            futures.push_back(std::async(std::launch::async, [&] {
                httplib::Client cl("127.0.0.1", port);
                const auto r = cl.Post("/v1/forecast", auth, body, "application/json");
                return r ? std::pair{r->status, r->body} : std::pair{-1, std::string()};
            }));
        std::optional<json> first;
        for (auto& f : futures) {
            const auto [status, text] = f.get();
            REQUIRE(status == 200);
            const auto j = strip_timing(text);
            if (!first) first = j;
            CHECK(j == *first);
        }
    }
    server.stop();
    loop.join();
    CHECK(checkpoint::read_file(path) == before);
    std::filesystem::remove(path);
}

TEST_CASE("parse_bind", "[service]") {
    CHECK(parse_bind("0.0.0.0:8080") == std::pair<std::string, int>{"0.0.0.0", 8080});
    CHECK(parse_bind("localhost") == std::pair<std::string, int>{"localhost", 0});
    CHECK_THROWS_AS(parse_bind("host:99999"), ConfigError);
    CHECK_THROWS_AS(parse_bind("host:abc"), ConfigError);
}
