#pragma once

// Experiment configuration read from JSON. Every field is optional; missing
// fields take the defaults below. Errors name the JSON path and, when the
// source text is available, the line the offending key sits on.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "metagate/baselines/baselines.hpp"
#include "metagate/channels/generators.hpp"
#include "metagate/core/errors.hpp"
#include "metagate/core/io.hpp"
#include "metagate/models/cnn.hpp"
#include "metagate/models/gnn.hpp"
#include "metagate/training/meta.hpp"

namespace metagate::experiment {

using nlohmann::json;

enum class Scenario { gnn_beamforming, cnn_power };

/// One entry of a channel list; `family` plus optional overrides of the family preset.
struct ChannelSpec {
    ChannelSpec() = default;
    ChannelSpec(std::string f, std::string i = {}) : family(std::move(f)), id(std::move(i)) {}  // NOLINT

    std::string family = "channel1";
    std::string id;
    std::optional<double> k_factor_db;
    std::optional<double> shadow_std_db;
    std::optional<double> m_lo, m_hi, omega;
};

struct DataConfig {
    std::size_t num_tasks = 600;
    std::size_t support_size = 2;
    std::size_t query_size = 15;
    std::vector<ChannelSpec> train_channels{{"channel1"}, {"channel2"}, {"channel3"}};
    std::vector<ChannelSpec> test_channels{{"channel1"}, {"channel2"}, {"channel3"}};
    std::size_t test_samples_per_channel = 500;
    double support_frac = 0.2;
};

struct BaselineConfig {
    std::vector<std::string> kinds{"joint", "mismatch", "tl", "ewc", "wogate"};
    std::string mismatch_channel = "channel3";
    std::string tl_pretrain_channel = "channel1";
    double ewc_weight = 1e4;
    std::size_t fisher_samples = 0;
    double lr = 1e-3;
};

struct SweepConfig {
    std::vector<std::size_t> jq{0, 1, 2, 5, 10, 20, 50, 100};
    std::vector<double> pmax{0.5, 1.0, 1.5, 2.0};
    std::vector<std::size_t> k{4, 6, 8, 10};
    std::vector<double> wp{1e2, 1e4, 1e6};
};

struct NakagamiConfig {
    std::size_t seen = 4;    // training m values drawn from [m_lo, m_hi]
    std::size_t unseen = 2;  // fresh test values
    std::size_t seen_tested = 2;
    double m_lo = 0.5;
    double m_hi = 2.0;
    double omega = 1.0;
};

struct ExperimentConfig {
    Scenario scenario = Scenario::gnn_beamforming;
    // system
    std::size_t K = 10;
    std::size_t Nt = 8;
    double area = 1000.0;
    double d_min = 2.0;
    double d_max = 65.0;
    double noise_power = 0.1;
    double p_max = 1.0;
    double weight = 1.0;
    channels::PathLoss path_loss = channels::PathLoss::none;
    // architecture
    models::GnnArchitecture gnn;
    models::CnnArchitecture cnn;
    // procedures
    training::TrainConfig train;
    training::TestConfig test;
    DataConfig data;
    BaselineConfig baselines;
    SweepConfig sweeps;
    NakagamiConfig nakagami;
    std::size_t wmmse_iters = 100;
    std::uint64_t seed = 0;
    std::string output_dir;

    [[nodiscard]] channels::ChannelModelConfig channel(const ChannelSpec& s) const {
        auto c = channels::preset(channels::family_from_string(s.family), K, Nt);
        c.id = s.id.empty() ? s.family : s.id;
        c.area = area;
        if (c.family != channels::Family::geometric) {
            c.d_min = d_min;
            c.d_max = d_max;
        }
        c.noise_power = noise_power;
        c.weight = weight;
        c.path_loss = path_loss;
        if (s.k_factor_db) c.k_factor = channels::db_to_linear(*s.k_factor_db);
        if (s.shadow_std_db) c.shadow_std_db = *s.shadow_std_db;
        if (s.m_lo) c.nakagami_m_lo = *s.m_lo;
        if (s.m_hi) c.nakagami_m_hi = *s.m_hi;
        if (s.omega) c.nakagami_omega = *s.omega;
        c.validate();
        return c;
    }
    [[nodiscard]] std::vector<channels::ChannelModelConfig> channels_of(const std::vector<ChannelSpec>& v) const {
        std::vector<channels::ChannelModelConfig> out;
        for (const auto& s : v) out.push_back(channel(s));
        return out;
    }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

inline std::string opt_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
inline OptimizerKind opt_from(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

inline json channel_json(const ChannelSpec& s) {
    json j{{"family", s.family}};
    if (!s.id.empty()) j["id"] = s.id;
    if (s.k_factor_db) j["k_factor_db"] = *s.k_factor_db;
    if (s.shadow_std_db) j["shadow_std_db"] = *s.shadow_std_db;
    if (s.m_lo) j["m_lo"] = *s.m_lo;
    if (s.m_hi) j["m_hi"] = *s.m_hi;
    if (s.omega) j["omega"] = *s.omega;
    return j;
}

/// Tracks the JSON path for error messages.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    template <class T>
    void get(const char* key, T& out) const {
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type");
        }
    }
    [[nodiscard]] std::optional<Reader> child(const char* key) const {
        if (!j_.contains(key)) return std::nullopt;
        if (!j_.at(key).is_object()) throw ConfigError(path_ + "." + key + ": expected an object");
        return Reader(j_.at(key), path_ + "." + key);
    }
    void reject_unknown(std::initializer_list<const char*> known) const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool ok = false;
            for (const char* k : known) ok = ok || it.key() == k;
            if (!ok) throw ConfigError(path_ + "." + it.key() + ": unknown key");
        }
    }
    [[nodiscard]] const json& raw() const { return j_; }
    [[nodiscard]] const std::string& path() const { return path_; }

private:
    const json& j_;
    std::string path_;
};

inline std::vector<ChannelSpec> read_channels(const Reader& r, const char* key, std::vector<ChannelSpec> def) {
    if (!r.raw().contains(key)) return def;
    const auto& arr = r.raw().at(key);
    const std::string p = r.path() + "." + key;
    if (!arr.is_array() || arr.empty()) throw ConfigError(p + ": expected a non-empty array");
    std::vector<ChannelSpec> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        ChannelSpec s;
        if (e.is_string()) {
            s.family = e.get<std::string>();
        } else if (e.is_object()) {
            Reader c(e, p + "[" + std::to_string(i) + "]");
            c.reject_unknown({"family", "id", "k_factor_db", "shadow_std_db", "m_lo", "m_hi", "omega"});
            c.get("family", s.family);
            c.get("id", s.id);
            auto opt = [&](const char* k, std::optional<double>& o) {
                if (e.contains(k)) {
                    double v = 0;
                    c.get(k, v);
                    o = v;
                }
            };
            opt("k_factor_db", s.k_factor_db);
            opt("shadow_std_db", s.shadow_std_db);
            opt("m_lo", s.m_lo);
            opt("m_hi", s.m_hi);
            opt("omega", s.omega);
        } else {
            throw ConfigError(p + "[" + std::to_string(i) + "]: expected a family name or object");
        }
        try {
            channels::family_from_string(s.family);
        } catch (const ConfigError& err) {
            throw ConfigError(p + "[" + std::to_string(i) + "]: " + err.what());
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
    json ch_train = json::array(), ch_test = json::array();
    for (const auto& s : c.data.train_channels) ch_train.push_back(detail::channel_json(s));
    for (const auto& s : c.data.test_channels) ch_test.push_back(detail::channel_json(s));
    return {
        {"scenario", c.scenario == Scenario::gnn_beamforming ? "gnn_beamforming" : "cnn_power"},
        {"system",
         {{"K", c.K},
          {"Nt", c.Nt},
          {"area", c.area},
          {"d_min", c.d_min},
          {"d_max", c.d_max},
          {"noise_power", c.noise_power},
          {"p_max", c.p_max},
          {"weight", c.weight},
          {"path_loss", c.path_loss == channels::PathLoss::none ? "none" : "log_distance"}}},
        {"gnn",
         {{"inner_layers", c.gnn.inner_layers},
          {"outer_layers", c.gnn.outer_layers},
          {"msg_hidden", c.gnn.msg_hidden},
          {"upd_hidden", c.gnn.upd_hidden}}},
        {"cnn",
         {{"inner_channels", c.cnn.inner_channels},
          {"outer_channels", c.cnn.outer_channels},
          {"kernel", c.cnn.kernel},
          {"stride", c.cnn.stride},
          {"padding", c.cnn.padding},
          {"pool", c.cnn.pool},
          {"pool_stride", c.cnn.pool_stride},
          {"phase_input", c.cnn.phase_input}}},
        {"train",
         {{"outer_lr", c.train.outer_lr},
          {"inner_lr", c.train.inner_lr},
          {"batch", c.train.batch},
          {"inner_steps", c.train.inner_steps},
          {"epochs", c.train.epochs},
          {"inner_optimizer", detail::opt_name(c.train.inner_opt)},
          {"meta_grad", c.train.mode == training::MetaGradMode::first_order ? "first_order" : "unrolled"},
          {"update_theta", c.train.update_theta},
          {"adam", {{"beta1", c.train.adam.beta1}, {"beta2", c.train.adam.beta2}, {"eps", c.train.adam.eps}}}}},
        {"test",
         {{"adapt_samples", c.test.adapt_samples},
          {"adapt_steps", c.test.adapt_steps},
          {"inner_lr", c.test.inner_lr},
          {"inner_optimizer", detail::opt_name(c.test.inner_opt)}}},
        {"data",
         {{"num_tasks", c.data.num_tasks},
          {"support_size", c.data.support_size},
          {"query_size", c.data.query_size},
          {"train_channels", ch_train},
          {"test_channels", ch_test},
          {"test_samples_per_channel", c.data.test_samples_per_channel},
          {"support_frac", c.data.support_frac}}},
        {"baselines",
         {{"kinds", c.baselines.kinds},
          {"mismatch_channel", c.baselines.mismatch_channel},
          {"tl_pretrain_channel", c.baselines.tl_pretrain_channel},
          {"ewc_weight", c.baselines.ewc_weight},
          {"fisher_samples", c.baselines.fisher_samples},
          {"lr", c.baselines.lr}}},
        {"sweeps", {{"jq", c.sweeps.jq}, {"pmax", c.sweeps.pmax}, {"k", c.sweeps.k}, {"wp", c.sweeps.wp}}},
        {"nakagami",
         {{"seen", c.nakagami.seen},
          {"unseen", c.nakagami.unseen},
          {"seen_tested", c.nakagami.seen_tested},
          {"m_lo", c.nakagami.m_lo},
          {"m_hi", c.nakagami.m_hi},
          {"omega", c.nakagami.omega}}},
        {"wmmse_iters", c.wmmse_iters},
        {"seed", c.seed},
    };
}

/// Validation beyond per-field types; throws ConfigError naming the JSON path.
inline void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); };
    if (c.K < 1) fail("$.system.K", "must be >= 1");
    if (c.Nt < 1) fail("$.system.Nt", "must be >= 1");
    if (!(c.p_max > 0.0)) fail("$.system.p_max", "must be positive");
    if (!(c.noise_power > 0.0)) fail("$.system.noise_power", "must be positive");
    if (c.scenario == Scenario::cnn_power && c.Nt != 1) fail("$.system.Nt", "cnn_power requires Nt = 1");
    if (c.data.num_tasks < 1) fail("$.data.num_tasks", "must be >= 1");
    if (c.data.support_size < 1 || c.data.query_size < 1) fail("$.data", "support and query sizes must be >= 1");
    if (c.test.adapt_samples < 1) fail("$.test.adapt_samples", "must be >= 1");
    if (!(c.test.inner_lr > 0.0)) fail("$.test.inner_lr", "must be positive");
    if (!(c.baselines.lr > 0.0)) fail("$.baselines.lr", "must be positive");
    if (c.wmmse_iters < 1) fail("$.wmmse_iters", "must be >= 1");
    try {
        c.train.validate();
    } catch (const ConfigError& e) {
        fail("$.train", e.what());
    }
    try {
        (void)c.channels_of(c.data.train_channels);
        (void)c.channels_of(c.data.test_channels);
    } catch (const ConfigError& e) {
        fail("$.data", e.what());
    }
    for (const auto& k : c.baselines.kinds) {
        try {
            baselines::kind_from_string(k);
        } catch (const ConfigError& e) {
            fail("$.baselines.kinds", e.what());
        }
    }
    if (c.scenario == Scenario::cnn_power) {
        auto a = c.cnn;
        a.K = c.K;
        try {
            a.validate();
        } catch (const ConfigError& e) {
            fail("$.cnn", e.what());
        }
    }
    const auto n_support = static_cast<double>(c.data.test_samples_per_channel) * c.data.support_frac;
    if (static_cast<double>(c.test.adapt_samples) > n_support + 0.5)
        fail("$.test.adapt_samples", "exceeds the test support set size");
}

inline ExperimentConfig from_json(const json& root) {
    using detail::Reader;
    if (!root.is_object()) throw ConfigError("$: expected a JSON object");
    ExperimentConfig c;
    Reader r(root, "$");
    r.reject_unknown({"scenario", "system", "gnn", "cnn", "train", "test", "data", "baselines", "sweeps", "nakagami",
                      "wmmse_iters", "seed", "output_dir", "description"});
    std::string scenario = "gnn_beamforming";
    r.get("scenario", scenario);
    if (scenario == "gnn_beamforming") c.scenario = Scenario::gnn_beamforming;
    else if (scenario == "cnn_power") {
        c.scenario = Scenario::cnn_power;
        c.K = 10;
        c.Nt = 1;
    } else throw ConfigError("$.scenario: expected gnn_beamforming or cnn_power");
    if (auto s = r.child("system")) {
        s->reject_unknown({"K", "Nt", "area", "d_min", "d_max", "noise_power", "p_max", "weight", "path_loss"});
        s->get("K", c.K);
        s->get("Nt", c.Nt);
        s->get("area", c.area);
        s->get("d_min", c.d_min);
        s->get("d_max", c.d_max);
        s->get("noise_power", c.noise_power);
        s->get("p_max", c.p_max);
        s->get("weight", c.weight);
        std::string pl = "none";
        s->get("path_loss", pl);
        if (pl == "none") c.path_loss = channels::PathLoss::none;
        else if (pl == "log_distance") c.path_loss = channels::PathLoss::log_distance;
        else throw ConfigError("$.system.path_loss: expected none or log_distance");
    }
    if (auto g = r.child("gnn")) {
        g->reject_unknown({"inner_layers", "outer_layers", "msg_hidden", "upd_hidden"});
        g->get("inner_layers", c.gnn.inner_layers);
        g->get("outer_layers", c.gnn.outer_layers);
        g->get("msg_hidden", c.gnn.msg_hidden);
        g->get("upd_hidden", c.gnn.upd_hidden);
    }
    c.gnn.Nt = c.Nt;
    if (auto g = r.child("cnn")) {
        g->reject_unknown({"inner_channels", "outer_channels", "kernel", "stride", "padding", "pool", "pool_stride",
                           "phase_input"});
        g->get("inner_channels", c.cnn.inner_channels);
        g->get("outer_channels", c.cnn.outer_channels);
        g->get("kernel", c.cnn.kernel);
        g->get("stride", c.cnn.stride);
        g->get("padding", c.cnn.padding);
        g->get("pool", c.cnn.pool);
        g->get("pool_stride", c.cnn.pool_stride);
        g->get("phase_input", c.cnn.phase_input);
    }
    c.cnn.K = c.K;
    if (auto t = r.child("train")) {
        t->reject_unknown({"outer_lr", "inner_lr", "batch", "inner_steps", "epochs", "inner_optimizer", "meta_grad",
                           "update_theta", "adam"});
        t->get("outer_lr", c.train.outer_lr);
        t->get("inner_lr", c.train.inner_lr);
        t->get("batch", c.train.batch);
        t->get("inner_steps", c.train.inner_steps);
        t->get("epochs", c.train.epochs);
        t->get("update_theta", c.train.update_theta);
        std::string s = "adam";
        t->get("inner_optimizer", s);
        try {
            c.train.inner_opt = detail::opt_from(s);
        } catch (const ConfigError& e) {
            throw ConfigError("$.train.inner_optimizer: " + std::string(e.what()));
        }
        std::string mode = "first_order";
        t->get("meta_grad", mode);
        if (mode == "first_order") c.train.mode = training::MetaGradMode::first_order;
        else if (mode == "unrolled") c.train.mode = training::MetaGradMode::unrolled;
        else throw ConfigError("$.train.meta_grad: expected first_order or unrolled");
        if (auto a = t->child("adam")) {
            a->reject_unknown({"beta1", "beta2", "eps"});
            a->get("beta1", c.train.adam.beta1);
            a->get("beta2", c.train.adam.beta2);
            a->get("eps", c.train.adam.eps);
        }
    }
    c.test.adam = c.train.adam;
    if (auto t = r.child("test")) {
        t->reject_unknown({"adapt_samples", "adapt_steps", "inner_lr", "inner_optimizer"});
        t->get("adapt_samples", c.test.adapt_samples);
        t->get("adapt_steps", c.test.adapt_steps);
        t->get("inner_lr", c.test.inner_lr);
        std::string s = "adam";
        t->get("inner_optimizer", s);
        try {
            c.test.inner_opt = detail::opt_from(s);
        } catch (const ConfigError& e) {
            throw ConfigError("$.test.inner_optimizer: " + std::string(e.what()));
        }
    }
    if (auto d = r.child("data")) {
        d->reject_unknown({"num_tasks", "support_size", "query_size", "train_channels", "test_channels",
                           "test_samples_per_channel", "support_frac"});
        d->get("num_tasks", c.data.num_tasks);
        d->get("support_size", c.data.support_size);
        d->get("query_size", c.data.query_size);
        d->get("test_samples_per_channel", c.data.test_samples_per_channel);
        d->get("support_frac", c.data.support_frac);
        c.data.train_channels = detail::read_channels(*d, "train_channels", c.data.train_channels);
        c.data.test_channels = detail::read_channels(*d, "test_channels", c.data.test_channels);
    }
    if (auto b = r.child("baselines")) {
        b->reject_unknown({"kinds", "mismatch_channel", "tl_pretrain_channel", "ewc_weight", "fisher_samples", "lr"});
        b->get("kinds", c.baselines.kinds);
        b->get("mismatch_channel", c.baselines.mismatch_channel);
        b->get("tl_pretrain_channel", c.baselines.tl_pretrain_channel);
        b->get("ewc_weight", c.baselines.ewc_weight);
        b->get("fisher_samples", c.baselines.fisher_samples);
        b->get("lr", c.baselines.lr);
    }
    if (auto s = r.child("sweeps")) {
        s->reject_unknown({"jq", "pmax", "k", "wp"});
        s->get("jq", c.sweeps.jq);
        s->get("pmax", c.sweeps.pmax);
        s->get("k", c.sweeps.k);
        s->get("wp", c.sweeps.wp);
    }
    if (auto n = r.child("nakagami")) {
        n->reject_unknown({"seen", "unseen", "seen_tested", "m_lo", "m_hi", "omega"});
        n->get("seen", c.nakagami.seen);
        n->get("unseen", c.nakagami.unseen);
        n->get("seen_tested", c.nakagami.seen_tested);
        n->get("m_lo", c.nakagami.m_lo);
        n->get("m_hi", c.nakagami.m_hi);
        n->get("omega", c.nakagami.omega);
    }
    r.get("wmmse_iters", c.wmmse_iters);
    r.get("seed", c.seed);
    r.get("output_dir", c.output_dir);
    c.train.seed = c.seed;
    c.test.seed = c.seed;
    validate(c);
    return c;
}

/// 1-based line of the first occurrence of `"key"` for the last path component, or 0.
inline std::size_t line_of(const std::string& text, const std::string& message) {
    const auto colon = message.find(':');
    std::string path = message.substr(0, colon);
    if (path.rfind("$", 0) != 0) return 0;
    auto cut = path.find_last_of('.');
    if (cut == std::string::npos) return 0;
    std::string key = path.substr(cut + 1);
    if (auto br = key.find('['); br != std::string::npos) key = key.substr(0, br);
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n')) + 1;
}

/// Parses config text; errors are prefixed with "<source>:<line>:".
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "config") {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto byte = std::min<std::size_t>(e.byte, text.size());
        const auto line = std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n') + 1;
        throw ConfigError(source + ":" + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
    try {
        return from_json(root);
    } catch (const ConfigError& e) {
        const auto line = line_of(text, e.what());
        throw ConfigError(source + ":" + (line ? std::to_string(line) : std::string("?")) + ": " + e.what());
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
    std::string text;
    try {
        text = io::read_file(p);
    } catch (const DataError&) {
        throw ConfigError("cannot read config file " + p.string());
    }
    return parse_config(text, p.string());
}

/// Hash of the resolved configuration with the seed and output location
/// excluded, so records from different seed replicates can be aggregated.
inline std::string config_hash(const ExperimentConfig& c) {
    auto j = to_json(c);
    j.erase("seed");
    j.erase("output_dir");
    return io::hex64(io::fnv1a(j.dump()));
}

}  // namespace metagate::experiment
