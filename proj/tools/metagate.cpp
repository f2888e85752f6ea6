// metagate: experiment runner. Every stage reads a JSON config, writes its
// artifacts under the output root and stamps them with the config hash and seed.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "metagate/channels/dataset_io.hpp"
#include "metagate/experiment/pipeline.hpp"
#include "metagate/training/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace metagate;
using namespace metagate::experiment;
using nlohmann::json;

namespace {

constexpr const char* kOutEnv = "METAGATE_OUT";

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    std::size_t threads = 1;
    std::vector<std::string> methods;
};

struct Run {
    ExperimentConfig cfg;
    std::string hash;
    std::uint64_t seed = 0;
    fs::path root;
    std::size_t threads = 1;
    bool force = false;

    std::string tag() const { return "s" + std::to_string(seed); }
    fs::path data_dir() const { return root / "data" / tag(); }
    fs::path checkpoint() const { return root / "checkpoints" / (tag() + ".ckpt"); }
    fs::path records(const std::string& method) const { return root / "records" / (method + "_" + tag() + ".csv"); }
    fs::path sweep(const std::string& name) const { return root / "sweeps" / (name + "_" + tag() + ".csv"); }
};

Run open_run(const Options& o) {
    Run r;
    r.cfg = load_config(o.config);
    if (o.seed) {
        r.cfg.seed = *o.seed;
        r.cfg.train.seed = *o.seed;
        r.cfg.test.seed = *o.seed;
    }
    r.seed = r.cfg.seed;
    r.hash = config_hash(r.cfg);
    if (!o.out.empty()) {
        r.root = o.out;
    } else {
        const char* env = std::getenv(kOutEnv);
        r.root = fs::path(env && *env ? env : "runs") / (r.cfg.output_dir.empty() ? r.hash : r.cfg.output_dir);
    }
    r.threads = std::max<std::size_t>(1, o.threads);
    r.force = o.force;
    return r;
}

std::string header(const Run& r) { return "# schema=1 config_hash=" + r.hash + " seed=" + std::to_string(r.seed) + "\n"; }

void write_records(const fs::path& p, const std::vector<EvalRecord>& recs, const Run& r) {
    io::write_atomic(p, metrics::records_csv(recs, r.hash, r.seed));
    std::cout << "wrote " << p.string() << " (" << recs.size() << " records)\n";
}

void write_json(const fs::path& p, const json& j) {
    io::write_atomic(p, j.dump(2) + "\n");
    std::cout << "wrote " << p.string() << "\n";
}

Datasets load_data(const Run& r) {
    const auto manifest_path = r.data_dir() / "manifest.json";
    if (!fs::exists(manifest_path))
        throw DataError("missing dataset manifest " + manifest_path.string() + " (run generate-data first)");
    const auto m = json::parse(io::read_file(manifest_path));
    if (m.at("config_hash").get<std::string>() != r.hash && !r.force)
        throw DataError("dataset was generated from a different config (hash " +
                        m.at("config_hash").get<std::string>() + "); pass --force to use it anyway");
    return {channels::load_tasks(r.data_dir() / "train.bin"), channels::load_tasks(r.data_dir() / "test.bin")};
}

std::vector<std::vector<double>> wmmse_for(const Run& r, const std::vector<Task>& stream) {
    return oracle_rates(r.cfg, stream, r.seed, r.threads);
}

Trained load_trained(const Run& r, const AnyModel& model) {
    if (!fs::exists(r.checkpoint()))
        throw DataError("missing checkpoint " + r.checkpoint().string() + " (run train first)");
    const auto bytes = io::read_file(r.checkpoint());
    return std::visit(
        [&](const auto& m) {
            auto ck = training::deserialize_checkpoint(bytes, m.inner_layout(), m.outer_layout());
            if (ck.config_hash != r.hash && !r.force)
                throw DataError("checkpoint was trained from a different config; pass --force to use it anyway");
            return Trained{ck.theta, ck.phi, {}, ck.tasks_consumed};
        },
        model);
}

std::string curve_csv(const Run& r, const std::vector<double>& curve) {
    std::ostringstream s;
    s << header(r) << "epoch,meta_loss\n";
    for (std::size_t e = 0; e < curve.size(); ++e) s << e << ',' << metrics::fmt(curve[e]) << '\n';
    return s.str();
}

Trained train_and_save(const Run& r, const AnyModel& model, const std::vector<Task>& tasks) {
    auto tr = std::visit([&](const auto& m) { return train_proposed(m, r.cfg, tasks, r.seed); }, model);
    training::Checkpoint ck{architecture_json(r.cfg), r.hash, r.seed, tr.tasks_consumed, tr.theta, tr.phi};
    io::write_atomic(r.checkpoint(), training::serialize_checkpoint(ck));
    io::write_atomic(r.root / "curves" / ("training_curve_" + r.tag() + ".csv"), curve_csv(r, tr.curve));
    std::cout << "wrote " << r.checkpoint().string() << " after " << tr.tasks_consumed << " tasks\n";
    return tr;
}

std::vector<std::string> test_channel_ids(const ExperimentConfig& c) {
    std::vector<std::string> ids;
    for (const auto& s : c.data.test_channels) ids.push_back(c.channel(s).id);
    return ids;
}

// --------------------------------------------------------------------------

int cmd_generate(const Run& r) {
    const auto d = generate_data(r.cfg, r.seed);
    channels::save_tasks(r.data_dir() / "train.bin", d.train);
    channels::save_tasks(r.data_dir() / "test.bin", d.test);
    const auto samples = [](const std::vector<Task>& ts) {
        std::size_t n = 0;
        for (const auto& t : ts) n += t.support.size() + t.query.size();
        return n;
    };
    json m = {{"schema", 1},
              {"config_hash", r.hash},
              {"seed", r.seed},
              {"train_tasks", d.train.size()},
              {"train_samples", samples(d.train)},
              {"test_episodes", d.test.size()},
              {"test_samples", samples(d.test)},
              {"train_channels", json::array()},
              {"test_channels", test_channel_ids(r.cfg)},
              {"files",
               {{"train.bin", io::hex64(io::fnv1a(io::read_file(r.data_dir() / "train.bin")))},
                {"test.bin", io::hex64(io::fnv1a(io::read_file(r.data_dir() / "test.bin")))}}}};
    for (const auto& s : r.cfg.data.train_channels) m["train_channels"].push_back(r.cfg.channel(s).id);
    write_json(r.data_dir() / "manifest.json", m);
    std::cout << "train samples: " << m["train_samples"].get<std::size_t>() << "\n";
    return 0;
}

int cmd_train(const Run& r) {
    const auto d = load_data(r);
    train_and_save(r, make_model(r.cfg), d.train);
    return 0;
}

int cmd_evaluate(const Run& r) {
    const auto d = load_data(r);
    const auto model = make_model(r.cfg);
    const auto tr = load_trained(r, model);
    const auto wmmse = wmmse_for(r, d.test);
    std::visit(
        [&](const auto& m) {
            write_records(r.records("proposed"), test_proposed(m, tr, r.cfg, d.test, wmmse, r.seed), r);
            if (d.test.size() >= 2) {
                const auto t = cds_table(m, tr, r.cfg, d.test, r.seed);
                write_json(r.root / "records" / ("cds_" + r.tag() + ".json"),
                           {{"config_hash", r.hash}, {"seed", r.seed}, {"channels", t.channels}, {"cds", t.value}});
            }
        },
        model);
    return 0;
}

int cmd_baseline(const Run& r, const std::vector<std::string>& requested) {
    std::vector<baselines::Kind> kinds;
    if (requested.empty())
        for (const auto& b : r.cfg.baselines.kinds) kinds.push_back(baselines::kind_from_string(b));
    else
        for (const auto& s : requested) kinds.push_back(baselines::kind_from_string(s));
    const auto d = load_data(r);
    const auto model = make_model(r.cfg);
    const auto wmmse = wmmse_for(r, d.test);
    std::visit(
        [&](const auto& m) {
            std::optional<baselines::JointParams> pre;
            for (auto k : kinds) {
                const bool seq = k == baselines::Kind::tl || k == baselines::Kind::ewc;
                if (seq && !pre) pre = pretrain_tl(m, r.cfg, r.seed);
                auto o = run_baseline(k, m, r.cfg, d, wmmse, r.seed, std::nullopt, seq ? &*pre : nullptr);
                write_records(r.records(std::string(baselines::to_string(k))), o.records, r);
            }
        },
        model);
    return 0;
}

int cmd_report(const Run& r) {
    const auto dir = r.root / "records";
    if (!fs::exists(dir)) throw DataError("no records under " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no record files under " + dir.string());

    std::vector<EvalRecord> all;
    std::set<std::string> hashes;
    std::map<std::tuple<std::string, std::uint64_t, std::string>, std::vector<EvalRecord>> runs;  // (method, seed, hash)
    for (const auto& f : files) {
        auto csv = metrics::parse_records_csv(io::read_file(f));
        hashes.insert(csv.config_hash);
        for (auto& rec : csv.records) {
            runs[{rec.method, rec.seed, csv.config_hash}].push_back(rec);
            all.push_back(std::move(rec));
        }
    }
    if (hashes.size() > 1 && !r.force) {
        std::string list;
        for (const auto& h : hashes) list += " " + h;
        throw DataError("records come from different configs:" + list + " (pass --force to mix them)");
    }
    const std::string hash = hashes.size() == 1 ? *hashes.begin() : "mixed";
    const auto out = r.root / "report";
    const auto ids = test_channel_ids(r.cfg);

    // Seamlessness: per-channel rate right after each channel's own episode.
    std::ostringstream var;
    var << "# schema=1 config_hash=" << hash << "\nmethod,seed";
    for (const auto& c : ids) var << ',' << c;
    var << ",variance\n";
    json continuity = json::object();
    for (const auto& [key, recs] : runs) {
        const auto& [method, seed, run_hash] = key;
        // Forced mixes tag each run with its own hash so replicates stay apart.
        const std::string run_id = std::to_string(seed) + (hashes.size() > 1 ? "@" + run_hash : "");
        const auto diag = diagonal_records(recs);
        var << method << ',' << run_id;
        for (const auto& c : ids) {
            double s = 0.0;
            std::size_t n = 0;
            for (const auto& d : diag)
                if (d.channel_id == c) s += d.normalized_rate, ++n;
            var << ',' << (n ? metrics::fmt(s / static_cast<double>(n)) : "");
        }
        var << ',' << (ids.size() >= 2 ? metrics::fmt(metrics::variance_report(diag, ids)) : "") << '\n';
        const auto m = metrics::continuity_matrix(recs);
        continuity[method][run_id] = metrics::to_json(m, continuity_sentinel(r.cfg));
    }
    io::write_atomic(out / "variance.csv", var.str());
    std::cout << "wrote " << (out / "variance.csv").string() << "\n";
    write_json(out / "continuity.json", {{"config_hash", hash}, {"matrices", continuity}});

    json cds = json::array();
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json" && e.path().filename().string().rfind("cds_", 0) == 0)
            cds.push_back(json::parse(io::read_file(e.path())));
    std::sort(cds.begin(), cds.end(), [](const json& a, const json& b) { return a["seed"] < b["seed"]; });
    if (!cds.empty()) write_json(out / "cds.json", cds);

    std::sort(all.begin(), all.end(), [](const EvalRecord& a, const EvalRecord& b) {
        return std::tie(a.method, a.seed, a.episode, a.channel_id, a.step) <
               std::tie(b.method, b.seed, b.episode, b.channel_id, b.step);
    });
    io::write_atomic(out / "plot.csv", metrics::records_csv(all, hash, r.seed));
    std::cout << "wrote " << (out / "plot.csv").string() << " (" << all.size() << " records)\n";
    return 0;
}

int cmd_sweep_jq(const Run& r) {
    const auto d = load_data(r);
    const auto model = make_model(r.cfg);
    const auto tr = load_trained(r, model);
    const auto wmmse = wmmse_for(r, d.test);
    auto test = r.cfg.test;
    test.seed = r.seed;
    const auto recs = std::visit(
        [&](const auto& m) {
            return training::adaptation_curve(m, tr.theta, tr.phi, d.test, test, wmmse, r.cfg.sweeps.jq, "proposed");
        },
        model);
    write_records(r.sweep("jq"), recs, r);
    return 0;
}

/// One variance row per swept value; the whole pipeline runs under the variant config.
template <class Value, class Apply>
int sweep_pipeline(const Run& r, const std::string& name, const std::vector<Value>& values, Apply apply) {
    std::ostringstream s;
    s << header(r) << name << ",method";
    const auto ids = test_channel_ids(r.cfg);
    for (const auto& c : ids) s << ',' << c;
    s << ",variance\n";
    for (const auto& v : values) {
        ExperimentConfig c = r.cfg;
        apply(c, v);
        validate(c);
        const auto d = generate_data(c, r.seed);
        const auto wmmse = oracle_rates(c, d.test, r.seed, r.threads);
        const auto model = make_model(c);
        const auto recs = std::visit(
            [&](const auto& m) { return test_proposed(m, train_proposed(m, c, d.train, r.seed), c, d.test, wmmse, r.seed); },
            model);
        const auto diag = diagonal_records(recs);
        s << metrics::fmt(static_cast<double>(v)) << ",proposed";
        for (const auto& id : ids) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& x : diag)
                if (x.channel_id == id) sum += x.normalized_rate, ++n;
            s << ',' << (n ? metrics::fmt(sum / static_cast<double>(n)) : "");
        }
        s << ',' << (ids.size() >= 2 ? metrics::fmt(metrics::variance_report(diag, ids)) : "") << '\n';
        std::cout << name << "=" << v << " done\n";
    }
    io::write_atomic(r.sweep(name), s.str());
    std::cout << "wrote " << r.sweep(name).string() << "\n";
    return 0;
}

int cmd_sweep_wp(const Run& r) {
    const auto d = load_data(r);
    const auto model = make_model(r.cfg);
    const auto wmmse = wmmse_for(r, d.test);
    std::ostringstream s;
    s << header(r) << "w_p,fisher_displacement,current_rate,past_rate\n";
    std::vector<EvalRecord> all;
    std::visit(
        [&](const auto& m) {
            const auto pre = pretrain_tl(m, r.cfg, r.seed);
            for (double wp : r.cfg.sweeps.wp) {
                auto o = run_baseline(baselines::Kind::ewc, m, r.cfg, d, wmmse, r.seed, wp, &pre);
                const auto cm = metrics::continuity_matrix(o.records);
                double past = 0.0;
                std::size_t n = 0;
                for (std::size_t j = 0; j + 1 < cm.size(); ++j, ++n) past += cm.at(cm.size() - 1, j);
                s << metrics::fmt(wp) << ',' << metrics::fmt(baselines::fisher_displacement(o.sequential)) << ','
                  << metrics::fmt(diagonal_mean(cm, cm.size() > 1 ? 1 : 0)) << ','
                  << (n ? metrics::fmt(past / static_cast<double>(n)) : "") << '\n';
                for (auto rec : o.records) {
                    rec.method = "ewc_wp" + metrics::fmt(wp);
                    all.push_back(std::move(rec));
                }
            }
        },
        model);
    io::write_atomic(r.sweep("wp"), s.str());
    std::cout << "wrote " << r.sweep("wp").string() << "\n";
    write_records(r.sweep("wp_records"), all, r);
    return 0;
}

int cmd_nakagami(const Run& r) {
    const auto model = make_model(r.cfg);
    const auto o = std::visit([&](const auto& m) { return run_nakagami(m, r.cfg, r.seed, r.threads); }, model);
    std::ostringstream s;
    s << header(r) << "method,seen,unseen\n";
    s << "proposed," << metrics::fmt(o.proposed_seen) << ',' << metrics::fmt(o.proposed_unseen) << '\n';
    s << "joint," << metrics::fmt(o.joint_seen) << ',' << metrics::fmt(o.joint_unseen) << '\n';
    io::write_atomic(r.sweep("nakagami"), s.str());
    std::cout << "wrote " << r.sweep("nakagami").string() << "\n";
    auto recs = o.proposed;
    recs.insert(recs.end(), o.joint.begin(), o.joint.end());
    write_records(r.sweep("nakagami_records"), recs, r);
    json m = {{"seen_m", o.setup.seen_m}, {"unseen_m", o.setup.unseen_m}};
    write_json(r.root / "sweeps" / ("nakagami_setup_" + r.tag() + ".json"), m);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"metagate: meta-gated resource allocation experiments"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sc) {
        sc->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sc->add_option("--seed", o.seed, "override the config seed");
        sc->add_option("--out", o.out, std::string("output root (default $") + kOutEnv + "/<output_dir>)");
        sc->add_flag("--force", o.force, "accept artifacts from a different config hash");
        sc->add_option("--threads", o.threads, "worker threads for the WMMSE oracle")->check(CLI::PositiveNumber);
        return sc;
    };
    std::map<std::string, std::function<int(const Run&)>> stages = {
        {"generate-data", cmd_generate},
        {"train", cmd_train},
        {"evaluate", cmd_evaluate},
        {"baseline", [&](const Run& r) { return cmd_baseline(r, o.methods); }},
        {"report", cmd_report},
        {"sweep-jq", cmd_sweep_jq},
        {"sweep-pmax",
         [](const Run& r) {
             return sweep_pipeline(r, "pmax", r.cfg.sweeps.pmax, [](ExperimentConfig& c, double p) { c.p_max = p; });
         }},
        {"sweep-k",
         [](const Run& r) {
             return sweep_pipeline(r, "k", r.cfg.sweeps.k, [](ExperimentConfig& c, std::size_t k) { c.K = k; });
         }},
        {"sweep-wp", cmd_sweep_wp},
        {"nakagami-gen", cmd_nakagami},
    };
    const std::map<std::string, std::string> help = {
        {"generate-data", "generate training tasks and the episodic test stream"},
        {"train", "meta-train the gated model and write a checkpoint"},
        {"evaluate", "run the sequential online test from the checkpoint"},
        {"baseline", "train and test baseline methods"},
        {"report", "aggregate record files into variance, continuity and plot tables"},
        {"sweep-jq", "held-out rate versus number of adaptation steps"},
        {"sweep-pmax", "train and test at each maximum transmit power"},
        {"sweep-k", "train and test at each user count"},
        {"sweep-wp", "EWC penalty weight sweep"},
        {"nakagami-gen", "seen/unseen Nakagami-m generalization"},
    };
    for (const auto& [name, fn] : stages) {
        auto* sc = common(app.add_subcommand(name, help.at(name)));
        if (name == "baseline")
            sc->add_option("--method", o.methods, "joint, mismatch, tl, ewc or wogate (default: config list)");
    }
    CLI11_PARSE(app, argc, argv);

    try {
        const auto* sc = app.get_subcommands().front();
        const Run r = open_run(o);
        return stages.at(sc->get_name())(r);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
