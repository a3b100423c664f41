#include "cla/runner.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cla::runner {

namespace {

void check_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw UsageError("unknown config key '" + it.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw UsageError("config key '" + key + "' has the wrong type");
    }
}

struct PresetShape {
    std::size_t extending_np, extending_br, limited_np;
};

PresetShape preset_shape(const std::string& preset) {
    if (preset == "high_cbp") return {3, 128, 3};
    if (preset == "low_cbp") return {1, 20, 3};
    if (preset == "custom") return {0, 0, 0};
    throw UsageError("unknown budget preset: " + preset);
}

void apply_preset_defaults(strat::StrategyConfig& c, const std::string& preset, bool np_given,
                           bool br_given) {
    if (preset == "custom") {
        if (!np_given && c.kind != strat::Kind::iid)
            throw UsageError("custom budget: strategy '" + c.name() + "' needs an explicit n_p");
        if (c.extends_batch() && !br_given)
            throw UsageError("custom budget: strategy '" + c.name() + "' needs an explicit b_r");
        return;
    }
    const PresetShape p = preset_shape(preset);
    if (c.kind == strat::Kind::iid) {
        if (!np_given) c.n_p = 1;
        return;
    }
    if (c.extends_batch()) {
        if (!np_given) c.n_p = p.extending_np;
        if (!br_given) c.b_r = p.extending_br;
    } else {
        if (!np_given) c.n_p = p.limited_np;
    }
}

double default_omega(strat::Kind k) {
    switch (k) {
        case strat::Kind::cla_r: return 1.0;
        case strat::Kind::cla_e: return 0.3;
        case strat::Kind::cla_b: return 0.1;
        default: return 0.0;
    }
}

strat::StrategyConfig parse_strategy(const json& s, const ExperimentManifest& m,
                                     ssl::Objective default_obj) {
    check_keys(s,
               {"name", "label", "ssl", "omega", "tau", "lr", "momentum", "weight_decay", "buffer",
                "buffer_capacity", "b_r", "n_p", "temperature", "lump_alpha", "b"},
               "strategies[]");
    if (!s.contains("name")) throw UsageError("strategies[]: missing 'name'");
    strat::StrategyConfig c;
    c.kind = strat::kind_from_name(s.at("name").get<std::string>());
    c.objective = s.contains("ssl") ? ssl::objective_from_name(s.at("ssl").get<std::string>())
                                    : default_obj;
    c.label = get_or<std::string>(s, "label", "");
    c.omega = get_or<double>(s, "omega", default_omega(c.kind));
    c.tau = get_or<double>(s, "tau", 0.999);
    c.buffer_policy = replay::policy_from_name(
        get_or<std::string>(s, "buffer", c.kind == strat::Kind::lump ? "reservoir" : "fifo"));
    c.buffer_capacity = get_or<std::size_t>(s, "buffer_capacity", 2000);
    const bool br_given = s.contains("b_r");
    c.b_r = get_or<std::size_t>(s, "b_r", 0);
    const bool np_given = s.contains("n_p");
    c.n_p = get_or<std::size_t>(s, "n_p", 1);
    c.iid_b = get_or<std::size_t>(s, "b", 0);
    c.learning_rate = get_or<double>(s, "lr", 0.1);
    c.momentum = get_or<double>(s, "momentum", 0.9);
    c.weight_decay = get_or<double>(s, "weight_decay", 1e-4);
    c.temperature = get_or<double>(s, "temperature", 0.5);
    c.lump_alpha = get_or<double>(s, "lump_alpha", 0.4);
    apply_preset_defaults(c, m.budget_preset, np_given, br_given);
    return c;
}

}  // namespace

stream::Dataset materialize_dataset(const std::string& descriptor) {
    if (descriptor.rfind("synthetic:", 0) == 0 || descriptor == "synthetic") {
        std::size_t classes = 20, per_class = 100, dim = 32;
        double sep = 6.0;
        std::uint64_t seed = 7;
        if (descriptor.size() > 10) {
            std::stringstream ss(descriptor.substr(10));
            std::string kv;
            while (std::getline(ss, kv, ',')) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw UsageError("bad synthetic descriptor item: " + kv);
                const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
                try {
                    if (k == "classes") classes = std::stoul(v);
                    else if (k == "per_class") per_class = std::stoul(v);
                    else if (k == "dim") dim = std::stoul(v);
                    else if (k == "sep") sep = std::stod(v);
                    else if (k == "seed") seed = std::stoull(v);
                    else throw UsageError("unknown synthetic descriptor key: " + k);
                } catch (const std::invalid_argument&) {
                    throw UsageError("bad synthetic descriptor value: " + kv);
                }
            }
        }
        return stream::make_synthetic(classes, per_class, dim, sep, seed);
    }
    return stream::load_dataset(descriptor);
}

std::size_t train_split_size(const stream::Dataset& d) {
    std::vector<std::size_t> per_class(d.class_count, 0);
    for (int l : d.labels) per_class[static_cast<std::size_t>(l)]++;
    std::size_t n = 0;
    for (std::size_t c : per_class) n += c - c / 10;
    return n;
}

std::uint64_t reference_cbp(const ExperimentManifest& m, std::size_t N) {
    if (m.budget_preset != "custom") {
        const PresetShape p = preset_shape(m.budget_preset);
        budget::BudgetSpec s;
        s.n_v = 2;
        s.b_s = m.b_s;
        s.b_r = p.extending_br;
        s.b = m.b_s + p.extending_br;
        s.n_p = p.extending_np;
        s.N = N;
        s.composition = budget::Composition::stream_plus_replay;
        return budget::cbp(s);
    }
    for (const auto& c : m.strategies)
        if (c.kind != strat::Kind::iid) return budget::cbp(c.budget_spec(m.b_s, N));
    throw UsageError("custom budget with only iid strategies has no CBP reference");
}

budget::ParityReport manifest_parity(const ExperimentManifest& m, std::size_t N) {
    std::vector<std::pair<std::string, budget::BudgetSpec>> specs;
    for (const auto& c : m.strategies)
        if (c.kind != strat::Kind::iid) specs.emplace_back(c.name(), c.budget_spec(m.b_s, N));
    budget::ParityReport rep = budget::assert_parity(specs);
    if (rep.ok && !specs.empty() && m.budget_preset != "custom" &&
        rep.entries.front().cbp != reference_cbp(m, N)) {
        rep.ok = false;
        rep.message = "strategy CBP " + std::to_string(rep.entries.front().cbp) +
                      " does not match the preset's " + std::to_string(reference_cbp(m, N));
    }
    return rep;
}

ExperimentManifest parse_config_text(const std::string& text, const std::string& source) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw UsageError("config parse error in " + source + ": " + e.what());
    }
    check_keys(root,
               {"name", "dataset", "experiences", "b_s", "budget", "boundaries_visible", "ssl",
                "strategies", "seeds", "probe", "augment", "out_dir", "workers",
                "record_wall_time", "probe_each_experience", "additional_cbp", "probe_points"},
               source);

    ExperimentManifest m;
    m.name = get_or<std::string>(root, "name", "experiment");
    if (!root.contains("dataset")) throw UsageError("config: missing 'dataset'");
    m.dataset = root.at("dataset").get<std::string>();
    m.experiences = get_or<std::size_t>(root, "experiences", 10);
    m.b_s = get_or<std::size_t>(root, "b_s", 10);
    m.budget_preset = get_or<std::string>(root, "budget", "low_cbp");
    preset_shape(m.budget_preset);  // validates the name
    m.boundaries_visible = get_or<bool>(root, "boundaries_visible", false);
    m.out_dir = get_or<std::string>(root, "out_dir", m.name);
    m.workers = get_or<std::size_t>(root, "workers", 1);
    m.record_wall_time = get_or<bool>(root, "record_wall_time", false);
    m.probe_each_experience = get_or<bool>(root, "probe_each_experience", true);
    m.additional_cbp = get_or<std::uint64_t>(root, "additional_cbp", 0);
    m.probe_points = get_or<std::size_t>(root, "probe_points", 3);

    const ssl::Objective default_obj =
        ssl::objective_from_name(get_or<std::string>(root, "ssl", "simsiam"));

    if (root.contains("seeds")) {
        m.seeds.clear();
        for (const auto& s : root.at("seeds")) m.seeds.push_back(s.get<std::uint64_t>());
    }
    if (m.seeds.empty()) throw UsageError("config: seeds must be non-empty");

    if (root.contains("probe")) {
        const json& p = root.at("probe");
        check_keys(p,
                   {"batch", "lr_init", "lr_decay_factor", "max_epochs", "lr_min", "patience",
                    "momentum", "weight_decay"},
                   "probe");
        m.probe.batch = get_or<std::size_t>(p, "batch", m.probe.batch);
        m.probe.lr_init = get_or<double>(p, "lr_init", m.probe.lr_init);
        m.probe.lr_decay_factor = get_or<double>(p, "lr_decay_factor", m.probe.lr_decay_factor);
        m.probe.max_epochs = get_or<std::size_t>(p, "max_epochs", m.probe.max_epochs);
        m.probe.lr_min = get_or<double>(p, "lr_min", m.probe.lr_min);
        m.probe.patience = get_or<std::size_t>(p, "patience", m.probe.patience);
        m.probe.momentum = get_or<double>(p, "momentum", m.probe.momentum);
        m.probe.weight_decay = get_or<double>(p, "weight_decay", m.probe.weight_decay);
    }
    if (root.contains("augment")) {
        const json& a = root.at("augment");
        check_keys(a, {"noise_sigma", "mask_fraction", "scale_jitter"}, "augment");
        m.augment.noise_sigma = get_or<double>(a, "noise_sigma", m.augment.noise_sigma);
        m.augment.mask_fraction = get_or<double>(a, "mask_fraction", m.augment.mask_fraction);
        m.augment.scale_jitter = get_or<double>(a, "scale_jitter", m.augment.scale_jitter);
    }

    if (!root.contains("strategies") || !root.at("strategies").is_array() ||
        root.at("strategies").empty())
        throw UsageError("config: strategies must be a non-empty array");
    for (const auto& s : root.at("strategies")) m.strategies.push_back(parse_strategy(s, m, default_obj));

    // full validation against the materialized dataset
    const stream::Dataset d = materialize_dataset(m.dataset);
    if (m.experiences == 0 || d.class_count < m.experiences)
        throw UsageError("config: experiences must be in [1, class_count]");
    const std::size_t N = train_split_size(d);
    for (auto& c : m.strategies) {
        c.validate(m.b_s);
        if (c.needs_boundaries() && !m.boundaries_visible)
            throw UsageError("strategy '" + c.name() + "' needs boundaries_visible=true");
        if (c.kind == strat::Kind::iid && c.iid_b == 0) {
            if (m.budget_preset == "custom")
                throw UsageError("custom budget: iid needs an explicit 'b'");
            c.iid_b = m.b_s + preset_shape(m.budget_preset).extending_br;
        }
    }
    {
        std::map<std::string, int> names;
        for (const auto& c : m.strategies)
            if (++names[c.name()] > 1)
                throw UsageError("duplicate strategy label '" + c.name() + "' (set distinct labels)");
    }
    const budget::ParityReport rep = manifest_parity(m, N);
    if (!rep.ok) throw UsageError("budget parity violation: " + rep.message);
    return m;
}

ExperimentManifest parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string manifest_to_json(const ExperimentManifest& m) {
    json root;
    root["name"] = m.name;
    root["dataset"] = m.dataset;
    root["experiences"] = m.experiences;
    root["b_s"] = m.b_s;
    root["budget"] = m.budget_preset;
    root["boundaries_visible"] = m.boundaries_visible;
    root["out_dir"] = m.out_dir;
    root["workers"] = m.workers;
    root["record_wall_time"] = m.record_wall_time;
    root["probe_each_experience"] = m.probe_each_experience;
    root["additional_cbp"] = m.additional_cbp;
    root["probe_points"] = m.probe_points;
    root["seeds"] = m.seeds;
    root["probe"] = {{"batch", m.probe.batch},
                     {"lr_init", m.probe.lr_init},
                     {"lr_decay_factor", m.probe.lr_decay_factor},
                     {"max_epochs", m.probe.max_epochs},
                     {"lr_min", m.probe.lr_min},
                     {"patience", m.probe.patience},
                     {"momentum", m.probe.momentum},
                     {"weight_decay", m.probe.weight_decay}};
    root["augment"] = {{"noise_sigma", m.augment.noise_sigma},
                       {"mask_fraction", m.augment.mask_fraction},
                       {"scale_jitter", m.augment.scale_jitter}};
    root["strategies"] = json::array();
    for (const auto& c : m.strategies) {
        json s;
        s["name"] = strat::kind_name(c.kind);
        if (!c.label.empty()) s["label"] = c.label;
        s["ssl"] = ssl::objective_name(c.objective);
        s["omega"] = c.omega;
        s["tau"] = c.tau;
        s["buffer"] = replay::policy_name(c.buffer_policy);
        s["buffer_capacity"] = c.buffer_capacity;
        s["b_r"] = c.b_r;
        s["n_p"] = c.n_p;
        if (c.kind == strat::Kind::iid) s["b"] = c.iid_b;
        s["lr"] = c.learning_rate;
        s["momentum"] = c.momentum;
        s["weight_decay"] = c.weight_decay;
        s["temperature"] = c.temperature;
        s["lump_alpha"] = c.lump_alpha;
        root["strategies"].push_back(s);
    }
    return root.dump(2) + "\n";
}

namespace {

struct Cell {
    strat::StrategyConfig cfg;
    std::uint64_t seed;
    std::string run_id;
};

CellResult run_cell(const ExperimentManifest& m, const stream::Dataset& data, const Cell& cell,
                    const fs::path& dir, std::uint64_t ref_cbp) {
    CellResult r;
    r.run_id = cell.run_id;
    r.seed = cell.seed;
    r.strategy = cell.cfg.name();
    r.objective = ssl::objective_name(cell.cfg.objective);
    try {
        const nets::NetworkArch arch = nets::NetworkArch::desk_default(data.dim);
        const stream::StreamPlan plan = stream::split_class_incremental(
            data, m.experiences, m.b_s, cell.cfg.n_p, m.boundaries_visible, cell.seed);
        if (cell.cfg.kind == strat::Kind::iid) {
            strat::IidOptions io;
            io.b = cell.cfg.iid_b;
            io.target_cbp = ref_cbp;
            io.probe = m.probe;
            io.run_id = cell.run_id;
            io.csv_path = (dir / "runs" / (cell.run_id + ".csv")).string();
            io.record_wall_time = m.record_wall_time;
            const strat::IidRunResult ir =
                strat::run_iid(data, plan.train_indices_sorted(), plan.val_indices_sorted(),
                               m.augment, arch, cell.cfg, cell.seed, io);
            r.cbp_declared = ref_cbp;
            r.cbp_counted = ir.cbp_counted;
            r.final_acc = ir.final_acc;
            r.avg_acc = ir.final_acc;
            return r;
        }
        strat::RunOptions ro;
        ro.probe_each_experience = m.probe_each_experience;
        ro.record_wall_time = m.record_wall_time;
        ro.run_id = cell.run_id;
        ro.csv_path = (dir / "runs" / (cell.run_id + ".csv")).string();
        ro.checkpoint_path = (dir / "checkpoints" / (cell.run_id + ".ckpt")).string();
        ro.probe = m.probe;
        const strat::RunResult rr =
            strat::run_experiment(data, plan, m.augment, arch, cell.cfg, cell.seed, ro);
        r.cbp_declared = rr.cbp_declared;
        r.cbp_counted = rr.cbp_counted;
        r.final_acc = rr.final_acc;
        r.avg_acc = rr.avg_acc;
    } catch (const std::exception& e) {
        r.failed = true;
        r.error = e.what();
    }
    return r;
}

void write_runs_csv(const fs::path& path, const std::vector<CellResult>& cells) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "run_id,seed,strategy,ssl_objective,cbp_declared,cbp_counted,final_acc,avg_acc,status\n";
    for (const auto& c : cells) {
        os << c.run_id << ',' << c.seed << ',' << c.strategy << ',' << c.objective << ','
           << c.cbp_declared << ',' << c.cbp_counted << ',' << strat::csv_double(c.final_acc) << ','
           << strat::csv_double(c.avg_acc) << ',' << (c.failed ? "failed" : "ok") << '\n';
    }
}

void write_summary_csv(const fs::path& path, const std::vector<CellResult>& cells) {
    // strategy order follows first appearance in the cell list
    std::vector<std::string> order;
    std::map<std::string, std::vector<const CellResult*>> by_strategy;
    for (const auto& c : cells) {
        if (c.failed) continue;
        if (by_strategy.find(c.strategy) == by_strategy.end()) order.push_back(c.strategy);
        by_strategy[c.strategy].push_back(&c);
    }
    auto mean_std = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double std_ = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        return std::make_pair(mean, std_);
    };
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "strategy,ssl_objective,cbp_declared,n_seeds,final_acc_mean,final_acc_std,avg_acc_mean,"
          "avg_acc_std\n";
    for (const auto& name : order) {
        const auto& group = by_strategy[name];
        std::vector<double> finals, avgs;
        for (const auto* c : group) {
            finals.push_back(c->final_acc);
            avgs.push_back(c->avg_acc);
        }
        const auto [fm, fstd] = mean_std(finals);
        const auto [am, astd] = mean_std(avgs);
        os << name << ',' << group.front()->objective << ',' << group.front()->cbp_declared << ','
           << group.size() << ',' << strat::csv_double(fm) << ',' << strat::csv_double(fstd) << ','
           << strat::csv_double(am) << ',' << strat::csv_double(astd) << '\n';
    }
}

void write_plot_csv(const fs::path& path, const std::vector<CellResult>& cells) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "strategy,seed,cbp,final_acc,avg_acc\n";
    for (const auto& c : cells) {
        if (c.failed) continue;
        os << c.strategy << ',' << c.seed << ',' << c.cbp_declared << ','
           << strat::csv_double(c.final_acc) << ',' << strat::csv_double(c.avg_acc) << '\n';
    }
}

}  // namespace

ManifestRunResult run_manifest(const ExperimentManifest& m, const std::string& out_root) {
    const stream::Dataset data = materialize_dataset(m.dataset);
    const std::size_t N = train_split_size(data);
    const budget::ParityReport parity = manifest_parity(m, N);
    if (!parity.ok) throw UsageError("budget parity violation: " + parity.message);
    const std::uint64_t ref = reference_cbp(m, N);

    fs::path dir = fs::path(m.out_dir);
    if (dir.is_relative()) dir = fs::path(out_root) / dir;
    fs::create_directories(dir / "runs");
    fs::create_directories(dir / "checkpoints");

    {
        std::ofstream os(dir / "manifest.json", std::ios::binary | std::ios::trunc);
        os << manifest_to_json(m);
    }

    std::vector<Cell> cells;
    for (const auto& cfg : m.strategies)
        for (std::uint64_t seed : m.seeds)
            cells.push_back({cfg, seed, cfg.name() + "-s" + std::to_string(seed)});

    std::vector<CellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(m.workers, cells.size()));
    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            results[i] = run_cell(m, data, cells[i], dir, ref);
        }
    };
    if (n_workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    write_runs_csv(dir / "runs.csv", results);
    write_summary_csv(dir / "summary.csv", results);
    write_plot_csv(dir / "plot_acc_vs_cbp.csv", results);

    ManifestRunResult out;
    out.cells = std::move(results);
    out.out_path = dir.string();
    for (const auto& c : out.cells)
        if (c.failed) out.exit_code = 1;
    return out;
}

int continue_iid(const std::string& checkpoint_path, const ExperimentManifest& m,
                 const std::string& out_root) {
    const strat::RunState st = strat::RunState::load_file(checkpoint_path);
    const stream::Dataset data = materialize_dataset(m.dataset);
    if (st.dataset_fingerprint != strat::dataset_fingerprint(data))
        throw UsageError("continue-iid: checkpoint was trained on a different dataset");

    const strat::StrategyConfig* iid_cfg = nullptr;
    for (const auto& c : m.strategies)
        if (c.kind == strat::Kind::iid) iid_cfg = &c;
    if (iid_cfg == nullptr) throw UsageError("continue-iid: manifest needs an 'iid' strategy entry");

    // same split as the original run
    const stream::StreamPlan plan = stream::split_class_incremental(
        data, static_cast<std::size_t>(st.plan_T), m.b_s, 1, false, st.plan_seed);

    fs::path dir = fs::path(m.out_dir);
    if (dir.is_relative()) dir = fs::path(out_root) / dir;
    fs::create_directories(dir);

    nets::NetworkSet warm = st.nets;
    nets::SgdState warm_opt = st.opt;

    strat::IidOptions io;
    io.b = iid_cfg->iid_b;
    io.target_cbp = m.additional_cbp;
    io.probe_points = m.probe_points;
    io.probe = m.probe;
    io.run_id = "continue_iid";
    io.csv_path = (dir / "continue_iid_steps.csv").string();
    io.record_wall_time = m.record_wall_time;
    io.probe_at_start = true;
    io.first_probe_seed = st.final_probe_seed;

    const strat::IidRunResult res =
        strat::run_iid(data, plan.train_indices_sorted(), plan.val_indices_sorted(), m.augment,
                       nets::NetworkArch::desk_default(data.dim), *iid_cfg, m.seeds.front(), io,
                       &warm, &warm_opt, st.ledger_counted);

    std::ofstream os(dir / "continue_iid_curve.csv", std::ios::binary | std::ios::trunc);
    os << "phase,cbp_total,probe_acc\n";
    os << "stream," << st.ledger_counted << ',' << strat::csv_double(st.final_acc) << '\n';
    for (const auto& [cbp, acc] : res.probe_curve)
        os << "iid," << cbp << ',' << strat::csv_double(acc) << '\n';
    return 0;
}

std::string output_root_from_env() {
    const char* v = std::getenv("CLA_OUT_ROOT");
    return v != nullptr && *v != '\0' ? std::string(v) : std::string("out");
}

}  // namespace cla::runner
